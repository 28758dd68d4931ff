use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use kinverify::imaging::Channel;
use kinverify::persist::{decode_bank, decode_features, decode_model, BANK_MAGIC, FEATURE_MAGIC, MODEL_MAGIC};
use kinverify::{KinError, Result};

/// Rows of a matrix as nested arrays.
fn rows(m: &DMatrix<f64>) -> Value {
    Value::from(
        m.row_iter()
            .map(|r| r.iter().copied().collect::<Vec<f64>>())
            .collect::<Vec<_>>(),
    )
}

pub fn to_json(bytes: &[u8]) -> Result<Value> {
    let magic = bytes.get(..4).unwrap_or_default();
    if magic == BANK_MAGIC {
        let bank = decode_bank(bytes)?;
        let side = bank.side();
        let channels: Vec<Value> = Channel::ALL
            .iter()
            .map(|&ch| {
                let filters = bank.channel(ch);
                let list: Vec<Value> = (0..bank.bits())
                    .map(|i| {
                        let f = filters.filter(i);
                        Value::from(f.chunks(side).map(|r| r.to_vec()).collect::<Vec<_>>())
                    })
                    .collect();
                json!({ "channel": ch, "filters": list })
            })
            .collect();
        Ok(json!({
            "kind": "filter-bank",
            "side": side,
            "bits": bank.bits(),
            "learn_seed": bank.learn_seed,
            "source_tag": bank.source_tag,
            "channels": channels,
        }))
    } else if magic == FEATURE_MAGIC {
        let t = decode_features(bytes)?;
        Ok(json!({
            "kind": "feature-tensor",
            "mode1_dim": t.mode1_dim(),
            "mode2_dim": t.mode2_dim(),
            "columns": t.matrix().column_iter().map(|c| c.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        }))
    } else if magic == MODEL_MAGIC {
        let m = decode_model(bytes)?;
        let modes: Vec<Value> = m
            .modes
            .iter()
            .map(|mode| {
                json!({
                    "input_dim": mode.matrix.nrows(),
                    "output_dim": mode.matrix.ncols(),
                    "eigenvalues": mode.eigenvalues,
                    "matrix": rows(&mode.matrix),
                })
            })
            .collect();
        let pca = m.pca.as_ref().map(|p| {
            json!({
                "input_dim": p.input_dim(),
                "output_dim": p.output_dim(),
                "variances": p.variances,
                "mean": p.mean.iter().copied().collect::<Vec<f64>>(),
                "basis": rows(&p.basis),
            })
        });
        Ok(json!({
            "kind": "subspace-model",
            "input_dims": m.input_dims(),
            "output_dim": m.output_dim(),
            "sweeps": m.sweeps,
            "seed": m.seed,
            "pca": pca,
            "modes": modes,
        }))
    } else {
        Err(KinError::Format(format!(
            "unknown magic {:?}; expected KBSF, KFEA or KTXQ",
            String::from_utf8_lossy(magic)
        )))
    }
}

pub fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| KinError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value = to_json(&bytes)?;
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| KinError::Format(e.to_string()))?;
    text.push('\n');
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        // a closed pipe (`| head`) is not an error
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(KinError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}
