//! Little-endian binary formats for filter banks (`KBSF`), feature tensors
//! (`KFEA`) and subspace models (`KTXQ`).
//!
//! Every format starts with a 4-byte magic and a `u32` version. Matrices are
//! stored as `f64` in column-major order. Readers reject trailing bytes.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::bsif::FilterBank;
use crate::error::{KinError, Result};
use crate::features::FeatureTensor;
use crate::subspace::{ModeProjection, PcaProjection, SubspaceModel};

pub const BANK_MAGIC: &[u8; 4] = b"KBSF";
pub const FEATURE_MAGIC: &[u8; 4] = b"KFEA";
pub const MODEL_MAGIC: &[u8; 4] = b"KTXQ";
pub const FORMAT_VERSION: u32 = 1;

/// Refuse to allocate more than this many coefficients from a header.
const MAX_ELEMENTS: usize = 1 << 28;

fn io_err(e: std::io::Error) -> KinError {
    KinError::Format(e.to_string())
}

fn write_header(w: &mut impl Write, magic: &[u8; 4]) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LE>(FORMAT_VERSION)
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(io_err)?;
    if &got != magic {
        return Err(KinError::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&got)
        )));
    }
    let version = r.read_u32::<LE>().map_err(io_err)?;
    if version != FORMAT_VERSION {
        return Err(KinError::Format(format!("unsupported format version {version}")));
    }
    Ok(())
}

fn read_dim(r: &mut impl Read) -> Result<usize> {
    Ok(r.read_u32::<LE>().map_err(io_err)? as usize)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| KinError::Format(format!("dimension {v} exceeds u32")))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    if count > MAX_ELEMENTS {
        return Err(KinError::Format(format!("{count} coefficients is implausibly large")));
    }
    let mut out = vec![0.0; count];
    r.read_f64_into::<LE>(&mut out).map_err(io_err)?;
    Ok(out)
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    values.iter().try_for_each(|&v| w.write_f64::<LE>(v))
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| KinError::Format("matrix size overflows".into()))?;
    Ok(DMatrix::from_vec(rows, cols, read_f64s(r, count)?))
}

fn finish(cursor: &Cursor<&[u8]>) -> Result<()> {
    let left = cursor.get_ref().len() as u64 - cursor.position();
    if left != 0 {
        return Err(KinError::Format(format!("{left} trailing bytes")));
    }
    Ok(())
}

pub fn encode_bank(bank: &FilterBank) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    (|| -> std::io::Result<()> {
        write_header(&mut out, BANK_MAGIC)?;
        out.write_u32::<LE>(bank.side() as u32)?;
        out.write_u32::<LE>(bank.bits() as u32)?;
        out.write_u32::<LE>(3)?;
        out.write_u64::<LE>(bank.learn_seed)?;
        write_f64s(&mut out, bank.coeffs())?;
        out.write_u32::<LE>(bank.source_tag.len() as u32)?;
        out.write_all(bank.source_tag.as_bytes())
    })()
    .map_err(io_err)?;
    Ok(out)
}

pub fn decode_bank(bytes: &[u8]) -> Result<FilterBank> {
    let mut r = Cursor::new(bytes);
    read_header(&mut r, BANK_MAGIC)?;
    let side = read_dim(&mut r)?;
    let bits = read_dim(&mut r)?;
    let channels = read_dim(&mut r)?;
    if channels != 3 {
        return Err(KinError::Format(format!("{channels} channels, expected 3")));
    }
    let seed = r.read_u64::<LE>().map_err(io_err)?;
    let count = side
        .checked_mul(side)
        .and_then(|s| s.checked_mul(bits))
        .and_then(|s| s.checked_mul(3))
        .ok_or_else(|| KinError::Format("bank size overflows".into()))?;
    let coeffs = read_f64s(&mut r, count)?;
    let tag_len = read_dim(&mut r)?;
    if tag_len > bytes.len() {
        return Err(KinError::Format("source tag longer than file".into()));
    }
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag).map_err(io_err)?;
    let tag = String::from_utf8(tag).map_err(|e| KinError::Format(e.to_string()))?;
    finish(&r)?;
    FilterBank::new(side, bits, coeffs, seed, tag)
}

pub fn encode_features(t: &FeatureTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * t.mode1_dim() * t.mode2_dim());
    let (d1, d2) = (dim_u32(t.mode1_dim())?, dim_u32(t.mode2_dim())?);
    (|| -> std::io::Result<()> {
        write_header(&mut out, FEATURE_MAGIC)?;
        out.write_u32::<LE>(d1)?;
        out.write_u32::<LE>(d2)?;
        write_f64s(&mut out, t.matrix().as_slice())
    })()
    .map_err(io_err)?;
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureTensor> {
    let mut r = Cursor::new(bytes);
    read_header(&mut r, FEATURE_MAGIC)?;
    let d1 = read_dim(&mut r)?;
    let d2 = read_dim(&mut r)?;
    let m = read_matrix(&mut r, d1, d2)?;
    finish(&r)?;
    FeatureTensor::from_matrix(m)
}

pub fn encode_model(model: &SubspaceModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut body = || -> Result<()> {
        write_header(&mut out, MODEL_MAGIC).map_err(io_err)?;
        out.write_u32::<LE>(dim_u32(model.modes.len())?).map_err(io_err)?;
        for mode in &model.modes {
            out.write_u32::<LE>(dim_u32(mode.matrix.nrows())?).map_err(io_err)?;
            out.write_u32::<LE>(dim_u32(mode.matrix.ncols())?).map_err(io_err)?;
            write_f64s(&mut out, mode.matrix.as_slice()).map_err(io_err)?;
        }
        match &model.pca {
            None => out.write_u8(0).map_err(io_err)?,
            Some(p) => {
                out.write_u8(1).map_err(io_err)?;
                out.write_u32::<LE>(dim_u32(p.input_dim())?).map_err(io_err)?;
                out.write_u32::<LE>(dim_u32(p.output_dim())?).map_err(io_err)?;
                write_f64s(&mut out, p.basis.as_slice()).map_err(io_err)?;
                write_f64s(&mut out, p.mean.as_slice()).map_err(io_err)?;
                write_f64s(&mut out, &p.variances).map_err(io_err)?;
            }
        }
        for mode in &model.modes {
            write_f64s(&mut out, &mode.eigenvalues).map_err(io_err)?;
        }
        out.write_u32::<LE>(dim_u32(model.sweeps)?).map_err(io_err)?;
        out.write_u64::<LE>(model.seed).map_err(io_err)?;
        Ok(())
    };
    body()?;
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<SubspaceModel> {
    let mut r = Cursor::new(bytes);
    read_header(&mut r, MODEL_MAGIC)?;
    let mode_count = read_dim(&mut r)?;
    if mode_count != 2 {
        return Err(KinError::Format(format!("{mode_count} modes, expected 2")));
    }
    let mut matrices = Vec::with_capacity(mode_count);
    for _ in 0..mode_count {
        let d = read_dim(&mut r)?;
        let m = read_dim(&mut r)?;
        matrices.push(read_matrix(&mut r, d, m)?);
    }
    let pca = match r.read_u8().map_err(io_err)? {
        0 => None,
        1 => {
            let d_in = read_dim(&mut r)?;
            let d_out = read_dim(&mut r)?;
            let basis = read_matrix(&mut r, d_in, d_out)?;
            let mean = DVector::from_vec(read_f64s(&mut r, d_in)?);
            let variances = read_f64s(&mut r, d_out)?;
            if d_out != matrices[0].nrows() {
                return Err(KinError::Format(format!(
                    "PCA output {d_out} does not feed a mode-1 projection of {} rows",
                    matrices[0].nrows()
                )));
            }
            Some(PcaProjection {
                mean,
                basis,
                variances,
            })
        }
        flag => return Err(KinError::Format(format!("bad PCA flag {flag}"))),
    };
    let mut modes = Vec::with_capacity(mode_count);
    for matrix in matrices {
        let eigenvalues = read_f64s(&mut r, matrix.ncols())?;
        modes.push(ModeProjection {
            matrix,
            eigenvalues,
        });
    }
    let sweeps = read_dim(&mut r)?;
    let seed = r.read_u64::<LE>().map_err(io_err)?;
    finish(&r)?;
    Ok(SubspaceModel {
        modes,
        pca,
        sweeps,
        seed,
    })
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| KinError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| KinError::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut file = std::fs::File::create(&tmp).map_err(|e| KinError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| KinError::io(&tmp, e))?;
    file.sync_all().map_err(|e| KinError::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| KinError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| KinError::io(path, e))
}

pub fn save_bank(path: &Path, bank: &FilterBank) -> Result<()> {
    write_atomic(path, &encode_bank(bank)?)
}

pub fn load_bank(path: &Path) -> Result<FilterBank> {
    decode_bank(&read_file(path)?)
}

pub fn save_features(path: &Path, t: &FeatureTensor) -> Result<()> {
    write_atomic(path, &encode_features(t)?)
}

pub fn load_features(path: &Path) -> Result<FeatureTensor> {
    decode_features(&read_file(path)?)
}

pub fn save_model(path: &Path, model: &SubspaceModel) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<SubspaceModel> {
    decode_model(&read_file(path)?)
}
