//! Little-endian binary containers.
//!
//! Matrix file: `b"FQLB"`, `u32` version, `u64` N, then N*N entries row-major as
//! interleaved `f64` real/imaginary parts. Spectral files store the eigenvector
//! matrix this way and append `b"QENE"`, N quasienergies and the residual.
//!
//! Accumulator file: `b"FQLA"`, `u32` version, `u64` statistic count, then per
//! statistic its name and the raw sums.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::SpectralData;
use crate::stats::{Accumulator, EnsembleAccumulator};
use crate::CMatrix;

pub const MAGIC: [u8; 4] = *b"FQLB";
pub const QUASIENERGY_TAG: [u8; 4] = *b"QENE";
pub const ACCUMULATOR_MAGIC: [u8; 4] = *b"FQLA";
pub const VERSION: u32 = 1;

/// Contents of a matrix container.
#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    /// A bare matrix (typically a Floquet operator).
    Matrix(CMatrix),
    Spectral(SpectralData),
}

fn write_matrix_body<W: Write>(w: &mut W, m: &CMatrix) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].re.to_le_bytes())?;
            w.write_all(&m[(r, c)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_matrix<W: Write>(w: &mut W, m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    write_matrix_body(w, m)?;
    Ok(())
}

pub fn write_spectral<W: Write>(w: &mut W, s: &SpectralData) -> Result<()> {
    write_matrix_body(w, s.eigenvectors())?;
    w.write_all(&QUASIENERGY_TAG)?;
    for e in s.quasienergies() {
        w.write_all(&e.to_le_bytes())?;
    }
    w.write_all(&s.residual().to_le_bytes())?;
    Ok(())
}

pub fn save_matrix(path: &Path, m: &CMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn save_spectral(path: &Path, s: &SpectralData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spectral(&mut w, s)?;
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read, const K: usize>(r: &mut R) -> std::io::Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<R, 8>(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<R, 8>(r)?))
}

/// Reads a matrix or spectral container. `path` only labels errors.
pub fn read_container<R: Read>(r: &mut R, path: &Path) -> Result<Container> {
    let bad = |reason: String| Error::BadContainer {
        path: path.to_path_buf(),
        reason,
    };
    let magic: [u8; 4] = read_exact::<R, 4>(r).map_err(|e| bad(format!("header: {e}")))?;
    if magic != MAGIC {
        return Err(bad(format!("magic {magic:?} is not {MAGIC:?}")));
    }
    let version =
        u32::from_le_bytes(read_exact::<R, 4>(r).map_err(|e| bad(format!("header: {e}")))?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u64(r).map_err(|e| bad(format!("header: {e}")))? as usize;
    if n == 0 || n > 1 << 16 {
        return Err(bad(format!("implausible dimension {n}")));
    }
    let mut m = CMatrix::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let re = read_f64(r).map_err(|e| bad(format!("payload: {e}")))?;
            let im = read_f64(r).map_err(|e| bad(format!("payload: {e}")))?;
            m[(row, col)] = Complex64::new(re, im);
        }
    }
    let mut tag = [0u8; 4];
    match r.read(&mut tag[..1])? {
        0 => return Ok(Container::Matrix(m)),
        _ => r
            .read_exact(&mut tag[1..])
            .map_err(|e| bad(format!("block tag: {e}")))?,
    }
    if tag != QUASIENERGY_TAG {
        return Err(bad(format!("unknown block tag {tag:?}")));
    }
    let energies = (0..n)
        .map(|_| read_f64(r))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| bad(format!("quasienergies: {e}")))?;
    let residual = read_f64(r).map_err(|e| bad(format!("residual: {e}")))?;
    let s = SpectralData::from_parts(energies, m, residual).map_err(|e| bad(e.to_string()))?;
    Ok(Container::Spectral(s))
}

pub fn load_container(path: &Path) -> Result<Container> {
    let mut r = BufReader::new(File::open(path)?);
    read_container(&mut r, path)
}

/// Serializes raw accumulator state so partial runs can be merged later.
pub fn save_accumulators(path: &Path, acc: &EnsembleAccumulator) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&ACCUMULATOR_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(acc.len() as u64).to_le_bytes())?;
    for name in acc.names() {
        let a = acc.get(name).expect("listed name");
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let (len, blocks, count, sum, sum_sq, block_sum, block_count) = a.raw_parts();
        for x in [len as u64, blocks as u64, count] {
            w.write_all(&x.to_le_bytes())?;
        }
        for v in sum.iter().chain(sum_sq).chain(block_sum) {
            w.write_all(&v.to_le_bytes())?;
        }
        for c in block_count {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_accumulators(path: &Path) -> Result<EnsembleAccumulator> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |reason: String| Error::BadContainer {
        path: path.to_path_buf(),
        reason,
    };
    let io = |e: std::io::Error| Error::BadContainer {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    if read_exact::<_, 4>(&mut r).map_err(io)? != ACCUMULATOR_MAGIC {
        return Err(bad("not an accumulator file".into()));
    }
    let version = u32::from_le_bytes(read_exact::<_, 4>(&mut r).map_err(io)?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r).map_err(io)?;
    let mut out = EnsembleAccumulator::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r).map_err(io)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
        let len = read_u64(&mut r).map_err(io)? as usize;
        let blocks = read_u64(&mut r).map_err(io)? as usize;
        let samples = read_u64(&mut r).map_err(io)?;
        let mut floats = |k: usize| {
            (0..k)
                .map(|_| read_f64(&mut r))
                .collect::<std::io::Result<Vec<f64>>>()
        };
        let sum = floats(len).map_err(io)?;
        let sum_sq = floats(len).map_err(io)?;
        let block_sum = floats(len * blocks).map_err(io)?;
        let block_count = (0..blocks)
            .map(|_| read_u64(&mut r))
            .collect::<std::io::Result<Vec<u64>>>()
            .map_err(io)?;
        let acc =
            Accumulator::from_raw_parts(len, blocks, samples, sum, sum_sq, block_sum, block_count)
                .map_err(|e| bad(format!("{name}: {e}")))?;
        out.insert(name, acc);
    }
    Ok(out)
}
