//! Binary model files and a plain-text vector export.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     4 bytes  "PVEC"
//! version   u32
//! S         u64      products
//! M         u64      learned dimensions
//! price     u8       1 if a frozen price vector follows the matrices
//! window    u64
//! negatives u64
//! epochs    u64
//! step      f64      initial step size
//! seed      u64
//! smoothing f64
//! input     S*M f64  row-major
//! output    S*M f64  row-major
//! prices    S f64    only when price = 1
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{EmbeddingConfig, EmbeddingModel, PriceMode};
use crate::corpus::Vocabulary;
use crate::error::EmbeddingError;

pub const MODEL_MAGIC: [u8; 4] = *b"PVEC";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<(), EmbeddingError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_model<W: Write>(model: &EmbeddingModel, w: &mut W) -> Result<(), EmbeddingError> {
    let c = model.config();
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(model.n_products() as u64).to_le_bytes())?;
    w.write_all(&(model.dims() as u64).to_le_bytes())?;
    w.write_all(&[u8::from(model.price().is_some())])?;
    w.write_all(&(c.window as u64).to_le_bytes())?;
    w.write_all(&(c.negatives as u64).to_le_bytes())?;
    w.write_all(&(c.epochs as u64).to_le_bytes())?;
    w.write_all(&c.initial_step_size.to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&c.smoothing_exponent.to_le_bytes())?;
    let price = model.price().unwrap_or(&[]);
    for x in model.input_matrix().iter().chain(model.output_matrix()).chain(price) {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], EmbeddingError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => EmbeddingError::Truncated,
        _ => EmbeddingError::Io(e),
    })?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, EmbeddingError> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, EmbeddingError> {
    Ok(f64::from_le_bytes(read_exact(r)?))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, EmbeddingError> {
    (0..n).map(|_| read_f64(r)).collect()
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel, EmbeddingError> {
    read_model(&mut BufReader::new(File::open(path)?))
}

pub fn read_model<R: Read>(r: &mut R) -> Result<EmbeddingModel, EmbeddingError> {
    let magic: [u8; 4] = read_exact(r)?;
    if magic != MODEL_MAGIC {
        return Err(EmbeddingError::Format(format!("bad magic bytes {magic:?}")));
    }
    let version = u32::from_le_bytes(read_exact(r)?);
    if version != MODEL_VERSION {
        return Err(EmbeddingError::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let n = read_u64(r)? as usize;
    let dims = read_u64(r)? as usize;
    let has_price = match read_exact::<_, 1>(r)?[0] {
        0 => false,
        1 => true,
        other => return Err(EmbeddingError::Format(format!("bad price flag {other}"))),
    };
    let config = EmbeddingConfig {
        dims,
        window: read_u64(r)? as usize,
        negatives: read_u64(r)? as usize,
        epochs: read_u64(r)? as usize,
        initial_step_size: read_f64(r)?,
        seed: read_u64(r)?,
        price_mode: if has_price { PriceMode::Frozen } else { PriceMode::Off },
        smoothing_exponent: read_f64(r)?,
    };
    let len = n
        .checked_mul(dims)
        .ok_or_else(|| EmbeddingError::Format("matrix size overflows".into()))?;
    let input = read_f64s(r, len)?;
    let output = read_f64s(r, len)?;
    let price = if has_price { Some(read_f64s(r, n)?) } else { None };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(EmbeddingError::Format("trailing bytes after model".into()));
    }
    EmbeddingModel::from_matrices(input, output, price, config)
}

/// One product per line: id followed by its input vector, tab-separated.
pub fn write_text_export(model: &EmbeddingModel, vocabulary: &Vocabulary, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..model.n_products() {
        write!(w, "{}", vocabulary.product_of(i))?;
        for x in model.input_row(i) {
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::init_model;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, dims: usize, frozen: bool) -> EmbeddingModel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(n as u64);
        let mut r = |len| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let config = EmbeddingConfig {
            dims,
            price_mode: if frozen { PriceMode::Frozen } else { PriceMode::Off },
            seed: 99,
            ..EmbeddingConfig::default()
        };
        EmbeddingModel::from_matrices(r(n * dims), r(n * dims), frozen.then(|| r(n)), config).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for frozen in [false, true] {
            let m = random(17, 5, frozen);
            let mut buf = Vec::new();
            write_model(&m, &mut buf).unwrap();
            let back = read_model(&mut buf.as_slice()).unwrap();
            assert_eq!(back, m);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(back.input_matrix()), bits(m.input_matrix()));
        }
    }

    #[test]
    fn corrupt_magic_and_truncation() {
        let m = random(4, 3, false);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(&mut bad.as_slice()), Err(EmbeddingError::Format(_))));

        let mut wrong_version = buf.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            read_model(&mut wrong_version.as_slice()),
            Err(EmbeddingError::Version { found: 9, .. })
        ));

        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_model(&mut &cut[..]), Err(EmbeddingError::Truncated)));
    }

    #[test]
    fn full_scale_shape() {
        let config = EmbeddingConfig {
            dims: 20,
            ..EmbeddingConfig::default()
        };
        let m = init_model(13_124, &config, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!((back.n_products(), back.dims()), (13_124, 20));
        assert_eq!(back, m);
    }
}
