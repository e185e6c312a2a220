//! Weight checkpoint files.
//!
//! Format: magic "LCW1", u32 record count, then per parameter a u16 name
//! length, the UTF-8 name, four u32 shape dims (N, C, H, W), and the values
//! as 32-bit little-endian reals. Round-trips are bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"LCW1";

pub fn save(path: &Path, params: &[(String, &Tensor)]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Validation(format!("parameter name too long: {name}")));
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        let s = tensor.shape();
        for dim in [s.n, s.c, s.h, s.w] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Truncated("checkpoint header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic(format!(
            "expected {:?}, found {:?}",
            MAGIC,
            &bytes[0..4]
        )));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() < pos + n {
            return Err(Error::Truncated(format!(
                "checkpoint record at byte {pos}"
            )));
        }
        let slice = &bytes[pos..pos + n];
        pos += n;
        Ok(slice)
    };
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| Error::Corrupt("parameter name is not UTF-8".into()))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let raw = take(4 * shape.numel())?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push((name, Tensor::from_vec(shape, data)?));
    }
    if pos != bytes.len() {
        return Err(Error::Inconsistent(format!(
            "{} trailing bytes after checkpoint records",
            bytes.len() - pos
        )));
    }
    Ok(params)
}

/// Loads a checkpoint into an existing parameter list; names, order, and
/// shapes must all match.
pub fn load_into(path: &Path, params: &mut [(String, &mut Tensor)]) -> Result<()> {
    let loaded = load(path)?;
    if loaded.len() != params.len() {
        return Err(Error::Inconsistent(format!(
            "checkpoint has {} parameters, network expects {}",
            loaded.len(),
            params.len()
        )));
    }
    for ((name, target), (file_name, value)) in params.iter_mut().zip(loaded) {
        if *name != file_name {
            return Err(Error::Inconsistent(format!(
                "parameter order mismatch: expected {name}, found {file_name}"
            )));
        }
        if target.shape() != value.shape() {
            return Err(Error::Inconsistent(format!(
                "{name}: checkpoint shape {} but network has {}",
                value.shape(),
                target.shape()
            )));
        }
        **target = value;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lcw");
        let a = Tensor::from_vec(
            Shape::new(2, 1, 1, 3),
            vec![0.1, -2.5, 3.25e-7, 1.0, f32::MIN_POSITIVE, -0.0],
        )
        .unwrap();
        let b = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![42.0]).unwrap();
        save(
            &path,
            &[("net.stem.weight".into(), &a), ("net.stem.bias".into(), &b)],
        )
        .unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "net.stem.weight");
        // bit-exact, including -0.0
        for (x, y) in loaded[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded[1].1.data(), b.data());
    }

    #[test]
    fn load_into_checks_names_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lcw");
        let a = Tensor::full(Shape::new(1, 2, 1, 1), 7.0);
        save(&path, &[("p".into(), &a)]).unwrap();

        let mut wrong_name = Tensor::zeros(Shape::new(1, 2, 1, 1));
        assert!(load_into(&path, &mut [("q".into(), &mut wrong_name)]).is_err());

        let mut wrong_shape = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert!(load_into(&path, &mut [("p".into(), &mut wrong_shape)]).is_err());

        let mut ok = Tensor::zeros(Shape::new(1, 2, 1, 1));
        load_into(&path, &mut [("p".into(), &mut ok)]).unwrap();
        assert_eq!(ok.data(), &[7.0, 7.0]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lcw");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(matches!(load(&path), Err(Error::BadMagic(_))));
        std::fs::write(&path, b"LCW1\x01\x00\x00\x00\x05").unwrap();
        assert!(matches!(load(&path), Err(Error::Truncated(_))));
    }
}
