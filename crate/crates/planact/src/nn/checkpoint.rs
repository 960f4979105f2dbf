//! Versioned checkpoint container.
//!
//! Layout: magic, format version, length-prefixed JSON header, then named
//! f64 little-endian arrays. Writing the same parameters twice yields
//! identical bytes.

use super::Params;
use crate::error::Error;
use crate::scalar::Scalar;
use serde::{de::DeserializeOwned, Serialize};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 8] = b"PLANACK1";
const VERSION: u32 = 1;

pub fn save<S, M, H>(path: &Path, header: &H, model: &M) -> Result<(), Error>
where
    S: Scalar,
    M: Params<S>,
    H: Serialize,
{
    let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit("", &mut |name, p| {
        arrays.push((name.to_string(), p.iter().map(|v| v.as_f64()).collect()));
    });
    let header_bytes = serde_json::to_vec(header).map_err(|e| Error::Io(e.to_string()))?;
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, data) in &arrays {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load<S, M, H>(path: &Path, model: &mut M) -> Result<H, Error>
where
    S: Scalar,
    M: Params<S>,
    H: DeserializeOwned,
{
    let (header, arrays) = load_raw(path)?;
    let mut missing = Vec::new();
    model.visit_mut("", &mut |name, p| match arrays.get(name) {
        Some(data) if data.len() == p.len() => {
            for (dst, src) in p.iter_mut().zip(data) {
                *dst = S::from_f64(*src);
            }
        }
        Some(_) => missing.push(format!("{name} (shape mismatch)")),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: missing/mismatched arrays: {}",
            path.display(),
            missing.join(", ")
        )));
    }
    serde_json::from_value(header).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load_raw(path: &Path) -> Result<(serde_json::Value, HashMap<String, Vec<f64>>), Error> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::Io(e.to_string()))?;
    let mut pos = 0usize;
    fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], Error> {
        if *pos + n > buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    }
    if take(&buf, &mut pos, 8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let ver = u32::from_le_bytes(take(&buf, &mut pos, 4)?.try_into().unwrap());
    if ver != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {ver}")));
    }
    let hlen = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()) as usize;
    let header: serde_json::Value =
        serde_json::from_slice(take(&buf, &mut pos, hlen)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()) as usize;
    let mut arrays = HashMap::new();
    for _ in 0..count {
        let nlen = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&buf, &mut pos, nlen)?.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let dlen = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()) as usize;
        let raw = take(&buf, &mut pos, dlen * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.insert(name, data);
    }
    Ok((header, arrays))
}

/// Writer used by `save`-time sanity tests: serializing twice must be
/// byte-identical, which `save` guarantees by construction (ordered visit).
pub fn file_sha256(path: &Path) -> Result<String, Error> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Header {
        kind: String,
        seed: u64,
    }

    #[test]
    fn roundtrip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = Linear::<f64>::new(4, 3, &mut rng);
        let header = Header { kind: "linear".into(), seed: 3 };
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &header, &lin).unwrap();
        save(&p2, &header, &lin).unwrap();
        assert_eq!(file_sha256(&p1).unwrap(), file_sha256(&p2).unwrap());

        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let mut restored = Linear::<f64>::new(4, 3, &mut rng2);
        let h: Header = load(&p1, &mut restored).unwrap();
        assert_eq!(h, header);
        use crate::nn::Params;
        assert_eq!(lin.checksum(), restored.checksum());
    }

    #[test]
    fn rejects_corrupt_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        std::fs::write(&p, b"NOTAMAGIC-----").unwrap();
        assert!(load_raw(&p).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = Linear::<f64>::new(4, 3, &mut rng);
        save(&p, &Header { kind: "x".into(), seed: 0 }, &lin).unwrap();
        let mut other = Linear::<f64>::new(5, 3, &mut rng);
        let res: Result<Header, _> = load(&p, &mut other);
        assert!(res.is_err());
    }
}
