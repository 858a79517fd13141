//! Flat binary parameter checkpoints.
//!
//! Layout: magic `DEAL`, format version (u32 LE), then per tensor:
//! name length (u64 LE), UTF-8 name, rank (u64 LE), dims (u64 LE each),
//! payload (f64 LE, row-major). Tensors repeat until end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DEAL";
const VERSION: u32 = 1;

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes()).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Schema(format!("{}: bad magic bytes", path.display())));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(Error::Schema(format!(
            "{}: checkpoint version {} not supported (expected {})",
            path.display(),
            version,
            VERSION
        )));
    }
    let mut out = Vec::new();
    loop {
        let mut len8 = [0u8; 8];
        match r.read_exact(&mut len8) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::io(path, e)),
        }
        let name_len = u64::from_le_bytes(len8) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|e| Error::io(path, e))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Schema(format!("{}: non-UTF-8 tensor name", path.display())))?;
        r.read_exact(&mut len8).map_err(|e| Error::io(path, e))?;
        let rank = u64::from_le_bytes(len8) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut len8).map_err(|e| Error::io(path, e))?;
            shape.push(u64::from_le_bytes(len8) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        for v in &mut data {
            r.read_exact(&mut len8).map_err(|e| Error::io(path, e))?;
            *v = f64::from_le_bytes(len8);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
