//! Binary tensor serialization.
//!
//! Single tensor layout, all integers little endian:
//!   magic `VTSF1\0` (6 bytes) | u32 rank | rank * u32 extents | f32 payload.
//!
//! A table file holds named tensors for checkpoints:
//!   u32 entry count, then per entry: u32 name length | UTF-8 name | tensor
//!   record as above. Entries are written in sorted name order so the same
//!   parameters always serialize to the same bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Tensor, TensorError};

pub const MAGIC: &[u8; 6] = b"VTSF1\0";

/// Extension used for tensor and checkpoint files.
pub const FILE_EXT: &str = "vtsf";

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<(), TensorError> {
    w.write_all(MAGIC)?;
    write_u32(w, t.rank() as u32)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor, TensorError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format {
            reason: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(TensorError::Format {
            reason: format!("unreasonable rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for _ in 0..rank {
        let d = read_u32(r)? as usize;
        if d == 0 {
            return Err(TensorError::Format {
                reason: "zero extent".into(),
            });
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| TensorError::Format {
                reason: "extent product overflow".into(),
            })?;
        shape.push(d);
    }
    if count > (1usize << 31) {
        return Err(TensorError::Format {
            reason: format!("payload of {count} elements exceeds sanity limit"),
        });
    }
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor, TensorError> {
    let mut r = BufReader::new(File::open(path)?);
    let t = read_tensor(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Format {
            reason: "trailing bytes after tensor payload".into(),
        });
    }
    Ok(t)
}

pub fn write_table(w: &mut impl Write, table: &BTreeMap<String, Tensor>) -> Result<(), TensorError> {
    write_u32(w, table.len() as u32)?;
    for (name, t) in table {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_table(r: &mut impl Read) -> Result<BTreeMap<String, Tensor>, TensorError> {
    let count = read_u32(r)? as usize;
    if count > 100_000 {
        return Err(TensorError::Format {
            reason: format!("unreasonable entry count {count}"),
        });
    }
    let mut table = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(TensorError::Format {
                reason: format!("unreasonable name length {name_len}"),
            });
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| TensorError::Format {
            reason: "entry name is not UTF-8".into(),
        })?;
        let t = read_tensor(r)?;
        if table.insert(name.clone(), t).is_some() {
            return Err(TensorError::Format {
                reason: format!("duplicate entry {name:?}"),
            });
        }
    }
    Ok(table)
}

pub fn save_table(path: &Path, table: &BTreeMap<String, Tensor>) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_table(&mut w, table)?;
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<BTreeMap<String, Tensor>, TensorError> {
    let mut r = BufReader::new(File::open(path)?);
    let table = read_table(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Format {
            reason: "trailing bytes after last table entry".into(),
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let t = Tensor::new(
            vec![2, 3],
            vec![1.5, -0.25, f32::MIN_POSITIVE, 1e30, -1e-30, 0.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(t, back);
        // Header: 6 magic + 4 rank + 8 dims, payload: 6 * 4.
        assert_eq!(buf.len(), 6 + 4 + 8 + 24);
    }

    #[test]
    fn read_rejects_bad_magic() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::zeros(&[2])).unwrap();
        buf[0] = b'X';
        let err = read_tensor(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn read_rejects_truncated_payload() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::zeros(&[4])).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn table_round_trip_and_sorted_layout() {
        let mut table = BTreeMap::new();
        table.insert("b.weight".to_string(), Tensor::filled(&[2, 2], 2.0));
        table.insert("a.bias".to_string(), Tensor::from_slice(&[1.0]));
        let mut buf = Vec::new();
        write_table(&mut buf, &table).unwrap();
        let back = read_table(&mut buf.as_slice()).unwrap();
        assert_eq!(table, back);
        // "a.bias" serializes before "b.weight" regardless of insert order.
        let a_pos = buf.windows(6).position(|w| w == b"a.bias").unwrap();
        let b_pos = buf.windows(8).position(|w| w == b"b.weight").unwrap();
        assert!(a_pos < b_pos);
    }

    #[test]
    fn file_round_trip(){
        let dir = std::env::temp_dir().join("vtsf_fmt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.vtsf");
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        save_tensor(&path, &t).unwrap();
        assert_eq!(load_tensor(&path).unwrap(), t);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
