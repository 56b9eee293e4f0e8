//! Named-array checkpoint container.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic  b"PGIBCKPT"
//! u32    format version (1)
//! u32    entry count
//! per entry, sorted by name:
//!   u32 name length, name bytes (UTF-8)
//!   u8  dtype (0 = f64, 1 = u64)
//!   u32 rank, then rank x u64 dimensions
//!   payload: product(dims) x 8 bytes
//! ```
//!
//! A text manifest next to the binary lists one `name dtype d0xd1...` line
//! per entry in the same sorted order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{PgibError, Result};

const MAGIC: &[u8; 8] = b"PGIBCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl StoredArray {
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: ArrayData::F64(m.iter().copied().collect()),
        }
    }

    pub fn from_u64(values: Vec<u64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: ArrayData::U64(values),
        }
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        match (&self.data, self.shape.as_slice()) {
            (ArrayData::F64(v), &[r, c]) => Array2::from_shape_vec((r, c), v.clone())
                .map_err(|e| PgibError::Checkpoint(e.to_string())),
            _ => Err(PgibError::Checkpoint(format!(
                "expected a rank-2 f64 array, found shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn as_u64(&self) -> Result<&[u64]> {
        match &self.data {
            ArrayData::U64(v) => Ok(v),
            ArrayData::F64(_) => Err(PgibError::Checkpoint("expected a u64 array".into())),
        }
    }

    fn dtype(&self) -> (u8, &'static str) {
        match self.data {
            ArrayData::F64(_) => (0, "f64"),
            ArrayData::U64(_) => (1, "u64"),
        }
    }
}

pub type NamedArrays = BTreeMap<String, StoredArray>;

pub fn encode(arrays: &NamedArrays) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, arr) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(arr.dtype().0);
        out.extend_from_slice(&(arr.shape.len() as u32).to_le_bytes());
        for &d in &arr.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &arr.data {
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| PgibError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NamedArrays> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(PgibError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PgibError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut out = NamedArrays::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| PgibError::Checkpoint("entry name is not UTF-8".into()))?;
        let dtype = r.take(1)?[0];
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = match dtype {
            0 => ArrayData::F64((0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<_>>()?),
            1 => ArrayData::U64((0..n).map(|_| r.u64()).collect::<Result<_>>()?),
            other => return Err(PgibError::Checkpoint(format!("unknown dtype tag {other}"))),
        };
        out.insert(name, StoredArray { shape, data });
    }
    if r.pos != bytes.len() {
        return Err(PgibError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

pub fn manifest(arrays: &NamedArrays) -> String {
    let mut s = String::new();
    for (name, arr) in arrays {
        let dims: Vec<String> = arr.shape.iter().map(usize::to_string).collect();
        writeln!(s, "{name} {} {}", arr.dtype().1, dims.join("x")).expect("string write");
    }
    s
}

pub fn save(arrays: &NamedArrays, bin_path: &Path, manifest_path: &Path) -> Result<()> {
    fs::write(bin_path, encode(arrays))?;
    fs::write(manifest_path, manifest(arrays))?;
    Ok(())
}

pub fn load(bin_path: &Path) -> Result<NamedArrays> {
    decode(&fs::read(bin_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn manifest_is_sorted() {
        let mut a = NamedArrays::new();
        a.insert("z".into(), StoredArray::from_matrix(&array![[1.0]]));
        a.insert("a".into(), StoredArray::from_u64(vec![1, 2, 3]));
        assert_eq!(manifest(&a), "a u64 3\nz f64 1x1\n");
    }

    #[test]
    fn rejects_corruption() {
        let mut a = NamedArrays::new();
        a.insert("w".into(), StoredArray::from_matrix(&array![[1.0, 2.0]]));
        let bytes = encode(&a);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identity(
            rows in 1usize..4,
            cols in 1usize..4,
            seed in any::<u64>(),
            ints in proptest::collection::vec(any::<u64>(), 0..6),
        ) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| {
                f64::from_bits(seed.rotate_left((i * cols + j) as u32) >> 2)
            });
            let mut a = NamedArrays::new();
            a.insert("m".into(), StoredArray::from_matrix(&m));
            a.insert("ints".into(), StoredArray::from_u64(ints));
            let back = decode(&encode(&a)).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(back["m"].to_matrix().unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            m.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
