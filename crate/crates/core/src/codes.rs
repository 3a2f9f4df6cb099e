//! Dense `{−1, +1}` code matrices and the `LPMB` codes file.
//!
//! File layout: `"LPMB"`, version (`u32` LE), `n` and `r` (`u64` LE), then
//! `ceil(r/8)` bytes per sample. Bit `j` of a row lives in byte `j / 8` at
//! bit position `j % 8` and is set iff the code entry is `+1`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const LPMB_MAGIC: &[u8; 4] = b"LPMB";
const LPMB_VERSION: u32 = 1;
const LPMB_HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// `n x r` binary codes stored as `i8` entries in `{−1, +1}`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    n: usize,
    r: usize,
    entries: Vec<i8>,
}

impl CodeMatrix {
    /// The all-ones matrix used to start training.
    pub fn ones(n: usize, r: usize) -> Self {
        CodeMatrix {
            n,
            r,
            entries: vec![1; n * r],
        }
    }

    pub fn from_entries(n: usize, r: usize, entries: Vec<i8>) -> Result<Self> {
        if entries.len() != n * r {
            return Err(Error::Shape(format!(
                "{} entries for a {n}x{r} code matrix",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|&&e| e != 1 && e != -1) {
            return Err(Error::Value(format!("code entry {bad} is not ±1")));
        }
        Ok(CodeMatrix { n, r, entries })
    }

    /// Entrywise sign with `sgn(0) = +1`.
    pub fn sign_of(m: &DMatrix<f64>) -> Self {
        let (n, r) = m.shape();
        let mut entries = Vec::with_capacity(n * r);
        for i in 0..n {
            entries.extend(m.row(i).iter().map(|&v| if v < 0.0 { -1i8 } else { 1 }));
        }
        CodeMatrix { n, r, entries }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> usize {
        self.r
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.entries[i * self.r + j]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.entries[i * self.r..(i + 1) * self.r]
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.r, |i, j| self.get(i, j) as f64)
    }

    pub fn select_rows(&self, rows: &[usize]) -> CodeMatrix {
        let mut entries = Vec::with_capacity(rows.len() * self.r);
        for &i in rows {
            entries.extend_from_slice(self.row(i));
        }
        CodeMatrix {
            n: rows.len(),
            r: self.r,
            entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let row_bytes = self.r.div_ceil(8);
        let mut out = Vec::with_capacity(LPMB_HEADER_LEN + self.n * row_bytes);
        out.extend_from_slice(LPMB_MAGIC);
        out.extend_from_slice(&LPMB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.r as u64).to_le_bytes());
        for i in 0..self.n {
            let mut packed = vec![0u8; row_bytes];
            for (j, &e) in self.row(i).iter().enumerate() {
                if e == 1 {
                    packed[j / 8] |= 1 << (j % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < LPMB_HEADER_LEN || &bytes[..4] != LPMB_MAGIC {
            return Err(Error::Format("codes file: bad magic or truncated header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != LPMB_VERSION {
            return Err(Error::Format(format!("codes file: unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let r = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let (n, r) = match (usize::try_from(n), usize::try_from(r)) {
            (Ok(n), Ok(r)) => (n, r),
            _ => return Err(Error::Format("codes file: dimensions overflow".into())),
        };
        let row_bytes = r.div_ceil(8);
        let body = &bytes[LPMB_HEADER_LEN..];
        if n.checked_mul(row_bytes) != Some(body.len()) {
            return Err(Error::Format(format!(
                "codes file: expected {n} rows of {row_bytes} bytes, found {} bytes",
                body.len()
            )));
        }
        let mut entries = Vec::with_capacity(n * r);
        for row in body.chunks_exact(row_bytes.max(1)).take(n) {
            for j in 0..r {
                let set = row[j / 8] >> (j % 8) & 1 == 1;
                entries.push(if set { 1 } else { -1 });
            }
            // padding bits must be clear
            if r % 8 != 0 && row[row_bytes - 1] >> (r % 8) != 0 {
                return Err(Error::Format("codes file: nonzero padding bits".into()));
            }
        }
        Ok(CodeMatrix { n, r, entries })
    }
}

pub fn write_codes(path: &Path, codes: &CodeMatrix) -> Result<()> {
    fs::write(path, codes.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_codes(path: &Path) -> Result<CodeMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    CodeMatrix::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ones_initialization() {
        let b = CodeMatrix::ones(3, 2);
        assert_eq!(b.to_matrix(), DMatrix::from_element(3, 2, 1.0));
        assert_eq!(CodeMatrix::ones(1, 1).entries(), &[1]);
    }

    #[test]
    fn sign_maps_zero_to_plus_one() {
        let m = DMatrix::from_row_slice(1, 3, &[0.0, -0.0, -1e-300]);
        assert_eq!(CodeMatrix::sign_of(&m).entries(), &[1, 1, -1]);
    }

    #[test]
    fn byte_layout() {
        let b = CodeMatrix::from_entries(1, 10, vec![1, -1, 1, 1, -1, -1, -1, -1, 1, -1]).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..4], b"LPMB");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &10u64.to_le_bytes());
        assert_eq!(&bytes[24..], &[0b0000_1101, 0b0000_0001]);
    }

    #[test]
    fn rejects_bad_entries_and_files() {
        assert!(matches!(CodeMatrix::from_entries(1, 2, vec![1, 0]), Err(Error::Value(_))));
        assert!(matches!(CodeMatrix::from_entries(1, 2, vec![1]), Err(Error::Shape(_))));
        let mut bytes = CodeMatrix::ones(2, 3).to_bytes();
        assert!(CodeMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let last = bytes.len() - 1;
        bytes[last] |= 0x80;
        assert!(matches!(CodeMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn file_round_trip(n in 1usize..20, r in 1usize..80, seed in any::<u64>()) {
            let entries = (0..n * r)
                .map(|k| if (seed.rotate_left(k as u32 % 64) ^ k as u64) & 1 == 1 { 1 } else { -1 })
                .collect();
            let b = CodeMatrix::from_entries(n, r, entries).unwrap();
            prop_assert_eq!(CodeMatrix::from_bytes(&b.to_bytes()).unwrap(), b);
        }
    }
}
