//! Binary matrix container.
//!
//! Layout: `rows` as little-endian `u64`, `cols` as little-endian `u64`,
//! then `rows * cols` little-endian `f64` values in row-major order.
//! Nothing else: no magic, no padding.

use std::io::{Read, Write};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Refuses headers claiming more values than this (guards against reading
/// garbage as a 2^60-element allocation).
const MAX_VALUES: u64 = 1 << 32;

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(m.as_slice().len() * 8);
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word);
    let count = rows
        .checked_mul(cols)
        .filter(|&n| n <= MAX_VALUES)
        .ok_or_else(|| Error::Checkpoint(format!("implausible matrix header {rows}x{cols}")))?;
    let mut bytes = vec![0u8; count as usize * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Matrix::from_vec(rows as usize, cols as usize, data)
}

pub fn to_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.as_slice().len() * 8);
    write_matrix(&mut out, m).expect("writing to a Vec cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let bytes = to_bytes(&m);
        assert_eq!(bytes.len(), 16 + 6 * 8);
        assert_eq!(&bytes[0..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        // Row-major: the fourth value is m[1][0].
        assert_eq!(&bytes[40..48], &4.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_input_fails() {
        let bytes = to_bytes(&Matrix::identity(3));
        assert!(read_matrix(&mut &bytes[..bytes.len() - 1]).is_err());
        assert!(read_matrix(&mut &bytes[..4]).is_err());
    }

    #[test]
    fn absurd_header_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        assert!(matches!(
            read_matrix(&mut &bytes[..]),
            Err(Error::Checkpoint(_))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut rng = crate::linalg::Rng::new(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.gaussian() * 1e3);
            let back = read_matrix(&mut &to_bytes(&m)[..]).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
