//! Row-major FP32 matrices, tile views, the binary file format and the seeded
//! generator.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FTMM";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    ld: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, ld: cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_ld(rows, cols, cols, data)
    }

    /// Storage with a leading dimension wider than `cols`.
    pub fn with_ld(rows: usize, cols: usize, ld: usize, data: Vec<f32>) -> Result<Self> {
        if ld < cols {
            return Err(Error::ShapeMismatch(format!("leading dimension {ld} < cols {cols}")));
        }
        let need = if rows == 0 { 0 } else { (rows - 1) * ld + cols };
        if data.len() < need {
            return Err(Error::ShapeMismatch(format!("{} values cannot hold {rows}x{cols} (ld {ld})", data.len())));
        }
        Ok(Matrix { rows, cols, ld, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ld(&self) -> usize {
        self.ld
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        assert!(r < self.rows && c < self.cols);
        self.data[r * self.ld + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        assert!(r < self.rows && c < self.cols);
        self.data[r * self.ld + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.ld..r * self.ld + self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.ld..r * self.ld + self.cols]
    }

    pub fn as_tile(&self) -> Tile<'_> {
        self.tile(0, 0, self.rows, self.cols)
    }

    pub fn tile(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Tile<'_> {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "tile out of bounds");
        let start = r0 * self.ld + c0;
        let end = if rows == 0 { start } else { start + (rows - 1) * self.ld + cols };
        Tile { rows, cols, ld: self.ld, data: &self.data[start..end] }
    }

    pub fn tile_mut(&mut self, r0: usize, c0: usize, rows: usize, cols: usize) -> TileMut<'_> {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "tile out of bounds");
        let start = r0 * self.ld + c0;
        let end = if rows == 0 { start } else { start + (rows - 1) * self.ld + cols };
        TileMut { rows, cols, ld: self.ld, data: &mut self.data[start..end] }
    }

    /// Sum of all elements in FP64, row-major order.
    pub fn checksum(&self) -> f64 {
        (0..self.rows).flat_map(|r| self.row(r).iter()).map(|&v| f64::from(v)).sum()
    }

    /// Packed row-major copy of the logical elements.
    pub fn to_vec(&self) -> Vec<f32> {
        (0..self.rows).flat_map(|r| self.row(r).iter().copied()).collect()
    }

    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && (0..self.rows).all(|r| self.row(r).iter().zip(other.row(r)).all(|(a, b)| a.to_bits() == b.to_bits()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&DTYPE_F32.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for r in 0..self.rows {
            for v in self.row(r) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 24];
        r.read_exact(&mut head)?;
        if &head[0..4] != MAGIC {
            return Err(Error::Format("missing FTMM magic".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dtype = u16::from_le_bytes([head[6], head[7]]);
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype code {dtype}")));
        }
        let rows = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes")) as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let mut bytes = vec![0u8; n.checked_mul(4).ok_or_else(|| Error::Format("dimensions overflow".into()))?];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        Matrix::from_vec(rows, cols, data)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Read-only view of a row-major sub-matrix.
#[derive(Debug, Clone, Copy)]
pub struct Tile<'a> {
    pub rows: usize,
    pub cols: usize,
    pub ld: usize,
    data: &'a [f32],
}

impl<'a> Tile<'a> {
    pub fn new(rows: usize, cols: usize, ld: usize, data: &'a [f32]) -> Result<Self> {
        check_view(rows, cols, ld, data.len())?;
        Ok(Tile { rows, cols, ld, data })
    }

    pub fn row(&self, r: usize) -> &'a [f32] {
        &self.data[r * self.ld..r * self.ld + self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.row(r)[c]
    }
}

/// Mutable view of a row-major sub-matrix.
#[derive(Debug)]
pub struct TileMut<'a> {
    pub rows: usize,
    pub cols: usize,
    pub ld: usize,
    data: &'a mut [f32],
}

impl<'a> TileMut<'a> {
    pub fn new(rows: usize, cols: usize, ld: usize, data: &'a mut [f32]) -> Result<Self> {
        check_view(rows, cols, ld, data.len())?;
        Ok(TileMut { rows, cols, ld, data })
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.ld..r * self.ld + self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.ld + c]
    }
}

fn check_view(rows: usize, cols: usize, ld: usize, len: usize) -> Result<()> {
    if ld < cols {
        return Err(Error::ShapeMismatch(format!("leading dimension {ld} < cols {cols}")));
    }
    let need = if rows == 0 { 0 } else { (rows - 1) * ld + cols };
    if len < need {
        return Err(Error::ShapeMismatch(format!("{len} values cannot hold {rows}x{cols} (ld {ld})")));
    }
    Ok(())
}

/// Seeded source of test matrices.
///
/// A ChaCha8 stream seeded with `seed_from_u64(seed)` yields values uniform in
/// [-1, 1], filling each matrix row-major. Drawing A, then B, then C from one
/// generator fixes all three for a seed.
pub struct MatrixGenerator {
    rng: ChaCha8Rng,
}

impl MatrixGenerator {
    pub fn new(seed: u64) -> Self {
        MatrixGenerator { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-1.0f32..=1.0)).collect();
        Matrix { rows, cols, ld: cols, data }
    }

    /// A (m x k), B (k x n) and C (m x n) for one problem.
    pub fn problem(seed: u64, m: usize, n: usize, k: usize) -> (Matrix, Matrix, Matrix) {
        let mut g = Self::new(seed);
        let a = g.matrix(m, k);
        let b = g.matrix(k, n);
        let c = g.matrix(m, n);
        (a, b, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let (a, _, _) = MatrixGenerator::problem(7, 5, 3, 4);
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 5 * 4 * 4);
        assert_eq!(&buf[..4], b"FTMM");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 5);
        let back = Matrix::read_from(&mut buf.as_slice()).unwrap();
        assert!(back.bit_eq(&a));
        buf[0] = b'X';
        assert!(Matrix::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn generator_is_seeded_and_bounded() {
        let (a1, b1, c1) = MatrixGenerator::problem(42, 9, 4, 6);
        let (a2, b2, c2) = MatrixGenerator::problem(42, 9, 4, 6);
        assert!(a1.bit_eq(&a2) && b1.bit_eq(&b2) && c1.bit_eq(&c2));
        let (a3, _, _) = MatrixGenerator::problem(43, 9, 4, 6);
        assert!(!a1.bit_eq(&a3));
        assert!(a1.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn strided_views() {
        let m = Matrix::with_ld(2, 2, 3, vec![1.0, 2.0, 9.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.get(1, 1), 4.0);
        assert_eq!(m.checksum(), 10.0);
        let t = m.tile(1, 0, 1, 2);
        assert_eq!(t.row(0), &[3.0, 4.0]);
        assert!(Matrix::with_ld(2, 2, 1, vec![0.0; 4]).is_err());
        assert!(Tile::new(2, 3, 3, &[0.0; 5]).is_err());
    }
}
