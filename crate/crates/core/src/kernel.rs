//! Functional micro-kernels.
//!
//! Both kernels keep one FP32 accumulator chain per output (k_u chains for the
//! ftIMM kernel), start it at zero, fuse every multiply-add, and add the
//! result into C once at the end.

use crate::error::{Error, Result};
use crate::matrix::{Tile, TileMut};
use crate::microkernel::{MicroKernelSpec, MAX_N_A};

fn conform(a: &Tile<'_>, b: &Tile<'_>, c: &TileMut<'_>) -> Result<()> {
    if a.cols != b.rows || a.rows != c.rows || b.cols != c.cols {
        return Err(Error::ShapeMismatch(format!(
            "A {}x{}, B {}x{}, C {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    Ok(())
}

/// TGEMM micro-kernel: C += A_s x B_a, accumulating over k in order.
pub fn exec_tgemm_kernel(a: &Tile<'_>, b: &Tile<'_>, c: &mut TileMut<'_>) -> Result<()> {
    conform(a, b, c)?;
    let mut acc = vec![0.0f32; c.cols];
    for m in 0..a.rows {
        acc.fill(0.0);
        let arow = a.row(m);
        for (k, &av) in arow.iter().enumerate() {
            for (s, &bv) in acc.iter_mut().zip(b.row(k)) {
                *s = av.mul_add(bv, *s);
            }
        }
        for (cv, s) in c.row_mut(m).iter_mut().zip(&acc) {
            *cv += s;
        }
    }
    Ok(())
}

/// ftIMM micro-kernel. Step k feeds partial sum `k % k_u`; the k_u partial
/// sums of each output are reduced in ascending order and added into C.
/// Rows are processed in groups of m_u, the last group possibly shorter.
pub fn exec_ftimm_kernel(a: &Tile<'_>, b: &Tile<'_>, c: &mut TileMut<'_>, spec: &MicroKernelSpec) -> Result<()> {
    conform(a, b, c)?;
    if spec.m_u == 0 || spec.k_u == 0 || spec.m_u > spec.m_s || spec.n_a == 0 || spec.n_a > MAX_N_A {
        return Err(Error::InvalidSpec(format!("{spec:?}")));
    }
    if a.rows != spec.m_s || c.cols != spec.n_a {
        return Err(Error::ShapeMismatch(format!(
            "tile {}x{} does not match kernel m_s={} n_a={}",
            a.rows, c.cols, spec.m_s, spec.n_a
        )));
    }
    let (m_u, k_u, n) = (spec.m_u, spec.k_u, c.cols);
    let mut part = vec![0.0f32; k_u * m_u * n];
    for g0 in (0..spec.m_s).step_by(m_u) {
        let rows = m_u.min(spec.m_s - g0);
        part.fill(0.0);
        for k in 0..a.cols {
            let ku = k % k_u;
            let brow = b.row(k);
            for mu in 0..rows {
                let av = a.get(g0 + mu, k);
                let p = &mut part[(ku * m_u + mu) * n..][..n];
                for (s, &bv) in p.iter_mut().zip(brow) {
                    *s = av.mul_add(bv, *s);
                }
            }
        }
        for mu in 0..rows {
            let crow = c.row_mut(g0 + mu);
            for (j, cv) in crow.iter_mut().enumerate() {
                let mut s = part[mu * n + j];
                for ku in 1..k_u {
                    s += part[(ku * m_u + mu) * n + j];
                }
                *cv += s;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::default_ftm7032;
    use crate::matrix::{Matrix, MatrixGenerator};
    use crate::microkernel::select_tiling;

    fn spec(m_s: usize, n_a: usize, m_u: usize, k_u: usize) -> MicroKernelSpec {
        MicroKernelSpec { m_s, n_a, m_u, k_u, v_n: n_a.div_ceil(32) }
    }

    // Plain dot product per output, the reference the kernels must match.
    fn dot_oracle(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
        Matrix::from_fn(c.rows(), c.cols(), |i, j| {
            let mut s = 0.0f32;
            for k in 0..a.cols() {
                s = a.get(i, k).mul_add(b.get(k, j), s);
            }
            c.get(i, j) + s
        })
    }

    #[test]
    fn scalar_case() {
        let a = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let mut c = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        exec_tgemm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 1, 1)).unwrap();
        assert_eq!(c.get(0, 0), 7.0);
    }

    #[test]
    fn identity_copies_b() {
        let mut g = MatrixGenerator::new(1);
        let b = g.matrix(4, 8);
        let mut c = Matrix::zeros(4, 8);
        exec_tgemm_kernel(&Matrix::identity(4).as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 4, 8)).unwrap();
        assert!(c.bit_eq(&b));
    }

    #[test]
    fn tgemm_matches_oracle_exactly() {
        let (a, b, c0) = MatrixGenerator::problem(3, 6, 96, 512);
        let mut c = c0.clone();
        exec_tgemm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 6, 96)).unwrap();
        assert!(c.bit_eq(&dot_oracle(&a, &b, &c0)));
    }

    #[test]
    fn hand_reduction_order() {
        let a = Matrix::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(4, 1, vec![1.0; 4]).unwrap();
        let mut c = Matrix::zeros(1, 1);
        exec_ftimm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 1, 1), &spec(1, 1, 1, 2)).unwrap();
        assert_eq!(c.get(0, 0), 10.0);
    }

    #[test]
    fn unit_depth_unroll_is_tgemm() {
        let m = default_ftm7032();
        let s = select_tiling(6, 96, &m).unwrap();
        assert_eq!(s.k_u, 1);
        let (a, b, c0) = MatrixGenerator::problem(5, 6, 96, 300);
        let (mut c1, mut c2) = (c0.clone(), c0.clone());
        exec_tgemm_kernel(&a.as_tile(), &b.as_tile(), &mut c1.tile_mut(0, 0, 6, 96)).unwrap();
        exec_ftimm_kernel(&a.as_tile(), &b.as_tile(), &mut c2.tile_mut(0, 0, 6, 96), &s).unwrap();
        assert!(c1.bit_eq(&c2));
    }

    #[test]
    fn split_depth_within_tolerance() {
        let (a, b, c0) = MatrixGenerator::problem(9, 8, 96, 864);
        let mut c = c0.clone();
        exec_ftimm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 8, 96), &spec(8, 96, 8, 2)).unwrap();
        let o = dot_oracle(&a, &b, &c0);
        for i in 0..8 {
            for j in 0..96 {
                assert!((c.get(i, j) - o.get(i, j)).abs() <= 1e-5 * (1.0 + o.get(i, j).abs()));
            }
        }
    }

    #[test]
    fn ragged_tails() {
        // 7 rows in groups of 3, depth 11 over 4 partial sums.
        let (a, b, c0) = MatrixGenerator::problem(11, 7, 20, 11);
        let mut c = c0.clone();
        exec_ftimm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 7, 20), &spec(7, 20, 3, 4)).unwrap();
        let o = dot_oracle(&a, &b, &c0);
        for i in 0..7 {
            for j in 0..20 {
                assert!((c.get(i, j) - o.get(i, j)).abs() <= 1e-5 * (1.0 + o.get(i, j).abs()));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let mut c = Matrix::zeros(2, 2);
        assert!(exec_tgemm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 2, 2)).is_err());
        let b = Matrix::zeros(3, 2);
        assert!(exec_ftimm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 2, 2), &spec(3, 2, 1, 1)).is_err());
        assert!(exec_ftimm_kernel(&a.as_tile(), &b.as_tile(), &mut c.tile_mut(0, 0, 2, 2), &spec(2, 2, 3, 1)).is_err());
    }
}
