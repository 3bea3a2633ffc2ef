//! Run both micro-kernels on one tile and compare with the reference loop.
use ftimm::engine::naive_gemm;
use ftimm::kernel::{exec_ftimm_kernel, exec_tgemm_kernel};
use ftimm::machine::default_ftm7032;
use ftimm::matrix::MatrixGenerator;
use ftimm::microkernel::select_tiling;

fn main() -> ftimm::Result<()> {
    let model = default_ftm7032();
    let (m_s, n_a, k_a) = (6, 32, 512);
    let (a, b, c0) = MatrixGenerator::problem(1, m_s, n_a, k_a);

    let mut reference = c0.clone();
    naive_gemm(&a, &b, &mut reference)?;

    let mut t = c0.clone();
    exec_tgemm_kernel(&a.as_tile(), &b.as_tile(), &mut t.tile_mut(0, 0, m_s, n_a))?;
    println!("TGEMM kernel bit-identical to reference: {}", t.bit_eq(&reference));

    let spec = select_tiling(m_s, n_a, &model)?;
    let mut f = c0;
    exec_ftimm_kernel(&a.as_tile(), &b.as_tile(), &mut f.tile_mut(0, 0, m_s, n_a), &spec)?;
    let worst = (0..m_s)
        .flat_map(|i| (0..n_a).map(move |j| (i, j)))
        .map(|(i, j)| (f.get(i, j) - reference.get(i, j)).abs())
        .fold(0.0f32, f32::max);
    println!("ftIMM kernel (k_u={}) max abs difference {worst:.2e}", spec.k_u);
    Ok(())
}
