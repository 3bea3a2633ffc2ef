use ftimm::machine::default_ftm7032;
use ftimm::tuner::{cmr_k_strategy, cmr_m_strategy, initial_blocks, Strategy, Tuner, MatrixShape};

fn main() -> ftimm::Result<()> {
    let model = default_ftm7032();
    let t = std::time::Instant::now();
    let m = initial_blocks(Strategy::FtimmM, &model)?;
    let k = initial_blocks(Strategy::FtimmK, &model)?;
    println!("search took {:?}", t.elapsed());
    println!("M: {m:?} {:?}", cmr_m_strategy(&m, model.num_cores));
    println!("K: {k:?} {:?}", cmr_k_strategy(&k, model.num_cores));
    let mut tuner = Tuner::new(&model)?;
    for (mm, n, kk) in [(1 << 16, 32, 32), (32, 32, 1 << 20), (20480, 32, 20480), (4096, 4096, 4096), (512, 96, 512)] {
        let shape = MatrixShape::new(mm, n, kk)?;
        println!("{shape}: {:?}", tuner.adjust(&shape)?);
    }
    Ok(())
}
