//! Load a machine description, tweak it, and check it.
use ftimm::machine::{default_ftm7032, Level, MachineModel};

fn main() -> ftimm::Result<()> {
    let stock = default_ftm7032();
    println!("peak per core {:.1} GFlops, cluster {:.1} GFlops", stock.peak_gflops_per_core(), stock.peak_gflops_cluster());
    for level in Level::ALL {
        match stock.capacity(level) {
            u64::MAX => println!("{:<4} unbounded", level.name()),
            c => println!("{:<4} {c:>10} bytes", level.name()),
        }
    }

    // Fields left out of the JSON keep their stock values.
    let small = MachineModel::from_json_str(r#"{"num_cores": 2, "latency": {"t_fma": 4}}"#)?;
    println!("cores {} t_fma {} valid {}", small.num_cores, small.latency.t_fma, small.validate().is_ok());

    let broken = stock.clone().with_num_cores(0);
    println!("zero cores: {:?}", broken.validate().violations);
    Ok(())
}
