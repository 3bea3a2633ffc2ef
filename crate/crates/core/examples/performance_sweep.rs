//! Modeled TGEMM vs ftIMM over every preset grid.
use ftimm::machine::default_ftm7032;
use ftimm::perf::{speedup_table, sweep_csv, Preset};

fn main() -> ftimm::Result<()> {
    let model = default_ftm7032();
    for preset in Preset::ALL {
        let rows = speedup_table(&preset.shapes(), &model)?;
        let best = rows.iter().map(|r| r.speedup).fold(0.0, f64::max);
        println!("# {} ({} shapes, best speedup {best:.2}x)", preset.name(), rows.len());
        print!("{}", sweep_csv(&rows)?);
    }
    Ok(())
}
