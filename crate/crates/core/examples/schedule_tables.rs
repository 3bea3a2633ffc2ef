//! Print the generated loop bodies for the three panel-width regimes.
use ftimm::machine::default_ftm7032;
use ftimm::microkernel::{estimate_cycles, generate_schedule, select_tiling, theoretical_upper_bound, verify_schedule};

fn main() -> ftimm::Result<()> {
    let model = default_ftm7032();
    for (m_s, n_a) in [(8, 96), (6, 64), (6, 32)] {
        let spec = select_tiling(m_s, n_a, &model)?;
        let sched = generate_schedule(&spec, &model)?;
        let est = estimate_cycles(&sched, &spec, 512, &model);
        println!("m_s={m_s} n_a={n_a}: m_u={} k_u={} v_n={} registers={}", spec.m_u, spec.k_u, spec.v_n, spec.registers());
        print!("{}", sched.to_table());
        println!(
            "FMAC {}/{} = {:.3} (bound {:.3}), verifier issues {}\n",
            est.fmac_filled,
            est.fmac_slots,
            est.fmac_efficiency,
            theoretical_upper_bound(n_a)?,
            verify_schedule(&sched, &spec, &model).len()
        );
    }
    Ok(())
}
