//! The `ftimm` command line: plan, tune, schedule, run, sweep and report.
//!
//! [`run`] takes the argument list and output streams and returns the exit
//! code, so the binary is a one-liner and tests can drive every path.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::engine::{naive_gemm, run_plan, simulate, SimReport};
use crate::error::{Error, Result};
use crate::machine::{default_ftm7032, Level, MachineModel};
use crate::matrix::{Matrix, MatrixGenerator};
use crate::microkernel::{estimate_cycles, generate_schedule, select_tiling, theoretical_upper_bound, verify_schedule};
use crate::perf::{compare, estimate_time, read_shapes_csv, roofline, sweep_csv, sweep_svg, Preset, SpeedupRow};
use crate::tuner::{capacity_check, cmr_k_strategy, cmr_m_strategy, tgemm_plan, ExecutionPlan, MatrixShape, Strategy, Tuner};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (matrix format v1)");

#[derive(Debug, Parser)]
#[command(name = "ftimm", version = VERSION, about = "Irregular-shaped GEMM planner and simulator for FT-m7032-like DSP clusters")]
pub struct Cli {
    #[command(flatten)]
    pub config: CliConfig,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CliConfig {
    /// Machine description (JSON); defaults to the stock FT-m7032 cluster.
    #[arg(long = "machine", global = true, value_name = "PATH")]
    pub machine_path: Option<PathBuf>,
    /// Seed for generated matrices.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Directory for files a command writes besides its main output.
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ShapeArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
}

impl ShapeArgs {
    fn shape(&self) -> Result<MatrixShape> {
        MatrixShape::new(self.m, self.n, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Auto,
    Tgemm,
    FtimmM,
    FtimmK,
}

impl StrategyArg {
    fn strategy(self) -> Option<Strategy> {
        match self {
            StrategyArg::Auto => None,
            StrategyArg::Tgemm => Some(Strategy::Tgemm),
            StrategyArg::FtimmM => Some(Strategy::FtimmM),
            StrategyArg::FtimmK => Some(Strategy::FtimmK),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strategy, block sizes and kernel for one shape.
    Plan {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
        strategy: StrategyArg,
    },
    /// Initial block search for the machine.
    Tune,
    /// Generated micro-kernel loop body.
    Schedule {
        /// Rows of A per kernel call (m_s)
        #[arg(long)]
        ms: usize,
        /// Columns of the B panel (n_a)
        #[arg(long)]
        na: usize,
        /// Run the structural verifier; exit 2 on any issue.
        #[arg(long)]
        verify: bool,
    },
    /// Execute a seeded problem on the simulated cluster.
    Run {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
        strategy: StrategyArg,
        /// Compare against the naive oracle; exit 2 beyond tolerance.
        #[arg(long)]
        check: bool,
        /// Write the DMA trace as CSV.
        #[arg(long, value_name = "PATH")]
        dump_trace: Option<PathBuf>,
        /// Model only, without data.
        #[arg(long, conflicts_with = "check")]
        dry_run: bool,
    },
    /// Modeled TGEMM vs ftIMM over a shape grid, as CSV.
    Sweep {
        /// fig5a, fig5b, fig5c, fig5d (fig5-suffix-4), fig5e (fig5-suffix-5), fig5f (fig5-suffix-6).
        #[arg(long, required_unless_present = "shapes", conflicts_with = "shapes")]
        preset: Option<String>,
        /// CSV of M,N,K rows.
        #[arg(long, value_name = "PATH")]
        shapes: Option<PathBuf>,
        /// Also write an SVG chart of the sweep
        #[arg(long, value_name = "PATH")]
        svg: Option<PathBuf>,
        /// Write the CSV here instead of standard output.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Modeled time breakdown, traffic and roofline for one shape.
    Report {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
        strategy: StrategyArg,
    },
}

/// Tolerance on |C - oracle| / (1 + |oracle|).
pub fn tolerance(shape: &MatrixShape) -> f32 {
    if shape.k > 1 << 16 {
        1e-4
    } else {
        1e-5
    }
}

pub fn max_relative_error(c: &Matrix, oracle: &Matrix) -> f32 {
    let mut worst = 0.0f32;
    for i in 0..c.rows() {
        for (x, y) in c.row(i).iter().zip(oracle.row(i)) {
            worst = worst.max((x - y).abs() / (1.0 + y.abs()));
        }
    }
    worst
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn load_model(cfg: &CliConfig) -> Result<MachineModel> {
    match &cfg.machine_path {
        Some(p) => MachineModel::load(p),
        None => Ok(default_ftm7032()),
    }
}

fn plan_for(tuner: &mut Tuner, shape: &MatrixShape, strategy: Option<Strategy>) -> Result<ExecutionPlan> {
    match strategy {
        None => tuner.adjust(shape),
        Some(Strategy::Tgemm) => tgemm_plan(shape, &tuner.model),
        Some(s) => tuner.plan_for(shape, s),
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = &cli.config;
    let model = load_model(cfg)?;
    match &cli.command {
        Command::Plan { shape, strategy } => {
            let shape = shape.shape()?;
            let plan = plan_for(&mut Tuner::new(&model)?, &shape, strategy.strategy())?;
            print_plan(out, cfg.format, &shape, &plan, &model)?;
        }
        Command::Tune => cmd_tune(out, cfg.format, &model)?,
        Command::Schedule { ms, na, verify } => return cmd_schedule(out, cfg.format, &model, *ms, *na, *verify),
        Command::Run { shape, strategy, check, dump_trace, dry_run } => {
            let shape = shape.shape()?;
            return cmd_run(out, cfg, &model, &shape, strategy.strategy(), *check, dump_trace.as_deref(), *dry_run);
        }
        Command::Sweep { preset, shapes, svg, output } => cmd_sweep(out, cfg, &model, preset.as_deref(), shapes.as_deref(), svg.as_deref(), output.as_deref())?,
        Command::Report { shape, strategy } => {
            let shape = shape.shape()?;
            cmd_report(out, cfg.format, &model, &shape, strategy.strategy())?;
        }
    }
    Ok(EXIT_OK)
}

fn cmr(plan: &ExecutionPlan) -> Option<(f64, f64)> {
    match plan.strategy {
        Strategy::FtimmM => Some(cmr_m_strategy(&plan.blocks, plan.num_cores)),
        Strategy::FtimmK => Some(cmr_k_strategy(&plan.blocks, plan.num_cores)),
        Strategy::Tgemm => None,
    }
}

#[derive(Serialize)]
struct PlanOut<'a> {
    shape: &'a MatrixShape,
    plan: &'a ExecutionPlan,
    cmr: Option<(f64, f64)>,
    capacity: crate::tuner::FeasibilityReport,
}

fn print_plan(out: &mut dyn Write, format: Format, shape: &MatrixShape, plan: &ExecutionPlan, model: &MachineModel) -> Result<()> {
    let b = plan.blocks;
    let k = plan.kernel;
    let report = capacity_check(plan.strategy, &b, model);
    match format {
        Format::Json => {
            let o = PlanOut { shape, plan, cmr: cmr(plan), capacity: report };
            writeln!(out, "{}", serde_json::to_string_pretty(&o)?)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["M", "N", "K", "strategy", "m_g", "k_g", "n_g", "m_a", "k_a", "n_a", "m_s", "m_u", "k_u", "num_cores"])?;
            let row = [shape.m, shape.n, shape.k].map(|x| x.to_string());
            let mut rec: Vec<String> = row.to_vec();
            rec.push(plan.strategy.to_string());
            rec.extend([b.m_g, b.k_g, b.n_g, b.m_a, b.k_a, b.n_a, b.m_s, k.m_u, k.k_u].map(|x| x.to_string()));
            rec.push(plan.num_cores.to_string());
            w.write_record(&rec)?;
            out.write_all(&w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        }
        Format::Table => {
            writeln!(out, "shape      {shape}")?;
            writeln!(out, "strategy   {}", plan.strategy)?;
            writeln!(out, "cores      {}", plan.num_cores)?;
            writeln!(out, "GSM block  m_g={} k_g={} n_g={}", b.m_g, b.k_g, b.n_g)?;
            writeln!(out, "AM block   m_a={} k_a={} n_a={}", b.m_a, b.k_a, b.n_a)?;
            writeln!(out, "kernel     m_s={} n_a={} m_u={} k_u={} v_n={}", k.m_s, k.n_a, k.m_u, k.k_u, k.v_n)?;
            if let Some((x, y)) = cmr(plan) {
                writeln!(out, "cmr        {x:.3} {y:.3}")?;
            }
            for u in &report.usage {
                writeln!(out, "{:<10} {} / {} bytes", u.level.name(), u.bytes, u.capacity)?;
            }
            writeln!(out, "feasible   {}", if report.feasible() { "yes".to_string() } else { report.violations.join("; ") })?;
        }
    }
    Ok(())
}

fn cmd_tune(out: &mut dyn Write, format: Format, model: &MachineModel) -> Result<()> {
    let t0 = Instant::now();
    let tuner = Tuner::new(model)?;
    let secs = t0.elapsed().as_secs_f64();
    let (f1, f2) = cmr_m_strategy(&tuner.init_m, model.num_cores);
    let (f3, f4) = cmr_k_strategy(&tuner.init_k, model.num_cores);
    match format {
        Format::Json => {
            let v = serde_json::json!({
                "m_strategy": { "blocks": tuner.init_m, "cmr": [f1, f2] },
                "k_strategy": { "blocks": tuner.init_k, "cmr": [f3, f4] },
                "thresholds": tuner.params,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["strategy", "m_g", "k_g", "n_g", "m_a", "k_a", "n_a", "m_s", "cmr_outer", "cmr_inner"])?;
            for (s, b, x, y) in [(Strategy::FtimmM, tuner.init_m, f1, f2), (Strategy::FtimmK, tuner.init_k, f3, f4)] {
                let mut rec = vec![s.to_string()];
                rec.extend([b.m_g, b.k_g, b.n_g, b.m_a, b.k_a, b.n_a, b.m_s].map(|v| v.to_string()));
                rec.extend([format!("{x:.3}"), format!("{y:.3}")]);
                w.write_record(&rec)?;
            }
            out.write_all(&w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        }
        Format::Table => {
            let (m, k) = (tuner.init_m, tuner.init_k);
            writeln!(out, "search time   {secs:.3} s")?;
            writeln!(out, "FTIMM_M       k_g={} n_g={} m_a={} n_a={} k_a={} m_s={}  f1={f1:.3} f2={f2:.3}", m.k_g, m.n_g, m.m_a, m.n_a, m.k_a, m.m_s)?;
            writeln!(out, "FTIMM_K       m_g={} n_g={} m_a={} n_a={} k_a={} m_s={}  f3={f3:.3} f4={f4:.3}", k.m_g, k.n_g, k.m_a, k.n_a, k.k_a, k.m_s)?;
            writeln!(out, "thresholds    M >= {} (N <= {}), K >= {}", tuner.params.m_threshold, m.n_a, tuner.params.k_threshold)?;
        }
    }
    Ok(())
}

fn cmd_schedule(out: &mut dyn Write, format: Format, model: &MachineModel, ms: usize, na: usize, verify: bool) -> Result<i32> {
    let spec = select_tiling(ms, na, model)?;
    let sched = generate_schedule(&spec, model)?;
    let est = estimate_cycles(&sched, &spec, 1, model);
    match format {
        Format::Table => {
            write!(out, "{}", sched.to_table())?;
            writeln!(out, "m_u={} k_u={} v_n={} body={} cycles", spec.m_u, spec.k_u, spec.v_n, sched.len())?;
            writeln!(
                out,
                "FMAC efficiency {}/{} = {:.4} (bound {:.4})",
                est.fmac_filled,
                est.fmac_slots,
                est.fmac_efficiency,
                theoretical_upper_bound(na)?
            )?;
        }
        Format::Csv => write!(out, "{}", sched.to_csv())?,
        Format::Json => {
            let cells: Vec<_> = sched.instructions().map(|(c, u, i)| serde_json::json!({ "cycle": c, "unit": u.to_string(), "op": i.op.name(), "text": i.to_string() })).collect();
            let v = serde_json::json!({ "spec": spec, "cycles": sched.len(), "fmac_filled": est.fmac_filled, "fmac_slots": est.fmac_slots, "cells": cells });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
    }
    if verify {
        let issues = verify_schedule(&sched, &spec, model);
        if !issues.is_empty() {
            for i in &issues {
                writeln!(out, "issue: {i}")?;
            }
            return Ok(EXIT_VERIFY);
        }
        if format == Format::Table {
            writeln!(out, "verify: ok")?;
        }
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
#[allow(clippy::too_many_arguments)]
fn cmd_run(
    out: &mut dyn Write,
    cfg: &CliConfig,
    model: &MachineModel,
    shape: &MatrixShape,
    strategy: Option<Strategy>,
    check: bool,
    dump_trace: Option<&Path>,
    dry_run: bool,
) -> Result<i32> {
    let plan = plan_for(&mut Tuner::new(model)?, shape, strategy)?;
    let (report, err) = if dry_run {
        (simulate(shape, &plan, model)?, None)
    } else {
        let (a, b, c0) = MatrixGenerator::problem(cfg.seed, shape.m, shape.n, shape.k);
        let mut c = c0.clone();
        let report = run_plan(&a, &b, &mut c, &plan, model)?;
        let err = if check {
            let mut o = c0;
            naive_gemm(&a, &b, &mut o)?;
            Some(max_relative_error(&c, &o))
        } else {
            None
        };
        if let Some(dir) = &cfg.output_dir {
            std::fs::create_dir_all(dir)?;
            a.save(&dir.join("a.ftmm"))?;
            b.save(&dir.join("b.ftmm"))?;
            c.save(&dir.join("c.ftmm"))?;
        }
        (report, err)
    };
    if let Some(p) = dump_trace {
        std::fs::write(p, report.trace_csv())?;
    }
    let t = estimate_time(&report, model);
    let tol = tolerance(shape);
    let checksum = report.result_checksum.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    match cfg.format {
        Format::Table => {
            writeln!(out, "shape        {shape}")?;
            writeln!(out, "strategy     {}", plan.strategy)?;
            writeln!(out, "seed         {}", cfg.seed)?;
            writeln!(out, "checksum     {checksum}")?;
            writeln!(out, "dma events   {}", report.dma_events.len())?;
            writeln!(out, "active cores {}", report.active_cores)?;
            writeln!(out, "modeled time {:.6e} s", t.overlapped_time_s)?;
            writeln!(out, "gflops       {:.3}", t.gflops)?;
            if let Some(e) = err {
                writeln!(out, "max relative error {e:.3e} (tolerance {tol:.0e})")?;
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["M", "N", "K", "strategy", "seed", "checksum", "modeled_time_s", "gflops_model", "max_rel_error"])?;
            w.write_record([
                shape.m.to_string(),
                shape.n.to_string(),
                shape.k.to_string(),
                plan.strategy.to_string(),
                cfg.seed.to_string(),
                checksum,
                format!("{:.6e}", t.overlapped_time_s),
                format!("{:.3}", t.gflops),
                err.map_or_else(String::new, |e| format!("{e:.3e}")),
            ])?;
            out.write_all(&w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        }
        Format::Json => {
            let v = serde_json::json!({
                "shape": shape, "plan": plan, "seed": cfg.seed,
                "checksum": report.result_checksum, "time": t, "max_rel_error": err, "tolerance": tol,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
    }
    Ok(match err {
        Some(e) if e > tol => EXIT_VERIFY,
        _ => EXIT_OK,
    })
}

fn cmd_sweep(
    out: &mut dyn Write,
    cfg: &CliConfig,
    model: &MachineModel,
    preset: Option<&str>,
    shapes: Option<&Path>,
    svg: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let (title, list) = match (preset, shapes) {
        (Some(p), _) => {
            let p = Preset::parse(p)?;
            (p.name().to_string(), p.shapes())
        }
        (None, Some(path)) => (path.display().to_string(), read_shapes_csv(&std::fs::read_to_string(path)?)?),
        (None, None) => return Err(Error::InvalidArgument("give --preset or --shapes".into())),
    };
    let mut tuner = Tuner::new(model)?;
    let rows = list.iter().map(|s| crate::perf::speedup_row(s, &mut tuner)).collect::<Result<Vec<SpeedupRow>>>()?;
    let text = sweep_csv(&rows)?;
    match output {
        Some(p) => std::fs::write(p, &text)?,
        None => out.write_all(text.as_bytes())?,
    }
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.csv", sanitize(&title))), &text)?;
    }
    if let Some(p) = svg {
        std::fs::write(p, sweep_svg(&title, &rows))?;
    }
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_report(out: &mut dyn Write, format: Format, model: &MachineModel, shape: &MatrixShape, strategy: Option<Strategy>) -> Result<()> {
    let plan = plan_for(&mut Tuner::new(model)?, shape, strategy)?;
    let rep: SimReport = simulate(shape, &plan, model)?;
    let t = estimate_time(&rep, model);
    let row = compare(shape, &plan, model)?;
    let ceiling = roofline(shape, model, model.num_cores);
    match format {
        Format::Json => {
            let v = serde_json::json!({
                "shape": shape, "plan": plan, "time": t, "bytes_per_level": rep.bytes_per_level,
                "reduction_bytes": rep.reduction_bytes, "active_cores": rep.active_cores,
                "tgemm_time_s": row.tgemm_time_s, "speedup": row.speedup, "roofline": ceiling, "roofline_fraction": row.roofline_fraction,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["metric", "value"])?;
            for (k, v) in report_pairs(&rep, &t, &row, ceiling) {
                w.write_record([k, v])?;
            }
            out.write_all(&w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        }
        Format::Table => {
            writeln!(out, "shape {shape}, {}", plan.strategy)?;
            for (k, v) in report_pairs(&rep, &t, &row, ceiling) {
                writeln!(out, "{k:<22} {v}")?;
            }
        }
    }
    Ok(())
}

fn report_pairs(rep: &SimReport, t: &crate::perf::TimeEstimate, row: &SpeedupRow, ceiling: f64) -> Vec<(String, String)> {
    let mut v = vec![
        ("compute_time_s".to_string(), format!("{:.6e}", t.compute_time_s)),
        ("dma_only_time_s".to_string(), format!("{:.6e}", t.dma_only_time_s)),
        ("overlapped_time_s".to_string(), format!("{:.6e}", t.overlapped_time_s)),
        ("gflops_model".to_string(), format!("{:.3}", t.gflops)),
        ("efficiency".to_string(), format!("{:.4}", t.efficiency)),
        ("active_cores".to_string(), rep.active_cores.to_string()),
    ];
    for l in Level::ALL {
        if let Some(b) = rep.bytes_per_level.get(&l) {
            v.push((format!("bytes_into_{}", l.name()), b.to_string()));
        }
    }
    v.extend([
        ("reduction_bytes".to_string(), rep.reduction_bytes.to_string()),
        ("tgemm_time_s".to_string(), format!("{:.6e}", row.tgemm_time_s)),
        ("speedup".to_string(), format!("{:.4}", row.speedup)),
        ("roofline_gflops".to_string(), format!("{ceiling:.3}")),
        ("roofline_fraction".to_string(), format!("{:.4}", row.roofline_fraction)),
    ]);
    v
}
