use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coopmec::bench::{run_experiment, verify_small, write_csv, CaseChoice, ExperimentSpec, Method, Row, SweepVar};
use coopmec::channel::Fading;
use coopmec::config::{load_experiment, Experiment};
use coopmec::Result;

#[derive(Parser)]
#[command(
    name = "coopmec",
    version,
    about = "Average-power offloading solver for cooperative MEC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print the report.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a parameter sweep and write CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of B, f_B, c_scale, sigma2.
        #[arg(long)]
        sweep: Option<String>,
        /// Comma-separated sweep values (Hz, Hz, multiplier, W/Hz).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Comma-separated seeds or a half-open range `a..b`.
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Compare the solvers with brute-force oracles on small instances.
    Verify {
        #[arg(long, default_value = "0..3")]
        seeds: String,
        #[arg(long, default_value_t = 12)]
        grid_steps: usize,
        #[arg(long, default_value_t = 40)]
        starts: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; reference values when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    case: String,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated baselines run next to the optimizer
    /// (equal_bandwidth, equal_time, all_offload, all_local, or `all`).
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    #[arg(long, value_enum, default_value_t = FadingArg::On)]
    fading: FadingArg,
    /// Write 0 in the runtime column so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FadingArg {
    On,
    Off,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = |_| coopmec::Error::Parse(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(bad)).collect()
}

fn build_spec(common: &Common) -> Result<ExperimentSpec> {
    let base = match &common.config {
        Some(p) => load_experiment(p)?,
        None => Experiment::reference(5),
    };
    let mut spec = ExperimentSpec::new(base);
    spec.case = common.case.parse::<CaseChoice>()?;
    spec.fading = match common.fading {
        FadingArg::On => Fading::On,
        FadingArg::Off => Fading::Off,
    };
    spec.record_runtime = !common.no_timing;
    for b in &common.baselines {
        if b == "all" {
            spec.methods.extend(&Method::ALL[1..]);
        } else {
            let m: Method = b.parse()?;
            if !spec.methods.contains(&m) {
                spec.methods.push(m);
            }
        }
    }
    Ok(spec)
}

fn emit_csv(rows: &[Row], out: Option<&PathBuf>, record_runtime: bool) -> Result<()> {
    match out {
        Some(p) => write_csv(BufWriter::new(File::create(p)?), rows, record_runtime),
        None => write_csv(io::stdout().lock(), rows, record_runtime),
    }
}

fn print_report(row: &Row) {
    let mut err = io::stderr().lock();
    match &row.outcome {
        Ok(rep) => {
            let s = &rep.schedule;
            let _ = writeln!(
                err,
                "{:<16} case {}  avg power {:.9e} W  t = ({:.6}, {:.6}, {:.6}, {:.6}) s  outer {}  inner {}  kkt {:.2e}",
                row.method.name(),
                row.case.number(),
                rep.avg_power_w,
                s.t1_s,
                s.t2_s,
                s.t3_s,
                s.t4_s,
                rep.dinkelbach_trace.len(),
                rep.inner_iterations(),
                rep.kkt_residual,
            );
            for (i, (r, b)) in s.r.iter().zip(&s.b).enumerate() {
                let _ = writeln!(err, "    user {:>2}: r = {:.6}  b = {:.3} Hz", i + 1, r, b);
            }
        }
        Err(e) => {
            let _ = writeln!(err, "{:<16} failed: {e}", row.method.name());
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { common, seed } => {
            let mut spec = build_spec(&common)?;
            spec.seeds = vec![seed];
            let rows = run_experiment(&spec)?;
            rows.iter().for_each(print_report);
            if common.out.is_some() {
                emit_csv(&rows, common.out.as_ref(), spec.record_runtime)?;
            }
            Ok(rows.iter().all(Row::ok))
        }
        Command::Sweep {
            common,
            sweep,
            values,
            seeds,
        } => {
            let mut spec = build_spec(&common)?;
            spec.seeds = parse_seeds(&seeds)?;
            if let Some(var) = sweep {
                spec.sweep = Some((var.parse::<SweepVar>()?, values));
            } else if !values.is_empty() {
                return Err(coopmec::Error::Parse("--values needs --sweep".into()));
            }
            let rows = run_experiment(&spec)?;
            emit_csv(&rows, common.out.as_ref(), spec.record_runtime)?;
            let failed = rows.iter().filter(|r| !r.ok()).count();
            if failed > 0 {
                eprintln!("{failed} of {} rows failed", rows.len());
            }
            Ok(failed == 0)
        }
        Command::Verify {
            seeds,
            grid_steps,
            starts,
        } => {
            let outcomes = verify_small(&parse_seeds(&seeds)?, grid_steps, starts)?;
            let mut all = true;
            for o in &outcomes {
                let pass = o.passes(0.05, 1e-6);
                all &= pass;
                println!(
                    "{} seed {:>3} case {}: solver {:.9} W  oracle {:.9} W  gap {:+.3e}",
                    if pass { "PASS" } else { "FAIL" },
                    o.seed,
                    o.case.number(),
                    o.solver,
                    o.oracle,
                    (o.solver - o.oracle) / o.oracle,
                );
            }
            Ok(all)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
