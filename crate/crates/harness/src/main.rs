use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use smartpubsub_harness::report::{emit, summary};
use smartpubsub_harness::sweep::{evaluate, replication_sweep, Check, SweepConfig};
use smartpubsub_harness::{run_scenario, MetricsReport, Scenario, ScenarioKind, Variant};

#[derive(Parser)]
#[command(name = "smartpubsub", about = "Simulated publish/subscribe experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One scenario, one variant, one seed.
    Run {
        #[arg(long)]
        scenario: ScenarioKind,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        f: Option<usize>,
        #[arg(long = "subs-per-node")]
        subs_per_node: Option<usize>,
        #[arg(long = "drop-probability")]
        drop_probability: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write trace.jsonl.
        #[arg(long)]
        trace: bool,
    },
    /// Cross-product of variants, f values, subscription counts and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the file's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Checks a single run must pass. Unreliable ScoutSubs is not expected to
/// survive failures or loss, and FastDelivery has no retransmission.
fn run_checks(sc: &Scenario, v: Variant, r: &MetricsReport) -> Vec<Check> {
    let lossless = sc.drop_probability == 0.0;
    let no_failures = sc.failures == 0 && sc.fail_nodes.is_empty();
    let owe_all = v.reliable() || (lossless && (no_failures || v.is_fastdelivery()));
    let mut out = vec![Check {
        name: "spurious = 0".into(),
        passed: r.spurious == 0,
        detail: format!("{} spurious", r.spurious),
    }];
    if owe_all {
        out.push(Check {
            name: "missing = 0".into(),
            passed: r.missing == 0,
            detail: format!("{} of {} missing", r.missing, r.expected),
        });
    }
    out
}

fn report_checks(checks: &[Check]) -> bool {
    for c in checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn main_inner() -> Result<bool> {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            variant,
            nodes,
            seed,
            f,
            subs_per_node,
            drop_probability,
            out,
            trace,
        } => {
            let mut sc = Scenario::preset(scenario);
            if let Some(n) = nodes {
                sc.nodes = n;
            }
            if let Some(f) = f {
                sc.f = f;
            }
            if let Some(k) = subs_per_node {
                sc.subs_per_subscriber = k;
            }
            if let Some(p) = drop_probability {
                sc.drop_probability = p;
            }
            let run = run_scenario(&sc, variant, seed, trace)?;
            let reports = [run.report];
            emit(&out, &reports)?;
            if let Some(t) = run.trace {
                let path = out.join("trace.jsonl");
                fs::write(&path, t).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", summary(&reports));
            Ok(report_checks(&run_checks(&sc, variant, &reports[0])))
        }
        Cmd::Sweep { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = SweepConfig::parse(&text).with_context(|| format!("parsing {}", config.display()))?;
            let reports = replication_sweep(
                &cfg.base,
                &cfg.variants,
                &cfg.f_values,
                &cfg.subs_per_subscriber,
                &cfg.seeds,
            )?;
            let dir = out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
            emit(&dir, &reports)?;
            print!("{}", summary(&reports));
            Ok(report_checks(&evaluate(&cfg.assert, &reports)))
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
