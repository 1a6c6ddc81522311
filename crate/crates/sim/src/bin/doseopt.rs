use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use doseopt_sim::generate::{calibrate_skeleton, derive_dose_grid, tox_probability};
use doseopt_sim::output::{read_traces, write_metrics, write_traces, TRACE_DIR};
use doseopt_sim::scenario::PkTruth;
use doseopt_sim::study::metrics_from_traces;
use doseopt_sim::{design_config, load_schema, run_study, DesignVariant, Scenario, StudyOptions, Truth, INTERIM_MCMC};

#[derive(Parser)]
#[command(name = "doseopt", about = "Simulation studies for the two-stage dose-optimization design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated trials of one design in one scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Covariate coding used by the design.
        #[arg(long, default_value = "schemas/default.toml")]
        schema: PathBuf,
        #[arg(long, default_value = "optimal")]
        design: DesignVariant,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 60, value_parser = parse_nmax)]
        nmax: usize,
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write one JSON trace per replicate under `<out>/traces`.
        #[arg(long)]
        traces: bool,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Use a single short chain for the per-patient dose-ranging fits.
        #[arg(long)]
        fast_interim: bool,
    },
    /// Derive dosages from toxicity targets and print the dose grid.
    Grid {
        /// Comma-separated toxicity targets, e.g. 0.05,0.12,0.25,0.38.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<f64>,
        /// Clearance mean, log-clearance SD and AUC threshold.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [19.6, 0.308, 46.31])]
        pk: Vec<f64>,
        /// Halfwidth of the skeleton's indifference interval.
        #[arg(long, default_value_t = 0.06)]
        halfwidth: f64,
        #[arg(long, default_value_t = 0.25)]
        p_t: f64,
        /// Prior guess of the MTD level for the skeleton.
        #[arg(long, default_value_t = 3)]
        prior_mtd: usize,
    },
    /// Recompute study metrics from saved traces.
    Metrics {
        #[arg(long)]
        trace_dir: PathBuf,
        /// Write the metric tables here instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_nmax(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 24 => Ok(n),
        _ => Err(format!("`{s}` is not a sample size above the 24 escalation patients")),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            scenario,
            schema,
            design,
            reps,
            nmax,
            seed,
            out,
            traces,
            workers,
            fast_interim,
        } => {
            if reps == 0 {
                bail!("--reps must be at least 1");
            }
            let scenario = Scenario::load(&scenario)?;
            let schema = load_schema(&schema)?;
            let truth = Truth::new(scenario, schema)?;
            let mut config = design_config(&truth, design, nmax);
            if fast_interim {
                config.mcmc_interim = INTERIM_MCMC;
            }
            let opts = StudyOptions {
                n_reps: reps,
                seed,
                workers,
                keep_traces: traces,
            };
            let study = run_study(&truth, design, &config, &opts)?;
            write_metrics(&out, &study.metrics)?;
            if traces {
                write_traces(&out.join(TRACE_DIR), &study.traces)?;
            }
            println!("{}", serde_json::to_string_pretty(&study.metrics.identification)?);
            eprintln!("wrote {}", out.display());
        }
        Command::Grid {
            targets,
            pk,
            halfwidth,
            p_t,
            prior_mtd,
        } => {
            let pk = PkTruth {
                clearance_mean: pk[0],
                omega: pk[1],
                tau_l: pk[2],
            };
            let dosage = derive_dose_grid(&targets, &pk)?;
            let skeleton = calibrate_skeleton(halfwidth, p_t, prior_mtd, targets.len())?;
            let check: Vec<f64> = dosage.iter().map(|d| tox_probability(*d, &pk)).collect();
            let doc = serde_json::json!({
                "dosage": dosage,
                "skeleton": skeleton,
                "toxicity": check,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Metrics { trace_dir, out } => {
            let traces = read_traces(&trace_dir).with_context(|| format!("reading {}", trace_dir.display()))?;
            if traces.is_empty() {
                bail!("no traces found in {}", trace_dir.display());
            }
            let metrics = metrics_from_traces(&traces)?;
            match out {
                Some(dir) => write_metrics(&dir, &metrics)?,
                None => println!("{}", serde_json::to_string_pretty(&metrics)?),
            }
        }
    }
    Ok(())
}
