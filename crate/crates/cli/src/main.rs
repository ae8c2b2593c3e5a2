use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cavity_qrm::experiments::{
    compare_bases, convergence_sweep, prepare, run_cutoff_figure, run_example, ExperimentConfig,
    SourceId,
};
use cavity_qrm::forward::{add_noise, ProblemKind};
use cavity_qrm::solver::{Preconditioner, SolveMethod};
use clap::{Args, Parser, Subcommand};

/// Source reconstruction in a reflecting cavity from lateral Cauchy data.
#[derive(Parser)]
#[command(name = "cavity-qrm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem and write noisy Cauchy data.
    Forward(Common),
    /// Full pipeline: data, reconstruction, metrics.
    Reconstruct(Common),
    /// Noise-level sweep of the reconstruction error.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Noise levels, ascending.
        #[arg(long, value_delimiter = ',', default_value = "0,0.025,0.05,0.1,0.2")]
        deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Largest acceptable max/min ratio of error/δ.
        #[arg(long, default_value_t = 5.0)]
        spread_bound: f64,
    },
    /// Truncation error of the Example 2 field for N = 15, 20, 35.
    Cutoff(Common),
    /// One 1D test inverted with both time bases.
    Compare1d {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), default_value_t = 2)]
        test: u8,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Source: example1..example4, test1..test3, or a field CSV path.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 1: Dirichlet data, 2: Neumann data.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    problem: Option<u8>,
    /// Generate data on a 2x refined grid (avoids the inverse crime).
    #[arg(long)]
    refine_data: bool,
    /// Normal-equation solver: cg or direct (banded Cholesky).
    #[arg(long, value_parser = parse_method)]
    solver: Option<SolveMethod>,
    /// CG preconditioner: jacobi or block (all modes at a node).
    #[arg(long, value_parser = ["jacobi", "block"])]
    preconditioner: Option<String>,
}

fn parse_method(s: &str) -> Result<SolveMethod> {
    match s {
        "cg" => Ok(SolveMethod::Cg),
        "direct" => Ok(SolveMethod::Direct),
        _ => bail!("unknown solver {s:?} (expected cg or direct)"),
    }
}

impl Common {
    fn config(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => base,
        };
        if let Some(s) = &self.source {
            c.source = SourceId::parse(s)?;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.nx {
            c.nx = v;
        }
        if let Some(v) = self.modes {
            c.n_modes = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(p) = self.problem {
            c.problem = ProblemKind::from_number(p)?;
        }
        if let Some(m) = self.solver {
            c.solver.method = m;
        }
        match self.preconditioner.as_deref() {
            Some("jacobi") => c.solver.preconditioner = Preconditioner::Jacobi,
            Some(_) => c.solver.preconditioner = Preconditioner::BlockJacobi,
            None => {}
        }
        if self.refine_data {
            c.refine_data = true;
        }
        if let Some(out) = &self.out {
            c.output_dir = Some(out.clone());
        }
        Ok(c.resolved()?)
    }
}

fn output_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    match &config.output_dir {
        Some(d) => Ok(d.clone()),
        None => bail!("no output directory: pass --out or set output_dir in the config"),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let w = BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forward(common) => {
            let config = common.config(ExperimentConfig::default())?;
            let dir = output_dir(&config)?;
            let prepared = prepare(&config)?;
            let noisy = add_noise(&prepared.clean, config.delta, config.seed)?;
            fs::create_dir_all(dir.join("fields"))?;
            noisy.write_json(BufWriter::new(fs::File::create(dir.join("cauchy.json"))?))?;
            noisy.write_csv(
                BufWriter::new(fs::File::create(dir.join("cauchy.csv"))?),
                &prepared.grid,
            )?;
            prepared.grid.write_field_csv(
                BufWriter::new(fs::File::create(dir.join("fields").join("p_true.csv"))?),
                &prepared.p_true,
            )?;
            write_json(&dir.join("resolved_config.json"), &prepared.config)?;
        }
        Command::Reconstruct(common) => {
            let config = common.config(ExperimentConfig::default())?;
            let dir = output_dir(&config)?;
            let out = run_example(&config)?;
            out.write_bundle(&dir)?;
            println!("{}", serde_json::to_string_pretty(&out.metrics)?);
        }
        Command::Sweep {
            common,
            deltas,
            seeds,
            spread_bound,
        } => {
            let config = common.config(ExperimentConfig::default())?;
            let dir = output_dir(&config)?;
            let table = convergence_sweep(&config, &deltas, &seeds, spread_bound)?;
            fs::create_dir_all(&dir)?;
            table.write_json(&dir.join("sweep.json"))?;
            write_json(&dir.join("resolved_config.json"), &config)?;
            println!(
                "ratio spread {:.3} (bound {spread_bound}), nondecreasing {}/{}, trend holds: {}",
                table.ratio_spread, table.nondecreasing_steps, table.total_steps, table.trend_holds
            );
        }
        Command::Cutoff(common) => {
            let base = ExperimentConfig {
                source: SourceId::Example2,
                ..ExperimentConfig::default()
            };
            let config = common.config(base)?;
            let dir = output_dir(&config)?;
            let fig = run_cutoff_figure(&config)?;
            fig.write_bundle(&dir)?;
            for e in &fig.entries {
                println!("N={:>2}  sup error {:.4e}", e.n_modes, e.sup_error);
            }
        }
        Command::Compare1d { common, test } => {
            let source = match test {
                1 => SourceId::Test1,
                2 => SourceId::Test2,
                _ => SourceId::Test3,
            };
            let config = common.config(ExperimentConfig::one_dimensional(source))?;
            let dir = output_dir(&config)?;
            let cmp = compare_bases(&config)?;
            cmp.write_bundle(&dir)?;
            println!(
                "klibanov rel L2 {:.4}, trigonometric rel L2 {:.4}",
                cmp.klibanov.metrics.rel_l2, cmp.trigonometric.metrics.rel_l2
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
