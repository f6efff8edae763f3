use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use heatlab_cli::plots::emit_plots;
use heatlab_cli::{Experiment, ExperimentConfig, Summary};

#[derive(Parser)]
#[command(name = "heatlab", about = "Heat-kernel inverse problem experiments", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Build the space and write its serialization.
    Build(RunArgs),
    /// Sample the heat kernel on the window.
    Observe(RunArgs),
    /// Recover spectral data on the window from the observation table.
    Extract(RunArgs),
    /// Volumes of domains of influence from the window spectrum.
    Control(RunArgs),
    /// Rebuild distances, dimension and density by boundary control.
    Reconstruct(RunArgs),
    /// Perturbation ladder against the simulated space (needs --validate).
    Stability(RunArgs),
    /// Every stage in order, then the summary table.
    RunAll(RunArgs),
    /// Columnar plot files from an artifact directory.
    EmitPlots {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; runs/<name> when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Enables the ground-truth comparison stages.
    #[arg(long)]
    validate: bool,
}

impl RunArgs {
    fn experiment(&self) -> Result<Experiment> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            config.seed = s;
        }
        config.validation |= self.validate;
        let out = self.out.clone().unwrap_or_else(|| Path::new("runs").join(&config.name));
        let base = self.config.parent().map(Path::to_path_buf).unwrap_or_default();
        Experiment::new(config, &base, &out)
    }
}

fn single(args: &RunArgs, stage: fn(&mut Experiment) -> Result<()>, name: &str) -> Result<Summary> {
    let mut exp = args.experiment()?;
    stage(&mut exp).with_context(|| format!("stage {name}"))?;
    exp.finish(false)
}

fn report(summary: &Summary) -> ExitCode {
    print!("{}", summary.to_tsv());
    if summary.passed() {
        ExitCode::SUCCESS
    } else {
        eprintln!("some checks failed");
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let summary = match &cli.verb {
        Verb::Build(a) => single(a, Experiment::build, "build")?,
        Verb::Observe(a) => single(a, Experiment::observe, "observe")?,
        Verb::Extract(a) => single(a, Experiment::extract, "extract")?,
        Verb::Control(a) => single(a, Experiment::control, "control")?,
        Verb::Reconstruct(a) => single(a, Experiment::reconstruct, "reconstruct")?,
        Verb::Stability(a) => single(a, Experiment::stability, "stability")?,
        Verb::RunAll(a) => a.experiment()?.run_all()?,
        Verb::EmitPlots { out } => {
            let r = emit_plots(out)?;
            for f in &r.written {
                println!("wrote {}", out.join(heatlab_cli::plots::PLOT_DIR).join(f).display());
            }
            for (f, missing) in &r.skipped {
                eprintln!("skipped {f}: missing {}", missing.join(", "));
            }
            return Ok(ExitCode::SUCCESS);
        }
    };
    Ok(report(&summary))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
