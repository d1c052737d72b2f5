use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use poissonpath::pipeline::{self, exit_code, AnalyzeOptions, JobConfig, Segmentation, Stage};
use poissonpath::solver::SolveVariant;
use poissonpath::{Error, Result};

/// Finishing tool paths as iso-curves of a Poisson-fitted scalar field.
#[derive(Parser)]
#[command(name = "poissonpath", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: field, segment, solve, extract, analyze.
    Run(JobArgs),
    /// Run a single stage from the artifacts already in the output directory.
    Stage {
        /// field, segment, solve, extract or analyze
        #[arg(value_parser = parse_stage)]
        stage: Stage,
        #[command(flatten)]
        job: JobArgs,
    },
    /// Parse and check a config without computing anything.
    ValidateConfig {
        config: PathBuf,
    },
}

#[derive(Args)]
struct JobArgs {
    /// JSON job config.
    config: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scallop height in mm.
    #[arg(long)]
    h: Option<f64>,
    /// poisson, smooth, direction_only or isoscallop_hard
    #[arg(long, value_parser = parse_variant)]
    variant: Option<SolveVariant>,
    /// auto, off or a patch count
    #[arg(long, value_parser = parse_segmentation)]
    segmentation: Option<Segmentation>,
    /// Path samples per level used for scheduling.
    #[arg(long)]
    samples: Option<usize>,
    /// Extra path set for the length table in analyze, as name=paths.json.
    #[arg(long, value_parser = parse_compare)]
    compare: Vec<(String, PathBuf)>,
}

impl JobArgs {
    fn load(&self) -> Result<(JobConfig, AnalyzeOptions)> {
        let mut cfg = JobConfig::load(&self.config)?;
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(s) = self.segmentation {
            cfg.segmentation = s;
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        Ok((
            cfg,
            AnalyzeOptions {
                compare: self.compare.clone(),
            },
        ))
    }
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<SolveVariant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown variant {s:?}; expected poisson, smooth, direction_only or isoscallop_hard")
    })
}

fn parse_segmentation(s: &str) -> std::result::Result<Segmentation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_compare(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got {s:?}"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(job) => {
            let (cfg, opts) = job.load()?;
            pipeline::run(&cfg, &opts)?;
            println!("wrote {}", cfg.output.display());
        }
        Command::Stage { stage, job } => {
            let (cfg, opts) = job.load()?;
            for name in pipeline::run_stage(&cfg, stage, &opts)? {
                println!("{}", cfg.output.join(name).display());
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = JobConfig::load(&config)?;
            cfg.validate()?;
            println!("{}: ok (sha256 {})", config.display(), cfg.hash()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
