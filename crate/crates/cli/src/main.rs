use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semvos::eval::{evaluate, EvalReport};
use semvos::pipeline::{self, PipelineConfig};
use semvos::propagation::Solver;
use semvos::synth::{generate, SynthConfig};
use semvos::video::{load_indexed_masks, load_masks};
use semvos::{Error, Exec};

/// Semantic video object segmentation.
#[derive(Parser)]
#[command(name = "semvos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Pipeline config (JSON); relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Adaptation solver, overriding the config.
    #[arg(long)]
    solver: Option<Solver>,
    /// Feed the pooled confidences straight into segmentation.
    #[arg(long)]
    skip_adaptation: bool,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl Overrides {
    fn load(&self) -> semvos::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(solver) = self.solver {
            cfg.solver = solver;
        }
        cfg.skip_adaptation |= self.skip_adaptation;
        if self.sequential {
            cfg.exec = Exec::Sequential;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write masks, overlays, confidences and the report.
    Pipeline(Overrides),
    /// Generate a synthetic case with a ready-to-run config.json.
    Synth {
        /// Directory to write the case into.
        #[arg(long)]
        out: PathBuf,
        /// Synthetic case parameters (JSON); omitted keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pool proposals into `<out>/<class>/pooled.csv`.
    Pool(Overrides),
    /// Adapt `<out>/<class>/pooled.csv` into `<out>/<class>/adapted.csv`.
    Adapt(Overrides),
    /// Segment from the adapted (or pooled) confidences into `<out>/<class>/masks`.
    Segment(Overrides),
    /// Score masks against ground truth.
    ///
    /// With `--config`, scores `<out>/<class>/masks` and writes
    /// `<out>/report.csv`. With `--pred` and `--gt`, scores one mask
    /// directory and prints the report.
    Eval {
        #[command(flatten)]
        overrides: Option<Overrides>,
        #[arg(long, requires = "gt", conflicts_with = "config")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred", conflicts_with = "config")]
        gt: Option<PathBuf>,
        #[arg(long, default_value = "object")]
        class: String,
        #[arg(long, default_value = "video")]
        video: String,
    },
}

fn print_report(report: &EvalReport) {
    print!("{}", report.to_csv());
}

fn run(command: Command) -> semvos::Result<()> {
    match command {
        Command::Pipeline(o) => {
            let cfg = o.load()?;
            let outcome = pipeline::run_pipeline(&cfg)?;
            if let Some(report) = &outcome.report {
                print_report(report);
            }
            log::info!("outputs written to {}", cfg.out.display());
        }
        Command::Synth { out, config, seed } => {
            let mut cfg = match config {
                Some(path) => SynthConfig::load(&path)?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            generate(&cfg)?.write(&out)?;
        }
        Command::Pool(o) => pipeline::run_pool(&o.load()?)?,
        Command::Adapt(o) => pipeline::run_adapt(&o.load()?)?,
        Command::Segment(o) => pipeline::run_segment(&o.load()?)?,
        Command::Eval {
            overrides,
            pred,
            gt,
            class,
            video,
        } => match (overrides, pred, gt) {
            (Some(o), _, _) => print_report(&pipeline::run_eval(&o.load()?)?),
            (None, Some(pred), Some(gt)) => {
                let pred = load_masks(&pred)?;
                let gt = load_indexed_masks(&gt)?;
                let row = evaluate(&video, &class, &pred, &gt)?;
                print_report(&EvalReport { rows: vec![row] });
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "eval needs --config or both --pred and --gt".into(),
                ))
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
