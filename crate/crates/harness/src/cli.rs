//! The `steerlab` command line.
//!
//! Every subcommand loads the TOML config named by `--config` (defaults
//! otherwise), applies its flags on top and writes under `--out`. Failures
//! print one JSON line `{"error":{"code":..,"message":..}}` to stderr and exit
//! with status 1; usage errors print the usage text and exit with status 2.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use steerlab_core::corpus::Attribute;

use crate::config::{Config, StrategyChoice};
use crate::error::{HarnessError, Result};
use crate::experiments::Pipeline;
use crate::runner::Direction;

#[derive(Debug, Parser)]
#[command(name = "steerlab", version, about = "Steering experiments on a toy music transformer")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory, resolved under $STEERLAB_OUT_ROOT when relative.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct RunFlags {
    /// Base seed of the generations.
    #[arg(long)]
    seed: Option<u64>,
    /// Prompts per direction and configuration.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct SteerFlags {
    /// Injection layer, instead of the one chosen by the layer scan.
    #[arg(long)]
    layer: Option<usize>,
    /// one-to-all or all-to-all.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<StrategyChoice>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Corpus {
        #[arg(long)]
        n_clips: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the model on the corpus.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract difference-in-means steering vectors.
    Extract {
        #[arg(long)]
        attribute: Option<Attribute>,
        #[arg(long)]
        n_prompts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Unsteered generations on the sweep prompts.
    Generate {
        #[command(flatten)]
        run: RunFlags,
    },
    /// Steered generations on the sweep prompts.
    Steer {
        #[arg(long, default_value = "tempo")]
        attribute: Attribute,
        #[arg(long)]
        lambda: f64,
        /// A (fast, bright) or B (slow, dark).
        #[arg(long, default_value = "A", value_parser = parse_direction)]
        direction: Direction,
        #[command(flatten)]
        steer: SteerFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Scan injection layers.
    ScanLayers {
        #[arg(long)]
        attribute: Option<Attribute>,
        /// Scan a randomly initialised model instead of the trained one.
        #[arg(long)]
        untrained: bool,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Sweep the steering coefficient.
    SweepLambda {
        #[arg(long)]
        attribute: Option<Attribute>,
        #[command(flatten)]
        steer: SteerFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Sweep the number of contrastive prompts per set.
    SweepPrompts {
        #[arg(long)]
        attribute: Option<Attribute>,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        steer: SteerFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Held-out evaluation table.
    Eval {
        #[arg(long)]
        lambda: Option<f64>,
        /// Also write WAV files of the steered generations.
        #[arg(long)]
        wav: bool,
        #[command(flatten)]
        steer: SteerFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Render SVG plots from the CSV outputs.
    Report,
    /// Run every stage in order.
    All,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    match Direction::parse(s) {
        Some(Direction::Base) | None => Err(format!("expected A or B, got {s:?}")),
        Some(d) => Ok(d),
    }
}

fn parse_strategy(s: &str) -> std::result::Result<StrategyChoice, String> {
    match s {
        "one-to-all" | "one_to_all" => Ok(StrategyChoice::OneToAll),
        "all-to-all" | "all_to_all" => Ok(StrategyChoice::AllToAll),
        _ => Err(format!("expected one-to-all or all-to-all, got {s:?}")),
    }
}

fn apply_run(cfg: &mut Config, run: &RunFlags) {
    if let Some(s) = run.seed {
        cfg.experiment.base_seed = s;
    }
    if let Some(n) = run.n {
        cfg.experiment.n = n;
    }
}

fn apply_steer(cfg: &mut Config, steer: &SteerFlags) {
    if let Some(l) = steer.layer {
        cfg.experiment.layer = Some(l);
    }
    if let Some(s) = steer.strategy {
        cfg.experiment.strategy = s;
    }
}

fn only(cfg: &mut Config, attribute: Option<Attribute>) {
    if let Some(a) = attribute {
        cfg.steering.attributes = vec![a];
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Corpus { n_clips, seed } => {
            if let Some(n) = n_clips {
                cfg.corpus.n_clips = *n;
            }
            if let Some(s) = seed {
                cfg.corpus.seed = *s;
            }
        }
        Command::Train { steps, batch_size, seed } => {
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = *b;
            }
            if let Some(s) = seed {
                cfg.train.seed = *s;
            }
        }
        Command::Extract { attribute, n_prompts, seed } => {
            only(&mut cfg, *attribute);
            if let Some(n) = n_prompts {
                cfg.steering.n_prompts = *n;
            }
            if let Some(s) = seed {
                cfg.steering.seed = *s;
            }
        }
        Command::Generate { run } => apply_run(&mut cfg, run),
        Command::Steer { steer, run, .. } => {
            apply_steer(&mut cfg, steer);
            apply_run(&mut cfg, run);
        }
        Command::ScanLayers { attribute, run, .. } => {
            only(&mut cfg, *attribute);
            apply_run(&mut cfg, run);
        }
        Command::SweepLambda { attribute, steer, run } => {
            only(&mut cfg, *attribute);
            apply_steer(&mut cfg, steer);
            apply_run(&mut cfg, run);
        }
        Command::SweepPrompts {
            attribute,
            lambda,
            steer,
            run,
        } => {
            only(&mut cfg, *attribute);
            if let Some(l) = lambda {
                cfg.experiment.prompt_sweep_lambda = *l;
            }
            apply_steer(&mut cfg, steer);
            apply_run(&mut cfg, run);
        }
        Command::Eval { lambda, wav, steer, run } => {
            if let Some(l) = lambda {
                cfg.experiment.eval_lambda = *l;
            }
            cfg.experiment.render_wav |= *wav;
            apply_steer(&mut cfg, steer);
            apply_run(&mut cfg, run);
        }
        Command::Report | Command::All | Command::ShowConfig => {}
    }
    let mut p = Pipeline::new(cfg)?;
    p.verbose = !cli.quiet;
    match cli.command {
        Command::Corpus { .. } => {
            p.make_corpus()?;
        }
        Command::Train { .. } => {
            p.train()?;
        }
        Command::Extract { .. } => {
            p.extract()?;
        }
        Command::Generate { .. } => {
            p.generate()?;
        }
        Command::Steer {
            attribute,
            lambda,
            direction,
            ..
        } => {
            if !lambda.is_finite() {
                return Err(HarnessError::Config(format!("--lambda must be finite, got {lambda}")));
            }
            p.steer(attribute, lambda, direction)?;
        }
        Command::ScanLayers { untrained, .. } => {
            for &attr in &p.cfg.steering.attributes {
                if untrained {
                    p.scan_untrained(attr)?;
                } else {
                    p.scan_layers(attr)?;
                }
            }
        }
        Command::SweepLambda { .. } => {
            for &attr in &p.cfg.steering.attributes {
                p.sweep_lambda(attr)?;
            }
        }
        Command::SweepPrompts { .. } => {
            for &attr in &p.cfg.steering.attributes {
                p.sweep_prompts_counts(attr)?;
            }
        }
        Command::Eval { .. } => {
            p.eval()?;
        }
        Command::Report => {
            crate::report::write_report(&p)?;
        }
        Command::All => {
            let t = p.run_all()?;
            if p.verbose {
                for (stage, secs) in &t.stages {
                    eprintln!("steerlab: {stage}: {secs:.1}s");
                }
                eprintln!("steerlab: total {:.1}s", t.total());
            }
        }
        Command::ShowConfig => print!("{}", p.cfg.to_toml()),
    }
    Ok(())
}

/// The one-line error report.
pub fn error_line(e: &HarnessError) -> String {
    let mut err = serde_json::json!({
        "code": e.code(),
        "message": e.to_string(),
    });
    if let Some(p) = e.missing_path() {
        err["path"] = serde_json::Value::String(p.display().to_string());
    }
    serde_json::json!({ "error": err }).to_string()
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
