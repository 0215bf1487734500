use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowfact::harness::{
    build_report, eval_checkpoint, factorize_files, read_episodes, render_dataset,
    run_sweep, speed, train_run, write_report, DatasetOptions, EvalCondition, ExperimentConfig, HarnessError,
    SweepKind, OUTPUT_ENV, THREADS_ENV,
};

#[derive(Parser)]
#[command(name = "flowfact", version, about = "Flow factorization and mid-level representation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags overriding fields of the experiment config.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    environment: Option<String>,
    #[arg(long)]
    representation: Option<String>,
    #[arg(long)]
    train_speed: Option<String>,
    #[arg(long, value_delimiter = ',')]
    eval_speeds: Option<Vec<String>>,
    #[arg(long)]
    train_fps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    eval_fps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    total_steps: Option<u64>,
    /// Output root; the FLOWFACT_OUT variable takes precedence over the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let e = &mut cfg.experiment;
        if let Ok(out) = std::env::var(OUTPUT_ENV) {
            e.output_dir = out.into();
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    e.$field = v.clone();
                }
            )*};
        }
        set!(environment, representation, train_speed, eval_speeds, train_fps, eval_fps, seeds, eval_episodes, output_dir);
        if let Some(n) = self.total_steps {
            cfg.sac.total_steps = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a raw flow file into ego and object flow.
    Factorize {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Outputs are written as <prefix>_ego.flo, <prefix>_obj.flo and PNG images.
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        far_plane: f64,
        /// Flow magnitude (px) shown at full saturation.
        #[arg(long, default_value_t = 20.0)]
        flow_scale: f64,
    },
    /// Export simulator frame pairs as flow, depth, segmentation and pose files.
    RenderDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        speed: Option<String>,
        /// Keep pedestrians still so that only the camera moves.
        #[arg(long)]
        freeze: bool,
        /// Always take this action (0 no-op, 1 left, 2 right) instead of random ones.
        #[arg(long)]
        action: Option<usize>,
        #[arg(long)]
        no_images: bool,
    },
    /// Train one agent per seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint greedily.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Speed modes to evaluate; the training speed when omitted.
        #[arg(long, value_delimiter = ',')]
        speed: Option<Vec<String>>,
        /// Frame rates to evaluate; the training rate when omitted.
        #[arg(long, value_delimiter = ',')]
        fps: Option<Vec<f64>>,
    },
    /// Flow compositions evaluated across speed modes.
    SweepComposition {
        #[command(flatten)]
        common: Common,
    },
    /// Flow combined with stacked segmentation and depth, with failure breakdown.
    SweepComplementarity {
        #[command(flatten)]
        common: Common,
    },
    /// Checkpoints evaluated across frame rates.
    SweepFps {
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild report tables from episode records.
    Report {
        /// One or more episodes.jsonl files.
        #[arg(required = true)]
        episodes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn sweep(common: &Common, kind: SweepKind) -> Result<(), HarnessError> {
    let cfg = common.load()?;
    let report = run_sweep(&cfg, kind, &cfg.experiment.output_dir)?;
    print!("{}\n{}", report.success_table(), report.failure_table());
    eprintln!("wrote {}", cfg.experiment.output_dir.join(kind.name()).display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Factorize {
            flow,
            depth,
            pose,
            intrinsics,
            out_prefix,
            far_plane,
            flow_scale,
        } => {
            let out = factorize_files(&flow, &depth, &pose, &intrinsics, &out_prefix, far_plane, flow_scale)?;
            println!("{}\n{}", out.ego.display(), out.obj.display());
        }
        Command::RenderDataset {
            common,
            frames,
            out,
            seed,
            fps,
            speed: sp,
            freeze,
            action,
            no_images,
        } => {
            let cfg = common.load()?;
            let mut opts = DatasetOptions::from_config(&cfg, frames)?;
            opts.seed = seed.unwrap_or(opts.seed);
            opts.fps = fps.unwrap_or(opts.fps);
            if let Some(s) = sp {
                opts.speed = speed(&s)?;
            }
            opts.freeze = freeze;
            opts.action = action;
            opts.images = !no_images;
            let written = render_dataset(&cfg, &opts, &out)?;
            println!("{} frame pairs in {}", written.len(), out.display());
        }
        Command::Train { common } => {
            let cfg = common.load()?;
            let repr = cfg.representation()?;
            for &seed in &cfg.experiment.seeds {
                let dir = run_dir(&cfg.experiment.output_dir, &repr.to_string(), seed);
                let run = train_run(&cfg, &repr, seed, &dir)?;
                println!(
                    "{}\tseed {seed}\tepisodes {}\tsuccess {:.3}{}",
                    dir.display(),
                    run.log.len(),
                    run.final_eval.success_rate,
                    if run.reused { "\t(reused)" } else { "" }
                );
            }
        }
        Command::Eval {
            common,
            checkpoint,
            speed: speeds,
            fps,
        } => {
            let cfg = common.load()?;
            let speeds = speeds.unwrap_or_else(|| vec![cfg.experiment.train_speed.clone()]);
            let rates = fps.unwrap_or_else(|| vec![cfg.experiment.train_fps]);
            let conditions: Vec<EvalCondition> = speeds
                .iter()
                .flat_map(|s| rates.iter().map(move |&f| EvalCondition { speed: s.clone(), fps: f }))
                .collect();
            for (cond, rep) in eval_checkpoint(&cfg, &checkpoint, &conditions)? {
                let line = serde_json::json!({
                    "speed": cond.speed,
                    "fps": cond.fps,
                    "success_rate": rep.success_rate,
                    "breakdown": rep.breakdown,
                });
                println!("{line}");
            }
        }
        Command::SweepComposition { common } => sweep(&common, SweepKind::Composition)?,
        Command::SweepComplementarity { common } => sweep(&common, SweepKind::Complementarity)?,
        Command::SweepFps { common } => sweep(&common, SweepKind::Fps)?,
        Command::Report { episodes, out } => {
            let mut records = Vec::new();
            for p in &episodes {
                records.extend(read_episodes(p)?);
            }
            let report = build_report(&records);
            write_report(&report, &out)?;
            print!("{}\n{}", report.success_table(), report.failure_table());
        }
    }
    Ok(())
}

fn run_dir(root: &Path, repr: &str, seed: u64) -> PathBuf {
    root.join("train").join(repr.replace('+', "_")).join(format!("seed_{seed}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var(THREADS_ENV) {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool is built once");
            }
            _ => {
                eprintln!("error: config error: {THREADS_ENV} must be a positive integer, got `{n}`");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
