use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mscr::cli::{
    cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, parse_mask_ratios, resolve_config, GRADCHECK_EPS,
    GRADCHECK_TOLERANCE,
};
use mscr::config::Preset;
use mscr::model::ModelConfig;
use mscr::scoring::Level;
use mscr::training::TrainConfig;

#[derive(Parser)]
#[command(name = "mscr", version, about = "Masked multi-scale restoration anomaly detection for ECG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "paper")]
    preset: Preset,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test ECG dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on `DATA/train` (or `DATA` itself).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One ratio, or a comma list to train one model per ratio.
        #[arg(long)]
        mask_ratio: Option<String>,
    },
    /// Score `DATA/test` (or `DATA`) and report AUC.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to every level the labels support.
        #[arg(long)]
        level: Option<Level>,
        /// Scoring keys applied on top of the checkpoint's config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check analytic gradients of the training loss on the tiny model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

fn init_threads() -> mscr::Result<()> {
    if let Ok(v) = std::env::var("MSCR_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| mscr::Error::Contract(format!("MSCR_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| mscr::Error::Contract(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> mscr::Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = resolve_config(common.preset, common.config.as_deref(), common.seed)?;
            let s = cmd_synth(&cfg, common.config.as_deref(), &out)?;
            println!(
                "wrote {} train, {} normal test, {} abnormal test records to {}",
                s.train,
                s.test_normal,
                s.test_abnormal,
                out.display()
            );
        }
        Command::Train { common, data, out, mask_ratio } => {
            let cfg = resolve_config(common.preset, common.config.as_deref(), common.seed)?;
            let ratios = mask_ratio.as_deref().map(parse_mask_ratios).transpose()?.unwrap_or_default();
            let outcomes = cmd_train(&cfg, common.config.as_deref(), &data, &out, &ratios, |line| {
                println!("{line}")
            })?;
            for o in outcomes {
                println!(
                    "checkpoint {} sha256 {} ({} windows, {:.1} s)",
                    o.checkpoint.display(),
                    o.checkpoint_hash,
                    o.report.windows,
                    o.report.wall_time_s
                );
            }
        }
        Command::Eval { checkpoint, data, out, level, config, seed } => {
            let outcome = cmd_eval(&checkpoint, &data, level, &out, |cfg| {
                if let Some(p) = &config {
                    cfg.apply_file(p)?;
                }
                if let Some(s) = seed {
                    cfg.score.seed = s;
                }
                Ok(())
            })?;
            for r in &outcome.reports {
                println!("{}", r.to_text());
            }
        }
        Command::Gradcheck { config, seed, corrupt_backward } => {
            let mut cfg = mscr::config::RunConfig::default();
            cfg.model = ModelConfig::tiny();
            cfg.train = TrainConfig::default();
            if let Some(p) = &config {
                cfg.apply_file(p)?;
            }
            if let Some(s) = seed {
                cfg.set("seed", &s.to_string()).map_err(mscr::Error::Contract)?;
            }
            let o = cmd_gradcheck(&cfg.model, &cfg.train, corrupt_backward)?;
            println!("parameters={} eps={GRADCHECK_EPS:e} tolerance={GRADCHECK_TOLERANCE:e}", o.report.parameters);
            for (group, e) in &o.report.groups {
                println!("{group:<8} max_rel_error={e:.3e}");
            }
            println!(
                "{} max_rel_error={:.3e}",
                if o.passed { "PASS" } else { "FAIL" },
                o.report.max_error
            );
            return Ok(o.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
