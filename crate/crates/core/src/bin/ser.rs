use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ser_core::config::{RunConfig, CONFIG_ENV};
use ser_core::corpus::{load_manifest_with_sessions, plan_loso_folds};
use ser_core::dsp::{preprocess, read_wav, write_wav};
use ser_core::pipeline::{aggregate_note, parse_window_csv};
use ser_core::quant::QUANT_MAGIC;
use ser_core::runner::{quantize_file, render_report, run_eval_loso, run_infer, run_train};
use ser_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ser", version, about = "Speech emotion recognition toolkit")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample, trim, pre-emphasize, normalize and fix the length of one file.
    Preprocess { input: PathBuf, output: PathBuf },
    /// Print the fold plan for the manifest, one JSON record per fold.
    PlanFolds,
    /// Train one head, validating on one session.
    Train {
        #[arg(long)]
        val_session: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-session-out evaluation.
    EvalLoso,
    /// Classify a voice note.
    Infer {
        audio: PathBuf,
        #[arg(long)]
        head: PathBuf,
        /// Require a quantized head file.
        #[arg(long)]
        quantized: bool,
        /// Report path stem; writes `<stem>.json` and `<stem>.windows.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average per-window probabilities from a windows file.
    Aggregate { windows: PathBuf },
    /// Quantize a float head to 8 bits.
    Quantize {
        head: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Encoder model whose size is included in the report.
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Pool fold confusion matrices and draw a heatmap.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = &cli.manifest {
        cfg.corpus.manifest = m.clone();
    }
    if let Some(d) = &cli.out_dir {
        cfg.output.dir = d.clone();
    }
    Ok(cfg)
}

fn is_quantized(path: &Path) -> Result<bool> {
    let bytes = std::fs::read(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(bytes.starts_with(QUANT_MAGIC))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Preprocess { input, output } => {
            let clip = preprocess(&read_wav(input)?)?;
            write_wav(output, &clip)?;
            println!("wrote {} ({} samples)", output.display(), clip.len());
        }
        Command::PlanFolds => {
            let manifest = load_manifest_with_sessions(&cfg.corpus.manifest, cfg.corpus.n_sessions)?;
            for mut plan in plan_loso_folds(&manifest)? {
                plan.include_train_only = cfg.corpus.include_train_only;
                println!("{}", serde_json::to_string(&plan).expect("plan serializes"));
            }
        }
        Command::Train { val_session, out } => {
            let outcome = run_train(&cfg, *val_session, out)?;
            println!(
                "best epoch {} val UA {:.4}; wrote {}",
                outcome.best_epoch,
                outcome.best_val_ua,
                out.display()
            );
        }
        Command::EvalLoso => {
            let out = run_eval_loso(&cfg)?;
            for f in &out.folds {
                println!("fold={} ua={:.4} wa={:.4}", f.plan.fold_index, f.report.ua, f.report.wa);
            }
            print!("{}", out.summary.to_json_lines());
            println!("run_dir={}", out.run_dir.display());
        }
        Command::Infer {
            audio,
            head,
            quantized,
            out,
        } => {
            if *quantized && !is_quantized(head)? {
                return Err(Error::InvalidInput(format!("{} is not a quantized head", head.display())));
            }
            let report = run_infer(audio, head, &cfg, out.as_deref())?;
            println!("{}", report.summary_line());
        }
        Command::Aggregate { windows } => {
            let text = std::fs::read_to_string(windows)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", windows.display())))?;
            let (p, label) = aggregate_note(&parse_window_csv(&text)?)?;
            let probs: Vec<String> = p.0.iter().map(|v| format!("{v:.4}")).collect();
            println!("label={label} p=({})", probs.join(","));
        }
        Command::Quantize { head, out, encoder } => {
            let r = quantize_file(head, out, encoder.as_deref())?;
            println!("{}", serde_json::to_string(&r).expect("report serializes"));
        }
        Command::Report { run_dir, out } => {
            let files = render_report(run_dir, out.as_deref().unwrap_or(run_dir))?;
            println!("wrote {} and {}", files.csv.display(), files.svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
