use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mespot::harness::pipeline::{
    fit_densities, read_records, run_pipeline, spot_split, train_model, write_json,
};
use mespot::harness::{evaluate, synth_generate, Config, EvalReport, Manifest, ModelFile, Profile, Split, SynthConfig};

/// Spot micro-expression-like events in face clips with a recurrent
/// convolutional autoencoder and per-block Gaussian mixtures.
#[derive(Debug, Parser)]
#[command(name = "mespot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Master seed for every random choice.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file overriding profile settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
}

impl Common {
    fn config(&self) -> mespot::Result<Config> {
        Config::load(self.profile, self.config.as_deref())
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus and its manifest into --out.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder on the manifest's training clips.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the model file.
        #[arg(long, default_value = "model.bin")]
        model: PathBuf,
    },
    /// Fit one mixture per block and store it in the model file.
    FitDensity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "model.bin")]
        model: PathBuf,
    },
    /// Score the test clips, writing per-clip CSV curves and JSON results.
    Spot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "model.bin")]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the results in --out against the manifest labels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize, train, fit, spot and evaluate in one run.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_report(report: &EvalReport, path: &Path) {
    let auc = report.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
    println!(
        "precision {:.4}  recall {:.4}  auc {auc}  mas {:.2} ± {:.2} ms ({:.2} frames)  -> {}",
        report.precision,
        report.recall,
        report.mas_ms,
        report.mas_std_ms,
        report.mas_frames,
        path.display()
    );
}

fn run(cli: Cli) -> mespot::Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = common.config()?;
            let synth = SynthConfig {
                seed: common.seed,
                ..cfg.synth
            };
            let manifest = synth_generate(&synth, &out)?;
            println!("wrote {} clips to {}", manifest.clips.len(), out.display());
        }
        Command::Train { common, manifest, model } => {
            let cfg = common.config()?;
            let manifest = Manifest::load(&manifest)?;
            let (rcae, trace) = train_model(&manifest, &cfg, common.seed)?;
            ModelFile::new(rcae).save(&model)?;
            let last = trace.epochs.last().copied().unwrap_or(f64::NAN);
            println!("final epoch loss {last:.6}  -> {}", model.display());
        }
        Command::FitDensity { common, manifest, model } => {
            let cfg = common.config()?;
            let mut file = ModelFile::load(&model)?;
            let manifest = Manifest::load(&manifest)?;
            let (mixtures, calibration) = fit_densities(&manifest, &file.rcae, &cfg, common.seed)?;
            println!("fitted {} mixtures  -> {}", mixtures.len(), model.display());
            file.mixtures = Some(mixtures);
            file.calibration = calibration;
            file.save(&model)?;
        }
        Command::Spot { common, manifest, model, out } => {
            let cfg = common.config()?;
            let file = ModelFile::load(&model)?;
            let manifest = Manifest::load(&manifest)?;
            let records = spot_split(&manifest, &file, &cfg, Split::Test, Some(&out))?;
            let flagged = records.iter().filter(|r| !r.result.no_event).count();
            println!("spotted {} clips, {flagged} with events  -> {}", records.len(), out.display());
        }
        Command::Eval { common: _, manifest, out } => {
            let manifest = Manifest::load(&manifest)?;
            let records = read_records(&manifest, Split::Test, &out)?;
            let report = evaluate(&records, &manifest)?;
            let path = out.join("report.json");
            write_json(&path, &report)?;
            print_report(&report, &path);
        }
        Command::Pipeline { common, out } => {
            let cfg = common.config()?;
            let outcome = run_pipeline(&cfg, common.seed, &out)?;
            for (stage, took) in &outcome.timings {
                eprintln!("{stage:<12} {:>8.1} s", took.as_secs_f64());
            }
            print_report(&outcome.report, &outcome.report_path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
