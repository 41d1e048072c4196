use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use maskpain::deep::BackboneProfile;
use maskpain::experiment::{
    load_inputs, plan_folds, read_crops, read_raw_scores, read_smoothed_scores, run_experiment, stage_evaluate,
    stage_plot, stage_preprocess, stage_score, stage_smooth, stage_train, write_outputs_manifest, ExperimentConfig,
    ExperimentError,
};
use maskpain::synth::{generate_synthetic_dataset, SynthError, SynthSpec};

#[derive(Parser)]
#[command(name = "maskpain", version, about = "Eye-region pain detection experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Paper,
    Smoke,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the deep backbone profile.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Check the config and the manifests it points to.
    Validate(Common),
    /// Crop every frame into the crop cache.
    Preprocess(Common),
    /// Train one model per fold from cached crops.
    Train(Common),
    /// Score each fold's held-out participant.
    Score(Common),
    /// Apply causal smoothing to raw scores.
    Smooth(Common),
    /// Write pooled metric reports.
    Evaluate(Common),
    /// Write ROC and timeline figures.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Extra experiment to overlay, as NAME=OUTPUT_DIR. Repeatable.
        #[arg(long, value_name = "NAME=DIR")]
        compare: Vec<String>,
    },
    /// All stages from a clean output directory.
    Run(Common),
    /// Generate a synthetic dataset.
    Synth {
        /// Stock spec name (strong-cue, closure-confound) or a TOML file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(p) = c.profile {
        cfg.deep.profile = match p {
            Profile::Paper => BackboneProfile::Paper,
            Profile::Smoke => BackboneProfile::Smoke,
        };
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_compare(items: &[String]) -> Result<Vec<(String, PathBuf)>, ExperimentError> {
    items
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
            _ => Err(ExperimentError::Config(format!("--compare expects NAME=DIR, got `{s}`"))),
        })
        .collect()
}

fn synth_spec(spec: &str) -> Result<SynthSpec, SynthError> {
    let path = PathBuf::from(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(&path).map_err(|source| SynthError::Io { path: path.clone(), source })?;
        toml::from_str(&text).map_err(|e| SynthError::Spec(format!("{spec}: {e}")))
    } else {
        SynthSpec::stock(spec)
    }
}

fn execute(verb: Verb) -> Result<(), ExperimentError> {
    match verb {
        Verb::Validate(c) => {
            let cfg = load_config(&c)?;
            let inputs = load_inputs(&cfg)?;
            let folds = plan_folds(&cfg, &inputs)?;
            println!(
                "ok: {} primary participants, {} external, {} folds",
                inputs.primary.participants.len(),
                inputs.external.as_ref().map_or(0, |m| m.participants.len()),
                folds.len()
            );
        }
        Verb::Preprocess(c) => {
            let cfg = load_config(&c)?;
            let inputs = load_inputs(&cfg)?;
            let crops = stage_preprocess(&cfg, &inputs)?;
            println!("cropped {} participants", crops.len());
            write_outputs_manifest(&cfg)?;
        }
        Verb::Train(c) => {
            let cfg = load_config(&c)?;
            let folds = plan_folds(&cfg, &load_inputs(&cfg)?)?;
            stage_train(&cfg, &folds, &read_crops(&cfg.output_dir)?, false)?;
            write_outputs_manifest(&cfg)?;
        }
        Verb::Score(c) => {
            let cfg = load_config(&c)?;
            let folds = plan_folds(&cfg, &load_inputs(&cfg)?)?;
            stage_score(&cfg, &folds, &read_crops(&cfg.output_dir)?)?;
            write_outputs_manifest(&cfg)?;
        }
        Verb::Smooth(c) => {
            let cfg = load_config(&c)?;
            let folds = plan_folds(&cfg, &load_inputs(&cfg)?)?;
            stage_smooth(&cfg, &read_raw_scores(&cfg, &folds)?)?;
            write_outputs_manifest(&cfg)?;
        }
        Verb::Evaluate(c) => {
            let cfg = load_config(&c)?;
            let folds = plan_folds(&cfg, &load_inputs(&cfg)?)?;
            let raw = read_raw_scores(&cfg, &folds)?;
            let smoothed = if cfg.smoothing.enabled {
                Some(read_smoothed_scores(&cfg, &folds)?)
            } else {
                None
            };
            let (r, s) = stage_evaluate(&cfg, &folds, &raw, smoothed.as_deref())?;
            print!("{}", s.unwrap_or(r).to_markdown());
            write_outputs_manifest(&cfg)?;
        }
        Verb::Plot { common, compare } => {
            let cfg = load_config(&common)?;
            let folds = plan_folds(&cfg, &load_inputs(&cfg)?)?;
            stage_plot(&cfg, &folds, &parse_compare(&compare)?)?;
            write_outputs_manifest(&cfg)?;
        }
        Verb::Run(c) => {
            let cfg = load_config(&c)?;
            let summary = run_experiment(&cfg)?;
            print!("{}", summary.smoothed.unwrap_or(summary.raw).to_markdown());
        }
        Verb::Synth { spec, out, seed } => {
            let mut spec = synth_spec(&spec)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let manifest = generate_synthetic_dataset(&spec, &out)?;
            println!("wrote {} participants to {}", manifest.participants.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
