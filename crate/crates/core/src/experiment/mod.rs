//! End-to-end experiments: crop, train per fold, score, smooth, evaluate
//! and plot, all driven by one TOML config.

mod config;
mod pipeline;
mod plot;

use std::path::PathBuf;

pub use config::{DeepSection, ExperimentConfig, ModelKind, Regime, SmoothingSection};
pub use pipeline::{
    clear_outputs, load_fold_model, load_inputs, plan_folds, read_crops, read_raw_scores, read_smoothed_scores,
    stage_evaluate, stage_plot, stage_preprocess, stage_score, stage_smooth, stage_train, write_outputs_manifest,
    AuditEntry, CropFrame, FoldModel, Inputs, OutputFile, OutputManifest, ParticipantCrops, Source, TrainingAudit,
};
pub use plot::{roc_svg, timeline_svg, RocInput};

use crate::baseline::BaselineError;
use crate::dataset::DatasetError;
use crate::deep::DeepError;
use crate::eval::{EvalError, MetricReport};
use crate::preprocess::PreprocessError;
use crate::smoothing::SmoothingError;
use crate::synth::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Deep(#[from] DeepError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("fold {participant}: {source}")]
    Fold {
        participant: String,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("ROC needs both classes among the labeled frames")]
    SingleClass,
    #[error("misaligned series: {0}")]
    Misaligned(String),
    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// True for problems with the inputs (bad config or data) as opposed to
    /// failures while computing.
    pub fn is_validation(&self) -> bool {
        match self {
            ExperimentError::Config(_) | ExperimentError::MissingArtifact(_) => true,
            ExperimentError::Dataset(e) => e.is_validation(),
            ExperimentError::Synth(SynthError::Spec(_) | SynthError::UnknownStock(_) | SynthError::SpecMismatch { .. }) => {
                true
            }
            ExperimentError::Preprocess(PreprocessError::InvalidSpec(_)) => true,
            ExperimentError::Deep(DeepError::InvalidSpec(_) | DeepError::DegenerateLabels) => true,
            ExperimentError::Baseline(BaselineError::DegenerateLabels) => true,
            ExperimentError::Eval(EvalError::TooFewParticipants(_)) => true,
            ExperimentError::Fold { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

/// Reports produced by a full run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub raw: MetricReport,
    pub smoothed: Option<MetricReport>,
    pub outputs: OutputManifest,
}

/// Runs every stage in order, starting from a clean output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let folds = plan_folds(cfg, &inputs)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| ExperimentError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    clear_outputs(cfg)?;
    log::info!("{}: {} folds, regime {:?}, model {:?}", cfg.experiment_id, folds.len(), cfg.regime, cfg.model);
    let crops = stage_preprocess(cfg, &inputs)?;
    let raw = stage_train(cfg, &folds, &crops, true)?;
    let smoothed = if cfg.smoothing.enabled {
        Some(stage_smooth(cfg, &raw)?)
    } else {
        None
    };
    let (raw_report, smoothed_report) = stage_evaluate(cfg, &folds, &raw, smoothed.as_deref())?;
    stage_plot(cfg, &folds, &[])?;
    let outputs = write_outputs_manifest(cfg)?;
    Ok(RunSummary {
        raw: raw_report,
        smoothed: smoothed_report,
        outputs,
    })
}
