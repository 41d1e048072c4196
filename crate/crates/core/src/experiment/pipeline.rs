use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ModelKind, Regime};
use super::plot::{roc_svg, timeline_svg, RocInput};
use super::ExperimentError;
use crate::baseline::{fit_baseline, hog_features, BaselineConfig, BaselineKind, BaselineModel};
use crate::dataset::{load_manifest, resolve_frame_labels, DatasetManifest, DatasetTag, ParticipantEntry};
use crate::deep::{
    build_model, load_checkpoint, save_checkpoint, score_frames_deep_batched, train_two_phase, DeepModel, EpochLog,
    TrainSample,
};
use crate::eval::{make_lopo_folds, pooled_report, Fold, MetricReport};
use crate::preprocess::{crop_cache_path, derive_seed, load_rgb, preprocess_frame, read_landmark_file, save_png};
use crate::smoothing::{
    read_score_file, select_window, smooth_retained, write_score_file, ScoreEntry, ScoreSeries,
};
use crate::PainLabel;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Where a participant's data came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Primary,
    External,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Primary => "primary",
            Source::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropFrame {
    pub frame_index: u32,
    pub timestamp_ms: f64,
    pub label: PainLabel,
    pub image: RgbImage,
}

/// Normalized crops of one participant. Frames whose landmarks could not
/// be used are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantCrops {
    pub participant_id: String,
    pub source: Source,
    pub dataset: DatasetTag,
    pub fps: u32,
    pub frames: Vec<CropFrame>,
}

/// Loaded manifests for one experiment.
pub struct Inputs {
    pub primary: DatasetManifest,
    pub external: Option<DatasetManifest>,
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs, ExperimentError> {
    let primary_path = cfg
        .primary_manifest
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("primary_manifest is required".into()))?;
    let primary = load_manifest(primary_path)?;
    let external = match (&cfg.external_manifest, cfg.regime) {
        (Some(p), Regime::Combined | Regime::ExternalOnly) => Some(load_manifest(p)?),
        _ => None,
    };
    Ok(Inputs { primary, external })
}

pub fn plan_folds(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Vec<Fold>, ExperimentError> {
    let aux = [DatasetTag::ExternalAuCoded];
    Ok(match cfg.regime {
        Regime::SedationOnly => make_lopo_folds(&inputs.primary, &[], true)?,
        Regime::Combined => make_lopo_folds(&inputs.primary, &aux, true)?,
        Regime::ExternalOnly => make_lopo_folds(&inputs.primary, &aux, false)?,
    })
}

fn crop_participant(
    manifest: &DatasetManifest,
    entry: &ParticipantEntry,
    source: Source,
    cfg: &ExperimentConfig,
) -> Result<(ParticipantCrops, Vec<(u32, String)>), ExperimentError> {
    let pid = &entry.meta.participant_id;
    let records = resolve_frame_labels(manifest, pid, cfg.pspi)?;
    let track = read_landmark_file(&entry.landmarks)?;
    let mut frames = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for rec in records {
        let raw = load_rgb(&rec.image_ref)?;
        match preprocess_frame(&raw, track.get(rec.frame_index), entry.landmark_schema, &cfg.crop) {
            Ok(image) => frames.push(CropFrame {
                frame_index: rec.frame_index,
                timestamp_ms: rec.timestamp_ms,
                label: rec.label,
                image,
            }),
            Err(e) => skipped.push((rec.frame_index, e.to_string())),
        }
    }
    if !skipped.is_empty() {
        log::warn!(
            "{pid}: {} of {} frames had unusable landmarks and are excluded (first: frame {}: {})",
            skipped.len(),
            skipped.len() + frames.len(),
            skipped[0].0,
            skipped[0].1
        );
    }
    Ok((
        ParticipantCrops {
            participant_id: pid.clone(),
            source,
            dataset: entry.meta.dataset_tag,
            fps: entry.meta.fps,
            frames,
        },
        skipped,
    ))
}

fn crops_root(out: &Path, source: Source) -> PathBuf {
    out.join("crops").join(source.as_str())
}

/// Crops every participant the regime needs and writes the crop cache:
/// `crops/<source>/<pid>/<frame>.png` plus `crops/index.csv`.
pub fn stage_preprocess(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Vec<ParticipantCrops>, ExperimentError> {
    let mut all = Vec::new();
    let mut index = String::from("source,participant_id,dataset,fps,frame_index,timestamp_ms,label,status\n");
    let mut jobs: Vec<(&DatasetManifest, Source)> = vec![(&inputs.primary, Source::Primary)];
    if let Some(ext) = &inputs.external {
        jobs.push((ext, Source::External));
    }
    for (manifest, source) in jobs {
        for entry in &manifest.participants {
            if source == Source::Primary && entry.meta.dataset_tag != DatasetTag::Sedation {
                continue;
            }
            let (crops, skipped) = crop_participant(manifest, entry, source, cfg)?;
            let root = crops_root(&cfg.output_dir, source);
            let dataset = serde_json::to_value(crops.dataset).expect("tag serializes");
            let dataset = dataset.as_str().unwrap_or_default().to_string();
            for f in &crops.frames {
                save_png(&f.image, &crop_cache_path(&root, &crops.participant_id, f.frame_index))?;
                let _ = writeln!(
                    index,
                    "{},{},{dataset},{},{},{},{},ok",
                    source.as_str(),
                    crops.participant_id,
                    crops.fps,
                    f.frame_index,
                    f.timestamp_ms,
                    f.label.as_str()
                );
            }
            for (frame, reason) in skipped {
                let _ = writeln!(
                    index,
                    "{},{},{dataset},{},{frame},,,\"skipped: {}\"",
                    source.as_str(),
                    crops.participant_id,
                    crops.fps,
                    reason.replace('"', "'")
                );
            }
            all.push(crops);
        }
    }
    write_text(&cfg.output_dir.join("crops/index.csv"), &index)?;
    Ok(all)
}

/// Reads the crop cache written by [`stage_preprocess`].
pub fn read_crops(out: &Path) -> Result<Vec<ParticipantCrops>, ExperimentError> {
    let index = out.join("crops/index.csv");
    if !index.exists() {
        return Err(ExperimentError::MissingArtifact(index));
    }
    let mut reader = csv::Reader::from_path(&index).map_err(|e| ExperimentError::Config(format!("{}: {e}", index.display())))?;
    let mut all: Vec<ParticipantCrops> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| ExperimentError::Config(format!("{}: {e}", index.display())))?;
        if &row[7] != "ok" {
            continue;
        }
        let bad = || ExperimentError::Config(format!("{}: malformed row {:?}", index.display(), row));
        let source = match &row[0] {
            "primary" => Source::Primary,
            "external" => Source::External,
            _ => return Err(bad()),
        };
        let pid = row[1].to_string();
        let dataset: DatasetTag = serde_json::from_value(serde_json::Value::String(row[2].to_string())).map_err(|_| bad())?;
        let fps: u32 = row[3].parse().map_err(|_| bad())?;
        let frame_index: u32 = row[4].parse().map_err(|_| bad())?;
        let timestamp_ms: f64 = row[5].parse().map_err(|_| bad())?;
        let label = PainLabel::parse(&row[6]).ok_or_else(bad)?;
        let image = load_rgb(&crop_cache_path(&crops_root(out, source), &pid, frame_index))?;
        let frame = CropFrame {
            frame_index,
            timestamp_ms,
            label,
            image,
        };
        match all.last_mut() {
            Some(p) if p.participant_id == pid && p.source == source => p.frames.push(frame),
            _ => all.push(ParticipantCrops {
                participant_id: pid,
                source,
                dataset,
                fps,
                frames: vec![frame],
            }),
        }
    }
    Ok(all)
}

/// A fold's trained model.
#[derive(Debug, Clone)]
pub enum FoldModel {
    Deep(Box<DeepModel>),
    Baseline(BaselineModel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEntry {
    pub participant_id: String,
    pub source: Source,
    pub dataset: DatasetTag,
    pub frames: usize,
    pub pain_frames: usize,
}

/// Record of exactly which frames trained a fold's model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingAudit {
    pub test_participant: String,
    pub regime: Regime,
    pub model: ModelKind,
    pub training: Vec<AuditEntry>,
}

struct TrainItem<'a> {
    crops: &'a ParticipantCrops,
    frame: usize,
    pain: bool,
}

fn keep_external(seed: u64, pid: &str, frame: u32, fraction: f64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    let h = derive_seed(&[b"subsample", &seed.to_le_bytes(), pid.as_bytes(), &frame.to_le_bytes()]);
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

fn training_items<'a>(
    cfg: &ExperimentConfig,
    fold: &Fold,
    crops: &'a [ParticipantCrops],
) -> (Vec<TrainItem<'a>>, TrainingAudit) {
    let mut items = Vec::new();
    let mut audit = TrainingAudit {
        test_participant: fold.test_participant.clone(),
        regime: cfg.regime,
        model: cfg.model,
        training: Vec::new(),
    };
    for pc in crops {
        let included = match pc.source {
            Source::Primary => fold.train_participants.contains(&pc.participant_id),
            Source::External => !fold.auxiliary_train_sources.is_empty(),
        };
        if !included {
            continue;
        }
        let mut entry = AuditEntry {
            participant_id: pc.participant_id.clone(),
            source: pc.source,
            dataset: pc.dataset,
            frames: 0,
            pain_frames: 0,
        };
        for (i, f) in pc.frames.iter().enumerate() {
            let Some(pain) = f.label.as_binary() else { continue };
            if pc.source == Source::External
                && !keep_external(cfg.seed, &pc.participant_id, f.frame_index, cfg.external_subsample)
            {
                continue;
            }
            entry.frames += 1;
            entry.pain_frames += usize::from(pain);
            items.push(TrainItem { crops: pc, frame: i, pain });
        }
        audit.training.push(entry);
    }
    (items, audit)
}

type HogCache = HashMap<(Source, String), Vec<Vec<f32>>>;

fn hog_cache(cfg: &ExperimentConfig, crops: &[ParticipantCrops]) -> Result<HogCache, ExperimentError> {
    let mut cache = HashMap::new();
    for pc in crops {
        let images: Vec<RgbImage> = pc.frames.iter().map(|f| f.image.clone()).collect();
        cache.insert((pc.source, pc.participant_id.clone()), hog_features(&images, &cfg.hog)?);
    }
    Ok(cache)
}

fn fold_seed(cfg: &ExperimentConfig, key: &str) -> u64 {
    derive_seed(&[b"fold", &cfg.seed.to_le_bytes(), key.as_bytes()])
}

fn train_model(
    cfg: &ExperimentConfig,
    items: &[TrainItem<'_>],
    hog: Option<&HogCache>,
    seed: u64,
) -> Result<(FoldModel, Vec<EpochLog>), ExperimentError> {
    match cfg.model {
        ModelKind::Deep => {
            let model = build_model(&cfg.deep.head(), cfg.deep.profile, cfg.deep.weights.as_deref(), cfg.seed)?;
            let samples: Vec<TrainSample<'_>> = items
                .iter()
                .map(|it| {
                    let f = &it.crops.frames[it.frame];
                    TrainSample {
                        image: &f.image,
                        pain: it.pain,
                        participant_id: &it.crops.participant_id,
                        frame_index: f.frame_index,
                    }
                })
                .collect();
            let schedule = crate::deep::TrainSchedule { seed, ..cfg.schedule };
            let augment = crate::preprocess::AugmentationSpec {
                seed: derive_seed(&[b"augment", &seed.to_le_bytes()]),
                ..cfg.augmentation
            };
            let (model, log) = train_two_phase(model, &samples, &schedule, &augment)?;
            Ok((FoldModel::Deep(Box::new(model)), log))
        }
        ModelKind::HogLinear | ModelKind::HogForest => {
            let hog = hog.expect("HOG features computed for baseline runs");
            let features: Vec<Vec<f32>> = items
                .iter()
                .map(|it| hog[&(it.crops.source, it.crops.participant_id.clone())][it.frame].clone())
                .collect();
            let labels: Vec<bool> = items.iter().map(|it| it.pain).collect();
            let kind = if cfg.model == ModelKind::HogLinear {
                BaselineKind::LinearMargin
            } else {
                BaselineKind::Forest
            };
            let bcfg = BaselineConfig {
                hog: cfg.hog,
                linear: crate::baseline::LinearParams { seed, ..cfg.linear },
                forest: crate::baseline::ForestParams { seed, ..cfg.forest },
            };
            Ok((FoldModel::Baseline(fit_baseline(&features, &labels, kind, &bcfg)?), Vec::new()))
        }
    }
}

fn model_path(fold_dir: &Path, kind: ModelKind) -> PathBuf {
    match kind {
        ModelKind::Deep => fold_dir.join("model.safetensors"),
        _ => fold_dir.join("model.json"),
    }
}

fn save_fold(
    cfg: &ExperimentConfig,
    fold: &Fold,
    model: &FoldModel,
    log: &[EpochLog],
    audit: &TrainingAudit,
) -> Result<(), ExperimentError> {
    let dir = cfg.output_dir.join("folds").join(&fold.test_participant);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    match model {
        FoldModel::Deep(m) => save_checkpoint(m, &model_path(&dir, ModelKind::Deep))?,
        FoldModel::Baseline(m) => m.save(&model_path(&dir, cfg.model))?,
    }
    let mut text = String::from("epoch,phase,lr,mean_loss,trainable_params\n");
    for e in log {
        let _ = writeln!(text, "{},{},{},{},{}", e.epoch, e.phase, e.lr, e.mean_loss, e.trainable_params);
    }
    if cfg.model == ModelKind::Deep {
        write_text(&dir.join("train_log.csv"), &text)?;
    }
    let mut json = serde_json::to_string_pretty(audit).expect("audit serializes");
    json.push('\n');
    write_text(&dir.join("audit.json"), &json)
}

pub fn load_fold_model(cfg: &ExperimentConfig, participant: &str) -> Result<FoldModel, ExperimentError> {
    let path = model_path(&cfg.output_dir.join("folds").join(participant), cfg.model);
    if !path.exists() {
        return Err(ExperimentError::MissingArtifact(path));
    }
    Ok(match cfg.model {
        ModelKind::Deep => FoldModel::Deep(Box::new(load_checkpoint(&path)?)),
        _ => FoldModel::Baseline(BaselineModel::load(&path)?),
    })
}

fn score_participant(
    cfg: &ExperimentConfig,
    model: &FoldModel,
    pc: &ParticipantCrops,
    hog: Option<&HogCache>,
) -> Result<ScoreSeries, ExperimentError> {
    let scores = match model {
        FoldModel::Deep(m) => {
            let images: Vec<RgbImage> = pc.frames.iter().map(|f| f.image.clone()).collect();
            score_frames_deep_batched(m, &images, cfg.deep.score_batch)?
        }
        FoldModel::Baseline(m) => match hog.and_then(|h| h.get(&(pc.source, pc.participant_id.clone()))) {
            Some(features) => m.score_features(features)?,
            None => {
                let images: Vec<RgbImage> = pc.frames.iter().map(|f| f.image.clone()).collect();
                m.score_features(&hog_features(&images, &m.hog)?)?
            }
        },
    };
    Ok(ScoreSeries {
        participant_id: pc.participant_id.clone(),
        fps: pc.fps,
        entries: pc
            .frames
            .iter()
            .zip(scores)
            .map(|(f, score)| ScoreEntry {
                frame_index: f.frame_index,
                timestamp_ms: f.timestamp_ms,
                score,
                label: f.label,
            })
            .collect(),
        window: None,
    })
}

fn raw_score_path(out: &Path, pid: &str) -> PathBuf {
    out.join("scores/raw").join(format!("{pid}.csv"))
}

fn smoothed_score_path(out: &Path, pid: &str) -> PathBuf {
    out.join("scores/smoothed").join(format!("{pid}.csv"))
}

fn with_fold<T>(pid: &str, r: Result<T, ExperimentError>) -> Result<T, ExperimentError> {
    r.map_err(|e| ExperimentError::Fold {
        participant: pid.to_string(),
        source: Box::new(e),
    })
}

fn test_crops<'a>(crops: &'a [ParticipantCrops], pid: &str) -> Result<&'a ParticipantCrops, ExperimentError> {
    crops
        .iter()
        .find(|c| c.source == Source::Primary && c.participant_id == pid)
        .ok_or_else(|| ExperimentError::Config(format!("no crops for test participant {pid}")))
}

/// Trains every fold, saving models, logs and audits. With `score` set, the
/// test participant is scored right away and its raw series written.
pub fn stage_train(
    cfg: &ExperimentConfig,
    folds: &[Fold],
    crops: &[ParticipantCrops],
    score: bool,
) -> Result<Vec<ScoreSeries>, ExperimentError> {
    let hog = match cfg.model {
        ModelKind::Deep => None,
        _ => Some(hog_cache(cfg, crops)?),
    };
    // in the cross-dataset regime every fold has the same training set
    let shared = if cfg.regime == Regime::ExternalOnly {
        let fold = folds.first().ok_or(ExperimentError::Config("no folds".into()))?;
        let (items, _) = training_items(cfg, fold, crops);
        Some(train_model(cfg, &items, hog.as_ref(), fold_seed(cfg, "external"))?)
    } else {
        None
    };
    let run_fold = |fold: &Fold| -> Result<Option<ScoreSeries>, ExperimentError> {
        let pid = &fold.test_participant;
        with_fold(pid, {
            let (items, audit) = training_items(cfg, fold, crops);
            let trained = match &shared {
                Some(m) => Ok(m.clone()),
                None => train_model(cfg, &items, hog.as_ref(), fold_seed(cfg, pid)),
            };
            trained.and_then(|(model, log)| {
                save_fold(cfg, fold, &model, &log, &audit)?;
                if !score {
                    return Ok(None);
                }
                let series = score_participant(cfg, &model, test_crops(crops, pid)?, hog.as_ref())?;
                write_score_file(&raw_score_path(&cfg.output_dir, pid), &series)?;
                Ok(Some(series))
            })
        })
    };
    let results: Vec<Result<Option<ScoreSeries>, ExperimentError>> = if cfg.parallel_folds {
        std::thread::scope(|s| {
            let handles: Vec<_> = folds.iter().map(|f| s.spawn(|| run_fold(f))).collect();
            handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect()
        })
    } else {
        folds.iter().map(run_fold).collect()
    };
    Ok(results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect())
}

/// Scores each fold's test participant with the saved fold model.
pub fn stage_score(cfg: &ExperimentConfig, folds: &[Fold], crops: &[ParticipantCrops]) -> Result<Vec<ScoreSeries>, ExperimentError> {
    folds
        .iter()
        .map(|fold| {
            let pid = &fold.test_participant;
            with_fold(pid, {
                load_fold_model(cfg, pid).and_then(|model| {
                    let series = score_participant(cfg, &model, test_crops(crops, pid)?, None)?;
                    write_score_file(&raw_score_path(&cfg.output_dir, pid), &series)?;
                    Ok(series)
                })
            })
        })
        .collect()
}

pub fn read_raw_scores(cfg: &ExperimentConfig, folds: &[Fold]) -> Result<Vec<ScoreSeries>, ExperimentError> {
    read_series(folds, |pid| raw_score_path(&cfg.output_dir, pid))
}

pub fn read_smoothed_scores(cfg: &ExperimentConfig, folds: &[Fold]) -> Result<Vec<ScoreSeries>, ExperimentError> {
    read_series(folds, |pid| smoothed_score_path(&cfg.output_dir, pid))
}

fn read_series(folds: &[Fold], path: impl Fn(&str) -> PathBuf) -> Result<Vec<ScoreSeries>, ExperimentError> {
    folds
        .iter()
        .map(|f| {
            let p = path(&f.test_participant);
            if !p.exists() {
                return Err(ExperimentError::MissingArtifact(p));
            }
            Ok(read_score_file(&p)?)
        })
        .collect()
}

/// Causal smoothing over the labeled frames, with the window chosen from
/// each participant's frame rate.
pub fn stage_smooth(cfg: &ExperimentConfig, raw: &[ScoreSeries]) -> Result<Vec<ScoreSeries>, ExperimentError> {
    let sc = cfg.smoothing.config();
    raw.iter()
        .map(|s| {
            let smoothed = smooth_retained(s, select_window(s.fps, &sc), sc.reset_at_gaps)?;
            write_score_file(&smoothed_score_path(&cfg.output_dir, &s.participant_id), &smoothed)?;
            Ok(smoothed)
        })
        .collect()
}

/// Writes `reports/{raw,smoothed}.{json,md}`.
pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    folds: &[Fold],
    raw: &[ScoreSeries],
    smoothed: Option<&[ScoreSeries]>,
) -> Result<(MetricReport, Option<MetricReport>), ExperimentError> {
    let dir = cfg.output_dir.join("reports");
    let write = |name: &str, r: &MetricReport| -> Result<(), ExperimentError> {
        write_text(&dir.join(format!("{name}.json")), &r.to_json())?;
        write_text(&dir.join(format!("{name}.md")), &r.to_markdown())
    };
    let raw_report = pooled_report(&cfg.experiment_id, folds, raw, false)?;
    write("raw", &raw_report)?;
    let smoothed_report = match smoothed {
        Some(s) => {
            let r = pooled_report(&cfg.experiment_id, folds, s, true)?;
            write("smoothed", &r)?;
            Some(r)
        }
        None => None,
    };
    Ok((raw_report, smoothed_report))
}

/// Figures for this experiment plus any `(name, output_dir)` comparisons:
/// `figures/roc.svg` and one `figures/timeline_<pid>.svg` per participant.
/// Uses smoothed scores where available.
pub fn stage_plot(
    cfg: &ExperimentConfig,
    folds: &[Fold],
    compare: &[(String, PathBuf)],
) -> Result<(), ExperimentError> {
    let load = |dir: &Path| -> Result<Vec<ScoreSeries>, ExperimentError> {
        let smoothed = folds.iter().all(|f| smoothed_score_path(dir, &f.test_participant).exists());
        read_series(folds, |pid| {
            if smoothed {
                smoothed_score_path(dir, pid)
            } else {
                raw_score_path(dir, pid)
            }
        })
    };
    let mut experiments = vec![(cfg.experiment_id.clone(), load(&cfg.output_dir)?)];
    for (name, dir) in compare {
        experiments.push((name.clone(), load(dir)?));
    }
    let pooled: Vec<(Vec<f64>, Vec<bool>)> = experiments
        .iter()
        .map(|(_, series)| {
            let mut s = Vec::new();
            let mut l = Vec::new();
            for x in series {
                let (a, b) = x.labeled();
                s.extend(a);
                l.extend(b);
            }
            (s, l)
        })
        .collect();
    let inputs: Vec<RocInput<'_>> = experiments
        .iter()
        .zip(&pooled)
        .map(|((name, _), (s, l))| RocInput { name, scores: s, labels: l })
        .collect();
    let fig = cfg.output_dir.join("figures");
    write_text(&fig.join("roc.svg"), &roc_svg(&inputs)?)?;
    for (i, fold) in folds.iter().enumerate() {
        let truth = &experiments[0].1[i];
        let rows: Vec<(&str, &ScoreSeries)> = experiments.iter().map(|(n, s)| (n.as_str(), &s[i])).collect();
        let svg = timeline_svg(&fold.test_participant, truth, &rows)?;
        write_text(&fig.join(format!("timeline_{}.svg", fold.test_participant)), &svg)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub experiment_id: String,
    pub files: Vec<OutputFile>,
}

/// Hashes every file under the output directory into `outputs.json`.
pub fn write_outputs_manifest(cfg: &ExperimentConfig) -> Result<OutputManifest, ExperimentError> {
    let root = &cfg.output_dir;
    let mut files = Vec::new();
    let mut stack = vec![root.clone()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel == "outputs.json" {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            files.push(OutputFile {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: format!("{:x}", Sha256::digest(&bytes)),
            });
        }
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = OutputManifest {
        experiment_id: cfg.experiment_id.clone(),
        files,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_text(&root.join("outputs.json"), &json)?;
    Ok(manifest)
}

/// Removes artifacts of an earlier run so reruns start clean.
pub fn clear_outputs(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    for sub in ["crops", "folds", "scores", "reports", "figures"] {
        let p = cfg.output_dir.join(sub);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(io_err(&p))?;
        }
    }
    let p = cfg.output_dir.join("outputs.json");
    if p.exists() {
        std::fs::remove_file(&p).map_err(io_err(&p))?;
    }
    Ok(())
}
