//! Synthetic occluded-face recordings with a controllable pain cue.
//!
//! Frames are schematic: a skin-toned face with hairline, brows, open or
//! closed eyes and a masked lower face. Pain frames carry a brow-furrow cue,
//! two short dark vertical lines between the brows, at a fixed pixel offset
//! from the inner-canthus midpoint. Because the cue and the noise model are
//! known exactly, [`bayes_optimal_score`] gives the likelihood-ratio
//! statistic against which trained models can be compared.
//!
//! Output layout under the target directory:
//!
//! ```text
//! manifest.jsonl
//! frames/<pid>/000000.png ...
//! landmarks/<pid>.csv        (68-point layout, one row per frame)
//! aus/<pid>.csv              (AU-coded specs only)
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_manifest, DatasetError, DatasetManifest, DatasetTag, LabelInterval, ParticipantRecord, Rating,
};
use crate::preprocess::{derive_seed, write_landmark_file, LandmarkSchema, LandmarkTrack, Point};
use crate::pspi::ActionUnitVector;

/// Range of per-participant intercanthal distances, in pixels.
pub const EYE_SPACING_RANGE: (f64, f64) = (14.0, 20.0);

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("frame is {got:?}, spec renders {expected:?}")]
    SpecMismatch { got: (u32, u32), expected: (u32, u32) },
    #[error("unknown stock spec `{0}` (expected strong-cue or closure-confound)")]
    UnknownStock(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How ground truth is written out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthLabeling {
    /// Sedation-style rating intervals covering the whole stream.
    NurseIntervals,
    /// Per-frame action-unit codes. No-pain frames with closed eyes get
    /// AU43 = 1 and so fall in the excluded PSPI band.
    AuCoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_participants: usize,
    pub frames_per_participant: usize,
    pub fps: u32,
    pub episode_length_frames: usize,
    pub pain_prevalence: f64,
    /// Darkening of the furrow lines, in 8-bit intensity units.
    pub cue_strength: f64,
    pub eyes_closed_prob_pain: f64,
    pub eyes_closed_prob_nopain: f64,
    /// Per-pixel, per-channel Gaussian noise standard deviation.
    pub noise_sigma: f64,
    pub seed: u64,
    pub labeling: SynthLabeling,
    pub frame_width: u32,
    pub frame_height: u32,
    /// The last this-many participants have no pain at all.
    pub zero_pain_participants: usize,
    /// Half-range of the uniform per-frame brightness offset.
    pub brightness_jitter: f64,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::strong_cue()
    }
}

impl SynthSpec {
    /// Six sedation-style participants with an easily learned cue and eye
    /// closure independent of the label.
    pub fn strong_cue() -> Self {
        Self {
            n_participants: 6,
            frames_per_participant: 2000,
            fps: 30,
            episode_length_frames: 300,
            pain_prevalence: 0.3,
            cue_strength: 40.0,
            eyes_closed_prob_pain: 0.6,
            eyes_closed_prob_nopain: 0.6,
            noise_sigma: 16.0,
            seed: 0,
            labeling: SynthLabeling::NurseIntervals,
            frame_width: 96,
            frame_height: 72,
            zero_pain_participants: 0,
            brightness_jitter: 6.0,
            id_prefix: "s".into(),
        }
    }

    /// AU-coded external set in which pain strongly predicts closed eyes
    /// and the furrow cue is faint.
    pub fn closure_confound() -> Self {
        Self {
            n_participants: 4,
            frames_per_participant: 1500,
            episode_length_frames: 60,
            pain_prevalence: 0.3,
            cue_strength: 4.0,
            eyes_closed_prob_pain: 0.9,
            eyes_closed_prob_nopain: 0.1,
            labeling: SynthLabeling::AuCoded,
            id_prefix: "x".into(),
            seed: 1,
            ..Self::strong_cue()
        }
    }

    pub fn stock(name: &str) -> Result<Self, SynthError> {
        match name {
            "strong-cue" => Ok(Self::strong_cue()),
            "closure-confound" => Ok(Self::closure_confound()),
            other => Err(SynthError::UnknownStock(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        for (name, p) in [
            ("pain_prevalence", self.pain_prevalence),
            ("eyes_closed_prob_pain", self.eyes_closed_prob_pain),
            ("eyes_closed_prob_nopain", self.eyes_closed_prob_nopain),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.episode_length_frames == 0 {
            return bad("episode_length_frames must be at least 1".into());
        }
        if self.n_participants == 0 || self.frames_per_participant == 0 || self.fps == 0 {
            return bad("participants, frames and fps must be positive".into());
        }
        if self.zero_pain_participants > self.n_participants {
            return bad("zero_pain_participants exceeds n_participants".into());
        }
        for (name, v) in [
            ("cue_strength", self.cue_strength),
            ("noise_sigma", self.noise_sigma),
            ("brightness_jitter", self.brightness_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        let (cx, cy) = self.canthus_midpoint();
        let d = EYE_SPACING_RANGE.1;
        if (cx as f64) < 2.0 * d + 2.0 || (cy as f64) < 2.0 * d + 2.0 || ((self.frame_height - cy) as f64) < d + 2.0 {
            return bad(format!(
                "frame {}x{} too small for the face layout (need about 96x72)",
                self.frame_width, self.frame_height
            ));
        }
        if self.id_prefix.is_empty() || !self.id_prefix.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return bad("id_prefix must be non-empty ASCII alphanumeric".into());
        }
        Ok(())
    }

    /// Fixed midpoint of the inner canthi, in whole pixels.
    pub fn canthus_midpoint(&self) -> (u32, u32) {
        (self.frame_width / 2, self.frame_height * 3 / 5)
    }

    pub fn participant_ids(&self) -> Vec<String> {
        (0..self.n_participants).map(|i| format!("{}{:02}", self.id_prefix, i + 1)).collect()
    }
}

/// Per-participant appearance and per-frame state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantPlan {
    pub id: String,
    pub eye_spacing: f64,
    pub skin: [f64; 3],
    pub pain: Vec<bool>,
    pub eyes_closed: Vec<bool>,
}

/// Episode counts per participant: the global count `round(p*N_total/L)`
/// spread as evenly as possible over the pain-eligible participants.
fn episode_counts(spec: &SynthSpec) -> Result<Vec<usize>, SynthError> {
    let eligible = spec.n_participants - spec.zero_pain_participants;
    let mut counts = vec![0usize; spec.n_participants];
    if eligible == 0 {
        return Ok(counts);
    }
    let n = spec.frames_per_participant;
    let l = spec.episode_length_frames;
    let total = (spec.pain_prevalence * (eligible * n) as f64 / l as f64).round() as usize;
    for (i, c) in counts.iter_mut().take(eligible).enumerate() {
        *c = total / eligible + usize::from(i < total % eligible);
        if *c > 0 && *c * l + (*c - 1) > n {
            return Err(SynthError::Spec(format!(
                "{c} episodes of {l} frames do not fit in {n} frames with gaps"
            )));
        }
    }
    Ok(counts)
}

/// Places `k` runs of exactly `l` frames with at least one no-pain frame
/// between consecutive runs.
fn place_episodes(n: usize, l: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut pain = vec![false; n];
    if k == 0 {
        return pain;
    }
    let spare = n - k * l - (k - 1);
    let mut gaps = vec![0usize; k + 1];
    for _ in 0..spare {
        gaps[rng.gen_range(0..=k)] += 1;
    }
    let mut t = gaps[0];
    for (e, gap) in gaps.iter().enumerate().skip(1) {
        pain[t..t + l].iter_mut().for_each(|p| *p = true);
        t += l + gap + usize::from(e < k);
    }
    pain
}

pub fn plan_participants(spec: &SynthSpec) -> Result<Vec<ParticipantPlan>, SynthError> {
    spec.validate()?;
    let counts = episode_counts(spec)?;
    Ok(spec
        .participant_ids()
        .into_iter()
        .zip(counts)
        .map(|(id, k)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"plan", &spec.seed.to_le_bytes(), id.as_bytes()]));
            let eye_spacing = rng.gen_range(EYE_SPACING_RANGE.0..=EYE_SPACING_RANGE.1);
            let skin = [rng.gen_range(160.0..200.0), rng.gen_range(125.0..165.0), rng.gen_range(100.0..140.0)];
            let pain = place_episodes(spec.frames_per_participant, spec.episode_length_frames, k, &mut rng);
            let eyes_closed = pain
                .iter()
                .map(|&p| {
                    rng.gen_bool(if p {
                        spec.eyes_closed_prob_pain
                    } else {
                        spec.eyes_closed_prob_nopain
                    })
                })
                .collect();
            ParticipantPlan {
                id,
                eye_spacing,
                skin,
                pain,
                eyes_closed,
            }
        })
        .collect())
}

/// Furrow pixels `(x, y)` and the zero-mean weights over the surrounding
/// skin patch used by the oracle.
struct FurrowGeometry {
    region: Vec<(u32, u32, f64)>,
    norm_sq: f64,
}

fn furrow_pixel(spec: &SynthSpec, x: u32, y: u32) -> bool {
    let (cx, cy) = spec.canthus_midpoint();
    let (dx, dy) = (x as i64 - cx as i64, y as i64 - cy as i64);
    (-13..=-6).contains(&dy) && matches!(dx, -4 | -3 | 3 | 4)
}

fn furrow_geometry(spec: &SynthSpec) -> FurrowGeometry {
    let (cx, cy) = spec.canthus_midpoint();
    let pixels: Vec<(u32, u32)> = (cy - 13..=cy - 6)
        .flat_map(|y| (cx - 6..=cx + 6).map(move |x| (x, y)))
        .collect();
    let on = pixels.iter().filter(|&&(x, y)| furrow_pixel(spec, x, y)).count() as f64;
    let mean = on / pixels.len() as f64;
    let region: Vec<(u32, u32, f64)> = pixels
        .into_iter()
        .map(|(x, y)| (x, y, if furrow_pixel(spec, x, y) { 1.0 } else { 0.0 } - mean))
        .collect();
    let norm_sq = region.iter().map(|r| r.2 * r.2).sum();
    FurrowGeometry { region, norm_sq }
}

/// Renders one frame. Deterministic in `(spec.seed, participant, frame)`.
pub fn render_frame(spec: &SynthSpec, plan: &ParticipantPlan, frame: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        b"frame",
        &spec.seed.to_le_bytes(),
        plan.id.as_bytes(),
        &(frame as u64).to_le_bytes(),
    ]));
    let flicker = if spec.brightness_jitter > 0.0 {
        rng.gen_range(-spec.brightness_jitter..=spec.brightness_jitter)
    } else {
        0.0
    };
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("valid sigma"));
    let (cx, cy) = spec.canthus_midpoint();
    let (cx, cy) = (cx as f64, cy as f64);
    let d = plan.eye_spacing;
    let closed = plan.eyes_closed[frame];
    let cue = if plan.pain[frame] { spec.cue_strength } else { 0.0 };
    let eye_half_w = 0.3 * d;
    let eye_half_h = 0.13 * d + 1.0;
    let iris_r = 0.11 * d + 1.0;
    let brow_y = cy - 0.6 * d;

    let base = |x: f64, y: f64| -> [f64; 3] {
        if y < cy - 1.7 * d {
            return [60.0, 45.0, 35.0];
        }
        if y > cy + 0.55 * d {
            return [170.0, 200.0, 225.0];
        }
        for side in [-1.0, 1.0] {
            let ex = cx + side * 0.8 * d;
            let inner = cx + side * 0.5 * d;
            let outer = cx + side * 1.1 * d;
            let (xa, xb) = if side < 0.0 { (outer - 1.0, inner) } else { (inner, outer + 1.0) };
            if (brow_y - 1.0..=brow_y + 1.0).contains(&y) && (xa..=xb).contains(&x) {
                return [70.0, 50.0, 40.0];
            }
            let u = (x - ex) / eye_half_w;
            let v = (y - cy) / eye_half_h;
            if u * u + v * v <= 1.0 {
                if closed {
                    if (y - cy).abs() <= 0.5 {
                        return [90.0, 60.0, 50.0];
                    }
                } else if (x - ex).hypot(y - cy) <= iris_r {
                    return [50.0, 40.0, 35.0];
                } else {
                    return [235.0, 235.0, 230.0];
                }
            }
        }
        plan.skin
    };

    let mut img = RgbImage::new(spec.frame_width, spec.frame_height);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let b = base(x as f64, y as f64);
        let dark = if cue > 0.0 && furrow_pixel(spec, x, y) { cue } else { 0.0 };
        let mut out = [0u8; 3];
        for c in 0..3 {
            let n = noise.as_ref().map_or(0.0, |nd| nd.sample(&mut rng));
            out[c] = (b[c] + flicker - dark + n).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(out);
    }
    img
}

/// 68-point landmark set with exact canthi for a participant's layout.
pub fn synthetic_landmarks(spec: &SynthSpec, plan: &ParticipantPlan) -> Vec<Point> {
    let (cx, cy) = spec.canthus_midpoint();
    let (cx, cy, d) = (cx as f64, cy as f64, plan.eye_spacing);
    let mut pts = Vec::with_capacity(68);
    for i in 0..17 {
        let a = std::f64::consts::PI * i as f64 / 16.0;
        pts.push(Point::new(cx - 1.8 * d * a.cos(), cy + 0.4 * d + 1.4 * d * a.sin()));
    }
    for i in 0..10 {
        let k = (i % 5) as f64;
        let x = if i < 5 { cx - 1.3 * d + 0.2 * d * k } else { cx + 0.5 * d + 0.2 * d * k };
        pts.push(Point::new(x, cy - 0.6 * d));
    }
    for i in 0..9 {
        pts.push(Point::new(cx + 0.1 * d * (i as f64 - 4.0), cy + 0.1 * d * i as f64));
    }
    let eye = |first: Point, last: Point, pts: &mut Vec<Point>| {
        let w = last.x - first.x;
        pts.push(first);
        pts.push(Point::new(first.x + w / 3.0, cy - 0.1 * d));
        pts.push(Point::new(first.x + 2.0 * w / 3.0, cy - 0.1 * d));
        pts.push(last);
        pts.push(Point::new(first.x + 2.0 * w / 3.0, cy + 0.1 * d));
        pts.push(Point::new(first.x + w / 3.0, cy + 0.1 * d));
    };
    // left eye outer -> inner, right eye inner -> outer
    eye(Point::new(cx - 1.1 * d, cy), Point::new(cx - 0.5 * d, cy), &mut pts);
    eye(Point::new(cx + 0.5 * d, cy), Point::new(cx + 1.1 * d, cy), &mut pts);
    for i in 0..20 {
        let a = 2.0 * std::f64::consts::PI * i as f64 / 20.0;
        pts.push(Point::new(cx + 0.5 * d * a.cos(), cy + 1.2 * d + 0.2 * d * a.sin()));
    }
    pts
}

/// Action units for a synthetic AU-coded frame. Pain frames reach PSPI 4
/// or more; no-pain frames are all zero except AU43 for closed eyes.
pub fn synthetic_aus(pain: bool, closed: bool, rng: &mut ChaCha8Rng) -> ActionUnitVector {
    let au43 = u8::from(closed);
    if pain {
        ActionUnitVector {
            au4: rng.gen_range(2..=4),
            au6: rng.gen_range(2..=3),
            au7: rng.gen_range(0..=3),
            au9: rng.gen_range(0..=2),
            au10: rng.gen_range(0..=2),
            au43,
        }
    } else {
        ActionUnitVector {
            au43,
            ..Default::default()
        }
    }
}

/// Splits a label stream into contiguous rating intervals.
fn rating_intervals(pain: &[bool], fps: u32) -> Vec<LabelInterval> {
    let ts = |i: usize| i as f64 * 1000.0 / fps as f64;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=pain.len() {
        if i == pain.len() || pain[i] != pain[start] {
            out.push(LabelInterval {
                start_ms: ts(start),
                end_ms: ts(i),
                rating: if pain[start] { Rating::Pain } else { Rating::NoPain },
            });
            start = i;
        }
    }
    out
}

/// Writes the dataset under `out_dir` and returns the loaded manifest.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    let plans = plan_participants(spec)?;
    for sub in ["frames", "landmarks"] {
        let p = out_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let mut manifest_lines = String::new();
    for plan in &plans {
        let frames_dir = out_dir.join("frames").join(&plan.id);
        std::fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        for i in 0..spec.frames_per_participant {
            let path = frames_dir.join(format!("{i:06}.png"));
            render_frame(spec, plan, i).save(&path).map_err(|e| SynthError::Encode {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }

        let points = synthetic_landmarks(spec, plan);
        let track = LandmarkTrack {
            frames: (0..spec.frames_per_participant as u32).map(|i| (i, points.clone())).collect(),
        };
        let lm_rel = PathBuf::from("landmarks").join(format!("{}.csv", plan.id));
        let lm_path = out_dir.join(&lm_rel);
        write_landmark_file(&lm_path, &track).map_err(io_err(&lm_path))?;

        let mut record = ParticipantRecord {
            id: plan.id.clone(),
            fps: spec.fps,
            dataset: DatasetTag::Sedation,
            frames_dir: PathBuf::from("frames").join(&plan.id),
            landmarks: lm_rel,
            landmark_schema: LandmarkSchema::Sparse68,
            label_intervals: Vec::new(),
            exclusions: Vec::new(),
            au_file: None,
        };
        match spec.labeling {
            SynthLabeling::NurseIntervals => record.label_intervals = rating_intervals(&plan.pain, spec.fps),
            SynthLabeling::AuCoded => {
                let au_dir = out_dir.join("aus");
                std::fs::create_dir_all(&au_dir).map_err(io_err(&au_dir))?;
                let au_rel = PathBuf::from("aus").join(format!("{}.csv", plan.id));
                let au_path = out_dir.join(&au_rel);
                write_au_file(&au_path, spec, plan)?;
                record.dataset = DatasetTag::ExternalAuCoded;
                record.au_file = Some(au_rel);
            }
        }
        manifest_lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        manifest_lines.push('\n');
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest_lines).map_err(io_err(&manifest_path))?;
    Ok(load_manifest(&manifest_path)?)
}

fn write_au_file(path: &Path, spec: &SynthSpec, plan: &ParticipantPlan) -> Result<(), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"aus", &spec.seed.to_le_bytes(), plan.id.as_bytes()]));
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    let mut text = String::from("frame_index,au4,au6,au7,au9,au10,au43\n");
    for (i, (&pain, &closed)) in plan.pain.iter().zip(&plan.eyes_closed).enumerate() {
        let a = synthetic_aus(pain, closed, &mut rng);
        text.push_str(&format!("{i},{},{},{},{},{},{}\n", a.au4, a.au6, a.au7, a.au9, a.au10, a.au43));
    }
    out.write_all(text.as_bytes()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Log-likelihood ratio of "furrow present" against "absent" for a full
/// frame rendered under `spec`. The unknown skin tone and brightness offset
/// are removed by projecting onto a zero-mean template over the skin patch
/// around the furrow, so only the cue amplitude and noise level enter.
pub fn bayes_optimal_score(frame: &RgbImage, spec: &SynthSpec) -> Result<f64, SynthError> {
    let expected = (spec.frame_width, spec.frame_height);
    if frame.dimensions() != expected {
        return Err(SynthError::SpecMismatch {
            got: frame.dimensions(),
            expected,
        });
    }
    let geom = furrow_geometry(spec);
    let a = spec.cue_strength;
    let var = if spec.noise_sigma > 0.0 { spec.noise_sigma * spec.noise_sigma } else { 1.0 };
    let mut llr = 0.0;
    for c in 0..3 {
        let proj: f64 = geom
            .region
            .iter()
            .map(|&(x, y, w)| frame.get_pixel(x, y)[c] as f64 * w)
            .sum();
        llr += -a * proj / var - a * a * geom.norm_sq / (2.0 * var);
    }
    Ok(llr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::resolve_frame_labels;
    use crate::eval::compute_roc_auc;
    use crate::preprocess::{adapt_landmarks, read_landmark_file};
    use crate::pspi::BinarizationPolicy;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_participants: 2,
            frames_per_participant: 300,
            episode_length_frames: 30,
            seed,
            ..SynthSpec::strong_cue()
        }
    }

    fn oracle_auc(spec: &SynthSpec) -> f64 {
        let plans = plan_participants(spec).unwrap();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for plan in &plans {
            for i in 0..spec.frames_per_participant {
                scores.push(bayes_optimal_score(&render_frame(spec, plan, i), spec).unwrap());
                labels.push(plan.pain[i]);
            }
        }
        compute_roc_auc(&scores, &labels).unwrap()
    }

    #[test]
    fn stock_specs_validate() {
        SynthSpec::strong_cue().validate().unwrap();
        SynthSpec::closure_confound().validate().unwrap();
        assert!(matches!(SynthSpec::stock("nope"), Err(SynthError::UnknownStock(_))));
        let bad = SynthSpec {
            pain_prevalence: 1.5,
            ..small(0)
        };
        assert!(matches!(bad.validate(), Err(SynthError::Spec(_))));
        let bad = SynthSpec {
            episode_length_frames: 0,
            ..small(0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn episodes_have_exact_length() {
        let spec = SynthSpec::strong_cue();
        for plan in plan_participants(&spec).unwrap() {
            let mut run = 0;
            let mut runs = Vec::new();
            for &p in plan.pain.iter().chain([false].iter()) {
                if p {
                    run += 1;
                } else if run > 0 {
                    runs.push(run);
                    run = 0;
                }
            }
            let expected = (spec.frames_per_participant as f64 * spec.pain_prevalence / spec.episode_length_frames as f64).round();
            assert_eq!(runs.len(), expected as usize);
            assert!(runs.iter().all(|&r| r == spec.episode_length_frames), "{runs:?}");
        }
    }

    #[test]
    fn prevalence_within_two_percent() {
        for p in [0.1, 0.3, 0.47] {
            let spec = SynthSpec {
                pain_prevalence: p,
                n_participants: 7,
                frames_per_participant: 1500,
                episode_length_frames: 37,
                ..SynthSpec::strong_cue()
            };
            let plans = plan_participants(&spec).unwrap();
            let total = (spec.n_participants * spec.frames_per_participant) as f64;
            let pain = plans.iter().flat_map(|p| &p.pain).filter(|&&b| b).count() as f64;
            assert!((pain / total - p).abs() <= 0.02, "{p}: {}", pain / total);
        }
    }

    #[test]
    fn zero_cue_oracle_is_chance() {
        let spec = SynthSpec {
            cue_strength: 0.0,
            n_participants: 10,
            frames_per_participant: 2000,
            ..SynthSpec::strong_cue()
        };
        let auc = oracle_auc(&spec);
        assert!((0.48..=0.52).contains(&auc), "{auc}");

        // the oracle is constant here; the matched filter itself must also
        // carry no information
        let geom = furrow_geometry(&spec);
        let plans = plan_participants(&spec).unwrap();
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for plan in &plans {
            for i in 0..spec.frames_per_participant {
                let f = render_frame(&spec, plan, i);
                s.push(-geom.region.iter().map(|&(x, y, w)| f.get_pixel(x, y)[1] as f64 * w).sum::<f64>());
                l.push(plan.pain[i]);
            }
        }
        let auc = compute_roc_auc(&s, &l).unwrap();
        assert!((0.48..=0.52).contains(&auc), "{auc}");
    }

    #[test]
    fn strong_cue_oracle_is_near_perfect() {
        let spec = SynthSpec {
            cue_strength: 40.0,
            noise_sigma: 10.0,
            ..small(3)
        };
        assert!(oracle_auc(&spec) >= 0.99);
    }

    #[test]
    fn cue_free_frames_score_below_cue_median() {
        let spec = small(4);
        let plans = plan_participants(&spec).unwrap();
        let mut pain = Vec::new();
        let mut calm = Vec::new();
        for plan in &plans {
            for i in 0..spec.frames_per_participant {
                let s = bayes_optimal_score(&render_frame(&spec, plan, i), &spec).unwrap();
                if plan.pain[i] { pain.push(s) } else { calm.push(s) }
            }
        }
        pain.sort_by(f64::total_cmp);
        calm.sort_by(f64::total_cmp);
        let median = pain[pain.len() / 2];
        assert!(calm[calm.len() / 2] < median);
    }

    #[test]
    fn noiseless_template_scores_highest() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            brightness_jitter: 0.0,
            ..small(5)
        };
        let plans = plan_participants(&spec).unwrap();
        let plan = &plans[0];
        let on = plan.pain.iter().position(|&p| p).unwrap();
        let off = plan.pain.iter().position(|&p| !p).unwrap();
        let s_on = bayes_optimal_score(&render_frame(&spec, plan, on), &spec).unwrap();
        let s_off = bayes_optimal_score(&render_frame(&spec, plan, off), &spec).unwrap();
        let geom = furrow_geometry(&spec);
        let expected = 3.0 * spec.cue_strength * spec.cue_strength * geom.norm_sq / 2.0;
        assert!((s_on - expected).abs() < 1e-9, "{s_on} vs {expected}");
        assert!((s_off + expected).abs() < 1e-9);
    }

    #[test]
    fn mismatched_frame_rejected() {
        let spec = small(0);
        let r = bayes_optimal_score(&RgbImage::new(10, 10), &spec);
        assert!(matches!(r, Err(SynthError::SpecMismatch { .. })));
    }

    #[test]
    fn landmarks_recover_canthi() {
        let spec = small(2);
        for plan in plan_participants(&spec).unwrap() {
            let lm = adapt_landmarks(&synthetic_landmarks(&spec, &plan), LandmarkSchema::Sparse68).unwrap();
            let (cx, cy) = spec.canthus_midpoint();
            let m = lm.inner_midpoint();
            assert!((m.x - cx as f64).abs() < 1e-9 && (m.y - cy as f64).abs() < 1e-9);
            assert!((lm.right_inner_canthus.x - lm.left_inner_canthus.x - plan.eye_spacing).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_dataset_round_trips_and_is_deterministic() {
        let spec = SynthSpec {
            frames_per_participant: 90,
            episode_length_frames: 20,
            zero_pain_participants: 1,
            ..small(8)
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic_dataset(&spec, a.path()).unwrap();
        generate_synthetic_dataset(&spec, b.path()).unwrap();
        let read = |d: &Path, rel: &str| std::fs::read(d.join(rel)).unwrap();
        assert_eq!(read(a.path(), "manifest.jsonl"), read(b.path(), "manifest.jsonl"));
        assert_eq!(read(a.path(), "frames/s01/000042.png"), read(b.path(), "frames/s01/000042.png"));
        assert_eq!(read(a.path(), "landmarks/s02.csv"), read(b.path(), "landmarks/s02.csv"));

        let plans = plan_participants(&spec).unwrap();
        for plan in &plans {
            let frames = resolve_frame_labels(&ma, &plan.id, BinarizationPolicy::default()).unwrap();
            assert_eq!(frames.len(), 90);
            for (f, &p) in frames.iter().zip(&plan.pain) {
                assert_eq!(f.label.as_binary(), Some(p));
            }
        }
        assert!(plans[1].pain.iter().all(|&p| !p));
        let track = read_landmark_file(&a.path().join("landmarks/s01.csv")).unwrap();
        assert_eq!(track.frames.len(), 90);
    }

    #[test]
    fn au_coded_labels_follow_pspi() {
        let spec = SynthSpec {
            frames_per_participant: 120,
            episode_length_frames: 20,
            ..SynthSpec {
                n_participants: 2,
                ..SynthSpec::closure_confound()
            }
        };
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_dataset(&spec, dir.path()).unwrap();
        let plans = plan_participants(&spec).unwrap();
        for plan in &plans {
            let frames = resolve_frame_labels(&m, &plan.id, BinarizationPolicy::default()).unwrap();
            for (i, f) in frames.iter().enumerate() {
                let want = match (plan.pain[i], plan.eyes_closed[i]) {
                    (true, _) => Some(true),
                    (false, false) => Some(false),
                    (false, true) => None,
                };
                assert_eq!(f.label.as_binary(), want, "frame {i}");
            }
        }
        assert_eq!(m.participants[0].meta.dataset_tag, DatasetTag::ExternalAuCoded);
    }
}
