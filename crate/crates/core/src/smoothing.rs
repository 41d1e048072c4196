//! Causal uniform smoothing of per-frame score series.
//!
//! Each output is the mean of the current score and the `W - 1` scores
//! before it, so a prediction never depends on future frames. Near the start
//! of a stream the window shrinks to the frames seen so far.
//!
//! ```
//! use maskpain::smoothing::{select_window, smooth_scores, SmoothingConfig};
//!
//! assert_eq!(select_window(30, &SmoothingConfig::default()), 30);
//! let out = smooth_scores(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 3);
//! assert!((out[3] - 2.0 / 3.0).abs() < 1e-12);
//! ```

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::PainLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub frame_index: u32,
    pub timestamp_ms: f64,
    pub score: f64,
    pub label: PainLabel,
}

/// Time-ordered scores of one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub participant_id: String,
    pub fps: u32,
    pub entries: Vec<ScoreEntry>,
    /// `Some(W)` once smoothed with window `W`.
    pub window: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum SmoothingError {
    #[error("score series for {0} is empty")]
    EmptySeries(String),
    #[error("score series for {participant} is not strictly increasing at frame {frame_index}")]
    Unordered { participant: String, frame_index: u32 },
    #[error("non-finite score for {participant} at frame {frame_index}")]
    NonFinite { participant: String, frame_index: u32 },
    #[error("score file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScoreSeries {
    pub fn validate(&self) -> Result<(), SmoothingError> {
        for pair in self.entries.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(SmoothingError::Unordered {
                    participant: self.participant_id.clone(),
                    frame_index: pair[1].frame_index,
                });
            }
        }
        if let Some(e) = self.entries.iter().find(|e| !e.score.is_finite()) {
            return Err(SmoothingError::NonFinite {
                participant: self.participant_id.clone(),
                frame_index: e.frame_index,
            });
        }
        Ok(())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// Scores and binary labels of the non-excluded frames.
    pub fn labeled(&self) -> (Vec<f64>, Vec<bool>) {
        self.entries
            .iter()
            .filter_map(|e| e.label.as_binary().map(|l| (e.score, l)))
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    CausalUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub window_seconds: f64,
    pub mode: SmoothingMode,
    /// Restart the window after excluded runs and missing frames instead
    /// of averaging across them.
    pub reset_at_gaps: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window_seconds: 1.0,
            mode: SmoothingMode::CausalUniform,
            reset_at_gaps: false,
        }
    }
}

/// Window length in frames: `round(fps * window_seconds)`, at least 1.
pub fn select_window(fps: u32, cfg: &SmoothingConfig) -> usize {
    ((fps as f64 * cfg.window_seconds).round() as usize).max(1)
}

/// Causal moving average over a plain slice. Window sums are kept with
/// compensated (Neumaier) summation, and each output is clamped to the
/// window's own min/max so rounding can never leave the input range.
pub fn smooth_scores(scores: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(scores.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let add = |sum: &mut f64, comp: &mut f64, v: f64| {
        let t = *sum + v;
        if sum.abs() >= v.abs() {
            *comp += (*sum - t) + v;
        } else {
            *comp += (v - t) + *sum;
        }
        *sum = t;
    };
    // monotone deques of indices for the window min and max
    let mut mins: VecDeque<usize> = VecDeque::new();
    let mut maxs: VecDeque<usize> = VecDeque::new();
    for (t, &v) in scores.iter().enumerate() {
        add(&mut sum, &mut comp, v);
        if t >= window {
            add(&mut sum, &mut comp, -scores[t - window]);
        }
        let lo = (t + 1).saturating_sub(window);
        while mins.back().is_some_and(|&i| scores[i] >= v) {
            mins.pop_back();
        }
        mins.push_back(t);
        while maxs.back().is_some_and(|&i| scores[i] <= v) {
            maxs.pop_back();
        }
        maxs.push_back(t);
        while mins.front().is_some_and(|&i| i < lo) {
            mins.pop_front();
        }
        while maxs.front().is_some_and(|&i| i < lo) {
            maxs.pop_front();
        }
        let n = (t + 1 - lo) as f64;
        let mean = (sum + comp) / n;
        out.push(mean.clamp(scores[mins[0]], scores[maxs[0]]));
    }
    out
}

/// Smooths a series over its retained frames (excluded gaps are not
/// bridged with zeros). Labels and timestamps pass through unchanged.
pub fn smooth_causal_uniform(series: &ScoreSeries, window: usize) -> Result<ScoreSeries, SmoothingError> {
    if series.entries.is_empty() {
        return Err(SmoothingError::EmptySeries(series.participant_id.clone()));
    }
    series.validate()?;
    let smoothed = smooth_scores(&series.scores(), window);
    let entries = series
        .entries
        .iter()
        .zip(smoothed)
        .map(|(e, score)| ScoreEntry { score, ..*e })
        .collect();
    Ok(ScoreSeries {
        participant_id: series.participant_id.clone(),
        fps: series.fps,
        entries,
        window: Some(window.max(1)),
    })
}

/// Smooths the labeled frames only. Excluded frames keep their raw score
/// and never enter a window, so the retained frames are averaged as one
/// contiguous sequence. With `reset_at_gaps` the window restarts wherever
/// consecutive retained frames are not adjacent in frame index.
pub fn smooth_retained(series: &ScoreSeries, window: usize, reset_at_gaps: bool) -> Result<ScoreSeries, SmoothingError> {
    if series.entries.is_empty() {
        return Err(SmoothingError::EmptySeries(series.participant_id.clone()));
    }
    series.validate()?;
    let retained: Vec<usize> = (0..series.entries.len())
        .filter(|&i| series.entries[i].label != PainLabel::Excluded)
        .collect();
    let mut entries = series.entries.clone();
    let mut start = 0;
    for k in 1..=retained.len() {
        let split = k == retained.len()
            || (reset_at_gaps && series.entries[retained[k]].frame_index != series.entries[retained[k - 1]].frame_index + 1);
        if split {
            let seg = &retained[start..k];
            let x: Vec<f64> = seg.iter().map(|&i| series.entries[i].score).collect();
            for (&i, y) in seg.iter().zip(smooth_scores(&x, window)) {
                entries[i].score = y;
            }
            start = k;
        }
    }
    Ok(ScoreSeries {
        participant_id: series.participant_id.clone(),
        fps: series.fps,
        entries,
        window: Some(window.max(1)),
    })
}

const HEADER: &str = "participant_id,frame_index,timestamp_ms,score,label";

/// Writes the shared score file format: a `# smoothed: <bool>, window: <W>,
/// fps: <fps>` line, a column header, then one row per frame.
pub fn write_score_file(path: &Path, series: &ScoreSeries) -> Result<(), SmoothingError> {
    let io = |source| SmoothingError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let window = series.window.map(|w| w.to_string()).unwrap_or_else(|| "-".into());
    writeln!(
        out,
        "# smoothed: {}, window: {window}, fps: {}",
        series.window.is_some(),
        series.fps
    )
    .map_err(io)?;
    writeln!(out, "{HEADER}").map_err(io)?;
    for e in &series.entries {
        writeln!(
            out,
            "{},{},{},{},{}",
            series.participant_id,
            e.frame_index,
            e.timestamp_ms,
            e.score,
            e.label.as_str()
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_score_file(path: &Path) -> Result<ScoreSeries, SmoothingError> {
    let fail = |message: String| SmoothingError::Format {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|source| SmoothingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = std::io::BufReader::new(file).lines();
    let mut next = || -> Result<Option<String>, SmoothingError> {
        lines.next().transpose().map_err(|source| SmoothingError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let flag = next()?.ok_or_else(|| fail("empty file".into()))?;
    let flag = flag
        .strip_prefix('#')
        .ok_or_else(|| fail("missing '# smoothed:' header line".into()))?;
    let mut smoothed = None;
    let mut window = None;
    let mut fps = None;
    for part in flag.split(',') {
        let (k, v) = part
            .split_once(':')
            .ok_or_else(|| fail(format!("bad header field {part:?}")))?;
        match k.trim() {
            "smoothed" => smoothed = Some(v.trim() == "true"),
            "window" => window = v.trim().parse::<usize>().ok(),
            "fps" => fps = v.trim().parse::<u32>().ok(),
            other => return Err(fail(format!("unknown header field {other:?}"))),
        }
    }
    let smoothed = smoothed.ok_or_else(|| fail("header lacks 'smoothed'".into()))?;
    let fps = fps.ok_or_else(|| fail("header lacks 'fps'".into()))?;
    if smoothed && window.is_none() {
        return Err(fail("smoothed file without a window".into()));
    }
    let columns = next()?.ok_or_else(|| fail("missing column header".into()))?;
    if columns.trim() != HEADER {
        return Err(fail(format!("unexpected columns {columns:?}")));
    }
    let mut participant = None;
    let mut entries = Vec::new();
    while let Some(line) = next()? {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(fail(format!("expected 5 fields in {line:?}")));
        }
        match &participant {
            None => participant = Some(f[0].to_string()),
            Some(p) if p != f[0] => return Err(fail(format!("mixed participants {p} and {}", f[0]))),
            _ => {}
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| fail(format!("bad number {s:?}")));
        entries.push(ScoreEntry {
            frame_index: f[1].parse().map_err(|_| fail(format!("bad frame index {:?}", f[1])))?,
            timestamp_ms: num(f[2])?,
            score: num(f[3])?,
            label: PainLabel::parse(f[4]).ok_or_else(|| fail(format!("bad label {:?}", f[4])))?,
        });
    }
    let series = ScoreSeries {
        participant_id: participant.ok_or_else(|| fail("no rows".into()))?,
        fps,
        entries,
        window: if smoothed { window } else { None },
    };
    series.validate()?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Direct windowed mean, O(n * W).
    fn oracle(x: &[f64], w: usize) -> Vec<f64> {
        (0..x.len())
            .map(|t| {
                let lo = (t + 1).saturating_sub(w);
                x[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
            })
            .collect()
    }

    fn series(scores: &[f64]) -> ScoreSeries {
        ScoreSeries {
            participant_id: "P1".into(),
            fps: 30,
            entries: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ScoreEntry {
                    frame_index: i as u32,
                    timestamp_ms: i as f64 * 1000.0 / 30.0,
                    score: s,
                    label: if i % 2 == 0 { PainLabel::Pain } else { PainLabel::NoPain },
                })
                .collect(),
            window: None,
        }
    }

    #[test]
    fn window_selection() {
        let cfg = SmoothingConfig::default();
        assert_eq!(select_window(30, &cfg), 30);
        assert_eq!(select_window(60, &cfg), 60);
        assert_eq!(select_window(25, &cfg), 25);
        let tiny = SmoothingConfig {
            window_seconds: 0.001,
            ..cfg
        };
        assert_eq!(select_window(30, &tiny), 1);
    }

    #[test]
    fn step_example() {
        let out = smooth_scores(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 3);
        let want = [1.0, 1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn constant_series_is_fixed_point() {
        for c in [0.1, 0.7, 1.0 / 3.0] {
            let out = smooth_scores(&vec![c; 100], 7);
            assert!(out.iter().all(|&v| v == c));
        }
    }

    #[test]
    fn window_one_is_identity() {
        let x = [0.3, 0.9, 0.1, 0.5];
        assert_eq!(smooth_scores(&x, 1), x.to_vec());
    }

    #[test]
    fn labels_pass_through() {
        let s = series(&[0.2, 0.4, 0.9, 0.1]);
        let out = smooth_causal_uniform(&s, 2).unwrap();
        for (a, b) in s.entries.iter().zip(&out.entries) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.timestamp_ms, b.timestamp_ms);
        }
        assert_eq!(out.window, Some(2));
    }

    #[test]
    fn empty_series_rejected() {
        assert!(matches!(
            smooth_causal_uniform(&series(&[]), 3),
            Err(SmoothingError::EmptySeries(_))
        ));
    }

    #[test]
    fn step_latency_bound() {
        for w in [1usize, 2, 5, 30, 60] {
            let mut x = vec![0.0; 200];
            x[100..].iter_mut().for_each(|v| *v = 1.0);
            let out = smooth_scores(&x, w);
            let first = out.iter().position(|&v| v > 0.5).unwrap();
            assert!(first - 100 <= w.div_ceil(2) + 1, "w={w}: {}", first - 100);
        }
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = smooth_causal_uniform(&series(&[0.25, 0.1, 1e-9, 0.75]), 3).unwrap();
        write_score_file(&path, &s).unwrap();
        assert_eq!(read_score_file(&path).unwrap(), s);
        let raw = series(&[0.5, 0.6]);
        write_score_file(&path, &raw).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# smoothed: false, window: -, fps: 30\n"));
        assert_eq!(read_score_file(&path).unwrap(), raw);
    }

    #[test]
    fn excluded_frames_stay_out_of_windows() {
        let mut s = series(&[0.2, 0.9, 0.4, 0.6, 0.1]);
        s.entries[2].label = PainLabel::Excluded;
        let out = smooth_retained(&s, 2, false).unwrap();
        assert_eq!(out.entries[2].score, 0.4);
        let want = smooth_scores(&[0.2, 0.9, 0.6, 0.1], 2);
        let got: Vec<f64> = out.entries.iter().filter(|e| e.label != PainLabel::Excluded).map(|e| e.score).collect();
        assert_eq!(got, want);
        s.entries[2].score = 50.0;
        let again = smooth_retained(&s, 2, false).unwrap();
        assert_eq!(again.entries[3].score, out.entries[3].score);
    }

    #[test]
    fn reset_restarts_after_gap() {
        let mut s = series(&[1.0, 1.0, 0.5, 0.0, 0.0]);
        s.entries[2].label = PainLabel::Excluded;
        let out = smooth_retained(&s, 3, true).unwrap();
        assert_eq!(out.entries[3].score, 0.0);
        let bridged = smooth_retained(&s, 3, false).unwrap();
        assert!((bridged.entries[3].score - 2.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_oracle(x in prop::collection::vec(0.0f64..1.0, 1..400), w in 1usize..80) {
            let got = smooth_scores(&x, w);
            for (a, b) in got.iter().zip(oracle(&x, w)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn range_and_linearity(x in prop::collection::vec(-5.0f64..5.0, 1..200), w in 1usize..40, a in 0.1f64..3.0, b in -2.0f64..2.0) {
            let got = smooth_scores(&x, w);
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got.iter().all(|&v| v >= lo && v <= hi));
            let affine: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let got2 = smooth_scores(&affine, w);
            for (p, q) in got.iter().zip(got2) {
                prop_assert!((a * p + b - q).abs() < 1e-9);
            }
        }

        #[test]
        fn causal(x in prop::collection::vec(0.0f64..1.0, 2..200), w in 1usize..40, t_frac in 0.0f64..1.0, bump in 0.1f64..5.0) {
            let t = ((x.len() - 1) as f64 * t_frac) as usize;
            let base = smooth_scores(&x, w);
            let mut y = x.clone();
            for v in y.iter_mut().skip(t + 1) { *v += bump; }
            let pert = smooth_scores(&y, w);
            prop_assert_eq!(&base[..=t], &pert[..=t]);
        }
    }
}
