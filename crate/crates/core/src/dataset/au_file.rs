use std::path::Path;

use super::DatasetError;
use crate::pspi::ActionUnitVector;

/// One parsed AU row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuRow {
    pub frame_index: u32,
    pub aus: ActionUnitVector,
}

const AU_COLUMNS: [&str; 6] = ["au4", "au6", "au7", "au9", "au10", "au43"];

/// Reads a per-frame AU file (`frame_index,au4,au6,au7,au9,au10,au43` with a
/// header row). Missing AU columns read as zero; fractional intensities are
/// rounded. Both cases log a warning once per file.
pub fn read_au_file(path: &Path, participant: &str) -> Result<Vec<AuRow>, DatasetError> {
    let fail = |message: String| DatasetError::LabelSource {
        participant: participant.to_string(),
        message: format!("{}: {message}", path.display()),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let frame_col = col("frame_index").ok_or_else(|| fail("missing frame_index column".into()))?;
    let au_cols: Vec<Option<usize>> = AU_COLUMNS.iter().map(|c| col(c)).collect();
    let missing: Vec<&str> = AU_COLUMNS
        .iter()
        .zip(&au_cols)
        .filter(|(_, c)| c.is_none())
        .map(|(n, _)| *n)
        .collect();
    if !missing.is_empty() {
        log::warn!("{}: columns {missing:?} absent, treating as 0", path.display());
    }

    let mut rounded = false;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let field = |c: usize| -> Result<f64, DatasetError> {
            let raw = record.get(c).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| fail(format!("row {}: cannot parse {raw:?}", i + 1)))
        };
        let frame = field(frame_col)?;
        if frame < 0.0 || frame.fract() != 0.0 {
            return Err(fail(format!("row {}: bad frame index {frame}", i + 1)));
        }
        let mut vals = [0u8; 6];
        for (slot, c) in vals.iter_mut().zip(&au_cols) {
            if let Some(c) = c {
                let v = field(*c)?;
                if v.fract() != 0.0 {
                    rounded = true;
                }
                let r = v.round();
                if !(0.0..=255.0).contains(&r) {
                    return Err(fail(format!("row {}: AU intensity {v} out of range", i + 1)));
                }
                *slot = r as u8;
            }
        }
        let aus = ActionUnitVector {
            au4: vals[0],
            au6: vals[1],
            au7: vals[2],
            au9: vals[3],
            au10: vals[4],
            au43: vals[5],
        };
        aus.validate()?;
        rows.push(AuRow {
            frame_index: frame as u32,
            aus,
        });
    }
    if rounded {
        log::warn!("{}: fractional AU intensities rounded to integers", path.display());
    }
    Ok(rows)
}
