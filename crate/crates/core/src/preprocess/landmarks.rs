use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PreprocessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Point layouts produced by the supported landmark providers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkSchema {
    /// The 68-point annotation layout (sparse face-alignment models).
    Sparse68,
    /// Dense face mesh with 468 points (478 with iris refinement).
    DenseMesh,
}

/// Indices of (image-left outer, image-left inner, image-right inner,
/// image-right outer) eye corners in the 68-point layout.
pub const SPARSE68_CANTHI: [usize; 4] = [36, 39, 42, 45];
/// Same corners in the dense mesh layout.
pub const DENSE_MESH_CANTHI: [usize; 4] = [33, 133, 362, 263];

impl LandmarkSchema {
    fn accepts(self, n: usize) -> bool {
        match self {
            LandmarkSchema::Sparse68 => n == 68,
            LandmarkSchema::DenseMesh => n == 468 || n == 478,
        }
    }

    fn expected(self) -> &'static str {
        match self {
            LandmarkSchema::Sparse68 => "68",
            LandmarkSchema::DenseMesh => "468 or 478",
        }
    }

    pub fn canthus_indices(self) -> [usize; 4] {
        match self {
            LandmarkSchema::Sparse68 => SPARSE68_CANTHI,
            LandmarkSchema::DenseMesh => DENSE_MESH_CANTHI,
        }
    }
}

/// Inner and outer eye corners; "left" and "right" are in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEyeLandmarks {
    pub left_inner_canthus: Point,
    pub right_inner_canthus: Point,
    pub left_outer_canthus: Point,
    pub right_outer_canthus: Point,
}

impl CanonicalEyeLandmarks {
    pub fn inner_midpoint(&self) -> Point {
        Point::new(
            0.5 * (self.left_inner_canthus.x + self.right_inner_canthus.x),
            0.5 * (self.left_inner_canthus.y + self.right_inner_canthus.y),
        )
    }
}

/// Picks the four canthi out of a provider's landmark set.
pub fn adapt_landmarks(
    raw: &[Point],
    schema: LandmarkSchema,
) -> Result<CanonicalEyeLandmarks, PreprocessError> {
    if raw.is_empty() {
        return Err(PreprocessError::Confidence);
    }
    if !schema.accepts(raw.len()) {
        return Err(PreprocessError::Schema {
            schema,
            expected: schema.expected().to_string(),
            got: raw.len(),
        });
    }
    let [lo, li, ri, ro] = schema.canthus_indices().map(|i| raw[i]);
    if [lo, li, ri, ro]
        .iter()
        .any(|p| !p.x.is_finite() || !p.y.is_finite())
    {
        return Err(PreprocessError::Confidence);
    }
    if ri.x <= li.x {
        return Err(PreprocessError::DegenerateGeometry(format!(
            "right inner canthus x={} is not right of left inner canthus x={}",
            ri.x, li.x
        )));
    }
    Ok(CanonicalEyeLandmarks {
        left_inner_canthus: li,
        right_inner_canthus: ri,
        left_outer_canthus: lo,
        right_outer_canthus: ro,
    })
}

/// Per-frame landmark sets of one participant. Frames absent from the file,
/// or present with no coordinates, had no detected face.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkTrack {
    pub frames: BTreeMap<u32, Vec<Point>>,
}

impl LandmarkTrack {
    pub fn get(&self, frame_index: u32) -> &[Point] {
        self.frames.get(&frame_index).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Reads `frame_index, x0, y0, x1, y1, ...` rows. A header row is optional.
pub fn read_landmark_file(path: &Path) -> Result<LandmarkTrack, PreprocessError> {
    let fail = |message: String| PreprocessError::LandmarkFile {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let mut track = LandmarkTrack::default();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let Some(first) = record.get(0) else { continue };
        let Ok(frame) = first.parse::<u32>() else {
            if row == 0 {
                continue; // header
            }
            return Err(fail(format!("row {}: bad frame index {first:?}", row + 1)));
        };
        let coords: Vec<&str> = record.iter().skip(1).filter(|s| !s.is_empty()).collect();
        if coords.len() % 2 != 0 {
            return Err(fail(format!("row {}: odd number of coordinates", row + 1)));
        }
        let mut points = Vec::with_capacity(coords.len() / 2);
        for xy in coords.chunks(2) {
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| fail(format!("row {}: bad coordinate {s:?}", row + 1)))
            };
            points.push(Point::new(parse(xy[0])?, parse(xy[1])?));
        }
        if track.frames.insert(frame, points).is_some() {
            return Err(fail(format!("duplicate row for frame {frame}")));
        }
    }
    Ok(track)
}

pub fn write_landmark_file(path: &Path, track: &LandmarkTrack) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let width = track.frames.values().map(Vec::len).max().unwrap_or(0);
    write!(out, "frame_index")?;
    for i in 0..width {
        write!(out, ",x{i},y{i}")?;
    }
    writeln!(out)?;
    for (frame, points) in &track.frames {
        write!(out, "{frame}")?;
        for p in points {
            write!(out, ",{},{}", p.x, p.y)?;
        }
        writeln!(out)?;
    }
    out.flush()
}
