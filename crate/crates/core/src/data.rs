//! Sample records, feature sequences and the JSON-lines dataset format.
//!
//! One record per line:
//!
//! ```json
//! {"id": "s0", "label": 1,
//!  "visual_raw": [[...], ...], "bbox": [[x1, y1, x2, y2], ...], "pose": [[36 values], ...],
//!  "traffic_objects": [{"name": "f_tn", "data": [[...], ...]}],
//!  "planted_segments": [{"start_frame": 0, "end_frame": 4, "segment_id": 0}]}
//! ```
//!
//! Every channel carries one row per frame. `end_frame` is inclusive and
//! `planted_segments` is optional.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::POSE_DIM;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// One traffic-object channel, e.g. crosswalk or traffic-light features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficChannel {
    pub name: String,
    pub data: Matrix,
}

/// Ground-truth segment of a synthetic sample; `end_frame` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSegment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub segment_id: usize,
}

/// One labelled observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// 1 = crossing, 0 = not crossing.
    pub label: u8,
    pub visual_raw: Matrix,
    pub bbox: Matrix,
    pub pose: Matrix,
    pub traffic_objects: Vec<TrafficChannel>,
    pub planted_segments: Option<Vec<PlantedSegment>>,
}

impl SampleRecord {
    pub fn frames(&self) -> usize {
        self.visual_raw.rows()
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }

    /// Per-frame ground-truth segment ids, when segments are recorded.
    pub fn planted_assignment(&self) -> Option<Vec<usize>> {
        let segments = self.planted_segments.as_ref()?;
        let mut out = vec![usize::MAX; self.frames()];
        for s in segments {
            for slot in &mut out[s.start_frame..=s.end_frame] {
                *slot = s.segment_id;
            }
        }
        Some(out)
    }

    pub fn schema(&self) -> ChannelSchema {
        ChannelSchema {
            visual_width: self.visual_raw.cols(),
            traffic: self
                .traffic_objects
                .iter()
                .map(|c| (c.name.clone(), c.data.cols()))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| {
            Err(Error::Validation {
                id: self.id.clone(),
                field: field.to_string(),
                message,
            })
        };
        if self.label > 1 {
            return fail("label", format!("must be 0 or 1, got {}", self.label));
        }
        let t = self.visual_raw.rows();
        if t < 2 {
            return fail("visual_raw", format!("need at least 2 frames, got {t}"));
        }
        if self.visual_raw.cols() == 0 {
            return fail("visual_raw", "feature width is zero".into());
        }
        let mut channels: Vec<(&str, &Matrix)> = vec![
            ("visual_raw", &self.visual_raw),
            ("bbox", &self.bbox),
            ("pose", &self.pose),
        ];
        for c in &self.traffic_objects {
            channels.push((c.name.as_str(), &c.data));
        }
        for (name, m) in &channels {
            if m.rows() != t {
                return fail(name, format!("has {} rows, expected T={t}", m.rows()));
            }
            if !m.is_finite() {
                return fail(name, "contains a non-finite value".into());
            }
        }
        if self.bbox.cols() != 4 {
            return fail("bbox", format!("needs 4 columns, got {}", self.bbox.cols()));
        }
        for f in 0..t {
            let b = self.bbox.row(f);
            if b[0] > b[2] || b[1] > b[3] {
                return fail("bbox", format!("frame {f} violates x1<=x2, y1<=y2"));
            }
        }
        if self.pose.cols() != POSE_DIM {
            return fail("pose", format!("needs {POSE_DIM} columns, got {}", self.pose.cols()));
        }
        for c in &self.traffic_objects {
            if c.data.cols() == 0 {
                return fail(&c.name, "feature width is zero".into());
            }
        }
        if let Some(segments) = &self.planted_segments {
            let mut covered = vec![false; t];
            for s in segments {
                if s.start_frame > s.end_frame || s.end_frame >= t {
                    return fail("planted_segments", format!("segment {:?} out of range for T={t}", s));
                }
                for slot in &mut covered[s.start_frame..=s.end_frame] {
                    if *slot {
                        return fail("planted_segments", "segments overlap".into());
                    }
                    *slot = true;
                }
            }
        }
        Ok(())
    }
}

/// Channel layout shared by every record of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub visual_width: usize,
    /// Traffic-object channels in dataset order, with their widths.
    pub traffic: Vec<(String, usize)>,
}

impl ChannelSchema {
    /// Schema of the first record; errors if any record disagrees.
    pub fn of_dataset(records: &[SampleRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Argument("dataset is empty".into()))?;
        let schema = first.schema();
        for r in &records[1..] {
            let other = r.schema();
            if other != schema {
                return Err(Error::Validation {
                    id: r.id.clone(),
                    field: "traffic_objects".into(),
                    message: format!("channel layout {other:?} differs from {schema:?}"),
                });
            }
        }
        Ok(schema)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Visual,
    Nonvisual,
}

/// Per-frame features of one branch: `T x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub branch: Branch,
    pub data: Matrix,
}

impl FeatureSequence {
    pub fn new(branch: Branch, data: Matrix) -> Result<Self> {
        if !data.is_finite() {
            return Err(Error::NonFinite(format!("{branch:?} feature sequence")));
        }
        Ok(FeatureSequence { branch, data })
    }

    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }
}

#[derive(Serialize, Deserialize)]
struct RawChannel {
    name: String,
    data: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    label: u8,
    visual_raw: Vec<Vec<f64>>,
    bbox: Vec<Vec<f64>>,
    pose: Vec<Vec<f64>>,
    #[serde(default)]
    traffic_objects: Vec<RawChannel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    planted_segments: Option<Vec<PlantedSegment>>,
}

impl From<&SampleRecord> for RawRecord {
    fn from(r: &SampleRecord) -> Self {
        RawRecord {
            id: r.id.clone(),
            label: r.label,
            visual_raw: r.visual_raw.to_rows(),
            bbox: r.bbox.to_rows(),
            pose: r.pose.to_rows(),
            traffic_objects: r
                .traffic_objects
                .iter()
                .map(|c| RawChannel {
                    name: c.name.clone(),
                    data: c.data.to_rows(),
                })
                .collect(),
            planted_segments: r.planted_segments.clone(),
        }
    }
}

impl TryFrom<RawRecord> for SampleRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        let id = raw.id;
        let matrix = |field: &str, rows: &[Vec<f64>]| {
            Matrix::from_rows(rows).map_err(|_| Error::Validation {
                id: id.clone(),
                field: field.to_string(),
                message: "rows have differing lengths".into(),
            })
        };
        let visual_raw = matrix("visual_raw", &raw.visual_raw)?;
        let bbox = matrix("bbox", &raw.bbox)?;
        let pose = matrix("pose", &raw.pose)?;
        let traffic_objects = raw
            .traffic_objects
            .iter()
            .map(|c| {
                Ok(TrafficChannel {
                    name: c.name.clone(),
                    data: matrix(&c.name, &c.data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = SampleRecord {
            id: id.clone(),
            label: raw.label,
            visual_raw,
            bbox,
            pose,
            traffic_objects,
            planted_segments: raw.planted_segments,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Parses one dataset line.
pub fn parse_record(line: &str, line_no: usize) -> Result<SampleRecord> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    SampleRecord::try_from(raw)
}

pub fn record_to_json(record: &SampleRecord) -> Result<String> {
    Ok(serde_json::to_string(&RawRecord::from(record))?)
}

/// Reads a JSON-lines dataset, validating every record. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, i + 1)?);
    }
    Ok(records)
}

pub fn save_dataset(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        r.validate()?;
        writeln!(out, "{}", record_to_json(r)?).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
