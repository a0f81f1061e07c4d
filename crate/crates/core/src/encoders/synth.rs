//! Piecewise-constant synthetic observation windows.
//!
//! Each sample is cut into contiguous segments. A segment draws one latent
//! state `z ~ N(0, I)` and every channel renders it through a fixed random
//! linear map, so all frames of a segment share the same row in every
//! channel before noise. The visual channel sees the leading latent
//! dimensions and the non-visual channels the trailing ones, with an overlap.
//! The label is 1 iff the last segment's state lies on the positive side of
//! a fixed random hyperplane through the origin.

use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, POSE_DIM};
use crate::data::{PlantedSegment, SampleRecord, TrafficChannel};
use crate::error::{Error, Result};
use crate::numeric::{dot, Matrix, RngState};

const TRAFFIC_NAMES: [&str; 6] = ["f_tn", "f_tl", "f_ts", "f_c", "f_s", "f_e"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub count: usize,
    /// Planted segments per sample.
    pub segments: usize,
    pub noise_sigma: f64,
    pub visual_width: usize,
    pub traffic: Vec<(String, usize)>,
    pub latent_dim: usize,
    /// Standard deviation of every noiseless channel entry.
    pub signal_scale: f64,
    pub min_segment_len: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            count: 100,
            segments: 3,
            noise_sigma: 0.1,
            visual_width: 16,
            traffic: TRAFFIC_NAMES.iter().map(|n| (n.to_string(), 4)).collect(),
            latent_dim: 8,
            signal_scale: 1.0,
            min_segment_len: 5,
        }
    }
}

/// Fixed linear maps from latent state to every channel.
struct World {
    visual: Matrix,
    bbox: Matrix,
    pose: Matrix,
    traffic: Vec<Matrix>,
    label_direction: Vec<f64>,
}

impl World {
    fn new(p: &SynthParams, rng: &mut RngState) -> World {
        let l = p.latent_dim;
        let visible = (3 * l).div_ceil(4);
        let visual_dims = 0..visible;
        let nonvisual_dims = l - visible..l;
        let mut mixing = |width: usize, dims: std::ops::Range<usize>| {
            let std = p.signal_scale / (dims.len() as f64).sqrt();
            let mut m = Matrix::zeros(l, width);
            for r in dims {
                for c in 0..width {
                    m[(r, c)] = std * rng.normal();
                }
            }
            m
        };
        let visual = mixing(p.visual_width, visual_dims);
        let bbox = mixing(4, nonvisual_dims.clone());
        let pose = mixing(POSE_DIM, nonvisual_dims.clone());
        let traffic = p
            .traffic
            .iter()
            .map(|(_, w)| mixing(*w, nonvisual_dims.clone()))
            .collect();
        let mut label_direction: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let norm = dot(&label_direction, &label_direction).sqrt();
        label_direction.iter_mut().for_each(|v| *v /= norm);
        World {
            visual,
            bbox,
            pose,
            traffic,
            label_direction,
        }
    }
}

fn render(z: &[f64], map: &Matrix) -> Vec<f64> {
    crate::numeric::vec_mat(z, map)
}

/// Segment lengths: `min_len` each plus a uniform composition of the rest.
fn segment_lengths(t: usize, segments: usize, min_len: usize, rng: &mut RngState) -> Vec<usize> {
    let spare = t - segments * min_len;
    // Stars and bars: choose `segments - 1` bar positions among `spare + segments - 1` slots.
    let slots = spare + segments - 1;
    let mut positions: Vec<usize> = (0..slots).collect();
    rng.shuffle(&mut positions);
    let mut bars = positions[..segments - 1].to_vec();
    bars.sort_unstable();
    let mut lengths = Vec::with_capacity(segments);
    let mut prev: isize = -1;
    for &b in bars.iter().chain(std::iter::once(&slots)) {
        let stars = (b as isize - prev - 1) as usize;
        lengths.push(min_len + stars);
        prev = b as isize;
    }
    lengths
}

/// Generates `params.count` labelled samples of `cfg.frames` frames, seeded by `cfg.seed`.
pub fn generate_synthetic(cfg: &PipelineConfig, params: &SynthParams) -> Result<Vec<SampleRecord>> {
    let t = cfg.frames;
    let m = params.segments;
    if m < 1 || m > t {
        return Err(Error::Argument(format!(
            "planted segment count must satisfy 1 <= M* <= T, got M*={m} T={t}"
        )));
    }
    if m * params.min_segment_len.max(1) > t {
        return Err(Error::Argument(format!(
            "{m} segments of at least {} frames do not fit in T={t}",
            params.min_segment_len
        )));
    }
    if !(params.noise_sigma >= 0.0 && params.noise_sigma.is_finite()) {
        return Err(Error::Argument(format!(
            "noise_sigma must be non-negative, got {}",
            params.noise_sigma
        )));
    }
    if params.latent_dim < 1 || params.visual_width < 1 || params.traffic.iter().any(|c| c.1 < 1) {
        return Err(Error::Argument("synthetic widths must be at least 1".into()));
    }

    let root = RngState::new(cfg.seed);
    let world = World::new(params, &mut root.derive(1));
    let mut rng = root.derive(2);
    let sigma = params.noise_sigma;

    let mut records = Vec::with_capacity(params.count);
    for index in 0..params.count {
        let lengths = segment_lengths(t, m, params.min_segment_len.max(1), &mut rng);
        let mut planted = Vec::with_capacity(m);
        let mut start = 0;
        for (segment_id, len) in lengths.iter().enumerate() {
            planted.push(PlantedSegment {
                start_frame: start,
                end_frame: start + len - 1,
                segment_id,
            });
            start += len;
        }
        let states: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..params.latent_dim).map(|_| rng.normal()).collect())
            .collect();

        let mut visual = Matrix::zeros(t, params.visual_width);
        let mut bbox = Matrix::zeros(t, 4);
        let mut pose = Matrix::zeros(t, POSE_DIM);
        let mut traffic: Vec<Matrix> = params.traffic.iter().map(|(_, w)| Matrix::zeros(t, *w)).collect();

        for seg in &planted {
            let z = &states[seg.segment_id];
            let visual_row = render(z, &world.visual);
            let bbox_row = render(z, &world.bbox);
            let pose_row = render(z, &world.pose);
            let traffic_rows: Vec<Vec<f64>> = world.traffic.iter().map(|w| render(z, w)).collect();
            for f in seg.start_frame..=seg.end_frame {
                for (dst, v) in visual.row_mut(f).iter_mut().zip(&visual_row) {
                    *dst = v + sigma * rng.normal();
                }
                // Centre and log-size of the box.
                let cx = bbox_row[0] + sigma * rng.normal();
                let cy = bbox_row[1] + sigma * rng.normal();
                let w = (bbox_row[2].exp() + sigma * rng.normal()).max(0.0);
                let h = (bbox_row[3].exp() + sigma * rng.normal()).max(0.0);
                bbox.row_mut(f)
                    .copy_from_slice(&[cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]);
                for (dst, v) in pose.row_mut(f).iter_mut().zip(&pose_row) {
                    *dst = v + sigma * rng.normal();
                }
                for (channel, row) in traffic.iter_mut().zip(&traffic_rows) {
                    for (dst, v) in channel.row_mut(f).iter_mut().zip(row) {
                        *dst = v + sigma * rng.normal();
                    }
                }
            }
        }

        let last = &states[m - 1];
        let label = u8::from(dot(last, &world.label_direction) > 0.0);
        let record = SampleRecord {
            id: format!("synth-{index:05}"),
            label,
            visual_raw: visual,
            bbox,
            pose,
            traffic_objects: params
                .traffic
                .iter()
                .zip(traffic)
                .map(|((name, _), data)| TrafficChannel {
                    name: name.clone(),
                    data,
                })
                .collect(),
            planted_segments: Some(planted),
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
