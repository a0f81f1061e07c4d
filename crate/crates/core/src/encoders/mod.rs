//! Feature encoders for both branches.
//!
//! The visual branch is a single trainable linear map over the raw visual
//! features. The non-visual branch embeds the bounding box and each traffic
//! object channel to a common width, concatenates them with the raw pose
//! keypoints, and passes the result through another linear map.

mod synth;

pub use synth::{generate_synthetic, SynthParams};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::{Branch, ChannelSchema, FeatureSequence, SampleRecord};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngState};

/// Per-channel embedding matrices of the relation block. Pose is not embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationBlockParams {
    /// `4 x d1`.
    pub bbox_embed: Matrix,
    /// One `c_j x d1` matrix per traffic channel, in dataset order.
    pub traffic_embed: Vec<Matrix>,
}

impl RelationBlockParams {
    pub fn init(cfg: &PipelineConfig, schema: &ChannelSchema, rng: &mut RngState) -> Self {
        RelationBlockParams {
            bbox_embed: rng.glorot_matrix(4, cfg.d1),
            traffic_embed: schema
                .traffic
                .iter()
                .map(|(_, width)| rng.glorot_matrix(*width, cfg.d1))
                .collect(),
        }
    }

    pub fn embed_width(&self) -> usize {
        self.bbox_embed.cols()
    }

    /// Width of the relation block output for a given pose width.
    pub fn output_width(&self, pose_width: usize) -> usize {
        relation_width(self.embed_width(), self.traffic_embed.len(), pose_width)
    }
}

/// `d1 * (n + 1) + d2`.
pub fn relation_width(d1: usize, n_traffic: usize, d2: usize) -> usize {
    d1 * (n_traffic + 1) + d2
}

/// Linear stand-ins for the two backbone encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `d_raw x d_v`.
    pub visual_stub: Matrix,
    /// `(d1 * (n + 1) + d2) x d_nv`.
    pub actaware_stub: Matrix,
}

impl EncoderParams {
    pub fn init(cfg: &PipelineConfig, schema: &ChannelSchema, rng: &mut RngState) -> Self {
        let relation = relation_width(cfg.d1, schema.traffic.len(), cfg.d2);
        EncoderParams {
            visual_stub: rng.glorot_matrix(schema.visual_width, cfg.d_v),
            actaware_stub: rng.glorot_matrix(relation, cfg.d_nv),
        }
    }
}

/// Per frame: `[bbox W_bbox, obj_1 W_1, ..., obj_n W_n, pose]`.
pub fn relation_block(sample: &SampleRecord, p: &RelationBlockParams) -> Result<Matrix> {
    if sample.traffic_objects.len() != p.traffic_embed.len() {
        return Err(Error::shape(
            "relation_block",
            format!("{} traffic embeddings", p.traffic_embed.len()),
            format!("{} traffic channels", sample.traffic_objects.len()),
        ));
    }
    let embed = |name: &str, x: &Matrix, w: &Matrix| {
        x.matmul(w)
            .map_err(|_| Error::shape("relation_block", format!("channel `{name}` {}", x.shape()), w.shape()))
    };
    let mut parts = Vec::with_capacity(p.traffic_embed.len() + 2);
    parts.push(embed("bbox", &sample.bbox, &p.bbox_embed)?);
    for (channel, w) in sample.traffic_objects.iter().zip(&p.traffic_embed) {
        parts.push(embed(&channel.name, &channel.data, w)?);
    }
    let refs: Vec<&Matrix> = parts.iter().chain([&sample.pose]).collect();
    Matrix::hcat(&refs)
}

/// Gradients of the relation block embeddings given `dL/d(relation output)`.
pub fn relation_block_backward(
    sample: &SampleRecord,
    p: &RelationBlockParams,
    grad_out: &Matrix,
) -> Result<RelationBlockParams> {
    let d1 = p.embed_width();
    let expected = p.output_width(sample.pose.cols());
    if grad_out.cols() != expected || grad_out.rows() != sample.frames() {
        return Err(Error::shape(
            "relation_block_backward",
            grad_out.shape(),
            format!("{}x{expected}", sample.frames()),
        ));
    }
    let bbox_embed = sample.bbox.transpose().matmul(&grad_out.columns(0, d1)?)?;
    let traffic_embed = sample
        .traffic_objects
        .iter()
        .enumerate()
        .map(|(j, c)| c.data.transpose().matmul(&grad_out.columns(d1 * (j + 1), d1)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(RelationBlockParams {
        bbox_embed,
        traffic_embed,
    })
}

pub fn encode_visual(sample: &SampleRecord, p: &EncoderParams) -> Result<FeatureSequence> {
    let data = sample.visual_raw.matmul(&p.visual_stub)?;
    FeatureSequence::new(Branch::Visual, data)
}

pub fn encode_nonvisual(relation_out: &Matrix, p: &EncoderParams) -> Result<FeatureSequence> {
    let data = relation_out.matmul(&p.actaware_stub)?;
    FeatureSequence::new(Branch::Nonvisual, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::POSE_DIM;
    use crate::data::TrafficChannel;
    use proptest::prelude::*;

    fn sample(t: usize, traffic_widths: &[usize], rng: &mut RngState) -> SampleRecord {
        let bbox_rows: Vec<[f64; 4]> = (0..t)
            .map(|_| {
                let x = rng.uniform(0.0, 1.0);
                let y = rng.uniform(0.0, 1.0);
                [x, y, x + rng.uniform(0.0, 0.3), y + rng.uniform(0.0, 0.3)]
            })
            .collect();
        SampleRecord {
            id: "s".into(),
            label: 0,
            visual_raw: rng.normal_matrix(t, 5, 1.0),
            bbox: Matrix::from_rows(&bbox_rows).unwrap(),
            pose: rng.normal_matrix(t, POSE_DIM, 1.0),
            traffic_objects: traffic_widths
                .iter()
                .enumerate()
                .map(|(j, &w)| TrafficChannel {
                    name: format!("obj{j}"),
                    data: rng.normal_matrix(t, w, 1.0),
                })
                .collect(),
            planted_segments: None,
        }
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn zero_inputs_give_zero_output() {
        let mut rng = RngState::new(1);
        let mut s = sample(4, &[3, 2], &mut rng);
        s.bbox = Matrix::zeros(4, 4);
        s.pose = Matrix::zeros(4, POSE_DIM);
        for c in &mut s.traffic_objects {
            c.data = Matrix::zeros(4, c.data.cols());
        }
        let cfg = PipelineConfig {
            d1: 5,
            ..Default::default()
        };
        let p = RelationBlockParams::init(&cfg, &s.schema(), &mut rng);
        let out = relation_block(&s, &p).unwrap();
        assert_eq!(out.cols(), 5 * 3 + POSE_DIM);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_hand_computed() {
        // n = 1 traffic channel of width 2, d1 = 2.
        let mut s = sample(2, &[2], &mut RngState::new(2));
        s.bbox = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 1.0, 1.0]]).unwrap();
        s.traffic_objects[0].data = Matrix::from_rows(&[[5.0, 6.0], [0.0, 0.0]]).unwrap();
        let p = RelationBlockParams {
            // Identity padded with zero rows: picks x1 and y1, then adds x2.
            bbox_embed: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]).unwrap(),
            traffic_embed: vec![Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()],
        };
        let out = relation_block(&s, &p).unwrap();
        // bbox [1,2,3,4] -> [1+3, 2]; object [5,6] -> [6, 5]; then the pose row.
        assert_eq!(&out.row(0)[..4], &[4.0, 2.0, 6.0, 5.0]);
        assert_eq!(&out.row(0)[4..], s.pose.row(0));
    }

    #[test]
    fn full_size_output_shape() {
        let mut rng = RngState::new(3);
        let s = sample(16, &[4; 6], &mut rng);
        let cfg = PipelineConfig::default();
        let p = RelationBlockParams::init(&cfg, &s.schema(), &mut rng);
        let out = relation_block(&s, &p).unwrap();
        assert_eq!((out.rows(), out.cols()), (16, 260));
    }

    #[test]
    fn mismatched_channel_width_names_the_channel() {
        let mut rng = RngState::new(4);
        let s = sample(4, &[3], &mut rng);
        let p = RelationBlockParams {
            bbox_embed: Matrix::zeros(4, 2),
            traffic_embed: vec![Matrix::zeros(2, 2)],
        };
        let msg = relation_block(&s, &p).unwrap_err().to_string();
        assert!(msg.contains("obj0"), "{msg}");
    }

    #[test]
    fn encoders_identity_zero_and_oracle() {
        let mut rng = RngState::new(5);
        let s = sample(16, &[4; 6], &mut rng);
        let p = EncoderParams {
            visual_stub: Matrix::identity(5),
            actaware_stub: rng.normal_matrix(260, 384, 0.1),
        };
        assert_eq!(encode_visual(&s, &p).unwrap().data, s.visual_raw);

        let zero = Matrix::zeros(16, 260);
        let out = encode_nonvisual(&zero, &p).unwrap();
        assert!(out.data.data().iter().all(|&v| v == 0.0));

        let x = rng.normal_matrix(16, 260, 1.0);
        let out = encode_nonvisual(&x, &p).unwrap();
        assert_eq!(out.data, naive_matmul(&x, &p.actaware_stub));
        assert_eq!(out.width(), 384);
    }

    #[test]
    fn relation_backward_matches_finite_differences() {
        let mut rng = RngState::new(6);
        let s = sample(3, &[2, 3], &mut rng);
        let cfg = PipelineConfig {
            d1: 2,
            ..Default::default()
        };
        let p = RelationBlockParams::init(&cfg, &s.schema(), &mut rng);
        let weights = rng.normal_matrix(3, p.output_width(POSE_DIM), 1.0);
        let objective = |q: &RelationBlockParams| {
            let out = relation_block(&s, q).unwrap();
            out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let grads = relation_block_backward(&s, &p, &weights).unwrap();
        let numeric = crate::numeric::finite_difference_grad(
            |m| {
                let mut q = p.clone();
                q.traffic_embed[1] = m.clone();
                objective(&q)
            },
            &p.traffic_embed[1],
            1e-6,
        )
        .unwrap();
        for (a, n) in grads.traffic_embed[1].data().iter().zip(numeric.data()) {
            assert!((a - n).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn relation_block_is_linear_in_embedded_channels(a in -3.0f64..3.0, seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let mut s = sample(4, &[2, 3], &mut rng);
            s.pose = Matrix::zeros(4, POSE_DIM);
            let cfg = PipelineConfig { d1: 3, ..Default::default() };
            let p = RelationBlockParams::init(&cfg, &s.schema(), &mut rng);
            let base = relation_block(&s, &p).unwrap();
            let mut scaled = s.clone();
            scaled.bbox.scale(a);
            for c in &mut scaled.traffic_objects {
                c.data.scale(a);
            }
            let out = relation_block(&scaled, &p).unwrap();
            for (x, y) in out.data().iter().zip(base.data()) {
                prop_assert!((x - a * y).abs() < 1e-9);
            }
        }

        #[test]
        fn encoders_are_frame_local(seed in any::<u64>(), rot in 1usize..6) {
            let mut rng = RngState::new(seed);
            let s = sample(6, &[2], &mut rng);
            let cfg = PipelineConfig { d1: 2, d_v: 3, d_nv: 4, ..Default::default() };
            let rb = RelationBlockParams::init(&cfg, &s.schema(), &mut rng);
            let enc = EncoderParams::init(&cfg, &s.schema(), &mut rng);
            let permute = |m: &Matrix| {
                let mut rows = m.to_rows();
                rows.rotate_left(rot);
                Matrix::from_rows(&rows).unwrap()
            };
            let mut shuffled = s.clone();
            shuffled.visual_raw = permute(&s.visual_raw);
            shuffled.bbox = permute(&s.bbox);
            shuffled.pose = permute(&s.pose);
            for c in &mut shuffled.traffic_objects {
                c.data = permute(&c.data);
            }
            let v = encode_visual(&s, &enc).unwrap().data;
            let v_shuffled = encode_visual(&shuffled, &enc).unwrap().data;
            prop_assert_eq!(permute(&v), v_shuffled);
            let nv = encode_nonvisual(&relation_block(&s, &rb).unwrap(), &enc).unwrap().data;
            let nv_shuffled =
                encode_nonvisual(&relation_block(&shuffled, &rb).unwrap(), &enc).unwrap().data;
            prop_assert_eq!(permute(&nv), nv_shuffled);
        }
    }
}
