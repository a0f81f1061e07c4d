//! Full model: relation block, stub encoders, temporal merging per branch
//! and the attention block, with a per-sample forward and backward pass.

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cab::{self, AttentionTrace, CabParams, HeadParams};
use crate::config::PipelineConfig;
use crate::data::{ChannelSchema, FeatureSequence, SampleRecord};
use crate::encoders::{
    encode_nonvisual, encode_visual, relation_block, relation_block_backward, EncoderParams, RelationBlockParams,
};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngState};
use crate::tmm::{merge_with_profile, DensityProfile, EventSet};

/// Every trainable matrix of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub relation: RelationBlockParams,
    pub encoder: EncoderParams,
    pub cab: CabParams,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, drawn from a stream derived from `seed`.
    pub fn init(cfg: &PipelineConfig, schema: &ChannelSchema, seed: u64) -> Self {
        let mut rng = RngState::new(seed).derive(3);
        let relation = RelationBlockParams::init(cfg, schema, &mut rng);
        let encoder = EncoderParams::init(cfg, schema, &mut rng);
        let cab = CabParams::init(cfg, &mut rng);
        ModelParams { relation, encoder, cab }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, m) in out.blocks_mut() {
            m.data_mut().fill(0.0);
        }
        out
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("relation.bbox_embed".to_string(), &self.relation.bbox_embed)];
        for (j, m) in self.relation.traffic_embed.iter().enumerate() {
            out.push((format!("relation.traffic_embed.{j}"), m));
        }
        out.push(("encoder.visual_stub".into(), &self.encoder.visual_stub));
        out.push(("encoder.actaware_stub".into(), &self.encoder.actaware_stub));
        out.push(("cab.visual.w_score".into(), &self.cab.visual.w_score));
        out.push(("cab.visual.w_proj".into(), &self.cab.visual.w_proj));
        out.push(("cab.nonvisual.w_score".into(), &self.cab.nonvisual.w_score));
        out.push(("cab.nonvisual.w_proj".into(), &self.cab.nonvisual.w_proj));
        out.push(("cab.w_cross".into(), &self.cab.w_cross));
        match &self.cab.head {
            HeadParams::Camera { w_out, bias } => {
                out.push(("cab.head.w_out".into(), w_out));
                out.push(("cab.head.bias".into(), bias));
            }
            HeadParams::Draft { w_hidden, w_fc, bias } => {
                out.push(("cab.head.w_hidden".into(), w_hidden));
                out.push(("cab.head.w_fc".into(), w_fc));
                out.push(("cab.head.bias".into(), bias));
            }
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::blocks`], same order and names.
    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![("relation.bbox_embed".to_string(), &mut self.relation.bbox_embed)];
        for (j, m) in self.relation.traffic_embed.iter_mut().enumerate() {
            out.push((format!("relation.traffic_embed.{j}"), m));
        }
        out.push(("encoder.visual_stub".into(), &mut self.encoder.visual_stub));
        out.push(("encoder.actaware_stub".into(), &mut self.encoder.actaware_stub));
        out.push(("cab.visual.w_score".into(), &mut self.cab.visual.w_score));
        out.push(("cab.visual.w_proj".into(), &mut self.cab.visual.w_proj));
        out.push(("cab.nonvisual.w_score".into(), &mut self.cab.nonvisual.w_score));
        out.push(("cab.nonvisual.w_proj".into(), &mut self.cab.nonvisual.w_proj));
        out.push(("cab.w_cross".into(), &mut self.cab.w_cross));
        match &mut self.cab.head {
            HeadParams::Camera { w_out, bias } => {
                out.push(("cab.head.w_out".into(), w_out));
                out.push(("cab.head.bias".into(), bias));
            }
            HeadParams::Draft { w_hidden, w_fc, bias } => {
                out.push(("cab.head.w_hidden".into(), w_hidden));
                out.push(("cab.head.w_fc".into(), w_fc));
                out.push(("cab.head.bias".into(), bias));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.len()).sum()
    }

    /// `sum theta^2` over every block.
    pub fn sum_squares(&self) -> f64 {
        self.blocks().iter().map(|(_, m)| m.sum_squares()).sum()
    }

    /// `self += scale * other`; both must have the same layout.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        let theirs = other.blocks();
        let mut ours = self.blocks_mut();
        if ours.len() != theirs.len() {
            return Err(Error::Contract(format!(
                "parameter sets have {} and {} blocks",
                ours.len(),
                theirs.len()
            )));
        }
        for ((name, a), (other_name, b)) in ours.iter_mut().zip(&theirs) {
            if name != other_name || a.shape() != b.shape() {
                return Err(Error::Contract(format!(
                    "block {name} {} does not match {other_name} {}",
                    a.shape(),
                    b.shape()
                )));
            }
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    /// Checks every block against the shapes implied by `cfg` and `schema`.
    pub fn check_compatible(&self, cfg: &PipelineConfig, schema: &ChannelSchema) -> Result<()> {
        let expected = ModelParams::init(cfg, schema, 0);
        let ours = self.blocks();
        let theirs = expected.blocks();
        for (name, want) in &theirs {
            match ours.iter().find(|(n, _)| n == name) {
                Some((_, have)) if have.shape() == want.shape() => {}
                Some((_, have)) => {
                    return Err(Error::Validation {
                        id: "checkpoint".into(),
                        field: name.clone(),
                        message: format!(
                            "parameter {name} has shape {} but the configuration implies {}",
                            have.shape(),
                            want.shape()
                        ),
                    })
                }
                None => {
                    return Err(Error::Validation {
                        id: "checkpoint".into(),
                        field: name.clone(),
                        message: format!("parameter {name} is missing"),
                    })
                }
            }
        }
        if let Some((name, _)) = ours.iter().find(|(n, _)| !theirs.iter().any(|(m, _)| m == n)) {
            return Err(Error::Validation {
                id: "checkpoint".into(),
                field: name.clone(),
                message: format!("parameter {name} is not used by this configuration"),
            });
        }
        Ok(())
    }
}

/// Intermediates of one sample's forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub relation_out: Option<Matrix>,
    pub visual: FeatureSequence,
    pub nonvisual: Option<FeatureSequence>,
    pub visual_profile: Option<DensityProfile>,
    pub nonvisual_profile: Option<DensityProfile>,
    pub events_visual: EventSet,
    pub events_nonvisual: Option<EventSet>,
    pub trace: AttentionTrace,
}

impl SampleForward {
    pub fn probability(&self) -> f64 {
        self.trace.p
    }
}

pub fn forward_sample(params: &ModelParams, sample: &SampleRecord, cfg: &PipelineConfig) -> Result<SampleForward> {
    if sample.frames() != cfg.frames {
        return Err(Error::Validation {
            id: sample.id.clone(),
            field: "visual_raw".into(),
            message: format!(
                "sample has {} frames, configuration expects T={}",
                sample.frames(),
                cfg.frames
            ),
        });
    }
    let ablation = cfg.ablation();
    let visual = encode_visual(sample, &params.encoder)?;
    let (visual_profile, events_visual) = merge_with_profile(&visual, cfg)?;

    let (relation_out, nonvisual, nonvisual_profile, events_nonvisual) = if ablation.use_nonvisual {
        let relation_out = relation_block(sample, &params.relation)?;
        let nonvisual = encode_nonvisual(&relation_out, &params.encoder)?;
        let (profile, events) = merge_with_profile(&nonvisual, cfg)?;
        (Some(relation_out), Some(nonvisual), profile, Some(events))
    } else {
        (None, None, None, None)
    };

    let trace = cab::forward(&events_visual, events_nonvisual.as_ref(), &params.cab, ablation)?;
    Ok(SampleForward {
        relation_out,
        visual,
        nonvisual,
        visual_profile,
        nonvisual_profile,
        events_visual,
        events_nonvisual,
        trace,
    })
}

/// Spreads each event gradient evenly over its member frames.
fn unpool(events: &EventSet, d_events: &Matrix) -> Matrix {
    let frames = events.assignment.len();
    let mut out = Matrix::zeros(frames, d_events.cols());
    for (t, &e) in events.assignment.iter().enumerate() {
        let share = 1.0 / events.member_counts[e] as f64;
        for (o, g) in out.row_mut(t).iter_mut().zip(d_events.row(e)) {
            *o = share * g;
        }
    }
    out
}

/// Accumulates `dL/dparams` for one sample into `grads`, given `dL/dp`.
pub fn backward_sample(
    params: &ModelParams,
    sample: &SampleRecord,
    fwd: &SampleForward,
    cfg: &PipelineConfig,
    grad_p: f64,
    grads: &mut ModelParams,
) -> Result<()> {
    let ablation = cfg.ablation();
    let g = cab::backward(
        &fwd.trace,
        &fwd.events_visual,
        fwd.events_nonvisual.as_ref(),
        &params.cab,
        ablation,
        grad_p,
    )?;
    let mut delta = params.zeros_like();
    delta.cab = g.params;

    let d_visual = unpool(&fwd.events_visual, &g.d_events_visual);
    delta.encoder.visual_stub = sample.visual_raw.transpose().matmul(&d_visual)?;

    if let (Some(d_events), Some(events), Some(relation_out)) =
        (&g.d_events_nonvisual, &fwd.events_nonvisual, &fwd.relation_out)
    {
        let d_nonvisual = unpool(events, d_events);
        delta.encoder.actaware_stub = relation_out.transpose().matmul(&d_nonvisual)?;
        let d_relation = d_nonvisual.matmul(&params.encoder.actaware_stub.transpose())?;
        delta.relation = relation_block_backward(sample, &params.relation, &d_relation)?;
    }
    grads.add_scaled(&delta, 1.0)
}

/// Crossing probabilities for every sample, in input order.
pub fn predict_all<S: Borrow<SampleRecord> + Sync>(
    params: &ModelParams,
    samples: &[S],
    cfg: &PipelineConfig,
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| forward_sample(params, s.borrow(), cfg).map(|f| f.probability()))
        .collect()
}
