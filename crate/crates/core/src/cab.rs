//! Contextual attention: event-level attention inside each branch, then
//! data-level fusion of the two branches, then the classifier head.
//!
//! Vectors are rows. For one branch with events `E` (`M x d`) and query
//! `q = E[M-1]`:
//!
//! ```text
//! s_n   = q W_score E_n^T          alpha = softmax(s)
//! E_p   = sum_n alpha_n E_n        F     = tanh([E_p, q] W_proj)
//! ```
//!
//! Across branches, with `score(a, b) = a W_cross b^T`:
//!
//! ```text
//! (lambda1, lambda2) = softmax(score(F', F), score(F', F'))
//! F_p = lambda1 F + lambda2 F'
//! p   = sigmoid([F_p, F'] w_out + b)
//! ```

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, HeadKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::numeric::{
    add_outer, bilinear, dot, mat_vec, sigmoid, softmax, softmax_backward, vec_mat, Matrix, RngState,
};
use crate::tmm::EventSet;

/// Attention parameters of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchAttentionParams {
    /// `d x d` bilinear score matrix.
    pub w_score: Matrix,
    /// `2d x d_f` projection of `[E_p, q]`.
    pub w_proj: Matrix,
}

impl BranchAttentionParams {
    pub fn init(d: usize, d_f: usize, rng: &mut RngState) -> Self {
        BranchAttentionParams {
            w_score: rng.glorot_matrix(d, d),
            w_proj: rng.glorot_matrix(2 * d, d_f),
        }
    }

    pub fn width(&self) -> usize {
        self.w_score.rows()
    }

    fn zeros_like(&self) -> Self {
        BranchAttentionParams {
            w_score: Matrix::zeros(self.w_score.rows(), self.w_score.cols()),
            w_proj: Matrix::zeros(self.w_proj.rows(), self.w_proj.cols()),
        }
    }

    fn check(&self, events: &Matrix, branch: &str) -> Result<()> {
        let d = events.cols();
        if self.w_score.rows() != d || self.w_score.cols() != d {
            return Err(Error::shape(
                "event_attention",
                format!("{branch} w_score {}", self.w_score.shape()),
                format!("events {}", events.shape()),
            ));
        }
        if self.w_proj.rows() != 2 * d {
            return Err(Error::shape(
                "event_attention",
                format!("{branch} w_proj {}", self.w_proj.shape()),
                format!("events {}", events.shape()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadParams {
    Camera {
        /// `2 d_f x 1`.
        w_out: Matrix,
        /// `1 x 1`.
        bias: Matrix,
    },
    Draft {
        /// `2 d_f x d_f`.
        w_hidden: Matrix,
        /// `d_f x 1`.
        w_fc: Matrix,
        /// `1 x 1`.
        bias: Matrix,
    },
}

impl HeadParams {
    pub fn init(kind: HeadKind, d_f: usize, rng: &mut RngState) -> Self {
        match kind {
            HeadKind::Camera => HeadParams::Camera {
                w_out: rng.glorot_matrix(2 * d_f, 1),
                bias: Matrix::zeros(1, 1),
            },
            HeadKind::Draft => HeadParams::Draft {
                w_hidden: rng.glorot_matrix(2 * d_f, d_f),
                w_fc: rng.glorot_matrix(d_f, 1),
                bias: Matrix::zeros(1, 1),
            },
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            HeadParams::Camera { .. } => HeadKind::Camera,
            HeadParams::Draft { .. } => HeadKind::Draft,
        }
    }

    fn input_width(&self) -> usize {
        match self {
            HeadParams::Camera { w_out, .. } => w_out.rows(),
            HeadParams::Draft { w_hidden, .. } => w_hidden.rows(),
        }
    }

    fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        match self {
            HeadParams::Camera { w_out, bias } => HeadParams::Camera {
                w_out: z(w_out),
                bias: z(bias),
            },
            HeadParams::Draft { w_hidden, w_fc, bias } => HeadParams::Draft {
                w_hidden: z(w_hidden),
                w_fc: z(w_fc),
                bias: z(bias),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CabParams {
    pub visual: BranchAttentionParams,
    pub nonvisual: BranchAttentionParams,
    /// `d_f x d_f` cross-branch score matrix.
    pub w_cross: Matrix,
    pub head: HeadParams,
}

impl CabParams {
    pub fn init(cfg: &PipelineConfig, rng: &mut RngState) -> Self {
        CabParams {
            visual: BranchAttentionParams::init(cfg.d_v, cfg.d_f, rng),
            nonvisual: BranchAttentionParams::init(cfg.d_nv, cfg.d_f, rng),
            w_cross: rng.glorot_matrix(cfg.d_f, cfg.d_f),
            head: HeadParams::init(cfg.head, cfg.d_f, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CabParams {
            visual: self.visual.zeros_like(),
            nonvisual: self.nonvisual.zeros_like(),
            w_cross: Matrix::zeros(self.w_cross.rows(), self.w_cross.cols()),
            head: self.head.zeros_like(),
        }
    }
}

/// Intermediates of event attention within one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTrace {
    pub alpha: Vec<f64>,
    #[serde(rename = "E_p")]
    pub pooled: Vec<f64>,
    #[serde(rename = "F")]
    pub fused: Vec<f64>,
}

/// Everything computed by one forward pass of the attention block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub visual: BranchTrace,
    pub nonvisual: Option<BranchTrace>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    #[serde(rename = "F_p")]
    pub fused: Vec<f64>,
    /// Hidden layer of the draft head.
    #[serde(rename = "O", skip_serializing_if = "Option::is_none", default)]
    pub hidden: Option<Vec<f64>>,
    pub logit: f64,
    pub p: f64,
}

impl AttentionTrace {
    /// `F`.
    pub fn f(&self) -> &[f64] {
        &self.visual.fused
    }

    /// `F'`, when the non-visual branch is active.
    pub fn f_prime(&self) -> Option<&[f64]> {
        self.nonvisual.as_ref().map(|b| b.fused.as_slice())
    }
}

/// Attention over the events of one branch, queried by the last event.
/// With `use_attention = false` the weights are uniform.
pub fn event_attention(events: &EventSet, params: &BranchAttentionParams, use_attention: bool) -> Result<BranchTrace> {
    let e = &events.events;
    if e.rows() == 0 {
        return Err(Error::Argument("event attention needs at least one event".into()));
    }
    params.check(e, "branch")?;
    let m = e.rows();
    let query = events.query();

    let alpha = if use_attention {
        let scored = vec_mat(query, &params.w_score);
        let scores: Vec<f64> = (0..m).map(|n| dot(&scored, e.row(n))).collect();
        softmax(&scores)?
    } else {
        vec![1.0 / m as f64; m]
    };

    let mut pooled = vec![0.0; e.cols()];
    for (n, &a) in alpha.iter().enumerate() {
        for (p, v) in pooled.iter_mut().zip(e.row(n)) {
            *p += a * v;
        }
    }
    let joined: Vec<f64> = pooled.iter().chain(query).copied().collect();
    let fused = vec_mat(&joined, &params.w_proj).into_iter().map(f64::tanh).collect();
    Ok(BranchTrace { alpha, pooled, fused })
}

/// Data-level fusion. Returns `(F_p, lambda1, lambda2)`.
pub fn data_fusion(f: &[f64], f_prime: &[f64], w_cross: &Matrix) -> Result<(Vec<f64>, f64, f64)> {
    if f.len() != f_prime.len() || w_cross.rows() != f.len() || w_cross.cols() != f.len() {
        return Err(Error::shape(
            "data_fusion",
            format!("F {} / F' {}", f.len(), f_prime.len()),
            format!("w_cross {}", w_cross.shape()),
        ));
    }
    let lambdas = softmax(&[bilinear(f_prime, w_cross, f), bilinear(f_prime, w_cross, f_prime)])?;
    let fused = f
        .iter()
        .zip(f_prime)
        .map(|(a, b)| lambdas[0] * a + lambdas[1] * b)
        .collect();
    Ok((fused, lambdas[0], lambdas[1]))
}

/// Classifier head over `[F_p, partner]`. Returns `(logit, p, hidden)`.
pub fn predict(fused: &[f64], partner: &[f64], head: &HeadParams) -> Result<(f64, f64, Option<Vec<f64>>)> {
    let input: Vec<f64> = fused.iter().chain(partner).copied().collect();
    if input.len() != head.input_width() {
        return Err(Error::shape(
            "predict",
            format!("head input {}", input.len()),
            format!("head expects {}", head.input_width()),
        ));
    }
    let (logit, hidden) = match head {
        HeadParams::Camera { w_out, bias } => (dot(&input, w_out.data()) + bias[(0, 0)], None),
        HeadParams::Draft { w_hidden, w_fc, bias } => {
            let hidden: Vec<f64> = vec_mat(&input, w_hidden).into_iter().map(f64::tanh).collect();
            (dot(&hidden, w_fc.data()) + bias[(0, 0)], Some(hidden))
        }
    };
    if !logit.is_finite() {
        return Err(Error::NonFinite("classifier logit".into()));
    }
    Ok((logit, sigmoid(logit), hidden))
}

/// Second half of the head input: `F'` for the camera head, `F` for the
/// draft head, and `F` whenever the non-visual branch is off.
fn head_partner<'a>(trace_visual: &'a BranchTrace, nonvisual: Option<&'a BranchTrace>, head: HeadKind) -> &'a [f64] {
    match (head, nonvisual) {
        (HeadKind::Camera, Some(nv)) => &nv.fused,
        _ => &trace_visual.fused,
    }
}

pub fn forward(
    events_v: &EventSet,
    events_nv: Option<&EventSet>,
    params: &CabParams,
    ablation: Ablation,
) -> Result<AttentionTrace> {
    let visual = event_attention(events_v, &params.visual, ablation.use_cab)?;
    let (nonvisual, fused, lambda1, lambda2) = if ablation.use_nonvisual {
        let events_nv = events_nv
            .ok_or_else(|| Error::Contract("non-visual events are required when the non-visual branch is on".into()))?;
        let nv = event_attention(events_nv, &params.nonvisual, ablation.use_cab)?;
        let (fused, l1, l2) = if ablation.use_cab {
            data_fusion(&visual.fused, &nv.fused, &params.w_cross)?
        } else {
            let fused = visual
                .fused
                .iter()
                .zip(&nv.fused)
                .map(|(a, b)| 0.5 * a + 0.5 * b)
                .collect();
            (fused, 0.5, 0.5)
        };
        (Some(nv), fused, Some(l1), Some(l2))
    } else {
        (None, visual.fused.clone(), None, None)
    };
    let partner = head_partner(&visual, nonvisual.as_ref(), params.head.kind());
    let (logit, p, hidden) = predict(&fused, partner, &params.head)?;
    debug_assert!(
        std::iter::once(&visual)
            .chain(&nonvisual)
            .all(|b| (b.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12),
        "event weights do not sum to one"
    );
    debug_assert!(
        lambda1.zip(lambda2).is_none_or(|(a, b)| (a + b - 1.0).abs() <= 1e-12),
        "fusion weights do not sum to one"
    );
    debug_assert!(p > 0.0 && p < 1.0, "probability {p} outside (0, 1)");
    Ok(AttentionTrace {
        visual,
        nonvisual,
        lambda1,
        lambda2,
        fused,
        hidden,
        logit,
        p,
    })
}

/// Gradients returned by [`backward`].
#[derive(Debug, Clone)]
pub struct CabGradients {
    pub params: CabParams,
    pub d_events_visual: Matrix,
    pub d_events_nonvisual: Option<Matrix>,
}

fn branch_backward(
    events: &EventSet,
    trace: &BranchTrace,
    params: &BranchAttentionParams,
    grad_fused: &[f64],
    use_attention: bool,
    grads: &mut BranchAttentionParams,
) -> Matrix {
    let e = &events.events;
    let (m, d) = (e.rows(), e.cols());
    let query = events.query();
    let mut d_events = Matrix::zeros(m, d);

    // F = tanh(u W_proj), u = [E_p, q].
    let d_pre: Vec<f64> = grad_fused
        .iter()
        .zip(&trace.fused)
        .map(|(g, f)| g * (1.0 - f * f))
        .collect();
    let joined: Vec<f64> = trace.pooled.iter().chain(query).copied().collect();
    add_outer(&mut grads.w_proj, &joined, &d_pre, 1.0);
    let d_joined = mat_vec(&params.w_proj, &d_pre);
    let (d_pooled, d_query_direct) = d_joined.split_at(d);
    let mut d_query = d_query_direct.to_vec();

    // E_p = sum_n alpha_n E_n.
    let d_alpha: Vec<f64> = (0..m).map(|n| dot(d_pooled, e.row(n))).collect();
    for (n, a) in trace.alpha.iter().enumerate() {
        for (g, p) in d_events.row_mut(n).iter_mut().zip(d_pooled) {
            *g += a * p;
        }
    }

    if use_attention {
        // s_n = q W E_n^T.
        let d_scores = softmax_backward(&trace.alpha, &d_alpha);
        let q_w = vec_mat(query, &params.w_score);
        for (n, &ds) in d_scores.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            add_outer(&mut grads.w_score, query, e.row(n), ds);
            let w_e = mat_vec(&params.w_score, e.row(n));
            for (g, v) in d_query.iter_mut().zip(&w_e) {
                *g += ds * v;
            }
            for (g, v) in d_events.row_mut(n).iter_mut().zip(&q_w) {
                *g += ds * v;
            }
        }
    }

    for (g, v) in d_events.row_mut(m - 1).iter_mut().zip(&d_query) {
        *g += v;
    }
    d_events
}

fn check_trace(trace: &AttentionTrace, events: &EventSet, branch: &BranchTrace, name: &str) -> Result<()> {
    if branch.alpha.len() != events.len() || branch.pooled.len() != events.events.cols() {
        return Err(Error::Contract(format!(
            "{name} trace has {} weights over width {}, events are {}",
            branch.alpha.len(),
            branch.pooled.len(),
            events.events.shape()
        )));
    }
    if branch.fused.len() != trace.fused.len() {
        return Err(Error::Contract(format!("{name} trace width disagrees with F_p")));
    }
    Ok(())
}

/// Analytic gradients of a scalar loss given `dL/dp`.
///
/// Cluster assignments are constants of the forward pass; gradients reach
/// the events (and through them the member frames) only via pooling.
pub fn backward(
    trace: &AttentionTrace,
    events_v: &EventSet,
    events_nv: Option<&EventSet>,
    params: &CabParams,
    ablation: Ablation,
    grad_p: f64,
) -> Result<CabGradients> {
    check_trace(trace, events_v, &trace.visual, "visual")?;
    let nv_pair = match (ablation.use_nonvisual, &trace.nonvisual, events_nv) {
        (true, Some(t), Some(e)) => {
            check_trace(trace, e, t, "non-visual")?;
            Some((t, e))
        }
        (false, None, _) => None,
        _ => {
            return Err(Error::Contract(
                "trace and ablation flags disagree about the non-visual branch".into(),
            ))
        }
    };
    if trace.hidden.is_some() != matches!(params.head, HeadParams::Draft { .. }) {
        return Err(Error::Contract("trace was produced by a different head".into()));
    }

    let mut grads = params.zeros_like();
    let d_f = trace.fused.len();
    let d_logit = grad_p * trace.p * (1.0 - trace.p);

    let partner = head_partner(&trace.visual, trace.nonvisual.as_ref(), params.head.kind());
    let input: Vec<f64> = trace.fused.iter().chain(partner).copied().collect();
    let d_input = match (&params.head, &mut grads.head) {
        (HeadParams::Camera { w_out, .. }, HeadParams::Camera { w_out: gw, bias: gb }) => {
            add_outer(gw, &input, &[d_logit], 1.0);
            gb[(0, 0)] += d_logit;
            w_out.data().iter().map(|w| w * d_logit).collect::<Vec<_>>()
        }
        (
            HeadParams::Draft { w_hidden, w_fc, .. },
            HeadParams::Draft {
                w_hidden: gh,
                w_fc: gfc,
                bias: gb,
            },
        ) => {
            let hidden = trace.hidden.as_deref().unwrap_or_default();
            add_outer(gfc, hidden, &[d_logit], 1.0);
            gb[(0, 0)] += d_logit;
            let d_pre: Vec<f64> = w_fc
                .data()
                .iter()
                .zip(hidden)
                .map(|(w, o)| w * d_logit * (1.0 - o * o))
                .collect();
            add_outer(gh, &input, &d_pre, 1.0);
            mat_vec(w_hidden, &d_pre)
        }
        _ => unreachable!("gradient head mirrors parameter head"),
    };
    let (d_fused, d_partner) = d_input.split_at(d_f);

    let f = &trace.visual.fused;
    let mut d_f_vis = vec![0.0; d_f];
    let mut d_f_nv = vec![0.0; d_f];

    match nv_pair {
        Some((nv, _)) => {
            let f_prime = &nv.fused;
            match params.head.kind() {
                HeadKind::Camera => add_into(&mut d_f_nv, d_partner, 1.0),
                HeadKind::Draft => add_into(&mut d_f_vis, d_partner, 1.0),
            }
            let (l1, l2) = (trace.lambda1.unwrap_or(0.5), trace.lambda2.unwrap_or(0.5));
            add_into(&mut d_f_vis, d_fused, l1);
            add_into(&mut d_f_nv, d_fused, l2);
            if ablation.use_cab {
                let d_lambda = [dot(d_fused, f), dot(d_fused, f_prime)];
                let d_scores = softmax_backward(&[l1, l2], &d_lambda);
                let w = &params.w_cross;
                // score(F', F) = F' W F^T
                add_outer(&mut grads.w_cross, f_prime, f, d_scores[0]);
                add_into(&mut d_f_nv, &mat_vec(w, f), d_scores[0]);
                add_into(&mut d_f_vis, &vec_mat(f_prime, w), d_scores[0]);
                // score(F', F') = F' W F'^T
                add_outer(&mut grads.w_cross, f_prime, f_prime, d_scores[1]);
                add_into(&mut d_f_nv, &mat_vec(w, f_prime), d_scores[1]);
                add_into(&mut d_f_nv, &vec_mat(f_prime, w), d_scores[1]);
            }
        }
        None => {
            add_into(&mut d_f_vis, d_fused, 1.0);
            add_into(&mut d_f_vis, d_partner, 1.0);
        }
    }

    let d_events_visual = branch_backward(
        events_v,
        &trace.visual,
        &params.visual,
        &d_f_vis,
        ablation.use_cab,
        &mut grads.visual,
    );
    let d_events_nonvisual = nv_pair.map(|(nv, events)| {
        branch_backward(
            events,
            nv,
            &params.nonvisual,
            &d_f_nv,
            ablation.use_cab,
            &mut grads.nonvisual,
        )
    });
    Ok(CabGradients {
        params: grads,
        d_events_visual,
        d_events_nonvisual,
    })
}

fn add_into(target: &mut [f64], src: &[f64], scale: f64) {
    for (t, s) in target.iter_mut().zip(src) {
        *t += scale * s;
    }
}
