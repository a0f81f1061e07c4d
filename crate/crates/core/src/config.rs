use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the pose keypoint vector (18 joints in 2D).
pub const POSE_DIM: usize = 36;

/// Classifier head applied to the fused representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `p = sigmoid(W [F_p; F'] + b)`.
    #[default]
    Camera,
    /// `O = tanh(W [F_p; F])` followed by a fully connected layer and a sigmoid.
    Draft,
}

/// Component switches used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_nonvisual: bool,
    pub use_tmm: bool,
    pub use_cab: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_nonvisual: true,
            use_tmm: true,
            use_cab: true,
        }
    }
}

/// Every tunable of the pipeline. Serialised names use the conventional
/// symbols (`T`, `M`, `K`, `d_v`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Observation length in frames.
    #[serde(rename = "T")]
    pub frames: usize,
    /// Number of events produced by temporal merging.
    #[serde(rename = "M")]
    pub clusters: usize,
    /// Neighbour count for the local density estimate.
    #[serde(rename = "K")]
    pub neighbors: usize,
    /// Visual feature width after the visual encoder.
    pub d_v: usize,
    /// Embedding width of the bounding box and of each traffic object.
    pub d1: usize,
    /// Pose width.
    pub d2: usize,
    /// Non-visual feature width after the action-aware encoder.
    pub d_nv: usize,
    /// Width of the fused branch vectors `F` and `F'`.
    pub d_f: usize,
    pub head: HeadKind,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub rmsprop_decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub val_fraction: f64,
    pub threshold: f64,
    pub seed: u64,
    pub use_nonvisual: bool,
    pub use_tmm: bool,
    pub use_cab: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            frames: 16,
            clusters: 3,
            neighbors: 4,
            d_v: 64,
            d1: 32,
            d2: POSE_DIM,
            d_nv: 384,
            d_f: 128,
            head: HeadKind::Camera,
            learning_rate: 1e-5,
            l2_lambda: 1e-3,
            rmsprop_decay: 0.9,
            epsilon: 1e-8,
            batch_size: 2,
            epochs: 30,
            val_fraction: 0.2,
            threshold: 0.5,
            seed: 0,
            use_nonvisual: true,
            use_tmm: true,
            use_cab: true,
        }
    }
}

impl PipelineConfig {
    pub fn ablation(&self) -> Ablation {
        Ablation {
            use_nonvisual: self.use_nonvisual,
            use_tmm: self.use_tmm,
            use_cab: self.use_cab,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.use_nonvisual = ablation.use_nonvisual;
        self.use_tmm = ablation.use_tmm;
        self.use_cab = ablation.use_cab;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |msg: String| Err(Error::Argument(msg));
        if self.frames < 2 {
            return arg(format!("T must be at least 2, got {}", self.frames));
        }
        if self.clusters < 1 || self.clusters >= self.frames {
            return arg(format!(
                "M must satisfy 1 <= M < T, got M={} T={}",
                self.clusters, self.frames
            ));
        }
        if self.neighbors < 1 || self.neighbors >= self.frames {
            return arg(format!(
                "K must satisfy 1 <= K < T, got K={} T={}",
                self.neighbors, self.frames
            ));
        }
        for (name, w) in [
            ("d_v", self.d_v),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d_nv", self.d_nv),
            ("d_f", self.d_f),
            ("batch_size", self.batch_size),
        ] {
            if w == 0 {
                return arg(format!("{name} must be at least 1"));
            }
        }
        if self.d2 != POSE_DIM {
            return arg(format!("d2 must equal the pose width {POSE_DIM}, got {}", self.d2));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return arg(format!("epsilon must be positive, got {}", self.epsilon));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("l2_lambda", self.l2_lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return arg(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return arg(format!("rmsprop_decay must lie in (0, 1), got {}", self.rmsprop_decay));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return arg(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return arg(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }
}
