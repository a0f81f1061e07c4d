//! Cluster-count sweep, ablation study and event-recovery scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, PipelineConfig};
use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::train::{train, TrainReport};

/// True iff the two labelings induce the same partition of frames.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut forward = std::collections::HashMap::new();
    let mut backward = std::collections::HashMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *forward.entry(x).or_insert(y) == y && *backward.entry(y).or_insert(x) == x)
}

/// Fraction of frames whose label agrees under the best one-to-one relabeling.
pub fn frame_agreement(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Argument(format!(
            "cannot compare labelings of length {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let labels = |v: &[usize]| v.iter().max().map_or(0, |m| m + 1);
    let (np, nt) = (labels(predicted), labels(truth));
    let n = np.max(nt);
    if n > 8 {
        return Err(Error::Argument(format!(
            "{n} labels are too many to match exhaustively"
        )));
    }
    let mut overlap = vec![vec![0usize; n]; n];
    for (&p, &t) in predicted.iter().zip(truth) {
        overlap[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let best = best_matching(&overlap, &mut perm, 0);
    Ok(best as f64 / predicted.len() as f64)
}

fn best_matching(overlap: &[Vec<usize>], perm: &mut [usize], k: usize) -> usize {
    if k == perm.len() {
        return (0..perm.len()).map(|i| overlap[i][perm[i]]).sum();
    }
    let mut best = 0;
    for i in k..perm.len() {
        perm.swap(k, i);
        best = best.max(best_matching(overlap, perm, k + 1));
        perm.swap(k, i);
    }
    best
}

/// Held-out and training metrics of one trained configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub config: PipelineConfig,
    pub train: MetricReport,
    pub val: Option<MetricReport>,
    pub final_loss: f64,
}

impl RunSummary {
    pub fn from_report(label: String, report: &TrainReport) -> Self {
        RunSummary {
            label,
            config: report.config.clone(),
            train: report.final_train.clone(),
            val: report.final_val.clone(),
            final_loss: report.epoch_loss.last().copied().unwrap_or(f64::NAN),
        }
    }

    pub fn val_f1(&self) -> Option<f64> {
        self.val.as_ref().map(|r| r.f1)
    }

    pub fn val_auc(&self) -> Option<f64> {
        self.val.as_ref().and_then(|r| r.auc)
    }
}

/// Trains one model per cluster count with otherwise identical settings.
pub fn sweep_m(dataset: &[SampleRecord], cfg: &PipelineConfig, ms: &[usize]) -> Result<Vec<RunSummary>> {
    if ms.is_empty() {
        return Err(Error::Argument("the cluster-count list is empty".into()));
    }
    ms.par_iter()
        .map(|&m| {
            let run_cfg = PipelineConfig {
                clusters: m,
                ..cfg.clone()
            };
            let (_, report) = train(dataset, &run_cfg)?;
            Ok(RunSummary::from_report(format!("M={m}"), &report))
        })
        .collect()
}

/// The full model and each single-component removal.
pub fn ablation_variants() -> Vec<(&'static str, Ablation)> {
    let full = Ablation::default();
    vec![
        ("full", full),
        (
            "without_nonvisual",
            Ablation {
                use_nonvisual: false,
                ..full
            },
        ),
        ("without_tmm", Ablation { use_tmm: false, ..full }),
        ("without_cab", Ablation { use_cab: false, ..full }),
    ]
}

pub fn ablation_study(dataset: &[SampleRecord], cfg: &PipelineConfig) -> Result<Vec<RunSummary>> {
    ablation_variants()
        .into_par_iter()
        .map(|(name, ablation)| {
            let run_cfg = cfg.clone().with_ablation(ablation);
            let (_, report) = train(dataset, &run_cfg)?;
            Ok(RunSummary::from_report(name.to_string(), &report))
        })
        .collect()
}
