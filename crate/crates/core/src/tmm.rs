//! Temporal merging: density-peaks clustering of the frames of one branch
//! into a small number of events.
//!
//! * local density `rho_t = exp(-(1/K) * sum of squared distances to the K
//!   nearest other frames)`;
//! * separation `delta_t` = squared distance to the nearest denser frame, or
//!   the largest squared distance from `t` when no frame is denser;
//! * the `M` frames with the largest `gamma = rho * delta` become centres;
//! * every other frame joins its nearest centre and each cluster is averaged.
//!
//! "Denser" compares `rho` first and breaks exact ties by frame index, so
//! duplicated frames (which have bit-identical densities) do not all claim
//! the maximal separation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::numeric::{squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `knn_index[t]` lists the `K` nearest other frames of `t`, nearest first.
    pub knn_index: Vec<Vec<usize>>,
}

/// Events pooled from one feature sequence, in temporal order of their centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    /// Centre frame of each event, strictly increasing.
    pub centers: Vec<usize>,
    /// Event id of every frame.
    pub assignment: Vec<usize>,
    /// `M x d`, row `m` is the mean of the frames assigned to event `m`.
    pub events: Matrix,
    pub member_counts: Vec<usize>,
}

impl EventSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// The temporally last event, used as the attention query.
    pub fn query(&self) -> &[f64] {
        self.events.row(self.events.rows() - 1)
    }

    /// Every frame is its own event.
    pub fn singletons(seq: &FeatureSequence) -> EventSet {
        let t = seq.frames();
        EventSet {
            centers: (0..t).collect(),
            assignment: (0..t).collect(),
            events: seq.data.clone(),
            member_counts: vec![1; t],
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn pairwise_squared(data: &Matrix) -> Vec<Vec<f64>> {
    let t = data.rows();
    let mut d = vec![vec![0.0; t]; t];
    for i in 0..t {
        for j in i + 1..t {
            let v = squared_distance(data.row(i), data.row(j));
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// `true` when frame `a` ranks strictly above frame `b` in density order.
fn denser(rho: &[f64], a: usize, b: usize) -> bool {
    match rho[a].partial_cmp(&rho[b]) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => a < b,
        _ => false,
    }
}

pub fn compute_density(seq: &FeatureSequence, k: usize) -> Result<DensityProfile> {
    let t = seq.frames();
    if k < 1 || k >= t {
        return Err(Error::Argument(format!(
            "neighbour count must satisfy 1 <= K <= T-1, got K={k} T={t}"
        )));
    }
    let dist = pairwise_squared(&seq.data);

    let mut rho = Vec::with_capacity(t);
    let mut knn_index = Vec::with_capacity(t);
    for (i, row) in dist.iter().enumerate() {
        let mut others: Vec<usize> = (0..t).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        others.truncate(k);
        let total: f64 = others.iter().map(|&j| row[j]).sum();
        rho.push((-total / k as f64).exp());
        knn_index.push(others);
    }

    let delta: Vec<f64> = (0..t)
        .map(|i| {
            let nearest_denser = (0..t)
                .filter(|&j| denser(&rho, j, i))
                .map(|j| dist[i][j])
                .min_by(f64::total_cmp);
            nearest_denser.unwrap_or_else(|| dist[i].iter().copied().fold(0.0, f64::max))
        })
        .collect();
    let gamma = rho.iter().zip(&delta).map(|(r, d)| r * d).collect();

    Ok(DensityProfile {
        rho,
        delta,
        gamma,
        knn_index,
    })
}

/// The `m` frames with the largest `gamma` (ties to the earlier frame), in temporal order.
pub fn select_centers(profile: &DensityProfile, m: usize) -> Result<Vec<usize>> {
    let t = profile.gamma.len();
    if m < 1 || m > t {
        return Err(Error::Argument(format!(
            "cluster count must satisfy 1 <= M <= T, got M={m} T={t}"
        )));
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| profile.gamma[b].total_cmp(&profile.gamma[a]).then(a.cmp(&b)));
    let mut centers = order[..m].to_vec();
    centers.sort_unstable();
    Ok(centers)
}

pub fn assign_and_pool(seq: &FeatureSequence, centers: &[usize]) -> Result<EventSet> {
    let t = seq.frames();
    let mut centers = centers.to_vec();
    centers.sort_unstable();
    if centers.is_empty() || centers.windows(2).any(|w| w[0] == w[1]) || centers.last().is_some_and(|&c| c >= t) {
        return Err(Error::Argument(format!(
            "centres must be distinct frame indices below {t}, got {centers:?}"
        )));
    }

    let assignment: Vec<usize> = (0..t)
        .map(|f| {
            if let Ok(own) = centers.binary_search(&f) {
                return own;
            }
            let row = seq.data.row(f);
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            let mut best_gap = usize::MAX;
            for (id, &c) in centers.iter().enumerate() {
                let d = squared_distance(row, seq.data.row(c));
                let gap = f.abs_diff(c);
                if d < best_dist || (d == best_dist && gap < best_gap) {
                    best = id;
                    best_dist = d;
                    best_gap = gap;
                }
            }
            best
        })
        .collect();

    let m = centers.len();
    let mut events = Matrix::zeros(m, seq.width());
    let mut member_counts = vec![0usize; m];
    for (f, &id) in assignment.iter().enumerate() {
        member_counts[id] += 1;
        for (e, v) in events.row_mut(id).iter_mut().zip(seq.data.row(f)) {
            *e += v;
        }
    }
    for (id, &count) in member_counts.iter().enumerate() {
        let inv = 1.0 / count as f64;
        events.row_mut(id).iter_mut().for_each(|v| *v *= inv);
    }

    Ok(EventSet {
        centers,
        assignment,
        events,
        member_counts,
    })
}

/// Clusters `seq` per the config; also returns the density profile when clustering ran.
pub fn merge_with_profile(seq: &FeatureSequence, cfg: &PipelineConfig) -> Result<(Option<DensityProfile>, EventSet)> {
    if !cfg.use_tmm {
        return Ok((None, EventSet::singletons(seq)));
    }
    let profile = compute_density(seq, cfg.neighbors)?;
    let centers = select_centers(&profile, cfg.clusters)?;
    let events = assign_and_pool(seq, &centers)?;
    Ok((Some(profile), events))
}

pub fn merge(seq: &FeatureSequence, cfg: &PipelineConfig) -> Result<EventSet> {
    merge_with_profile(seq, cfg).map(|(_, events)| events)
}
