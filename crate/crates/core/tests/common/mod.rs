//! Independent straight-line reference implementations used as test oracles.
//! Everything here works on plain nested vectors and shares no code with the
//! library beyond reading parameter values.
#![allow(dead_code)]

use intent_core::cab::HeadParams;
use intent_core::model::ModelParams;
use intent_core::{Matrix, SampleRecord};

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn matmul(a: &Rows, b: &Matrix) -> Rows {
    a.iter()
        .map(|row| {
            (0..b.cols())
                .map(|j| (0..b.rows()).map(|k| row[k] * b[(k, j)]).sum())
                .collect()
        })
        .collect()
}

/// Local density and separation by brute force over all frame pairs.
///
/// A frame `j` is denser than `i` when `rho_j > rho_i`, or the densities are
/// equal and `j < i`.
pub fn density(x: &Rows, k: usize) -> (Vec<f64>, Vec<f64>) {
    let t = x.len();
    let dist: Rows = (0..t).map(|i| (0..t).map(|j| sq(&x[i], &x[j])).collect()).collect();
    let mut rho = vec![0.0; t];
    for i in 0..t {
        let mut others: Vec<(f64, usize)> = (0..t).filter(|&j| j != i).map(|j| (dist[i][j], j)).collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let s: f64 = others[..k].iter().map(|p| p.0).sum();
        rho[i] = (-s / k as f64).exp();
    }
    let mut delta = vec![0.0; t];
    for i in 0..t {
        let denser: Vec<usize> = (0..t)
            .filter(|&j| rho[j] > rho[i] || (rho[j] == rho[i] && j < i))
            .collect();
        delta[i] = if denser.is_empty() {
            (0..t).map(|j| dist[i][j]).fold(0.0, f64::max)
        } else {
            denser.iter().map(|&j| dist[i][j]).fold(f64::INFINITY, f64::min)
        };
    }
    (rho, delta)
}

/// Top-`m` frames by `rho * delta` (lower index wins ties), in time order.
pub fn centers(rho: &[f64], delta: &[f64], m: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..m {
        let mut best: Option<usize> = None;
        for i in 0..rho.len() {
            if chosen.contains(&i) {
                continue;
            }
            let g = rho[i] * delta[i];
            match best {
                Some(b) if rho[b] * delta[b] >= g => {}
                _ => best = Some(i),
            }
        }
        chosen.push(best.unwrap());
    }
    chosen.sort();
    chosen
}

/// Nearest centre; ties go to the temporally nearest centre, then the earlier one.
pub fn assign(x: &Rows, centers: &[usize]) -> Vec<usize> {
    (0..x.len())
        .map(|t| {
            let mut best = 0;
            for c in 1..centers.len() {
                let (d, bd) = (sq(&x[t], &x[centers[c]]), sq(&x[t], &x[centers[best]]));
                let (gap, bgap) = (t.abs_diff(centers[c]), t.abs_diff(centers[best]));
                if d < bd || (d == bd && gap < bgap) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn pool(x: &Rows, assignment: &[usize], m: usize) -> Rows {
    let d = x[0].len();
    let mut sums = vec![vec![0.0; d]; m];
    let mut counts = vec![0usize; m];
    for (row, &a) in x.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (s, c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= *c as f64);
    }
    sums
}

/// Events of one sequence: clustered when `m` is given, one per frame otherwise.
pub fn events(x: &Rows, k: usize, m: Option<usize>) -> Rows {
    match m {
        None => x.clone(),
        Some(m) => {
            let (rho, delta) = density(x, k);
            let c = centers(&rho, &delta, m);
            pool(x, &assign(x, &c), m)
        }
    }
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn vm(x: &[f64], w: &Matrix) -> Vec<f64> {
    matmul(&vec![x.to_vec()], w).remove(0)
}

/// `tanh([sum_n alpha_n E_n, q] W_proj)` with `alpha = softmax(q W_score E_n)`.
pub fn branch(e: &Rows, w_score: &Matrix, w_proj: &Matrix) -> Vec<f64> {
    let q = e.last().unwrap();
    let qw = vm(q, w_score);
    let scores: Vec<f64> = e.iter().map(|en| qw.iter().zip(en).map(|(a, b)| a * b).sum()).collect();
    let alpha = softmax(&scores);
    let mut pooled = vec![0.0; q.len()];
    for (a, en) in alpha.iter().zip(e) {
        for (p, v) in pooled.iter_mut().zip(en) {
            *p += a * v;
        }
    }
    let joined: Vec<f64> = pooled.iter().chain(q).cloned().collect();
    vm(&joined, w_proj).into_iter().map(f64::tanh).collect()
}

/// Full camera-head pipeline with both branches, clustering and attention on.
pub fn probability(params: &ModelParams, sample: &SampleRecord, k: usize, m: usize) -> f64 {
    let visual = matmul(&rows(&sample.visual_raw), &params.encoder.visual_stub);
    let mut relation: Rows = matmul(&rows(&sample.bbox), &params.relation.bbox_embed);
    for (ch, w) in sample.traffic_objects.iter().zip(&params.relation.traffic_embed) {
        let emb = matmul(&rows(&ch.data), w);
        for (r, e) in relation.iter_mut().zip(emb) {
            r.extend(e);
        }
    }
    for (r, p) in relation.iter_mut().zip(rows(&sample.pose)) {
        r.extend(p);
    }
    let nonvisual = matmul(&relation, &params.encoder.actaware_stub);

    let f = branch(
        &events(&visual, k, Some(m)),
        &params.cab.visual.w_score,
        &params.cab.visual.w_proj,
    );
    let fp = branch(
        &events(&nonvisual, k, Some(m)),
        &params.cab.nonvisual.w_score,
        &params.cab.nonvisual.w_proj,
    );
    let score = |a: &[f64], b: &[f64]| -> f64 { vm(a, &params.cab.w_cross).iter().zip(b).map(|(x, y)| x * y).sum() };
    let lambda = softmax(&[score(&fp, &f), score(&fp, &fp)]);
    let fused: Vec<f64> = f.iter().zip(&fp).map(|(a, b)| lambda[0] * a + lambda[1] * b).collect();
    let HeadParams::Camera { w_out, bias } = &params.cab.head else {
        panic!("oracle covers the camera head only");
    };
    let input: Vec<f64> = fused.iter().chain(&fp).cloned().collect();
    let logit: f64 = input.iter().zip(w_out.data()).map(|(a, b)| a * b).sum::<f64>() + bias[(0, 0)];
    1.0 / (1.0 + (-logit).exp())
}

/// `(tp + ties / 2) / (n_pos n_neg)` over every positive/negative pair.
pub fn pairwise_auc(p: &[f64], y: &[u8]) -> Option<f64> {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &yi) in y.iter().enumerate() {
        if yi == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        for (j, &yj) in y.iter().enumerate() {
            if yi == 1 && yj == 0 {
                twice += if p[i] > p[j] {
                    2
                } else if p[i] == p[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    (pos > 0 && neg > 0).then(|| twice as f64 / (2.0 * pos as f64 * neg as f64))
}
