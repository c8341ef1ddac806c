//! Approximate D-optimal designs over a finite action set.
//!
//! The solver works in the span of the actions: an orthonormal basis comes
//! from an SVD of the action matrix, actions are projected onto it, and a
//! Frank-Wolfe (Fedorov-Wynn) iteration with away steps and exact line search
//! maximizes `log det M(pi)` there. The Kiefer-Wolfowitz bound `g(pi) >= rank` gives
//! the stopping certificate `g(pi) <= (1 + tol) * rank`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::quad_form;

/// Iteration cap for the Frank-Wolfe loop.
pub const MAX_ITERATIONS: usize = 10_000;
/// Weights below this are pruned from the returned support.
pub const PRUNE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// `(action index, weight)` with positive weights summing to one.
    pub support: Vec<(usize, f64)>,
    /// `max_a |a|^2_{M(pi)^-1}` over all input actions, measured in their span.
    pub g_value: f64,
    /// Rank of the span of the actions.
    pub effective_dim: usize,
    /// `log det M(pi)` restricted to the span.
    pub log_det: f64,
    /// Objective value after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
}

impl Design {
    /// Weight of action `index`, zero when it is not in the support.
    pub fn weight(&self, index: usize) -> f64 {
        self.support
            .iter()
            .find(|(i, _)| *i == index)
            .map_or(0.0, |(_, w)| *w)
    }
}

/// Orthonormal coordinates of `actions` within their span.
struct Projected {
    rank: usize,
    coords: Vec<Vec<f64>>,
}

fn project_to_span(actions: &[&[f64]]) -> Result<Projected> {
    let d = actions[0].len();
    if actions.iter().any(|a| a.len() != d) {
        return Err(Error::input("actions have inconsistent dimensions"));
    }
    if actions.iter().flat_map(|a| a.iter()).any(|x| !x.is_finite()) {
        return Err(Error::input("actions contain non-finite entries"));
    }
    let k = actions.len();
    let x = DMatrix::from_fn(d, k, |i, j| actions[j][i]);
    let svd = x.svd(true, false);
    let u = svd.u.as_ref().expect("requested U");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return Err(Error::input("all actions are zero"));
    }
    let cutoff = sigma_max * (d.max(k) as f64) * f64::EPSILON * 16.0;
    let basis: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > cutoff)
        .map(|(i, _)| i)
        .collect();
    let coords = actions
        .iter()
        .map(|a| {
            basis
                .iter()
                .map(|&c| (0..d).map(|i| u[(i, c)] * a[i]).sum())
                .collect()
        })
        .collect();
    Ok(Projected {
        rank: basis.len(),
        coords,
    })
}

/// Picks `rank` actions greedily by residual norm (Gram-Schmidt volume growth).
fn volumetric_init(coords: &[Vec<f64>], rank: usize) -> Vec<usize> {
    let mut residuals: Vec<Vec<f64>> = coords.to_vec();
    let mut picked = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut best = None;
        let mut best_norm = 0.0;
        for (i, r) in residuals.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            let n: f64 = r.iter().map(|x| x * x).sum();
            if n > best_norm {
                best_norm = n;
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        picked.push(b);
        let q: Vec<f64> = residuals[b].iter().map(|x| x / best_norm.sqrt()).collect();
        for r in residuals.iter_mut() {
            let p: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
            for (x, qi) in r.iter_mut().zip(&q) {
                *x -= p * qi;
            }
        }
    }
    picked
}

fn moment_matrix(coords: &[Vec<f64>], weights: &[f64], rank: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rank, rank);
    for (z, &w) in coords.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for j in 0..rank {
            for i in 0..rank {
                m[(i, j)] += w * z[i] * z[j];
            }
        }
    }
    m
}

/// `(log det M, per-action leverage |z|^2_{M^-1})`, or `None` if `M` is singular.
fn evaluate(coords: &[Vec<f64>], weights: &[f64], rank: usize) -> Option<(f64, Vec<f64>)> {
    let m = moment_matrix(coords, weights, rank);
    let chol = m.cholesky()?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let inv = chol.inverse();
    let g = coords.iter().map(|z| quad_form(&inv, z)).collect();
    Some((logdet, g))
}

fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Approximate D-optimal design with certificate `g <= (1 + tol) * rank`.
pub fn d_optimal_design(actions: &[&[f64]], tol: f64) -> Result<Design> {
    if actions.is_empty() {
        return Err(Error::input("design needs at least one action"));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::input(format!("tolerance must be positive, got {tol}")));
    }
    let Projected { rank, coords } = project_to_span(actions)?;
    let k = coords.len();

    let mut weights = vec![0.0; k];
    let init = volumetric_init(&coords, rank);
    for &i in &init {
        weights[i] = 1.0 / init.len() as f64;
    }

    let target = (1.0 + tol) * rank as f64;
    let r = rank as f64;
    let (mut logdet, mut g) = evaluate(&coords, &weights, rank)
        .ok_or_else(|| Error::Internal("initial design does not span the actions".into()))?;
    let mut trace = vec![logdet];
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (best, g_max) = argmax_first(&g);
        if g_max <= target {
            converged = true;
            break;
        }
        let (worst, g_min) = weights
            .iter()
            .zip(&g)
            .enumerate()
            .filter(|(_, (w, _))| **w > 0.0)
            .map(|(i, (_, gi))| (i, *gi))
            .fold((usize::MAX, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        // away step: shrink the support point with the smallest variance
        let (index, step) = if r - g_min > g_max - r && weights[worst] < 1.0 {
            let w = weights[worst];
            let floor = -w / (1.0 - w);
            let step = if g_min > 1.0 { ((g_min / r - 1.0) / (g_min - 1.0)).max(floor) } else { floor };
            (worst, step)
        } else {
            (best, (g_max / r - 1.0) / (g_max - 1.0))
        };
        for w in weights.iter_mut() {
            *w *= 1.0 - step;
        }
        weights[index] += step;
        if weights[index] < PRUNE_THRESHOLD * 1e-3 {
            weights[index] = 0.0;
        }
        let (next_logdet, next_g) = evaluate(&coords, &weights, rank)
            .ok_or_else(|| Error::Internal("design lost full rank".into()))?;
        debug_assert!(next_logdet >= logdet - 1e-9 * logdet.abs().max(1.0));
        logdet = next_logdet;
        g = next_g;
        trace.push(logdet);
    }
    if !converged {
        warn!(
            "D-optimal design hit {MAX_ITERATIONS} iterations with g = {:.6} > {:.6}",
            argmax_first(&g).1,
            target
        );
    }

    let total: f64 = weights.iter().filter(|w| **w >= PRUNE_THRESHOLD).sum();
    for w in weights.iter_mut() {
        *w = if *w >= PRUNE_THRESHOLD { *w / total } else { 0.0 };
    }
    let (logdet, g) = evaluate(&coords, &weights, rank)
        .ok_or_else(|| Error::Internal("pruned design lost full rank".into()))?;
    let g_value = argmax_first(&g).1;
    if converged && g_value > target {
        warn!("pruning moved g to {g_value:.6}, above certificate {target:.6}");
    }
    let support: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, w)| (i, *w))
        .collect();
    let sparse_bound = rank * (rank + 1) / 2 + 1;
    if support.len() > sparse_bound {
        warn!(
            "design support {} exceeds the sparse bound {sparse_bound}",
            support.len()
        );
    }
    Ok(Design {
        support,
        g_value,
        effective_dim: rank,
        log_det: logdet,
        objective_trace: trace,
    })
}

/// Integer pull counts totalling `m`, aligned with `design.support`.
///
/// Ceiling-rounds each `m * pi(a)` and trims the excess from the largest
/// allocations, so every support action keeps at least one pull and
/// `|count / m - pi| <= |support| / m`.
pub fn round_allocation(design: &Design, m: usize) -> Result<Vec<usize>> {
    let n = design.support.len();
    if n == 0 {
        return Err(Error::input("design has empty support"));
    }
    if m < n {
        return Err(Error::input(format!(
            "cannot allocate {m} pulls over a support of {n} actions"
        )));
    }
    let mf = m as f64;
    let mut counts: Vec<usize> = design
        .support
        .iter()
        .map(|(_, w)| ((mf * w - 1e-9).ceil().max(1.0)) as usize)
        .collect();
    let mut total: usize = counts.iter().sum();
    while total > m {
        let (i, _) = counts
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
        debug_assert!(counts[i] > 1);
        counts[i] -= 1;
        total -= 1;
    }
    while total < m {
        let i = (0..n)
            .max_by(|&a, &b| {
                let da = mf * design.support[a].1 - counts[a] as f64;
                let db = mf * design.support[b].1 - counts[b] as f64;
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .expect("non-empty support");
        counts[i] += 1;
        total += 1;
    }
    Ok(counts)
}

/// `log det sum_k w_k a_k a_k^T` computed densely in the ambient space.
pub fn ambient_logdet(actions: &[&[f64]], weights: &[f64]) -> Option<f64> {
    let d = actions.first()?.len();
    let mut m = DMatrix::zeros(d, d);
    for (a, &w) in actions.iter().zip(weights) {
        let v = DVector::from_column_slice(a);
        m += w * &v * v.transpose();
    }
    crate::linalg::dense_logdet(&m)
}
