//! LinUCB, linear Thompson sampling, epsilon-greedy and explore-then-commit.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::state::LinearState;
use super::{argmax, Policy};
use crate::envs::RoundContext;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::BanditRng;

fn greedy(state: &LinearState, ctx: &RoundContext) -> Result<usize> {
    if ctx.actions.dim() != state.design().dim() {
        return Err(Error::Dimension {
            expected: state.design().dim(),
            got: ctx.actions.dim(),
        });
    }
    let means: Vec<f64> = ctx.actions.iter().map(|a| dot(a, state.theta_hat())).collect();
    Ok(argmax(&means))
}

/// `argmax <a, theta_hat> + width * |a|_{V^-1}`.
pub fn linucb_select(state: &LinearState, ctx: &RoundContext) -> Result<usize> {
    Ok(argmax(&state.bounds(&ctx.actions)?.ucb))
}

/// Samples `theta ~ N(theta_hat, scale^2 V^-1)` and plays its greedy action.
pub fn lints_select(state: &LinearState, ctx: &RoundContext, scale: f64, rng: &mut BanditRng) -> Result<usize> {
    let d = state.design().dim();
    let inv = state
        .design()
        .inverse()
        .ok_or_else(|| Error::RankDeficient("posterior covariance is singular".into()))?;
    let chol = inv
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Internal("posterior covariance is not positive definite".into()))?;
    let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
    let shift = chol.l() * z;
    let sample: Vec<f64> = state
        .theta_hat()
        .iter()
        .zip(shift.iter())
        .map(|(m, s)| m + scale * s)
        .collect();
    let values: Vec<f64> = ctx.actions.iter().map(|a| dot(a, &sample)).collect();
    Ok(argmax(&values))
}

/// Explores with probability `min(1, epsilon * sqrt(n / t) / 2)`.
pub fn egreedy_select(
    state: &LinearState,
    ctx: &RoundContext,
    t: usize,
    n: usize,
    epsilon: f64,
    rng: &mut BanditRng,
) -> Result<usize> {
    let p = (epsilon * (n as f64 / t as f64).sqrt() / 2.0).min(1.0);
    if rng.gen::<f64>() < p {
        Ok(rng.gen_range(0..ctx.actions.len()))
    } else {
        greedy(state, ctx)
    }
}

/// Number of uniformly random rounds before committing: `ceil(epsilon * n)`.
pub fn etc_exploration_rounds(n: usize, epsilon: f64) -> usize {
    (epsilon * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Uniformly random for `t <= ceil(epsilon * n)`, greedy afterwards.
pub fn etc_select(
    state: &LinearState,
    ctx: &RoundContext,
    t: usize,
    n: usize,
    epsilon: f64,
    rng: &mut BanditRng,
) -> Result<usize> {
    if t <= etc_exploration_rounds(n, epsilon) {
        Ok(rng.gen_range(0..ctx.actions.len()))
    } else {
        greedy(state, ctx)
    }
}

#[derive(Debug, Clone)]
pub struct LinUcb {
    state: LinearState,
}

impl LinUcb {
    pub fn new(state: LinearState) -> Self {
        Self { state }
    }
}

impl Policy for LinUcb {
    fn select(&mut self, ctx: &RoundContext, _rng: &mut BanditRng) -> Result<usize> {
        linucb_select(&self.state, ctx)
    }

    fn observe(&mut self, ctx: &RoundContext, index: usize, reward: f64) -> Result<()> {
        self.state.record(ctx.actions.get(index), reward)
    }
}

#[derive(Debug, Clone)]
pub struct LinTs {
    state: LinearState,
    scale: f64,
}

impl LinTs {
    pub fn new(state: LinearState, scale: f64) -> Self {
        Self { state, scale }
    }
}

impl Policy for LinTs {
    fn select(&mut self, ctx: &RoundContext, rng: &mut BanditRng) -> Result<usize> {
        lints_select(&self.state, ctx, self.scale, rng)
    }

    fn observe(&mut self, ctx: &RoundContext, index: usize, reward: f64) -> Result<()> {
        self.state.record(ctx.actions.get(index), reward)
    }
}

#[derive(Debug, Clone)]
pub struct EpsilonGreedy {
    state: LinearState,
    epsilon: f64,
    horizon: usize,
    t: usize,
}

impl EpsilonGreedy {
    pub fn new(state: LinearState, epsilon: f64, horizon: usize) -> Self {
        Self {
            state,
            epsilon,
            horizon,
            t: 0,
        }
    }
}

impl Policy for EpsilonGreedy {
    fn select(&mut self, ctx: &RoundContext, rng: &mut BanditRng) -> Result<usize> {
        self.t += 1;
        egreedy_select(&self.state, ctx, self.t, self.horizon, self.epsilon, rng)
    }

    fn observe(&mut self, ctx: &RoundContext, index: usize, reward: f64) -> Result<()> {
        self.state.record(ctx.actions.get(index), reward)
    }
}

#[derive(Debug, Clone)]
pub struct ExploreThenCommit {
    state: LinearState,
    epsilon: f64,
    horizon: usize,
    freeze: bool,
    t: usize,
}

impl ExploreThenCommit {
    pub fn new(state: LinearState, epsilon: f64, horizon: usize, freeze: bool) -> Self {
        Self {
            state,
            epsilon,
            horizon,
            freeze,
            t: 0,
        }
    }
}

impl Policy for ExploreThenCommit {
    fn select(&mut self, ctx: &RoundContext, rng: &mut BanditRng) -> Result<usize> {
        self.t += 1;
        etc_select(&self.state, ctx, self.t, self.horizon, self.epsilon, rng)
    }

    fn observe(&mut self, ctx: &RoundContext, index: usize, reward: f64) -> Result<()> {
        if self.freeze && self.t > etc_exploration_rounds(self.horizon, self.epsilon) {
            return Ok(());
        }
        self.state.record(ctx.actions.get(index), reward)
    }
}
