//! CODE: among plausible actions, take the one whose addition grows
//! `log det V` the most. Since `log det(V + a a^T) - log det V` equals
//! `log(1 + |a|^2_{V^-1})`, this is the plausible action with the largest
//! uncertainty; in K-armed problems it is the least-pulled plausible arm.

use super::state::{plausible_set, KArmedState, LinearState};
use super::Policy;
use crate::envs::RoundContext;
use crate::error::{Error, Result};
use crate::BanditRng;

/// First unpulled arm, otherwise the least-pulled plausible arm.
pub fn code_select_karmed(state: &KArmedState) -> usize {
    if let Some(arm) = state.pulls().iter().position(|&n| n == 0) {
        return arm;
    }
    let plausible = plausible_set(&state.bounds());
    let pulls = state.pulls();
    let mut best = plausible[0];
    for &a in &plausible[1..] {
        if pulls[a] < pulls[best] {
            best = a;
        }
    }
    best
}

/// CODE's choice when the ellipsoid radius is `width`.
pub fn code_select_with_width(state: &LinearState, ctx: &RoundContext, width: f64) -> Result<usize> {
    let stats = state.stats(&ctx.actions)?;
    let bounds = LinearState::bounds_from_stats(&stats, width);
    let plausible = plausible_set(&bounds);
    let mut best = plausible[0];
    for &a in &plausible[1..] {
        if stats[a].variance > stats[best].variance {
            best = a;
        }
    }
    Ok(best)
}

pub fn code_select_linear(state: &LinearState, ctx: &RoundContext) -> Result<usize> {
    code_select_with_width(state, ctx, state.width())
}

#[derive(Debug, Clone)]
pub struct CodeKArmed {
    state: KArmedState,
}

impl CodeKArmed {
    pub fn new(state: KArmedState) -> Self {
        Self { state }
    }

    pub fn state(&self) -> &KArmedState {
        &self.state
    }
}

impl Policy for CodeKArmed {
    fn select(&mut self, ctx: &RoundContext, _rng: &mut BanditRng) -> Result<usize> {
        if ctx.actions.len() != self.state.arms() {
            return Err(Error::Dimension {
                expected: self.state.arms(),
                got: ctx.actions.len(),
            });
        }
        Ok(code_select_karmed(&self.state))
    }

    fn observe(&mut self, _ctx: &RoundContext, index: usize, reward: f64) -> Result<()> {
        self.state.record(index, reward);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CodeLinear {
    state: LinearState,
}

impl CodeLinear {
    pub fn new(state: LinearState) -> Self {
        Self { state }
    }

    pub fn state(&self) -> &LinearState {
        &self.state
    }
}

impl Policy for CodeLinear {
    fn select(&mut self, ctx: &RoundContext, _rng: &mut BanditRng) -> Result<usize> {
        code_select_linear(&self.state, ctx)
    }

    fn observe(&mut self, ctx: &RoundContext, index: usize, reward: f64) -> Result<()> {
        self.state.record(ctx.actions.get(index), reward)
    }
}
