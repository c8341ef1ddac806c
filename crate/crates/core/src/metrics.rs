//! Cumulative regret and cumulative model uncertainty error.
//!
//! The uncertainty error of round `t` is `max_{a in plausible} (a^T (theta_hat - theta*))^2`,
//! where both the estimate and the plausible set come from the evaluated
//! algorithm's own history. [`UncertaintyTracker`] rebuilds that view with
//! CODE's confidence construction, so baselines that never form a plausible
//! set are scored the same way.

use crate::envs::{EnvKind, Environment, RoundContext};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::policies::{plausible_set, KArmedState, LinearState, PolicyConfig};

/// `max_a <a, theta*> - <chosen, theta*>` over the round's own actions.
pub fn instant_regret(env: &Environment, ctx: &RoundContext, chosen: usize) -> f64 {
    let best = ctx
        .actions
        .iter()
        .map(|a| env.mean_reward(a))
        .fold(f64::NEG_INFINITY, f64::max);
    (best - env.mean_reward(ctx.actions.get(chosen))).max(0.0)
}

/// Largest squared prediction error of `theta_hat` over `plausible`.
pub fn model_uncertainty<'a>(
    theta_hat: &[f64],
    theta_star: &[f64],
    plausible: impl IntoIterator<Item = &'a [f64]>,
) -> f64 {
    let diff: Vec<f64> = theta_hat.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    plausible
        .into_iter()
        .map(|a| dot(a, &diff).powi(2))
        .fold(0.0, f64::max)
}

/// Running regret and uncertainty totals for one run.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    regret_cum: f64,
    q_cum: f64,
    rounds: usize,
    per_round: Option<Vec<(f64, f64)>>,
}

impl MetricsAccumulator {
    pub fn new(keep_trace: bool) -> Self {
        Self {
            per_round: keep_trace.then(Vec::new),
            ..Self::default()
        }
    }

    pub fn push(&mut self, regret: f64, uncertainty: f64) -> Result<()> {
        if !(regret >= 0.0) || !(uncertainty >= 0.0) {
            return Err(Error::Internal(format!(
                "round {}: negative or NaN metric (regret {regret}, uncertainty {uncertainty})",
                self.rounds + 1
            )));
        }
        self.regret_cum += regret;
        self.q_cum += uncertainty;
        self.rounds += 1;
        if let Some(trace) = self.per_round.as_mut() {
            trace.push((regret, uncertainty));
        }
        Ok(())
    }

    pub fn regret(&self) -> f64 {
        self.regret_cum
    }

    pub fn uncertainty(&self) -> f64 {
        self.q_cum
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn per_round(&self) -> Option<&[(f64, f64)]> {
        self.per_round.as_deref()
    }
}

/// What the tracker reports for one round, measured before the reward arrives.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundView {
    pub uncertainty: f64,
    pub plausible: Vec<usize>,
    /// `|A_t|^2_{V_t^-1}` for linear trackers.
    pub chosen_variance: Option<f64>,
    /// Whether the truth lies in the current confidence region.
    pub covered: bool,
}

/// Confidence view rebuilt from an algorithm's own history.
#[derive(Debug, Clone)]
pub enum UncertaintyTracker {
    KArmed(KArmedState),
    Linear(LinearState),
}

impl UncertaintyTracker {
    pub fn for_policy(cfg: &PolicyConfig, env: &Environment, horizon: usize) -> Result<Self> {
        Ok(match env.kind() {
            EnvKind::KArmed => Self::KArmed(KArmedState::new(
                env.num_actions(),
                cfg.karmed_delta(env.num_actions(), horizon),
            )?),
            _ => Self::Linear(cfg.linear_state(env)?),
        })
    }

    /// Scores the round's plausible set before `chosen`'s reward is observed.
    pub fn view(&self, env: &Environment, ctx: &RoundContext, chosen: usize) -> Result<RoundView> {
        let truth = env.theta_star();
        match self {
            Self::KArmed(state) => {
                let plausible = plausible_set(&state.bounds());
                let means = state.mean_vector();
                let uncertainty = model_uncertainty(&means, truth, plausible.iter().map(|&i| ctx.actions.get(i)));
                let covered = (0..state.arms()).all(|a| match state.mean(a) {
                    Some(m) => (m - truth[a]).abs() <= state.width(a),
                    None => true,
                });
                Ok(RoundView {
                    uncertainty,
                    plausible,
                    chosen_variance: None,
                    covered,
                })
            }
            Self::Linear(state) => {
                let stats = state.stats(&ctx.actions)?;
                let bounds = LinearState::bounds_from_stats(&stats, state.width());
                let plausible = plausible_set(&bounds);
                let uncertainty = model_uncertainty(
                    state.theta_hat(),
                    truth,
                    plausible.iter().map(|&i| ctx.actions.get(i)),
                );
                Ok(RoundView {
                    uncertainty,
                    plausible,
                    chosen_variance: Some(stats[chosen].variance),
                    covered: state.ellipsoid_contains(truth)?,
                })
            }
        }
    }

    pub fn record(&mut self, ctx: &RoundContext, chosen: usize, reward: f64) -> Result<()> {
        match self {
            Self::KArmed(state) => {
                state.record(chosen, reward);
                Ok(())
            }
            Self::Linear(state) => state.record(ctx.actions.get(chosen), reward),
        }
    }

    pub fn karmed(&self) -> Option<&KArmedState> {
        match self {
            Self::KArmed(s) => Some(s),
            Self::Linear(_) => None,
        }
    }

    pub fn linear(&self) -> Option<&LinearState> {
        match self {
            Self::Linear(s) => Some(s),
            Self::KArmed(_) => None,
        }
    }
}

/// Right-hand side of the elliptical potential bound, `2 d log(d + n L^2 / lambda)`.
pub fn elliptical_potential_bound(dim: usize, rounds: usize, action_bound: f64, lambda: f64) -> f64 {
    let d = dim as f64;
    2.0 * d * (d + rounds as f64 * action_bound * action_bound / lambda).ln()
}
