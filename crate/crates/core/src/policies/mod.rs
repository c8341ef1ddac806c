//! Sequential decision policies: CODE and five baselines.
//!
//! Every policy follows the same loop: look at the round's actions, pick an
//! index, then ingest the observed reward for that action.

mod baselines;
mod code;
mod phased;
mod state;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, Environment, RoundContext};
use crate::error::{Error, Result};
use crate::BanditRng;

pub use baselines::{egreedy_select, etc_select, lints_select, linucb_select, EpsilonGreedy, ExploreThenCommit, LinTs, LinUcb};
pub use code::{code_select_karmed, code_select_linear, code_select_with_width, CodeKArmed, CodeLinear};
pub use phased::{phased_elim_step, PhasedElim, PhasedElimState};
pub use state::{plausible_set, ActionStats, Bounds, KArmedState, LinearState};

pub trait Policy: Send {
    /// Chooses an index into `ctx.actions`.
    fn select(&mut self, ctx: &RoundContext, rng: &mut BanditRng) -> Result<usize>;

    /// Ingests the reward observed for `ctx.actions[index]`.
    fn observe(&mut self, ctx: &RoundContext, index: usize, reward: f64) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "code")]
    Code,
    #[serde(rename = "linucb")]
    LinUcb,
    #[serde(rename = "lints")]
    LinTs,
    #[serde(rename = "phased_elim")]
    PhasedElim,
    #[serde(rename = "egreedy")]
    EpsilonGreedy,
    #[serde(rename = "etc")]
    ExploreThenCommit,
}

impl Algorithm {
    pub fn display_name(self) -> &'static str {
        match self {
            Algorithm::Code => "CODE",
            Algorithm::LinUcb => "LinUCB",
            Algorithm::LinTs => "LinTS",
            Algorithm::PhasedElim => "PhasedElim",
            Algorithm::EpsilonGreedy => "EpsGreedy",
            Algorithm::ExploreThenCommit => "ETC",
        }
    }
}

fn default_delta() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    1.0
}
fn default_action_bound() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_ts_scale() -> f64 {
    1.0
}

/// Per-algorithm hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub algorithm: Algorithm,
    /// Label used in outputs; defaults to the algorithm's display name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(rename = "L", default = "default_action_bound")]
    pub action_bound: f64,
    #[serde(rename = "S", default)]
    pub param_bound: f64,
    /// Sub-Gaussian scale; defaults to the environment's noise level.
    #[serde(rename = "R", default)]
    pub noise_scale: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_ts_scale")]
    pub ts_scale: f64,
    /// K-armed only: use `delta / (2 K n^2)` instead of the raw `delta`.
    #[serde(default)]
    pub calibrated_delta: bool,
    /// ETC only: stop updating the estimate once exploration ends.
    #[serde(default)]
    pub freeze: bool,
    /// Overrides the experiment seed for this algorithm's own random stream.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl PolicyConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            name: None,
            delta: default_delta(),
            lambda: default_lambda(),
            action_bound: default_action_bound(),
            param_bound: 0.0,
            noise_scale: None,
            epsilon: default_epsilon(),
            ts_scale: default_ts_scale(),
            calibrated_delta: false,
            freeze: false,
            seed: None,
        }
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.algorithm.display_name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let label = self.label();
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("{label}: delta must lie in (0, 1)")));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("{label}: lambda must be positive")));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!("{label}: epsilon must lie in [0, 1]")));
        }
        if !(self.ts_scale >= 0.0) || !(self.action_bound >= 0.0) || !(self.param_bound >= 0.0) {
            return Err(Error::config(format!("{label}: ts_scale, L and S must be non-negative")));
        }
        if let Some(r) = self.noise_scale {
            if !(r >= 0.0) {
                return Err(Error::config(format!("{label}: R must be non-negative")));
            }
        }
        Ok(())
    }

    /// K-armed confidence level after the optional union-bound calibration.
    pub fn karmed_delta(&self, arms: usize, horizon: usize) -> f64 {
        if self.calibrated_delta {
            self.delta / (2.0 * arms as f64 * (horizon as f64).powi(2))
        } else {
            self.delta
        }
    }

    /// Ridge/ellipsoid state with this configuration for `env`.
    pub fn linear_state(&self, env: &Environment) -> Result<LinearState> {
        LinearState::new(
            env.dim(),
            crate::linalg::EllipsoidWidth {
                delta: self.delta,
                action_bound: self.action_bound,
                param_bound: self.param_bound,
                noise_scale: self.noise_scale.unwrap_or(env.sigma()),
                lambda: self.lambda,
                dim: env.dim(),
            },
        )
    }

    /// Fails for combinations that cannot run, e.g. phased elimination with
    /// changing action sets.
    pub fn check_compatible(&self, kind: EnvKind) -> Result<()> {
        if self.algorithm == Algorithm::PhasedElim && !kind.has_fixed_actions() {
            return Err(Error::config(format!(
                "{}: phased elimination needs a fixed action set",
                self.label()
            )));
        }
        Ok(())
    }
}

/// Builds a fresh policy for one run.
pub fn build_policy(cfg: &PolicyConfig, env: &Environment, horizon: usize) -> Result<Box<dyn Policy>> {
    cfg.validate()?;
    cfg.check_compatible(env.kind())?;
    let policy: Box<dyn Policy> = match cfg.algorithm {
        Algorithm::Code if env.kind() == EnvKind::KArmed => Box::new(CodeKArmed::new(KArmedState::new(
            env.num_actions(),
            cfg.karmed_delta(env.num_actions(), horizon),
        )?)),
        Algorithm::Code => Box::new(CodeLinear::new(cfg.linear_state(env)?)),
        Algorithm::LinUcb => Box::new(LinUcb::new(cfg.linear_state(env)?)),
        Algorithm::LinTs => Box::new(LinTs::new(cfg.linear_state(env)?, cfg.ts_scale)),
        Algorithm::EpsilonGreedy => Box::new(EpsilonGreedy::new(cfg.linear_state(env)?, cfg.epsilon, horizon)),
        Algorithm::ExploreThenCommit => Box::new(ExploreThenCommit::new(
            cfg.linear_state(env)?,
            cfg.epsilon,
            horizon,
            cfg.freeze,
        )),
        Algorithm::PhasedElim => Box::new(PhasedElim::new(env.dim(), cfg.delta)?),
    };
    Ok(policy)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
