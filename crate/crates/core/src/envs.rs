//! Ground-truth bandit environments.
//!
//! All three kinds expose actions as feature vectors. K-armed problems use the
//! standard basis `e_1..e_K` with the mean vector as the parameter, so every
//! linear policy runs on them unchanged.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::BanditRng;

/// Dense row-major list of actions sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    dim: usize,
    data: Vec<f64>,
}

impl ActionSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::input(format!(
                "action data of length {} does not split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::input("action rows have inconsistent dimensions"));
        }
        Self::new(dim, rows.concat())
    }

    /// Standard basis `e_1..e_k`.
    pub fn basis(k: usize) -> Self {
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        Self { dim: k, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn max_norm(&self) -> f64 {
        self.iter()
            .map(|a| dot(a, a).sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    KArmed,
    LinearFixed,
    LinearChanging,
}

impl EnvKind {
    pub fn has_fixed_actions(self) -> bool {
        !matches!(self, EnvKind::LinearChanging)
    }
}

/// The actions offered in one round; indices are stable within the round.
#[derive(Debug, Clone)]
pub struct RoundContext {
    pub t: usize,
    pub actions: Arc<ActionSet>,
}

#[derive(Debug, Clone)]
enum ActionSource {
    Fixed(Arc<ActionSet>),
    /// `count` fresh uniform `[-1, 1]^d` vectors every round.
    Uniform { count: usize },
}

#[derive(Debug, Clone)]
pub struct Environment {
    kind: EnvKind,
    theta_star: Vec<f64>,
    sigma: f64,
    source: ActionSource,
    action_bound: f64,
}

impl Environment {
    /// K-armed problem with per-arm means in `[0, 1]`.
    pub fn k_armed(means: Vec<f64>, sigma: f64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::input("a K-armed environment needs at least 2 arms"));
        }
        if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::input("arm means must lie in [0, 1]"));
        }
        check_sigma(sigma)?;
        let k = means.len();
        Ok(Self {
            kind: EnvKind::KArmed,
            theta_star: means,
            sigma,
            source: ActionSource::Fixed(Arc::new(ActionSet::basis(k))),
            action_bound: 1.0,
        })
    }

    /// Means `(0.5 + gap/2, 0.5 - gap/2, ..., 0.5 - gap/2)`.
    pub fn k_armed_gap(k: usize, gap: f64, sigma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gap) {
            return Err(Error::input("gap must lie in [0, 1]"));
        }
        let mut means = vec![0.5 - gap / 2.0; k];
        if let Some(first) = means.first_mut() {
            *first = 0.5 + gap / 2.0;
        }
        Self::k_armed(means, sigma)
    }

    /// `theta* ~ N(0, I_d)` with `k` fixed actions uniform on `[-1, 1]^d`.
    pub fn gen_synthetic_linear(d: usize, k: usize, sigma: f64, rng: &mut BanditRng) -> Result<Self> {
        check_shape(d, k)?;
        check_sigma(sigma)?;
        let theta_star = standard_normal_vec(d, rng);
        let data: Vec<f64> = (0..d * k).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Ok(Self {
            kind: EnvKind::LinearFixed,
            theta_star,
            sigma,
            source: ActionSource::Fixed(Arc::new(ActionSet::new(d, data)?)),
            action_bound: (d as f64).sqrt(),
        })
    }

    /// `theta* ~ N(0, I_d)`; each round offers `k` fresh uniform `[-1, 1]^d` actions.
    pub fn gen_changing_linear(d: usize, k: usize, sigma: f64, rng: &mut BanditRng) -> Result<Self> {
        check_shape(d, k)?;
        check_sigma(sigma)?;
        Ok(Self {
            kind: EnvKind::LinearChanging,
            theta_star: standard_normal_vec(d, rng),
            sigma,
            source: ActionSource::Uniform { count: k },
            action_bound: (d as f64).sqrt(),
        })
    }

    /// Fixed-pool linear environment from explicit actions and parameter.
    pub fn linear_fixed(actions: ActionSet, theta_star: Vec<f64>, sigma: f64) -> Result<Self> {
        if actions.dim() != theta_star.len() {
            return Err(Error::Dimension {
                expected: actions.dim(),
                got: theta_star.len(),
            });
        }
        check_sigma(sigma)?;
        let action_bound = actions.max_norm();
        Ok(Self {
            kind: EnvKind::LinearFixed,
            theta_star,
            sigma,
            source: ActionSource::Fixed(Arc::new(actions)),
            action_bound,
        })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    /// Parameter `theta*`, or the mean vector for K-armed problems.
    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Upper bound on the norm of every action this environment emits.
    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    /// Number of actions per round.
    pub fn num_actions(&self) -> usize {
        match &self.source {
            ActionSource::Fixed(set) => set.len(),
            ActionSource::Uniform { count } => *count,
        }
    }

    pub fn fixed_actions(&self) -> Option<&Arc<ActionSet>> {
        match &self.source {
            ActionSource::Fixed(set) => Some(set),
            ActionSource::Uniform { .. } => None,
        }
    }

    /// Index of the best fixed action, lowest index on ties.
    pub fn optimal_index(&self) -> Option<usize> {
        self.fixed_actions().map(|set| {
            let means: Vec<f64> = set.iter().map(|a| self.mean_reward(a)).collect();
            crate::policies::argmax(&means)
        })
    }

    pub fn mean_reward(&self, a: &[f64]) -> f64 {
        dot(a, &self.theta_star)
    }

    pub fn next_round(&self, t: usize, rng: &mut BanditRng) -> RoundContext {
        debug_assert!(t >= 1, "rounds are 1-based");
        let actions = match &self.source {
            ActionSource::Fixed(set) => Arc::clone(set),
            ActionSource::Uniform { count } => {
                let d = self.dim();
                let data = (0..d * count).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                Arc::new(ActionSet { dim: d, data })
            }
        };
        RoundContext { t, actions }
    }

    /// `<a, theta*> + N(0, sigma^2)`.
    pub fn sample_reward(&self, a: &[f64], rng: &mut BanditRng) -> f64 {
        let noise: f64 = StandardNormal.sample(rng);
        self.mean_reward(a) + self.sigma * noise
    }
}

fn check_shape(d: usize, k: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::input("dimension must be at least 1"));
    }
    if k < 2 {
        return Err(Error::input("need at least 2 actions"));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::input(format!("noise scale must be non-negative, got {sigma}")));
    }
    Ok(())
}

fn standard_normal_vec(d: usize, rng: &mut BanditRng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> BanditRng {
        BanditRng::seed_from_u64(seed)
    }

    #[test]
    fn synthetic_fixed_is_deterministic() {
        let a = Environment::gen_synthetic_linear(5, 100, 0.5, &mut rng(4)).unwrap();
        let b = Environment::gen_synthetic_linear(5, 100, 0.5, &mut rng(4)).unwrap();
        assert_eq!(a.theta_star(), b.theta_star());
        assert_eq!(a.fixed_actions().unwrap(), b.fixed_actions().unwrap());
        assert_eq!(a.num_actions(), 100);
        assert_eq!(a.dim(), 5);
        assert_eq!(a.sigma(), 0.5);
        for act in a.fixed_actions().unwrap().iter() {
            assert!(act.iter().all(|x| (-1.0..=1.0).contains(x)));
            assert!(dot(act, act).sqrt() <= a.action_bound());
        }
    }

    #[test]
    fn noiseless_rewards_are_exact() {
        let env = Environment::gen_synthetic_linear(1, 2, 0.0, &mut rng(1)).unwrap();
        let mut r = rng(2);
        for a in env.fixed_actions().unwrap().iter() {
            assert_eq!(env.sample_reward(a, &mut r), a[0] * env.theta_star()[0]);
        }
        let unit = Environment::linear_fixed(
            ActionSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![1.0, 0.0],
            0.0,
        )
        .unwrap();
        assert_eq!(unit.sample_reward(&[1.0, 0.0], &mut r), 1.0);
    }

    #[test]
    fn k_armed_rewards_and_context() {
        let env = Environment::k_armed(vec![0.9, 0.1], 0.0).unwrap();
        let mut r = rng(0);
        let ctx = env.next_round(1, &mut r);
        assert_eq!(env.sample_reward(ctx.actions.get(0), &mut r), 0.9);
        assert_eq!(env.optimal_index(), Some(0));

        let env3 = Environment::k_armed(vec![0.2, 0.5, 0.5], 1.0).unwrap();
        assert_eq!(env3.optimal_index(), Some(1));
        for t in 1..4 {
            let ctx = env3.next_round(t, &mut r);
            assert_eq!(*ctx.actions, ActionSet::basis(3));
        }
        assert!(Environment::k_armed(vec![1.2, 0.1], 1.0).is_err());
        assert!(Environment::k_armed(vec![0.5], 1.0).is_err());
    }

    #[test]
    fn gap_parameterization() {
        let env = Environment::k_armed_gap(3, 0.2, 1.0).unwrap();
        assert_eq!(env.theta_star(), &[0.6, 0.4, 0.4]);
    }

    #[test]
    fn fixed_context_is_constant() {
        let env = Environment::gen_synthetic_linear(3, 10, 0.5, &mut rng(7)).unwrap();
        let mut r = rng(8);
        let c1 = env.next_round(1, &mut r);
        let c2 = env.next_round(2, &mut r);
        assert_eq!(*c1.actions, *c2.actions);
    }

    #[test]
    fn changing_context_is_resampled() {
        let env = Environment::gen_changing_linear(8, 200, 0.5, &mut rng(7)).unwrap();
        let mut r = rng(8);
        let c1 = env.next_round(1, &mut r);
        let c2 = env.next_round(2, &mut r);
        assert_eq!(c1.actions.len(), 200);
        assert_eq!(c1.actions.dim(), 8);
        assert_ne!(*c1.actions, *c2.actions);
        assert!(c1.actions.max_norm() <= env.action_bound());
    }

    #[test]
    fn noise_std_matches_sigma() {
        let env = Environment::linear_fixed(
            ActionSet::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            vec![0.3],
            0.5,
        )
        .unwrap();
        let mut r = rng(99);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| env.sample_reward(&[1.0], &mut r)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 0.5).abs() <= 0.02 * 0.5);
        assert!((mean - 0.3).abs() < 0.01);
    }

    #[test]
    fn shape_preconditions() {
        assert!(Environment::gen_synthetic_linear(0, 5, 0.5, &mut rng(0)).is_err());
        assert!(Environment::gen_synthetic_linear(2, 1, 0.5, &mut rng(0)).is_err());
        assert!(Environment::gen_synthetic_linear(2, 5, -0.1, &mut rng(0)).is_err());
    }
}
