//! Phased elimination with a D-optimal design per phase.
//!
//! Phase `l` has elimination radius `2^-l` and a length that quadruples from
//! `max(d(d+1)/2, ceil(4 d log(1/delta)))`. The design is computed once at
//! the start of each phase over the surviving actions and played as an
//! integer schedule. At the end of a phase the estimate is refit from that
//! phase's data only, and any action trailing the best by more than `2^(1-l)`
//! is dropped.

use std::sync::Arc;

use super::argmax;
use super::Policy;
use crate::design::{d_optimal_design, round_allocation, Design};
use crate::envs::{ActionSet, RoundContext};
use crate::error::{Error, Result};
use crate::linalg::{dot, ridge_fit, DesignMatrix};
use crate::BanditRng;

/// Ridge term for the within-phase regression; keeps it well posed when the
/// survivors do not span the space.
const PHASE_RIDGE: f64 = 1e-6;
/// Certificate tolerance for per-phase designs.
const DESIGN_TOL: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct PhasedElimState {
    /// Current phase index, 0 before the first phase starts.
    pub phase: u32,
    pub survivors: Vec<usize>,
    /// Scheduled pulls for the current phase, in play order.
    pub schedule: Vec<usize>,
    pub cursor: usize,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct PhasedElim {
    dim: usize,
    initial_len: usize,
    pool: Option<Arc<ActionSet>>,
    state: PhasedElimState,
    phase_design: DesignMatrix,
    phase_xty: Vec<f64>,
    last_design: Option<Design>,
}

impl PhasedElim {
    pub fn new(dim: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
        }
        let by_dim = dim * (dim + 1) / 2;
        let by_conf = (4.0 * dim as f64 * (1.0 / delta).ln()).ceil() as usize;
        Ok(Self {
            dim,
            initial_len: by_dim.max(by_conf).max(1),
            pool: None,
            state: PhasedElimState {
                phase: 0,
                survivors: Vec::new(),
                schedule: Vec::new(),
                cursor: 0,
                eps: 1.0,
            },
            phase_design: DesignMatrix::new(dim, PHASE_RIDGE)?,
            phase_xty: vec![0.0; dim],
            last_design: None,
        })
    }

    pub fn state(&self) -> &PhasedElimState {
        &self.state
    }

    pub fn initial_len(&self) -> usize {
        self.initial_len
    }

    /// Design computed at the start of the current phase.
    pub fn current_design(&self) -> Option<&Design> {
        self.last_design.as_ref()
    }

    fn phase_len(&self, phase: u32) -> usize {
        let factor = 4usize.saturating_pow(phase.saturating_sub(1));
        self.initial_len.saturating_mul(factor)
    }

    fn attach(&mut self, ctx: &RoundContext) -> Result<Arc<ActionSet>> {
        match &self.pool {
            Some(pool) if Arc::ptr_eq(pool, &ctx.actions) || **pool == *ctx.actions => Ok(Arc::clone(pool)),
            Some(_) => Err(Error::config("phased elimination needs a fixed action set")),
            None => {
                if ctx.actions.dim() != self.dim {
                    return Err(Error::Dimension {
                        expected: self.dim,
                        got: ctx.actions.dim(),
                    });
                }
                self.state.survivors = (0..ctx.actions.len()).collect();
                self.pool = Some(Arc::clone(&ctx.actions));
                Ok(Arc::clone(&ctx.actions))
            }
        }
    }

    fn eliminate(&mut self, pool: &ActionSet) -> Result<()> {
        let est = ridge_fit(&self.phase_xty, &self.phase_design)?;
        let means: Vec<f64> = self
            .state
            .survivors
            .iter()
            .map(|&i| dot(pool.get(i), &est.theta_hat))
            .collect();
        let best = means[argmax(&means)];
        let radius = 2.0 * self.state.eps;
        let kept: Vec<usize> = self
            .state
            .survivors
            .iter()
            .zip(&means)
            .filter(|(_, m)| best - **m <= radius)
            .map(|(i, _)| *i)
            .collect();
        debug_assert!(!kept.is_empty());
        self.state.survivors = kept;
        Ok(())
    }

    fn start_phase(&mut self, pool: &ActionSet) -> Result<()> {
        self.state.phase += 1;
        self.state.eps = 0.5f64.powi(self.state.phase as i32);
        let rows: Vec<&[f64]> = self.state.survivors.iter().map(|&i| pool.get(i)).collect();
        let design = d_optimal_design(&rows, DESIGN_TOL)?;
        let len = self.phase_len(self.state.phase).max(design.support.len());
        let counts = round_allocation(&design, len)?;

        // round-robin over the support so a truncated phase still spreads pulls
        let mut remaining = counts;
        let mut schedule = Vec::with_capacity(len);
        while schedule.len() < len {
            for (slot, (local, _)) in design.support.iter().enumerate() {
                if remaining[slot] > 0 {
                    remaining[slot] -= 1;
                    schedule.push(self.state.survivors[*local]);
                }
            }
        }
        self.state.schedule = schedule;
        self.state.cursor = 0;
        self.phase_design = DesignMatrix::new(self.dim, PHASE_RIDGE)?;
        self.phase_xty = vec![0.0; self.dim];
        self.last_design = Some(design);
        Ok(())
    }
}

/// One selection step of phased elimination.
pub fn phased_elim_step(policy: &mut PhasedElim, ctx: &RoundContext) -> Result<usize> {
    let pool = policy.attach(ctx)?;
    if policy.state.survivors.len() == 1 {
        return Ok(policy.state.survivors[0]);
    }
    if policy.state.cursor >= policy.state.schedule.len() {
        if policy.state.phase > 0 {
            policy.eliminate(&pool)?;
            if policy.state.survivors.len() == 1 {
                return Ok(policy.state.survivors[0]);
            }
        }
        policy.start_phase(&pool)?;
    }
    let pick = policy.state.schedule[policy.state.cursor];
    policy.state.cursor += 1;
    Ok(pick)
}

impl Policy for PhasedElim {
    fn select(&mut self, ctx: &RoundContext, _rng: &mut BanditRng) -> Result<usize> {
        phased_elim_step(self, ctx)
    }

    fn observe(&mut self, ctx: &RoundContext, index: usize, reward: f64) -> Result<()> {
        if self.state.survivors.len() <= 1 {
            return Ok(());
        }
        let a = ctx.actions.get(index);
        self.phase_design.rank_one_update(a)?;
        for (s, x) in self.phase_xty.iter_mut().zip(a) {
            *s += x * reward;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::envs::Environment;

    fn run(policy: &mut PhasedElim, env: &Environment, rounds: usize, seed: u64) -> Vec<usize> {
        let mut rng = BanditRng::seed_from_u64(seed);
        (1..=rounds)
            .map(|t| {
                let ctx = env.next_round(t, &mut rng);
                let i = policy.select(&ctx, &mut rng).unwrap();
                let r = env.sample_reward(ctx.actions.get(i), &mut rng);
                policy.observe(&ctx, i, r).unwrap();
                i
            })
            .collect()
    }

    fn basis_env(theta: Vec<f64>) -> Environment {
        let d = theta.len();
        Environment::linear_fixed(ActionSet::basis(d), theta, 0.0).unwrap()
    }

    #[test]
    fn initial_length_rule() {
        let p = PhasedElim::new(5, 0.05).unwrap();
        assert_eq!(p.initial_len(), (20.0 * 20f64.ln()).ceil() as usize);
        let p = PhasedElim::new(12, 0.5).unwrap();
        assert_eq!(p.initial_len(), 78);
        assert_eq!(p.phase_len(3), 78 * 16);
    }

    #[test]
    fn noiseless_pair_eliminates_worse_arm() {
        // gap 1 sits exactly on the first phase's radius 2 * 1/2, so the
        // worse arm survives phase one and is dropped after phase two
        let env = basis_env(vec![1.0, 0.0]);
        let mut p = PhasedElim::new(2, 0.05).unwrap();
        let first = p.initial_len();
        run(&mut p, &env, first + 1, 0);
        assert_eq!(p.state().survivors, vec![0, 1]);
        let second = p.phase_len(2);
        let picks = run(&mut p, &env, second + 50, 0);
        assert_eq!(p.state().survivors, vec![0]);
        assert!(picks[second..].iter().all(|&i| i == 0));

        let env = basis_env(vec![1.5, 0.0]);
        let mut p = PhasedElim::new(2, 0.05).unwrap();
        run(&mut p, &env, first + 1, 0);
        assert_eq!(p.state().survivors, vec![0]);
    }

    #[test]
    fn single_survivor_is_played_forever() {
        let env = basis_env(vec![3.0, 0.0, 0.0]);
        let mut p = PhasedElim::new(3, 0.05).unwrap();
        let picks = run(&mut p, &env, 2000, 1);
        assert_eq!(p.state().survivors, vec![0]);
        assert!(picks[p.initial_len()..].iter().all(|&i| i == 0));
    }

    #[test]
    fn orthonormal_actions_get_uniform_design() {
        let env = basis_env(vec![0.1, 0.2, 0.3, 0.4]);
        let mut p = PhasedElim::new(4, 0.05).unwrap();
        run(&mut p, &env, 1, 0);
        let design = p.current_design().unwrap();
        assert_eq!(design.support.len(), 4);
        for (_, w) in &design.support {
            assert!((w - 0.25).abs() < 1e-12);
        }
        assert_eq!(p.state().schedule.len(), p.initial_len());
    }

    #[test]
    fn survivors_never_grow() {
        let mut rng = BanditRng::seed_from_u64(3);
        let env = Environment::gen_synthetic_linear(3, 20, 0.5, &mut rng).unwrap();
        let mut p = PhasedElim::new(3, 0.05).unwrap();
        let mut prev = usize::MAX;
        let mut noise = BanditRng::seed_from_u64(4);
        for t in 1..=5000 {
            let ctx = env.next_round(t, &mut noise);
            let i = p.select(&ctx, &mut noise).unwrap();
            assert!(p.state().survivors.contains(&i));
            let r = env.sample_reward(ctx.actions.get(i), &mut noise);
            p.observe(&ctx, i, r).unwrap();
            let now = p.state().survivors.len();
            assert!(now >= 1 && now <= prev);
            prev = now;
        }
    }

    #[test]
    fn changing_actions_are_rejected() {
        let mut rng = BanditRng::seed_from_u64(3);
        let env = Environment::gen_changing_linear(2, 5, 0.5, &mut rng).unwrap();
        let mut p = PhasedElim::new(2, 0.05).unwrap();
        let c1 = env.next_round(1, &mut rng);
        p.select(&c1, &mut rng).unwrap();
        let c2 = env.next_round(2, &mut rng);
        assert!(matches!(p.select(&c2, &mut rng), Err(Error::Config(_))));
    }
}
