use crate::envs::ActionSet;
use crate::error::{Error, Result};
use crate::linalg::{dot, quad_form, ridge_fit, DesignMatrix, EllipsoidWidth, ParameterEstimate};

/// Upper and lower confidence bounds for every action of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub ucb: Vec<f64>,
    pub lcb: Vec<f64>,
}

/// Indices whose UCB reaches the largest LCB of the round.
///
/// Never empty: the action attaining the largest LCB always qualifies.
pub fn plausible_set(bounds: &Bounds) -> Vec<usize> {
    let best_lcb = bounds.lcb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let set: Vec<usize> = bounds
        .ucb
        .iter()
        .enumerate()
        .filter(|(_, u)| **u >= best_lcb)
        .map(|(i, _)| i)
        .collect();
    assert!(!set.is_empty(), "plausible set is empty");
    set
}

/// Per-arm counts and means for K-armed problems.
#[derive(Debug, Clone)]
pub struct KArmedState {
    pulls: Vec<u64>,
    sums: Vec<f64>,
    delta: f64,
    log_term: f64,
}

impl KArmedState {
    pub fn new(arms: usize, delta: f64) -> Result<Self> {
        if arms == 0 {
            return Err(Error::input("K-armed state needs at least one arm"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self {
            pulls: vec![0; arms],
            sums: vec![0.0; arms],
            delta,
            log_term: 2.0 * (1.0 / delta).ln(),
        })
    }

    /// Builds a state directly from counts and empirical means.
    pub fn from_parts(pulls: Vec<u64>, means: &[f64], delta: f64) -> Result<Self> {
        if pulls.len() != means.len() {
            return Err(Error::Dimension {
                expected: pulls.len(),
                got: means.len(),
            });
        }
        let mut state = Self::new(pulls.len(), delta)?;
        state.sums = pulls.iter().zip(means).map(|(&n, &m)| n as f64 * m).collect();
        state.pulls = pulls;
        Ok(state)
    }

    pub fn arms(&self) -> usize {
        self.pulls.len()
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Current round, `1 + sum of pulls`.
    pub fn round(&self) -> u64 {
        1 + self.pulls.iter().sum::<u64>()
    }

    pub fn mean(&self, arm: usize) -> Option<f64> {
        (self.pulls[arm] > 0).then(|| self.sums[arm] / self.pulls[arm] as f64)
    }

    /// Mean estimates with unpulled arms reported as zero.
    pub fn mean_vector(&self) -> Vec<f64> {
        (0..self.arms()).map(|a| self.mean(a).unwrap_or(0.0)).collect()
    }

    /// `sqrt(2 log(1/delta) / T(a))`, infinite for unpulled arms.
    pub fn width(&self, arm: usize) -> f64 {
        match self.pulls[arm] {
            0 => f64::INFINITY,
            n => (self.log_term / n as f64).sqrt(),
        }
    }

    pub fn bounds(&self) -> Bounds {
        let (ucb, lcb) = (0..self.arms())
            .map(|a| match self.mean(a) {
                Some(m) => {
                    let c = self.width(a);
                    (m + c, m - c)
                }
                None => (f64::INFINITY, f64::NEG_INFINITY),
            })
            .unzip();
        Bounds { ucb, lcb }
    }

    pub fn record(&mut self, arm: usize, reward: f64) {
        self.pulls[arm] += 1;
        self.sums[arm] += reward;
    }
}

/// Mean estimate and uncertainty `|a|^2_{V^-1}` of one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionStats {
    pub mean: f64,
    pub variance: f64,
}

/// Ridge-regression state shared by all linear policies.
#[derive(Debug, Clone)]
pub struct LinearState {
    design: DesignMatrix,
    xty: Vec<f64>,
    estimate: ParameterEstimate,
    width_cfg: EllipsoidWidth,
}

impl LinearState {
    pub fn new(dim: usize, width_cfg: EllipsoidWidth) -> Result<Self> {
        width_cfg.validate()?;
        let design = DesignMatrix::new(dim, width_cfg.lambda)?;
        let xty = vec![0.0; dim];
        let estimate = ridge_fit(&xty, &design)?;
        Ok(Self {
            design,
            xty,
            estimate,
            width_cfg,
        })
    }

    /// Replaces the design and statistic wholesale, e.g. to set up a test instance.
    pub fn from_parts(design: DesignMatrix, xty: Vec<f64>, width_cfg: EllipsoidWidth) -> Result<Self> {
        let estimate = ridge_fit(&xty, &design)?;
        Ok(Self {
            design,
            xty,
            estimate,
            width_cfg,
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.estimate.theta_hat
    }

    pub fn estimate(&self) -> &ParameterEstimate {
        &self.estimate
    }

    pub fn width_cfg(&self) -> &EllipsoidWidth {
        &self.width_cfg
    }

    /// `sqrt(beta_t(delta))` for the current number of observations.
    pub fn width(&self) -> f64 {
        self.width_cfg.width_unchecked(self.design.count())
    }

    pub fn record(&mut self, action: &[f64], reward: f64) -> Result<()> {
        self.design.rank_one_update(action)?;
        for (s, a) in self.xty.iter_mut().zip(action) {
            *s += a * reward;
        }
        self.estimate = ridge_fit(&self.xty, &self.design)?;
        Ok(())
    }

    pub fn stats(&self, actions: &ActionSet) -> Result<Vec<ActionStats>> {
        if actions.dim() != self.design.dim() {
            return Err(Error::Dimension {
                expected: self.design.dim(),
                got: actions.dim(),
            });
        }
        let inv = self
            .design
            .inverse()
            .ok_or_else(|| Error::RankDeficient("linear state has no inverse".into()))?;
        Ok(actions
            .iter()
            .map(|a| ActionStats {
                mean: dot(a, &self.estimate.theta_hat),
                variance: quad_form(inv, a).max(0.0),
            })
            .collect())
    }

    pub fn bounds_from_stats(stats: &[ActionStats], width: f64) -> Bounds {
        let (ucb, lcb) = stats
            .iter()
            .map(|s| {
                let c = width * s.variance.sqrt();
                (s.mean + c, s.mean - c)
            })
            .unzip();
        Bounds { ucb, lcb }
    }

    pub fn bounds(&self, actions: &ActionSet) -> Result<Bounds> {
        Ok(Self::bounds_from_stats(&self.stats(actions)?, self.width()))
    }

    /// Whether `theta` lies in the current confidence ellipsoid.
    pub fn ellipsoid_contains(&self, theta: &[f64]) -> Result<bool> {
        let diff: Vec<f64> = self.theta_hat().iter().zip(theta).map(|(a, b)| a - b).collect();
        let w = self.width();
        Ok(self.design.v_norm_sq(&diff)? <= w * w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plausible_set_drops_dominated_arm() {
        let state = KArmedState::from_parts(vec![50, 50], &[0.9, 0.1], 0.05).unwrap();
        let c = (2.0 * 20f64.ln() / 50.0).sqrt();
        assert!((state.width(0) - 0.3462).abs() < 1e-4);
        assert!((state.width(1) - c).abs() < 1e-15);
        let b = state.bounds();
        assert!((b.ucb[1] - 0.446).abs() < 1e-3);
        assert!((b.lcb[0] - 0.554).abs() < 1e-3);
        assert_eq!(plausible_set(&b), vec![0]);
    }

    #[test]
    fn infinite_widths_keep_everything() {
        let state = KArmedState::new(4, 0.05).unwrap();
        assert_eq!(plausible_set(&state.bounds()), vec![0, 1, 2, 3]);
        let b = Bounds {
            ucb: vec![f64::INFINITY; 3],
            lcb: vec![f64::NEG_INFINITY; 3],
        };
        assert_eq!(plausible_set(&b), vec![0, 1, 2]);
    }

    #[test]
    fn single_action_is_plausible() {
        let b = Bounds {
            ucb: vec![0.3],
            lcb: vec![0.1],
        };
        assert_eq!(plausible_set(&b), vec![0]);
    }

    #[test]
    fn karmed_bookkeeping() {
        let mut s = KArmedState::new(3, 0.1).unwrap();
        assert_eq!(s.round(), 1);
        s.record(1, 0.5);
        s.record(1, 1.5);
        assert_eq!(s.round(), 3);
        assert_eq!(s.mean(1), Some(1.0));
        assert_eq!(s.mean(0), None);
        assert_eq!(s.mean_vector(), vec![0.0, 1.0, 0.0]);
        assert!(KArmedState::new(3, 1.5).is_err());
    }
}
