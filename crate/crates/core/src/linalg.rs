//! Design-matrix maintenance, regularized least squares and confidence widths.
//!
//! `DesignMatrix` keeps `V = lambda * I + sum a a^T` together with a cached
//! inverse and log-determinant. Rank-one updates go through the
//! Sherman-Morrison identity; the cache is rebuilt from a Cholesky
//! factorization every [`REFRESH_INTERVAL`] updates or as soon as
//! `max |V^-1 V - I|` exceeds [`DRIFT_TOLERANCE`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Updates between unconditional cache rebuilds.
pub const REFRESH_INTERVAL: usize = 500;
/// Largest tolerated deviation of `V^-1 V` from the identity.
pub const DRIFT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    dim: usize,
    lambda: f64,
    matrix: DMatrix<f64>,
    /// `None` while `V` is singular (only possible with `lambda == 0`).
    inverse: Option<DMatrix<f64>>,
    logdet: f64,
    count: usize,
    since_refresh: usize,
    refreshes: usize,
}

impl DesignMatrix {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("design dimension must be positive"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!(
                "regularizer must be finite and non-negative, got {lambda}"
            )));
        }
        let matrix = DMatrix::identity(dim, dim) * lambda;
        let (inverse, logdet) = if lambda > 0.0 {
            (
                Some(DMatrix::identity(dim, dim) / lambda),
                dim as f64 * lambda.ln(),
            )
        } else {
            (None, f64::NEG_INFINITY)
        };
        Ok(Self {
            dim,
            lambda,
            matrix,
            inverse,
            logdet,
            count: 0,
            since_refresh: 0,
            refreshes: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> Option<&DMatrix<f64>> {
        self.inverse.as_ref()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Number of absorbed actions.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Number of from-scratch cache rebuilds performed so far.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    fn check_dim(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: a.len(),
            });
        }
        Ok(())
    }

    fn require_inverse(&self) -> Result<&DMatrix<f64>> {
        self.inverse.as_ref().ok_or_else(|| {
            Error::RankDeficient(format!(
                "design with lambda = 0 is singular after {} updates",
                self.count
            ))
        })
    }

    /// Absorbs `a` into the design: `V <- V + a a^T`.
    pub fn rank_one_update(&mut self, a: &[f64]) -> Result<()> {
        self.check_dim(a)?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("action has non-finite entries"));
        }
        let d = self.dim;
        for j in 0..d {
            for i in 0..d {
                self.matrix[(i, j)] += a[i] * a[j];
            }
        }
        self.count += 1;
        self.since_refresh += 1;

        match self.inverse.as_mut() {
            Some(inv) => {
                let u = quad_apply(inv, a);
                let denom = 1.0 + dot(a, &u);
                let s = inv.as_mut_slice();
                for j in 0..d {
                    let uj = u[j] / denom;
                    for i in 0..d {
                        s[i + j * d] -= u[i] * uj;
                    }
                }
                self.logdet += denom.ln();
                if self.since_refresh >= REFRESH_INTERVAL || self.drift() > DRIFT_TOLERANCE {
                    self.refresh()?;
                }
            }
            None => {
                if self.count >= d {
                    // may still be singular; refresh leaves the inverse unset then
                    self.refresh()?;
                }
            }
        }
        Ok(())
    }

    /// `max |V^-1 V - I|`, or infinity when no inverse is cached.
    pub fn drift(&self) -> f64 {
        let Some(inv) = self.inverse.as_ref() else {
            return f64::INFINITY;
        };
        let d = self.dim;
        let a = inv.as_slice();
        let b = self.matrix.as_slice();
        let mut worst: f64 = 0.0;
        for j in 0..d {
            for i in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += a[i + k * d] * b[k + j * d];
                }
                if i == j {
                    acc -= 1.0;
                }
                worst = worst.max(acc.abs());
            }
        }
        worst
    }

    /// Rebuilds inverse and log-determinant from a Cholesky factorization.
    pub fn refresh(&mut self) -> Result<()> {
        self.since_refresh = 0;
        self.refreshes += 1;
        match self.matrix.clone().cholesky() {
            Some(chol) => {
                let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                let mut inv = chol.inverse();
                symmetrize(&mut inv);
                self.inverse = Some(inv);
                self.logdet = logdet;
                Ok(())
            }
            None if self.lambda == 0.0 => {
                self.inverse = None;
                self.logdet = f64::NEG_INFINITY;
                Ok(())
            }
            None => Err(Error::Internal(
                "regularized design matrix lost positive definiteness".into(),
            )),
        }
    }

    /// `a^T V^-1 a`.
    pub fn mahalanobis_sq(&self, a: &[f64]) -> Result<f64> {
        self.check_dim(a)?;
        let inv = self.require_inverse()?;
        Ok(quad_form(inv, a).max(0.0))
    }

    /// `log det(V + a a^T) - log det V = log(1 + a^T V^-1 a)`.
    pub fn logdet_gain(&self, a: &[f64]) -> Result<f64> {
        Ok(self.mahalanobis_sq(a)?.ln_1p())
    }

    /// `(x - y)^T V (x - y)`, the squared ellipsoid norm of a parameter difference.
    pub fn v_norm_sq(&self, diff: &[f64]) -> Result<f64> {
        self.check_dim(diff)?;
        Ok(quad_form(&self.matrix, diff).max(0.0))
    }
}

/// `x^T M x` for a column-major square matrix.
pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let s = m.as_slice();
    let mut total = 0.0;
    for j in 0..d {
        let col = &s[j * d..(j + 1) * d];
        let mut acc = 0.0;
        for i in 0..d {
            acc += col[i] * x[i];
        }
        total += acc * x[j];
    }
    total
}

/// `M x` for a column-major square matrix.
pub(crate) fn quad_apply(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let s = m.as_slice();
    let mut out = vec![0.0; d];
    for j in 0..d {
        let xj = x[j];
        let col = &s[j * d..(j + 1) * d];
        for i in 0..d {
            out[i] += col[i] * xj;
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Ridge estimate together with its sufficient statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub theta_hat: Vec<f64>,
    pub xty: Vec<f64>,
    /// Design count the estimate was computed against.
    pub rounds: usize,
}

/// Solves `theta_hat = V^-1 * xty`, the minimizer of
/// `sum (y_s - <theta, a_s>)^2 + lambda |theta|^2`.
pub fn ridge_fit(xty: &[f64], design: &DesignMatrix) -> Result<ParameterEstimate> {
    design.check_dim(xty)?;
    let inv = design.require_inverse()?;
    Ok(ParameterEstimate {
        theta_hat: quad_apply(inv, xty),
        xty: xty.to_vec(),
        rounds: design.count(),
    })
}

/// Parameters of the self-normalized confidence ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidWidth {
    pub delta: f64,
    /// Bound on action norms.
    pub action_bound: f64,
    /// Bound on the parameter norm.
    pub param_bound: f64,
    /// Sub-Gaussian noise scale.
    pub noise_scale: f64,
    pub lambda: f64,
    pub dim: usize,
}

impl EllipsoidWidth {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "ellipsoid width needs lambda > 0, got {}",
                self.lambda
            )));
        }
        if self.action_bound < 0.0 || self.param_bound < 0.0 || self.noise_scale < 0.0 {
            return Err(Error::config("L, S and R must be non-negative"));
        }
        Ok(())
    }

    /// Radius bound on `|theta_hat_t - theta|_{V_t}` after `t` observations:
    /// `R sqrt(d log((1 + t L^2 / lambda) / delta)) + sqrt(lambda) S`.
    pub fn width(&self, t: usize) -> Result<f64> {
        self.validate()?;
        Ok(self.width_unchecked(t))
    }

    pub(crate) fn width_unchecked(&self, t: usize) -> f64 {
        let growth = 1.0 + t as f64 * self.action_bound * self.action_bound / self.lambda;
        self.noise_scale * (self.dim as f64 * (growth / self.delta).ln()).sqrt()
            + self.lambda.sqrt() * self.param_bound
    }
}

/// Dense log-determinant of a symmetric positive-definite matrix, or `None`.
pub fn dense_logdet(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

/// Outer-product helper used by oracles and tests.
pub fn outer(a: &[f64]) -> DMatrix<f64> {
    let v = DVector::from_column_slice(a);
    &v * v.transpose()
}
