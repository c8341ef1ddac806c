use std::sync::Arc;

use code_bandits::design::{ambient_logdet, d_optimal_design};
use code_bandits::envs::{ActionSet, RoundContext};
use code_bandits::linalg::{DesignMatrix, EllipsoidWidth};
use code_bandits::policies::{code_select_karmed, code_select_linear, plausible_set, Bounds, KArmedState, LinearState};
use code_bandits::BanditRng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn width_cfg(dim: usize, lambda: f64) -> EllipsoidWidth {
    EllipsoidWidth {
        delta: 0.05,
        action_bound: 1.0,
        param_bound: 1.0,
        noise_scale: 0.5,
        lambda,
        dim,
    }
}

fn ctx_of(rows: &[Vec<f64>], t: usize) -> RoundContext {
    RoundContext {
        t,
        actions: Arc::new(ActionSet::from_rows(rows).unwrap()),
    }
}

#[test]
fn logdet_argmax_matches_variance_argmax() {
    let mut rng = BanditRng::seed_from_u64(7);
    for _ in 0..500 {
        let d = rng.gen_range(2..=5);
        let k = rng.gen_range(2..=12);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut state = LinearState::new(d, width_cfg(d, 1.0)).unwrap();
        for _ in 0..rng.gen_range(0..30) {
            let a = &rows[rng.gen_range(0..k)];
            state.record(a, rng.gen_range(-1.0..1.0)).unwrap();
        }
        let ctx = ctx_of(&rows, 1);
        let chosen = code_select_linear(&state, &ctx).unwrap();
        let plausible = plausible_set(&state.bounds(&ctx.actions).unwrap());
        assert!(plausible.contains(&chosen));

        let v = state.design().matrix().clone();
        let base = v.clone().cholesky().unwrap().determinant().ln();
        let gain = |i: usize| {
            let a = DVector::from_column_slice(&rows[i]);
            (&v + &a * a.transpose()).cholesky().unwrap().determinant().ln() - base
        };
        let best = plausible.iter().map(|&i| gain(i)).fold(f64::NEG_INFINITY, f64::max);
        assert!((gain(chosen) - best).abs() < 1e-9, "chose {chosen}, gain {} < {best}", gain(chosen));
    }
}

#[test]
fn karmed_and_basis_linear_agree_when_all_arms_plausible() {
    let mut rng = BanditRng::seed_from_u64(11);
    for _ in 0..200 {
        let k = rng.gen_range(2..=6);
        let pulls: Vec<u64> = (0..k).map(|_| rng.gen_range(1..=15)).collect();
        let karmed = KArmedState::from_parts(pulls.clone(), &vec![0.5; k], 0.05).unwrap();

        let basis: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let mut linear = LinearState::new(k, width_cfg(k, 1e-8)).unwrap();
        for (arm, &p) in pulls.iter().enumerate() {
            for _ in 0..p {
                linear.record(&basis[arm], 0.5).unwrap();
            }
        }
        let ctx = ctx_of(&basis, 1);
        assert_eq!(code_select_karmed(&karmed), code_select_linear(&linear, &ctx).unwrap(), "pulls {pulls:?}");
    }
}

/// Multiplicative-update D-optimal solver used only as a reference.
fn reference_design(rows: &[&[f64]], iters: usize) -> Vec<f64> {
    let k = rows.len();
    let d = rows[0].len() as f64;
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..iters {
        let mut m = DMatrix::<f64>::zeros(rows[0].len(), rows[0].len());
        for (a, &wi) in rows.iter().zip(&w) {
            let v = DVector::from_column_slice(a);
            m += wi * &v * v.transpose();
        }
        let inv = m.try_inverse().unwrap();
        for (a, wi) in rows.iter().zip(w.iter_mut()) {
            let v = DVector::from_column_slice(a);
            *wi *= (v.transpose() * &inv * &v)[(0, 0)] / d;
        }
    }
    w
}

#[test]
fn design_logdet_matches_reference_solver() {
    let mut rng = BanditRng::seed_from_u64(13);
    for _ in 0..40 {
        let d = rng.gen_range(2..=4);
        let k = rng.gen_range(d + 2..=15);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let design = d_optimal_design(&refs, 1e-4).unwrap();
        let weights: Vec<f64> = (0..k).map(|i| design.weight(i)).collect();
        let ours = ambient_logdet(&refs, &weights).unwrap();
        let reference = ambient_logdet(&refs, &reference_design(&refs, 5000)).unwrap();
        // a design with g <= d(1 + eps) is within d*eps of the optimal logdet
        assert!(ours >= reference - d as f64 * 1e-4 - 1e-6, "ours {ours}, reference {reference}, g {} d {d} iters {}", design.g_value, design.objective_trace.len());
    }
}

proptest! {
    #[test]
    fn plausible_set_never_empty(
        pairs in prop::collection::vec((-10.0f64..10.0, 0.0f64..5.0), 1..30)
    ) {
        let bounds = Bounds {
            ucb: pairs.iter().map(|(m, w)| m + w).collect(),
            lcb: pairs.iter().map(|(m, w)| m - w).collect(),
        };
        let set = plausible_set(&bounds);
        prop_assert!(!set.is_empty());
        let top = bounds.lcb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let holder = bounds.lcb.iter().position(|&l| l == top).unwrap();
        prop_assert!(set.contains(&holder));
    }

    #[test]
    fn logdet_gain_matches_determinant_lemma(
        seed in any::<u64>(),
        d in 1usize..6,
        updates in 0usize..20,
    ) {
        let mut rng = BanditRng::seed_from_u64(seed);
        let mut design = DesignMatrix::new(d, 0.5).unwrap();
        for _ in 0..updates {
            let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            design.rank_one_update(&a).unwrap();
        }
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = design.matrix().clone();
        let av = DVector::from_column_slice(&a);
        let dense = (&v + &av * av.transpose()).cholesky().unwrap().determinant().ln()
            - v.cholesky().unwrap().determinant().ln();
        prop_assert!((design.logdet_gain(&a).unwrap() - dense).abs() < 1e-9);
    }
}
