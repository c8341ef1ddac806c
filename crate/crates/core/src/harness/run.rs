use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::config::{EnvSource, ExperimentConfig};
use super::output::{aggregate, RawRow, ResultsTable};
use crate::data::{
    als_factorize, dataset_to_env, fit_theta_from_dataset, load_feature_csv, load_ratings_csv, normalize_embeddings,
    residual_sigma,
};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;
use crate::metrics::{elliptical_potential_bound, instant_regret, MetricsAccumulator, UncertaintyTracker};
use crate::policies::{build_policy, Algorithm, PolicyConfig};
use crate::BanditRng;

const STREAM_ENV: u64 = 1;
const STREAM_CONTEXT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_POLICY: u64 = 4;
const STREAM_DATA: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one random stream, derived from the base seed, run index and stream tag.
pub fn stream_seed(base: u64, run: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ run) ^ stream)
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of an algorithm's own stream; only its label and optional seed feed in.
pub fn policy_seed(base: u64, run: u64, cfg: &PolicyConfig) -> u64 {
    let own = cfg.seed.unwrap_or(base) ^ fnv1a(&cfg.label());
    stream_seed(own, run, STREAM_POLICY)
}

/// Everything needed to draw a run's environment, loaded once per experiment.
#[derive(Debug, Clone)]
pub enum EnvFactory {
    KArmed(Environment),
    Synthetic { changing: bool, d: usize, k: usize, sigma: f64 },
    /// Actions are drawn from `vectors`; `thetas` holds one or more candidate parameters.
    Pool {
        vectors: Vec<Vec<f64>>,
        thetas: Vec<Vec<f64>>,
        k: Option<usize>,
        sigma: f64,
    },
}

impl EnvFactory {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = &cfg.environment;
        match spec.kind {
            EnvSource::KArmed => {
                let sigma = spec.sigma.unwrap_or(1.0);
                let env = match &spec.means {
                    Some(means) => Environment::k_armed(means.clone(), sigma),
                    None => Environment::k_armed_gap(spec.k.unwrap_or(2), spec.gap.unwrap_or(0.0), sigma),
                }
                .map_err(|e| Error::config(e.to_string()))?;
                Ok(Self::KArmed(env))
            }
            EnvSource::LinearFixed | EnvSource::LinearChanging => Ok(Self::Synthetic {
                changing: spec.kind == EnvSource::LinearChanging,
                d: spec.d.unwrap_or(1),
                k: spec.k.unwrap_or(2),
                sigma: spec.sigma.unwrap_or(1.0),
            }),
            EnvSource::Features => {
                let path = cfg.dataset_path().ok_or_else(|| Error::config("missing dataset path"))?;
                let target = spec.target_column.as_deref().unwrap_or_default();
                let ds = load_feature_csv(&path, target)?;
                let theta = fit_theta_from_dataset(&ds, spec.lambda_fit)?;
                let sigma = spec.sigma.unwrap_or_else(|| residual_sigma(&ds, &theta));
                log::info!(
                    "{}: {} rows, d = {}, residual sigma {:.4}",
                    path.display(),
                    ds.len(),
                    ds.dim(),
                    residual_sigma(&ds, &theta)
                );
                Ok(Self::Pool {
                    vectors: ds.rows,
                    thetas: vec![theta],
                    k: spec.k,
                    sigma,
                })
            }
            EnvSource::Ratings => {
                let path = cfg.dataset_path().ok_or_else(|| Error::config("missing dataset path"))?;
                let ratings = load_ratings_csv(&path)?;
                let mut rng = BanditRng::seed_from_u64(stream_seed(cfg.seed, 0, STREAM_DATA));
                let f = als_factorize(&ratings, spec.rank, spec.als_iters, spec.lambda_als, &mut rng)?;
                let rmse = f.rmse(&ratings);
                log::info!(
                    "{}: {} users, {} items, rank {} fit rmse {rmse:.4}",
                    path.display(),
                    ratings.users,
                    ratings.items,
                    spec.rank
                );
                let (items, users) = normalize_embeddings(&f);
                Ok(Self::Pool {
                    vectors: items,
                    thetas: users,
                    k: spec.k,
                    sigma: spec.sigma.unwrap_or(rmse),
                })
            }
        }
    }

    pub fn draw(&self, rng: &mut BanditRng) -> Result<Environment> {
        match self {
            Self::KArmed(env) => Ok(env.clone()),
            Self::Synthetic { changing: false, d, k, sigma } => Environment::gen_synthetic_linear(*d, *k, *sigma, rng),
            Self::Synthetic { changing: true, d, k, sigma } => Environment::gen_changing_linear(*d, *k, *sigma, rng),
            Self::Pool { vectors, thetas, k, sigma } => {
                let theta = thetas[rng.gen_range(0..thetas.len())].clone();
                dataset_to_env(vectors, theta, *k, *sigma, rng)
            }
        }
    }
}

/// Rounds logged to the raw table: 1, every `n/100`-th round, and `n`.
pub fn checkpoints(n: usize) -> Vec<usize> {
    let step = (n / 100).max(1);
    let mut rounds: Vec<usize> = std::iter::once(1).chain((step..=n).step_by(step)).collect();
    rounds.push(n);
    rounds.dedup();
    rounds
}

/// Theory checks gathered alongside the metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDiagnostics {
    /// `sum_t |A_t|^2_{V_t^-1}` under the evaluated algorithm's own design matrix.
    pub potential_sum: f64,
    /// Bound on `potential_sum`; only set when `lambda >= L^2` for the true action bound `L`.
    pub potential_bound: Option<f64>,
    /// The same sum for the played actions under a reference design with
    /// `lambda = L^2`, where the bound always applies.
    pub reference_potential_sum: f64,
    pub reference_potential_bound: f64,
    /// The truth stayed inside the confidence region in every round.
    pub always_covered: bool,
    /// K-armed CODE only: rounds checked and violations of the per-round
    /// regret and optimal-arm width inequalities.
    pub lemma_checks: u64,
    pub lemma_violations: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub algorithm: String,
    pub run: usize,
    pub regret: f64,
    pub uncertainty: f64,
    /// `(round, regret_cum, q_cum)` at each logged round.
    pub trace: Vec<(usize, f64, f64)>,
    pub diagnostics: RunDiagnostics,
}

/// The environment every algorithm faces in run `run`.
pub fn run_environment(factory: &EnvFactory, seed: u64, run: usize) -> Result<Environment> {
    factory.draw(&mut BanditRng::seed_from_u64(stream_seed(seed, run as u64, STREAM_ENV)))
}

fn true_action_bound(env: &Environment) -> f64 {
    env.fixed_actions().map_or(env.action_bound(), |set| set.max_norm())
}

/// Simulates one `(algorithm, run)` pair.
pub fn simulate_run(
    factory: &EnvFactory,
    cfg: &ExperimentConfig,
    alg: &PolicyConfig,
    run: usize,
    full_trace: bool,
) -> Result<RunResult> {
    let base = cfg.seed;
    let r = run as u64;
    let env = run_environment(factory, base, run)?;
    let mut ctx_rng = BanditRng::seed_from_u64(stream_seed(base, r, STREAM_CONTEXT));
    let mut noise_rng = BanditRng::seed_from_u64(stream_seed(base, r, STREAM_NOISE));
    let mut policy_rng = BanditRng::seed_from_u64(policy_seed(base, r, alg));

    let n = cfg.n;
    let mut policy = build_policy(alg, &env, n)?;
    let mut tracker = UncertaintyTracker::for_policy(alg, &env, n)?;
    let mut acc = MetricsAccumulator::new(false);
    let logged = checkpoints(n);
    let mut next_log = 0;
    let mut trace = Vec::with_capacity(if full_trace { n } else { logged.len() });

    let l = true_action_bound(&env);
    let linear = tracker.linear().is_some();
    let potential_bound = (linear && alg.lambda >= l * l).then(|| elliptical_potential_bound(env.dim(), n, l, alg.lambda));
    let ref_lambda = (l * l).max(f64::MIN_POSITIVE);
    let mut reference = DesignMatrix::new(env.dim(), ref_lambda)?;
    let check_lemmas = alg.algorithm == Algorithm::Code && !linear;
    let mut diag = RunDiagnostics {
        potential_sum: 0.0,
        potential_bound,
        reference_potential_sum: 0.0,
        reference_potential_bound: elliptical_potential_bound(env.dim(), n, l, ref_lambda),
        always_covered: true,
        lemma_checks: 0,
        lemma_violations: 0,
    };

    for t in 1..=n {
        let ctx = env.next_round(t, &mut ctx_rng);
        let idx = policy.select(&ctx, &mut policy_rng)?;
        if idx >= ctx.actions.len() {
            return Err(Error::Internal(format!("{} chose index {idx} of {}", alg.label(), ctx.actions.len())));
        }
        let view = tracker.view(&env, &ctx, idx)?;
        acc.push(instant_regret(&env, &ctx, idx), view.uncertainty)?;
        diag.potential_sum += view.chosen_variance.unwrap_or(0.0);
        let played = ctx.actions.get(idx);
        diag.reference_potential_sum += reference.mahalanobis_sq(played)?;
        reference.rank_one_update(played)?;
        diag.always_covered &= view.covered;
        if check_lemmas && view.covered {
            if let Some(state) = tracker.karmed() {
                if state.pulls().iter().all(|&p| p > 0) {
                    let mu = env.theta_star();
                    let best = env.optimal_index().unwrap_or(0);
                    let (c_a, c_best) = (state.width(idx), state.width(best));
                    diag.lemma_checks += 1;
                    let tol = 1e-12;
                    if mu[best] - mu[idx] > 2.0 * c_a + 2.0 * c_best + tol {
                        diag.lemma_violations += 1;
                    }
                    if view.plausible.contains(&best) && c_a + tol < c_best {
                        diag.lemma_violations += 1;
                    }
                }
            }
        }
        let reward = env.sample_reward(ctx.actions.get(idx), &mut noise_rng);
        policy.observe(&ctx, idx, reward)?;
        tracker.record(&ctx, idx, reward)?;

        let log_now = if full_trace {
            true
        } else if next_log < logged.len() && logged[next_log] == t {
            next_log += 1;
            true
        } else {
            false
        };
        if log_now {
            trace.push((t, acc.regret(), acc.uncertainty()));
        }
    }

    let checks = [
        (Some(diag.reference_potential_sum), Some(diag.reference_potential_bound)),
        (Some(diag.potential_sum), diag.potential_bound),
    ];
    for (sum, bound) in checks {
        if let (Some(sum), Some(bound)) = (sum, bound) {
            if sum > bound {
                return Err(Error::Internal(format!(
                    "{} run {run}: elliptical potential {sum} exceeds bound {bound}",
                    alg.label()
                )));
            }
        }
    }
    Ok(RunResult {
        algorithm: alg.label(),
        run,
        regret: acc.regret(),
        uncertainty: acc.uncertainty(),
        trace,
        diagnostics: diag,
    })
}

/// Runs every `(algorithm, run)` pair with at most `threads` workers.
/// Results are ordered by algorithm (config order) then run, independent of scheduling.
pub fn run_experiment_with(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<(ResultsTable, Vec<RunResult>)> {
    cfg.validate()?;
    let factory = EnvFactory::prepare(cfg)?;
    let tasks: Vec<(usize, usize)> = (0..cfg.algorithms.len())
        .flat_map(|a| (0..cfg.runs).map(move |r| (a, r)))
        .collect();
    let work = || -> Result<Vec<RunResult>> {
        tasks
            .par_iter()
            .map(|&(a, r)| simulate_run(&factory, cfg, &cfg.algorithms[a], r, cfg.full_trace))
            .collect()
    };
    let results = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?
            .install(work)?,
        None => work()?,
    };

    let raw: Vec<RawRow> = results
        .iter()
        .flat_map(|res| {
            res.trace.iter().map(move |&(round, regret_cum, q_cum)| RawRow {
                algorithm: res.algorithm.clone(),
                run: res.run,
                round,
                regret_cum,
                q_cum,
            })
        })
        .collect();
    let aggregate = aggregate(&raw);
    Ok((ResultsTable { raw, aggregate }, results))
}

/// Threads come from `BENCH_THREADS` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ResultsTable, Vec<RunResult>)> {
    let threads = std::env::var("BENCH_THREADS").ok().and_then(|v| v.parse().ok());
    run_experiment_with(cfg, threads)
}
