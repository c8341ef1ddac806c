//! Dataset pipelines: feature tables with a regression target, and rating
//! triplets factorized into low-rank embeddings.
//!
//! Feature tables become fixed-pool linear environments whose parameter is
//! a ridge fit of the target on the features. Ratings are factorized with
//! alternating least squares; item vectors become actions and a user vector
//! becomes the parameter.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use crate::envs::{ActionSet, Environment};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::BanditRng;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Per-column multipliers applied to the raw features: each column is
    /// divided by its largest magnitude, then all rows share one factor that
    /// brings the largest row norm to 1.
    pub scales: Vec<f64>,
}

impl FeatureDataset {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn parse_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn headers(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, format!("cannot read header: {e}")))?;
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(parse_error(path, "file is empty"));
    }
    Ok(headers.iter().map(str::to_string).collect())
}

fn parse_cell(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_error(path, format!("line {line}, column '{column}': '{raw}' is not a finite number")))
}

/// Reads a headered numeric CSV, splits off `target_column`, and rescales the
/// features so the largest row norm is 1.
pub fn load_feature_csv(path: impl AsRef<Path>, target_column: &str) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let names = headers(&mut reader, path)?;
    let target_idx = names
        .iter()
        .position(|n| n == target_column)
        .ok_or_else(|| parse_error(path, format!("missing target column '{target_column}'")))?;
    if names.len() < 2 {
        return Err(parse_error(path, "need at least one feature column besides the target"));
    }

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(parse_error(
                path,
                format!("line {line}: expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(names.len() - 1);
        for (j, raw) in record.iter().enumerate() {
            let v = parse_cell(path, line, &names[j], raw)?;
            if j == target_idx {
                targets.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(path, "no data rows"));
    }

    let d = names.len() - 1;
    let mut scales: Vec<f64> = (0..d)
        .map(|j| {
            let m = rows.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        })
        .collect();
    let max_norm = rows
        .iter()
        .map(|r| r.iter().zip(&scales).map(|(x, s)| (x * s).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if max_norm > 0.0 {
        scales.iter_mut().for_each(|s| *s /= max_norm);
    }
    for row in &mut rows {
        row.iter_mut().zip(&scales).for_each(|(x, s)| *x *= s);
    }
    let target_name = names[target_idx].clone();
    let feature_names = names.into_iter().enumerate().filter(|(j, _)| *j != target_idx).map(|(_, n)| n).collect();
    Ok(FeatureDataset {
        rows,
        targets,
        feature_names,
        target_name,
        scales,
    })
}

/// Ridge regression of the targets on the (scaled) features.
pub fn fit_theta_from_dataset(ds: &FeatureDataset, lambda_fit: f64) -> Result<Vec<f64>> {
    if !(lambda_fit >= 0.0) {
        return Err(Error::input("lambda_fit must be non-negative"));
    }
    let d = ds.dim();
    let mut gram = DMatrix::<f64>::identity(d, d) * lambda_fit;
    let mut xty = DVector::<f64>::zeros(d);
    for (row, y) in ds.rows.iter().zip(&ds.targets) {
        let x = DVector::from_column_slice(row);
        gram.ger(1.0, &x, &x, 1.0);
        xty.axpy(*y, &x, 1.0);
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::RankDeficient(format!("feature Gram matrix is singular with lambda_fit = {lambda_fit}"))
    })?;
    Ok(chol.solve(&xty).as_slice().to_vec())
}

/// Residual standard deviation of `theta` on the dataset, with `N - d` degrees of freedom.
pub fn residual_sigma(ds: &FeatureDataset, theta: &[f64]) -> f64 {
    let sse: f64 = ds
        .rows
        .iter()
        .zip(&ds.targets)
        .map(|(x, y)| (y - dot(x, theta)).powi(2))
        .sum();
    let dof = ds.len().saturating_sub(ds.dim()).max(1);
    (sse / dof as f64).sqrt()
}

/// Observed ratings with densely reindexed users and items.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix {
    pub entries: Vec<(usize, usize, f64)>,
    pub users: usize,
    pub items: usize,
}

impl RatingsMatrix {
    /// Reindexes arbitrary ids densely in order of first appearance.
    pub fn from_triplets<U, I>(triplets: impl IntoIterator<Item = (U, I, f64)>) -> Result<Self>
    where
        U: std::hash::Hash + Eq,
        I: std::hash::Hash + Eq,
    {
        let mut users = HashMap::new();
        let mut items = HashMap::new();
        let mut entries = Vec::new();
        for (u, i, r) in triplets {
            if !r.is_finite() {
                return Err(Error::input("ratings must be finite"));
            }
            let next_u = users.len();
            let next_i = items.len();
            let u = *users.entry(u).or_insert(next_u);
            let i = *items.entry(i).or_insert(next_i);
            entries.push((u, i, r));
        }
        if entries.is_empty() {
            return Err(Error::input("no ratings"));
        }
        Ok(Self {
            entries,
            users: users.len(),
            items: items.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads `user_id,item_id,rating` rows.
pub fn load_ratings_csv(path: impl AsRef<Path>) -> Result<RatingsMatrix> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let names = headers(&mut reader, path)?;
    let col = |name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| parse_error(path, format!("missing column '{name}'")))
    };
    let (cu, ci, cr) = (col("user_id")?, col("item_id")?, col("rating")?);
    let mut triplets = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |j: usize| {
            record
                .get(j)
                .ok_or_else(|| parse_error(path, format!("line {line}: missing field '{}'", names[j])))
        };
        let rating = parse_cell(path, line, "rating", field(cr)?)?;
        triplets.push((field(cu)?.to_string(), field(ci)?.to_string(), rating));
    }
    if triplets.is_empty() {
        return Err(parse_error(path, "no data rows"));
    }
    RatingsMatrix::from_triplets(triplets)
}

#[derive(Debug, Clone)]
pub struct Factorization {
    pub users: Vec<Vec<f64>>,
    pub items: Vec<Vec<f64>>,
    /// Regularized objective after every half-sweep.
    pub objective: Vec<f64>,
}

impl Factorization {
    pub fn predict(&self, user: usize, item: usize) -> f64 {
        dot(&self.users[user], &self.items[item])
    }

    /// Root mean squared error on the observed entries.
    pub fn rmse(&self, ratings: &RatingsMatrix) -> f64 {
        let sse: f64 = ratings
            .entries
            .iter()
            .map(|&(u, i, r)| (r - self.predict(u, i)).powi(2))
            .sum();
        (sse / ratings.len() as f64).sqrt()
    }
}

fn als_objective(ratings: &RatingsMatrix, users: &[Vec<f64>], items: &[Vec<f64>], lambda: f64) -> f64 {
    let sse: f64 = ratings
        .entries
        .iter()
        .map(|&(u, i, r)| (r - dot(&users[u], &items[i])).powi(2))
        .sum();
    let reg: f64 = users.iter().chain(items).map(|v| dot(v, v)).sum();
    sse + lambda * reg
}

/// Solves every row of `target` given the fixed factors `other`.
/// `groups[k]` lists `(other index, rating)` pairs observed for row `k`.
fn solve_side(groups: &[Vec<(usize, f64)>], other: &[Vec<f64>], target: &mut [Vec<f64>], rank: usize, lambda: f64) -> Result<()> {
    for (k, obs) in groups.iter().enumerate() {
        let mut gram = DMatrix::<f64>::identity(rank, rank) * lambda;
        let mut rhs = DVector::<f64>::zeros(rank);
        for &(j, r) in obs {
            let v = DVector::from_column_slice(&other[j]);
            gram.ger(1.0, &v, &v, 1.0);
            rhs.axpy(r, &v, 1.0);
        }
        // with lambda = 0 a row may be underdetermined; a pseudo-inverse keeps
        // the minimum-norm solution, which still minimizes the block
        let sol = match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => gram
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Internal(e.to_string()))?
                * rhs,
        };
        target[k].copy_from_slice(sol.as_slice());
    }
    Ok(())
}

/// Alternating ridge solves on the observed entries.
///
/// Each half-sweep exactly minimizes the regularized objective over one
/// factor, so the objective never increases; a rise beyond rounding is
/// reported as an internal error.
pub fn als_factorize(
    ratings: &RatingsMatrix,
    rank: usize,
    iters: usize,
    lambda: f64,
    rng: &mut BanditRng,
) -> Result<Factorization> {
    if ratings.is_empty() {
        return Err(Error::input("no ratings to factorize"));
    }
    if rank == 0 {
        return Err(Error::input("rank must be at least 1"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::input("lambda_als must be non-negative"));
    }
    let mut by_user = vec![Vec::new(); ratings.users];
    let mut by_item = vec![Vec::new(); ratings.items];
    for &(u, i, r) in &ratings.entries {
        by_user[u].push((i, r));
        by_item[i].push((u, r));
    }

    let init = Normal::new(0.0, 1.0 / (rank as f64).sqrt()).map_err(|e| Error::Internal(e.to_string()))?;
    let mut items: Vec<Vec<f64>> = (0..ratings.items)
        .map(|_| (0..rank).map(|_| init.sample(rng)).collect())
        .collect();
    let mut users = vec![vec![0.0; rank]; ratings.users];

    let mut objective = Vec::with_capacity(2 * iters);
    let mut last = f64::INFINITY;
    for sweep in 0..iters {
        for half in 0..2 {
            if half == 0 {
                solve_side(&by_user, &items, &mut users, rank, lambda)?;
            } else {
                solve_side(&by_item, &users, &mut items, rank, lambda)?;
            }
            let obj = als_objective(ratings, &users, &items, lambda);
            if obj > last + 1e-9 * last.abs().max(1.0) {
                return Err(Error::Internal(format!(
                    "ALS objective rose from {last} to {obj} in sweep {sweep}"
                )));
            }
            last = obj;
            objective.push(obj);
        }
    }
    Ok(Factorization { users, items, objective })
}

/// Fixed-pool environment over `k` vectors drawn without replacement, or all
/// of them when `k` is `None`.
pub fn dataset_to_env(
    vectors: &[Vec<f64>],
    theta_star: Vec<f64>,
    k: Option<usize>,
    sigma: f64,
    rng: &mut BanditRng,
) -> Result<Environment> {
    let pool = vectors.len();
    let rows: Vec<Vec<f64>> = match k {
        None => vectors.to_vec(),
        Some(k) if k > pool => {
            return Err(Error::config(format!("asked for {k} actions but only {pool} vectors are available")))
        }
        Some(k) => {
            let mut picked = sample(rng, pool, k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| vectors[i].clone()).collect()
        }
    };
    Environment::linear_fixed(ActionSet::from_rows(&rows)?, theta_star, sigma)
}

/// Rescales item vectors to unit max norm and divides every user vector by
/// the same factor, which leaves all predicted ratings unchanged.
pub fn normalize_embeddings(f: &Factorization) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let max_norm = f.items.iter().map(|v| dot(v, v).sqrt()).fold(0.0, f64::max);
    let c = if max_norm > 0.0 { 1.0 / max_norm } else { 1.0 };
    let items = f.items.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
    let users = f.users.iter().map(|v| v.iter().map(|x| x / c).collect()).collect();
    (items, users)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use rand::{Rng, SeedableRng};

    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_table() {
        let f = write_tmp("a,b,y\n1,2,3\n0,2,4\n0,0,1\n");
        let ds = load_feature_csv(f.path(), "y").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.targets, vec![3.0, 4.0, 1.0]);
        // columns to max magnitude 1, then rows by 1/sqrt(2)
        let r = 0.5f64.sqrt();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&ds.scales, &[r, 0.5 * r]), "{:?}", ds.scales);
        assert!(close(&ds.rows[1], &[0.0, r]), "{:?}", ds.rows[1]);
        assert_eq!(ds.rows[2], vec![0.0, 0.0]);
    }

    #[test]
    fn reports_positions() {
        let f = write_tmp("a,y\n1,2\nx,3\n");
        let err = load_feature_csv(f.path(), "y").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("'a'"), "{err}");

        let f = write_tmp("a,y\n1,2\n");
        let err = load_feature_csv(f.path(), "quality").unwrap_err().to_string();
        assert!(err.contains("quality"), "{err}");

        let f = write_tmp("");
        assert!(load_feature_csv(f.path(), "y").is_err());
        let f = write_tmp("a,y\n");
        assert!(load_feature_csv(f.path(), "y").is_err());
    }

    #[test]
    fn ridge_recovers_linear_targets() {
        let mut rng = BanditRng::seed_from_u64(1);
        let theta = [0.5, -1.0, 2.0];
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ds = FeatureDataset {
            targets: rows.iter().map(|r| dot(r, &theta)).collect(),
            rows,
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            target_name: "y".into(),
            scales: vec![1.0; 3],
        };
        let fit = fit_theta_from_dataset(&ds, 1e-8).unwrap();
        for (a, b) in fit.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(residual_sigma(&ds, &fit) < 1e-6);
    }

    #[test]
    fn single_feature_least_squares() {
        let xs = [0.2, 0.5, -0.3, 1.0];
        let ys = [0.1, 1.2, -0.4, 1.7];
        let ds = FeatureDataset {
            rows: xs.iter().map(|x| vec![*x]).collect(),
            targets: ys.to_vec(),
            feature_names: vec!["x".into()],
            target_name: "y".into(),
            scales: vec![1.0],
        };
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        assert!((fit_theta_from_dataset(&ds, 0.0).unwrap()[0] - sxy / sxx).abs() < 1e-12);
    }

    #[test]
    fn singular_features_need_regularization() {
        let ds = FeatureDataset {
            rows: vec![vec![1.0, 1.0], vec![0.5, 0.5]],
            targets: vec![1.0, 0.5],
            feature_names: vec!["a".into(), "b".into()],
            target_name: "y".into(),
            scales: vec![1.0; 2],
        };
        assert!(matches!(fit_theta_from_dataset(&ds, 0.0), Err(Error::RankDeficient(_))));
        assert!(fit_theta_from_dataset(&ds, 1e-3).is_ok());
    }

    fn dense_ratings(m: &DMatrix<f64>) -> RatingsMatrix {
        let mut t = Vec::new();
        for u in 0..m.nrows() {
            for i in 0..m.ncols() {
                t.push((u, i, m[(u, i)]));
            }
        }
        RatingsMatrix::from_triplets(t).unwrap()
    }

    #[test]
    fn als_rank_one_exact() {
        let u = DVector::from_vec(vec![1.0, 2.0, -0.5, 3.0]);
        let v = DVector::from_vec(vec![0.3, -1.0, 0.7, 2.0, 1.1]);
        let r = dense_ratings(&(&u * v.transpose()));
        let mut rng = BanditRng::seed_from_u64(7);
        let f = als_factorize(&r, 1, 50, 1e-12, &mut rng).unwrap();
        assert!(f.rmse(&r) <= 1e-6, "{}", f.rmse(&r));
    }

    #[test]
    fn als_full_rank_exact() {
        let mut rng = BanditRng::seed_from_u64(8);
        let m = DMatrix::from_fn(6, 4, |_, _| rng.gen_range(-2.0..2.0));
        let r = dense_ratings(&m);
        let f = als_factorize(&r, 4, 50, 1e-12, &mut rng).unwrap();
        assert!(f.rmse(&r) <= 1e-6, "{}", f.rmse(&r));
    }

    #[test]
    fn als_noisy_rank_three() {
        let mut rng = BanditRng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let a = DMatrix::from_fn(50, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(40, 3, |_, _| rng.gen_range(-1.0..1.0));
        let mut m = a * b.transpose();
        m.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
        let r = dense_ratings(&m);
        let f = als_factorize(&r, 3, 100, 1e-6, &mut rng).unwrap();
        let rmse = f.rmse(&r);
        assert!((rmse - 0.1).abs() <= 0.01, "{rmse}");
        assert!(f.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0]));
    }

    #[test]
    fn als_is_deterministic() {
        let r = RatingsMatrix::from_triplets(vec![(0, 0, 4.0), (0, 1, 3.0), (1, 1, 5.0), (2, 0, 1.0), (2, 2, 2.0)]).unwrap();
        let a = als_factorize(&r, 2, 10, 0.1, &mut BanditRng::seed_from_u64(3)).unwrap();
        let b = als_factorize(&r, 2, 10, 0.1, &mut BanditRng::seed_from_u64(3)).unwrap();
        assert_eq!(a.users, b.users);
        assert_eq!(a.items, b.items);
        assert!(als_factorize(&r, 0, 10, 0.1, &mut BanditRng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn ratings_reindex_densely() {
        let r = RatingsMatrix::from_triplets(vec![("u9", 100, 1.0), ("u2", 7, 2.0), ("u9", 7, 3.0)]).unwrap();
        assert_eq!((r.users, r.items), (2, 2));
        assert_eq!(r.entries, vec![(0, 0, 1.0), (1, 1, 2.0), (0, 1, 3.0)]);
        assert!(RatingsMatrix::from_triplets(Vec::<(u8, u8, f64)>::new()).is_err());
    }

    #[test]
    fn env_from_vectors() {
        let vectors: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
        let mut rng = BanditRng::seed_from_u64(0);
        let env = dataset_to_env(&vectors, vec![1.0, 0.0], Some(4), 0.1, &mut rng).unwrap();
        assert_eq!(env.num_actions(), 4);
        let all = dataset_to_env(&vectors, vec![1.0, 0.0], None, 0.1, &mut rng).unwrap();
        assert_eq!(all.num_actions(), 10);
        assert!(matches!(
            dataset_to_env(&vectors, vec![1.0, 0.0], Some(11), 0.1, &mut rng),
            Err(Error::Config(_))
        ));

        let a = dataset_to_env(&vectors, vec![1.0, 0.0], Some(4), 0.1, &mut BanditRng::seed_from_u64(5)).unwrap();
        let b = dataset_to_env(&vectors, vec![1.0, 0.0], Some(4), 0.1, &mut BanditRng::seed_from_u64(5)).unwrap();
        assert_eq!(a.fixed_actions(), b.fixed_actions());
    }

    #[test]
    fn normalized_embeddings_preserve_predictions() {
        let r = RatingsMatrix::from_triplets(vec![(0, 0, 4.0), (0, 1, 3.0), (1, 1, 5.0), (1, 0, 1.0)]).unwrap();
        let f = als_factorize(&r, 2, 5, 0.1, &mut BanditRng::seed_from_u64(1)).unwrap();
        let (items, users) = normalize_embeddings(&f);
        let max = items.iter().map(|v| dot(v, v).sqrt()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        for u in 0..2 {
            for i in 0..2 {
                assert!((dot(&users[u], &items[i]) - f.predict(u, i)).abs() < 1e-9);
            }
        }
    }
}
