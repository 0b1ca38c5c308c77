//! Learning a weighted Euclidean distance over standardized covariates.
//!
//! The metric stretches covariates that predict the outcome and shrinks the
//! rest, so nearest neighbors under the learned distance are close where it
//! matters. The fit minimizes a smooth leave-one-out k-NN regression loss,
//! evaluated separately per treatment arm:
//!
//!   L(w) = (1/n) * sum_i (y_i - yhat_i)^2 + lambda * sum_d w_d^2
//!
//! where yhat_i is the softmin-weighted mean outcome of i's k nearest
//! same-arm neighbors under d(w, x, x') = sqrt(sum_d w_d^2 (z_d - z'_d)^2),
//! with z the standardized covariates.

use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-covariate standardization fit on a training matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Zero-variance covariates: sd forced to 1 and flagged here.
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Column means and sample standard deviations (n-1 denominator).
    pub fn fit(rows: &[Vec<f64>]) -> Standardizer {
        assert!(rows.len() >= 2, "standardizer needs at least 2 rows");
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; p];
        for row in rows {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut sds = vec![0.0; p];
        for row in rows {
            for d in 0..p {
                let diff = row[d] - means[d];
                sds[d] += diff * diff;
            }
        }
        let mut constant = vec![false; p];
        for d in 0..p {
            let var = sds[d] / (n - 1.0);
            if var > 0.0 {
                sds[d] = var.sqrt();
            } else {
                sds[d] = 1.0;
                constant[d] = true;
            }
        }
        Standardizer {
            means,
            sds,
            constant,
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn transform_value(&self, d: usize, x: f64) -> f64 {
        (x - self.means[d]) / self.sds[d]
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, &x)| self.transform_value(d, x))
            .collect()
    }
}

/// Training units for metric learning and matching.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
    pub outcomes: Vec<f64>,
    pub treated: Vec<bool>,
    index: BTreeMap<String, usize>,
}

impl TrainingSet {
    pub fn new(
        ids: Vec<String>,
        covariates: Vec<Vec<f64>>,
        outcomes: Vec<f64>,
        treated: Vec<bool>,
    ) -> Result<TrainingSet> {
        let n = ids.len();
        if covariates.len() != n || outcomes.len() != n || treated.len() != n {
            return Err(Error::Data(
                "training set fields have mismatched lengths".into(),
            ));
        }
        let p = covariates.first().map(|r| r.len()).unwrap_or(0);
        if covariates.iter().any(|r| r.len() != p) {
            return Err(Error::Data("covariate rows have mismatched widths".into()));
        }
        let mut index = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate unit id `{id}`")));
            }
        }
        Ok(TrainingSet {
            ids,
            covariates,
            outcomes,
            treated,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.covariates.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        let treated = self.treated.iter().filter(|t| **t).count();
        (treated, self.len() - treated)
    }

    /// Subset preserving order.
    pub fn subset(&self, keep: &[usize]) -> TrainingSet {
        TrainingSet::new(
            keep.iter().map(|&i| self.ids[i].clone()).collect(),
            keep.iter().map(|&i| self.covariates[i].clone()).collect(),
            keep.iter().map(|&i| self.outcomes[i]).collect(),
            keep.iter().map(|&i| self.treated[i]).collect(),
        )
        .expect("subset of a valid training set is valid")
    }
}

/// Hyperparameters for the metric fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    /// Neighbors in the leave-one-out regression loss.
    pub k: usize,
    /// Ridge penalty on the weights.
    pub lambda: f64,
    /// Maximum coordinate-descent sweeps.
    pub budget: usize,
    /// Upper bound of the per-coordinate line search.
    pub w_max: f64,
    /// Stop when a full sweep improves the objective by less than this,
    /// relatively.
    pub tol: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            k: 10,
            lambda: 0.01,
            budget: 200,
            w_max: 10.0,
            tol: 1e-6,
        }
    }
}

/// A fitted metric: nonnegative per-covariate stretch weights (rescaled to
/// sum to the covariate count) plus the standardization they were learned in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedMetric {
    pub weights: Vec<f64>,
    pub standardizer: Standardizer,
    pub objective_trace: Vec<f64>,
}

impl LearnedMetric {
    pub fn new(weights: Vec<f64>, standardizer: Standardizer) -> LearnedMetric {
        assert_eq!(weights.len(), standardizer.len());
        LearnedMetric {
            weights,
            standardizer,
            objective_trace: Vec::new(),
        }
    }

    /// d(x1, x2) = sqrt(sum_d w_d^2 (z1_d - z2_d)^2).
    pub fn distance(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let p = self.weights.len();
        if x1.len() != p || x2.len() != p {
            return Err(Error::Data(format!(
                "distance: expected vectors of length {p}, got {} and {}",
                x1.len(),
                x2.len()
            )));
        }
        let mut acc = 0.0;
        for d in 0..p {
            let z1 = self.standardizer.transform_value(d, x1[d]);
            let z2 = self.standardizer.transform_value(d, x2[d]);
            let term = self.weights[d] * (z1 - z2);
            acc += term * term;
        }
        Ok(acc.sqrt())
    }

    /// `covariate,weight` CSV with a metadata comment block.
    pub fn to_csv(&self, names: &[String], params: &MetricParams, seed: u64) -> String {
        let final_obj = self.objective_trace.last().copied().unwrap_or(f64::NAN);
        let mut out = String::new();
        out.push_str(&format!(
            "# k={} lambda={} seed={} final_objective={}\n",
            params.k, params.lambda, seed, final_obj
        ));
        out.push_str("covariate,weight\n");
        for (name, w) in names.iter().zip(&self.weights) {
            out.push_str(&format!("{name},{w}\n"));
        }
        out
    }
}

/// Per-arm cache used by the objective and the coordinate optimizer.
struct ArmCache {
    /// Standardized covariates, row-major m x p.
    z: Vec<f64>,
    y: Vec<f64>,
    m: usize,
}

struct Evaluator {
    arms: Vec<ArmCache>,
    p: usize,
    k: usize,
    lambda: f64,
    n_total: usize,
}

impl Evaluator {
    fn new(units: &TrainingSet, std: &Standardizer, k: usize, lambda: f64) -> Result<Evaluator> {
        let p = units.width();
        let mut arms = Vec::new();
        for arm_treated in [true, false] {
            let members: Vec<usize> = (0..units.len())
                .filter(|&i| units.treated[i] == arm_treated)
                .collect();
            if members.len() <= k {
                return Err(Error::Data(format!(
                    "{} arm has {} units; need more than k = {k}",
                    if arm_treated { "treated" } else { "control" },
                    members.len()
                )));
            }
            let mut z = Vec::with_capacity(members.len() * p);
            let mut y = Vec::with_capacity(members.len());
            for &i in &members {
                z.extend(std.transform_row(&units.covariates[i]));
                y.push(units.outcomes[i]);
            }
            arms.push(ArmCache {
                z,
                y,
                m: members.len(),
            });
        }
        Ok(Evaluator {
            arms,
            p,
            k,
            lambda,
            n_total: units.len(),
        })
    }

    /// Squared distances for one arm under `weights` (self-pairs included;
    /// they are skipped at selection time).
    fn arm_d2(&self, arm: &ArmCache, weights: &[f64]) -> Vec<f64> {
        let m = arm.m;
        let p = self.p;
        let w2: Vec<f64> = weights.iter().map(|w| w * w).collect();
        let mut d2 = vec![0.0; m * m];
        for i in 0..m {
            let zi = &arm.z[i * p..(i + 1) * p];
            for j in (i + 1)..m {
                let zj = &arm.z[j * p..(j + 1) * p];
                let mut acc = 0.0;
                for d in 0..p {
                    let diff = zi[d] - zj[d];
                    acc += w2[d] * diff * diff;
                }
                d2[i * m + j] = acc;
                d2[j * m + i] = acc;
            }
        }
        d2
    }

    /// Sum of squared leave-one-out residuals for one arm, with squared
    /// distances given by `d2(i, j)`.
    fn arm_sq_err(&self, arm: &ArmCache, k: usize, d2_at: impl Fn(usize, usize) -> f64) -> f64 {
        let m = arm.m;
        let mut total = 0.0;
        let mut best_d = vec![0.0f64; k];
        let mut best_j = vec![0usize; k];
        for i in 0..m {
            let mut count = 0;
            for j in 0..m {
                if j == i {
                    continue;
                }
                let v = d2_at(i, j);
                if count < k {
                    // Insert into the sorted prefix.
                    let mut pos = count;
                    while pos > 0 && (v, j) < (best_d[pos - 1], best_j[pos - 1]) {
                        best_d[pos] = best_d[pos - 1];
                        best_j[pos] = best_j[pos - 1];
                        pos -= 1;
                    }
                    best_d[pos] = v;
                    best_j[pos] = j;
                    count += 1;
                } else if (v, j) < (best_d[k - 1], best_j[k - 1]) {
                    let mut pos = k - 1;
                    while pos > 0 && (v, j) < (best_d[pos - 1], best_j[pos - 1]) {
                        best_d[pos] = best_d[pos - 1];
                        best_j[pos] = best_j[pos - 1];
                        pos -= 1;
                    }
                    best_d[pos] = v;
                    best_j[pos] = j;
                }
            }
            // Softmin over the k selected neighbors, stabilized by the
            // smallest distance.
            let d_min = best_d[0].max(0.0).sqrt();
            let mut s_sum = 0.0;
            let mut y_acc = 0.0;
            for t in 0..count {
                let d = best_d[t].max(0.0).sqrt();
                let s = (-(d - d_min)).exp();
                s_sum += s;
                y_acc += s * arm.y[best_j[t]];
            }
            let y_hat = y_acc / s_sum;
            let resid = arm.y[i] - y_hat;
            total += resid * resid;
        }
        total
    }

    /// Full objective under `weights`.
    fn objective(&self, weights: &[f64]) -> f64 {
        let mut sq = 0.0;
        for arm in &self.arms {
            let d2 = self.arm_d2(arm, weights);
            let m = arm.m;
            sq += self.arm_sq_err(arm, self.k, |i, j| d2[i * m + j]);
        }
        let penalty: f64 = weights.iter().map(|w| w * w).sum();
        sq / self.n_total as f64 + self.lambda * penalty
    }

    /// Objective when coordinate `dim` moves from `w_old` to `w_new`, with
    /// the other coordinates' contribution fixed in the cached `d2` matrices.
    fn objective_with_dim(
        &self,
        d2_arms: &[Vec<f64>],
        dim: usize,
        w_old: f64,
        w_new: f64,
        penalty_others: f64,
    ) -> f64 {
        let delta_w2 = w_new * w_new - w_old * w_old;
        let mut sq = 0.0;
        for (arm, d2) in self.arms.iter().zip(d2_arms) {
            let m = arm.m;
            let p = self.p;
            let z = &arm.z;
            sq += self.arm_sq_err(arm, self.k, |i, j| {
                let diff = z[i * p + dim] - z[j * p + dim];
                d2[i * m + j] + delta_w2 * diff * diff
            });
        }
        sq / self.n_total as f64 + self.lambda * (penalty_others + w_new * w_new)
    }

    /// Apply an accepted coordinate move to the cached distance matrices.
    fn commit_dim(&self, d2_arms: &mut [Vec<f64>], dim: usize, w_old: f64, w_new: f64) {
        let delta_w2 = w_new * w_new - w_old * w_old;
        for (arm, d2) in self.arms.iter().zip(d2_arms.iter_mut()) {
            let m = arm.m;
            let p = self.p;
            for i in 0..m {
                let zi = arm.z[i * p + dim];
                for j in 0..m {
                    let diff = zi - arm.z[j * p + dim];
                    d2[i * m + j] += delta_w2 * diff * diff;
                }
            }
        }
    }
}

/// The smooth leave-one-out k-NN regression loss described in the module
/// docs, for explicit weights.
pub fn malts_objective(weights: &[f64], units: &TrainingSet, k: usize, lambda: f64) -> Result<f64> {
    if weights.len() != units.width() {
        return Err(Error::Data(format!(
            "objective: {} weights for {} covariates",
            weights.len(),
            units.width()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Data(
            "objective: weights must be finite and nonnegative".into(),
        ));
    }
    let std = Standardizer::fit(&units.covariates);
    let eval = Evaluator::new(units, &std, k, lambda)?;
    Ok(eval.objective(weights))
}

fn golden_section_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - (b - a) * INV_PHI;
    let mut d = a + (b - a) * INV_PHI;
    let mut fc = f(c);
    let mut fd = f(d);
    let (mut best_t, mut best_f) = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INV_PHI;
            fc = f(c);
            if fc < best_f {
                best_f = fc;
                best_t = c;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INV_PHI;
            fd = f(d);
            if fd < best_f {
                best_f = fd;
                best_t = d;
            }
        }
    }
    (best_t, best_f)
}

const GOLDEN_ITERS: usize = 14;

/// Fit the metric by projected per-coordinate golden-section descent from
/// uniform initial weights. Zero-variance covariates are excluded and get
/// weight zero; final weights are rescaled to sum to the covariate count.
/// Deterministic for a given seed (the seed shuffles coordinate order).
pub fn learn_metric(
    units: &TrainingSet,
    params: &MetricParams,
    seed: u64,
) -> Result<LearnedMetric> {
    let std = Standardizer::fit(&units.covariates);
    let eval = Evaluator::new(units, &std, params.k, params.lambda)?;
    let p = units.width();
    if p == 0 {
        return Err(Error::Data("no covariates to learn a metric over".into()));
    }
    let active: Vec<usize> = (0..p).filter(|&d| !std.constant[d]).collect();
    if active.is_empty() {
        return Err(Error::Data(
            "all covariates are constant; metric undefined".into(),
        ));
    }

    let mut weights: Vec<f64> = (0..p)
        .map(|d| if std.constant[d] { 0.0 } else { 1.0 })
        .collect();
    let mut obj = eval.objective(&weights);
    if !obj.is_finite() {
        return Err(Error::Numeric("initial objective is not finite".into()));
    }
    let mut trace = vec![obj];
    let mut rng = Rng::new(seed);

    let mut d2_arms: Vec<Vec<f64>> = Vec::new();
    for sweep in 0..params.budget {
        // Rebuild the distance cache each sweep so incremental float error
        // cannot accumulate.
        d2_arms = eval
            .arms
            .iter()
            .map(|arm| eval.arm_d2(arm, &weights))
            .collect();
        let sweep_start = obj;
        let mut order = active.clone();
        rng.shuffle(&mut order);
        for &dim in &order {
            let w_old = weights[dim];
            let penalty_others: f64 = weights.iter().map(|w| w * w).sum::<f64>() - w_old * w_old;
            let mut f = |t: f64| eval.objective_with_dim(&d2_arms, dim, w_old, t, penalty_others);
            let (mut t_best, mut f_best) =
                golden_section_min(&mut f, 0.0, params.w_max, GOLDEN_ITERS);
            let f_zero = f(0.0);
            if f_zero < f_best {
                t_best = 0.0;
                f_best = f_zero;
            }
            if !f_best.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite objective while optimizing covariate {dim}"
                )));
            }
            if f_best < obj {
                eval.commit_dim(&mut d2_arms, dim, w_old, t_best);
                weights[dim] = t_best;
                obj = f_best;
                trace.push(obj);
            }
        }
        let improvement = (sweep_start - obj) / sweep_start.abs().max(f64::MIN_POSITIVE);
        if sweep > 0 && improvement < params.tol {
            break;
        }
    }
    drop(d2_arms);

    // Scale normalization: weights sum to the covariate count.
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        for &d in &active {
            weights[d] = 1.0;
        }
    }
    let sum: f64 = weights.iter().sum();
    let scale = p as f64 / sum;
    for w in &mut weights {
        *w *= scale;
    }

    Ok(LearnedMetric {
        weights,
        standardizer: std,
        objective_trace: trace,
    })
}
