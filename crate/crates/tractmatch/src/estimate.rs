//! Treatment-effect estimation: difference-in-means CATEs over matched
//! groups, their mean (the ATE), CATE variances via gradient-boosted quantile
//! regression, per-covariate heterogeneity scans, and ATE ranking.

use crate::error::{Error, Result};
use crate::matching::MatchedGroup;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A query unit's estimated conditional treatment effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateEstimate {
    pub geoid: String,
    pub value: f64,
    pub variance: f64,
    pub covariates: Vec<f64>,
}

/// Difference in mean outcomes: treated neighbors minus control neighbors.
pub fn cate(group: &MatchedGroup, outcomes: &BTreeMap<String, f64>) -> Result<f64> {
    if group.treated_neighbors.is_empty() || group.control_neighbors.is_empty() {
        return Err(Error::Data(format!(
            "matched group for `{}` has an empty arm",
            group.query
        )));
    }
    let arm_mean = |ids: &std::collections::BTreeSet<String>| -> Result<f64> {
        let mut sum = 0.0;
        for id in ids {
            let y = outcomes
                .get(id)
                .ok_or_else(|| Error::Data(format!("missing outcome for geoid `{id}`")))?;
            sum += y;
        }
        Ok(sum / ids.len() as f64)
    };
    Ok(arm_mean(&group.treated_neighbors)? - arm_mean(&group.control_neighbors)?)
}

/// Unweighted mean CATE over all retained query units.
pub fn ate(estimates: &[CateEstimate]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Data(
            "cannot average an empty set of estimates".into(),
        ));
    }
    Ok(estimates.iter().map(|e| e.value).sum::<f64>() / estimates.len() as f64)
}

/// Pinball (quantile) loss averaged over observations.
pub fn pinball_loss(y: &[f64], pred: &[f64], q: f64) -> f64 {
    let mut total = 0.0;
    for (yi, pi) in y.iter().zip(pred) {
        let diff = yi - pi;
        total += if diff >= 0.0 {
            q * diff
        } else {
            (q - 1.0) * diff
        };
    }
    total / y.len() as f64
}

/// The q-th empirical quantile as an order statistic (a pinball-loss
/// minimizer): the ceil(q*n)-th smallest value.
fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    values[rank - 1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbqrParams {
    pub rounds: usize,
    pub depth: usize,
    pub rate: f64,
    pub seed: u64,
}

impl Default for GbqrParams {
    fn default() -> Self {
        GbqrParams {
            rounds: 100,
            depth: 2,
            rate: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// Gradient-boosted quantile regression model. Prediction is
/// `base_value + learning_rate * sum(tree outputs)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbqrModel {
    pub quantile: f64,
    pub base_value: f64,
    pub learning_rate: f64,
    trees: Vec<Tree>,
    /// Mean training pinball loss after the base and after each round.
    pub train_pinball: Vec<f64>,
    /// Depth actually used (reduced when rows cannot fill the leaves).
    pub effective_depth: usize,
}

impl GbqrModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let trees: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        self.base_value + self.learning_rate * trees
    }
}

/// Fit boosted trees on the pinball-loss subgradient: each round fits a
/// depth-limited tree to the residual signs by squared-error splitting, then
/// sets each leaf to the q-th empirical quantile of its residual targets.
pub fn fit_gbqr(x: &[Vec<f64>], y: &[f64], q: f64, params: &GbqrParams) -> Result<GbqrModel> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::Data(
            "feature matrix and targets disagree on length".into(),
        ));
    }
    if n < 20 {
        return Err(Error::Data(format!(
            "quantile regression needs at least 20 rows, got {n}"
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!(
            "quantile must be in (0, 1), got {q}"
        )));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Data("feature rows have mismatched widths".into()));
    }

    // Reduce depth when rows cannot populate 2^depth leaves.
    let mut effective_depth = params.depth;
    while effective_depth > 1 && (1usize << effective_depth) > n {
        effective_depth -= 1;
    }

    let base_value = empirical_quantile(&mut y.to_vec(), q);
    let mut predictions = vec![base_value; n];
    let mut train_pinball = vec![pinball_loss(y, &predictions, q)];
    let mut trees = Vec::with_capacity(params.rounds);

    for _ in 0..params.rounds {
        // Subgradient of the pinball loss at the current predictions.
        let grad: Vec<f64> = (0..n)
            .map(|i| if y[i] > predictions[i] { q } else { q - 1.0 })
            .collect();
        let residual: Vec<f64> = (0..n).map(|i| y[i] - predictions[i]).collect();
        let mut builder = TreeBuilder {
            x,
            grad: &grad,
            residual: &residual,
            q,
            nodes: Vec::new(),
            assignments: Vec::new(),
        };
        let rows: Vec<usize> = (0..n).collect();
        builder.grow(rows, effective_depth);
        let tree = Tree {
            nodes: builder.nodes,
        };
        for (rows, value) in &builder.assignments {
            for &i in rows {
                predictions[i] += params.rate * value;
            }
        }
        trees.push(tree);
        let loss = pinball_loss(y, &predictions, q);
        // Each leaf steps toward a pinball minimizer, so the training loss
        // cannot rise.
        debug_assert!(loss <= train_pinball.last().unwrap() + 1e-12);
        train_pinball.push(loss);
    }

    Ok(GbqrModel {
        quantile: q,
        base_value,
        learning_rate: params.rate,
        trees,
        train_pinball,
        effective_depth,
    })
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    residual: &'a [f64],
    q: f64,
    nodes: Vec<Node>,
    /// Leaf row sets and values, for applying the update without re-traversal.
    assignments: Vec<(Vec<usize>, f64)>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth_left: usize) -> usize {
        if depth_left == 0 || rows.len() < 2 {
            return self.make_leaf(rows);
        }
        match self.best_split(&rows) {
            None => self.make_leaf(rows),
            Some((feature, threshold)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 }); // placeholder
                let left = self.grow(left_rows, depth_left - 1);
                let right = self.grow(right_rows, depth_left - 1);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                at
            }
        }
    }

    fn make_leaf(&mut self, rows: Vec<usize>) -> usize {
        // Leaf value: q-th empirical quantile of the in-leaf residuals.
        let mut targets: Vec<f64> = rows.iter().map(|&i| self.residual[i]).collect();
        let value = empirical_quantile(&mut targets, self.q);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value });
        self.assignments.push((rows, value));
        at
    }

    /// Best (feature, threshold) by squared-error reduction on the gradient
    /// targets; thresholds are midpoints between consecutive distinct values.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let p = self.x[0].len();
        let total_sum: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let n = rows.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for feature in 0..p {
            let mut pairs: Vec<(f64, f64)> = rows
                .iter()
                .map(|&i| (self.x[i][feature], self.grad[i]))
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut left_sum = 0.0;
            let mut left_n = 0.0;
            for w in 0..pairs.len() - 1 {
                left_sum += pairs[w].1;
                left_n += 1.0;
                if pairs[w].0 == pairs[w + 1].0 {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_n = n - left_n;
                // Maximizing sum-of-squares gain is minimizing split SSE.
                let gain = left_sum * left_sum / left_n + right_sum * right_sum / right_n
                    - total_sum * total_sum / n;
                let threshold = 0.5 * (pairs[w].0 + pairs[w + 1].0);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, threshold));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

/// Spread-to-variance conversion constant: the interquartile range of a
/// normal distribution is 1.349 standard deviations.
pub const IQR_TO_SD: f64 = 1.349;

#[derive(Debug, Clone, Default)]
pub struct VarianceFitReport {
    /// Units where the upper quantile crossed below the lower one; their
    /// spread is clamped to zero.
    pub clamped: usize,
}

/// Estimate each CATE's variance by fitting quantile models of the CATE
/// values on the covariates at `q_lo` and `q_hi`, converting the spread to a
/// variance via the normal-consistent IQR rule.
pub fn cate_variance(
    estimates: &mut [CateEstimate],
    q_lo: f64,
    q_hi: f64,
    params: &GbqrParams,
) -> Result<VarianceFitReport> {
    if q_lo.partial_cmp(&q_hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Config(format!(
            "lower quantile {q_lo} must be below upper quantile {q_hi}"
        )));
    }
    let x: Vec<Vec<f64>> = estimates.iter().map(|e| e.covariates.clone()).collect();
    let y: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let lo = fit_gbqr(&x, &y, q_lo, params)?;
    let hi = fit_gbqr(&x, &y, q_hi, params)?;
    // Scale the IQR constant to the configured quantile pair.
    let normal_spread = normal_quantile(q_hi) - normal_quantile(q_lo);
    let to_sd = if (q_lo - 0.25).abs() < 1e-12 && (q_hi - 0.75).abs() < 1e-12 {
        IQR_TO_SD
    } else {
        normal_spread
    };
    let mut report = VarianceFitReport::default();
    for est in estimates.iter_mut() {
        let spread = hi.predict(&est.covariates) - lo.predict(&est.covariates);
        if spread < 0.0 {
            report.clamped += 1;
        }
        let sd = spread.max(0.0) / to_sd;
        est.variance = sd * sd;
    }
    Ok(report)
}

/// Standard normal quantile (Acklam's rational approximation; plenty for a
/// spread conversion constant).
#[allow(clippy::excessive_precision)]
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeterogeneityRow {
    pub covariate: String,
    pub slope: f64,
    pub r2: f64,
    pub substantial: bool,
}

/// Per-covariate ordinary least squares of the CATE values on that single
/// covariate; covariates with r^2 at or above `threshold` are flagged.
pub fn heterogeneity_scan(
    estimates: &[CateEstimate],
    covariate_names: &[String],
    threshold: f64,
) -> Result<Vec<HeterogeneityRow>> {
    if estimates.len() < 3 {
        return Err(Error::Data(format!(
            "heterogeneity scan needs at least 3 estimates, got {}",
            estimates.len()
        )));
    }
    let n = estimates.len() as f64;
    let c_mean = estimates.iter().map(|e| e.value).sum::<f64>() / n;
    let c_var: f64 = estimates.iter().map(|e| (e.value - c_mean).powi(2)).sum();
    let mut rows = Vec::with_capacity(covariate_names.len());
    for (d, name) in covariate_names.iter().enumerate() {
        let x_mean = estimates.iter().map(|e| e.covariates[d]).sum::<f64>() / n;
        let mut xx = 0.0;
        let mut xc = 0.0;
        for e in estimates {
            let dx = e.covariates[d] - x_mean;
            xx += dx * dx;
            xc += dx * (e.value - c_mean);
        }
        let (slope, r2) = if xx == 0.0 || c_var == 0.0 {
            (0.0, 0.0)
        } else {
            (xc / xx, (xc * xc) / (xx * c_var))
        };
        rows.push(HeterogeneityRow {
            covariate: name.clone(),
            slope,
            r2,
            substantial: r2 >= threshold,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAte {
    pub name: String,
    pub ate: f64,
    pub sd: f64,
}

/// Structures ordered by ATE, descending; ties break alphabetically.
pub fn rank_by_ate(entries: &BTreeMap<String, (f64, f64)>) -> Vec<RankedAte> {
    let mut ranked: Vec<RankedAte> = entries
        .iter()
        .map(|(name, (ate, sd))| RankedAte {
            name: name.clone(),
            ate: *ate,
            sd: *sd,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.ate
            .partial_cmp(&a.ate)
            .unwrap()
            .then_with(|| a.name.cmp(&b.name))
    });
    ranked
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..ra.len() {
        let xa = ra[i] - mean;
        let xb = rb[i] - mean;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    num / (da.sqrt() * db.sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut at = 0;
    while at < order.len() {
        let mut end = at;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[at]] {
            end += 1;
        }
        let avg = (at + end) as f64 / 2.0 + 1.0;
        for &idx in &order[at..=end] {
            ranks[idx] = avg;
        }
        at = end + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use std::collections::BTreeSet;

    fn group(treated: &[&str], control: &[&str]) -> MatchedGroup {
        MatchedGroup {
            query: "q".into(),
            treated_neighbors: treated
                .iter()
                .map(|s| s.to_string())
                .collect::<BTreeSet<_>>(),
            control_neighbors: control
                .iter()
                .map(|s| s.to_string())
                .collect::<BTreeSet<_>>(),
            diameter: 0.0,
        }
    }

    fn outcomes(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(g, y)| (g.to_string(), *y)).collect()
    }

    #[test]
    fn cate_difference_of_means() {
        let g = group(&["t1", "t2"], &["c1", "c2"]);
        let y = outcomes(&[("t1", 2.0), ("t2", 4.0), ("c1", 1.0), ("c2", 3.0)]);
        assert_eq!(cate(&g, &y).unwrap(), 1.0);
    }

    #[test]
    fn cate_identical_arms_is_zero() {
        let g = group(&["t1"], &["c1"]);
        let y = outcomes(&[("t1", 5.0), ("c1", 5.0)]);
        assert_eq!(cate(&g, &y).unwrap(), 0.0);
    }

    #[test]
    fn cate_seven_unit_fixture() {
        let g = group(&["t1", "t2", "t3"], &["c1", "c2", "c3", "c4"]);
        let y = outcomes(&[
            ("t1", 1.5),
            ("t2", 2.5),
            ("t3", 8.0),
            ("c1", 1.0),
            ("c2", 2.0),
            ("c3", 3.0),
            ("c4", 6.0),
        ]);
        let expected = (1.5 + 2.5 + 8.0) / 3.0 - (1.0 + 2.0 + 3.0 + 6.0) / 4.0;
        assert!((cate(&g, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cate_missing_outcome_names_geoid() {
        let g = group(&["t1"], &["c1"]);
        let y = outcomes(&[("t1", 5.0)]);
        let err = cate(&g, &y).unwrap_err();
        assert!(err.to_string().contains("c1"));
    }

    #[test]
    fn cate_antisymmetric_under_arm_swap() {
        let g = group(&["t1", "t2"], &["c1"]);
        let swapped = MatchedGroup {
            query: g.query.clone(),
            treated_neighbors: g.control_neighbors.clone(),
            control_neighbors: g.treated_neighbors.clone(),
            diameter: 0.0,
        };
        let y = outcomes(&[("t1", 2.0), ("t2", 7.0), ("c1", 3.0)]);
        assert_eq!(cate(&g, &y).unwrap(), -cate(&swapped, &y).unwrap());
    }

    #[test]
    fn cate_shift_properties() {
        let g = group(&["t1", "t2"], &["c1", "c2"]);
        let y = outcomes(&[("t1", 2.0), ("t2", 4.0), ("c1", 1.0), ("c2", 3.0)]);
        let base = cate(&g, &y).unwrap();
        // Adding a constant to every outcome leaves the CATE unchanged.
        let shifted: BTreeMap<String, f64> = y.iter().map(|(k, v)| (k.clone(), v + 11.0)).collect();
        assert!((cate(&g, &shifted).unwrap() - base).abs() < 1e-12);
        // Adding it only to treated outcomes shifts the CATE by exactly it.
        let treated_shift: BTreeMap<String, f64> = y
            .iter()
            .map(|(k, v)| {
                let bump = if k.starts_with('t') { 11.0 } else { 0.0 };
                (k.clone(), v + bump)
            })
            .collect();
        assert!((cate(&g, &treated_shift).unwrap() - base - 11.0).abs() < 1e-12);
    }

    fn estimates_from(values: &[f64]) -> Vec<CateEstimate> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| CateEstimate {
                geoid: format!("g{i:04}"),
                value: *v,
                variance: 0.0,
                covariates: vec![],
            })
            .collect()
    }

    #[test]
    fn ate_basics() {
        assert_eq!(ate(&estimates_from(&[4.5])).unwrap(), 4.5);
        assert_eq!(ate(&estimates_from(&[1.0, -1.0])).unwrap(), 0.0);
        assert!(ate(&[]).is_err());
    }

    #[test]
    fn ate_equals_sum_over_n_and_stays_in_range() {
        let mut rng = Rng::new(8);
        let values: Vec<f64> = (0..100).map(|_| rng.next_normal() + 0.7).collect();
        let estimates = estimates_from(&values);
        let a = ate(&estimates).unwrap();
        let expected = values.iter().sum::<f64>() / 100.0;
        assert!((a - expected).abs() < 1e-12);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(a >= min && a <= max);
    }

    #[test]
    fn gbqr_constant_target_predicts_it_immediately() {
        let x: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64]).collect();
        let y = vec![3.25; 25];
        let model = fit_gbqr(
            &x,
            &y,
            0.5,
            &GbqrParams {
                rounds: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for row in &x {
            assert_eq!(model.predict(row), 3.25);
        }
    }

    #[test]
    fn gbqr_pinball_non_increasing_every_round() {
        let mut rng = Rng::new(12);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.next_normal(), rng.next_normal()])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 + rng.next_normal()).collect();
        for q in [0.25, 0.5, 0.75] {
            let model = fit_gbqr(&x, &y, q, &GbqrParams::default()).unwrap();
            assert_eq!(model.train_pinball.len(), 101);
            for pair in model.train_pinball.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "loss rose at q={q}: {pair:?}");
            }
        }
    }

    #[test]
    fn gbqr_beats_exhaustive_single_split_oracle() {
        // 50-point fixture with symmetric noise around a step function.
        let mut rng = Rng::new(5);
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| if r[0] > 2.5 { 4.0 } else { 1.0 } + rng.next_normal() * 0.5)
            .collect();
        let q = 0.5;
        // Oracle: exhaustive search over every single split, each leaf set to
        // its median, scoring training pinball loss.
        let mut best = f64::INFINITY;
        for w in 0..49 {
            let threshold = 0.5 * (x[w][0] + x[w + 1][0]);
            let (mut left, mut right): (Vec<f64>, Vec<f64>) = (vec![], vec![]);
            for i in 0..50 {
                if x[i][0] <= threshold {
                    left.push(y[i]);
                } else {
                    right.push(y[i]);
                }
            }
            if left.is_empty() || right.is_empty() {
                continue;
            }
            let lv = empirical_quantile(&mut left.clone(), q);
            let rv = empirical_quantile(&mut right.clone(), q);
            let pred: Vec<f64> = x
                .iter()
                .map(|r| if r[0] <= threshold { lv } else { rv })
                .collect();
            best = best.min(pinball_loss(&y, &pred, q));
        }
        let model = fit_gbqr(&x, &y, q, &GbqrParams::default()).unwrap();
        let final_loss = *model.train_pinball.last().unwrap();
        assert!(
            final_loss <= best * 1.05,
            "boosted loss {final_loss} vs single-split oracle {best}"
        );
    }

    #[test]
    fn gbqr_deterministic() {
        let mut rng = Rng::new(3);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.next_normal()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] + rng.next_normal()).collect();
        let a = fit_gbqr(&x, &y, 0.75, &GbqrParams::default()).unwrap();
        let b = fit_gbqr(&x, &y, 0.75, &GbqrParams::default()).unwrap();
        assert_eq!(a.train_pinball, b.train_pinball);
        for row in &x {
            assert_eq!(a.predict(row), b.predict(row));
        }
    }

    #[test]
    fn gbqr_depth_reduced_for_tiny_data() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let params = GbqrParams {
            depth: 6,
            ..Default::default()
        };
        let model = fit_gbqr(&x, &y, 0.5, &params).unwrap();
        assert!(model.effective_depth < 6);
        assert!((1usize << model.effective_depth) <= 20);
    }

    fn make_estimates(n: usize, seed: u64, sd_of: impl Fn(&[f64]) -> f64) -> Vec<CateEstimate> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let covs = vec![rng.next_normal(), rng.next_normal(), rng.next_normal()];
                let value = 1.0 + sd_of(&covs) * rng.next_normal();
                CateEstimate {
                    geoid: format!("g{i:04}"),
                    value,
                    variance: 0.0,
                    covariates: covs,
                }
            })
            .collect()
    }

    #[test]
    fn variance_recovers_homoscedastic_sd() {
        let sigma = 0.5;
        let mut estimates = make_estimates(1000, 41, |_| sigma);
        cate_variance(&mut estimates, 0.25, 0.75, &GbqrParams::default()).unwrap();
        let mean_sd =
            estimates.iter().map(|e| e.variance.sqrt()).sum::<f64>() / estimates.len() as f64;
        assert!(
            (mean_sd - sigma).abs() / sigma < 0.25,
            "mean estimated sd {mean_sd} vs true {sigma}"
        );
    }

    #[test]
    fn variance_zero_for_identical_cates() {
        let mut estimates = make_estimates(100, 2, |_| 0.0);
        cate_variance(&mut estimates, 0.25, 0.75, &GbqrParams::default()).unwrap();
        assert!(estimates.iter().all(|e| e.variance == 0.0));
    }

    #[test]
    fn variance_tracks_heteroscedastic_scale() {
        let mut estimates = make_estimates(1000, 7, |c| 0.1 + c[0].abs());
        cate_variance(&mut estimates, 0.25, 0.75, &GbqrParams::default()).unwrap();
        let est_sd: Vec<f64> = estimates.iter().map(|e| e.variance.sqrt()).collect();
        let true_sd: Vec<f64> = estimates
            .iter()
            .map(|e| 0.1 + e.covariates[0].abs())
            .collect();
        let rho = spearman(&est_sd, &true_sd);
        assert!(rho >= 0.8, "Spearman {rho}");
    }

    fn scan_names(p: usize) -> Vec<String> {
        (0..p).map(|d| format!("x{d:02}")).collect()
    }

    #[test]
    fn scan_perfect_linear_relation() {
        let estimates: Vec<CateEstimate> = (0..50)
            .map(|i| {
                let x1 = i as f64 / 10.0 - 2.5;
                CateEstimate {
                    geoid: format!("g{i}"),
                    value: 2.0 * x1,
                    variance: 0.0,
                    covariates: vec![x1, (i % 7) as f64],
                }
            })
            .collect();
        let rows = heterogeneity_scan(&estimates, &scan_names(2), 0.5).unwrap();
        assert!((rows[0].r2 - 1.0).abs() < 1e-12);
        assert!((rows[0].slope - 2.0).abs() < 1e-12);
        assert!(rows[0].substantial);
    }

    #[test]
    fn scan_null_relationship_has_tiny_r2() {
        let mut rng = Rng::new(19);
        let estimates: Vec<CateEstimate> = (0..1000)
            .map(|i| CateEstimate {
                geoid: format!("g{i}"),
                value: rng.next_normal(),
                variance: 0.0,
                covariates: vec![rng.next_normal(), rng.next_normal()],
            })
            .collect();
        let rows = heterogeneity_scan(&estimates, &scan_names(2), 0.5).unwrap();
        assert!(rows[1].r2 < 0.05, "null covariate r2 {}", rows[1].r2);
        assert!(!rows[1].substantial);
    }

    #[test]
    fn scan_zero_variance_covariate_reports_zero() {
        let estimates: Vec<CateEstimate> = (0..10)
            .map(|i| CateEstimate {
                geoid: format!("g{i}"),
                value: i as f64,
                variance: 0.0,
                covariates: vec![3.0],
            })
            .collect();
        let rows = heterogeneity_scan(&estimates, &scan_names(1), 0.5).unwrap();
        assert_eq!(rows[0].r2, 0.0);
        assert_eq!(rows[0].slope, 0.0);
    }

    #[test]
    fn scan_r2_invariant_under_affine_covariate_rescale() {
        let mut rng = Rng::new(23);
        let base: Vec<CateEstimate> = (0..200)
            .map(|i| {
                let x = rng.next_normal();
                CateEstimate {
                    geoid: format!("g{i}"),
                    value: 1.5 * x + 0.3 * rng.next_normal(),
                    variance: 0.0,
                    covariates: vec![x],
                }
            })
            .collect();
        let rescaled: Vec<CateEstimate> = base
            .iter()
            .map(|e| CateEstimate {
                covariates: vec![e.covariates[0] * 250.0 - 40.0],
                ..e.clone()
            })
            .collect();
        let a = heterogeneity_scan(&base, &scan_names(1), 0.5).unwrap();
        let b = heterogeneity_scan(&rescaled, &scan_names(1), 0.5).unwrap();
        assert!((a[0].r2 - b[0].r2).abs() < 1e-9);
    }

    #[test]
    fn scan_too_few_estimates_is_error() {
        let estimates = estimates_from(&[1.0, 2.0]);
        assert!(heterogeneity_scan(&estimates, &[], 0.5).is_err());
    }

    #[test]
    fn rank_by_ate_crime_rate_column() {
        let entries: BTreeMap<String, (f64, f64)> = [
            ("abandoned buildings", (8.57e-3, 6.00e-5)),
            ("rail stations", (7.18e-3, 8.10e-5)),
            ("grocery stores", (6.32e-3, 5.50e-5)),
            ("bus stops", (4.29e-3, 5.60e-5)),
            ("public schools", (3.88e-3, 5.50e-5)),
            ("restaurants", (2.94e-3, 5.70e-5)),
            ("libraries", (1.30e-4, 8.80e-5)),
        ]
        .iter()
        .map(|(n, v)| (n.to_string(), *v))
        .collect();
        let ranked = rank_by_ate(&entries);
        let names: Vec<&str> = ranked.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "abandoned buildings",
                "rail stations",
                "grocery stores",
                "bus stops",
                "public schools",
                "restaurants",
                "libraries"
            ]
        );
    }

    #[test]
    fn rank_by_ate_single_and_ties() {
        let single: BTreeMap<String, (f64, f64)> =
            [("only".to_string(), (1.0, 0.0))].into_iter().collect();
        assert_eq!(rank_by_ate(&single)[0].name, "only");

        let tied: BTreeMap<String, (f64, f64)> = [
            ("zeta".to_string(), (2.0, 0.0)),
            ("alpha".to_string(), (2.0, 0.0)),
        ]
        .into_iter()
        .collect();
        let ranked = rank_by_ate(&tied);
        assert_eq!(ranked[0].name, "alpha");
        assert_eq!(ranked[1].name, "zeta");
    }

    #[test]
    fn spearman_of_monotone_is_one() {
        let a = [1.0, 2.0, 5.0, 9.0];
        let b = [10.0, 20.0, 21.0, 300.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }
}
