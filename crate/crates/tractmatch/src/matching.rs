//! Matched-group construction: repeated cross-validation folds, within-fold
//! nearest-neighbor matching under a learned metric, cross-run consensus, and
//! diameter-based pruning.

use crate::error::{Error, Result};
use crate::metric::{LearnedMetric, TrainingSet};
use crate::rng::{derive_seed, Rng};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Fold assignments for repeated cross-validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub repeats: usize,
    pub folds: usize,
    pub seed: u64,
    /// One map per repeat: geoid -> fold index.
    pub assignment: Vec<BTreeMap<String, usize>>,
}

impl FoldPlan {
    pub fn fold_members(&self, repeat: usize, fold: usize) -> Vec<String> {
        self.assignment[repeat]
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(g, _)| g.clone())
            .collect()
    }
}

/// R independent shuffled partitions of the units into F near-equal folds.
pub fn build_folds(geoids: &[String], repeats: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Config(format!(
            "folds must be at least 2, got {folds}"
        )));
    }
    if repeats < 1 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if geoids.len() < folds {
        return Err(Error::Data(format!(
            "{} units cannot fill {folds} folds",
            geoids.len()
        )));
    }
    let mut assignment = Vec::with_capacity(repeats);
    for repeat in 0..repeats {
        let mut order: Vec<&String> = geoids.iter().collect();
        let mut rng = Rng::new(derive_seed(seed, &format!("repeat:{repeat}")));
        rng.shuffle(&mut order);
        let map: BTreeMap<String, usize> = order
            .iter()
            .enumerate()
            .map(|(pos, g)| ((*g).clone(), pos % folds))
            .collect();
        assignment.push(map);
    }
    Ok(FoldPlan {
        repeats,
        folds,
        seed,
        assignment,
    })
}

/// One query unit's matched neighbors, split by arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedGroup {
    pub query: String,
    pub treated_neighbors: BTreeSet<String>,
    pub control_neighbors: BTreeSet<String>,
    pub diameter: f64,
}

/// Match every unit in the fold to its K nearest treated and K nearest
/// control neighbors (excluding itself) under the given metric. Distance ties
/// break by ascending geoid.
pub fn match_fold(
    metric: &LearnedMetric,
    fold_units: &TrainingSet,
    k: usize,
) -> Result<Vec<MatchedGroup>> {
    if k == 0 {
        return Err(Error::Config("matching needs K >= 1".into()));
    }
    let (n_treated, n_control) = fold_units.arm_sizes();
    // Every unit must find K neighbors in each arm after excluding itself.
    if n_treated < k + 1 || n_control < k + 1 {
        return Err(Error::Data(format!(
            "fold has {n_treated} treated / {n_control} control units; matching K = {k} needs more than K in each arm"
        )));
    }
    let n = fold_units.len();
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let mut by_arm: [Vec<(f64, usize)>; 2] = [Vec::new(), Vec::new()];
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = metric.distance(&fold_units.covariates[i], &fold_units.covariates[j])?;
            let arm = usize::from(fold_units.treated[j]);
            by_arm[arm].push((d, j));
        }
        let mut selected: [BTreeSet<String>; 2] = [BTreeSet::new(), BTreeSet::new()];
        let mut diameter = 0.0f64;
        for (arm, candidates) in by_arm.iter_mut().enumerate() {
            candidates.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap()
                    .then_with(|| fold_units.ids[a.1].cmp(&fold_units.ids[b.1]))
            });
            for &(d, j) in candidates.iter().take(k) {
                selected[arm].insert(fold_units.ids[j].clone());
                diameter = diameter.max(d);
            }
        }
        let [control_neighbors, treated_neighbors] = selected;
        groups.push(MatchedGroup {
            query: fold_units.ids[i].clone(),
            treated_neighbors,
            control_neighbors,
            diameter,
        });
    }
    groups.sort_by(|a, b| a.query.cmp(&b.query));
    Ok(groups)
}

/// Consensus over repeated runs, plus the per-pair co-match counts that back
/// the audit CSV.
#[derive(Debug, Clone)]
pub struct Consensus {
    pub groups: Vec<MatchedGroup>,
    /// (query, neighbor) -> (neighbor is treated, co-match count).
    pub pair_counts: BTreeMap<(String, String), (bool, u32)>,
    /// Queries dropped because an arm emptied out.
    pub dropped: Vec<String>,
}

/// Keep pair (i, j) iff j appeared in i's matched group in at least
/// `min_count` of the runs where i was an estimation unit. Queries left with
/// an empty arm are dropped.
pub fn consensus_match(runs: &[Vec<MatchedGroup>], min_count: u32) -> Result<Consensus> {
    if min_count < 2 {
        return Err(Error::Config(
            "consensus needs min co-match count >= 2".into(),
        ));
    }
    let mut pair_counts: BTreeMap<(String, String), (bool, u32)> = BTreeMap::new();
    let mut queries: BTreeSet<String> = BTreeSet::new();
    for run in runs {
        for group in run {
            queries.insert(group.query.clone());
            for (arm_treated, neighbors) in [
                (true, &group.treated_neighbors),
                (false, &group.control_neighbors),
            ] {
                for neighbor in neighbors {
                    let entry = pair_counts
                        .entry((group.query.clone(), neighbor.clone()))
                        .or_insert((arm_treated, 0));
                    entry.1 += 1;
                }
            }
        }
    }
    let mut groups = Vec::new();
    let mut dropped = Vec::new();
    for query in &queries {
        let mut treated_neighbors = BTreeSet::new();
        let mut control_neighbors = BTreeSet::new();
        for ((q, neighbor), (arm_treated, count)) in
            pair_counts.range((query.clone(), String::new())..)
        {
            if q != query {
                break;
            }
            if *count >= min_count {
                if *arm_treated {
                    treated_neighbors.insert(neighbor.clone());
                } else {
                    control_neighbors.insert(neighbor.clone());
                }
            }
        }
        if treated_neighbors.is_empty() || control_neighbors.is_empty() {
            dropped.push(query.clone());
        } else {
            groups.push(MatchedGroup {
                query: query.clone(),
                treated_neighbors,
                control_neighbors,
                diameter: 0.0,
            });
        }
    }
    Ok(Consensus {
        groups,
        pair_counts,
        dropped,
    })
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub retained: Vec<MatchedGroup>,
    pub pruned: Vec<MatchedGroup>,
    /// Nearest-rank percentile cutoff actually applied.
    pub cutoff: f64,
}

/// Recompute each group's diameter (distance from the query to its farthest
/// neighbor in either arm) under `metric`, then drop groups whose diameter
/// exceeds the given percentile of the diameter distribution.
pub fn diameter_and_prune(
    groups: &[MatchedGroup],
    metric: &LearnedMetric,
    units: &TrainingSet,
    percentile: f64,
) -> Result<PruneOutcome> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Config(format!(
            "prune percentile must be in (0, 100], got {percentile}"
        )));
    }
    let mut with_diameters = Vec::with_capacity(groups.len());
    for group in groups {
        let qi = units
            .index_of(&group.query)
            .ok_or_else(|| Error::Data(format!("unknown query geoid `{}`", group.query)))?;
        let mut diameter = 0.0f64;
        for neighbor in group
            .treated_neighbors
            .iter()
            .chain(&group.control_neighbors)
        {
            let ni = units
                .index_of(neighbor)
                .ok_or_else(|| Error::Data(format!("unknown neighbor geoid `{neighbor}`")))?;
            let d = metric.distance(&units.covariates[qi], &units.covariates[ni])?;
            diameter = diameter.max(d);
        }
        let mut g = group.clone();
        g.diameter = diameter;
        with_diameters.push(g);
    }
    if with_diameters.is_empty() {
        return Ok(PruneOutcome {
            retained: Vec::new(),
            pruned: Vec::new(),
            cutoff: 0.0,
        });
    }
    let mut sorted: Vec<f64> = with_diameters.iter().map(|g| g.diameter).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Nearest-rank percentile.
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    let cutoff = sorted[rank.clamp(1, sorted.len()) - 1];
    let (retained, pruned): (Vec<MatchedGroup>, Vec<MatchedGroup>) = with_diameters
        .into_iter()
        .partition(|g| g.diameter <= cutoff);
    Ok(PruneOutcome {
        retained,
        pruned,
        cutoff,
    })
}

/// Audit CSV of retained groups:
/// `query_geoid,neighbor_geoid,arm,co_match_count,diameter`.
pub fn groups_to_csv(groups: &[MatchedGroup], consensus: &Consensus) -> String {
    let mut out = String::from("query_geoid,neighbor_geoid,arm,co_match_count,diameter\n");
    for group in groups {
        for (arm, neighbors) in [
            ("treated", &group.treated_neighbors),
            ("control", &group.control_neighbors),
        ] {
            for neighbor in neighbors {
                let count = consensus
                    .pair_counts
                    .get(&(group.query.clone(), neighbor.clone()))
                    .map(|(_, c)| *c)
                    .unwrap_or(0);
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    group.query, neighbor, arm, count, group.diameter
                ));
            }
        }
    }
    out
}
