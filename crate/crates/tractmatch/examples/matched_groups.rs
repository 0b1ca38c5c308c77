//! Matched-group construction step by step: folds, per-run matching,
//! cross-run consensus, and diameter pruning.
//!
//!     cargo run --example matched_groups

use tractmatch::matching::{build_folds, consensus_match, diameter_and_prune, match_fold};
use tractmatch::metric::LearnedMetric;
use tractmatch::metric::{learn_metric, MetricParams, Standardizer, TrainingSet};
use tractmatch::rng::Rng;

fn main() -> tractmatch::Result<()> {
    // 120 units, outcome tied to the first two covariates.
    let mut rng = Rng::new(17);
    let n = 120;
    let p = 6;
    let mut ids = Vec::new();
    let mut covariates = Vec::new();
    let mut outcomes = Vec::new();
    let mut treated = Vec::new();
    for i in 0..n {
        let row: Vec<f64> = (0..p).map(|_| rng.next_normal()).collect();
        outcomes.push(row[0] + row[1] + 0.1 * rng.next_normal());
        treated.push(i % 2 == 0);
        ids.push(format!("u{i:03}"));
        covariates.push(row);
    }
    let units = TrainingSet::new(ids, covariates, outcomes, treated)?;

    let repeats = 3;
    let folds = 2;
    let plan = build_folds(&units.ids, repeats, folds, 99)?;
    let params = MetricParams {
        k: 5,
        budget: 60,
        ..MetricParams::default()
    };

    let mut runs = Vec::new();
    for repeat in 0..repeats {
        for fold in 0..folds {
            let held_out: std::collections::BTreeSet<String> =
                plan.fold_members(repeat, fold).into_iter().collect();
            let (est, train): (Vec<usize>, Vec<usize>) =
                (0..units.len()).partition(|i| held_out.contains(&units.ids[*i]));
            let metric = learn_metric(&units.subset(&train), &params, repeat as u64)?;
            let groups = match_fold(&metric, &units.subset(&est), 3)?;
            println!(
                "run (repeat {repeat}, fold {fold}): {} groups",
                groups.len()
            );
            runs.push(groups);
        }
    }

    let consensus = consensus_match(&runs, 2)?;
    println!(
        "consensus: {} groups kept, {} queries dropped with an empty arm",
        consensus.groups.len(),
        consensus.dropped.len()
    );

    let prune_metric = LearnedMetric::new(vec![1.0; p], Standardizer::fit(&units.covariates));
    let outcome = diameter_and_prune(&consensus.groups, &prune_metric, &units, 90.0)?;
    println!(
        "pruning at the 90th percentile (cutoff {:.3}): {} retained, {} pruned",
        outcome.cutoff,
        outcome.retained.len(),
        outcome.pruned.len()
    );
    for group in outcome.retained.iter().take(3) {
        println!(
            "  {} -> treated {:?}, control {:?} (diameter {:.3})",
            group.query, group.treated_neighbors, group.control_neighbors, group.diameter
        );
    }
    Ok(())
}
