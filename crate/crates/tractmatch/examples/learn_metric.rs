//! Learn a weighted Euclidean metric on data with one planted relevant
//! covariate and watch the weight concentrate there.
//!
//!     cargo run --example learn_metric

use tractmatch::metric::{learn_metric, MetricParams, TrainingSet};
use tractmatch::rng::Rng;

fn main() -> tractmatch::Result<()> {
    let mut rng = Rng::new(3);
    let n_per_arm = 100;
    let p = 8;
    let mut ids = Vec::new();
    let mut covariates = Vec::new();
    let mut outcomes = Vec::new();
    let mut treated = Vec::new();
    for i in 0..2 * n_per_arm {
        let row: Vec<f64> = (0..p).map(|_| rng.next_normal()).collect();
        // Outcome driven by covariate 0 only.
        outcomes.push(5.0 * row[0] + 0.05 * rng.next_normal());
        treated.push(i < n_per_arm);
        ids.push(format!("u{i:03}"));
        covariates.push(row);
    }
    let units = TrainingSet::new(ids, covariates, outcomes, treated)?;

    let params = MetricParams {
        k: 5,
        ..MetricParams::default()
    };
    let metric = learn_metric(&units, &params, 1)?;

    println!(
        "objective: {:.5} -> {:.5} over {} accepted steps",
        metric.objective_trace.first().unwrap(),
        metric.objective_trace.last().unwrap(),
        metric.objective_trace.len() - 1,
    );
    println!("learned weights (covariate 0 is the relevant one):");
    for (d, w) in metric.weights.iter().enumerate() {
        let bar = "#".repeat((w * 12.0).round() as usize);
        println!("  x{d:02}  {w:6.3}  {bar}");
    }
    Ok(())
}
