//! Treatment binarization for sparse and dense structure types.
//!
//!     cargo run --example treatment_labels

use std::collections::BTreeMap;
use tractmatch::rng::Rng;
use tractmatch::treatment::{classify_dense, classify_sparse, Label, DEFAULT_DROP_BAND};

fn main() -> tractmatch::Result<()> {
    // Sparse type (say, libraries): a tract has one or none.
    let sparse_counts: BTreeMap<String, f64> = (0..12)
        .map(|i| (format!("T{i:02}"), if i % 3 == 0 { 1.0 } else { 0.0 }))
        .collect();
    let sparse = classify_sparse(&sparse_counts);
    println!(
        "sparse: {} treated / {} control (threshold {})",
        sparse.n_with(Label::Treated),
        sparse.n_with(Label::Control),
        sparse.threshold
    );

    // Dense type (say, bus stops): skewed counts, median threshold, and the
    // two deciles below the median dropped as borderline.
    let mut rng = Rng::new(5);
    let dense_counts: BTreeMap<String, f64> = (0..200)
        .map(|i| {
            let c = (rng.next_normal().abs() * 8.0).round() + rng.next_below(4) as f64;
            (format!("T{i:03}"), c)
        })
        .collect();
    let dense = classify_dense(&dense_counts, DEFAULT_DROP_BAND)?;
    println!(
        "dense:  {} treated / {} control / {} dropped (median threshold {})",
        dense.n_with(Label::Treated),
        dense.n_with(Label::Control),
        dense.n_with(Label::Dropped),
        dense.threshold
    );

    // Labels are rank-based: any monotone rescaling of the counts leaves
    // them untouched.
    let doubled: BTreeMap<String, f64> = dense_counts
        .iter()
        .map(|(g, c)| (g.clone(), c * 2.0))
        .collect();
    let doubled = classify_dense(&doubled, DEFAULT_DROP_BAND)?;
    println!(
        "labels invariant under doubling: {}",
        doubled.labels == dense.labels
    );

    print!(
        "{}",
        dense
            .to_csv()
            .lines()
            .take(6)
            .collect::<Vec<_>>()
            .join("\n")
    );
    println!("\n...");
    Ok(())
}
