//! Gradient-boosted quantile regression on heteroscedastic data: the fitted
//! quantile spread tracks the true local noise scale.
//!
//!     cargo run --example quantile_regression

use tractmatch::estimate::{fit_gbqr, spearman, GbqrParams};
use tractmatch::rng::Rng;

fn main() -> tractmatch::Result<()> {
    let mut rng = Rng::new(9);
    let n = 800;
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..4).map(|_| rng.next_normal()).collect())
        .collect();
    let true_sd: Vec<f64> = x.iter().map(|r| 0.1 + r[0].abs()).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&true_sd)
        .map(|(_, sd)| 1.0 + sd * rng.next_normal())
        .collect();

    let lo = fit_gbqr(&x, &y, 0.25, &GbqrParams::default())?;
    let hi = fit_gbqr(&x, &y, 0.75, &GbqrParams::default())?;
    println!(
        "q=0.25 training pinball: {:.4} -> {:.4} over {} rounds",
        lo.train_pinball.first().unwrap(),
        lo.train_pinball.last().unwrap(),
        lo.train_pinball.len() - 1
    );
    println!(
        "q=0.75 training pinball: {:.4} -> {:.4}",
        hi.train_pinball.first().unwrap(),
        hi.train_pinball.last().unwrap()
    );

    // Normal-consistent spread-to-sd conversion.
    let est_sd: Vec<f64> = x
        .iter()
        .map(|r| (hi.predict(r) - lo.predict(r)).max(0.0) / 1.349)
        .collect();
    let rho = spearman(&est_sd, &true_sd);
    println!("Spearman(estimated sd, true sd) = {rho:.3}");

    println!("x00        true sd   estimated sd");
    for q in [-2.0f64, -1.0, 0.0, 1.0, 2.0] {
        let mut row = vec![0.0; 4];
        row[0] = q;
        println!(
            "{q:+5.1}  {:12.3}  {:12.3}",
            0.1 + q.abs(),
            (hi.predict(&row) - lo.predict(&row)).max(0.0) / 1.349
        );
    }
    Ok(())
}
