//! Generate a synthetic city with known ground truth.
//!
//!     cargo run --example synthesize

use tractmatch::synth::{generate, SynthSpec, TauSpec};

fn main() -> tractmatch::Result<()> {
    let spec = SynthSpec {
        n_tracts: 200,
        n_covariates: 12,
        relevant: vec![0, 1, 2],
        tau: TauSpec::Constant(1.0),
        confounding_strength: 1.0,
        noise_sd: 0.1,
        seed: 7,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let out = std::path::Path::new("target/demo/synthesize");
    let paths = data.write_to(out)?;

    let truth = &data.truth;
    println!("wrote synthetic city to {}", out.display());
    println!(
        "  tracts:      {} ({} treated)",
        truth.n_tracts,
        truth.treated_geoids.len()
    );
    println!("  crime rows:  {}", data.crimes_csv.lines().count() - 1);
    println!("  true ATE:    {}", truth.true_ate);
    println!(
        "  naive diff:  {:.4} (bias direction {:+})",
        truth.naive_diff_means(),
        truth.naive_bias_direction
    );
    println!(
        "files: {:?}",
        [
            &paths.tracts,
            &paths.boundaries,
            &paths.crimes,
            &paths.structures,
            &paths.truth
        ]
    );
    Ok(())
}
