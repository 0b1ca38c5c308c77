//! Synthetic city generator with known ground truth.
//!
//! Emits the exact input formats the ingest module consumes (tracts.csv,
//! boundaries.geojson, crimes.csv, structures.csv) plus a truth.json with the
//! generator's treatment assignment and true effects, so the full pipeline
//! can be checked against an oracle.
//!
//! Tracts form a regular grid of square cells. Covariates are standard
//! normal; treatment probability is logistic in the confounded relevant
//! covariates; the outcome (per-capita crime rate) is
//!
//!   y = base_rate + baseline_coeff * g + t * tau(x) + noise
//!
//! with g the normalized sum of the relevant covariates. Crime points are
//! drawn to realize round(y * total_pop) per tract, all dated inside the
//! first analysis period.

use crate::error::{Error, Result};
use crate::geo::METERS_PER_DEG;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauSpec {
    /// Homogeneous effect.
    Constant(f64),
    /// CATE(x) = sum_d coeffs[d] * x_d.
    Linear(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialProfile {
    Uniform,
    PeakedAtStructures,
}

fn default_n_tracts() -> usize {
    100
}
fn default_n_covariates() -> usize {
    10
}
fn default_relevant() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_tau() -> TauSpec {
    TauSpec::Constant(1.0)
}
fn default_confounding() -> f64 {
    1.0
}
fn default_noise_sd() -> f64 {
    0.1
}
fn default_profile() -> SpatialProfile {
    SpatialProfile::Uniform
}
fn default_total_pop() -> u64 {
    100
}
fn default_base_rate() -> f64 {
    4.0
}
fn default_baseline_coeff() -> f64 {
    1.0
}
fn default_structures_per_treated() -> usize {
    1
}
fn default_origin_lat() -> f64 {
    41.6
}
fn default_origin_lon() -> f64 {
    -87.9
}
fn default_cell_deg() -> f64 {
    0.01
}
fn default_halo_width_m() -> f64 {
    0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_n_tracts")]
    pub n_tracts: usize,
    #[serde(default = "default_n_covariates")]
    pub n_covariates: usize,
    /// Covariate indices that drive the baseline and the treatment.
    #[serde(default = "default_relevant")]
    pub relevant: Vec<usize>,
    #[serde(default = "default_tau")]
    pub tau: TauSpec,
    #[serde(default = "default_confounding")]
    pub confounding_strength: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_profile")]
    pub crime_spatial_profile: SpatialProfile,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_total_pop")]
    pub total_pop: u64,
    #[serde(default = "default_base_rate")]
    pub base_rate: f64,
    #[serde(default = "default_baseline_coeff")]
    pub baseline_coeff: f64,
    #[serde(default = "default_structures_per_treated")]
    pub structures_per_treated: usize,
    #[serde(default = "default_origin_lat")]
    pub origin_lat: f64,
    #[serde(default = "default_origin_lon")]
    pub origin_lon: f64,
    #[serde(default = "default_cell_deg")]
    pub cell_deg: f64,
    /// Width of a uniform crime halo around the tract grid, in metres. Halo
    /// crimes fall in no tract (they count as unassigned and leave outcomes
    /// untouched) but keep the spatial crime field free of a hard boundary.
    /// Density matches the grid's mean crime density. Zero disables it.
    #[serde(default = "default_halo_width_m")]
    pub halo_width_m: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// Ground truth exported alongside the generated files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub n_tracts: usize,
    pub covariate_names: Vec<String>,
    /// Mean of CATE(x) over the generated units.
    pub true_ate: f64,
    pub true_cates: BTreeMap<String, f64>,
    pub treated_geoids: Vec<String>,
    /// Per-capita outcome each tract realizes after count quantization.
    pub realized_outcomes: BTreeMap<String, f64>,
    /// Sign of the naive difference-of-means bias: +1 when the baseline rises
    /// with the confounder, -1 when it falls, 0 when unconfounded.
    pub naive_bias_direction: i8,
}

impl Truth {
    /// Naive unmatched difference of realized arm means.
    pub fn naive_diff_means(&self) -> f64 {
        let treated: std::collections::BTreeSet<&str> =
            self.treated_geoids.iter().map(String::as_str).collect();
        let mut t_sum = 0.0;
        let mut t_n = 0.0;
        let mut c_sum = 0.0;
        let mut c_n = 0.0;
        for (geoid, y) in &self.realized_outcomes {
            if treated.contains(geoid.as_str()) {
                t_sum += y;
                t_n += 1.0;
            } else {
                c_sum += y;
                c_n += 1.0;
            }
        }
        t_sum / t_n - c_sum / c_n
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub tracts_csv: String,
    pub boundaries_geojson: String,
    pub crimes_csv: String,
    pub structures_csv: String,
    pub truth: Truth,
}

#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub tracts: PathBuf,
    pub boundaries: PathBuf,
    pub crimes: PathBuf,
    pub structures: PathBuf,
    pub truth: PathBuf,
}

impl SynthData {
    pub fn write_to(&self, dir: &Path) -> Result<SynthPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths {
            tracts: dir.join("tracts.csv"),
            boundaries: dir.join("boundaries.geojson"),
            crimes: dir.join("crimes.csv"),
            structures: dir.join("structures.csv"),
            truth: dir.join("truth.json"),
        };
        let write = |path: &Path, contents: &str| -> Result<()> {
            std::fs::write(path, contents).map_err(|e| Error::io(path, e))
        };
        write(&paths.tracts, &self.tracts_csv)?;
        write(&paths.boundaries, &self.boundaries_geojson)?;
        write(&paths.crimes, &self.crimes_csv)?;
        write(&paths.structures, &self.structures_csv)?;
        write(&paths.truth, &serde_json::to_string_pretty(&self.truth)?)?;
        Ok(paths)
    }
}

pub fn covariate_names(p: usize) -> Vec<String> {
    (0..p).map(|d| format!("x{d:02}")).collect()
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct TractCell {
    geoid: String,
    lat0: f64,
    lon0: f64,
}

impl TractCell {
    fn uniform_interior(&self, cell: f64, rng: &mut Rng) -> (f64, f64) {
        // Inset keeps points strictly interior so boundary assignment can
        // never be ambiguous.
        let margin = cell * 0.02;
        (
            rng.range_f64(self.lat0 + margin, self.lat0 + cell - margin),
            rng.range_f64(self.lon0 + margin, self.lon0 + cell - margin),
        )
    }

    fn contains_inset(&self, cell: f64, lat: f64, lon: f64) -> bool {
        let margin = cell * 0.02;
        lat > self.lat0 + margin
            && lat < self.lat0 + cell - margin
            && lon > self.lon0 + margin
            && lon < self.lon0 + cell - margin
    }
}

fn random_date(rng: &mut Rng) -> String {
    // Any valid date inside the first analysis period (2008-2012).
    let year = 2008 + rng.next_below(5);
    let month = 1 + rng.next_below(12);
    let day = 1 + rng.next_below(28);
    format!("{year:04}-{month:02}-{day:02}")
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let n = spec.n_tracts;
    let p = spec.n_covariates;
    if n < 2 {
        return Err(Error::Config("synth needs at least 2 tracts".into()));
    }
    if p == 0 {
        return Err(Error::Config("synth needs at least 1 covariate".into()));
    }
    if spec.relevant.iter().any(|&d| d >= p) {
        return Err(Error::Config(
            "relevant covariate index out of range".into(),
        ));
    }
    if let TauSpec::Linear(coeffs) = &spec.tau {
        if coeffs.len() != p {
            return Err(Error::Config(format!(
                "linear tau has {} coefficients for {p} covariates",
                coeffs.len()
            )));
        }
    }
    if spec.noise_sd < 0.0 {
        return Err(Error::Config("noise_sd must be nonnegative".into()));
    }
    if spec.total_pop == 0 {
        return Err(Error::Config("total_pop must be positive".into()));
    }
    if spec.cell_deg <= 0.0 {
        return Err(Error::Config("cell_deg must be positive".into()));
    }
    let side = (n as f64).sqrt().ceil() as usize;
    let extent = side as f64 * spec.cell_deg;
    if spec.origin_lat.abs() + extent > 89.0 || spec.origin_lon.abs() + extent > 179.0 {
        return Err(Error::Config(
            "synthetic grid exceeds coordinate bounds".into(),
        ));
    }

    let names = covariate_names(p);
    let cell = spec.cell_deg;
    let cells: Vec<TractCell> = (0..n)
        .map(|i| TractCell {
            geoid: format!("T{:04}", i + 1),
            lat0: spec.origin_lat + (i / side) as f64 * cell,
            lon0: spec.origin_lon + (i % side) as f64 * cell,
        })
        .collect();

    // Covariates, treatment, and noise each draw from their own substream.
    let mut cov_rng = Rng::substream(spec.seed, "covariates");
    let mut treat_rng = Rng::substream(spec.seed, "treatment");
    let mut noise_rng = Rng::substream(spec.seed, "noise");

    let covariates: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| cov_rng.next_normal()).collect())
        .collect();
    let g_scale = (spec.relevant.len().max(1) as f64).sqrt();
    let g: Vec<f64> = covariates
        .iter()
        .map(|row| spec.relevant.iter().map(|&d| row[d]).sum::<f64>() / g_scale)
        .collect();
    let treated: Vec<bool> = g
        .iter()
        .map(|&gi| treat_rng.next_f64() < logistic(spec.confounding_strength * gi))
        .collect();
    let cates: Vec<f64> = covariates
        .iter()
        .map(|row| match &spec.tau {
            TauSpec::Constant(v) => *v,
            TauSpec::Linear(coeffs) => coeffs.iter().zip(row).map(|(c, x)| c * x).sum(),
        })
        .collect();
    let counts: Vec<u64> = (0..n)
        .map(|i| {
            let y = spec.base_rate
                + spec.baseline_coeff * g[i]
                + if treated[i] { cates[i] } else { 0.0 }
                + spec.noise_sd * noise_rng.next_normal();
            (y.max(0.0) * spec.total_pop as f64).round() as u64
        })
        .collect();

    // tracts.csv
    let mut tracts_csv = String::from("geoid,total_pop");
    for name in &names {
        tracts_csv.push(',');
        tracts_csv.push_str(name);
    }
    tracts_csv.push('\n');
    for (i, c) in cells.iter().enumerate() {
        tracts_csv.push_str(&format!("{},{}", c.geoid, spec.total_pop));
        for v in &covariates[i] {
            tracts_csv.push_str(&format!(",{v}"));
        }
        tracts_csv.push('\n');
    }

    // boundaries.geojson
    let features: Vec<serde_json::Value> = cells
        .iter()
        .map(|c| {
            let ring = vec![
                vec![c.lon0, c.lat0],
                vec![c.lon0 + cell, c.lat0],
                vec![c.lon0 + cell, c.lat0 + cell],
                vec![c.lon0, c.lat0 + cell],
                vec![c.lon0, c.lat0],
            ];
            serde_json::json!({
                "type": "Feature",
                "properties": { "geoid": c.geoid },
                "geometry": { "type": "Polygon", "coordinates": [ring] }
            })
        })
        .collect();
    let boundaries_geojson = serde_json::to_string_pretty(&serde_json::json!({
        "type": "FeatureCollection",
        "features": features,
    }))?;

    // structures.csv: structures only in treated tracts.
    let mut structures_csv = String::from("lat,lon\n");
    let mut structure_locations: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    for (i, c) in cells.iter().enumerate() {
        if !treated[i] {
            continue;
        }
        let mut rng = Rng::substream(spec.seed, &format!("structures:{}", c.geoid));
        for _ in 0..spec.structures_per_treated {
            let (lat, lon) = c.uniform_interior(cell, &mut rng);
            structures_csv.push_str(&format!("{lat},{lon}\n"));
            structure_locations[i].push((lat, lon));
        }
    }

    // crimes.csv: counts[i] points per tract under the chosen profile.
    let mut crimes_csv = String::from("lat,lon,date,category\n");
    for (i, c) in cells.iter().enumerate() {
        let mut rng = Rng::substream(spec.seed, &format!("crimes:{}", c.geoid));
        for _ in 0..counts[i] {
            let (lat, lon) = match spec.crime_spatial_profile {
                SpatialProfile::Uniform => c.uniform_interior(cell, &mut rng),
                SpatialProfile::PeakedAtStructures => {
                    if structure_locations[i].is_empty() {
                        c.uniform_interior(cell, &mut rng)
                    } else {
                        let pick = rng.next_below(structure_locations[i].len() as u64) as usize;
                        let (s_lat, s_lon) = structure_locations[i][pick];
                        let sigma_deg = 50.0 / METERS_PER_DEG;
                        let mut placed = None;
                        for _ in 0..50 {
                            let lat = s_lat + sigma_deg * rng.next_normal();
                            let lon = s_lon
                                + sigma_deg * rng.next_normal()
                                    / spec.origin_lat.to_radians().cos();
                            if c.contains_inset(cell, lat, lon) {
                                placed = Some((lat, lon));
                                break;
                            }
                        }
                        placed.unwrap_or_else(|| c.uniform_interior(cell, &mut rng))
                    }
                }
            };
            let date = random_date(&mut rng);
            crimes_csv.push_str(&format!("{lat},{lon},{date},battery\n"));
        }
    }

    if spec.halo_width_m > 0.0 {
        let mut rng = Rng::substream(spec.seed, "crimes:halo");
        let grid_lat_lo = spec.origin_lat;
        let grid_lat_hi = spec.origin_lat + side as f64 * cell;
        let grid_lon_lo = spec.origin_lon;
        let grid_lon_hi = spec.origin_lon + side as f64 * cell;
        let mid_lat = 0.5 * (grid_lat_lo + grid_lat_hi);
        let halo_lat = spec.halo_width_m / METERS_PER_DEG;
        let halo_lon = spec.halo_width_m / (METERS_PER_DEG * mid_lat.to_radians().cos());
        let grid_area = (grid_lat_hi - grid_lat_lo) * (grid_lon_hi - grid_lon_lo);
        let outer_area = (grid_lat_hi - grid_lat_lo + 2.0 * halo_lat)
            * (grid_lon_hi - grid_lon_lo + 2.0 * halo_lon);
        let in_grid: u64 = counts.iter().sum();
        let n_halo = (in_grid as f64 * (outer_area - grid_area) / grid_area).round() as u64;
        let mut placed = 0;
        while placed < n_halo {
            let lat = rng.range_f64(grid_lat_lo - halo_lat, grid_lat_hi + halo_lat);
            let lon = rng.range_f64(grid_lon_lo - halo_lon, grid_lon_hi + halo_lon);
            if lat >= grid_lat_lo && lat <= grid_lat_hi && lon >= grid_lon_lo && lon <= grid_lon_hi
            {
                continue;
            }
            let date = random_date(&mut rng);
            crimes_csv.push_str(&format!("{lat},{lon},{date},battery\n"));
            placed += 1;
        }
    }

    let true_ate = cates.iter().sum::<f64>() / n as f64;
    let truth = Truth {
        seed: spec.seed,
        n_tracts: n,
        covariate_names: names,
        true_ate,
        true_cates: cells
            .iter()
            .zip(&cates)
            .map(|(c, v)| (c.geoid.clone(), *v))
            .collect(),
        treated_geoids: cells
            .iter()
            .zip(&treated)
            .filter(|(_, t)| **t)
            .map(|(c, _)| c.geoid.clone())
            .collect(),
        realized_outcomes: cells
            .iter()
            .zip(&counts)
            .map(|(c, &k)| (c.geoid.clone(), k as f64 / spec.total_pop as f64))
            .collect(),
        naive_bias_direction: {
            let s = spec.baseline_coeff * spec.confounding_strength;
            if s > 0.0 {
                1
            } else if s < 0.0 {
                -1
            } else {
                0
            }
        },
    };

    Ok(SynthData {
        tracts_csv,
        boundaries_geojson,
        crimes_csv,
        structures_csv,
        truth,
    })
}
