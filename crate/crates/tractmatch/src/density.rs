//! Localized crime-density curves over concentric radii around treated
//! structures and sampled control points.

use crate::error::{Error, Result};
use crate::geo::{sample_points_in_disc, GeoPoint, PointIndex};
use crate::ingest::{StructurePoint, Tract, TractLocator};
use crate::matching::MatchedGroup;
use crate::rng::derive_seed;
use crate::treatment::{Label, TreatmentAssignment};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub const SQ_METERS_PER_SQ_MILE: f64 = 2_589_988.110_336;

/// Strictly increasing positive radii, in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RadiusGrid {
    radii_m: Vec<f64>,
}

impl RadiusGrid {
    pub fn new(radii_m: Vec<f64>) -> Result<RadiusGrid> {
        if radii_m.is_empty() {
            return Err(Error::Config("radius grid is empty".into()));
        }
        if radii_m[0] <= 0.0 || radii_m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "radius grid must be strictly increasing and positive".into(),
            ));
        }
        Ok(RadiusGrid { radii_m })
    }

    /// 16 radii beginning at 25 m with 25 m increments.
    pub fn default_grid() -> RadiusGrid {
        RadiusGrid::new((1..=16).map(|i| 25.0 * i as f64).collect()).unwrap()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii_m
    }

    pub fn len(&self) -> usize {
        self.radii_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii_m.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        *self.radii_m.last().unwrap()
    }
}

impl TryFrom<Vec<f64>> for RadiusGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<RadiusGrid> {
        RadiusGrid::new(v)
    }
}

impl From<RadiusGrid> for Vec<f64> {
    fn from(g: RadiusGrid) -> Vec<f64> {
        g.radii_m
    }
}

/// Disc densities are cumulative (count within r over disc area); annulus
/// densities use only the ring between consecutive radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    #[default]
    Disc,
    Annulus,
}

/// Paired treated/control mean-density series over a radius grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityCurve {
    pub radii_m: Vec<f64>,
    pub treated_mean: Vec<f64>,
    pub control_mean: Vec<f64>,
    pub n_treated_centers: usize,
    pub n_control_centers: usize,
}

impl DensityCurve {
    /// `radius_m,treated_density,control_density,n_treated,n_control` CSV.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("radius_m,treated_density,control_density,n_treated,n_control\n");
        for (i, r) in self.radii_m.iter().enumerate() {
            out.push_str(&format!(
                "{r},{},{},{},{}\n",
                self.treated_mean[i],
                self.control_mean[i],
                self.n_treated_centers,
                self.n_control_centers
            ));
        }
        out
    }
}

/// Crimes per square mile within `r_m` metres of `center`.
pub fn density_at(index: &PointIndex, center: GeoPoint, r_m: f64) -> f64 {
    let count = index.count_within_radius(center, r_m);
    let area_sq_mi = std::f64::consts::PI * r_m * r_m / SQ_METERS_PER_SQ_MILE;
    count as f64 / area_sq_mi
}

/// Density profile of one center over the grid, cumulative or annular.
fn center_profile(
    index: &PointIndex,
    center: GeoPoint,
    grid: &RadiusGrid,
    mode: DensityMode,
) -> Vec<f64> {
    let counts: Vec<usize> = grid
        .radii()
        .iter()
        .map(|&r| index.count_within_radius(center, r))
        .collect();
    match mode {
        DensityMode::Disc => grid
            .radii()
            .iter()
            .zip(&counts)
            .map(|(&r, &c)| c as f64 / (std::f64::consts::PI * r * r / SQ_METERS_PER_SQ_MILE))
            .collect(),
        DensityMode::Annulus => {
            let mut prev_r = 0.0;
            let mut prev_c = 0usize;
            grid.radii()
                .iter()
                .zip(&counts)
                .map(|(&r, &c)| {
                    let ring_area =
                        std::f64::consts::PI * (r * r - prev_r * prev_r) / SQ_METERS_PER_SQ_MILE;
                    let ring_count = (c - prev_c) as f64;
                    prev_r = r;
                    prev_c = c;
                    ring_count / ring_area
                })
                .collect()
        }
    }
}

/// Unweighted mean of per-center densities at each radius.
fn mean_profile(
    index: &PointIndex,
    centers: &[GeoPoint],
    grid: &RadiusGrid,
    mode: DensityMode,
) -> Vec<f64> {
    let profiles: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|&c| center_profile(index, c, grid, mode))
        .collect();
    let mut mean = vec![0.0; grid.len()];
    for profile in &profiles {
        for (m, v) in mean.iter_mut().zip(profile) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= centers.len() as f64;
    }
    mean
}

/// Mean crime density around every structure center.
pub fn treated_curve(
    structures: &[StructurePoint],
    crimes: &PointIndex,
    grid: &RadiusGrid,
    mode: DensityMode,
) -> Result<Vec<f64>> {
    if structures.is_empty() {
        return Err(Error::Data(
            "treated density curve needs at least one structure".into(),
        ));
    }
    let centers: Vec<GeoPoint> = structures.iter().map(|s| s.location).collect();
    Ok(mean_profile(crimes, &centers, grid, mode))
}

/// Deterministic sampled centers for one control tract: n points within
/// `sample_radius_m` of the tract centroid, seeded per tract from the master
/// seed and the geoid.
pub fn control_centers(
    tract: &Tract,
    n_samples: usize,
    sample_radius_m: f64,
    master_seed: u64,
) -> Result<Vec<GeoPoint>> {
    let centroid = tract.boundary.centroid()?;
    let seed = derive_seed(master_seed, &format!("sample:{}", tract.geoid));
    Ok(sample_points_in_disc(
        centroid,
        sample_radius_m,
        n_samples,
        seed,
    ))
}

pub struct ControlCurve {
    pub mean: Vec<f64>,
    pub n_centers: usize,
    /// Tracts skipped for degenerate centroids or empty restricted samples.
    pub skipped: Vec<String>,
}

/// Mean crime density around sampled points near every control tract's
/// centroid. The literal procedure keeps every sampled point; with
/// `restrict_to_tract` the samples falling outside their tract are discarded
/// (a sensitivity variant).
#[allow(clippy::too_many_arguments)]
pub fn control_curve(
    control_tracts: &[&Tract],
    crimes: &PointIndex,
    grid: &RadiusGrid,
    n_samples: usize,
    sample_radius_m: f64,
    master_seed: u64,
    mode: DensityMode,
    restrict_to_tract: bool,
) -> Result<ControlCurve> {
    if control_tracts.is_empty() {
        return Err(Error::Data(
            "control density curve needs at least one tract".into(),
        ));
    }
    let mut centers = Vec::with_capacity(control_tracts.len() * n_samples);
    let mut skipped = Vec::new();
    for tract in control_tracts {
        match control_centers(tract, n_samples, sample_radius_m, master_seed) {
            Ok(pts) => {
                let mut kept: Vec<GeoPoint> = if restrict_to_tract {
                    pts.into_iter()
                        .filter(|p| tract.boundary.contains(*p))
                        .collect()
                } else {
                    pts
                };
                if kept.is_empty() {
                    skipped.push(tract.geoid.clone());
                } else {
                    centers.append(&mut kept);
                }
            }
            Err(_) => skipped.push(tract.geoid.clone()),
        }
    }
    if centers.is_empty() {
        return Err(Error::Data(
            "every control tract had a degenerate centroid".into(),
        ));
    }
    Ok(ControlCurve {
        mean: mean_profile(crimes, &centers, grid, mode),
        n_centers: centers.len(),
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct DensityParams {
    pub grid: RadiusGrid,
    pub n_samples: usize,
    pub sample_radius_m: f64,
    pub seed: u64,
    pub mode: DensityMode,
    /// Keep only sampled control centers inside their own tract.
    pub restrict_to_tract: bool,
}

/// The paired treated/control series: treated centers are structures inside
/// treated tracts that appear in retained matched groups; control centers are
/// sampled around the centroids of control tracts in retained groups.
pub fn density_analysis(
    assignment: &TreatmentAssignment,
    retained_groups: &[MatchedGroup],
    structures: &[StructurePoint],
    crimes: &PointIndex,
    tracts: &[Tract],
    params: &DensityParams,
) -> Result<DensityCurve> {
    if retained_groups.is_empty() {
        return Err(Error::Data(
            "density analysis needs retained matched groups".into(),
        ));
    }
    let mut in_groups: BTreeSet<&str> = BTreeSet::new();
    for group in retained_groups {
        in_groups.insert(group.query.as_str());
        for n in group
            .treated_neighbors
            .iter()
            .chain(&group.control_neighbors)
        {
            in_groups.insert(n.as_str());
        }
    }
    let treated_geoids: BTreeSet<&str> = in_groups
        .iter()
        .copied()
        .filter(|g| assignment.labels.get(*g) == Some(&Label::Treated))
        .collect();
    let control_geoids: BTreeSet<&str> = in_groups
        .iter()
        .copied()
        .filter(|g| assignment.labels.get(*g) == Some(&Label::Control))
        .collect();

    let locator = TractLocator::build(tracts);
    let treated_structures: Vec<StructurePoint> = structures
        .iter()
        .filter(|s| {
            locator
                .locate(s.location)
                .is_some_and(|g| treated_geoids.contains(g))
        })
        .cloned()
        .collect();
    if treated_structures.is_empty() {
        return Err(Error::Data(
            "no structures fall inside retained treated tracts".into(),
        ));
    }
    let control_tracts: Vec<&Tract> = tracts
        .iter()
        .filter(|t| control_geoids.contains(t.geoid.as_str()))
        .collect();

    let treated_mean = treated_curve(&treated_structures, crimes, &params.grid, params.mode)?;
    let control = control_curve(
        &control_tracts,
        crimes,
        &params.grid,
        params.n_samples,
        params.sample_radius_m,
        params.seed,
        params.mode,
        params.restrict_to_tract,
    )?;

    Ok(DensityCurve {
        radii_m: params.grid.radii().to_vec(),
        treated_mean,
        control_mean: control.mean,
        n_treated_centers: treated_structures.len(),
        n_control_centers: control.n_centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine_m, Polygon};
    use crate::rng::Rng;
    use crate::treatment::StructureKind;
    use std::collections::BTreeMap;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn index_of(points: &[GeoPoint]) -> PointIndex {
        PointIndex::build(points.iter().enumerate().map(|(i, p)| (*p, i)), 400.0)
    }

    #[test]
    fn radius_grid_validates() {
        assert!(RadiusGrid::new(vec![]).is_err());
        assert!(RadiusGrid::new(vec![0.0, 25.0]).is_err());
        assert!(RadiusGrid::new(vec![25.0, 25.0]).is_err());
        let grid = RadiusGrid::default_grid();
        assert_eq!(grid.len(), 16);
        assert_eq!(grid.radii()[0], 25.0);
        assert_eq!(grid.max_radius(), 400.0);
    }

    #[test]
    fn density_at_zero_crimes() {
        let index = index_of(&[]);
        assert_eq!(density_at(&index, pt(41.0, -87.0), 100.0), 0.0);
    }

    #[test]
    fn density_at_matches_hand_conversion() {
        // Two crimes within 25 m: 2 / (pi * 625 / 2,589,988.110336).
        let center = pt(41.0, -87.0);
        let near = pt(41.0001, -87.0);
        let index = index_of(&[near, near, pt(41.5, -87.0)]);
        let expected = 2.0 / (std::f64::consts::PI * 625.0 / SQ_METERS_PER_SQ_MILE);
        let got = density_at(&index, center, 25.0);
        assert!(
            (got - expected).abs() / expected < 1e-9,
            "got {got} want {expected}"
        );
        assert!((expected - 2638.2).abs() < 0.5);
    }

    #[test]
    fn density_scales_linearly_in_count() {
        let center = pt(41.0, -87.0);
        let near = pt(41.00005, -87.0);
        let two = index_of(&[near, near]);
        let four = index_of(&[near, near, near, near]);
        let d2 = density_at(&two, center, 50.0);
        let d4 = density_at(&four, center, 50.0);
        assert!((d4 - 2.0 * d2).abs() < 1e-9);
    }

    fn structure(lat: f64, lon: f64) -> StructurePoint {
        StructurePoint {
            location: pt(lat, lon),
            opened: None,
        }
    }

    #[test]
    fn treated_curve_single_structure_equals_own_profile() {
        let crimes = index_of(&[pt(41.0001, -87.0), pt(41.001, -87.0)]);
        let grid = RadiusGrid::new(vec![50.0, 200.0]).unwrap();
        let s = structure(41.0, -87.0);
        let curve =
            treated_curve(std::slice::from_ref(&s), &crimes, &grid, DensityMode::Disc).unwrap();
        assert_eq!(curve[0], density_at(&crimes, s.location, 50.0));
        assert_eq!(curve[1], density_at(&crimes, s.location, 200.0));
    }

    #[test]
    fn treated_curve_mean_of_equal_profiles() {
        // Two structures with identical local point patterns.
        let crimes = index_of(&[pt(41.0001, -87.0), pt(41.2001, -87.0)]);
        let grid = RadiusGrid::new(vec![50.0]).unwrap();
        let solo =
            treated_curve(&[structure(41.0, -87.0)], &crimes, &grid, DensityMode::Disc).unwrap();
        let both = treated_curve(
            &[structure(41.0, -87.0), structure(41.2, -87.0)],
            &crimes,
            &grid,
            DensityMode::Disc,
        )
        .unwrap();
        assert!((solo[0] - both[0]).abs() < 1e-9);
    }

    #[test]
    fn treated_curve_matches_brute_force_average() {
        let mut rng = Rng::new(61);
        let crimes: Vec<GeoPoint> = (0..5000)
            .map(|_| pt(rng.range_f64(40.99, 41.01), rng.range_f64(-87.01, -86.99)))
            .collect();
        let index = index_of(&crimes);
        let structures: Vec<StructurePoint> = (0..5)
            .map(|_| {
                structure(
                    rng.range_f64(40.995, 41.005),
                    rng.range_f64(-87.005, -86.995),
                )
            })
            .collect();
        let grid = RadiusGrid::default_grid();
        let curve = treated_curve(&structures, &index, &grid, DensityMode::Disc).unwrap();
        for (ri, &r) in grid.radii().iter().enumerate() {
            let mut total = 0.0;
            for s in &structures {
                let count = crimes
                    .iter()
                    .filter(|c| haversine_m(s.location, **c) <= r)
                    .count();
                total += count as f64 / (std::f64::consts::PI * r * r / SQ_METERS_PER_SQ_MILE);
            }
            let expected = total / structures.len() as f64;
            assert!(
                (curve[ri] - expected).abs() < 1e-9,
                "radius {r}: {} vs {expected}",
                curve[ri]
            );
        }
    }

    fn square_tract(geoid: &str, lat0: f64, lon0: f64, size: f64) -> Tract {
        Tract {
            geoid: geoid.to_string(),
            boundary: crate::ingest::TractGeometry {
                parts: vec![Polygon::new(
                    vec![
                        pt(lat0, lon0),
                        pt(lat0, lon0 + size),
                        pt(lat0 + size, lon0 + size),
                        pt(lat0 + size, lon0),
                    ],
                    vec![],
                )
                .unwrap()],
            },
            covariates: vec![],
            total_pop: 100,
            period_outcomes: BTreeMap::new(),
        }
    }

    #[test]
    fn control_centers_all_within_sampling_radius() {
        let tract = square_tract("C1", 41.0, -87.0, 0.01);
        let centroid = tract.boundary.centroid().unwrap();
        let centers = control_centers(&tract, 20, 750.0, 99).unwrap();
        assert_eq!(centers.len(), 20);
        for c in &centers {
            assert!(haversine_m(centroid, *c) <= 750.0);
        }
    }

    #[test]
    fn control_curve_zero_crimes_is_zero() {
        let tract = square_tract("C1", 41.0, -87.0, 0.01);
        let crimes = index_of(&[]);
        let grid = RadiusGrid::default_grid();
        let curve = control_curve(
            &[&tract],
            &crimes,
            &grid,
            20,
            750.0,
            3,
            DensityMode::Disc,
            false,
        )
        .unwrap();
        assert!(curve.mean.iter().all(|&d| d == 0.0));
        assert_eq!(curve.n_centers, 20);
    }

    #[test]
    fn control_curve_restricted_keeps_only_in_tract_centers() {
        let tract = square_tract("C1", 41.0, -87.0, 0.01);
        let crimes = index_of(&[pt(41.005, -86.995)]);
        let grid = RadiusGrid::new(vec![100.0]).unwrap();
        let all = control_curve(
            &[&tract],
            &crimes,
            &grid,
            50,
            750.0,
            9,
            DensityMode::Disc,
            false,
        )
        .unwrap();
        let restricted = control_curve(
            &[&tract],
            &crimes,
            &grid,
            50,
            750.0,
            9,
            DensityMode::Disc,
            true,
        )
        .unwrap();
        // A 750 m disc around the centroid of a ~1.1 km square spills over,
        // so restriction must discard some centers.
        assert_eq!(all.n_centers, 50);
        assert!(restricted.n_centers < 50);
        assert!(restricted.n_centers > 0);
    }

    #[test]
    fn control_curve_deterministic_and_per_tract_seeded() {
        let t1 = square_tract("C1", 41.0, -87.0, 0.01);
        let t2 = square_tract("C2", 41.02, -87.0, 0.01);
        let crimes = index_of(&[pt(41.005, -87.005), pt(41.025, -87.005)]);
        let grid = RadiusGrid::default_grid();
        let a = control_curve(
            &[&t1, &t2],
            &crimes,
            &grid,
            20,
            750.0,
            7,
            DensityMode::Disc,
            false,
        )
        .unwrap();
        let b = control_curve(
            &[&t1, &t2],
            &crimes,
            &grid,
            20,
            750.0,
            7,
            DensityMode::Disc,
            false,
        )
        .unwrap();
        assert_eq!(a.mean, b.mean);
        // Per-tract substreams: C1's centers do not change when C2 is added.
        let c1_alone = control_centers(&t1, 20, 750.0, 7).unwrap();
        let c1_with = control_centers(&t1, 20, 750.0, 7).unwrap();
        assert_eq!(c1_alone, c1_with);
    }

    fn one_group(query: &str, treated: &str, control: &str) -> MatchedGroup {
        MatchedGroup {
            query: query.into(),
            treated_neighbors: [treated.to_string()].into_iter().collect(),
            control_neighbors: [control.to_string()].into_iter().collect(),
            diameter: 0.0,
        }
    }

    fn assignment_of(labels: &[(&str, Label)]) -> TreatmentAssignment {
        TreatmentAssignment {
            labels: labels.iter().map(|(g, l)| (g.to_string(), *l)).collect(),
            counts: labels.iter().map(|(g, _)| (g.to_string(), 0.0)).collect(),
            threshold: 0.0,
            kind: StructureKind::Sparse,
        }
    }

    #[test]
    fn density_analysis_crimes_at_structures_strictly_decreasing() {
        let tracts = vec![
            square_tract("T1", 41.0, -87.0, 0.01),
            square_tract("C1", 41.02, -87.0, 0.01),
        ];
        let assignment = assignment_of(&[("T1", Label::Treated), ("C1", Label::Control)]);
        let s = structure(41.005, -86.995);
        // All crimes exactly at the structure: fixed count, growing area.
        let crimes = index_of(&[s.location; 10]);
        let params = DensityParams {
            grid: RadiusGrid::default_grid(),
            n_samples: 5,
            sample_radius_m: 750.0,
            seed: 1,
            mode: DensityMode::Disc,
            restrict_to_tract: false,
        };
        let curve = density_analysis(
            &assignment,
            &[one_group("T1", "T1", "C1"), one_group("C1", "T1", "C1")],
            &[s],
            &crimes,
            &tracts,
            &params,
        )
        .unwrap();
        assert_eq!(curve.radii_m.len(), 16);
        assert_eq!(curve.n_treated_centers, 1);
        for w in curve.treated_mean.windows(2) {
            assert!(w[1] < w[0], "treated curve must strictly decrease: {w:?}");
        }
    }

    #[test]
    fn density_analysis_only_uses_tracts_in_retained_groups() {
        let tracts = vec![
            square_tract("T1", 41.0, -87.0, 0.01),
            square_tract("T2", 41.04, -87.0, 0.01),
            square_tract("C1", 41.02, -87.0, 0.01),
        ];
        let assignment = assignment_of(&[
            ("T1", Label::Treated),
            ("T2", Label::Treated),
            ("C1", Label::Control),
        ]);
        // Structures in both treated tracts, but only T1 appears in groups.
        let s1 = structure(41.005, -86.995);
        let s2 = structure(41.045, -86.995);
        let crimes = index_of(&[s1.location]);
        let params = DensityParams {
            grid: RadiusGrid::new(vec![100.0]).unwrap(),
            n_samples: 3,
            sample_radius_m: 500.0,
            seed: 5,
            mode: DensityMode::Disc,
            restrict_to_tract: false,
        };
        let curve = density_analysis(
            &assignment,
            &[one_group("T1", "T1", "C1")],
            &[s1, s2],
            &crimes,
            &tracts,
            &params,
        )
        .unwrap();
        assert_eq!(curve.n_treated_centers, 1);
    }

    #[test]
    fn cumulative_counts_monotone_in_radius() {
        let mut rng = Rng::new(88);
        let crimes: Vec<GeoPoint> = (0..2000)
            .map(|_| pt(rng.range_f64(40.99, 41.01), rng.range_f64(-87.01, -86.99)))
            .collect();
        let index = index_of(&crimes);
        let grid = RadiusGrid::default_grid();
        for _ in 0..20 {
            let center = pt(
                rng.range_f64(40.995, 41.005),
                rng.range_f64(-87.005, -86.995),
            );
            let counts: Vec<usize> = grid
                .radii()
                .iter()
                .map(|&r| index.count_within_radius(center, r))
                .collect();
            assert!(counts.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn annulus_mode_uses_ring_counts() {
        let center = pt(41.0, -87.0);
        // One point ~30 m north, one ~70 m north.
        let crimes = index_of(&[pt(41.00027, -87.0), pt(41.00063, -87.0)]);
        let grid = RadiusGrid::new(vec![50.0, 100.0]).unwrap();
        let disc = center_profile(&crimes, center, &grid, DensityMode::Disc);
        let ring = center_profile(&crimes, center, &grid, DensityMode::Annulus);
        // Disc at 100 m sees both points; the outer ring only one.
        let ring_area =
            std::f64::consts::PI * (100.0f64.powi(2) - 50.0f64.powi(2)) / SQ_METERS_PER_SQ_MILE;
        assert!((ring[1] - 1.0 / ring_area).abs() < 1e-9);
        assert!(disc[1] > ring[1]);
    }

    #[test]
    fn density_curve_csv_format() {
        let curve = DensityCurve {
            radii_m: vec![25.0, 50.0],
            treated_mean: vec![10.0, 5.0],
            control_mean: vec![2.0, 1.0],
            n_treated_centers: 3,
            n_control_centers: 40,
        };
        let csv = curve.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "radius_m,treated_density,control_density,n_treated,n_control"
        );
        assert_eq!(lines.next().unwrap(), "25,10,2,3,40");
    }
}
