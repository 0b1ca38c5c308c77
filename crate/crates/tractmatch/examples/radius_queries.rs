//! Geometry toolkit: haversine distances, point-in-polygon, the grid index
//! for radius queries, and area-uniform disc sampling.
//!
//!     cargo run --example radius_queries

use tractmatch::geo::{
    centroid, haversine_m, point_in_polygon, sample_points_in_disc, GeoPoint, PointIndex, Polygon,
};
use tractmatch::rng::Rng;

fn main() -> tractmatch::Result<()> {
    let downtown = GeoPoint::new(41.8781, -87.6298)?;
    let station = GeoPoint::new(41.8789, -87.6402)?;
    println!(
        "two points downtown: {:.1} m apart",
        haversine_m(downtown, station)
    );

    // A city block with a courtyard hole.
    let block = Polygon::new(
        vec![
            GeoPoint::new(41.878, -87.632)?,
            GeoPoint::new(41.878, -87.628)?,
            GeoPoint::new(41.881, -87.628)?,
            GeoPoint::new(41.881, -87.632)?,
        ],
        vec![vec![
            GeoPoint::new(41.8786, -87.6291)?,
            GeoPoint::new(41.8786, -87.6283)?,
            GeoPoint::new(41.8796, -87.6283)?,
            GeoPoint::new(41.8796, -87.6291)?,
        ]],
    )?;
    let c = centroid(&block)?;
    println!("block centroid: ({:.5}, {:.5})", c.lat, c.lon);
    println!("centroid inside block: {}", point_in_polygon(c, &block));
    let courtyard = GeoPoint::new(41.8791, -87.6287)?;
    println!(
        "courtyard point inside block: {}",
        point_in_polygon(courtyard, &block)
    );

    // Index 50,000 random points and count within growing radii.
    let mut rng = Rng::new(1);
    let points = (0..50_000).map(|i| {
        (
            GeoPoint::new(rng.range_f64(41.85, 41.91), rng.range_f64(-87.68, -87.60)).unwrap(),
            i,
        )
    });
    let index = PointIndex::build(points, 400.0);
    for r in [25.0, 100.0, 400.0, 1600.0] {
        println!(
            "points within {r:6.0} m of downtown: {}",
            index.count_within_radius(downtown, r)
        );
    }

    // Twenty sampled control points within 750 m, all inside the disc.
    let samples = sample_points_in_disc(downtown, 750.0, 20, 99);
    let max_d = samples
        .iter()
        .map(|p| haversine_m(downtown, *p))
        .fold(0.0f64, f64::max);
    println!(
        "sampled {} disc points, farthest {:.1} m",
        samples.len(),
        max_d
    );
    Ok(())
}
