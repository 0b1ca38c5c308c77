//! Input parsing and aggregation: tract demographics, tract boundaries
//! (GeoJSON), structure coordinates, and crime points, spatially joined into
//! one analysis table.

use crate::csvio::{Skip, Table};
use crate::error::{Error, Result};
use crate::geo::{centroid, point_in_polygon, GeoPoint, Polygon};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Calendar date, compared chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IsoDate {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

impl FromStr for IsoDate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<IsoDate, String> {
        let bytes = s.as_bytes();
        if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
            return Err(format!("`{s}` is not an ISO-8601 date (YYYY-MM-DD)"));
        }
        let year: i32 = s[0..4].parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = s[5..7].parse().map_err(|_| format!("bad month in `{s}`"))?;
        let day: u32 = s[8..10].parse().map_err(|_| format!("bad day in `{s}`"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("month {month} out of range in `{s}`"));
        }
        let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
        let days_in_month = match month {
            1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
            4 | 6 | 9 | 11 => 30,
            _ => {
                if leap {
                    29
                } else {
                    28
                }
            }
        };
        if !(1..=days_in_month).contains(&day) {
            return Err(format!("day {day} out of range in `{s}`"));
        }
        Ok(IsoDate { year, month, day })
    }
}

impl TryFrom<String> for IsoDate {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<IsoDate, String> {
        s.parse()
    }
}

impl From<IsoDate> for String {
    fn from(d: IsoDate) -> String {
        d.to_string()
    }
}

impl fmt::Display for IsoDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

/// A named analysis period with inclusive date bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub id: String,
    pub start: IsoDate,
    pub end: IsoDate,
}

impl Period {
    pub fn contains(&self, d: IsoDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// The three default five-year periods.
pub fn default_periods() -> Vec<Period> {
    let p = |id: &str, start: &str, end: &str| Period {
        id: id.to_string(),
        start: start.parse().unwrap(),
        end: end.parse().unwrap(),
    };
    vec![
        p("S1", "2008-01-01", "2012-12-31"),
        p("S2", "2013-01-01", "2017-12-31"),
        p("S3", "2018-01-01", "2022-12-31"),
    ]
}

/// Ordered covariate column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub names: Vec<String>,
}

impl CovariateSchema {
    pub fn new(names: Vec<String>) -> CovariateSchema {
        CovariateSchema { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// The 30 demographic covariates drawn from ACS five-year estimates.
pub fn default_covariate_names() -> Vec<String> {
    [
        "total_pop",
        "male_pop",
        "female_pop",
        "m_juv",
        "m_ad",
        "m_eld",
        "f_juv",
        "f_ad",
        "f_eld",
        "num_households",
        "male_never_married",
        "male_married",
        "male_divorced",
        "female_never_married",
        "female_married",
        "female_divorced",
        "white_pop",
        "black_pop",
        "nat_pop",
        "asian_pop",
        "mixed_pop",
        "other_pop",
        "no_highschool",
        "highschool",
        "undergrad",
        "postgrad",
        "median_income",
        "poverty",
        "in_labor",
        "unemployed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn default_violent_categories() -> Vec<String> {
    ["battery", "rape", "homicide"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Tract geometry: all polygon parts are used for containment; the largest
/// part (by area) anchors the centroid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TractGeometry {
    pub parts: Vec<Polygon>,
}

impl TractGeometry {
    pub fn contains(&self, p: GeoPoint) -> bool {
        self.parts.iter().any(|part| point_in_polygon(p, part))
    }

    pub fn centroid(&self) -> Result<GeoPoint> {
        let largest = self
            .parts
            .iter()
            .max_by(|a, b| a.area_sq_m().partial_cmp(&b.area_sq_m()).unwrap())
            .ok_or_else(|| Error::Geometry("tract has no polygon parts".into()))?;
        centroid(largest)
    }
}

/// A census tract joined from the demographics and boundary files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tract {
    pub geoid: String,
    pub boundary: TractGeometry,
    pub covariates: Vec<f64>,
    pub total_pop: u64,
    pub period_outcomes: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPoint {
    pub location: GeoPoint,
    pub timestamp: IsoDate,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructurePoint {
    pub location: GeoPoint,
    /// Absent means the structure is treated as present since the start of
    /// the analysis range.
    pub opened: Option<IsoDate>,
}

/// Joined and aggregated analysis inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisTable {
    pub covariate_names: Vec<String>,
    pub tracts: Vec<Tract>,
    /// geoid -> period -> violent crime count.
    pub crime_counts: BTreeMap<String, BTreeMap<String, u64>>,
    /// structure type -> geoid -> period -> structure count.
    pub structure_counts: BTreeMap<String, BTreeMap<String, BTreeMap<String, u64>>>,
    /// period -> crimes falling in no tract.
    pub unassigned_crimes: BTreeMap<String, u64>,
}

impl AnalysisTable {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<AnalysisTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn tract(&self, geoid: &str) -> Option<&Tract> {
        self.tracts.iter().find(|t| t.geoid == geoid)
    }
}

/// Per-capita crime rate over the analysis period.
pub fn crime_rate(crime_count: u64, total_pop: u64) -> Result<f64> {
    if total_pop == 0 {
        return Err(Error::Data(
            "crime_rate: total_pop is zero (unpopulated tracts must be excluded)".into(),
        ));
    }
    Ok(crime_count as f64 / total_pop as f64)
}

fn parse_f64(table: &Table, row: &(usize, Vec<String>), col: usize, what: &str) -> Result<f64> {
    let raw = table.field(row, col)?;
    raw.parse::<f64>()
        .map_err(|_| table.malformed(row.0, format!("cannot parse {what} from `{raw}`")))
}

/// Load tracts from a demographics CSV and a GeoJSON FeatureCollection of
/// boundaries. Only geoids present in both files become tracts; unpopulated
/// tracts are dropped. Mismatches go into the skip report.
pub fn load_tracts(
    demographics_file: &Path,
    boundaries_file: &Path,
    schema: &CovariateSchema,
) -> Result<(Vec<Tract>, Vec<Skip>)> {
    let table = Table::read(demographics_file)?;
    let geoid_col = table.column("geoid")?;
    let pop_col = table.column("total_pop")?;
    let cov_cols: Vec<usize> = schema
        .names
        .iter()
        .map(|name| table.column(name))
        .collect::<Result<Vec<_>>>()?;

    let boundaries = load_boundaries(boundaries_file)?;
    let boundaries_name = boundaries_file.display().to_string();

    let mut skips = Vec::new();
    let mut tracts = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for row in &table.rows {
        let geoid = table.field(row, geoid_col)?.to_string();
        if geoid.is_empty() {
            return Err(table.malformed(row.0, "empty geoid"));
        }
        if !seen.insert(geoid.clone()) {
            return Err(table.malformed(row.0, format!("duplicate geoid `{geoid}`")));
        }
        let pop_raw = parse_f64(&table, row, pop_col, "total_pop")?;
        if pop_raw.is_nan() || pop_raw < 0.0 || pop_raw.fract() != 0.0 {
            return Err(table.malformed(row.0, format!("total_pop `{pop_raw}` is not a count")));
        }
        let total_pop = pop_raw as u64;
        let covariates = cov_cols
            .iter()
            .enumerate()
            .map(|(i, &c)| parse_f64(&table, row, c, &schema.names[i]))
            .collect::<Result<Vec<f64>>>()?;
        let Some(boundary) = boundaries.get(&geoid) else {
            skips.push(Skip {
                file: table.file.clone(),
                line: row.0,
                reason: format!("geoid `{geoid}` has no boundary feature"),
            });
            continue;
        };
        if total_pop == 0 {
            skips.push(Skip {
                file: table.file.clone(),
                line: row.0,
                reason: format!("geoid `{geoid}` excluded: unpopulated (total_pop = 0)"),
            });
            continue;
        }
        tracts.push(Tract {
            geoid,
            boundary: boundary.clone(),
            covariates,
            total_pop,
            period_outcomes: BTreeMap::new(),
        });
    }
    for geoid in boundaries.keys() {
        if !seen.contains(geoid) {
            skips.push(Skip {
                file: boundaries_name.clone(),
                line: 0,
                reason: format!("geoid `{geoid}` has no demographics row"),
            });
        }
    }
    tracts.sort_by(|a, b| a.geoid.cmp(&b.geoid));
    Ok((tracts, skips))
}

fn load_boundaries(path: &Path) -> Result<BTreeMap<String, TractGeometry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let file = path.display().to_string();
    if doc.get("type").and_then(|t| t.as_str()) != Some("FeatureCollection") {
        return Err(Error::Data(format!(
            "{file}: not a GeoJSON FeatureCollection"
        )));
    }
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::Data(format!("{file}: missing features array")))?;
    let mut out = BTreeMap::new();
    for (i, feature) in features.iter().enumerate() {
        let geoid = feature
            .get("properties")
            .and_then(|p| p.get("geoid"))
            .and_then(|g| match g {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
            .ok_or_else(|| Error::Data(format!("{file}: feature {i} has no geoid property")))?;
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::Data(format!("{file}: feature {i} has no geometry")))?;
        let gtype = geometry.get("type").and_then(|t| t.as_str()).unwrap_or("");
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| Error::Data(format!("{file}: feature {i} has no coordinates")))?;
        let parts = match gtype {
            "Polygon" => vec![parse_polygon(coords, &file, i)?],
            "MultiPolygon" => {
                let arr = coords
                    .as_array()
                    .ok_or_else(|| Error::Data(format!("{file}: feature {i}: bad MultiPolygon")))?;
                arr.iter()
                    .map(|p| parse_polygon(p, &file, i))
                    .collect::<Result<Vec<_>>>()?
            }
            other => {
                return Err(Error::Data(format!(
                    "{file}: feature {i}: unsupported geometry type `{other}`"
                )))
            }
        };
        if out.insert(geoid.clone(), TractGeometry { parts }).is_some() {
            return Err(Error::Data(format!("{file}: duplicate geoid `{geoid}`")));
        }
    }
    Ok(out)
}

fn parse_polygon(coords: &serde_json::Value, file: &str, feature: usize) -> Result<Polygon> {
    let rings = coords.as_array().ok_or_else(|| {
        Error::Data(format!(
            "{file}: feature {feature}: bad polygon coordinates"
        ))
    })?;
    let mut parsed: Vec<Vec<GeoPoint>> = Vec::with_capacity(rings.len());
    for ring in rings {
        let positions = ring
            .as_array()
            .ok_or_else(|| Error::Data(format!("{file}: feature {feature}: bad ring")))?;
        let mut pts = Vec::with_capacity(positions.len());
        for pos in positions {
            let pair = pos
                .as_array()
                .ok_or_else(|| Error::Data(format!("{file}: feature {feature}: bad position")))?;
            if pair.len() < 2 {
                return Err(Error::Data(format!(
                    "{file}: feature {feature}: bad position"
                )));
            }
            let lon = pair[0].as_f64().ok_or_else(|| {
                Error::Data(format!("{file}: feature {feature}: non-numeric longitude"))
            })?;
            let lat = pair[1].as_f64().ok_or_else(|| {
                Error::Data(format!("{file}: feature {feature}: non-numeric latitude"))
            })?;
            pts.push(GeoPoint::new(lat, lon)?);
        }
        parsed.push(pts);
    }
    if parsed.is_empty() {
        return Err(Error::Data(format!(
            "{file}: feature {feature}: polygon has no rings"
        )));
    }
    let exterior = parsed.remove(0);
    Polygon::new(exterior, parsed)
}

pub struct PointLoad<T> {
    pub points: Vec<T>,
    pub skips: Vec<Skip>,
}

fn load_point_rows<T>(
    path: &Path,
    required: &[&str],
    mut parse: impl FnMut(&Table, &(usize, Vec<String>), &[usize]) -> std::result::Result<T, String>,
) -> Result<PointLoad<T>> {
    let table = Table::read(path)?;
    let cols = required
        .iter()
        .map(|name| table.column(name))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    let mut skips = Vec::new();
    let total = table.rows.len();
    for row in &table.rows {
        match parse(&table, row, &cols) {
            Ok(p) => points.push(p),
            Err(reason) => skips.push(Skip {
                file: table.file.clone(),
                line: row.0,
                reason,
            }),
        }
    }
    if total > 0 && skips.len() * 2 > total {
        return Err(Error::Data(format!(
            "{}: {} of {} rows skipped; input does not match the expected schema",
            table.file,
            skips.len(),
            total
        )));
    }
    Ok(PointLoad { points, skips })
}

fn parse_geopoint(lat_raw: &str, lon_raw: &str) -> std::result::Result<GeoPoint, String> {
    let lat: f64 = lat_raw
        .parse()
        .map_err(|_| format!("cannot parse latitude `{lat_raw}`"))?;
    let lon: f64 = lon_raw
        .parse()
        .map_err(|_| format!("cannot parse longitude `{lon_raw}`"))?;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

/// Load crime events from a CSV with header `lat,lon,date,category`.
/// Unparseable rows are skipped and reported; more than 50% skipped is fatal.
pub fn load_events(path: &Path) -> Result<PointLoad<EventPoint>> {
    load_point_rows(path, &["lat", "lon", "date", "category"], |t, row, cols| {
        let location = parse_geopoint(
            t.field(row, cols[0]).map_err(|e| e.to_string())?,
            t.field(row, cols[1]).map_err(|e| e.to_string())?,
        )?;
        let timestamp: IsoDate = t.field(row, cols[2]).map_err(|e| e.to_string())?.parse()?;
        let category = t
            .field(row, cols[3])
            .map_err(|e| e.to_string())?
            .to_string();
        if category.is_empty() {
            return Err("empty category".into());
        }
        Ok(EventPoint {
            location,
            timestamp,
            category,
        })
    })
}

/// Load structure locations from a CSV with header `lat,lon[,opened]`.
/// A missing `opened` column means every structure is treated as present
/// since the start of the analysis range.
pub fn load_structures(path: &Path) -> Result<PointLoad<StructurePoint>> {
    let table = Table::read(path)?;
    let opened_col = table.column_opt("opened");
    drop(table);
    load_point_rows(path, &["lat", "lon"], |t, row, cols| {
        let location = parse_geopoint(
            t.field(row, cols[0]).map_err(|e| e.to_string())?,
            t.field(row, cols[1]).map_err(|e| e.to_string())?,
        )?;
        let opened = match opened_col {
            Some(c) => {
                let raw = t.field(row, c).map_err(|e| e.to_string())?;
                if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse::<IsoDate>()?)
                }
            }
            None => None,
        };
        Ok(StructurePoint { location, opened })
    })
}

/// Keep only events whose category is in `categories` (case-insensitive
/// exact match).
pub fn filter_violent(events: &[EventPoint], categories: &[String]) -> Vec<EventPoint> {
    let wanted: std::collections::BTreeSet<String> =
        categories.iter().map(|c| c.to_lowercase()).collect();
    events
        .iter()
        .filter(|e| wanted.contains(&e.category.to_lowercase()))
        .cloned()
        .collect()
}

/// Grid-accelerated point-to-tract locator.
pub struct TractLocator<'a> {
    tracts: &'a [Tract],
    cells: HashMapGrid,
}

struct HashMapGrid {
    cell_deg: f64,
    buckets: std::collections::HashMap<(i64, i64), Vec<u32>>,
}

impl<'a> TractLocator<'a> {
    pub fn build(tracts: &'a [Tract]) -> TractLocator<'a> {
        // Cell size from the median tract bbox extent so each bbox covers
        // only a few cells.
        let mut extents: Vec<f64> = tracts
            .iter()
            .flat_map(|t| t.boundary.parts.iter())
            .map(|p| {
                let bb = p.bbox();
                (bb.lat_max - bb.lat_min).max(bb.lon_max - bb.lon_min)
            })
            .collect();
        extents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cell_deg = extents
            .get(extents.len() / 2)
            .copied()
            .unwrap_or(0.01)
            .max(1e-6);
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<u32>> =
            std::collections::HashMap::new();
        for (i, tract) in tracts.iter().enumerate() {
            for part in &tract.boundary.parts {
                let bb = part.bbox();
                let lat_lo = (bb.lat_min / cell_deg).floor() as i64;
                let lat_hi = (bb.lat_max / cell_deg).floor() as i64;
                let lon_lo = (bb.lon_min / cell_deg).floor() as i64;
                let lon_hi = (bb.lon_max / cell_deg).floor() as i64;
                for la in lat_lo..=lat_hi {
                    for lo in lon_lo..=lon_hi {
                        let bucket = buckets.entry((la, lo)).or_default();
                        if bucket.last() != Some(&(i as u32)) {
                            bucket.push(i as u32);
                        }
                    }
                }
            }
        }
        TractLocator {
            tracts,
            cells: HashMapGrid { cell_deg, buckets },
        }
    }

    /// The containing tract's geoid; ties on shared boundaries resolve to the
    /// lexicographically smallest geoid.
    pub fn locate(&self, p: GeoPoint) -> Option<&'a str> {
        let key = (
            (p.lat / self.cells.cell_deg).floor() as i64,
            (p.lon / self.cells.cell_deg).floor() as i64,
        );
        let bucket = self.cells.buckets.get(&key)?;
        bucket
            .iter()
            .filter(|&&i| self.tracts[i as usize].boundary.contains(p))
            .map(|&i| self.tracts[i as usize].geoid.as_str())
            .min()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinCounts {
    pub counts: BTreeMap<String, u64>,
    pub unassigned: u64,
}

/// Count points per containing tract. Points inside no tract are tallied as
/// unassigned.
pub fn spatial_join(points: &[GeoPoint], tracts: &[Tract]) -> JoinCounts {
    let locator = TractLocator::build(tracts);
    let mut counts: BTreeMap<String, u64> = tracts.iter().map(|t| (t.geoid.clone(), 0)).collect();
    let mut unassigned = 0;
    for &p in points {
        match locator.locate(p) {
            Some(geoid) => *counts.get_mut(geoid).unwrap() += 1,
            None => unassigned += 1,
        }
    }
    JoinCounts { counts, unassigned }
}

/// Join and aggregate everything into the analysis table: per-period crime
/// counts, per-period structure counts per structure type, and per-period
/// crime-rate outcomes on each tract.
pub fn build_table(
    mut tracts: Vec<Tract>,
    covariate_names: Vec<String>,
    violent_events: &[EventPoint],
    structures: &BTreeMap<String, Vec<StructurePoint>>,
    periods: &[Period],
) -> Result<AnalysisTable> {
    let locator = TractLocator::build(&tracts);
    let mut crime_counts: BTreeMap<String, BTreeMap<String, u64>> = tracts
        .iter()
        .map(|t| {
            (
                t.geoid.clone(),
                periods.iter().map(|p| (p.id.clone(), 0)).collect(),
            )
        })
        .collect();
    let mut unassigned: BTreeMap<String, u64> = periods.iter().map(|p| (p.id.clone(), 0)).collect();
    for event in violent_events {
        let Some(period) = periods.iter().find(|p| p.contains(event.timestamp)) else {
            continue;
        };
        match locator.locate(event.location) {
            Some(geoid) => {
                *crime_counts
                    .get_mut(geoid)
                    .unwrap()
                    .get_mut(&period.id)
                    .unwrap() += 1;
            }
            None => *unassigned.get_mut(&period.id).unwrap() += 1,
        }
    }

    let mut structure_counts: BTreeMap<String, BTreeMap<String, BTreeMap<String, u64>>> =
        BTreeMap::new();
    for (kind_name, points) in structures {
        let mut per_geoid: BTreeMap<String, BTreeMap<String, u64>> = tracts
            .iter()
            .map(|t| {
                (
                    t.geoid.clone(),
                    periods.iter().map(|p| (p.id.clone(), 0)).collect(),
                )
            })
            .collect();
        for s in points {
            let Some(geoid) = locator.locate(s.location) else {
                continue;
            };
            for period in periods {
                // A structure opened after the period's end does not count
                // toward that period.
                let present = match s.opened {
                    Some(opened) => opened <= period.end,
                    None => true,
                };
                if present {
                    *per_geoid
                        .get_mut(geoid)
                        .unwrap()
                        .get_mut(&period.id)
                        .unwrap() += 1;
                }
            }
        }
        structure_counts.insert(kind_name.clone(), per_geoid);
    }

    for tract in &mut tracts {
        let mut outcomes = BTreeMap::new();
        for period in periods {
            let count = crime_counts[&tract.geoid][&period.id];
            outcomes.insert(period.id.clone(), crime_rate(count, tract.total_pop)?);
        }
        tract.period_outcomes = outcomes;
    }

    Ok(AnalysisTable {
        covariate_names,
        tracts,
        crime_counts,
        structure_counts,
        unassigned_crimes: unassigned,
    })
}
