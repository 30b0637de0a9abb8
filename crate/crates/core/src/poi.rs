//! POI and check-in ingestion plus category-filtered radius queries.
//!
//! Both stores are immutable after load and safe to share across simulation
//! workers. POIs are bucketed into a fixed 0.01-degree grid (about 1.1 km of
//! latitude per cell); a radius query scans the cells intersecting the
//! bounding box of the query circle and filters by exact great-circle
//! distance. Longitude wraparound at the antimeridian is not handled; the
//! index targets urban-scale extents.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, GeoError, GeoPoint, KM_PER_DEG_LAT};

/// Grid cell edge in degrees.
pub const GRID_CELL_DEG: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PoiLoadError {
    #[error("csv error at line {line}: {source}")]
    Csv { line: u64, source: csv::Error },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: field `{field}`: {message}")]
    MalformedField { line: u64, field: String, message: String },
    #[error("line {line}: {source}")]
    CoordinateOutOfRange { line: u64, source: GeoError },
    #[error("line {line}: attraction must be > 0, got {value}")]
    NonPositiveAttraction { line: u64, value: f64 },
    #[error("duplicate poi_id `{id}` at line {line}")]
    DuplicatePoiId { id: String, line: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A geocoded, categorized venue with a positive attraction factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub name: String,
    pub category: String,
    pub location: GeoPoint,
    pub attraction: f64,
}

fn cell_of(p: GeoPoint) -> (i32, i32) {
    (
        (p.lat() / GRID_CELL_DEG).floor() as i32,
        (p.lon() / GRID_CELL_DEG).floor() as i32,
    )
}

/// Immutable POI collection with a grid index and category lookup.
#[derive(Debug, Clone, Default)]
pub struct PoiStore {
    pois: Vec<Poi>,
    by_id: HashMap<String, usize>,
    by_category: HashMap<String, Vec<usize>>,
    grid: HashMap<(i32, i32), Vec<usize>>,
    categories: BTreeSet<String>,
}

impl PoiStore {
    /// Build a store from already-validated POIs. Duplicate ids are rejected.
    pub fn from_pois(pois: Vec<Poi>) -> Result<Self, PoiLoadError> {
        let mut store = PoiStore::default();
        for (i, poi) in pois.into_iter().enumerate() {
            store.insert(poi, i as u64 + 2)?;
        }
        store.finish();
        Ok(store)
    }

    /// Load POIs from CSV with header `poi_id,name,category,lat,lon[,attraction]`.
    ///
    /// Attraction defaults to 1.0 when the column is absent or empty. Extra
    /// columns are ignored.
    pub fn load_pois(source: impl Read) -> Result<Self, PoiLoadError> {
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
        let headers = reader.headers().map_err(|e| PoiLoadError::Csv { line: 1, source: e })?.clone();
        let col = |name: &str| -> Result<usize, PoiLoadError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| PoiLoadError::MissingColumn(name.to_string()))
        };
        let idx_id = col("poi_id")?;
        let idx_name = col("name")?;
        let idx_category = col("category")?;
        let idx_lat = col("lat")?;
        let idx_lon = col("lon")?;
        let idx_attraction = headers.iter().position(|h| h == "attraction");

        let mut store = PoiStore::default();
        for result in reader.records() {
            let record = result.map_err(|e| PoiLoadError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                source: e,
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |idx: usize, name: &str| -> Result<&str, PoiLoadError> {
                record.get(idx).ok_or_else(|| PoiLoadError::MalformedField {
                    line,
                    field: name.to_string(),
                    message: "missing value".to_string(),
                })
            };
            let parse_f64 = |idx: usize, name: &str| -> Result<f64, PoiLoadError> {
                field(idx, name)?.trim().parse::<f64>().map_err(|e| PoiLoadError::MalformedField {
                    line,
                    field: name.to_string(),
                    message: e.to_string(),
                })
            };

            let id = field(idx_id, "poi_id")?.trim().to_string();
            if id.is_empty() {
                return Err(PoiLoadError::MalformedField {
                    line,
                    field: "poi_id".to_string(),
                    message: "empty id".to_string(),
                });
            }
            let name = field(idx_name, "name")?.to_string();
            let category = field(idx_category, "category")?.trim().to_string();
            let lat = parse_f64(idx_lat, "lat")?;
            let lon = parse_f64(idx_lon, "lon")?;
            let location = GeoPoint::new(lat, lon)
                .map_err(|source| PoiLoadError::CoordinateOutOfRange { line, source })?;
            let attraction = match idx_attraction {
                Some(idx) => {
                    let raw = record.get(idx).unwrap_or("").trim();
                    if raw.is_empty() { 1.0 } else {
                        raw.parse::<f64>().map_err(|e| PoiLoadError::MalformedField {
                            line,
                            field: "attraction".to_string(),
                            message: e.to_string(),
                        })?
                    }
                }
                None => 1.0,
            };
            if !(attraction > 0.0) {
                return Err(PoiLoadError::NonPositiveAttraction { line, value: attraction });
            }

            store.insert(Poi { id, name, category, location, attraction }, line)?;
        }
        store.finish();
        Ok(store)
    }

    fn insert(&mut self, poi: Poi, line: u64) -> Result<(), PoiLoadError> {
        if self.by_id.contains_key(&poi.id) {
            return Err(PoiLoadError::DuplicatePoiId { id: poi.id, line });
        }
        let idx = self.pois.len();
        self.by_id.insert(poi.id.clone(), idx);
        self.by_category.entry(poi.category.clone()).or_default().push(idx);
        self.grid.entry(cell_of(poi.location)).or_default().push(idx);
        self.categories.insert(poi.category.clone());
        self.pois.push(poi);
        Ok(())
    }

    fn finish(&mut self) {
        // Category listings in id order so fallback candidate sets are stable.
        for indices in self.by_category.values_mut() {
            indices.sort_by(|&a, &b| self.pois[a].id.cmp(&self.pois[b].id));
        }
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Poi> {
        self.by_id.get(id).map(|&i| &self.pois[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Poi> {
        self.pois.iter()
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(String::as_str)
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.contains(category)
    }

    /// All POIs of a category, in ascending id order.
    pub fn pois_of_category(&self, category: &str) -> Vec<&Poi> {
        self.by_category
            .get(category)
            .map(|idxs| idxs.iter().map(|&i| &self.pois[i]).collect())
            .unwrap_or_default()
    }

    /// POIs of `category` within `radius_km` of `center`, ordered by
    /// ascending distance with ties broken by id.
    pub fn query_radius(&self, center: GeoPoint, radius_km: f64, category: &str) -> Vec<&Poi> {
        assert!(radius_km > 0.0, "radius must be positive");
        if !self.categories.contains(category) {
            return Vec::new();
        }

        let dlat = radius_km / KM_PER_DEG_LAT;
        let cos_lat = center.lat().to_radians().cos();
        // Near the poles the longitude band degenerates; fall back to a full sweep.
        let dlon = if cos_lat > 1e-6 { (radius_km / (KM_PER_DEG_LAT * cos_lat)).min(180.0) } else { 180.0 };

        let lat_lo = (center.lat() - dlat).max(-90.0);
        let lat_hi = (center.lat() + dlat).min(90.0);
        let lon_lo = (center.lon() - dlon).max(-180.0);
        let lon_hi = (center.lon() + dlon).min(180.0);

        let cell_lat_lo = (lat_lo / GRID_CELL_DEG).floor() as i32;
        let cell_lat_hi = (lat_hi / GRID_CELL_DEG).floor() as i32;
        let cell_lon_lo = (lon_lo / GRID_CELL_DEG).floor() as i32;
        let cell_lon_hi = (lon_hi / GRID_CELL_DEG).floor() as i32;

        let mut hits: Vec<(f64, &Poi)> = Vec::new();
        for cell_lat in cell_lat_lo..=cell_lat_hi {
            for cell_lon in cell_lon_lo..=cell_lon_hi {
                let Some(indices) = self.grid.get(&(cell_lat, cell_lon)) else { continue };
                for &i in indices {
                    let poi = &self.pois[i];
                    if poi.category != category {
                        continue;
                    }
                    let d = haversine_km(center, poi.location);
                    if d <= radius_km {
                        hits.push((d, poi));
                    }
                }
            }
        }
        hits.sort_by(|(da, pa), (db, pb)| da.total_cmp(db).then_with(|| pa.id.cmp(&pb.id)));
        hits.into_iter().map(|(_, poi)| poi).collect()
    }

    /// Replace each POI's attraction with its smoothed, mean-normalized
    /// check-in count: `(count + 1) / mean(count + 1)`. Smoothing keeps
    /// attraction strictly positive for unvisited POIs; the mean-1 scale
    /// matches the uniform default.
    pub fn set_attractions_from_checkins(&mut self, checkins: &CheckinLog) {
        if self.pois.is_empty() {
            return;
        }
        let smoothed: Vec<f64> =
            self.pois.iter().map(|p| checkins.count(&p.id) as f64 + 1.0).collect();
        let mean = smoothed.iter().sum::<f64>() / smoothed.len() as f64;
        for (poi, s) in self.pois.iter_mut().zip(smoothed) {
            poi.attraction = s / mean;
        }
    }

    #[cfg(test)]
    pub(crate) fn grid_entry_count(&self) -> usize {
        self.grid.values().map(Vec::len).sum()
    }
}

/// One row of the check-in dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckinRecord {
    pub user_id: String,
    pub poi_id: String,
    /// Seconds since the Unix epoch; offset-less timestamps are read as UTC.
    pub timestamp: i64,
    pub category: String,
}

/// Immutable check-in log with exact per-POI multiplicities.
#[derive(Debug, Clone, Default)]
pub struct CheckinLog {
    records: Vec<CheckinRecord>,
    per_poi_counts: HashMap<String, u64>,
}

fn parse_iso8601(raw: &str, line: u64) -> Result<i64, PoiLoadError> {
    let raw = raw.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    for format in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(raw, format) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(PoiLoadError::MalformedField {
        line,
        field: "timestamp".to_string(),
        message: format!("`{raw}` is not an ISO-8601 timestamp"),
    })
}

impl CheckinLog {
    /// Load check-ins from CSV with header `user_id,poi_id,timestamp,category`.
    /// Unknown columns are ignored.
    pub fn load_checkins(source: impl Read) -> Result<Self, PoiLoadError> {
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
        let headers = reader.headers().map_err(|e| PoiLoadError::Csv { line: 1, source: e })?.clone();
        let col = |name: &str| -> Result<usize, PoiLoadError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| PoiLoadError::MissingColumn(name.to_string()))
        };
        let idx_user = col("user_id")?;
        let idx_poi = col("poi_id")?;
        let idx_ts = col("timestamp")?;
        let idx_category = col("category")?;

        let mut log = CheckinLog::default();
        for result in reader.records() {
            let record = result.map_err(|e| PoiLoadError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                source: e,
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let get = |idx: usize, name: &str| -> Result<&str, PoiLoadError> {
                record.get(idx).ok_or_else(|| PoiLoadError::MalformedField {
                    line,
                    field: name.to_string(),
                    message: "missing value".to_string(),
                })
            };
            let rec = CheckinRecord {
                user_id: get(idx_user, "user_id")?.trim().to_string(),
                poi_id: get(idx_poi, "poi_id")?.trim().to_string(),
                timestamp: parse_iso8601(get(idx_ts, "timestamp")?, line)?,
                category: get(idx_category, "category")?.trim().to_string(),
            };
            *log.per_poi_counts.entry(rec.poi_id.clone()).or_insert(0) += 1;
            log.records.push(rec);
        }
        Ok(log)
    }

    pub fn records(&self) -> &[CheckinRecord] {
        &self.records
    }

    pub fn count(&self, poi_id: &str) -> u64 {
        self.per_poi_counts.get(poi_id).copied().unwrap_or(0)
    }

    pub fn per_poi_counts(&self) -> &HashMap<String, u64> {
        &self.per_poi_counts
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::fmt::Write as _;

    fn point(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn poi(id: &str, category: &str, lat: f64, lon: f64) -> Poi {
        Poi {
            id: id.to_string(),
            name: id.to_string(),
            category: category.to_string(),
            location: point(lat, lon),
            attraction: 1.0,
        }
    }

    #[test]
    fn header_only_file_yields_empty_store() {
        let store = PoiStore::load_pois("poi_id,name,category,lat,lon\n".as_bytes()).unwrap();
        assert_eq!(store.len(), 0);
        assert_eq!(store.categories().count(), 0);
    }

    #[test]
    fn attraction_defaults_to_one() {
        let csv = "poi_id,name,category,lat,lon\np1,Gym A,Gym,35.68,139.76\n";
        let store = PoiStore::load_pois(csv.as_bytes()).unwrap();
        let p1 = store.get("p1").unwrap();
        assert_eq!(p1.attraction, 1.0);
        assert_eq!(p1.category, "Gym");
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn attraction_column_is_parsed_and_validated() {
        let csv = "poi_id,name,category,lat,lon,attraction\np1,A,Gym,0,0,2.5\n";
        let store = PoiStore::load_pois(csv.as_bytes()).unwrap();
        assert_eq!(store.get("p1").unwrap().attraction, 2.5);

        let bad = "poi_id,name,category,lat,lon,attraction\np1,A,Gym,0,0,0.0\n";
        match PoiStore::load_pois(bad.as_bytes()) {
            Err(PoiLoadError::NonPositiveAttraction { line: 2, value }) => assert_eq!(value, 0.0),
            other => panic!("expected NonPositiveAttraction, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line_and_field() {
        let csv = "poi_id,name,category,lat,lon\np1,A,Gym,not-a-number,0\n";
        match PoiStore::load_pois(csv.as_bytes()) {
            Err(PoiLoadError::MalformedField { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "lat");
            }
            other => panic!("expected MalformedField, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_coordinate_is_rejected() {
        let csv = "poi_id,name,category,lat,lon\np1,A,Gym,91.0,0\n";
        match PoiStore::load_pois(csv.as_bytes()) {
            Err(PoiLoadError::CoordinateOutOfRange { line: 2, .. }) => {}
            other => panic!("expected CoordinateOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn large_file_with_duplicates_reports_first_duplicate() {
        let mut csv = String::from("poi_id,name,category,lat,lon\n");
        for i in 0..10_000 {
            // p137, p2218 and p9417 appear a second time under new rows.
            let id = match i {
                4_000 => "p137".to_string(),
                7_000 => "p2218".to_string(),
                9_900 => "p9417".to_string(),
                _ => format!("p{i}"),
            };
            writeln!(csv, "{id},Name {i},Cat{},{:.4},{:.4}", i % 7, 35.0 + (i as f64) * 1e-4, 139.0).unwrap();
        }
        match PoiStore::load_pois(csv.as_bytes()) {
            Err(PoiLoadError::DuplicatePoiId { id, line }) => {
                assert_eq!(id, "p137");
                assert_eq!(line, 4_002); // header + 1-based data offset
            }
            other => panic!("expected DuplicatePoiId, got {other:?}"),
        }
    }

    #[test]
    fn radius_query_on_missing_category_is_empty() {
        let store = PoiStore::from_pois(vec![poi("p1", "Gym", 0.0, 0.0)]).unwrap();
        assert!(store.query_radius(point(0.0, 0.0), 5.0, "Cafe").is_empty());
    }

    #[test]
    fn poi_at_center_is_returned_first() {
        let store = PoiStore::from_pois(vec![
            poi("far", "Gym", 0.005, 0.0),
            poi("here", "Gym", 0.0, 0.0),
        ])
        .unwrap();
        let hits = store.query_radius(point(0.0, 0.0), 1.0, "Gym");
        assert_eq!(hits.first().map(|p| p.id.as_str()), Some("here"));
        assert_eq!(hits.len(), 2);
    }

    /// Linear-scan oracle for radius queries, independent of the grid index.
    fn scan_radius<'a>(pois: &'a [Poi], center: GeoPoint, radius_km: f64, category: &str) -> Vec<&'a str> {
        let mut hits: Vec<(f64, &Poi)> = pois
            .iter()
            .filter(|p| p.category == category && haversine_km(center, p.location) <= radius_km)
            .map(|p| (haversine_km(center, p.location), p))
            .collect();
        hits.sort_by(|(da, pa), (db, pb)| da.total_cmp(db).then_with(|| pa.id.cmp(&pb.id)));
        hits.into_iter().map(|(_, p)| p.id.as_str()).collect()
    }

    #[test]
    fn radius_query_matches_linear_scan_oracle() {
        let mut rng = crate::rng::stream_rng(99, crate::rng::StreamDomain::Simulation, 1);
        let categories = ["Gym", "Cafe", "Park"];
        let pois: Vec<Poi> = (0..1_000)
            .map(|i| {
                poi(
                    &format!("p{i}"),
                    categories[rng.random_range(0..categories.len())],
                    35.0 + rng.random_range(-0.2..0.2),
                    139.0 + rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let store = PoiStore::from_pois(pois.clone()).unwrap();

        for _ in 0..50 {
            let center = point(35.0 + rng.random_range(-0.2..0.2), 139.0 + rng.random_range(-0.2..0.2));
            let category = categories[rng.random_range(0..categories.len())];
            let got: Vec<&str> =
                store.query_radius(center, 5.0, category).iter().map(|p| p.id.as_str()).collect();
            let expected = scan_radius(&pois, center, 5.0, category);
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn grid_holds_every_poi_exactly_once() {
        let mut rng = crate::rng::stream_rng(5, crate::rng::StreamDomain::Simulation, 2);
        let pois: Vec<Poi> = (0..2_000)
            .map(|i| {
                poi(
                    &format!("p{i}"),
                    "Cat",
                    rng.random_range(-89.9..89.9),
                    rng.random_range(-179.9..179.9),
                )
            })
            .collect();
        let store = PoiStore::from_pois(pois).unwrap();
        assert_eq!(store.grid_entry_count(), store.len());
    }

    #[test]
    fn header_only_checkins_are_empty() {
        let log = CheckinLog::load_checkins("user_id,poi_id,timestamp,category\n".as_bytes()).unwrap();
        assert!(log.is_empty());
        assert!(log.per_poi_counts().is_empty());
    }

    #[test]
    fn repeated_poi_counts_multiplicity() {
        let csv = "user_id,poi_id,timestamp,category\n\
                   u1,p1,2024-01-01T09:00:00,Gym\n\
                   u2,p1,2024-01-01T10:00:00,Gym\n\
                   u1,p1,2024-01-02T09:30:00,Gym\n";
        let log = CheckinLog::load_checkins(csv.as_bytes()).unwrap();
        assert_eq!(log.count("p1"), 3);
        assert_eq!(log.records().len(), 3);
    }

    #[test]
    fn unknown_columns_are_ignored() {
        let csv = "user_id,poi_id,timestamp,category,extra\nu1,p1,2024-01-01T09:00:00+09:00,Gym,whatever\n";
        let log = CheckinLog::load_checkins(csv.as_bytes()).unwrap();
        assert_eq!(log.count("p1"), 1);
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let csv = "user_id,poi_id,timestamp,category\nu1,p1,2024-01-01T09:00:00,Gym\nu1,p2,yesterday,Gym\n";
        match CheckinLog::load_checkins(csv.as_bytes()) {
            Err(PoiLoadError::MalformedField { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "timestamp");
            }
            other => panic!("expected MalformedField, got {other:?}"),
        }
    }

    #[test]
    fn counts_match_exact_count_oracle() {
        let mut rng = crate::rng::stream_rng(17, crate::rng::StreamDomain::Simulation, 3);
        let mut csv = String::from("user_id,poi_id,timestamp,category\n");
        let mut oracle: HashMap<String, u64> = HashMap::new();
        for i in 0..1_000 {
            let poi_id = format!("p{}", rng.random_range(0..50));
            *oracle.entry(poi_id.clone()).or_insert(0) += 1;
            writeln!(csv, "u{},{poi_id},2024-01-01T00:{:02}:{:02},Cat", i % 13, (i / 60) % 60, i % 60).unwrap();
        }
        let log = CheckinLog::load_checkins(csv.as_bytes()).unwrap();
        assert_eq!(log.per_poi_counts(), &oracle);
        assert_eq!(log.records().len(), 1_000);
    }

    #[test]
    fn attraction_from_checkins_is_mean_normalized() {
        let mut store = PoiStore::from_pois(vec![
            poi("a", "Gym", 0.0, 0.0),
            poi("b", "Gym", 0.01, 0.0),
        ])
        .unwrap();
        let csv = "user_id,poi_id,timestamp,category\n\
                   u1,a,2024-01-01T09:00:00,Gym\n\
                   u1,a,2024-01-02T09:00:00,Gym\n\
                   u1,a,2024-01-03T09:00:00,Gym\n";
        let log = CheckinLog::load_checkins(csv.as_bytes()).unwrap();
        store.set_attractions_from_checkins(&log);
        // smoothed counts {4, 1}, mean 2.5
        assert!((store.get("a").unwrap().attraction - 1.6).abs() < 1e-12);
        assert!((store.get("b").unwrap().attraction - 0.4).abs() < 1e-12);
        assert!(store.iter().all(|p| p.attraction > 0.0));
    }
}
