//! Point-event parsing and rasterization onto the study grid.

use std::io::Read;

use chrono::{NaiveDate, NaiveDateTime};

use crate::data::config::DataConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        if self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(Error::Config(format!(
                "degenerate bounding box: lat [{}, {}], lon [{}, {}]",
                self.lat_min, self.lat_max, self.lon_min, self.lon_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    /// Map (lat, lon) to normalized (x, y) in the unit square; the box is
    /// treated as a Euclidean rectangle.
    pub fn normalize(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            (lon - self.lon_min) / (self.lon_max - self.lon_min),
            (lat - self.lat_min) / (self.lat_max - self.lat_min),
        )
    }
}

/// An I x J grid tiling the bounding box. Row 0 is the low-latitude edge;
/// column 0 the low-longitude edge.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, rows: usize, cols: usize) -> Self {
        GridSpec { bbox, rows, cols }
    }

    /// Unit-square grid; useful for synthetic data where coordinates are
    /// already normalized.
    pub fn unit(rows: usize, cols: usize) -> Self {
        GridSpec {
            bbox: BoundingBox {
                lat_min: 0.0,
                lat_max: 1.0,
                lon_min: 0.0,
                lon_max: 1.0,
            },
            rows,
            cols,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell of a point inside the box: floor of the normalized coordinate
    /// scaled by the grid size, with the closed upper boundary folded into
    /// the last cell.
    pub fn cell_of(&self, lat: f64, lon: f64) -> (usize, usize) {
        let (x, y) = self.bbox.normalize(lat, lon);
        let row = ((y * self.rows as f64).floor() as usize).min(self.rows - 1);
        let col = ((x * self.cols as f64).floor() as usize).min(self.cols - 1);
        (row, col)
    }

    /// Cell center in normalized coordinates: ((j + 0.5)/J, (i + 0.5)/I).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.cols as f64,
            (row as f64 + 0.5) / self.rows as f64,
        )
    }
}

#[derive(Clone, Debug)]
pub struct EventRecord {
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    /// Index into the configured category whitelist.
    pub category: usize,
}

/// Why input rows were dropped during parsing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RejectCounts {
    pub bad_parse: u64,
    pub out_of_bbox: u64,
    pub non_whitelisted: u64,
    pub out_of_period: u64,
}

impl RejectCounts {
    pub fn total(&self) -> u64 {
        self.bad_parse + self.out_of_bbox + self.non_whitelisted + self.out_of_period
    }
}

const TIMESTAMP_FORMATS: &[&str] = &[
    "%m/%d/%Y %I:%M:%S %p",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(ts);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Parse a delimited text stream with a header row into event records,
/// filtering by category whitelist, bounding box, and study period.
pub fn parse_events(source: impl Read, cfg: &DataConfig) -> Result<(Vec<EventRecord>, RejectCounts)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter)
        .flexible(true)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("missing mapped column `{name}`")))
    };
    let ts_col = col(&cfg.columns.timestamp)?;
    let lat_col = col(&cfg.columns.lat)?;
    let lon_col = col(&cfg.columns.lon)?;
    let cat_col = col(&cfg.columns.category)?;

    let whitelist: Vec<String> = cfg.categories.iter().map(|c| c.to_uppercase()).collect();
    let start = cfg.start_date.and_hms_opt(0, 0, 0).unwrap();
    let end = cfg.end_date.and_hms_opt(0, 0, 0).unwrap();

    let mut records = Vec::new();
    let mut rejects = RejectCounts::default();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Data(format!("unreadable row: {e}")))?;
        let field = |i: usize| row.get(i).unwrap_or("").trim();

        let Some(ts) = parse_timestamp(field(ts_col)) else {
            rejects.bad_parse += 1;
            continue;
        };
        let (Ok(lat), Ok(lon)) = (field(lat_col).parse::<f64>(), field(lon_col).parse::<f64>())
        else {
            rejects.bad_parse += 1;
            continue;
        };
        if !lat.is_finite() || !lon.is_finite() {
            rejects.bad_parse += 1;
            continue;
        }
        let Some(category) = whitelist
            .iter()
            .position(|c| c == &field(cat_col).to_uppercase())
        else {
            rejects.non_whitelisted += 1;
            continue;
        };
        if !cfg.bbox.contains(lat, lon) {
            rejects.out_of_bbox += 1;
            continue;
        }
        if ts < start || ts >= end {
            rejects.out_of_period += 1;
            continue;
        }
        records.push(EventRecord {
            timestamp: ts,
            lat,
            lon,
            category,
        });
    }
    Ok((records, rejects))
}

/// Per-slot, per-cell, per-category counts over the study period.
#[derive(Clone, Debug, PartialEq)]
pub struct EventGrid {
    pub rows: usize,
    pub cols: usize,
    pub categories: usize,
    pub slots: usize,
    counts: Vec<u32>,
}

impl EventGrid {
    pub fn zeros(rows: usize, cols: usize, categories: usize, slots: usize) -> Self {
        EventGrid {
            rows,
            cols,
            categories,
            slots,
            counts: vec![0; rows * cols * categories * slots],
        }
    }

    pub fn from_counts(
        rows: usize,
        cols: usize,
        categories: usize,
        slots: usize,
        counts: Vec<u32>,
    ) -> Result<Self> {
        if counts.len() != rows * cols * categories * slots {
            return Err(Error::Data(format!(
                "count buffer has {} entries, expected {}",
                counts.len(),
                rows * cols * categories * slots
            )));
        }
        Ok(EventGrid {
            rows,
            cols,
            categories,
            slots,
            counts,
        })
    }

    #[inline]
    fn index(&self, t: usize, i: usize, j: usize, l: usize) -> usize {
        ((t * self.rows + i) * self.cols + j) * self.categories + l
    }

    pub fn count(&self, t: usize, i: usize, j: usize, l: usize) -> u32 {
        self.counts[self.index(t, i, j, l)]
    }

    pub fn add_event(&mut self, t: usize, i: usize, j: usize, l: usize) {
        let idx = self.index(t, i, j, l);
        self.counts[idx] += 1;
    }

    /// Total count in a cell across categories (an entry of E_t).
    pub fn cell_total(&self, t: usize, i: usize, j: usize) -> u64 {
        let base = self.index(t, i, j, 0);
        self.counts[base..base + self.categories]
            .iter()
            .map(|&c| c as u64)
            .sum()
    }

    pub fn slot_total(&self, t: usize) -> u64 {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| self.cell_total(t, i, j))
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn raw_counts(&self) -> &[u32] {
        &self.counts
    }
}

/// Drop events onto the grid; every record lands in exactly one
/// (slot, row, col, category) cell.
pub fn rasterize(records: &[EventRecord], grid: &GridSpec, cfg: &DataConfig) -> Result<EventGrid> {
    let n_slots = cfg.n_slots()?;
    let start = cfg.start_date.and_hms_opt(0, 0, 0).unwrap();
    let slot_secs = cfg.slot_hours as i64 * 3600;
    let mut out = EventGrid::zeros(grid.rows, grid.cols, cfg.categories.len(), n_slots);
    for rec in records {
        let secs = (rec.timestamp - start).num_seconds();
        if secs < 0 {
            return Err(Error::Data(format!(
                "event at {} precedes the study period",
                rec.timestamp
            )));
        }
        let slot = (secs / slot_secs) as usize;
        if slot >= n_slots {
            return Err(Error::Data(format!(
                "event at {} is past the study period",
                rec.timestamp
            )));
        }
        let (i, j) = grid.cell_of(rec.lat, rec.lon);
        out.add_event(slot, i, j, rec.category);
    }
    Ok(out)
}

/// Sum of the per-slot count matrices over `slots` (the training period),
/// i.e. the grid the subdivision algorithm runs on.
pub fn aggregate_training_grid(grid: &EventGrid, slots: std::ops::Range<usize>) -> Result<Tensor> {
    if slots.is_empty() || slots.end > grid.slots {
        return Err(Error::Data(format!(
            "aggregate range {slots:?} outside 0..{}",
            grid.slots
        )));
    }
    let mut q = Tensor::zeros(&[grid.rows, grid.cols]);
    for t in slots {
        for i in 0..grid.rows {
            for j in 0..grid.cols {
                let v = q.at(i, j) + grid.cell_total(t, i, j) as f64;
                q.set(i, j, v);
            }
        }
    }
    Ok(q)
}

/// Binary cell labels for one slot: 1 where at least one event was observed.
pub fn build_labels(grid: &EventGrid, t: usize) -> Result<Tensor> {
    if t >= grid.slots {
        return Err(Error::Data(format!("slot {t} outside 0..{}", grid.slots)));
    }
    let mut q = Tensor::zeros(&[grid.rows, grid.cols]);
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            if grid.cell_total(t, i, j) >= 1 {
                q.set(i, j, 1.0);
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg() -> DataConfig {
        let mut cfg = DataConfig::default();
        cfg.bbox = BoundingBox {
            lat_min: 0.0,
            lat_max: 1.0,
            lon_min: 0.0,
            lon_max: 1.0,
        };
        cfg.rows = 4;
        cfg.cols = 4;
        cfg.categories = vec!["THEFT".into(), "BATTERY".into()];
        cfg
    }

    #[test]
    fn parse_filters_by_reason() {
        let cfg = test_cfg();
        let csv_text = "\
Date,Latitude,Longitude,Primary Type
01/05/2015 10:30:00 AM,0.5,0.5,THEFT
01/05/2015 10:30:00 AM,,0.5,THEFT
01/05/2015 10:30:00 AM,0.5,0.5,HOMICIDE
01/05/2015 10:30:00 AM,2.5,0.5,THEFT
01/05/2014 10:30:00 AM,0.5,0.5,theft
";
        let (records, rejects) = parse_events(csv_text.as_bytes(), &cfg).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(rejects.bad_parse, 1);
        assert_eq!(rejects.non_whitelisted, 1);
        assert_eq!(rejects.out_of_bbox, 1);
        assert_eq!(rejects.out_of_period, 1);
    }

    #[test]
    fn missing_column_is_fatal() {
        let cfg = test_cfg();
        let err = parse_events("Date,Latitude,Primary Type\n".as_bytes(), &cfg).unwrap_err();
        assert!(err.to_string().contains("Longitude"));
    }

    #[test]
    fn category_match_is_case_insensitive() {
        let cfg = test_cfg();
        let csv_text = "Date,Latitude,Longitude,Primary Type\n2015-03-01,0.5,0.5,Theft\n";
        let (records, rejects) = parse_events(csv_text.as_bytes(), &cfg).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].category, 0);
        assert_eq!(rejects.total(), 0);
    }

    #[test]
    fn boundary_cells() {
        let grid = GridSpec::unit(4, 4);
        // south-west corner -> (0, 0)
        assert_eq!(grid.cell_of(0.0, 0.0), (0, 0));
        // exact north-east corner -> last cell
        assert_eq!(grid.cell_of(1.0, 1.0), (3, 3));
        // interior edge uses floor
        assert_eq!(grid.cell_of(0.5, 0.25), (2, 1));
    }

    #[test]
    fn rasterize_counts_and_conserves() {
        let cfg = test_cfg();
        let grid = GridSpec::unit(cfg.rows, cfg.cols);
        let ts = NaiveDate::from_ymd_opt(2015, 1, 2)
            .unwrap()
            .and_hms_opt(5, 0, 0)
            .unwrap();
        let mk = |lat: f64, lon: f64, category: usize| EventRecord {
            timestamp: ts,
            lat,
            lon,
            category,
        };
        let records = vec![mk(0.1, 0.1, 0), mk(0.1, 0.1, 0), mk(0.9, 0.9, 1)];
        let eg = rasterize(&records, &grid, &cfg).unwrap();
        // two same-category events in the same cell on the same day
        assert_eq!(eg.count(1, 0, 0, 0), 2);
        assert_eq!(eg.count(1, 3, 3, 1), 1);
        assert_eq!(eg.total(), 3);

        let q = aggregate_training_grid(&eg, 0..eg.slots).unwrap();
        let total: f64 = q.data().iter().sum();
        assert_eq!(total, 3.0);

        let labels = build_labels(&eg, 1).unwrap();
        assert_eq!(labels.at(0, 0), 1.0);
        assert_eq!(labels.at(3, 3), 1.0);
        let label_sum: f64 = labels.data().iter().sum();
        assert_eq!(label_sum, 2.0);
    }

    #[test]
    fn aggregate_two_slots_of_ones() {
        let mut eg = EventGrid::zeros(2, 2, 1, 2);
        for t in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    eg.add_event(t, i, j, 0);
                }
            }
        }
        let q = aggregate_training_grid(&eg, 0..2).unwrap();
        assert!(q.data().iter().all(|&v| v == 2.0));
        // single slot -> Q = E_1
        let q1 = aggregate_training_grid(&eg, 0..1).unwrap();
        assert!(q1.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn timestamp_formats() {
        assert!(parse_timestamp("03/14/2015 09:26:53 PM").is_some());
        assert!(parse_timestamp("2015-03-14T21:26:53").is_some());
        assert!(parse_timestamp("2015-03-14 21:26:53").is_some());
        assert!(parse_timestamp("2015-03-14").is_some());
        assert!(parse_timestamp("14/03/2015").is_none());
    }
}
