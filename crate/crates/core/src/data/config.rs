//! Key=value data configuration: bounding box, grid shape, time resolution,
//! category whitelist, holidays, and input column mapping.

use chrono::NaiveDate;

use crate::data::events::BoundingBox;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ColumnMap {
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub category: String,
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub bbox: BoundingBox,
    pub rows: usize,
    pub cols: usize,
    pub slot_hours: u32,
    /// Whitelisted categories; position defines the category index.
    pub categories: Vec<String>,
    /// Explicit holiday dates; empty means computed US federal holidays.
    pub holidays: Vec<NaiveDate>,
    pub columns: ColumnMap,
    pub start_date: NaiveDate,
    /// Exclusive end of the study period.
    pub end_date: NaiveDate,
    pub delimiter: u8,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            // The published coordinate ranges put 41.60..42.05 under
            // longitude, but geography forces these to be latitudes.
            bbox: BoundingBox {
                lat_min: 41.60,
                lat_max: 42.05,
                lon_min: -87.9,
                lon_max: -87.5,
            },
            rows: 50,
            cols: 33,
            slot_hours: 24,
            categories: [
                "THEFT",
                "BURGLARY",
                "ASSAULT",
                "DECEPTIVE PRACTICE",
                "CRIMINAL DAMAGE",
                "NARCOTICS",
                "BATTERY",
                "ROBBERY",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            holidays: Vec::new(),
            columns: ColumnMap {
                timestamp: "Date".into(),
                lat: "Latitude".into(),
                lon: "Longitude".into(),
                category: "Primary Type".into(),
            },
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            delimiter: b',',
        }
    }
}

impl DataConfig {
    pub fn n_slots(&self) -> Result<usize> {
        if self.end_date <= self.start_date {
            return Err(Error::Config("end_date must be after start_date".into()));
        }
        if self.slot_hours == 0 || 24 % self.slot_hours != 0 {
            return Err(Error::Config(format!(
                "slot_hours must divide 24, got {}",
                self.slot_hours
            )));
        }
        let days = (self.end_date - self.start_date).num_days() as usize;
        Ok(days * (24 / self.slot_hours as usize))
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("rows and cols must be positive".into()));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("category whitelist is empty".into()));
        }
        self.n_slots()?;
        Ok(())
    }

    /// Parse the key=value format. Lines starting with `#` and blank lines
    /// are ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = DataConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {} value `{}`", lineno + 1, what, value))
            };
            match key {
                "lat_min" => cfg.bbox.lat_min = value.parse().map_err(|_| bad("float"))?,
                "lat_max" => cfg.bbox.lat_max = value.parse().map_err(|_| bad("float"))?,
                "lon_min" => cfg.bbox.lon_min = value.parse().map_err(|_| bad("float"))?,
                "lon_max" => cfg.bbox.lon_max = value.parse().map_err(|_| bad("float"))?,
                "rows" => cfg.rows = value.parse().map_err(|_| bad("integer"))?,
                "cols" => cfg.cols = value.parse().map_err(|_| bad("integer"))?,
                "slot_hours" => cfg.slot_hours = value.parse().map_err(|_| bad("integer"))?,
                "categories" => {
                    cfg.categories = value
                        .split(',')
                        .map(|s| s.trim().to_uppercase())
                        .filter(|s| !s.is_empty())
                        .collect();
                }
                "holidays" => {
                    cfg.holidays = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad("date"))
                        })
                        .collect::<Result<_>>()?;
                }
                "col_timestamp" => cfg.columns.timestamp = value.to_string(),
                "col_lat" => cfg.columns.lat = value.to_string(),
                "col_lon" => cfg.columns.lon = value.to_string(),
                "col_category" => cfg.columns.category = value.to_string(),
                "start_date" => {
                    cfg.start_date =
                        NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| bad("date"))?
                }
                "end_date" => {
                    cfg.end_date =
                        NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| bad("date"))?
                }
                "delimiter" => {
                    let bytes = value.as_bytes();
                    if bytes.len() != 1 {
                        return Err(bad("single-character delimiter"));
                    }
                    cfg.delimiter = bytes[0];
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = DataConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_slots().unwrap(), 365);
        assert_eq!(cfg.categories.len(), 8);
    }

    #[test]
    fn parse_overrides_and_rejects_unknown_keys() {
        let cfg = DataConfig::parse(
            "# comment\nrows = 10\ncols=20\ncategories = a, b\nstart_date = 2017-01-01\nend_date = 2018-01-01\n",
        )
        .unwrap();
        assert_eq!(cfg.rows, 10);
        assert_eq!(cfg.cols, 20);
        assert_eq!(cfg.categories, vec!["A".to_string(), "B".to_string()]);
        assert_eq!(cfg.n_slots().unwrap(), 365);

        assert!(DataConfig::parse("bogus = 1\n").is_err());
        assert!(DataConfig::parse("rows\n").is_err());
    }
}
