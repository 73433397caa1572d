//! Chronological train/validation/test splits.

use std::ops::Range;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Slot ranges of the three splits; always disjoint and ordered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn new(train: Range<usize>, val: Range<usize>, test: Range<usize>) -> Result<Self> {
        if train.end > val.start || val.end > test.start || train.is_empty() || val.is_empty() {
            return Err(Error::Data(format!(
                "splits must be chronological and non-empty: {train:?} / {val:?} / {test:?}"
            )));
        }
        Ok(SplitRanges { train, val, test })
    }
}

/// Split one calendar year of slots into train (January-October),
/// validation (November), and test (December).
pub fn split_chronological(
    n_slots: usize,
    start_date: NaiveDate,
    slot_hours: u32,
    year: i32,
) -> Result<SplitRanges> {
    if slot_hours == 0 || 24 % slot_hours != 0 {
        return Err(Error::Data(format!("slot_hours must divide 24, got {slot_hours}")));
    }
    let slots_per_day = (24 / slot_hours) as usize;
    let slot_of = |date: NaiveDate| -> Result<usize> {
        let days = (date - start_date).num_days();
        if days < 0 {
            return Err(Error::Data(format!(
                "dataset starting {start_date} does not reach back to {date}"
            )));
        }
        Ok(days as usize * slots_per_day)
    };

    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
    let nov1 = NaiveDate::from_ymd_opt(year, 11, 1).unwrap();
    let dec1 = NaiveDate::from_ymd_opt(year, 12, 1).unwrap();
    let next_jan1 = NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap();

    let train_start = slot_of(jan1)?;
    let val_start = slot_of(nov1)?;
    let test_start = slot_of(dec1)?;
    let end = slot_of(next_jan1)?;
    if end > n_slots {
        return Err(Error::Data(format!(
            "incomplete year {year}: slots {n_slots}..{end} missing \
             (need {end} slots from {start_date} to cover through {next_jan1})"
        )));
    }
    SplitRanges::new(train_start..val_start, val_start..test_start, test_start..end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_2015_daily() {
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let s = split_chronological(365, start, 24, 2015).unwrap();
        // Jan..Oct of a non-leap year is 304 days
        assert_eq!(s.train, 0..304);
        assert_eq!(s.val, 304..334);
        assert_eq!(s.test, 334..365);
        // union covers the year, pairwise disjoint by construction
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 365);
    }

    #[test]
    fn incomplete_year_lists_missing_slots() {
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let err = split_chronological(300, start, 24, 2015).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("incomplete year"), "{msg}");
        assert!(msg.contains("300..365"), "{msg}");
    }

    #[test]
    fn leap_year_and_offset_start() {
        let start = NaiveDate::from_ymd_opt(2015, 12, 1).unwrap();
        // dataset runs Dec 2015 through Dec 2016; the 2016 year fits
        let s = split_chronological(31 + 366, start, 24, 2016).unwrap();
        assert_eq!(s.train.start, 31);
        assert_eq!(s.test.end, 31 + 366);
    }
}
