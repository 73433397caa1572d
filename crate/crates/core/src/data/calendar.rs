//! Calendar feature vectors: weekend/holiday indicators plus smooth
//! day-of-week and day-of-year encodings, all mapped into [0, 1].

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use chrono::{Datelike, NaiveDate, Weekday};

/// Holiday lookup. An empty explicit list falls back to the computed US
/// federal holidays of the date's year.
#[derive(Clone, Debug, Default)]
pub struct HolidayCalendar {
    explicit: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        HolidayCalendar {
            explicit: dates.into_iter().collect(),
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        if self.explicit.is_empty() {
            us_federal_holidays(date.year()).contains(&date)
        } else {
            self.explicit.contains(&date)
        }
    }
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, nth: u32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(year, month, 1).unwrap();
    let offset = (7 + weekday.num_days_from_monday() - first.weekday().num_days_from_monday()) % 7;
    first + chrono::Days::new((offset + 7 * (nth - 1)) as u64)
}

fn last_weekday(year: i32, month: u32, weekday: Weekday) -> NaiveDate {
    let last = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap()
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1).unwrap()
    }
    .pred_opt()
    .unwrap();
    let offset = (7 + last.weekday().num_days_from_monday() - weekday.num_days_from_monday()) % 7;
    last - chrono::Days::new(offset as u64)
}

/// The ten classic US federal holidays, on their actual dates.
pub fn us_federal_holidays(year: i32) -> BTreeSet<NaiveDate> {
    let mut set = BTreeSet::new();
    set.insert(NaiveDate::from_ymd_opt(year, 1, 1).unwrap());
    set.insert(nth_weekday(year, 1, Weekday::Mon, 3)); // MLK day
    set.insert(nth_weekday(year, 2, Weekday::Mon, 3)); // Washington's birthday
    set.insert(last_weekday(year, 5, Weekday::Mon)); // Memorial day
    set.insert(NaiveDate::from_ymd_opt(year, 7, 4).unwrap());
    set.insert(nth_weekday(year, 9, Weekday::Mon, 1)); // Labor day
    set.insert(nth_weekday(year, 10, Weekday::Mon, 2)); // Columbus day
    set.insert(NaiveDate::from_ymd_opt(year, 11, 11).unwrap()); // Veterans day
    set.insert(nth_weekday(year, 11, Weekday::Thu, 4)); // Thanksgiving
    set.insert(NaiveDate::from_ymd_opt(year, 12, 25).unwrap());
    set
}

/// Six features: (is_weekend, is_holiday, sin/cos day-of-week, sin/cos
/// day-of-year), trigonometric entries remapped via (x+1)/2.
pub fn calendar_features(date: NaiveDate, holidays: &HolidayCalendar) -> [f64; 6] {
    let weekday = date.weekday();
    let is_weekend = matches!(weekday, Weekday::Sat | Weekday::Sun);
    let is_holiday = holidays.contains(date);

    let dow_angle = TAU * weekday.num_days_from_monday() as f64 / 7.0;
    let days_in_year = if date.leap_year() { 366.0 } else { 365.0 };
    let doy_angle = TAU * (date.ordinal0() as f64) / days_in_year;

    [
        if is_weekend { 1.0 } else { 0.0 },
        if is_holiday { 1.0 } else { 0.0 },
        (dow_angle.sin() + 1.0) / 2.0,
        (dow_angle.cos() + 1.0) / 2.0,
        (doy_angle.sin() + 1.0) / 2.0,
        (doy_angle.cos() + 1.0) / 2.0,
    ]
}
