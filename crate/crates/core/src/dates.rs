//! Calendar month arithmetic used throughout the pipeline.
//!
//! Rolling windows, reported-count series and synthetic scenarios are all
//! keyed by calendar month; this module provides the `Month` key plus the
//! day-level conversions the rest of the crate needs.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MonthError {
    #[error("month out of range: {0} (expected 1-12)")]
    OutOfRange(u32),
    #[error("malformed month {0:?} (expected YYYY-MM)")]
    Malformed(String),
}

/// A calendar month, ordered chronologically. Formats as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    year: i32,
    month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self, MonthError> {
        if !(1..=12).contains(&month) {
            return Err(MonthError::OutOfRange(month));
        }
        Ok(Self { year, month })
    }

    /// The month containing `date`.
    pub fn containing(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn first_day(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month by construction")
    }

    pub fn last_day(&self) -> NaiveDate {
        self.plus_months(1)
            .first_day()
            .pred_opt()
            .expect("in-range date")
    }

    /// The 15th, used as the mid-month reference day.
    pub fn mid_day(&self) -> NaiveDate {
        self.first_day() + Days::new(14)
    }

    pub fn days_in_month(&self) -> u32 {
        (self.last_day() - self.first_day()).num_days() as u32 + 1
    }

    pub fn plus_months(&self, n: i32) -> Self {
        let zero_based = self.year * 12 + (self.month as i32 - 1) + n;
        Self {
            year: zero_based.div_euclid(12),
            month: zero_based.rem_euclid(12) as u32 + 1,
        }
    }

    /// Signed number of months from `earlier` to `self`.
    pub fn months_since(&self, earlier: Month) -> i32 {
        (self.year - earlier.year) * 12 + self.month as i32 - earlier.month as i32
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = MonthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| MonthError::Malformed(s.to_string()))?;
        let year: i32 = y
            .parse()
            .map_err(|_| MonthError::Malformed(s.to_string()))?;
        let month: u32 = m
            .parse()
            .map_err(|_| MonthError::Malformed(s.to_string()))?;
        Month::new(year, month).map_err(|_| MonthError::Malformed(s.to_string()))
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whole days from `from` to `to`; negative if `to` precedes `from`.
pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_roundtrip_and_order() {
        let m: Month = "2014-06".parse().unwrap();
        assert_eq!(m.to_string(), "2014-06");
        assert!(m < "2014-07".parse().unwrap());
        assert!(m > "2013-12".parse().unwrap());
    }

    #[test]
    fn month_arithmetic_crosses_year_boundaries() {
        let m = Month::new(2014, 6).unwrap();
        assert_eq!(m.plus_months(7), Month::new(2015, 1).unwrap());
        assert_eq!(m.plus_months(-6), Month::new(2013, 12).unwrap());
        assert_eq!(m.plus_months(-23), Month::new(2012, 7).unwrap());
        assert_eq!(m.months_since(Month::new(2012, 7).unwrap()), 23);
    }

    #[test]
    fn month_day_boundaries() {
        let feb = Month::new(2016, 2).unwrap();
        assert_eq!(
            feb.first_day(),
            NaiveDate::from_ymd_opt(2016, 2, 1).unwrap()
        );
        assert_eq!(
            feb.last_day(),
            NaiveDate::from_ymd_opt(2016, 2, 29).unwrap()
        );
        assert_eq!(feb.days_in_month(), 29);
        assert_eq!(feb.mid_day(), NaiveDate::from_ymd_opt(2016, 2, 15).unwrap());
    }

    #[test]
    fn malformed_months_rejected() {
        assert!("2014".parse::<Month>().is_err());
        assert!("2014-13".parse::<Month>().is_err());
        assert!("junk-01".parse::<Month>().is_err());
    }
}
