//! Calendar quarters in China Standard Time (UTC+8), the temporal unit of every analysis.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, TimeZone};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const CST_OFFSET_SECS: i32 = 8 * 3600;

fn cst() -> FixedOffset {
    FixedOffset::east_opt(CST_OFFSET_SECS).expect("valid offset")
}

/// A calendar quarter, displayed as `2020Q1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuarterId {
    year: i32,
    quarter: u8,
}

impl QuarterId {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) || !(1970..=9999).contains(&year) {
            return Err(Error::InvalidQuarter(format!("{year}Q{quarter}")));
        }
        Ok(Self { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    pub fn next(self) -> Self {
        if self.quarter == 4 {
            Self {
                year: self.year + 1,
                quarter: 1,
            }
        } else {
            Self {
                year: self.year,
                quarter: self.quarter + 1,
            }
        }
    }

    /// First second of the quarter, as epoch seconds.
    pub fn start_timestamp(self) -> i64 {
        let month = u32::from(self.quarter - 1) * 3 + 1;
        let date = NaiveDate::from_ymd_opt(self.year, month, 1).expect("valid quarter start");
        cst()
            .from_local_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
            .single()
            .expect("fixed offset is unambiguous")
            .timestamp()
    }

    /// One past the last second of the quarter.
    pub fn end_timestamp(self) -> i64 {
        self.next().start_timestamp()
    }
}

impl fmt::Display for QuarterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for QuarterId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidQuarter(s.to_string());
        let (year, quarter) = s.trim().split_once(['Q', 'q']).ok_or_else(bad)?;
        let year: i32 = year.parse().map_err(|_| bad())?;
        let quarter: u8 = quarter.parse().map_err(|_| bad())?;
        QuarterId::new(year, quarter).map_err(|_| bad())
    }
}

impl Serialize for QuarterId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuarterId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn to_cst(timestamp: i64) -> Result<DateTime<FixedOffset>> {
    if timestamp < 0 {
        return Err(Error::PreEpoch(timestamp));
    }
    DateTime::from_timestamp(timestamp, 0)
        .map(|utc| utc.with_timezone(&cst()))
        .ok_or(Error::PreEpoch(timestamp))
}

/// Calendar quarter of an epoch timestamp in UTC+8.
pub fn quarter_of(timestamp: i64) -> Result<QuarterId> {
    let local = to_cst(timestamp)?;
    QuarterId::new(local.year(), ((local.month0() / 3) + 1) as u8)
}

/// Day index (days since 1970-01-01) of an epoch timestamp in UTC+8.
pub fn cst_day(timestamp: i64) -> i64 {
    (timestamp + i64::from(CST_OFFSET_SECS)).div_euclid(86_400)
}
