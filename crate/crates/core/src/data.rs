//! Domain types for visit series and ad schedules, CSV ingestion, and the
//! minute-indexing conventions shared by every stage.
//!
//! Minute `t` (1-based) covers the offset interval `(t − 1, t]` measured in
//! minutes from the series start; row `i` of the visits file is minute
//! `t = i + 1`. Ad end times are real minute offsets `s ∈ [0, n]`, so an ad
//! ending at an integer offset `s` first affects minute `s + 1`.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, FixedOffset, SecondsFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<FixedOffset>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitSeries {
    start: Timestamp,
    counts: Vec<u64>,
}

impl VisitSeries {
    pub fn new(start: Timestamp, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Invalid("visit series must contain at least one minute".into()));
        }
        Ok(Self { start, counts })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Timestamp labelling row `index` (0-based).
    pub fn row_timestamp(&self, index: usize) -> Timestamp {
        self.start + Duration::minutes(index as i64)
    }

    /// Calendar time at a real minute offset from the start, rounded to the
    /// nearest millisecond.
    pub fn offset_timestamp(&self, offset_minutes: f64) -> Timestamp {
        self.start + Duration::milliseconds((offset_minutes * 60_000.0).round() as i64)
    }
}

macro_rules! level_set {
    ($(#[$meta:meta])* $name:ident, [$($label:literal),+ $(,)?]) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(u8);

        impl $name {
            pub const LEVELS: &'static [&'static str] = &[$($label),+];

            pub fn from_index(index: usize) -> Option<Self> {
                (index < Self::LEVELS.len()).then(|| Self(index as u8))
            }

            pub fn index(self) -> usize {
                self.0 as usize
            }

            pub fn label(self) -> &'static str {
                Self::LEVELS[self.index()]
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let s = s.trim();
                Self::LEVELS
                    .iter()
                    .position(|l| l.eq_ignore_ascii_case(s))
                    .map(|i| Self(i as u8))
                    .ok_or_else(|| {
                        format!(
                            "unknown {} level {:?} (expected one of {})",
                            stringify!($name).to_lowercase(),
                            s,
                            Self::LEVELS.join(", ")
                        )
                    })
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.label())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

level_set!(
    /// Creative variant: one sponsoring spot plus eleven regular spots.
    Motive,
    ["sponsoring", "m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9", "m10", "m11"]
);

level_set!(
    /// Slot of the ad within its commercial break.
    Position,
    ["first", "second", "other", "penultimate", "last"]
);

level_set!(
    /// Broadcasting TV channel.
    Channel,
    ["ch1", "ch2", "ch3", "ch4", "ch5", "ch6", "ch7"]
);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdRecord {
    /// Ad end as a real minute offset from the series start.
    pub end_time: f64,
    pub motive: Motive,
    pub position: Position,
    pub channel: Channel,
}

/// Ads sorted ascending by end time. Ties are allowed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdSchedule {
    ads: Vec<AdRecord>,
}

impl AdSchedule {
    pub fn new(mut ads: Vec<AdRecord>) -> Self {
        ads.sort_by(|a, b| a.end_time.total_cmp(&b.end_time));
        Self { ads }
    }

    pub fn ads(&self) -> &[AdRecord] {
        &self.ads
    }

    pub fn len(&self) -> usize {
        self.ads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ads.is_empty()
    }

    pub fn end_times(&self) -> Vec<f64> {
        self.ads.iter().map(|a| a.end_time).collect()
    }

    /// Number of ads sharing their end time with the preceding ad.
    pub fn tie_count(&self) -> usize {
        self.ads.windows(2).filter(|w| w[0].end_time == w[1].end_time).count()
    }
}

fn parse_timestamp(raw: &str, row: usize) -> Result<Timestamp> {
    DateTime::parse_from_rfc3339(raw.trim()).map_err(|e| Error::Value {
        row,
        message: format!("invalid RFC 3339 timestamp {raw:?}: {e}"),
    })
}

fn format_timestamp(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Value {
            row: 0,
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Reads a `timestamp,visits` CSV with contiguous minute rows.
pub fn load_visits(path: impl AsRef<Path>) -> Result<VisitSeries> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    check_header(&mut reader, &["timestamp", "visits"])?;

    let mut start: Option<Timestamp> = None;
    let mut prev: Option<Timestamp> = None;
    let mut counts = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let ts = parse_timestamp(&record[0], row)?;
        let raw = record[1].trim();
        let count: i64 = raw.parse().map_err(|_| Error::Value {
            row,
            message: format!("visit count {raw:?} is not an integer"),
        })?;
        if count < 0 {
            return Err(Error::Value {
                row,
                message: format!("negative visit count {count}"),
            });
        }
        if let Some(p) = prev {
            let expected = p + Duration::minutes(1);
            if ts > expected {
                return Err(Error::Gap {
                    row,
                    missing: format_timestamp(&expected),
                });
            }
            if ts != expected {
                return Err(Error::Value {
                    row,
                    message: format!(
                        "timestamp {} does not follow {} by one minute",
                        format_timestamp(&ts),
                        format_timestamp(&p)
                    ),
                });
            }
        } else {
            start = Some(ts);
        }
        prev = Some(ts);
        counts.push(count as u64);
    }
    match start {
        Some(start) => VisitSeries::new(start, counts),
        None => Err(Error::Invalid(format!("{}: no visit rows", path.display()))),
    }
}

fn parse_level<T: FromStr<Err = String>>(raw: &str, row: usize) -> Result<T> {
    raw.parse().map_err(|message| Error::Value { row, message })
}

/// Reads an `end_time,motive,position,channel` CSV and converts end times to
/// minute offsets relative to `series`.
pub fn load_ads(path: impl AsRef<Path>, series: &VisitSeries) -> Result<AdSchedule> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    check_header(&mut reader, &["end_time", "motive", "position", "channel"])?;

    let n = series.len() as f64;
    let mut ads = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let ts = parse_timestamp(&record[0], row)?;
        let millis = (ts - series.start()).num_milliseconds();
        let end_time = millis as f64 / 60_000.0;
        if !(0.0..=n).contains(&end_time) {
            return Err(Error::Range {
                row,
                time: format_timestamp(&ts),
            });
        }
        ads.push(AdRecord {
            end_time,
            motive: parse_level(&record[1], row)?,
            position: parse_level(&record[2], row)?,
            channel: parse_level(&record[3], row)?,
        });
    }
    Ok(AdSchedule::new(ads))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_visits(path: impl AsRef<Path>, series: &VisitSeries) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(["timestamp", "visits"])?;
    for (i, c) in series.counts().iter().enumerate() {
        writer.write_record([format_timestamp(&series.row_timestamp(i)), c.to_string()])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ads(path: impl AsRef<Path>, series: &VisitSeries, ads: &AdSchedule) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(["end_time", "motive", "position", "channel"])?;
    for ad in ads.ads() {
        writer.write_record([
            format_timestamp(&series.offset_timestamp(ad.end_time)),
            ad.motive.to_string(),
            ad.position.to_string(),
            ad.channel.to_string(),
        ])?;
    }
    let mut inner = writer.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Minutes affected by an ad ending at offset `s` within `window` minutes:
/// the 1-based minutes `t` with `s < t ≤ s + window`.
pub fn affected_minutes(s: f64, window: f64) -> std::ops::RangeInclusive<i64> {
    let first = s.floor() as i64 + 1;
    let last = (s + window).floor() as i64;
    first..=last
}

/// `mask[t − 1]` is true when minute `t` falls within `window` minutes after
/// some ad end. Used to keep ad responses out of bandwidth selection.
pub fn exclusion_mask(series: &VisitSeries, ads: &AdSchedule, window: f64) -> Vec<bool> {
    let n = series.len() as i64;
    let mut mask = vec![false; series.len()];
    for ad in ads.ads() {
        let range = affected_minutes(ad.end_time, window.max(0.0));
        let first = (*range.start()).max(1);
        let last = (*range.end()).min(n);
        for t in first..=last {
            mask[(t - 1) as usize] = true;
        }
    }
    mask
}
