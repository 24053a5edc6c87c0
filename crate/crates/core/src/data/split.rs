use std::ops::Range;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::RawPanel;
use crate::error::{Error, Result};

/// Inclusive calendar-day range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: &NaiveDateTime) -> bool {
        let d = t.date();
        self.start <= d && d <= self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub val: DateRange,
    pub test: DateRange,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl SplitSpec {
    pub fn bihar() -> Self {
        Self {
            train: DateRange::new(ymd(2023, 5, 1), ymd(2023, 12, 31)),
            val: DateRange::new(ymd(2024, 1, 1), ymd(2024, 2, 29)),
            test: DateRange::new(ymd(2024, 3, 1), ymd(2024, 4, 30)),
        }
    }

    pub fn china() -> Self {
        Self {
            train: DateRange::new(ymd(2015, 1, 1), ymd(2016, 12, 31)),
            val: DateRange::new(ymd(2017, 1, 1), ymd(2017, 12, 31)),
            test: DateRange::new(ymd(2018, 1, 1), ymd(2018, 12, 31)),
        }
    }

    pub fn ranges(&self) -> [(&'static str, DateRange); 3] {
        [("train", self.train), ("val", self.val), ("test", self.test)]
    }

    /// Each range non-empty, and train < val < test without overlap.
    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.ranges() {
            if r.end < r.start {
                return Err(Error::Split(format!("{name} range {} .. {} is empty", r.start, r.end)));
            }
        }
        if self.train.end >= self.val.start {
            return Err(Error::Split(format!(
                "train range ends {} but validation starts {}; ranges must be ordered and disjoint",
                self.train.end, self.val.start
            )));
        }
        if self.val.end >= self.test.start {
            return Err(Error::Split(format!(
                "validation range ends {} but test starts {}; ranges must be ordered and disjoint",
                self.val.end, self.test.start
            )));
        }
        Ok(())
    }
}

/// Step-index ranges of each split plus the count of rows outside all three.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub unassigned: usize,
}

impl SplitIndices {
    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

fn range_of(timestamps: &[NaiveDateTime], r: &DateRange) -> Range<usize> {
    let a = timestamps.partition_point(|t| t.date() < r.start);
    let b = timestamps.partition_point(|t| t.date() <= r.end);
    a..b.max(a)
}

/// Assigns timestamps (sorted) to splits.
pub fn split_indices(timestamps: &[NaiveDateTime], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let train = range_of(timestamps, &spec.train);
    let val = range_of(timestamps, &spec.val);
    let test = range_of(timestamps, &spec.test);
    for (name, r) in [("train", &train), ("val", &val), ("test", &test)] {
        if r.is_empty() {
            return Err(Error::Split(format!("{name} range contains no timestamps of the dataset")));
        }
    }
    let unassigned = timestamps.len() - train.len() - val.len() - test.len();
    Ok(SplitIndices {
        train,
        val,
        test,
        unassigned,
    })
}

/// Splits a panel into its train, validation and test parts.
pub fn split_temporal(panel: &RawPanel, spec: &SplitSpec) -> Result<([RawPanel; 3], SplitIndices)> {
    let idx = split_indices(&panel.timestamps, spec)?;
    if idx.unassigned > 0 {
        log::warn!("{} timesteps fall outside every split range and are ignored", idx.unassigned);
    }
    Ok((
        [
            panel.slice_time(idx.train.clone()),
            panel.slice_time(idx.val.clone()),
            panel.slice_time(idx.test.clone()),
        ],
        idx,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hourly(start: NaiveDate, days: i64) -> Vec<NaiveDateTime> {
        let t0 = start.and_hms_opt(0, 0, 0).unwrap();
        (0..days * 24).map(|h| t0 + chrono::Duration::hours(h)).collect()
    }

    #[test]
    fn bihar_boundaries() {
        let ts = hourly(ymd(2023, 5, 1), 366);
        let idx = split_indices(&ts, &SplitSpec::bihar()).unwrap();
        assert_eq!(ts[idx.val.start].date(), ymd(2024, 1, 1));
        assert_eq!(ts[idx.test.start].date(), ymd(2024, 3, 1));
        assert_eq!(idx.unassigned, 0);
        assert_eq!(idx.counts().iter().sum::<usize>(), ts.len());
    }

    #[test]
    fn empty_validation_is_an_error() {
        let mut spec = SplitSpec::bihar();
        spec.val = DateRange::new(ymd(2024, 1, 2), ymd(2024, 1, 1));
        assert!(matches!(spec.validate(), Err(Error::Split(_))));
    }

    #[test]
    fn overlap_is_an_error() {
        let mut spec = SplitSpec::bihar();
        spec.val.start = ymd(2023, 12, 31);
        assert!(spec.validate().is_err());
        let mut spec = SplitSpec::bihar();
        spec.test.start = spec.val.end;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sixty_twenty_twenty_days() {
        let start = ymd(2021, 1, 1);
        let ts = hourly(start, 100);
        let day = |n: i64| start + chrono::Duration::days(n);
        let spec = SplitSpec {
            train: DateRange::new(day(0), day(59)),
            val: DateRange::new(day(60), day(79)),
            test: DateRange::new(day(80), day(99)),
        };
        let idx = split_indices(&ts, &spec).unwrap();
        assert_eq!(idx.counts(), [60 * 24, 20 * 24, 20 * 24]);
        assert_eq!(spec.train.days(), 60);
    }
}
