use std::fmt;

use chrono::{Days, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use super::DataError;

const MINUTES_PER_DAY: u32 = 1440;
/// Longest contiguous range a selection may expand to.
const MAX_RANGE_DAYS: u64 = 3660;

/// Half-open datetime window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl TimeWindow {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Result<Self, DataError> {
        if start >= end {
            return Err(DataError::InvalidSelection(format!(
                "window start {start} is not before end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: NaiveDateTime) -> bool {
        self.start <= t && t < self.end
    }
}

/// Half-open intraday clock window in minutes after midnight, `[start, end)`.
/// `end` may be 1440 (24:00). Windows wrapping midnight are not supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClockWindow {
    start_min: u32,
    end_min: u32,
}

impl ClockWindow {
    pub fn new(start_min: u32, end_min: u32) -> Result<Self, DataError> {
        if start_min >= end_min || end_min > MINUTES_PER_DAY {
            return Err(DataError::InvalidSelection(format!(
                "clock window {start_min}..{end_min} minutes is empty or exceeds a day"
            )));
        }
        Ok(Self { start_min, end_min })
    }

    pub fn full_day() -> Self {
        Self {
            start_min: 0,
            end_min: MINUTES_PER_DAY,
        }
    }

    /// Parses `HH:MM-HH:MM`, `HH:MM to HH:MM`, or `6AM-12PM` style windows.
    pub fn parse(s: &str) -> Result<Self, DataError> {
        let s = s.trim();
        let (a, b) = s
            .split_once(" to ")
            .or_else(|| s.split_once('-'))
            .or_else(|| s.split_once('–'))
            .ok_or_else(|| DataError::InvalidTime(s.to_string()))?;
        Self::new(parse_clock(a)?, parse_clock(b)?)
    }

    pub fn start_minute(&self) -> u32 {
        self.start_min
    }

    pub fn end_minute(&self) -> u32 {
        self.end_min
    }

    pub fn minutes(&self) -> u32 {
        self.end_min - self.start_min
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        let secs = t.num_seconds_from_midnight();
        secs >= self.start_min * 60 && secs < self.end_min * 60
    }

    pub fn start_label(&self) -> String {
        fmt_minute(self.start_min)
    }

    pub fn end_label(&self) -> String {
        fmt_minute(self.end_min)
    }
}

impl fmt::Display for ClockWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", fmt_minute(self.start_min), fmt_minute(self.end_min))
    }
}

pub fn fmt_minute(m: u32) -> String {
    format!("{:02}:{:02}", m / 60, m % 60)
}

/// Parses `HH:MM`, `H`, `6AM`, `12PM`, `6:30 pm` into minutes after midnight.
fn parse_clock(s: &str) -> Result<u32, DataError> {
    let raw = s.trim().to_ascii_lowercase();
    let bad = || DataError::InvalidTime(s.trim().to_string());
    let (body, meridiem) = if let Some(b) = raw.strip_suffix("am") {
        (b.trim(), Some(false))
    } else if let Some(b) = raw.strip_suffix("pm") {
        (b.trim(), Some(true))
    } else {
        (raw.as_str(), None)
    };
    let (h, m) = match body.split_once(':') {
        Some((h, m)) => (h.parse::<u32>().map_err(|_| bad())?, m.parse::<u32>().map_err(|_| bad())?),
        None => (body.parse::<u32>().map_err(|_| bad())?, 0),
    };
    if m >= 60 {
        return Err(bad());
    }
    let h = match meridiem {
        None => h,
        Some(_) if h == 0 || h > 12 => return Err(bad()),
        Some(false) => h % 12,
        Some(true) => h % 12 + 12,
    };
    let total = h * 60 + m;
    if total > MINUTES_PER_DAY {
        return Err(bad());
    }
    Ok(total)
}

/// A labelled set of dates, used for group comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateGroup {
    pub label: String,
    pub dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateSet {
    Dates(Vec<NaiveDate>),
    /// Inclusive on both ends.
    Range { start: NaiveDate, end: NaiveDate },
    Groups(Vec<DateGroup>),
}

/// Which dates, and optionally which clock window on each date, to analyze.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSelection {
    pub set: DateSet,
    pub window: Option<ClockWindow>,
}

impl DateSelection {
    pub fn of_dates(dates: Vec<NaiveDate>) -> Self {
        Self {
            set: DateSet::Dates(dates),
            window: None,
        }
    }

    pub fn range(start: NaiveDate, end: NaiveDate) -> Self {
        Self {
            set: DateSet::Range { start, end },
            window: None,
        }
    }

    pub fn groups(groups: Vec<DateGroup>) -> Self {
        Self {
            set: DateSet::Groups(groups),
            window: None,
        }
    }

    pub fn with_window(mut self, window: ClockWindow) -> Self {
        self.window = Some(window);
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        match &self.set {
            DateSet::Dates(d) if d.is_empty() => {
                Err(DataError::InvalidSelection("empty date list".into()))
            }
            DateSet::Dates(_) => Ok(()),
            DateSet::Range { start, end } => {
                if start > end {
                    return Err(DataError::InvalidSelection(format!(
                        "range start {start} after end {end}"
                    )));
                }
                if (*end - *start).num_days() as u64 >= MAX_RANGE_DAYS {
                    return Err(DataError::InvalidSelection("range too long".into()));
                }
                Ok(())
            }
            DateSet::Groups(groups) => {
                if groups.is_empty() {
                    return Err(DataError::InvalidSelection("no groups".into()));
                }
                let mut seen = std::collections::BTreeSet::new();
                for g in groups {
                    if g.dates.is_empty() {
                        return Err(DataError::InvalidSelection(format!(
                            "group `{}` is empty",
                            g.label
                        )));
                    }
                    for d in &g.dates {
                        if !seen.insert(*d) {
                            return Err(DataError::InvalidSelection(format!(
                                "date {d} appears in more than one group"
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// All selected dates, sorted and deduplicated.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut out = match &self.set {
            DateSet::Dates(d) => d.clone(),
            DateSet::Range { start, end } => expand_range(*start, *end),
            DateSet::Groups(g) => g.iter().flat_map(|g| g.dates.iter().copied()).collect(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Minutes covered per date: the clock window, or a full day.
    pub fn window_minutes(&self) -> u32 {
        self.window.map_or(MINUTES_PER_DAY, |w| w.minutes())
    }

    /// Key for the whole selection, in the payload date-key vocabulary.
    pub fn key(&self) -> String {
        match &self.set {
            DateSet::Groups(groups) => groups
                .iter()
                .map(|g| dates_key(&sorted(&g.dates), self.window))
                .collect::<Vec<_>>()
                .join(" vs "),
            _ => dates_key(&self.dates(), self.window),
        }
    }

    /// Key for a single date under this selection's clock window.
    pub fn date_key(&self, date: NaiveDate) -> String {
        dates_key(&[date], self.window)
    }
}

fn sorted(d: &[NaiveDate]) -> Vec<NaiveDate> {
    let mut v = d.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

pub(crate) fn expand_range(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut d = start;
    while d <= end {
        out.push(d);
        match d.checked_add_days(Days::new(1)) {
            Some(n) => d = n,
            None => break,
        }
    }
    out
}

/// Formats a sorted, deduplicated date set as a payload key:
/// a single date `2024-01-06`, a contiguous range `(2024-01-01, 2024-01-07)`,
/// or a list literal `['2024-01-01', '2024-01-03']`.
pub fn dates_key(dates: &[NaiveDate], window: Option<ClockWindow>) -> String {
    match (dates, window) {
        ([], _) => "[]".to_string(),
        ([d], None) => d.to_string(),
        ([d], Some(w)) => format!("({d} {}, {d} {})", w.start_label(), w.end_label()),
        (many, w) => {
            let contiguous = many.windows(2).all(|p| (p[1] - p[0]).num_days() == 1);
            let base = if contiguous {
                format!("({}, {})", many[0], many[many.len() - 1])
            } else {
                let items: Vec<String> = many.iter().map(|d| format!("'{d}'")).collect();
                format!("[{}]", items.join(", "))
            };
            match w {
                Some(w) => format!("{base} {w}"),
                None => base,
            }
        }
    }
}
