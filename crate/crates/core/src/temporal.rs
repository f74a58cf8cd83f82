//! Resolution of temporal expressions against a reference date: relative
//! days and weeks, explicit dates and ranges, clock windows, and vague
//! time-of-day terms looked up in a configurable table.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, Months, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::data::{ClockWindow, DateSelection};

/// Vague time-of-day phrases and the clock windows they stand for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VagueTermTable(pub BTreeMap<String, String>);

impl Default for VagueTermTable {
    fn default() -> Self {
        let rows = [
            ("overnight", "00:00-06:00"),
            ("dawn", "04:00-07:00"),
            ("early morning", "04:00-08:00"),
            ("morning", "06:00-12:00"),
            ("breakfast", "06:00-10:00"),
            ("lunch", "11:00-14:00"),
            ("after lunch", "12:00-15:00"),
            ("afternoon", "12:00-17:00"),
            ("dinner", "17:00-20:00"),
            ("after dinner", "18:00-21:00"),
            ("evening", "17:00-21:00"),
            ("bedtime", "21:00-24:00"),
            ("night", "21:00-24:00"),
        ];
        Self(rows.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

impl VagueTermTable {
    /// Longest matching term in `text` (already lowercase) with its window.
    pub fn find(&self, text: &str) -> Option<(String, ClockWindow)> {
        self.0
            .iter()
            .filter(|(term, _)| contains_word(text, term))
            .max_by_key(|(term, _)| term.len())
            .and_then(|(term, w)| ClockWindow::parse(w).ok().map(|w| (term.clone(), w)))
    }

    pub fn validate(&self) -> Result<(), crate::data::DataError> {
        self.0.values().try_for_each(|w| ClockWindow::parse(w).map(drop))
    }
}

pub(crate) fn contains_word(text: &str, word: &str) -> bool {
    text.match_indices(word).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResolvedTime {
    pub selection: Option<DateSelection>,
    /// Explicit clock window, or the vague term's window.
    pub window: Option<ClockWindow>,
    /// Vague term used for the window, when no explicit window was given.
    pub vague_term: Option<String>,
}

impl ResolvedTime {
    /// Selection with the window applied.
    pub fn windowed_selection(&self) -> Option<DateSelection> {
        self.selection.clone().map(|s| match self.window {
            Some(w) => s.with_window(w),
            None => s,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemporalResolver {
    pub vague: VagueTermTable,
}

impl TemporalResolver {
    pub fn new(vague: VagueTermTable) -> Self {
        Self { vague }
    }

    pub fn resolve(&self, text: &str, reference: NaiveDate) -> ResolvedTime {
        let lower = text.to_lowercase();
        let selection = explicit_dates(&lower)
            .or_else(|| month_day_dates(&lower, reference))
            .or_else(|| relative_dates(&lower, reference));
        let explicit_window = clock_window(&lower);
        let (window, vague_term) = match explicit_window {
            Some(w) => (Some(w), None),
            None => match self.vague.find(&lower) {
                Some((term, w)) => (Some(w), Some(term)),
                None => (None, None),
            },
        };
        ResolvedTime {
            selection,
            window,
            vague_term,
        }
    }
}

fn monday_of(d: NaiveDate) -> NaiveDate {
    d - Days::new(u64::from(d.weekday().num_days_from_monday()))
}

fn back(d: NaiveDate, n: u64) -> NaiveDate {
    d.checked_sub_days(Days::new(n)).unwrap_or(d)
}

fn relative_dates(text: &str, r: NaiveDate) -> Option<DateSelection> {
    let single = |d| Some(DateSelection::of_dates(vec![d]));
    if text.contains("day before yesterday") {
        return single(back(r, 2));
    }
    if contains_word(text, "yesterday") || text.contains("last night") {
        return single(back(r, 1));
    }
    if contains_word(text, "today") || text.contains("this morning") {
        return single(r);
    }
    let this_monday = monday_of(r);
    if text.contains("last weekend") || text.contains("past weekend") {
        let sat = back(this_monday, 2);
        return Some(DateSelection::range(sat, sat + Days::new(1)));
    }
    if text.contains("this weekend") {
        let sat = this_monday + Days::new(5);
        return Some(DateSelection::range(sat, (sat + Days::new(1)).min(r.max(sat))));
    }
    if let Some(n) = count_after(text, &["past", "last"], &["days", "day"]) {
        return Some(DateSelection::range(back(r, u64::from(n.max(1) - 1)), r));
    }
    if let Some(n) = count_after(text, &["past", "last"], &["weeks", "week"]) {
        return Some(DateSelection::range(back(r, u64::from(n.max(1)) * 7 - 1), r));
    }
    if text.contains("last week") || text.contains("previous week") {
        let start = back(this_monday, 7);
        return Some(DateSelection::range(start, start + Days::new(6)));
    }
    if text.contains("this week") {
        return Some(DateSelection::range(this_monday, r));
    }
    if text.contains("last month") || text.contains("previous month") {
        let first_this = r.with_day(1)?;
        let first_prev = first_this.checked_sub_months(Months::new(1))?;
        return Some(DateSelection::range(first_prev, back(first_this, 1)));
    }
    if text.contains("this month") {
        return Some(DateSelection::range(r.with_day(1)?, r));
    }
    for wd in WEEKDAYS {
        let name = weekday_name(wd);
        if contains_word(text, name) {
            // most recent such weekday strictly before the reference date
            let mut d = back(r, 1);
            while d.weekday() != wd {
                d = back(d, 1);
            }
            return single(d);
        }
    }
    None
}

const WEEKDAYS: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

fn weekday_name(wd: Weekday) -> &'static str {
    match wd {
        Weekday::Mon => "monday",
        Weekday::Tue => "tuesday",
        Weekday::Wed => "wednesday",
        Weekday::Thu => "thursday",
        Weekday::Fri => "friday",
        Weekday::Sat => "saturday",
        Weekday::Sun => "sunday",
    }
}

/// `"past 7 days"` → 7; also accepts spelled numbers up to fourteen.
fn count_after(text: &str, leads: &[&str], units: &[&str]) -> Option<u32> {
    let words: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    words.windows(3).find_map(|w| {
        if leads.contains(&w[0]) && units.contains(&w[2]) {
            parse_count(w[1])
        } else {
            None
        }
    })
}

fn parse_count(w: &str) -> Option<u32> {
    const NAMES: [&str; 15] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve", "thirteen", "fourteen",
    ];
    w.parse().ok().or_else(|| NAMES.iter().position(|n| *n == w).map(|i| i as u32))
}

/// All `YYYY-MM-DD` dates in order of appearance, with the byte offset after each.
fn iso_dates(text: &str) -> Vec<(NaiveDate, usize, usize)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 10 <= b.len() {
        let shape = b[i..i + 10]
            .iter()
            .enumerate()
            .all(|(k, c)| if k == 4 || k == 7 { *c == b'-' } else { c.is_ascii_digit() });
        let boundary = i == 0 || !b[i - 1].is_ascii_digit();
        if shape && boundary {
            if let Ok(d) = text[i..i + 10].parse() {
                out.push((d, i, i + 10));
                i += 10;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn explicit_dates(text: &str) -> Option<DateSelection> {
    let found = iso_dates(text);
    match found.as_slice() {
        [] => None,
        [(d, _, _)] => Some(DateSelection::of_dates(vec![*d])),
        [(a, _, a_end), (b, b_start, _)] => {
            let between = &text[*a_end..*b_start];
            let is_range = [" to ", "through", "until", "–", " - ", ", "]
                .iter()
                .any(|s| between.contains(s))
                && !between.contains("and");
            if is_range && a <= b {
                Some(DateSelection::range(*a, *b))
            } else {
                Some(DateSelection::of_dates(vec![*a, *b]))
            }
        }
        many => Some(DateSelection::of_dates(many.iter().map(|(d, _, _)| *d).collect())),
    }
}

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

fn month_index(word: &str) -> Option<u32> {
    if word.len() < 3 {
        return None;
    }
    MONTHS
        .iter()
        .position(|m| *m == word || (word.len() == 3 && m.starts_with(word)) || (word == "sept" && *m == "september"))
        .map(|i| i as u32 + 1)
}

fn day_number(word: &str) -> Option<u32> {
    let digits = word.trim_end_matches(|c: char| c.is_alphabetic());
    let suffix = &word[digits.len()..];
    if !["", "st", "nd", "rd", "th"].contains(&suffix) {
        return None;
    }
    digits.parse().ok().filter(|d| (1..=31).contains(d))
}

/// "January 6", "Jan 6th", "6 January"; the year defaults to the most recent
/// occurrence not after the reference date.
fn month_day_dates(text: &str, r: NaiveDate) -> Option<DateSelection> {
    let words: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let mut dates = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let Some(m) = month_index(w) else { continue };
        // "may" is also a verb; require an adjacent day number
        let day = words
            .get(i + 1)
            .and_then(|n| day_number(n))
            .or_else(|| i.checked_sub(1).and_then(|j| day_number(words[j])));
        if let Some(d) = day {
            let this_year = NaiveDate::from_ymd_opt(r.year(), m, d);
            let date = match this_year {
                Some(x) if x <= r => Some(x),
                _ => NaiveDate::from_ymd_opt(r.year() - 1, m, d),
            };
            dates.extend(date);
        }
    }
    dates.dedup();
    match dates.len() {
        0 => None,
        2 if (text.contains(" to ") || text.contains("through")) && dates[0] <= dates[1] => {
            Some(DateSelection::range(dates[0], dates[1]))
        }
        _ => Some(DateSelection::of_dates(dates)),
    }
}

/// Minutes after midnight for tokens like `6am`, `6 am`, `6:30pm`, `04:00`.
fn clock_tokens(text: &str) -> Vec<u32> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if !b[i].is_ascii_digit() || (i > 0 && (b[i - 1].is_ascii_digit() || b[i - 1] == b'-')) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        let hour_digits = j - i;
        let mut minutes = None;
        if hour_digits <= 2 && j + 2 < b.len() + 1 && b.get(j) == Some(&b':') {
            let m_end = j + 3;
            if m_end <= b.len() && b[j + 1..m_end].iter().all(u8::is_ascii_digit) {
                minutes = text[j + 1..m_end].parse::<u32>().ok();
                j = m_end;
            }
        }
        let mut k = j;
        while k < b.len() && b[k] == b' ' {
            k += 1;
        }
        let meridiem = if text[k..].starts_with("am") || text[k..].starts_with("a.m") {
            Some(false)
        } else if text[k..].starts_with("pm") || text[k..].starts_with("p.m") {
            Some(true)
        } else {
            None
        };
        let is_date_part = b.get(j) == Some(&b'-');
        if hour_digits <= 2 && !is_date_part && (minutes.is_some() || meridiem.is_some()) {
            if let Ok(h) = text[i..i + hour_digits].parse::<u32>() {
                let m = minutes.unwrap_or(0);
                let h = match meridiem {
                    Some(false) if (1..=12).contains(&h) => Some(h % 12),
                    Some(true) if (1..=12).contains(&h) => Some(h % 12 + 12),
                    None if h <= 24 => Some(h),
                    _ => None,
                };
                if let Some(h) = h.filter(|_| m < 60) {
                    out.push(h * 60 + m);
                }
            }
        }
        i = k.max(j).max(i + 1);
    }
    out
}

fn clock_window(text: &str) -> Option<ClockWindow> {
    let tokens = clock_tokens(text);
    match tokens.as_slice() {
        [a, b, ..] => ClockWindow::new(*a, *b).ok(),
        _ => None,
    }
}
