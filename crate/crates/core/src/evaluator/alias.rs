use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::Feature;

/// Surface names that mean the same feature, beyond the vocabulary's own
/// names and labels.
const EXTRA_ALIASES: [(&str, &[&str]); 9] = [
    ("mean_glucose", &["avg bg", "average bg", "mean bg", "mean blood glucose", "average blood glucose", "avg glucose", "average glucose", "mean"]),
    ("std_glucose", &["sd", "std", "std bg", "glucose sd", "standard deviation", "glucose standard deviation"]),
    ("cv_pct", &["cv", "gv", "glycemic variability", "coefficient of variation"]),
    ("tir_pct", &["tir", "time in range", "time_in_range", "percent in range"]),
    ("tbr_pct", &["tbr", "time below range", "time_below_range"]),
    ("tar_pct", &["tar", "time above range", "time_above_range"]),
    ("est_a1c_pct", &["a1c", "estimated a1c", "ea1c", "hba1c"]),
    ("weartime_pct", &["weartime", "wear time", "adherence", "cgm weartime", "wear_time_pct"]),
    ("hypo_events", &["hypo", "hypoglycemia events", "hypoglycemic events", "lows"]),
];

/// Aggregate prefixes and suffixes kept around the canonical feature core.
const PREFIXES: [&str; 3] = ["avg_", "min_", "max_"];
const SUFFIXES: [&str; 4] = ["_sufficient_weartime", "_group_a", "_group_b", "_all"];

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("alias `{alias}` already maps to `{existing}`, cannot map it to `{requested}`")]
pub struct AliasConflict {
    pub alias: String,
    pub existing: String,
    pub requested: String,
}

/// Maps surface feature names to canonical ones. Alias sets are disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AliasTable {
    map: BTreeMap<String, String>,
}

pub fn normalize(name: &str) -> String {
    name.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' || c == '.' { '_' } else { c })
        .collect::<String>()
        .split('_')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

impl Default for AliasTable {
    fn default() -> Self {
        let mut t = Self { map: BTreeMap::new() };
        for f in Feature::ALL {
            let c = f.as_str();
            for a in [c, f.label(), f.display_name()] {
                t.insert(a, c).expect("vocabulary names are disjoint");
            }
        }
        for (c, aliases) in EXTRA_ALIASES {
            t.extend(c, aliases.iter().copied()).expect("bundled aliases are disjoint");
        }
        t
    }
}

impl AliasTable {
    pub fn empty() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, alias: &str, canonical: &str) -> Result<(), AliasConflict> {
        let key = normalize(alias);
        match self.map.get(&key) {
            Some(existing) if existing != canonical => Err(AliasConflict {
                alias: alias.to_string(),
                existing: existing.clone(),
                requested: canonical.to_string(),
            }),
            _ => {
                self.map.insert(key, canonical.to_string());
                Ok(())
            }
        }
    }

    pub fn extend<'a>(&mut self, canonical: &str, aliases: impl IntoIterator<Item = &'a str>) -> Result<(), AliasConflict> {
        self.insert(canonical, canonical)?;
        aliases.into_iter().try_for_each(|a| self.insert(a, canonical))
    }

    /// Adds `{canonical: [aliases]}` entries from a JSON object.
    pub fn extend_from_json(&mut self, json: &str) -> Result<(), String> {
        let extra: BTreeMap<String, Vec<String>> = serde_json::from_str(json).map_err(|e| e.to_string())?;
        for (c, aliases) in &extra {
            self.extend(c, aliases.iter().map(String::as_str)).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<&str> {
        self.map.get(&normalize(name)).map(String::as_str)
    }

    /// Canonical name with any aggregate prefix/suffix preserved around the
    /// canonical core. Unknown names come back normalized, flagged `false`.
    pub fn canonical(&self, name: &str) -> (String, bool) {
        let n = normalize(name);
        if let Some(c) = self.map.get(&n) {
            return (c.clone(), true);
        }
        let prefix = PREFIXES.iter().find(|p| n.starts_with(*p)).copied().unwrap_or("");
        let rest = &n[prefix.len()..];
        let suffix = SUFFIXES.iter().find(|s| rest.ends_with(*s)).copied().unwrap_or("");
        let core = &rest[..rest.len() - suffix.len()];
        if prefix.is_empty() && suffix.is_empty() {
            return (n.clone(), false);
        }
        match self.map.get(core) {
            Some(c) => (format!("{prefix}{c}{suffix}"), true),
            None => (n.clone(), false),
        }
    }

    /// The canonical feature inside an aggregate name, if any.
    pub fn core(&self, canonical: &str) -> String {
        let prefix = PREFIXES.iter().find(|p| canonical.starts_with(*p)).copied().unwrap_or("");
        let rest = &canonical[prefix.len()..];
        let suffix = SUFFIXES.iter().find(|s| rest.ends_with(*s)).copied().unwrap_or("");
        let core = &rest[..rest.len() - suffix.len()];
        self.map.get(core).cloned().unwrap_or_else(|| core.to_string())
    }

    /// Weartime-like features treat -1 and 0 as the same "no data" reading.
    pub fn is_weartime_like(&self, canonical: &str) -> bool {
        let core = self.core(canonical);
        Feature::ALL
            .iter()
            .any(|f| f.is_weartime_like() && f.as_str() == core)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_names_keep_their_shape() {
        let t = AliasTable::default();
        assert_eq!(t.canonical("avg_TIR_all"), ("avg_tir_pct_all".into(), true));
        assert_eq!(t.canonical("avg_mean_glucose_sufficient_weartime").0, "avg_mean_glucose_sufficient_weartime");
        assert_eq!(t.canonical("avg bg"), ("mean_glucose".into(), true));
        assert_eq!(t.canonical("Mean Blood Glucose").0, "mean_glucose");
        assert_eq!(t.canonical("absolute_difference"), ("absolute_difference".into(), false));
        assert_eq!(t.core("avg_tir_pct_group_a"), "tir_pct");
    }

    #[test]
    fn conflicts_rejected() {
        let mut t = AliasTable::default();
        assert!(t.insert("avg bg", "max_glucose").is_err());
        assert!(t.insert("avg bg", "mean_glucose").is_ok());
        t.extend_from_json(r#"{"mean_glucose": ["typical sugar"]}"#).unwrap();
        assert_eq!(t.lookup("typical sugar"), Some("mean_glucose"));
    }

    #[test]
    fn weartime_class() {
        let t = AliasTable::default();
        assert!(t.is_weartime_like("weartime_pct"));
        assert!(t.is_weartime_like("avg_weartime_pct_all"));
        assert!(!t.is_weartime_like("hypo_events"));
        assert!(!t.is_weartime_like("tir_pct"));
    }
}
