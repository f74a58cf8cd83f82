//! The fourteen CGM tools.

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::aggregation::{self, Condition, ExcursionParams, ExtremumMode};
use crate::data::{self, dates_key, DateGroup, DateSelection, GlucoseSeries};
use crate::metrics::{self, DailyFeatureRecord, Feature, RangeThresholds, DEFAULT_EVENT_MIN_MINUTES};
use crate::scalar::SENTINEL;

use super::{
    Args, Artifact, ParamKind, ParamSpec, Payload, SandboxConfig, SandboxError, ToolContext, ToolError,
    ToolOutput, ToolRegistry, ToolSpec,
};

pub const CGM_TOOL_NAMES: [&str; 14] = [
    "filter_cgm_csv",
    "estimate_cgm_sampling_rate",
    "find_adherence",
    "find_BG_time_range",
    "find_avg_std_gv_BG",
    "find_BG_min_max",
    "find_hypo_hyper_events",
    "extract_features_json",
    "get_average",
    "count_satisfied_condition",
    "feature_range",
    "compute_difference_ratio",
    "calculate_blood_glucose_excursion",
    "plot_daily_trends",
];

const DATES: ParamSpec = ParamSpec::optional(
    "dates",
    ParamKind::Dates,
    "date, list of dates, {start,end} range, or date-key string",
);
const SOURCE: ParamSpec = ParamSpec::optional("source", ParamKind::Artifact, "artifact id from an earlier call");
const WINDOW: ParamSpec = ParamSpec::optional("window", ParamKind::Window, "intraday clock window HH:MM-HH:MM");
const LOW: ParamSpec = ParamSpec::optional("low", ParamKind::Number, "lower target bound in mg/dL (default 70)");
const HIGH: ParamSpec = ParamSpec::optional("high", ParamKind::Number, "upper target bound in mg/dL (default 180)");
const FEATURE: ParamSpec = ParamSpec::required("feature", ParamKind::Feature, "daily feature name");

type ExecFn = fn(&Args, &mut ToolContext<'_>) -> Result<ToolOutput, ToolError>;

fn specs() -> Vec<(ToolSpec, ExecFn)> {
    let spec = |name: &str, description: &str, params: Vec<ParamSpec>| ToolSpec {
        name: name.to_string(),
        description: description.to_string(),
        params,
    };
    vec![
        (
            spec(
                "filter_cgm_csv",
                "Select readings for dates (and optional clock window); returns counts and an artifact id.",
                vec![ParamSpec { required: true, ..DATES }, WINDOW],
            ),
            filter_cgm_csv as ExecFn,
        ),
        (
            spec(
                "estimate_cgm_sampling_rate",
                "Infer the sensor sampling interval in minutes.",
                vec![DATES, SOURCE, WINDOW],
            ),
            estimate_sampling_rate,
        ),
        (
            spec(
                "find_adherence",
                "Per-day weartime percentage and whether it reaches 70%.",
                vec![DATES, SOURCE, WINDOW],
            ),
            find_adherence,
        ),
        (
            spec(
                "find_BG_time_range",
                "Per-day percent time in, below and above range.",
                vec![
                    DATES,
                    SOURCE,
                    WINDOW,
                    LOW,
                    HIGH,
                    ParamSpec::optional("include_minutes", ParamKind::Boolean, "also report minutes per range"),
                ],
            ),
            find_time_range,
        ),
        (
            spec(
                "find_avg_std_gv_BG",
                "Per-day mean, standard deviation, CV, estimated A1c and GMI.",
                vec![DATES, SOURCE, WINDOW],
            ),
            find_avg_std,
        ),
        (
            spec("find_BG_min_max", "Per-day minimum and maximum glucose.", vec![DATES, SOURCE, WINDOW]),
            find_min_max,
        ),
        (
            spec(
                "find_hypo_hyper_events",
                "Per-day counts of sustained (15+ min) hypo- and hyperglycemia.",
                vec![
                    DATES,
                    SOURCE,
                    WINDOW,
                    LOW,
                    HIGH,
                    ParamSpec::optional("min_duration", ParamKind::Integer, "minimum event length in minutes"),
                ],
            ),
            find_events,
        ),
        (
            spec(
                "extract_features_json",
                "All daily metrics per date; returns them and a feature-table artifact id.",
                vec![
                    DATES,
                    SOURCE,
                    WINDOW,
                    LOW,
                    HIGH,
                    ParamSpec::optional("features", ParamKind::FeatureList, "restrict output to these features"),
                ],
            ),
            extract_features,
        ),
        (
            spec(
                "get_average",
                "Average a feature over all days with data and over days with sufficient weartime.",
                vec![DATES, SOURCE, WINDOW, FEATURE],
            ),
            get_average,
        ),
        (
            spec(
                "count_satisfied_condition",
                "Count days whose feature satisfies `feature comparator threshold`.",
                vec![
                    DATES,
                    SOURCE,
                    WINDOW,
                    FEATURE,
                    ParamSpec::required("comparator", ParamKind::Comparator, "<, <=, ==, >=, >"),
                    ParamSpec::required("threshold", ParamKind::Number, "value to compare against"),
                ],
            ),
            count_condition,
        ),
        (
            spec(
                "feature_range",
                "Day(s) with the lowest and/or highest value of a feature.",
                vec![
                    DATES,
                    SOURCE,
                    WINDOW,
                    FEATURE,
                    ParamSpec::optional("mode", ParamKind::Mode, "min, max or both (default both)"),
                ],
            ),
            feature_range,
        ),
        (
            spec(
                "compute_difference_ratio",
                "Compare a feature's daily average between two date groups.",
                vec![
                    ParamSpec::required("group_a", ParamKind::Dates, "first period"),
                    ParamSpec::required("group_b", ParamKind::Dates, "second period"),
                    WINDOW,
                    FEATURE,
                    ParamSpec::optional("stratum", ParamKind::Stratum, "all (default) or sufficient_weartime"),
                ],
            ),
            compare,
        ),
        (
            spec(
                "calculate_blood_glucose_excursion",
                "Rapid rises or falls faster than a speed threshold.",
                vec![
                    DATES,
                    SOURCE,
                    WINDOW,
                    ParamSpec::optional("speed_threshold", ParamKind::Number, "mg/dL per minute (default 2)"),
                    ParamSpec::optional("window_minutes", ParamKind::Integer, "window length (default 15)"),
                ],
            ),
            excursions,
        ),
        (
            spec(
                "plot_daily_trends",
                "Average 24-hour profile: mean glucose per clock bin.",
                vec![
                    DATES,
                    SOURCE,
                    WINDOW,
                    ParamSpec::optional("bin_minutes", ParamKind::Integer, "bin width, must divide 1440 (default 60)"),
                ],
            ),
            plot_trends,
        ),
    ]
}

pub fn register_cgm_tools(registry: &mut ToolRegistry) -> Result<(), SandboxError> {
    for (spec, f) in specs() {
        registry.register(spec, Arc::new(f))?;
    }
    Ok(())
}

/// Registry holding exactly the fourteen CGM tools.
pub fn cgm_registry(config: SandboxConfig) -> ToolRegistry {
    let mut reg = ToolRegistry::new(config);
    register_cgm_tools(&mut reg).expect("fresh registry");
    reg
}

fn thresholds(args: &Args, config: &SandboxConfig) -> Result<RangeThresholds<f64>, ToolError> {
    let low = args.number("low")?.unwrap_or(config.thresholds.low);
    let high = args.number("high")?.unwrap_or(config.thresholds.high);
    RangeThresholds::new(low, high).map_err(|e| ToolError::InvalidArgument {
        name: "low/high".into(),
        reason: e.to_string(),
    })
}

fn source_id(args: &Args) -> Result<Option<String>, ToolError> {
    Ok(args.text("source")?.map(str::to_string))
}

/// Series plus selection from `dates` or a series artifact in `source`.
fn resolve_series(
    args: &Args,
    ctx: &ToolContext<'_>,
) -> Result<(DateSelection, GlucoseSeries<f64>, Vec<String>), ToolError> {
    if let Some(sel) = args.dates("dates")? {
        let series = data::filter_series(&ctx.data.cgm, &sel);
        return Ok((sel, series, Vec::new()));
    }
    let id = source_id(args)?.ok_or_else(|| ToolError::MissingArgument("dates or source".into()))?;
    match ctx.workspace.get(&id)? {
        Artifact::Series { selection, series } => {
            let mut sel = selection.clone();
            if let Some(w) = args.window()? {
                sel = sel.with_window(w);
            }
            let series = data::filter_series(series, &sel);
            Ok((sel, series, vec![id]))
        }
        other => Err(ToolError::WrongArtifact {
            id,
            found: other.kind(),
            expected: "filtered series",
        }),
    }
}

/// Daily records from `dates`, a series artifact, or a feature-table artifact.
type Resolved = (DateSelection, BTreeMap<String, DailyFeatureRecord>, Vec<String>);

fn resolve_records(
    args: &Args,
    ctx: &ToolContext<'_>,
) -> Result<Resolved, ToolError> {
    if !args.has("dates") {
        if let Some(id) = source_id(args)? {
            if let Artifact::Features { selection, records } = ctx.workspace.get(&id)? {
                return Ok((selection.clone(), records.clone(), vec![id]));
            }
        }
    }
    let (sel, series, consumed) = resolve_series(args, ctx)?;
    let th = thresholds(args, ctx.config)?;
    let records = metrics::extract_daily_features(&series, &sel, &th, ctx.data.rate_minutes);
    Ok((sel, records, consumed))
}

fn per_day(records: &BTreeMap<String, DailyFeatureRecord>, features: &[Feature]) -> Payload {
    records
        .iter()
        .map(|(k, r)| {
            let row = features.iter().map(|f| (f.as_str().to_string(), r.get(*f))).collect();
            (k.clone(), row)
        })
        .collect()
}

fn single(key: String, entries: &[(&str, f64)]) -> Payload {
    Payload::from([(key, entries.iter().map(|(k, v)| (k.to_string(), *v)).collect())])
}

fn filter_cgm_csv(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let (sel, series, _) = resolve_series(args, ctx)?;
    let payload = single(
        sel.key(),
        &[
            ("num_readings", series.len() as f64),
            ("num_days", series.dates().len() as f64),
        ],
    );
    Ok(ToolOutput {
        payload,
        artifact: Some(Artifact::Series {
            selection: sel,
            series,
        }),
        consumed: Vec::new(),
    })
}

fn estimate_sampling_rate(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let (key, series, consumed) = if args.has("dates") || args.has("source") {
        let (sel, s, c) = resolve_series(args, ctx)?;
        (sel.key(), s, c)
    } else {
        let s = (*ctx.data.cgm).clone();
        let key = match (s.first_date(), s.last_date()) {
            (Some(a), Some(b)) => dates_key(&data::DateSelection::range(a, b).dates(), None),
            _ => "all".to_string(),
        };
        (key, s, Vec::new())
    };
    let rate = data::estimate_sampling_rate(&series).map_or(SENTINEL, f64::from);
    Ok(ToolOutput {
        payload: single(key, &[("sampling_rate_minutes", rate)]),
        consumed,
        ..ToolOutput::default()
    })
}

fn records_tool(args: &Args, ctx: &mut ToolContext<'_>, features: &[Feature]) -> Result<ToolOutput, ToolError> {
    let (_, records, consumed) = resolve_records(args, ctx)?;
    Ok(ToolOutput {
        payload: per_day(&records, features),
        consumed,
        ..ToolOutput::default()
    })
}

fn find_adherence(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    records_tool(args, ctx, &[Feature::WeartimePct, Feature::WeartimeSufficient])
}

fn find_time_range(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let mut features = vec![Feature::TirPct, Feature::TbrPct, Feature::TarPct];
    if args.boolean("include_minutes")?.unwrap_or(false) {
        features.extend([Feature::TirMinutes, Feature::TbrMinutes, Feature::TarMinutes]);
    }
    records_tool(args, ctx, &features)
}

fn find_avg_std(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    records_tool(
        args,
        ctx,
        &[
            Feature::MeanGlucose,
            Feature::StdGlucose,
            Feature::CvPct,
            Feature::EstA1cPct,
            Feature::GmiPct,
        ],
    )
}

fn find_min_max(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    records_tool(args, ctx, &[Feature::MinGlucose, Feature::MaxGlucose])
}

fn find_events(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let min_duration = args.integer("min_duration")?.unwrap_or(DEFAULT_EVENT_MIN_MINUTES);
    if min_duration == DEFAULT_EVENT_MIN_MINUTES {
        return records_tool(args, ctx, &[Feature::HypoEvents, Feature::HyperEvents]);
    }
    if min_duration == 0 {
        return Err(ToolError::InvalidArgument {
            name: "min_duration".into(),
            reason: "must be positive".into(),
        });
    }
    let (sel, series, consumed) = resolve_series(args, ctx)?;
    let th = thresholds(args, ctx.config)?;
    let payload = sel
        .dates()
        .into_iter()
        .map(|date| {
            let day = data::filter_series(&series, &DateSelection::of_dates(vec![date]));
            let row = if day.is_empty() {
                [SENTINEL, SENTINEL]
            } else {
                let ev = metrics::detect_events(&day, &th, ctx.data.rate_minutes, min_duration);
                [ev.hypo_events as f64, ev.hyper_events as f64]
            };
            (
                sel.date_key(date),
                BTreeMap::from([
                    ("hypo_events".to_string(), row[0]),
                    ("hyper_events".to_string(), row[1]),
                ]),
            )
        })
        .collect();
    Ok(ToolOutput {
        payload,
        consumed,
        ..ToolOutput::default()
    })
}

fn extract_features(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let (sel, series, consumed) = resolve_series(args, ctx)?;
    let th = thresholds(args, ctx.config)?;
    let records = metrics::extract_daily_features(&series, &sel, &th, ctx.data.rate_minutes);
    let features = args.features("features")?.unwrap_or_else(|| Feature::ALL.to_vec());
    Ok(ToolOutput {
        payload: per_day(&records, &features),
        artifact: Some(Artifact::Features {
            selection: sel,
            records,
        }),
        consumed,
    })
}

fn get_average(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let feature = args.feature("feature")?;
    let (sel, records, consumed) = resolve_records(args, ctx)?;
    let agg = aggregation::average_over_days(&records, feature);
    let label = feature.label();
    let payload = single(
        sel.key(),
        &[
            ("days_all", agg.days_all as f64),
            (&format!("avg_{label}_all"), agg.avg_all),
            ("days_sufficient_weartime", agg.days_sufficient_weartime as f64),
            (&format!("avg_{label}_sufficient_weartime"), agg.avg_sufficient_weartime),
        ],
    );
    Ok(ToolOutput {
        payload,
        consumed,
        ..ToolOutput::default()
    })
}

fn count_condition(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let condition = Condition {
        feature: args.feature("feature")?,
        comparator: args.comparator("comparator")?,
        threshold: args.number("threshold")?.ok_or_else(|| ToolError::MissingArgument("threshold".into()))?,
    };
    let (sel, records, consumed) = resolve_records(args, ctx)?;
    let considered = records.values().filter(|r| r.get(condition.feature) != SENTINEL).count();
    let payload = single(
        sel.key(),
        &[
            ("days_satisfied", aggregation::count_days_satisfying(&records, &condition) as f64),
            ("days_considered", considered as f64),
        ],
    );
    Ok(ToolOutput {
        payload,
        consumed,
        ..ToolOutput::default()
    })
}

fn feature_range(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let feature = args.feature("feature")?;
    let modes = match args.mode("mode")? {
        Some(m) => vec![m],
        None => vec![ExtremumMode::Min, ExtremumMode::Max],
    };
    let (sel, records, consumed) = resolve_records(args, ctx)?;
    let mut payload = Payload::new();
    for mode in modes {
        let prefix = match mode {
            ExtremumMode::Min => "min",
            ExtremumMode::Max => "max",
        };
        let name = format!("{prefix}_{}", feature.as_str());
        match aggregation::feature_extremum(&records, feature, mode) {
            Ok((key, v)) => payload.entry(key).or_default().insert(name, v),
            Err(_) => payload.entry(sel.key()).or_default().insert(name, SENTINEL),
        };
    }
    Ok(ToolOutput {
        payload,
        consumed,
        ..ToolOutput::default()
    })
}

fn compare(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let feature = args.feature("feature")?;
    let stratum = args.stratum("stratum")?;
    let a = args.dates("group_a")?.ok_or_else(|| ToolError::MissingArgument("group_a".into()))?;
    let b = args.dates("group_b")?.ok_or_else(|| ToolError::MissingArgument("group_b".into()))?;
    let groups = DateSelection {
        set: data::DateSet::Groups(vec![
            DateGroup {
                label: "A".into(),
                dates: a.dates(),
            },
            DateGroup {
                label: "B".into(),
                dates: b.dates(),
            },
        ]),
        window: a.window,
    };
    groups.validate().map_err(|e| ToolError::InvalidArgument {
        name: "group_a/group_b".into(),
        reason: e.to_string(),
    })?;
    let th = thresholds(args, ctx.config)?;
    let records = metrics::extract_daily_features(&ctx.data.cgm, &groups, &th, ctx.data.rate_minutes);
    let keys = |s: &DateSelection| s.dates().into_iter().map(|d| groups.date_key(d)).collect::<Vec<_>>();
    let label = feature.label();
    let key = groups.key();
    let names = [
        format!("avg_{label}_group_a"),
        format!("avg_{label}_group_b"),
        "absolute_difference".to_string(),
        "ratio".to_string(),
        "higher_group".to_string(),
    ];
    let values = match aggregation::compare_groups(&records, feature, &keys(&a), &keys(&b), stratum) {
        Ok(c) => [c.avg_a, c.avg_b, c.absolute_difference, c.ratio, c.higher_group.code()],
        Err(aggregation::AggregationError::EmptyGroup(_)) => [SENTINEL; 5],
        Err(e) => return Err(ToolError::Failed(e.to_string())),
    };
    let row = names.into_iter().zip(values).collect();
    Ok(ToolOutput {
        payload: Payload::from([(key, row)]),
        ..ToolOutput::default()
    })
}

const EXCURSION_STAMP: &str = "%Y-%m-%d %H:%M:%S";

fn excursions(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let defaults = ExcursionParams::default();
    let params = ExcursionParams {
        speed_threshold: args.number("speed_threshold")?.unwrap_or(defaults.speed_threshold),
        window_minutes: args.integer("window_minutes")?.unwrap_or(defaults.window_minutes),
    };
    params.validate().map_err(|e| ToolError::InvalidArgument {
        name: "speed_threshold/window_minutes".into(),
        reason: e.to_string(),
    })?;
    let (sel, series, consumed) = resolve_series(args, ctx)?;
    let found = aggregation::detect_excursions(&series, &params).map_err(|e| ToolError::Failed(e.to_string()))?;
    let mut payload = single(sel.key(), &[("num_excursions", found.len() as f64)]);
    for ex in &found {
        let key = format!(
            "({}, {})",
            ex.start.format(EXCURSION_STAMP),
            ex.end.format(EXCURSION_STAMP)
        );
        payload.insert(
            key,
            BTreeMap::from([
                ("magnitude".to_string(), ex.magnitude),
                ("speed".to_string(), ex.speed),
            ]),
        );
    }
    Ok(ToolOutput {
        payload,
        consumed,
        ..ToolOutput::default()
    })
}

fn plot_trends(args: &Args, ctx: &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> {
    let bin = args.integer("bin_minutes")?.unwrap_or(ctx.config.default_trend_bin);
    let (sel, series, consumed) = resolve_series(args, ctx)?;
    let profile = aggregation::daily_trend_profile(&series, &sel, bin).map_err(|e| ToolError::InvalidArgument {
        name: "bin_minutes".into(),
        reason: e.to_string(),
    })?;
    let key = sel.key();
    if let Some(dir) = &ctx.config.plot_dir {
        let th = thresholds(args, ctx.config)?;
        let svg = aggregation::render_trend_svg(&profile, &th);
        let digest = hex::encode(Sha256::digest(format!("{key}|{bin}").as_bytes()));
        let path = dir.join(format!("trend_{}.svg", &digest[..12]));
        std::fs::create_dir_all(dir)
            .and_then(|()| std::fs::write(&path, svg))
            .map_err(|e| ToolError::Failed(format!("writing {}: {e}", path.display())))?;
        tracing::info!(path = %path.display(), "trend chart written");
    }
    let row = profile.bins.iter().map(|b| (b.clock.clone(), b.mean)).collect();
    Ok(ToolOutput {
        payload: Payload::from([(key, row)]),
        consumed,
        ..ToolOutput::default()
    })
}
