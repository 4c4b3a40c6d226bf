//! Class and demographic distribution tables.

use std::collections::BTreeMap;
use std::io::Write;

use crate::data::metadata::{SampleRecord, CLASS_NAMES};
use crate::error::{Error, Result};

pub const STATS_HEADER: [&str; 5] = ["section", "key", "class", "count", "percent"];
pub const AGE_BUCKETS: [&str; 6] = ["0-20", "21-40", "41-60", "61-80", "81+", "unknown"];
const UNKNOWN: &str = "unknown";
const ALL: &str = "all";

/// One line of the stats table. In the `class` and `sex` sections `percent`
/// is relative to all records; in the cross tables (`class_split`,
/// `class_country`, `class_age`) it is relative to the records sharing `key`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub section: &'static str,
    pub key: String,
    pub class: String,
    pub count: usize,
    pub percent: f64,
}

pub fn age_bucket(age: Option<u32>) -> &'static str {
    match age {
        None => AGE_BUCKETS[5],
        Some(0..=20) => AGE_BUCKETS[0],
        Some(21..=40) => AGE_BUCKETS[1],
        Some(41..=60) => AGE_BUCKETS[2],
        Some(61..=80) => AGE_BUCKETS[3],
        Some(_) => AGE_BUCKETS[4],
    }
}

/// `F`, `M` or `unknown`.
pub fn sex_key(sex: Option<&str>) -> &'static str {
    match sex.map(|s| s.trim().to_ascii_lowercase()).as_deref() {
        Some("f" | "female") => "F",
        Some("m" | "male") => "M",
        _ => UNKNOWN,
    }
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn cross(section: &'static str, groups: BTreeMap<String, [usize; 3]>, out: &mut Vec<StatsRow>) {
    for (key, counts) in groups {
        let total: usize = counts.iter().sum();
        for (c, &n) in counts.iter().enumerate() {
            out.push(StatsRow {
                section,
                key: key.clone(),
                class: CLASS_NAMES[c].to_string(),
                count: n,
                percent: pct(n, total),
            });
        }
    }
}

pub fn dataset_stats(records: &[SampleRecord]) -> Vec<StatsRow> {
    let total = records.len();
    let mut out = Vec::new();
    let mut per_class = [0usize; 3];
    for r in records {
        per_class[r.label] += 1;
    }
    for (c, &n) in per_class.iter().enumerate() {
        out.push(StatsRow {
            section: "class",
            key: ALL.into(),
            class: CLASS_NAMES[c].into(),
            count: n,
            percent: pct(n, total),
        });
    }

    let mut by_split: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut by_country: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut by_age: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut by_sex: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        by_split.entry(r.split.to_string()).or_default()[r.label] += 1;
        by_country
            .entry(r.country.clone().unwrap_or_else(|| UNKNOWN.into()))
            .or_default()[r.label] += 1;
        by_age.entry(age_bucket(r.age).into()).or_default()[r.label] += 1;
        *by_sex.entry(sex_key(r.sex.as_deref())).or_default() += 1;
    }
    cross("class_split", by_split, &mut out);
    cross("class_country", by_country, &mut out);
    for (key, n) in by_sex {
        out.push(StatsRow {
            section: "sex",
            key: key.into(),
            class: ALL.into(),
            count: n,
            percent: pct(n, total),
        });
    }
    // buckets in age order rather than lexical order
    let mut ages: Vec<(String, [usize; 3])> = by_age.into_iter().collect();
    ages.sort_by_key(|(k, _)| AGE_BUCKETS.iter().position(|b| b == k));
    for (key, counts) in ages {
        cross("class_age", BTreeMap::from([(key, counts)]), &mut out);
    }
    out
}

/// Percentages are written with two decimals.
pub fn write_stats_csv<W: Write>(rows: &[StatsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STATS_HEADER)?;
    for r in rows {
        w.write_record([
            r.section.to_string(),
            r.key.clone(),
            r.class.clone(),
            r.count.to_string(),
            format!("{:.2}", r.percent),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing stats", e))
}
