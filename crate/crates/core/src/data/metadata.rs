use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class directory names, indexed by label.
pub const CLASS_NAMES: [&str; 3] = ["Normal", "Pneumonia", "COVID-19"];

pub const METADATA_COLUMNS: [&str; 10] = [
    "filename", "class", "split", "xmin", "ymin", "xmax", "ymax", "country", "sex", "age",
];
const REQUIRED: [&str; 7] = ["filename", "class", "split", "xmin", "ymin", "xmax", "ymax"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown split `{s}` (train|valid|test)")))
    }
}

/// Pixel box with exclusive maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl BBox {
    pub fn full(width: u32, height: u32) -> Self {
        BBox {
            xmin: 0,
            ymin: 0,
            xmax: width,
            ymax: height,
        }
    }

    pub fn width(&self) -> u32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.xmin < self.xmax && self.ymin < self.ymax && self.xmax <= width && self.ymax <= height
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub filename: String,
    pub label: usize,
    pub bbox: BBox,
    pub split: Split,
    pub country: Option<String>,
    pub sex: Option<String>,
    pub age: Option<u32>,
}

/// A metadata row that was not turned into a record. `row` counts data rows
/// from 1 (the header is not counted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedMetadata {
    pub records: Vec<SampleRecord>,
    /// Data-row number of each record, counted like [`Rejection::row`].
    pub record_rows: Vec<usize>,
    pub rejected: Vec<Rejection>,
}

fn optional(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

fn parse_row(get: impl Fn(&str) -> String) -> std::result::Result<SampleRecord, String> {
    let filename = get("filename").trim().to_string();
    if filename.is_empty() {
        return Err("empty filename".into());
    }
    let label = match get("class").trim() {
        "0" => 0,
        "1" => 1,
        "2" => 2,
        other => return Err(format!("unknown class `{other}`")),
    };
    let split: Split = get("split").trim().parse().map_err(|e: Error| e.to_string())?;
    let coord = |name: &str| {
        let v = get(name);
        v.trim()
            .parse::<u32>()
            .map_err(|_| format!("unparseable {name} `{}`", v.trim()))
    };
    let bbox = BBox {
        xmin: coord("xmin")?,
        ymin: coord("ymin")?,
        xmax: coord("xmax")?,
        ymax: coord("ymax")?,
    };
    if bbox.xmax <= bbox.xmin || bbox.ymax <= bbox.ymin {
        return Err(format!(
            "empty bbox ({}, {}, {}, {})",
            bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax
        ));
    }
    let age = match optional(&get("age")) {
        None => None,
        Some(a) => Some(a.parse::<u32>().map_err(|_| format!("unparseable age `{a}`"))?),
    };
    Ok(SampleRecord {
        filename,
        label,
        bbox,
        split,
        country: optional(&get("country")),
        sex: optional(&get("sex")),
        age,
    })
}

/// Parses metadata CSV text. Bad rows are collected in `rejected`; a
/// missing required column or a filename repeated within one split is an
/// error.
pub fn parse_metadata_str(text: &str) -> Result<ParsedMetadata> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let index = |name: &str| headers.iter().position(|h| h == name);
    if let Some(missing) = REQUIRED.iter().find(|c| index(c).is_none()) {
        return Err(Error::Data(format!("metadata is missing column `{missing}`")));
    }
    let columns: Vec<(&str, Option<usize>)> = METADATA_COLUMNS.iter().map(|&c| (c, index(c))).collect();
    let mut out = ParsedMetadata::default();
    let mut seen: HashSet<(Split, String)> = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(Rejection {
                    row: row_no,
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        let get = |name: &str| {
            columns
                .iter()
                .find(|(c, _)| *c == name)
                .and_then(|(_, idx)| idx.and_then(|k| row.get(k)))
                .unwrap_or("")
                .to_string()
        };
        match parse_row(get) {
            Ok(rec) => {
                if !seen.insert((rec.split, rec.filename.clone())) {
                    return Err(Error::Data(format!(
                        "duplicate filename `{}` in split {} (row {row_no})",
                        rec.filename, rec.split
                    )));
                }
                out.records.push(rec);
                out.record_rows.push(row_no);
            }
            Err(reason) => out.rejected.push(Rejection { row: row_no, reason }),
        }
    }
    Ok(out)
}

pub fn parse_metadata(path: &Path) -> Result<ParsedMetadata> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_path(path, e))?;
    parse_metadata_str(&text)
}

/// Writes the `row,reason` rejection report.
pub fn write_rejections<W: Write>(rejected: &[Rejection], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "reason"])?;
    for r in rejected {
        w.write_record([r.row.to_string(), r.reason.clone()])?;
    }
    w.flush().map_err(|e| Error::io("writing rejection report", e))
}

/// Formats records back into metadata CSV.
pub fn write_metadata<W: Write>(records: &[SampleRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METADATA_COLUMNS)?;
    for r in records {
        w.write_record([
            r.filename.clone(),
            r.label.to_string(),
            r.split.to_string(),
            r.bbox.xmin.to_string(),
            r.bbox.ymin.to_string(),
            r.bbox.xmax.to_string(),
            r.bbox.ymax.to_string(),
            r.country.clone().unwrap_or_default(),
            r.sex.clone().unwrap_or_default(),
            r.age.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing metadata", e))
}
