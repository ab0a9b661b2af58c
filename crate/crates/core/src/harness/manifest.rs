use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, ParseProblems, Result};
use crate::types::{Label, Sex, Side};

/// Column order of the manifest file.
pub const MANIFEST_COLUMNS: [&str; 6] = [
    "image_path",
    "patient_id",
    "side",
    "age_years",
    "sex",
    "label",
];

/// One joint record. `image_path` is relative to the manifest directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_path: PathBuf,
    pub patient_id: String,
    pub side: Side,
    pub age_years: u32,
    pub sex: Sex,
    pub label: Label,
}

impl ManifestRow {
    /// Stable case identifier, e.g. `p0007/left`.
    pub fn case_id(&self) -> String {
        format!("{}/{}", self.patient_id, self.side)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    /// Validates rows built in memory (non-empty ids, no duplicate joints).
    pub fn new(rows: Vec<ManifestRow>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut seen = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            let line = i as u64 + 2;
            check_row(row, line, &mut seen, &mut problems);
        }
        if !problems.is_empty() {
            return Err(Error::Parse {
                path: "<memory>".into(),
                problems: ParseProblems(problems),
            });
        }
        Ok(Manifest {
            rows,
            root: root.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), root)
    }

    /// Parses manifest text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str, root: PathBuf) -> Result<Self> {
        let fail = |problems: Vec<(u64, String)>| Error::Parse {
            path: origin.to_string(),
            problems: ParseProblems(problems),
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| fail(vec![(1, format!("unreadable header: {e}"))]))?
            .clone();
        let mut index = [0usize; 6];
        let mut missing = Vec::new();
        for (slot, name) in index.iter_mut().zip(MANIFEST_COLUMNS) {
            match headers.iter().position(|h| h == name) {
                Some(i) => *slot = i,
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            return Err(fail(vec![(
                1,
                format!("missing column(s): {}", missing.join(", ")),
            )]));
        }

        let mut rows = Vec::new();
        let mut problems = Vec::new();
        let mut seen = HashMap::new();
        for record in reader.records() {
            let record = match record {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    problems.push((line, e.to_string()));
                    continue;
                }
            };
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| record.get(index[i]).unwrap_or("");
            match parse_row(field) {
                Ok(row) => {
                    check_row(&row, line, &mut seen, &mut problems);
                    rows.push(row);
                }
                Err(msg) => problems.push((line, msg)),
            }
        }
        if !problems.is_empty() {
            return Err(fail(problems));
        }
        Ok(Manifest { rows, root })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.image_path.to_string_lossy().as_ref(),
                &r.patient_id,
                r.side.as_str(),
                &r.age_years.to_string(),
                r.sex.as_str(),
                &r.label.index().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.image_path.is_absolute() {
            row.image_path.clone()
        } else {
            self.root.join(&row.image_path)
        }
    }

    /// Distinct patient ids in first-appearance order.
    pub fn patients(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.patient_id.as_str()))
            .map(|r| r.patient_id.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn parse_row<'a>(field: impl Fn(usize) -> &'a str) -> std::result::Result<ManifestRow, String> {
    let image_path = field(0);
    if image_path.is_empty() {
        return Err("empty image_path".into());
    }
    let side: Side = field(2).parse().map_err(|e: Error| e.to_string())?;
    let age_years: u32 = field(3)
        .parse()
        .map_err(|_| format!("age_years must be an integer, got {:?}", field(3)))?;
    let sex: Sex = field(4).parse().map_err(|e: Error| e.to_string())?;
    let label = match field(5) {
        "0" => Label::Healthy,
        "1" => Label::ActiveInflammation,
        other => return Err(format!("label must be 0 or 1, got {other:?}")),
    };
    Ok(ManifestRow {
        image_path: PathBuf::from(image_path),
        patient_id: field(1).to_string(),
        side,
        age_years,
        sex,
        label,
    })
}

fn check_row(
    row: &ManifestRow,
    line: u64,
    seen: &mut HashMap<(String, Side), u64>,
    problems: &mut Vec<(u64, String)>,
) {
    if row.patient_id.is_empty() {
        problems.push((line, "empty patient_id".into()));
    }
    if !(5..=90).contains(&row.age_years) {
        problems.push((
            line,
            format!("age_years {} outside 5-90", row.age_years),
        ));
    }
    if let Some(first) = seen.insert((row.patient_id.clone(), row.side), line) {
        problems.push((
            line,
            format!(
                "duplicate joint ({}, {}) first seen on line {first}",
                row.patient_id, row.side
            ),
        ));
    }
}
