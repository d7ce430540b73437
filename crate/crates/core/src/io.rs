//! On-disk formats.
//!
//! A dataset is a directory holding `manifest.json` plus one edge file per
//! relation, a feature file and an optional label file:
//!
//! * edge file: UTF-8, one `src<TAB>dst` pair per line, `#` starts a comment;
//!   an undirected edge may be listed once.
//! * feature file: headerless CSV, `N` rows of `d` columns.
//! * label file: one token per node from `0`, `1`, `?`.
//!
//! Reports are JSON envelopes carrying a schema version. JSON has no NaN or
//! infinity, so non-finite numbers are written as `null` and the envelope
//! sets `has_nonfinite`.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeSet, Graph, IngestStats, Label};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Serde adapters mapping non-finite floats to `null` and back to NaN.
pub mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod array2 {
        use serde::ser::SerializeTuple;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64; 2], s: S) -> Result<S::Ok, S::Error> {
            let mut t = s.serialize_tuple(2)?;
            for x in v {
                t.serialize_element(&x.is_finite().then_some(*x))?;
            }
            t.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 2], D::Error> {
            let [a, b] = <[Option<f64>; 2]>::deserialize(d)?;
            Ok([a.unwrap_or(f64::NAN), b.unwrap_or(f64::NAN)])
        }
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let raw = Vec::<Option<f64>>::deserialize(d)?;
            Ok(raw.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
        }
    }
}

/// Reports whether any float inside is NaN or infinite.
pub trait NonFinite {
    fn has_nonfinite(&self) -> bool;
}

impl NonFinite for f64 {
    fn has_nonfinite(&self) -> bool {
        !self.is_finite()
    }
}

impl<T: NonFinite> NonFinite for [T] {
    fn has_nonfinite(&self) -> bool {
        self.iter().any(NonFinite::has_nonfinite)
    }
}

impl<T: NonFinite> NonFinite for Vec<T> {
    fn has_nonfinite(&self) -> bool {
        self.as_slice().has_nonfinite()
    }
}

impl<T: NonFinite, const N: usize> NonFinite for [T; N] {
    fn has_nonfinite(&self) -> bool {
        self.as_slice().has_nonfinite()
    }
}

/// A JSON-serializable report with a stable kind tag.
pub trait Report: Serialize + DeserializeOwned + NonFinite {
    const KIND: &'static str;
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    has_nonfinite: bool,
    report: T,
}

pub fn report_to_json<R: Report>(report: &R) -> Result<String> {
    let has_nonfinite = report.has_nonfinite();
    if has_nonfinite {
        warn!("{} report contains non-finite values; written as null", R::KIND);
    }
    let env = Envelope {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: R::KIND.to_string(),
        has_nonfinite,
        report,
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn report_from_json<R: Report>(text: &str) -> Result<R> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::invalid("report has no schema_version"))?;
    if version != REPORT_SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: version.min(u32::MAX as u64) as u32,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    let env: Envelope<R> = serde_json::from_value(value)?;
    if env.kind != R::KIND {
        return Err(Error::invalid(format!(
            "expected a {} report, found {}",
            R::KIND,
            env.kind
        )));
    }
    Ok(env.report)
}

pub fn save_report<R: Report>(report: &R, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_file(path, report_to_json(report)?)
}

pub fn load_report<R: Report>(path: impl AsRef<Path>) -> Result<R> {
    report_from_json(&read_file(path.as_ref())?)
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    /// Edge files, one per relation, relative to the manifest directory.
    pub relations: Vec<PathBuf>,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Loaded dataset plus the cleaning counters of each relation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub ingest: Vec<IngestStats>,
}

fn parse_err(file: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses an edge file into undirected pairs.
pub fn parse_edges(path: &Path, text: &str, num_nodes: usize) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(path, line_no, format!("expected 'src<TAB>dst', found '{line}'")));
        }
        let mut ends = [0usize; 2];
        for (slot, field) in ends.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("invalid node id '{field}'")))?;
            if *slot >= num_nodes {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("node id {slot} out of range (num_nodes = {num_nodes})"),
                ));
            }
        }
        pairs.push((ends[0], ends[1]));
    }
    Ok(pairs)
}

pub fn parse_features(path: &Path, text: &str, num_nodes: usize, dim: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::with_capacity(num_nodes * dim);
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim {
            return Err(parse_err(
                path,
                line,
                format!("feature row {rows} has {} columns, expected {dim}", record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("invalid number '{field}' in row {rows}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite feature in row {rows}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows != num_nodes {
        return Err(parse_err(path, rows as u64, format!("found {rows} feature rows, expected {num_nodes}")));
    }
    Ok(DMatrix::from_row_slice(num_nodes, dim, &values))
}

pub fn parse_labels(path: &Path, text: &str, num_nodes: usize) -> Result<Vec<Label>> {
    let mut labels = Vec::with_capacity(num_nodes);
    for (idx, raw) in text.lines().enumerate() {
        let token = raw.trim();
        if token.is_empty() {
            continue;
        }
        labels.push(match token {
            "0" => Label::Normal,
            "1" => Label::Anomalous,
            "?" => Label::Unlabeled,
            other => return Err(parse_err(path, idx as u64 + 1, format!("unknown label token '{other}'"))),
        });
    }
    if labels.len() != num_nodes {
        return Err(parse_err(
            path,
            labels.len() as u64,
            format!("found {} labels, expected {num_nodes}", labels.len()),
        ));
    }
    Ok(labels)
}

/// Loads a dataset from its manifest file or from the directory holding it.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut manifest_path = path.as_ref().to_path_buf();
    if manifest_path.is_dir() {
        manifest_path.push(MANIFEST_FILE);
    }
    let manifest: DatasetManifest = serde_json::from_str(&read_file(&manifest_path)?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::SchemaVersion {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    if manifest.relations.is_empty() {
        return Err(Error::invalid("manifest lists no relation files"));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let n = manifest.num_nodes;

    let mut relations = Vec::new();
    let mut ingest = Vec::new();
    for rel in &manifest.relations {
        let file = base.join(rel);
        let pairs = parse_edges(&file, &read_file(&file)?, n)?;
        let (edges, stats) = EdgeSet::from_pairs(n, pairs)?;
        if stats.self_loops > 0 {
            warn!("{}: dropped {} self-loop(s)", file.display(), stats.self_loops);
        }
        relations.push(edges);
        ingest.push(stats);
    }
    let feat_file = base.join(&manifest.features);
    let features = parse_features(&feat_file, &read_file(&feat_file)?, n, manifest.feature_dim)?;
    let labels = match &manifest.labels {
        Some(rel) => {
            let file = base.join(rel);
            parse_labels(&file, &read_file(&file)?, n)?
        }
        None => vec![Label::Unlabeled; n],
    };
    Ok(Dataset {
        name: manifest.name,
        graph: Graph::new(relations, features, labels)?,
        ingest,
    })
}

/// Writes `g` as a dataset directory; returns the manifest path.
pub fn save_dataset(g: &Graph, name: &str, dir: impl AsRef<Path>) -> Result<PathBuf> {
    use std::fmt::Write as _;

    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut relations = Vec::new();
    for (r, edges) in g.relations().iter().enumerate() {
        let file = PathBuf::from(format!("relation_{r}.tsv"));
        let mut text = String::new();
        for (u, v) in edges.undirected_edges() {
            writeln!(text, "{u}\t{v}").unwrap();
        }
        write_file(&dir.join(&file), text)?;
        relations.push(file);
    }

    let mut text = String::new();
    for row in g.features().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let features = PathBuf::from("features.csv");
    write_file(&dir.join(&features), text)?;

    let labels = if g.labels().iter().any(|l| l.is_labeled()) {
        let file = PathBuf::from("labels.txt");
        let text: String = g
            .labels()
            .iter()
            .map(|l| match l {
                Label::Normal => "0\n",
                Label::Anomalous => "1\n",
                Label::Unlabeled => "?\n",
            })
            .collect();
        write_file(&dir.join(&file), text)?;
        Some(file)
    } else {
        None
    };

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        name: name.to_string(),
        num_nodes: g.num_nodes(),
        feature_dim: g.feature_dim(),
        relations,
        features,
        labels,
    };
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{FeatureShift, ShiftReport};
    use crate::graph::LaplacianKind;

    fn shift_report(delta: f64) -> ShiftReport {
        ShiftReport {
            kind: LaplacianKind::Normalized,
            dropped: 3,
            features: vec![FeatureShift {
                column: 0,
                s_high_original: 1.25,
                s_high_perturbed: 1.0,
                delta_relative: delta,
            }],
            mean_delta: delta,
            min_delta: delta,
            skipped: vec![],
        }
    }

    #[test]
    fn report_round_trip() {
        let r = shift_report(-0.2);
        let text = report_to_json(&r).unwrap();
        assert_eq!(report_from_json::<ShiftReport>(&text).unwrap(), r);
    }

    #[test]
    fn unknown_schema_rejected() {
        let text = report_to_json(&shift_report(0.1)).unwrap();
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(matches!(
            report_from_json::<ShiftReport>(&bumped),
            Err(Error::SchemaVersion { found: 99, .. })
        ));
    }

    #[test]
    fn nan_written_as_null_with_flag() {
        let text = report_to_json(&shift_report(f64::NAN)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["has_nonfinite"], true);
        assert!(v["report"]["mean_delta"].is_null());
        let back: ShiftReport = report_from_json(&text).unwrap();
        assert!(back.mean_delta.is_nan());
    }

    #[test]
    fn edge_parse_errors_name_the_line() {
        let p = Path::new("edges.tsv");
        let err = parse_edges(p, "0\t1\n# comment\n1\t7\n", 3).unwrap_err();
        assert_eq!(err.to_string(), "edges.tsv:3: node id 7 out of range (num_nodes = 3)");
        assert!(parse_edges(p, "0\tx\n", 3).is_err());
        assert_eq!(parse_edges(p, "0\t1 # trailing\n\n2 1\n", 3).unwrap(), vec![(0, 1), (2, 1)]);
    }

    #[test]
    fn ragged_feature_row_rejected() {
        let p = Path::new("features.csv");
        let err = parse_features(p, "1,2,3\n4,5\n6,7,8\n", 3, 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("features.csv:2:"), "{msg}");
        assert!(msg.contains("row 1 has 2 columns"), "{msg}");
    }

    #[test]
    fn label_tokens() {
        let p = Path::new("labels.txt");
        assert_eq!(
            parse_labels(p, "0\n1\n?\n", 3).unwrap(),
            vec![Label::Normal, Label::Anomalous, Label::Unlabeled]
        );
        let err = parse_labels(p, "0\n2\n?\n", 3).unwrap_err();
        assert_eq!(err.to_string(), "labels.txt:2: unknown label token '2'");
    }
}
