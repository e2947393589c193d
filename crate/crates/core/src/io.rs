//! File formats.
//!
//! * features: JSON lines `{"id": "...", "features": [f64, ...]}`
//! * annotations: JSON lines `{"image_id": "...", "tuples": [["tok", ...], ...]}`,
//!   tokens in chain order
//! * word vectors: optional `count dim` header, then `token v1 .. v_dim` per line
//! * vocabularies: JSON array of `{"argument_type", "tokens"}`
//! * predictions: JSON lines `{"image_id", "predictions": [{"tuple", "score"}]}`
//! * model: a `tuplecrf-model <version>` header line followed by a JSON body
//!
//! Loaders reject malformed input instead of coercing it; errors carry the
//! file and line.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::TrainConfig;
use crate::model::Model;
use crate::types::{AnnotatedImage, ChainSpec, Dataset, Vocabulary};

pub const MODEL_MAGIC: &str = "tuplecrf-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines<'a, R: BufRead + 'a>(
    reader: R,
    path: &'a Path,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, line)| line.map(|l| (i + 1, l)).map_err(|e| Error::io(path, e)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn parse_json_line<T: DeserializeOwned>(line: &str, path: &Path, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- features

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureLine {
    id: String,
    features: Vec<f64>,
}

/// Image features in file order, indexed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    ids: Vec<String>,
    vectors: Vec<DVector<f64>>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn insert(&mut self, id: String, v: DVector<f64>) -> Result<()> {
        if self.index.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate image id {id:?}")));
        }
        if let Some(d) = self.dim() {
            if d != v.len() {
                return Err(Error::dims(format!("features of {id}"), d, v.len()));
            }
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Common vector length, if any vectors are present.
    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(|v| v.len())
    }

    pub fn get(&self, id: &str) -> Option<&DVector<f64>> {
        self.index.get(id).map(|&i| &self.vectors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DVector<f64>)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }
}

pub fn load_features(path: &Path) -> Result<FeatureTable> {
    let mut table = FeatureTable::default();
    for item in numbered_lines(open(path)?, path) {
        let (lineno, line) = item?;
        let rec: FeatureLine = parse_json_line(&line, path, lineno)?;
        if rec.features.is_empty() {
            return Err(Error::parse(path, lineno, "empty feature vector"));
        }
        if rec.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite feature value"));
        }
        table
            .insert(rec.id, DVector::from_vec(rec.features))
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(table)
}

pub fn write_features<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a DVector<f64>)>) -> Result<()> {
    write_lines(
        path,
        rows.into_iter().map(|(id, v)| FeatureLine {
            id: id.to_owned(),
            features: v.iter().copied().collect(),
        }),
    )
}

// ------------------------------------------------------------- annotations

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub tuples: Vec<Vec<String>>,
    #[serde(skip)]
    pub line: usize,
}

/// Raw annotation records. Tuple arity is checked against `arity` when
/// given, otherwise against the first tuple in the file.
pub fn read_annotation_records(path: &Path, arity: Option<usize>) -> Result<Vec<AnnotationRecord>> {
    let mut arity = arity;
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for item in numbered_lines(open(path)?, path) {
        let (lineno, line) = item?;
        let mut rec: AnnotationRecord = parse_json_line(&line, path, lineno)?;
        rec.line = lineno;
        if let Some(prev) = seen.insert(rec.image_id.clone(), lineno) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate image id {:?} (first on line {prev})", rec.image_id),
            ));
        }
        if arity.is_none() {
            arity = rec.tuples.first().map(Vec::len);
        }
        if let Some(bad) = rec.tuples.iter().find(|t| Some(t.len()) != arity) {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "tuple {:?} has {} fields, expected {}",
                    bad,
                    bad.len(),
                    arity.unwrap_or(0)
                ),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    write_lines(path, records)
}

/// An annotated image that could not be used, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub image_id: String,
    pub line: usize,
    pub reason: String,
}

/// Maps one record's tokens to label ids, or explains why it cannot.
pub fn record_labels(spec: &ChainSpec, rec: &AnnotationRecord) -> std::result::Result<BTreeSet<Vec<usize>>, String> {
    let mut set = BTreeSet::new();
    for tuple in &rec.tuples {
        let mut ids = Vec::with_capacity(tuple.len());
        for (t, token) in tuple.iter().enumerate() {
            let vocab = spec.vocabulary(t);
            match vocab.lookup(token) {
                Some(id) => ids.push(id),
                None => return Err(format!("token {token:?} not in {} vocabulary", vocab.argument_type())),
            }
        }
        set.insert(ids);
    }
    if set.is_empty() {
        return Err("no tuples".into());
    }
    Ok(set)
}

/// Joins annotation records with features. Images without features or with
/// out-of-vocabulary tokens are listed in the exclusion report.
pub fn records_to_dataset(
    records: &[AnnotationRecord],
    spec: &ChainSpec,
    features: &FeatureTable,
) -> Result<(Dataset, Vec<Exclusion>)> {
    let mut images = Vec::new();
    let mut excluded = Vec::new();
    let mut exclude = |rec: &AnnotationRecord, reason: String| {
        excluded.push(Exclusion {
            image_id: rec.image_id.clone(),
            line: rec.line,
            reason,
        })
    };
    for rec in records {
        if let Some(bad) = rec.tuples.iter().find(|t| t.len() != spec.len()) {
            return Err(Error::InvalidArgument(format!(
                "line {}: tuple {:?} has {} fields, expected {}",
                rec.line,
                bad,
                bad.len(),
                spec.len()
            )));
        }
        let Some(x) = features.get(&rec.image_id) else {
            exclude(rec, "no features".into());
            continue;
        };
        if x.len() != spec.input_dim() {
            exclude(
                rec,
                format!("feature length {} != input dimension {}", x.len(), spec.input_dim()),
            );
            continue;
        }
        match record_labels(spec, rec) {
            Ok(gold_tuples) => images.push(AnnotatedImage {
                image_id: rec.image_id.clone(),
                features: x.clone(),
                gold_tuples,
            }),
            Err(reason) => exclude(rec, reason),
        }
    }
    Ok((Dataset::new(spec.clone(), images)?, excluded))
}

pub fn load_annotations(path: &Path, spec: &ChainSpec, features: &FeatureTable) -> Result<(Dataset, Vec<Exclusion>)> {
    let records = read_annotation_records(path, Some(spec.len()))?;
    records_to_dataset(&records, spec, features)
}

// ------------------------------------------------------------ vocabularies

pub fn write_vocabularies(path: &Path, vocabs: &[Vocabulary]) -> Result<()> {
    write_json(path, &vocabs)
}

pub fn read_vocabularies(path: &Path) -> Result<Vec<Vocabulary>> {
    read_json(path)
}

// ------------------------------------------------------------ word vectors

/// Parses the word-vector text format.
///
/// The first line is a header when it has exactly two integer fields and
/// `dim` is not 1. With `dim == None` the dimension comes from the header or
/// the first entry.
pub fn parse_word_vectors<R: BufRead>(reader: R, path: &Path, dim: Option<usize>) -> Result<Vec<(String, Vec<f64>)>> {
    let mut dim = dim;
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut expected_count = None;
    for (i, item) in numbered_lines(reader, path).enumerate() {
        let (lineno, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if i == 0 && fields.len() == 2 && dim != Some(1) {
            if let (Ok(count), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if let Some(want) = dim {
                    if want != d {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("header dimension {d}, expected {want}"),
                        ));
                    }
                }
                dim = Some(d);
                expected_count = Some(count);
                continue;
            }
        }
        let d = *dim.get_or_insert(fields.len().saturating_sub(1));
        if fields.len() != d + 1 || d == 0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected token and {d} values, found {} fields", fields.len()),
            ));
        }
        let token = fields[0].to_owned();
        let values = fields[1..]
            .iter()
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(path, lineno, format!("invalid value {s:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = seen.insert(token.clone(), lineno) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate token {token:?} (first on line {first})"),
            ));
        }
        out.push((token, values));
    }
    if let Some(count) = expected_count {
        if count != out.len() {
            return Err(Error::parse(
                path,
                1,
                format!("header announces {count} vectors, file has {}", out.len()),
            ));
        }
    }
    Ok(out)
}

pub fn read_word_vectors(path: &Path, dim: Option<usize>) -> Result<Vec<(String, Vec<f64>)>> {
    parse_word_vectors(open(path)?, path, dim)
}

/// Writes `matrix` (one row per vocabulary token) with a `count dim` header.
pub fn write_word_vectors(path: &Path, vocab: &Vocabulary, matrix: &DMatrix<f64>) -> Result<()> {
    if matrix.nrows() != vocab.len() {
        return Err(Error::dims("vector rows", vocab.len(), matrix.nrows()));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", matrix.nrows(), matrix.ncols()).map_err(io)?;
    for (token, row) in vocab.tokens().iter().zip(matrix.row_iter()) {
        write!(w, "{token}").map_err(io)?;
        for v in row.iter() {
            write!(w, " {v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

// ------------------------------------------------------------- predictions

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTuple {
    pub tuple: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub predictions: Vec<ScoredTuple>,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_lines(path, records)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    numbered_lines(open(path)?, path)
        .map(|item| {
            let (lineno, line) = item?;
            parse_json_line(&line, path, lineno)
        })
        .collect()
}

// ------------------------------------------------------------------ models

/// Self-contained model file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub model: Model,
    pub train_config: Option<TrainConfig>,
}

impl ModelFile {
    pub fn new(model: Model, train_config: Option<TrainConfig>) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model,
            train_config,
        }
    }
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{MODEL_MAGIC} {}", file.format_version).map_err(io)?;
    serde_json::to_writer(&mut w, file).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
    parse_model(&text, path)
}

pub fn parse_model(text: &str, path: &Path) -> Result<ModelFile> {
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    let version_err = || Error::Version {
        found: header.chars().take(64).collect(),
        expected: MODEL_FORMAT_VERSION,
    };
    match header.trim_end().split_once(' ') {
        Some((MODEL_MAGIC, v)) if v.parse::<u32>() == Ok(MODEL_FORMAT_VERSION) => {}
        _ => return Err(version_err()),
    }
    let malformed = |message: String| Error::MalformedModel {
        path: PathBuf::from(path),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| {
        if e.is_eof() {
            Error::Truncated(path.to_path_buf())
        } else {
            malformed(e.to_string())
        }
    })?;
    let file: ModelFile = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(version_err());
    }
    let m = file.model;
    let model = Model::new(m.spec, m.embeddings, m.params).map_err(|e| match e {
        Error::DimensionMismatch { what, expected, actual } => Error::Shape {
            matrix: what,
            expected,
            actual,
        },
        other => other,
    })?;
    Ok(ModelFile { model, ..file })
}
