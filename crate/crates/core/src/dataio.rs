//! Embedding datasets on disk, episode files, episode sampling and synthetic
//! Gaussian data.
//!
//! Two dataset formats are supported. JSONL holds one record per line,
//! `{"id": .., "label": .., "vector": [..], "text": ..}` with `text`
//! optional; a first line of the form `{"meta": {..}}` carries provenance.
//! The binary format is
//!
//! ```text
//! "SLPB" | version u16 | D u32 | count u64 | records...
//! record = id_len u32 | id utf-8 | label_len u32 | label utf-8 | D × f64
//! ```
//!
//! with every integer and float little-endian.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectorspace::EmbeddingVector;

const MAGIC: &[u8; 4] = b"SLPB";
pub const BINARY_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingMode {
    SequenceLevel,
    TokenLevel,
}

/// Where the vectors came from. Only JSONL files carry it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<PoolingMode>,
    /// Finer pooling choice, e.g. `cls` or `token-mean`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling_detail: Option<String>,
    /// Anything else the producer recorded.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Binary,
}

impl DataFormat {
    /// `.slpb` and `.bin` are binary, anything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("slpb") | Some("bin") => DataFormat::Binary,
            _ => DataFormat::Jsonl,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "binary" | "bin" => Ok(DataFormat::Binary),
            other => Err(Error::usage(format!(
                "unknown data format {other:?} (expected jsonl or binary)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    instances: Vec<EmbeddingVector>,
    texts: HashMap<String, String>,
    index: HashMap<String, usize>,
    pub provenance: Provenance,
}

impl EmbeddingDataset {
    /// Validates dimensions, finiteness and id uniqueness. Error positions
    /// are 1-based record numbers.
    pub fn new(instances: Vec<EmbeddingVector>, provenance: Provenance) -> Result<Self> {
        let first = instances
            .first()
            .ok_or_else(|| Error::usage("dataset has no instances"))?;
        let dim = first.dim();
        let mut index = HashMap::with_capacity(instances.len());
        for (i, v) in instances.iter().enumerate() {
            check_record(v, dim).map_err(|message| Error::Load {
                line: i + 1,
                message,
            })?;
            if index.insert(v.id.clone(), i).is_some() {
                return Err(Error::Load {
                    line: i + 1,
                    message: format!("duplicate id {:?}", v.id),
                });
            }
        }
        Ok(Self {
            dim,
            instances,
            texts: HashMap::new(),
            index,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[EmbeddingVector] {
        &self.instances
    }

    pub fn get(&self, id: &str) -> Result<&EmbeddingVector> {
        self.index
            .get(id)
            .map(|&i| &self.instances[i])
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }

    pub fn text(&self, id: &str) -> Option<&str> {
        self.texts.get(id).map(String::as_str)
    }

    /// Class labels in lexicographic order.
    pub fn classes(&self) -> Vec<&str> {
        self.by_class().into_keys().collect()
    }

    /// Instance indices per class, in dataset order within each class.
    pub fn by_class(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, v) in self.instances.iter().enumerate() {
            out.entry(v.label.as_str()).or_default().push(i);
        }
        out
    }

    /// Resolves a list of ids to owned vectors.
    pub fn select(&self, ids: &[String]) -> Result<Vec<EmbeddingVector>> {
        ids.iter().map(|id| self.get(id).cloned()).collect()
    }
}

fn check_record(v: &EmbeddingVector, dim: usize) -> std::result::Result<(), String> {
    if v.id.is_empty() {
        return Err("empty id".into());
    }
    if v.label.is_empty() {
        return Err(format!("record {:?} has an empty label", v.id));
    }
    if v.dim() != dim {
        return Err(format!(
            "record {:?} has dimension {}, expected {dim}",
            v.id,
            v.dim()
        ));
    }
    if dim == 0 {
        return Err(format!("record {:?} has an empty vector", v.id));
    }
    if let Some(j) = v.values.iter().position(|x| !x.is_finite()) {
        return Err(format!("record {:?} has a non-finite value at index {j}", v.id));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    label: String,
    // null stands in for NaN/Infinity tokens, see `null_out_nonfinite`
    vector: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Deserialize)]
struct MetaLine {
    meta: Provenance,
}

/// Python's json module writes NaN and Infinity as bare tokens, which are not
/// JSON. Replacing them with null lets the record parse so the error can name
/// it.
fn null_out_nonfinite(line: &str) -> std::borrow::Cow<'_, str> {
    if !["NaN", "Infinity"].iter().any(|t| line.contains(t)) {
        return line.into();
    }
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(ch) = rest.chars().next() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
        } else if ch == '"' {
            in_string = true;
        } else {
            let token = ["-Infinity", "Infinity", "NaN"]
                .into_iter()
                .find(|t| rest.starts_with(t));
            if let Some(t) = token {
                out.push_str("null");
                rest = &rest[t.len()..];
                continue;
            }
        }
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out.into()
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<EmbeddingDataset> {
    let mut instances = Vec::new();
    let mut texts = HashMap::new();
    let mut provenance = Provenance::default();
    let mut seen_record = false;
    let mut lines_of = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let load_err = |message: String| Error::Load {
            line: lineno,
            message,
        };
        if !seen_record && trimmed.starts_with("{\"meta\"") {
            let meta: MetaLine = serde_json::from_str(trimmed).map_err(|e| load_err(e.to_string()))?;
            provenance = meta.meta;
            seen_record = true;
            continue;
        }
        seen_record = true;
        let rec: JsonRecord =
            serde_json::from_str(&null_out_nonfinite(trimmed)).map_err(|e| load_err(e.to_string()))?;
        let values = rec
            .vector
            .iter()
            .enumerate()
            .map(|(j, v)| v.ok_or(j))
            .collect::<std::result::Result<Vec<f64>, usize>>()
            .map_err(|j| load_err(format!("record {:?} has a non-finite value at index {j}", rec.id)))?;
        if let Some(t) = rec.text {
            texts.insert(rec.id.clone(), t);
        }
        instances.push(EmbeddingVector::new(rec.id, rec.label, values));
        lines_of.push(lineno);
    }
    if instances.is_empty() {
        return Err(Error::Format("no records found".into()));
    }
    // report validation failures against file lines, not record numbers
    let mut ds = EmbeddingDataset::new(instances, provenance).map_err(|e| match e {
        Error::Load { line, message } => Error::Load {
            line: lines_of[line - 1],
            message,
        },
        other => other,
    })?;
    ds.texts = texts;
    Ok(ds)
}

pub fn write_jsonl<W: Write>(dataset: &EmbeddingDataset, mut w: W) -> Result<()> {
    if !dataset.provenance.is_empty() {
        serde_json::to_writer(&mut w, &serde_json::json!({ "meta": &dataset.provenance }))?;
        w.write_all(b"\n")?;
    }
    for v in &dataset.instances {
        let rec = JsonRecord {
            id: v.id.clone(),
            label: v.label.clone(),
            vector: v.values.iter().map(|x| Some(*x)).collect(),
            text: dataset.texts.get(&v.id).cloned(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Binary
// ---------------------------------------------------------------------------

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: impl FnOnce() -> Error) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => what(),
        _ => Error::Io(e),
    })
}

pub fn read_binary<R: Read>(mut r: R) -> Result<EmbeddingDataset> {
    let mut header = [0u8; 4 + 2 + 4 + 8];
    read_exact_or(&mut r, &mut header, || Error::Format("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("missing SLPB magic bytes".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != BINARY_VERSION {
        return Err(Error::Format(format!(
            "unsupported binary version {version} (expected {BINARY_VERSION})"
        )));
    }
    let dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[10..18].try_into().unwrap());
    if dim == 0 {
        return Err(Error::Format("dimension is 0".into()));
    }

    let mut instances = Vec::with_capacity(count.min(1 << 20) as usize);
    for rec in 1..=count as usize {
        let truncated = || Error::Corrupt {
            record: rec,
            message: "truncated".into(),
        };
        let string = |r: &mut R| -> Result<String> {
            let mut len = [0u8; 4];
            read_exact_or(r, &mut len, truncated)?;
            let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
            read_exact_or(r, &mut buf, truncated)?;
            String::from_utf8(buf).map_err(|_| Error::Corrupt {
                record: rec,
                message: "invalid UTF-8".into(),
            })
        };
        let id = string(&mut r)?;
        let label = string(&mut r)?;
        let mut raw = vec![0u8; 8 * dim];
        read_exact_or(&mut r, &mut raw, truncated)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        instances.push(EmbeddingVector::new(id, label, values));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format(format!("trailing bytes after {count} records")));
    }
    EmbeddingDataset::new(instances, Provenance::default()).map_err(|e| match e {
        Error::Load { line, message } => Error::Corrupt {
            record: line,
            message,
        },
        other => other,
    })
}

pub fn write_binary<W: Write>(dataset: &EmbeddingDataset, mut w: W) -> Result<()> {
    let dim = u32::try_from(dataset.dim).map_err(|_| Error::usage("dimension exceeds u32"))?;
    w.write_all(MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    for v in &dataset.instances {
        for s in [&v.id, &v.label] {
            let len = u32::try_from(s.len()).map_err(|_| Error::usage("string exceeds u32 length"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        for x in &v.values {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<EmbeddingDataset> {
    let file = File::open(path)?;
    match format {
        DataFormat::Jsonl => read_jsonl(BufReader::new(file)),
        DataFormat::Binary => read_binary(BufReader::new(file)),
    }
}

pub fn save_dataset(dataset: &EmbeddingDataset, path: &Path, format: DataFormat) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        DataFormat::Jsonl => write_jsonl(dataset, w),
        DataFormat::Binary => write_binary(dataset, w),
    }
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub task: String,
    pub shots: usize,
    pub support: Vec<String>,
    pub query: Vec<String>,
}

impl Episode {
    /// Ids resolve, support and query are disjoint, and the support holds
    /// exactly `shots` instances of every class it contains.
    pub fn validate(&self, dataset: &EmbeddingDataset) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::usage(format!("episode {:?} has shots = 0", self.task)));
        }
        if self.support.is_empty() || self.query.is_empty() {
            return Err(Error::usage(format!(
                "episode {:?} needs a non-empty support and query",
                self.task
            )));
        }
        let support: HashSet<&str> = self.support.iter().map(String::as_str).collect();
        if support.len() != self.support.len() {
            return Err(Error::usage(format!("episode {:?} repeats a support id", self.task)));
        }
        if let Some(id) = self.query.iter().find(|q| support.contains(q.as_str())) {
            return Err(Error::usage(format!(
                "episode {:?}: {id} is in both support and query",
                self.task
            )));
        }
        let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
        for id in &self.support {
            *per_class.entry(dataset.get(id)?.label.as_str()).or_default() += 1;
        }
        for id in &self.query {
            dataset.get(id)?;
        }
        if let Some((class, n)) = per_class.iter().find(|(_, &n)| n != self.shots) {
            return Err(Error::usage(format!(
                "episode {:?}: class {class} has {n} support instances, expected {}",
                self.task, self.shots
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EpisodeFile {
    Many(Vec<Episode>),
    One(Episode),
}

/// Reads an episode file holding a single episode object or an array.
pub fn read_episodes(text: &str) -> Result<Vec<Episode>> {
    match serde_json::from_str(text)? {
        EpisodeFile::Many(v) => Ok(v),
        EpisodeFile::One(e) => Ok(vec![e]),
    }
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    read_episodes(&std::fs::read_to_string(path)?)
}

/// `n_episodes` seeded episodes: per class, `shots` support instances drawn
/// without replacement; every other instance goes to the query set.
pub fn sample_episodes(
    dataset: &EmbeddingDataset,
    shots: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if shots == 0 {
        return Err(Error::usage("shots must be at least 1"));
    }
    let classes = dataset.by_class();
    for (class, idx) in &classes {
        if idx.len() < shots + 1 {
            return Err(Error::InsufficientInstances {
                class: class.to_string(),
                available: idx.len(),
                required: shots + 1,
            });
        }
    }
    let task = dataset
        .provenance
        .extra
        .get("task")
        .and_then(|v| v.as_str())
        .unwrap_or("episodes")
        .to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut in_support = vec![false; dataset.len()];
        let mut support = Vec::with_capacity(shots * classes.len());
        for idx in classes.values() {
            let mut pool = idx.clone();
            pool.shuffle(&mut rng);
            for &i in &pool[..shots] {
                in_support[i] = true;
                support.push(dataset.instances[i].id.clone());
            }
        }
        let query = dataset
            .instances
            .iter()
            .zip(&in_support)
            .filter(|(_, s)| !**s)
            .map(|(v, _)| v.id.clone())
            .collect();
        out.push(Episode {
            task: task.clone(),
            shots,
            support,
            query,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub label: String,
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<SyntheticClass>,
}

/// Isotropic Gaussian blobs, one per class. Ids are `<label>-<index>`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<EmbeddingDataset> {
    let first = spec
        .classes
        .first()
        .ok_or_else(|| Error::usage("synthetic spec lists no classes"))?;
    let dim = first.mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    for class in &spec.classes {
        if !(class.sigma > 0.0 && class.sigma.is_finite()) {
            return Err(Error::usage(format!(
                "class {}: sigma must be positive, got {}",
                class.label, class.sigma
            )));
        }
        if class.mean.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: class.mean.len(),
            });
        }
        let noise = Normal::new(0.0, class.sigma).map_err(|e| Error::usage(e.to_string()))?;
        for i in 0..class.count {
            let values = class.mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            instances.push(EmbeddingVector::new(
                format!("{}-{i:04}", class.label),
                class.label.clone(),
                values,
            ));
        }
    }
    let mut extra = BTreeMap::new();
    extra.insert("generator".to_string(), serde_json::json!("gaussian"));
    extra.insert("seed".to_string(), serde_json::json!(seed));
    EmbeddingDataset::new(
        instances,
        Provenance {
            extra,
            ..Provenance::default()
        },
    )
}
