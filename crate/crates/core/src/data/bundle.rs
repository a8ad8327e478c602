//! On-disk bundle layout:
//!
//! ```text
//! <dir>/manifest.json          version, dtype, dims, classes, video records
//! <dir>/features.bin           f32 little-endian, [video][frame][token][channel]
//! <dir>/teacher.csv            optional: id, then one probability per class
//! <dir>/text_embeddings.csv    optional: class name, then d' components
//! ```
//!
//! Load failures are split by cause: an unreadable or inconsistent manifest
//! is [`Error::Manifest`], a payload holding a whole number of video records
//! that disagrees with the manifest is [`Error::Shape`], and a payload that
//! ends inside a record (or holds non-finite values) is [`Error::Payload`].

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use super::{BundleDims, FeatureBundle};
use crate::error::{Error, Result};
use crate::framemetric::VideoTokenFeatures;
use crate::glac::{TeacherDistribution, TextEmbeddingBank};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const TEACHER_FILE: &str = "teacher.csv";
pub const TEXT_FILE: &str = "text_embeddings.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub tokens: usize,
    pub d: usize,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub novel_classes: Vec<usize>,
    pub videos: Vec<VideoRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub class: usize,
    /// Byte offset of the record inside `features.bin`.
    pub offset: u64,
}

fn manifest_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Manifest(msg.into()))
}

fn payload_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Payload(msg.into()))
}

/// Writes `bundle` into directory `dir`, creating it if needed.
///
/// Features are narrowed to f32; bundles built from f32 data round-trip exactly.
pub fn save_bundle(bundle: &FeatureBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let dims = bundle.dims();
    let record = (dims.frames * dims.tokens * dims.channels * 4) as u64;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dtype: DTYPE.to_string(),
        frames: dims.frames,
        tokens: dims.tokens,
        d: dims.channels,
        classes: bundle.class_names().to_vec(),
        novel_classes: bundle.novel_classes().to_vec(),
        videos: bundle
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| VideoRecord {
                id: id.clone(),
                class: bundle.label(i),
                offset: i as u64 * record,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;

    let mut payload = Vec::with_capacity(record as usize * bundle.len());
    for v in bundle.videos() {
        for &x in v.data().iter() {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(dir.join(FEATURES_FILE), payload)?;

    if let Some(teacher) = bundle.teacher() {
        let mut w = csv::Writer::from_path(dir.join(TEACHER_FILE)).map_err(csv_io)?;
        let mut header = vec!["id".to_string()];
        header.extend(bundle.class_names().iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for (id, q) in bundle.ids().iter().zip(teacher) {
            let mut row = vec![id.clone()];
            row.extend(q.raw().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
    }
    if let Some(text) = bundle.text() {
        let mut w = csv::Writer::from_path(dir.join(TEXT_FILE)).map_err(csv_io)?;
        let mut header = vec!["class".to_string()];
        header.extend((0..text.dim()).map(|i| format!("e{i}")));
        w.write_record(&header).map_err(csv_io)?;
        for (name, v) in bundle.class_names().iter().zip(text.vectors()) {
            let mut row = vec![name.clone()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Payload(e.to_string())
}

fn validate_manifest(m: &Manifest) -> Result<()> {
    if m.version != FORMAT_VERSION {
        return manifest_err(format!("unsupported format version {}", m.version));
    }
    if m.dtype != DTYPE {
        return manifest_err(format!("unsupported dtype {:?}, expected {DTYPE:?}", m.dtype));
    }
    if m.frames == 0 || m.tokens < 2 || m.d < 2 {
        return manifest_err(format!(
            "invalid dims T={} tokens={} d={}",
            m.frames, m.tokens, m.d
        ));
    }
    if m.classes.is_empty() {
        return manifest_err("no classes declared");
    }
    if let Some(v) = m.videos.iter().find(|v| v.class >= m.classes.len()) {
        return manifest_err(format!("video {:?} references undeclared class {}", v.id, v.class));
    }
    if let Some(c) = m.novel_classes.iter().find(|&&c| c >= m.classes.len()) {
        return manifest_err(format!("novel class {c} is not declared"));
    }
    let mut ids: Vec<&str> = m.videos.iter().map(|v| v.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return manifest_err(format!("duplicate video id {:?}", w[0]));
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    validate_manifest(&m)?;
    Ok(m)
}

/// Reads a bundle directory written by [`save_bundle`].
pub fn load_bundle(dir: &Path) -> Result<FeatureBundle> {
    let m = read_manifest(dir)?;
    let payload = fs::read(dir.join(FEATURES_FILE))?;
    let values_per_video = m.frames * m.tokens * m.d;
    let record = values_per_video * 4;
    if payload.len() % record != 0 {
        return payload_err(format!(
            "{} holds {} bytes, not a whole number of {record}-byte video records (truncated?)",
            FEATURES_FILE,
            payload.len()
        ));
    }
    let stored = payload.len() / record;
    if stored != m.videos.len() {
        return Err(Error::Shape(format!(
            "manifest lists {} videos of {}x{}x{} but {} holds {stored} records",
            m.videos.len(),
            m.frames,
            m.tokens,
            m.d,
            FEATURES_FILE
        )));
    }
    let mut used = vec![false; stored];
    let mut videos = Vec::with_capacity(stored);
    for rec in &m.videos {
        let slot = rec.offset as usize / record;
        if rec.offset as usize % record != 0 || slot >= stored || used[slot] {
            return manifest_err(format!("video {:?} has invalid offset {}", rec.id, rec.offset));
        }
        used[slot] = true;
        let bytes = &payload[rec.offset as usize..rec.offset as usize + record];
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return payload_err(format!("video {:?} contains non-finite values", rec.id));
        }
        let data = Array3::from_shape_vec((m.frames, m.tokens, m.d), values).expect("record length checked");
        videos.push(VideoTokenFeatures::new(data, Some(rec.class)).map_err(|e| Error::Payload(e.to_string()))?);
    }
    let dims = BundleDims {
        frames: m.frames,
        tokens: m.tokens,
        channels: m.d,
    };
    let ids: Vec<String> = m.videos.iter().map(|v| v.id.clone()).collect();
    let mut bundle = FeatureBundle::new(dims, m.classes.clone(), ids, videos)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    if !m.novel_classes.is_empty() {
        bundle = bundle
            .with_novel_classes(m.novel_classes.clone())
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    let teacher_path = dir.join(TEACHER_FILE);
    if teacher_path.exists() {
        let teacher = read_teacher(&teacher_path, &bundle)?;
        bundle = bundle.with_teacher(teacher)?;
    }
    let text_path = dir.join(TEXT_FILE);
    if text_path.exists() {
        let text = read_text(&text_path, &bundle)?;
        bundle = bundle.with_text(text)?;
    }
    Ok(bundle)
}

fn parse_floats(fields: csv::StringRecord, file: &str, line: usize) -> Result<(String, Vec<f64>)> {
    let mut it = fields.iter();
    let key = it.next().unwrap_or_default().to_string();
    let values = it
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::Payload(format!("{file} line {line}: cannot parse {f:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((key, values))
}

fn read_teacher(path: &Path, bundle: &FeatureBundle) -> Result<Vec<TeacherDistribution>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_io)?;
    let mut rows: Vec<Option<TeacherDistribution>> = vec![None; bundle.len()];
    let index: std::collections::HashMap<&str, usize> =
        bundle.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    for (line, rec) in reader.records().enumerate() {
        let (id, q) = parse_floats(rec.map_err(csv_io)?, TEACHER_FILE, line + 2)?;
        let Some(&i) = index.get(id.as_str()) else {
            return payload_err(format!("{TEACHER_FILE}: unknown video id {id:?}"));
        };
        if q.len() != bundle.classes() {
            return payload_err(format!(
                "{TEACHER_FILE}: row {id:?} has {} values for {} classes",
                q.len(),
                bundle.classes()
            ));
        }
        let dist = TeacherDistribution::new(q).map_err(|e| Error::Payload(format!("{TEACHER_FILE}: row {id:?}: {e}")))?;
        if rows[i].replace(dist).is_some() {
            return payload_err(format!("{TEACHER_FILE}: duplicate row for {id:?}"));
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::Payload(format!("{TEACHER_FILE}: no row for {:?}", bundle.ids()[i]))))
        .collect()
}

fn read_text(path: &Path, bundle: &FeatureBundle) -> Result<TextEmbeddingBank> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_io)?;
    let mut vectors = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let (name, v) = parse_floats(rec.map_err(csv_io)?, TEXT_FILE, line + 2)?;
        if bundle.class_names().get(vectors.len()) != Some(&name) {
            return payload_err(format!("{TEXT_FILE} line {}: expected class {:?}, found {name:?}", line + 2,
                bundle.class_names().get(vectors.len())));
        }
        vectors.push(Array1::from(v));
    }
    TextEmbeddingBank::new(vectors).map_err(|e| Error::Payload(format!("{TEXT_FILE}: {e}")))
}
