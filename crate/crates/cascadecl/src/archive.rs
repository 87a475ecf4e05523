//! On-disk dataset archives.
//!
//! A dataset is a directory holding `graphs.bin` (a versioned,
//! length-prefixed binary stream of propagation graphs), `manifest.json`
//! (counts and build flags) and, once a model has been fitted, `norm.json`
//! (the z-score statistics of the training split). All integers and floats
//! are little-endian, so identical datasets serialize to identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{ClipSpec, PropagationGraph};
use crate::features::{FeatureMode, NormStats};
use crate::records::Label;

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PGV1";

pub const GRAPHS_FILE: &str = "graphs.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NORM_FILE: &str = "norm.json";

/// Counts and flags describing how a dataset was built; stored as
/// `manifest.json` next to the graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub feature_mode: FeatureMode,
    pub feature_dim: usize,
    pub graph_count: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub time_window_h: u32,
    pub use_follow: bool,
    pub clip: Option<ClipSpec>,
    pub dropped_empty_clip: usize,
    pub dropped_invalid: usize,
    pub orphaned_retweets_dropped: usize,
    pub missing_timeline_nodes: usize,
    pub source: String,
}

/// A set of labeled propagation graphs plus its manifest.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub graphs: Vec<PropagationGraph>,
    pub manifest: DatasetManifest,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.manifest.feature_dim
    }
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: bad magic (not a graph archive)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported archive version {got} (expected {ARCHIVE_FORMAT_VERSION})")]
    UnsupportedVersion { path: PathBuf, got: u32 },
    #[error("{path}: corrupt archive at byte {offset}: {message}")]
    Corrupt {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{path}: manifest disagrees with graphs ({message})")]
    ManifestMismatch { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` atomically: a sibling temp file is written,
/// flushed and renamed over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn to_pretty_json<T: Serialize>(value: &T, path: &Path) -> Result<Vec<u8>, ArchiveError> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|source| ArchiveError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    out.push(b'\n');
    Ok(out)
}

/// Serializes one graph into the length-prefixed record format.
fn encode_graph(g: &PropagationGraph, out: &mut Vec<u8>) {
    let mut body = Vec::new();
    body.extend_from_slice(&(g.news_id.len() as u32).to_le_bytes());
    body.extend_from_slice(g.news_id.as_bytes());
    body.extend_from_slice(&(g.n as u32).to_le_bytes());
    body.extend_from_slice(&(g.features.ncols() as u32).to_le_bytes());
    body.push(g.label.index() as u8);
    body.extend_from_slice(&(g.edges.len() as u64).to_le_bytes());
    for &(s, d) in &g.edges {
        body.extend_from_slice(&s.to_le_bytes());
        body.extend_from_slice(&d.to_le_bytes());
    }
    for &v in g.features.iter() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
}

/// Serializes a whole dataset to the `graphs.bin` byte format.
pub fn encode_graphs(graphs: &[PropagationGraph]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARCHIVE_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(graphs.len() as u64).to_le_bytes());
    for g in graphs {
        encode_graph(g, &mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: impl Into<String>) -> ArchiveError {
        ArchiveError::Corrupt {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], ArchiveError> {
        if self.pos + len > self.bytes.len() {
            return Err(self.corrupt(format!(
                "needed {len} bytes, only {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ArchiveError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses `graphs.bin` bytes. Node metadata is not stored in the archive,
/// so loaded graphs carry `None` for every node's meta.
pub fn decode_graphs(bytes: &[u8], path: &Path) -> Result<Vec<PropagationGraph>, ArchiveError> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(ArchiveError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()?;
    if version != ARCHIVE_FORMAT_VERSION {
        return Err(ArchiveError::UnsupportedVersion {
            path: path.to_path_buf(),
            got: version,
        });
    }
    let count = r.u64()? as usize;
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let block_len = r.u64()? as usize;
        let block_end = r.pos + block_len;
        let id_len = r.u32()? as usize;
        let news_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|e| r.corrupt(format!("news id not utf-8: {e}")))?
            .to_string();
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let label_byte = r.u8()?;
        let label = Label::from_index(label_byte as usize)
            .ok_or_else(|| r.corrupt(format!("invalid label byte {label_byte}")))?;
        let m = r.u64()? as usize;
        let mut edges = BTreeSet::new();
        for _ in 0..m {
            let s = r.u32()?;
            let dst = r.u32()?;
            if s as usize >= n || dst as usize >= n {
                return Err(r.corrupt(format!("edge ({s},{dst}) out of range n={n}")));
            }
            edges.insert((s, dst));
        }
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            let v = r.f64()?;
            if !v.is_finite() {
                return Err(r.corrupt("non-finite feature value"));
            }
            data.push(v);
        }
        if r.pos != block_end {
            return Err(r.corrupt(format!(
                "graph block length mismatch (expected end {block_end})"
            )));
        }
        let features = Array2::from_shape_vec((n, d), data)
            .map_err(|e| r.corrupt(format!("feature matrix shape: {e}")))?;
        graphs.push(PropagationGraph {
            news_id,
            n,
            edges,
            features,
            label,
            node_meta: vec![None; n],
        });
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt("trailing bytes after final graph"));
    }
    Ok(graphs)
}

/// Writes a dataset archive directory (graphs, manifest and optionally the
/// normalization statistics). Existing files are replaced atomically.
pub fn save_dataset(
    dir: &Path,
    dataset: &GraphDataset,
    norm: Option<&NormStats>,
) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let graphs_path = dir.join(GRAPHS_FILE);
    write_atomic(&graphs_path, &encode_graphs(&dataset.graphs)).map_err(io_err(&graphs_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    write_atomic(&manifest_path, &to_pretty_json(&dataset.manifest, &manifest_path)?)
        .map_err(io_err(&manifest_path))?;
    if let Some(stats) = norm {
        let norm_path = dir.join(NORM_FILE);
        write_atomic(&norm_path, &to_pretty_json(stats, &norm_path)?).map_err(io_err(&norm_path))?;
    }
    Ok(())
}

/// Persists normalization statistics into an existing archive directory.
pub fn save_norm(dir: &Path, stats: &NormStats) -> Result<(), ArchiveError> {
    let norm_path = dir.join(NORM_FILE);
    write_atomic(&norm_path, &to_pretty_json(stats, &norm_path)?).map_err(io_err(&norm_path))
}

/// Loads an archive directory; returns the dataset and, if present, the
/// stored normalization statistics. Cross-checks manifest counts against
/// the decoded graphs.
pub fn load_dataset(dir: &Path) -> Result<(GraphDataset, Option<NormStats>), ArchiveError> {
    let graphs_path = dir.join(GRAPHS_FILE);
    let bytes = fs::read(&graphs_path).map_err(io_err(&graphs_path))?;
    let graphs = decode_graphs(&bytes, &graphs_path)?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_bytes = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&manifest_bytes).map_err(|source| ArchiveError::Json {
            path: manifest_path.clone(),
            source,
        })?;

    if manifest.graph_count != graphs.len() {
        return Err(ArchiveError::ManifestMismatch {
            path: manifest_path,
            message: format!(
                "manifest says {} graphs, archive holds {}",
                manifest.graph_count,
                graphs.len()
            ),
        });
    }
    if let Some(g) = graphs.iter().find(|g| g.features.ncols() != manifest.feature_dim) {
        return Err(ArchiveError::ManifestMismatch {
            path: manifest_path,
            message: format!(
                "manifest feature_dim {} but graph {} has {}",
                manifest.feature_dim,
                g.news_id,
                g.features.ncols()
            ),
        });
    }

    let norm_path = dir.join(NORM_FILE);
    let norm = match fs::read(&norm_path) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(|source| ArchiveError::Json {
            path: norm_path,
            source,
        })?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(source) => return Err(ArchiveError::Io { path: norm_path, source }),
    };

    Ok((GraphDataset { graphs, manifest }, norm))
}
