//! Configuration database: one JSON document per workload cluster.
//!
//! Layout under the root directory:
//!
//! ```text
//! manifest.json          format version, cluster ids, fitted cluster model
//! clusters/<id>.json     one ConfDbEntry per cluster
//! traces/<id>.trace      representative workload of each cluster
//! .lock                  present while a writer holds the store
//! ```
//!
//! Every file is replaced by writing a temporary sibling and renaming it
//! over the target, so readers only ever see whole documents.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterModel, Point2};
use crate::pruning::PruneReport;
use crate::trace::{parse_trace, write_trace, IoRecord};
use crate::tuner::{GradeRecord, Perf};

pub const FORMAT_VERSION: u32 = 1;
pub const ENV_DB: &str = "SSD_AUTOTUNE_DB";

#[derive(Debug, Error)]
pub enum DbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt entry {key:?}: {message}")]
    Corrupt { key: String, message: String },
    #[error("store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("invalid cluster id {0:?}")]
    InvalidId(String),
    #[error("no entry for cluster {0:?}")]
    Missing(String),
    #[error("store opened read-only")]
    ReadOnly,
    #[error("unsupported format version {0}")]
    Version(u32),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DbError + '_ {
    move |source| DbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMeta {
    pub center: Point2,
    pub mean_intra_distance: f64,
    pub member_count: usize,
    /// Path of the representative trace, relative to the store root.
    #[serde(default)]
    pub representative_trace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfDbEntry {
    pub cluster_id: String,
    pub cluster_meta: ClusterMeta,
    pub reference_perf: BTreeMap<String, Perf>,
    pub records: Vec<GradeRecord>,
    #[serde(default)]
    pub prune_report: Option<PruneReport>,
}

impl ConfDbEntry {
    pub fn new(cluster_id: &str, cluster_meta: ClusterMeta) -> Self {
        ConfDbEntry {
            cluster_id: cluster_id.to_string(),
            cluster_meta,
            reference_perf: BTreeMap::new(),
            records: Vec::new(),
            prune_report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub clusters: Vec<String>,
    #[serde(default)]
    pub cluster_model: Option<ClusterModel>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            clusters: Vec::new(),
            cluster_model: None,
        }
    }
}

/// Ids become file names, so they are restricted to a portable alphabet.
pub fn validate_id(id: &str) -> Result<(), DbError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(DbError::InvalidId(id.to_string()))
    }
}

/// Held by a writable store; removes the lock file on drop.
#[derive(Debug)]
struct WriterLock(PathBuf);

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug)]
pub struct ConfDb {
    root: PathBuf,
    manifest: Manifest,
    lock: Option<WriterLock>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DbError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let f = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(f);
        w.write_all(bytes).map_err(io_err(&tmp))?;
        let f = w.into_inner().map_err(|e| DbError::Io {
            path: tmp.clone(),
            source: e.into_error(),
        })?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl ConfDb {
    /// Opens (creating if needed) a store for writing. Fails if another
    /// writer holds the lock.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, DbError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("clusters")).map_err(io_err(&root))?;
        fs::create_dir_all(root.join("traces")).map_err(io_err(&root))?;
        let lock_path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&lock_path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(DbError::Locked(root));
            }
            Err(e) => return Err(io_err(&lock_path)(e)),
        }
        let lock = WriterLock(lock_path);
        let manifest = Self::load_manifest(&root)?;
        let db = ConfDb {
            root,
            manifest,
            lock: Some(lock),
        };
        db.save_manifest()?;
        Ok(db)
    }

    /// Opens an existing store without taking the writer lock.
    pub fn open_read_only(root: impl AsRef<Path>) -> Result<Self, DbError> {
        let root = root.as_ref().to_path_buf();
        let manifest = Self::load_manifest(&root)?;
        Ok(ConfDb {
            root,
            manifest,
            lock: None,
        })
    }

    fn load_manifest(root: &Path) -> Result<Manifest, DbError> {
        let path = root.join("manifest.json");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Manifest::default()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let m: Manifest = serde_json::from_str(&text).map_err(|e| DbError::Corrupt {
            key: "manifest".into(),
            message: e.to_string(),
        })?;
        if m.format_version != FORMAT_VERSION {
            return Err(DbError::Version(m.format_version));
        }
        Ok(m)
    }

    fn save_manifest(&self) -> Result<(), DbError> {
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.root.join("manifest.json"), &json)
    }

    fn writable(&self) -> Result<(), DbError> {
        if self.lock.is_some() {
            Ok(())
        } else {
            Err(DbError::ReadOnly)
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn entry_path(&self, id: &str) -> PathBuf {
        self.root.join("clusters").join(format!("{id}.json"))
    }

    /// Inserts or replaces the entry for `entry.cluster_id`.
    pub fn put(&mut self, entry: &ConfDbEntry) -> Result<(), DbError> {
        self.writable()?;
        validate_id(&entry.cluster_id)?;
        let json = serde_json::to_vec_pretty(entry).map_err(|e| DbError::Corrupt {
            key: entry.cluster_id.clone(),
            message: e.to_string(),
        })?;
        write_atomic(&self.entry_path(&entry.cluster_id), &json)?;
        if !self.manifest.clusters.contains(&entry.cluster_id) {
            self.manifest.clusters.push(entry.cluster_id.clone());
            self.manifest.clusters.sort();
            self.save_manifest()?;
        }
        Ok(())
    }

    pub fn get(&self, cluster_id: &str) -> Result<Option<ConfDbEntry>, DbError> {
        if validate_id(cluster_id).is_err() {
            return Ok(None);
        }
        let path = self.entry_path(cluster_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let entry: ConfDbEntry = serde_json::from_str(&text).map_err(|e| DbError::Corrupt {
            key: cluster_id.to_string(),
            message: e.to_string(),
        })?;
        Ok(Some(entry))
    }

    /// Ids of all stored entries, sorted.
    pub fn list_clusters(&self) -> Result<Vec<String>, DbError> {
        let dir = self.root.join("clusters");
        let read = match fs::read_dir(&dir) {
            Ok(r) => r,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut ids = Vec::new();
        for item in read {
            let item = item.map_err(io_err(&dir))?;
            let name = item.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(id) = name.strip_suffix(".json") {
                if validate_id(id).is_ok() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn append_record(&mut self, cluster_id: &str, record: &GradeRecord) -> Result<(), DbError> {
        self.append_records(cluster_id, std::slice::from_ref(record))
    }

    pub fn append_records(
        &mut self,
        cluster_id: &str,
        records: &[GradeRecord],
    ) -> Result<(), DbError> {
        self.writable()?;
        let mut entry = self
            .get(cluster_id)?
            .ok_or_else(|| DbError::Missing(cluster_id.to_string()))?;
        entry.records.extend_from_slice(records);
        self.put(&entry)
    }

    pub fn cluster_model(&self) -> Option<&ClusterModel> {
        self.manifest.cluster_model.as_ref()
    }

    pub fn set_cluster_model(&mut self, model: ClusterModel) -> Result<(), DbError> {
        self.writable()?;
        self.manifest.cluster_model = Some(model);
        self.save_manifest()
    }

    /// Stores a cluster's representative trace and returns its relative path.
    pub fn put_trace(&mut self, cluster_id: &str, records: &[IoRecord]) -> Result<String, DbError> {
        self.writable()?;
        validate_id(cluster_id)?;
        let rel = format!("traces/{cluster_id}.trace");
        let mut buf = Vec::new();
        write_trace(&mut buf, records).map_err(io_err(&self.root))?;
        write_atomic(&self.root.join(&rel), &buf)?;
        Ok(rel)
    }

    pub fn load_trace(&self, relative: &str) -> Result<Vec<IoRecord>, DbError> {
        let path = self.root.join(relative);
        let f = File::open(&path).map_err(io_err(&path))?;
        parse_trace(BufReader::new(f)).map_err(|e| DbError::Corrupt {
            key: relative.to_string(),
            message: e.to_string(),
        })
    }
}
