//! Artifacts: the images, scalars and texts flowing between tool calls.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::raster::{Raster, RasterError};
use crate::registry::ToolError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactId(pub String);

impl ArtifactId {
    pub fn input() -> Self {
        ArtifactId("input".into())
    }

    /// Id of the output of `step` (1-based) by `agent` in `round`.
    pub fn step(round: u32, agent: u32, step: u32) -> Self {
        ArtifactId(format!("m{round}/a{agent}/s{step}"))
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Media {
    Raster { width: u32, height: u32, channels: u8 },
    Scalar,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Raster(Arc<Raster>),
    Scalar(f64),
    Text(String),
}

impl Payload {
    pub fn raster(r: Raster) -> Self {
        Payload::Raster(Arc::new(r))
    }

    pub fn media(&self) -> Media {
        match self {
            Payload::Raster(r) => Media::Raster {
                width: r.width(),
                height: r.height(),
                channels: r.channels(),
            },
            Payload::Scalar(_) => Media::Scalar,
            Payload::Text(_) => Media::Text,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::Raster(_) => "a raster image",
            Payload::Scalar(_) => "a scalar",
            Payload::Text(_) => "text",
        }
    }

    pub fn as_raster(&self) -> Option<&Arc<Raster>> {
        match self {
            Payload::Raster(r) => Some(r),
            _ => None,
        }
    }

    pub fn digest(&self) -> String {
        match self {
            Payload::Raster(r) => r.digest(),
            Payload::Scalar(v) => hex::encode(Sha256::digest(v.to_le_bytes())),
            Payload::Text(t) => hex::encode(Sha256::digest(t.as_bytes())),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Payload::Raster(_) => "png",
            _ => "txt",
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, RasterError> {
        match self {
            Payload::Raster(r) => r.to_png(),
            Payload::Scalar(v) => Ok(format!("{v}\n").into_bytes()),
            Payload::Text(t) => Ok(t.clone().into_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: ArtifactId,
    pub media: Media,
    /// Location relative to the session directory, once written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_path: Option<String>,
    /// `input`, or the canonical tool-call line that produced it.
    pub provenance: String,
    pub digest: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown artifact `{0}`")]
    Unknown(String),
    #[error("artifact store is memory-only; `{0}` cannot be written to disk")]
    NotMaterializable(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Holds artifact payloads for one session. With a root directory, every
/// artifact is also written losslessly under `root/artifacts/...`.
#[derive(Debug)]
pub struct ArtifactStore {
    root: Option<PathBuf>,
    assets_dir: Option<PathBuf>,
    entries: Mutex<HashMap<ArtifactId, (Artifact, Payload)>>,
}

impl ArtifactStore {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            assets_dir: None,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
            assets_dir: None,
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// Directory against which relative asset paths in tool arguments resolve.
    pub fn with_assets_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.assets_dir = Some(dir.into());
        self
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn rel_path(id: &ArtifactId, payload: &Payload) -> String {
        if id.0 == "input" {
            format!("artifacts/input.{}", payload.extension())
        } else {
            // m{round}/a{agent}/s{step} -> artifacts/{round}/{agent}/{step}.ext
            let parts: Vec<&str> = id
                .0
                .split('/')
                .map(|p| p.trim_start_matches(|c: char| c.is_ascii_alphabetic()))
                .collect();
            format!("artifacts/{}.{}", parts.join("/"), payload.extension())
        }
    }

    pub fn put(&self, id: ArtifactId, payload: Payload, provenance: impl Into<String>) -> Result<Artifact, StoreError> {
        let storage_path = match &self.root {
            Some(root) => {
                let rel = Self::rel_path(&id, &payload);
                let path = root.join(&rel);
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
                        path: dir.to_path_buf(),
                        source,
                    })?;
                }
                std::fs::write(&path, payload.encode()?).map_err(|source| StoreError::Io { path, source })?;
                Some(rel)
            }
            None => None,
        };
        let artifact = Artifact {
            id: id.clone(),
            media: payload.media(),
            storage_path,
            provenance: provenance.into(),
            digest: payload.digest(),
        };
        self.entries
            .lock()
            .expect("artifact store lock")
            .insert(id, (artifact.clone(), payload));
        Ok(artifact)
    }

    pub fn get(&self, id: &ArtifactId) -> Option<(Artifact, Payload)> {
        self.entries.lock().expect("artifact store lock").get(id).cloned()
    }

    pub fn payload(&self, id: &ArtifactId) -> Option<Payload> {
        self.get(id).map(|(_, p)| p)
    }

    /// Every stored artifact, ordered by id.
    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut v: Vec<Artifact> = self
            .entries
            .lock()
            .expect("artifact store lock")
            .values()
            .map(|(a, _)| a.clone())
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Absolute file location of a stored artifact, for external adapters.
    pub fn file_path(&self, artifact: &Artifact) -> Result<PathBuf, StoreError> {
        match (&self.root, &artifact.storage_path) {
            (Some(root), Some(rel)) => Ok(root.join(rel)),
            _ => Err(StoreError::NotMaterializable(artifact.id.0.clone())),
        }
    }

    /// Resolves a path-kind argument that is not the chained image: bundled
    /// assets (`builtin:logo`, `builtin:watermark`), stored artifact ids, or
    /// files on disk.
    pub fn resolve_asset(&self, tool: &str, value: &str) -> Result<Payload, ToolError> {
        if let Some(asset) = value.strip_prefix("builtin:") {
            return bundled_asset(asset)
                .map(Payload::raster)
                .ok_or_else(|| ToolError::args(tool, format!("no bundled asset `{asset}`")));
        }
        if let Some(p) = self.payload(&ArtifactId(value.to_string())) {
            return Ok(p);
        }
        let path = match &self.assets_dir {
            Some(dir) if Path::new(value).is_relative() => dir.join(value),
            _ => PathBuf::from(value),
        };
        Raster::load(&path)
            .map(Payload::raster)
            .map_err(|e| ToolError::args(tool, format!("cannot read `{value}`: {e}")))
    }
}

/// Procedural assets available without any files.
pub fn bundled_asset(name: &str) -> Option<Raster> {
    match name {
        // 16x16 black/white checkerboard with 4-pixel cells
        "watermark" => {
            let mut data = Vec::with_capacity(16 * 16 * 3);
            for y in 0..16u32 {
                for x in 0..16u32 {
                    let v = if ((x / 4) + (y / 4)) % 2 == 0 { 255 } else { 0 };
                    data.extend_from_slice(&[v, v, v]);
                }
            }
            Raster::new(16, 16, 3, data).ok()
        }
        // 12x12 red disc on a transparent background
        "logo" => {
            let mut data = Vec::with_capacity(12 * 12 * 4);
            for y in 0..12i32 {
                for x in 0..12i32 {
                    let (dx, dy) = (2 * x - 11, 2 * y - 11);
                    let inside = dx * dx + dy * dy <= 121;
                    data.extend_from_slice(&[220, 30, 40, if inside { 255 } else { 0 }]);
                }
            }
            Raster::new(12, 12, 4, data).ok()
        }
        _ => None,
    }
}
