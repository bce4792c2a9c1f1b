//! Directory checkpoints: `config.json`, `manifest.json` and `params.bin`
//! (little-endian f32, tensors concatenated in manifest order).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jsonl::write_atomic;
use crate::model::{ModelConfig, ModelError, ModelState};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },
    #[error("manifest does not match the configured model: {0}")]
    ManifestMismatch(String),
    #[error("params.bin holds {actual} bytes, manifest needs {expected}")]
    TruncatedParams { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dtype: String,
    pub tensors: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn of(state: &ModelState<f32>) -> Manifest {
        Manifest {
            dtype: "f32le".to_string(),
            tensors: state
                .tensors
                .iter()
                .map(|t| ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    byte_offset: 4 * t.offset,
                })
                .collect(),
        }
    }

    pub fn n_bytes(&self) -> usize {
        self.tensors
            .iter()
            .map(|t| t.byte_offset + 4 * t.shape.iter().product::<usize>())
            .max()
            .unwrap_or(0)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save(state: &ModelState<f32>, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config = serde_json::to_string_pretty(&state.config).expect("config serializes");
    let manifest = serde_json::to_string_pretty(&Manifest::of(state)).expect("manifest serializes");
    let bytes: Vec<u8> = state.params.iter().flat_map(|v| v.to_le_bytes()).collect();
    for (name, data) in [
        (PARAMS_FILE, bytes),
        (MANIFEST_FILE, manifest.into_bytes()),
        (CONFIG_FILE, config.into_bytes()),
    ] {
        let p = dir.join(name);
        write_atomic(&p, &data).map_err(io_err(&p))?;
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CheckpointError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CheckpointError::Json {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_config(dir: &Path) -> Result<ModelConfig, CheckpointError> {
    read_json(&dir.join(CONFIG_FILE))
}

/// Loads a checkpoint, checking the manifest against the layout implied by
/// the config before reading parameter bytes.
pub fn load(dir: &Path) -> Result<ModelState<f32>, CheckpointError> {
    let config = load_config(dir)?;
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut state = ModelState::<f32>::zeros(config)?;
    let expected = Manifest::of(&state);
    if manifest.dtype != expected.dtype {
        return Err(CheckpointError::ManifestMismatch(format!("dtype {}", manifest.dtype)));
    }
    if manifest.tensors.len() != expected.tensors.len() {
        return Err(CheckpointError::ManifestMismatch(format!(
            "{} tensors, expected {}",
            manifest.tensors.len(),
            expected.tensors.len()
        )));
    }
    for (got, want) in manifest.tensors.iter().zip(&expected.tensors) {
        if got != want {
            return Err(CheckpointError::ManifestMismatch(format!(
                "tensor {} shape {:?} at byte {}, expected {} shape {:?} at byte {}",
                got.name, got.shape, got.byte_offset, want.name, want.shape, want.byte_offset
            )));
        }
    }
    let p = dir.join(PARAMS_FILE);
    let bytes = fs::read(&p).map_err(io_err(&p))?;
    let need = expected.n_bytes();
    if bytes.len() != need {
        return Err(CheckpointError::TruncatedParams {
            expected: need,
            actual: bytes.len(),
        });
    }
    for (v, b) in state.params.iter_mut().zip(bytes.chunks_exact(4)) {
        *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    }
    Ok(state)
}
