//! On-disk dataset format.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<oracle>/<scenario>/inputs.bin    [month][4][lat][lon]
//! <dir>/<oracle>/<scenario>/outputs.bin   [month][2][lat][lon]
//! ```
//!
//! Tensor files are raw little-endian IEEE-754 (`f32` or `f64`) in row-major
//! order with no header. The manifest records the grid, scenario year ranges,
//! oracle ids, channel order, dtype and an FNV-1a 64 checksum (16 lowercase
//! hex digits) per tensor file, keyed by the path relative to `<dir>`.
//!
//! Writers go through a temporary name and rename; concurrent writers to the
//! same directory are not supported.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, ScenarioSeries, ScenarioSpec, N_INPUTS, N_OUTPUTS};
use crate::grid::{GridSpec, Variable};
use crate::rng::fnv1a64;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported dataset format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("missing tensor file {path}")]
    MissingFile { path: PathBuf },
    #[error("integrity check failed for {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub grid: GridSpec,
    pub scenarios: Vec<ScenarioSpec>,
    pub oracles: Vec<String>,
    pub variables_in: Vec<Variable>,
    pub variables_out: Vec<Variable>,
    pub dtype: Dtype,
    pub byte_order: String,
    pub checksums: BTreeMap<String, String>,
}

/// Format a checksum the way manifests store it.
pub fn checksum_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Write `bytes` to `path` via `<path>.tmp` and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn tensor_rel_path(oracle: &str, scenario: &str, kind: &str) -> String {
    format!("{oracle}/{scenario}/{kind}.bin")
}

pub fn encode_tensor(values: &Array4<f64>, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    // `iter` walks in logical row-major order regardless of memory layout.
    match dtype {
        Dtype::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

fn decode_tensor(bytes: &[u8], dtype: Dtype, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    let values: Vec<f64> = match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
    };
    Array4::from_shape_vec(shape, values).expect("length checked by caller")
}

/// Persist `dataset` under `dir` and return the manifest written.
pub fn write_dataset(
    dataset: &Dataset,
    dir: &Path,
    dtype: Dtype,
) -> Result<DatasetManifest, DatasetIoError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetIoError::Io { path, source }
    };
    dataset
        .validate()
        .map_err(|e| DatasetIoError::Invalid(e.to_string()))?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut checksums = BTreeMap::new();
    for oracle in &dataset.oracles {
        for sc in &dataset.scenarios {
            let series = dataset
                .get(oracle, &sc.id)
                .ok_or_else(|| DatasetIoError::Invalid(format!("no series {oracle}/{}", sc.id)))?;
            for (kind, tensor) in [("inputs", &series.inputs), ("outputs", &series.outputs)] {
                let rel = tensor_rel_path(oracle, sc.id.as_str(), kind);
                let path = dir.join(&rel);
                let bytes = encode_tensor(tensor, dtype);
                write_atomic(&path, &bytes).map_err(io_err(&path))?;
                checksums.insert(rel, checksum_hex(&bytes));
            }
        }
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        grid: dataset.grid.clone(),
        scenarios: dataset.scenarios.clone(),
        oracles: dataset.oracles.clone(),
        variables_in: Variable::INPUTS.to_vec(),
        variables_out: Variable::OUTPUTS.to_vec(),
        dtype,
        byte_order: "little".into(),
        checksums,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DatasetIoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DatasetIoError::MissingFile { path })
        }
        Err(source) => return Err(DatasetIoError::Io { path, source }),
    };
    // Check the version before the full schema so older/newer layouts
    // report a version error rather than a parse error.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|source| {
        DatasetIoError::Manifest {
            path: path.clone(),
            source,
        }
    })?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(DatasetIoError::Version {
                found: v.min(u32::MAX as u64) as u32,
            })
        }
        None => return Err(DatasetIoError::Invalid("format_version missing".into())),
    }
    let manifest: DatasetManifest =
        serde_json::from_value(raw).map_err(|source| DatasetIoError::Manifest { path, source })?;
    manifest
        .grid
        .validate()
        .map_err(|e| DatasetIoError::Invalid(e.to_string()))?;
    if manifest.byte_order != "little" {
        return Err(DatasetIoError::Invalid(format!(
            "unsupported byte order {}",
            manifest.byte_order
        )));
    }
    if manifest.variables_in != Variable::INPUTS || manifest.variables_out != Variable::OUTPUTS {
        return Err(DatasetIoError::Invalid("unexpected channel order".into()));
    }
    Ok(manifest)
}

/// Load a dataset written by [`write_dataset`], verifying every checksum
/// before returning.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetIoError> {
    let manifest = read_manifest(dir)?;
    let grid = &manifest.grid;
    let mut series = BTreeMap::new();
    for oracle in &manifest.oracles {
        for sc in &manifest.scenarios {
            let months = sc.n_years() * 12;
            let mut tensors = Vec::with_capacity(2);
            for (kind, channels) in [("inputs", N_INPUTS), ("outputs", N_OUTPUTS)] {
                let rel = tensor_rel_path(oracle, sc.id.as_str(), kind);
                let path = dir.join(&rel);
                let expected = manifest.checksums.get(&rel).ok_or_else(|| {
                    DatasetIoError::Integrity {
                        path: path.clone(),
                        reason: "no checksum recorded in manifest".into(),
                    }
                })?;
                let bytes = match fs::read(&path) {
                    Ok(b) => b,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        return Err(DatasetIoError::MissingFile { path })
                    }
                    Err(source) => return Err(DatasetIoError::Io { path, source }),
                };
                let shape = (months, channels, grid.n_lat, grid.n_lon);
                let want = shape.0 * shape.1 * shape.2 * shape.3 * manifest.dtype.size();
                if bytes.len() != want {
                    return Err(DatasetIoError::Integrity {
                        path,
                        reason: format!("size {} bytes, expected {want}", bytes.len()),
                    });
                }
                let actual = checksum_hex(&bytes);
                if &actual != expected {
                    return Err(DatasetIoError::Integrity {
                        path,
                        reason: format!("checksum {actual}, manifest says {expected}"),
                    });
                }
                tensors.push(decode_tensor(&bytes, manifest.dtype, shape));
            }
            let outputs = tensors.pop().expect("two tensors");
            let inputs = tensors.pop().expect("two tensors");
            series.insert(
                (oracle.clone(), sc.id.clone()),
                ScenarioSeries {
                    scenario: sc.id.clone(),
                    oracle_id: oracle.clone(),
                    start_year: sc.start_year,
                    end_year: sc.end_year,
                    inputs,
                    outputs,
                },
            );
        }
    }
    Ok(Dataset {
        grid: manifest.grid,
        oracles: manifest.oracles,
        scenarios: manifest.scenarios,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, GenerationConfig, GridSize};

    fn small_dataset() -> Dataset {
        let mut gen = GenerationConfig::small();
        gen.grid = GridSize { n_lat: 3, n_lon: 2 };
        gen.oracles.truncate(2);
        build_dataset(&gen, 8).unwrap()
    }

    #[test]
    fn roundtrip_f64() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path(), Dtype::F64).unwrap();
        assert_eq!(manifest.checksums.len(), 2 * 5 * 2);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let size = fs::metadata(dir.path().join("oracle_a/ssp245/outputs.bin"))
            .unwrap()
            .len();
        assert_eq!(size, 1032 * 2 * 3 * 2 * 8);
    }

    #[test]
    fn roundtrip_f32_is_stable() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), Dtype::F32).unwrap();
        let once = read_dataset(dir.path()).unwrap();
        let size = fs::metadata(dir.path().join("oracle_a/ssp245/outputs.bin"))
            .unwrap()
            .len();
        assert_eq!(size, 1032 * 2 * 3 * 2 * 4);
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(&once, dir2.path(), Dtype::F32).unwrap();
        assert_eq!(read_dataset(dir2.path()).unwrap(), once);
        for s in once.series.values() {
            assert!(s.outputs.iter().all(|v| (*v as f32) as f64 == *v));
        }
    }

    #[test]
    fn corruption_detected() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), Dtype::F64).unwrap();
        let target = dir.path().join("oracle_b/ssp370/inputs.bin");
        let mut bytes = fs::read(&target).unwrap();
        bytes[17] ^= 0x40;
        fs::write(&target, &bytes).unwrap();
        match read_dataset(dir.path()) {
            Err(DatasetIoError::Integrity { path, .. }) => assert_eq!(path, target),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), Dtype::F64).unwrap();
        let target = dir.path().join("oracle_a/historical/outputs.bin");
        let bytes = fs::read(&target).unwrap();
        fs::write(&target, &bytes[..bytes.len() - 8]).unwrap();
        match read_dataset(dir.path()) {
            Err(DatasetIoError::Integrity { path, reason }) => {
                assert_eq!(path, target);
                assert!(reason.contains("size"));
            }
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_and_version() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), Dtype::F64).unwrap();
        fs::remove_file(dir.path().join("oracle_a/ssp126/outputs.bin")).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DatasetIoError::MissingFile { .. })
        ));

        let manifest_path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).unwrap();
        fs::write(
            &manifest_path,
            text.replace("\"format_version\": 1", "\"format_version\": 7"),
        )
        .unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DatasetIoError::Version { found: 7 })
        ));

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_dataset(empty.path()),
            Err(DatasetIoError::MissingFile { .. })
        ));
    }
}
