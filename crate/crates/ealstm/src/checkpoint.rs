//! Self-describing array container and the model checkpoint built on it.
//!
//! Layout: an 8-byte magic, a little-endian u32 header length, a JSON
//! header listing array names and shapes, then the arrays' raw f64 values
//! row-major little-endian, concatenated in header order. Round-trips are
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::cell::{ArchDims, CellParameters, CellVariant};
use crate::data::{DateInterval, StandardizationStats};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EALSTMC1";
const FORMAT_CHECKPOINT: &str = "ealstm-checkpoint";
const FORMAT_EMBEDDING: &str = "ealstm-embedding";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContainerHeader {
    format: String,
    version: u32,
    meta: serde_json::Value,
    arrays: Vec<ArrayInfo>,
}

#[derive(Debug, Clone)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayEntry {
    fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Write `bytes` via a temp file in the same directory, then rename, so
/// readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile_path(dir, path);
    let mut attempts = 0;
    let file = loop {
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&tmp)
        {
            Ok(f) => break f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && attempts < 16 => {
                attempts += 1;
                tmp = tempfile_path(dir, path);
            }
            Err(e) => return Err(e.into()),
        }
    };
    let mut file = file;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn tempfile_path(dir: &Path, target: &Path) -> std::path::PathBuf {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nonce = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let stem = target
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    dir.join(format!(".{}.{}.tmp", stem, nonce))
}

fn write_container(
    path: &Path,
    format: &str,
    meta: serde_json::Value,
    arrays: &[ArrayEntry],
) -> Result<()> {
    let header = ContainerHeader {
        format: format.to_string(),
        version: 1,
        meta,
        arrays: arrays
            .iter()
            .map(|a| ArrayInfo {
                name: a.name.clone(),
                shape: a.shape.clone(),
            })
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Io(std::io::Error::other(e)))?;

    let payload: usize = arrays.iter().map(|a| a.elements() * 8).sum();
    let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + header_bytes.len() + payload);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for a in arrays {
        debug_assert_eq!(a.data.len(), a.elements(), "array {}", a.name);
        for v in &a.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

fn read_container(
    path: &Path,
    expect_format: &str,
) -> Result<(serde_json::Value, Vec<ArrayEntry>)> {
    let mut file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", path.display(), e),
        ))
    })?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "{}: not a container file (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: ContainerHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Parse(format!("{}: header: {}", path.display(), e)))?;
    if header.format != expect_format {
        return Err(Error::Data(format!(
            "{}: container format is '{}', expected '{}'",
            path.display(),
            header.format,
            expect_format
        )));
    }

    let mut arrays = Vec::with_capacity(header.arrays.len());
    for info in &header.arrays {
        let n: usize = info.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        file.read_exact(&mut raw).map_err(|e| {
            Error::Data(format!(
                "{}: array '{}' truncated: {}",
                path.display(),
                info.name,
                e
            ))
        })?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(ArrayEntry {
            name: info.name.clone(),
            shape: info.shape.clone(),
            data,
        });
    }
    Ok((header.meta, arrays))
}

/// Everything needed to run a trained model later: cell parameters, the
/// training-period standardization moments, the attribute schema and the
/// training seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub params: CellParameters,
    pub stats: StandardizationStats,
    pub attribute_names: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    variant: CellVariant,
    hidden_size: usize,
    dynamic_dim: usize,
    static_dim: usize,
    seed: u64,
    training_start: chrono::NaiveDate,
    training_end: chrono::NaiveDate,
    attribute_names: Vec<String>,
}

pub fn save_checkpoint(path: &Path, bundle: &ModelBundle) -> Result<()> {
    let params = &bundle.params;
    params.validate_shapes()?;
    let meta = CheckpointMeta {
        variant: params.dims.variant,
        hidden_size: params.dims.hidden_size,
        dynamic_dim: params.dims.dynamic_dim,
        static_dim: params.dims.static_dim,
        seed: bundle.seed,
        training_start: bundle.stats.training.start,
        training_end: bundle.stats.training.end,
        attribute_names: bundle.attribute_names.clone(),
    };

    let mut arrays = Vec::new();
    let names = params.param_names();
    let slices = params.param_slices();
    for (name, slice) in names.iter().zip(slices.iter()) {
        let shape = param_shape(params, name);
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape,
            data: slice.to_vec(),
        });
    }
    let stats = &bundle.stats;
    arrays.push(vec1("stats_dynamic_mean", &stats.dynamic_mean));
    arrays.push(vec1("stats_dynamic_std", &stats.dynamic_std));
    arrays.push(vec1("stats_static_mean", &stats.static_mean));
    arrays.push(vec1("stats_static_std", &stats.static_std));
    arrays.push(ArrayEntry {
        name: "stats_discharge".into(),
        shape: vec![2],
        data: vec![stats.discharge_mean, stats.discharge_std],
    });

    write_container(
        path,
        FORMAT_CHECKPOINT,
        serde_json::to_value(&meta).map_err(|e| Error::Io(std::io::Error::other(e)))?,
        &arrays,
    )
}

fn vec1(name: &str, a: &Array1<f64>) -> ArrayEntry {
    ArrayEntry {
        name: name.into(),
        shape: vec![a.len()],
        data: a.to_vec(),
    }
}

fn param_shape(params: &CellParameters, name: &str) -> Vec<usize> {
    let h = params.dims.hidden_size;
    match name {
        "w_i" => vec![h, params.dims.input_gate_dim()],
        "u_i" | "u_f" | "u_g" | "u_o" => vec![h, h],
        "w_f" | "w_g" | "w_o" => vec![h, params.dims.step_input_dim()],
        "b_i" | "b_f" | "b_g" | "b_o" | "head_w" => vec![h],
        "head_b" => vec![1],
        other => unreachable!("unknown parameter array {other}"),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let (meta_value, arrays) = read_container(path, FORMAT_CHECKPOINT)?;
    let meta: CheckpointMeta = serde_json::from_value(meta_value)
        .map_err(|e| Error::Parse(format!("{}: meta: {}", path.display(), e)))?;
    let dims = ArchDims {
        variant: meta.variant,
        hidden_size: meta.hidden_size,
        dynamic_dim: meta.dynamic_dim,
        static_dim: meta.static_dim,
    };

    let mut lookup: std::collections::HashMap<&str, &ArrayEntry> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    let params = CellParameters {
        dims,
        w_i: take2(&mut lookup, path, "w_i")?,
        u_i: match dims.variant {
            CellVariant::Lstm => Some(take2(&mut lookup, path, "u_i")?),
            CellVariant::Ealstm => None,
        },
        b_i: take1(&mut lookup, path, "b_i")?,
        w_f: take2(&mut lookup, path, "w_f")?,
        u_f: take2(&mut lookup, path, "u_f")?,
        b_f: take1(&mut lookup, path, "b_f")?,
        w_g: take2(&mut lookup, path, "w_g")?,
        u_g: take2(&mut lookup, path, "u_g")?,
        b_g: take1(&mut lookup, path, "b_g")?,
        w_o: take2(&mut lookup, path, "w_o")?,
        u_o: take2(&mut lookup, path, "u_o")?,
        b_o: take1(&mut lookup, path, "b_o")?,
        head_w: take1(&mut lookup, path, "head_w")?,
        head_b: {
            let e = lookup.remove("head_b").ok_or_else(|| {
                Error::Data(format!("{}: missing array 'head_b'", path.display()))
            })?;
            e.data[0]
        },
    };
    params.validate_shapes()?;

    let stats = StandardizationStats {
        dynamic_mean: take1(&mut lookup, path, "stats_dynamic_mean")?,
        dynamic_std: take1(&mut lookup, path, "stats_dynamic_std")?,
        static_mean: take1(&mut lookup, path, "stats_static_mean")?,
        static_std: take1(&mut lookup, path, "stats_static_std")?,
        discharge_mean: 0.0,
        discharge_std: 1.0,
        training: DateInterval::new(meta.training_start, meta.training_end)?,
    };
    let q = lookup.remove("stats_discharge").ok_or_else(|| {
        Error::Data(format!(
            "{}: missing array 'stats_discharge'",
            path.display()
        ))
    })?;
    let stats = StandardizationStats {
        discharge_mean: q.data[0],
        discharge_std: q.data[1],
        ..stats
    };

    Ok(ModelBundle {
        params,
        stats,
        attribute_names: meta.attribute_names,
        seed: meta.seed,
    })
}

fn take1(
    lookup: &mut std::collections::HashMap<&str, &ArrayEntry>,
    path: &Path,
    name: &str,
) -> Result<Array1<f64>> {
    let e = lookup
        .remove(name)
        .ok_or_else(|| Error::Data(format!("{}: missing array '{}'", path.display(), name)))?;
    Ok(Array1::from_vec(e.data.clone()))
}

fn take2(
    lookup: &mut std::collections::HashMap<&str, &ArrayEntry>,
    path: &Path,
    name: &str,
) -> Result<Array2<f64>> {
    let e = lookup
        .remove(name)
        .ok_or_else(|| Error::Data(format!("{}: missing array '{}'", path.display(), name)))?;
    if e.shape.len() != 2 {
        return Err(Error::Data(format!(
            "{}: array '{}' is not 2-d",
            path.display(),
            name
        )));
    }
    Array2::from_shape_vec((e.shape[0], e.shape[1]), e.data.clone())
        .map_err(|err| Error::Data(format!("{}: array '{}': {}", path.display(), name, err)))
}

/// Export a basins-by-hidden embedding matrix in the container format,
/// with the basin ids in the header for self-description.
pub fn save_embedding(path: &Path, basin_ids: &[String], matrix: &Array2<f64>) -> Result<()> {
    if basin_ids.len() != matrix.nrows() {
        return Err(Error::Config(format!(
            "{} basin ids for {} embedding rows",
            basin_ids.len(),
            matrix.nrows()
        )));
    }
    let meta = serde_json::json!({ "basin_ids": basin_ids });
    let entry = ArrayEntry {
        name: "embedding".into(),
        shape: vec![matrix.nrows(), matrix.ncols()],
        data: matrix.iter().copied().collect(),
    };
    write_container(path, FORMAT_EMBEDDING, meta, &[entry])
}

pub fn load_embedding(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let (meta, arrays) = read_container(path, FORMAT_EMBEDDING)?;
    let ids: Vec<String> = serde_json::from_value(
        meta.get("basin_ids")
            .cloned()
            .ok_or_else(|| Error::Parse(format!("{}: missing basin_ids", path.display())))?,
    )
    .map_err(|e| Error::Parse(format!("{}: basin_ids: {}", path.display(), e)))?;
    let entry = arrays
        .iter()
        .find(|a| a.name == "embedding")
        .ok_or_else(|| Error::Data(format!("{}: missing embedding array", path.display())))?;
    let matrix = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), entry.data.clone())
        .map_err(|e| Error::Data(format!("{}: embedding: {}", path.display(), e)))?;
    Ok((ids, matrix))
}
