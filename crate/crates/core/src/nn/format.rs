//! On-disk model format: a JSON manifest `{version, dims, data_file}` next to a
//! little-endian f64 blob holding, per layer, the row-major weight followed by
//! the bias.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Layer, LayerStack};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    dims: Vec<usize>,
    data_file: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<manifest_path>` and a sibling `.bin` blob. Returns the blob path.
pub fn save_model(model: &LayerStack, manifest_path: &Path) -> Result<PathBuf> {
    let data_file = manifest_path
        .with_extension("bin")
        .file_name()
        .expect("manifest path has a file name")
        .to_string_lossy()
        .into_owned();
    let blob_path = manifest_path.with_file_name(&data_file);

    let mut blob = Vec::with_capacity(model.param_count() * 8);
    for layer in model.layers() {
        for v in layer.weight.as_slice().iter().chain(layer.bias.as_slice()) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dims: model.dims(),
        data_file,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&blob_path, blob).map_err(io_err(&blob_path))?;
    fs::write(manifest_path, json + "\n").map_err(io_err(manifest_path))?;
    Ok(blob_path)
}

pub fn load_model(manifest_path: &Path) -> Result<LayerStack> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    if manifest.dims.len() < 2 || manifest.dims.contains(&0) {
        return Err(Error::ModelFormat(format!("bad dims {:?}", manifest.dims)));
    }
    let blob_path = manifest_path.with_file_name(&manifest.data_file);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    let expected: usize = manifest.dims.windows(2).map(|d| d[1] * (d[0] + 1)).sum();
    if blob.len() != expected * 8 {
        return Err(Error::ModelFormat(format!(
            "blob has {} bytes, dims need {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut layers = Vec::new();
    for d in manifest.dims.windows(2) {
        let (fan_in, fan_out) = (d[0], d[1]);
        let weight: Vec<f64> = values.by_ref().take(fan_in * fan_out).collect();
        let bias: Vec<f64> = values.by_ref().take(fan_out).collect();
        layers.push(Layer::new(
            Matrix::new(fan_out, fan_in, weight)?,
            Vector(bias),
        )?);
    }
    LayerStack::new(layers)
}
