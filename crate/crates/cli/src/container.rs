//! Portable array containers (safetensors format) with JSON sidecars.
//!
//! Every persisted artifact is a pair: `<name>.safetensors` holding the
//! arrays (little-endian f32 / i32) and `<name>.json` describing where the
//! arrays came from. Readers validate shapes and dtypes on load.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{de::DeserializeOwned, Serialize};

/// An owned array destined for (or loaded from) a container.
#[derive(Clone, Debug, PartialEq)]
pub enum Array {
    F32(Vec<usize>, Vec<f32>),
    I32(Vec<usize>, Vec<i32>),
}

impl Array {
    pub fn shape(&self) -> &[usize] {
        match self {
            Array::F32(s, _) | Array::I32(s, _) => s,
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match self {
            Array::F32(_, v) => Ok(v),
            Array::I32(..) => bail!("expected f32 array, found i32"),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32]> {
        match self {
            Array::I32(_, v) => Ok(v),
            Array::F32(..) => bail!("expected i32 array, found f32"),
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Array::F32(_, v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Array::I32(_, v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn dtype(&self) -> Dtype {
        match self {
            Array::F32(..) => Dtype::F32,
            Array::I32(..) => Dtype::I32,
        }
    }
}

/// Write named arrays to `path` in a stable (name-sorted) order.
pub fn write_arrays(path: &Path, arrays: &[(String, Array)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    let bytes: Vec<(String, Vec<u8>)> = arrays
        .iter()
        .map(|(name, a)| (name.clone(), a.to_le_bytes()))
        .collect();
    let views: Result<Vec<(String, TensorView)>> = arrays
        .iter()
        .zip(&bytes)
        .map(|((name, a), (_, b))| {
            let view = TensorView::new(a.dtype(), a.shape().to_vec(), b)
                .with_context(|| format!("building tensor view for {name}"))?;
            Ok((name.clone(), view))
        })
        .collect();
    let mut views = views?;
    views.sort_by(|a, b| a.0.cmp(&b.0));
    safetensors::tensor::serialize_to_file(views, None::<HashMap<String, String>>, path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Load every array in the container.
pub fn read_arrays(path: &Path) -> Result<Vec<(String, Array)>> {
    let buffer = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let st = SafeTensors::deserialize(&buffer)
        .with_context(|| format!("parsing {}", path.display()))?;
    let mut names = st.names();
    names.sort_unstable();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let view = st.tensor(name)?;
        let shape = view.shape().to_vec();
        let data = view.data();
        let array = match view.dtype() {
            Dtype::F32 => Array::F32(
                shape,
                data.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::I32 => Array::I32(
                shape,
                data.chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            other => bail!("{}: unsupported dtype {other:?} in {name}", path.display()),
        };
        out.push((name.to_string(), array));
    }
    Ok(out)
}

/// Fetch one array by name from a loaded container.
pub fn find_array<'a>(arrays: &'a [(String, Array)], name: &str, path: &Path) -> Result<&'a Array> {
    arrays
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, a)| a)
        .with_context(|| format!("{} is missing array {name}", path.display()))
}

/// The JSON sidecar path for a container: same stem, `.json` extension.
pub fn sidecar_path(container: &Path) -> std::path::PathBuf {
    container.with_extension("json")
}

pub fn write_sidecar<T: Serialize>(container: &Path, sidecar: &T) -> Result<()> {
    let path = sidecar_path(container);
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_sidecar<T: DeserializeOwned>(container: &Path) -> Result<T> {
    let path = sidecar_path(container);
    let json = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&json).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrays_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let arrays = vec![
            (
                "images".to_string(),
                Array::F32(vec![2, 3], vec![0.1, -0.5, 3.25, f32::MIN_POSITIVE, 1e30, 0.0]),
            ),
            ("labels".to_string(), Array::I32(vec![3], vec![0, -7, 2])),
        ];
        write_arrays(&path, &arrays).unwrap();
        let back = read_arrays(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(find_array(&back, "images", &path).unwrap(), &arrays[0].1);
        assert_eq!(find_array(&back, "labels", &path).unwrap(), &arrays[1].1);
    }

    #[test]
    fn sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        write_sidecar(&path, &serde_json::json!({"kind": "test", "n": 3})).unwrap();
        let back: serde_json::Value = read_sidecar(&path).unwrap();
        assert_eq!(back["kind"], "test");
        assert_eq!(back["n"], 3);
    }

    #[test]
    fn missing_array_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        write_arrays(&path, &[("a".into(), Array::I32(vec![1], vec![1]))]).unwrap();
        let back = read_arrays(&path).unwrap();
        let err = find_array(&back, "missing", &path).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }
}
