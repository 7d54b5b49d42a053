//! JSON checkpoints: a format tag, a version, a typed header and the store
//! (block names, shapes and flat values). Floats round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamLayout, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BlockDoc {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct StoreDoc {
    blocks: Vec<BlockDoc>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document<H> {
    format: String,
    version: u32,
    header: H,
    store: StoreDoc,
}

pub fn save_checkpoint<S: Scalar, H: Serialize>(
    path: &Path,
    format: &str,
    header: &H,
    store: &ParamStore<S>,
) -> Result<()> {
    let doc = Document {
        format: format.to_string(),
        version: CHECKPOINT_VERSION,
        header,
        store: StoreDoc {
            blocks: store
                .layout()
                .blocks()
                .iter()
                .map(|b| BlockDoc {
                    name: b.name.clone(),
                    shape: [b.rows, b.cols],
                })
                .collect(),
            values: store.flat().iter().map(|v| v.as_f64()).collect(),
        },
    };
    let text = serde_json::to_string(&doc).map_err(|e| Error::format("checkpoint", e))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar, H: DeserializeOwned>(
    path: &Path,
    format: &str,
) -> Result<(H, ParamStore<S>)> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))?;
    let found_format = probe.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if found_format != format {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected a {format} checkpoint, found {found_format:?}"),
        ));
    }
    let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let doc: Document<H> =
        serde_json::from_value(probe).map_err(|e| Error::format(path.display().to_string(), e))?;
    let mut builder = ParamLayout::builder();
    for b in &doc.store.blocks {
        builder.push(b.name.clone(), b.shape[0], b.shape[1]);
    }
    let values = doc.store.values.into_iter().map(S::lit).collect();
    let store = ParamStore::unflatten(builder.build()?, values)?;
    Ok((doc.header, store))
}
