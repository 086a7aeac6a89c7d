//! Model files: the QDNT byte format behind a path-based API.

use std::path::Path;

use quadtrack_core::embed::{decode, encode, EmbedNet};

use crate::error::{Error, Result};

pub fn save_model(path: &Path, net: &EmbedNet<f32>) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EmbedNet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
