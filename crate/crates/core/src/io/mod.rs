//! Line-oriented text formats.
//!
//! Every file is a sequence of records, one per line, keyword first and fields
//! separated by whitespace. Blank lines and lines starting with `#` are skipped.
//!
//! Dataset (`dataset.txt`, `matches.txt`):
//!
//! ```text
//! INTRINSICS model fx fy cx cy width height
//! IMAGE id width height [model]
//! KEYPOINT image_id x y scale
//! DESC image_id idx v0 .. vD
//! MATCH id_a id_b idx_a idx_b
//! ```
//!
//! Keypoints are indexed in file order per image. `MATCH` lines of one pair
//! are grouped into a single verified pair.
//!
//! Reconstruction:
//!
//! ```text
//! RECONSTRUCTION id
//! CAMERA image_id qw qx qy qz tx ty tz
//! POINT point_id x y z n_obs (image_id kp_idx)...
//! ```
//!
//! Cameras appear in registration order. Pixels are looked up from the
//! dataset keypoints when reading.
//!
//! Ground control: `GCP id X Y Z control|check` and `GCPOBS gcp_id image_id px py`.
//!
//! Graph dumps: `EDGE a b weight inliers`, `WCDS id...` and `CLUSTER k: id...`.

mod dataset;
mod model;

use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub use dataset::{read_scene, write_matches, write_scene};
pub use model::{
    read_clusters, read_gcps, read_reconstruction, read_wcds, write_clusters, write_gcps, write_graph,
    write_reconstruction, write_wcds,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl IoError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse { line, message: message.into() }
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split_whitespace().collect()))
        }
    })
}

pub(crate) fn field<T: FromStr>(parts: &[&str], i: usize, line: usize) -> Result<T, IoError> {
    let s = parts.get(i).ok_or_else(|| IoError::parse(line, format!("{} expects more fields", parts[0])))?;
    s.parse().map_err(|_| IoError::parse(line, format!("bad value {s:?} in {}", parts[0])))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<String, IoError> {
    Ok(fs::read_to_string(path)?)
}
