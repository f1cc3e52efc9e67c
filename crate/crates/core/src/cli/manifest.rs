//! Dataset manifests: CSV rows of `image,mask,labels`.
//!
//! `mask` is `-` for images without ground truth; `labels` holds
//! space-separated category names and is empty for background images.
//! Relative paths resolve against the manifest's directory. Lines starting
//! with `#` are comments.

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Data(format!(
                    "{}:{}: expected 'image,mask,labels', got {} fields",
                    path.display(),
                    lineno + 1,
                    fields.len()
                )));
            }
            let resolve = |p: &str| -> PathBuf {
                let pb = PathBuf::from(p.trim());
                if pb.is_absolute() {
                    pb
                } else {
                    dir.join(pb)
                }
            };
            let image = resolve(fields[0]);
            if !image.is_file() {
                return Err(Error::Data(format!(
                    "{}:{}: image not found: {}",
                    path.display(),
                    lineno + 1,
                    image.display()
                )));
            }
            let mask = match fields[1].trim() {
                "-" | "" => None,
                m => {
                    let mp = resolve(m);
                    if !mp.is_file() {
                        return Err(Error::Data(format!(
                            "{}:{}: mask not found: {}",
                            path.display(),
                            lineno + 1,
                            mp.display()
                        )));
                    }
                    Some(mp)
                }
            };
            let labels: Vec<String> = fields[2]
                .split_whitespace()
                .map(|s| s.to_string())
                .collect();
            rows.push(ManifestRow { image, mask, labels });
        }
        if rows.is_empty() {
            return Err(Error::Data(format!("{}: empty manifest", path.display())));
        }
        Ok(Manifest { rows })
    }
}
