//! Directory-layout loaders producing a [`DatasetManifest`].
//!
//! Two layouts are supported:
//!
//! - `challenge`: `root/domain{1,2,3}/images/*.png|jpg|bmp` with optional
//!   `masks/` (same stem, PNG), `fovea.csv` (`id,fovea_x,fovea_y`) and
//!   `labels.csv` (`id,glaucoma`) per domain directory. Image dimensions
//!   must match the domain's camera unless `permissive_dims` is set.
//!   Domain 3 is the unlabeled test domain; annotation files there are
//!   ignored with a warning.
//! - `flat`: a single directory of images whose domain is inferred from
//!   the image dimensions; anything that matches no camera is an error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{DataError, DatasetManifest, Domain, ManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Challenge,
    Flat,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "challenge" => Ok(Layout::Challenge),
            "flat" => Ok(Layout::Flat),
            other => Err(format!("unknown layout `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept images whose dimensions do not match the domain's camera.
    pub permissive_dims: bool,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

pub fn load_manifest(
    root: &Path,
    layout: Layout,
    options: &LoadOptions,
) -> Result<DatasetManifest, DataError> {
    if !root.is_dir() {
        return Err(DataError::MissingDirectory(root.to_path_buf()));
    }
    let manifest = match layout {
        Layout::Challenge => load_challenge(root, options)?,
        Layout::Flat => load_flat(root)?,
    };
    manifest.validate()?;
    Ok(manifest)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in rd {
        let entry = entry.map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn dims_of(path: &Path) -> Result<(u32, u32), DataError> {
    image::image_dimensions(path).map_err(|e| DataError::UnreadableImage {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn load_challenge(root: &Path, options: &LoadOptions) -> Result<DatasetManifest, DataError> {
    let mut entries = Vec::new();
    for domain in Domain::ALL {
        let dom_dir = root.join(format!("domain{}", domain.index()));
        if !dom_dir.is_dir() {
            continue;
        }
        let images_dir = dom_dir.join("images");
        if !images_dir.is_dir() {
            return Err(DataError::MissingDirectory(images_dir));
        }
        let annotated_domain = domain != Domain::D3;
        let fovea = if annotated_domain {
            read_fovea_csv(&dom_dir.join("fovea.csv"))?
        } else {
            warn_if_annotations(&dom_dir);
            BTreeMap::new()
        };
        let labels = if annotated_domain {
            read_labels_csv(&dom_dir.join("labels.csv"))?
        } else {
            BTreeMap::new()
        };
        let masks_dir = dom_dir.join("masks");

        for path in image_files(&images_dir)? {
            let (w, h) = dims_of(&path)?;
            let (exp_w, exp_h) = domain.expected_dims();
            if (w, h) != (exp_w, exp_h) && !options.permissive_dims {
                return Err(DataError::DimensionMismatch {
                    path,
                    w,
                    h,
                    exp_w,
                    exp_h,
                    domain: domain.index(),
                });
            }
            let id = stem_of(&path);
            let mask_path = annotated_domain
                .then(|| masks_dir.join(format!("{id}.png")))
                .filter(|p| p.exists());
            entries.push(ManifestEntry {
                id: id.clone(),
                domain,
                image_path: path,
                mask_path,
                fovea: fovea.get(&id).copied(),
                glaucoma: labels.get(&id).copied(),
            });
        }
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest { entries })
}

fn warn_if_annotations(dom_dir: &Path) {
    for name in ["masks", "fovea.csv", "labels.csv"] {
        if dom_dir.join(name).exists() {
            log::warn!(
                "{} present under test domain directory {}; ignored",
                name,
                dom_dir.display()
            );
        }
    }
}

fn load_flat(root: &Path) -> Result<DatasetManifest, DataError> {
    let mut entries = Vec::new();
    for path in image_files(root)? {
        let (w, h) = dims_of(&path)?;
        let domain = Domain::from_dims(w, h)
            .ok_or_else(|| DataError::AmbiguousDomain { path: path.clone(), w, h })?;
        entries.push(ManifestEntry {
            id: stem_of(&path),
            domain,
            image_path: path,
            mask_path: None,
            fovea: None,
            glaucoma: None,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest { entries })
}

fn read_fovea_csv(path: &Path) -> Result<BTreeMap<String, (f64, f64)>, DataError> {
    let mut map = BTreeMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let err = |msg: &str| DataError::ManifestParse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        if fields.len() != 3 {
            return Err(err("expected `id,fovea_x,fovea_y`"));
        }
        let x = fields[1].parse::<f64>().map_err(|_| err("bad fovea_x"))?;
        let y = fields[2].parse::<f64>().map_err(|_| err("bad fovea_y"))?;
        map.insert(fields[0].to_string(), (x, y));
    }
    Ok(map)
}

fn read_labels_csv(path: &Path) -> Result<BTreeMap<String, bool>, DataError> {
    let mut map = BTreeMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| DataError::ManifestParse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (id, lab) = line.split_once(',').ok_or_else(|| err("expected `id,glaucoma`"))?;
        let value = match lab {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(err("bad glaucoma label")),
        };
        map.insert(id.to_string(), value);
    }
    Ok(map)
}
