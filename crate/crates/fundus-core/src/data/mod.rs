//! Dataset ingestion, domain bookkeeping, stratified splitting, ROI cropping
//! and coordinate mapping between native and network resolutions.

mod coords;
mod manifest;
mod roi;
mod split;

pub use coords::map_coords;
pub use manifest::{load_manifest, Layout, LoadOptions};
pub use roi::{crop_mask, crop_roi, CropRecord};
pub use split::stratified_split;

use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::mask::{MaskEncoding, SegMask};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing directory: {0}")]
    MissingDirectory(PathBuf),
    #[error("unreadable image {path}: {msg}")]
    UnreadableImage { path: PathBuf, msg: String },
    #[error("cannot infer domain of {path}: {w}x{h} matches no known camera")]
    AmbiguousDomain { path: PathBuf, w: u32, h: u32 },
    #[error("image {path} is {w}x{h}, expected {exp_w}x{exp_h} for domain {domain}")]
    DimensionMismatch {
        path: PathBuf,
        w: u32,
        h: u32,
        exp_w: u32,
        exp_h: u32,
        domain: u8,
    },
    #[error("duplicate id `{0}` in manifest")]
    DuplicateId(String),
    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("manifest parse error at {path}:{line}: {msg}")]
    ManifestParse { path: PathBuf, line: usize, msg: String },
    #[error("invalid split fraction {0}; must be in (0,1)")]
    BadFraction(f64),
    #[error("entry `{0}` has no glaucoma label; the split input must be fully annotated")]
    UnannotatedEntry(String),
    #[error("crop center ({x:.1},{y:.1}) outside {w}x{h} image")]
    CenterOutOfBounds { x: f64, y: f64, w: u32, h: u32 },
    #[error("crop size {size} exceeds both image dimensions {w}x{h}")]
    CropTooLarge { size: u32, w: u32, h: u32 },
    #[error("zero-sized shape in coordinate mapping")]
    ZeroShape,
    #[error("annotation inconsistency for `{id}`: {msg}")]
    Annotation { id: String, msg: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The three acquisition domains of the challenge dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    D1,
    D2,
    D3,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::D1, Domain::D2, Domain::D3];

    pub fn index(self) -> u8 {
        match self {
            Domain::D1 => 1,
            Domain::D2 => 2,
            Domain::D3 => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Domain> {
        match i {
            1 => Some(Domain::D1),
            2 => Some(Domain::D2),
            3 => Some(Domain::D3),
            _ => None,
        }
    }

    /// Native (width, height) of each camera in the challenge release.
    pub fn expected_dims(self) -> (u32, u32) {
        match self {
            Domain::D1 => (2124, 2056),
            Domain::D2 => (1634, 1634),
            Domain::D3 => (1940, 1940),
        }
    }

    /// Inverse of `expected_dims`; `None` when no camera matches.
    pub fn from_dims(w: u32, h: u32) -> Option<Domain> {
        Domain::ALL.iter().copied().find(|d| d.expected_dims() == (w, h))
    }

    /// The two domains other than `self`, in ascending order.
    pub fn others(self) -> [Domain; 2] {
        match self {
            Domain::D1 => [Domain::D2, Domain::D3],
            Domain::D2 => [Domain::D1, Domain::D3],
            Domain::D3 => [Domain::D1, Domain::D2],
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One dataset row: where the image lives and which annotations exist.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: Domain,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub fovea: Option<(f64, f64)>,
    pub glaucoma: Option<bool>,
}

impl ManifestEntry {
    /// Annotated means usable for supervised training: label plus fovea.
    pub fn is_annotated(&self) -> bool {
        self.glaucoma.is_some()
    }
}

/// Enumerates all images of a dataset with their annotation files.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// One loaded fundus photograph with whatever annotations it carries.
#[derive(Debug, Clone)]
pub struct FundusImage {
    pub id: String,
    pub domain: Domain,
    pub pixels: RgbImage,
    pub glaucoma_label: Option<bool>,
    pub mask: Option<SegMask>,
    pub fovea: Option<(f64, f64)>,
    /// Centroid of cup-labeled mask pixels, derived at load time.
    pub cup_center: Option<(f64, f64)>,
}

impl FundusImage {
    pub fn dims(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }

    /// Reads pixels and annotations for a manifest entry.
    pub fn load(entry: &ManifestEntry, enc: MaskEncoding) -> Result<Self, DataError> {
        let pixels = image::open(&entry.image_path)
            .map_err(|e| DataError::UnreadableImage {
                path: entry.image_path.clone(),
                msg: e.to_string(),
            })?
            .to_rgb8();
        let mask = entry
            .mask_path
            .as_ref()
            .map(|p| SegMask::load_png(p, enc, crate::mask::MaskResolution::Native))
            .transpose()
            .map_err(|e| DataError::Annotation {
                id: entry.id.clone(),
                msg: e.to_string(),
            })?;
        let cup_center = mask.as_ref().and_then(|m| m.cup_centroid());
        let img = Self {
            id: entry.id.clone(),
            domain: entry.domain,
            pixels,
            glaucoma_label: entry.glaucoma,
            mask,
            fovea: entry.fovea,
            cup_center,
        };
        img.validate()?;
        Ok(img)
    }

    /// In-bounds checks for point annotations and mask extents.
    pub fn validate(&self) -> Result<(), DataError> {
        let (w, h) = self.dims();
        for (name, pt) in [("fovea", self.fovea), ("cup_center", self.cup_center)] {
            if let Some((x, y)) = pt {
                if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                    return Err(DataError::Annotation {
                        id: self.id.clone(),
                        msg: format!("{name} ({x:.1},{y:.1}) outside {w}x{h} image"),
                    });
                }
            }
        }
        if let Some(mask) = &self.mask {
            let (mh, mw) = mask.dims();
            if (mw as u32, mh as u32) != (w, h) {
                return Err(DataError::Annotation {
                    id: self.id.clone(),
                    msg: format!("mask is {mw}x{mh}, image is {w}x{h}"),
                });
            }
        }
        Ok(())
    }
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries carrying a glaucoma label (the supervised subset).
    pub fn annotated(&self) -> DatasetManifest {
        DatasetManifest {
            entries: self.entries.iter().filter(|e| e.is_annotated()).cloned().collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn domain_census(&self) -> std::collections::BTreeMap<Domain, usize> {
        let mut census = std::collections::BTreeMap::new();
        for e in &self.entries {
            *census.entry(e.domain).or_insert(0) += 1;
        }
        census
    }

    /// Uniqueness of ids and existence of every referenced path.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.clone()) {
                return Err(DataError::DuplicateId(e.id.clone()));
            }
            if !e.image_path.exists() {
                return Err(DataError::MissingPath(e.image_path.clone()));
            }
            if let Some(m) = &e.mask_path {
                if !m.exists() {
                    return Err(DataError::MissingPath(m.clone()));
                }
            }
        }
        Ok(())
    }

    /// Writes `id,domain,image_path,mask_path,fovea_x,fovea_y,glaucoma` with
    /// empty fields for missing annotations.
    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::from("id,domain,image_path,mask_path,fovea_x,fovea_y,glaucoma\n");
        for e in &self.entries {
            let mask = e.mask_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            let (fx, fy) = match e.fovea {
                Some((x, y)) => (format!("{x}"), format!("{y}")),
                None => (String::new(), String::new()),
            };
            let lab = match e.glaucoma {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.id,
                e.domain.index(),
                e.image_path.display(),
                mask,
                fx,
                fy,
                lab
            ));
        }
        std::fs::write(path, out).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |line: usize, msg: &str| DataError::ManifestParse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if !line.starts_with("id,domain,image_path") {
                    return Err(parse_err(1, "unexpected header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(parse_err(i + 1, "expected 7 fields"));
            }
            let domain = fields[1]
                .parse::<u8>()
                .ok()
                .and_then(Domain::from_index)
                .ok_or_else(|| parse_err(i + 1, "bad domain"))?;
            let fovea = match (fields[4], fields[5]) {
                ("", "") => None,
                (fx, fy) => Some((
                    fx.parse::<f64>().map_err(|_| parse_err(i + 1, "bad fovea_x"))?,
                    fy.parse::<f64>().map_err(|_| parse_err(i + 1, "bad fovea_y"))?,
                )),
            };
            let glaucoma = match fields[6] {
                "" => None,
                "1" | "true" => Some(true),
                "0" | "false" => Some(false),
                _ => return Err(parse_err(i + 1, "bad glaucoma label")),
            };
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                domain,
                image_path: PathBuf::from(fields[2]),
                mask_path: (!fields[3].is_empty()).then(|| PathBuf::from(fields[3])),
                fovea,
                glaucoma,
            });
        }
        Ok(Self { entries })
    }
}

/// Train/validation membership by image id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_ids: std::collections::BTreeSet<String>,
    pub val_ids: std::collections::BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn is_train(&self, id: &str) -> bool {
        self.train_ids.contains(id)
    }

    pub fn is_val(&self, id: &str) -> bool {
        self.val_ids.contains(id)
    }

    /// Writes `id,split` rows sorted by id.
    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut rows: Vec<(String, &str)> = self
            .train_ids
            .iter()
            .map(|id| (id.clone(), "train"))
            .chain(self.val_ids.iter().map(|id| (id.clone(), "val")))
            .collect();
        rows.sort();
        let mut out = String::from("id,split\n");
        for (id, split) in rows {
            out.push_str(&format!("{id},{split}\n"));
        }
        std::fs::write(path, out).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut train_ids = std::collections::BTreeSet::new();
        let mut val_ids = std::collections::BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let (id, split) = line.split_once(',').ok_or_else(|| DataError::ManifestParse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `id,split`".into(),
            })?;
            match split {
                "train" => train_ids.insert(id.to_string()),
                "val" => val_ids.insert(id.to_string()),
                other => {
                    return Err(DataError::ManifestParse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("unknown split `{other}`"),
                    })
                }
            };
        }
        Ok(Self {
            train_ids,
            val_ids,
            seed: 0,
        })
    }
}
