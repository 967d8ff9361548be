//! Unpaired domain transfer: three cycle-consistent GAN trainings cover the
//! domain pairs (1,2), (1,3), (2,3); their six directional generators render
//! any image into any domain, tripling the training set.

mod expand;
mod model;
mod train;

pub use expand::{expand_dataset, ExpandedItem, RoiSample};
pub use model::{Discriminator, Generator};
pub use train::{train_cyclegan, GanEpoch, GanHistory, GeneratorPair};

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::data::Domain;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("training set for domain pair is empty")]
    EmptySet,
    #[error("non-finite loss at epoch {epoch}; last good checkpoint attached")]
    NonFinite {
        epoch: usize,
        #[allow(clippy::box_collection)]
        last_good: Option<Box<GeneratorPair>>,
    },
    #[error("generator expects 3-channel input, got {0}")]
    BadChannels(usize),
    #[error("generator set incomplete: missing {0:?}")]
    MissingGenerator((u8, u8)),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] fundus_nn::NnError),
    #[error("io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad metadata {path}: {msg}")]
    Meta { path: std::path::PathBuf, msg: String },
}

/// An unordered domain pair (a < b); exactly three exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DomainPair {
    pub a: Domain,
    pub b: Domain,
}

impl DomainPair {
    pub fn new(a: Domain, b: Domain) -> Result<Self, GanError> {
        if a >= b {
            return Err(GanError::BadConfig(format!(
                "domain pair must be ordered a < b, got ({}, {})",
                a, b
            )));
        }
        Ok(Self { a, b })
    }

    pub const fn all() -> [(Domain, Domain); 3] {
        [
            (Domain::D1, Domain::D2),
            (Domain::D1, Domain::D3),
            (Domain::D2, Domain::D3),
        ]
    }
}

/// CycleGAN hyperparameters; the standard objective, unmodified.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CycleGanConfig {
    pub image_size: usize,
    pub ngf: usize,
    pub ndf: usize,
    pub n_res_blocks: usize,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub lambda_adversarial: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CycleGanConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            ngf: 64,
            ndf: 64,
            n_res_blocks: 6,
            lambda_cycle: 10.0,
            lambda_identity: 5.0,
            lambda_adversarial: 1.0,
            epochs: 100,
            learning_rate: 2e-4,
            seed: 0,
        }
    }
}

impl CycleGanConfig {
    /// The generator downsamples twice, so the operating resolution must be
    /// divisible by 4.
    pub const DOWNSAMPLING_FACTOR: usize = 4;

    pub fn validate(&self) -> Result<(), GanError> {
        if self.image_size % Self::DOWNSAMPLING_FACTOR != 0 {
            return Err(GanError::BadConfig(format!(
                "image size {} not divisible by the generator downsampling factor {}",
                self.image_size,
                Self::DOWNSAMPLING_FACTOR
            )));
        }
        for (name, w) in [
            ("cycle", self.lambda_cycle),
            ("identity", self.lambda_identity),
            ("adversarial", self.lambda_adversarial),
        ] {
            if w < 0.0 {
                return Err(GanError::BadConfig(format!("{name} weight {w} must be >= 0")));
            }
        }
        if self.ngf < 1 || self.ndf < 1 {
            return Err(GanError::BadConfig("feature widths must be positive".into()));
        }
        Ok(())
    }
}

/// All six directional generators, keyed by ordered (source, target).
pub struct GeneratorSet {
    generators: BTreeMap<(Domain, Domain), Generator>,
}

impl GeneratorSet {
    pub fn new() -> Self {
        Self {
            generators: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, gen: Generator) {
        self.generators.insert((gen.source, gen.target), gen);
    }

    pub fn insert_pair(&mut self, pair: GeneratorPair) {
        self.insert(pair.forward);
        self.insert(pair.backward);
    }

    pub fn get(&self, source: Domain, target: Domain) -> Option<&Generator> {
        self.generators.get(&(source, target))
    }

    pub fn get_mut(&mut self, source: Domain, target: Domain) -> Option<&mut Generator> {
        self.generators.get_mut(&(source, target))
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Asserts the 3-pair / 6-generator bijection: every ordered pair of
    /// distinct domains is covered.
    pub fn validate(&self) -> Result<(), GanError> {
        for s in Domain::ALL {
            for t in Domain::ALL {
                if s != t && !self.generators.contains_key(&(s, t)) {
                    return Err(GanError::MissingGenerator((s.index(), t.index())));
                }
            }
        }
        Ok(())
    }

    /// Saves all generators plus a JSON sidecar describing their geometry.
    pub fn save(&self, dir: &Path) -> Result<(), GanError> {
        std::fs::create_dir_all(dir).map_err(|source| GanError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut meta = Vec::new();
        for ((s, t), gen) in &self.generators {
            let name = format!("gen_{}to{}.ckpt", s.index(), t.index());
            fundus_nn::save_checkpoint(&gen.net, &dir.join(&name))?;
            meta.push(serde_json::json!({
                "source": s.index(),
                "target": t.index(),
                "image_size": gen.resolution,
                "ngf": gen.ngf,
                "n_res_blocks": gen.n_res_blocks,
                "file": name,
            }));
        }
        let meta_path = dir.join("generators.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap()).map_err(
            |source| GanError::Io {
                path: meta_path,
                source,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self, GanError> {
        let meta_path = dir.join("generators.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|source| GanError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: Vec<serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| GanError::Meta {
                path: meta_path.clone(),
                msg: e.to_string(),
            })?;
        let mut set = Self::new();
        for m in meta {
            let field = |k: &str| -> Result<u64, GanError> {
                m[k].as_u64().ok_or_else(|| GanError::Meta {
                    path: meta_path.clone(),
                    msg: format!("missing field {k}"),
                })
            };
            let source = Domain::from_index(field("source")? as u8).ok_or_else(|| GanError::Meta {
                path: meta_path.clone(),
                msg: "bad source domain".into(),
            })?;
            let target = Domain::from_index(field("target")? as u8).ok_or_else(|| GanError::Meta {
                path: meta_path.clone(),
                msg: "bad target domain".into(),
            })?;
            let mut gen = Generator::new(
                source,
                target,
                field("image_size")? as usize,
                field("ngf")? as usize,
                field("n_res_blocks")? as usize,
                0,
            );
            let file = m["file"].as_str().ok_or_else(|| GanError::Meta {
                path: meta_path.clone(),
                msg: "missing file".into(),
            })?;
            fundus_nn::load_checkpoint(&mut gen.net, &dir.join(file))?;
            set.insert(gen);
        }
        set.validate()?;
        Ok(set)
    }
}

impl Default for GeneratorSet {
    fn default() -> Self {
        Self::new()
    }
}
