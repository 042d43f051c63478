//! Triplet sampling, the cross- and self-consistency objectives and the
//! training loop.

mod losses;
mod train;

use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arap::ArapError;
use crate::mesh::{DatasetIndex, LoadedDataset, Mesh, MeshError};
use crate::multires::MultiresError;
use crate::nn::NnError;
use crate::spiral::SpiralError;

pub use losses::{
    consistency_forward, cross_consistency_loss, reconstruction_forward, self_consistency_from_proxy,
    self_consistency_loss, stack_meshes, Codec, ForwardLosses, LossContext, TripletRef,
};
pub use train::{
    model_from_checkpoint, read_metrics, resume, train, TrainConfig, TrainOutcome, Trainer, HIERARCHY_ATTACHMENT,
    METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has {0} subject(s); self-consistency needs at least 2")]
    SingleSubject(usize),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("ARAP failed at step {step} on triplet (x1={x1}, x2={x2}, xt={xt}): {source}")]
    Arap {
        step: u64,
        x1: usize,
        x2: usize,
        xt: usize,
        #[source]
        source: ArapError,
    },
    #[error("non-finite loss at step {step}; last good checkpoint: {}", last_checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string()))]
    NanLoss {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Spiral(#[from] SpiralError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Multires(#[from] MultiresError),
    #[error(transparent)]
    ArapSetup(#[from] ArapError),
}

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Which parts of the objective are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    /// The decoded proxy is used directly, without the ARAP refinement.
    #[serde(alias = "no-arap")]
    NoArap,
    /// Cross-consistency only.
    #[serde(alias = "no-self", alias = "no_self")]
    NoSelfConsistency,
}

impl AblationMode {
    pub fn cli_name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoArap => "no-arap",
            Self::NoSelfConsistency => "no-self",
        }
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "no-arap" | "no_arap" => Ok(Self::NoArap),
            "no-self" | "no_self" | "no_self_consistency" => Ok(Self::NoSelfConsistency),
            other => Err(format!(
                "unknown ablation '{other}' (expected full, no-arap or no-self)"
            )),
        }
    }
}

/// Training objective. `Reconstruction` is the entangled baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Consistency,
    Reconstruction,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consistency" => Ok(Self::Consistency),
            "reconstruction" => Ok(Self::Reconstruction),
            other => Err(format!(
                "unknown objective '{other}' (expected consistency or reconstruction)"
            )),
        }
    }
}

/// Mesh ids of one triplet: `x1`, `x2` from `subject`, `xt` from `other`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub x1: usize,
    pub x2: usize,
    pub xt: usize,
    pub subject: usize,
    pub other: usize,
}

/// Per-step losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    #[serde(rename = "L_C")]
    pub l_c: f64,
    #[serde(rename = "L_S")]
    pub l_s: f64,
    pub total: f64,
    pub lr: f64,
}

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.step, self.l_c, self.l_s, self.total, self.lr
        )
    }
}

/// SplitMix64 over a sequence of words; used to derive independent seeds from
/// `(run seed, step, batch slot, purpose)`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c908u64;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Meshes grouped by subject, ready for sampling.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    meshes: Vec<Mesh>,
    subject_of: Vec<usize>,
    per_subject: Vec<Vec<usize>>,
}

impl TrainingSet {
    /// `groups[s]` holds the meshes of subject `s`.
    pub fn new(groups: Vec<Vec<Mesh>>) -> Result<Self, TrainError> {
        let mut meshes = Vec::new();
        let mut subject_of = Vec::new();
        let mut per_subject = Vec::with_capacity(groups.len());
        for (s, g) in groups.into_iter().enumerate() {
            if g.len() < 2 {
                return Err(TrainError::Data(format!(
                    "subject {s} has {} mesh(es); at least 2 are required",
                    g.len()
                )));
            }
            let mut ids = Vec::with_capacity(g.len());
            for m in g {
                if let Some(first) = meshes.first() {
                    Mesh::check_topology(first, &m)?;
                }
                ids.push(meshes.len());
                subject_of.push(s);
                meshes.push(m);
            }
            per_subject.push(ids);
        }
        if per_subject.len() < 2 {
            return Err(TrainError::SingleSubject(per_subject.len()));
        }
        Ok(Self {
            meshes,
            subject_of,
            per_subject,
        })
    }

    pub fn from_loaded(data: &LoadedDataset) -> Result<Self, TrainError> {
        Self::new(
            data.per_subject
                .iter()
                .map(|ids| ids.iter().map(|&i| data.mesh(i).clone()).collect())
                .collect(),
        )
    }

    pub fn mesh(&self, id: usize) -> &Mesh {
        &self.meshes[id]
    }

    pub fn meshes(&self) -> &[Mesh] {
        &self.meshes
    }

    pub fn subject_of(&self, id: usize) -> usize {
        self.subject_of[id]
    }

    pub fn subject_sizes(&self) -> Vec<usize> {
        self.per_subject.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }

    /// SHA-256 over all vertex coordinates and subject assignments, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (m, s) in self.meshes.iter().zip(&self.subject_of) {
            h.update((*s as u64).to_le_bytes());
            for x in m.to_flat() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<TrainingTriplet, TrainError> {
        let t = sample_triplet_sizes(&self.subject_sizes(), rng)?;
        let id = |s: usize, k: usize| self.per_subject[s][k];
        Ok(TrainingTriplet {
            x1: id(t.subject, t.x1),
            x2: id(t.subject, t.x2),
            xt: id(t.other, t.xt),
            ..t
        })
    }
}

/// Uniform draw over ordered triplets, returned as positions within each
/// subject's mesh list. A subject is chosen with probability proportional to
/// the number of triplets it anchors, `n(n-1)(M-n)`.
fn sample_triplet_sizes(sizes: &[usize], rng: &mut impl Rng) -> Result<TrainingTriplet, TrainError> {
    if sizes.len() < 2 {
        return Err(TrainError::SingleSubject(sizes.len()));
    }
    if let Some(s) = sizes.iter().position(|&n| n < 2) {
        return Err(TrainError::Data(format!("subject {s} has fewer than 2 meshes")));
    }
    let total: usize = sizes.iter().sum();
    let weights: Vec<u128> = sizes
        .iter()
        .map(|&n| (n as u128) * (n as u128 - 1) * (total - n) as u128)
        .collect();
    let sum: u128 = weights.iter().sum();
    let mut pick = rng.gen_range(0..sum);
    let mut subject = 0;
    for (s, &w) in weights.iter().enumerate() {
        if pick < w {
            subject = s;
            break;
        }
        pick -= w;
    }
    let n = sizes[subject];
    let x1 = rng.gen_range(0..n);
    let mut x2 = rng.gen_range(0..n - 1);
    if x2 >= x1 {
        x2 += 1;
    }
    let mut t = rng.gen_range(0..total - n);
    let mut other = 0;
    for (s, &m) in sizes.iter().enumerate() {
        if s == subject {
            continue;
        }
        if t < m {
            other = s;
            break;
        }
        t -= m;
    }
    Ok(TrainingTriplet {
        x1,
        x2,
        xt: t,
        subject,
        other,
    })
}

/// Draws one triplet of global mesh ids (index order) from a dataset index.
pub fn sample_triplet(index: &DatasetIndex, seed: u64) -> Result<TrainingTriplet, TrainError> {
    index.validate()?;
    let sizes: Vec<usize> = index.subjects.iter().map(|s| s.meshes.len()).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = sample_triplet_sizes(&sizes, &mut rng)?;
    Ok(TrainingTriplet {
        x1: offsets[t.subject] + t.x1,
        x2: offsets[t.subject] + t.x2,
        xt: offsets[t.other] + t.xt,
        ..t
    })
}
