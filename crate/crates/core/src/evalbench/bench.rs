use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{sample_pose, SyntheticDataset};
use super::oracle::Oracle;
use super::protocols::{
    heldout_transfer_cases, interpolate, retrieval_table, sequence_drift, transfer_benchmark, CodeKind, LatentModel,
    RetrievalIndex, RetrievalTable, TransferCase, TransferStats,
};
use super::EvalError;
use crate::mesh::Mesh;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub transfer_cases: usize,
    /// Held-out retrieval queries rendered per subject.
    pub queries_per_subject: usize,
    pub interpolations: usize,
    pub interpolation_steps: usize,
    /// Optional PCA width for a second retrieval table.
    pub pca_dims: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            transfer_cases: 100,
            queries_per_subject: 3,
            interpolations: 20,
            interpolation_steps: 8,
            pca_dims: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationRecord {
    pub shape_subject: usize,
    pub pose_subject: usize,
    /// Largest distance of the held factor from its value at the first step.
    pub drift: f64,
    /// `drift` over the spread of that factor across the dataset.
    pub relative_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub shape_spread: f64,
    pub pose_spread: f64,
    /// Pose interpolations; drift is measured on the fitted shape.
    pub pose_sequences: Vec<InterpolationRecord>,
    /// Shape interpolations; drift is measured on the fitted pose.
    pub shape_sequences: Vec<InterpolationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub pose_transfer: TransferStats,
    pub retrieval: RetrievalTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval_pca: Option<RetrievalTable>,
    pub interpolation: InterpolationReport,
}

/// Held-out retrieval queries and the gallery index over dataset plus queries.
fn retrieval<M: LatentModel + ?Sized>(
    model: &M,
    data: &SyntheticDataset,
    config: &BenchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RetrievalTable, Option<RetrievalTable>), EvalError> {
    let oracle = Oracle::new();
    let mut meshes: Vec<&Mesh> = Vec::new();
    let mut factors = Vec::new();
    for (f, ms) in data.factors.subjects.iter().zip(&data.meshes) {
        for (p, m) in f.poses.iter().zip(ms) {
            meshes.push(m);
            factors.push((f.shape.clone(), p.clone()));
        }
    }
    let gallery: Vec<usize> = (0..meshes.len()).collect();
    let mut extra = Vec::new();
    for f in &data.factors.subjects {
        for _ in 0..config.queries_per_subject {
            let p = sample_pose(rng);
            extra.push(oracle.render(&f.shape, &p)?);
            factors.push((f.shape.clone(), p));
        }
    }
    meshes.extend(extra.iter());
    let queries: Vec<usize> = (gallery.len()..meshes.len()).collect();
    let codes = model.encode_many(&meshes)?;
    let training = codes[..gallery.len()].to_vec();
    let index = RetrievalIndex::new(codes, factors)?;
    let plain = retrieval_table(&index, &queries, &gallery)?;
    let reduced = match config.pca_dims {
        Some(d) => Some(retrieval_table(&index.with_pca(&training, d)?, &queries, &gallery)?),
        None => None,
    };
    Ok((plain, reduced))
}

/// Interpolation sequences between the two sources of each case.
pub fn interpolation_sequences<M: LatentModel + ?Sized>(
    model: &M,
    cases: &[TransferCase],
    kind: CodeKind,
    steps: usize,
) -> Result<Vec<Vec<Mesh>>, EvalError> {
    cases
        .iter()
        .map(|c| interpolate(model, &c.shape_src, &c.pose_src, kind, steps))
        .collect()
}

/// Runs all protocols on held-out renders of the dataset's subjects.
pub fn run_benchmark<M: LatentModel + ?Sized>(
    model: &M,
    data: &SyntheticDataset,
    config: &BenchConfig,
) -> Result<BenchReport, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cases = heldout_transfer_cases(data, config.transfer_cases.max(config.interpolations), rng.gen())?;
    let pose_transfer = transfer_benchmark(model, &cases[..config.transfer_cases])?;
    let (retrieval, retrieval_pca) = retrieval(model, data, config, &mut rng)?;
    let oracle = Oracle::new();
    let shape_spread = data.factors.shape_spread();
    let pose_spread = data.factors.pose_spread();
    let records = |kind: CodeKind, spread: f64| -> Result<Vec<InterpolationRecord>, EvalError> {
        let seqs = interpolation_sequences(model, &cases[..config.interpolations], kind, config.interpolation_steps)?;
        cases
            .iter()
            .zip(&seqs)
            .map(|(c, s)| {
                let drift = sequence_drift(&oracle, s, kind)?;
                Ok(InterpolationRecord {
                    shape_subject: c.shape_subject,
                    pose_subject: c.pose_subject,
                    drift,
                    relative_drift: drift / spread,
                })
            })
            .collect()
    };
    let pose_sequences = records(CodeKind::Pose, shape_spread)?;
    let shape_sequences = records(CodeKind::Shape, pose_spread)?;
    Ok(BenchReport {
        pose_transfer,
        retrieval,
        retrieval_pca,
        interpolation: InterpolationReport {
            shape_spread,
            pose_spread,
            pose_sequences,
            shape_sequences,
        },
    })
}
