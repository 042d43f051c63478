use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{euclidean, sample_pose, SyntheticDataset};
use super::oracle::{pose_distance, shape_distance, Oracle};
use super::EvalError;
use crate::mesh::Mesh;
use crate::spiral::DisentangleModel;

/// Shape and pose codes of one mesh.
pub type Codes = (Vec<f64>, Vec<f64>);

/// What the protocols need from a model.
pub trait LatentModel {
    fn encode_many(&self, meshes: &[&Mesh]) -> Result<Vec<Codes>, EvalError>;
    fn decode_many(&self, codes: &[Codes]) -> Result<Vec<Mesh>, EvalError>;
}

impl LatentModel for DisentangleModel {
    fn encode_many(&self, meshes: &[&Mesh]) -> Result<Vec<Codes>, EvalError> {
        meshes
            .chunks(32)
            .map(|c| DisentangleModel::encode_many(self, c))
            .try_fold(Vec::new(), |mut acc, r| {
                acc.extend(r?);
                Ok(acc)
            })
            .map_err(|e: crate::spiral::SpiralError| EvalError::Model(e.to_string()))
    }

    fn decode_many(&self, codes: &[Codes]) -> Result<Vec<Mesh>, EvalError> {
        codes
            .chunks(32)
            .map(|c| DisentangleModel::decode_many(self, c))
            .try_fold(Vec::new(), |mut acc, r| {
                acc.extend(r?);
                Ok(acc)
            })
            .map_err(|e: crate::spiral::SpiralError| EvalError::Model(e.to_string()))
    }
}

/// Mean vertex-to-vertex distance after moving both centroids to the origin.
pub fn aligned_error(a: &Mesh, b: &Mesh) -> Result<f64, EvalError> {
    a.check_topology(b)?;
    let (ca, cb) = (a.centroid(), b.centroid());
    let n = a.num_vertices() as f64;
    Ok(a.vertices()
        .iter()
        .zip(b.vertices())
        .map(|(p, q)| ((p - ca) - (q - cb)).norm())
        .sum::<f64>()
        / n)
}

/// Decodes `(beta(shape_src), theta(pose_src))` and compares it with `truth`.
pub fn pose_transfer_error<M: LatentModel + ?Sized>(
    model: &M,
    shape_src: &Mesh,
    pose_src: &Mesh,
    truth: &Mesh,
) -> Result<f64, EvalError> {
    shape_src.check_topology(pose_src)?;
    let codes = model.encode_many(&[shape_src, pose_src])?;
    let out = model.decode_many(&[(codes[0].0.clone(), codes[1].1.clone())])?;
    aligned_error(&out[0], truth)
}

/// One transfer case with its oracle ground truth.
#[derive(Clone, Debug)]
pub struct TransferCase {
    pub shape_subject: usize,
    pub pose_subject: usize,
    pub shape_src: Mesh,
    pub pose_src: Mesh,
    pub truth: Mesh,
    /// Oracle `(shape, pose)` of each source.
    pub shape_src_factors: (Vec<f64>, Vec<f64>),
    pub pose_src_factors: (Vec<f64>, Vec<f64>),
}

/// Transfer cases on poses that are not in the dataset: both sources are
/// rendered in freshly sampled poses of two distinct subjects.
pub fn heldout_transfer_cases(
    data: &SyntheticDataset,
    count: usize,
    seed: u64,
) -> Result<Vec<TransferCase>, EvalError> {
    use rand::Rng;
    let oracle = Oracle::new();
    let subjects = &data.factors.subjects;
    if subjects.len() < 2 {
        return Err(EvalError::InvalidFactors("transfer needs two subjects".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a = rng.gen_range(0..subjects.len());
            let mut b = rng.gen_range(0..subjects.len() - 1);
            if b >= a {
                b += 1;
            }
            let (pa, pb) = (sample_pose(&mut rng), sample_pose(&mut rng));
            Ok(TransferCase {
                shape_subject: a,
                pose_subject: b,
                shape_src: oracle.render(&subjects[a].shape, &pa)?,
                pose_src: oracle.render(&subjects[b].shape, &pb)?,
                truth: oracle.render(&subjects[a].shape, &pb)?,
                shape_src_factors: (subjects[a].shape.clone(), pa),
                pose_src_factors: (subjects[b].shape.clone(), pb),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPairResult {
    pub shape_subject: usize,
    pub pose_subject: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferStats {
    pub mean: f64,
    pub median: f64,
    pub per_pair: Vec<TransferPairResult>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn transfer_benchmark<M: LatentModel + ?Sized>(
    model: &M,
    cases: &[TransferCase],
) -> Result<TransferStats, EvalError> {
    let mut inputs = Vec::with_capacity(2 * cases.len());
    for c in cases {
        inputs.push(&c.shape_src);
        inputs.push(&c.pose_src);
    }
    let codes = model.encode_many(&inputs)?;
    let swapped: Vec<Codes> = codes.chunks(2).map(|p| (p[0].0.clone(), p[1].1.clone())).collect();
    let outputs = model.decode_many(&swapped)?;
    let per_pair = cases
        .iter()
        .zip(&outputs)
        .map(|(c, out)| {
            Ok(TransferPairResult {
                shape_subject: c.shape_subject,
                pose_subject: c.pose_subject,
                error: aligned_error(out, &c.truth)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let errors: Vec<f64> = per_pair.iter().map(|p| p.error).collect();
    Ok(TransferStats {
        mean: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
        median: median(&errors),
        per_pair,
    })
}

/// Which latent code a protocol operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Shape,
    Pose,
}

impl std::str::FromStr for CodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shape" => Ok(Self::Shape),
            "pose" => Ok(Self::Pose),
            other => Err(format!("unknown code '{other}' (expected shape or pose)")),
        }
    }
}

impl CodeKind {
    fn pick(self, c: &Codes) -> &[f64] {
        match self {
            Self::Shape => &c.0,
            Self::Pose => &c.1,
        }
    }
}

/// Principal-component projection fitted once on training codes.
#[derive(Clone, Debug)]
pub struct Pca {
    mean: DVector<f64>,
    /// Rows are components, strongest first.
    components: DMatrix<f64>,
}

impl Pca {
    pub fn fit(samples: &[&[f64]], dims: usize) -> Result<Self, EvalError> {
        let Some(first) = samples.first() else {
            return Err(EvalError::InvalidFactors("PCA needs at least one sample".into()));
        };
        let d = first.len();
        if dims == 0 || dims > d {
            return Err(EvalError::InvalidFactors(format!(
                "PCA dimension {dims} outside 1..={d}"
            )));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let x = DVector::from_column_slice(s) - &mean;
            cov += &x * x.transpose();
        }
        cov /= n;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let components = DMatrix::from_fn(dims, d, |r, c| eig.eigenvectors[(c, order[r])]);
        Ok(Self { mean, components })
    }

    pub fn dims(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (&self.components * (DVector::from_column_slice(x) - &self.mean))
            .as_slice()
            .to_vec()
    }
}

/// Nearest neighbour found for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: usize,
    pub neighbor: usize,
    pub e_shape: f64,
    pub e_pose: f64,
}

/// Codes and oracle factors of a mesh collection, with optional PCA per code.
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    codes: Vec<Codes>,
    factors: Vec<(Vec<f64>, Vec<f64>)>,
    pca: Option<(Pca, Pca)>,
}

impl RetrievalIndex {
    pub fn new(codes: Vec<Codes>, factors: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self, EvalError> {
        if codes.len() != factors.len() {
            return Err(EvalError::InvalidFactors(format!(
                "{} codes but {} factor records",
                codes.len(),
                factors.len()
            )));
        }
        Ok(Self {
            codes,
            factors,
            pca: None,
        })
    }

    /// Projects both codes onto `dims` principal components (clamped to the
    /// code width) fitted on `training` only.
    pub fn with_pca(mut self, training: &[Codes], dims: usize) -> Result<Self, EvalError> {
        let fit = |kind: CodeKind| {
            let rows: Vec<&[f64]> = training.iter().map(|c| kind.pick(c)).collect();
            let width = rows.first().map_or(0, |r| r.len());
            Pca::fit(&rows, dims.min(width))
        };
        self.pca = Some((fit(CodeKind::Shape)?, fit(CodeKind::Pose)?));
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    fn key(&self, i: usize, kind: CodeKind) -> Vec<f64> {
        let raw = kind.pick(&self.codes[i]);
        match (&self.pca, kind) {
            (Some((p, _)), CodeKind::Shape) => p.project(raw),
            (Some((_, p)), CodeKind::Pose) => p.project(raw),
            (None, _) => raw.to_vec(),
        }
    }

    /// Nearest gallery entry to `query` in the chosen code; ties go to the
    /// lowest gallery position.
    pub fn retrieve(&self, query: usize, gallery: &[usize], kind: CodeKind) -> Result<RetrievalResult, EvalError> {
        if gallery.is_empty() {
            return Err(EvalError::EmptyGallery);
        }
        let q = self.key(query, kind);
        let mut best = (f64::INFINITY, gallery[0]);
        for &g in gallery {
            let d = euclidean(&q, &self.key(g, kind));
            if d < best.0 {
                best = (d, g);
            }
        }
        let n = best.1;
        Ok(RetrievalResult {
            query,
            neighbor: n,
            e_shape: shape_distance(&self.factors[query].0, &self.factors[n].0),
            e_pose: pose_distance(&self.factors[query].1, &self.factors[n].1),
        })
    }
}

/// Mean oracle errors of the retrieved neighbours for one code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalErrors {
    pub e_shape: f64,
    pub e_pose: f64,
}

/// Retrieval errors by code: the 2x2 table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTable {
    pub shape_code: RetrievalErrors,
    pub pose_code: RetrievalErrors,
}

pub fn retrieval_table(
    index: &RetrievalIndex,
    queries: &[usize],
    gallery: &[usize],
) -> Result<RetrievalTable, EvalError> {
    let run = |kind| -> Result<RetrievalErrors, EvalError> {
        let mut e = RetrievalErrors {
            e_shape: 0.0,
            e_pose: 0.0,
        };
        for &q in queries {
            let r = index.retrieve(q, gallery, kind)?;
            e.e_shape += r.e_shape;
            e.e_pose += r.e_pose;
        }
        let n = queries.len().max(1) as f64;
        e.e_shape /= n;
        e.e_pose /= n;
        Ok(e)
    };
    Ok(RetrievalTable {
        shape_code: run(CodeKind::Shape)?,
        pose_code: run(CodeKind::Pose)?,
    })
}

/// Decodes `steps` uniformly spaced codes, interpolating only `kind` from
/// source to target and holding the other code at the source's value.
pub fn interpolate<M: LatentModel + ?Sized>(
    model: &M,
    source: &Mesh,
    target: &Mesh,
    kind: CodeKind,
    steps: usize,
) -> Result<Vec<Mesh>, EvalError> {
    if steps < 2 {
        return Err(EvalError::InvalidFactors(format!(
            "interpolation needs at least 2 steps, got {steps}"
        )));
    }
    let c = model.encode_many(&[source, target])?;
    let (s, t) = (&c[0], &c[1]);
    let lerp = |a: &[f64], b: &[f64], w: f64| a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect::<Vec<_>>();
    let codes: Vec<Codes> = (0..steps)
        .map(|k| {
            let w = k as f64 / (steps - 1) as f64;
            match kind {
                CodeKind::Shape => (lerp(&s.0, &t.0, w), s.1.clone()),
                CodeKind::Pose => (s.0.clone(), lerp(&s.1, &t.1, w)),
            }
        })
        .collect();
    model.decode_many(&codes)
}

/// Largest distance of any fitted factor vector along the sequence from the
/// first one, for the factor that should stay fixed (shape while the pose is
/// interpolated and vice versa).
pub fn sequence_drift(oracle: &Oracle, sequence: &[Mesh], interpolated: CodeKind) -> Result<f64, EvalError> {
    let fit = |m: &Mesh| match interpolated {
        CodeKind::Pose => oracle.fit_shape(m),
        CodeKind::Shape => oracle.fit_pose(m),
    };
    let Some(first) = sequence.first() else {
        return Ok(0.0);
    };
    let f0 = fit(first)?;
    sequence
        .iter()
        .try_fold(0.0f64, |acc, m| Ok(acc.max(euclidean(&fit(m)?, &f0))))
}
