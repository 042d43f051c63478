use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{Oracle, POSE_DIM, POSE_LIMIT, SHAPE_RANGES};
use super::EvalError;
use crate::mesh::{write_mesh, DatasetIndex, LoadedDataset, Mesh, SubjectEntry};

/// Ground-truth factors of one generated subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFactors {
    pub id: String,
    pub shape: Vec<f64>,
    /// One pose vector per mesh, in index order.
    pub poses: Vec<Vec<f64>>,
}

/// Factor table written next to a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub subjects: Vec<SubjectFactors>,
}

impl FactorTable {
    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| EvalError::Format(e.to_string()))?;
        fs::write(path, text).map_err(|e| EvalError::io(path, e))
    }

    /// `(subject, shape, pose)` of every mesh, flattened in index order.
    pub fn per_mesh(&self) -> Vec<(usize, &[f64], &[f64])> {
        self.subjects
            .iter()
            .enumerate()
            .flat_map(|(s, f)| f.poses.iter().map(move |p| (s, f.shape.as_slice(), p.as_slice())))
            .collect()
    }

    /// Mean pairwise distance between subject shape vectors.
    pub fn shape_spread(&self) -> f64 {
        mean_pairwise(&self.subjects.iter().map(|s| s.shape.as_slice()).collect::<Vec<_>>())
    }

    /// Mean pairwise distance between all pose vectors.
    pub fn pose_spread(&self) -> f64 {
        mean_pairwise(
            &self
                .subjects
                .iter()
                .flat_map(|s| s.poses.iter().map(Vec::as_slice))
                .collect::<Vec<_>>(),
        )
    }
}

fn mean_pairwise(v: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            total += euclidean(v[i], v[j]);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn sample_shape(rng: &mut impl Rng) -> Vec<f64> {
    SHAPE_RANGES.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect()
}

pub fn sample_pose(rng: &mut impl Rng) -> Vec<f64> {
    (0..POSE_DIM).map(|_| rng.gen_range(-POSE_LIMIT..POSE_LIMIT)).collect()
}

/// Rest-pose creature with mid-range shape, used as the connectivity template.
pub fn template(oracle: &Oracle) -> Mesh {
    let shape: Vec<f64> = SHAPE_RANGES.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    oracle
        .render(&shape, &[0.0; POSE_DIM])
        .expect("template factors are valid")
}

/// A generated dataset held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub template: Mesh,
    pub factors: FactorTable,
    /// `meshes[s][p]` renders subject `s` in pose `p`.
    pub meshes: Vec<Vec<Mesh>>,
}

/// Samples per-subject shapes and per-mesh poses and renders every mesh.
pub fn generate_dataset(
    num_subjects: usize,
    poses_per_subject: usize,
    seed: u64,
) -> Result<SyntheticDataset, EvalError> {
    if num_subjects < 2 || poses_per_subject < 2 {
        return Err(EvalError::InvalidFactors(format!(
            "need at least 2 subjects and 2 poses each, got {num_subjects} x {poses_per_subject}"
        )));
    }
    let oracle = Oracle::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(num_subjects);
    let mut meshes = Vec::with_capacity(num_subjects);
    for s in 0..num_subjects {
        let shape = sample_shape(&mut rng);
        let poses: Vec<Vec<f64>> = (0..poses_per_subject).map(|_| sample_pose(&mut rng)).collect();
        meshes.push(
            poses
                .iter()
                .map(|p| oracle.render(&shape, p))
                .collect::<Result<Vec<_>, _>>()?,
        );
        subjects.push(SubjectFactors {
            id: format!("s{s:03}"),
            shape,
            poses,
        });
    }
    Ok(SyntheticDataset {
        template: template(&oracle),
        factors: FactorTable { subjects },
        meshes,
    })
}

impl SyntheticDataset {
    /// Pairs loaded meshes with their factor table, checking the subject layout agrees.
    pub fn from_loaded(data: &LoadedDataset, factors: FactorTable) -> Result<Self, EvalError> {
        if factors.subjects.len() != data.per_subject.len()
            || factors
                .subjects
                .iter()
                .zip(&data.per_subject)
                .any(|(f, ids)| f.poses.len() != ids.len())
        {
            return Err(EvalError::Format(
                "factor table does not match the dataset layout".into(),
            ));
        }
        let meshes = data
            .per_subject
            .iter()
            .map(|ids| ids.iter().map(|&i| data.mesh(i).clone()).collect())
            .collect();
        Ok(Self {
            template: data.template.clone(),
            factors,
            meshes,
        })
    }

    /// Writes `template.ply`, one PLY per mesh, `factors.json` and `index.json`.
    pub fn write(&self, dir: &Path) -> Result<DatasetIndex, EvalError> {
        fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
        write_mesh(&self.template, &dir.join("template.ply"))?;
        let mut subjects = Vec::with_capacity(self.meshes.len());
        for (f, meshes) in self.factors.subjects.iter().zip(&self.meshes) {
            let mut paths = Vec::with_capacity(meshes.len());
            for (p, m) in meshes.iter().enumerate() {
                let rel = PathBuf::from(format!("{}_{p:03}.ply", f.id));
                write_mesh(m, &dir.join(&rel))?;
                paths.push(rel);
            }
            subjects.push(SubjectEntry {
                id: f.id.clone(),
                meshes: paths,
            });
        }
        self.factors.write(&dir.join("factors.json"))?;
        let index = DatasetIndex {
            topology: "template.ply".into(),
            subjects,
            oracle: Some("factors.json".into()),
            root: dir.to_path_buf(),
        };
        index.write(&dir.join("index.json"))?;
        Ok(index)
    }
}
