use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{load_mesh, Mesh, MeshError, Topology};

/// JSON manifest of a registered-mesh dataset.
///
/// ```json
/// {"topology": "template.ply", "subjects": [{"id": "s0", "meshes": ["s0_0.ply", "s0_1.ply"]}]}
/// ```
///
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub topology: PathBuf,
    pub subjects: Vec<SubjectEntry>,
    /// Optional oracle factor table written by the synthetic generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<PathBuf>,
    #[serde(skip)]
    pub root: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub meshes: Vec<PathBuf>,
}

/// One mesh of a loaded dataset.
#[derive(Clone, Debug)]
pub struct MeshRecord {
    pub mesh_id: usize,
    pub subject: usize,
    pub path: PathBuf,
    pub mesh: Mesh,
}

impl DatasetIndex {
    pub fn read(path: &Path) -> Result<Self, MeshError> {
        let text = fs::read_to_string(path).map_err(|e| MeshError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut index: DatasetIndex = serde_json::from_str(&text).map_err(|e| MeshError::Dataset(e.to_string()))?;
        index.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        index.validate()?;
        Ok(index)
    }

    pub fn write(&self, path: &Path) -> Result<(), MeshError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| MeshError::Dataset(e.to_string()))?;
        fs::write(path, text).map_err(|e| MeshError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let mut ids = BTreeSet::new();
        for s in &self.subjects {
            if !ids.insert(&s.id) {
                return Err(MeshError::Dataset(format!("duplicate subject id '{}'", s.id)));
            }
            if s.meshes.len() < 2 {
                return Err(MeshError::Dataset(format!(
                    "subject '{}' has {} mesh(es); at least 2 are required",
                    s.id,
                    s.meshes.len()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn num_meshes(&self) -> usize {
        self.subjects.iter().map(|s| s.meshes.len()).sum()
    }

    /// Loads the template and every mesh, checking all share the template's connectivity.
    pub fn load(&self) -> Result<LoadedDataset, MeshError> {
        let template = load_mesh(&self.resolve(&self.topology), None)?;
        let topology = Arc::clone(template.topology());
        let mut records = Vec::with_capacity(self.num_meshes());
        let mut per_subject = Vec::with_capacity(self.subjects.len());
        for (si, s) in self.subjects.iter().enumerate() {
            let mut ids = Vec::with_capacity(s.meshes.len());
            for p in &s.meshes {
                let path = self.resolve(p);
                let mesh = load_mesh(&path, Some(&topology))?;
                ids.push(records.len());
                records.push(MeshRecord {
                    mesh_id: records.len(),
                    subject: si,
                    path,
                    mesh,
                });
            }
            per_subject.push(ids);
        }
        Ok(LoadedDataset {
            template,
            subject_ids: self.subjects.iter().map(|s| s.id.clone()).collect(),
            records,
            per_subject,
        })
    }
}

/// A dataset held in memory.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub template: Mesh,
    pub subject_ids: Vec<String>,
    pub records: Vec<MeshRecord>,
    /// Mesh ids of each subject.
    pub per_subject: Vec<Vec<usize>>,
}

impl LoadedDataset {
    pub fn topology(&self) -> &Arc<Topology> {
        self.template.topology()
    }

    pub fn mesh(&self, id: usize) -> &Mesh {
        &self.records[id].mesh
    }

    pub fn subject_of(&self, id: usize) -> usize {
        self.records[id].subject
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_meshes::unit_cube;
    use super::super::write_mesh;
    use super::*;

    #[test]
    fn manifest_round_trip_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let cube = unit_cube();
        write_mesh(&cube, &dir.path().join("t.ply")).unwrap();
        for k in 0..4 {
            let m = cube.map_vertices(|v| v * (1.0 + k as f64));
            write_mesh(&m, &dir.path().join(format!("m{k}.ply"))).unwrap();
        }
        let index = DatasetIndex {
            topology: "t.ply".into(),
            subjects: vec![
                SubjectEntry {
                    id: "a".into(),
                    meshes: vec!["m0.ply".into(), "m1.ply".into()],
                },
                SubjectEntry {
                    id: "b".into(),
                    meshes: vec!["m2.ply".into(), "m3.ply".into()],
                },
            ],
            oracle: None,
            root: PathBuf::new(),
        };
        let p = dir.path().join("index.json");
        index.write(&p).unwrap();
        let back = DatasetIndex::read(&p).unwrap();
        assert_eq!(back.subjects, index.subjects);
        let data = back.load().unwrap();
        assert_eq!(data.len(), 4);
        assert_eq!(data.per_subject, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(data.subject_of(3), 1);
        assert!(data.mesh(2).same_topology(&data.template));
    }

    #[test]
    fn single_mesh_subject_is_rejected() {
        let index = DatasetIndex {
            topology: "t.ply".into(),
            subjects: vec![SubjectEntry {
                id: "a".into(),
                meshes: vec!["m0.ply".into()],
            }],
            oracle: None,
            root: PathBuf::new(),
        };
        assert!(index.validate().is_err());
    }
}
