use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{build_hierarchy, HierarchyConfig, MeshHierarchy, MultiresError};
use crate::binio::*;
use crate::linalg::SparseMatrix;
use crate::mesh::{Mesh, Vec3};

const MAGIC: &[u8; 8] = b"SPHIER\0\0";
const VERSION: u32 = 1;
const LIMIT: u64 = 1 << 32;

/// Hash of the template geometry, connectivity and hierarchy parameters.
pub fn cache_key(template: &Mesh, config: &HierarchyConfig) -> u64 {
    let mut h = Sha256::new();
    h.update(VERSION.to_le_bytes());
    h.update(template.topology_id().0.to_le_bytes());
    for v in template.vertices() {
        for c in v.iter() {
            h.update(c.to_le_bytes());
        }
    }
    h.update((config.num_levels as u64).to_le_bytes());
    h.update(config.factor.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> MultiresError + '_ {
    move |source| MultiresError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_matrix(w: &mut impl Write, m: &SparseMatrix) -> std::io::Result<()> {
    write_u64(w, m.rows() as u64)?;
    write_u64(w, m.cols() as u64)?;
    let t = m.triplets();
    write_u64(w, t.len() as u64)?;
    for (r, c, v) in t {
        write_u32(w, r as u32)?;
        write_u32(w, c as u32)?;
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read) -> std::io::Result<SparseMatrix> {
    let rows = read_len(r, LIMIT)?;
    let cols = read_len(r, LIMIT)?;
    let nnz = read_len(r, LIMIT)?;
    let mut t = Vec::with_capacity(nnz.min(1 << 20));
    for _ in 0..nnz {
        let i = read_u32(r)? as usize;
        let j = read_u32(r)? as usize;
        let v = read_f64(r)?;
        if i >= rows || j >= cols {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "triplet out of bounds",
            ));
        }
        t.push((i, j, v));
    }
    Ok(SparseMatrix::from_triplets(rows, cols, &t))
}

pub fn write_hierarchy(h: &MeshHierarchy, key: u64, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u64(w, key)?;
    write_u64(w, h.num_levels() as u64)?;
    for m in h.levels() {
        write_u64(w, m.num_vertices() as u64)?;
        write_u64(w, m.num_faces() as u64)?;
        for v in m.vertices() {
            for c in v.iter() {
                write_f64(w, *c)?;
            }
        }
        for f in m.faces() {
            for &i in f {
                write_u32(w, i as u32)?;
            }
        }
    }
    for k in 0..h.num_levels() - 1 {
        write_matrix(w, h.down_op(k))?;
        write_matrix(w, h.up_op(k))?;
    }
    Ok(())
}

/// Reads a hierarchy and the key it was stored under.
pub fn read_hierarchy(r: &mut impl Read) -> Result<(MeshHierarchy, u64), MultiresError> {
    let fmt = |e: std::io::Error| MultiresError::Format(e.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != MAGIC {
        return Err(MultiresError::Format("bad magic".into()));
    }
    let version = read_u32(r).map_err(fmt)?;
    if version != VERSION {
        return Err(MultiresError::Format(format!("unsupported version {version}")));
    }
    let key = read_u64(r).map_err(fmt)?;
    let num_levels = read_len(r, 64).map_err(fmt)?;
    let mut levels = Vec::with_capacity(num_levels);
    for _ in 0..num_levels {
        let n = read_len(r, LIMIT).map_err(fmt)?;
        let f = read_len(r, LIMIT).map_err(fmt)?;
        let mut vertices = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let x = read_f64(r).map_err(fmt)?;
            let y = read_f64(r).map_err(fmt)?;
            let z = read_f64(r).map_err(fmt)?;
            vertices.push(Vec3::new(x, y, z));
        }
        let mut faces = Vec::with_capacity(f.min(1 << 20));
        for _ in 0..f {
            let mut face = [0usize; 3];
            for i in &mut face {
                *i = read_u32(r).map_err(fmt)? as usize;
            }
            faces.push(face);
        }
        levels.push(Mesh::new(vertices, faces)?);
    }
    let mut down = Vec::new();
    let mut up = Vec::new();
    for _ in 1..num_levels {
        down.push(read_matrix(r).map_err(fmt)?);
        up.push(read_matrix(r).map_err(fmt)?);
    }
    Ok((MeshHierarchy::from_parts(levels, down, up)?, key))
}

pub fn cache_path(dir: &Path, key: u64) -> PathBuf {
    dir.join(format!("hierarchy-{key:016x}.bin"))
}

/// Loads the hierarchy cached in `dir` for this template and configuration,
/// building and storing it when absent or stale.
pub fn load_or_build(template: &Mesh, config: &HierarchyConfig, dir: &Path) -> Result<MeshHierarchy, MultiresError> {
    let key = cache_key(template, config);
    let path = cache_path(dir, key);
    if path.exists() {
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        if let Ok((h, stored)) = read_hierarchy(&mut BufReader::new(file)) {
            if stored == key && h.level(0).same_topology(template) {
                return Ok(h);
            }
        }
    }
    let h = build_hierarchy(template, config.num_levels, config.factor)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        write_hierarchy(&h, key, &mut w).map_err(io_err(&tmp))?;
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(h)
}
