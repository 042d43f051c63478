//! A model that "encodes" meshes to their oracle factors and "decodes" by
//! rendering. Meshes with known factors are looked up exactly; anything else
//! is fitted.

use super::dataset::SyntheticDataset;
use super::oracle::{Oracle, POSE_DIM, SHAPE_DIM};
use super::protocols::{Codes, LatentModel, TransferCase};
use super::EvalError;
use crate::disentangle::Codec;
use crate::mesh::Mesh;
use crate::nn::{Tape, Tensor, Var};
use crate::spiral::SpiralError;

pub(crate) struct OracleStub {
    oracle: Oracle,
    known: Vec<(Vec<f64>, Codes)>,
}

impl OracleStub {
    pub fn new(ds: &SyntheticDataset) -> Self {
        let mut known = Vec::new();
        for (f, ms) in ds.factors.subjects.iter().zip(&ds.meshes) {
            for (p, m) in f.poses.iter().zip(ms) {
                known.push((m.to_flat(), (f.shape.clone(), p.clone())));
            }
        }
        Self {
            oracle: Oracle::new(),
            known,
        }
    }

    pub fn with_cases(mut self, cases: &[TransferCase]) -> Self {
        for c in cases {
            self.known.push((c.shape_src.to_flat(), c.shape_src_factors.clone()));
            self.known.push((c.pose_src.to_flat(), c.pose_src_factors.clone()));
        }
        self
    }

    pub fn codes(&self, m: &Mesh) -> Result<Codes, EvalError> {
        let flat = m.to_flat();
        if let Some((_, c)) = self.known.iter().find(|(k, _)| *k == flat) {
            return Ok(c.clone());
        }
        Ok((self.oracle.fit_shape(m)?, self.oracle.fit_pose(m)?))
    }

    fn meshes(&self, t: &Tensor) -> Vec<Mesh> {
        t.data()
            .chunks(3 * self.oracle.topology().num_vertices())
            .map(|c| Mesh::from_flat(c, self.oracle.topology().clone()))
            .collect()
    }

    fn encode_part(&self, tape: &mut Tape, x: Var, shape: bool) -> Result<Var, SpiralError> {
        let ms = self.meshes(tape.value(x));
        let width = if shape { SHAPE_DIM } else { POSE_DIM };
        let mut data = Vec::with_capacity(ms.len() * width);
        for m in &ms {
            let (s, p) = self.codes(m).map_err(|e| SpiralError::InvalidConfig(e.to_string()))?;
            data.extend(if shape { s } else { p });
        }
        Ok(tape.constant(Tensor::new(ms.len(), width, data)?)?)
    }
}

impl LatentModel for OracleStub {
    fn encode_many(&self, meshes: &[&Mesh]) -> Result<Vec<Codes>, EvalError> {
        meshes.iter().map(|m| self.codes(m)).collect()
    }

    fn decode_many(&self, codes: &[Codes]) -> Result<Vec<Mesh>, EvalError> {
        codes.iter().map(|(s, p)| self.oracle.render(s, p)).collect()
    }
}

impl Codec for OracleStub {
    fn encode_shape(&self, tape: &mut Tape, x: Var, _blocks: usize) -> Result<Var, SpiralError> {
        self.encode_part(tape, x, true)
    }

    fn encode_pose(&self, tape: &mut Tape, x: Var, _blocks: usize) -> Result<Var, SpiralError> {
        self.encode_part(tape, x, false)
    }

    fn decode(&self, tape: &mut Tape, beta: Var, theta: Var) -> Result<Var, SpiralError> {
        let (b, t) = (tape.value(beta).clone(), tape.value(theta).clone());
        let mut data = Vec::new();
        for i in 0..b.rows() {
            let m = self
                .oracle
                .render(b.row(i), t.row(i))
                .map_err(|e| SpiralError::InvalidConfig(e.to_string()))?;
            data.extend(m.to_flat());
        }
        Ok(tape.constant(Tensor::new(data.len() / 3, 3, data)?)?)
    }
}
