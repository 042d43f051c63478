use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_spirals, spiral_conv, SpiralError, SpiralSet};
use crate::linalg::SparseMatrix;
use crate::mesh::{build_adjacency, Mesh};
use crate::multires::MeshHierarchy;
use crate::nn::{Axis, ParamId, ParamStore, Tape, Tensor, Var};

/// Version of the JSON configuration documents written by this crate.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Encoder layout: two independent branches, or one branch whose code is
/// split into the shape and pose slots (the entangled baseline).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Dual,
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_shape_dim: usize,
    pub latent_pose_dim: usize,
    /// Encoder channel width per resolution level, fine to coarse.
    pub channels: Vec<usize>,
    pub spiral_lengths: Vec<usize>,
    pub slope: f64,
    pub branches: Branches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_shape_dim: 16,
            latent_pose_dim: 112,
            channels: vec![16, 32, 64, 128],
            spiral_lengths: vec![10, 9, 8, 7],
            slope: 0.02,
            branches: Branches::Dual,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_shape_dim + self.latent_pose_dim
    }

    pub fn validate(&self) -> Result<(), SpiralError> {
        let bad = |m: &str| Err(SpiralError::InvalidConfig(m.to_string()));
        if self.latent_shape_dim == 0 || self.latent_pose_dim == 0 {
            return bad("latent dimensions must be at least 1");
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be a nonempty list of positive widths");
        }
        if self.spiral_lengths.len() != self.channels.len() || self.spiral_lengths.contains(&0) {
            return bad("spiral_lengths must give one positive length per level");
        }
        if !self.slope.is_finite() {
            return bad("slope must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderIds {
    convs: Vec<Linear>,
    fc: Linear,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderIds {
    fc: Linear,
    convs: Vec<Linear>,
    out: Linear,
}

/// Dual-branch spiral mesh autoencoder `g(f_beta(X), f_theta(X))`. Both
/// encoders read and the decoder writes offsets from the template.
#[derive(Clone, Debug)]
pub struct DisentangleModel {
    config: ModelConfig,
    hierarchy: Arc<MeshHierarchy>,
    spirals: Vec<SpiralSet>,
    down: Vec<Arc<SparseMatrix>>,
    up: Vec<Arc<SparseMatrix>>,
    params: ParamStore,
    encoders: Vec<EncoderIds>,
    decoder: DecoderIds,
}

/// `(name, rows, cols, is_weight)` for every parameter, in registration order.
fn layout(config: &ModelConfig, hierarchy: &MeshHierarchy) -> Vec<(String, usize, usize, bool)> {
    let stages = config.stages();
    let coarse = hierarchy.level(stages).num_vertices() * config.channels[stages - 1];
    let mut out = Vec::new();
    let mut linear = |name: String, rows: usize, cols: usize| {
        out.push((format!("{name}/w"), rows, cols, true));
        out.push((format!("{name}/b"), 1, cols, false));
    };
    let branches: Vec<(&str, usize)> = match config.branches {
        Branches::Dual => vec![("shape", config.latent_shape_dim), ("pose", config.latent_pose_dim)],
        Branches::Single => vec![("joint", config.latent_dim())],
    };
    for (prefix, dim) in branches {
        let mut c_in = 3;
        for k in 0..stages {
            linear(
                format!("{prefix}/conv{k}"),
                config.spiral_lengths[k] * c_in,
                config.channels[k],
            );
            c_in = config.channels[k];
        }
        linear(format!("{prefix}/fc"), coarse, dim);
    }
    linear("decoder/fc".into(), config.latent_dim(), coarse);
    for k in (0..stages).rev() {
        let c_in = config.channels[k];
        let c_out = if k > 0 {
            config.channels[k - 1]
        } else {
            config.channels[0]
        };
        linear(format!("decoder/conv{k}"), config.spiral_lengths[k] * c_in, c_out);
    }
    linear("decoder/out".into(), config.spiral_lengths[0] * config.channels[0], 3);
    out
}

impl DisentangleModel {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(config: ModelConfig, hierarchy: Arc<MeshHierarchy>, seed: u64) -> Result<Self, SpiralError> {
        Self::check(&config, &hierarchy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, rows, cols, is_weight) in layout(&config, &hierarchy) {
            if is_weight {
                params.add_glorot(name, rows, cols, &mut rng)?;
            } else {
                params.add(name, Tensor::zeros(rows, cols))?;
            }
        }
        Self::from_params(config, hierarchy, params)
    }

    /// Wraps existing parameters, checking names and shapes against the layout.
    pub fn from_params(
        config: ModelConfig,
        hierarchy: Arc<MeshHierarchy>,
        params: ParamStore,
    ) -> Result<Self, SpiralError> {
        Self::check(&config, &hierarchy)?;
        let expected = layout(&config, &hierarchy);
        if expected.len() != params.len() {
            return Err(SpiralError::ParamMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, rows, cols, _) in &expected {
            let id = params
                .id(name)
                .ok_or_else(|| SpiralError::ParamMismatch(format!("missing {name}")))?;
            if params.get(id).shape() != (*rows, *cols) {
                return Err(SpiralError::ParamMismatch(format!(
                    "{name} has shape {:?}, expected {:?}",
                    params.get(id).shape(),
                    (rows, cols)
                )));
            }
        }
        let lin = |name: &str| Linear {
            w: params.id(&format!("{name}/w")).unwrap(),
            b: params.id(&format!("{name}/b")).unwrap(),
        };
        let stages = config.stages();
        let prefixes: &[&str] = match config.branches {
            Branches::Dual => &["shape", "pose"],
            Branches::Single => &["joint"],
        };
        let encoders = prefixes
            .iter()
            .map(|p| EncoderIds {
                convs: (0..stages).map(|k| lin(&format!("{p}/conv{k}"))).collect(),
                fc: lin(&format!("{p}/fc")),
            })
            .collect();
        let decoder = DecoderIds {
            fc: lin("decoder/fc"),
            convs: (0..stages).rev().map(|k| lin(&format!("decoder/conv{k}"))).collect(),
            out: lin("decoder/out"),
        };
        let mut spirals = Vec::with_capacity(stages);
        for k in 0..stages {
            let level = hierarchy.level(k);
            spirals.push(build_spirals(
                level,
                &build_adjacency(level)?,
                config.spiral_lengths[k],
            )?);
        }
        let down = (0..stages).map(|k| Arc::new(hierarchy.down_op(k).clone())).collect();
        let up = (0..stages).map(|k| Arc::new(hierarchy.up_op(k).clone())).collect();
        Ok(Self {
            config,
            hierarchy,
            spirals,
            down,
            up,
            params,
            encoders,
            decoder,
        })
    }

    fn check(config: &ModelConfig, hierarchy: &MeshHierarchy) -> Result<(), SpiralError> {
        config.validate()?;
        if hierarchy.num_levels() < config.stages() + 1 {
            return Err(SpiralError::InvalidConfig(format!(
                "{} stages need {} hierarchy levels, found {}",
                config.stages(),
                config.stages() + 1,
                hierarchy.num_levels()
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &Arc<MeshHierarchy> {
        &self.hierarchy
    }

    pub fn template(&self) -> &Mesh {
        self.hierarchy.level(0)
    }

    pub fn spirals(&self, level: usize) -> &SpiralSet {
        &self.spirals[level]
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(id, _, _)| id)
            .collect()
    }

    pub fn shape_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("shape/")
    }

    pub fn pose_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("pose/")
    }

    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        self.ids_with_prefix("decoder/")
    }

    fn linear(&self, tape: &mut Tape, l: &Linear) -> Result<(Var, Var), SpiralError> {
        Ok((tape.param(&self.params, l.w)?, tape.param(&self.params, l.b)?))
    }

    /// The template's positions repeated for `blocks` meshes.
    fn template_stack(&self, tape: &mut Tape, blocks: usize) -> Result<Var, SpiralError> {
        let flat = self.template().to_flat();
        let data = flat.iter().copied().cycle().take(flat.len() * blocks).collect();
        Ok(tape.constant(Tensor::new(blocks * self.template().num_vertices(), 3, data)?)?)
    }

    /// Encoders see offsets from the template.
    fn encoder(&self, tape: &mut Tape, enc: &EncoderIds, x: Var, blocks: usize) -> Result<Var, SpiralError> {
        let t = self.template_stack(tape, blocks)?;
        let mut h = tape.sub(x, t)?;
        for (k, conv) in enc.convs.iter().enumerate() {
            let (w, b) = self.linear(tape, conv)?;
            h = spiral_conv(tape, h, &self.spirals[k], w, b, blocks)?;
            h = tape.leaky_relu(h, self.config.slope)?;
            h = tape.sparse_matmul(&self.down[k], h, blocks)?;
        }
        let width = tape.value(h).len() / blocks;
        h = tape.reshape(h, blocks, width)?;
        let (w, b) = self.linear(tape, &enc.fc)?;
        let z = tape.matmul(h, w)?;
        Ok(tape.add(z, b)?)
    }

    fn check_input(&self, tape: &Tape, x: Var, blocks: usize) -> Result<(), SpiralError> {
        let shape = tape.value(x).shape();
        let n = self.template().num_vertices();
        if blocks == 0 || shape != (blocks * n, 3) {
            return Err(SpiralError::InvalidConfig(format!(
                "input of shape {shape:?} does not hold {blocks} meshes of {n} vertices"
            )));
        }
        Ok(())
    }

    /// Shape codes (`blocks x latent_shape_dim`) for `blocks` stacked meshes.
    pub fn encode_shape(&self, tape: &mut Tape, x: Var, blocks: usize) -> Result<Var, SpiralError> {
        self.check_input(tape, x, blocks)?;
        let z = self.encoder(tape, &self.encoders[0], x, blocks)?;
        match self.config.branches {
            Branches::Dual => Ok(z),
            Branches::Single => Ok(tape.slice(z, Axis::Cols, 0, self.config.latent_shape_dim)?),
        }
    }

    /// Pose codes (`blocks x latent_pose_dim`) for `blocks` stacked meshes.
    pub fn encode_pose(&self, tape: &mut Tape, x: Var, blocks: usize) -> Result<Var, SpiralError> {
        self.check_input(tape, x, blocks)?;
        match self.config.branches {
            Branches::Dual => self.encoder(tape, &self.encoders[1], x, blocks),
            Branches::Single => {
                let z = self.encoder(tape, &self.encoders[0], x, blocks)?;
                let (ds, dp) = (self.config.latent_shape_dim, self.config.latent_pose_dim);
                Ok(tape.slice(z, Axis::Cols, ds, dp)?)
            }
        }
    }

    /// Both codes concatenated (`blocks x latent_dim`); one encoder pass for
    /// the single-branch layout.
    pub fn encode_joint(&self, tape: &mut Tape, x: Var, blocks: usize) -> Result<Var, SpiralError> {
        match self.config.branches {
            Branches::Single => {
                self.check_input(tape, x, blocks)?;
                self.encoder(tape, &self.encoders[0], x, blocks)
            }
            Branches::Dual => {
                let b = self.encode_shape(tape, x, blocks)?;
                let t = self.encode_pose(tape, x, blocks)?;
                Ok(tape.concat(&[b, t], Axis::Cols)?)
            }
        }
    }

    /// Vertex positions `(blocks * N) x 3` from shape and pose codes.
    pub fn decode(&self, tape: &mut Tape, beta: Var, theta: Var) -> Result<Var, SpiralError> {
        let z = tape.concat(&[beta, theta], Axis::Cols)?;
        self.decode_joint(tape, z)
    }

    pub fn decode_joint(&self, tape: &mut Tape, z: Var) -> Result<Var, SpiralError> {
        let (blocks, width) = tape.value(z).shape();
        if width != self.config.latent_dim() {
            return Err(SpiralError::CodeLength {
                expected: self.config.latent_dim(),
                found: width,
            });
        }
        let stages = self.config.stages();
        let (w, b) = self.linear(tape, &self.decoder.fc)?;
        let h = tape.matmul(z, w)?;
        let mut h = tape.add(h, b)?;
        let coarse = self.hierarchy.level(stages).num_vertices();
        h = tape.reshape(h, blocks * coarse, self.config.channels[stages - 1])?;
        for (j, conv) in self.decoder.convs.iter().enumerate() {
            let k = stages - 1 - j;
            h = tape.sparse_matmul(&self.up[k], h, blocks)?;
            let (w, b) = self.linear(tape, conv)?;
            h = spiral_conv(tape, h, &self.spirals[k], w, b, blocks)?;
            h = tape.leaky_relu(h, self.config.slope)?;
        }
        let (w, b) = self.linear(tape, &self.decoder.out)?;
        let offsets = spiral_conv(tape, h, &self.spirals[0], w, b, blocks)?;
        let t = self.template_stack(tape, blocks)?;
        Ok(tape.add(offsets, t)?)
    }

    /// Stacks meshes into a `(B * N) x 3` tensor after checking topology.
    pub fn stack(&self, meshes: &[&Mesh]) -> Result<Tensor, SpiralError> {
        let mut data = Vec::with_capacity(meshes.len() * self.template().num_vertices() * 3);
        for m in meshes {
            self.template().check_topology(m)?;
            data.extend(m.to_flat());
        }
        Ok(Tensor::new(data.len() / 3, 3, data)?)
    }

    /// Splits a `(B * N) x 3` tensor into meshes on the template topology.
    pub fn unstack(&self, t: &Tensor) -> Vec<Mesh> {
        let n = self.template().num_vertices();
        t.data()
            .chunks(n * 3)
            .map(|c| Mesh::from_flat(c, Arc::clone(self.template().topology())))
            .collect()
    }

    /// Inference: `(beta, theta)` for each mesh.
    pub fn encode_many(&self, meshes: &[&Mesh]) -> Result<Vec<(Vec<f64>, Vec<f64>)>, SpiralError> {
        if meshes.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::no_grad();
        let x = tape.constant(self.stack(meshes)?)?;
        let z = self.encode_joint(&mut tape, x, meshes.len())?;
        let ds = self.config.latent_shape_dim;
        let zv = tape.value(z);
        Ok((0..meshes.len())
            .map(|i| {
                let row = zv.row(i);
                (row[..ds].to_vec(), row[ds..].to_vec())
            })
            .collect())
    }

    pub fn encode(&self, mesh: &Mesh) -> Result<(Vec<f64>, Vec<f64>), SpiralError> {
        Ok(self.encode_many(&[mesh])?.remove(0))
    }

    /// Inference: one mesh per `(beta, theta)` pair.
    pub fn decode_many(&self, codes: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<Mesh>, SpiralError> {
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        let (ds, dp) = (self.config.latent_shape_dim, self.config.latent_pose_dim);
        let mut data = Vec::with_capacity(codes.len() * (ds + dp));
        for (b, t) in codes {
            if b.len() != ds {
                return Err(SpiralError::CodeLength {
                    expected: ds,
                    found: b.len(),
                });
            }
            if t.len() != dp {
                return Err(SpiralError::CodeLength {
                    expected: dp,
                    found: t.len(),
                });
            }
            data.extend_from_slice(b);
            data.extend_from_slice(t);
        }
        let mut tape = Tape::no_grad();
        let z = tape.constant(Tensor::new(codes.len(), ds + dp, data)?)?;
        let out = self.decode_joint(&mut tape, z)?;
        Ok(self.unstack(tape.value(out)))
    }

    pub fn decode_codes(&self, beta: &[f64], theta: &[f64]) -> Result<Mesh, SpiralError> {
        Ok(self.decode_many(&[(beta.to_vec(), theta.to_vec())])?.remove(0))
    }
}
