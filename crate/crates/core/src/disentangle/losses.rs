use crate::arap::ArapEngine;
use crate::mesh::{augment, AugmentConfig, Mesh, MeshError};
use crate::nn::{Tape, Tensor, Var};
use crate::spiral::{DisentangleModel, SpiralError};

use super::{derive_seed, AblationMode, TrainError};

/// Seed purposes for the per-triplet streams.
const SEED_AUG_X1: u64 = 1;
const SEED_ANCHORS: u64 = 2;
const SEED_AUG_PROXY: u64 = 3;

/// The encoder/decoder factorisation the losses are written against.
pub trait Codec {
    fn encode_shape(&self, tape: &mut Tape, x: Var, blocks: usize) -> Result<Var, SpiralError>;
    fn encode_pose(&self, tape: &mut Tape, x: Var, blocks: usize) -> Result<Var, SpiralError>;
    fn decode(&self, tape: &mut Tape, beta: Var, theta: Var) -> Result<Var, SpiralError>;
}

impl Codec for DisentangleModel {
    fn encode_shape(&self, tape: &mut Tape, x: Var, blocks: usize) -> Result<Var, SpiralError> {
        DisentangleModel::encode_shape(self, tape, x, blocks)
    }

    fn encode_pose(&self, tape: &mut Tape, x: Var, blocks: usize) -> Result<Var, SpiralError> {
        DisentangleModel::encode_pose(self, tape, x, blocks)
    }

    fn decode(&self, tape: &mut Tape, beta: Var, theta: Var) -> Result<Var, SpiralError> {
        DisentangleModel::decode(self, tape, beta, theta)
    }
}

/// Stacks same-topology meshes into a `(B * N) x 3` tensor.
pub fn stack_meshes(meshes: &[&Mesh]) -> Result<Tensor, TrainError> {
    let Some(first) = meshes.first() else {
        return Err(TrainError::Data("empty batch".into()));
    };
    let mut data = Vec::with_capacity(meshes.len() * first.num_vertices() * 3);
    for m in meshes {
        first.check_topology(m)?;
        data.extend(m.to_flat());
    }
    Ok(Tensor::new(data.len() / 3, 3, data)?)
}

fn unstack(t: &Tensor, like: &Mesh) -> Vec<Mesh> {
    t.data()
        .chunks(like.num_vertices() * 3)
        .map(|c| Mesh::from_flat(c, like.topology().clone()))
        .collect()
}

fn augmented(config: &AugmentConfig, m: &Mesh, seed: u64) -> Result<Mesh, MeshError> {
    augment(m, seed, config.scale_range, config.noise_amplitude(m))
}

/// Settings shared by every loss evaluation of a run.
#[derive(Clone, Copy, Debug)]
pub struct LossContext<'a> {
    pub augment: AugmentConfig,
    /// Required unless the ablation skips ARAP.
    pub arap: Option<&'a ArapEngine>,
    pub ablation: AblationMode,
    pub lambda_c: f64,
    pub lambda_s: f64,
    /// Reported in ARAP errors.
    pub step: u64,
}

/// One batch slot: meshes, their dataset ids (for error reports) and the slot seed.
#[derive(Clone, Copy, Debug)]
pub struct TripletRef<'a> {
    pub x1: &'a Mesh,
    pub x2: &'a Mesh,
    pub xt: &'a Mesh,
    pub ids: [usize; 3],
    pub seed: u64,
}

/// Loss nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardLosses {
    pub l_c: Var,
    pub l_s: Option<Var>,
    pub total: Var,
    /// Proxies after the optional ARAP step, one per slot.
    pub proxies: Vec<Mesh>,
}

pub(super) struct CrossPart {
    pub x1: Var,
    pub beta2: Var,
    pub theta1: Var,
    pub l_c: Var,
}

pub(super) fn cross_part<M: Codec>(
    model: &M,
    tape: &mut Tape,
    batch: &[TripletRef],
    augment: &AugmentConfig,
) -> Result<CrossPart, TrainError> {
    let b = batch.len();
    let x1s: Vec<&Mesh> = batch.iter().map(|t| t.x1).collect();
    let x2s: Vec<&Mesh> = batch.iter().map(|t| t.x2).collect();
    let aug = batch
        .iter()
        .map(|t| augmented(augment, t.x1, derive_seed(&[t.seed, SEED_AUG_X1])))
        .collect::<Result<Vec<_>, _>>()?;
    let x1 = tape.constant(stack_meshes(&x1s)?)?;
    let x2 = tape.constant(stack_meshes(&x2s)?)?;
    let x1a = tape.constant(stack_meshes(&aug.iter().collect::<Vec<_>>())?)?;
    let beta2 = model.encode_shape(tape, x2, b)?;
    let theta1 = model.encode_pose(tape, x1a, b)?;
    let out = model.decode(tape, beta2, theta1)?;
    let l_c = tape.l1_loss(out, x1)?;
    Ok(CrossPart { x1, beta2, theta1, l_c })
}

/// Decodes `g(beta_t, theta_1)` on a separate gradient-free tape, then
/// optionally pulls `x_t` onto it with ARAP. The result is plain data, or
/// `None` when the decoder produced non-finite coordinates.
fn build_proxies<M: Codec>(
    model: &M,
    theta1: &Tensor,
    batch: &[TripletRef],
    ctx: &LossContext,
) -> Result<Option<Vec<Mesh>>, TrainError> {
    let b = batch.len();
    let xts: Vec<&Mesh> = batch.iter().map(|t| t.xt).collect();
    let mut tape = Tape::no_grad();
    let xt = tape.constant(stack_meshes(&xts)?)?;
    let beta_t = model.encode_shape(&mut tape, xt, b)?;
    let theta = tape.constant(theta1.clone())?;
    let decoded = model.decode(&mut tape, beta_t, theta)?;
    if !tape.value(decoded).data().iter().all(|v| v.is_finite()) {
        return Ok(None);
    }
    let proxies = unstack(tape.value(decoded), batch[0].x1);
    match ctx.ablation {
        AblationMode::NoArap => Ok(Some(proxies)),
        _ => {
            let engine = ctx
                .arap
                .ok_or_else(|| TrainError::Config("ARAP engine required for the full objective".into()))?;
            batch
                .iter()
                .zip(proxies)
                .map(|(t, proxy)| {
                    engine
                        .deform(t.xt, &proxy, derive_seed(&[t.seed, SEED_ANCHORS]))
                        .map_err(|source| TrainError::Arap {
                            step: ctx.step,
                            x1: t.ids[0],
                            x2: t.ids[1],
                            xt: t.ids[2],
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
        }
    }
}

/// `l1(g(f_beta(x2), f_theta(T(proxy))), x1)` with the proxies entering as constants.
pub fn self_consistency_from_proxy<M: Codec>(
    model: &M,
    tape: &mut Tape,
    x1: Var,
    beta2: Var,
    batch: &[TripletRef],
    proxies: &[Mesh],
    augment: &AugmentConfig,
) -> Result<Var, TrainError> {
    let aug = batch
        .iter()
        .zip(proxies)
        .map(|(t, p)| augmented(augment, p, derive_seed(&[t.seed, SEED_AUG_PROXY])))
        .collect::<Result<Vec<_>, _>>()?;
    let xp = tape.constant(stack_meshes(&aug.iter().collect::<Vec<_>>())?)?;
    let theta = model.encode_pose(tape, xp, batch.len())?;
    let out = model.decode(tape, beta2, theta)?;
    Ok(tape.l1_loss(out, x1)?)
}

/// Full objective for a batch: `lambda_c * L_C + lambda_s * L_S`.
pub fn consistency_forward<M: Codec>(
    model: &M,
    tape: &mut Tape,
    batch: &[TripletRef],
    ctx: &LossContext,
) -> Result<ForwardLosses, TrainError> {
    let cross = cross_part(model, tape, batch, &ctx.augment)?;
    let weighted_c = tape.scale(cross.l_c, ctx.lambda_c)?;
    if ctx.ablation == AblationMode::NoSelfConsistency {
        return Ok(ForwardLosses {
            l_c: cross.l_c,
            l_s: None,
            total: weighted_c,
            proxies: Vec::new(),
        });
    }
    let theta1 = tape.value(cross.theta1).clone();
    let (l_s, proxies) = match build_proxies(model, &theta1, batch, ctx)? {
        Some(p) => (
            self_consistency_from_proxy(model, tape, cross.x1, cross.beta2, batch, &p, &ctx.augment)?,
            p,
        ),
        // diverged; report a non-finite loss instead of failing inside ARAP
        None => (tape.constant(Tensor::scalar(f64::NAN))?, Vec::new()),
    };
    let weighted_s = tape.scale(l_s, ctx.lambda_s)?;
    let total = tape.add(weighted_c, weighted_s)?;
    Ok(ForwardLosses {
        l_c: cross.l_c,
        l_s: Some(l_s),
        total,
        proxies,
    })
}

/// Plain autoencoding loss of the entangled baseline, `lambda_c * l1(g(f(x)), x)`.
pub fn reconstruction_forward(
    model: &DisentangleModel,
    tape: &mut Tape,
    batch: &[&Mesh],
    lambda_c: f64,
) -> Result<(Var, Var), TrainError> {
    let x = tape.constant(stack_meshes(batch)?)?;
    let z = model.encode_joint(tape, x, batch.len())?;
    let out = model.decode_joint(tape, z)?;
    let l = tape.l1_loss(out, x)?;
    let total = tape.scale(l, lambda_c)?;
    Ok((l, total))
}

fn single<'a>(x1: &'a Mesh, x2: &'a Mesh, xt: &'a Mesh, seed: u64) -> [TripletRef<'a>; 1] {
    [TripletRef {
        x1,
        x2,
        xt,
        ids: [0, 1, 2],
        seed,
    }]
}

/// Mean-per-vertex L1 between the swap reconstruction and `x1`.
pub fn cross_consistency_loss<M: Codec>(
    model: &M,
    x1: &Mesh,
    x2: &Mesh,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<f64, TrainError> {
    x1.check_topology(x2)?;
    let mut tape = Tape::no_grad();
    let c = cross_part(model, &mut tape, &single(x1, x2, x1, seed), augment)?;
    Ok(tape.value(c.l_c).get(0, 0))
}

/// Self-consistency loss of one triplet; zero without evaluating anything
/// under [`AblationMode::NoSelfConsistency`].
pub fn self_consistency_loss<M: Codec>(
    model: &M,
    x1: &Mesh,
    x2: &Mesh,
    xt: &Mesh,
    ctx: &LossContext,
    seed: u64,
) -> Result<f64, TrainError> {
    if ctx.ablation == AblationMode::NoSelfConsistency {
        return Ok(0.0);
    }
    let batch = single(x1, x2, xt, seed);
    let mut tape = Tape::no_grad();
    let c = cross_part(model, &mut tape, &batch, &ctx.augment)?;
    let theta1 = tape.value(c.theta1).clone();
    let Some(proxies) = build_proxies(model, &theta1, &batch, ctx)? else {
        return Ok(f64::NAN);
    };
    let l = self_consistency_from_proxy(model, &mut tape, c.x1, c.beta2, &batch, &proxies, &ctx.augment)?;
    Ok(tape.value(l).get(0, 0))
}
