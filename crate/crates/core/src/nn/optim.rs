use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    /// Glorot-uniform initialisation in `+-sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId, NnError> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..=bound));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; the learning rate is supplied per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, p)| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn from_state(config: AdamConfig, m: Vec<Tensor>, v: Vec<Tensor>, t: u64) -> Self {
        Self { config, m, v, t }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient; any NaN gradient aborts before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<(), NnError> {
        if self.m.len() != params.len() {
            return Err(NnError::OptimizerMismatch {
                expected: self.m.len(),
                found: params.len(),
            });
        }
        for (id, g) in grads.params() {
            if g.has_nan() {
                return Err(NnError::NanGradient(params.name(id).to_string()));
            }
            if g.shape() != params.get(id).shape() {
                return Err(NnError::Shape {
                    op: "adam",
                    lhs: params.get(id).shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let id = super::ParamId(i);
            let g = grads.param(id);
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub period: u64,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self {
            lr_max: 1e-3,
            lr_min: 1e-6,
            period: 1,
        }
    }
}

/// Single-cycle cosine annealing from `lr_max` at `t = 0` to `lr_min` at
/// `t = period`, held at `lr_min` afterwards.
pub fn cosine_lr(t: u64, schedule: &CosineSchedule) -> f64 {
    let CosineSchedule { lr_max, lr_min, period } = *schedule;
    if period == 0 || t >= period {
        return lr_min;
    }
    let x = std::f64::consts::PI * t as f64 / period as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + x.cos())
}
