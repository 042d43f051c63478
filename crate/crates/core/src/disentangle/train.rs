use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{consistency_forward, reconstruction_forward, LossContext, TripletRef};
use super::{derive_seed, AblationMode, LossReport, Objective, TrainError, TrainingSet};
use crate::arap::{ArapConfig, ArapEngine};
use crate::mesh::{AugmentConfig, Mesh};
use crate::multires::{read_hierarchy, write_hierarchy, HierarchyConfig, MeshHierarchy};
use crate::nn::{cosine_lr, Adam, AdamConfig, Checkpoint, CosineSchedule, Tape};
use crate::spiral::{Branches, DisentangleModel, ModelConfig};

pub const METRICS_HEADER: &str = "step,L_C,L_S,total,lr";
pub const HIERARCHY_ATTACHMENT: &str = "hierarchy";
const DATASET_ATTACHMENT: &str = "dataset_hash";
const STREAM_TRIPLETS: u64 = 0x7472_6970;
const STREAM_SLOTS: u64 = 0x736c_6f74;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub hierarchy: HierarchyConfig,
    pub arap: ArapConfig,
    pub augment: AugmentConfig,
    pub ablation: AblationMode,
    pub objective: Objective,
    pub steps: u64,
    pub batch_size: usize,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Checkpoint interval in steps; the final step is always saved.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            // four downsamplings by 4 would take a ~600-vertex template below a tetrahedron
            hierarchy: HierarchyConfig {
                num_levels: 5,
                factor: 3.0,
            },
            arap: ArapConfig::default(),
            augment: AugmentConfig::default(),
            ablation: AblationMode::Full,
            objective: Objective::Consistency,
            steps: 20_000,
            batch_size: 16,
            lambda_c: 0.5,
            lambda_s: 0.5,
            lr_max: 1e-3,
            lr_min: 1e-6,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// The entangled baseline: one joint code, plain reconstruction.
    pub fn baseline(mut self) -> Self {
        self.model.branches = Branches::Single;
        self.objective = Objective::Reconstruction;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive");
        }
        if !(self.lambda_c >= 0.0 && self.lambda_s >= 0.0 && self.lambda_c.is_finite() && self.lambda_s.is_finite()) {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.lr_max > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return bad("learning rates must satisfy 0 < lr_min <= lr_max");
        }
        if self.objective == Objective::Consistency && self.model.branches == Branches::Single {
            return bad("the consistency objective needs separate shape and pose encoders");
        }
        if self.hierarchy.num_levels < self.model.stages() + 1 {
            return bad("hierarchy has fewer levels than the model has stages");
        }
        Ok(())
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            period: self.steps,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

/// Rebuilds the model stored in a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(TrainConfig, DisentangleModel), TrainError> {
    let config: TrainConfig = serde_json::from_str(&ckpt.config_json).map_err(|e| TrainError::Config(e.to_string()))?;
    let blob = ckpt
        .attachment(HIERARCHY_ATTACHMENT)
        .ok_or_else(|| TrainError::Config("checkpoint carries no hierarchy".into()))?;
    let (hierarchy, _) = read_hierarchy(&mut &blob[..])?;
    let model = DisentangleModel::from_params(config.model.clone(), Arc::new(hierarchy), ckpt.params.clone())?;
    Ok((config, model))
}

/// Stateful stepper; every step is a pure function of the configuration,
/// the completed step count, the parameters and the optimizer state.
pub struct Trainer<'d> {
    config: TrainConfig,
    data: &'d TrainingSet,
    model: DisentangleModel,
    adam: Adam,
    engine: Option<ArapEngine>,
    step: u64,
    hierarchy_blob: Vec<u8>,
    dataset_hash: String,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, data: &'d TrainingSet, hierarchy: Arc<MeshHierarchy>) -> Result<Self, TrainError> {
        config.validate()?;
        let model = DisentangleModel::new(config.model.clone(), hierarchy, config.seed)?;
        let adam = Adam::new(config.adam, model.params());
        Self::assemble(config, data, model, adam, 0)
    }

    pub fn resume(ckpt: &Checkpoint, data: &'d TrainingSet) -> Result<Self, TrainError> {
        let (config, model) = model_from_checkpoint(ckpt)?;
        let trainer = Self::assemble(config, data, model, ckpt.adam.clone(), ckpt.step)?;
        if let Some(h) = ckpt.attachment(DATASET_ATTACHMENT) {
            if h != trainer.dataset_hash.as_bytes() {
                return Err(TrainError::Data("checkpoint was trained on a different dataset".into()));
            }
        }
        Ok(trainer)
    }

    fn assemble(
        config: TrainConfig,
        data: &'d TrainingSet,
        model: DisentangleModel,
        adam: Adam,
        step: u64,
    ) -> Result<Self, TrainError> {
        let first = data.mesh(0);
        model.template().check_topology(first)?;
        let engine = match (config.objective, config.ablation) {
            (Objective::Consistency, AblationMode::Full) => Some(ArapEngine::new(first, config.arap)?),
            _ => None,
        };
        let mut hierarchy_blob = Vec::new();
        write_hierarchy(model.hierarchy(), 0, &mut hierarchy_blob).map_err(|e| TrainError::io("<memory>", e))?;
        Ok(Self {
            config,
            data,
            model,
            adam,
            engine,
            step,
            hierarchy_blob,
            dataset_hash: data.content_hash(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &DisentangleModel {
        &self.model
    }

    /// Completed steps.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config_json: self.config.to_json(),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            attachments: vec![
                (HIERARCHY_ATTACHMENT.into(), self.hierarchy_blob.clone()),
                (DATASET_ATTACHMENT.into(), self.dataset_hash.clone().into_bytes()),
            ],
        }
    }

    /// Runs one optimisation step. A non-finite loss leaves the parameters untouched.
    pub fn step(&mut self) -> Result<LossReport, TrainError> {
        let t = self.step;
        let cfg = &self.config;
        let lr = cosine_lr(t, &cfg.schedule());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, STREAM_TRIPLETS, t]));
        let triplets = (0..cfg.batch_size)
            .map(|_| self.data.sample(&mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let mut tape = Tape::new();
        let (l_c, l_s, total) = match cfg.objective {
            Objective::Consistency => {
                let batch: Vec<TripletRef> = triplets
                    .iter()
                    .enumerate()
                    .map(|(slot, tr)| TripletRef {
                        x1: self.data.mesh(tr.x1),
                        x2: self.data.mesh(tr.x2),
                        xt: self.data.mesh(tr.xt),
                        ids: [tr.x1, tr.x2, tr.xt],
                        seed: derive_seed(&[cfg.seed, STREAM_SLOTS, t, slot as u64]),
                    })
                    .collect();
                let ctx = LossContext {
                    augment: cfg.augment,
                    arap: self.engine.as_ref(),
                    ablation: cfg.ablation,
                    lambda_c: cfg.lambda_c,
                    lambda_s: cfg.lambda_s,
                    step: t + 1,
                };
                let f = consistency_forward(&self.model, &mut tape, &batch, &ctx)?;
                (f.l_c, f.l_s, f.total)
            }
            Objective::Reconstruction => {
                let batch: Vec<&Mesh> = triplets.iter().map(|tr| self.data.mesh(tr.x1)).collect();
                let (l, total) = reconstruction_forward(&self.model, &mut tape, &batch, cfg.lambda_c)?;
                (l, None, total)
            }
        };
        let report = LossReport {
            step: t + 1,
            l_c: tape.value(l_c).get(0, 0),
            l_s: l_s.map_or(0.0, |v| tape.value(v).get(0, 0)),
            total: tape.value(total).get(0, 0),
            lr,
        };
        if !report.total.is_finite() {
            return Err(TrainError::NanLoss {
                step: t + 1,
                last_checkpoint: None,
            });
        }
        let grads = tape.backward(total)?;
        self.adam.step(self.model.params_mut(), &grads, lr)?;
        self.step += 1;
        Ok(report)
    }
}

/// Paths and loss stream of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Final checkpoint, `model.bin` in the output directory.
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Reports of the steps run by this call.
    pub reports: Vec<LossReport>,
}

fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt-{step:06}.bin"))
}

/// Trains from scratch, writing `metrics.csv`, periodic `ckpt-NNNNNN.bin`
/// files and `model.bin` into `out_dir`.
pub fn train(
    config: TrainConfig,
    data: &TrainingSet,
    hierarchy: Arc<MeshHierarchy>,
    out_dir: &Path,
    progress: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome, TrainError> {
    let trainer = Trainer::new(config, data, hierarchy)?;
    run(trainer, out_dir, String::new(), progress)
}

/// Continues a run from one of its checkpoints. Rows of `metrics.csv` past
/// the checkpoint are discarded, so the finished file matches an
/// uninterrupted run.
pub fn resume(
    checkpoint: &Path,
    data: &TrainingSet,
    out_dir: &Path,
    progress: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome, TrainError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let trainer = Trainer::resume(&ckpt, data)?;
    let metrics = out_dir.join("metrics.csv");
    let kept = match fs::read_to_string(&metrics) {
        Ok(text) => text
            .lines()
            .skip(1)
            .filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= ckpt.step)
            })
            .map(|l| format!("{l}\n"))
            .collect(),
        Err(_) => String::new(),
    };
    run(trainer, out_dir, kept, progress)
}

fn run(
    mut trainer: Trainer,
    out_dir: &Path,
    prefix_rows: String,
    progress: &mut dyn FnMut(&LossReport),
) -> Result<TrainOutcome, TrainError> {
    fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
    let metrics = out_dir.join("metrics.csv");
    let file = fs::File::create(&metrics).map_err(|e| TrainError::io(&metrics, e))?;
    let mut csv = BufWriter::new(file);
    let io = |e| TrainError::io(&metrics, e);
    writeln!(csv, "{METRICS_HEADER}").map_err(io)?;
    csv.write_all(prefix_rows.as_bytes()).map_err(io)?;
    let mut last_good = (trainer.steps_done() > 0).then(|| checkpoint_path(out_dir, trainer.steps_done()));
    let mut reports = Vec::new();
    let every = trainer.config().checkpoint_every.max(1);
    while !trainer.is_finished() {
        let report = match trainer.step() {
            Ok(r) => r,
            Err(TrainError::NanLoss { step, .. }) => {
                csv.flush().map_err(io)?;
                return Err(TrainError::NanLoss {
                    step,
                    last_checkpoint: last_good,
                });
            }
            Err(e) => return Err(e),
        };
        writeln!(csv, "{}", report.csv_row()).map_err(io)?;
        progress(&report);
        reports.push(report);
        if report.step % every == 0 || trainer.is_finished() {
            csv.flush().map_err(io)?;
            let path = checkpoint_path(out_dir, report.step);
            trainer.checkpoint().save(&path)?;
            last_good = Some(path);
        }
    }
    csv.flush().map_err(io)?;
    let checkpoint = out_dir.join("model.bin");
    trainer.checkpoint().save(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        reports,
    })
}

/// Parses a metrics CSV written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<LossReport>, TrainError> {
    let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(TrainError::Data(format!("{} is not a metrics file", path.display())));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64, TrainError> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| TrainError::Data(format!("malformed metrics row '{l}'")))
            };
            Ok(LossReport {
                step: num(0)? as u64,
                l_c: num(1)?,
                l_s: num(2)?,
                total: num(3)?,
                lr: num(4)?,
            })
        })
        .collect()
}
