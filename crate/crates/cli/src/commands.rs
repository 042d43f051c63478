use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use shapepose_core::arap::Weighting;
use shapepose_core::disentangle::{self, model_from_checkpoint, TrainingSet};
use shapepose_core::evalbench::{self, CodeKind, FactorTable, LatentModel, Pca};
use shapepose_core::mesh::{load_mesh, write_mesh, LoadedDataset};
use shapepose_core::multires::{cache_key, cache_path, load_or_build};
use shapepose_core::nn::Checkpoint;
use shapepose_core::{
    AblationMode, ArapConfig, ArapEngine, BenchConfig, DatasetIndex, DisentangleModel, HierarchyConfig, LossReport,
    Mesh, Objective, TrainConfig, CONFIG_SCHEMA_VERSION, TOOL_VERSION,
};

use crate::config;
use crate::CliError;

/// Global options shared by every subcommand.
pub struct Context {
    pub config_path: Option<PathBuf>,
    pub values: Map<String, Value>,
}

/// Written into the output location before a command does any work.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    command: String,
    tool_version: String,
    config_schema: u32,
    config_file: Option<PathBuf>,
    /// Flags after merging `--config`.
    arguments: Value,
    seeds: BTreeMap<String, u64>,
    output: PathBuf,
    dataset_hash: Option<String>,
    /// Fully resolved training configuration (train only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainConfig>,
}

fn manifest_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.manifest.json"))
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    ctx: &Context,
    command: &str,
    arguments: &impl Serialize,
    seeds: &[(&str, u64)],
    dir: &Path,
    output: &Path,
    dataset_hash: Option<String>,
    train_config: Option<TrainConfig>,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let manifest = RunManifest {
        command: command.into(),
        tool_version: TOOL_VERSION.into(),
        config_schema: CONFIG_SCHEMA_VERSION,
        config_file: ctx.config_path.clone(),
        arguments: serde_json::to_value(arguments).map_err(CliError::usage)?,
        seeds: seeds.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        output: output.to_path_buf(),
        dataset_hash,
        train_config,
    };
    let path = manifest_path(dir, command);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

fn need<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::usage(format!("missing required flag --{flag}")))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output serialises");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn load_dataset(index_path: &Path) -> Result<(DatasetIndex, LoadedDataset), CliError> {
    let index = DatasetIndex::read(index_path)?;
    let data = index.load()?;
    Ok((index, data))
}

fn dataset_hash(data: &LoadedDataset) -> Option<String> {
    TrainingSet::from_loaded(data).ok().map(|s| s.content_hash())
}

fn load_model(path: &Path) -> Result<DisentangleModel, CliError> {
    let ckpt = Checkpoint::load(path)?;
    Ok(model_from_checkpoint(&ckpt)?.1)
}

fn load_for(model: &DisentangleModel, path: &Path) -> Result<Mesh, CliError> {
    Ok(load_mesh(path, Some(model.template().topology()))?)
}

// ---- gen-data ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataArgs {
    /// Number of subjects [default: 20]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Poses per subject [default: 30]
    #[arg(long)]
    pub poses: Option<usize>,
    /// Sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen_data(flags: &GenDataArgs, ctx: &Context) -> Result<(), CliError> {
    let a = config::merge(flags, &ctx.values)?;
    let out = need(&a.out, "out")?;
    let (subjects, poses, seed) = (a.subjects.unwrap_or(20), a.poses.unwrap_or(30), a.seed.unwrap_or(0));
    write_manifest(ctx, "gen-data", &a, &[("data", seed)], &out, &out, None, None)?;
    let ds = evalbench::generate_dataset(subjects, poses, seed)?;
    ds.write(&out)?;
    println!(
        "wrote {} meshes ({subjects} subjects x {poses} poses, {} vertices) to {}",
        subjects * poses,
        ds.template.num_vertices(),
        out.join("index.json").display()
    );
    Ok(())
}

// ---- build-hierarchy ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyArgs {
    /// Dataset index JSON
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of levels including the template [default: 5]
    #[arg(long)]
    pub levels: Option<usize>,
    /// Vertex reduction factor per level [default: 3]
    #[arg(long)]
    pub factor: Option<f64>,
    /// Cache directory [default: `cache/` beside the index]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn hierarchy_config(levels: Option<usize>, factor: Option<f64>) -> HierarchyConfig {
    let d = TrainConfig::default().hierarchy;
    HierarchyConfig {
        num_levels: levels.unwrap_or(d.num_levels),
        factor: factor.unwrap_or(d.factor),
    }
}

fn default_cache(index_path: &Path) -> PathBuf {
    parent_dir(index_path).join("cache")
}

pub fn build_hierarchy(flags: &HierarchyArgs, ctx: &Context) -> Result<(), CliError> {
    let a = config::merge(flags, &ctx.values)?;
    let index_path = need(&a.data, "data")?;
    let dir = a.out.clone().unwrap_or_else(|| default_cache(&index_path));
    let cfg = hierarchy_config(a.levels, a.factor);
    let index = DatasetIndex::read(&index_path)?;
    let template = load_mesh(&index.resolve(&index.topology), None)?;
    let path = cache_path(&dir, cache_key(&template, &cfg));
    write_manifest(ctx, "build-hierarchy", &a, &[], &dir, &path, None, None)?;
    let h = load_or_build(&template, &cfg, &dir)?;
    println!("levels {:?} cached at {}", h.vertex_counts(), path.display());
    Ok(())
}

// ---- train ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    /// Training configuration JSON, or the manifest of an earlier train run
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Dataset index JSON
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// full, no-arap or no-self
    #[arg(long)]
    pub ablation: Option<AblationMode>,
    /// consistency, or reconstruction for the entangled single-code baseline
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Encoder channels per level, comma separated
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Progress line interval on standard error [default: 100]
    #[arg(long)]
    pub progress_every: Option<u64>,
    /// Continue from a checkpoint written into the same output directory
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Hierarchy cache directory [default: `cache/` beside the index]
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reads `--manifest`: either a bare training configuration or a manifest
/// written by an earlier `train`, whose flags then act as defaults.
fn read_train_manifest(path: &Path) -> Result<(TrainConfig, Map<String, Value>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if value.get("command").and_then(Value::as_str) == Some("train") {
        let m: RunManifest =
            serde_json::from_value(value).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut args = match m.arguments {
            Value::Object(o) => o,
            _ => Map::new(),
        };
        args.remove("manifest");
        args.remove("resume");
        return Ok((m.train_config.unwrap_or_default(), args));
    }
    let cfg = serde_json::from_value(value).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok((cfg, Map::new()))
}

fn resolve_train_config(mut cfg: TrainConfig, a: &TrainArgs) -> TrainConfig {
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field.clone() { cfg.$field = v; })* };
    }
    set!(
        ablation,
        steps,
        batch_size,
        seed,
        lr_max,
        lr_min,
        lambda_c,
        lambda_s,
        checkpoint_every
    );
    if let Some(ch) = &a.channels {
        cfg.model.channels = ch.clone();
    }
    if let Some(obj) = a.objective {
        cfg = match obj {
            Objective::Reconstruction => cfg.baseline(),
            Objective::Consistency => TrainConfig { objective: obj, ..cfg },
        };
    }
    cfg
}

pub fn train(flags: &TrainArgs, ctx: &Context) -> Result<(), CliError> {
    let pre = config::merge(flags, &ctx.values)?;
    let (base, earlier) = match &pre.manifest {
        Some(p) => read_train_manifest(p)?,
        None => (TrainConfig::default(), Map::new()),
    };
    let mut layered = earlier;
    layered.extend(ctx.values.clone());
    let a = config::merge(flags, &layered)?;
    let cfg = resolve_train_config(base, &a);
    cfg.validate()?;
    let out = need(&a.out, "out")?;
    let index_path = need(&a.data, "data")?;
    let (_, loaded) = load_dataset(&index_path)?;
    let set = TrainingSet::from_loaded(&loaded)?;
    write_manifest(
        ctx,
        "train",
        &a,
        &[("train", cfg.seed)],
        &out,
        &out.join("model.bin"),
        Some(set.content_hash()),
        Some(cfg.clone()),
    )?;
    let every = a.progress_every.unwrap_or(100).max(1);
    let mut progress = |r: &LossReport| {
        if r.step % every == 0 {
            eprintln!(
                "step {} L_C {:.5} L_S {:.5} total {:.5} lr {:.3e}",
                r.step, r.l_c, r.l_s, r.total, r.lr
            );
        }
    };
    let outcome = match &a.resume {
        Some(ckpt) => disentangle::resume(ckpt, &set, &out, &mut progress)?,
        None => {
            let cache = a.cache.clone().unwrap_or_else(|| default_cache(&index_path));
            let h = load_or_build(&loaded.template, &cfg.hierarchy, &cache)?;
            disentangle::train(cfg, &set, Arc::new(h), &out, &mut progress)?
        }
    };
    match outcome.reports.last() {
        Some(r) => println!(
            "trained to step {}: L_C {:.5} L_S {:.5}; checkpoint {}",
            r.step,
            r.l_c,
            r.l_s,
            outcome.checkpoint.display()
        ),
        None => println!("nothing to do; checkpoint {}", outcome.checkpoint.display()),
    }
    Ok(())
}

// ---- arap-deform ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ArapArgs {
    /// Mesh whose local rigidity is preserved
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Mesh providing the anchor positions and the initial guess
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Fraction of vertices used as anchors [default: 0.05]
    #[arg(long)]
    pub anchors: Option<f64>,
    /// Local/global iterations [default: 1]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Anchor sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// uniform or cotangent [default: uniform]
    #[arg(long)]
    pub weighting: Option<Weighting>,
    /// Output mesh
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn arap_deform(flags: &ArapArgs, ctx: &Context) -> Result<(), CliError> {
    let a = config::merge(flags, &ctx.values)?;
    let out = need(&a.out, "out")?;
    let source = load_mesh(&need(&a.source, "source")?, None)?;
    let target = load_mesh(&need(&a.target, "target")?, Some(source.topology()))?;
    let d = ArapConfig::default();
    let cfg = ArapConfig {
        anchor_fraction: a.anchors.unwrap_or(d.anchor_fraction),
        iterations: a.iters.unwrap_or(d.iterations),
        weighting: a.weighting.unwrap_or(d.weighting),
    };
    let seed = a.seed.unwrap_or(0);
    write_manifest(
        ctx,
        "arap-deform",
        &a,
        &[("anchors", seed)],
        &parent_dir(&out),
        &out,
        None,
        None,
    )?;
    let deformed = ArapEngine::new(&source, cfg)?.deform(&source, &target, seed)?;
    write_mesh(&deformed, &out)?;
    let moved = deformed
        .vertices()
        .iter()
        .zip(target.vertices())
        .map(|(p, q)| (p - q).norm())
        .sum::<f64>()
        / deformed.num_vertices() as f64;
    println!("wrote {}; mean distance from target {moved:.6}", out.display());
    Ok(())
}

// ---- transfer ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Mesh supplying the shape code
    #[arg(long)]
    pub shape: Option<PathBuf>,
    /// Mesh supplying the pose code
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Output mesh
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn transfer(flags: &TransferArgs, ctx: &Context) -> Result<(), CliError> {
    let a = config::merge(flags, &ctx.values)?;
    let out = need(&a.out, "out")?;
    let ckpt = need(&a.ckpt, "ckpt")?;
    let (shape_path, pose_path) = (need(&a.shape, "shape")?, need(&a.pose, "pose")?);
    write_manifest(ctx, "transfer", &a, &[], &parent_dir(&out), &out, None, None)?;
    let model = load_model(&ckpt)?;
    let (shape, pose) = (load_for(&model, &shape_path)?, load_for(&model, &pose_path)?);
    let codes = LatentModel::encode_many(&model, &[&shape, &pose])?;
    let mixed = LatentModel::decode_many(&model, &[(codes[0].0.clone(), codes[1].1.clone())])?;
    write_mesh(&mixed[0], &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

// ---- retrieve ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset index JSON used as the gallery
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Query mesh
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// shape or pose [default: pose]
    #[arg(long)]
    pub code: Option<CodeKind>,
    /// Project codes onto this many principal components fitted on the gallery
    #[arg(long)]
    pub pca: Option<usize>,
    /// Neighbours to report [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// Output JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Neighbor {
    rank: usize,
    mesh_id: usize,
    subject: String,
    path: PathBuf,
    distance: f64,
}

pub fn retrieve(flags: &RetrieveArgs, ctx: &Context) -> Result<(), CliError> {
    let a = config::merge(flags, &ctx.values)?;
    let out = need(&a.out, "out")?;
    let ckpt = need(&a.ckpt, "ckpt")?;
    let query_path = need(&a.query, "query")?;
    let (_, data) = load_dataset(&need(&a.data, "data")?)?;
    let kind = a.code.unwrap_or(CodeKind::Pose);
    write_manifest(
        ctx,
        "retrieve",
        &a,
        &[],
        &parent_dir(&out),
        &out,
        dataset_hash(&data),
        None,
    )?;
    let model = load_model(&ckpt)?;
    let query = load_for(&model, &query_path)?;
    let gallery: Vec<&Mesh> = data.records.iter().map(|r| &r.mesh).collect();
    let pick = |c: &(Vec<f64>, Vec<f64>)| match kind {
        CodeKind::Shape => c.0.clone(),
        CodeKind::Pose => c.1.clone(),
    };
    let mut codes: Vec<Vec<f64>> = LatentModel::encode_many(&model, &gallery)?.iter().map(pick).collect();
    let mut q = pick(&LatentModel::encode_many(&model, &[&query])?[0]);
    if let Some(dims) = a.pca {
        let rows: Vec<&[f64]> = codes.iter().map(Vec::as_slice).collect();
        let pca = Pca::fit(&rows, dims.min(q.len()))?;
        codes = codes.iter().map(|c| pca.project(c)).collect();
        q = pca.project(&q);
    }
    let mut ranked: Vec<(usize, f64)> = codes
        .iter()
        .enumerate()
        .map(|(i, c)| (i, evalbench::euclidean(c, &q)))
        .collect();
    ranked.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    let neighbors: Vec<Neighbor> = ranked
        .iter()
        .take(a.k.unwrap_or(5))
        .enumerate()
        .map(|(rank, &(i, distance))| Neighbor {
            rank,
            mesh_id: i,
            subject: data.subject_ids[data.records[i].subject].clone(),
            path: data.records[i].path.clone(),
            distance,
        })
        .collect();
    write_json(
        &out,
        &json!({ "query": query_path, "code": kind, "pca_dims": a.pca, "neighbors": neighbors }),
    )?;
    if let Some(n) = neighbors.first() {
        println!(
            "nearest: {} (subject {}, distance {:.6})",
            n.path.display(),
            n.subject,
            n.distance
        );
    }
    Ok(())
}

// ---- interpolate ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Code to interpolate, shape or pose; the other stays at the source's value [default: pose]
    #[arg(long)]
    pub code: Option<CodeKind>,
    /// Meshes in the sequence including both ends [default: 8]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory for `frame_NNN.ply`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn interpolate(flags: &InterpolateArgs, ctx: &Context) -> Result<(), CliError> {
    let a = config::merge(flags, &ctx.values)?;
    let out = need(&a.out, "out")?;
    let ckpt = need(&a.ckpt, "ckpt")?;
    let (src, tgt) = (need(&a.source, "source")?, need(&a.target, "target")?);
    write_manifest(ctx, "interpolate", &a, &[], &out, &out, None, None)?;
    let model = load_model(&ckpt)?;
    let (source, target) = (load_for(&model, &src)?, load_for(&model, &tgt)?);
    let frames = evalbench::interpolate(
        &model,
        &source,
        &target,
        a.code.unwrap_or(CodeKind::Pose),
        a.steps.unwrap_or(8),
    )?;
    for (k, m) in frames.iter().enumerate() {
        write_mesh(m, &out.join(format!("frame_{k:03}.ply")))?;
    }
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

// ---- bench ----

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset index JSON with an oracle factor table
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub transfer_cases: Option<usize>,
    #[arg(long)]
    pub queries_per_subject: Option<usize>,
    #[arg(long)]
    pub interpolations: Option<usize>,
    #[arg(long)]
    pub interpolation_steps: Option<usize>,
    #[arg(long)]
    pub pca_dims: Option<usize>,
    /// Seed for the held-out renders [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON [default: `bench.json` beside the checkpoint]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(flags: &BenchArgs, ctx: &Context) -> Result<(), CliError> {
    let a = config::merge(flags, &ctx.values)?;
    let ckpt = need(&a.ckpt, "ckpt")?;
    let out = a.out.clone().unwrap_or_else(|| parent_dir(&ckpt).join("bench.json"));
    let (index, data) = load_dataset(&need(&a.data, "data")?)?;
    let factors_path = index
        .oracle
        .as_ref()
        .map(|p| index.resolve(p))
        .ok_or_else(|| CliError::usage("dataset index names no oracle factor table"))?;
    let d = BenchConfig::default();
    let cfg = BenchConfig {
        transfer_cases: a.transfer_cases.unwrap_or(d.transfer_cases),
        queries_per_subject: a.queries_per_subject.unwrap_or(d.queries_per_subject),
        interpolations: a.interpolations.unwrap_or(d.interpolations),
        interpolation_steps: a.interpolation_steps.unwrap_or(d.interpolation_steps),
        pca_dims: a.pca_dims.or(d.pca_dims),
        seed: a.seed.unwrap_or(d.seed),
    };
    write_manifest(
        ctx,
        "bench",
        &a,
        &[("bench", cfg.seed)],
        &parent_dir(&out),
        &out,
        dataset_hash(&data),
        None,
    )?;
    let ds = evalbench::SyntheticDataset::from_loaded(&data, FactorTable::read(&factors_path)?)?;
    let model = load_model(&ckpt)?;
    let report = evalbench::run_benchmark(&model, &ds, &cfg)?;
    write_json(&out, &report)?;
    let r = &report.retrieval;
    println!(
        "pose transfer: mean {:.5} median {:.5}",
        report.pose_transfer.mean, report.pose_transfer.median
    );
    println!(
        "retrieval E_shape/E_pose: shape code {:.4}/{:.4}, pose code {:.4}/{:.4}",
        r.shape_code.e_shape, r.shape_code.e_pose, r.pose_code.e_shape, r.pose_code.e_pose
    );
    println!("report written to {}", out.display());
    Ok(())
}
