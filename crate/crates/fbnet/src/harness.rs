//! Run orchestration: dataset preparation, the SGD training loop with
//! momentum, checkpoint-driven evaluation, ablation sweeps, and feature-map
//! dumps.
//!
//! Everything here is deterministic at thread count 1 for training and
//! under any thread count for evaluation: per-step batches come from a
//! stateless rng derived from the shuffle seed and the step index, and the
//! parallel evaluation reduces in sample order.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{Config, ConfigError};
use crate::data::{
    self, load_dataset, make_heatmap_gt, read_ppm, rest_pose, to_heatmap_coords, write_pgm,
    DataError, Dataset, DatasetMeta,
};
use crate::graph::{self, load_graph, shipped, GraphError, SkeletonGraph, Wiring};
use crate::metrics::{self, MetricsError, MetricsReport, PckfSpec, PosePair};
use crate::net::{decode_pose, loss, Network};
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Invalid(msg.into())
}

/// Loads the skeleton named in the config, shipped name first, then as a
/// file path.
pub fn resolve_graph(config: &Config) -> Result<SkeletonGraph, HarnessError> {
    match shipped::by_name(&config.graph.source) {
        Some(g) => Ok(g),
        None => Ok(load_graph(Path::new(&config.graph.source))?),
    }
}

pub fn resolve_wiring(config: &Config) -> Result<Wiring, HarnessError> {
    let g = resolve_graph(config)?;
    Ok(graph::variant(&g, config.graph.connection_kind()?)?)
}

/// A network bound to its parameter store, ready to run.
pub struct Model {
    pub config: Config,
    pub wiring: Wiring,
    pub params: ParamSet<f64>,
    pub net: Network,
}

impl Model {
    /// Fresh parameters drawn from the config's init seed.
    pub fn from_config(config: &Config) -> Result<Model, HarnessError> {
        config.validate()?;
        let wiring = resolve_wiring(config)?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.training.init_seed);
        let net = Network::init(&mut params, &config.network, &wiring, &mut rng)?;
        Ok(Model { config: config.clone(), wiring, params, net })
    }

    /// Rebuilds the model a checkpoint was trained with and restores its
    /// parameter values.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Model, HarnessError> {
        let config = ckpt.config()?;
        let mut model = Model::from_config(&config)?;
        ckpt.apply_params(&mut model.params)?;
        Ok(model)
    }
}

// ---------------------------------------------------------------- datasets

/// Train and test splits draw from different seed streams; the salt keeps
/// them disjoint for every base seed.
const TEST_SEED_SALT: u64 = 0x7E57_DA7A;

pub fn train_dir(config: &Config) -> PathBuf {
    Path::new(&config.data.dir).join("train")
}

pub fn test_dir(config: &Config) -> PathBuf {
    Path::new(&config.data.dir).join("test")
}

fn expected_meta(config: &Config, count: usize, seed: u64) -> Result<DatasetMeta, HarnessError> {
    let graph = resolve_graph(config)?;
    Ok(DatasetMeta {
        graph: config.graph.source.clone(),
        joints: graph.joint_count(),
        image: config.network.input,
        heatmap: config.network.features,
        count,
        seed,
        data: config.data.clone(),
    })
}

fn ensure_split(
    config: &Config,
    dir: &Path,
    count: usize,
    seed: u64,
) -> Result<bool, HarnessError> {
    let expected = expected_meta(config, count, seed)?;
    if let Ok(text) = fs::read_to_string(dir.join("meta")) {
        if toml::from_str::<DatasetMeta>(&text).ok().as_ref() == Some(&expected) {
            return Ok(false);
        }
    }
    let graph = resolve_graph(config)?;
    let rest = rest_pose(&config.graph.source).ok_or_else(|| {
        invalid(format!(
            "no rest pose shipped for graph `{}`; synthetic data covers figure7",
            config.graph.source
        ))
    })?;
    if graph.joint_count() != config.network.joints {
        return Err(invalid(format!(
            "graph `{}` has {} joints, network expects {}",
            config.graph.source,
            graph.joint_count(),
            config.network.joints
        )));
    }
    data::generate(
        dir,
        &config.graph.source,
        &graph,
        &rest,
        &config.data,
        config.network.input,
        config.network.features,
        count,
        seed,
    )?;
    Ok(true)
}

/// Generates the train and test splits under the config's data dir unless
/// matching ones are already there. Returns which splits were (re)built.
pub fn ensure_datasets(config: &Config) -> Result<(bool, bool), HarnessError> {
    let built_train = if config.data.train > 0 {
        ensure_split(config, &train_dir(config), config.data.train, config.data.seed)?
    } else {
        false
    };
    let built_test = if config.data.test > 0 {
        ensure_split(
            config,
            &test_dir(config),
            config.data.test,
            config.data.seed ^ TEST_SEED_SALT,
        )?
    } else {
        false
    };
    Ok((built_train, built_test))
}

fn check_dataset(config: &Config, meta: &DatasetMeta) -> Result<(), HarnessError> {
    if meta.joints != config.network.joints {
        return Err(invalid(format!(
            "dataset has {} joints, model expects {}",
            meta.joints, config.network.joints
        )));
    }
    if meta.image != config.network.input || meta.heatmap != config.network.features {
        return Err(invalid(format!(
            "dataset geometry {:?}/{:?} does not match model {:?}/{:?}",
            meta.image, meta.heatmap, config.network.input, config.network.features
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- training

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// 1-based index of the completed step.
    pub step: u64,
    pub loss: f64,
    pub l_h: f64,
    pub l_d: f64,
    pub lr: f64,
}

fn lr_at(config: &Config, completed: u64) -> f64 {
    let t = &config.training;
    if t.lr_decay_every == 0 {
        return t.learning_rate;
    }
    t.learning_rate * t.lr_decay.powi((completed / t.lr_decay_every as u64) as i32)
}

/// Incremental SGD driver. Batches, forward passes, and updates are pure
/// functions of (config, dataset, step index), so two trainers with equal
/// state stay equal step for step.
pub struct Trainer {
    model: Model,
    dataset: Dataset,
    targets: Vec<(Tensor<f64>, Tensor<f64>)>,
    velocities: Vec<Tensor<f64>>,
    completed: u64,
}

impl Trainer {
    pub fn new(config: &Config, dataset: Dataset) -> Result<Trainer, HarnessError> {
        let model = Model::from_config(config)?;
        let velocities = model
            .params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self::assemble(model, dataset, velocities, 0)
    }

    /// Continues an interrupted run. The checkpoint must carry the exact
    /// same canonical config.
    pub fn resume(
        config: &Config,
        dataset: Dataset,
        ckpt: &Checkpoint,
    ) -> Result<Trainer, HarnessError> {
        if ckpt.config_text != config.to_text()? {
            return Err(invalid(
                "checkpoint was trained with a different config; refusing to resume".to_string(),
            ));
        }
        let mut model = Model::from_config(config)?;
        ckpt.apply_params(&mut model.params)?;
        let velocities = ckpt.velocities(&model.params)?;
        Self::assemble(model, dataset, velocities, ckpt.step)
    }

    fn assemble(
        model: Model,
        dataset: Dataset,
        velocities: Vec<Tensor<f64>>,
        completed: u64,
    ) -> Result<Trainer, HarnessError> {
        check_dataset(&model.config, &dataset.meta)?;
        if dataset.samples.is_empty() {
            return Err(invalid("training dataset is empty"));
        }
        let n = &model.config.network;
        let targets = dataset
            .samples
            .iter()
            .map(|s| {
                let hm_coords = to_heatmap_coords(&s.joints_px, n.input, n.features);
                let hm =
                    make_heatmap_gt(&hm_coords, &s.visible, n.sigma, n.features[0], n.features[1])?;
                let depth = Tensor::new(vec![s.depth.len()], s.depth.clone())
                    .expect("depth length matches joints");
                Ok((hm, depth))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Trainer { model, dataset, targets, velocities, completed })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    fn batch_indices(&self) -> Vec<usize> {
        let n = self.dataset.samples.len();
        let k = self.model.config.training.batch.min(n);
        let seed = data::sample_seed(self.model.config.training.shuffle_seed, self.completed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, n, k).into_vec()
    }

    /// One SGD step over a freshly drawn batch: accumulate parameter
    /// gradients sample by sample, average, then apply the momentum update.
    pub fn step(&mut self) -> Result<StepStats, HarnessError> {
        let indices = self.batch_indices();
        let lr = lr_at(&self.model.config, self.completed);
        let gamma = self.model.config.network.gamma;
        let momentum = self.model.config.training.momentum;

        let mut grads: Vec<Tensor<f64>> = self
            .model
            .params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        let (mut sum_t, mut sum_h, mut sum_d) = (0.0, 0.0, 0.0);
        for &i in &indices {
            let mut tape = Tape::new();
            let binding = self.model.params.bind(&mut tape);
            let image = tape.constant(self.dataset.samples[i].image.clone());
            let outputs = self.model.net.forward(&mut tape, &binding, image)?;
            let predictions: Vec<_> =
                outputs.iter().map(|o| (o.heatmap_stack, o.depths)).collect();
            let hm_gt = tape.constant(self.targets[i].0.clone());
            let d_gt = tape.constant(self.targets[i].1.clone());
            let (total, terms) = loss(&mut tape, &predictions, hm_gt, d_gt, gamma)?;
            tape.backward(total)?;
            for (slot, id) in grads.iter_mut().zip(self.model.params.ids()) {
                if let Some(g) = tape.grad(binding.var(id)) {
                    for (acc, &v) in slot.data_mut().iter_mut().zip(g.data()) {
                        *acc += v;
                    }
                }
            }
            sum_t += terms.total;
            sum_h += terms.heatmap;
            sum_d += terms.depth;
        }

        let scale = 1.0 / indices.len() as f64;
        for (id, (v, g)) in self.model.params.ids().zip(self.velocities.iter_mut().zip(&grads)) {
            let w = self.model.params.value_mut(id);
            for ((w, v), &g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = momentum * *v - lr * g * scale;
                *w += *v;
            }
        }

        self.completed += 1;
        Ok(StepStats {
            step: self.completed,
            loss: sum_t * scale,
            l_h: sum_h * scale,
            l_d: sum_d * scale,
            lr,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, HarnessError> {
        Ok(Checkpoint::capture(
            &self.model.config,
            self.completed,
            &self.model.params,
            &self.velocities,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Runs (or resumes) training to the configured step count, logging every
/// `log_every` steps and checkpointing alongside the log. Quiet: progress
/// goes to the log file, not stdout.
pub fn train(
    config: &Config,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    fs::create_dir_all(out)?;
    ensure_datasets(config)?;
    let dataset = load_dataset(&train_dir(config))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, dataset, &Checkpoint::load(path)?)?,
        None => Trainer::new(config, dataset)?,
    };

    let log_path = out.join("train.log");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;
    let t = &config.training;
    writeln!(
        log,
        "run data_seed={} init_seed={} shuffle_seed={} steps={} batch={} from_step={}",
        config.data.seed, t.init_seed, t.shuffle_seed, t.steps, t.batch, trainer.completed()
    )?;

    let total = t.steps as u64;
    let latest = out.join("latest.ckpt");
    let mut initial = None;
    let mut last = None;
    while trainer.completed() < total {
        let stats = trainer.step()?;
        initial.get_or_insert(stats.loss);
        last = Some(stats.loss);
        if stats.step % t.log_every as u64 == 0 || stats.step == total {
            writeln!(
                log,
                "step={} loss={:.9e} l_h={:.9e} l_d={:.9e} lr={:.6e}",
                stats.step, stats.loss, stats.l_h, stats.l_d, stats.lr
            )?;
            trainer.checkpoint()?.save(&latest)?;
        }
    }
    let final_path = out.join("final.ckpt");
    trainer.checkpoint()?.save(&final_path)?;

    let (initial_loss, final_loss) = match (initial, last) {
        (Some(a), Some(b)) => (a, b),
        // Resume exactly at the final step: nothing ran, nothing to report.
        _ => (f64::NAN, f64::NAN),
    };
    Ok(TrainOutcome {
        initial_loss,
        final_loss,
        steps: trainer.completed(),
        checkpoint: final_path,
        log: log_path,
    })
}

// -------------------------------------------------------------- evaluation

/// What to score: PCK thresholds in heatmap pixels, and optionally the
/// width-normalized variant.
#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub thresholds: Vec<f64>,
    pub pckf: Option<PckfSpec>,
}

fn predict_one(model: &Model, sample: &data::PoseSample) -> Result<PosePair, HarnessError> {
    let mut tape = Tape::new();
    let binding = model.params.bind(&mut tape);
    let image = tape.constant(sample.image.clone());
    let outputs = model.net.forward(&mut tape, &binding, image)?;
    let last = outputs.last().expect("at least one stack");
    let decoded = decode_pose(tape.value(last.heatmap_stack), tape.value(last.depths))?;
    let unit = model.config.network.depth_unit;
    let n = &model.config.network;
    let gt_hm = to_heatmap_coords(&sample.joints_px, n.input, n.features);
    Ok(PosePair {
        pred: decoded.iter().map(|p| [p[0], p[1], p[2] * unit]).collect(),
        gt: gt_hm
            .iter()
            .zip(&sample.depth)
            .map(|(p, &d)| [p[0], p[1], d * unit])
            .collect(),
        visible: sample.visible.clone(),
    })
}

/// Decodes every sample into a prediction/ground-truth pair. Samples run in
/// parallel; results are stitched back in sample order.
pub fn predict_pairs(model: &Model, dataset: &Dataset) -> Result<Vec<PosePair>, HarnessError> {
    check_dataset(&model.config, &dataset.meta)?;
    let samples = &dataset.samples;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(samples.len().max(1));
    if workers <= 1 {
        return samples.iter().map(|s| predict_one(model, s)).collect();
    }
    let chunk = samples.len().div_ceil(workers);
    let results: Vec<Result<Vec<PosePair>, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| predict_one(model, s)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker")).collect()
    });
    let mut pairs = Vec::with_capacity(samples.len());
    for part in results {
        pairs.extend(part?);
    }
    Ok(pairs)
}

/// Scores a checkpoint against a dataset. A pure function of its inputs.
pub fn evaluate(
    ckpt: &Checkpoint,
    data_dir: &Path,
    spec: &EvalSpec,
) -> Result<MetricsReport, HarnessError> {
    let model = Model::from_checkpoint(ckpt)?;
    let dataset = load_dataset(data_dir)?;
    let pairs = predict_pairs(&model, &dataset)?;
    Ok(metrics::report(
        &pairs,
        model.wiring.graph.root(),
        &spec.thresholds,
        spec.pckf,
    )?)
}

// --------------------------------------------------------------- ablation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Connections,
    Cells,
    Stacks,
}

impl AblationAxis {
    pub fn parse(token: &str) -> Option<AblationAxis> {
        match token {
            "connections" => Some(AblationAxis::Connections),
            "cells" => Some(AblationAxis::Cells),
            "stacks" => Some(AblationAxis::Stacks),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Connections => "connections",
            AblationAxis::Cells => "cells",
            AblationAxis::Stacks => "stacks",
        }
    }
}

/// The variant configs an axis sweeps, in the order they are reported.
pub fn axis_variants(config: &Config, axis: AblationAxis) -> Vec<(String, Config)> {
    match axis {
        AblationAxis::Connections => [
            "simple_sequence",
            "physical",
            "symmetrical",
            "graphical_forward_only",
            "bidirectional",
        ]
        .iter()
        .map(|&token| {
            let mut c = config.clone();
            c.graph.connection = token.to_string();
            (token.to_string(), c)
        })
        .collect(),
        AblationAxis::Cells => ["convrnn", "convgru", "convlstm"]
            .iter()
            .map(|&token| {
                let mut c = config.clone();
                c.network.cell = token.to_string();
                // The context gate only exists for the LSTM; score the bare
                // cells on equal footing.
                c.network.mode = crate::config::BoostMode::Fb;
                (token.to_string(), c)
            })
            .collect(),
        AblationAxis::Stacks => [1usize, 2]
            .iter()
            .map(|&s| {
                let mut c = config.clone();
                c.network.stacks = s;
                (format!("{s}"), c)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub per_seed_pck: Vec<f64>,
    pub pck: f64,
    pub mean_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub axis: String,
    pub threshold: f64,
    pub seeds: u64,
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.variant.len())
            .chain(["variant".len()])
            .max()
            .unwrap_or(7);
        writeln!(f, "axis: {}  pck_threshold: {}  seeds: {}", self.axis, self.threshold, self.seeds)?;
        writeln!(f, "{:<name_w$}  {:>8}  {:>10}", "variant", "pck", "mean_err")?;
        for r in &self.rows {
            writeln!(f, "{:<name_w$}  {:>8.4}  {:>10.4}", r.variant, r.pck, r.mean_error)?;
        }
        Ok(())
    }
}

/// Trains and scores every variant along `axis`, each replicated over
/// `seeds` seed offsets sharing the same data. Work products (checkpoints,
/// logs) land under `work`.
pub fn ablate(
    config: &Config,
    axis: AblationAxis,
    seeds: u64,
    threshold: f64,
    work: &Path,
) -> Result<AblationTable, HarnessError> {
    if seeds == 0 {
        return Err(invalid("at least one seed replica required"));
    }
    if !(threshold > 0.0) {
        return Err(invalid(format!("pck threshold must be positive, got {threshold}")));
    }
    if config.data.test == 0 {
        return Err(invalid("ablation needs a test split; set data.test > 0"));
    }
    ensure_datasets(config)?;
    let spec = EvalSpec { thresholds: vec![threshold], pckf: None };
    let mut rows = Vec::new();
    for (name, variant) in axis_variants(config, axis) {
        variant.validate()?;
        let mut per_seed = Vec::new();
        let mut errors = Vec::new();
        for r in 0..seeds {
            let mut run = variant.clone();
            run.training.init_seed = run.training.init_seed.wrapping_add(r);
            run.training.shuffle_seed = run.training.shuffle_seed.wrapping_add(r);
            let out = work.join(axis.as_str()).join(&name).join(format!("seed{r}"));
            let outcome = train(&run, &out, None)?;
            let ckpt = Checkpoint::load(&outcome.checkpoint)?;
            let report = evaluate(&ckpt, &test_dir(config), &spec)?;
            per_seed.push(report.pck[0]);
            errors.push(report.mean_error);
        }
        let pck = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
        rows.push(AblationRow { variant: name, per_seed_pck: per_seed, pck, mean_error });
    }
    Ok(AblationTable {
        axis: axis.as_str().to_string(),
        threshold,
        seeds,
        rows,
    })
}

// ---------------------------------------------------------- feature dumps

fn channel_mean(t: &Tensor<f64>) -> Tensor<f64> {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    Tensor::from_fn(&[h, w], |i| {
        let (y, x) = (i / w, i % w);
        (0..c).map(|k| t.at3(y, x, k)).sum::<f64>() / c as f64
    })
}

/// Min-max rescale to `[0, 1]`; a constant map has no range and reads as
/// mid-gray.
pub fn normalize_map(t: &Tensor<f64>) -> Tensor<f64> {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        Tensor::from_fn(t.shape(), |i| (t.data()[i] - lo) / (hi - lo))
    } else {
        Tensor::filled(t.shape(), 0.5)
    }
}

/// Writes the first sub-network's per-joint maps for `joints`: channel
/// means of the group before boosting, of the context gate (raw, already in
/// `(0, 1]`), and of the boosted output. Returns the written paths.
pub fn dump_feature_maps(
    ckpt: &Checkpoint,
    image_path: &Path,
    joints: &[usize],
    out: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let model = Model::from_checkpoint(ckpt)?;
    let image = read_ppm(image_path)?;
    let n = &model.config.network;
    if image.shape() != [n.input[0], n.input[1], 3] {
        return Err(invalid(format!(
            "image is {:?}, model wants {:?}x3",
            image.shape(),
            n.input
        )));
    }
    for &j in joints {
        if j >= n.joints {
            return Err(invalid(format!("joint {j} out of range for {} joints", n.joints)));
        }
    }
    let mut tape = Tape::new();
    let binding = model.params.bind(&mut tape);
    let input = tape.constant(image);
    let outputs = model.net.forward(&mut tape, &binding, input)?;
    let first = &outputs[0];

    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for &j in joints {
        let pre = normalize_map(&channel_mean(tape.value(first.boosted.pre[j])));
        let post = normalize_map(&channel_mean(tape.value(first.boosted.per_joint[j])));
        for (tag, map) in [("pre", pre), ("post", post)] {
            let path = out.join(format!("joint{j}_{tag}.pgm"));
            write_pgm(&path, &map)?;
            written.push(path);
        }
        if let Some(gate) = first.boosted.gates[j] {
            let path = out.join(format!("joint{j}_gate.pgm"));
            write_pgm(&path, &channel_mean(tape.value(gate)))?;
            written.push(path);
        }
    }
    Ok(written)
}
