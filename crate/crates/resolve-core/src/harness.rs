//! Experiment driver: run configuration, training loops for the three
//! tasks, metrics records, and immutable run directories. Shared by the
//! CLI and the acceptance tests.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::layer::{Model, ModelConfig, Variant};
use crate::scalar::Scalar;
use crate::tasks::metrics::{element_wise_accuracy, full_sequence_accuracy};
use crate::tasks::mnist::{gen_mnist_math, load_mnist_idx, DigitData, MnistMathDataset};
use crate::tasks::pairwise::{gen_pairwise_order, PairwiseDataset};
use crate::tasks::sorting::{gen_sorting, SortingDataset};
use crate::tensor::{OptimizerConfig, OptimizerKind, OptimizerState, ParameterStore, Tape, Tensor};

/// Exponential-average momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Pairwise,
    Sorting,
    MnistMath,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(Task::Pairwise),
            "sorting" => Ok(Task::Sorting),
            "mnist-math" => Ok(Task::MnistMath),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Pairwise => "pairwise",
            Task::Sorting => "sorting",
            Task::MnistMath => "mnist-math",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub run_id: String,
    pub task: Task,
    pub model: ModelConfig,
    pub train_sizes: Vec<usize>,
    pub n_seeds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub out_dir: PathBuf,
    /// Seed for dataset generation (model seeds iterate separately).
    pub data_seed: u64,
    /// Sorting: sequence length and generated sample count.
    pub seq_len: usize,
    pub n_samples: usize,
    /// MNIST-Math: pair count and IDX file locations.
    pub n_pairs: usize,
    pub mnist_images: PathBuf,
    pub mnist_labels: PathBuf,
    /// Evaluate val/test every this many epochs (0 = only after training).
    /// When enabled, the reported metrics come from the epoch with the
    /// best validation score instead of the final epoch.
    pub eval_every: usize,
}

impl RunConfig {
    /// Pairwise order defaults: AdamW 1e-4, batch 128, 100 epochs,
    /// dropout 0.1, 32-unit ReLU head with one sigmoid output, D=1024,
    /// 5 seeds over train sizes 10..=210. Training applies antisymmetry
    /// augmentation: every training pair is also presented reversed with
    /// the complementary label.
    pub fn pairwise_default(variant: Variant) -> RunConfig {
        RunConfig {
            run_id: format!("pairwise-{variant}"),
            task: Task::Pairwise,
            model: ModelConfig {
                variant,
                f: 32,
                d: 1024,
                n_max: 2,
                d_model: 256,
                n_heads: 2,
                n_enc_layers: 1,
                n_dec_layers: 1,
                d_ff: 32,
                dropout: 0.1,
                head_hidden: vec![32],
                n_outputs: 1,
                binary: true,
                batch_norm: false,
                shared_basis: false,
                vocab: 0,
                seed: 0,
            },
            train_sizes: vec![10, 60, 110, 160, 210],
            n_seeds: 5,
            epochs: 100,
            batch_size: 128,
            optimizer: OptimizerConfig::adamw(1e-4, 0.01),
            out_dir: PathBuf::from("runs"),
            data_seed: 0,
            seq_len: 0,
            n_samples: 0,
            n_pairs: 0,
            mnist_images: PathBuf::new(),
            mnist_labels: PathBuf::new(),
            eval_every: 0,
        }
    }

    /// Sorting defaults: Adam 5e-4, batch 128, 200 epochs, d_model 64,
    /// 2 heads, d_ff 64, 4 decoder layers, batch-normalized source
    /// embedding for the RESOLVE variants, 6-element sequences.
    pub fn sorting_default(variant: Variant) -> RunConfig {
        RunConfig {
            run_id: format!("sorting-{variant}"),
            task: Task::Sorting,
            model: ModelConfig {
                variant,
                f: crate::tasks::sorting::OBJECT_DIM,
                d: 1024,
                n_max: 6,
                d_model: 64,
                n_heads: 2,
                n_enc_layers: 1,
                n_dec_layers: 4,
                d_ff: 64,
                dropout: 0.1,
                head_hidden: vec![],
                n_outputs: 6,
                binary: false,
                batch_norm: variant.uses_resolve(),
                shared_basis: false,
                vocab: 7,
                seed: 0,
            },
            train_sizes: vec![460],
            n_seeds: 5,
            epochs: 200,
            batch_size: 128,
            optimizer: OptimizerConfig::adam(5e-4),
            out_dir: PathBuf::from("runs"),
            data_seed: 0,
            seq_len: 6,
            n_samples: 660,
            n_pairs: 0,
            mnist_images: PathBuf::new(),
            mnist_labels: PathBuf::new(),
            eval_every: 0,
        }
    }

    /// MNIST-Math defaults: 10,000 digit pairs, 1-layer 2-head encoder,
    /// d_ff 64, dropout 0.4, 28-way softmax head, Adam 5e-4.
    pub fn mnist_default(variant: Variant) -> RunConfig {
        RunConfig {
            run_id: format!("mnist-math-{variant}"),
            task: Task::MnistMath,
            model: ModelConfig {
                variant,
                f: 64,
                d: 1024,
                n_max: 2,
                d_model: 64,
                n_heads: 2,
                n_enc_layers: 1,
                n_dec_layers: 1,
                d_ff: 64,
                dropout: 0.4,
                head_hidden: vec![64],
                n_outputs: crate::tasks::mnist::N_CLASSES,
                binary: false,
                batch_norm: false,
                shared_basis: false,
                vocab: 0,
                seed: 0,
            },
            train_sizes: vec![7000],
            n_seeds: 3,
            epochs: 20,
            batch_size: 128,
            optimizer: OptimizerConfig::adam(5e-4),
            out_dir: PathBuf::from("runs"),
            data_seed: 0,
            seq_len: 0,
            n_samples: 0,
            n_pairs: 10_000,
            mnist_images: PathBuf::from("data/digits-images-idx3-ubyte"),
            mnist_labels: PathBuf::from("data/digits-labels-idx1-ubyte"),
            eval_every: 0,
        }
    }

    pub fn default_for(task: Task, variant: Variant) -> RunConfig {
        match task {
            Task::Pairwise => RunConfig::pairwise_default(variant),
            Task::Sorting => RunConfig::sorting_default(variant),
            Task::MnistMath => RunConfig::mnist_default(variant),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid run_id '{}'", self.run_id)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.n_seeds == 0 {
            return Err(Error::Config(
                "epochs, batch_size and n_seeds must be positive".into(),
            ));
        }
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return Err(Error::Config("train_sizes must be positive".into()));
        }
        match self.task {
            Task::Sorting => {
                if self.seq_len < 2 || self.n_samples == 0 {
                    return Err(Error::Config("sorting needs seq_len >= 2 and samples".into()));
                }
                if self.model.vocab != self.seq_len + 1 || self.model.n_outputs != self.seq_len {
                    return Err(Error::Config(
                        "sorting model must use vocab = seq_len + 1 and seq_len outputs".into(),
                    ));
                }
            }
            Task::MnistMath => {
                if self.n_pairs == 0 {
                    return Err(Error::Config("mnist-math needs n_pairs > 0".into()));
                }
            }
            Task::Pairwise => {
                if !self.model.binary {
                    return Err(Error::Config("pairwise uses the binary head".into()));
                }
            }
        }
        Ok(())
    }

    /// Parse a flat key=value description. `task` and `variant` select the
    /// preset; the remaining keys override individual fields.
    pub fn from_kv(text: &str) -> Result<RunConfig> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let find = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let task: Task = find("task")
            .ok_or_else(|| Error::Config("missing 'task'".into()))?
            .parse()?;
        let variant: Variant = find("variant")
            .ok_or_else(|| Error::Config("missing 'variant'".into()))?
            .parse()?;
        let mut cfg = RunConfig::default_for(task, variant);

        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse()
                .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))
        }

        for (k, v) in &entries {
            match k.as_str() {
                "task" | "variant" => {}
                "run_id" => cfg.run_id = v.clone(),
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "epochs" => cfg.epochs = parse(k, v)?,
                "batch_size" => cfg.batch_size = parse(k, v)?,
                "n_seeds" => cfg.n_seeds = parse(k, v)?,
                "data_seed" => cfg.data_seed = parse(k, v)?,
                "train_sizes" => {
                    cfg.train_sizes = v
                        .split(',')
                        .map(|s| parse("train_sizes", s.trim()))
                        .collect::<Result<_>>()?;
                }
                "lr" => cfg.optimizer.lr = parse(k, v)?,
                "weight_decay" => cfg.optimizer.weight_decay = parse(k, v)?,
                "optimizer" => cfg.optimizer.kind = parse(k, v)?,
                "d" => cfg.model.d = parse(k, v)?,
                "d_model" => cfg.model.d_model = parse(k, v)?,
                "n_heads" => cfg.model.n_heads = parse(k, v)?,
                "d_ff" => cfg.model.d_ff = parse(k, v)?,
                "n_enc_layers" => cfg.model.n_enc_layers = parse(k, v)?,
                "n_dec_layers" => cfg.model.n_dec_layers = parse(k, v)?,
                "dropout" => cfg.model.dropout = parse(k, v)?,
                "batch_norm" => cfg.model.batch_norm = parse(k, v)?,
                "shared_basis" => cfg.model.shared_basis = parse(k, v)?,
                "head_hidden" => {
                    cfg.model.head_hidden = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse("head_hidden", s.trim()))
                        .collect::<Result<_>>()?;
                }
                "seq_len" => {
                    cfg.seq_len = parse(k, v)?;
                    if task == Task::Sorting {
                        cfg.model.n_max = cfg.seq_len;
                        cfg.model.vocab = cfg.seq_len + 1;
                        cfg.model.n_outputs = cfg.seq_len;
                    }
                }
                "n_samples" => cfg.n_samples = parse(k, v)?,
                "n_pairs" => cfg.n_pairs = parse(k, v)?,
                "eval_every" => cfg.eval_every = parse(k, v)?,
                "mnist_images" => cfg.mnist_images = PathBuf::from(v),
                "mnist_labels" => cfg.mnist_labels = PathBuf::from(v),
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialize back to the key=value form echoed into the run directory.
    pub fn to_kv(&self) -> String {
        let opt = match self.optimizer.kind {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        };
        let sizes: Vec<String> = self.train_sizes.iter().map(|s| s.to_string()).collect();
        let hidden: Vec<String> = self.model.head_hidden.iter().map(|s| s.to_string()).collect();
        let mut s = String::new();
        let m = &self.model;
        for (k, v) in [
            ("task", self.task.to_string()),
            ("variant", m.variant.to_string()),
            ("run_id", self.run_id.clone()),
            ("out_dir", self.out_dir.display().to_string()),
            ("train_sizes", sizes.join(",")),
            ("n_seeds", self.n_seeds.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("optimizer", opt.to_string()),
            ("lr", self.optimizer.lr.to_string()),
            ("weight_decay", self.optimizer.weight_decay.to_string()),
            ("d", m.d.to_string()),
            ("d_model", m.d_model.to_string()),
            ("n_heads", m.n_heads.to_string()),
            ("d_ff", m.d_ff.to_string()),
            ("n_enc_layers", m.n_enc_layers.to_string()),
            ("n_dec_layers", m.n_dec_layers.to_string()),
            ("dropout", m.dropout.to_string()),
            ("batch_norm", m.batch_norm.to_string()),
            ("shared_basis", m.shared_basis.to_string()),
            ("head_hidden", hidden.join(",")),
            ("data_seed", self.data_seed.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("n_pairs", self.n_pairs.to_string()),
            ("mnist_images", self.mnist_images.display().to_string()),
            ("mnist_labels", self.mnist_labels.display().to_string()),
            ("eval_every", self.eval_every.to_string()),
        ] {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}

/// One metrics CSV row.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub run_id: String,
    /// `None` marks aggregate rows.
    pub seed: Option<u64>,
    pub task: Task,
    pub model: String,
    pub train_size: usize,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub const CSV_HEADER: &str = "run_id,seed,task,model,train_size,epoch,split,metric,value";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.run_id,
            seed,
            self.task,
            self.model,
            self.train_size,
            self.epoch,
            self.split,
            self.metric,
            self.value
        )
    }
}

/// Materialized dataset for one task.
pub enum TaskData {
    Pairwise(PairwiseDataset),
    Sorting(SortingDataset),
    MnistMath {
        digits: DigitData,
        ds: MnistMathDataset,
    },
}

pub fn load_task_data(cfg: &RunConfig) -> Result<TaskData> {
    Ok(match cfg.task {
        Task::Pairwise => TaskData::Pairwise(gen_pairwise_order(cfg.data_seed)),
        Task::Sorting => TaskData::Sorting(gen_sorting(cfg.data_seed, cfg.seq_len, cfg.n_samples)),
        Task::MnistMath => {
            let digits = load_mnist_idx(&cfg.mnist_images, &cfg.mnist_labels)?;
            let ds = gen_mnist_math(&digits, cfg.data_seed, cfg.n_pairs);
            TaskData::MnistMath { digits, ds }
        }
    })
}

impl TaskData {
    fn split(&self) -> &crate::tasks::Split {
        match self {
            TaskData::Pairwise(d) => &d.split,
            TaskData::Sorting(d) => &d.split,
            TaskData::MnistMath { ds, .. } => &ds.split,
        }
    }

    fn train_subset(&self, size: usize, seed: u64) -> Vec<usize> {
        match self {
            TaskData::Pairwise(d) => d.train_subset(size, seed),
            TaskData::Sorting(d) => d.train_subset(size, seed),
            TaskData::MnistMath { ds, .. } => {
                let mut pool = ds.split.train.clone();
                pool.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
                pool.truncate(size);
                pool
            }
        }
    }

    /// Feature tensor `[B, N, F]` for the given sample indices.
    fn batch_inputs<S: Scalar>(&self, idx: &[usize]) -> Tensor<S> {
        let mut data = Vec::new();
        let (n, f) = self.input_shape();
        for &k in idx {
            match self {
                TaskData::Pairwise(d) => {
                    for row in d.input(k) {
                        data.extend(row.iter().map(|&v| S::from_f64_lossy(v)));
                    }
                }
                TaskData::Sorting(d) => {
                    for row in d.input(k) {
                        data.extend(row.iter().map(|&v| S::from_f64_lossy(v)));
                    }
                }
                TaskData::MnistMath { digits, ds } => {
                    for row in ds.input(digits, k) {
                        data.extend(row.iter().map(|&v| S::from_f64_lossy(v)));
                    }
                }
            }
        }
        Tensor::new(vec![idx.len(), n, f], data).expect("consistent batch shape")
    }

    fn input_shape(&self) -> (usize, usize) {
        match self {
            TaskData::Pairwise(_) => (2, crate::tasks::pairwise::OBJECT_DIM),
            TaskData::Sorting(d) => (d.seq_len, crate::tasks::sorting::OBJECT_DIM),
            TaskData::MnistMath { digits, .. } => (2, digits.rows * digits.cols),
        }
    }
}

/// Result of one (train_size, seed) training run.
pub struct TrainOutcome<S: Scalar> {
    pub epoch_losses: Vec<f64>,
    pub val_metrics: Vec<(String, f64)>,
    pub test_metrics: Vec<(String, f64)>,
    /// Periodic (epoch, val metrics, test metrics) snapshots when
    /// `eval_every > 0`.
    pub history: Vec<(usize, Vec<(String, f64)>, Vec<(String, f64)>)>,
    pub store: ParameterStore<S>,
}

impl<S: Scalar> TrainOutcome<S> {
    /// The headline test metric: plain accuracy for classifiers,
    /// element-wise accuracy for sorting.
    pub fn primary_test_metric(&self) -> f64 {
        self.test_metrics
            .first()
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    }
}

fn classifier_loss<S: Scalar>(
    model: &Model,
    tape: &mut Tape<S>,
    store: &ParameterStore<S>,
    inputs: Tensor<S>,
    labels: &[usize],
    binary: bool,
) -> Result<crate::tensor::Var> {
    let x = tape.constant(inputs);
    let logits = model.forward_classifier(tape, store, x)?;
    if binary {
        let t: Vec<S> = labels.iter().map(|&l| S::from_f64_lossy(l as f64)).collect();
        tape.bce_logits(logits, &t)
    } else {
        tape.cross_entropy_logits(logits, labels)
    }
}

fn commit_bn_stats<S: Scalar>(tape: &Tape<S>, store: &mut ParameterStore<S>) -> Result<()> {
    for (name, mean, var) in tape.bn_batch_stats() {
        store.update_running_stats(name, mean, var, BN_MOMENTUM)?;
    }
    Ok(())
}

fn classifier_labels(data: &TaskData, idx: &[usize]) -> Vec<usize> {
    match data {
        TaskData::Pairwise(d) => idx.iter().map(|&k| d.labels[k] as usize).collect(),
        TaskData::MnistMath { ds, .. } => idx.iter().map(|&k| ds.labels[k]).collect(),
        TaskData::Sorting(_) => unreachable!("sorting is a seq2seq task"),
    }
}

fn eval_classifier<S: Scalar>(
    model: &Model,
    store: &ParameterStore<S>,
    data: &TaskData,
    idx: &[usize],
    batch_size: usize,
    binary: bool,
) -> Result<f64> {
    let mut hits = 0usize;
    for chunk in idx.chunks(batch_size) {
        let labels = classifier_labels(data, chunk);
        let mut tape = Tape::new(0, false);
        let x = tape.constant(data.batch_inputs(chunk));
        let logits = model.forward_classifier(&mut tape, store, x)?;
        let vals = tape.value(logits);
        let width = vals.last_axis();
        for (b, &label) in labels.iter().enumerate() {
            let row = &vals.data()[b * width..(b + 1) * width];
            let pred = if binary {
                usize::from(row[0] > S::zero())
            } else {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            };
            hits += usize::from(pred == label);
        }
    }
    Ok(hits as f64 / idx.len() as f64)
}

fn eval_sorting<S: Scalar>(
    model: &Model,
    store: &ParameterStore<S>,
    data: &TaskData,
    idx: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let TaskData::Sorting(ds) = data else {
        unreachable!("sorting eval on non-sorting data")
    };
    let mut preds = Vec::with_capacity(idx.len());
    let mut targets = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size) {
        let src = data.batch_inputs::<S>(chunk);
        preds.extend(model.greedy_decode(store, &src, ds.seq_len)?);
        targets.extend(chunk.iter().map(|&k| ds.targets[k].clone()));
    }
    Ok((
        element_wise_accuracy(&preds, &targets)?,
        full_sequence_accuracy(&preds, &targets)?,
    ))
}

/// Train one model for one (train_size, seed) cell and evaluate it on the
/// validation and test splits.
pub fn train_single<S: Scalar>(
    cfg: &RunConfig,
    data: &TaskData,
    train_size: usize,
    seed: u64,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let model = Model::assemble(ModelConfig {
        seed,
        ..cfg.model.clone()
    })?;
    let mut store = ParameterStore::<S>::new();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed_0000);
    model.init(&mut store, &mut rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer)?;
    let mut train_idx = data.train_subset(train_size, seed);
    if let TaskData::Pairwise(_) = data {
        // antisymmetry augmentation: the reversed pair's label is implied
        let n = crate::tasks::pairwise::N_OBJECTS;
        let mut seen: std::collections::HashSet<usize> = train_idx.iter().copied().collect();
        for k in train_idx.clone() {
            let rev = (k % n) * n + k / n;
            if seen.insert(rev) {
                train_idx.push(rev);
            }
        }
    }
    let seq2seq = cfg.model.variant.is_seq2seq();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut history: Vec<(usize, Vec<(String, f64)>, Vec<(String, f64)>)> = Vec::new();
    let mut best: Option<(f64, Vec<(String, f64)>, Vec<(String, f64)>, ParameterStore<S>)> = None;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let mut tape = Tape::new(seed.wrapping_mul(1_000_003) ^ step, true);
            tape.set_ste_surrogate(true);
            let loss = if seq2seq {
                let TaskData::Sorting(ds) = data else {
                    return Err(Error::Config("seq2seq variants require the sorting task".into()));
                };
                let src = tape.constant(data.batch_inputs::<S>(chunk));
                let start = cfg.model.vocab - 1;
                let mut tgt_in = Vec::with_capacity(chunk.len() * ds.seq_len);
                let mut tgt_out = Vec::with_capacity(chunk.len() * ds.seq_len);
                for &k in chunk {
                    let t = &ds.targets[k];
                    tgt_in.push(start);
                    tgt_in.extend_from_slice(&t[..t.len() - 1]);
                    tgt_out.extend_from_slice(t);
                }
                let logits = model.forward_seq2seq(&mut tape, &store, src, &tgt_in, chunk.len())?;
                tape.cross_entropy_logits(logits, &tgt_out)?
            } else {
                let labels = classifier_labels(data, chunk);
                let inputs = data.batch_inputs::<S>(chunk);
                classifier_loss(&model, &mut tape, &store, inputs, &labels, cfg.model.binary)?
            };
            let loss_val = tape.value(loss).data()[0].to_f64_lossy();
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss(step as usize));
            }
            tape.backward(loss)?;
            tape.collect_grads(&mut store)?;
            opt.step(&mut store)?;
            commit_bn_stats(&tape, &mut store)?;
            loss_sum += loss_val;
            n_batches += 1;
            step += 1;
        }
        epoch_losses.push(loss_sum / n_batches.max(1) as f64);
        if cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            let (val, test) = evaluate_splits(&model, &store, data, cfg, seq2seq)?;
            let score = val.first().map(|(_, v)| *v).unwrap_or(f64::NAN);
            history.push((epoch + 1, val.clone(), test.clone()));
            if best.as_ref().map_or(true, |(b, ..)| score > *b) {
                best = Some((score, val, test, store.clone()));
            }
        }
    }
    // with periodic evaluation the reported model is the best-validation
    // snapshot; otherwise it is the final model
    let (val_metrics, test_metrics, store) = match best {
        Some((_, val, test, snap)) => (val, test, snap),
        None => {
            let (val, test) = evaluate_splits(&model, &store, data, cfg, seq2seq)?;
            (val, test, store)
        }
    };
    Ok(TrainOutcome {
        epoch_losses,
        val_metrics,
        test_metrics,
        history,
        store,
    })
}

/// Evaluate a model on the validation and test splits of `data`.
fn evaluate_splits<S: Scalar>(
    model: &Model,
    store: &ParameterStore<S>,
    data: &TaskData,
    cfg: &RunConfig,
    seq2seq: bool,
) -> Result<(Vec<(String, f64)>, Vec<(String, f64)>)> {
    let split = data.split();
    if seq2seq {
        let (v_el, v_fs) = eval_sorting(model, store, data, &split.val, cfg.batch_size)?;
        let (t_el, t_fs) = eval_sorting(model, store, data, &split.test, cfg.batch_size)?;
        Ok((
            vec![
                ("element_wise_accuracy".to_string(), v_el),
                ("full_sequence_accuracy".to_string(), v_fs),
            ],
            vec![
                ("element_wise_accuracy".to_string(), t_el),
                ("full_sequence_accuracy".to_string(), t_fs),
            ],
        ))
    } else {
        let v = eval_classifier(model, store, data, &split.val, cfg.batch_size, cfg.model.binary)?;
        let t = eval_classifier(model, store, data, &split.test, cfg.batch_size, cfg.model.binary)?;
        Ok((
            vec![("accuracy".to_string(), v)],
            vec![("accuracy".to_string(), t)],
        ))
    }
}

/// Mean/std aggregate over seeds for one train size.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub train_size: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub struct RunSummary {
    pub per_seed: Vec<(usize, u64, f64)>,
    pub aggregates: Vec<Aggregate>,
    pub run_dir: PathBuf,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Full sweep: train every (train_size, seed) cell, stream metrics rows
/// to `metrics.csv`, save final checkpoints, and append aggregate rows.
/// Run directories are immutable; an existing `run_id` is refused.
pub fn run_experiment<S: Scalar>(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let run_dir = cfg.out_dir.join(&cfg.run_id);
    if run_dir.exists() {
        return Err(Error::RunExists(cfg.run_id.clone()));
    }
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.txt"), cfg.to_kv())?;
    let mut csv = std::io::BufWriter::new(fs::File::create(run_dir.join("metrics.csv"))?);
    writeln!(csv, "{CSV_HEADER}")?;
    let data = load_task_data(cfg)?;
    let model_name = cfg.model.variant.to_string();
    let mut per_seed = Vec::new();
    let mut aggregates = Vec::new();
    let record = |run_id: &str, seed, train_size, epoch, split: &str, metric: &str, value| {
        MetricsRecord {
            run_id: run_id.to_string(),
            seed,
            task: cfg.task,
            model: model_name.clone(),
            train_size,
            epoch,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        }
    };
    for &size in &cfg.train_sizes {
        let mut finals: Vec<(String, Vec<f64>)> = Vec::new();
        for seed in 0..cfg.n_seeds as u64 {
            let outcome = match train_single::<S>(cfg, &data, size, seed) {
                Ok(o) => o,
                Err(e) => {
                    if let Error::NonFiniteLoss(step) = e {
                        let r = record(&cfg.run_id, Some(seed), size, step, "train", "diverged", 1.0);
                        writeln!(csv, "{}", r.csv_row())?;
                        csv.flush()?;
                    }
                    return Err(e);
                }
            };
            for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
                let r = record(&cfg.run_id, Some(seed), size, epoch, "train", "loss", *loss);
                writeln!(csv, "{}", r.csv_row())?;
            }
            for (epoch, val, test) in &outcome.history {
                for (split, metrics) in [("val", val), ("test", test)] {
                    for (metric, value) in metrics {
                        let r = record(&cfg.run_id, Some(seed), size, *epoch, split, metric, *value);
                        writeln!(csv, "{}", r.csv_row())?;
                    }
                }
            }
            for (split, metrics) in [("val", &outcome.val_metrics), ("test", &outcome.test_metrics)]
            {
                for (metric, value) in metrics {
                    let r = record(&cfg.run_id, Some(seed), size, cfg.epochs, split, metric, *value);
                    writeln!(csv, "{}", r.csv_row())?;
                }
            }
            for (metric, value) in &outcome.test_metrics {
                match finals.iter_mut().find(|(m, _)| m == metric) {
                    Some((_, vs)) => vs.push(*value),
                    None => finals.push((metric.clone(), vec![*value])),
                }
            }
            per_seed.push((size, seed, outcome.primary_test_metric()));
            // full config travels with the weights so `eval` can rebuild
            // the model without the run directory
            let mut config_echo: Vec<(String, String)> = cfg
                .to_kv()
                .lines()
                .filter_map(|l| l.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            config_echo.push(("train_size".into(), size.to_string()));
            config_echo.push(("model_seed".into(), seed.to_string()));
            save_checkpoint(
                &run_dir.join(format!("model_size{size}_seed{seed}.ckpt")),
                &config_echo,
                &outcome.store,
            )?;
            csv.flush()?;
        }
        for (metric, values) in &finals {
            let (mean, std) = mean_std(values);
            for (suffix, value) in [("mean", mean), ("std", std)] {
                let r = record(
                    &cfg.run_id,
                    None,
                    size,
                    cfg.epochs,
                    "test",
                    &format!("{metric}_{suffix}"),
                    value,
                );
                writeln!(csv, "{}", r.csv_row())?;
            }
            aggregates.push(Aggregate {
                train_size: size,
                metric: metric.clone(),
                mean,
                std,
                n: values.len(),
            });
        }
        csv.flush()?;
    }
    Ok(RunSummary {
        per_seed,
        aggregates,
        run_dir,
    })
}

/// Rebuild a model from a saved checkpoint and evaluate it on the test
/// split of its task.
pub fn eval_checkpoint<S: Scalar>(path: &Path) -> Result<Vec<(String, f64)>> {
    let (entries, store) = crate::checkpoint::load_checkpoint::<S>(path)?;
    let kv: String = entries
        .iter()
        .filter(|(k, _)| k != "train_size" && k != "model_seed")
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    let cfg = RunConfig::from_kv(&kv)?;
    let seed: u64 = entries
        .iter()
        .find(|(k, _)| k == "model_seed")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let model = Model::assemble(ModelConfig {
        seed,
        ..cfg.model.clone()
    })?;
    let data = load_task_data(&cfg)?;
    let test = &data.split().test;
    if cfg.model.variant.is_seq2seq() {
        let (el, fs) = eval_sorting(&model, &store, &data, test, cfg.batch_size)?;
        Ok(vec![
            ("element_wise_accuracy".to_string(), el),
            ("full_sequence_accuracy".to_string(), fs),
        ])
    } else {
        let acc = eval_classifier(&model, &store, &data, test, cfg.batch_size, cfg.model.binary)?;
        Ok(vec![("accuracy".to_string(), acc)])
    }
}

/// Load metrics rows back from a run directory (used by plotting).
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != CSV_HEADER {
                return Err(Error::Config(format!("unexpected CSV header '{line}'")));
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Config(format!("bad CSV row '{line}'")));
        }
        rows.push(MetricsRecord {
            run_id: parts[0].to_string(),
            seed: if parts[1].is_empty() {
                None
            } else {
                Some(parts[1].parse().map_err(|e| Error::Config(format!("{e}")))?)
            },
            task: parts[2].parse()?,
            model: parts[3].to_string(),
            train_size: parts[4].parse().map_err(|e| Error::Config(format!("{e}")))?,
            epoch: parts[5].parse().map_err(|e| Error::Config(format!("{e}")))?,
            split: parts[6].to_string(),
            metric: parts[7].to_string(),
            value: parts[8].parse().map_err(|e| Error::Config(format!("{e}")))?,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    Ok(rows)
}
