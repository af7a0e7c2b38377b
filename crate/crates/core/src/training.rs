//! The optimization loop: noise-relaxed forward passes, rate–distortion
//! (optionally adversarial) updates, cosine learning-rate annealing,
//! checkpointing and resumption.

use std::f64::consts::PI;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snic_nn::{clip_global_norm, Adam, Archive, Graph, ParamStore, Tensor};

use crate::data::{pad_to_multiple, sample_crops_with, ImageTensor, PAD_MULTIPLE};
use crate::error::{Result, SnicError};
use crate::model::CompressionModel;
use crate::objectives::{discriminator_loss, generator_distortion, rd_loss, Discriminator, LossWeights, Lpips};
use crate::transforms::ModelConfig;

/// The seven rate–distortion tradeoffs of the full model family.
pub const LAMBDA_GRID: [f64; 7] = [0.0015, 0.0035, 0.0070, 0.0125, 0.0250, 0.0410, 0.0550];

const STATE_KIND: &str = "snic-train-state";
const STATE_VERSION: u32 = 1;
/// Stream offset separating crop sampling from quantization noise.
const DATA_STREAM: u64 = 1 << 40;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lambdas: Vec<f64>,
    pub epochs: usize,
    /// Optimizer steps per epoch; `None` means one crop per image per epoch.
    pub steps_per_epoch: Option<usize>,
    pub batch: usize,
    pub crop: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adversarial: bool,
    pub recon: f64,
    pub perc: f64,
    pub adv: f64,
    pub lpips_backbone: String,
    pub disc_width: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::paper(),
            lambdas: LAMBDA_GRID.to_vec(),
            epochs: 100,
            steps_per_epoch: None,
            batch: 16,
            crop: 256,
            lr_start: 1e-4,
            lr_end: 1.2e-6,
            adversarial: false,
            recon: 1.0,
            perc: 1.0,
            adv: 0.01,
            lpips_backbone: "random-pyramid".into(),
            disc_width: 32,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SnicError::Input(m));
        if self.lambdas.is_empty() {
            return bad("at least one lambda is required".into());
        }
        if self.epochs == 0 || self.batch == 0 || self.crop == 0 || self.steps_per_epoch == Some(0) {
            return bad("epochs, batch, crop and steps per epoch must be positive".into());
        }
        if !(self.lr_end > 0.0 && self.lr_end < self.lr_start) {
            return bad(format!("need 0 < lr_end < lr_start, got {} and {}", self.lr_end, self.lr_start));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive".into());
        }
        self.model.validate().map_err(SnicError::Input)?;
        for &lambda in &self.lambdas {
            self.weights(lambda).validate()?;
        }
        Ok(())
    }

    /// Loss weights for one tradeoff; the adversarial weight is zero unless enabled.
    pub fn weights(&self, lambda: f64) -> LossWeights {
        LossWeights { lambda, recon: self.recon, perc: self.perc, adv: if self.adversarial { self.adv } else { 0.0 } }
    }

    pub fn steps_per_epoch(&self, num_images: usize) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| num_images.div_ceil(self.batch).max(1))
    }
}

/// Index written into checkpoints and bitstreams: the position in
/// [`LAMBDA_GRID`] when every value of the run belongs to the grid, else the
/// position in the run's own list.
pub fn lambda_index(lambdas: &[f64], i: usize) -> u8 {
    let grid_pos = |lambda: f64| LAMBDA_GRID.iter().position(|&l| (l - lambda).abs() < 1e-12);
    if lambdas.iter().all(|&l| grid_pos(l).is_some()) {
        grid_pos(lambdas[i]).unwrap() as u8
    } else {
        i as u8
    }
}

/// Cosine decay from `lr_start` at step 0 to `lr_end` at `total_steps`.
pub fn anneal_lr(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> Result<f64> {
    if step > total_steps {
        return Err(SnicError::Input(format!("step {step} beyond the schedule of {total_steps} steps")));
    }
    if total_steps == 0 {
        return Ok(lr_start);
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (PI * t).cos()))
}

/// Values logged for one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Estimated total bits of the batch.
    pub rate_bits: f64,
    pub bpp: f64,
    pub mse: f64,
    pub lpips: f64,
    pub adv: f64,
    pub lr: f64,
    /// `bpp + lambda * distortion`.
    pub loss: f64,
    pub disc_loss: f64,
}

pub const METRICS_HEADER: &str = "step,rate_bits,mse,lpips,adv,lr";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.step, self.rate_bits, self.mse, self.lpips, self.adv, self.lr)
    }
}

#[derive(Serialize, Deserialize)]
struct StateManifest {
    kind: String,
    version: u32,
    config: TrainConfig,
    lambda_position: usize,
    step: u64,
    total_steps: u64,
    optimizer: Adam,
    disc_optimizer: Option<Adam>,
}

/// Discriminator with its own parameters and optimizer.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub net: Discriminator,
    pub store: ParamStore,
    pub opt: Adam,
}

/// Training state for a single tradeoff.
pub struct Trainer {
    pub cfg: TrainConfig,
    /// Position of this trainer's lambda in `cfg.lambdas`.
    pub lambda_position: usize,
    pub model: CompressionModel,
    pub opt: Adam,
    pub adversary: Option<Adversary>,
    pub lpips: Option<Lpips>,
    pub step: u64,
    pub total_steps: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, lambda_position: usize, total_steps: u64) -> Result<Self> {
        cfg.validate()?;
        if lambda_position >= cfg.lambdas.len() {
            return Err(SnicError::Input(format!("lambda position {lambda_position} out of range")));
        }
        let mut model = CompressionModel::new(cfg.model.clone(), cfg.seed)?;
        model.meta.lambda = Some(cfg.lambdas[lambda_position]);
        model.meta.lambda_index = lambda_index(&cfg.lambdas, lambda_position);
        // A zero adversarial weight never builds (or updates) a discriminator.
        let adversary = (cfg.adversarial && cfg.adv > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c);
            let mut store = ParamStore::new();
            let net = Discriminator::new(&mut store, &mut rng, cfg.model.m, cfg.disc_width);
            Adversary { net, store, opt: Adam::default() }
        });
        let lpips = if cfg.perc > 0.0 { Some(Lpips::backbone(&cfg.lpips_backbone)?) } else { None };
        Ok(Self { cfg, lambda_position, model, opt: Adam::default(), adversary, lpips, step: 0, total_steps })
    }

    pub fn lambda(&self) -> f64 {
        self.cfg.lambdas[self.lambda_position]
    }

    /// Noise generator of the current step; independent of how training was split into sessions.
    fn step_rng(&self, offset: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(offset + self.step);
        rng
    }

    /// Draws the batch for the current step as `[B, 1, S, S]`, crops padded to a multiple of 64.
    pub fn sample_batch(&self, images: &[ImageTensor]) -> Result<Tensor> {
        let mut rng = self.step_rng(DATA_STREAM);
        let crops = sample_crops_with(images, self.cfg.crop, self.cfg.batch, &mut rng)?;
        batch_tensor(&crops)
    }

    /// One generator update (and, if adversarial, one discriminator update) on `x`.
    pub fn train_step(&mut self, x: &Tensor) -> Result<StepMetrics> {
        let lr = anneal_lr(self.step as usize, self.total_steps.max(self.step) as usize, self.cfg.lr_start, self.cfg.lr_end)?;
        let weights = self.cfg.weights(self.lambda());
        let mut rng = self.step_rng(0);

        let g = Graph::new();
        let p = self.model.store.bind(&g);
        let xv = g.constant(x.clone());
        let fwd = self.model.forward_train(&g, &p, &xv, &mut rng)?;
        let disc_bound = self.adversary.as_ref().map(|a| (a, a.store.bind_frozen(&g)));
        let disc = disc_bound.as_ref().map(|(a, b)| (&a.net, b));
        let terms = generator_distortion(&g, &xv, &fwd.x_hat, &fwd.y, disc, self.lpips.as_ref(), &weights)?;
        let loss = rd_loss(&g, &fwd.bpp, &terms.total, weights.lambda);
        let metrics = StepMetrics {
            step: self.step,
            rate_bits: fwd.bits.item(),
            bpp: fwd.bpp.item(),
            mse: terms.mse.item(),
            lpips: terms.lpips.as_ref().map_or(0.0, |v| v.item()),
            adv: terms.adv.as_ref().map_or(0.0, |v| v.item()),
            lr,
            loss: loss.item(),
            disc_loss: 0.0,
        };
        if !metrics.loss.is_finite() {
            return Err(SnicError::Other(format!("non-finite loss at step {}: {metrics:?}", self.step)));
        }
        let mut grads = p.grads(&g.backward(&loss));
        clip_global_norm(&mut grads, self.cfg.clip_norm);
        let (x_hat, y) = (fwd.x_hat.value().clone(), fwd.y.value().clone());
        drop(disc_bound);
        drop(g);
        self.opt.update(&mut self.model.store, &grads, lr);

        let disc_loss = match self.adversary.as_mut() {
            Some(adv) => {
                let g = Graph::new();
                let p = adv.store.bind(&g);
                let (xr, xf, yc) = (g.constant(x.clone()), g.constant(x_hat), g.constant(y));
                let loss = discriminator_loss(&g, &adv.net.forward(&g, &p, &xr, &yc), &adv.net.forward(&g, &p, &xf, &yc));
                let value = loss.item();
                if !value.is_finite() {
                    return Err(SnicError::Other(format!("non-finite discriminator loss at step {}", self.step)));
                }
                let mut grads = p.grads(&g.backward(&loss));
                clip_global_norm(&mut grads, self.cfg.clip_norm);
                adv.opt.update(&mut adv.store, &grads, lr);
                value
            }
            None => 0.0,
        };
        self.step += 1;
        self.model.meta.steps = self.step;
        Ok(StepMetrics { disc_loss, ..metrics })
    }

    /// Writes `model.snck` and `train_state.snck` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.model.save(&dir.join("model.snck"))?;
        let manifest = StateManifest {
            kind: STATE_KIND.into(),
            version: STATE_VERSION,
            config: self.cfg.clone(),
            lambda_position: self.lambda_position,
            step: self.step,
            total_steps: self.total_steps,
            optimizer: self.opt.clone(),
            disc_optimizer: self.adversary.as_ref().map(|a| a.opt.clone()),
        };
        let mut tensors: Vec<(String, Tensor)> =
            self.opt.state_tensors().into_iter().map(|(n, t)| (format!("opt.{n}"), t)).collect();
        if let Some(a) = &self.adversary {
            tensors.extend(a.store.named_tensors());
            tensors.extend(a.opt.state_tensors().into_iter().map(|(n, t)| (format!("disc_opt.{n}"), t)));
        }
        let archive = Archive { meta: serde_json::to_value(manifest).expect("state serializes"), tensors };
        Ok(archive.save(&dir.join("train_state.snck"))?)
    }

    /// Restores a trainer from a checkpoint directory written by [`Trainer::save`].
    pub fn resume(dir: &Path) -> Result<Self> {
        let model = CompressionModel::load(&dir.join("model.snck"))?;
        let archive = snic_nn::Archive::load(&dir.join("train_state.snck"))
            .map_err(|e| SnicError::Model(format!("cannot read training state in {}: {e}", dir.display())))?;
        let m: StateManifest = serde_json::from_value(archive.meta)
            .map_err(|e| SnicError::Model(format!("training state manifest: {e}")))?;
        if m.kind != STATE_KIND || m.version != STATE_VERSION {
            return Err(SnicError::Model(format!("unsupported training state {} v{}", m.kind, m.version)));
        }
        let mut t = Self::new(m.config, m.lambda_position, m.total_steps)?;
        if t.model.store.layer_plan() != model.store.layer_plan() {
            return Err(SnicError::Model("checkpoint does not match the training configuration".into()));
        }
        t.model = model;
        t.step = m.step;
        let (mut opt_t, mut disc_t, mut disc_opt_t) = (Vec::new(), Vec::new(), Vec::new());
        for (name, tensor) in archive.tensors {
            if let Some(rest) = name.strip_prefix("opt.") {
                opt_t.push((rest.to_string(), tensor));
            } else if let Some(rest) = name.strip_prefix("disc_opt.") {
                disc_opt_t.push((rest.to_string(), tensor));
            } else {
                disc_t.push((name, tensor));
            }
        }
        t.opt = m.optimizer;
        t.opt.load_state_tensors(opt_t)?;
        match (t.adversary.as_mut(), m.disc_optimizer) {
            (Some(a), Some(opt)) => {
                a.store.load_named(disc_t)?;
                a.opt = opt;
                a.opt.load_state_tensors(disc_opt_t)?;
            }
            (None, None) => {}
            _ => return Err(SnicError::Model("adversarial state does not match the configuration".into())),
        }
        Ok(t)
    }
}

/// Stacks equally sized crops into `[B, 1, S, S]`, replicate-padding to a multiple of 64.
pub fn batch_tensor(crops: &[ImageTensor]) -> Result<Tensor> {
    let padded: Vec<ImageTensor> = crops.iter().map(|c| pad_to_multiple(c, PAD_MULTIPLE)).collect();
    let first = padded.first().ok_or_else(|| SnicError::Input("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    if padded.iter().any(|c| c.height != h || c.width != w) {
        return Err(SnicError::Input("batch crops differ in size".into()));
    }
    let data: Vec<f64> = padded.iter().flat_map(|c| c.data.iter().copied()).collect();
    Ok(Tensor::new(&[padded.len(), 1, h, w], data))
}

/// Where a run stores one tradeoff's outputs.
pub fn lambda_dir(run_dir: &Path, index: u8) -> PathBuf {
    run_dir.join(format!("lambda_{index}"))
}

pub fn checkpoint_dir(run_dir: &Path, index: u8, epoch: usize) -> PathBuf {
    lambda_dir(run_dir, index).join(format!("ckpt_{epoch}"))
}

fn append_metrics(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Runs `trainer` to the end of its schedule, checkpointing after every epoch.
/// Returns the final checkpoint directory.
pub fn run_trainer(
    trainer: &mut Trainer,
    images: &[ImageTensor],
    run_dir: &Path,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<PathBuf> {
    let per_epoch = trainer.cfg.steps_per_epoch(images.len()) as u64;
    let index = trainer.model.meta.lambda_index;
    let dir = lambda_dir(run_dir, index);
    fs::create_dir_all(&dir)?;
    let mut last = None;
    while trainer.step < trainer.total_steps {
        let mut rows = Vec::new();
        let epoch_end = ((trainer.step / per_epoch) + 1) * per_epoch;
        while trainer.step < epoch_end.min(trainer.total_steps) {
            let batch = trainer.sample_batch(images)?;
            let m = trainer.train_step(&batch)?;
            on_step(&m);
            rows.push(m);
        }
        append_metrics(&dir.join("metrics.csv"), &rows)?;
        let epoch = trainer.step.div_ceil(per_epoch) as usize;
        let ckpt = checkpoint_dir(run_dir, index, epoch);
        trainer.save(&ckpt)?;
        last = Some(ckpt);
    }
    match last {
        Some(p) => Ok(p),
        None => {
            let epoch = trainer.step.div_ceil(per_epoch) as usize;
            let ckpt = checkpoint_dir(run_dir, index, epoch);
            trainer.save(&ckpt)?;
            Ok(ckpt)
        }
    }
}

/// Trains one model per lambda of `cfg` on `images`, under `run_dir`.
/// Returns the final checkpoint directory of each.
pub fn train(
    cfg: &TrainConfig,
    images: &[ImageTensor],
    run_dir: &Path,
    mut on_step: impl FnMut(usize, &StepMetrics),
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(SnicError::Input("training set is empty".into()));
    }
    let total = (cfg.epochs * cfg.steps_per_epoch(images.len())) as u64;
    (0..cfg.lambdas.len())
        .map(|i| {
            let mut t = Trainer::new(cfg.clone(), i, total)?;
            run_trainer(&mut t, images, run_dir, |m| on_step(i, m))
        })
        .collect()
}
