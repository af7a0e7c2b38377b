//! The complete compression model: transforms, entropy model, and checkpoints.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snic_nn::{Archive, Bound, Graph, LayerEntry, ParamStore, Tensor, Var};

use crate::data::{ImageTensor, PAD_MULTIPLE};
use crate::entropy::{bits_of, EntropyModel};
use crate::error::{Result, SnicError};
use crate::quantization::{bits_from_likelihoods, discretized_gaussian_pmf, noise_tensor};
use crate::transforms::{Analysis, HyperAnalysis, HyperSynthesis, ModelConfig, Synthesis};

const CHECKPOINT_KIND: &str = "snic-model";
const CHECKPOINT_VERSION: u32 = 1;

/// Training-time facts stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Rate-distortion tradeoff the model was trained with.
    pub lambda: Option<f64>,
    /// Index of `lambda` in the training grid; written into bitstreams.
    pub lambda_index: u8,
    /// Number of optimizer steps taken.
    pub steps: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    kind: String,
    version: u32,
    config: ModelConfig,
    layer_plan: Vec<LayerEntry>,
    meta: ModelMeta,
}

#[derive(Clone, Debug)]
pub struct CompressionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub analysis: Analysis,
    pub synthesis: Synthesis,
    pub hyper_analysis: HyperAnalysis,
    pub hyper_synthesis: HyperSynthesis,
    pub entropy: EntropyModel,
    pub meta: ModelMeta,
}

/// Differentiable outputs of a noise-relaxed forward pass.
pub struct TrainForward {
    /// Unclamped reconstruction on the level scale.
    pub x_hat: Var,
    /// Latent before noise (the discriminator's condition).
    pub y: Var,
    /// Total estimated bits over the batch.
    pub bits: Var,
    /// Bits per pixel over the batch.
    pub bpp: Var,
}

/// Result of the deterministic (rounded) latent pass shared by the encoder and
/// the rate estimator.
#[derive(Clone, Debug)]
pub struct LatentPass {
    /// Rounded hyper-latent `[1, Cz, h, w]`.
    pub z_hat: Tensor,
    /// Integer residuals `round(y_i - mu_i)` per slice.
    pub residuals: Vec<Tensor>,
    /// Scales used for each slice.
    pub sigmas: Vec<Tensor>,
    /// Reconstructed latent `residual + mu`, `[1, M, h, w]`.
    pub y_hat: Tensor,
}

impl CompressionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate().map_err(SnicError::Model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let analysis = Analysis::new(&mut store, &mut rng, &config);
        let synthesis = Synthesis::new(&mut store, &mut rng, &config);
        let hyper_analysis = HyperAnalysis::new(&mut store, &mut rng, &config);
        let hyper_synthesis = HyperSynthesis::new(&mut store, &mut rng, &config);
        let entropy = EntropyModel::new(&mut store, &mut rng, &config);
        Ok(Self {
            config,
            store,
            analysis,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            entropy,
            meta: ModelMeta { seed, ..Default::default() },
        })
    }

    /// One-byte fingerprint of the weights (low byte of their CRC32).
    pub fn model_id(&self) -> u8 {
        (crc32fast::hash(&self.store.to_le_bytes()) & 0xff) as u8
    }

    /// Noise-relaxed forward pass for training. `x` is `[B, 1, H, W]` with
    /// H and W multiples of 64.
    pub fn forward_train(&self, g: &Graph, p: &Bound, x: &Var, rng: &mut impl Rng) -> Result<TrainForward> {
        let (b, _, h, w) = x.dims4();
        check_padded(h, w)?;
        let y = self.analysis.forward(g, p, x);
        let z = self.hyper_analysis.forward(g, p, &y);
        let z_tilde = g.add(&z, &g.constant(noise_tensor(z.shape(), rng)));
        let bits_z = bits_from_likelihoods(g, &self.entropy.prior.likelihood(g, p, &z_tilde));
        let hyper = self.hyper_synthesis.forward(g, p, &z_tilde);
        let y_tilde = g.add(&y, &g.constant(noise_tensor(y.shape(), rng)));
        let mut bits = bits_z;
        for (lik, _) in self.entropy.slice_likelihoods(g, p, &hyper, &y_tilde)? {
            bits = g.add(&bits, &bits_from_likelihoods(g, &lik));
        }
        let x_hat = self.synthesis.forward_raw(g, p, &y_tilde);
        let bpp = g.scale(&bits, 1.0 / (b * h * w) as f64);
        Ok(TrainForward { x_hat, y, bits, bpp })
    }

    /// Analysis and hyper-analysis of a padded image: `(y, z_hat)`.
    pub fn analyze(&self, x: &ImageTensor) -> Result<(Tensor, Tensor)> {
        check_padded(x.height, x.width)?;
        let g = Graph::inference();
        let p = self.store.bind_frozen(&g);
        let y = self.analysis.forward(&g, &p, &g.constant(x.to_tensor()));
        let z = self.hyper_analysis.forward(&g, &p, &y);
        let z_hat = z.value().map(f64::round);
        Ok((y.value().clone(), z_hat))
    }

    /// Hyper-features from a rounded hyper-latent.
    pub fn hyper_features(&self, z_hat: &Tensor) -> Tensor {
        let g = Graph::inference();
        let p = self.store.bind_frozen(&g);
        self.hyper_synthesis.forward(&g, &p, &g.constant(z_hat.clone())).value().clone()
    }

    /// Gaussian parameters `(mu, sigma)` of slice `i` from decoded context.
    pub fn slice_params(&self, hyper: &Tensor, decoded: &[Tensor], i: usize) -> Result<(Tensor, Tensor)> {
        let g = Graph::inference();
        let p = self.store.bind_frozen(&g);
        let hv = g.constant(hyper.clone());
        let ctx: Vec<Var> = decoded.iter().map(|t| g.constant(t.clone())).collect();
        let params = self.entropy.predict_slice_params(&g, &p, &hv, &ctx, i)?;
        Ok((params.mu.value().clone(), params.sigma.value().clone()))
    }

    /// Rounded latent pass of a padded image, exactly as the encoder runs it.
    pub fn latent_pass(&self, x: &ImageTensor) -> Result<LatentPass> {
        let (y, z_hat) = self.analyze(x)?;
        let hyper = self.hyper_features(&z_hat);
        let mut decoded = Vec::new();
        let (mut residuals, mut sigmas) = (Vec::new(), Vec::new());
        for (i, r) in self.entropy.scheme.ranges().into_iter().enumerate() {
            let yi = y.narrow(1, r.start, r.len());
            let (mu, sigma) = self.slice_params(&hyper, &decoded, i)?;
            let res = yi.zip_map(&mu, |y, m| (y - m).round());
            decoded.push(res.zip_map(&mu, |r, m| r + m));
            residuals.push(res);
            sigmas.push(sigma);
        }
        let refs: Vec<&Tensor> = decoded.iter().collect();
        Ok(LatentPass { z_hat, residuals, sigmas, y_hat: Tensor::concat(&refs, 1) })
    }

    /// Clamped reconstruction of a (padded) image from its latent.
    pub fn synthesize(&self, y_hat: &Tensor) -> Tensor {
        let g = Graph::inference();
        let p = self.store.bind_frozen(&g);
        self.synthesis.forward(&g, &p, &g.constant(y_hat.clone())).value().clone()
    }

    /// Model bits of a rounded latent pass: `(bits for y_hat, bits for z_hat)`.
    pub fn estimate_rate(&self, pass: &LatentPass) -> (f64, f64) {
        let mut bits_y = 0.0;
        for (res, sigma) in pass.residuals.iter().zip(&pass.sigmas) {
            bits_y -= res.data().iter().zip(sigma.data()).map(|(&r, &s)| discretized_gaussian_pmf(r, 0.0, s).log2()).sum::<f64>();
        }
        let g = Graph::inference();
        let p = self.store.bind_frozen(&g);
        let lik = self.entropy.prior.likelihood(&g, &p, &g.constant(pass.z_hat.clone()));
        (bits_y, bits_of(lik.value()))
    }

    pub fn to_archive(&self) -> Archive {
        let manifest = CheckpointManifest {
            kind: CHECKPOINT_KIND.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layer_plan: self.store.layer_plan(),
            meta: self.meta.clone(),
        };
        Archive {
            meta: serde_json::to_value(manifest).expect("manifest serializes"),
            tensors: self.store.named_tensors(),
        }
    }

    pub fn from_archive(archive: Archive) -> Result<Self> {
        let manifest: CheckpointManifest = serde_json::from_value(archive.meta)
            .map_err(|e| SnicError::Model(format!("checkpoint manifest: {e}")))?;
        if manifest.kind != CHECKPOINT_KIND {
            return Err(SnicError::Model(format!("not a model checkpoint ({})", manifest.kind)));
        }
        if manifest.version != CHECKPOINT_VERSION {
            return Err(SnicError::Model(format!("unsupported checkpoint version {}", manifest.version)));
        }
        let mut model = Self::new(manifest.config, 0)?;
        if model.store.layer_plan() != manifest.layer_plan {
            return Err(SnicError::Model("checkpoint layer plan does not match the model architecture".into()));
        }
        model.store.load_named(archive.tensors)?;
        model.meta = manifest.meta;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = Archive::load(path).map_err(|e| match e {
            snic_nn::NnError::Io(io) => SnicError::Model(format!("cannot read checkpoint {}: {io}", path.display())),
            other => SnicError::from(other),
        })?;
        Self::from_archive(archive)
    }
}

fn check_padded(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(PAD_MULTIPLE) || !w.is_multiple_of(PAD_MULTIPLE) {
        return Err(SnicError::Input(format!("{h}x{w} input is not padded to a multiple of {PAD_MULTIPLE}")));
    }
    Ok(())
}
