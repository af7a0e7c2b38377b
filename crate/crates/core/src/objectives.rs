//! Training objectives: the rate–distortion Lagrangian, the generator
//! distortion (MSE, perceptual and adversarial terms), the conditional
//! discriminator and its loss, and a pluggable LPIPS-style perceptual metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snic_nn::{Bound, Graph, ParamStore, Var};

use crate::error::{Result, SnicError};
use crate::layers::Conv;
use crate::transforms::LATENT_STRIDE;

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-6;

/// Weights of the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Rate–distortion tradeoff.
    pub lambda: f64,
    pub recon: f64,
    pub perc: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.0125, recon: 1.0, perc: 1.0, adv: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda, self.recon, self.perc, self.adv];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(SnicError::Input(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// `R + lambda * D`.
pub fn rd_loss(g: &Graph, rate: &Var, distortion: &Var, lambda: f64) -> Var {
    g.add(rate, &g.scale(distortion, lambda))
}

/// Plain-number form of [`rd_loss`].
pub fn rd_loss_value(rate: f64, distortion: f64, lambda: f64) -> f64 {
    rate + lambda * distortion
}

/// Mean squared error on the level scale.
pub fn mse(g: &Graph, x: &Var, x_hat: &Var) -> Var {
    g.mean_all(&g.square(&g.sub(x, x_hat)))
}

/// `log` of a probability clipped away from 0 and 1.
pub fn clamped_log(g: &Graph, p: &Var) -> Var {
    g.ln(&g.clamp(p, PROB_EPS, 1.0 - PROB_EPS))
}

/// Maps levels 0..=255 onto [-1, 1].
fn centered(g: &Graph, x: &Var) -> Var {
    g.add_scalar(&g.scale(x, 1.0 / 127.5), -1.0)
}

/// Conditional discriminator: a strided convolutional classifier over the
/// image concatenated with the latent, upsampled to image resolution. Emits
/// a per-patch probability map in (0, 1).
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: Vec<Conv>,
    pub latent_channels: usize,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, latent_channels: usize, width: usize) -> Self {
        let w = width;
        let convs = vec![
            Conv::new(store, rng, "disc.conv0", 1 + latent_channels, w, 4, 2, 1, true),
            Conv::new(store, rng, "disc.conv1", w, 2 * w, 4, 2, 1, true),
            Conv::new(store, rng, "disc.conv2", 2 * w, 4 * w, 4, 2, 1, true),
            Conv::new(store, rng, "disc.conv3", 4 * w, 1, 3, 1, 1, true),
        ];
        Self { convs, latent_channels }
    }

    /// `D(x, y)`: `x` is `[B, 1, H, W]` levels, `y` is `[B, M, H/16, W/16]`.
    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var, y: &Var) -> Var {
        let cond = g.upsample_nearest(y, LATENT_STRIDE);
        let mut h = g.concat(&[&centered(g, x), &cond], 1);
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(g, p, &h);
            if i < last {
                h = g.leaky_relu(&h, 0.2);
            }
        }
        g.sigmoid(&h)
    }
}

/// `-log D(x, y) - log(1 - D(x', y))`, averaged over the probability map.
pub fn discriminator_loss(g: &Graph, d_real: &Var, d_fake: &Var) -> Var {
    let real = clamped_log(g, d_real);
    let fake = clamped_log(g, &g.add_scalar(&g.neg(d_fake), 1.0));
    g.neg(&g.add(&g.mean_all(&real), &g.mean_all(&fake)))
}

/// Registered perceptual feature extractors.
pub const LPIPS_BACKBONES: [&str; 1] = ["random-pyramid"];
const PYRAMID_SEED: u64 = 0x5eed_1e55;
const PYRAMID_WIDTHS: [usize; 3] = [8, 16, 32];

/// LPIPS-style distance: per stage, features are unit-normalized over channels
/// and their squared differences averaged; stage distances are summed with
/// fixed linear weights. The backbone is frozen.
#[derive(Clone, Debug)]
pub struct Lpips {
    pub name: String,
    store: ParamStore,
    stages: Vec<Conv>,
    weights: Vec<f64>,
}

impl Lpips {
    /// Looks up a registered backbone by name.
    pub fn backbone(name: &str) -> Result<Self> {
        match name {
            "random-pyramid" => Ok(Self::random_pyramid()),
            other => Err(SnicError::Input(format!(
                "unknown perceptual backbone '{other}' (available: {})",
                LPIPS_BACKBONES.join(", ")
            ))),
        }
    }

    /// Fixed-seed random convolution pyramid: three 3x3 conv + ReLU stages
    /// separated by 2x average pooling.
    pub fn random_pyramid() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PYRAMID_SEED);
        let mut store = ParamStore::new();
        let mut cin = 1;
        let stages = PYRAMID_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv::new(&mut store, &mut rng, &format!("lpips.conv{i}"), cin, w, 3, 1, 1, true);
                cin = w;
                c
            })
            .collect();
        let n = PYRAMID_WIDTHS.len() as f64;
        Self { name: "random-pyramid".into(), store, stages, weights: vec![1.0 / n; PYRAMID_WIDTHS.len()] }
    }

    fn features(&self, g: &Graph, p: &Bound, x: &Var) -> Vec<Var> {
        let mut h = centered(g, x);
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, c) in self.stages.iter().enumerate() {
            if i > 0 {
                h = g.avg_pool(&h, 2);
            }
            h = g.relu(&c.forward(g, p, &h));
            out.push(h.clone());
        }
        out
    }

    /// Distance between two level-scale batches `[B, 1, H, W]`, averaged over the batch.
    pub fn distance(&self, g: &Graph, x: &Var, y: &Var) -> Var {
        let p = self.store.bind_frozen(g);
        let (fx, fy) = (self.features(g, &p, x), self.features(g, &p, y));
        let mut total: Option<Var> = None;
        for ((a, b), &w) in fx.iter().zip(&fy).zip(&self.weights) {
            let d = g.sub(&unit_normalize(g, a), &unit_normalize(g, b));
            // Sum over channels, mean over batch and positions.
            let per_pos = g.sum_axis(&g.square(&d), 1);
            let term = g.scale(&g.mean_all(&per_pos), w);
            total = Some(match total {
                Some(t) => g.add(&t, &term),
                None => term,
            });
        }
        total.expect("at least one stage")
    }
}

/// Divides each feature vector (over axis 1) by its Euclidean norm.
fn unit_normalize(g: &Graph, f: &Var) -> Var {
    let sq = g.sum_axis(&g.square(f), 1);
    let inv_norm = g.exp(&g.scale(&g.ln(&g.add_scalar(&sq, 1e-10)), -0.5));
    g.mul(f, &inv_norm)
}

/// Individual generator distortion terms and their weighted sum.
pub struct DistortionTerms {
    pub total: Var,
    pub mse: Var,
    pub lpips: Option<Var>,
    /// `-log D(x', y)`, present only when the adversarial term is active.
    pub adv: Option<Var>,
}

/// `recon * MSE + perc * LPIPS - adv * log D(x', y)`.
///
/// Terms with zero weight are not evaluated; in particular the discriminator
/// is never touched when `adv == 0`. The latent condition is detached so the
/// adversarial gradient reaches the encoder only through `x'`.
#[allow(clippy::too_many_arguments)]
pub fn generator_distortion(
    g: &Graph,
    x: &Var,
    x_hat: &Var,
    y: &Var,
    disc: Option<(&Discriminator, &Bound)>,
    lpips: Option<&Lpips>,
    w: &LossWeights,
) -> Result<DistortionTerms> {
    let mse_v = mse(g, x, x_hat);
    let mut total = g.scale(&mse_v, w.recon);
    let lpips_v = match (w.perc > 0.0, lpips) {
        (true, Some(net)) => {
            let d = net.distance(g, x, x_hat);
            total = g.add(&total, &g.scale(&d, w.perc));
            Some(d)
        }
        (true, None) => return Err(SnicError::Input("perceptual weight set without a backbone".into())),
        (false, _) => None,
    };
    let adv_v = match (w.adv > 0.0, disc) {
        (true, Some((d, p))) => {
            let score = d.forward(g, p, x_hat, &y.detach());
            let term = g.neg(&g.mean_all(&clamped_log(g, &score)));
            total = g.add(&total, &g.scale(&term, w.adv));
            Some(term)
        }
        (true, None) => return Err(SnicError::Input("adversarial weight set without a discriminator".into())),
        (false, _) => None,
    };
    Ok(DistortionTerms { total, mse: mse_v, lpips: lpips_v, adv: adv_v })
}
