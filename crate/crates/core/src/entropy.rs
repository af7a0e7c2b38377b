//! Entropy model: a factorized prior over the hyper-latent and channel-slice
//! conditional Gaussians over the latent.

use std::ops::Range;

use rand::Rng;
use snic_nn::{Bound, Constraint, Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{Result, SnicError};
use crate::layers::Conv;
use crate::quantization::{gaussian_likelihood, LIKELIHOOD_FLOOR, SIGMA_MIN};
use crate::transforms::ModelConfig;

/// Equal-width partition of the latent channels, decoded in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceScheme {
    pub num_slices: usize,
    pub channels: usize,
}

impl SliceScheme {
    pub fn new(num_slices: usize, channels: usize) -> Self {
        assert!(num_slices > 0 && channels.is_multiple_of(num_slices), "{channels} channels in {num_slices} slices");
        Self { num_slices, channels }
    }

    pub fn width(&self) -> usize {
        self.channels / self.num_slices
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        i * self.width()..(i + 1) * self.width()
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        (0..self.num_slices).map(|i| self.range(i)).collect()
    }
}

/// Per-element Gaussian parameters of one slice.
#[derive(Clone)]
pub struct EntropyParams {
    pub mu: Var,
    pub sigma: Var,
}

/// Three 3x3 convolutions predicting `(mu, sigma)` of one slice from the
/// hyper-features and all earlier slices.
#[derive(Clone, Debug)]
pub struct SlicePredictor {
    c0: Conv,
    c1: Conv,
    c2: Conv,
    index: usize,
}

impl SlicePredictor {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig, index: usize) -> Self {
        let s = cfg.slice_width();
        let cin = cfg.hyper_out + index * s;
        let name = format!("slice{index}");
        Self {
            c0: Conv::new(store, rng, &format!("{name}.conv0"), cin, cfg.pred_hidden, 3, 1, 1, true),
            c1: Conv::new(store, rng, &format!("{name}.conv1"), cfg.pred_hidden, cfg.pred_hidden, 3, 1, 1, true),
            c2: Conv::new(store, rng, &format!("{name}.conv2"), cfg.pred_hidden, 2 * s, 3, 1, 1, true),
            index,
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, hyper: &Var, decoded: &[Var]) -> Result<EntropyParams> {
        if decoded.len() != self.index {
            return Err(SnicError::Input(format!(
                "slice {} needs {} decoded slices, got {}",
                self.index,
                self.index,
                decoded.len()
            )));
        }
        let mut parts = vec![hyper];
        parts.extend(decoded.iter());
        let input = if parts.len() == 1 { hyper.clone() } else { g.concat(&parts, 1) };
        let h = g.relu(&self.c0.forward(g, p, &input));
        let h = g.relu(&self.c1.forward(g, p, &h));
        let out = self.c2.forward(g, p, &h);
        let s = out.shape()[1] / 2;
        let mu = g.narrow(&out, 1, 0, s);
        let sigma = g.lower_bound(&g.softplus(&g.narrow(&out, 1, s, s)), SIGMA_MIN);
        Ok(EntropyParams { mu, sigma })
    }
}

/// Per-channel monotone CDF network `c(x) = sigmoid(f(x))` with
/// `f` a composition of positive-weight affine maps and tanh-gated updates.
#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    pub channels: usize,
    matrices: Vec<ParamId>,
    biases: Vec<ParamId>,
    factors: Vec<ParamId>,
}

/// Hidden widths of the per-channel CDF network.
pub const PRIOR_FILTERS: [usize; 3] = [3, 3, 3];
const PRIOR_INIT_SCALE: f64 = 10.0;

impl FactorizedPrior {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, channels: usize) -> Self {
        let mut dims = vec![1];
        dims.extend(PRIOR_FILTERS);
        dims.push(1);
        let layers = dims.len() - 1;
        let scale = PRIOR_INIT_SCALE.powf(1.0 / layers as f64);
        let (mut matrices, mut biases, mut factors) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..layers {
            let (din, dout) = (dims[i], dims[i + 1]);
            let init = (1.0 / scale / dout as f64).exp_m1().ln();
            matrices.push(store.add(format!("prior.matrix{i}"), Tensor::full(&[channels, dout, din], init), Constraint::None));
            let b = Tensor::from_fn(&[channels, dout, 1], |_| rng.gen_range(-0.5..0.5));
            biases.push(store.add(format!("prior.bias{i}"), b, Constraint::None));
            if i + 1 < layers {
                factors.push(store.add(format!("prior.factor{i}"), Tensor::zeros(&[channels, dout, 1]), Constraint::None));
            }
        }
        Self { channels, matrices, biases, factors }
    }

    /// Logits of the CDF for inputs shaped `[C, 1, L]`.
    pub fn logits(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let mut h = x.clone();
        for i in 0..self.matrices.len() {
            let w = g.softplus(p.var(self.matrices[i]));
            h = g.add(&g.bmm(&w, &h), p.var(self.biases[i]));
            if let Some(&f) = self.factors.get(i) {
                let gate = g.mul(&g.tanh(p.var(f)), &g.tanh(&h));
                h = g.add(&h, &gate);
            }
        }
        h
    }

    /// `P(z_hat = n)` for every element of `z` (`[B, C, h, w]`), floored.
    pub fn likelihood(&self, g: &Graph, p: &Bound, z: &Var) -> Var {
        let (b, c, h, w) = z.dims4();
        assert_eq!(c, self.channels, "prior channel mismatch");
        let flat = g.reshape(&g.permute(z, &[1, 0, 2, 3]), &[c, 1, b * h * w]);
        let lower = self.logits(g, p, &g.add_scalar(&flat, -0.5));
        let upper = self.logits(g, p, &g.add_scalar(&flat, 0.5));
        // Evaluate on the side of the median where the sigmoid is not saturated.
        let sign = lower.value().zip_map(upper.value(), |l, u| -snic_nn::ops::sign(l + u));
        let sign = g.constant(sign);
        let diff = g.sub(&g.sigmoid(&g.mul(&sign, &upper)), &g.sigmoid(&g.mul(&sign, &lower)));
        let lik = g.lower_bound(&g.abs(&diff), LIKELIHOOD_FLOOR);
        g.permute(&g.reshape(&lik, &[c, b, h, w]), &[1, 0, 2, 3])
    }

    /// `pmf[c][k]` = probability of integer `lo + k` for channel `c`, unfloored.
    pub fn pmf_table(&self, p: &Bound, lo: i32, hi: i32) -> Vec<Vec<f64>> {
        let g = Graph::inference();
        let count = (hi - lo + 1) as usize;
        let c = self.channels;
        let ints = Tensor::from_fn(&[c, 1, count], |i| (lo + (i % count) as i32) as f64);
        let x = g.constant(ints);
        let lower = self.logits(&g, p, &g.add_scalar(&x, -0.5));
        let upper = self.logits(&g, p, &g.add_scalar(&x, 0.5));
        let (l, u) = (lower.value().data(), upper.value().data());
        let sig = snic_nn::ops::sigmoid;
        (0..c)
            .map(|ch| {
                (0..count)
                    .map(|k| {
                        let (a, b) = (l[ch * count + k], u[ch * count + k]);
                        let s = -snic_nn::ops::sign(a + b);
                        (sig(s * b) - sig(s * a)).abs()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Slice predictors plus the factorized prior.
#[derive(Clone, Debug)]
pub struct EntropyModel {
    pub scheme: SliceScheme,
    pub predictors: Vec<SlicePredictor>,
    pub prior: FactorizedPrior,
}

impl EntropyModel {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        Self {
            scheme: SliceScheme::new(cfg.num_slices, cfg.m),
            predictors: (0..cfg.num_slices).map(|i| SlicePredictor::new(store, rng, cfg, i)).collect(),
            prior: FactorizedPrior::new(store, rng, cfg.cz),
        }
    }

    /// `(mu_i, sigma_i)` of slice `i` given hyper-features and slices `0..i`.
    pub fn predict_slice_params(
        &self,
        g: &Graph,
        p: &Bound,
        hyper: &Var,
        decoded: &[Var],
        i: usize,
    ) -> Result<EntropyParams> {
        let pred = self
            .predictors
            .get(i)
            .ok_or_else(|| SnicError::Input(format!("slice index {i} out of range")))?;
        pred.forward(g, p, hyper, decoded)
    }

    /// Likelihood of the slices of `y_tilde` under their conditional Gaussians.
    /// The context for slice `i` is `y_tilde`'s own slices `0..i`. Returns one
    /// likelihood tensor per slice together with its parameters.
    pub fn slice_likelihoods(
        &self,
        g: &Graph,
        p: &Bound,
        hyper: &Var,
        y_tilde: &Var,
    ) -> Result<Vec<(Var, EntropyParams)>> {
        let slices: Vec<Var> = self.scheme.ranges().into_iter().map(|r| g.narrow(y_tilde, 1, r.start, r.len())).collect();
        let mut out = Vec::with_capacity(slices.len());
        for i in 0..slices.len() {
            let params = self.predict_slice_params(g, p, hyper, &slices[..i], i)?;
            out.push((gaussian_likelihood(g, &slices[i], &params.mu, &params.sigma), params));
        }
        Ok(out)
    }
}

/// Bits `-sum log2 p` of a likelihood tensor, as a plain number.
pub fn bits_of(p: &Tensor) -> f64 {
    -p.data().iter().map(|v| v.log2()).sum::<f64>()
}
