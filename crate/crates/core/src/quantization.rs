//! Scalar quantization, its additive-noise training surrogate, and the
//! discretized Gaussian used to model quantized latents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snic_nn::{Graph, Tensor, Var};

use crate::error::{Result, SnicError};

/// Smallest scale used anywhere in the entropy model.
pub const SIGMA_MIN: f64 = 0.11;
/// Likelihoods are floored here before taking logarithms.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Whether a quantizer runs the training surrogate or hard rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    Noise { seed: u64 },
    Round,
}

/// Nearest integer, ties away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Mean-centred rounding `round(y - mu) + mu`, elementwise.
pub fn quantize_round(y: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    if y.len() != mu.len() {
        return Err(SnicError::Input(format!("quantize: {} values vs {} means", y.len(), mu.len())));
    }
    if y.iter().chain(mu).any(|v| !v.is_finite()) {
        return Err(SnicError::Input("quantize: non-finite input".into()));
    }
    Ok(y.iter().zip(mu).map(|(&y, &m)| round_half_away(y - m) + m).collect())
}

/// One draw from the open interval (-1/2, 1/2).
pub fn uniform_noise_sample(rng: &mut impl Rng) -> f64 {
    loop {
        let u = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return u;
        }
    }
}

/// A tensor of i.i.d. uniform noise on (-1/2, 1/2).
pub fn noise_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| uniform_noise_sample(rng))
}

/// `y + w` with `w` i.i.d. uniform on (-1/2, 1/2), reproducible under `seed`.
pub fn add_uniform_noise(y: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    y.iter().map(|&v| v + uniform_noise_sample(&mut rng)).collect()
}

/// Standard normal upper tail `1 - Phi(t)`, accurate far into the tail.
fn upper_tail(t: f64) -> f64 {
    0.5 * libm::erfc(t * INV_SQRT_2)
}

fn std_normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// `Phi((d + 1/2)/sigma) - Phi((d - 1/2)/sigma)` for an offset `d = n - mu`.
///
/// Evaluated on the upper tail of `|d|` so that the difference never
/// cancels catastrophically for large offsets.
pub fn gaussian_interval(d: f64, sigma: f64) -> f64 {
    let d = d.abs();
    upper_tail((d - 0.5) / sigma) - upper_tail((d + 0.5) / sigma)
}

/// `P(round(Y) = n)` for `Y ~ N(mu, sigma^2)`; `sigma` is clamped to [`SIGMA_MIN`].
/// The second value flags a clamped scale.
pub fn discretized_gaussian_pmf_flagged(n: f64, mu: f64, sigma: f64) -> (f64, bool) {
    let clamped = !(sigma >= SIGMA_MIN);
    let s = if clamped { SIGMA_MIN } else { sigma };
    (gaussian_interval(n - mu, s).max(f64::MIN_POSITIVE), clamped)
}

pub fn discretized_gaussian_pmf(n: f64, mu: f64, sigma: f64) -> f64 {
    discretized_gaussian_pmf_flagged(n, mu, sigma).0
}

/// Differentiable likelihood of (possibly non-integer) values `y` under the
/// rect-convolved Gaussian `N(mu, sigma^2)`, floored at [`LIKELIHOOD_FLOOR`].
/// All three inputs share one shape.
pub fn gaussian_likelihood(g: &Graph, y: &Var, mu: &Var, sigma: &Var) -> Var {
    assert_eq!(y.shape(), mu.shape(), "likelihood: y vs mu shape");
    assert_eq!(y.shape(), sigma.shape(), "likelihood: y vs sigma shape");
    let (yd, md, sd) = (y.value().data(), mu.value().data(), sigma.value().data());
    let n = yd.len();
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        p.push(gaussian_interval(yd[i] - md[i], sd[i]).max(LIKELIHOOD_FLOOR));
    }
    let out = Tensor::new(y.shape(), p);
    if !g.tracks(&[y, mu, sigma]) {
        return g.constant(out);
    }
    let (yv, mv, sv) = (y.shared_value(), mu.shared_value(), sigma.shared_value());
    g.custom(
        &[y, mu, sigma],
        out,
        Box::new(move |grad, needs| {
            let (yd, md, sd, gd) = (yv.data(), mv.data(), sv.data(), grad.data());
            let n = yd.len();
            let mut gy = vec![0.0; n];
            let mut gs = vec![0.0; n];
            for i in 0..n {
                let (d, s) = (yd[i] - md[i], sd[i]);
                if gaussian_interval(d, s) <= LIKELIHOOD_FLOOR {
                    continue;
                }
                let (a, b) = ((d + 0.5) / s, (d - 0.5) / s);
                let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
                gy[i] = gd[i] * (pa - pb) / s;
                gs[i] = -gd[i] * (a * pa - b * pb) / s;
            }
            let shape = yv.shape();
            let gm = needs[1].then(|| Tensor::new(shape, gy.iter().map(|v| -v).collect()));
            vec![
                needs[0].then(|| Tensor::new(shape, gy)),
                gm,
                needs[2].then(|| Tensor::new(shape, gs)),
            ]
        }),
    )
}

/// Total information content `-sum log2 p` of a likelihood tensor, in bits.
pub fn bits_from_likelihoods(g: &Graph, p: &Var) -> Var {
    let ln = g.ln(p);
    let s = g.sum_all(&ln);
    g.scale(&s, -1.0 / std::f64::consts::LN_2)
}
