//! Finite-difference checks of the normalization, attention, rate and loss
//! terms, shared by the gradient tests and the acceptance suite.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snic_core::attention::{ResidualAttention, Wcbam, Wnlam};
use snic_core::entropy::FactorizedPrior;
use snic_core::gdn::GdnLayer;
use snic_core::objectives::{
    discriminator_loss, generator_distortion, mse, rd_loss, Discriminator, LossWeights, Lpips,
};
use snic_core::quantization::{bits_from_likelihoods, gaussian_likelihood};
use snic_core::{CompressionModel, ModelConfig};
use snic_nn::gradcheck::directional_check_with;
use snic_nn::{Bound, Graph, ParamStore, Tensor, Var};

pub const POINTS: usize = 100;
const MAX_ATTEMPTS: usize = 400;
const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Points where step sizes h and h/2 disagree by more than this are near a
/// kink (ReLU, |x|, max-pooling, probability floors) and are resampled.
const KINK_TOL: f64 = TOLERANCE / 10.0;

type Sampler<'a> = Box<dyn FnMut(&mut dyn RngCore) -> Vec<Tensor> + 'a>;

/// Result of checking one term.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub checked: usize,
    pub attempts: usize,
    pub max_rel_err: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.checked >= POINTS && self.max_rel_err <= TOLERANCE
    }
}

/// Checks `f` at `POINTS` smooth random points (kinks are detected and resampled).
fn check(name: &str, f: &dyn Fn(&Graph, &[Var]) -> Var, mut sample: Sampler) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9ad);
    let (mut checked, mut attempts, mut worst) = (0, 0, 0.0f64);
    while checked < POINTS && attempts < MAX_ATTEMPTS {
        attempts += 1;
        let inputs = sample(&mut rng);
        if let Some(err) = directional_check_with(f, &inputs, STEP, KINK_TOL, &mut rng) {
            checked += 1;
            worst = worst.max(err);
        }
    }
    CheckOutcome { name: name.to_string(), checked, attempts, max_rel_err: worst }
}

fn uniform(rng: &mut dyn RngCore, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Random parameter values around a store's initialization, kept inside
/// each parameter's feasible region.
fn perturbed_params(store: &ParamStore, rng: &mut dyn RngCore) -> Vec<Tensor> {
    store
        .named_tensors()
        .into_iter()
        .map(|(name, t)| {
            if name.ends_with(".beta") {
                uniform(rng, t.shape(), 0.5, 1.5)
            } else if name.ends_with(".gamma") {
                uniform(rng, t.shape(), 0.0, 0.3)
            } else {
                Tensor::from_fn(t.shape(), |i| t.data()[i] + rng.gen_range(-0.1..0.1))
            }
        })
        .collect()
}

/// Reduces an output to a scalar with fixed, non-uniform weights.
fn weighted_sum(g: &Graph, y: &Var) -> Var {
    let w = Tensor::from_fn(y.shape(), |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
    g.sum_all(&g.mul(y, &g.constant(w)))
}

/// Checks a module with respect to its input and every parameter.
fn check_module(
    name: &str,
    store: &ParamStore,
    input: &[usize],
    forward: impl Fn(&Graph, &Bound, &Var) -> Var,
) -> CheckOutcome {
    let n = store.len();
    let f = |g: &Graph, v: &[Var]| {
        let p = Bound::from_vars(v[1..=n].to_vec());
        weighted_sum(g, &forward(g, &p, &v[0]))
    };
    let input = input.to_vec();
    check(
        name,
        &f,
        Box::new(move |rng| {
            let mut v = vec![uniform(rng, &input, -1.5, 1.5)];
            v.extend(perturbed_params(store, rng));
            v
        }),
    )
}

pub fn gdn_and_igdn() -> Vec<CheckOutcome> {
    [false, true]
        .into_iter()
        .map(|inverse| {
            let mut store = ParamStore::new();
            let layer = GdnLayer::new(&mut store, "gdn", 4, inverse);
            let name = if inverse { "IGDN" } else { "GDN" };
            check_module(name, &store, &[2, 4, 3, 3], |g, p, x| layer.forward(g, p, x))
        })
        .collect()
}

pub fn window_non_local_attention() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let m = Wnlam::new(&mut store, &mut rng, "wnlam", 4, 4);
    // 6x6 is not a multiple of the window, so padding and cropping are exercised.
    vec![check_module("WNLAM", &store, &[1, 4, 6, 6], |g, p, x| m.forward(g, p, x))]
}

pub fn window_convolutional_block_attention() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let m = Wcbam::new(&mut store, &mut rng, "wcbam", 4, 4);
    vec![check_module("WCBAM", &store, &[1, 4, 8, 8], |g, p, x| m.forward(g, p, x))]
}

pub fn residual_attention_block() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let m = ResidualAttention::new(&mut store, &mut rng, "rab", 4);
    vec![check_module("residual attention", &store, &[1, 4, 8, 8], |g, p, x| m.forward(g, p, x))]
}

pub fn gaussian_rate_term() -> Vec<CheckOutcome> {
    let shape = [2, 3, 2, 2];
    let f = |g: &Graph, v: &[Var]| bits_from_likelihoods(g, &gaussian_likelihood(g, &v[0], &v[1], &v[2]));
    vec![check(
        "Gaussian rate",
        &f,
        Box::new(move |rng| {
            let mu = uniform(rng, &shape, -2.0, 2.0);
            let y = Tensor::from_fn(&shape, |i| mu.data()[i] + rng.gen_range(-3.0..3.0));
            vec![y, mu, uniform(rng, &shape, 0.2, 3.0)]
        }),
    )]
}

pub fn factorized_prior_rate_term() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let prior = FactorizedPrior::new(&mut store, &mut rng, 3);
    vec![check_module("factorized prior rate", &store, &[2, 3, 2, 2], |g, p, z| {
        bits_from_likelihoods(g, &prior.likelihood(g, p, z))
    })]
}

pub fn full_model_rate_term() -> Vec<CheckOutcome> {
    let model = CompressionModel::new(ModelConfig::tiny(), 5).unwrap();
    let n = model.store.len();
    let f = |g: &Graph, v: &[Var]| {
        let p = Bound::from_vars(v[1..=n].to_vec());
        // A fixed noise draw keeps every evaluation on the same relaxed sample.
        let mut noise = ChaCha8Rng::seed_from_u64(11);
        model.forward_train(g, &p, &v[0], &mut noise).unwrap().bpp
    };
    vec![check(
        "model rate (bpp)",
        &f,
        Box::new(|rng| {
            let mut v = vec![uniform(rng, &[1, 1, 64, 64], 0.0, 255.0)];
            v.extend(perturbed_params(&model.store, rng));
            v
        }),
    )]
}

pub fn reconstruction_and_rate_distortion_terms() -> Vec<CheckOutcome> {
    let shape = [2, 1, 4, 4];
    let f = |g: &Graph, v: &[Var]| mse(g, &v[0], &v[1]);
    let a = check("MSE", &f, Box::new(move |rng| vec![uniform(rng, &shape, 0.0, 255.0), uniform(rng, &shape, 0.0, 255.0)]));
    let f = |g: &Graph, v: &[Var]| rd_loss(g, &v[0], &mse(g, &v[1], &v[2]), 0.0125);
    let b = check(
        "rate-distortion Lagrangian",
        &f,
        Box::new(move |rng| vec![uniform(rng, &[1], 0.0, 2.0), uniform(rng, &shape, 0.0, 255.0), uniform(rng, &shape, 0.0, 255.0)]),
    );
    vec![a, b]
}

pub fn perceptual_term() -> Vec<CheckOutcome> {
    let net = Lpips::random_pyramid();
    let shape = [1, 1, 16, 16];
    let f = |g: &Graph, v: &[Var]| net.distance(g, &v[0], &v[1]);
    vec![check("LPIPS", &f, Box::new(move |rng| vec![uniform(rng, &shape, 0.0, 255.0), uniform(rng, &shape, 0.0, 255.0)]))]
}

pub fn adversarial_terms() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let latent = 3;
    let disc = Discriminator::new(&mut store, &mut rng, latent, 4);
    let n = store.len();
    let (xs, ys) = ([1, 1, 16, 16], [1, latent, 1, 1]);

    // Generator side: full weighted distortion including -log D(x_hat, y).
    // The condition y enters detached, so it is held fixed here.
    let lpips = Lpips::random_pyramid();
    let w = LossWeights { lambda: 0.0125, recon: 1.0, perc: 1.0, adv: 0.5 };
    let y_fixed = uniform(&mut rng, &ys, -2.0, 2.0);
    let f = |g: &Graph, v: &[Var]| {
        let p = Bound::from_vars(v[2..2 + n].to_vec());
        let y = g.constant(y_fixed.clone());
        generator_distortion(g, &v[0], &v[1], &y, Some((&disc, &p)), Some(&lpips), &w).unwrap().total
    };
    let generator = check(
        "generator distortion (MSE + LPIPS + adversarial)",
        &f,
        Box::new(|rng| {
            let mut v = vec![uniform(rng, &xs, 0.0, 255.0), uniform(rng, &xs, 0.0, 255.0)];
            v.extend(perturbed_params(&store, rng));
            v
        }),
    );

    // Discriminator side: the binary cross-entropy on real and fake pairs.
    let f = |g: &Graph, v: &[Var]| {
        let p = Bound::from_vars(v[3..3 + n].to_vec());
        discriminator_loss(g, &disc.forward(g, &p, &v[0], &v[2]), &disc.forward(g, &p, &v[1], &v[2]))
    };
    let discriminator = check(
        "discriminator loss",
        &f,
        Box::new(|rng| {
            let mut v = vec![uniform(rng, &xs, 0.0, 255.0), uniform(rng, &xs, 0.0, 255.0), uniform(rng, &ys, -2.0, 2.0)];
            v.extend(perturbed_params(&store, rng));
            v
        }),
    );

    // The loss itself, directly on probability maps.
    let f = |g: &Graph, v: &[Var]| discriminator_loss(g, &v[0], &v[1]);
    let on_probabilities = check(
        "discriminator loss on probabilities",
        &f,
        Box::new(|rng| vec![uniform(rng, &[1, 1, 2, 2], 0.05, 0.95), uniform(rng, &[1, 1, 2, 2], 0.05, 0.95)]),
    );
    vec![generator, discriminator, on_probabilities]
}

/// Every term of the suite.
pub fn all() -> Vec<CheckOutcome> {
    let groups: [fn() -> Vec<CheckOutcome>; 10] = [
        gdn_and_igdn,
        window_non_local_attention,
        window_convolutional_block_attention,
        residual_attention_block,
        gaussian_rate_term,
        factorized_prior_rate_term,
        full_model_rate_term,
        reconstruction_and_rate_distortion_terms,
        perceptual_term,
        adversarial_terms,
    ];
    groups.iter().flat_map(|g| g()).collect()
}
