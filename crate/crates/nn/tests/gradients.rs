//! Finite-difference checks for every differentiable primitive.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snic_nn::gradcheck::check_points;
use snic_nn::{Graph, Tensor, Var};

fn rand_tensor(rng: &mut dyn RngCore, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

/// Reduces an arbitrary output to a scalar with fixed, non-uniform weights.
fn weighted_sum(g: &Graph, y: &Var) -> Var {
    let w = Tensor::from_fn(y.shape(), |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
    let p = g.mul(y, &g.constant(w));
    g.sum_all(&p)
}

fn check(name: &str, shapes: &[&[usize]], f: impl Fn(&Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let f = |g: &Graph, v: &[Var]| {
        let y = f(g, v);
        weighted_sum(g, &y)
    };
    let report = check_points(&f, 25, 1e-5, &mut rng, |r| shapes.iter().map(|s| rand_tensor(r, s)).collect());
    assert!(report.checked >= 20, "{name}: only {} smooth points", report.checked);
    assert!(report.max_rel_err < 1e-5, "{name}: rel err {}", report.max_rel_err);
}

#[test]
fn elementwise() {
    let s: &[&[usize]] = &[&[2, 3, 4]];
    check("abs", s, |g, v| g.abs(&v[0]));
    check("relu", s, |g, v| g.relu(&v[0]));
    check("leaky", s, |g, v| g.leaky_relu(&v[0], 0.2));
    check("sigmoid", s, |g, v| g.sigmoid(&v[0]));
    check("tanh", s, |g, v| g.tanh(&v[0]));
    check("softplus", s, |g, v| g.softplus(&v[0]));
    check("exp", s, |g, v| g.exp(&v[0]));
    check("ln", s, |g, v| g.ln(&g.add_scalar(&g.square(&v[0]), 0.5)));
    check("clamp", s, |g, v| g.clamp(&v[0], -0.5, 0.7));
    check("lower_bound", s, |g, v| g.lower_bound(&v[0], 0.1));
}

#[test]
fn broadcast_binary() {
    let s: &[&[usize]] = &[&[2, 3, 4], &[2, 1, 4]];
    check("add", s, |g, v| g.add(&v[0], &v[1]));
    check("sub", s, |g, v| g.sub(&v[1], &v[0]));
    check("mul", s, |g, v| g.mul(&v[0], &v[1]));
    check("div", s, |g, v| g.div(&v[0], &g.add_scalar(&g.square(&v[1]), 0.3)));
}

#[test]
fn reductions_and_shapes() {
    let s: &[&[usize]] = &[&[2, 3, 4, 4]];
    check("mean_axis", s, |g, v| g.mean_axis(&v[0], 1));
    check("max_axis", s, |g, v| g.max_axis(&v[0], 1));
    check("mean_all", s, |g, v| g.mean_all(&v[0]));
    check("permute", s, |g, v| g.permute(&v[0], &[0, 2, 3, 1]));
    check("narrow", s, |g, v| g.narrow(&v[0], 1, 1, 2));
    check("concat", s, |g, v| g.concat(&[&v[0], &g.square(&v[0])], 1));
    check("pad", s, |g, v| g.pad_replicate(&v[0], 3, 2));
    check("upsample", s, |g, v| g.upsample_nearest(&v[0], 2));
    check("avg_pool", s, |g, v| g.avg_pool(&v[0], 2));
    check("max_pool", s, |g, v| g.max_pool(&v[0], 2));
    check("softmax", s, |g, v| g.softmax_last(&v[0]));
}

#[test]
fn matrix_products() {
    check("bmm", &[&[2, 3, 5], &[2, 5, 4]], |g, v| g.bmm(&v[0], &v[1]));
}

#[test]
fn convolutions() {
    check("conv3", &[&[2, 3, 6, 5], &[4, 3, 3, 3], &[4]], |g, v| g.conv2d(&v[0], &v[1], Some(&v[2]), 1, 1));
    check("conv5s2", &[&[1, 2, 8, 8], &[3, 2, 5, 5], &[3]], |g, v| g.conv2d(&v[0], &v[1], Some(&v[2]), 2, 2));
    check("deconv", &[&[1, 3, 4, 5], &[3, 2, 5, 5], &[2]], |g, v| {
        g.conv_transpose2d(&v[0], &v[1], Some(&v[2]), 2, 2, 1)
    });
}
