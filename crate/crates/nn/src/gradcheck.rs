//! Finite-difference verification of analytic gradients.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of a batch of directional-derivative checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    /// Points where analytic and numerical derivatives were compared.
    pub checked: usize,
    /// Points discarded because the function is not smooth around them.
    pub skipped: usize,
    /// Largest relative discrepancy among checked points.
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

fn eval(f: &dyn Fn(&Graph, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(&g, &vars).item()
}

fn shifted(inputs: &[Tensor], dir: &[Tensor], h: f64) -> Vec<Tensor> {
    inputs.iter().zip(dir).map(|(x, d)| x.zip_map(d, |a, b| a + h * b)).collect()
}

/// Relative disagreement between step sizes `h` and `h/2` above which a
/// point is treated as lying near a kink.
pub const DEFAULT_KINK_TOL: f64 = 1e-3;

/// Compares the analytic derivative of the scalar `f` along a random unit
/// direction with a central difference. Returns `None` when differences at
/// `h` and `h/2` disagree, which indicates a kink near the point.
pub fn directional_check(
    f: &dyn Fn(&Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    h: f64,
    rng: &mut impl Rng,
) -> Option<f64> {
    directional_check_with(f, inputs, h, DEFAULT_KINK_TOL, rng)
}

/// [`directional_check`] with an explicit kink-detection tolerance. The
/// tolerance should sit below the accuracy being verified, so that a kink
/// close enough to bias the difference quotient is discarded, not scored.
pub fn directional_check_with(
    f: &dyn Fn(&Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    h: f64,
    kink_tol: f64,
    rng: &mut impl Rng,
) -> Option<f64> {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(&out);

    let mut dir: Vec<Tensor> = inputs.iter().map(|t| Tensor::from_fn(t.shape(), |_| rng.gen_range(-1.0..1.0))).collect();
    let norm = dir.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| d.scale_assign(1.0 / norm));

    let analytic: f64 = vars.iter().zip(&dir).map(|(v, d)| grads.get_or_zeros(v).dot(d)).sum();
    let fd = |h: f64| (eval(f, &shifted(inputs, &dir, h)) - eval(f, &shifted(inputs, &dir, -h))) / (2.0 * h);
    let (n1, n2) = (fd(h), fd(h / 2.0));
    let scale = n1.abs().max(n2.abs()).max(1e-3);
    if (n1 - n2).abs() > kink_tol * scale {
        return None;
    }
    let denom = analytic.abs().max(n2.abs()).max(1e-6);
    Some((analytic - n2).abs() / denom)
}

/// Runs [`directional_check`] at `points` inputs produced by `sample`.
pub fn check_points(
    f: &dyn Fn(&Graph, &[Var]) -> Var,
    points: usize,
    h: f64,
    rng: &mut impl Rng,
    mut sample: impl FnMut(&mut dyn rand::RngCore) -> Vec<Tensor>,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for _ in 0..points {
        let inputs = sample(rng);
        match directional_check(f, &inputs, h, rng) {
            Some(err) => {
                report.checked += 1;
                report.max_rel_err = report.max_rel_err.max(err);
            }
            None => report.skipped += 1,
        }
    }
    report
}
