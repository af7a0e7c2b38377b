//! Convolution layers bound to a parameter store.

use rand::Rng;
use snic_nn::{Bound, Constraint, Graph, ParamId, ParamStore, Tensor, Var};

/// Uniform initialization bound `1/sqrt(fan_in)`.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// A convolution layer (ordinary or transposed) with optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    /// `Some(output_padding)` for a transposed convolution.
    pub transposed: Option<usize>,
}

impl Conv {
    /// `k x k` convolution with "same"-style padding `k / 2` unless `pad` is given.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[cout, cin, k, k], init_bound(cin * k * k), rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), Constraint::None));
        Self { weight, bias, stride, pad, transposed: None }
    }

    /// Transposed convolution whose output is `stride` times larger.
    #[allow(clippy::too_many_arguments)]
    pub fn transposed(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Self {
        let fan_in = (cin * k * k).div_ceil(stride * stride);
        let weight = store.add_uniform(format!("{name}.weight"), &[cin, cout, k, k], init_bound(fan_in), rng);
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), Constraint::None));
        Self { weight, bias, stride, pad, transposed: Some(output_pad) }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let w = p.var(self.weight);
        let b = self.bias.map(|id| p.var(id));
        match self.transposed {
            None => g.conv2d(x, w, b, self.stride, self.pad),
            Some(op) => g.conv_transpose2d(x, w, b, self.stride, self.pad, op),
        }
    }
}

