//! Generalized divisive normalization with absolute values and unit exponent:
//! `gdn(x)_i = x_i / (beta_i + sum_j gamma_ij |x_j|)` and its inverse
//! `igdn(x)_i = x_i * (beta_i + sum_j gamma_ij |x_j|)`.

use snic_nn::gemm::{gemm, MatRef};
use snic_nn::ops::sign;
use snic_nn::{Bound, Constraint, Graph, ParamId, ParamStore, Tensor, Var};

/// Lower bound kept on `beta` so the denominator never vanishes.
pub const BETA_MIN: f64 = 1e-6;

/// `beta_i + sum_j gamma_ij |x_j|` for every batch item and position.
fn denominators(x: &Tensor, beta: &[f64], gamma: &[f64]) -> Tensor {
    let (b, c, h, w) = x.dims4();
    let hw = h * w;
    let absx: Vec<f64> = x.data().iter().map(|v| v.abs()).collect();
    let mut d = vec![0.0; b * c * hw];
    for bi in 0..b {
        let out = &mut d[bi * c * hw..(bi + 1) * c * hw];
        for (i, row) in out.chunks_mut(hw).enumerate() {
            row.fill(beta[i]);
        }
        gemm(
            c,
            c,
            hw,
            1.0,
            MatRef::row_major(gamma, c),
            MatRef::row_major(&absx[bi * c * hw..], hw),
            1.0,
            out,
            hw,
        );
    }
    Tensor::new(x.shape(), d)
}

/// Applies GDN (`inverse = false`) or IGDN (`inverse = true`).
/// `beta` is `[C]`, `gamma` is `[C, C]`.
pub fn gdn(g: &Graph, x: &Var, beta: &Var, gamma: &Var, inverse: bool) -> Var {
    let (b, c, h, w) = x.dims4();
    assert_eq!(beta.shape(), &[c], "gdn beta shape");
    assert_eq!(gamma.shape(), &[c, c], "gdn gamma shape");
    let denom = denominators(x.value(), beta.value().data(), gamma.value().data());
    let out = if inverse {
        x.value().zip_map(&denom, |x, d| x * d)
    } else {
        x.value().zip_map(&denom, |x, d| x / d)
    };
    if !g.tracks(&[x, beta, gamma]) {
        return g.constant(out);
    }
    let (xv, gv) = (x.shared_value(), gamma.shared_value());
    let hw = h * w;
    g.custom(
        &[x, beta, gamma],
        out,
        Box::new(move |grad, needs| {
            let (xd, dd, gd) = (xv.data(), denom.data(), grad.data());
            // u_i = dL/dD_i: -g x / D^2 for GDN, g x for IGDN.
            let u: Vec<f64> = (0..xd.len())
                .map(|k| if inverse { gd[k] * xd[k] } else { -gd[k] * xd[k] / (dd[k] * dd[k]) })
                .collect();
            let absx: Vec<f64> = xd.iter().map(|v| v.abs()).collect();
            let mut gx = needs[0].then(|| Tensor::zeros(&[b, c, h, w]));
            let mut gbeta = needs[1].then(|| Tensor::zeros(&[c]));
            let mut ggamma = needs[2].then(|| Tensor::zeros(&[c, c]));
            let mut gt_u = vec![0.0; c * hw];
            for bi in 0..b {
                let base = bi * c * hw;
                let ub = &u[base..base + c * hw];
                if let Some(gx) = gx.as_mut() {
                    // (gamma^T u)_k, then the direct term.
                    gemm(c, c, hw, 1.0, MatRef::transposed(gv.data(), c), MatRef::row_major(ub, hw), 0.0, &mut gt_u, hw);
                    let gxd = &mut gx.data_mut()[base..base + c * hw];
                    for k in 0..c * hw {
                        let direct = if inverse { gd[base + k] * dd[base + k] } else { gd[base + k] / dd[base + k] };
                        gxd[k] = direct + sign(xd[base + k]) * gt_u[k];
                    }
                }
                if let Some(gb) = gbeta.as_mut() {
                    for (i, row) in ub.chunks(hw).enumerate() {
                        gb.data_mut()[i] += row.iter().sum::<f64>();
                    }
                }
                if let Some(gg) = ggamma.as_mut() {
                    gemm(
                        c,
                        hw,
                        c,
                        1.0,
                        MatRef::row_major(ub, hw),
                        MatRef::transposed(&absx[base..], hw),
                        1.0,
                        gg.data_mut(),
                        c,
                    );
                }
            }
            vec![gx, gbeta, ggamma]
        }),
    )
}

/// A GDN or IGDN layer with `beta = 1`, `gamma = 0.1 I` at initialization.
#[derive(Clone, Debug)]
pub struct GdnLayer {
    pub beta: ParamId,
    pub gamma: ParamId,
    pub inverse: bool,
}

impl GdnLayer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, inverse: bool) -> Self {
        let beta = store.add(format!("{name}.beta"), Tensor::ones(&[channels]), Constraint::LowerBound(BETA_MIN));
        let gamma = Tensor::from_fn(&[channels, channels], |i| if i / channels == i % channels { 0.1 } else { 0.0 });
        let gamma = store.add(format!("{name}.gamma"), gamma, Constraint::LowerBound(0.0));
        Self { beta, gamma, inverse }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        gdn(g, x, p.var(self.beta), p.var(self.gamma), self.inverse)
    }
}
