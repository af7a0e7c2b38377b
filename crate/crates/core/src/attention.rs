//! Window-based non-local attention, window-based convolutional block
//! attention, and the trunk/mask residual attention block combining them.

use rand::Rng;
use snic_nn::{Bound, Graph, ParamStore, Var};

use crate::layers::Conv;

/// Window side length on feature grids.
pub const WINDOW: usize = 8;
/// Channel-attention reduction ratio.
pub const REDUCTION: usize = 16;
/// Kernel size of the spatial-attention convolution.
pub const SPATIAL_KERNEL: usize = 7;

/// Splits `[B, C, H, W]` (H, W multiples of `w`) into `[B * nH * nW, w * w, C]`.
pub fn partition_windows(g: &Graph, x: &Var, w: usize) -> Var {
    let (b, c, h, wd) = x.dims4();
    let (nh, nw) = (h / w, wd / w);
    let t = g.reshape(x, &[b, c, nh, w, nw, w]);
    let t = g.permute(&t, &[0, 2, 4, 3, 5, 1]);
    g.reshape(&t, &[b * nh * nw, w * w, c])
}

/// Inverse of [`partition_windows`].
pub fn merge_windows(g: &Graph, x: &Var, b: usize, h: usize, wd: usize, w: usize) -> Var {
    let c = x.shape()[2];
    let (nh, nw) = (h / w, wd / w);
    let t = g.reshape(x, &[b, nh, nw, w, w, c]);
    let t = g.permute(&t, &[0, 5, 1, 3, 2, 4]);
    g.reshape(&t, &[b, c, h, wd])
}

fn pad_to_window(g: &Graph, x: &Var, w: usize) -> Var {
    let (_, _, h, wd) = x.dims4();
    g.pad_replicate(x, h.div_ceil(w) * w - h, wd.div_ceil(w) * w - wd)
}

/// Scaled-free dot-product attention inside each window:
/// `q_i = sum_j softmax_j(theta_i . phi_j) g_j`. Inputs are `[G, L, C']`.
/// Returns `(q, attention weights [G, L, L])`.
pub fn window_attention(g: &Graph, theta: &Var, phi: &Var, gv: &Var) -> (Var, Var) {
    let phi_t = g.permute(phi, &[0, 2, 1]);
    let scores = g.bmm(theta, &phi_t);
    let weights = g.softmax_last(&scores);
    (g.bmm(&weights, gv), weights)
}

/// Window-based non-local attention: `r_i = W_r q_i + p_i`.
#[derive(Clone, Debug)]
pub struct Wnlam {
    pub theta: Conv,
    pub phi: Conv,
    pub g: Conv,
    pub out: Conv,
    pub window: usize,
}

impl Wnlam {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, window: usize) -> Self {
        let inner = (channels / 2).max(1);
        Self {
            theta: Conv::new(store, rng, &format!("{name}.theta"), channels, inner, 1, 1, 0, false),
            phi: Conv::new(store, rng, &format!("{name}.phi"), channels, inner, 1, 1, 0, false),
            g: Conv::new(store, rng, &format!("{name}.g"), channels, inner, 1, 1, 0, false),
            out: Conv::new(store, rng, &format!("{name}.out"), inner, channels, 1, 1, 0, false),
            window,
        }
    }

    /// The attended features `q` (before the output projection), cropped to the input size.
    pub fn attend(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let (b, _, h, wd) = x.dims4();
        let xp = pad_to_window(g, x, self.window);
        let (_, _, hp, wp) = xp.dims4();
        let th = partition_windows(g, &self.theta.forward(g, p, &xp), self.window);
        let ph = partition_windows(g, &self.phi.forward(g, p, &xp), self.window);
        let gv = partition_windows(g, &self.g.forward(g, p, &xp), self.window);
        let (q, _) = window_attention(g, &th, &ph, &gv);
        let q = merge_windows(g, &q, b, hp, wp, self.window);
        g.crop(&q, h, wd)
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let q = self.attend(g, p, x);
        let r = self.out.forward(g, p, &q);
        g.add(&r, x)
    }
}

/// Window-based convolutional block attention: per-window channel gates
/// followed by a global spatial gate.
#[derive(Clone, Debug)]
pub struct Wcbam {
    pub fc1: Conv,
    pub fc2: Conv,
    pub spatial: Conv,
    pub window: usize,
}

impl Wcbam {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, window: usize) -> Self {
        let hidden = (channels / REDUCTION).max(1);
        let k = SPATIAL_KERNEL;
        Self {
            fc1: Conv::new(store, rng, &format!("{name}.fc1"), channels, hidden, 1, 1, 0, true),
            fc2: Conv::new(store, rng, &format!("{name}.fc2"), hidden, channels, 1, 1, 0, true),
            spatial: Conv::new(store, rng, &format!("{name}.spatial"), 2, 1, k, 1, k / 2, true),
            window,
        }
    }

    fn shared_mlp(&self, g: &Graph, p: &Bound, v: &Var) -> Var {
        let h = g.relu(&self.fc1.forward(g, p, v));
        self.fc2.forward(g, p, &h)
    }

    /// Channel gates, one per window, upsampled to the input grid: `[B, C, H, W]`.
    pub fn channel_gate(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let (_, _, h, wd) = x.dims4();
        let xp = pad_to_window(g, x, self.window);
        let avg = self.shared_mlp(g, p, &g.avg_pool(&xp, self.window));
        let max = self.shared_mlp(g, p, &g.max_pool(&xp, self.window));
        let gate = g.sigmoid(&g.add(&avg, &max));
        g.crop(&g.upsample_nearest(&gate, self.window), h, wd)
    }

    /// Spatial gate `[B, 1, H, W]` from channel-pooled statistics.
    pub fn spatial_gate(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let pooled = g.concat(&[&g.mean_axis(x, 1), &g.max_axis(x, 1)], 1);
        g.sigmoid(&self.spatial.forward(g, p, &pooled))
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let xca = g.mul(x, &self.channel_gate(g, p, x));
        let sa = self.spatial_gate(g, p, &xca);
        g.mul(&xca, &sa)
    }
}

/// Bottleneck residual block: `x + conv1x1(relu(conv3x3(relu(conv1x1(x)))))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub reduce: Conv,
    pub mid: Conv,
    pub expand: Conv,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        let inner = (channels / 2).max(1);
        Self {
            reduce: Conv::new(store, rng, &format!("{name}.reduce"), channels, inner, 1, 1, 0, true),
            mid: Conv::new(store, rng, &format!("{name}.mid"), inner, inner, 3, 1, 1, true),
            expand: Conv::new(store, rng, &format!("{name}.expand"), inner, channels, 1, 1, 0, true),
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let h = g.relu(&self.reduce.forward(g, p, x));
        let h = g.relu(&self.mid.forward(g, p, &h));
        g.add(x, &self.expand.forward(g, p, &h))
    }
}

/// `x + trunk * sigmoid(mask_logits)`.
pub fn attention_gate(g: &Graph, x: &Var, trunk: &Var, mask_logits: &Var) -> Var {
    assert_eq!(trunk.shape(), mask_logits.shape(), "trunk and mask shapes differ");
    let gated = g.mul(trunk, &g.sigmoid(mask_logits));
    g.add(x, &gated)
}

/// Residual attention block with a two-block trunk and a mask branch of two
/// residual blocks, WNLAM, WCBAM and a 1x1 convolution.
#[derive(Clone, Debug)]
pub struct ResidualAttention {
    pub trunk: Vec<ResBlock>,
    pub mask: Vec<ResBlock>,
    pub wnlam: Wnlam,
    pub wcbam: Wcbam,
    pub mask_out: Conv,
}

impl ResidualAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        Self {
            trunk: (0..2).map(|i| ResBlock::new(store, rng, &format!("{name}.trunk{i}"), channels)).collect(),
            mask: (0..2).map(|i| ResBlock::new(store, rng, &format!("{name}.mask{i}"), channels)).collect(),
            wnlam: Wnlam::new(store, rng, &format!("{name}.wnlam"), channels, WINDOW),
            wcbam: Wcbam::new(store, rng, &format!("{name}.wcbam"), channels, WINDOW),
            mask_out: Conv::new(store, rng, &format!("{name}.mask_out"), channels, channels, 1, 1, 0, true),
        }
    }

    pub fn trunk_forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        self.trunk.iter().fold(x.clone(), |h, rb| rb.forward(g, p, &h))
    }

    pub fn mask_forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let h = self.mask.iter().fold(x.clone(), |h, rb| rb.forward(g, p, &h));
        let h = self.wnlam.forward(g, p, &h);
        let h = self.wcbam.forward(g, p, &h);
        self.mask_out.forward(g, p, &h)
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let t = self.trunk_forward(g, p, x);
        let m = self.mask_forward(g, p, x);
        attention_gate(g, x, &t, &m)
    }
}
