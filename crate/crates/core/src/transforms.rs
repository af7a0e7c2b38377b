//! Analysis/synthesis transforms and the hyperprior transforms.

use rand::Rng;
use serde::{Deserialize, Serialize};
use snic_nn::{Bound, Graph, ParamStore, Var};

use crate::attention::ResidualAttention;
use crate::gdn::GdnLayer;
use crate::layers::Conv;

/// Spatial downsampling of the analysis transform.
pub const LATENT_STRIDE: usize = 16;
/// Additional downsampling of the hyperprior.
pub const HYPER_STRIDE: usize = 4;

/// Channel widths of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Internal width of the image transforms.
    pub n: usize,
    /// Latent (bottleneck) channels.
    pub m: usize,
    /// Hyper-latent channels.
    pub cz: usize,
    /// Channels of the hyper-synthesis output fed to the slice predictors.
    pub hyper_out: usize,
    /// Hidden width of each slice-parameter predictor.
    pub pred_hidden: usize,
    /// Number of channel slices of the latent.
    pub num_slices: usize,
    /// Whether residual attention blocks are inserted into the image transforms.
    pub attention: bool,
}

impl ModelConfig {
    /// Full-width configuration (N = 192, M = 320).
    pub fn paper() -> Self {
        Self { n: 192, m: 320, cz: 192, hyper_out: 320, pred_hidden: 192, num_slices: 10, attention: true }
    }

    /// Reduced widths that train in minutes on a CPU.
    pub fn desk() -> Self {
        Self { n: 16, m: 40, cz: 16, hyper_out: 32, pred_hidden: 24, num_slices: 10, attention: true }
    }

    /// Smallest configuration, for fast tests.
    pub fn tiny() -> Self {
        Self { n: 8, m: 20, cz: 8, hyper_out: 8, pred_hidden: 8, num_slices: 10, attention: true }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn slice_width(&self) -> usize {
        self.m / self.num_slices
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.num_slices == 0 || !self.m.is_multiple_of(self.num_slices) {
            return Err(format!("{} latent channels cannot be split into {} slices", self.m, self.num_slices));
        }
        if [self.n, self.m, self.cz, self.hyper_out, self.pred_hidden].contains(&0) {
            return Err("all channel widths must be positive".into());
        }
        Ok(())
    }
}

fn down(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Conv {
    Conv::new(store, rng, name, cin, cout, 5, 2, 2, true)
}

fn up(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Conv {
    Conv::transposed(store, rng, name, cin, cout, 5, 2, 2, 1)
}

/// `g_a`: image levels `[B, 1, H, W]` to latent `[B, M, H/16, W/16]`.
#[derive(Clone, Debug)]
pub struct Analysis {
    convs: Vec<Conv>,
    gdns: Vec<GdnLayer>,
    att_mid: Option<ResidualAttention>,
    att_out: Option<ResidualAttention>,
}

impl Analysis {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let (n, m) = (cfg.n, cfg.m);
        Self {
            convs: vec![
                down(store, rng, "g_a.conv0", 1, n),
                down(store, rng, "g_a.conv1", n, n),
                down(store, rng, "g_a.conv2", n, n),
                down(store, rng, "g_a.conv3", n, m),
            ],
            gdns: (0..3).map(|i| GdnLayer::new(store, &format!("g_a.gdn{i}"), n, false)).collect(),
            att_mid: cfg.attention.then(|| ResidualAttention::new(store, rng, "g_a.att0", n)),
            att_out: cfg.attention.then(|| ResidualAttention::new(store, rng, "g_a.att1", m)),
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Var {
        let mut h = g.scale(x, 1.0 / 255.0);
        for i in 0..3 {
            h = self.gdns[i].forward(g, p, &self.convs[i].forward(g, p, &h));
            if i == 1 {
                if let Some(att) = &self.att_mid {
                    h = att.forward(g, p, &h);
                }
            }
        }
        h = self.convs[3].forward(g, p, &h);
        match &self.att_out {
            Some(att) => att.forward(g, p, &h),
            None => h,
        }
    }
}

/// `g_s`: latent back to image levels, mirroring [`Analysis`] with IGDN.
#[derive(Clone, Debug)]
pub struct Synthesis {
    att_in: Option<ResidualAttention>,
    att_mid: Option<ResidualAttention>,
    deconvs: Vec<Conv>,
    igdns: Vec<GdnLayer>,
}

impl Synthesis {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let (n, m) = (cfg.n, cfg.m);
        let deconvs = vec![
            up(store, rng, "g_s.deconv0", m, n),
            up(store, rng, "g_s.deconv1", n, n),
            up(store, rng, "g_s.deconv2", n, n),
            up(store, rng, "g_s.deconv3", n, 1),
        ];
        // Start the output near mid-gray so early training sees useful gradients.
        if let Some(b) = deconvs[3].bias {
            store.get_mut(b).data_mut().fill(0.5);
        }
        Self {
            att_in: cfg.attention.then(|| ResidualAttention::new(store, rng, "g_s.att0", m)),
            att_mid: cfg.attention.then(|| ResidualAttention::new(store, rng, "g_s.att1", n)),
            deconvs,
            igdns: (0..3).map(|i| GdnLayer::new(store, &format!("g_s.igdn{i}"), n, true)).collect(),
        }
    }

    /// Reconstruction on the level scale before clamping (used by training losses).
    pub fn forward_raw(&self, g: &Graph, p: &Bound, y: &Var) -> Var {
        let mut h = match &self.att_in {
            Some(att) => att.forward(g, p, y),
            None => y.clone(),
        };
        for i in 0..3 {
            h = self.igdns[i].forward(g, p, &self.deconvs[i].forward(g, p, &h));
            if i == 1 {
                if let Some(att) = &self.att_mid {
                    h = att.forward(g, p, &h);
                }
            }
        }
        let out = self.deconvs[3].forward(g, p, &h);
        g.scale(&out, 255.0)
    }

    /// Reconstruction clamped to `[0, 255]`.
    pub fn forward(&self, g: &Graph, p: &Bound, y: &Var) -> Var {
        let raw = self.forward_raw(g, p, y);
        g.clamp(&raw, 0.0, 255.0)
    }
}

/// `h_a`: latent to hyper-latent, 4x smaller.
#[derive(Clone, Debug)]
pub struct HyperAnalysis {
    c0: Conv,
    c1: Conv,
    c2: Conv,
}

impl HyperAnalysis {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        Self {
            c0: Conv::new(store, rng, "h_a.conv0", cfg.m, cfg.n, 3, 1, 1, true),
            c1: down(store, rng, "h_a.conv1", cfg.n, cfg.n),
            c2: down(store, rng, "h_a.conv2", cfg.n, cfg.cz),
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, y: &Var) -> Var {
        let h = g.leaky_relu(&self.c0.forward(g, p, y), 0.01);
        let h = g.leaky_relu(&self.c1.forward(g, p, &h), 0.01);
        self.c2.forward(g, p, &h)
    }
}

/// `h_s`: hyper-latent to features at latent resolution.
#[derive(Clone, Debug)]
pub struct HyperSynthesis {
    d0: Conv,
    d1: Conv,
    c2: Conv,
}

impl HyperSynthesis {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        Self {
            d0: up(store, rng, "h_s.deconv0", cfg.cz, cfg.n),
            d1: up(store, rng, "h_s.deconv1", cfg.n, cfg.n),
            c2: Conv::new(store, rng, "h_s.conv2", cfg.n, cfg.hyper_out, 3, 1, 1, true),
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, z: &Var) -> Var {
        let h = g.leaky_relu(&self.d0.forward(g, p, z), 0.01);
        let h = g.leaky_relu(&self.d1.forward(g, p, &h), 0.01);
        self.c2.forward(g, p, &h)
    }
}
