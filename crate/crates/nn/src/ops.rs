//! Differentiable elementwise, reduction, shape and matrix operations.

use std::rc::Rc;

use crate::gemm::{gemm, MatRef};
use crate::graph::{Graph, Var};
use crate::tensor::{broadcast_shape, numel, strides, Tensor};

fn eff_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    (0..out.len()).map(|d| if src[d] == 1 && out[d] != 1 { 0 } else { s[d] }).collect()
}

fn for_each_offset2(shape: &[usize], ea: &[usize], eb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = shape.len();
    let total = numel(shape);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..total {
        f(i, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += ea[d];
            ob += eb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= ea[d] * idx[d];
            ob -= eb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

impl Graph {
    /// Applies `f` elementwise; `d(x, y)` is dy/dx given input and output.
    pub fn unary(
        &self,
        x: &Var,
        f: impl Fn(f64) -> f64,
        d: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = x.value().map(f);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        let xv = x.shared_value();
        let out = Rc::new(out);
        let yv = out.clone();
        self.custom_shared(
            &[x],
            out,
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(yv.data())
                    .map(|((g, &x), &y)| g * d(x, y))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data))]
            }),
        )
    }

    /// Elementwise binary op with broadcasting over size-1 dims.
    pub fn binary(
        &self,
        a: &Var,
        b: &Var,
        f: impl Fn(f64, f64) -> f64,
        da: impl Fn(f64, f64) -> f64 + 'static,
        db: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let out_shape = broadcast_shape(&sa, &sb);
        let out = if sa == sb {
            a.value().zip_map(b.value(), &f)
        } else {
            let (ea, eb) = (eff_strides(&sa, &out_shape), eff_strides(&sb, &out_shape));
            let (ad, bd) = (a.value().data(), b.value().data());
            let mut data = vec![0.0; numel(&out_shape)];
            for_each_offset2(&out_shape, &ea, &eb, |i, oa, ob| data[i] = f(ad[oa], bd[ob]));
            Tensor::new(&out_shape, data)
        };
        if !self.tracks(&[a, b]) {
            return self.constant(out);
        }
        let (av, bv) = (a.shared_value(), b.shared_value());
        self.custom(
            &[a, b],
            out,
            Box::new(move |g, needs| {
                let shape = g.shape().to_vec();
                let (ea, eb) = (eff_strides(av.shape(), &shape), eff_strides(bv.shape(), &shape));
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                let mut ga = needs[0].then(|| Tensor::zeros(av.shape()));
                let mut gb = needs[1].then(|| Tensor::zeros(bv.shape()));
                for_each_offset2(&shape, &ea, &eb, |i, oa, ob| {
                    let (x, y) = (ad[oa], bd[ob]);
                    if let Some(t) = ga.as_mut() {
                        t.data_mut()[oa] += gd[i] * da(x, y);
                    }
                    if let Some(t) = gb.as_mut() {
                        t.data_mut()[ob] += gd[i] * db(x, y);
                    }
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn add(&self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    pub fn scale(&self, x: &Var, s: f64) -> Var {
        self.unary(x, |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, x: &Var, c: f64) -> Var {
        self.unary(x, |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self, x: &Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn abs(&self, x: &Var) -> Var {
        self.unary(x, f64::abs, |x, _| sign(x))
    }

    pub fn square(&self, x: &Var) -> Var {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn relu(&self, x: &Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, x: &Var, slope: f64) -> Var {
        self.unary(
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self, x: &Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, x: &Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn softplus(&self, x: &Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&self, x: &Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn ln(&self, x: &Var) -> Var {
        self.unary(x, f64::ln, |x, _| 1.0 / x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, x: &Var, lo: f64, hi: f64) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// `max(x, lo)` with zero gradient where the bound is active.
    pub fn lower_bound(&self, x: &Var, lo: f64) -> Var {
        self.unary(x, move |v| v.max(lo), move |x, _| if x > lo { 1.0 } else { 0.0 })
    }

    pub fn sum_all(&self, x: &Var) -> Var {
        let out = Tensor::scalar(x.value().sum());
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        let shape = x.shape().to_vec();
        self.custom(&[x], out, Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]))
    }

    pub fn mean_all(&self, x: &Var) -> Var {
        let n = x.value().numel() as f64;
        let s = self.sum_all(x);
        self.scale(&s, 1.0 / n)
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(&self, x: &Var, axis: usize) -> Var {
        let shape = x.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let xd = x.value().data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..dim {
                let base = (o * dim + k) * inner;
                for i in 0..inner {
                    data[o * inner + i] += xd[base + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let out = Tensor::new(&out_shape, data);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        self.custom(&[x], out, Box::new(move |g, _| vec![Some(g.broadcast_to(&shape))]))
    }

    pub fn mean_axis(&self, x: &Var, axis: usize) -> Var {
        let n = x.shape()[axis] as f64;
        let s = self.sum_axis(x, axis);
        self.scale(&s, 1.0 / n)
    }

    /// Max over `axis`, keeping it with size 1. Ties route the gradient to the first maximum.
    pub fn max_axis(&self, x: &Var, axis: usize) -> Var {
        let shape = x.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let xd = x.value().data();
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..dim {
                let base = (o * dim + k) * inner;
                for i in 0..inner {
                    let v = xd[base + i];
                    if v > data[o * inner + i] {
                        data[o * inner + i] = v;
                        arg[o * inner + i] = base + i;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let out = Tensor::new(&out_shape, data);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&shape);
                for (j, &src) in arg.iter().enumerate() {
                    gx.data_mut()[src] += g.data()[j];
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&self, x: &Var, shape: &[usize]) -> Var {
        let out = x.value().clone().reshape(shape);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        let orig = x.shape().to_vec();
        self.custom(&[x], out, Box::new(move |g, _| vec![Some(g.clone().reshape(&orig))]))
    }

    pub fn permute(&self, x: &Var, perm: &[usize]) -> Var {
        let out = x.value().permute(perm);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.custom(&[x], out, Box::new(move |g, _| vec![Some(g.permute(&inv))]))
    }

    pub fn narrow(&self, x: &Var, axis: usize, start: usize, len: usize) -> Var {
        let out = x.value().narrow(axis, start, len);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        let shape = x.shape().to_vec();
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&shape);
                gx.accumulate_narrow(axis, start, g);
                vec![Some(gx)]
            }),
        )
    }

    pub fn concat(&self, parts: &[&Var], axis: usize) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let out = Tensor::concat(&values, axis);
        if !self.tracks(parts) {
            return self.constant(out);
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        self.custom(
            parts,
            out,
            Box::new(move |g, needs| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(needs)
                    .map(|(&len, &need)| {
                        let part = need.then(|| g.narrow(axis, start, len));
                        start += len;
                        part
                    })
                    .collect()
            }),
        )
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_last(&self, x: &Var) -> Var {
        let shape = x.shape().to_vec();
        let n = *shape.last().expect("softmax of a scalar");
        let mut out = x.value().clone();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        let out = Rc::new(out);
        let y = out.clone();
        self.custom_shared(
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(g.shape());
                for ((gr, yr), outr) in g.data().chunks(n).zip(y.data().chunks(n)).zip(gx.data_mut().chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for k in 0..n {
                        outr[k] = yr[k] * (gr[k] - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Batched matrix product `[G, M, K] x [G, K, N] -> [G, M, N]`.
    pub fn bmm(&self, a: &Var, b: &Var) -> Var {
        let (g, m, k) = dims3(a.shape());
        let (g2, k2, n) = dims3(b.shape());
        assert!(g == g2 && k == k2, "bmm shape mismatch {:?} x {:?}", a.shape(), b.shape());
        let mut out = Tensor::zeros(&[g, m, n]);
        let (ad, bd) = (a.value().data(), b.value().data());
        for (i, o) in out.data_mut().chunks_mut(m * n).enumerate() {
            gemm(
                m,
                k,
                n,
                1.0,
                MatRef::row_major(&ad[i * m * k..], k),
                MatRef::row_major(&bd[i * k * n..], n),
                0.0,
                o,
                n,
            );
        }
        if !self.tracks(&[a, b]) {
            return self.constant(out);
        }
        let (av, bv) = (a.shared_value(), b.shared_value());
        self.custom(
            &[a, b],
            out,
            Box::new(move |gr, needs| {
                let gd = gr.data();
                let ga = needs[0].then(|| {
                    let mut t = Tensor::zeros(&[g, m, k]);
                    for (i, o) in t.data_mut().chunks_mut(m * k).enumerate() {
                        gemm(
                            m,
                            n,
                            k,
                            1.0,
                            MatRef::row_major(&gd[i * m * n..], n),
                            MatRef::transposed(&bv.data()[i * k * n..], n),
                            0.0,
                            o,
                            k,
                        );
                    }
                    t
                });
                let gb = needs[1].then(|| {
                    let mut t = Tensor::zeros(&[g, k, n]);
                    for (i, o) in t.data_mut().chunks_mut(k * n).enumerate() {
                        gemm(
                            k,
                            m,
                            n,
                            1.0,
                            MatRef::transposed(&av.data()[i * m * k..], k),
                            MatRef::row_major(&gd[i * m * n..], n),
                            0.0,
                            o,
                            n,
                        );
                    }
                    t
                });
                vec![ga, gb]
            }),
        )
    }

    /// Replicate-pads the bottom and right of a `[B, C, H, W]` tensor.
    pub fn pad_replicate(&self, x: &Var, bottom: usize, right: usize) -> Var {
        if bottom == 0 && right == 0 {
            return x.clone();
        }
        let (b, c, h, w) = x.dims4();
        let (ho, wo) = (h + bottom, w + right);
        let src = x.value().data();
        let mut data = vec![0.0; b * c * ho * wo];
        for p in 0..b * c {
            for y in 0..ho {
                let sy = y.min(h - 1);
                for xx in 0..wo {
                    data[(p * ho + y) * wo + xx] = src[(p * h + sy) * w + xx.min(w - 1)];
                }
            }
        }
        let out = Tensor::new(&[b, c, ho, wo], data);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&[b, c, h, w]);
                let (gd, gxd) = (g.data(), gx.data_mut());
                for p in 0..b * c {
                    for y in 0..ho {
                        let sy = y.min(h - 1);
                        for xx in 0..wo {
                            gxd[(p * h + sy) * w + xx.min(w - 1)] += gd[(p * ho + y) * wo + xx];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Keeps the top-left `h x w` region of a `[B, C, H, W]` tensor.
    pub fn crop(&self, x: &Var, h: usize, w: usize) -> Var {
        let (_, _, xh, xw) = x.dims4();
        if xh == h && xw == w {
            return x.clone();
        }
        let t = self.narrow(x, 2, 0, h);
        self.narrow(&t, 3, 0, w)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, x: &Var, factor: usize) -> Var {
        let (b, c, h, w) = x.dims4();
        let (ho, wo) = (h * factor, w * factor);
        let src = x.value().data();
        let mut data = vec![0.0; b * c * ho * wo];
        for p in 0..b * c {
            for y in 0..ho {
                for xx in 0..wo {
                    data[(p * ho + y) * wo + xx] = src[(p * h + y / factor) * w + xx / factor];
                }
            }
        }
        let out = Tensor::new(&[b, c, ho, wo], data);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&[b, c, h, w]);
                let (gd, gxd) = (g.data(), gx.data_mut());
                for p in 0..b * c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            gxd[(p * h + y / factor) * w + xx / factor] += gd[(p * ho + y) * wo + xx];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Average over non-overlapping `k x k` windows; H and W must be multiples of `k`.
    pub fn avg_pool(&self, x: &Var, k: usize) -> Var {
        let (b, c, h, w) = x.dims4();
        assert!(h % k == 0 && w % k == 0, "avg_pool: {h}x{w} not divisible by {k}");
        let (ho, wo) = (h / k, w / k);
        let src = x.value().data();
        let norm = 1.0 / (k * k) as f64;
        let mut data = vec![0.0; b * c * ho * wo];
        for p in 0..b * c {
            for y in 0..h {
                for xx in 0..w {
                    data[(p * ho + y / k) * wo + xx / k] += src[(p * h + y) * w + xx] * norm;
                }
            }
        }
        let out = Tensor::new(&[b, c, ho, wo], data);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&[b, c, h, w]);
                let (gd, gxd) = (g.data(), gx.data_mut());
                for p in 0..b * c {
                    for y in 0..h {
                        for xx in 0..w {
                            gxd[(p * h + y) * w + xx] = gd[(p * ho + y / k) * wo + xx / k] * norm;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Max over non-overlapping `k x k` windows; H and W must be multiples of `k`.
    pub fn max_pool(&self, x: &Var, k: usize) -> Var {
        let (b, c, h, w) = x.dims4();
        assert!(h % k == 0 && w % k == 0, "max_pool: {h}x{w} not divisible by {k}");
        let (ho, wo) = (h / k, w / k);
        let src = x.value().data();
        let mut data = vec![f64::NEG_INFINITY; b * c * ho * wo];
        let mut arg = vec![0usize; b * c * ho * wo];
        for p in 0..b * c {
            for y in 0..h {
                for xx in 0..w {
                    let (o, i) = ((p * ho + y / k) * wo + xx / k, (p * h + y) * w + xx);
                    if src[i] > data[o] {
                        data[o] = src[i];
                        arg[o] = i;
                    }
                }
            }
        }
        let out = Tensor::new(&[b, c, ho, wo], data);
        if !self.tracks(&[x]) {
            return self.constant(out);
        }
        self.custom(
            &[x],
            out,
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(&[b, c, h, w]);
                for (o, &i) in arg.iter().enumerate() {
                    gx.data_mut()[i] += g.data()[o];
                }
                vec![Some(gx)]
            }),
        )
    }
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    match s {
        [a, b, c] => (*a, *b, *c),
        _ => panic!("expected rank-3 tensor, got {s:?}"),
    }
}

pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
