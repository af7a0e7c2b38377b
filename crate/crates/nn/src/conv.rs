//! 2-D convolution and transposed convolution via banded im2col + GEMM.
//!
//! Columns are materialized for a band of rows at a time so that very large
//! images (thousands of pixels on a side) never need the full column matrix.

use crate::gemm::{gemm, MatRef};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Upper bound on the number of `f64` entries in one column buffer.
const COL_BUDGET: usize = 1 << 22;

/// Maps a small grid (`hs x ws`) onto a large image (`hb x wb`): entry
/// `(c, ky, kx), (oy, ox)` reads `big[c, oy*s - p + ky, ox*s - p + kx]`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    hb: usize,
    wb: usize,
    k: usize,
    s: usize,
    p: usize,
    hs: usize,
    ws: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn band(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.ws).max(1)).clamp(1, self.hs.max(1))
    }

    fn bands(&self) -> impl Iterator<Item = (usize, usize)> {
        let (step, hs) = (self.band(), self.hs);
        (0..hs).step_by(step).map(move |y0| (y0, (y0 + step).min(hs)))
    }

    /// Source index in `big` for kernel tap `(ky, kx)` at grid point `(oy, ox)`.
    #[inline]
    fn tap(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.s + ky) as isize - self.p as isize;
        (iy >= 0 && (iy as usize) < self.hb).then_some(iy as usize)
    }

    #[inline]
    fn tap_x(&self, ox: usize, kx: usize) -> Option<usize> {
        let ix = (ox * self.s + kx) as isize - self.p as isize;
        (ix >= 0 && (ix as usize) < self.wb).then_some(ix as usize)
    }

    fn im2col(&self, big: &[f64], y0: usize, y1: usize, col: &mut [f64]) {
        let n = (y1 - y0) * self.ws;
        let k = self.k;
        for c in 0..self.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for oy in y0..y1 {
                        let d = &mut dst[(oy - y0) * self.ws..(oy - y0 + 1) * self.ws];
                        let Some(iy) = self.tap(oy, ky) else {
                            d.fill(0.0);
                            continue;
                        };
                        let src = &big[(c * self.hb + iy) * self.wb..(c * self.hb + iy + 1) * self.wb];
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = self.tap_x(ox, kx).map_or(0.0, |ix| src[ix]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], y0: usize, y1: usize, big: &mut [f64]) {
        let n = (y1 - y0) * self.ws;
        let k = self.k;
        for c in 0..self.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * n..(row + 1) * n];
                    for oy in y0..y1 {
                        let Some(iy) = self.tap(oy, ky) else { continue };
                        let s = &src[(oy - y0) * self.ws..(oy - y0 + 1) * self.ws];
                        let base = (c * self.hb + iy) * self.wb;
                        for (ox, v) in s.iter().enumerate() {
                            if let Some(ix) = self.tap_x(ox, kx) {
                                big[base + ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad(g: &Tensor) -> Tensor {
    let (_, c, h, w) = g.dims4();
    let mut gb = vec![0.0; c];
    for (i, chunk) in g.data().chunks(h * w).enumerate() {
        gb[i % c] += chunk.iter().sum::<f64>();
    }
    Tensor::new(&[c], gb)
}

impl Graph {
    /// Cross-correlation with zero padding. `w` is `[C_out, C_in, k, k]`,
    /// `bias` is `[C_out]`.
    pub fn conv2d(&self, x: &Var, w: &Var, bias: Option<&Var>, stride: usize, pad: usize) -> Var {
        let (b, cin, h, wd) = x.dims4();
        let (cout, cin2, k, k2) = w.dims4();
        assert!(cin == cin2 && k == k2, "conv2d: input {:?} vs weight {:?}", x.shape(), w.shape());
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: input smaller than kernel");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geom = Geom { c: cin, hb: h, wb: wd, k, s: stride, p: pad, hs: ho, ws: wo };
        let kk = geom.rows();
        let (in_plane, out_plane) = (cin * h * wd, cout * ho * wo);

        let mut out = vec![0.0; b * out_plane];
        let (xd, wdat) = (x.value().data(), w.value().data());
        let mut col = vec![0.0; kk * geom.band() * wo];
        for bi in 0..b {
            let xb = &xd[bi * in_plane..(bi + 1) * in_plane];
            let ob = &mut out[bi * out_plane..(bi + 1) * out_plane];
            for (y0, y1) in geom.bands() {
                let n = (y1 - y0) * wo;
                geom.im2col(xb, y0, y1, &mut col);
                gemm(
                    cout,
                    kk,
                    n,
                    1.0,
                    MatRef::row_major(wdat, kk),
                    MatRef::row_major(&col, n),
                    0.0,
                    &mut ob[y0 * wo..],
                    ho * wo,
                );
            }
        }
        if let Some(bv) = bias {
            add_bias(&mut out, bv.value().data(), ho * wo);
        }
        let out = Tensor::new(&[b, cout, ho, wo], out);

        let mut inputs = vec![x, w];
        inputs.extend(bias);
        if !self.tracks(&inputs) {
            return self.constant(out);
        }
        let (xv, wv) = (x.shared_value(), w.shared_value());
        let has_bias = bias.is_some();
        self.custom(
            &inputs,
            out,
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut gx = needs[0].then(|| Tensor::zeros(xv.shape()));
                let mut gw = needs[1].then(|| Tensor::zeros(wv.shape()));
                let mut col = vec![0.0; kk * geom.band() * wo];
                for bi in 0..b {
                    let gb = &gd[bi * out_plane..(bi + 1) * out_plane];
                    for (y0, y1) in geom.bands() {
                        let n = (y1 - y0) * wo;
                        let gband = MatRef::row_major(&gb[y0 * wo..], ho * wo);
                        if let Some(gw) = gw.as_mut() {
                            geom.im2col(&xv.data()[bi * in_plane..(bi + 1) * in_plane], y0, y1, &mut col);
                            gemm(cout, n, kk, 1.0, gband, MatRef::transposed(&col, n), 1.0, gw.data_mut(), kk);
                        }
                        if let Some(gx) = gx.as_mut() {
                            gemm(kk, cout, n, 1.0, MatRef::transposed(wv.data(), kk), gband, 0.0, &mut col, n);
                            geom.col2im(&col, y0, y1, &mut gx.data_mut()[bi * in_plane..(bi + 1) * in_plane]);
                        }
                    }
                }
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(needs[2].then(|| bias_grad(g)));
                }
                grads
            }),
        )
    }

    /// Transposed convolution (the adjoint of [`Graph::conv2d`] in `x`).
    /// `w` is `[C_in, C_out, k, k]`; the output is
    /// `(H - 1) * stride - 2 * pad + k + output_pad` high.
    pub fn conv_transpose2d(
        &self,
        x: &Var,
        w: &Var,
        bias: Option<&Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Var {
        let (b, cin, h, wd) = x.dims4();
        let (cin2, cout, k, k2) = w.dims4();
        assert!(cin == cin2 && k == k2, "conv_transpose2d: input {:?} vs weight {:?}", x.shape(), w.shape());
        assert!(output_pad < stride.max(1), "output padding must be smaller than the stride");
        let ho = (h - 1) * stride + k + output_pad - 2 * pad;
        let wo = (wd - 1) * stride + k + output_pad - 2 * pad;
        let geom = Geom { c: cout, hb: ho, wb: wo, k, s: stride, p: pad, hs: h, ws: wd };
        let kk = geom.rows();
        let (in_plane, out_plane) = (cin * h * wd, cout * ho * wo);

        let mut out = vec![0.0; b * out_plane];
        let (xd, wdat) = (x.value().data(), w.value().data());
        let mut col = vec![0.0; kk * geom.band() * wd];
        for bi in 0..b {
            let xb = &xd[bi * in_plane..(bi + 1) * in_plane];
            for (y0, y1) in geom.bands() {
                let n = (y1 - y0) * wd;
                gemm(
                    kk,
                    cin,
                    n,
                    1.0,
                    MatRef::transposed(wdat, kk),
                    MatRef::row_major(&xb[y0 * wd..], h * wd),
                    0.0,
                    &mut col,
                    n,
                );
                geom.col2im(&col, y0, y1, &mut out[bi * out_plane..(bi + 1) * out_plane]);
            }
        }
        if let Some(bv) = bias {
            add_bias(&mut out, bv.value().data(), ho * wo);
        }
        let out = Tensor::new(&[b, cout, ho, wo], out);

        let mut inputs = vec![x, w];
        inputs.extend(bias);
        if !self.tracks(&inputs) {
            return self.constant(out);
        }
        let (xv, wv) = (x.shared_value(), w.shared_value());
        let has_bias = bias.is_some();
        self.custom(
            &inputs,
            out,
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut gx = needs[0].then(|| Tensor::zeros(xv.shape()));
                let mut gw = needs[1].then(|| Tensor::zeros(wv.shape()));
                let mut col = vec![0.0; kk * geom.band() * wd];
                for bi in 0..b {
                    let gb = &gd[bi * out_plane..(bi + 1) * out_plane];
                    for (y0, y1) in geom.bands() {
                        let n = (y1 - y0) * wd;
                        geom.im2col(gb, y0, y1, &mut col);
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx.data_mut()[bi * in_plane..(bi + 1) * in_plane];
                            gemm(
                                cin,
                                kk,
                                n,
                                1.0,
                                MatRef::row_major(wv.data(), kk),
                                MatRef::row_major(&col, n),
                                0.0,
                                &mut dst[y0 * wd..],
                                h * wd,
                            );
                        }
                        if let Some(gw) = gw.as_mut() {
                            let xb = &xv.data()[bi * in_plane..(bi + 1) * in_plane];
                            gemm(
                                cin,
                                n,
                                kk,
                                1.0,
                                MatRef::row_major(&xb[y0 * wd..], h * wd),
                                MatRef::transposed(&col, n),
                                1.0,
                                gw.data_mut(),
                                kk,
                            );
                        }
                    }
                }
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(needs[2].then(|| bias_grad(g)));
                }
                grads
            }),
        )
    }
}
