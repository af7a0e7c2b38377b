//! Quality metrics, rate–distortion sweeps with CSV/SVG output, latency
//! measurement and external-codec baselines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use plotters::prelude::*;
use snic_nn::{Graph, Tensor};

use crate::codec::{self, Bitstream};
use crate::data::{load_gray, pad_to_multiple, save_gray, ImageTensor, PAD_MULTIPLE};
use crate::error::{input_err, Result, SnicError};
use crate::model::CompressionModel;
use crate::objectives::Lpips;
use crate::segmentation::ImpactRow;

/// Standard MS-SSIM scale weights, finest first.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn check_pair(x: &ImageTensor, y: &ImageTensor) -> Result<()> {
    if x.height != y.height || x.width != y.width {
        return input_err(format!("image sizes differ: {}x{} vs {}x{}", x.height, x.width, y.height, y.width));
    }
    Ok(())
}

pub fn mse(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.data.len() as f64)
}

/// `10 log10(255^2 / MSE)`; `+inf` for identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

/// `-10 log10(1 - m)`; `+inf` when `m >= 1`.
pub fn msssim_log_from(m: f64) -> f64 {
    if m >= 1.0 {
        f64::INFINITY
    } else {
        -10.0 * (1.0 - m).log10()
    }
}

/// MS-SSIM value with the number of scales actually used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    pub scales: usize,
    /// True when the image was too small for all five scales.
    pub reduced: bool,
}

/// A plain single-channel float plane.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn of(t: &ImageTensor) -> Self {
        Self { h: t.height, w: t.width, v: t.data.clone() }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { h: self.h, w: self.w, v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// 2x2 average downsampling; odd trailing rows/columns average what exists.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for rr in 2 * r..(2 * r + 2).min(self.h) {
                    for cc in 2 * c..(2 * c + 2).min(self.w) {
                        s += self.v[rr * self.w + cc];
                        n += 1.0;
                    }
                }
                v.push(s / n);
            }
        }
        Plane { h, w, v }
    }

    /// Separable "valid" filtering with a normalized Gaussian window.
    fn gaussian_filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (h, w) = (self.h, self.w);
        let ow = w + 1 - n;
        let mut tmp = vec![0.0; h * ow];
        for r in 0..h {
            for c in 0..ow {
                tmp[r * ow + c] = (0..n).map(|i| k[i] * self.v[r * w + c + i]).sum();
            }
        }
        let oh = h + 1 - n;
        let mut v = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                v[r * ow + c] = (0..n).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
            }
        }
        Plane { h: oh, w: ow, v }
    }
}

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(x: &Plane, y: &Plane, k: &[f64]) -> (f64, f64) {
    let (c1, c2) = ((K1 * PEAK).powi(2), (K2 * PEAK).powi(2));
    let mx = x.gaussian_filter(k);
    let my = y.gaussian_filter(k);
    let sxx = x.zip(x, |a, b| a * b).gaussian_filter(k);
    let syy = y.zip(y, |a, b| a * b).gaussian_filter(k);
    let sxy = x.zip(y, |a, b| a * b).gaussian_filter(k);
    let n = mx.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (a, b) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - a * a;
        let vy = syy.v[i] - b * b;
        let cov = sxy.v[i] - a * b;
        let csi = (2.0 * cov + c2) / (vx + vy + c2);
        cs += csi;
        ssim += csi * (2.0 * a * b + c1) / (a * a + b * b + c1);
    }
    (ssim / n, cs / n)
}

/// Multi-scale SSIM with an 11x11 Gaussian window (sigma 1.5). Images too
/// small for five scales use as many as fit, with renormalized weights.
pub fn ms_ssim(x: &ImageTensor, y: &ImageTensor) -> Result<MsSsim> {
    check_pair(x, y)?;
    let fits = |mut s: usize, scales: usize| {
        for _ in 1..scales {
            s = s.div_ceil(2);
        }
        s >= WINDOW
    };
    let side = x.height.min(x.width);
    let scales = (1..=MSSSIM_WEIGHTS.len()).rev().find(|&s| fits(side, s)).unwrap_or(0);
    if scales == 0 {
        return input_err(format!("images of side {side} are smaller than the {WINDOW}x{WINDOW} window"));
    }
    let weights = &MSSSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let k = gaussian_window();
    let (mut px, mut py) = (Plane::of(x), Plane::of(y));
    let mut value = 1.0;
    for (j, &w) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&px, &py, &k);
        let term = if j + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(w / total);
        if j + 1 < scales {
            px = px.downsample();
            py = py.downsample();
        }
    }
    Ok(MsSsim { value, scales, reduced: scales < MSSSIM_WEIGHTS.len() })
}

/// MS-SSIM on the logarithmic scale, `-10 log10(1 - m)`.
pub fn msssim_log(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    Ok(msssim_log_from(ms_ssim(x, y)?.value))
}

/// LPIPS-style distance between two level images.
pub fn lpips(net: &Lpips, x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    check_pair(x, y)?;
    let g = Graph::inference();
    let to = |t: &ImageTensor| g.constant(Tensor::new(&[1, 1, t.height, t.width], t.data.clone()));
    Ok(net.distance(&g, &to(x), &to(y)).item())
}

/// One operating point of a codec, averaged over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct RdPoint {
    /// Codec family, e.g. `snic` or `jpeg`.
    pub codec: String,
    /// Tradeoff `lambda` or quality setting.
    pub param: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim_log: f64,
    pub lpips: f64,
    pub images: usize,
}

pub const RD_HEADER: &str = "codec,param,bpp,psnr,msssim_log,lpips,images";

/// Formats a metric for CSV; infinities become `inf`.
pub fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl RdPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.codec,
            self.param,
            fmt_metric(self.bpp),
            fmt_metric(self.psnr),
            fmt_metric(self.msssim_log),
            fmt_metric(self.lpips),
            self.images
        )
    }
}

pub fn write_rd_csv(path: &Path, points: &[RdPoint]) -> Result<()> {
    let mut s = String::from(RD_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{}", p.csv_row());
    }
    fs::write(path, s)?;
    Ok(())
}

/// Parses a CSV written by [`write_rd_csv`].
pub fn read_rd_csv(path: &Path) -> Result<Vec<RdPoint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RD_HEADER) {
        return input_err(format!("{} is not an RD table", path.display()));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| SnicError::Input(format!("bad number '{s}' in {}", path.display())))
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return input_err(format!("bad RD row '{l}'"));
            }
            Ok(RdPoint {
                codec: f[0].to_string(),
                param: num(f[1])?,
                bpp: num(f[2])?,
                psnr: num(f[3])?,
                msssim_log: num(f[4])?,
                lpips: num(f[5])?,
                images: f[6].parse().map_err(|_| SnicError::Input(format!("bad count in '{l}'")))?,
            })
        })
        .collect()
}

/// Per-image measurements of one model.
#[derive(Clone, Debug)]
pub struct ImageScore {
    pub bytes: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim_log: f64,
    pub lpips: f64,
}

/// Codes one image for real and scores the decoded 8-bit reconstruction.
/// The reported bpp is cross-checked against the container size.
pub fn score_image(model: &CompressionModel, net: &Lpips, x: &ImageTensor) -> Result<ImageScore> {
    let b = codec::compress_image(&pad_to_multiple(x, PAD_MULTIPLE), model)?;
    let bytes = b.to_bytes()?;
    let rec = codec::decompress_image(&Bitstream::from_bytes(&bytes)?, model)?;
    let bpp = 8.0 * bytes.len() as f64 / (x.orig_width * x.orig_height) as f64;
    if (bpp - b.bpp()).abs() > 1e-12 {
        return Err(SnicError::Other(format!("bpp mismatch: {bpp} vs {}", b.bpp())));
    }
    let rec = ImageTensor::from_u8(&rec.to_u8(), rec.height, rec.width)?;
    let orig = x.crop_to_original();
    Ok(ImageScore {
        bytes: bytes.len(),
        bpp,
        psnr: psnr(&orig, &rec)?,
        msssim_log: msssim_log(&orig, &rec)?,
        lpips: lpips(net, &orig, &rec)?,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Averages per-image scores into an RD point.
pub fn aggregate(codec: &str, param: f64, scores: &[ImageScore]) -> RdPoint {
    RdPoint {
        codec: codec.to_string(),
        param,
        bpp: mean(scores.iter().map(|s| s.bpp)),
        psnr: mean(scores.iter().map(|s| s.psnr)),
        msssim_log: mean(scores.iter().map(|s| s.msssim_log)),
        lpips: mean(scores.iter().map(|s| s.lpips)),
        images: scores.len(),
    }
}

/// Evaluates one model over a corpus.
pub fn evaluate_model(model: &CompressionModel, corpus: &[ImageTensor], backbone: &str) -> Result<RdPoint> {
    if corpus.is_empty() {
        return input_err("evaluation corpus is empty");
    }
    let net = Lpips::backbone(backbone)?;
    let scores = corpus.iter().map(|x| score_image(model, &net, x)).collect::<Result<Vec<_>>>()?;
    Ok(aggregate("snic", model.meta.lambda.unwrap_or(f64::NAN), &scores))
}

/// Evaluates every checkpoint over the corpus with up to `jobs` worker
/// threads (one checkpoint per task). Points are sorted by bpp ascending;
/// results do not depend on `jobs`.
pub fn rd_sweep(checkpoints: &[PathBuf], corpus: &[ImageTensor], backbone: &str, jobs: usize) -> Result<Vec<RdPoint>> {
    if checkpoints.is_empty() {
        return input_err("no checkpoints to evaluate");
    }
    if corpus.is_empty() {
        return input_err("evaluation corpus is empty");
    }
    Lpips::backbone(backbone)?;
    let jobs = jobs.clamp(1, checkpoints.len());
    let mut results: Vec<Option<Result<RdPoint>>> = (0..checkpoints.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                s.spawn(move || {
                    (j..checkpoints.len())
                        .step_by(jobs)
                        .map(|i| (i, CompressionModel::load(&checkpoints[i]).and_then(|m| evaluate_model(&m, corpus, backbone))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut points = results.into_iter().map(|r| r.expect("every checkpoint evaluated")).collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp).then(a.param.total_cmp(&b.param)));
    Ok(points)
}

/// Metric selectable for plotting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    MsssimLog,
    Lpips,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Psnr, Metric::MsssimLog, Metric::Lpips];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::MsssimLog => "msssim_log",
            Metric::Lpips => "lpips",
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Metric::Psnr => "PSNR [dB]",
            Metric::MsssimLog => "MS-SSIM [-10 log10(1-m)]",
            Metric::Lpips => "LPIPS",
        }
    }

    pub fn of(&self, p: &RdPoint) -> f64 {
        match self {
            Metric::Psnr => p.psnr,
            Metric::MsssimLog => p.msssim_log,
            Metric::Lpips => p.lpips,
        }
    }
}

/// Draws one SVG per metric (bpp on the x axis, one series per codec).
/// Returns the written files.
pub fn plot_rd(points: &[RdPoint], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut codecs: Vec<&str> = points.iter().map(|p| p.codec.as_str()).collect();
    codecs.sort();
    codecs.dedup();
    let mut written = Vec::new();
    for metric in Metric::ALL {
        let path = out_dir.join(format!("rd_{}.svg", metric.name()));
        let finite: Vec<&RdPoint> = points.iter().filter(|p| metric.of(p).is_finite() && p.bpp.is_finite()).collect();
        let (x_max, y_min, y_max) = finite.iter().fold((0.0f64, f64::INFINITY, f64::NEG_INFINITY), |(x, lo, hi), p| {
            (x.max(p.bpp), lo.min(metric.of(p)), hi.max(metric.of(p)))
        });
        let (y_min, y_max) = if finite.is_empty() { (0.0, 1.0) } else { (y_min, y_max) };
        let pad = ((y_max - y_min) * 0.1).max(1e-3);
        let x_max = if x_max > 0.0 { x_max * 1.1 } else { 1.0 };
        let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
            let root = SVGBackend::new(&path, (720, 480)).into_drawing_area();
            root.fill(&WHITE)?;
            let mut chart = ChartBuilder::on(&root)
                .caption(format!("Rate-distortion: {}", metric.name()), ("sans-serif", 20))
                .margin(12)
                .x_label_area_size(40)
                .y_label_area_size(60)
                .build_cartesian_2d(0.0..x_max, (y_min - pad)..(y_max + pad))?;
            chart.configure_mesh().x_desc("bits per pixel").y_desc(metric.label()).draw()?;
            for (k, codec) in codecs.iter().enumerate() {
                let color = Palette99::pick(k).to_rgba();
                let mut series: Vec<(f64, f64)> =
                    finite.iter().filter(|p| p.codec == *codec).map(|p| (p.bpp, metric.of(p))).collect();
                series.sort_by(|a, b| a.0.total_cmp(&b.0));
                chart
                    .draw_series(LineSeries::new(series.clone(), color.stroke_width(2)))?
                    .label(codec.to_string())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
                chart.draw_series(series.iter().map(|&(x, y)| Circle::new((x, y), 4, color.filled())))?;
            }
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
            root.present()?;
            Ok(())
        };
        draw().map_err(|e| SnicError::Other(format!("plotting {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Draws segmentation agreement (DICE) against bpp, one series per image.
pub fn plot_impact(rows: &[ImpactRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut images: Vec<&str> = rows.iter().map(|r| r.image.as_str()).collect();
    images.sort();
    images.dedup();
    let finite: Vec<&ImpactRow> = rows.iter().filter(|r| r.bpp.is_finite() && r.dice.is_finite()).collect();
    let x_max = finite.iter().map(|r| r.bpp).fold(0.0f64, f64::max);
    let x_max = if x_max > 0.0 { x_max * 1.1 } else { 1.0 };
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Segmentation agreement after compression", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(0.0..x_max, 0.0..1.05)?;
        chart.configure_mesh().x_desc("bits per pixel").y_desc("DICE").draw()?;
        for (k, image) in images.iter().enumerate() {
            let color = Palette99::pick(k).to_rgba();
            let mut series: Vec<(f64, f64)> =
                finite.iter().filter(|r| r.image == *image).map(|r| (r.bpp, r.dice)).collect();
            series.sort_by(|a, b| a.0.total_cmp(&b.0));
            chart
                .draw_series(LineSeries::new(series.clone(), color.stroke_width(2)))?
                .label(image.to_string())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            chart.draw_series(series.iter().map(|&(x, y)| Circle::new((x, y), 4, color.filled())))?;
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| SnicError::Other(format!("plotting {}: {e}", path.display())))
}

/// Median wall-clock latency of a codec, measured on in-memory buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Latency {
    pub encode_ms: f64,
    pub decode_ms: f64,
    pub repeats: usize,
    /// Host description recorded alongside the timings.
    pub environment: String,
}

/// An image codec operating on in-memory byte buffers.
pub trait ImageCodec {
    fn encode(&self, x: &ImageTensor) -> Result<Vec<u8>>;
    fn decode(&self, bytes: &[u8]) -> Result<ImageTensor>;
}

/// The learned codec as an [`ImageCodec`].
pub struct NeuralImageCodec<'a>(pub &'a CompressionModel);

impl ImageCodec for NeuralImageCodec<'_> {
    fn encode(&self, x: &ImageTensor) -> Result<Vec<u8>> {
        codec::compress_image(&pad_to_multiple(x, PAD_MULTIPLE), self.0)?.to_bytes()
    }

    fn decode(&self, bytes: &[u8]) -> Result<ImageTensor> {
        codec::decompress_image(&Bitstream::from_bytes(bytes)?, self.0)
    }
}

pub fn environment_description() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{}, {cpus} logical cpu(s)", std::env::consts::OS, std::env::consts::ARCH)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `repeats` (>= 3) encodes and decodes of `x`; reports medians.
pub fn measure_latency(codec: &dyn ImageCodec, x: &ImageTensor, repeats: usize) -> Result<Latency> {
    if repeats < 3 {
        return input_err(format!("latency needs at least 3 repeats, got {repeats}"));
    }
    let (mut enc, mut dec) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
    for _ in 0..repeats {
        let t0 = Instant::now();
        let bytes = codec.encode(x)?;
        enc.push(t0.elapsed().as_secs_f64() * 1e3);
        let t1 = Instant::now();
        codec.decode(&bytes)?;
        dec.push(t1.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Latency { encode_ms: median(enc), decode_ms: median(dec), repeats, environment: environment_description() })
}

/// A subprocess-driven standard codec. Argument templates substitute
/// `{in}`, `{out}` and `{q}` (quality).
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalCodec {
    pub id: String,
    pub encoder: String,
    pub encode_args: Vec<String>,
    pub decoder: String,
    pub decode_args: Vec<String>,
    /// Extension of the compressed file.
    pub extension: String,
}

impl ExternalCodec {
    /// libjpeg's `cjpeg`/`djpeg`; quality 1–100.
    pub fn jpeg() -> Self {
        Self {
            id: "jpeg".into(),
            encoder: "cjpeg".into(),
            encode_args: ["-grayscale", "-quality", "{q}", "-outfile", "{out}", "{in}"].map(String::from).to_vec(),
            decoder: "djpeg".into(),
            decode_args: ["-pnm", "-outfile", "{out}", "{in}"].map(String::from).to_vec(),
            extension: "jpg".into(),
        }
    }

    /// OpenJPEG's `opj_compress`/`opj_decompress`; quality is the compression ratio.
    pub fn jpeg2000() -> Self {
        Self {
            id: "jpeg2000".into(),
            encoder: "opj_compress".into(),
            encode_args: ["-i", "{in}", "-o", "{out}", "-r", "{q}"].map(String::from).to_vec(),
            decoder: "opj_decompress".into(),
            decode_args: ["-i", "{in}", "-o", "{out}"].map(String::from).to_vec(),
            extension: "j2k".into(),
        }
    }

    pub fn by_id(id: &str) -> Option<Self> {
        match id {
            "jpeg" => Some(Self::jpeg()),
            "jpeg2000" => Some(Self::jpeg2000()),
            _ => None,
        }
    }

    /// Whether both binaries are found on the search path.
    pub fn available(&self) -> bool {
        find_program(&self.encoder).is_some() && find_program(&self.decoder).is_some()
    }

    fn run(program: &str, template: &[String], input: &Path, output: &Path, q: f64) -> Result<()> {
        let args: Vec<String> = template
            .iter()
            .map(|a| {
                a.replace("{in}", &input.display().to_string())
                    .replace("{out}", &output.display().to_string())
                    .replace("{q}", &format!("{q}"))
            })
            .collect();
        let out = Command::new(program).args(&args).output()?;
        if !out.status.success() {
            return Err(SnicError::Other(format!(
                "{program} failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(())
    }

    /// Per-image score at one quality, or `None` when the codec is not installed.
    pub fn score(&self, x: &ImageTensor, quality: f64, net: &Lpips, work: &Path) -> Result<Option<ImageScore>> {
        if !self.available() {
            return Ok(None);
        }
        fs::create_dir_all(work)?;
        let src = work.join("input.pgm");
        let coded = work.join(format!("coded.{}", self.extension));
        let dst = work.join("decoded.pgm");
        let orig = x.crop_to_original();
        save_gray(&src, &orig)?;
        Self::run(&self.encoder, &self.encode_args, &src, &coded, quality)?;
        Self::run(&self.decoder, &self.decode_args, &coded, &dst, quality)?;
        let bytes = fs::metadata(&coded)?.len() as usize;
        let rec = load_gray(&dst)?;
        Ok(Some(ImageScore {
            bytes,
            bpp: 8.0 * bytes as f64 / (orig.width * orig.height) as f64,
            psnr: psnr(&orig, &rec)?,
            msssim_log: msssim_log(&orig, &rec)?,
            lpips: lpips(net, &orig, &rec)?,
        }))
    }
}

/// Corpus-averaged RD point of an external codec; `None` (skipped) when absent.
pub fn external_codec_point(
    codec: &ExternalCodec,
    quality: f64,
    corpus: &[ImageTensor],
    backbone: &str,
    work: &Path,
) -> Result<Option<RdPoint>> {
    if !codec.available() {
        return Ok(None);
    }
    let net = Lpips::backbone(backbone)?;
    let mut scores = Vec::with_capacity(corpus.len());
    for x in corpus {
        match codec.score(x, quality, &net, work)? {
            Some(s) => scores.push(s),
            None => return Ok(None),
        }
    }
    Ok(Some(aggregate(&codec.id, quality, &scores)))
}

/// Resolves a program name against the executable search path.
pub fn find_program(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path).map(|d| d.join(name)).find(|p| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ImageTensor {
        ImageTensor::new((0..h * w).map(|i| f(i / w, i % w)).collect(), h, w).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        assert!((psnr_from_mse(1.0) - 48.1308).abs() < 1e-3);
        assert_eq!(psnr_from_mse(255.0 * 255.0), 0.0);
        let a = img(8, 8, |r, c| (r * 8 + c) as f64);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(fmt_metric(f64::INFINITY), "inf");
    }

    #[test]
    fn msssim_log_reference_values() {
        assert_eq!(msssim_log_from(0.9), 10.0);
        assert!((msssim_log_from(0.99) - 20.0).abs() < 1e-12);
        assert_eq!(msssim_log_from(1.0), f64::INFINITY);
    }

    #[test]
    fn ms_ssim_identity_and_scales() {
        let a = img(176, 180, |r, c| 128.0 + 50.0 * ((r as f64) / 7.0).sin() * ((c as f64) / 5.0).cos());
        let m = ms_ssim(&a, &a).unwrap();
        assert!((m.value - 1.0).abs() < 1e-12 && m.scales == 5 && !m.reduced);
        let small = img(64, 64, |r, c| (r + c) as f64);
        let m = ms_ssim(&small, &small).unwrap();
        assert_eq!(m.scales, 3);
        assert!(m.reduced);
        assert!(ms_ssim(&img(8, 8, |_, _| 0.0), &img(8, 8, |_, _| 0.0)).is_err());
        assert_eq!(ms_ssim(&img(161, 161, |_, _| 1.0), &img(161, 161, |_, _| 1.0)).unwrap().scales, 5);
    }

    #[test]
    fn rd_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![RdPoint { codec: "snic".into(), param: 0.0125, bpp: 0.5, psnr: f64::INFINITY, msssim_log: 12.0, lpips: 0.1, images: 3 }];
        let path = dir.path().join("rd.csv");
        write_rd_csv(&path, &pts).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains(",inf,"));
        assert_eq!(read_rd_csv(&path).unwrap(), pts);
        let files = plot_rd(&pts, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert!(fs::read_to_string(&files[0]).unwrap().starts_with("<svg"));
    }

    #[test]
    fn latency_needs_three_repeats() {
        struct Null;
        impl ImageCodec for Null {
            fn encode(&self, _: &ImageTensor) -> Result<Vec<u8>> {
                Ok(vec![])
            }
            fn decode(&self, _: &[u8]) -> Result<ImageTensor> {
                ImageTensor::new(vec![0.0], 1, 1)
            }
        }
        let x = img(4, 4, |_, _| 0.0);
        assert!(measure_latency(&Null, &x, 2).is_err());
        assert_eq!(measure_latency(&Null, &x, 5).unwrap().repeats, 5);
    }

    #[test]
    fn absent_external_codec_is_skipped() {
        let mut c = ExternalCodec::jpeg();
        c.encoder = "definitely-not-installed-encoder".into();
        let net = Lpips::random_pyramid();
        let dir = tempfile::tempdir().unwrap();
        assert!(c.score(&img(16, 16, |_, _| 3.0), 50.0, &net, dir.path()).unwrap().is_none());
    }
}
