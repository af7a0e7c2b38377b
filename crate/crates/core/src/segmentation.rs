//! Coronal-hole segmentation by active contours without edges (ACWE), and the
//! harness measuring how compression changes the segmentation.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::data::{pad_to_multiple, DiskGeometry, IntensityMapping, RawEuvImage, PAD_MULTIPLE};
use crate::error::{input_err, Result, SnicError};
use crate::model::CompressionModel;

/// Number of radial bins used by [`limb_correct`] (1% of the radius each).
pub const LIMB_BINS: usize = 100;

/// ACWE parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcweConfig {
    /// Seeding factor: initial region is `I <= alpha * QS`.
    pub alpha: f64,
    /// Weight of the contour length.
    pub mu_len: f64,
    /// Homogeneity weight inside the region.
    pub lambda_in: f64,
    /// Homogeneity weight outside the region.
    pub lambda_out: f64,
    pub max_iters: usize,
    /// Convergence when fewer than this fraction of on-disk pixels flip.
    pub tol: f64,
}

impl Default for AcweConfig {
    fn default() -> Self {
        Self { alpha: 0.3, mu_len: 0.0, lambda_in: 50.0, lambda_out: 1.0, max_iters: 500, tol: 1e-4 }
    }
}

impl AcweConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.lambda_in > 0.0) || !(self.lambda_out > 0.0) || !(self.mu_len >= 0.0) {
            return input_err(format!("invalid ACWE configuration {self:?}"));
        }
        if self.max_iters == 0 || !(self.tol >= 0.0) {
            return input_err("max_iters must be positive and tol nonnegative");
        }
        Ok(())
    }
}

/// Boolean region on an image, restricted to the solar disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMask {
    pub mask: Vec<bool>,
    pub height: usize,
    pub width: usize,
    pub geometry: DiskGeometry,
}

impl SegmentationMask {
    pub fn empty(height: usize, width: usize, geometry: DiskGeometry) -> Self {
        Self { mask: vec![false; height * width], height, width, geometry }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Writes a 1-bit grayscale PNG (white = region).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(|e| SnicError::Other(format!("png: {e}")))?;
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                let (r, c) = (i / self.width, i % self.width);
                packed[r * stride + c / 8] |= 0x80 >> (c % 8);
            }
        }
        writer.write_image_data(&packed).map_err(|e| SnicError::Other(format!("png: {e}")))?;
        Ok(())
    }

    /// Reads a mask PNG written by [`SegmentationMask::save_png`] (any grayscale PNG works;
    /// nonzero pixels are in the region).
    pub fn load_png(path: &Path, geometry: DiskGeometry) -> Result<Self> {
        let img = image::open(path).map_err(|e| SnicError::Input(format!("cannot read {}: {e}", path.display())))?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        let mask = luma.as_raw().iter().map(|&v| v > 0).collect();
        Ok(Self { mask, height: h as usize, width: w as usize, geometry })
    }
}

fn check_shape(values: &[f64], height: usize, width: usize, geom: &DiskGeometry) -> Result<()> {
    if values.len() != height * width || values.is_empty() {
        return input_err(format!("{} values for a {height}x{width} image", values.len()));
    }
    geom.validate(height, width)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Removes the radial (limb-brightening) profile: every on-disk pixel is
/// divided by the median of its annulus (bins 1% of the radius wide) and
/// multiplied by the global on-disk median. Empty bins take a profile value
/// interpolated from their neighbours. Off-disk pixels are untouched.
///
/// The annulus median assumes every annulus is mostly quiet sun. A dark region
/// covering the disk center dominates the innermost annuli and is partly
/// flattened away.
pub fn limb_correct(img: &[f64], height: usize, width: usize, geom: &DiskGeometry) -> Result<Vec<f64>> {
    check_shape(img, height, width, geom)?;
    let bin_of = |i: usize| {
        let r = geom.distance(i / width, i % width) / geom.radius;
        ((r * LIMB_BINS as f64) as usize).min(LIMB_BINS - 1)
    };
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); LIMB_BINS];
    let mut all = Vec::new();
    for (i, &v) in img.iter().enumerate() {
        if geom.contains(i / width, i % width) {
            bins[bin_of(i)].push(v);
            all.push(v);
        }
    }
    if all.is_empty() {
        return input_err("the disk contains no pixels");
    }
    let global = median(&mut all);
    let known: Vec<(usize, f64)> =
        bins.iter_mut().enumerate().filter(|(_, b)| !b.is_empty()).map(|(k, b)| (k, median(b))).collect();
    let profile: Vec<f64> = (0..LIMB_BINS).map(|k| interpolate(&known, k)).collect();
    Ok(img
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !geom.contains(i / width, i % width) {
                return v;
            }
            let p = profile[bin_of(i)];
            if p > 0.0 {
                v / p * global
            } else {
                v
            }
        })
        .collect())
}

/// Piecewise-linear interpolation over `(bin, value)` knots, constant beyond the ends.
fn interpolate(knots: &[(usize, f64)], k: usize) -> f64 {
    match knots.binary_search_by_key(&k, |&(b, _)| b) {
        Ok(i) => knots[i].1,
        Err(0) => knots[0].1,
        Err(i) if i == knots.len() => knots[i - 1].1,
        Err(i) => {
            let ((k0, v0), (k1, v1)) = (knots[i - 1], knots[i]);
            v0 + (v1 - v0) * (k - k0) as f64 / (k1 - k0) as f64
        }
    }
}

/// Linearly interpolated percentile (`q` in [0, 1]) of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Quiet-sun level: mean of the on-disk pixels between the 25th and 90th
/// intensity percentiles (plain mean if that band is empty).
pub fn quiet_sun_mean(img: &[f64], height: usize, width: usize, geom: &DiskGeometry) -> Result<f64> {
    check_shape(img, height, width, geom)?;
    let mut on: Vec<f64> = img.iter().enumerate().filter(|(i, _)| geom.contains(i / width, i % width)).map(|(_, &v)| v).collect();
    if on.is_empty() {
        return input_err("the disk contains no pixels");
    }
    on.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&on, 0.25), percentile(&on, 0.90));
    let band: Vec<f64> = on.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
    let pick = if band.is_empty() { &on } else { &band };
    Ok(pick.iter().sum::<f64>() / pick.len() as f64)
}

/// On-disk pixels with intensity `<= alpha * qs`.
pub fn seed_mask(img: &[f64], height: usize, width: usize, geom: &DiskGeometry, alpha: f64, qs: f64) -> Result<SegmentationMask> {
    check_shape(img, height, width, geom)?;
    if !(qs > 0.0) {
        return input_err(format!("quiet-sun level must be positive, got {qs}"));
    }
    let t = alpha * qs;
    let mask = img.iter().enumerate().map(|(i, &v)| v <= t && geom.contains(i / width, i % width)).collect();
    Ok(SegmentationMask { mask, height, width, geometry: *geom })
}

/// Outcome of an ACWE evolution.
#[derive(Clone, Debug)]
pub struct AcweResult {
    pub mask: SegmentationMask,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the seed (or the evolving region) was empty.
    pub empty: bool,
    /// Energy of the seed followed by the energy after every iteration.
    pub energies: Vec<f64>,
}

struct Regions {
    sum_in: f64,
    n_in: usize,
    sum_out: f64,
    n_out: usize,
}

impl Regions {
    fn means(&self) -> Option<(f64, f64)> {
        (self.n_in > 0 && self.n_out > 0).then(|| (self.sum_in / self.n_in as f64, self.sum_out / self.n_out as f64))
    }
}

struct Acwe<'a> {
    img: &'a [f64],
    width: usize,
    height: usize,
    disk: Vec<bool>,
    cfg: AcweConfig,
}

impl Acwe<'_> {
    fn regions(&self, inside: &[bool]) -> Regions {
        let mut r = Regions { sum_in: 0.0, n_in: 0, sum_out: 0.0, n_out: 0 };
        for i in (0..inside.len()).filter(|&i| self.disk[i]) {
            if inside[i] {
                r.sum_in += self.img[i];
                r.n_in += 1;
            } else {
                r.sum_out += self.img[i];
                r.n_out += 1;
            }
        }
        r
    }

    /// Number of 4-neighbour pixel pairs with differing labels.
    fn boundary_edges(&self, inside: &[bool]) -> usize {
        let (h, w) = (self.height, self.width);
        let mut n = 0;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w && inside[i] != inside[i + 1] {
                    n += 1;
                }
                if r + 1 < h && inside[i] != inside[i + w] {
                    n += 1;
                }
            }
        }
        n
    }

    fn energy(&self, inside: &[bool], c_in: f64, c_out: f64) -> f64 {
        let data: f64 = (0..inside.len())
            .filter(|&i| self.disk[i])
            .map(|i| {
                let v = self.img[i];
                if inside[i] {
                    self.cfg.lambda_in * (v - c_in).powi(2)
                } else {
                    self.cfg.lambda_out * (v - c_out).powi(2)
                }
            })
            .sum();
        data + self.cfg.mu_len * self.boundary_edges(inside) as f64
    }

    /// Cost of labelling pixel `i` inside minus the cost of labelling it outside.
    fn data_delta(&self, i: usize, c_in: f64, c_out: f64) -> f64 {
        let v = self.img[i];
        self.cfg.lambda_in * (v - c_in).powi(2) - self.cfg.lambda_out * (v - c_out).powi(2)
    }

    /// Boundary edges around pixel `i` if labelled inside minus if labelled outside.
    fn edge_delta(&self, inside: &[bool], i: usize) -> f64 {
        let (r, c) = (i / self.width, i % self.width);
        let mut neighbours_in = 0i32;
        let mut total = 0i32;
        let mut visit = |j: usize| {
            total += 1;
            neighbours_in += inside[j] as i32;
        };
        if r > 0 {
            visit(i - self.width);
        }
        if r + 1 < self.height {
            visit(i + self.width);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < self.width {
            visit(i + 1);
        }
        // Inside: edges to outside neighbours; outside: edges to inside neighbours.
        ((total - neighbours_in) - neighbours_in) as f64
    }

    /// One relabelling pass with region means held fixed. Returns the number of flips.
    fn sweep(&self, inside: &mut [bool], c_in: f64, c_out: f64) -> usize {
        let mut flips = 0;
        if self.cfg.mu_len == 0.0 {
            // Pixels are independent: assign each to its cheaper region.
            for i in (0..inside.len()).filter(|&i| self.disk[i]) {
                let want = self.data_delta(i, c_in, c_out) < 0.0;
                if want != inside[i] {
                    inside[i] = want;
                    flips += 1;
                }
            }
        } else {
            // Sequential sweep: each flip strictly lowers the energy given current labels.
            for i in (0..inside.len()).filter(|&i| self.disk[i]) {
                let delta = self.data_delta(i, c_in, c_out) + self.cfg.mu_len * self.edge_delta(inside, i);
                let want = delta < 0.0;
                if want != inside[i] {
                    inside[i] = want;
                    flips += 1;
                }
            }
        }
        flips
    }
}

/// Evolves `seed` to a minimizer of the two-region ACWE energy over the disk:
/// `lambda_in * sum_in (I - c_in)^2 + lambda_out * sum_out (I - c_out)^2 + mu_len * |boundary|`,
/// alternating pixel relabelling with fixed means and mean updates. The
/// energy never increases.
pub fn acwe_evolve(img: &[f64], height: usize, width: usize, seed: &SegmentationMask, cfg: &AcweConfig) -> Result<AcweResult> {
    cfg.validate()?;
    let geom = seed.geometry;
    check_shape(img, height, width, &geom)?;
    if seed.height != height || seed.width != width {
        return input_err("seed mask and image differ in size");
    }
    let acwe = Acwe { img, width, height, disk: geom.disk_mask(height, width), cfg: *cfg };
    let mut inside: Vec<bool> = seed.mask.iter().zip(&acwe.disk).map(|(&m, &d)| m && d).collect();
    let empty_result = |iterations, energies| AcweResult {
        mask: SegmentationMask::empty(height, width, geom),
        iterations,
        converged: true,
        empty: true,
        energies,
    };
    let Some((mut c_in, mut c_out)) = acwe.regions(&inside).means() else {
        return Ok(empty_result(0, Vec::new()));
    };
    let n_disk = acwe.disk.iter().filter(|&&d| d).count();
    let mut energies = vec![acwe.energy(&inside, c_in, c_out)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let flips = acwe.sweep(&mut inside, c_in, c_out);
        match acwe.regions(&inside).means() {
            Some((a, b)) => (c_in, c_out) = (a, b),
            None => return Ok(empty_result(iterations, energies)),
        }
        let e = acwe.energy(&inside, c_in, c_out);
        let prev = *energies.last().unwrap();
        debug_assert!(e <= prev + 1e-9 * prev.abs().max(1.0), "ACWE energy rose from {prev} to {e}");
        energies.push(e);
        if (flips as f64) < cfg.tol * n_disk as f64 || flips == 0 {
            converged = true;
            break;
        }
    }
    Ok(AcweResult {
        mask: SegmentationMask { mask: inside, height, width, geometry: geom },
        iterations,
        converged,
        empty: false,
        energies,
    })
}

/// Full pipeline: limb correction, quiet-sun level, seeding, ACWE.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub result: AcweResult,
    pub quiet_sun: f64,
    pub seed_pixels: usize,
}

pub fn segment(img: &[f64], height: usize, width: usize, geom: &DiskGeometry, cfg: &AcweConfig) -> Result<Segmentation> {
    cfg.validate()?;
    let corrected = limb_correct(img, height, width, geom)?;
    let qs = quiet_sun_mean(&corrected, height, width, geom)?;
    let seed = seed_mask(&corrected, height, width, geom, cfg.alpha, qs)?;
    let result = acwe_evolve(&corrected, height, width, &seed, cfg)?;
    Ok(Segmentation { result, quiet_sun: qs, seed_pixels: seed.count() })
}

/// Sidecar describing a saved mask.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub height: usize,
    pub width: usize,
    pub geometry: DiskGeometry,
    pub config: AcweConfig,
    pub quiet_sun: f64,
    pub pixels: usize,
    pub iterations: usize,
    pub converged: bool,
    pub empty: bool,
}

impl Segmentation {
    pub fn sidecar(&self, cfg: &AcweConfig) -> MaskSidecar {
        let m = &self.result.mask;
        MaskSidecar {
            height: m.height,
            width: m.width,
            geometry: m.geometry,
            config: *cfg,
            quiet_sun: self.quiet_sun,
            pixels: m.count(),
            iterations: self.result.iterations,
            converged: self.result.converged,
            empty: self.result.empty,
        }
    }

    /// Writes `<stem>.png` and `<stem>.json`.
    pub fn save(&self, png_path: &Path, cfg: &AcweConfig) -> Result<()> {
        self.result.mask.save_png(png_path)?;
        let json = serde_json::to_string_pretty(&self.sidecar(cfg)).expect("sidecar serializes");
        fs::write(png_path.with_extension("json"), json)?;
        Ok(())
    }
}

/// Dice similarity `2|A ∩ B| / (|A| + |B|)`; two empty masks are identical (1).
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return input_err(format!("mask sizes differ: {} vs {}", a.len(), b.len()));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// A lossy (or lossless) round trip of a physical-intensity image.
pub trait IntensityCodec {
    fn name(&self) -> String;
    /// Returns the reconstructed intensities and the coded bits per pixel.
    fn round_trip(&self, img: &RawEuvImage) -> Result<(Vec<f64>, f64)>;
}

/// Lossless reference: returns the input; reports the 64 bits per pixel of
/// uncompressed `f64` storage.
pub struct IdentityCodec;

impl IntensityCodec for IdentityCodec {
    fn name(&self) -> String {
        "identity".into()
    }

    fn round_trip(&self, img: &RawEuvImage) -> Result<(Vec<f64>, f64)> {
        Ok((img.pixels.clone(), 64.0))
    }
}

/// The learned codec, applied after mapping intensities onto the level grid.
pub struct NeuralCodec<'a> {
    pub model: &'a CompressionModel,
    pub mapping: IntensityMapping,
}

impl IntensityCodec for NeuralCodec<'_> {
    fn name(&self) -> String {
        match self.model.meta.lambda {
            Some(l) => format!("neural-lambda-{l}"),
            None => "neural".into(),
        }
    }

    fn round_trip(&self, img: &RawEuvImage) -> Result<(Vec<f64>, f64)> {
        let levels = self.mapping.to_levels(img)?;
        let b = codec::compress_image(&pad_to_multiple(&levels, PAD_MULTIPLE), self.model)?;
        let bytes = b.to_bytes()?;
        let rec = codec::decompress_image(&codec::Bitstream::from_bytes(&bytes)?, self.model)?;
        Ok((self.mapping.to_intensity(&rec)?, b.bpp()))
    }
}

/// Segmentation agreement between an image and its codec round trip.
#[derive(Clone, Debug)]
pub struct ImpactPoint {
    pub codec: String,
    pub bpp: f64,
    pub dice: f64,
    pub original: Segmentation,
    pub reconstructed: Segmentation,
}

/// Segments `img` and its round trip through `codec`; returns their Dice and the bpp.
pub fn compression_impact(img: &RawEuvImage, codec: &dyn IntensityCodec, cfg: &AcweConfig) -> Result<ImpactPoint> {
    let original = segment(&img.pixels, img.height, img.width, &img.disk, cfg)?;
    let (rec, bpp) = codec.round_trip(img)?;
    let reconstructed = segment(&rec, img.height, img.width, &img.disk, cfg)?;
    let d = dice(&original.result.mask.mask, &reconstructed.result.mask.mask)?;
    Ok(ImpactPoint { codec: codec.name(), bpp, dice: d, original, reconstructed })
}

/// Runs [`compression_impact`] for every codec; points sorted by bpp ascending.
pub fn impact_curve(img: &RawEuvImage, codecs: &[&dyn IntensityCodec], cfg: &AcweConfig) -> Result<Vec<ImpactPoint>> {
    let mut pts = codecs.iter().map(|c| compression_impact(img, *c, cfg)).collect::<Result<Vec<_>>>()?;
    pts.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    Ok(pts)
}

/// Header of the per-image segmentation-impact report.
pub const IMPACT_HEADER: &str = "image,codec,bpp,dice";

/// One row of the segmentation-impact report.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpactRow {
    pub image: String,
    pub codec: String,
    pub bpp: f64,
    pub dice: f64,
}

impl ImpactRow {
    pub fn new(image: &str, point: &ImpactPoint) -> Self {
        Self { image: image.to_string(), codec: point.codec.clone(), bpp: point.bpp, dice: point.dice }
    }
}

/// Writes an `image,codec,bpp,dice` table.
pub fn write_impact_csv(path: &Path, rows: &[ImpactRow]) -> Result<()> {
    let mut out = String::from(IMPACT_HEADER);
    out.push('\n');
    for r in rows {
        if r.image.contains(',') || r.codec.contains(',') {
            return input_err(format!("identifiers may not contain commas: {:?}, {:?}", r.image, r.codec));
        }
        out.push_str(&format!("{},{},{},{}\n", r.image, r.codec, r.bpp, r.dice));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a table written by [`write_impact_csv`].
pub fn read_impact_csv(path: &Path) -> Result<Vec<ImpactRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(IMPACT_HEADER) {
        return input_err(format!("{} is not a segmentation-impact table", path.display()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| SnicError::Input(format!("bad number '{s}' in '{l}'")));
            match f.as_slice() {
                [image, codec, bpp, dice] => {
                    Ok(ImpactRow { image: image.to_string(), codec: codec.to_string(), bpp: num(bpp)?, dice: num(dice)? })
                }
                _ => input_err(format!("bad impact row '{l}'")),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(size: usize) -> DiskGeometry {
        let c = (size as f64 - 1.0) / 2.0;
        DiskGeometry { center_row: c, center_col: c, radius: 0.4 * size as f64 }
    }

    #[test]
    fn dice_reference_values() {
        assert_eq!(dice(&[true, true, false, false], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(dice(&[false; 4], &[false; 4]).unwrap(), 1.0);
        assert_eq!(dice(&[true, false], &[false, true]).unwrap(), 0.0);
        assert!(dice(&[true], &[true, false]).is_err());
    }

    #[test]
    fn seed_threshold_rule() {
        let g = geom(16);
        let img: Vec<f64> = (0..256).map(|i| (i % 100) as f64).collect();
        let m = seed_mask(&img, 16, 16, &g, 0.3, 100.0).unwrap();
        for (i, &on) in m.mask.iter().enumerate() {
            assert_eq!(on, img[i] <= 30.0 && g.contains(i / 16, i % 16));
        }
        let pos: Vec<f64> = img.iter().map(|v| v + 1.0).collect();
        assert!(seed_mask(&pos, 16, 16, &g, 0.0, 100.0).unwrap().is_empty());
    }

    #[test]
    fn quiet_sun_reference_values() {
        let g = geom(64);
        let flat = vec![100.0; 64 * 64];
        assert_eq!(quiet_sun_mean(&flat, 64, 64, &g).unwrap(), 100.0);
        let halves: Vec<f64> = (0..64 * 64).map(|i| if i % 2 == 0 { 50.0 } else { 150.0 }).collect();
        let qs = quiet_sun_mean(&halves, 64, 64, &g).unwrap();
        assert!((50.0..=150.0).contains(&qs));
    }

    #[test]
    fn radially_symmetric_disk_flattens() {
        let g = geom(64);
        let img: Vec<f64> = (0..64 * 64)
            .map(|i| {
                let r = g.distance(i / 64, i % 64) / g.radius;
                100.0 * (1.0 + r * r)
            })
            .collect();
        let out = limb_correct(&img, 64, 64, &g).unwrap();
        let on: Vec<f64> = (0..64 * 64).filter(|&i| g.contains(i / 64, i % 64)).map(|i| out[i]).collect();
        let mean = on.iter().sum::<f64>() / on.len() as f64;
        let sd = (on.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / on.len() as f64).sqrt();
        assert!(sd <= 0.02 * mean, "sd {sd} mean {mean}");
        assert_eq!(out[0], img[0]);
    }

    #[test]
    fn homogeneous_regions_are_a_fixed_point() {
        let g = geom(32);
        let truth: Vec<bool> = (0..1024).map(|i| g.contains(i / 32, i % 32) && (i % 32) < 12).collect();
        let img: Vec<f64> = truth.iter().map(|&t| if t { 40.0 } else { 200.0 }).collect();
        let seed = SegmentationMask { mask: truth.clone(), height: 32, width: 32, geometry: g };
        let r = acwe_evolve(&img, 32, 32, &seed, &AcweConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        assert_eq!(r.mask.mask, truth);
    }

    #[test]
    fn empty_seed_is_flagged() {
        let g = geom(16);
        let img = vec![100.0; 256];
        let r = acwe_evolve(&img, 16, 16, &SegmentationMask::empty(16, 16, g), &AcweConfig::default()).unwrap();
        assert!(r.empty && r.mask.is_empty());
    }
}
