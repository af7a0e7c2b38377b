//! Image types, EUV intensity preprocessing, padding, dataset splits and crops.

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snic_nn::Tensor;

use crate::error::{input_err, Result, SnicError};
use crate::fits;

/// Default clip range for AIA EUV intensities (counts).
pub const DEFAULT_CLIP_LO: f64 = 20.0;
pub const DEFAULT_CLIP_HI: f64 = 2500.0;
/// Padding granularity required by the transforms (16x) and hyperprior (4x).
pub const PAD_MULTIPLE: usize = 64;

/// Location of the solar disk in pixel coordinates (row/col of pixel centers).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskGeometry {
    pub center_row: f64,
    pub center_col: f64,
    pub radius: f64,
}

impl DiskGeometry {
    /// Centered disk with radius `0.45 * min(h, w)`, used when files carry no geometry.
    pub fn default_for(height: usize, width: usize) -> Self {
        Self {
            center_row: (height as f64 - 1.0) / 2.0,
            center_col: (width as f64 - 1.0) / 2.0,
            radius: 0.45 * height.min(width) as f64,
        }
    }

    /// Distance of pixel `(row, col)` from the disk center.
    pub fn distance(&self, row: usize, col: usize) -> f64 {
        (row as f64 - self.center_row).hypot(col as f64 - self.center_col)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.distance(row, col) <= self.radius
    }

    /// Row-major on-disk indicator for an `height x width` image.
    pub fn disk_mask(&self, height: usize, width: usize) -> Vec<bool> {
        (0..height * width).map(|i| self.contains(i / width, i % width)).collect()
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let fits_rows = self.center_row - self.radius >= -0.5 && self.center_row + self.radius <= height as f64 - 0.5;
        let fits_cols = self.center_col - self.radius >= -0.5 && self.center_col + self.radius <= width as f64 - 0.5;
        if !(self.radius > 0.0) || !fits_rows || !fits_cols {
            return input_err(format!("disk {self:?} does not fit a {height}x{width} image"));
        }
        Ok(())
    }
}

/// Physical-intensity EUV image with acquisition metadata.
#[derive(Clone, Debug)]
pub struct RawEuvImage {
    pub pixels: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub record_time: Option<NaiveDateTime>,
    /// Wavelength in angstroms, when known.
    pub wavelength: Option<f64>,
    pub disk: DiskGeometry,
}

impl RawEuvImage {
    pub fn new(pixels: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if pixels.len() != height * width {
            return input_err(format!("{} pixels for a {height}x{width} image", pixels.len()));
        }
        if pixels.iter().any(|v| !(*v >= 0.0)) {
            return input_err("EUV intensities must be finite and nonnegative");
        }
        Ok(Self {
            pixels,
            height,
            width,
            record_time: None,
            wavelength: None,
            disk: DiskGeometry::default_for(height, width),
        })
    }
}

/// Single-channel image on the 0..=255 level grid, with its pre-padding size.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub orig_height: usize,
    pub orig_width: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return input_err("empty image");
        }
        if data.len() != height * width {
            return input_err(format!("{} values for a {height}x{width} image", data.len()));
        }
        if data.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return input_err("image values must lie in [0, 255]");
        }
        Ok(Self { data, height, width, orig_height: height, orig_width: width })
    }

    pub fn from_u8(pixels: &[u8], height: usize, width: usize) -> Result<Self> {
        Self::new(pixels.iter().map(|&p| p as f64).collect(), height, width)
    }

    /// Values rounded half away from zero and clamped to `u8`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    /// `[1, 1, H, W]` tensor of the (possibly padded) data.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone())
    }

    /// The top-left `orig_height x orig_width` region.
    pub fn crop_to_original(&self) -> ImageTensor {
        let (h, w) = (self.orig_height, self.orig_width);
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            data.extend_from_slice(&self.data[r * self.width..r * self.width + w]);
        }
        ImageTensor { data, height: h, width: w, orig_height: h, orig_width: w }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Level (0..=255) of one intensity under the clipped log mapping.
pub fn intensity_to_level(x: f64, clip_lo: f64, clip_hi: f64) -> f64 {
    let (llo, lhi) = (clip_lo.log10(), clip_hi.log10());
    let l = x.clamp(clip_lo, clip_hi).log10();
    (255.0 * (l - llo) / (lhi - llo)).round()
}

/// Intensity represented by a level under the clipped log mapping.
pub fn level_to_intensity(level: f64, clip_lo: f64, clip_hi: f64) -> f64 {
    let (llo, lhi) = (clip_lo.log10(), clip_hi.log10());
    10f64.powf(llo + level / 255.0 * (lhi - llo))
}

fn check_clip(clip_lo: f64, clip_hi: f64) -> Result<()> {
    if !(clip_lo > 0.0) {
        return input_err(format!("clip_lo must be positive, got {clip_lo}"));
    }
    if !(clip_lo < clip_hi) || !clip_hi.is_finite() {
        return input_err(format!("clip range [{clip_lo}, {clip_hi}] is empty"));
    }
    Ok(())
}

/// Clips to `[clip_lo, clip_hi]`, takes `log10`, maps affinely onto 0..=255 and rounds.
pub fn preprocess_euv(raw: &RawEuvImage, clip_lo: f64, clip_hi: f64) -> Result<ImageTensor> {
    check_clip(clip_lo, clip_hi)?;
    if raw.pixels.is_empty() {
        return input_err("empty image");
    }
    let data = raw.pixels.iter().map(|&x| intensity_to_level(x, clip_lo, clip_hi)).collect();
    ImageTensor::new(data, raw.height, raw.width)
}

/// Reverses the level mapping and the logarithm.
pub fn inverse_preprocess(t: &ImageTensor, clip_lo: f64, clip_hi: f64) -> Result<Vec<f64>> {
    check_clip(clip_lo, clip_hi)?;
    if t.data.iter().any(|v| !(0.0..=255.0).contains(v)) {
        return input_err("levels outside [0, 255]");
    }
    Ok(t.data.iter().map(|&l| level_to_intensity(l, clip_lo, clip_hi)).collect())
}

/// Worst-case relative error of a preprocessing round trip: half a level in log space.
pub fn round_trip_bound(clip_lo: f64, clip_hi: f64) -> f64 {
    let delta = (clip_hi.log10() - clip_lo.log10()) / 255.0;
    10f64.powf(delta / 2.0) - 1.0
}

/// Replicate-pads the right and bottom edges so both dims are multiples of `multiple`.
pub fn pad_to_multiple(t: &ImageTensor, multiple: usize) -> ImageTensor {
    let multiple = multiple.max(1);
    let h = t.height.div_ceil(multiple) * multiple;
    let w = t.width.div_ceil(multiple) * multiple;
    if h == t.height && w == t.width {
        return t.clone();
    }
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let src = r.min(t.height - 1) * t.width;
        for c in 0..w {
            data.push(t.data[src + c.min(t.width - 1)]);
        }
    }
    ImageTensor { data, height: h, width: w, orig_height: t.orig_height, orig_width: t.orig_width }
}

/// A dataset entry: a file plus its observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub path: PathBuf,
    pub timestamp: Option<NaiveDateTime>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Record>,
    pub test: Vec<Record>,
}

/// Months 1-8 go to training, 9-12 to testing.
pub fn split_by_month(records: &[Record]) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    for r in records {
        let Some(ts) = r.timestamp else {
            return input_err(format!("record {} has no timestamp", r.path.display()));
        };
        if ts.month() <= 8 {
            split.train.push(r.clone());
        } else {
            split.test.push(r.clone());
        }
    }
    Ok(split)
}

/// Parses timestamps such as `2015-03-01`, `2015-03-01T12:00:00` or `2015-03-01 12:00:00`.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads a `path,timestamp` manifest. Relative paths resolve against the manifest's directory.
/// Blank lines and `#` comments are ignored; a missing timestamp is kept as `None`.
pub fn read_manifest(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SnicError::Input(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (p, ts) = match line.split_once(',') {
            Some((p, ts)) => (p.trim(), Some(ts.trim())),
            None => (line, None),
        };
        let timestamp = match ts.filter(|t| !t.is_empty()) {
            Some(t) => Some(parse_timestamp(t).ok_or_else(|| {
                SnicError::Input(format!("{}:{}: bad timestamp {t:?}", path.display(), lineno + 1))
            })?),
            None => None,
        };
        let p = PathBuf::from(p);
        let path = if p.is_absolute() { p } else { base.join(p) };
        out.push(Record { path, timestamp });
    }
    Ok(out)
}

/// Draws `batch` crops of `crop x crop` pixels, each from a uniformly chosen
/// image at a uniformly chosen position.
pub fn sample_crops(images: &[ImageTensor], crop: usize, batch: usize, rng_seed: u64) -> Result<Vec<ImageTensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_crops_with(images, crop, batch, &mut rng)
}

pub fn sample_crops_with(
    images: &[ImageTensor],
    crop: usize,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ImageTensor>> {
    if images.is_empty() {
        return input_err("no images to crop from");
    }
    if crop == 0 {
        return input_err("crop size must be positive");
    }
    if let Some(small) = images.iter().find(|im| im.height < crop || im.width < crop) {
        return input_err(format!("crop {crop} larger than a {}x{} image", small.height, small.width));
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let im = &images[rng.gen_range(0..images.len())];
        let r0 = rng.gen_range(0..=im.height - crop);
        let c0 = rng.gen_range(0..=im.width - crop);
        let mut data = Vec::with_capacity(crop * crop);
        for r in r0..r0 + crop {
            data.extend_from_slice(&im.data[r * im.width + c0..r * im.width + c0 + crop]);
        }
        out.push(ImageTensor { data, height: crop, width: crop, orig_height: crop, orig_width: crop });
    }
    Ok(out)
}

/// How intensities map onto the 0..=255 level grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum IntensityMapping {
    /// Values are already levels (8-bit images).
    Linear,
    /// Clipped log10 mapping of physical intensities.
    Log { clip_lo: f64, clip_hi: f64 },
}

impl IntensityMapping {
    pub fn to_levels(&self, raw: &RawEuvImage) -> Result<ImageTensor> {
        match *self {
            IntensityMapping::Linear => {
                ImageTensor::new(raw.pixels.iter().map(|v| v.round().clamp(0.0, 255.0)).collect(), raw.height, raw.width)
            }
            IntensityMapping::Log { clip_lo, clip_hi } => preprocess_euv(raw, clip_lo, clip_hi),
        }
    }

    pub fn to_intensity(&self, t: &ImageTensor) -> Result<Vec<f64>> {
        match *self {
            IntensityMapping::Linear => Ok(t.data.clone()),
            IntensityMapping::Log { clip_lo, clip_hi } => inverse_preprocess(t, clip_lo, clip_hi),
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Whether `path` names a FITS file by extension.
pub fn is_fits(path: &Path) -> bool {
    matches!(extension(path).as_str(), "fits" | "fit" | "fts")
}

/// Loads an 8-bit grayscale PNG/PGM (colour images are converted to luma).
pub fn load_gray(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| SnicError::Input(format!("cannot read {}: {e}", path.display())))?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    ImageTensor::from_u8(luma.as_raw(), h as usize, w as usize)
}

/// Loads any supported file as physical intensities. 8-bit images are returned
/// with their levels as intensities and the default disk geometry.
pub fn load_raw(path: &Path) -> Result<RawEuvImage> {
    if !path.exists() {
        return input_err(format!("{} does not exist", path.display()));
    }
    if is_fits(path) {
        return fits::read_fits(path);
    }
    let t = load_gray(path)?;
    RawEuvImage::new(t.data, t.height, t.width)
}

/// Loads a file onto the level grid using `mapping` for FITS data.
pub fn load_levels(path: &Path, mapping: IntensityMapping) -> Result<ImageTensor> {
    if is_fits(path) {
        mapping.to_levels(&fits::read_fits(path)?)
    } else {
        load_gray(path)
    }
}

/// Writes an 8-bit grayscale PNG (or PGM for `.pgm`).
pub fn save_gray(path: &Path, t: &ImageTensor) -> Result<()> {
    let buf = image::GrayImage::from_raw(t.width as u32, t.height as u32, t.to_u8())
        .ok_or_else(|| SnicError::Other("image buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_endpoints_and_midpoint() {
        assert_eq!(intensity_to_level(20.0, 20.0, 2500.0), 0.0);
        assert_eq!(intensity_to_level(2500.0, 20.0, 2500.0), 255.0);
        assert_eq!(intensity_to_level(1.0, 20.0, 2500.0), 0.0);
        // The log midpoint sits exactly at level 127.5; half away from zero gives 128.
        let mid = (20.0f64 * 2500.0).sqrt();
        let l = intensity_to_level(mid, 20.0, 2500.0);
        assert!(l == 127.0 || l == 128.0);
        assert!((level_to_intensity(0.0, 20.0, 2500.0) - 20.0).abs() < 1e-9);
        assert!((level_to_intensity(255.0, 20.0, 2500.0) - 2500.0).abs() < 1e-9);
    }

    #[test]
    fn padding_examples() {
        let t = ImageTensor::new(vec![7.0; 100 * 130], 100, 130).unwrap();
        let p = pad_to_multiple(&t, 64);
        assert_eq!((p.height, p.width, p.orig_height, p.orig_width), (128, 192, 100, 130));
        let t = ImageTensor::new(vec![0.0; 256 * 256], 256, 256).unwrap();
        assert_eq!(pad_to_multiple(&t, 64), t);
    }

    #[test]
    fn padding_replicates_edges_and_keeps_interior() {
        let t = ImageTensor::new((0..6).map(|v| v as f64).collect(), 2, 3).unwrap();
        let p = pad_to_multiple(&t, 4);
        assert_eq!(p.data[..4], [0.0, 1.0, 2.0, 2.0]);
        assert_eq!(p.data[12..16], [3.0, 4.0, 5.0, 5.0]);
        assert_eq!(p.crop_to_original(), t);
    }

    #[test]
    fn month_split() {
        let rec = |d: &str| Record { path: d.into(), timestamp: parse_timestamp(d) };
        let s = split_by_month(&[rec("2015-03-01"), rec("2017-11-20T10:00:00"), rec("2016-08-31 23:59:59")]).unwrap();
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.test.len(), 1);
        assert_eq!(split_by_month(&[]).unwrap(), DatasetSplit::default());
        assert!(split_by_month(&[Record { path: "x".into(), timestamp: None }]).is_err());
    }

    #[test]
    fn crops_are_reproducible() {
        let im = ImageTensor::new((0..64 * 64).map(|v| (v % 256) as f64).collect(), 64, 64).unwrap();
        let a = sample_crops(std::slice::from_ref(&im), 16, 4, 9).unwrap();
        let b = sample_crops(std::slice::from_ref(&im), 16, 4, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let full = sample_crops(std::slice::from_ref(&im), 64, 1, 1).unwrap();
        assert_eq!(full[0], im);
        assert!(sample_crops(&[im], 65, 1, 1).is_err());
    }

    #[test]
    fn preprocess_rejects_bad_clip() {
        let raw = RawEuvImage::new(vec![1.0; 4], 2, 2).unwrap();
        assert!(preprocess_euv(&raw, 0.0, 10.0).is_err());
        assert!(preprocess_euv(&raw, 10.0, 5.0).is_err());
    }
}
