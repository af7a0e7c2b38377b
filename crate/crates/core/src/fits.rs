//! Minimal reader/writer for single-HDU two-dimensional FITS images.
//!
//! Supports BITPIX 8/16/32/-32/-64 with BSCALE/BZERO, and picks up the solar
//! disk geometry from `CRPIX1`/`CRPIX2` and `R_SUN` when present, the
//! acquisition time from `DATE-OBS` (or `T_OBS`) and the wavelength from
//! `WAVELNTH`. Rows are kept in file order.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{parse_timestamp, DiskGeometry, RawEuvImage};
use crate::error::{input_err, Result, SnicError};

const BLOCK: usize = 2880;
const CARD: usize = 80;

fn parse_header(bytes: &[u8]) -> Result<(HashMap<String, String>, usize)> {
    let mut cards = HashMap::new();
    let mut pos = 0;
    loop {
        let card = bytes.get(pos..pos + CARD).ok_or_else(|| SnicError::Input("FITS header has no END card".into()))?;
        pos += CARD;
        let text = String::from_utf8_lossy(card);
        let key = text[..8.min(text.len())].trim().to_string();
        if key == "END" {
            break;
        }
        if text.len() > 10 && &text[8..10] == "= " {
            let raw = &text[10..];
            let value = if let Some(rest) = raw.trim_start().strip_prefix('\'') {
                rest.split('\'').next().unwrap_or("").trim().to_string()
            } else {
                raw.split('/').next().unwrap_or("").trim().to_string()
            };
            cards.insert(key, value);
        }
    }
    Ok((cards, pos.div_ceil(BLOCK) * BLOCK))
}

fn num(cards: &HashMap<String, String>, key: &str) -> Option<f64> {
    cards.get(key).and_then(|v| v.replace(['D', 'd'], "E").parse::<f64>().ok())
}

/// Reads the primary HDU of a FITS file as physical intensities.
pub fn read_fits(path: &Path) -> Result<RawEuvImage> {
    let bytes = std::fs::read(path).map_err(|e| SnicError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_fits(&bytes)
}

pub fn parse_fits(bytes: &[u8]) -> Result<RawEuvImage> {
    if !bytes.starts_with(b"SIMPLE  =") {
        return input_err("not a FITS file");
    }
    let (cards, data_start) = parse_header(bytes)?;
    let need = |k: &str| num(&cards, k).ok_or_else(|| SnicError::Input(format!("FITS header lacks {k}")));
    let bitpix = need("BITPIX")? as i32;
    if need("NAXIS")? as usize != 2 {
        return input_err("only two-dimensional FITS images are supported");
    }
    let width = need("NAXIS1")? as usize;
    let height = need("NAXIS2")? as usize;
    if width == 0 || height == 0 {
        return input_err("empty FITS image");
    }
    let bscale = num(&cards, "BSCALE").unwrap_or(1.0);
    let bzero = num(&cards, "BZERO").unwrap_or(0.0);
    let size = (bitpix.unsigned_abs() / 8) as usize;
    let n = width * height;
    let raw = bytes
        .get(data_start..data_start + n * size)
        .ok_or_else(|| SnicError::Input("truncated FITS data".into()))?;
    let decode = |c: &[u8]| -> f64 {
        match bitpix {
            8 => c[0] as f64,
            16 => i16::from_be_bytes([c[0], c[1]]) as f64,
            32 => i32::from_be_bytes(c.try_into().unwrap()) as f64,
            -32 => f32::from_be_bytes(c.try_into().unwrap()) as f64,
            _ => f64::from_be_bytes(c.try_into().unwrap()),
        }
    };
    if ![8, 16, 32, -32, -64].contains(&bitpix) {
        return input_err(format!("unsupported BITPIX {bitpix}"));
    }
    let pixels: Vec<f64> = raw
        .chunks_exact(size)
        .map(|c| {
            let v = bzero + bscale * decode(c);
            // Missing data (NaN) and negative dark-subtracted counts read as zero intensity.
            if v.is_finite() { v.max(0.0) } else { 0.0 }
        })
        .collect();
    let mut img = RawEuvImage::new(pixels, height, width)?;
    if let (Some(cx), Some(cy), Some(r)) = (num(&cards, "CRPIX1"), num(&cards, "CRPIX2"), num(&cards, "R_SUN")) {
        img.disk = DiskGeometry { center_row: cy - 1.0, center_col: cx - 1.0, radius: r };
    }
    img.record_time = cards.get("DATE-OBS").or_else(|| cards.get("T_OBS")).and_then(|s| parse_timestamp(s));
    img.wavelength = num(&cards, "WAVELNTH");
    Ok(img)
}

fn card(key: &str, value: &str) -> String {
    format!("{:<8}= {:>20}", key, value)
}

/// Serializes an image as a `BITPIX = -64` FITS file with geometry and time cards.
pub fn to_fits_bytes(img: &RawEuvImage) -> Vec<u8> {
    let mut cards = vec![
        card("SIMPLE", "T"),
        card("BITPIX", "-64"),
        card("NAXIS", "2"),
        card("NAXIS1", &img.width.to_string()),
        card("NAXIS2", &img.height.to_string()),
        card("CRPIX1", &format!("{:.6}", img.disk.center_col + 1.0)),
        card("CRPIX2", &format!("{:.6}", img.disk.center_row + 1.0)),
        card("R_SUN", &format!("{:.6}", img.disk.radius)),
    ];
    if let Some(t) = img.record_time {
        cards.push(format!("{:<8}= '{}'", "DATE-OBS", t.format("%Y-%m-%dT%H:%M:%S")));
    }
    if let Some(w) = img.wavelength {
        cards.push(card("WAVELNTH", &format!("{w}")));
    }
    cards.push("END".to_string());
    let mut out = Vec::new();
    for c in cards {
        out.extend_from_slice(format!("{c:<80}").as_bytes());
    }
    out.resize(out.len().div_ceil(BLOCK) * BLOCK, b' ');
    for v in &img.pixels {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.resize(out.len().div_ceil(BLOCK) * BLOCK, 0);
    out
}

pub fn write_fits(path: &Path, img: &RawEuvImage) -> Result<()> {
    std::fs::write(path, to_fits_bytes(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_pixels_and_metadata() {
        let mut img = RawEuvImage::new((0..12).map(|v| v as f64 * 10.5).collect(), 3, 4).unwrap();
        img.disk = DiskGeometry { center_row: 1.0, center_col: 1.5, radius: 1.2 };
        img.record_time = parse_timestamp("2016-10-02T03:04:05");
        img.wavelength = Some(193.0);
        let back = parse_fits(&to_fits_bytes(&img)).unwrap();
        assert_eq!(back.pixels, img.pixels);
        assert_eq!((back.height, back.width), (3, 4));
        assert_eq!(back.disk, img.disk);
        assert_eq!(back.record_time, img.record_time);
        assert_eq!(back.wavelength, Some(193.0));
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(parse_fits(b"hello").is_err());
        let img = RawEuvImage::new(vec![1.0; 4], 2, 2).unwrap();
        let bytes = to_fits_bytes(&img);
        assert!(parse_fits(&bytes[..BLOCK + 8]).is_err());
    }
}
