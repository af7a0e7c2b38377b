//! Bit-exact entropy coding of a model's quantized latents.
//!
//! `compress_image` runs the analysis transforms, rounds, and codes the
//! hyper-latent under the factorized prior and each latent slice's residuals
//! under Gaussian tables chosen from the decoded context. `decompress_image`
//! replays the same parameter predictions from the decoded data alone.

pub mod cdf;
pub mod container;
pub mod rans;

use std::sync::OnceLock;

use snic_nn::{Graph, Tensor};

pub use cdf::{CdfTable, ScaleTable};
pub use container::{Bitstream, HEADER_LEN, NUM_SLICES};
pub use rans::{rans_decode, rans_encode, STATE_BYTES};

/// Bytes every container spends independently of its content: the header and
/// the coder state of the hyper-latent stream and of each slice stream.
pub const FIXED_OVERHEAD_BYTES: usize = HEADER_LEN + (1 + NUM_SLICES) * STATE_BYTES;

use crate::data::{ImageTensor, PAD_MULTIPLE};
use crate::error::{Result, SnicError};
use crate::model::{CompressionModel, LatentPass};
use crate::transforms::{HYPER_STRIDE, LATENT_STRIDE};

/// Residuals beyond this magnitude indicate a broken model rather than data.
const MAX_RESIDUAL: f64 = (1 << 30) as f64;

/// Process-wide Gaussian tables; built once, immutable afterwards.
pub fn scale_table() -> &'static ScaleTable {
    static TABLE: OnceLock<ScaleTable> = OnceLock::new();
    TABLE.get_or_init(ScaleTable::new)
}

/// One table per hyper-latent channel from the model's factorized prior.
pub fn prior_tables(model: &CompressionModel) -> Vec<CdfTable> {
    let g = Graph::inference();
    let p = model.store.bind_frozen(&g);
    let pmfs = model.entropy.prior.pmf_table(&p, cdf::SYMBOL_MIN, cdf::SYMBOL_MAX);
    pmfs.iter().map(|pmf| CdfTable::from_pmf(|n| pmf[(n - cdf::SYMBOL_MIN) as usize])).collect()
}

fn to_symbols(t: &Tensor) -> Result<Vec<i32>> {
    t.data()
        .iter()
        .map(|&v| {
            if v.abs() > MAX_RESIDUAL || !v.is_finite() {
                Err(SnicError::Model(format!("quantized value {v} is outside the codable range")))
            } else {
                Ok(v as i32)
            }
        })
        .collect()
}

fn check_model(model: &CompressionModel) -> Result<()> {
    if model.config.num_slices != NUM_SLICES {
        return Err(SnicError::Model(format!(
            "the container supports {NUM_SLICES} slices, model has {}",
            model.config.num_slices
        )));
    }
    Ok(())
}

/// Codes an already computed latent pass into a container.
pub fn encode_pass(model: &CompressionModel, pass: &LatentPass, orig_w: usize, orig_h: usize) -> Result<Bitstream> {
    check_model(model)?;
    let (orig_w, orig_h) = (side(orig_w)?, side(orig_h)?);
    let (_, cz, hz, wz) = pass.z_hat.dims4();
    let priors = prior_tables(model);
    let z_tables: Vec<&CdfTable> = (0..cz).flat_map(|c| std::iter::repeat_n(&priors[c], hz * wz)).collect();
    let z_payload = rans_encode(&to_symbols(&pass.z_hat)?, &z_tables);
    let scales = scale_table();
    let slice_payloads = pass
        .residuals
        .iter()
        .zip(&pass.sigmas)
        .map(|(res, sigma)| {
            let tables: Vec<&CdfTable> = sigma.data().iter().map(|&s| scales.table(s)).collect();
            Ok(rans_encode(&to_symbols(res)?, &tables))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Bitstream {
        version: container::VERSION,
        model_id: model.model_id(),
        lambda_index: model.meta.lambda_index,
        orig_w,
        orig_h,
        z_payload,
        slice_payloads,
    })
}

fn side(n: usize) -> Result<u32> {
    let v = u32::try_from(n).map_err(|_| SnicError::Input(format!("image side {n} overflows")))?;
    container::check_dims(v, 1)?;
    Ok(v)
}

/// Compresses a preprocessed image padded to a multiple of 64.
pub fn compress_image(x: &ImageTensor, model: &CompressionModel) -> Result<Bitstream> {
    check_model(model)?;
    let pass = model.latent_pass(x)?;
    encode_pass(model, &pass, x.orig_width, x.orig_height)
}

/// Reconstruction the decoder produces, computed directly from the encoder's
/// rounded latents (cropped to the original size).
pub fn reconstruct_local(model: &CompressionModel, x: &ImageTensor) -> Result<ImageTensor> {
    let pass = model.latent_pass(x)?;
    Ok(to_image(model.synthesize(&pass.y_hat), x.orig_height, x.orig_width))
}

fn to_image(t: Tensor, orig_h: usize, orig_w: usize) -> ImageTensor {
    let (_, _, h, w) = t.dims4();
    ImageTensor { data: t.into_data(), height: h, width: w, orig_height: orig_h, orig_width: orig_w }.crop_to_original()
}

/// Decodes a container with the model that produced it; returns the
/// reconstruction cropped to the original size.
pub fn decompress_image(b: &Bitstream, model: &CompressionModel) -> Result<ImageTensor> {
    check_model(model)?;
    container::check_dims(b.orig_w, b.orig_h)?;
    if b.model_id != model.model_id() {
        return Err(SnicError::Model(format!(
            "bitstream was produced by model {:#04x}, loaded model is {:#04x}",
            b.model_id,
            model.model_id()
        )));
    }
    if b.slice_payloads.len() != NUM_SLICES {
        return Err(SnicError::Integrity(format!("expected {NUM_SLICES} slice payloads")));
    }
    let (orig_h, orig_w) = (b.orig_h as usize, b.orig_w as usize);
    let (ph, pw) = (orig_h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, orig_w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
    let (h, w) = (ph / LATENT_STRIDE, pw / LATENT_STRIDE);
    let (hz, wz) = (h / HYPER_STRIDE, w / HYPER_STRIDE);
    let cz = model.config.cz;

    let priors = prior_tables(model);
    let z_tables: Vec<&CdfTable> = (0..cz).flat_map(|c| std::iter::repeat_n(&priors[c], hz * wz)).collect();
    let z = rans_decode(&b.z_payload, &z_tables)?;
    let z_hat = Tensor::new(&[1, cz, hz, wz], z.into_iter().map(f64::from).collect());
    let hyper = model.hyper_features(&z_hat);

    let scales = scale_table();
    let mut decoded: Vec<Tensor> = Vec::with_capacity(NUM_SLICES);
    for (i, payload) in b.slice_payloads.iter().enumerate() {
        let (mu, sigma) = model.slice_params(&hyper, &decoded, i)?;
        let tables: Vec<&CdfTable> = sigma.data().iter().map(|&s| scales.table(s)).collect();
        let res = rans_decode(payload, &tables)?;
        let y = Tensor::from_fn(mu.shape(), |k| res[k] as f64 + mu.data()[k]);
        decoded.push(y);
    }
    let refs: Vec<&Tensor> = decoded.iter().collect();
    let y_hat = Tensor::concat(&refs, 1);
    Ok(to_image(model.synthesize(&y_hat), orig_h, orig_w))
}

/// Model-estimated bits per original pixel of a latent pass (`y` plus `z`).
pub fn estimated_bpp(model: &CompressionModel, pass: &LatentPass, orig_w: usize, orig_h: usize) -> f64 {
    let (by, bz) = model.estimate_rate(pass);
    (by + bz) / (orig_w * orig_h) as f64
}
