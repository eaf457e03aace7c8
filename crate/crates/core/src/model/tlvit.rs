use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BlockOptions};
use super::params::TlVitParams;
use super::tokenize::{patchify_batch, stitch, subpatchify_batch};
use super::ModelConfig;
use crate::data::{tile, GrayImage};
use crate::error::{Error, Result};
use crate::metrics::BinaryImage;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Intermediate results of one forward pass, kept for probes and losses.
pub struct ForwardPass<T> {
    /// `[B, n_patch, p*p]`
    pub patch_raw: Var<T>,
    /// `[B, n_patch, n_sub, s*s]`
    pub subpatch_raw: Var<T>,
    /// `[B, n_patch, D]`
    pub patch_tokens: Var<T>,
    /// `[B, n_patch, n_sub, D']`
    pub subpatch_tokens: Var<T>,
    pub global: Var<T>,
    pub local: Var<T>,
    /// Fused encoder output, `[B, n_patch, D]`.
    pub encoded: Var<T>,
    /// Per-patch pixel predictions in `(0, 1)`, `[B, n_patch, p*p]`.
    pub decoded: Var<T>,
    /// `[B, H, W]`
    pub output: Var<T>,
}

pub(crate) fn block_options(config: &ModelConfig, heads: usize) -> BlockOptions {
    BlockOptions {
        heads,
        ln_eps: config.ln_eps,
        attn_residual: config.attn_residual,
    }
}

/// Runs the full model on raw patch and sub-patch tokens already on `tape`.
pub fn forward_pass<T: Scalar>(
    tape: &Tape<T>,
    config: &ModelConfig,
    params: &TlVitParams<Var<T>>,
    patch_raw: Var<T>,
    subpatch_raw: Var<T>,
) -> Result<ForwardPass<T>> {
    let patch_tokens =
        layers::embed_patches(tape, &patch_raw, &params.patch_embed, &params.patch_pos)?;
    let subpatch_tokens = layers::embed_subpatches(
        tape,
        &subpatch_raw,
        &params.subpatch_embed,
        &params.subpatch_pos,
    )?;
    let global = layers::global_encode(
        tape,
        &patch_tokens,
        &params.global,
        block_options(config, config.global_heads),
    )?;
    let local = layers::local_encode(
        tape,
        &subpatch_tokens,
        &params.local,
        block_options(config, config.local_heads),
    )?;
    let encoded = layers::fuse(
        tape,
        &global,
        &local,
        &params.fusion,
        &params.fusion_norm,
        config.ln_eps,
    )?;
    let decoded = layers::decode(
        tape,
        &encoded,
        &params.decoder,
        &params.head,
        block_options(config, config.decoder_heads),
    )?;
    let output = layers::stitch_batch(tape, &decoded, config.height, config.width, config.patch)?;
    Ok(ForwardPass {
        patch_raw,
        subpatch_raw,
        patch_tokens,
        subpatch_tokens,
        global,
        local,
        encoded,
        decoded,
        output,
    })
}

/// Tokenises `tiles` onto `tape` as constants.
pub fn tokenize_batch<T: Scalar>(
    tape: &Tape<T>,
    config: &ModelConfig,
    tiles: &[GrayImage],
) -> Result<(Var<T>, Var<T>)> {
    for t in tiles {
        if t.width() != config.width || t.height() != config.height {
            return Err(Error::Dimension(format!(
                "tile is {}x{}, model expects {}x{}",
                t.width(),
                t.height(),
                config.width,
                config.height
            )));
        }
    }
    let patches = patchify_batch::<T>(tiles, config.patch)?;
    let subpatches = subpatchify_batch::<T>(tiles, config.patch, config.subpatch)?;
    Ok((tape.constant(patches), tape.constant(subpatches)))
}

/// Two-level vision transformer binarizer: configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TlVit<T> {
    config: ModelConfig,
    params: TlVitParams<Tensor<T>>,
}

impl<T: Scalar> TlVit<T> {
    pub fn new(config: ModelConfig, params: TlVitParams<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        params.audit(&config)?;
        Ok(TlVit { config, params })
    }

    /// Freshly initialised model; weights depend only on `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = TlVitParams::init(&config, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(TlVit { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &TlVitParams<Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TlVitParams<Tensor<T>> {
        &mut self.params
    }

    pub fn into_params(self) -> TlVitParams<Tensor<T>> {
        self.params
    }

    /// Continuous predictions in `(0, 1)` for a batch of tiles.
    pub fn predict(&self, tiles: &[GrayImage]) -> Result<Vec<GrayImage>> {
        if tiles.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let params = self.params.bind(&tape, false);
        let (patches, subpatches) = tokenize_batch(&tape, &self.config, tiles)?;
        let pass = forward_pass(&tape, &self.config, &params, patches, subpatches)?;
        let n = self.config.n_patch();
        let p2 = self.config.patch * self.config.patch;
        pass.decoded
            .value()
            .data()
            .chunks(n * p2)
            .map(|chunk| {
                let t = Tensor::new([n, p2], chunk.to_vec())?;
                stitch(&t, self.config.width, self.config.height, self.config.patch)
            })
            .collect()
    }

    pub fn predict_tile(&self, tile: &GrayImage) -> Result<GrayImage> {
        Ok(self.predict(std::slice::from_ref(tile))?.remove(0))
    }

    /// Forward pass followed by a pixelwise threshold.
    pub fn binarize(&self, tile: &GrayImage, threshold: f32) -> Result<BinaryImage> {
        Ok(BinaryImage::from_gray(&self.predict_tile(tile)?, threshold))
    }

    /// Continuous prediction for an image of any size: white-padded tiling,
    /// per-tile forward passes in batches of `batch`, reassembly.
    pub fn predict_image(&self, image: &GrayImage, batch: usize) -> Result<GrayImage> {
        if self.config.width != self.config.height {
            return Err(Error::Config(
                "whole-image inference needs square tiles".into(),
            ));
        }
        let set = tile(image, self.config.height, 1.0)?;
        let mut outputs = Vec::with_capacity(set.tiles.len());
        for chunk in set.tiles.chunks(batch.max(1)) {
            outputs.extend(self.predict(chunk)?);
        }
        set.reassemble(&outputs)
    }

    pub fn binarize_image(
        &self,
        image: &GrayImage,
        threshold: f32,
        batch: usize,
    ) -> Result<BinaryImage> {
        Ok(BinaryImage::from_gray(
            &self.predict_image(image, batch)?,
            threshold,
        ))
    }
}
