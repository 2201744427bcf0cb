//! The Siamese autoencoder: shared encoder legs, one decoder leg and a
//! similarity tail operating on the bottleneck difference.

mod graph;
mod profile;
mod weights;

pub use graph::{Graph, Mode};
pub use profile::{LayerOp, LayerSpec, ModelProfile, ProfileKind};
pub use weights::{
    is_running_stat, layout, load_weights, load_weights_for, save_weights, ModelWeights, PRELU_INIT,
};

use crate::error::{Error, Result};
use crate::projection::{ProjectionConfig, RangeImage};

/// Latent descriptor of one scan, row-major `channels × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub profile: ProfileKind,
    pub values: Vec<f32>,
}

impl Bottleneck {
    pub fn new(profile: ProfileKind, values: Vec<f32>) -> Result<Self> {
        let (c, w) = profile.profile().bottleneck;
        if values.len() != c * w {
            return Err(Error::Profile(format!(
                "{profile} bottleneck needs {c}x{w} = {} values, got {}",
                c * w,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("bottleneck value {i} is not finite")));
        }
        Ok(Self { profile, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.profile.profile().bottleneck
    }
}

fn check_image(weights: &ModelWeights, image: &RangeImage) -> Result<()> {
    let (_, h, w) = weights.profile().input;
    if image.height() != h || image.width() != w {
        return Err(Error::Profile(format!(
            "{} model expects {h}x{w} range images, got {}x{}",
            weights.profile_kind(),
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

fn check_pair(a: &Bottleneck, b: &Bottleneck) -> Result<()> {
    if a.profile != b.profile {
        return Err(Error::Profile(format!("cannot compare {} and {} bottlenecks", a.profile, b.profile)));
    }
    Ok(())
}

fn check_bottleneck(weights: &ModelWeights, beta: &Bottleneck) -> Result<()> {
    if beta.profile != weights.profile_kind() {
        return Err(Error::Profile(format!(
            "{} bottleneck given to a {} model",
            beta.profile,
            weights.profile_kind()
        )));
    }
    Ok(())
}

/// Eval-mode encoding of a batch of range images.
pub fn encode_batch(weights: &ModelWeights, images: &[&RangeImage]) -> Result<Vec<Bottleneck>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    for img in images {
        check_image(weights, img)?;
    }
    let normalized: Vec<Vec<f32>> = images.iter().map(|i| i.normalized()).collect();
    let refs: Vec<&[f32]> = normalized.iter().map(|v| v.as_slice()).collect();
    let mut g = Graph::new(weights, Mode::Eval);
    let x = g.input(&refs)?;
    let beta = g.encode(x)?;
    let per = weights.profile().bottleneck_len();
    g.tape
        .value(beta)
        .data()
        .chunks(per)
        .map(|c| Bottleneck::new(weights.profile_kind(), c.to_vec()))
        .collect()
}

pub fn encode(weights: &ModelWeights, image: &RangeImage) -> Result<Bottleneck> {
    Ok(encode_batch(weights, &[image])?.remove(0))
}

/// Raw decoder output on the normalized scale, without clamping.
pub fn decode_raw(weights: &ModelWeights, beta: &Bottleneck) -> Result<Vec<f32>> {
    check_bottleneck(weights, beta)?;
    let (c, w) = beta.shape();
    let mut g = Graph::new(weights, Mode::Eval);
    let b = g.tape.constant(recnet_tensor::Tensor::new(&[1, c, w], beta.values.clone())?);
    let out = g.decode(b)?;
    Ok(g.tape.value(out).data().to_vec())
}

/// Decodes to a range image in meters, clamped to `[0, max_range]` with
/// sub-`min_range` cells emptied.
pub fn decode(weights: &ModelWeights, beta: &Bottleneck, config: &ProjectionConfig) -> Result<RangeImage> {
    let (_, h, w) = weights.profile().input;
    if config.height != h || config.width != w {
        return Err(Error::Profile(format!(
            "{} model decodes {h}x{w} images, config is {}x{}",
            weights.profile_kind(),
            config.height,
            config.width
        )));
    }
    RangeImage::from_normalized(&decode_raw(weights, beta)?, *config)
}

pub fn tail_similarity(weights: &ModelWeights, beta1: &Bottleneck, beta2: &Bottleneck) -> Result<f32> {
    Ok(tail_similarity_many(weights, beta1, &[beta2])?[0])
}

/// Similarity of `query` against each of `others`, evaluated as one batch.
pub fn tail_similarity_many(weights: &ModelWeights, query: &Bottleneck, others: &[&Bottleneck]) -> Result<Vec<f32>> {
    check_bottleneck(weights, query)?;
    if others.is_empty() {
        return Ok(Vec::new());
    }
    let (c, w) = query.shape();
    let mut left = Vec::with_capacity(others.len() * c * w);
    let mut right = Vec::with_capacity(others.len() * c * w);
    for o in others {
        check_pair(query, o)?;
        left.extend_from_slice(&query.values);
        right.extend_from_slice(&o.values);
    }
    let n = others.len();
    let mut g = Graph::new(weights, Mode::Eval);
    let b1 = g.tape.constant(recnet_tensor::Tensor::new(&[n, c, w], left)?);
    let b2 = g.tape.constant(recnet_tensor::Tensor::new(&[n, c, w], right)?);
    let s = g.tail(b1, b2)?;
    Ok(g.tape.value(s).data().to_vec())
}

/// Eval-mode Siamese pass: reconstruction of `first` and the pair similarity.
pub fn siamese_forward(weights: &ModelWeights, first: &RangeImage, second: &RangeImage) -> Result<(RangeImage, f32)> {
    check_image(weights, first)?;
    check_image(weights, second)?;
    let (a, b) = (first.normalized(), second.normalized());
    let mut g = Graph::new(weights, Mode::Eval);
    let x1 = g.input(&[&a])?;
    let x2 = g.input(&[&b])?;
    let (recon, c, _, _) = g.siamese(x1, x2)?;
    let image = RangeImage::from_normalized(g.tape.value(recon).data(), first.config)?;
    Ok((image, g.tape.value(c).data()[0]))
}
