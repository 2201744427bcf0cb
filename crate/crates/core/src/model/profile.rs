//! Layer tables for the supported input geometries.

use std::fmt;
use std::str::FromStr;

use recnet_tensor::{Conv2dSpec, ConvTranspose2dSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::ProjectionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    /// 1×64×900 input, 256×64 bottleneck.
    Kitti,
    /// 1×32×450 input, 128×32 bottleneck.
    Mini,
}

impl ProfileKind {
    pub fn id(self) -> u16 {
        match self {
            ProfileKind::Kitti => 1,
            ProfileKind::Mini => 2,
        }
    }

    pub fn from_id(id: u16) -> Result<Self> {
        match id {
            1 => Ok(ProfileKind::Kitti),
            2 => Ok(ProfileKind::Mini),
            _ => Err(Error::Profile(format!("unknown profile id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::Kitti => "kitti",
            ProfileKind::Mini => "mini",
        }
    }

    pub fn profile(self) -> ModelProfile {
        match self {
            ProfileKind::Kitti => ModelProfile::kitti(),
            ProfileKind::Mini => ModelProfile::mini(),
        }
    }

    /// Sensor geometry whose image size matches this profile's input.
    pub fn projection(self) -> ProjectionConfig {
        match self {
            ProfileKind::Kitti => ProjectionConfig::kitti(),
            ProfileKind::Mini => ProjectionConfig::os1_32(),
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kitti" => Ok(ProfileKind::Kitti),
            "mini" => Ok(ProfileKind::Mini),
            other => Err(Error::Profile(format!("unknown profile {other:?} (expected kitti or mini)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerOp {
    Conv(Conv2dSpec),
    ConvTranspose(ConvTranspose2dSpec),
}

impl LayerOp {
    pub fn weight_shape(&self) -> [usize; 4] {
        match self {
            LayerOp::Conv(s) => s.weight_shape(),
            LayerOp::ConvTranspose(s) => s.weight_shape(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            LayerOp::Conv(s) => s.out_channels,
            LayerOp::ConvTranspose(s) => s.out_channels,
        }
    }

    /// Inputs feeding each output, used for the initialization bound.
    pub fn fan_in(&self) -> f64 {
        match self {
            LayerOp::Conv(s) => (s.in_channels * s.kernel.0 * s.kernel.1) as f64,
            LayerOp::ConvTranspose(s) => {
                (s.in_channels * s.kernel.0 * s.kernel.1) as f64 / (s.stride.0 * s.stride.1) as f64
            }
        }
    }

    pub fn output_hw(&self, input: (usize, usize)) -> recnet_tensor::Result<(usize, usize)> {
        match self {
            LayerOp::Conv(s) => s.output_hw(input),
            LayerOp::ConvTranspose(s) => s.output_hw(input),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    /// Parameter prefix, e.g. `encoder.3`.
    pub name: String,
    pub op: LayerOp,
    pub batch_norm: bool,
    pub activation: bool,
    /// (c, h, w) produced by this layer.
    pub output: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub kind: ProfileKind,
    /// (c, h, w) of the network input.
    pub input: (usize, usize, usize),
    /// (c, w) of the squeezed bottleneck.
    pub bottleneck: (usize, usize),
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub tail: Vec<LayerSpec>,
    /// Flattened tail feature count feeding the dense layer.
    pub dense_in: usize,
}

type ConvRow = (usize, usize, (usize, usize), (usize, usize));
type ConvTRow = (usize, usize, (usize, usize), (usize, usize), (usize, usize), (usize, usize));

impl ModelProfile {
    pub fn kitti() -> Self {
        let encoder: [ConvRow; 10] = [
            (1, 16, (5, 15), (2, 2)),
            (16, 16, (3, 15), (2, 2)),
            (16, 32, (3, 13), (2, 2)),
            (32, 32, (2, 13), (2, 1)),
            (32, 64, (2, 9), (2, 1)),
            (64, 64, (1, 7), (1, 1)),
            (64, 128, (1, 5), (1, 1)),
            (128, 128, (1, 5), (1, 1)),
            (128, 256, (1, 3), (1, 1)),
            (256, 256, (1, 3), (1, 1)),
        ];
        // (in, out, kernel, stride, padding, target)
        let decoder: [ConvTRow; 10] = [
            (256, 256, (1, 3), (1, 1), (0, 0), (1, 66)),
            (256, 128, (1, 3), (1, 1), (0, 0), (1, 68)),
            (128, 128, (1, 5), (1, 1), (0, 1), (1, 70)),
            (128, 64, (1, 5), (1, 1), (0, 0), (1, 74)),
            (64, 64, (1, 7), (1, 1), (0, 0), (1, 82)),
            (64, 32, (2, 9), (2, 1), (0, 0), (2, 90)),
            (32, 32, (2, 12), (2, 1), (0, 0), (5, 102)),
            (32, 16, (3, 13), (2, 2), (0, 0), (13, 215)),
            (16, 16, (3, 15), (2, 2), (0, 0), (30, 443)),
            (16, 1, (5, 15), (2, 2), (0, 0), (64, 900)),
        ];
        let tail: [ConvRow; 3] = [
            (1, 32, (9, 9), (5, 5)),
            (32, 64, (5, 5), (3, 3)),
            (64, 128, (3, 3), (1, 1)),
        ];
        Self::build(ProfileKind::Kitti, (1, 64, 900), &encoder, &decoder, &tail)
            .expect("kitti layer table is consistent")
    }

    pub fn mini() -> Self {
        let encoder: [ConvRow; 8] = [
            (1, 16, (5, 15), (2, 2)),
            (16, 16, (3, 15), (2, 2)),
            (16, 32, (3, 13), (2, 2)),
            (32, 32, (2, 5), (1, 1)),
            (32, 64, (1, 3), (1, 1)),
            (64, 64, (1, 3), (1, 1)),
            (64, 128, (1, 3), (1, 1)),
            (128, 128, (1, 4), (1, 1)),
        ];
        let decoder: [ConvTRow; 8] = [
            (128, 128, (1, 4), (1, 1), (0, 0), (1, 35)),
            (128, 64, (1, 3), (1, 1), (0, 0), (1, 37)),
            (64, 64, (1, 3), (1, 1), (0, 0), (1, 39)),
            (64, 32, (1, 3), (1, 1), (0, 0), (1, 41)),
            (32, 32, (2, 5), (1, 1), (0, 0), (2, 45)),
            (32, 16, (3, 13), (2, 2), (0, 0), (6, 102)),
            (16, 16, (3, 15), (2, 2), (0, 0), (14, 218)),
            (16, 1, (5, 15), (2, 2), (0, 0), (32, 450)),
        ];
        let tail: [ConvRow; 3] = [
            (1, 32, (9, 9), (5, 5)),
            (32, 64, (5, 5), (3, 3)),
            (64, 128, (3, 1), (1, 1)),
        ];
        Self::build(ProfileKind::Mini, (1, 32, 450), &encoder, &decoder, &tail)
            .expect("mini layer table is consistent")
    }

    fn build(
        kind: ProfileKind,
        input: (usize, usize, usize),
        encoder: &[ConvRow],
        decoder: &[ConvTRow],
        tail: &[ConvRow],
    ) -> Result<Self> {
        let n_enc = encoder.len();
        let n_dec = decoder.len();
        let enc_ops: Vec<LayerOp> = encoder
            .iter()
            .map(|&(i, o, k, s)| LayerOp::Conv(Conv2dSpec::new(i, o, k, s)))
            .collect();
        let dec_ops: Vec<LayerOp> = decoder
            .iter()
            .map(|&(i, o, k, s, p, t)| LayerOp::ConvTranspose(ConvTranspose2dSpec::new(i, o, k, s, t).with_padding(p)))
            .collect();
        let tail_ops: Vec<LayerOp> = tail
            .iter()
            .map(|&(i, o, k, s)| LayerOp::Conv(Conv2dSpec::new(i, o, k, s)))
            .collect();

        // Batch norm after every second layer, except on the reconstructed image.
        let (encoder, bottom) = chain("encoder", input, &enc_ops, |i| i % 2 == 1, |i| i + 1 < n_enc)?;
        if bottom.1 != 1 {
            return Err(Error::Profile(format!("encoder ends at height {}, expected 1", bottom.1)));
        }
        let (decoder, out) = chain("decoder", bottom, &dec_ops, |i| i % 2 == 1 && i + 1 < n_dec, |i| i + 1 < n_dec)?;
        if out != input {
            return Err(Error::Profile(format!("decoder ends at {out:?}, expected {input:?}")));
        }
        let tail_in = (1, bottom.0, bottom.2);
        let (tail, t_out) = chain("tail", tail_in, &tail_ops, |_| false, |_| true)?;
        Ok(Self {
            kind,
            input,
            bottleneck: (bottom.0, bottom.2),
            encoder,
            decoder,
            tail,
            dense_in: t_out.0 * t_out.1 * t_out.2,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn bottleneck_len(&self) -> usize {
        self.bottleneck.0 * self.bottleneck.1
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder.iter().chain(&self.decoder).chain(&self.tail)
    }
}

fn chain(
    prefix: &str,
    input: (usize, usize, usize),
    ops: &[LayerOp],
    batch_norm: impl Fn(usize) -> bool,
    activation: impl Fn(usize) -> bool,
) -> Result<(Vec<LayerSpec>, (usize, usize, usize))> {
    let mut shape = input;
    let mut out = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate() {
        let name = format!("{prefix}.{}", i + 1);
        let (h, w) = op.output_hw((shape.1, shape.2)).map_err(|source| Error::Layer {
            layer: name.clone(),
            source,
        })?;
        shape = (op.out_channels(), h, w);
        out.push(LayerSpec {
            name,
            op: *op,
            batch_norm: batch_norm(i),
            activation: activation(i),
            output: shape,
        });
    }
    Ok((out, shape))
}
