//! Valid cross-correlation and its adjoint (transposed convolution), both
//! lowered to im2col + GEMM, one sample at a time.

use rayon::prelude::*;

use crate::element::Element;
use crate::error::{Result, TensorError};

/// Valid (unpadded) 2-D convolution. Weights are `[out, in, kh, kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn output_hw(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        self.validate()?;
        let (h, w) = input;
        let (kh, kw) = self.kernel;
        if h < kh || w < kw {
            return Err(TensorError::KernelTooLarge {
                op: "conv2d",
                kernel: self.kernel,
                input,
            });
        }
        Ok(((h - kh) / self.stride.0 + 1, (w - kw) / self.stride.1 + 1))
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
        ];
        if dims.contains(&0) {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("all spec dimensions must be >= 1: {self:?}"),
            });
        }
        Ok(())
    }
}

/// Fractionally strided convolution with an explicit output size.
///
/// The base output is `(in - 1)·stride + kernel - 2·padding` per axis; the
/// result is then zero-extended at the bottom/right to `target`. Weights are
/// `[in, out, kh, kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub target: (usize, usize),
}

impl ConvTranspose2dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        target: (usize, usize),
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: (0, 0),
            target,
        }
    }

    pub fn with_padding(mut self, padding: (usize, usize)) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    /// Full (untrimmed) size of the fractionally strided output.
    pub fn full_hw(&self, input: (usize, usize)) -> (usize, usize) {
        (
            (input.0 - 1) * self.stride.0 + self.kernel.0,
            (input.1 - 1) * self.stride.1 + self.kernel.1,
        )
    }

    /// Size after trimming `padding`, before zero-extension.
    pub fn base_hw(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        if input.0 == 0 || input.1 == 0 {
            return Err(TensorError::Invalid {
                op: "conv_transpose2d",
                msg: format!("empty input {input:?}"),
            });
        }
        let full = self.full_hw(input);
        if 2 * self.padding.0 >= full.0 || 2 * self.padding.1 >= full.1 {
            return Err(TensorError::Invalid {
                op: "conv_transpose2d",
                msg: format!("padding {:?} consumes output {full:?}", self.padding),
            });
        }
        Ok((full.0 - 2 * self.padding.0, full.1 - 2 * self.padding.1))
    }

    pub fn output_hw(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        let base = self.base_hw(input)?;
        if self.target.0 < base.0 || self.target.1 < base.1 {
            return Err(TensorError::TargetTooSmall {
                target: self.target,
                base,
            });
        }
        Ok(self.target)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Element>(x: &[T], g: Geometry, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.oh {
                    let src = (c * g.h + oy * g.sh + i) * g.w + j;
                    let dst = row + oy * g.ow;
                    if g.sw == 1 {
                        cols[dst..dst + g.ow].copy_from_slice(&x[src..src + g.ow]);
                    } else {
                        for ox in 0..g.ow {
                            cols[dst + ox] = x[src + ox * g.sw];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: Geometry, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.oh {
                    let dst = (c * g.h + oy * g.sh + i) * g.w + j;
                    let src = row + oy * g.ow;
                    for ox in 0..g.ow {
                        x[dst + ox * g.sw] += cols[src + ox];
                    }
                }
            }
        }
    }
}

fn conv_geometry(spec: &Conv2dSpec, h: usize, w: usize, oh: usize, ow: usize) -> Geometry {
    Geometry {
        c: spec.in_channels,
        h,
        w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        sh: spec.stride.0,
        sw: spec.stride.1,
        oh,
        ow,
    }
}

/// Forward pass over a batch `[n, c, h, w]`; returns `[n, o, oh, ow]` data.
pub(crate) fn conv2d_forward<T: Element>(
    x: &[T],
    n: usize,
    hw: (usize, usize),
    spec: &Conv2dSpec,
    weight: &[T],
    bias: &[T],
) -> Result<(Vec<T>, (usize, usize))> {
    let (oh, ow) = spec.output_hw(hw)?;
    let g = conv_geometry(spec, hw.0, hw.1, oh, ow);
    let in_len = spec.in_channels * hw.0 * hw.1;
    let out_len = spec.out_channels * oh * ow;
    let mut out = vec![T::zero(); n * out_len];
    out.par_chunks_mut(out_len.max(1))
        .zip(x.par_chunks(in_len.max(1)))
        .for_each(|(y, xs)| {
            let mut cols = vec![T::zero(); g.rows() * g.cols()];
            im2col(xs, g, &mut cols);
            for (o, chunk) in y.chunks_mut(oh * ow).enumerate() {
                chunk.fill(bias[o]);
            }
            T::gemm(
                spec.out_channels,
                g.rows(),
                g.cols(),
                weight,
                false,
                &cols,
                false,
                T::one(),
                y,
            );
        });
    Ok((out, (oh, ow)))
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

/// Backward pass of [`conv2d_forward`]. Per-sample weight gradients are
/// reduced in sample order so results do not depend on thread count.
pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    n: usize,
    hw: (usize, usize),
    spec: &Conv2dSpec,
    weight: &[T],
    dy: &[T],
    want_dx: bool,
) -> ConvGrads<T> {
    let (oh, ow) = spec.output_hw(hw).expect("validated in forward");
    let g = conv_geometry(spec, hw.0, hw.1, oh, ow);
    let in_len = spec.in_channels * hw.0 * hw.1;
    let out_len = spec.out_channels * oh * ow;
    let k = g.rows();
    let p = g.cols();
    let o = spec.out_channels;

    let per_sample: Vec<(Vec<T>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let dys = &dy[s * out_len..(s + 1) * out_len];
            let mut cols = vec![T::zero(); k * p];
            im2col(xs, g, &mut cols);
            let mut dw = vec![T::zero(); o * k];
            T::gemm(o, p, k, dys, false, &cols, true, T::zero(), &mut dw);
            let dx = want_dx.then(|| {
                T::gemm(k, o, p, weight, true, dys, false, T::zero(), &mut cols);
                let mut dx = vec![T::zero(); in_len];
                col2im(&cols, g, &mut dx);
                dx
            });
            (dw, dx)
        })
        .collect();

    let mut dw = vec![T::zero(); o * k];
    let mut db = vec![T::zero(); o];
    let mut dx = want_dx.then(|| Vec::with_capacity(n * in_len));
    for (s, (dws, dxs)) in per_sample.into_iter().enumerate() {
        for (a, b) in dw.iter_mut().zip(dws) {
            *a += b;
        }
        let dys = &dy[s * out_len..(s + 1) * out_len];
        for (oc, chunk) in dys.chunks(oh * ow).enumerate() {
            db[oc] += chunk.iter().copied().sum::<T>();
        }
        if let (Some(all), Some(part)) = (dx.as_mut(), dxs) {
            all.extend(part);
        }
    }
    ConvGrads { dx, dw, db }
}

fn transpose_geometry(spec: &ConvTranspose2dSpec, input: (usize, usize)) -> Geometry {
    let full = spec.full_hw(input);
    Geometry {
        c: spec.out_channels,
        h: full.0,
        w: full.1,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        sh: spec.stride.0,
        sw: spec.stride.1,
        oh: input.0,
        ow: input.1,
    }
}

/// Forward pass over `[n, c_in, h, w]`; returns `[n, c_out, th, tw]` data.
pub(crate) fn conv_transpose2d_forward<T: Element>(
    x: &[T],
    n: usize,
    hw: (usize, usize),
    spec: &ConvTranspose2dSpec,
    weight: &[T],
    bias: &[T],
) -> Result<(Vec<T>, (usize, usize))> {
    let (th, tw) = spec.output_hw(hw)?;
    let (bh, bw) = spec.base_hw(hw)?;
    let g = transpose_geometry(spec, hw);
    let (ph, pw) = spec.padding;
    let in_len = spec.in_channels * hw.0 * hw.1;
    let out_len = spec.out_channels * th * tw;
    let mut out = vec![T::zero(); n * out_len];
    out.par_chunks_mut(out_len.max(1))
        .zip(x.par_chunks(in_len.max(1)))
        .for_each(|(y, xs)| {
            let mut cols = vec![T::zero(); g.rows() * g.cols()];
            T::gemm(
                g.rows(),
                spec.in_channels,
                g.cols(),
                weight,
                true,
                xs,
                false,
                T::zero(),
                &mut cols,
            );
            let mut full = vec![T::zero(); g.c * g.h * g.w];
            col2im(&cols, g, &mut full);
            for c in 0..spec.out_channels {
                for r in 0..bh {
                    let src = (c * g.h + r + ph) * g.w + pw;
                    let dst = (c * th + r) * tw;
                    for col in 0..bw {
                        y[dst + col] = full[src + col] + bias[c];
                    }
                }
            }
        });
    Ok((out, (th, tw)))
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    x: &[T],
    n: usize,
    hw: (usize, usize),
    spec: &ConvTranspose2dSpec,
    weight: &[T],
    dy: &[T],
    want_dx: bool,
) -> ConvGrads<T> {
    let (th, tw) = spec.output_hw(hw).expect("validated in forward");
    let (bh, bw) = spec.base_hw(hw).expect("validated in forward");
    let g = transpose_geometry(spec, hw);
    let (ph, pw) = spec.padding;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let in_len = ci * hw.0 * hw.1;
    let out_len = co * th * tw;
    let k = g.rows();
    let p = g.cols();

    let per_sample: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let dys = &dy[s * out_len..(s + 1) * out_len];
            let mut dfull = vec![T::zero(); g.c * g.h * g.w];
            let mut db = vec![T::zero(); co];
            for c in 0..co {
                for r in 0..bh {
                    let dst = (c * g.h + r + ph) * g.w + pw;
                    let src = (c * th + r) * tw;
                    dfull[dst..dst + bw].copy_from_slice(&dys[src..src + bw]);
                    db[c] += dys[src..src + bw].iter().copied().sum::<T>();
                }
            }
            let mut cols = vec![T::zero(); k * p];
            im2col(&dfull, g, &mut cols);
            let mut dw = vec![T::zero(); ci * k];
            T::gemm(ci, p, k, xs, false, &cols, true, T::zero(), &mut dw);
            let dx = want_dx.then(|| {
                let mut dx = vec![T::zero(); in_len];
                T::gemm(ci, k, p, weight, false, &cols, false, T::zero(), &mut dx);
                dx
            });
            (dw, db, dx)
        })
        .collect();

    let mut dw = vec![T::zero(); ci * k];
    let mut db = vec![T::zero(); co];
    let mut dx = want_dx.then(|| Vec::with_capacity(n * in_len));
    for (dws, dbs, dxs) in per_sample {
        for (a, b) in dw.iter_mut().zip(dws) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(dbs) {
            *a += b;
        }
        if let (Some(all), Some(part)) = (dx.as_mut(), dxs) {
            all.extend(part);
        }
    }
    ConvGrads { dx, dw, db }
}
