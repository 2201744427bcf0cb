//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs; [`Tape::backward`] walks the nodes in reverse and accumulates
//! gradients only along paths that reach a leaf created with
//! `requires_grad = true`.

use crate::conv::{self, Conv2dSpec, ConvTranspose2dSpec};
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics from a train-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Sigmoid(Var),
    Prelu { x: Var, slope: Var },
    Reshape(Var),
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, spec: Conv2dSpec },
    ConvTranspose2d { x: Var, w: Var, b: Var, spec: ConvTranspose2dSpec },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    GradU(Var),
    GradV(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a rank-3 `[c, h, w]` or rank-4 `[n, c, h, w]` shape.
fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected [c, h, w] or [n, c, h, w], got {shape:?}"),
        }),
    }
}

fn with_nchw(like: &[usize], n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if like.len() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

fn expect_shape(op: &'static str, got: &[usize], expected: &[usize]) -> Result<()> {
    if got != expected {
        return Err(TensorError::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        });
    }
    Ok(())
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        expect_shape(op, vb.shape(), va.shape())?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape(), data)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, node, g))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, node: Op<T>) -> Var {
        let out = self.value(a).map(f);
        let g = self.any_grad(&[a]);
        self.push(out, node, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let g = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        let g = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), g)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), g))
    }

    /// Parametric ReLU with a single learned slope (`slope` has one element).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "prelu",
                expected: vec![1],
                got: self.shape(slope).to_vec(),
            });
        }
        let a = self.value(slope).item();
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { a * v });
        let g = self.any_grad(&[x, slope]);
        Ok(self.push(out, Op::Prelu { x, slope }, g))
    }

    /// Affine map `x·wᵀ + b` for `x: [n, f]` (or `[f]`), `w: [o, f]`, `b: [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        let (n, f) = match xs[..] {
            [f] => (1, f),
            [n, f] => (n, f),
            _ => {
                return Err(TensorError::Invalid {
                    op: "dense",
                    msg: format!("expected [f] or [n, f] input, got {xs:?}"),
                })
            }
        };
        if ws.len() != 2 || ws[1] != f {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                expected: vec![ws.first().copied().unwrap_or(0), f],
                got: ws,
            });
        }
        let o = ws[0];
        expect_shape("dense", &bs, &[o])?;
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        T::gemm(n, f, o, self.value(x).data(), false, self.value(w).data(), true, T::one(), &mut out);
        let shape = if xs.len() == 1 { vec![o] } else { vec![n, o] };
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, b }, g))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (n, c, h, wd) = nchw("conv2d", &xs)?;
        expect_shape("conv2d", &[c], &[spec.in_channels])?;
        expect_shape("conv2d", self.shape(w), &spec.weight_shape())?;
        expect_shape("conv2d", self.shape(b), &[spec.out_channels])?;
        let (out, (oh, ow)) = conv::conv2d_forward(
            self.value(x).data(),
            n,
            (h, wd),
            &spec,
            self.value(w).data(),
            self.value(b).data(),
        )?;
        let shape = with_nchw(&xs, n, spec.out_channels, oh, ow);
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Conv2d { x, w, b, spec }, g))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, spec: ConvTranspose2dSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (n, c, h, wd) = nchw("conv_transpose2d", &xs)?;
        expect_shape("conv_transpose2d", &[c], &[spec.in_channels])?;
        expect_shape("conv_transpose2d", self.shape(w), &spec.weight_shape())?;
        expect_shape("conv_transpose2d", self.shape(b), &[spec.out_channels])?;
        let (out, (oh, ow)) = conv::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            (h, wd),
            &spec,
            self.value(w).data(),
            self.value(b).data(),
        )?;
        let shape = with_nchw(&xs, n, spec.out_channels, oh, ow);
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::ConvTranspose2d { x, w, b, spec }, g))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = nchw("batchnorm2d", self.shape(x))?;
        if n * h * w == 0 {
            return Err(TensorError::Invalid {
                op: "batchnorm2d",
                msg: format!("zero-size extent {:?}", self.shape(x)),
            });
        }
        expect_shape("batchnorm2d", self.shape(gamma), &[c])?;
        expect_shape("batchnorm2d", self.shape(beta), &[c])?;
        Ok((n, c, h * w))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: Vec<T>, train: bool) -> Result<Var> {
        let (n, c, hw) = self.check_bn(x, gamma, beta)?;
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let z = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = z;
                    out[i] = gv[ch] * z + bv[ch];
                }
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        let g = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, g))
    }

    /// Train-mode batch normalization over `n·h·w` per channel. Returns the
    /// output and the batch statistics for the caller's running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, hw) = self.check_bn(x, gamma, beta)?;
        let xv = self.value(x).data();
        let m = n * hw;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for smp in 0..n {
                let base = (smp * c + ch) * hw;
                s += xv[base..base + hw].iter().copied().sum::<T>();
            }
            let mu = s / T::of(m as f64);
            let mut ss = T::zero();
            for smp in 0..n {
                let base = (smp * c + ch) * hw;
                ss += xv[base..base + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
            mean[ch] = mu;
            var[ch] = ss / T::of(m as f64);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let unbiased = if m > 1 {
            var.iter().map(|&v| v * T::of(m as f64 / (m - 1) as f64)).collect()
        } else {
            var.clone()
        };
        let out = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, var: unbiased }))
    }

    /// Eval-mode batch normalization using fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (_, c, _) = self.check_bn(x, gamma, beta)?;
        expect_shape("batchnorm2d", &[mean.len()], &[c])?;
        expect_shape("batchnorm2d", &[var.len()], &[c])?;
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    /// Forward difference along the width axis; the last column is zero.
    pub fn grad_u(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.image_dims(a)?;
        let v = self.value(a).data();
        let mut out = vec![T::zero(); v.len()];
        for plane in 0..n * c {
            for r in 0..h {
                let row = (plane * h + r) * w;
                for u in 0..w - 1 {
                    out[row + u] = v[row + u + 1] - v[row + u];
                }
            }
        }
        let out = Tensor::new(self.shape(a), out)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::GradU(a), g))
    }

    /// Forward difference along the height axis; the last row is zero.
    pub fn grad_v(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.image_dims(a)?;
        let v = self.value(a).data();
        let mut out = vec![T::zero(); v.len()];
        for plane in 0..n * c {
            for r in 0..h - 1 {
                let row = (plane * h + r) * w;
                for u in 0..w {
                    out[row + u] = v[row + w + u] - v[row + u];
                }
            }
        }
        let out = Tensor::new(self.shape(a), out)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::GradV(a), g))
    }

    fn image_dims(&self, a: Var) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = nchw("image_gradients", self.shape(a))?;
        if h < 2 || w < 2 {
            return Err(TensorError::Invalid {
                op: "image_gradients",
                msg: format!("image must be at least 2x2, got {h}x{w}"),
            });
        }
        Ok((n, c, h, w))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::full(self.shape(loss), T::one());
        grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, contrib: Vec<T>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.shape(var);
                *slot = Some(Tensor::new(shape, contrib).expect("gradient shape"));
            }
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                self.accumulate(grads, *b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, gd.iter().map(|&x| x * *s).collect());
            }
            Op::Square(a) => {
                let va = self.value(*a).data();
                let two = T::of(2.0);
                self.accumulate(grads, *a, gd.iter().zip(va).map(|(&g, &x)| two * x * g).collect());
            }
            Op::Abs(a) => {
                let va = self.value(*a).data();
                let contrib = gd
                    .iter()
                    .zip(va)
                    .map(|(&g, &x)| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, contrib);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0] / T::of(n.max(1) as f64); n]);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate(
                    grads,
                    *a,
                    gd.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect(),
                );
            }
            Op::Prelu { x, slope } => {
                let xv = self.value(*x).data();
                let a = self.value(*slope).item();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v >= T::zero() { g } else { a * g })
                    .collect();
                let da = gd
                    .iter()
                    .zip(xv)
                    .filter(|(_, &v)| v < T::zero())
                    .map(|(&g, &v)| g * v)
                    .sum::<T>();
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *slope, vec![da]);
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, gd.to_vec());
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (o, f) = (wv.shape()[0], wv.shape()[1]);
                let n = xv.len() / f;
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![T::zero(); n * f];
                    T::gemm(n, o, f, gd, false, wv.data(), false, T::zero(), &mut dx);
                    self.accumulate(grads, *x, dx);
                }
                let mut dw = vec![T::zero(); o * f];
                T::gemm(o, n, f, gd, true, xv.data(), false, T::zero(), &mut dw);
                self.accumulate(grads, *w, dw);
                let mut db = vec![T::zero(); o];
                for row in gd.chunks(o) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *b, db);
            }
            Op::Conv2d { x, w, b, spec } => {
                let (n, _, h, wd) = nchw("conv2d", self.shape(*x)).expect("checked in forward");
                let r = conv::conv2d_backward(
                    self.value(*x).data(),
                    n,
                    (h, wd),
                    spec,
                    self.value(*w).data(),
                    gd,
                    self.nodes[x.0].needs_grad,
                );
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, r.dw);
                self.accumulate(grads, *b, r.db);
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let (n, _, h, wd) = nchw("conv_transpose2d", self.shape(*x)).expect("checked in forward");
                let r = conv::conv_transpose2d_backward(
                    self.value(*x).data(),
                    n,
                    (h, wd),
                    spec,
                    self.value(*w).data(),
                    gd,
                    self.nodes[x.0].needs_grad,
                );
                if let Some(dx) = r.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, r.dw);
                self.accumulate(grads, *b, r.db);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (n, c, h, w) = nchw("batchnorm2d", self.shape(*x)).expect("checked in forward");
                let hw = h * w;
                let gamma_v = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for i in base..base + hw {
                            dgamma[ch] += gd[i] * xhat[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![T::zero(); gd.len()];
                    let m = T::of((n * hw) as f64);
                    for ch in 0..c {
                        let k = gamma_v[ch] * inv_std[ch];
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for i in base..base + hw {
                                dx[i] = if *train {
                                    // dxhat = g·γ; dx = inv_std/M · (M·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                                    k * (gd[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                                } else {
                                    k * gd[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::GradU(a) => {
                let (n, c, h, w) = nchw("image_gradients", self.shape(*a)).expect("checked");
                let mut da = vec![T::zero(); gd.len()];
                for plane in 0..n * c {
                    for r in 0..h {
                        let row = (plane * h + r) * w;
                        for u in 0..w - 1 {
                            da[row + u + 1] += gd[row + u];
                            da[row + u] -= gd[row + u];
                        }
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::GradV(a) => {
                let (n, c, h, w) = nchw("image_gradients", self.shape(*a)).expect("checked");
                let mut da = vec![T::zero(); gd.len()];
                for plane in 0..n * c {
                    for r in 0..h - 1 {
                        let row = (plane * h + r) * w;
                        for u in 0..w {
                            da[row + w + u] += gd[row + u];
                            da[row + u] -= gd[row + u];
                        }
                    }
                }
                self.accumulate(grads, *a, da);
            }
        }
    }
}

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
