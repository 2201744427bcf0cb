//! Training objective: pixel MSE, image-gradient L1 and similarity regression.

use recnet_tensor::{Element, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the similarity term.
    pub alpha: f64,
    /// Weight of the gradient term inside the reconstruction loss.
    pub lambda_grad: f64,
    /// Similarity length scale in meters.
    pub m: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda_grad: 1.0,
            m: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.lambda_grad >= 0.0 && self.lambda_grad.is_finite()) {
            return Err(Error::Config(format!("lambda_grad must be >= 0, got {}", self.lambda_grad)));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::Config(format!("m must be > 0, got {}", self.m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_mse: f64,
    pub l_grad: f64,
    pub l_pr: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.l_mse.is_finite() && self.l_grad.is_finite() && self.l_pr.is_finite() && self.total.is_finite()
    }

    /// First non-finite component, by name.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("l_mse", self.l_mse),
            ("l_grad", self.l_grad),
            ("l_pr", self.l_pr),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    pub fn csv_header() -> &'static str {
        "step,l_mse,l_grad,l_pr,total"
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!("{step},{},{},{},{}", self.l_mse, self.l_grad, self.l_pr, self.total)
    }
}

/// `exp(−d/m)` for a distance `d` in meters.
pub fn similarity_from_distance(d: f64, m: f64) -> f64 {
    (-d / m).exp()
}

/// Target similarity of two poses from their translation distance.
pub fn target_similarity(p1: &Pose, p2: &Pose, m: f64) -> f64 {
    similarity_from_distance(p1.distance(p2), m)
}

/// Distance that maps to similarity `c` for scale `m`.
pub fn distance_for_similarity(c: f64, m: f64) -> f64 {
    -m * c.ln()
}

fn same_shape<T: Element>(tape: &Tape<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::InvalidArgument(format!(
            "{what}: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// Mean squared pixel error.
pub fn mse_term<T: Element>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    same_shape(tape, target, pred, "mse")?;
    let d = tape.sub(target, pred)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Summed absolute difference of forward image gradients along u and v,
/// divided by the pixel count. Inputs are `[c, h, w]` or `[n, c, h, w]`.
pub fn grad_term<T: Element>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    same_shape(tape, target, pred, "gradient loss")?;
    let n = tape.value(target).len();
    let tu = tape.grad_u(target)?;
    let pu = tape.grad_u(pred)?;
    let tv = tape.grad_v(target)?;
    let pv = tape.grad_v(pred)?;
    let du = tape.sub(tu, pu)?;
    let dv = tape.sub(tv, pv)?;
    let au = tape.abs(du);
    let av = tape.abs(dv);
    let su = tape.sum(au);
    let sv = tape.sum(av);
    let s = tape.add(su, sv)?;
    Ok(tape.scale(s, T::of(1.0 / n as f64)))
}

/// Mean of `(c − ĉ)²` over the batch.
pub fn pr_term<T: Element>(tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
    same_shape(tape, target, pred, "similarity loss")?;
    let d = tape.sub(target, pred)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Handles to every loss component on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub mse: Var,
    pub grad: Var,
    pub pr: Var,
    pub total: Var,
}

impl LossVars {
    pub fn report<T: Element>(&self, tape: &Tape<T>) -> LossReport {
        let v = |x: Var| tape.value(x).item().as_f64();
        LossReport {
            l_mse: v(self.mse),
            l_grad: v(self.grad),
            l_pr: v(self.pr),
            total: v(self.total),
        }
    }
}

/// `mse + λ·grad + α·pr` on the tape.
pub fn total_term<T: Element>(
    tape: &mut Tape<T>,
    image: Var,
    recon: Var,
    c_target: Var,
    c_pred: Var,
    config: &LossConfig,
) -> Result<LossVars> {
    let mse = mse_term(tape, image, recon)?;
    let grad = grad_term(tape, image, recon)?;
    let pr = pr_term(tape, c_target, c_pred)?;
    let g = tape.scale(grad, T::of(config.lambda_grad));
    let p = tape.scale(pr, T::of(config.alpha));
    let rec = tape.add(mse, g)?;
    let total = tape.add(rec, p)?;
    Ok(LossVars { mse, grad, pr, total })
}

fn eval<F>(a: &Tensor<f32>, b: &Tensor<f32>, f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape<f64>, Var, Var) -> Result<Var>,
{
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(a.cast());
    let y = tape.constant(b.cast());
    let out = f(&mut tape, x, y)?;
    Ok(tape.value(out).item())
}

pub fn loss_mse(image: &Tensor<f32>, recon: &Tensor<f32>) -> Result<f64> {
    eval(image, recon, mse_term)
}

pub fn loss_grad(image: &Tensor<f32>, recon: &Tensor<f32>) -> Result<f64> {
    eval(image, recon, grad_term)
}

pub fn loss_pr(c_target: f64, c_pred: f64) -> f64 {
    (c_target - c_pred).powi(2)
}

pub fn total_loss(
    image: &Tensor<f32>,
    recon: &Tensor<f32>,
    p1: &Pose,
    p2: &Pose,
    c_pred: f64,
    config: &LossConfig,
) -> Result<LossReport> {
    config.validate()?;
    let l_mse = loss_mse(image, recon)?;
    let l_grad = loss_grad(image, recon)?;
    let l_pr = loss_pr(target_similarity(p1, p2, config.m), c_pred);
    Ok(LossReport {
        l_mse,
        l_grad,
        l_pr,
        total: l_mse + config.lambda_grad * l_grad + config.alpha * l_pr,
    })
}
