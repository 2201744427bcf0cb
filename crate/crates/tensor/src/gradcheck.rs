use crate::element::Element;
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
///
/// Returns the largest relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn gradcheck<T, F>(f: F, point: &Tensor<T>, h: T) -> Result<T>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let x = tape.constant(p);
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item())
    };

    let floor = T::of(1e-8);
    let mut worst = T::zero();
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (h + h);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        let err = (a - numeric).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
