use super::{Result, Tape, Tensor, TensorError, Var};
use crate::scalar::Real;

/// Compares reverse-mode gradients of the scalar function `f` at `x` against
/// central differences with the given `step`. Returns the largest
/// `|analytic − numeric| / max(|numeric|, floor)` over all coordinates, where
/// `floor = max(1e-8, 1e-3·max|numeric|)` keeps round-off on coordinates whose
/// gradient is orders of magnitude below the rest from dominating.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if step <= T::zero() {
        return Err(TensorError::InvalidArgument { op: "grad_check", detail: "step must be > 0".into() });
    }
    let eval = |point: &Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let v = tape.constant(point);
        let out = f(&mut tape, v)?;
        let vals = tape.value(out);
        if vals.len() != 1 {
            return Err(TensorError::NotScalar(tape.shape(out).to_vec()));
        }
        Ok(vals[0])
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_grad());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape.grad(xv).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); x.len()]);

    let two = T::lit(2.0);
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (two * step));
    }
    let largest = numeric.iter().fold(T::zero(), |m, n| m.max(n.abs()));
    let floor = T::lit(1e-8).max(T::lit(1e-3) * largest);
    let worst = analytic
        .iter()
        .zip(&numeric)
        .fold(T::zero(), |w, (&a, &n)| w.max((a - n).abs() / floor.max(n.abs())));
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_linear_functions() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.5, 7.0]).unwrap();
        let err = grad_check(|t, v| t.sum(v), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(grad_check(|t, v| t.sum(v), &x, 0.0).is_err());
    }
}
