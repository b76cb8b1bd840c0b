//! Central finite-difference gradient oracle.

use super::{AutodiffError, Tape, Tensor, Var};

/// Compares an analytic gradient against central differences of `value`.
///
/// Returns `max_i |a_i - c_i| / (|a_i| + |c_i| + step)` where `a` is the
/// analytic gradient and `c` the central difference with the given step.
pub fn check_gradient<F, G>(
    value: F,
    gradient: G,
    x: &Tensor,
    step: f64,
) -> Result<f64, AutodiffError>
where
    F: Fn(&Tensor) -> Result<f64, AutodiffError>,
    G: Fn(&Tensor) -> Result<Vec<f64>, AutodiffError>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::Contract(format!(
            "step must be positive, got {step}"
        )));
    }
    let f0 = value(x)?;
    let f1 = value(x)?;
    if f0.to_bits() != f1.to_bits() {
        return Err(AutodiffError::OracleUnusable(format!(
            "function is not deterministic: {f0} then {f1}"
        )));
    }
    let analytic = gradient(x)?;
    if analytic.len() != x.len() {
        return Err(AutodiffError::Shape(format!(
            "gradient has {} entries for {} inputs",
            analytic.len(),
            x.len()
        )));
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = value(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = value(&probe)?;
        probe.data_mut()[i] = orig;
        let central = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let err = (a - central).abs() / (a.abs() + central.abs() + step);
        if err.is_nan() {
            return Err(AutodiffError::OracleUnusable(format!(
                "NaN at coordinate {i}"
            )));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference check of a function expressed on a [`Tape`]; the
/// analytic side comes from [`Tape::backward`].
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, Var) -> Result<Var, AutodiffError>,
{
    let eval = |t: &Tensor| -> Result<(Tape, Var, Var), AutodiffError> {
        let tape = Tape::new();
        let xv = tape.param(t.clone());
        let out = f(&tape, xv)?;
        if tape.shape(out).iter().product::<usize>() != 1 {
            return Err(AutodiffError::Contract(
                "function must be scalar-valued".into(),
            ));
        }
        Ok((tape, xv, out))
    };
    check_gradient(
        |t| {
            let (tape, _, out) = eval(t)?;
            Ok(tape.item(out))
        },
        |t| {
            let (tape, xv, out) = eval(t)?;
            let mut grads = tape.backward(out)?;
            Ok(grads.take(xv).unwrap_or_else(|| vec![0.0; t.len()]))
        },
        x,
        step,
    )
}
