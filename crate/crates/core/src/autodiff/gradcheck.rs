use crate::error::{Error, Result};

/// Fourth-order central difference of `f` along coordinate `k`.
pub fn central_difference<F>(f: &mut F, x: &[f64], k: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut xp = x.to_vec();
    let mut eval = |delta: f64| -> Result<f64> {
        xp[k] = x[k] + delta;
        let v = f(&xp)?;
        if !v.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite value at coordinate {k} offset {delta}"
            )));
        }
        Ok(v)
    };
    let f1 = eval(h)?;
    let fm1 = eval(-h)?;
    let f2 = eval(2.0 * h)?;
    let fm2 = eval(-2.0 * h)?;
    Ok((8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h))
}

/// Per-coordinate relative errors `|ad − fd| / (|fd| + 1e-12)`.
pub fn relative_errors<F>(mut f: F, x: &[f64], ad: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if ad.len() != x.len() {
        return Err(Error::contract("gradient and point lengths differ"));
    }
    let base = f(x)?;
    if !base.is_finite() {
        return Err(Error::Evaluation(
            "non-finite function value at the check point".into(),
        ));
    }
    (0..x.len())
        .map(|k| {
            let fd = central_difference(&mut f, x, k, h)?;
            Ok((ad[k] - fd).abs() / (fd.abs() + 1e-12))
        })
        .collect()
}

/// Maximum over coordinates of the AD-vs-finite-difference relative error.
///
/// `f` returns the value and its reverse-mode gradient; only the value is
/// used for the difference quotients.
pub fn grad_check<F>(mut f: F, x: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (v, ad) = f(x)?;
    if !v.is_finite() {
        return Err(Error::Evaluation(
            "non-finite function value at the check point".into(),
        ));
    }
    let errs = relative_errors(|p| f(p).map(|r| r.0), x, &ad, h)?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}
