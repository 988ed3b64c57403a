use super::AlignError;

/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, 1)`: relative for components of magnitude above
/// one, absolute below.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central differences `(f(x + h e_k) - f(x - h e_k)) / 2h` for every
/// coordinate, compared against `analytic`.
pub fn finite_diff_gradcheck(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<GradCheck, AlignError> {
    if h.is_nan() || h <= 0.0 {
        return Err(AlignError::InvalidConfig(format!("step h = {h} must be positive")));
    }
    if analytic.len() != x.len() {
        return Err(AlignError::ShapeMismatch(format!(
            "{} inputs but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[k], numeric);
        if !err.is_finite() || err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: k,
                analytic: analytic[k],
                numeric,
            };
        }
    }
    Ok(worst)
}
