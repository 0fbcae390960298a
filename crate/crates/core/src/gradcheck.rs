//! Central finite-difference checks for gradients.
//!
//! The difference quotients are computed in `f64` from forward evaluations
//! only; nothing here touches the backward pass.

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let up = f(&probe);
    probe[i] = x[i] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// Result of comparing one analytic partial derivative against its
/// difference quotient.
#[derive(Clone, Debug)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Checks `analytic[i]` for every `i` in `indices`.
pub fn check_indices(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    floor: f64,
) -> Vec<Probe> {
    indices
        .iter()
        .map(|&i| {
            let numeric = central_difference(f, x, i, h);
            Probe {
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error: relative_error(analytic[i], numeric, floor),
            }
        })
        .collect()
}

pub fn max_rel_error(probes: &[Probe]) -> f64 {
    probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
}
