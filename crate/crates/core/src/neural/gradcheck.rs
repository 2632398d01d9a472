//! Central finite-difference verification of analytic gradients.
//!
//! Runs in f64. For each probed coordinate the objective is evaluated at
//! theta +/- h and compared against the analytic gradient. Errors are
//! relative where the gradient has meaningful magnitude and absolute below
//! that, so exact zero gradients do not produce false alarms.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("objective produced a non-finite value at coordinate {0}")]
    NonFinite(usize),
}

/// Result of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

/// Central-difference step size.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely instead of relatively.
const REL_FLOOR: f64 = 1e-6;

fn error_measure(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < REL_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Compare `analytic` against central differences of `objective` at the
/// given coordinates of `params`. `params` is restored after each probe.
pub fn check_coords(
    name: &str,
    params: &mut [f64],
    coords: &[usize],
    analytic: &[f64],
    h: f64,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> Result<GradCheckReport, GradCheckError> {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut max_rel_err = 0.0f64;
    for &i in coords {
        let saved = params[i];
        params[i] = saved + h;
        let up = objective(params);
        params[i] = saved - h;
        let down = objective(params);
        params[i] = saved;
        if !up.is_finite() || !down.is_finite() {
            return Err(GradCheckError::NonFinite(i));
        }
        let numeric = (up - down) / (2.0 * h);
        max_rel_err = max_rel_err.max(error_measure(analytic[i], numeric));
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_err,
        checked: coords.len(),
    })
}

/// A deterministic random subsample of coordinates, without replacement.
pub fn sample_coords(n_params: usize, n_probe: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n_params).collect();
    if n_probe >= n_params {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(n_probe);
    all.sort_unstable();
    all
}
