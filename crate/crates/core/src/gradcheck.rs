//! Finite-difference gradient checking utilities.
//!
//! The test suites (and nothing on the training path) use these helpers to
//! validate every analytic backward rule against central differences. Checks
//! run in `f64`, where a step of ~1e-5 leaves ample headroom between
//! truncation and rounding error.

use alloc::vec::Vec;

use crate::nn::ParamSet;
use crate::scalar::Scalar;

/// Relative error with an absolute floor: values whose magnitudes both fall
/// below `floor` compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

/// Central finite difference of `f` along one coordinate of a slice.
pub fn central_diff_slice<S: Scalar>(
    data: &mut [S],
    i: usize,
    h: f64,
    mut f: impl FnMut(&[S]) -> f64,
) -> f64 {
    let orig = data[i];
    data[i] = orig + S::from_f64(h);
    let fp = f(data);
    data[i] = orig - S::from_f64(h);
    let fm = f(data);
    data[i] = orig;
    (fp - fm) / (2.0 * h)
}

/// Picks `count` (parameter, coordinate) probe sites spread over every
/// parameter tensor: each tensor gets at least one probe, the rest are
/// distributed by a deterministic stride so large tensors get more.
pub fn probe_sites<S: Scalar>(params: &ParamSet<S>, count: usize) -> Vec<(usize, usize)> {
    let n = params.param_count();
    if n == 0 {
        return Vec::new();
    }
    let mut sites = Vec::new();
    for (pi, entry) in params.params().iter().enumerate() {
        // Deterministic in-tensor offset that varies by parameter index.
        sites.push((pi, (pi * 7919) % entry.tensor.len()));
    }
    let mut k = 0usize;
    while sites.len() < count {
        let pi = k % n;
        let len = params.param(pi_to_id(pi)).tensor.len();
        let off = ((k / n + 1) * 104_729 + k) % len;
        sites.push((pi, off));
        k += 1;
    }
    sites
}

fn pi_to_id(pi: usize) -> crate::nn::ParamId {
    crate::nn::ParamId(pi)
}

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    /// (param index, coordinate, analytic, numeric) of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Checks analytic parameter gradients of a scalar-valued function against
/// central differences at the given probe sites.
///
/// `loss` evaluates the objective for the current parameter values;
/// `analytic` is the precomputed gradient lookup (`None` means the analytic
/// gradient is structurally zero).
pub fn check_params<S: Scalar>(
    params: &mut ParamSet<S>,
    sites: &[(usize, usize)],
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&ParamSet<S>) -> f64,
    analytic: impl Fn(usize, usize) -> f64,
) -> GradCheckReport {
    let mut max_rel = 0.0;
    let mut worst = None;
    for &(pi, ci) in sites {
        let orig = params.param(pi_to_id(pi)).tensor.data()[ci];
        params.param_mut(pi_to_id(pi)).tensor.data_mut()[ci] = orig + S::from_f64(h);
        let fp = loss(params);
        params.param_mut(pi_to_id(pi)).tensor.data_mut()[ci] = orig - S::from_f64(h);
        let fm = loss(params);
        params.param_mut(pi_to_id(pi)).tensor.data_mut()[ci] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let ana = analytic(pi, ci);
        let e = rel_err(ana, numeric, floor);
        if e > max_rel {
            max_rel = e;
            worst = Some((pi, ci, ana, numeric));
        }
    }
    GradCheckReport { probes: sites.len(), max_rel_err: max_rel, worst }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floors_tiny_magnitudes() {
        assert_eq!(rel_err(0.0, 1e-12, 1e-6), 1e-12 / 1e-6);
        assert!(rel_err(1.0, 1.001, 1e-6) < 2e-3);
    }

    #[test]
    fn central_diff_recovers_quadratic_slope() {
        let mut data = [3.0f64];
        let d = central_diff_slice(&mut data, 0, 1e-5, |x| x[0] * x[0]);
        assert!((d - 6.0).abs() < 1e-8);
    }
}
