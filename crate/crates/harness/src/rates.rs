//! Log-log least-squares rate fitting.

use crate::error::{Error, Result};

/// Fitted convergence rate: `error ~= exp(intercept) * resolution^slope`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Slope between each adjacent pair of levels, coarse to fine.
    pub pairwise: Vec<f64>,
}

/// Least-squares slope of log error against log resolution.
///
/// `pairs` are (resolution, error) with both strictly positive; an error of
/// zero almost always means a level was compared against itself, so it is
/// rejected rather than silently dropped.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::Invalid(format!(
            "rate fit needs at least 3 levels, got {}",
            pairs.len()
        )));
    }
    for &(r, e) in pairs {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Invalid(format!("nonpositive resolution {r} in rate fit")));
        }
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::Invalid(format!(
                "nonpositive error {e} at resolution {r}; did a level get compared to itself?"
            )));
        }
    }
    let logs: Vec<(f64, f64)> = pairs.iter().map(|&(r, e)| (r.ln(), e.ln())).collect();
    let m = logs.len() as f64;
    let sx: f64 = logs.iter().map(|l| l.0).sum();
    let sy: f64 = logs.iter().map(|l| l.1).sum();
    let sxx: f64 = logs.iter().map(|l| l.0 * l.0).sum();
    let sxy: f64 = logs.iter().map(|l| l.0 * l.1).sum();
    let denom = m * sxx - sx * sx;
    if denom.abs() < 1e-12 * m * sxx.max(1.0) {
        return Err(Error::Invalid(
            "rate fit needs at least two distinct resolutions".into(),
        ));
    }
    let slope = (m * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / m;
    let pairwise = logs
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    Ok(RateFit {
        slope,
        intercept,
        pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha12Rng;
    use rand_core::{RngCore, SeedableRng};

    #[test]
    fn exact_quadratic_data_fits_slope_two() {
        let c = 3.7;
        let pairs: Vec<(f64, f64)> = [4.0, 8.0, 16.0]
            .iter()
            .map(|n| {
                let h = 1.0 / n;
                (h, c * h * h)
            })
            .collect();
        let fit = fit_rate(&pairs).unwrap();
        assert!((fit.slope - 2.0).abs() <= 1e-12, "slope {}", fit.slope);
        assert!((fit.intercept - c.ln()).abs() <= 1e-12);
        for s in &fit.pairwise {
            assert!((s - 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_errors_fit_slope_zero() {
        let pairs = [(0.25, 0.9), (0.125, 0.9), (0.0625, 0.9)];
        let fit = fit_rate(&pairs).unwrap();
        assert!(fit.slope.abs() <= 1e-12);
    }

    #[test]
    fn one_percent_noise_keeps_slope_near_half() {
        // Multiplicative 1% noise on exact tau^{1/2} data; the fit has to
        // stay well inside 0.5 +- 0.05.
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let pairs: Vec<(f64, f64)> = (1..=5)
            .map(|l| {
                let tau = 0.25f64.powi(l);
                let u = (rng.next_u64() >> 11) as f64 * 2f64.powi(-53);
                (tau, tau.sqrt() * (1.0 + 0.01 * (2.0 * u - 1.0)))
            })
            .collect();
        let fit = fit_rate(&pairs).unwrap();
        assert!((fit.slope - 0.5).abs() <= 0.05, "slope {}", fit.slope);
    }

    #[test]
    fn too_few_or_degenerate_inputs_are_rejected() {
        assert!(fit_rate(&[(0.5, 0.1), (0.25, 0.05)]).is_err());
        assert!(fit_rate(&[(0.5, 0.1), (0.25, 0.0), (0.125, 0.01)]).is_err());
        assert!(fit_rate(&[(0.5, 0.1), (-0.25, 0.2), (0.125, 0.01)]).is_err());
        assert!(fit_rate(&[(0.5, 0.1), (0.5, 0.2), (0.5, 0.3)]).is_err());
    }
}
