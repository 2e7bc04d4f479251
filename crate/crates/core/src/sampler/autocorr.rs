//! Error bars for correlated time series.

use serde::{Deserialize, Serialize};

use crate::stats::{compensated_sum, CompensatedSum};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub mean: f64,
    pub std_error: f64,
    /// `1 + 2 sum_t rho(t)`, in units of the sampling interval; 1 for iid data.
    pub tau_int: f64,
    pub len: usize,
}

fn autocovariance(centered: &[f64], lag: usize) -> f64 {
    let n = centered.len();
    if lag >= n {
        return 0.0;
    }
    compensated_sum(
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b),
    ) / n as f64
}

/// Mean, standard error and integrated autocorrelation time using Geyer's
/// initial positive (monotone) sequence truncation.
pub fn summarize(series: &[f64]) -> SeriesSummary {
    let n = series.len();
    if n == 0 {
        return SeriesSummary {
            mean: f64::NAN,
            std_error: f64::NAN,
            tau_int: f64::NAN,
            len: 0,
        };
    }
    let mean = series.iter().copied().collect::<CompensatedSum>().value() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let gamma0 = autocovariance(&centered, 0);
    if gamma0 <= 0.0 || n < 4 {
        let std_error = if n > 1 {
            (gamma0 * n as f64 / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        return SeriesSummary {
            mean,
            std_error,
            tau_int: 1.0,
            len: n,
        };
    }

    // Gamma_k = gamma(2k) + gamma(2k+1), kept while positive and non-increasing
    let mut pair_sum = 0.0;
    let mut previous = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma_pair = autocovariance(&centered, 2 * k) + autocovariance(&centered, 2 * k + 1);
        if gamma_pair <= 0.0 {
            break;
        }
        let gamma_pair = gamma_pair.min(previous);
        pair_sum += gamma_pair;
        previous = gamma_pair;
        k += 1;
    }
    let tau_int = ((2.0 * pair_sum - gamma0) / gamma0).max(1.0);
    SeriesSummary {
        mean,
        std_error: (gamma0 * tau_int / n as f64).sqrt(),
        tau_int,
        len: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, Domain, StreamId};

    #[test]
    fn iid_series_has_unit_tau() {
        let mut rng = StreamId::new(1, Domain::Test, 0).rng();
        let xs: Vec<f64> = (0..50_000).map(|_| standard_normal(&mut rng)).collect();
        let s = summarize(&xs);
        assert!((s.tau_int - 1.0).abs() < 0.1, "tau {}", s.tau_int);
        assert!((s.std_error - 1.0 / (50_000f64).sqrt()).abs() < 0.1 / (50_000f64).sqrt());
    }

    #[test]
    fn ar1_tau_matches_closed_form() {
        // tau = (1 + phi) / (1 - phi)
        let phi: f64 = 0.8;
        let mut rng = StreamId::new(2, Domain::Test, 0).rng();
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                x = phi * x + standard_normal(&mut rng);
                x
            })
            .collect();
        let s = summarize(&xs);
        let expected = (1.0 + phi) / (1.0 - phi);
        assert!(
            (s.tau_int - expected).abs() < 0.15 * expected,
            "tau {}",
            s.tau_int
        );
    }

    #[test]
    fn constant_series() {
        let s = summarize(&[0.5; 100]);
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.std_error, 0.0);
        assert_eq!(s.tau_int, 1.0);
    }
}
