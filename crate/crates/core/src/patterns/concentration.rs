//! Monte Carlo for the number of layers needed before the random global
//! attentions (plus the top set) cover a target number of patches: a
//! `λ_r`-uniform coupon collector stopped at roughly half the coupons.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::coverage_threshold;
use super::sample_prefix;
use crate::error::{domain, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConcentrationParams {
    pub n: usize,
    pub lambda_top: usize,
    pub lambda_r: usize,
    /// Number of covered patches that stops a trial.
    pub coverage_target: usize,
    /// Whether the top set counts as covered from the start.
    pub count_top: bool,
}

impl ConcentrationParams {
    /// Target `⌈(n−1)/2⌉`, top set counted.
    pub fn new(n: usize, lambda_top: usize, lambda_r: usize) -> Self {
        Self {
            n,
            lambda_top,
            lambda_r,
            coverage_target: coverage_threshold(n),
            count_top: true,
        }
    }

    pub fn with_target(mut self, coverage_target: usize) -> Self {
        self.coverage_target = coverage_target;
        self
    }

    pub fn with_count_top(mut self, count_top: bool) -> Self {
        self.count_top = count_top;
        self
    }

    fn initial(&self) -> usize {
        if self.count_top {
            self.lambda_top
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(domain!("n must be at least 1"));
        }
        if self.lambda_top > self.n {
            return Err(domain!(
                "lambda_top {} exceeds n {}",
                self.lambda_top,
                self.n
            ));
        }
        if self.coverage_target > self.n {
            return Err(domain!(
                "coverage target {} exceeds n {}",
                self.coverage_target,
                self.n
            ));
        }
        let pool = self.n - self.lambda_top;
        if self.lambda_r > pool {
            return Err(Error::Capacity {
                requested: self.lambda_r,
                available: pool,
            });
        }
        if self.initial() + pool < self.coverage_target {
            return Err(Error::NonTermination(alloc::format!(
                "at most {} patches can ever be covered, target is {}",
                self.initial() + pool,
                self.coverage_target
            )));
        }
        if self.lambda_r == 0 && self.coverage_target > self.initial() {
            return Err(Error::NonTermination(alloc::format!(
                "lambda_r = 0 never grows coverage past {}",
                self.initial()
            )));
        }
        Ok(())
    }

    /// No trial can finish faster than `⌈(target − initial)/λ_r⌉` layers (and at least one).
    pub fn min_layers(&self) -> usize {
        let missing = self.coverage_target.saturating_sub(self.initial());
        if missing == 0 {
            1
        } else {
            missing.div_ceil(self.lambda_r).max(1)
        }
    }
}

/// Layers needed in trial `trial`; the top set is taken to be
/// `{0, …, λ_top−1}` (the distribution does not depend on which patches).
/// Draws come from the stream `(seed, trial)`.
pub fn simulate_trial(params: &ConcentrationParams, seed: u64, trial: u64) -> usize {
    let mut rng = rng::stream(seed, &[trial]);
    let mut pool: Vec<usize> = (params.lambda_top..params.n).collect();
    let mut covered = vec![false; params.n];
    let mut count = params.initial();
    let mut layers = 0;
    loop {
        layers += 1;
        for &k in sample_prefix(&mut rng, &mut pool, params.lambda_r) {
            if !covered[k] {
                covered[k] = true;
                count += 1;
            }
        }
        if count >= params.coverage_target {
            return layers;
        }
    }
}

/// `n·ln2/λ_r`.
pub fn theoretical_center(n: usize, lambda_r: usize) -> f64 {
    n as f64 * core::f64::consts::LN_2 / lambda_r as f64
}

/// `√(n^(1−ln2))`, the Baum scale for collecting half of `n` singleton coupons.
pub fn theoretical_sigma_baum(n: usize) -> f64 {
    libm::sqrt(libm::pow(n as f64, 1.0 - core::f64::consts::LN_2))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailFraction {
    pub c: f64,
    /// Fraction of trials with `|L − center| > c·√n/λ_r`.
    pub fraction: f64,
    /// `1 − Φ(c)`.
    pub normal_tail: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CouponStats {
    pub params: ConcentrationParams,
    pub samples: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
    pub tails: Vec<TailFraction>,
    pub center: f64,
    pub sigma_bound: f64,
    pub sigma_baum: f64,
}

impl CouponStats {
    pub fn from_samples(
        params: ConcentrationParams,
        samples: Vec<usize>,
        c_values: &[f64],
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain!("need at least one trial"));
        }
        if params.lambda_r == 0 {
            return Err(domain!("statistics need lambda_r >= 1"));
        }
        let count = samples.len() as f64;
        let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / count;
        let var = if samples.len() > 1 {
            samples
                .iter()
                .map(|&s| (s as f64 - mean) * (s as f64 - mean))
                .sum::<f64>()
                / (count - 1.0)
        } else {
            0.0
        };
        let center = theoretical_center(params.n, params.lambda_r);
        let sigma_bound = libm::sqrt(params.n as f64) / params.lambda_r as f64;
        let tails = c_values
            .iter()
            .map(|&c| {
                let exceed = samples
                    .iter()
                    .filter(|&&s| libm::fabs(s as f64 - center) > c * sigma_bound)
                    .count();
                TailFraction {
                    c,
                    fraction: exceed as f64 / count,
                    normal_tail: 1.0 - normal_cdf(c),
                }
            })
            .collect();
        Ok(Self {
            min: *samples.iter().min().unwrap_or(&0),
            max: *samples.iter().max().unwrap_or(&0),
            sigma_baum: theoretical_sigma_baum(params.n) / params.lambda_r as f64,
            params,
            samples,
            mean,
            std: libm::sqrt(var),
            tails,
            center,
            sigma_bound,
        })
    }

    pub fn tail_fraction(&self, c: f64) -> Option<f64> {
        self.tails.iter().find(|t| t.c == c).map(|t| t.fraction)
    }
}

/// Runs `trials` independent trials sequentially. Trial `i` only depends on
/// `(rng_seed, i)`, so a parallel driver calling [`simulate_trial`] gets
/// identical samples.
pub fn simulate_layer_concentration(
    params: &ConcentrationParams,
    trials: usize,
    c_values: &[f64],
    rng_seed: u64,
) -> Result<CouponStats> {
    params.validate()?;
    if trials == 0 {
        return Err(domain!("need at least one trial"));
    }
    let samples = (0..trials as u64)
        .map(|t| simulate_trial(params, rng_seed, t))
        .collect();
    CouponStats::from_samples(params.clone(), samples, c_values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pick_covers_half_of_two() {
        let p = ConcentrationParams::new(2, 0, 1).with_target(1);
        let stats = simulate_layer_concentration(&p, 50, &[1.0], 3).unwrap();
        assert!(stats.samples.iter().all(|&s| s == 1));
    }

    #[test]
    fn center_and_baum_values() {
        assert!((theoretical_center(9000, 700) - 8.911_892_321_485_011).abs() < 1e-12);
        assert!((theoretical_center(1, 1) - core::f64::consts::LN_2).abs() < 1e-15);
        // 10000^((1 − ln2)/2) = exp(2·ln10·(1 − ln2))
        let expect = libm::exp(2.0 * core::f64::consts::LN_10 * (1.0 - core::f64::consts::LN_2));
        assert!((theoretical_sigma_baum(10000) - expect).abs() < 1e-12);
        assert!((theoretical_sigma_baum(10000) - 4.11).abs() < 0.01);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((normal_cdf(-2.0) - 0.022_750_131_948_179_2).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        let p = ConcentrationParams::new(10, 0, 0);
        assert!(matches!(p.validate(), Err(Error::NonTermination(_))));
        let p = ConcentrationParams::new(10, 0, 1).with_target(11);
        assert!(matches!(p.validate(), Err(Error::Domain(_))));
        let p = ConcentrationParams::new(10, 4, 7);
        assert!(matches!(p.validate(), Err(Error::Capacity { .. })));
        let p = ConcentrationParams::new(10, 6, 2)
            .with_target(5)
            .with_count_top(false);
        assert!(matches!(p.validate(), Err(Error::NonTermination(_))));
        // λ_r = 0 is fine when the top set alone reaches the target.
        let p = ConcentrationParams::new(10, 6, 0);
        assert!(p.validate().is_ok());
        assert_eq!(simulate_trial(&p, 0, 0), 1);
    }

    #[test]
    fn lower_bound_holds() {
        let p = ConcentrationParams::new(200, 20, 15);
        let stats = simulate_layer_concentration(&p, 300, &[], 1).unwrap();
        assert_eq!(p.min_layers(), 6);
        assert!(stats.samples.iter().all(|&s| s >= p.min_layers()));
        assert!(stats.mean >= stats.min as f64 && stats.mean <= stats.max as f64);
    }
}
