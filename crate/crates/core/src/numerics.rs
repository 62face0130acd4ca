//! Scalar primitives: binary entropy, photon-number laws, truncated series and
//! the fiber loss relation.

use crate::error::{Error, Result};

/// Values this far outside `[0, 1]` are treated as rounding noise and clamped.
pub const PROBABILITY_SLACK: f64 = 1e-12;

/// Relative size of the analytic tail bound at which series are truncated.
pub const SERIES_REL_TOL: f64 = 1e-15;

/// Absolute floor for the series tail bound, for sums whose terms all vanish.
const SERIES_ABS_FLOOR: f64 = 1e-30;

/// Hard cap on series length; only reached for pathological thermal means.
const SERIES_MAX_TERMS: u32 = 2_000_000;

/// Above this photon number pmf terms are evaluated in log space.
const LOG_SPACE_FROM: u32 = 30;

/// A dimensionless probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, serde::Serialize)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    /// Validates `value`, clamping excursions up to [`PROBABILITY_SLACK`].
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::domain("probability", value, "[0, 1]"));
        }
        if (0.0..=1.0).contains(&value) {
            return Ok(Probability(value));
        }
        if value > -PROBABILITY_SLACK && value < 1.0 + PROBABILITY_SLACK {
            return Ok(Probability(value.clamp(0.0, 1.0)));
        }
        Err(Error::domain("probability", value, "[0, 1]"))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Self {
        Probability(1.0 - self.0)
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Binary Shannon entropy in bits, with `h(0) = h(1) = 0`.
pub fn binary_entropy(e: Probability) -> f64 {
    let e = e.get();
    if e == 0.0 || e == 1.0 {
        return 0.0;
    }
    -e * e.log2() - (1.0 - e) * (1.0 - e).log2()
}

/// Entropy of an error-rate estimate where anything at or above one half
/// carries no information: `h(min(e, 1/2))`.
pub(crate) fn capped_entropy(e: f64) -> Result<f64> {
    let p = Probability::new(e)?;
    Ok(binary_entropy(Probability(p.get().min(0.5))))
}

/// `ln(n!)`, exact summation for small `n`, Stirling series beyond.
pub fn ln_factorial(n: u32) -> f64 {
    if n <= LOG_SPACE_FROM {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

fn check_mean(mean: f64) -> Result<()> {
    if mean.is_finite() && mean >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain("mean photon number", mean, ">= 0"))
    }
}

/// Poisson probability `e^{-mean} mean^n / n!`.
pub fn poisson_pmf(mean: f64, n: u32) -> Result<f64> {
    check_mean(mean)?;
    Ok(poisson_unchecked(mean, n))
}

fn poisson_unchecked(mean: f64, n: u32) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if n <= LOG_SPACE_FROM {
        let mut p = (-mean).exp();
        for k in 1..=n {
            p *= mean / k as f64;
        }
        p
    } else {
        (n as f64 * mean.ln() - mean - ln_factorial(n)).exp()
    }
}

/// Thermal (Bose-Einstein) probability `mean^n / (1 + mean)^{n+1}`.
pub fn thermal_pmf(mean: f64, n: u32) -> Result<f64> {
    check_mean(mean)?;
    Ok(thermal_unchecked(mean, n))
}

fn thermal_unchecked(mean: f64, n: u32) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let n = n as f64;
    (n * mean.ln() - (n + 1.0) * mean.ln_1p()).exp()
}

/// A photon-number distribution that can be summed term by term with a
/// certified remainder.
pub trait PhotonLaw {
    /// Probability of exactly `n` photons.
    fn pmf(&self, n: u32) -> f64;

    /// Upper bound on `sum_{k > n} pmf(k)`, given `pmf_n = pmf(n)`.
    fn tail_bound(&self, n: u32, pmf_n: f64) -> f64;

    /// `sum_n weight(n) * pmf(n)` for a weight bounded by 1 in magnitude,
    /// truncated once the remaining mass is negligible against the sum.
    fn expectation<W: FnMut(u32) -> f64>(&self, mut weight: W) -> f64
    where
        Self: Sized,
    {
        let mut acc = 0.0;
        for n in 0..SERIES_MAX_TERMS {
            let p = self.pmf(n);
            if p > 0.0 {
                acc += weight(n) * p;
            }
            let rest = self.tail_bound(n, p);
            if rest <= SERIES_REL_TOL * acc.abs() || rest <= SERIES_ABS_FLOOR {
                break;
            }
        }
        acc
    }

    /// Number of terms [`PhotonLaw::expectation`] visits.
    fn series_len(&self) -> u32
    where
        Self: Sized,
    {
        let mut len = 0;
        self.expectation(|_| {
            len += 1;
            1.0
        });
        len
    }
}

/// Probability of more than `v_th` photons, summed from whichever side keeps
/// full relative precision.
pub fn tail_probability<D: PhotonLaw>(law: &D, v_th: u32) -> Probability {
    let cdf: f64 = (0..=v_th).map(|n| law.pmf(n)).sum();
    let tail = if cdf < 0.5 {
        1.0 - cdf
    } else {
        law.expectation(|n| if n > v_th { 1.0 } else { 0.0 })
    };
    Probability(tail.clamp(0.0, 1.0))
}

/// Poissonian photon statistics with the given mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Poisson {
    mean: f64,
}

impl Poisson {
    pub fn new(mean: f64) -> Result<Self> {
        check_mean(mean)?;
        Ok(Poisson { mean })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }
}

impl PhotonLaw for Poisson {
    fn pmf(&self, n: u32) -> f64 {
        poisson_unchecked(self.mean, n)
    }

    fn tail_bound(&self, n: u32, pmf_n: f64) -> f64 {
        if self.mean == 0.0 {
            return 0.0;
        }
        // Ratios of successive terms beyond n+1 are at most mean/(n+2).
        let ratio = self.mean / (n as f64 + 2.0);
        if ratio >= 1.0 {
            return f64::INFINITY;
        }
        pmf_n * self.mean / (n as f64 + 1.0) / (1.0 - ratio)
    }
}

/// Thermal photon statistics with the given mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thermal {
    mean: f64,
}

impl Thermal {
    pub fn new(mean: f64) -> Result<Self> {
        check_mean(mean)?;
        Ok(Thermal { mean })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Common ratio of successive terms, `mean / (1 + mean)`.
    pub fn ratio(&self) -> f64 {
        self.mean / (1.0 + self.mean)
    }
}

impl PhotonLaw for Thermal {
    fn pmf(&self, n: u32) -> f64 {
        thermal_unchecked(self.mean, n)
    }

    fn tail_bound(&self, _n: u32, pmf_n: f64) -> f64 {
        let r = self.ratio();
        pmf_n * r / (1.0 - r)
    }
}

/// Overall transmittance `10^{-alpha d / 10}` of `d` km of fiber.
pub fn distance_to_transmittance(distance_km: f64, alpha_db_per_km: f64) -> Result<f64> {
    if !(distance_km >= 0.0) {
        return Err(Error::domain("distance", distance_km, ">= 0 km"));
    }
    if !(alpha_db_per_km > 0.0) {
        return Err(Error::domain("fiber loss", alpha_db_per_km, "> 0 dB/km"));
    }
    Ok(10f64.powf(-alpha_db_per_km * distance_km / 10.0))
}

/// Inverse of [`distance_to_transmittance`].
pub fn transmittance_to_distance(eta: f64, alpha_db_per_km: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::domain("transmittance", eta, "(0, 1]"));
    }
    if !(alpha_db_per_km > 0.0) {
        return Err(Error::domain("fiber loss", alpha_db_per_km, "> 0 dB/km"));
    }
    Ok(-10.0 * eta.log10() / alpha_db_per_km)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(x: f64) -> Probability {
        Probability::new(x).unwrap()
    }

    #[test]
    fn entropy_reference_values() {
        assert_eq!(binary_entropy(p(0.5)), 1.0);
        assert_eq!(binary_entropy(p(0.0)), 0.0);
        assert_eq!(binary_entropy(p(1.0)), 0.0);
        // 0.11 evaluated with 50-digit arithmetic (mpmath).
        assert_relative_eq!(
            binary_entropy(p(0.11)),
            0.499_915_958_164_528_0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn probability_clamps_noise_and_rejects_violations() {
        assert_eq!(p(1.0 + 1e-13).get(), 1.0);
        assert_eq!(p(-1e-13).get(), 0.0);
        assert!(Probability::new(1.0 + 1e-9).is_err());
        assert!(Probability::new(-0.1).is_err());
        assert!(Probability::new(f64::NAN).is_err());
    }

    #[test]
    fn capped_entropy_saturates_above_half() {
        assert_eq!(capped_entropy(0.7).unwrap(), 1.0);
        assert_eq!(capped_entropy(0.5).unwrap(), 1.0);
        assert!(capped_entropy(1.5).is_err());
    }

    #[test]
    fn poisson_reference_values() {
        assert_eq!(poisson_pmf(0.0, 0).unwrap(), 1.0);
        assert_eq!(poisson_pmf(0.0, 3).unwrap(), 0.0);
        assert_relative_eq!(poisson_pmf(0.64, 0).unwrap(), (-0.64f64).exp());
        assert_relative_eq!(poisson_pmf(0.64, 0).unwrap(), 0.527_292_424_043_048_9, max_relative = 1e-15);
        assert!(poisson_pmf(-1.0, 0).is_err());
    }

    #[test]
    fn poisson_log_space_matches_product_form() {
        // 40 terms with exact products, compared against the Stirling branch.
        let mean = 37.5f64;
        let mut direct = (-mean).exp();
        for k in 1..=40 {
            direct *= mean / k as f64;
        }
        assert_relative_eq!(poisson_pmf(mean, 40).unwrap(), direct, max_relative = 1e-13);
        // Large packets must not overflow.
        assert!(poisson_pmf(128.0, 200).unwrap().is_finite());
    }

    #[test]
    fn ln_factorial_branches_agree() {
        let exact: f64 = (2..=31).map(|k| (k as f64).ln()).sum();
        assert_relative_eq!(ln_factorial(31), exact, max_relative = 1e-15);
    }

    #[test]
    fn thermal_reference_values() {
        assert_eq!(thermal_pmf(0.0, 0).unwrap(), 1.0);
        assert_eq!(thermal_pmf(1.0, 0).unwrap(), 0.5);
        assert_relative_eq!(
            thermal_pmf(0.64, 2).unwrap(),
            0.64f64.powi(2) / 1.64f64.powi(3),
            max_relative = 1e-14
        );
        assert_relative_eq!(thermal_pmf(0.64, 2).unwrap(), 0.092_859_941_091_974_87, max_relative = 1e-13);
        assert!(thermal_pmf(-0.5, 1).is_err());
    }

    #[test]
    fn tail_probability_cases() {
        let vacuum = Poisson::new(0.0).unwrap();
        for v in 0..5 {
            assert_eq!(tail_probability(&vacuum, v).get(), 0.0);
        }
        let m = 0.64;
        let law = Poisson::new(m).unwrap();
        assert_relative_eq!(tail_probability(&law, 0).get(), 1.0 - (-m).exp(), max_relative = 1e-14);
        let thermal = Thermal::new(1.0).unwrap();
        assert_relative_eq!(tail_probability(&thermal, 1).get(), 0.25, max_relative = 1e-14);
    }

    #[test]
    fn tail_probability_keeps_precision_far_out() {
        // P(n > 10) for mean 0.1 is ~ 0.1^11/11! and must not be lost to 1 - cdf.
        let law = Poisson::new(0.1).unwrap();
        let brute: f64 = (11..40).map(|n| law.pmf(n)).sum();
        assert!(brute < 1e-17);
        assert_relative_eq!(tail_probability(&law, 10).get(), brute, max_relative = 1e-12);
    }

    #[test]
    fn transmittance_reference_values() {
        assert_eq!(distance_to_transmittance(0.0, 0.2).unwrap(), 1.0);
        assert_relative_eq!(distance_to_transmittance(100.0, 0.2).unwrap(), 0.01, max_relative = 1e-14);
        assert_relative_eq!(
            distance_to_transmittance(128.0, 0.2).unwrap(),
            2.754_228_703_338_166e-3,
            max_relative = 1e-12
        );
        assert!(distance_to_transmittance(-1.0, 0.2).is_err());
        assert!(transmittance_to_distance(0.0, 0.2).is_err());
    }

    proptest! {
        #[test]
        fn entropy_is_symmetric(e in 0.0f64..=1.0) {
            let a = binary_entropy(p(e));
            let b = binary_entropy(p(1.0 - e));
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn pmfs_normalise(mean in 0.0f64..150.0) {
            let pois = Poisson::new(mean).unwrap().expectation(|_| 1.0);
            let therm = Thermal::new(mean).unwrap().expectation(|_| 1.0);
            prop_assert!((pois - 1.0).abs() <= 1e-9, "poisson mass {}", pois);
            prop_assert!((therm - 1.0).abs() <= 1e-9, "thermal mass {}", therm);
        }

        #[test]
        fn tail_monotone(mean in 0.0f64..20.0, dm in 0.0f64..5.0, v in 0u32..30) {
            let a = Poisson::new(mean).unwrap();
            let b = Poisson::new(mean + dm).unwrap();
            prop_assert!(tail_probability(&a, v + 1).get() <= tail_probability(&a, v).get());
            prop_assert!(tail_probability(&a, v).get() <= tail_probability(&b, v).get() + 1e-15);
            let t = Thermal::new(mean).unwrap();
            prop_assert!(tail_probability(&t, v + 1).get() <= tail_probability(&t, v).get());
        }

        #[test]
        fn distance_round_trip(d in 0.0f64..500.0, alpha in 0.05f64..1.0) {
            let eta = distance_to_transmittance(d, alpha).unwrap();
            let back = transmittance_to_distance(eta, alpha).unwrap();
            let eta2 = distance_to_transmittance(back, alpha).unwrap();
            prop_assert!(((eta2 - eta) / eta).abs() <= 1e-9);
        }
    }
}
