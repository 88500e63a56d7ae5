//! Exact sampling of the exit time of standard Brownian motion from (-1, 1)
//! started at 0, written `sigma_1` throughout.
//!
//! The survival function P[sigma_1 > t] has two classical alternating-series
//! representations: an eigenfunction expansion that converges fast for large
//! t and a reflection (image) expansion that converges fast for small t.
//! Sampling is inverse-CDF with bisection, so duration statistics carry no
//! fine-walk discretization bias.
//!
//! Closed forms used as oracles elsewhere: E[sigma_1] = 1 and
//! E[exp(lambda sigma_1)] = 1 / cos(sqrt(2 lambda)) for lambda < pi^2 / 8.

use crate::rng::RngStream;

const SERIES_TERMS: usize = 200; // cap; alternating tails break out early
const CROSSOVER_T: f64 = 0.30;

/// P[sigma_1 > t].
pub fn survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < CROSSOVER_T {
        survival_images(t)
    } else {
        survival_spectral(t)
    }
}

/// Eigenfunction series: (4/pi) sum_k (-1)^k /(2k+1) exp(-(2k+1)^2 pi^2 t/8).
fn survival_spectral(t: f64) -> f64 {
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 0..SERIES_TERMS {
        let m = (2 * k + 1) as f64;
        let term = (-(m * m) * std::f64::consts::PI * std::f64::consts::PI * t / 8.0).exp() / m;
        sum += sign * term;
        sign = -sign;
        if term < 1e-18 {
            break;
        }
    }
    (4.0 / std::f64::consts::PI * sum).clamp(0.0, 1.0)
}

/// Image series: 1 + 4 sum_{k>=1} (-1)^k Phi_c((2k-1)/sqrt(t)).
fn survival_images(t: f64) -> f64 {
    let a = 1.0 / t.sqrt();
    let mut sum = 0.0;
    let mut sign = -1.0;
    for k in 1..=SERIES_TERMS {
        let term = normal_sf((2 * k - 1) as f64 * a);
        sum += sign * term;
        sign = -sign;
        if term < 1e-20 {
            break;
        }
    }
    (1.0 + 4.0 * sum).clamp(0.0, 1.0)
}

/// Upper normal tail Phi_c(x) for x >= 0, via erfc-free evaluation:
/// series for moderate x, Mills-ratio continued fraction for the far tail.
pub fn normal_sf(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if x > 3.0 {
        // Phi_c(x) = phi(x) / (x + 1/(x + 2/(x + 3/(x + ...))))
        let mut f = 0.0;
        for n in (1..=60).rev() {
            f = n as f64 / (x + f);
        }
        phi / (x + f)
    } else {
        // Phi_c(x) = 1/2 - phi(x) * sum_{n>=0} x^{2n+1} / (1*3*...*(2n+1))
        let mut term = x;
        let mut sum = x;
        let mut n = 1.0;
        while term.abs() > 1e-18 {
            term *= x * x / (2.0 * n + 1.0);
            sum += term;
            n += 1.0;
            if n > 200.0 {
                break;
            }
        }
        0.5 - phi * sum
    }
}

/// Inverse-CDF draw of sigma_1: solve survival(t) = u by bisection.
pub fn sample_exit_time(rng: &mut RngStream) -> f64 {
    let u = rng.next_f64();
    invert_survival(u)
}

/// The t with P[sigma_1 > t] = u, bisected to an interval below 1e-12.
pub fn invert_survival(u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0);
    let mut lo = 1e-4_f64; // survival(1e-4) = 1 - O(1e-4300)
    let mut hi = 35.0_f64; // survival(35) < 2^-53
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if survival(mid) > u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest admissible exponent: the MGF blows up at pi^2/8.
pub const LAMBDA_MAX: f64 = std::f64::consts::PI * std::f64::consts::PI / 8.0;

/// E[exp(lambda sigma_1)] = 1 / cos(sqrt(2 lambda)), lambda < pi^2/8.
pub fn exit_time_mgf(lambda: f64) -> Option<f64> {
    if lambda >= LAMBDA_MAX {
        return None;
    }
    if lambda <= 0.0 {
        // also valid for lambda <= 0 via cosh
        return Some(1.0 / (2.0 * (-lambda)).sqrt().cosh());
    }
    Some(1.0 / (2.0 * lambda).sqrt().cos())
}

/// psi(lambda) = log E[exp(lambda sigma_1)].
pub fn psi(lambda: f64) -> Option<f64> {
    exit_time_mgf(lambda).map(|m| m.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_agree_at_crossover() {
        for i in 0..40 {
            let t = 0.06 + 0.01 * i as f64;
            let a = survival_images(t);
            let b = survival_spectral(t);
            assert!((a - b).abs() < 1e-12, "t={t}: images={a} spectral={b}");
        }
    }

    #[test]
    fn survival_is_monotone_and_bounded() {
        let mut prev = 1.0;
        for i in 1..=300 {
            let t = i as f64 * 0.05;
            let s = survival(t);
            assert!(s <= prev + 1e-15);
            assert!((0.0..=1.0).contains(&s));
            prev = s;
        }
    }

    #[test]
    fn mean_via_quadrature_is_one() {
        // E[sigma_1] = int_0^inf survival(t) dt = 1; Simpson on [0, 35].
        let n = 7000;
        let h = 35.0 / n as f64;
        let mut acc = survival(0.0) + survival(35.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * survival(i as f64 * h);
        }
        let integral = acc * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-8, "integral = {integral}");
    }

    #[test]
    fn mgf_via_quadrature_matches_closed_form() {
        // E[e^{l s}] = 1 + l * int_0^inf e^{l t} survival(t) dt
        for &lambda in &[0.05_f64, 0.1, 0.2] {
            let n = 14000;
            let upper = 40.0;
            let h = upper / n as f64;
            let f = |t: f64| (lambda * t).exp() * survival(t);
            let mut acc = f(0.0) + f(upper);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(i as f64 * h);
            }
            let integral = acc * h / 3.0;
            let mgf = 1.0 + lambda * integral;
            let closed = exit_time_mgf(lambda).unwrap();
            assert!(
                (mgf - closed).abs() / closed < 1e-7,
                "lambda={lambda}: quadrature {mgf} vs closed {closed}"
            );
        }
    }

    #[test]
    fn sampler_mean_within_three_se() {
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let s = sample_exit_time(&mut rng);
            assert!(s > 0.0);
            sum += s;
            sq += s * s;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn sampler_mgf_matches_closed_form() {
        let mut rng = RngStream::new(13);
        let n = 100_000;
        let lambda = 0.1;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += (lambda * sample_exit_time(&mut rng)).exp();
        }
        let emp = sum / n as f64;
        let target = exit_time_mgf(lambda).unwrap();
        assert!(
            (emp - target).abs() / target < 0.01,
            "empirical {emp} vs {target}"
        );
    }

    #[test]
    fn mgf_domain_edge() {
        assert!(exit_time_mgf(LAMBDA_MAX).is_none());
        assert!(exit_time_mgf(LAMBDA_MAX - 1e-6).is_some());
        assert!((exit_time_mgf(0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_sf_reference_values() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-15);
        // Phi_c(1) = 0.15865525393145707
        assert!((normal_sf(1.0) - 0.15865525393145707).abs() < 1e-13);
        // Phi_c(5) = 2.866515718791939e-7
        assert!((normal_sf(5.0) - 2.866515718791939e-7).abs() < 1e-18);
    }
}
