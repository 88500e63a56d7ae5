//! Quantitative checks of the good-box percolation machinery: the goodness
//! probability q, the per-height child-count law, the generating map F and
//! its fixed point, the binomial concentration bound, the gambler's-ruin
//! barrier probability, and the occupation-time route to upcrossing counts.

use rayon::prelude::*;

use crate::boxes::{height_counts, walk_is_good, GoodnessParams, Rational};
use crate::error::{Error, Result};
use crate::exit_time::psi;
use crate::fine_path::FinePath;
use crate::rng::RngStream;
use crate::stats::{binom_cdf_lt, binom_tail_ge, proportion_se, wilson_interval, Kahan};
use crate::walk::sample_conditioned_walk;

/// Estimate of the probability that one conditioned crossing is (r,c)-good.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct QEstimate {
    pub q_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub trials: u64,
}

pub fn estimate_q(params: &GoodnessParams, trials: u64, rng: &RngStream) -> QEstimate {
    let ck = params.ck();
    let good: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(i);
            let w = sample_conditioned_walk(params.k, &mut r);
            u64::from(walk_is_good(&w, params, ck))
        })
        .sum();
    let (lo, hi) = wilson_interval(good, trials);
    QEstimate {
        q_hat: good as f64 / trials as f64,
        lo,
        hi,
        trials,
    }
}

/// Sampled per-height child counts of conditioned crossings.
///
/// Holds all sampled vectors (flattened) so the generating map can be
/// evaluated against the joint empirical law, not a product of marginals.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EmpiricalChildDist {
    pub trials: u64,
    pub n_heights: usize,
    /// trials * n_heights entries, row-major by trial.
    pub counts: Vec<u16>,
}

impl EmpiricalChildDist {
    pub fn row(&self, i: usize) -> &[u16] {
        &self.counts[i * self.n_heights..(i + 1) * self.n_heights]
    }

    pub fn max_count(&self) -> u16 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Per-height sample means.
    pub fn height_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.n_heights];
        for i in 0..self.trials as usize {
            for (s, &c) in sums.iter_mut().zip(self.row(i)) {
                *s += c as f64;
            }
        }
        sums.iter().map(|s| s / self.trials as f64).collect()
    }
}

pub fn estimate_child_distribution(
    params: &GoodnessParams,
    trials: u64,
    rng: &RngStream,
) -> EmpiricalChildDist {
    let n_heights = params.n_heights();
    let rows: Vec<Vec<u16>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(i);
            let w = sample_conditioned_walk(params.k, &mut r);
            height_counts(&w, params)
                .into_iter()
                .map(|c| c.min(u16::MAX as u32) as u16)
                .collect()
        })
        .collect();
    let mut counts = Vec::with_capacity(trials as usize * n_heights);
    for row in rows {
        counts.extend(row);
    }
    EmpiricalChildDist {
        trials,
        n_heights,
        counts,
    }
}

/// F(t): the expectation over sampled child-count vectors of the product over
/// heights of P[Bin(A_m, t) >= ceil(sK)], binomial tails exact.
pub fn evaluate_f(t: f64, dist: &EmpiricalChildDist, params: &GoodnessParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    let sk = params.sk();
    // tails depend only on the count value; memoize per count
    let max_c = dist.max_count() as u64;
    let tail: Vec<f64> = (0..=max_c).map(|a| binom_tail_ge(a, sk, t)).collect();
    let mut acc = Kahan::new();
    for i in 0..dist.trials as usize {
        let mut prod = 1.0f64;
        for &a in dist.row(i) {
            prod *= tail[a as usize];
            if prod == 0.0 {
                break;
            }
        }
        acc.add(prod);
    }
    Ok(acc.total() / dist.trials as f64)
}

/// The iterated survival sequence alpha_1, alpha_2, ... with
/// alpha_1 = F(1) = empirical P[(r, s)-good].
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SurvivalCurve {
    pub alphas: Vec<f64>,
    pub limit: f64,
    pub fixed_point_residual: f64,
    /// Whether F(t) > 3/4 throughout (3/4, 1] on a 100-point grid, the regime
    /// in which the iteration provably stays above 3/4.
    pub regime_holds: bool,
}

pub fn iterate_alpha(
    dist: &EmpiricalChildDist,
    params: &GoodnessParams,
    n_max: usize,
) -> Result<SurvivalCurve> {
    let mut alphas = Vec::with_capacity(n_max);
    let mut a = evaluate_f(1.0, dist, params)?; // alpha_1
    alphas.push(a);
    for _ in 1..n_max {
        a = evaluate_f(a, dist, params)?;
        alphas.push(a);
    }
    // continue to the fixed point
    let mut limit = a;
    for _ in 0..20_000 {
        let next = evaluate_f(limit, dist, params)?;
        let delta = (next - limit).abs();
        limit = next;
        if delta < 1e-13 {
            break;
        }
    }
    let fixed_point_residual = (evaluate_f(limit, dist, params)? - limit).abs();
    let mut regime_holds = true;
    for i in 1..=100 {
        let t = 0.75 + 0.25 * i as f64 / 100.0;
        if evaluate_f(t, dist, params)? <= 0.75 {
            regime_holds = false;
            break;
        }
    }
    Ok(SurvivalCurve {
        alphas,
        limit,
        fixed_point_residual,
        regime_holds,
    })
}

/// Exact binomial lower tail vs the concentration bound
/// exp(cK/2 * log(4 t (1 - t))).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct BinomialBoundCheck {
    pub exact: f64,
    pub bound: f64,
}

pub fn binomial_bound_check(ck: u64, sk: u64, t: f64) -> Result<BinomialBoundCheck> {
    if !(t > 0.75 && t < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "t = {t} outside the bound's domain (3/4, 1)"
        )));
    }
    if sk > ck {
        return Err(Error::InvalidParameter("need sK <= cK".into()));
    }
    let exact = binom_cdf_lt(ck, sk, t);
    let bound = (0.5 * ck as f64 * (4.0 * t * (1.0 - t)).ln()).exp();
    Ok(BinomialBoundCheck { exact, bound })
}

/// Gambler's-ruin estimate of P[hit +1 before -3r] with target 3r/(1+3r).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct GamblersRuin {
    pub p_hat: f64,
    pub target: f64,
    pub se: f64,
    pub trials: u64,
}

pub fn gamblers_ruin_check(r: Rational, trials: u64, rng: &RngStream) -> Result<GamblersRuin> {
    if r.num == 0 {
        return Err(Error::InvalidParameter("r must be positive".into()));
    }
    // Grid 1/den contains both barriers exactly: +1 is den steps, -3r is 3*num.
    let up = r.den as i64;
    let down = -(3 * r.num as i64);
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rr = rng.substream(i);
            let mut x = 0i64;
            loop {
                x += if rr.next_bool(0.5) { 1 } else { -1 };
                if x == up {
                    return 1u64;
                }
                if x == down {
                    return 0u64;
                }
            }
        })
        .sum();
    let p_hat = hits as f64 / trials as f64;
    let three_r = 3.0 * r.as_f64();
    Ok(GamblersRuin {
        p_hat,
        target: three_r / (1.0 + three_r),
        se: proportion_se(hits, trials),
        trials,
    })
}

/// Occupation profile of one path before it first reaches level 1: the time
/// spent in each band of width `band_width` across `[y_lo, y_hi]`, and the
/// implied local-time estimates occupation / band width.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct OccupationProfile {
    pub y_lo: f64,
    pub band_width: f64,
    pub occupations: Vec<f64>,
    pub total_time: f64,
}

impl OccupationProfile {
    pub fn local_time_estimates(&self) -> Vec<f64> {
        self.occupations.iter().map(|o| o / self.band_width).collect()
    }

    pub fn min_local_time(&self) -> f64 {
        self.local_time_estimates()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Occupation profile of `path` (run until its first visit to 1; errors if it
/// never gets there). Bands partition [y_lo, y_hi].
pub fn occupation_profile(
    path: &FinePath,
    y_lo: f64,
    y_hi: f64,
    band_width: f64,
) -> Result<OccupationProfile> {
    if path.values.len() < 2 {
        return Err(Error::EmptyPath);
    }
    let hit = path
        .values
        .iter()
        .position(|&v| v >= 1.0)
        .ok_or(Error::TargetNotReached {
            steps: path.values.len() as u64,
        })?;
    let n_bands = ((y_hi - y_lo) / band_width).round().max(1.0) as usize;
    let mut occ = vec![0.0f64; n_bands];
    let mut total = 0.0;
    for i in 0..hit {
        total += path.h;
        let v = path.values[i];
        if v >= y_lo && v < y_lo + n_bands as f64 * band_width {
            occ[((v - y_lo) / band_width) as usize] += path.h;
        }
    }
    Ok(OccupationProfile {
        y_lo,
        band_width,
        occupations: occ,
        total_time: total,
    })
}

/// Monte Carlo scan over thresholds delta of
/// P[min local time over [-3r, 1-r] before hitting 1 < delta].
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LocalTimeScan {
    pub deltas: Vec<f64>,
    pub prob_below: Vec<f64>,
    pub se: Vec<f64>,
    pub trials: u64,
    /// Largest scanned delta whose estimated probability stays below 1/6,
    /// if any: the working witness for the band's local-time floor.
    pub delta_star: Option<f64>,
}

pub fn local_time_scan(
    r: f64,
    band_width: f64,
    h: f64,
    max_steps: u64,
    deltas: &[f64],
    trials: u64,
    rng: &RngStream,
) -> Result<LocalTimeScan> {
    let y_lo = -3.0 * r;
    let y_hi = 1.0 - r;
    let mins: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rr = rng.substream(i);
            // run until the path reaches 1 (no lower barrier here)
            let mut values = Vec::with_capacity(1 << 16);
            let sd = h.sqrt();
            let mut x = 0.0f64;
            values.push(x);
            for _ in 0..max_steps {
                x += sd * rr.next_gaussian();
                values.push(x);
                if x >= 1.0 {
                    break;
                }
            }
            let p = FinePath { h, values };
            occupation_profile(&p, y_lo, y_hi, band_width)
                .map(|prof| prof.min_local_time())
                .unwrap_or(f64::NAN)
        })
        .collect();
    let ok: Vec<f64> = mins.iter().copied().filter(|m| m.is_finite()).collect();
    if ok.len() < trials as usize / 2 {
        return Err(Error::TargetNotReached { steps: max_steps });
    }
    let n = ok.len() as u64;
    let mut prob = Vec::with_capacity(deltas.len());
    let mut se = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let below = ok.iter().filter(|&&m| m < d).count() as u64;
        prob.push(below as f64 / n as f64);
        se.push(proportion_se(below, n));
    }
    let delta_star = deltas
        .iter()
        .zip(&prob)
        .filter(|(_, &p)| p < 1.0 / 6.0)
        .map(|(&d, _)| d)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a: f64| a.max(d))));
    Ok(LocalTimeScan {
        deltas: deltas.to_vec(),
        prob_below: prob,
        se,
        trials: n,
        delta_star,
    })
}

/// Outcome of the "enough upcrossings before too much occupation" event
/// check: empirical failure frequency vs (1+2r) K exp(-K (delta lambda - 4 c psi(lambda))).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct OccupationEventReport {
    pub failure_freq: f64,
    pub se: f64,
    pub bound: f64,
    pub exponent: f64,
    /// True when 4 c psi(lambda) < delta lambda (the bound decays).
    pub regime_ok: bool,
    pub trials: u64,
    pub unresolved: u64,
}

/// For every height m, watch whether the path completes ceil(cK) upcrossings
/// of its subinterval before accumulating delta/K units of occupation there.
/// The event fails if any height gets its occupation first.
#[allow(clippy::too_many_arguments)]
pub fn upcrossings_vs_occupation_check(
    params: &GoodnessParams,
    delta: f64,
    lambda: f64,
    h: f64,
    max_steps: u64,
    trials: u64,
    rng: &RngStream,
) -> Result<OccupationEventReport> {
    if delta <= 0.0 || lambda <= 0.0 {
        return Err(Error::InvalidParameter("delta and lambda must be positive".into()));
    }
    let psi_l = psi(lambda).ok_or_else(|| {
        Error::InvalidParameter(format!("lambda = {lambda} is at or past the MGF singularity"))
    })?;
    let k = params.k as f64;
    let exponent = -k * (delta * lambda - 4.0 * params.c * psi_l);
    let bound = (1.0 + 2.0 * params.r()) * k * exponent.exp();
    let ck = params.ck() as u32;
    let budget = delta / k;
    let m_min = params.m_min();
    let n_heights = params.n_heights();

    #[derive(Clone, Copy, PartialEq)]
    enum HState {
        Pending,
        Ok,
        Failed,
    }

    let outcomes: Vec<i8> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rr = rng.substream(i);
            let sd = h.sqrt();
            let mut occ = vec![0.0f64; n_heights];
            let mut ups = vec![0u32; n_heights];
            // armed[m]: last extreme was at/below the bottom of interval m
            let mut armed = vec![true; n_heights];
            let mut state = vec![HState::Pending; n_heights];
            let mut pending = n_heights;
            let mut x = 0.0f64;
            for _ in 0..max_steps {
                x += sd * rr.next_gaussian();
                let pos = x * k; // position in fine-grid units
                for mi in 0..n_heights {
                    if state[mi] != HState::Pending {
                        continue;
                    }
                    let lo = (m_min + mi as i64) as f64;
                    let hi = lo + 1.0;
                    if pos > lo && pos < hi {
                        occ[mi] += h;
                        if occ[mi] >= budget {
                            state[mi] = HState::Failed;
                            pending -= 1;
                        }
                    } else if pos <= lo {
                        armed[mi] = true;
                    } else if pos >= hi {
                        if armed[mi] {
                            ups[mi] += 1;
                            armed[mi] = false;
                            if ups[mi] >= ck {
                                state[mi] = HState::Ok;
                                pending -= 1;
                            }
                        }
                    }
                }
                if pending == 0 {
                    break;
                }
            }
            if pending > 0 {
                -1 // unresolved within the horizon
            } else if state.iter().any(|&s| s == HState::Failed) {
                1
            } else {
                0
            }
        })
        .collect();

    let unresolved = outcomes.iter().filter(|&&o| o == -1).count() as u64;
    let resolved = trials - unresolved;
    let failures = outcomes.iter().filter(|&&o| o == 1).count() as u64;
    if resolved == 0 {
        return Err(Error::TargetNotReached { steps: max_steps });
    }
    Ok(OccupationEventReport {
        failure_freq: failures as f64 / resolved as f64,
        se: proportion_se(failures, resolved),
        bound,
        exponent,
        regime_ok: exponent < 0.0,
        trials: resolved,
        unresolved,
    })
}
