//! Level sets of sampled paths, dyadic interval covers, and the excursion
//! statistics that control detour heights.
//!
//! The covered object is the projection of the graph's intersection with a
//! horizontal line, recorded at grid resolution as maximal clusters of
//! straddling cells. Covers are built by excursion thresholding: gaps away
//! from the level that last at least delta split the level set into
//! stretches, each wrapped in an interval with dyadic endpoints snapped
//! outward into level-set-free gaps. The first delta in a descending
//! schedule whose intervals satisfy the two size conditions wins; a run out
//! of schedule is reported as data, not an error, since feasibility for all
//! k is a property of the continuum object only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fine_path::{sample_bridge, sample_excursion, FinePath};
use crate::rng::RngStream;
use crate::stats::{ks_two_sample, proportion_se, wilson_interval};

/// Level set of a sampled path at height y, at the path's own resolution.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LevelSetSample {
    pub y: f64,
    pub h: f64,
    pub horizon: f64,
    /// Maximal runs of straddling cells, as closed time intervals.
    pub clusters: Vec<(f64, f64)>,
}

/// All grid cells where the path straddles the level (sign change or touch),
/// merged into maximal clusters.
pub fn extract_level_set(path: &FinePath, y: f64) -> LevelSetSample {
    let h = path.h;
    let mut clusters: Vec<(f64, f64)> = Vec::new();
    let mut run_start: Option<usize> = None;
    let n = path.values.len() - 1;
    for i in 0..n {
        let straddle = (path.values[i] - y) * (path.values[i + 1] - y) <= 0.0;
        match (straddle, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                clusters.push((s as f64 * h, i as f64 * h));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        clusters.push((s as f64 * h, n as f64 * h));
    }
    LevelSetSample {
        y,
        h,
        horizon: path.horizon(),
        clusters,
    }
}

/// One cover interval; endpoints are dyadic multiples of the horizon, open
/// unless pinned to the domain boundary.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct CoverInterval {
    pub a: f64,
    pub b: f64,
    pub closed_left: bool,
    pub closed_right: bool,
}

impl CoverInterval {
    pub fn len(&self) -> f64 {
        self.b - self.a
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CoverFamily {
    pub k: u32,
    /// Gap threshold that produced the accepted cover.
    pub delta: f64,
    pub intervals: Vec<CoverInterval>,
    pub sum_sqrt: f64,
    pub max_len: f64,
}

/// Structured infeasibility data: the best attempt over the schedule.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct InfeasibleReport {
    pub k: u32,
    pub best_sum_sqrt: f64,
    pub best_max_len: f64,
    pub deltas_tried: usize,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub enum CoverOutcome {
    Feasible(CoverFamily),
    Infeasible(InfeasibleReport),
}

impl CoverOutcome {
    pub fn feasible(&self) -> Option<&CoverFamily> {
        match self {
            CoverOutcome::Feasible(c) => Some(c),
            CoverOutcome::Infeasible(_) => None,
        }
    }
}

/// Largest dyadic multiple of `horizon` strictly below x and strictly above
/// lo, tight at `depth`, refining locally up to `cap` when the gap is too
/// narrow for the working grid.
fn dyadic_below(x: f64, lo: f64, horizon: f64, depth: u32, cap: u32) -> Option<f64> {
    for d in depth..=cap.max(depth) {
        let unit = horizon / (1u64 << d) as f64;
        let mut j = (x / unit).ceil() - 1.0;
        while j * unit >= x {
            j -= 1.0;
        }
        let p = j * unit;
        if p > lo && p >= 0.0 {
            return Some(p);
        }
    }
    None
}

/// Smallest dyadic multiple of `horizon` strictly above x and strictly below
/// hi, tight at `depth`, refining up to `cap`.
fn dyadic_above(x: f64, hi: f64, horizon: f64, depth: u32, cap: u32) -> Option<f64> {
    for d in depth..=cap.max(depth) {
        let unit = horizon / (1u64 << d) as f64;
        let mut j = (x / unit).floor() + 1.0;
        while j * unit <= x {
            j += 1.0;
        }
        let p = j * unit;
        if p < hi {
            return Some(p);
        }
    }
    None
}

pub const DEFAULT_SNAP_DEPTH_CAP: u32 = 24;

/// Build a cover for the given k by descending-delta excursion thresholding.
pub fn build_cover(ls: &LevelSetSample, k: u32, dyadic_depth: u32) -> Result<CoverOutcome> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if ls.clusters.is_empty() {
        return Ok(CoverOutcome::Feasible(CoverFamily {
            k,
            delta: 0.0,
            intervals: Vec::new(),
            sum_sqrt: 0.0,
            max_len: 0.0,
        }));
    }
    let depth_cap = dyadic_depth.max(DEFAULT_SNAP_DEPTH_CAP);
    let span = ls.clusters.last().unwrap().1 - ls.clusters[0].0;
    let mut best: Option<(f64, f64)> = None; // (sum_sqrt, max_len)
    let mut tried = 0usize;
    let mut delta = span.max(ls.h);
    while delta >= 0.5 * ls.h {
        tried += 1;
        if let Some(cover) = try_delta(ls, k, delta, dyadic_depth, depth_cap) {
            let feasible = cover.max_len < 1.0 / k as f64 && cover.sum_sqrt < 1.0 / k as f64;
            if feasible {
                return Ok(CoverOutcome::Feasible(cover));
            }
            best = Some(match best {
                None => (cover.sum_sqrt, cover.max_len),
                Some((s, m)) => (s.min(cover.sum_sqrt), m.min(cover.max_len)),
            });
        }
        delta *= 0.5;
    }
    let (best_sum_sqrt, best_max_len) = best.unwrap_or((f64::INFINITY, f64::INFINITY));
    Ok(CoverOutcome::Infeasible(InfeasibleReport {
        k,
        best_sum_sqrt,
        best_max_len,
        deltas_tried: tried,
    }))
}

fn try_delta(
    ls: &LevelSetSample,
    k: u32,
    delta: f64,
    dyadic_depth: u32,
    depth_cap: u32,
) -> Option<CoverFamily> {
    // stretches: maximal runs of clusters with gaps below delta
    let mut stretches: Vec<(f64, f64)> = Vec::new();
    let mut cur = ls.clusters[0];
    for &(s, e) in &ls.clusters[1..] {
        if s - cur.1 >= delta {
            stretches.push(cur);
            cur = (s, e);
        } else {
            cur.1 = e;
        }
    }
    stretches.push(cur);

    let t = ls.horizon;
    let m = stretches.len();
    let mut intervals = Vec::with_capacity(m);
    for (i, &(s, e)) in stretches.iter().enumerate() {
        // left endpoint
        let (a, closed_left) = if s <= 0.0 {
            (0.0, true)
        } else {
            let lo = if i == 0 { -1.0 } else { stretches[i - 1].1 };
            match dyadic_below(s, lo, t, dyadic_depth, depth_cap) {
                Some(p) => (p, false),
                None if i == 0 => (0.0, false), // 0 itself is outside the set here
                None => return None,
            }
        };
        // right endpoint
        let (b, closed_right) = if e >= t {
            (t, true)
        } else {
            let hi = if i + 1 == m { t + 1.0 } else { stretches[i + 1].0 };
            match dyadic_above(e, hi, t, dyadic_depth, depth_cap) {
                Some(p) => (p.min(t), false),
                None if i + 1 == m => (t, false),
                None => return None,
            }
        };
        intervals.push(CoverInterval {
            a,
            b,
            closed_left,
            closed_right,
        });
    }
    // snapped endpoints must stay disjoint
    for w in intervals.windows(2) {
        if w[1].a < w[0].b {
            return None;
        }
    }
    let sum_sqrt = intervals.iter().map(|u| u.len().sqrt()).sum();
    let max_len = intervals.iter().map(CoverInterval::len).fold(0.0, f64::max);
    Some(CoverFamily {
        k,
        delta,
        intervals,
        sum_sqrt,
        max_len,
    })
}

/// Soundness of a cover against its level set: disjointness, coverage and
/// the two size conditions.
pub fn validate_cover(cover: &CoverFamily, ls: &LevelSetSample) -> Result<()> {
    let inv = 1.0 / cover.k as f64;
    for w in cover.intervals.windows(2) {
        if w[1].a < w[0].b {
            return Err(Error::Format("cover intervals overlap".into()));
        }
    }
    for u in &cover.intervals {
        if !(u.len() < inv) {
            return Err(Error::Format(format!("interval length {} >= 1/k", u.len())));
        }
    }
    let sum: f64 = cover.intervals.iter().map(|u| u.len().sqrt()).sum();
    if !cover.intervals.is_empty() && !(sum < inv) {
        return Err(Error::Format(format!("sqrt-sum {sum} >= 1/k")));
    }
    'clusters: for &(s, e) in &ls.clusters {
        for u in &cover.intervals {
            let left_ok = u.a < s || (u.closed_left && u.a <= s);
            let right_ok = e < u.b || (u.closed_right && e <= u.b);
            if left_ok && right_ok {
                continue 'clusters;
            }
        }
        return Err(Error::Format(format!("cluster ({s}, {e}) not covered")));
    }
    Ok(())
}

/// Per-interval excursion maxima and their sum.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CrossingStats {
    /// For each interval: (a*, b*, M) where [a*, b*] spans the clusters
    /// inside the interval and M is the max of |path - y| on it; M = 0 for
    /// intervals that miss the level set.
    pub spans: Vec<(f64, f64, f64)>,
    pub s_k: f64,
}

pub fn crossing_stats(cover: &CoverFamily, path: &FinePath, ls: &LevelSetSample) -> CrossingStats {
    let h = path.h;
    let spans: Vec<(f64, f64, f64)> = cover
        .intervals
        .iter()
        .map(|u| {
            let mut a_star = f64::INFINITY;
            let mut b_star = f64::NEG_INFINITY;
            for &(s, e) in &ls.clusters {
                let inside_left = u.a < s || (u.closed_left && u.a <= s);
                let inside_right = e < u.b || (u.closed_right && e <= u.b);
                if inside_left && inside_right {
                    a_star = a_star.min(s);
                    b_star = b_star.max(e);
                }
            }
            if !a_star.is_finite() {
                return (0.0, 0.0, 0.0);
            }
            let i0 = (a_star / h).floor().max(0.0) as usize;
            let i1 = ((b_star / h).ceil() as usize).min(path.values.len() - 1);
            let mut m = 0.0f64;
            for i in i0..=i1 {
                m = m.max((path.values[i] - ls.y).abs());
            }
            (a_star, b_star, m)
        })
        .collect();
    let s_k = spans.iter().map(|s| s.2).sum();
    CrossingStats { spans, s_k }
}

/// Exact CDF of the maximum of a positive excursion of length `l`.
///
/// Large arguments use the alternating theta series, small arguments its
/// Poisson-dual, so both tails are computed without cancellation.
pub fn excursion_max_cdf(x: f64, l: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let w = x / l.sqrt();
    if w >= 0.8 {
        let mut sum = 0.0;
        for k in 1..=64 {
            let kf = k as f64;
            let e = (-2.0 * kf * kf * w * w).exp();
            sum += (4.0 * kf * kf * w * w - 1.0) * e;
            if e < 1e-19 {
                break;
            }
        }
        (1.0 - 2.0 * sum).clamp(0.0, 1.0)
    } else {
        let pi = std::f64::consts::PI;
        let coef = 2.0 * pi * pi * (pi / 2.0).sqrt() / (w * w * w);
        let mut sum = 0.0;
        for k in 1..=64 {
            let kf = k as f64;
            let e = (-pi * pi * kf * kf / (2.0 * w * w)).exp();
            sum += kf * kf * e;
            if e < 1e-300 {
                break;
            }
        }
        (coef * sum).clamp(0.0, 1.0)
    }
}

/// Inverse-CDF draw of the excursion maximum for length `l`.
pub fn sample_excursion_max(l: f64, rng: &mut RngStream) -> f64 {
    let u = rng.next_f64();
    let sqrt_l = l.sqrt();
    let mut lo = 0.25 * sqrt_l;
    let mut hi = 8.0 * sqrt_l;
    // u below the CDF floor or above the ceiling would stall the bisection;
    // both regions carry less mass than one 53-bit ulp of uniform
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if excursion_max_cdf(mid, l) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Empirical tail of the exact bridge supremum vs exp(-2 x^2 / l).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BridgeMaxReport {
    pub sup_cdf_error: f64,
    pub xs: Vec<f64>,
    pub empirical: Vec<f64>,
    pub target: Vec<f64>,
    pub trials: u64,
}

pub fn bridge_max_check(l: f64, n: usize, trials: u64, rng: &RngStream) -> Result<BridgeMaxReport> {
    if l <= 0.0 {
        return Err(Error::InvalidParameter("length must be positive".into()));
    }
    let mut sups: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(i);
            let b = sample_bridge(l, n, &mut r).unwrap();
            b.sup_exact(&mut r)
        })
        .collect();
    sups.sort_by(|a, b| a.total_cmp(b));
    let xs: Vec<f64> = (0..=50).map(|i| 2.5 * l.sqrt() * i as f64 / 50.0).collect();
    let empirical: Vec<f64> = xs
        .iter()
        .map(|&x| crate::stats::survival_fraction(&sups, x))
        .collect();
    let target: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x <= 0.0 {
                1.0
            } else {
                (-2.0 * x * x / l).exp()
            }
        })
        .collect();
    let sup_cdf_error = empirical
        .iter()
        .zip(&target)
        .map(|(e, t)| (e - t).abs())
        .fold(0.0, f64::max);
    Ok(BridgeMaxReport {
        sup_cdf_error,
        xs,
        empirical,
        target,
        trials,
    })
}

/// Two-sample KS between excursion maxima (Bessel-bridge construction) and
/// bridge ranges (pinned-increment construction), independent streams.
pub fn excursion_range_identity_check(
    l: f64,
    n: usize,
    trials: u64,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    let exc_rng = rng.substream(1);
    let br_rng = rng.substream(2);
    let maxima: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = exc_rng.substream(i);
            sample_excursion(l, n, &mut r).unwrap().max()
        })
        .collect();
    let ranges: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = br_rng.substream(i);
            sample_bridge(l, n, &mut r).unwrap().range()
        })
        .collect();
    Ok(ks_two_sample(&maxima, &ranges))
}

/// Tail audit for the maximum over independent excursions of the given
/// lengths against 2 exp(-x^2 / (4 l)), on the x-grid where the bound is
/// claimed (x >= sqrt(4 l / e)).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TailBoundReport {
    pub xs: Vec<f64>,
    pub empirical: Vec<f64>,
    pub bound: Vec<f64>,
    pub violations: usize,
    pub trials: u64,
}

pub fn excursion_tail_bound_check(
    l_total: f64,
    sub_lengths: &[f64],
    trials: u64,
    rng: &RngStream,
) -> Result<TailBoundReport> {
    let sum: f64 = sub_lengths.iter().sum();
    if sum > l_total * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(
            "sub-lengths exceed the interval length".into(),
        ));
    }
    // lengths too short to ever reach the x-grid are skipped
    let x_min = (4.0 * l_total / std::f64::consts::E).sqrt();
    let relevant: Vec<f64> = sub_lengths
        .iter()
        .copied()
        .filter(|&ln| excursion_max_cdf(x_min, ln) < 1.0 - 1e-15)
        .collect();
    let mut sups: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(i);
            relevant
                .iter()
                .map(|&ln| sample_excursion_max(ln, &mut r))
                .fold(0.0f64, f64::max)
        })
        .collect();
    sups.sort_by(|a, b| a.total_cmp(b));
    let x_max = 4.0 * l_total.sqrt();
    let xs: Vec<f64> = (0..=30)
        .map(|i| x_min + (x_max - x_min) * i as f64 / 30.0)
        .collect();
    let mut violations = 0usize;
    let mut empirical = Vec::with_capacity(xs.len());
    let mut bound = Vec::with_capacity(xs.len());
    for &x in &xs {
        let emp = crate::stats::survival_fraction(&sups, x);
        let b = 2.0 * (-x * x / (4.0 * l_total)).exp();
        let se = proportion_se((emp * trials as f64).round() as u64, trials);
        if emp > b + 3.0 * se {
            violations += 1;
        }
        empirical.push(emp);
        bound.push(b);
    }
    Ok(TailBoundReport {
        xs,
        empirical,
        bound,
        violations,
        trials,
    })
}

/// Monte Carlo illustration of a-step stitching: sample the first N
/// successive a-crossing times and report how often their total passes 1,
/// next to the geometric failure schedule r^N for a grid of per-segment
/// success probabilities.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct StitchReport {
    pub a: f64,
    pub n: u32,
    pub mean_s1: f64,
    pub p_sn_ge_1: f64,
    pub ci: (f64, f64),
    /// (q, (1-q)^N) rows for q in a fixed grid.
    pub schedule: Vec<(f64, f64)>,
    pub trials: u64,
}

pub fn stitching_demo(a: f64, n: u32, trials: u64, rng: &RngStream) -> Result<StitchReport> {
    if a <= 0.0 || n == 0 {
        return Err(Error::InvalidParameter("need a > 0 and N >= 1".into()));
    }
    let results: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(i);
            let mut total = 0.0;
            let mut first = 0.0;
            for j in 0..n {
                let t = a * a * crate::exit_time::sample_exit_time(&mut r);
                if j == 0 {
                    first = t;
                }
                total += t;
            }
            (first, total >= 1.0)
        })
        .collect();
    let mean_s1 = results.iter().map(|r| r.0).sum::<f64>() / trials as f64;
    let over = results.iter().filter(|r| r.1).count() as u64;
    let (lo, hi) = wilson_interval(over, trials);
    let schedule = (1..=9)
        .map(|i| {
            let q = i as f64 / 10.0;
            (q, (1.0 - q).powi(n as i32))
        })
        .collect();
    Ok(StitchReport {
        a,
        n,
        mean_s1,
        p_sn_ge_1: over as f64 / trials as f64,
        ci: (lo, hi),
        schedule,
        trials,
    })
}
