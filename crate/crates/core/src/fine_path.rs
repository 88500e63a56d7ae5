//! Discrete Brownian paths, bridges and excursions.
//!
//! Fine paths are Gaussian-increment grids: exact in law at the grid points,
//! a stand-in for the continuous object between them. Bridges are built by
//! pinning increments; excursions as the modulus of a three-dimensional
//! Brownian bridge (the Bessel(3) bridge construction), which keeps them
//! independent of the one-dimensional bridge sampler so the maximum/range
//! identity can be cross-checked between genuinely different constructions.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Equispaced samples of a path started at 0.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FinePath {
    /// Grid step in time units.
    pub h: f64,
    pub values: Vec<f64>,
}

impl FinePath {
    pub fn horizon(&self) -> f64 {
        self.h * (self.values.len().saturating_sub(1)) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.h * i as f64
    }
}

/// Brownian motion on [0, T] with step h.
pub fn sample_fine_path(t_horizon: f64, h: f64, rng: &mut RngStream) -> Result<FinePath> {
    if t_horizon <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidParameter("horizon and step must be positive".into()));
    }
    let n = (t_horizon / h).round() as usize;
    if n < 1 {
        return Err(Error::InvalidParameter("horizon shorter than one step".into()));
    }
    let sd = h.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut x = 0.0;
    values.push(x);
    for _ in 0..n {
        x += sd * rng.next_gaussian();
        values.push(x);
    }
    Ok(FinePath { h, values })
}

/// Which barrier a stopped path hit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitSide {
    Upper,
    Lower,
}

/// Brownian motion run until it first reaches `hi` or `lo`; errors if neither
/// happens within `max_steps`.
pub fn sample_path_until_exit(
    hi: f64,
    lo: f64,
    h: f64,
    max_steps: u64,
    rng: &mut RngStream,
) -> Result<(FinePath, HitSide)> {
    debug_assert!(lo < 0.0 && 0.0 < hi);
    let sd = h.sqrt();
    let mut values = Vec::new();
    let mut x = 0.0;
    values.push(x);
    for _ in 0..max_steps {
        x += sd * rng.next_gaussian();
        values.push(x);
        if x >= hi {
            return Ok((FinePath { h, values }, HitSide::Upper));
        }
        if x <= lo {
            return Ok((FinePath { h, values }, HitSide::Lower));
        }
    }
    Err(Error::TargetNotReached { steps: max_steps })
}

/// Brownian bridge of length `l` pinned to 0 at both ends, n steps
/// (n + 1 values).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BridgePath {
    pub len: f64,
    pub values: Vec<f64>,
}

pub fn sample_bridge(l: f64, n: usize, rng: &mut RngStream) -> Result<BridgePath> {
    if l <= 0.0 || n < 2 {
        return Err(Error::InvalidParameter("bridge needs l > 0 and n >= 2".into()));
    }
    let h = l / n as f64;
    let sd = h.sqrt();
    let mut w = Vec::with_capacity(n + 1);
    let mut x = 0.0;
    w.push(x);
    for _ in 0..n {
        x += sd * rng.next_gaussian();
        w.push(x);
    }
    let wn = x;
    let values: Vec<f64> = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| wi - (i as f64 / n as f64) * wn)
        .collect();
    Ok(BridgePath { len: l, values })
}

impl BridgePath {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    /// Supremum of the continuous bridge, sampled exactly: on each grid cell
    /// the conditional maximum given the endpoints has the closed-form law
    /// P[max >= x | a, b] = exp(-2 (x-a)(x-b) / h), inverted per cell.
    pub fn sup_exact(&self, rng: &mut RngStream) -> f64 {
        let h = self.len / (self.values.len() - 1) as f64;
        let mut m = f64::NEG_INFINITY;
        for w in self.values.windows(2) {
            let (a, b) = (w[0], w[1]);
            let u = rng.next_f64();
            let seg = 0.5 * ((a + b) + ((a - b) * (a - b) - 2.0 * h * u.ln()).sqrt());
            m = m.max(seg);
        }
        m
    }
}

/// Positive excursion of length `l`: modulus of a 3-d Brownian bridge.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ExcursionPath {
    pub len: f64,
    pub values: Vec<f64>,
}

pub fn sample_excursion(l: f64, n: usize, rng: &mut RngStream) -> Result<ExcursionPath> {
    if l <= 0.0 || n < 2 {
        return Err(Error::InvalidParameter("excursion needs l > 0 and n >= 2".into()));
    }
    let b1 = sample_bridge(l, n, rng)?;
    let b2 = sample_bridge(l, n, rng)?;
    let b3 = sample_bridge(l, n, rng)?;
    let values: Vec<f64> = (0..=n)
        .map(|i| {
            (b1.values[i] * b1.values[i]
                + b2.values[i] * b2.values[i]
                + b3.values[i] * b3.values[i])
                .sqrt()
        })
        .collect();
    Ok(ExcursionPath { len: l, values })
}

impl ExcursionPath {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Smallest C with |B_s - B_t| <= C |s - t|^alpha over all sampled pairs at
/// dyadic lags (lag = 1, 2, 4, ... grid steps).
pub fn holder_profile(path: &FinePath, alpha: f64) -> Result<f64> {
    if path.values.len() < 2 {
        return Err(Error::EmptyPath);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter("alpha must be in (0, 1]".into()));
    }
    let n = path.values.len() - 1;
    let mut c: f64 = 0.0;
    let mut lag = 1usize;
    while lag <= n {
        let dt = (path.h * lag as f64).powf(alpha);
        let mut worst: f64 = 0.0;
        for i in 0..=(n - lag) {
            worst = worst.max((path.values[i + lag] - path.values[i]).abs());
        }
        c = c.max(worst / dt);
        lag *= 2;
    }
    Ok(c)
}

/// Deterministic 1/2-Hoelder graph: a lacunary cosine series with geometric
/// frequencies and amplitude 2^(-j/2), fixed golden-angle phases. Used to run
/// the level-set pipeline on a non-random input.
pub fn weierstrass_path(n: usize, octaves: u32) -> FinePath {
    let h = 1.0 / n as f64;
    let values: Vec<f64> = (0..=n)
        .map(|i| {
            let t = i as f64 * h;
            let mut s = 0.0;
            for j in 0..octaves {
                let freq = (1u64 << j) as f64;
                let phase = 2.399963229728653 * j as f64;
                s += 2.0f64.powf(-(j as f64) / 2.0)
                    * (std::f64::consts::TAU * freq * t + phase).cos();
            }
            s
        })
        .collect();
    // shift so the path starts at 0 like every other sampled path
    let v0 = values[0];
    FinePath {
        h,
        values: values.into_iter().map(|v| v - v0).collect(),
    }
}
