//! Embedded conditioned lattice walks.
//!
//! One crossing refined to the next finer scale is recorded as a +/-1 walk on
//! the integer grid, started at 0 and conditioned to hit +K before -K. The
//! walk is sampled exactly through the discrete Doob transform of the simple
//! random walk with harmonic function h(x) = (x + K) / 2K, which gives the
//! up-step probability (x + K + 1) / (2 (x + K)). No discretization
//! parameter is involved: each recorded up-step at level m is one completed
//! upcrossing of the corresponding subinterval by the underlying path.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A conditioned embedded walk in local orientation: starts at 0, ends at +K,
/// all levels in (-K, K].
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeWalkPath {
    pub k: u32,
    pub levels: Vec<i32>,
}

impl LatticeWalkPath {
    /// Number of steps (children of the refined crossing).
    pub fn len(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Iterate over (level-before-step, step-sign).
    pub fn steps(&self) -> impl Iterator<Item = (i32, i8)> + '_ {
        self.levels
            .windows(2)
            .map(|w| (w[0], (w[1] - w[0]) as i8))
    }

    /// Check the type invariants; used by tests and the loaders.
    pub fn validate(&self) -> Result<()> {
        let k = self.k as i32;
        if self.levels.first() != Some(&0) {
            return Err(Error::InvalidParameter("walk must start at 0".into()));
        }
        if self.levels.last() != Some(&k) {
            return Err(Error::InvalidParameter("walk must end at +K".into()));
        }
        for w in self.levels.windows(2) {
            if (w[1] - w[0]).abs() != 1 {
                return Err(Error::InvalidParameter("walk steps must be +/-1".into()));
            }
            if w[0] <= -k {
                return Err(Error::InvalidParameter("walk must stay above -K".into()));
            }
        }
        Ok(())
    }
}

/// Up-step probability of the conditioned walk from level `x`.
#[inline]
pub fn p_up(x: i32, k: u32) -> f64 {
    let kk = k as f64;
    let xf = x as f64;
    (xf + kk + 1.0) / (2.0 * (xf + kk))
}

/// Sample one conditioned walk: start 0, absorb at +K, conditioned never to
/// reach -K. Terminates almost surely; expected length is K^2.
pub fn sample_conditioned_walk(k: u32, rng: &mut RngStream) -> LatticeWalkPath {
    assert!(k >= 1, "grid half-width must be positive");
    let target = k as i32;
    let mut levels = Vec::with_capacity((k * k) as usize + 1);
    let mut x = 0i32;
    levels.push(x);
    while x != target {
        x += if rng.next_bool(p_up(x, k)) { 1 } else { -1 };
        levels.push(x);
    }
    LatticeWalkPath { k, levels }
}

/// Independent sampler of the mirrored walk (hits -K before +K), used to
/// check the mirror-symmetry law. Levels end at -K.
pub fn sample_conditioned_walk_down(k: u32, rng: &mut RngStream) -> Vec<i32> {
    let target = -(k as i32);
    let mut levels = vec![0i32];
    let mut x = 0i32;
    while x != target {
        // h_down(x) = (K - x) / 2K; p(step to x-1) = (K - x + 1)/(2 (K - x))
        let kk = k as f64;
        let p_down = (kk - x as f64 + 1.0) / (2.0 * (kk - x as f64));
        x += if rng.next_bool(p_down) { -1 } else { 1 };
        levels.push(x);
    }
    levels
}

/// Exact first-step law of the conditioned walk by brute-force enumeration:
/// dynamic programming over all simple-walk paths absorbed at +/-K, truncated
/// at `max_steps` (the truncated mass decays like cos(pi/2K)^n).
///
/// Returns P[first step is up | hit +K before -K].
pub fn enumerate_first_step_up(k: u32, max_steps: usize) -> f64 {
    let ki = k as i32;
    let width = (2 * ki + 1) as usize;
    let idx = |x: i32| (x + ki) as usize;
    // mass[x] = probability of being at x, not yet absorbed
    let mut up = vec![0.0f64; width]; // paths whose first step was up
    let mut all = vec![0.0f64; width];
    let mut up_hit = 0.0;
    let mut all_hit = 0.0;
    up[idx(1)] = 0.5;
    all[idx(1)] = 0.5;
    all[idx(-1)] = 0.5;
    for _ in 1..max_steps {
        let mut nu = vec![0.0f64; width];
        let mut na = vec![0.0f64; width];
        for x in (-ki + 1)..ki {
            let (u, a) = (up[idx(x)], all[idx(x)]);
            if a == 0.0 && u == 0.0 {
                continue;
            }
            for nx in [x - 1, x + 1] {
                if nx == ki {
                    up_hit += 0.5 * u;
                    all_hit += 0.5 * a;
                } else if nx == -ki {
                    // absorbed on the losing side; drop
                } else {
                    nu[idx(nx)] += 0.5 * u;
                    na[idx(nx)] += 0.5 * a;
                }
            }
        }
        up = nu;
        all = na;
    }
    up_hit / all_hit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_only_admissible_path() {
        let mut rng = RngStream::new(1);
        for _ in 0..50 {
            let w = sample_conditioned_walk(1, &mut rng);
            assert_eq!(w.levels, vec![0, 1]);
        }
    }

    #[test]
    fn walks_satisfy_invariants() {
        let mut rng = RngStream::new(2);
        for k in [2u32, 3, 5, 8] {
            for _ in 0..200 {
                let w = sample_conditioned_walk(k, &mut rng);
                w.validate().unwrap();
                assert!(w.len() >= k as usize, "reaching +K needs at least K steps");
            }
        }
    }

    #[test]
    fn doob_formula_matches_enumeration_oracle() {
        // Exact enumeration for K = 2 and K = 5 vs (x + K + 1) / (2 (x + K)) at x = 0.
        for (k, steps) in [(2u32, 400usize), (5, 3000)] {
            let oracle = enumerate_first_step_up(k, steps);
            let formula = p_up(0, k);
            assert!(
                (oracle - formula).abs() < 1e-10,
                "K={k}: oracle {oracle} vs formula {formula}"
            );
        }
        assert!((p_up(0, 5) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn empirical_up_frequency_matches_formula_at_every_busy_state() {
        // Every state visited at least 1000 times across 100k walks stays within
        // three binomial standard errors of the transform law.
        let k = 5u32;
        let mut rng = RngStream::new(3);
        let width = (2 * k + 1) as usize;
        let mut ups = vec![0u64; width];
        let mut visits = vec![0u64; width];
        for _ in 0..100_000 {
            let w = sample_conditioned_walk(k, &mut rng);
            for (x, s) in w.steps() {
                let i = (x + k as i32) as usize;
                visits[i] += 1;
                if s > 0 {
                    ups[i] += 1;
                }
            }
        }
        for x in (-(k as i32) + 1)..(k as i32) {
            let i = (x + k as i32) as usize;
            if visits[i] < 1000 {
                continue;
            }
            let p = p_up(x, k);
            let freq = ups[i] as f64 / visits[i] as f64;
            let se = (p * (1.0 - p) / visits[i] as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "state {x}: freq {freq}, law {p}, se {se}"
            );
        }
    }

    #[test]
    fn mean_walk_length_is_k_squared() {
        let k = 5u32;
        let mut rng = RngStream::new(4);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let len = sample_conditioned_walk(k, &mut rng).len() as f64;
            sum += len;
            sq += len * len;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - 25.0).abs() < 3.0 * se,
            "mean length {mean}, se {se}"
        );
    }

    #[test]
    fn mirror_symmetry_in_law() {
        // Negated up-walk levels and the independent down-sampler agree in law;
        // compare the distribution of walk length and of minimum level.
        let k = 4u32;
        let mut rng = RngStream::new(5);
        let n = 4000;
        let mut len_up: Vec<f64> = Vec::with_capacity(n);
        let mut len_dn: Vec<f64> = Vec::with_capacity(n);
        let mut ext_up: Vec<f64> = Vec::with_capacity(n);
        let mut ext_dn: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let up = sample_conditioned_walk(k, &mut rng);
            len_up.push(up.len() as f64);
            ext_up.push(-(*up.levels.iter().min().unwrap()) as f64);
            let dn = sample_conditioned_walk_down(k, &mut rng);
            len_dn.push((dn.len() - 1) as f64);
            ext_dn.push(*dn.iter().max().unwrap() as f64);
        }
        let (_, p_len) = crate::stats::ks_two_sample(&len_up, &len_dn);
        let (_, p_ext) = crate::stats::ks_two_sample(&ext_up, &ext_dn);
        assert!(p_len > 0.01, "length law mismatch, p = {p_len}");
        assert!(p_ext > 0.01, "extreme law mismatch, p = {p_ext}");
    }
}
