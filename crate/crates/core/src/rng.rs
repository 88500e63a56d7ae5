//! Counter-based splittable random number streams.
//!
//! Every stochastic routine in this crate takes an [`RngStream`]. A stream is
//! identified by `(master_seed, stream_id)` and produces its output purely as
//! a function of that pair and an internal counter, so the same identifiers
//! always reproduce the identical sample sequence regardless of what any
//! sibling stream consumed. Substreams are derived by hashing a label into
//! the stream id, which lets tree builders key generation by node path and
//! estimators key it by trial index; parallel generation is then
//! order-independent by construction.
//!
//! The generator is a SplitMix64-style counter mix (Vigna's finalizer),
//! non-cryptographic but with full 64-bit avalanche, which is plenty for
//! desk-scale Monte Carlo.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// A reproducible, splittable random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
    gauss_spare: Option<f64>,
}

impl RngStream {
    /// Root stream for a master seed (stream id 0).
    pub fn new(master_seed: u64) -> Self {
        Self::with_stream(master_seed, 0)
    }

    /// Stream with an explicit id.
    pub fn with_stream(master_seed: u64, stream_id: u64) -> Self {
        let key = mix(master_seed ^ mix(stream_id.wrapping_add(GOLDEN)));
        Self {
            master_seed,
            stream_id,
            key,
            counter: 0,
            gauss_spare: None,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent stream keyed by `label`.
    ///
    /// Labels form a path: `s.substream(a).substream(b)` differs from
    /// `s.substream(b).substream(a)`. The derived stream starts at counter 0
    /// and is unaffected by how much of `self` has been consumed.
    pub fn substream(&self, label: u64) -> Self {
        let id = mix(self.key ^ label.wrapping_add(GOLDEN).wrapping_mul(0xD1342543DE82EF95));
        Self::with_stream(self.master_seed, id)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (((self.next_u64() >> 11) as f64) + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Bernoulli(p).
    #[inline]
    pub fn next_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller; the paired draw is cached.
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let mag = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.gauss_spare = Some(mag * s);
        mag * c
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_below(&mut self, n: u64) -> u64 {
        // Rejection against the top multiple of n to keep it unbiased.
        let zone = u64::MAX - (u64::MAX % n.max(1));
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }
}
