//! Counter-based random streams.
//!
//! Path `i` of a run with master seed `s` always draws from ChaCha8 stream
//! `i` keyed by `s`, so results do not depend on how paths are scheduled
//! across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

/// Random source for a single simulated path.
#[derive(Debug, Clone)]
pub struct PathRng {
    inner: ChaCha8Rng,
    flip: bool,
}

impl PathRng {
    /// Independent stream for `path_index`.
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(path_index);
        Self { inner, flip: false }
    }

    /// Stream for `path_index` under antithetic pairing: paths `2k` and
    /// `2k + 1` share stream `k`, the odd one with negated normals.
    pub fn antithetic(master_seed: u64, path_index: u64) -> Self {
        let mut rng = Self::new(master_seed, path_index / 2);
        rng.flip = path_index % 2 == 1;
        rng
    }

    pub fn for_path(master_seed: u64, path_index: u64, antithetic: bool) -> Self {
        if antithetic {
            Self::antithetic(master_seed, path_index)
        } else {
            Self::new(master_seed, path_index)
        }
    }

    pub fn normal(&mut self) -> f64 {
        let z: f64 = self.inner.sample(StandardNormal);
        if self.flip {
            -z
        } else {
            z
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Unit exponential.
    pub fn exp1(&mut self) -> f64 {
        self.inner.sample(Exp1)
    }
}
