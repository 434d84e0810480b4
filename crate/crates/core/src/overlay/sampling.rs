use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::OverlayError;

/// Fraction of frames to annotate, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "f64", into = "f64"))]
pub struct SamplingRatio(f64);

impl SamplingRatio {
    pub const ALL: SamplingRatio = SamplingRatio(1.0);

    pub fn new(ratio: f64) -> Result<Self, OverlayError> {
        if ratio.is_finite() && ratio > 0.0 && ratio <= 1.0 {
            Ok(Self(ratio))
        } else {
            Err(OverlayError::InvalidRatio(ratio))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `ceil(ratio * n)`, at least 1 and at most `n`.
    ///
    /// Products within a relative 1e-9 of an integer snap to it, so decimal
    /// ratios like 0.7 behave as exact fractions.
    pub fn count(self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let x = self.0 * n as f64;
        let nearest = libm::round(x);
        let m = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
            nearest
        } else {
            libm::ceil(x)
        };
        (m as usize).clamp(1, n)
    }
}

impl TryFrom<f64> for SamplingRatio {
    type Error = OverlayError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SamplingRatio> for f64 {
    fn from(value: SamplingRatio) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SamplingMode {
    #[default]
    All,
    Uniform,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplingPlan {
    pub mode: SamplingMode,
    pub ratio: SamplingRatio,
    /// Only used by [`SamplingMode::Random`].
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self::all()
    }
}

impl SamplingPlan {
    pub fn all() -> Self {
        Self {
            mode: SamplingMode::All,
            ratio: SamplingRatio::ALL,
            seed: 0,
        }
    }

    pub fn uniform(ratio: SamplingRatio) -> Self {
        Self {
            mode: SamplingMode::Uniform,
            ratio,
            seed: 0,
        }
    }

    pub fn random(ratio: SamplingRatio, seed: u64) -> Self {
        Self {
            mode: SamplingMode::Random,
            ratio,
            seed,
        }
    }
}

/// Selects which of `n_frames` frames get annotated. The result is strictly
/// increasing.
///
/// `Uniform` picks `floor(k * n / m)` for `k in 0..m`; `Random` draws `m`
/// distinct indices from a ChaCha8 stream seeded with `plan.seed`.
pub fn plan_indices(n_frames: usize, plan: &SamplingPlan) -> Vec<usize> {
    match plan.mode {
        SamplingMode::All => (0..n_frames).collect(),
        SamplingMode::Uniform => {
            let m = plan.ratio.count(n_frames);
            (0..m).map(|k| k * n_frames / m).collect()
        }
        SamplingMode::Random => {
            let m = plan.ratio.count(n_frames);
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let mut picked = rand::seq::index::sample(&mut rng, n_frames, m).into_vec();
            picked.sort_unstable();
            picked
        }
    }
}
