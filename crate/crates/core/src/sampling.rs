//! Seeded random sample points `(x, y_1, .., y_k)` on the b-slit bundle.
//!
//! Draws are sequential from one ChaCha stream so the sample set depends
//! only on the seed and the sampling parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::background::{geometry, BackgroundModel, Level, LocalGeometry};
use crate::error::{GeomError, Result};

/// Angular radius of the cones around `+-b` that samplers reject.
pub const POLE_CONE: f64 = 1e-3;

/// Rejection attempts per direction before giving up.
const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Base points are uniform in `center +- half_width` per coordinate.
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// Background length range of the tangent vectors.
    #[serde(default = "default_radius")]
    pub radius: [f64; 2],
    /// Tangent vectors drawn per base point.
    #[serde(default = "default_directions")]
    pub directions: usize,
}

fn default_half_width() -> f64 {
    0.5
}

fn default_radius() -> [f64; 2] {
    [0.5, 2.0]
}

fn default_directions() -> usize {
    4
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { half_width: default_half_width(), center: None, radius: default_radius(), directions: default_directions() }
    }
}

impl SamplingConfig {
    pub fn validate(&self, dim: usize) -> std::result::Result<(), String> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(format!("sampling half_width must be positive, got {}", self.half_width));
        }
        if !(self.radius[0] > 0.0 && self.radius[1] >= self.radius[0] && self.radius[1].is_finite()) {
            return Err(format!("sampling radius range {:?} is not a positive interval", self.radius));
        }
        if self.directions < 2 {
            return Err("sampling needs at least 2 directions per point".into());
        }
        if let Some(c) = &self.center {
            if c.len() != dim {
                return Err(format!("sampling center has {} coordinates, dimension is {dim}", c.len()));
            }
        }
        Ok(())
    }
}

/// One base point with its tangent vectors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

pub struct Sampler<'a> {
    model: &'a BackgroundModel,
    config: SamplingConfig,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a BackgroundModel, config: &SamplingConfig, seed: u64) -> Self {
        Self { model, config: config.clone(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn point(&mut self) -> Vec<f64> {
        let n = self.model.dim;
        let w = self.config.half_width;
        (0..n)
            .map(|i| {
                let c = self.config.center.as_ref().map_or(0.0, |c| c[i]);
                c + self.rng.gen_range(-w..=w)
            })
            .collect()
    }

    /// Uniform direction outside the pole cones, scaled to a random length.
    pub fn direction(&mut self, geo: &LocalGeometry) -> Result<Vec<f64>> {
        let n = geo.dim;
        for _ in 0..MAX_ATTEMPTS {
            let v: Vec<f64> = (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal)).collect();
            let en = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if en == 0.0 {
                continue;
            }
            let s = geo.norm(&v);
            let cos = geo.inner(&v, geo.b_up.as_slice().expect("contiguous")) / (s * geo.c);
            if cos.abs().min(1.0).acos() < POLE_CONE {
                continue;
            }
            let [lo, hi] = self.config.radius;
            let r = if hi > lo { self.rng.gen_range(lo..hi) } else { lo };
            return Ok(v.iter().map(|a| a * r / s).collect());
        }
        Err(GeomError::Domain("could not draw a direction outside the pole cones".into()))
    }

    pub fn sample(&mut self) -> Result<Sample> {
        let x = self.point();
        let geo = geometry(self.model, &x, Level::Connection)?;
        let y = (0..self.config.directions).map(|_| self.direction(&geo)).collect::<Result<_>>()?;
        Ok(Sample { x, y })
    }

    pub fn samples(&mut self, count: usize) -> Result<Vec<Sample>> {
        (0..count).map(|_| self.sample()).collect()
    }
}
