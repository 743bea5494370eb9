//! Non-learned reference forecasters.

use crate::dataset::SpanSample;
use crate::error::{Error, Result};
use crate::forecaster::model::Forecast;
use crate::geom::SpanLevel;

/// Per-cell mean of training targets in anchor-relative grid coordinates.
/// Constant across queries; the soft map doubles as an occupancy frequency.
pub struct GlobalPrior {
    mean: Vec<f64>,
    resolution: usize,
}

impl GlobalPrior {
    pub fn soft(&self) -> &[f64] {
        &self.mean
    }

    /// Forecast for one sample: the prior re-seated on the sample's grid.
    pub fn forecast(&self, sample: &SpanSample) -> Result<Forecast> {
        let g = &sample.target[0];
        if g.resolution() != self.resolution {
            return Err(Error::Shape {
                expected: format!("resolution {}", self.resolution),
                got: format!("{}", g.resolution()),
            });
        }
        Forecast::from_soft(self.mean.clone(), g.resolution(), g.cube_length(), g.origin())
    }
}

/// Average the per-level target occupancy over a training split.
pub fn baseline_global_prior(train: &[&SpanSample]) -> Result<GlobalPrior> {
    let first = train.first().ok_or(Error::InvalidConfig("empty training split".into()))?;
    let r = first.target[0].resolution();
    let vol = r * r * r;
    let mut mean = vec![0.0; 4 * vol];
    for s in train {
        if s.target[0].resolution() != r {
            return Err(Error::Shape {
                expected: format!("resolution {r}"),
                got: format!("{}", s.target[0].resolution()),
            });
        }
        for (l, grid) in s.target.iter().enumerate() {
            for (dst, v) in mean[l * vol..(l + 1) * vol].iter_mut().zip(grid.to_dense()) {
                *dst += v;
            }
        }
    }
    let n = train.len() as f64;
    for v in &mut mean {
        *v /= n;
    }
    Ok(GlobalPrior { mean, resolution: r })
}

/// Persistence: the future equals the union of the observed input frames.
pub fn baseline_persistence(sample: &SpanSample) -> Result<Forecast> {
    let g = &sample.target[0];
    let r = g.resolution();
    let vol = r * r * r;
    let mut soft = vec![0.0; 4 * vol];
    for span in &sample.inputs {
        for level in SpanLevel::ALL {
            let dense = span.level(level).to_dense();
            for (dst, v) in soft[level.index() * vol..(level.index() + 1) * vol]
                .iter_mut()
                .zip(dense)
            {
                if v > *dst {
                    *dst = v;
                }
            }
        }
    }
    Forecast::from_soft(soft, r, g.cube_length(), g.origin())
}
