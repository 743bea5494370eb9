//! Bit-packed occupancy grids and keypoint voxelization.
//!
//! Grids are cubes of `R^3` cells covering a world-axis-aligned region of
//! side `D` whose minimum corner is `origin`. Cell `(x, y, z)` maps to bit
//! `(x * R + y) * R + z` (x-major, z fastest), packed into `u64` words in
//! bit-index order. At the default `R = 16` a grid occupies 64 words.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::{classify_span, level_axis, FrameBundle, Keypoint, SpanConfig, SpanLevel};

/// Dense boolean cube backed by packed `u64` words.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: usize,
    cube_length: f64,
    origin: Vector3<f64>,
    words: Vec<u64>,
}

impl OccupancyGrid {
    pub fn empty(resolution: usize, cube_length: f64, origin: Vector3<f64>) -> Self {
        let bits = resolution * resolution * resolution;
        Self {
            resolution,
            cube_length,
            origin,
            words: vec![0u64; bits.div_ceil(64)],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cube_length(&self) -> f64 {
        self.cube_length
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn cell_edge(&self) -> f64 {
        self.cube_length / self.resolution as f64
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Rebuild a grid from raw words (archive decode path). The word count
    /// must match the resolution exactly.
    pub fn from_words(
        resolution: usize,
        cube_length: f64,
        origin: Vector3<f64>,
        words: Vec<u64>,
    ) -> Result<Self> {
        let bits = resolution * resolution * resolution;
        let expect = bits.div_ceil(64);
        if words.len() != expect {
            return Err(Error::Shape {
                expected: format!("{expect} words for R={resolution}"),
                got: format!("{} words", words.len()),
            });
        }
        // Bits past R^3 in the last word must stay zero so popcounts and
        // equality stay meaningful.
        let tail = bits % 64;
        if tail != 0 && words[expect - 1] >> tail != 0 {
            return Err(Error::Shape {
                expected: "zero bits beyond R^3".into(),
                got: "set bits in word tail".into(),
            });
        }
        Ok(Self {
            resolution,
            cube_length,
            origin,
            words,
        })
    }

    #[inline]
    fn bit_index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.resolution && y < self.resolution && z < self.resolution);
        (x * self.resolution + y) * self.resolution + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        let i = self.bit_index(x, y, z);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.bit_index(x, y, z);
        if value {
            self.words[i / 64] |= 1u64 << (i % 64);
        } else {
            self.words[i / 64] &= !(1u64 << (i % 64));
        }
    }

    /// Number of occupied cells.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Grid coordinates of the cell containing `point`, if inside the
    /// half-open domain `[origin, origin + D)`. Per axis the index is
    /// `floor((p - origin) * R / D)`.
    pub fn cell_of(&self, point: &Vector3<f64>) -> Option<(usize, usize, usize)> {
        let r = self.resolution as f64;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let i = ((point[a] - self.origin[a]) * r / self.cube_length).floor();
            if i < 0.0 || i >= r {
                return None;
            }
            idx[a] = i as usize;
        }
        Some((idx[0], idx[1], idx[2]))
    }

    /// World position of the center of cell `(x, y, z)`.
    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let e = self.cell_edge();
        self.origin
            + Vector3::new(
                (x as f64 + 0.5) * e,
                (y as f64 + 0.5) * e,
                (z as f64 + 0.5) * e,
            )
    }

    /// Mark the cell containing `point`; returns false when it falls outside
    /// the domain.
    pub fn mark(&mut self, point: &Vector3<f64>) -> bool {
        match self.cell_of(point) {
            Some((x, y, z)) => {
                self.set(x, y, z, true);
                true
            }
            None => false,
        }
    }

    /// Occupied cells in bit-index order (x-major, z fastest).
    pub fn occupied_cells(&self) -> Vec<(usize, usize, usize)> {
        let r = self.resolution;
        let mut out = Vec::with_capacity(self.count());
        for (wi, &word) in self.words.iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                let i = wi * 64 + b;
                out.push((i / (r * r), (i / r) % r, i % r));
                w &= w - 1;
            }
        }
        out
    }

    fn check_compatible(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.resolution != other.resolution {
            return Err(Error::GridGeometry {
                field: "resolution",
                left: self.resolution.to_string(),
                right: other.resolution.to_string(),
            });
        }
        if self.cube_length != other.cube_length {
            return Err(Error::GridGeometry {
                field: "cube_length",
                left: self.cube_length.to_string(),
                right: other.cube_length.to_string(),
            });
        }
        if self.origin != other.origin {
            return Err(Error::GridGeometry {
                field: "origin",
                left: format!("{:?} ({op})", self.origin),
                right: format!("{:?}", other.origin),
            });
        }
        Ok(())
    }

    /// Cellwise OR with a co-registered grid.
    pub fn union_with(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other, "union")?;
        for (a, b) in self.words.iter_mut().zip(other.words.iter()) {
            *a |= b;
        }
        Ok(())
    }

    /// Number of cells occupied in both grids.
    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_compatible(other, "intersection")?;
        Ok(self
            .words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    /// Number of cells occupied in either grid.
    pub fn union_count(&self, other: &Self) -> Result<usize> {
        self.check_compatible(other, "union")?;
        Ok(self
            .words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum())
    }

    /// True when every occupied cell of `self` is occupied in `other`.
    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        self.check_compatible(other, "subset")?;
        Ok(self
            .words
            .iter()
            .zip(other.words.iter())
            .all(|(a, b)| a & !b == 0))
    }

    /// Densify into row-major (x-major, z fastest) 0/1 values.
    pub fn to_dense(&self) -> Vec<f64> {
        let bits = self.resolution.pow(3);
        (0..bits)
            .map(|i| f64::from(self.words[i / 64] >> (i % 64) & 1 == 1))
            .collect()
    }

    /// Build from row-major densities, marking cells strictly above
    /// `threshold`.
    pub fn from_dense(
        resolution: usize,
        cube_length: f64,
        origin: Vector3<f64>,
        dense: &[f64],
        threshold: f64,
    ) -> Result<Self> {
        let bits = resolution.pow(3);
        if dense.len() != bits {
            return Err(Error::Shape {
                expected: format!("{bits} values"),
                got: format!("{}", dense.len()),
            });
        }
        let mut grid = Self::empty(resolution, cube_length, origin);
        for (i, &v) in dense.iter().enumerate() {
            if v > threshold {
                grid.words[i / 64] |= 1u64 << (i % 64);
            }
        }
        Ok(grid)
    }
}

/// Grid origin for a span anchored at `anchor`: the cube of side `D`
/// centered on the anchor translation.
pub fn anchor_origin(anchor: &Vector3<f64>, cube_length: f64) -> Vector3<f64> {
    anchor - Vector3::repeat(cube_length / 2.0)
}

/// Voxelize world-frame points into the cube of side `cfg.cube_length_m`
/// centered on `anchor`. Points on or past the upper domain faces are
/// excluded by the half-open indexing.
pub fn voxelize(points: &[Keypoint], anchor: &Vector3<f64>, cfg: &SpanConfig) -> OccupancyGrid {
    let origin = anchor_origin(anchor, cfg.cube_length_m);
    let mut grid = OccupancyGrid::empty(cfg.resolution, cfg.cube_length_m, origin);
    for p in points {
        grid.mark(&p.position);
    }
    grid
}

/// A window's complete volumetric span: the four eccentricity levels plus
/// the unclassified scene occupancy, all sharing one origin, unioned over
/// the frames of `window`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelSpan {
    pub levels: [OccupancyGrid; 4],
    pub scene: OccupancyGrid,
    pub window: (f64, f64),
}

impl MultiLevelSpan {
    pub fn level(&self, level: SpanLevel) -> &OccupancyGrid {
        &self.levels[level.index()]
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.scene.origin()
    }

    /// Cellwise OR with a co-registered span; the window extends to cover
    /// both operands.
    pub fn union_with(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.levels.iter_mut().zip(other.levels.iter()) {
            a.union_with(b)?;
        }
        self.scene.union_with(&other.scene)?;
        self.window = (self.window.0.min(other.window.0), self.window.1.max(other.window.1));
        Ok(())
    }

    pub fn empty(cfg: &SpanConfig, origin: Vector3<f64>, window: (f64, f64)) -> Self {
        let grid = OccupancyGrid::empty(cfg.resolution, cfg.cube_length_m, origin);
        Self {
            levels: [grid.clone(), grid.clone(), grid.clone(), grid.clone()],
            scene: grid,
            window,
        }
    }
}

/// Lift a time-ordered window of aligned frames into its multi-level span,
/// anchored at the first frame's pose.
pub fn build_multilevel(bundles: &[FrameBundle], cfg: &SpanConfig) -> Result<MultiLevelSpan> {
    let first = bundles.first().ok_or(Error::EmptyWindow {
        t_begin: f64::NAN,
        t_end: f64::NAN,
    })?;
    build_multilevel_at(bundles, &first.pose.translation, cfg)
}

/// Lift a window into a span co-registered to an external anchor (used to
/// keep history and target grids of one sample in a single frame of
/// reference). Selection (vicinity cube, outlier filter) still happens
/// around each frame's own pose; survivors landing outside the anchored
/// cube are simply not voxelized.
pub fn build_multilevel_at(
    bundles: &[FrameBundle],
    anchor: &Vector3<f64>,
    cfg: &SpanConfig,
) -> Result<MultiLevelSpan> {
    let (first, last) = match (bundles.first(), bundles.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(Error::EmptyWindow {
                t_begin: f64::NAN,
                t_end: f64::NAN,
            })
        }
    };
    debug_assert!(bundles.windows(2).all(|w| w[0].t <= w[1].t));
    let origin = anchor_origin(anchor, cfg.cube_length_m);
    let mut span = MultiLevelSpan::empty(cfg, origin, (first.t, last.t));
    for bundle in bundles {
        let observed = crate::geom::select_observed(&bundle.points, &bundle.pose, bundle.t, cfg);
        for p in &observed {
            span.scene.mark(&p.position);
        }
        for level in SpanLevel::ALL {
            let axis = level_axis(level, &bundle.gaze.direction);
            let theta = cfg.eccentricities.get(level);
            let selection = classify_span(&observed, &bundle.pose, &axis, theta);
            let grid = &mut span.levels[level.index()];
            for p in &selection.points {
                grid.mark(&p.position);
            }
        }
    }
    Ok(span)
}
