//! Gridded space-time containers.
//!
//! Fields live on a square periodic-friendly grid of `w × w` cells with
//! spacing `dx` (degrees) and `n_time` frames spaced `dt` (days). Gaps are
//! represented by a companion [`Mask`]; gap cells in a field hold 0.0 so that
//! every stored value is finite.

use ndarray::{Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a space-time block: `n_time` frames of `w × w` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    /// Cells per side of the square spatial domain.
    pub w: usize,
    /// Spatial cell size in degrees.
    pub dx: f64,
    /// Time step in days.
    pub dt: f64,
    /// Number of time frames.
    pub n_time: usize,
}

impl SpaceTimeGrid {
    pub fn new(w: usize, dx: f64, dt: f64, n_time: usize) -> Result<Self> {
        if w < 8 {
            return Err(Error::dim("SpaceTimeGrid", "w >= 8", format!("w = {w}")));
        }
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::Config(format!("grid dx must be positive and finite, got {dx}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("grid dt must be positive and finite, got {dt}")));
        }
        if n_time == 0 {
            return Err(Error::dim("SpaceTimeGrid", "n_time >= 1", "n_time = 0".to_string()));
        }
        Ok(SpaceTimeGrid { w, dx, dt, n_time })
    }

    /// Same spatial geometry, different number of frames.
    pub fn with_n_time(&self, n_time: usize) -> Result<Self> {
        SpaceTimeGrid::new(self.w, self.dx, self.dt, n_time)
    }

    /// Side length of the spatial domain in degrees.
    pub fn extent_degrees(&self) -> f64 {
        self.w as f64 * self.dx
    }

    /// Length of the time axis in days.
    pub fn extent_days(&self) -> f64 {
        self.n_time as f64 * self.dt
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_time, self.w, self.w)
    }

    fn check_shape(&self, context: &'static str, shape: &[usize]) -> Result<()> {
        let want = [self.n_time, self.w, self.w];
        if shape != want {
            return Err(Error::dim(context, format!("{want:?}"), format!("{shape:?}")));
        }
        Ok(())
    }
}

/// A dense scalar field over a [`SpaceTimeGrid`]. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: SpaceTimeGrid,
    data: Array3<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        let data = Array3::zeros(grid.shape());
        SpaceTimeField { grid, data }
    }

    /// Wraps an array, rejecting NaN/Inf anywhere.
    pub fn new(grid: SpaceTimeGrid, data: Array3<f64>) -> Result<Self> {
        grid.check_shape("SpaceTimeField", data.shape())?;
        if let Some(idx) = first_non_finite(&data.view()) {
            return Err(Error::NonFinite { context: "SpaceTimeField", index: idx });
        }
        Ok(SpaceTimeField { grid, data })
    }

    /// Wraps an array that is only defined where `mask` is true; gap cells are
    /// stored as 0.0. Values under the mask must be finite.
    pub fn new_masked(grid: SpaceTimeGrid, mut data: Array3<f64>, mask: &Mask) -> Result<Self> {
        grid.check_shape("SpaceTimeField", data.shape())?;
        mask.grid().check_shape("SpaceTimeField mask", &[mask.grid().n_time, mask.grid().w, mask.grid().w])?;
        if mask.grid() != &grid {
            return Err(Error::dim(
                "SpaceTimeField mask",
                format!("{:?}", grid.shape()),
                format!("{:?}", mask.grid().shape()),
            ));
        }
        for ((t, i, j), v) in data.indexed_iter_mut() {
            if mask.get(t, i, j) {
                if !v.is_finite() {
                    return Err(Error::NonFinite { context: "SpaceTimeField", index: vec![t, i, j] });
                }
            } else {
                *v = 0.0;
            }
        }
        Ok(SpaceTimeField { grid, data })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), t)
    }

    /// Copies frames `[start, start + n_time)` into a new field.
    pub fn window(&self, start: usize, n_time: usize) -> Result<SpaceTimeField> {
        if start + n_time > self.grid.n_time {
            return Err(Error::dim(
                "SpaceTimeField::window",
                format!("start + n_time <= {}", self.grid.n_time),
                format!("start = {start}, n_time = {n_time}"),
            ));
        }
        let grid = self.grid.with_n_time(n_time)?;
        let data = self.data.slice(ndarray::s![start..start + n_time, .., ..]).to_owned();
        Ok(SpaceTimeField { grid, data })
    }

    /// Consumes the field, returning the raw array.
    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

/// Boolean gap mask aligned with a [`SpaceTimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: SpaceTimeGrid,
    data: Array3<bool>,
}

impl Mask {
    pub fn all_false(grid: SpaceTimeGrid) -> Self {
        let data = Array3::from_elem(grid.shape(), false);
        Mask { grid, data }
    }

    pub fn all_true(grid: SpaceTimeGrid) -> Self {
        let data = Array3::from_elem(grid.shape(), true);
        Mask { grid, data }
    }

    pub fn new(grid: SpaceTimeGrid, data: Array3<bool>) -> Result<Self> {
        grid.check_shape("Mask", data.shape())?;
        Ok(Mask { grid, data })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn data(&self) -> &Array3<bool> {
        &self.data
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> bool {
        self.data[[t, i, j]]
    }

    pub fn set(&mut self, t: usize, i: usize, j: usize, v: bool) {
        self.data[[t, i, j]] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Fraction of observed cells over the whole block.
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Fraction of observed cells within one frame.
    pub fn frame_fraction(&self, t: usize) -> f64 {
        let frame = self.data.index_axis(ndarray::Axis(0), t);
        frame.iter().filter(|&&b| b).count() as f64 / frame.len() as f64
    }

    /// Cell-wise union with another mask on the same grid.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.grid != other.grid {
            return Err(Error::dim(
                "Mask::union",
                format!("{:?}", self.grid.shape()),
                format!("{:?}", other.grid.shape()),
            ));
        }
        let data = ndarray::Zip::from(&self.data).and(&other.data).map_collect(|&a, &b| a || b);
        Ok(Mask { grid: self.grid, data })
    }

    /// Copies frames `[start, start + n_time)` into a new mask.
    pub fn window(&self, start: usize, n_time: usize) -> Result<Mask> {
        if start + n_time > self.grid.n_time {
            return Err(Error::dim(
                "Mask::window",
                format!("start + n_time <= {}", self.grid.n_time),
                format!("start = {start}, n_time = {n_time}"),
            ));
        }
        let grid = self.grid.with_n_time(n_time)?;
        let data = self.data.slice(ndarray::s![start..start + n_time, .., ..]).to_owned();
        Ok(Mask { grid, data })
    }

    /// Mask as 0.0/1.0 weights.
    pub fn to_f64(&self) -> Array3<f64> {
        self.data.map(|&b| if b { 1.0 } else { 0.0 })
    }
}

fn first_non_finite(a: &ArrayView3<'_, f64>) -> Option<Vec<usize>> {
    for ((t, i, j), v) in a.indexed_iter() {
        if !v.is_finite() {
            return Some(vec![t, i, j]);
        }
    }
    None
}
