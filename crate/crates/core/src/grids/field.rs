use crate::numerics::{Shape, Tensor};
use crate::{Error, Result};

/// Row-major 2-D grid of 32-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape {
                op: "grid",
                detail: format!("dimensions {height}x{width} must be positive"),
            });
        }
        if values.len() != height * width {
            return Err(Error::Shape {
                op: "grid",
                detail: format!(
                    "{height}x{width} grid needs {} values, got {}",
                    height * width,
                    values.len()
                ),
            });
        }
        Ok(Grid {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Grid::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Grid> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Shape {
                op: "bilinear_resize",
                detail: format!("target size {out_h}x{out_w} must be positive"),
            });
        }
        let values = crate::numerics::bilinear_resize_plane(
            &self.values,
            self.height,
            self.width,
            out_h,
            out_w,
        );
        Grid::new(out_h, out_w, values)
    }

    /// `(1, 1, h, w)` tensor view.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            Shape::new(1, 1, self.height, self.width),
            self.values.clone(),
        )
        .expect("grid dims are positive")
    }
}

/// Precipitation in mm/day; every value finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecipField(Grid);

impl PrecipField {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some((i, v)) = grid
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Domain(format!(
                "precipitation must be finite and non-negative; value[{i}] = {v}"
            )));
        }
        Ok(PrecipField(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl std::ops::Deref for PrecipField {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

impl TryFrom<Grid> for PrecipField {
    type Error = Error;

    fn try_from(grid: Grid) -> Result<Self> {
        PrecipField::new(grid)
    }
}

/// Elevation in meters; every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoField(Grid);

impl TopoField {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("topography contains non-finite values".into()));
        }
        Ok(TopoField(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    /// `(mean, std)` of the elevation values; std is floored at a tiny
    /// positive value so flat terrain normalises to zeros.
    pub fn moments(&self) -> (f64, f64) {
        let mean = self.0.mean();
        let var = self
            .0
            .values()
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / self.0.values().len() as f64;
        (mean, var.sqrt().max(1e-12))
    }

    pub fn normalized(&self, mean: f64, std: f64) -> Grid {
        self.0
            .map(|v| ((f64::from(v) - mean) / std) as f32)
    }
}

impl std::ops::Deref for TopoField {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

impl TryFrom<Grid> for TopoField {
    type Error = Error;

    fn try_from(grid: Grid) -> Result<Self> {
        TopoField::new(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precip_rejects_negative_and_nan() {
        assert!(PrecipField::new(Grid::new(1, 2, vec![0.0, -0.1]).unwrap()).is_err());
        assert!(PrecipField::new(Grid::new(1, 2, vec![0.0, f32::NAN]).unwrap()).is_err());
        assert!(PrecipField::new(Grid::new(1, 2, vec![0.0, 3.0]).unwrap()).is_ok());
    }

    #[test]
    fn topo_accepts_negative_elevation() {
        assert!(TopoField::new(Grid::new(1, 2, vec![-50.0, 10.0]).unwrap()).is_ok());
        assert!(TopoField::new(Grid::new(1, 1, vec![f32::INFINITY]).unwrap()).is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(Grid::new(0, 3, vec![]).is_err());
    }
}
