use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::persistence::PersistenceDiagram;
use crate::error::{Error, Result};

/// Weight applied to each transformed diagram point `(birth, persistence)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// Weight equal to the persistence; zero on the diagonal.
    #[default]
    Linear,
    Constant,
}

impl WeightKind {
    pub fn weight(self, persistence: f64) -> f64 {
        match self {
            WeightKind::Linear => persistence,
            WeightKind::Constant => 1.0,
        }
    }
}

/// Rectangle of the (birth, persistence) plane covered by the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Window {
    pub fn width(&self) -> f64 {
        self.x.1 - self.x.0
    }

    pub fn height(&self) -> f64 {
        self.y.1 - self.y.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageParams {
    pub resolution: usize,
    /// Gaussian standard deviations along birth and persistence.
    pub bandwidth: (f64, f64),
    pub weight: WeightKind,
    pub window: Window,
}

impl ImageParams {
    /// Parameters with bandwidth equal to the pixel size on each axis.
    pub fn pixel_bandwidth(resolution: usize, weight: WeightKind, window: Window) -> Self {
        let p = resolution as f64;
        Self {
            resolution,
            bandwidth: (window.width() / p, window.height() / p),
            weight,
            window,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::contract("image resolution must be at least 1"));
        }
        let (dx, dy) = self.bandwidth;
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::contract("bandwidths must be positive"));
        }
        if !(self.window.width() > 0.0 && self.window.height() > 0.0) {
            return Err(Error::contract("persistence image window is degenerate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceImage {
    pub params: ImageParams,
    /// Row-major `P x P`: row `i` spans the i-th persistence interval from
    /// the bottom of the window, column `j` the j-th birth interval.
    pub pixels: Vec<f64>,
}

impl PersistenceImage {
    pub fn resolution(&self) -> usize {
        self.params.resolution
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.params.resolution + col]
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Gaussian mass of `N(mean, sd^2)` in each of the `p` equal cells of `range`.
fn cell_masses(mean: f64, sd: f64, range: (f64, f64), p: usize, out: &mut [f64]) {
    let step = (range.1 - range.0) / p as f64;
    let mut prev = normal_cdf((range.0 - mean) / sd);
    for (i, cell) in out.iter_mut().enumerate().take(p) {
        let edge = if i + 1 == p { range.1 } else { range.0 + step * (i + 1) as f64 };
        let next = normal_cdf((edge - mean) / sd);
        *cell = next - prev;
        prev = next;
    }
}

/// Rasterizes a diagram: each point `(b, d)` maps to `(b, d - b)` and
/// contributes its weight times the mass of an axis-aligned Gaussian inside
/// each pixel. The integral over a pixel factorizes per axis, so it is
/// evaluated exactly from normal CDF differences.
pub fn persistence_image(diagram: &PersistenceDiagram, params: &ImageParams) -> Result<PersistenceImage> {
    params.validate()?;
    let p = params.resolution;
    let mut pixels = vec![0.0; p * p];
    let mut mx = vec![0.0; p];
    let mut my = vec![0.0; p];
    for &(birth, death) in &diagram.points {
        let persistence = death - birth;
        let w = params.weight.weight(persistence);
        if w == 0.0 {
            continue;
        }
        cell_masses(birth, params.bandwidth.0, params.window.x, p, &mut mx);
        cell_masses(persistence, params.bandwidth.1, params.window.y, p, &mut my);
        for (row, &py) in my.iter().enumerate() {
            let wy = w * py;
            for (px, &mxv) in pixels[row * p..(row + 1) * p].iter_mut().zip(&mx) {
                *px += wy * mxv;
            }
        }
    }
    Ok(PersistenceImage {
        params: *params,
        pixels,
    })
}
