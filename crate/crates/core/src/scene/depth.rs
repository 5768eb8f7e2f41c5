use super::camera::CameraModel;
use super::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A point that landed on the image: integer pixel, continuous position,
/// camera-frame depth, and index into the source cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub row: usize,
    pub col: usize,
    pub depth: f64,
    pub row_f: f64,
    pub col_f: f64,
    pub index: usize,
}

/// Projects every point in front of the camera whose pixel lies inside the
/// image. Output is in input order.
pub fn project_points(cloud: &PointCloud, cam: &CameraModel) -> Vec<Projection> {
    cloud
        .points()
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let (row_f, col_f, depth) = cam.project(p.xyz())?;
            let (r, c) = (row_f.floor(), col_f.floor());
            if r < 0.0 || c < 0.0 || r >= cam.height as f64 || c >= cam.width as f64 {
                return None;
            }
            Some(Projection {
                row: r as usize,
                col: c as usize,
                depth,
                row_f,
                col_f,
                index,
            })
        })
        .collect()
}

/// Value stored in pixels without a depth.
pub const DEPTH_SENTINEL: f64 = 0.0;

/// Minimum valid 8-neighbors for a hole to be filled.
pub const FILL_MIN_NEIGHBORS: usize = 4;

/// Single-channel sparse depth image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depth: Vec<f64>,
    /// Continuous image position of the z-buffer winner; `None` for empty
    /// or hole-filled pixels.
    source: Vec<Option<[f64; 2]>>,
}

impl DepthMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            depth: vec![DEPTH_SENTINEL; height * width],
            source: vec![None; height * width],
        }
    }

    /// Depth values in raster order; `DEPTH_SENTINEL` marks empty pixels.
    /// No pixel carries a measured source position.
    pub fn from_raw(height: usize, width: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != height * width {
            return Err(Error::dim(
                "depth map",
                format!("{} values for {height}x{width}", depth.len()),
            ));
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Input("depth values must be finite and non-negative".into()));
        }
        Ok(Self {
            height,
            width,
            source: vec![None; depth.len()],
            depth,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.depth[row * self.width + col] > 0.0
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let d = self.depth[row * self.width + col];
        (d > 0.0).then_some(d)
    }

    /// `true` when the pixel holds a directly projected point.
    pub fn is_measured(&self, row: usize, col: usize) -> bool {
        self.source[row * self.width + col].is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn raw(&self) -> &[f64] {
        &self.depth
    }

    /// World position of a valid pixel: measured pixels use the exact
    /// projected position, filled pixels the pixel center.
    pub fn back_project(&self, row: usize, col: usize, cam: &CameraModel) -> Option<[f64; 3]> {
        let d = self.get(row, col)?;
        let [r, c] = self.source[row * self.width + col].unwrap_or([row as f64 + 0.5, col as f64 + 0.5]);
        Some(cam.back_project(r, c, d))
    }

    /// `H x W x 3` tensor of `depth / scale`, replicated on three channels;
    /// empty pixels are zero.
    pub fn to_tensor3(&self, scale: f64) -> Tensor {
        Tensor::from_fn(&[self.height, self.width, 3], |i| self.depth[i / 3] / scale)
    }
}

/// Z-buffered projection followed by one 3x3 min-pool pass that fills empty
/// pixels having at least [`FILL_MIN_NEIGHBORS`] valid neighbors.
pub fn depth_map(cloud: &PointCloud, cam: &CameraModel) -> DepthMap {
    let (h, w) = (cam.height, cam.width);
    let mut map = DepthMap::empty(h, w);
    for p in project_points(cloud, cam) {
        let i = p.row * w + p.col;
        let cur = map.depth[i];
        if cur == DEPTH_SENTINEL || p.depth < cur {
            map.depth[i] = p.depth;
            map.source[i] = Some([p.row_f, p.col_f]);
        }
    }

    let measured = map.depth.clone();
    for r in 0..h {
        for c in 0..w {
            if measured[r * w + c] > 0.0 {
                continue;
            }
            let mut count = 0;
            let mut best = f64::INFINITY;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let d = measured[rr as usize * w + cc as usize];
                    if d > 0.0 {
                        count += 1;
                        best = best.min(d);
                    }
                }
            }
            if count >= FILL_MIN_NEIGHBORS {
                map.depth[r * w + c] = best;
            }
        }
    }
    map
}
