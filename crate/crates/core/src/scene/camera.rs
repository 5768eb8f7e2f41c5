use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

type Mat3 = [[f64; 3]; 3];

/// Pinhole camera. `rotation`/`translation` map world to camera coordinates
/// (`p_cam = R p_world + t`), camera frame x right, y down, z forward.
/// Pixel `(row, col)` covers `[row, row+1) x [col, col+1)` in continuous
/// image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: [f64; 3],
    pub height: usize,
    pub width: usize,
}

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn mat_t_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

impl CameraModel {
    pub fn new(
        (fx, fy, cx, cy): (f64, f64, f64, f64),
        rotation: Mat3,
        translation: [f64; 3],
        (height, width): (usize, usize),
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            height,
            width,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Input(format!(
                "focal lengths must be positive ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Input("image size must be positive".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::Input("rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Forward-looking camera at `(0, 0, mount_height)` whose optical axis is
    /// world +x (world frame: x forward, y left, z up).
    pub fn forward_facing(height: usize, width: usize, hfov: f64, mount_height: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * hfov).tan();
        let rotation = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];
        Self::new(
            (f, f, 0.5 * width as f64, 0.5 * height as f64),
            rotation,
            [0.0, mount_height, 0.0],
            (height, width),
        )
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let t = mat_t_vec(&self.rotation, self.translation);
        [-t[0], -t[1], -t[2]]
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let q = mat_vec(&self.rotation, p);
        [
            q[0] + self.translation[0],
            q[1] + self.translation[1],
            q[2] + self.translation[2],
        ]
    }

    pub fn camera_to_world(&self, q: [f64; 3]) -> [f64; 3] {
        let d = [
            q[0] - self.translation[0],
            q[1] - self.translation[1],
            q[2] - self.translation[2],
        ];
        mat_t_vec(&self.rotation, d)
    }

    /// Continuous `(row, col, depth)`; `None` when the point is not in front
    /// of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let q = self.world_to_camera(p);
        if !(q[2] > 0.0) {
            return None;
        }
        let col = self.fx * q[0] / q[2] + self.cx;
        let row = self.fy * q[1] / q[2] + self.cy;
        Some((row, col, q[2]))
    }

    /// Inverse of [`project`](Self::project) for a known depth.
    pub fn back_project(&self, row: f64, col: f64, depth: f64) -> [f64; 3] {
        let q = [
            (col - self.cx) / self.fx * depth,
            (row - self.cy) / self.fy * depth,
            depth,
        ];
        self.camera_to_world(q)
    }

    /// World-frame direction (unnormalized) through a continuous pixel position.
    pub fn ray(&self, row: f64, col: f64) -> [f64; 3] {
        mat_t_vec(
            &self.rotation,
            [(col - self.cx) / self.fx, (row - self.cy) / self.fy, 1.0],
        )
    }

    /// Applies a rigid world motion `p -> M p + s` to the extrinsics so the
    /// camera sees the moved world exactly as it saw the original.
    pub fn moved(&self, m: &Mat3, s: [f64; 3]) -> Self {
        // p_cam = R M^T (p' - s) + t
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (0..3).map(|k| self.rotation[i][k] * m[j][k]).sum();
            }
        }
        let rs = mat_vec(&r, s);
        let mut cam = self.clone();
        cam.rotation = r;
        cam.translation = [0, 1, 2].map(|i| self.translation[i] - rs[i]);
        cam
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fx={}\nfy={}\ncx={}\ncy={}", self.fx, self.fy, self.cx, self.cy);
        let _ = writeln!(s, "height={}\nwidth={}", self.height, self.width);
        for i in 0..3 {
            for j in 0..3 {
                let _ = writeln!(s, "r{i}{j}={}", self.rotation[i][j]);
            }
        }
        for i in 0..3 {
            let _ = writeln!(s, "t{i}={}", self.translation[i]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let num = |k: &str| -> Result<f64> {
            let (line, v) = kv.get(k).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing camera key `{k}`"),
            })?;
            v.parse().map_err(|_| Error::Parse {
                line: *line,
                msg: format!("bad value for `{k}`"),
            })
        };
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = num(&format!("r{i}{j}"))?;
            }
        }
        let translation = [num("t0")?, num("t1")?, num("t2")?];
        Self::new(
            (num("fx")?, num("fy")?, num("cx")?, num("cy")?),
            rotation,
            translation,
            (num("height")? as usize, num("width")? as usize),
        )
    }
}
