use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::camera::CameraModel;
use super::cloud::{LidarPoint, PointCloud};
use crate::detect::{Box3D, Difficulty, GroundTruth, ObjectClass};
use crate::error::{Error, Result};
use crate::numerics::{named_rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_boxes: usize,
    /// Horizontal range band for box centers, meters.
    pub min_range: f64,
    pub max_range: f64,
    /// Half-angle of the azimuth sector boxes are placed in, radians.
    pub max_azimuth: f64,
    pub vehicle_fraction: f64,
    /// Expected LiDAR hits on a box at 10 m; scales as 1/range².
    pub box_points_at_10m: f64,
    pub max_box_points: usize,
    pub ground_points: usize,
    pub ground_min_range: f64,
    /// Std-dev of Gaussian range noise, meters.
    pub range_noise: f64,
    pub image_height: usize,
    pub image_width: usize,
    /// Horizontal field of view, radians.
    pub hfov: f64,
    /// Height of the shared LiDAR/camera origin above ground.
    pub mount_height: f64,
    /// Minimum clearance between box footprints' bounding circles.
    pub min_gap: f64,
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_boxes: 5,
            min_range: 10.0,
            max_range: 60.0,
            max_azimuth: 25f64.to_radians(),
            vehicle_fraction: 0.7,
            box_points_at_10m: 60.0,
            max_box_points: 70,
            ground_points: 100,
            ground_min_range: 4.0,
            range_noise: 0.02,
            image_height: 64,
            image_width: 64,
            hfov: 60f64.to_radians(),
            mount_height: 1.8,
            min_gap: 0.5,
            max_attempts: 500,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.min_range,
            self.max_range - self.min_range,
            self.max_azimuth,
            self.hfov,
            self.mount_height,
            self.ground_min_range,
        ];
        if positive.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Config("scene ranges must be positive and ordered".into()));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::Config("scene image size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.vehicle_fraction) || self.range_noise < 0.0 {
            return Err(Error::Config(
                "vehicle_fraction must be in [0, 1] and noise >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::forward_facing(self.image_height, self.image_width, self.hfov, self.mount_height)
    }

    /// Expected number of surface samples for a box at horizontal range `r`.
    pub fn points_for_range(&self, r: f64) -> usize {
        let n = (self.box_points_at_10m * (10.0 / r).powi(2)).round() as usize;
        n.clamp(1, self.max_box_points.max(1))
    }
}

/// Paired LiDAR/camera frame with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gt: Vec<GroundTruth>,
    pub cloud: PointCloud,
    /// `H x W x 3`, values in `[0, 1]`.
    pub image: Tensor,
    pub camera: CameraModel,
    pub seed: u64,
}

impl Scene {
    pub fn boxes(&self) -> Vec<Box3D> {
        self.gt.iter().map(|g| g.bbox).collect()
    }
}

const VEHICLE_SIZE: [f64; 3] = [4.5, 1.9, 1.6];
const PEDESTRIAN_SIZE: [f64; 3] = [0.8, 0.8, 1.8];

fn place_boxes(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Box3D>> {
    let mut boxes: Vec<Box3D> = Vec::with_capacity(cfg.num_boxes);
    for k in 0..cfg.num_boxes {
        let mut placed = false;
        for _ in 0..cfg.max_attempts {
            let class = if rng.random::<f64>() < cfg.vehicle_fraction {
                ObjectClass::Vehicle
            } else {
                ObjectClass::Pedestrian
            };
            let base = match class {
                ObjectClass::Vehicle => VEHICLE_SIZE,
                ObjectClass::Pedestrian => PEDESTRIAN_SIZE,
            };
            let size = base.map(|s| s * rng.random_range(0.9..1.1));
            let r = rng.random_range(cfg.min_range..cfg.max_range);
            let az = rng.random_range(-cfg.max_azimuth..cfg.max_azimuth);
            let yaw = rng.random_range(-PI..PI);
            let b = Box3D::new([r * az.cos(), r * az.sin(), 0.5 * size[2]], size, yaw, class)?;
            let clear = boxes.iter().all(|o| {
                let d = (b.center[0] - o.center[0]).hypot(b.center[1] - o.center[1]);
                d >= b.bev_radius() + o.bev_radius() + cfg.min_gap
            });
            if clear {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place box {} of {} without overlap after {} attempts",
                k + 1,
                cfg.num_boxes,
                cfg.max_attempts
            )));
        }
    }
    Ok(boxes)
}

/// Faces seen from `eye`, as `(axis, sign, area)`; the bottom face is skipped.
fn visible_faces(b: &Box3D, eye: [f64; 3]) -> Vec<(usize, f64, f64)> {
    let e = b.to_local(eye);
    let mut faces = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            if axis == 2 && sign < 0.0 {
                continue;
            }
            let half = 0.5 * b.size[axis];
            if sign * (e[axis] - sign * half) > 0.0 {
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                faces.push((axis, sign, b.size[a1] * b.size[a2]));
            }
        }
    }
    faces
}

fn with_range_noise(p: [f64; 3], eye: [f64; 3], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let d = [p[0] - eye[0], p[1] - eye[1], p[2] - eye[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let k = 1.0 + noise.sample(rng) / len;
    [eye[0] + d[0] * k, eye[1] + d[1] * k, eye[2] + d[2] * k]
}

fn sample_box_points(b: &Box3D, n: usize, eye: [f64; 3], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<LidarPoint> {
    let faces = visible_faces(b, eye);
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let (lo, hi) = match b.class {
        ObjectClass::Vehicle => (0.5, 0.9),
        ObjectClass::Pedestrian => (0.3, 0.6),
    };
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.random_range(0.0..total);
        let mut face = faces[faces.len() - 1];
        for &f in &faces {
            if pick < f.2 {
                face = f;
                break;
            }
            pick -= f.2;
        }
        let (axis, sign, _) = face;
        let mut local = [0.0; 3];
        for (i, x) in local.iter_mut().enumerate() {
            let half = 0.5 * b.size[i];
            *x = if i == axis {
                sign * half
            } else {
                rng.random_range(-half..half)
            };
        }
        let p = with_range_noise(b.to_world(local), eye, noise, rng);
        pts.push(LidarPoint::new(p[0], p[1], p[2], rng.random_range(lo..hi)));
    }
    pts
}

fn sample_ground(cfg: &SceneConfig, boxes: &[Box3D], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<LidarPoint> {
    let eye = [0.0, 0.0, cfg.mount_height];
    let (lr0, lr1) = (cfg.ground_min_range.ln(), cfg.max_range.ln());
    let sector = cfg.max_azimuth.max(0.5 * cfg.hfov) * 1.2;
    let mut pts = Vec::with_capacity(cfg.ground_points);
    for _ in 0..cfg.ground_points {
        // log-uniform range gives areal density ∝ 1/r²
        let r = rng.random_range(lr0..lr1).exp();
        let az = rng.random_range(-sector..sector);
        let p = with_range_noise([r * az.cos(), r * az.sin(), 0.0], eye, noise, rng);
        let refl = rng.random_range(0.05..0.2);
        let under_box = boxes.iter().any(|b| {
            let l = b.to_local(p);
            l[0].abs() <= 0.5 * b.size[0] && l[1].abs() <= 0.5 * b.size[1]
        });
        if !under_box {
            pts.push(LidarPoint::new(p[0], p[1], p[2], refl));
        }
    }
    pts
}

/// Nearest positive ray parameter and hit axis of a ray against a box.
fn ray_box(b: &Box3D, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
    let o = b.to_local(origin);
    let (s, c) = b.yaw.sin_cos();
    let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for i in 0..3 {
        let h = 0.5 * b.size[i];
        if d[i].abs() < 1e-15 {
            if o[i].abs() > h {
                return None;
            }
            continue;
        }
        let (a, bb) = ((-h - o[i]) / d[i], (h - o[i]) / d[i]);
        let (lo, hi) = if a < bb { (a, bb) } else { (bb, a) };
        if lo > t0 {
            t0 = lo;
            axis = i;
        }
        t1 = t1.min(hi);
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
}

const SKY: [f64; 3] = [0.6, 0.75, 0.95];
const GROUND: [f64; 3] = [0.35, 0.33, 0.3];

fn class_color(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Vehicle => [0.8, 0.2, 0.15],
        ObjectClass::Pedestrian => [0.2, 0.3, 0.85],
    }
}

/// Flat-shaded render: one ray per pixel center, nearest box face wins.
pub fn render_image(boxes: &[Box3D], cam: &CameraModel) -> Tensor {
    let (h, w) = (cam.height, cam.width);
    let eye = cam.center();
    let light = {
        let l = [0.4, 0.3, 0.866];
        let n: f64 = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
        l.map(|x| x / n.sqrt())
    };
    let mut img = Tensor::zeros(&[h, w, 3]);
    for r in 0..h {
        for c in 0..w {
            let dir = cam.ray(r as f64 + 0.5, c as f64 + 0.5);
            let mut color = if dir[2] < 0.0 { GROUND } else { SKY };
            let mut best = f64::INFINITY;
            for b in boxes {
                if let Some((t, axis)) = ray_box(b, eye, dir) {
                    if t < best {
                        best = t;
                        let (s, co) = b.yaw.sin_cos();
                        let n = match axis {
                            0 => [co, s, 0.0],
                            1 => [-s, co, 0.0],
                            _ => [0.0, 0.0, 1.0],
                        };
                        let shade = 0.5 + 0.5 * (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).abs();
                        color = class_color(b.class).map(|x| x * shade);
                    }
                }
            }
            img.row_mut(r * w + c).copy_from_slice(&color);
        }
    }
    img
}

/// Generates a deterministic synthetic scene.
pub fn synth_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let camera = cfg.camera()?;
    let mut rng = named_rng(seed, "scene");
    let noise = Normal::new(0.0, cfg.range_noise).map_err(|e| Error::Config(e.to_string()))?;
    let eye = [0.0, 0.0, cfg.mount_height];

    let boxes = place_boxes(cfg, &mut rng)?;
    let mut points = Vec::new();
    for b in &boxes {
        let r = b.center[0].hypot(b.center[1]);
        let mut pts = sample_box_points(b, cfg.points_for_range(r), eye, &noise, &mut rng);
        if !pts.iter().any(|p| b.contains(p.xyz())) {
            // noise pushed every sample outside: add one return just inside
            // the face nearest the sensor
            let l = b.to_local(eye);
            let axis = if l[0].abs() / b.size[0] > l[1].abs() / b.size[1] {
                0
            } else {
                1
            };
            let mut local = [0.0; 3];
            local[axis] = l[axis].signum() * 0.45 * b.size[axis];
            let p = b.to_world(local);
            pts.push(LidarPoint::new(p[0], p[1], p[2], 0.5));
        }
        points.extend(pts);
    }
    points.extend(sample_ground(cfg, &boxes, &noise, &mut rng));
    let cloud = PointCloud::new(points)?;

    let gt = boxes
        .iter()
        .map(|b| {
            let n = cloud.points().iter().filter(|p| b.contains(p.xyz())).count();
            GroundTruth {
                bbox: *b,
                difficulty: Difficulty::from_point_count(n),
                num_points: n,
            }
        })
        .collect();
    let image = render_image(&boxes, &camera);
    Ok(Scene {
        gt,
        cloud,
        image,
        camera,
        seed,
    })
}
