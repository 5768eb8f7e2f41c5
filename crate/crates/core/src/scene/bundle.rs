//! On-disk scene bundle: a directory holding `cloud.txt`, `image.aydt`,
//! `camera.txt`, `boxes.txt` and `labels.txt` (difficulty and point count per
//! ground-truth box, same order as `boxes.txt`) plus `meta.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CameraModel, PointCloud, Scene};
use crate::detect::{format_boxes, read_boxes, Difficulty, GroundTruth};
use crate::error::{Error, Result};
use crate::numerics::io as tensor_io;

pub const CLOUD_FILE: &str = "cloud.txt";
pub const IMAGE_FILE: &str = "image.aydt";
pub const CAMERA_FILE: &str = "camera.txt";
pub const BOXES_FILE: &str = "boxes.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const META_FILE: &str = "meta.txt";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bundle(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    scene.cloud.save(&dir.join(CLOUD_FILE))?;
    tensor_io::save(&scene.image, &dir.join(IMAGE_FILE))?;
    write(&dir.join(CAMERA_FILE), &scene.camera.to_text())?;
    write(&dir.join(BOXES_FILE), &format_boxes(&scene.boxes()))?;
    let mut labels = String::new();
    for g in &scene.gt {
        let d = match g.difficulty {
            Difficulty::L1 => "L1",
            Difficulty::L2 => "L2",
        };
        let _ = writeln!(labels, "{d} {}", g.num_points);
    }
    write(&dir.join(LABELS_FILE), &labels)?;
    write(&dir.join(META_FILE), &format!("seed={}\n", scene.seed))
}

pub fn read_labels(path: &Path) -> Result<Vec<(Difficulty, usize)>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = || Error::Parse {
                line: i + 1,
                msg: format!("{}: expected `L1|L2 count`", path.display()),
            };
            let mut it = l.split_whitespace();
            let d = match it.next() {
                Some("L1") => Difficulty::L1,
                Some("L2") => Difficulty::L2,
                _ => return Err(err()),
            };
            let n = it.next().and_then(|s| s.parse().ok()).ok_or_else(err)?;
            Ok((d, n))
        })
        .collect()
}

pub fn read_bundle(dir: &Path) -> Result<Scene> {
    let cloud = PointCloud::load(&dir.join(CLOUD_FILE))?;
    let image = tensor_io::load(&dir.join(IMAGE_FILE))?;
    let camera = CameraModel::from_text(&read(&dir.join(CAMERA_FILE))?)?;
    let boxes = read_boxes(&dir.join(BOXES_FILE))?;
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        read_labels(&labels_path)?
    } else {
        vec![(Difficulty::L1, 0); boxes.len()]
    };
    if labels.len() != boxes.len() {
        return Err(Error::Input(format!(
            "{}: {} labels for {} boxes",
            dir.display(),
            labels.len(),
            boxes.len()
        )));
    }
    let seed = read(&dir.join(META_FILE))
        .ok()
        .and_then(|m| m.lines().find_map(|l| l.strip_prefix("seed=")?.trim().parse().ok()))
        .unwrap_or(0);
    let gt = boxes
        .into_iter()
        .zip(labels)
        .map(|(bbox, (difficulty, num_points))| GroundTruth {
            bbox,
            difficulty,
            num_points,
        })
        .collect();
    if image.shape() != [camera.height, camera.width, 3] {
        return Err(Error::Input(format!(
            "{}: image shape {:?} does not match camera {}x{}",
            dir.display(),
            image.shape(),
            camera.height,
            camera.width
        )));
    }
    Ok(Scene {
        gt,
        cloud,
        image,
        camera,
        seed,
    })
}
