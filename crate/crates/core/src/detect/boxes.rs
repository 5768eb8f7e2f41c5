use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Vehicle, ObjectClass::Pedestrian];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vehicle" | "0" => Ok(ObjectClass::Vehicle),
            "pedestrian" | "1" => Ok(ObjectClass::Pedestrian),
            other => Err(format!("unknown class `{other}`")),
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = yaw - 2.0 * PI * ((yaw + PI) / (2.0 * PI)).floor();
    if y >= PI {
        y -= 2.0 * PI;
    }
    if y < -PI {
        y += 2.0 * PI;
    }
    y
}

/// Oriented box: center, `(length, width, height)` along the box's local
/// x/y/z axes, and yaw about +z. `score` is meaningful for detections only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class: ObjectClass,
    pub score: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class: ObjectClass) -> Result<Self> {
        if size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Input(format!("box sizes must be positive, got {size:?}")));
        }
        if center.iter().any(|c| !c.is_finite()) || !yaw.is_finite() {
            return Err(Error::Input("box center and yaw must be finite".into()));
        }
        Ok(Self {
            center,
            size,
            yaw: normalize_yaw(yaw),
            class,
            score: 1.0,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn bev_area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    /// Half-diagonal of the BEV footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.size[0].hypot(self.size[1])
    }

    pub fn z_range(&self) -> (f64, f64) {
        let h = 0.5 * self.size[2];
        (self.center[2] - h, self.center[2] + h)
    }

    /// BEV corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.size[0], 0.5 * self.size[1]);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .map(|(x, y)| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
    }

    /// World point to the box-local frame.
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * p[0] - s * p[1],
            self.center[1] + s * p[0] + c * p[1],
            self.center[2] + p[2],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| l[i].abs() <= 0.5 * self.size[i])
    }

    /// Same box grown by `margin` on every side.
    pub fn enlarged(&self, margin: f64) -> Self {
        let mut b = *self;
        for s in &mut b.size {
            *s += 2.0 * margin;
        }
        b
    }
}

/// Difficulty bucket of a ground-truth object (L2 is harder).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Difficulty {
    #[default]
    L1,
    L2,
}

impl Difficulty {
    /// Stand-in rule: objects hit by fewer than five LiDAR points are L2.
    pub fn from_point_count(n: usize) -> Self {
        if n < 5 {
            Difficulty::L2
        } else {
            Difficulty::L1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: Box3D,
    pub difficulty: Difficulty,
    pub num_points: usize,
}

/// Residuals of a box relative to an anchor: center offsets scaled by the
/// anchor's BEV diagonal (height for z), log size ratios, and yaw delta.
pub type Residual = [f64; 7];

pub fn encode_residual(b: &Box3D, anchor: &Box3D) -> Residual {
    let diag = anchor.size[0].hypot(anchor.size[1]);
    [
        (b.center[0] - anchor.center[0]) / diag,
        (b.center[1] - anchor.center[1]) / diag,
        (b.center[2] - anchor.center[2]) / anchor.size[2],
        (b.size[0] / anchor.size[0]).ln(),
        (b.size[1] / anchor.size[1]).ln(),
        (b.size[2] / anchor.size[2]).ln(),
        normalize_yaw(b.yaw - anchor.yaw),
    ]
}

pub fn decode_residual(r: &Residual, anchor: &Box3D) -> Box3D {
    let diag = anchor.size[0].hypot(anchor.size[1]);
    Box3D {
        center: [
            anchor.center[0] + r[0] * diag,
            anchor.center[1] + r[1] * diag,
            anchor.center[2] + r[2] * anchor.size[2],
        ],
        size: [
            anchor.size[0] * r[3].exp(),
            anchor.size[1] * r[4].exp(),
            anchor.size[2] * r[5].exp(),
        ],
        yaw: normalize_yaw(anchor.yaw + r[6]),
        class: anchor.class,
        score: anchor.score,
    }
}

pub const BOX_HEADER: &str = "# class cx cy cz l w h yaw score";

/// One box per line: `class cx cy cz l w h yaw score`.
pub fn format_box(b: &Box3D) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {}",
        b.class, b.center[0], b.center[1], b.center[2], b.size[0], b.size[1], b.size[2], b.yaw, b.score
    )
}

pub fn format_boxes(boxes: &[Box3D]) -> String {
    let mut s = String::from(BOX_HEADER);
    s.push('\n');
    for b in boxes {
        s.push_str(&format_box(b));
        s.push('\n');
    }
    s
}

/// Parses the box text format. Blank lines and `#` comments are skipped;
/// errors carry the 1-based line number.
pub fn parse_boxes(text: &str) -> Result<Vec<Box3D>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        let class: ObjectClass = fields[0].parse().map_err(err)?;
        let mut nums = [0.0; 8];
        for (n, f) in nums.iter_mut().zip(&fields[1..]) {
            *n = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
        }
        let b = Box3D::new([nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5]], nums[6], class)
            .map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&nums[7]) {
            return Err(err(format!("score {} outside [0, 1]", nums[7])));
        }
        out.push(b.with_score(nums[7]));
    }
    Ok(out)
}

pub fn read_boxes(path: &Path) -> Result<Vec<Box3D>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_boxes(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

pub fn write_boxes(path: &Path, boxes: &[Box3D]) -> Result<()> {
    fs::write(path, format_boxes(boxes)).map_err(|e| Error::io(path, e))
}
