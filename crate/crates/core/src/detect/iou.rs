use super::boxes::Box3D;

type Pt = [f64; 2];

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Intersection of segment `p -> q` with the infinite line through `a, b`.
fn line_hit(p: Pt, q: Pt, a: Pt, b: Pt) -> Pt {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman: clips `subject` against a convex counter-clockwise
/// `clip` polygon.
pub fn clip_polygon(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out: Vec<Pt> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    out.push(line_hit(prev, cur, a, b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(line_hit(prev, cur, a, b));
            }
        }
    }
    out
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s.abs()
}

fn same_footprint(a: &Box3D, b: &Box3D) -> bool {
    a.center[0] == b.center[0]
        && a.center[1] == b.center[1]
        && a.size[0] == b.size[0]
        && a.size[1] == b.size[1]
        && a.yaw == b.yaw
}

/// Area of the BEV footprint intersection.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    let r = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy >= r * r {
        return 0.0;
    }
    if same_footprint(a, b) {
        return a.bev_area();
    }
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()))
}

/// Rotated bird's-eye-view IoU in `[0, 1]`.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    if same_footprint(a, b) {
        return 1.0;
    }
    let inter = bev_intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Overlap length of the vertical extents.
pub fn z_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// 3D IoU: BEV intersection area times vertical overlap over union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = z_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    if same_footprint(a, b) && a.center[2] == b.center[2] && a.size[2] == b.size[2] {
        return 1.0;
    }
    let inter = bev_intersection(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}
