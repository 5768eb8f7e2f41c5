use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scene::PointCloud;

pub type VoxelIndex = [usize; 3];

/// How voxel columns are reduced to one BEV cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BevReduce {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelConfig {
    pub voxel_size: [f64; 3],
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    /// Output widths of the four backbone stages (strides 1, 2, 4, 8).
    pub stage_widths: [usize; 4],
    pub num_keypoints: usize,
    /// First FPS pick is `seed % T`; `None` starts at index 0.
    pub fps_seed: Option<u64>,
    pub bev_reduce: BevReduce,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        Self {
            voxel_size: [0.5, 0.5, 0.25],
            range_min: [0.0, -32.0, -1.0],
            range_max: [64.0, 32.0, 3.0],
            stage_widths: [16, 32, 64, 64],
            num_keypoints: 64,
            fps_seed: None,
            bev_reduce: BevReduce::Mean,
        }
    }
}

impl VoxelConfig {
    pub const INPUT_WIDTH: usize = 4;
    /// Full-scale voxel size; the default trades resolution for a 16x16 stride-8 BEV.
    pub const FINE_VOXEL_SIZE: [f64; 3] = [0.1, 0.1, 0.15];

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.voxel_size[a] > 0.0) || !(self.range_min[a] < self.range_max[a]) {
                return Err(Error::Config(format!(
                    "voxel axis {a}: size must be positive and range ordered"
                )));
            }
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::Config("voxel stage widths must be positive".into()));
        }
        Ok(())
    }

    /// Stride-1 grid extents.
    pub fn extents(&self) -> [usize; 3] {
        std::array::from_fn(|a| ((self.range_max[a] - self.range_min[a]) / self.voxel_size[a]).ceil() as usize)
    }

    /// Extents after `level` stride-2 reductions.
    pub fn stage_extents(&self, level: usize) -> [usize; 3] {
        let mut e = self.extents();
        for _ in 0..level {
            e = e.map(|x| x.div_ceil(2));
        }
        e
    }

    pub fn index_of(&self, p: [f64; 3]) -> Option<VoxelIndex> {
        let e = self.extents();
        let mut idx = [0; 3];
        for a in 0..3 {
            if !(p[a] >= self.range_min[a] && p[a] < self.range_max[a]) {
                return None;
            }
            let i = ((p[a] - self.range_min[a]) / self.voxel_size[a]).floor() as usize;
            if i >= e[a] {
                return None;
            }
            idx[a] = i;
        }
        Some(idx)
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            voxel_size: self.voxel_size,
            origin: self.range_min,
        }
    }
}

/// Maps stride-1 voxel indices back to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub voxel_size: [f64; 3],
    pub origin: [f64; 3],
}

/// Occupied voxels sorted by index, with one feature row per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    indices: Vec<VoxelIndex>,
    features: Tensor,
    lookup: BTreeMap<VoxelIndex, usize>,
    extents: [usize; 3],
    stride: usize,
    geometry: GridGeometry,
}

impl SparseVoxelGrid {
    pub fn new(
        entries: Vec<(VoxelIndex, Vec<f64>)>,
        width: usize,
        extents: [usize; 3],
        stride: usize,
        geometry: GridGeometry,
    ) -> Result<Self> {
        if !matches!(stride, 1 | 2 | 4 | 8) {
            return Err(Error::Input(format!("stride {stride} not in {{1, 2, 4, 8}}")));
        }
        let mut map = BTreeMap::new();
        for (idx, f) in entries {
            if (0..3).any(|a| idx[a] >= extents[a]) {
                return Err(Error::Input(format!("voxel {idx:?} outside extents {extents:?}")));
            }
            if f.len() != width {
                return Err(Error::dim(
                    "sparse grid",
                    format!("feature width {} != {width}", f.len()),
                ));
            }
            if map.insert(idx, f).is_some() {
                return Err(Error::Input(format!("duplicate voxel {idx:?}")));
            }
        }
        let mut indices = Vec::with_capacity(map.len());
        let mut data = Vec::with_capacity(map.len() * width);
        let mut lookup = BTreeMap::new();
        for (i, (idx, f)) in map.into_iter().enumerate() {
            indices.push(idx);
            data.extend(f);
            lookup.insert(idx, i);
        }
        let features = Tensor::new(vec![indices.len(), width], data)?;
        Ok(Self {
            indices,
            features,
            lookup,
            extents,
            stride,
            geometry,
        })
    }

    pub fn empty(width: usize, extents: [usize; 3], stride: usize, geometry: GridGeometry) -> Self {
        Self::new(Vec::new(), width, extents, stride, geometry).expect("empty grid is valid")
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn indices(&self) -> &[VoxelIndex] {
        &self.indices
    }

    /// `N x C` feature rows in index order.
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn get(&self, idx: VoxelIndex) -> Option<&[f64]> {
        self.lookup.get(&idx).map(|&i| self.features.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelIndex, &[f64])> {
        self.indices
            .iter()
            .enumerate()
            .map(|(i, &idx)| (idx, self.features.row(i)))
    }

    /// Edge lengths of one voxel at this stride.
    pub fn cell_size(&self) -> [f64; 3] {
        self.geometry.voxel_size.map(|s| s * self.stride as f64)
    }

    pub fn center(&self, idx: VoxelIndex) -> [f64; 3] {
        let cs = self.cell_size();
        std::array::from_fn(|a| self.geometry.origin[a] + (idx[a] as f64 + 0.5) * cs[a])
    }

    pub fn diagonal(&self) -> f64 {
        self.cell_size().iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// Same indices with new feature rows.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] != self.len() {
            return Err(Error::dim(
                "sparse grid",
                format!("{:?} rows for {} voxels", features.shape(), self.len()),
            ));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Text dump: a header then one `i j k f0 .. f{C-1}` line per voxel.
    pub fn to_text(&self) -> String {
        let e = self.extents;
        let mut s = format!(
            "# stride {} extents {} {} {} width {}\n",
            self.stride,
            e[0],
            e[1],
            e[2],
            self.width()
        );
        for (idx, f) in self.iter() {
            let _ = write!(s, "{} {} {}", idx[0], idx[1], idx[2]);
            for x in f {
                let _ = write!(s, " {x:?}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output; geometry is not stored in
    /// the dump and must be supplied.
    pub fn from_text(text: &str, geometry: GridGeometry) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header_err = || Error::Parse {
            line: 1,
            msg: "expected `# stride S extents X Y Z width C`".into(),
        };
        let (_, header) = lines.next().ok_or_else(header_err)?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 9 || h[0] != "#" || h[1] != "stride" || h[3] != "extents" || h[7] != "width" {
            return Err(header_err());
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| header_err());
        let stride = num(h[2])?;
        let extents = [num(h[4])?, num(h[5])?, num(h[6])?];
        let width = num(h[8])?;
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 3 + width {
                return Err(err(&format!("expected {} fields, found {}", 3 + width, tok.len())));
            }
            let mut idx = [0; 3];
            for a in 0..3 {
                idx[a] = tok[a].parse().map_err(|_| err("bad voxel index"))?;
            }
            let f = tok[3..]
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| err("bad feature value")))
                .collect::<Result<Vec<_>>>()?;
            entries.push((idx, f));
        }
        Self::new(entries, width, extents, stride, geometry)
    }
}

/// Buckets in-range points; each voxel holds the mean `(u, v, w, r)` of its
/// points. Returns the grid and the per-voxel point counts.
pub fn voxelize_with_counts(cloud: &PointCloud, cfg: &VoxelConfig) -> Result<(SparseVoxelGrid, Vec<usize>)> {
    cfg.validate()?;
    let mut acc: BTreeMap<VoxelIndex, ([f64; 4], usize)> = BTreeMap::new();
    for p in cloud.points() {
        if let Some(idx) = cfg.index_of(p.xyz()) {
            let e = acc.entry(idx).or_insert(([0.0; 4], 0));
            for (s, f) in e.0.iter_mut().zip(p.features()) {
                *s += f;
            }
            e.1 += 1;
        }
    }
    let counts = acc.values().map(|v| v.1).collect();
    let entries = acc
        .into_iter()
        .map(|(idx, (s, n))| (idx, s.iter().map(|x| x / n as f64).collect()))
        .collect();
    let grid = SparseVoxelGrid::new(entries, VoxelConfig::INPUT_WIDTH, cfg.extents(), 1, cfg.geometry())?;
    Ok((grid, counts))
}

pub fn voxelize(cloud: &PointCloud, cfg: &VoxelConfig) -> Result<SparseVoxelGrid> {
    voxelize_with_counts(cloud, cfg).map(|(g, _)| g)
}

/// Replaces the absolute `(u, v, w)` channels by the mean's offset from the
/// voxel center in voxel units, so features no longer depend on where the
/// voxel sits in the world. Reflectance is kept.
pub fn local_features(grid: &SparseVoxelGrid) -> Result<SparseVoxelGrid> {
    if grid.width() != VoxelConfig::INPUT_WIDTH || grid.stride() != 1 {
        return Err(Error::Config("local features need a raw stride-1 grid".into()));
    }
    let cs = grid.cell_size();
    let mut f = grid.features().clone();
    for (i, &idx) in grid.indices().iter().enumerate() {
        let c = grid.center(idx);
        let row = f.row_mut(i);
        for a in 0..3 {
            row[a] = (row[a] - c[a]) / cs[a];
        }
    }
    grid.with_features(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::LidarPoint;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(pts: &[[f64; 4]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| LidarPoint::new(p[0], p[1], p[2], p[3])).collect()).unwrap()
    }

    #[test]
    fn mean_features() {
        let cfg = VoxelConfig::default();
        let g = voxelize(&cloud(&[[1.1, 0.1, 0.1, 0.2], [1.2, 0.2, 0.2, 0.4]]), &cfg).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.features().row(0)[3] - 0.3).abs() < 1e-15);

        let g = voxelize(&cloud(&[[5.3, -2.2, 0.7, 0.9]]), &cfg).unwrap();
        assert_eq!(g.features().row(0), &[5.3, -2.2, 0.7, 0.9]);
        assert_eq!(g.indices()[0], [10, 59, 6]);
    }

    #[test]
    fn out_of_range_points_dropped() {
        let cfg = VoxelConfig::default();
        let g = voxelize(
            &cloud(&[[-0.1, 0.0, 0.0, 0.1], [64.0, 0.0, 0.0, 0.1], [1.0, 0.0, 3.5, 0.1]]),
            &cfg,
        )
        .unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn stage_extents_halve_with_ceiling() {
        let cfg = VoxelConfig {
            range_max: [64.5, 32.0, 3.0],
            ..VoxelConfig::default()
        };
        assert_eq!(cfg.extents(), [129, 128, 16]);
        assert_eq!(cfg.stage_extents(1), [65, 64, 8]);
        assert_eq!(cfg.stage_extents(3), [17, 16, 2]);
    }

    #[test]
    fn rejects_bad_grids() {
        let geo = VoxelConfig::default().geometry();
        assert!(SparseVoxelGrid::new(vec![([4, 0, 0], vec![0.0])], 1, [4, 4, 4], 1, geo).is_err());
        assert!(SparseVoxelGrid::new(vec![([0, 0, 0], vec![0.0]); 2], 1, [4, 4, 4], 1, geo).is_err());
        assert!(SparseVoxelGrid::new(vec![], 1, [4, 4, 4], 3, geo).is_err());
    }

    #[test]
    fn matches_brute_force_bucketing() {
        let cfg = VoxelConfig {
            voxel_size: [2.0, 2.0, 1.0],
            range_min: [0.0, -4.0, -1.0],
            range_max: [8.0, 4.0, 2.0],
            ..VoxelConfig::default()
        };
        let mut rng = crate::numerics::named_rng(7, "bucket");
        let pts: Vec<[f64; 4]> = (0..300)
            .map(|_| {
                [
                    rng.random_range(-1.0..9.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.5..2.5),
                    rng.random(),
                ]
            })
            .collect();
        let g = voxelize(&cloud(&pts), &cfg).unwrap();
        // Oracle: for every candidate cell, scan all points.
        let e = cfg.extents();
        let mut expect = Vec::new();
        for i in 0..e[0] {
            for j in 0..e[1] {
                for k in 0..e[2] {
                    let lo = [
                        cfg.range_min[0] + i as f64 * 2.0,
                        cfg.range_min[1] + j as f64 * 2.0,
                        cfg.range_min[2] + k as f64,
                    ];
                    let hi = [lo[0] + 2.0, lo[1] + 2.0, lo[2] + 1.0];
                    let inside: Vec<&[f64; 4]> = pts
                        .iter()
                        .filter(|p| (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a]))
                        .collect();
                    if !inside.is_empty() {
                        let n = inside.len() as f64;
                        let mean: Vec<f64> = (0..4).map(|c| inside.iter().map(|p| p[c]).sum::<f64>() / n).collect();
                        expect.push(([i, j, k], mean));
                    }
                }
            }
        }
        assert_eq!(g.len(), expect.len());
        for ((idx, f), (eidx, ef)) in g.iter().zip(&expect) {
            assert_eq!(idx, *eidx);
            for (a, b) in f.iter().zip(ef) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_features_are_offsets() {
        let cfg = VoxelConfig::default();
        let g = voxelize(&cloud(&[[1.25, 0.25, 0.125, 0.5]]), &cfg).unwrap();
        let l = local_features(&g).unwrap();
        assert_eq!(l.features().row(0), &[0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn text_dump_round_trip() {
        let cfg = VoxelConfig::default();
        let g = voxelize(&cloud(&[[1.1, 0.1, 0.1, 0.2], [9.0, 3.0, 1.0, 0.7]]), &cfg).unwrap();
        assert_eq!(SparseVoxelGrid::from_text(&g.to_text(), cfg.geometry()).unwrap(), g);
        let err =
            SparseVoxelGrid::from_text("# stride 1 extents 2 2 2 width 1\n0 0 x 1.0\n", cfg.geometry()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn mean_conserves_mass(pts in prop::collection::vec((-2.0f64..66.0, -33.0f64..33.0, -1.5f64..3.5, 0.0f64..1.0), 0..200)) {
            let cfg = VoxelConfig::default();
            let pts: Vec<[f64; 4]> = pts.into_iter().map(|(a, b, c, d)| [a, b, c, d]).collect();
            let c = cloud(&pts);
            let (g, counts) = voxelize_with_counts(&c, &cfg).unwrap();
            let mut got = [0.0; 4];
            for ((_, f), n) in g.iter().zip(&counts) {
                for a in 0..4 {
                    got[a] += *n as f64 * f[a];
                }
            }
            let mut want = [0.0; 4];
            for p in c.points().iter().filter(|p| cfg.index_of(p.xyz()).is_some()) {
                for (w, f) in want.iter_mut().zip(p.features()) {
                    *w += f;
                }
            }
            for a in 0..4 {
                prop_assert!((got[a] - want[a]).abs() < 1e-9, "{got:?} vs {want:?}");
            }
        }
    }
}
