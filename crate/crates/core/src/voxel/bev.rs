use super::grid::{BevReduce, SparseVoxelGrid};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Collapses the height axis to an `X x Y x C` map (rows follow x, columns
/// follow y), then nearest-neighbor resamples to `out_hw`.
pub fn bev_collapse(grid: &SparseVoxelGrid, out_hw: (usize, usize), reduce: BevReduce) -> Result<Tensor> {
    let (h, w) = out_hw;
    if h == 0 || w == 0 {
        return Err(Error::Config("BEV output size must be positive".into()));
    }
    let e = grid.extents();
    let c = grid.width();
    let mut acc = Tensor::zeros(&[e[0], e[1], c]);
    let mut count = vec![0usize; e[0] * e[1]];
    for (idx, f) in grid.iter() {
        let cell = idx[0] * e[1] + idx[1];
        let row = acc.row_mut(cell);
        for (a, &x) in row.iter_mut().zip(f) {
            *a = match (reduce, count[cell]) {
                (_, 0) => x,
                (BevReduce::Mean, _) => *a + x,
                (BevReduce::Max, _) => a.max(x),
            };
        }
        count[cell] += 1;
    }
    if reduce == BevReduce::Mean {
        for (cell, &n) in count.iter().enumerate() {
            if n > 1 {
                acc.row_mut(cell).iter_mut().for_each(|a| *a /= n as f64);
            }
        }
    }
    if (h, w) == (e[0], e[1]) {
        return Ok(acc);
    }
    let mut out = Tensor::zeros(&[h, w, c]);
    for r in 0..h {
        let sr = r * e[0] / h;
        for col in 0..w {
            let sc = col * e[1] / w;
            if sr < e[0] && sc < e[1] {
                out.row_mut(r * w + col).copy_from_slice(acc.row(sr * e[1] + sc));
            }
        }
    }
    Ok(out)
}
