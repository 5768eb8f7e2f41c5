use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Tiling of an `H x W` token grid into `h_p x w_p` windows, row-major over
/// windows. Edge windows are padded: their out-of-grid slots are `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPartition {
    pub grid_hw: (usize, usize),
    pub window: (usize, usize),
    /// Per window, `h_p * w_p` slots holding raster token indices.
    pub slots: Vec<Vec<Option<usize>>>,
}

impl WindowPartition {
    pub fn new(grid_hw: (usize, usize), window: (usize, usize)) -> Result<Self> {
        let ((h, w), (hp, wp)) = (grid_hw, window);
        if hp == 0 || wp == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("window {window:?} over grid {grid_hw:?}")));
        }
        let mut slots = Vec::new();
        for wy in 0..h.div_ceil(hp) {
            for wx in 0..w.div_ceil(wp) {
                let mut s = Vec::with_capacity(hp * wp);
                for a in 0..hp {
                    for b in 0..wp {
                        let (r, c) = (wy * hp + a, wx * wp + b);
                        s.push((r < h && c < w).then_some(r * w + c));
                    }
                }
                slots.push(s);
            }
        }
        Ok(Self { grid_hw, window, slots })
    }

    /// `N*`.
    pub fn count(&self) -> usize {
        self.slots.len()
    }

    pub fn tokens(&self, window: usize) -> Vec<usize> {
        self.slots[window].iter().flatten().copied().collect()
    }

    /// Slot positions within `window` that hold real tokens.
    pub fn valid_slots(&self, window: usize) -> Vec<usize> {
        (0..self.slots[window].len())
            .filter(|&s| self.slots[window][s].is_some())
            .collect()
    }

    /// Per window: a zero-padded `(h_p * w_p) x C` block and its validity mask.
    pub fn partition(&self, feat: &Tensor) -> Result<Vec<(Tensor, Vec<bool>)>> {
        let (h, w) = self.grid_hw;
        if feat.rows() != h * w {
            return Err(Error::dim(
                "window partition",
                format!("{:?} vs grid {h}x{w}", feat.shape()),
            ));
        }
        let c = feat.last_dim();
        Ok(self
            .slots
            .iter()
            .map(|s| {
                let mut block = Tensor::zeros(&[s.len(), c]);
                for (i, tok) in s.iter().enumerate() {
                    if let Some(t) = tok {
                        block.row_mut(i).copy_from_slice(feat.row(*t));
                    }
                }
                (block, s.iter().map(Option::is_some).collect())
            })
            .collect())
    }

    /// Inverse of [`partition`](Self::partition); padded rows are discarded.
    pub fn reverse(&self, blocks: &[Tensor]) -> Result<Tensor> {
        let (h, w) = self.grid_hw;
        if blocks.len() != self.count() {
            return Err(Error::dim(
                "window reverse",
                format!("{} blocks for {} windows", blocks.len(), self.count()),
            ));
        }
        let c = blocks.first().map_or(1, Tensor::last_dim);
        let mut out = Tensor::zeros(&[h, w, c]);
        for (s, b) in self.slots.iter().zip(blocks) {
            for (i, tok) in s.iter().enumerate() {
                if let Some(t) = tok {
                    out.row_mut(*t).copy_from_slice(b.row(i));
                }
            }
        }
        Ok(out)
    }
}
