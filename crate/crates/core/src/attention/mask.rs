//! Shifted-window masks and relative position index tables.

use rstt_tensor::{Float, Tensor};

use crate::error::{dim_err, Result};

/// Additive score for blocked token pairs.
pub const MASK_VALUE: f64 = -1e9;

/// Region labels of every token of every window after a cyclic shift by
/// `(-dy, -dx)`. Tokens in the same window but different labels came from
/// non-adjacent parts of the image and must not attend to each other.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub windows: usize,
    /// Spatial tokens per window, `M*M`.
    pub tokens: usize,
    labels: Vec<u8>,
}

fn region(i: usize, len: usize, m: usize, shift: usize) -> u8 {
    if shift == 0 || i < len - m {
        0
    } else if i < len - shift {
        1
    } else {
        2
    }
}

/// Mask for an `h x w` grid of `m x m` windows shifted by `(dy, dx)`.
pub fn build_shift_mask(h: usize, w: usize, m: usize, dy: usize, dx: usize) -> Result<AttentionMask> {
    if m == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(dim_err("build_shift_mask", format!("window {m} does not tile {h}x{w}")));
    }
    if dy >= m || dx >= m {
        return Err(dim_err("build_shift_mask", format!("shift ({dy}, {dx}) must be below the window size {m}")));
    }
    let (wy, wx) = (h / m, w / m);
    let mut labels = Vec::with_capacity(h * w);
    for by in 0..wy {
        for bx in 0..wx {
            for iy in 0..m {
                for ix in 0..m {
                    let (y, x) = (by * m + iy, bx * m + ix);
                    labels.push(region(y, h, m, dy) * 3 + region(x, w, m, dx));
                }
            }
        }
    }
    Ok(AttentionMask { windows: wy * wx, tokens: m * m, labels })
}

impl AttentionMask {
    pub fn label(&self, window: usize, token: usize) -> u8 {
        self.labels[window * self.tokens + token]
    }

    pub fn blocked(&self, window: usize, i: usize, j: usize) -> bool {
        self.label(window, i) != self.label(window, j)
    }

    /// True when no pair is blocked.
    pub fn is_empty(&self) -> bool {
        (0..self.windows).all(|w| (0..self.tokens).all(|i| self.label(w, i) == self.label(w, 0)))
    }

    /// Number of distinct per-window blocking patterns.
    pub fn distinct_patterns(&self) -> usize {
        let mut seen: Vec<Vec<bool>> = Vec::new();
        for w in 0..self.windows {
            let pattern: Vec<bool> =
                (0..self.tokens).flat_map(|i| (0..self.tokens).map(move |j| (i, j))).map(|(i, j)| self.blocked(w, i, j)).collect();
            if !seen.contains(&pattern) {
                seen.push(pattern);
            }
        }
        seen.len()
    }

    /// Dense additive mask `[windows, 1, q_frames*M*M, k_frames*M*M]`. Token
    /// `t*M*M + s` of a window sits at spatial slot `s` of frame `t`.
    pub fn to_tensor<T: Float>(&self, q_frames: usize, k_frames: usize) -> Tensor<T> {
        let (lq, lk) = (q_frames * self.tokens, k_frames * self.tokens);
        let blocked = T::from_f64_lossy(MASK_VALUE);
        let mut data = vec![T::zero(); self.windows * lq * lk];
        for w in 0..self.windows {
            for i in 0..lq {
                let li = self.label(w, i % self.tokens);
                let row = &mut data[(w * lq + i) * lk..(w * lq + i + 1) * lk];
                for (j, v) in row.iter_mut().enumerate() {
                    if self.label(w, j % self.tokens) != li {
                        *v = blocked;
                    }
                }
            }
        }
        Tensor::new(&[self.windows, 1, lq, lk], data).expect("mask shape")
    }
}

/// Rows of the self-attention bias table: offsets in (dt, dy, dx).
pub fn self_table_rows(frames: usize, m: usize) -> usize {
    (2 * frames - 1) * (2 * m - 1) * (2 * m - 1)
}

/// Rows of the cross-attention bias table. Temporal offsets are counted in
/// half input-frame steps, so a query between two inputs has its own rows.
pub fn cross_table_rows(frames: usize, m: usize) -> usize {
    (4 * frames - 3) * (2 * m - 1) * (2 * m - 1)
}

fn spatial_offset(i: usize, j: usize, m: usize) -> usize {
    let (yi, xi, yj, xj) = (i / m, i % m, j / m, j % m);
    (yi + m - 1 - yj) * (2 * m - 1) + (xi + m - 1 - xj)
}

/// Table row of every (query, key) pair in a `frames*M*M` window, for a
/// table that covers `table_frames` frames.
pub fn self_relative_index(frames: usize, table_frames: usize, m: usize) -> Vec<usize> {
    let (mm, span) = (m * m, (2 * m - 1) * (2 * m - 1));
    let l = frames * mm;
    let mut idx = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in 0..l {
            let dt = i / mm + table_frames - 1 - j / mm;
            idx.push(dt * span + spatial_offset(i % mm, j % mm, m));
        }
    }
    idx
}

/// Table row of every (query frame, query token, key token) triple. Query
/// frame `f` sits at `offsets[f]` half-steps; key frame `k` at `2k`.
pub fn cross_relative_index(offsets: &[isize], frames: usize, m: usize) -> Result<Vec<usize>> {
    let (mm, span) = (m * m, (2 * m - 1) * (2 * m - 1));
    let reach = 2 * (frames as isize - 1);
    if let Some(bad) = offsets.iter().find(|&&o| !(0..=reach).contains(&o)) {
        return Err(dim_err("cross_relative_index", format!("query offset {bad} outside 0..={reach}")));
    }
    let mut idx = Vec::with_capacity(offsets.len() * mm * frames * mm);
    for &p in offsets {
        for i in 0..mm {
            for j in 0..frames * mm {
                let dt = (p - 2 * (j / mm) as isize + reach) as usize;
                idx.push(dt * span + spatial_offset(i, j % mm, m));
            }
        }
    }
    Ok(idx)
}
