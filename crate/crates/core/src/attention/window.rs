//! Window partitioning and cyclic shifts on `[N, H, W, C]` token grids.

use rstt_tensor::{Float, Graph, Var};

use crate::error::{dim_err, Result};

pub(crate) fn dims4<T: Float>(op: &'static str, x: &Var<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, h, w, c] => Ok([n, h, w, c]),
        ref s => Err(dim_err(op, format!("expected [N, H, W, C], got {s:?}"))),
    }
}

fn check_tiles(op: &'static str, h: usize, w: usize, m: usize) -> Result<()> {
    if m == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(dim_err(op, format!("window {m} does not tile {h}x{w}")));
    }
    Ok(())
}

/// `[N, H, W, C] -> [nW, N*M*M, C]`: each window holds its M x M positions
/// from every frame, ordered (t, y, x).
pub fn window_partition<T: Float>(g: &Graph<T>, x: &Var<T>, m: usize) -> Result<Var<T>> {
    let [n, h, w, c] = dims4("window_partition", x)?;
    check_tiles("window_partition", h, w, m)?;
    let y = g.reshape(x, &[n, h / m, m, w / m, m, c])?;
    let y = g.permute(&y, &[1, 3, 0, 2, 4, 5])?;
    Ok(g.reshape(&y, &[(h / m) * (w / m), n * m * m, c])?)
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Float>(g: &Graph<T>, win: &Var<T>, m: usize, n: usize, h: usize, w: usize) -> Result<Var<T>> {
    check_tiles("window_reverse", h, w, m)?;
    let c = match *win.shape() {
        [nw, l, c] if nw == (h / m) * (w / m) && l == n * m * m => c,
        ref s => return Err(dim_err("window_reverse", format!("{s:?} is not a window stack of a {n}x{h}x{w} grid with M={m}"))),
    };
    let y = g.reshape(win, &[h / m, w / m, n, m, m, c])?;
    let y = g.permute(&y, &[2, 0, 3, 1, 4, 5])?;
    Ok(g.reshape(&y, &[n, h, w, c])?)
}

/// Per-frame windows: `[N, H, W, C] -> [N, nW, M*M, C]`.
pub fn window_partition_frames<T: Float>(g: &Graph<T>, x: &Var<T>, m: usize) -> Result<Var<T>> {
    let [n, h, w, c] = dims4("window_partition", x)?;
    check_tiles("window_partition", h, w, m)?;
    let y = g.reshape(x, &[n, h / m, m, w / m, m, c])?;
    let y = g.permute(&y, &[0, 1, 3, 2, 4, 5])?;
    Ok(g.reshape(&y, &[n, (h / m) * (w / m), m * m, c])?)
}

/// Inverse of [`window_partition_frames`].
pub fn window_reverse_frames<T: Float>(g: &Graph<T>, win: &Var<T>, m: usize, h: usize, w: usize) -> Result<Var<T>> {
    check_tiles("window_reverse", h, w, m)?;
    let (n, c) = match *win.shape() {
        [n, nw, l, c] if nw == (h / m) * (w / m) && l == m * m => (n, c),
        ref s => return Err(dim_err("window_reverse", format!("{s:?} is not a per-frame window stack of {h}x{w} with M={m}"))),
    };
    let y = g.reshape(win, &[n, h / m, w / m, m, m, c])?;
    let y = g.permute(&y, &[0, 1, 3, 2, 4, 5])?;
    Ok(g.reshape(&y, &[n, h, w, c])?)
}

/// Toroidal roll of the spatial axes: `out[y][x] = x[y - dy][x - dx]`.
pub fn cyclic_shift<T: Float>(g: &Graph<T>, x: &Var<T>, dy: isize, dx: isize) -> Result<Var<T>> {
    let [_, h, w, _] = dims4("cyclic_shift", x)?;
    let (dy, dx) = (dy.rem_euclid(h as isize), dx.rem_euclid(w as isize));
    let shifts: Vec<(usize, isize)> = [(1, dy), (2, dx)].into_iter().filter(|&(_, s)| s != 0).collect();
    if shifts.is_empty() {
        return Ok(x.clone());
    }
    Ok(g.roll(x, &shifts)?)
}
