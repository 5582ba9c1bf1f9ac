//! Central-difference verification of analytic gradients, plus a registry
//! of per-op checks over small random shapes.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::shape::MixRow;
use crate::seeded_rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates sampled per input; inputs this small or smaller are checked exhaustively.
    pub max_coords: usize,
    pub seed: u64,
    /// Added to every analytic gradient entry before comparison. Only for
    /// proving the harness catches a broken backward pass.
    pub corrupt: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-4, max_coords: 64, seed: 0, corrupt: 0.0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compare backward-mode gradients of the scalar `f` against central differences.
/// The error of one coordinate is `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let g = Graph::new().with_finite_checks();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars)?;
    if loss.value().numel() != 1 {
        return Err(Error::Contract(format!("grad_check needs a scalar function, got {:?}", loss.shape())));
    }
    let grads = g.backward(&loss)?;

    let eval = |which: usize, idx: usize, delta: f64| -> Result<f64> {
        let eg = Graph::inference().with_finite_checks();
        let vars: Vec<Var<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[idx] += delta;
                }
                eg.constant(t)
            })
            .collect();
        Ok(f(&eg, &vars)?.value().item())
    };

    let mut rng = seeded_rng(opts.seed);
    let mut report = GradCheckReport::default();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        let n = analytic.numel();
        let coords: Vec<usize> =
            if n <= opts.max_coords { (0..n).collect() } else { sample(&mut rng, n, opts.max_coords).into_vec() };
        for idx in coords {
            let a = analytic.data()[idx] + opts.corrupt;
            let numeric = (eval(i, idx, opts.h)? - eval(i, idx, -opts.h)?) / (2.0 * opts.h);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.coords_checked == 1 {
                report = GradCheckReport { max_rel_error: err, worst_input: i, worst_index: idx, analytic: a, numeric, ..report };
            }
        }
    }
    Ok(report)
}

/// `sum(out * r)` for a fixed random `r`, so every output element gets a distinct weight.
pub fn projection_loss(g: &Graph<f64>, out: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut rng = seeded_rng(seed ^ 0x9e37_79b9);
    let r = g.constant(Tensor::randn(out.shape(), 1.0, &mut rng));
    let prod = g.mul(out, &r)?;
    g.sum(&prod)
}

/// Every op name that `Graph` records with a backward closure.
pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "gelu",
    "relu",
    "sum",
    "mean",
    "mean_axis",
    "matmul",
    "matmul_nt",
    "linear",
    "softmax",
    "layer_norm",
    "reshape",
    "permute",
    "roll",
    "narrow",
    "concat",
    "broadcast_to",
    "gather_rows",
    "frame_mix",
    "conv2d",
    "conv_transpose2d",
    "pixel_shuffle",
    "trilinear_resize",
];

pub type CheckFn = fn(&GradCheckOptions) -> Result<f64>;

/// A named gradient check; `run` returns the worst relative error over its cases.
#[derive(Clone, Copy)]
pub struct OpCheck {
    pub name: &'static str,
    pub run: CheckFn,
}

fn rand_inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = seeded_rng(seed);
    shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect()
}

/// Run `build` on each case and return the worst error.
fn worst<F>(cases: &[Vec<&[usize]>], opts: &GradCheckOptions, build: F) -> Result<f64>
where
    F: Fn(&Graph<f64>, &[Var<f64>], usize) -> Result<Var<f64>>,
{
    let mut worst: f64 = 0.0;
    for (case, shapes) in cases.iter().enumerate() {
        let seed = opts.seed.wrapping_add(case as u64 * 7919);
        let inputs = rand_inputs(shapes, seed);
        let report = grad_check(
            |g, v| {
                let out = build(g, v, case)?;
                projection_loss(g, &out, seed)
            },
            &inputs,
            opts,
        )?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

macro_rules! binary_check {
    ($fn_name:ident, $method:ident) => {
        fn $fn_name(o: &GradCheckOptions) -> Result<f64> {
            let cases: Vec<Vec<&[usize]>> =
                vec![vec![&[2, 3], &[2, 3]], vec![&[2, 3, 4], &[4]], vec![&[3, 1, 2], &[1, 4, 2]]];
            worst(&cases, o, |g, v, _| g.$method(&v[0], &v[1]))
        }
    };
}

binary_check!(check_add, add);
binary_check!(check_sub, sub);
binary_check!(check_mul, mul);

fn unary_cases() -> Vec<Vec<&'static [usize]>> {
    vec![vec![&[5]], vec![&[2, 3]], vec![&[2, 3, 4]]]
}

fn check_scale(o: &GradCheckOptions) -> Result<f64> {
    worst(&unary_cases(), o, |g, v, _| g.scale(&v[0], -1.75))
}

fn check_gelu(o: &GradCheckOptions) -> Result<f64> {
    worst(&unary_cases(), o, |g, v, _| g.gelu(&v[0]))
}

fn check_relu(o: &GradCheckOptions) -> Result<f64> {
    // keep inputs away from the kink
    worst(&unary_cases(), o, |g, v, _| {
        let away = g.constant(v[0].value().map(|x| if x.abs() < 0.05 { 0.1 } else { 0.0 }));
        let x = g.add(&v[0], &away)?;
        g.relu(&x)
    })
}

fn check_sum(o: &GradCheckOptions) -> Result<f64> {
    worst(&unary_cases(), o, |g, v, _| {
        let s = g.sum(&v[0])?;
        g.mul(&s, &s)
    })
}

fn check_mean(o: &GradCheckOptions) -> Result<f64> {
    worst(&unary_cases(), o, |g, v, _| {
        let s = g.mean(&v[0])?;
        g.mul(&s, &s)
    })
}

fn check_mean_axis(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[4, 3]], vec![&[2, 3, 4]], vec![&[3, 2, 2, 2]]];
    worst(&cases, o, |g, v, case| g.mean_axis(&v[0], case))
}

fn check_matmul(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> =
        vec![vec![&[3, 4], &[4, 2]], vec![&[2, 3, 4], &[4, 5]], vec![&[2, 1, 3, 4], &[1, 2, 4, 2]]];
    worst(&cases, o, |g, v, _| g.matmul(&v[0], &v[1]))
}

fn check_matmul_nt(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> =
        vec![vec![&[3, 4], &[2, 4]], vec![&[2, 3, 4], &[5, 4]], vec![&[3, 2, 3, 4], &[1, 2, 5, 4]]];
    worst(&cases, o, |g, v, _| g.matmul_nt(&v[0], &v[1]))
}

fn check_linear(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> =
        vec![vec![&[3, 4], &[4, 2], &[2]], vec![&[2, 3, 4], &[4, 5], &[5]], vec![&[2, 1, 3, 2], &[2, 3], &[3]]];
    worst(&cases, o, |g, v, case| g.linear(&v[0], &v[1], (case != 1).then_some(&v[2])))
}

fn check_softmax(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[6]], vec![&[3, 5]], vec![&[2, 4, 3]]];
    worst(&cases, o, |g, v, case| g.softmax(&v[0], if case == 2 { 1 } else { v[0].shape().len() - 1 }))
}

fn check_layer_norm(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> =
        vec![vec![&[4], &[4], &[4]], vec![&[3, 6], &[6], &[6]], vec![&[2, 2, 8], &[8], &[8]]];
    worst(&cases, o, |g, v, _| g.layer_norm(&v[0], &v[1], &v[2], 1e-5))
}

fn check_reshape(o: &GradCheckOptions) -> Result<f64> {
    let targets: [&[usize]; 3] = [&[5, 1], &[3, 2], &[4, 6]];
    worst(&unary_cases(), o, |g, v, case| g.reshape(&v[0], targets[case]))
}

fn check_permute(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[2, 3]], vec![&[2, 3, 4]], vec![&[2, 3, 2, 2]]];
    let perms: [&[usize]; 3] = [&[1, 0], &[2, 0, 1], &[1, 3, 0, 2]];
    worst(&cases, o, |g, v, case| g.permute(&v[0], perms[case]))
}

fn check_roll(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[5]], vec![&[2, 4, 4, 3]], vec![&[3, 5, 2]]];
    let shifts: [&[(usize, isize)]; 3] = [&[(0, 2)], &[(1, -2), (2, -2)], &[(0, 1), (1, 7)]];
    worst(&cases, o, |g, v, case| g.roll(&v[0], shifts[case]))
}

fn check_narrow(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[5]], vec![&[3, 4]], vec![&[2, 5, 3]]];
    let args = [(0, 1, 3), (1, 2, 2), (1, 0, 4)];
    worst(&cases, o, |g, v, case| {
        let (axis, start, len) = args[case];
        g.narrow(&v[0], axis, start, len)
    })
}

fn check_concat(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> =
        vec![vec![&[2], &[3]], vec![&[2, 3], &[2, 1]], vec![&[1, 2, 3], &[2, 2, 3]]];
    let axes = [0, 1, 0];
    worst(&cases, o, |g, v, case| g.concat(&[&v[0], &v[1]], axes[case]))
}

fn check_broadcast_to(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[3]], vec![&[1, 3]], vec![&[2, 1, 2]]];
    let targets: [&[usize]; 3] = [&[2, 3], &[4, 3], &[3, 2, 4, 2]];
    worst(&cases, o, |g, v, case| g.broadcast_to(&v[0], targets[case]))
}

fn check_gather_rows(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[3, 2]], vec![&[5, 1]], vec![&[4, 3]]];
    let index: [&[usize]; 3] = [&[0, 2, 2, 1], &[4, 4, 0], &[3, 1, 0, 1, 2, 3]];
    worst(&cases, o, |g, v, case| g.gather_rows(&v[0], Arc::new(index[case].to_vec())))
}

fn check_frame_mix(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[2, 3]], vec![&[4, 2, 2]], vec![&[3, 1, 2, 2]]];
    worst(&cases, o, |g, v, case| {
        let n = v[0].shape()[0];
        let rows: Vec<MixRow> = (0..n + case)
            .map(|i| vec![(i % n, 0.75), ((i + 1) % n, 0.25 + case as f64)])
            .collect();
        g.frame_mix(&v[0], &rows)
    })
}

fn check_conv2d(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![
        vec![&[1, 2, 5, 5], &[3, 2, 3, 3], &[3]],
        vec![&[2, 2, 6, 5], &[2, 2, 3, 3], &[2]],
        vec![&[1, 3, 4, 4], &[2, 3, 1, 1], &[2]],
    ];
    let args = [(1, 1), (2, 1), (1, 0)];
    worst(&cases, o, |g, v, case| g.conv2d(&v[0], &v[1], Some(&v[2]), args[case].0, args[case].1))
}

fn check_conv_transpose2d(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![
        vec![&[1, 2, 3, 3], &[2, 3, 2, 2], &[3]],
        vec![&[2, 2, 2, 3], &[2, 2, 3, 3], &[2]],
        vec![&[1, 3, 3, 2], &[3, 2, 2, 2], &[2]],
    ];
    let strides = [2, 2, 1];
    worst(&cases, o, |g, v, case| g.conv_transpose2d(&v[0], &v[1], Some(&v[2]), strides[case]))
}

fn check_pixel_shuffle(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[1, 4, 2, 2]], vec![&[2, 8, 1, 3]], vec![&[1, 9, 2, 1]]];
    let r = [2, 2, 3];
    worst(&cases, o, |g, v, case| g.pixel_shuffle(&v[0], r[case]))
}

fn check_trilinear(o: &GradCheckOptions) -> Result<f64> {
    let cases: Vec<Vec<&[usize]>> = vec![vec![&[2, 1, 2, 2]], vec![&[4, 2, 3, 2]], vec![&[3, 1, 4, 3]]];
    let sizes = [(3, 3, 5), (7, 6, 8), (2, 2, 3)];
    worst(&cases, o, |g, v, case| {
        let (t, h, w) = sizes[case];
        g.trilinear_resize(&v[0], t, h, w)
    })
}

/// One check per entry of [`DIFFERENTIABLE_OPS`], in the same order.
pub fn op_checks() -> Vec<OpCheck> {
    let fns: [CheckFn; 26] = [
        check_add,
        check_sub,
        check_mul,
        check_scale,
        check_gelu,
        check_relu,
        check_sum,
        check_mean,
        check_mean_axis,
        check_matmul,
        check_matmul_nt,
        check_linear,
        check_softmax,
        check_layer_norm,
        check_reshape,
        check_permute,
        check_roll,
        check_narrow,
        check_concat,
        check_broadcast_to,
        check_gather_rows,
        check_frame_mix,
        check_conv2d,
        check_conv_transpose2d,
        check_pixel_shuffle,
        check_trilinear,
    ];
    DIFFERENTIABLE_OPS.iter().zip(fns).map(|(&name, run)| OpCheck { name, run }).collect()
}

/// Random input in `[lo, hi)` for ad-hoc checks.
pub fn uniform_input<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}
