//! Finite-difference checks of the model's composite gradients, on top of
//! the per-op registry in `rstt_tensor::gradcheck`.

use rstt_tensor::gradcheck::projection_loss;
use rstt_tensor::{grad_check, seeded_rng, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};

use crate::attention::{swin_decoder_block, swin_encoder_block, Ctx};
use crate::config::ModelConfig;
use crate::error::{Result, RsttError};
use crate::network::Rstt;
use crate::params::InitScheme;
use crate::train::{charbonnier, CharbonnierMode};

/// Tolerance of single-block and loss checks.
pub const BLOCK_TOL: f64 = 1e-5;
/// Tolerance of the reduced end-to-end model.
pub const END_TO_END_TOL: f64 = 1e-4;

fn lift<T>(r: Result<T>) -> rstt_tensor::Result<T> {
    r.map_err(|e| match e {
        RsttError::Tensor(t) => t,
        other => rstt_tensor::Error::Contract(other.to_string()),
    })
}

pub type ModelCheckFn = fn(&GradCheckOptions) -> Result<GradCheckReport>;

pub struct ModelCheck {
    pub name: &'static str,
    pub tolerance: f64,
    pub run: ModelCheckFn,
}

/// Every model-level check with its tolerance.
pub fn model_checks() -> Vec<ModelCheck> {
    vec![
        ModelCheck { name: "charbonnier", tolerance: BLOCK_TOL, run: check_charbonnier },
        ModelCheck { name: "encoder_block", tolerance: BLOCK_TOL, run: check_encoder_block },
        ModelCheck { name: "decoder_block", tolerance: BLOCK_TOL, run: check_decoder_block },
        ModelCheck { name: "end_to_end", tolerance: END_TO_END_TOL, run: check_end_to_end },
    ]
}

fn check_charbonnier(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(opts.seed ^ 11);
    let inputs = [Tensor::uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut rng), Tensor::uniform(&[2, 3, 4, 4], 0.0, 1.0, &mut rng)];
    Ok(grad_check(|g, v| lift(charbonnier(g, &v[0], &v[1], 1e-3, CharbonnierMode::Elementwise)), &inputs, opts)?)
}

/// A C=8, M=2 model with every weight random, so no path is switched off
/// by a zero-initialized exit.
pub fn reduced_model() -> Result<Rstt<f64>> {
    Rstt::with_init(ModelConfig::tiny(), 7, InitScheme::Randomized)
}

/// Check a function of the model parameters plus one extra input tensor.
fn check_params(
    model: &Rstt<f64>,
    extra: Tensor<f64>,
    opts: &GradCheckOptions,
    f: impl Fn(&Graph<f64>, &[Var<f64>], &Var<f64>) -> Result<Var<f64>>,
) -> Result<GradCheckReport> {
    let mut inputs = model.params().tensors().to_vec();
    inputs.push(extra);
    Ok(grad_check(
        |g, v| {
            let (params, x) = v.split_at(v.len() - 1);
            let out = lift(f(g, params, &x[0]))?;
            projection_loss(g, &out, 3)
        },
        &inputs,
        opts,
    )?)
}

fn check_encoder_block(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let model = reduced_model()?;
    let x = Tensor::randn(&[4, 4, 4, 8], 1.0, &mut seeded_rng(opts.seed ^ 12));
    let block = model.ids().enc[0][0];
    check_params(&model, x, opts, |g, params, x| {
        let cx = Ctx::new(g, params, model.config());
        swin_encoder_block(&cx, x, &block)
    })
}

fn check_decoder_block(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let model = reduced_model()?;
    let mut rng = seeded_rng(opts.seed ^ 13);
    let dict = Tensor::randn(&[4, 4, 4, 8], 1.0, &mut rng);
    let q = Tensor::randn(&[7, 4, 4, 8], 1.0, &mut rng);
    let block = model.ids().dec[0][0];
    let offsets: Vec<isize> = (0..7).collect();
    check_params(&model, q, opts, |g, params, q| {
        let cx = Ctx::new(g, params, model.config());
        swin_decoder_block(&cx, q, &g.param(dict.clone()), &block, &offsets, false)
    })
}

fn check_end_to_end(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let model = reduced_model()?;
    let input = Tensor::uniform(&[4, 3, 16, 16], 0.0, 1.0, &mut seeded_rng(opts.seed ^ 14));
    let inputs = model.params().tensors().to_vec();
    Ok(grad_check(
        |g, v| {
            let out = lift(model.forward_var(g, v, &input))?;
            projection_loss(g, &out, 4)
        },
        &inputs,
        opts,
    )?)
}
