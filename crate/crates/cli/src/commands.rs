use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rstt::network::{count_params, forward_macs};
use rstt::train::{degrade, synth_clip, train_loop, DataSource, FixedSample, LoopOutput, LossRecord, SyntheticStream, CHECKPOINT_FILE};
use rstt::verify::model_checks;
use rstt::{Checkpoint, FrameQuad, Preset, Rstt, Trainer};
use rstt_tensor::gradcheck::op_checks;
use rstt_tensor::{seeded_rng, GradCheckOptions, Tensor};

use crate::config::{prepare_output, RunConfig};
use crate::error::{CliError, CliResult};
use crate::frames::{read_quad, write_clip, write_normalized_gray};

/// Relative-error bound of every per-op gradient check.
pub const OP_TOL: f64 = 1e-5;
pub const BENCH_FILE: &str = "bench.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn load_model(path: &Path) -> CliResult<Rstt<f32>> {
    let ckpt = Checkpoint::<f32>::load(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(Rstt::from_params(ckpt.config, ckpt.params)?)
}

pub struct TrainSummary {
    pub records: Vec<LossRecord>,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

pub fn train(cfg: &RunConfig, log: &mut dyn Write) -> CliResult<TrainSummary> {
    let model_cfg = cfg.model_config(cfg.preset)?;
    cfg.train.validate()?;
    let d = &cfg.data;
    if d.height == 0 || d.width == 0 || !d.height.is_multiple_of(4) || !d.width.is_multiple_of(4) {
        return Err(CliError::usage(format!("data size {}x{} must be positive multiples of 4", d.width, d.height)));
    }
    let resume = match &cfg.checkpoint {
        Some(_) => Some(cfg.require_checkpoint()?),
        None => None,
    };
    let out = cfg.require_output()?.to_path_buf();

    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::<f32>::load(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            writeln!(log, "resuming from {} at iteration {}", path.display(), ckpt.iteration)?;
            Trainer::resume(ckpt, cfg.train.clone())?
        }
        None => Trainer::new(Rstt::new(model_cfg, cfg.seed)?, cfg.train.clone())?,
    };
    let mut data: Box<dyn DataSource<f32>> = if d.fixed {
        Box::new(FixedSample(degrade(&synth_clip(cfg.seed, d.height, d.width)?)?))
    } else {
        Box::new(SyntheticStream { seed: cfg.seed, height: d.height, width: d.width })
    };
    writeln!(log, "training {} parameters for {} iterations", trainer.model.num_params(), cfg.train.max_iters)?;

    let every = (cfg.train.max_iters / 10).max(1);
    let start = Instant::now();
    let records = train_loop(&mut trainer, data.as_mut(), &LoopOutput { dir: Some(out.clone()) }, |r| {
        if (r.iteration + 1) % every == 0 {
            let _ = writeln!(log, "iter {:>6}  lr {:.3e}  loss {:.6}", r.iteration, r.lr, r.loss);
        }
    })?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(last) = records.last() {
        writeln!(log, "final loss {:.6} after {} iterations", last.loss, last.iteration + 1)?;
    }
    writeln!(log, "wall time {seconds:.2} s")?;
    Ok(TrainSummary { records, checkpoint: out.join(CHECKPOINT_FILE), seconds })
}

pub struct InferSummary {
    pub outputs: Vec<PathBuf>,
    pub seconds: f64,
}

pub fn infer(cfg: &RunConfig, log: &mut dyn Write) -> CliResult<InferSummary> {
    let ckpt = cfg.require_checkpoint()?;
    let input = cfg.require_input()?;
    let out = cfg.require_output()?;
    let model = load_model(ckpt)?;
    let quad = read_quad(input)?;
    let start = Instant::now();
    let clip = model.forward(&quad)?;
    let seconds = start.elapsed().as_secs_f64();
    let outputs = write_clip(out, &clip)?;
    writeln!(
        log,
        "{}x{} -> 7 frames at {}x{} in {seconds:.2} s",
        quad.width(),
        quad.height(),
        clip.width(),
        clip.height()
    )?;
    Ok(InferSummary { outputs, seconds })
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub preset: Preset,
    pub height: usize,
    pub width: usize,
    pub reps: usize,
    pub params: usize,
    pub macs: u64,
    pub median_ms: f64,
    pub total_seconds: f64,
    /// Output frames per second: seven per forward.
    pub fps: f64,
}

pub fn bench(cfg: &RunConfig, log: &mut dyn Write) -> CliResult<Vec<BenchRow>> {
    let b = &cfg.bench;
    if b.reps == 0 || b.height == 0 || b.width == 0 || b.presets.is_empty() {
        return Err(CliError::usage("bench needs reps >= 1, a positive size and at least one preset"));
    }
    let configs = b.presets.iter().map(|&p| Ok((p, cfg.model_config(p)?))).collect::<CliResult<Vec<_>>>()?;
    if let Some(dir) = &cfg.output {
        prepare_output(dir)?;
    }
    let quad = FrameQuad::new(Tensor::<f32>::uniform(&[4, 3, b.height, b.width], 0.0, 1.0, &mut seeded_rng(cfg.seed)))?;

    let mut rows = Vec::new();
    for (preset, model_cfg) in configs {
        let model = Rstt::<f32>::new(model_cfg.clone(), cfg.seed)?;
        for _ in 0..b.warmup {
            model.forward(&quad)?;
        }
        let mut times = Vec::with_capacity(b.reps);
        for _ in 0..b.reps {
            let start = Instant::now();
            let out = model.forward(&quad)?;
            times.push(start.elapsed().as_secs_f64());
            drop(out);
        }
        let total: f64 = times.iter().sum();
        times.sort_by(f64::total_cmp);
        let median = if times.len() % 2 == 1 {
            times[times.len() / 2]
        } else {
            (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
        };
        rows.push(BenchRow {
            preset,
            height: b.height,
            width: b.width,
            reps: b.reps,
            params: count_params(&model_cfg),
            macs: forward_macs(&model_cfg, b.height, b.width),
            median_ms: median * 1e3,
            total_seconds: total,
            fps: 7.0 * b.reps as f64 / total,
        });
    }

    writeln!(log, "{:<6} {:>9} {:>6} {:>12} {:>10} {:>11} {:>8}", "preset", "size", "reps", "params", "GMACs", "median ms", "FPS")?;
    for r in &rows {
        writeln!(
            log,
            "{:<6} {:>9} {:>6} {:>12} {:>10.2} {:>11.1} {:>8.3}",
            r.preset.to_string(),
            format!("{}x{}", r.width, r.height),
            r.reps,
            r.params,
            r.macs as f64 / 1e9,
            r.median_ms,
            r.fps
        )?;
    }
    if let Some(dir) = &cfg.output {
        let mut csv = String::from("preset,height,width,reps,params,macs,median_ms,total_seconds,fps\n");
        for r in &rows {
            csv += &format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.preset, r.height, r.width, r.reps, r.params, r.macs, r.median_ms, r.total_seconds, r.fps
            );
        }
        fs::write(dir.join(BENCH_FILE), csv)?;
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckSettings {
    /// Coordinates sampled per parameter tensor in the model-level checks.
    pub coords: usize,
    pub seed: u64,
    /// Added to every analytic gradient. Only for exercising the failure path.
    pub corrupt: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings { coords: 3, seed: 0, corrupt: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: String,
    pub kind: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub rows: Vec<CheckRow>,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.passed())
    }

    /// Exit 4 naming the check furthest over its tolerance.
    pub fn verdict(&self) -> CliResult<()> {
        let ratio = |r: &CheckRow| if r.max_rel_error.is_nan() { f64::INFINITY } else { r.max_rel_error / r.tolerance };
        match self.failures().max_by(|a, b| ratio(a).total_cmp(&ratio(b))) {
            None => Ok(()),
            Some(worst) => Err(CliError::verify(format!(
                "{} of {} gradient checks failed; worst is {} with relative error {:.3e} (tolerance {:.0e})",
                self.failures().count(),
                self.rows.len(),
                worst.name,
                worst.max_rel_error,
                worst.tolerance
            ))),
        }
    }
}

/// Every registered op check plus the model-level checks. A check that
/// errors out is reported with an infinite error.
pub fn gradcheck(settings: &GradcheckSettings, log: &mut dyn Write) -> CliResult<GradcheckReport> {
    let op_opts = GradCheckOptions { seed: settings.seed, corrupt: settings.corrupt, ..Default::default() };
    let model_opts = GradCheckOptions { max_coords: settings.coords, ..op_opts.clone() };
    let mut rows = Vec::new();
    writeln!(log, "{:<20} {:<6} {:>12} {:>10}  status", "check", "kind", "rel error", "tolerance")?;
    let mut emit = |row: CheckRow, log: &mut dyn Write| -> CliResult<()> {
        let status = if row.passed() { "ok" } else { "FAIL" };
        writeln!(log, "{:<20} {:<6} {:>12.3e} {:>10.0e}  {status}", row.name, row.kind, row.max_rel_error, row.tolerance)?;
        rows.push(row);
        Ok(())
    };
    for check in op_checks() {
        let err = (check.run)(&op_opts).unwrap_or(f64::INFINITY);
        emit(CheckRow { name: check.name.to_string(), kind: "op", max_rel_error: err, tolerance: OP_TOL }, log)?;
    }
    for check in model_checks() {
        let err = (check.run)(&model_opts).map(|r| r.max_rel_error).unwrap_or(f64::INFINITY);
        emit(CheckRow { name: check.name.to_string(), kind: "model", max_rel_error: err, tolerance: check.tolerance }, log)?;
    }
    let report = GradcheckReport { rows };
    writeln!(log, "{} of {} checks passed", report.rows.len() - report.failures().count(), report.rows.len())?;
    Ok(report)
}

pub struct AttnDumpSummary {
    pub manifest: PathBuf,
    pub maps: usize,
}

/// One grayscale PNG per (frame, window, head), each rescaled to the full
/// 8-bit range; the manifest records the original min and max.
pub fn attn_dump(cfg: &RunConfig, log: &mut dyn Write) -> CliResult<AttnDumpSummary> {
    let ckpt = cfg.require_checkpoint()?;
    let input = cfg.require_input()?;
    let out = cfg.require_output()?;
    let model = load_model(ckpt)?;
    let quad = read_quad(input)?;
    let dump = model.dump_attention(&quad, cfg.attn_stage)?;
    let (rows, cols) = dump.map_shape();
    let mut manifest = String::from("file,frame,window,head,rows,cols,min,max\n");
    for f in 0..dump.frames() {
        for w in 0..dump.windows() {
            for h in 0..dump.heads() {
                let name = format!("attn_f{f}_w{w:04}_h{h}.png");
                let (min, max) = write_normalized_gray(&out.join(&name), dump.map(f, w, h), rows, cols)?;
                manifest += &format!("{name},{f},{w},{h},{rows},{cols},{min:e},{max:e}\n");
            }
        }
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest)?;
    writeln!(
        log,
        "wrote {} maps ({} frames x {} windows x {} heads) of decoder stage {}",
        dump.map_count(),
        dump.frames(),
        dump.windows(),
        dump.heads(),
        dump.stage
    )?;
    Ok(AttnDumpSummary { manifest: path, maps: dump.map_count() })
}
