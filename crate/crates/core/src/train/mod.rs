//! Optimisation, the training loop and evaluation.

mod adam;
mod config;

pub use adam::{adam_step, AdamConfig, TrainState};
pub use config::{lr_schedule, parse_key_values, RunConfig, TrainConfig};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::cube::HsiCube;
use crate::data::{bicubic_resize, degrade, extract_patches, Direction, PatchSpec};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig, SstvNorm};
use crate::metrics::{evaluate_all, psnr, MetricReport, CSV_HEADER};
use crate::network::{init_params_with, sspsr_forward, NetworkConfig, SspsrParams};
use crate::tensor::{Tape, Tensor};

/// One low/high-resolution training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub lr: HsiCube,
    pub hr: HsiCube,
}

/// Cuts patches from each cube (or keeps whole cubes) and degrades them.
pub fn make_samples(cubes: &[HsiCube], scale: usize, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for cube in cubes {
        let pieces = match cfg.patch_size {
            Some(p) => extract_patches(cube, PatchSpec::new(p, cfg.patch_overlap)?)?,
            None => vec![cube.clone()],
        };
        for hr in pieces {
            if hr.height() % scale != 0 || hr.width() % scale != 0 {
                return Err(Error::Config(format!(
                    "training extent {}x{} is not divisible by scale {scale}",
                    hr.height(),
                    hr.width()
                )));
            }
            out.push(Sample {
                lr: degrade(&hr, scale)?,
                hr,
            });
        }
    }
    Ok(out)
}

fn stack_batch(samples: &[Sample], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let lr: Vec<Tensor> = idx.iter().map(|&i| samples[i].lr.tensor().clone()).collect();
    let hr: Vec<Tensor> = idx.iter().map(|&i| samples[i].hr.tensor().clone()).collect();
    Ok((Tensor::stack(&lr)?, Tensor::stack(&hr)?))
}

/// Objective value and per-parameter gradients for one batch.
pub fn loss_and_grads(
    params: &SspsrParams,
    lr: &Tensor,
    hr: &Tensor,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let tape = Tape::new();
    let bound = params.store().bind(&tape);
    let pred = sspsr_forward(tape.constant(lr.clone()), params, &bound)?;
    let loss = total_loss(pred, tape.constant(hr.clone()), loss_cfg)?;
    let value = loss.value().item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let out: Vec<Option<Tensor>> = bound.vars().iter().map(|&v| grads.take(v)).collect();
    for (id, g) in params.store().ids().zip(&out) {
        if g.as_ref().is_some_and(|g| !g.all_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{}`",
                params.store().name(id)
            )));
        }
    }
    Ok((value, out))
}

/// Objective value only.
pub fn batch_loss(params: &SspsrParams, lr: &Tensor, hr: &Tensor, loss_cfg: &LossConfig) -> Result<f64> {
    let tape = Tape::new();
    let bound = params.store().bind_frozen(&tape);
    let pred = sspsr_forward(tape.constant(lr.clone()), params, &bound)?;
    total_loss(pred, tape.constant(hr.clone()), loss_cfg)?.value().item()
}

/// Network output for one low-resolution cube, clipped to `[0, 1]`.
pub fn super_resolve(params: &SspsrParams, lr: &HsiCube) -> Result<HsiCube> {
    let out = params.infer(&lr.to_batch())?;
    Ok(HsiCube::from_tensor(out)?.clamp01())
}

/// Mean PSNR of the network on degraded copies of `cubes`.
pub fn validation_psnr(params: &SspsrParams, cubes: &[HsiCube]) -> Result<f64> {
    let scale = params.config().scale;
    let mut total = 0.0;
    for hr in cubes {
        let sr = super_resolve(params, &degrade(hr, scale)?)?;
        total += psnr(hr, &sr, 1.0)?;
    }
    Ok(total / cubes.len() as f64)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,lr,steps,train_loss,val_psnr";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let val = self.val_psnr.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{:e},{},{:.8},{val}",
            self.epoch, self.lr, self.steps, self.train_loss
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for row in log {
        let _ = writeln!(s, "{}", row.csv_row());
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation PSNR (earliest on
    /// ties); the final parameters when there is no validation set.
    pub best: SspsrParams,
    pub best_epoch: usize,
    pub last: SspsrParams,
    pub log: Vec<EpochLog>,
    /// Loss of every optimiser step, in order.
    pub step_losses: Vec<f64>,
    pub state: TrainState,
}

/// Visits samples in seeded random order, reshuffling after each pass.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: 0,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

fn check_cubes(cubes: &[HsiCube], bands: usize, what: &str) -> Result<()> {
    if let Some((i, c)) = cubes.iter().enumerate().find(|(_, c)| c.bands() != bands) {
        return Err(Error::Config(format!(
            "{what} cube {i} has {} bands, the network expects {bands}",
            c.bands()
        )));
    }
    Ok(())
}

/// Trains from a fresh initialisation seeded by `cfg.seed`.
pub fn train(
    train_cubes: &[HsiCube],
    val_cubes: &[HsiCube],
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = init_params_with(net, cfg.seed, cfg.init)?;
    train_from(params, train_cubes, val_cubes, cfg, |_| {})
}

/// Trains starting from `params`, reporting each finished epoch.
pub fn train_from(
    mut params: SspsrParams,
    train_cubes: &[HsiCube],
    val_cubes: &[HsiCube],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_cubes.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let bands = params.config().bands;
    check_cubes(train_cubes, bands, "training")?;
    check_cubes(val_cubes, bands, "validation")?;
    let samples = make_samples(train_cubes, params.config().scale, cfg)?;
    let loss_cfg = LossConfig {
        alpha: cfg.alpha,
        sstv_norm: SstvNorm::PerSite,
    };
    let adam = cfg.adam();
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| samples.len().div_ceil(cfg.batch_size));
    let mut sampler = Sampler::new(samples.len(), cfg.seed);
    let mut state = TrainState::new(params.store());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(cfg.epochs * steps);
    let mut best: Option<(f64, usize, SspsrParams)> = None;

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        for _ in 0..steps {
            let idx = sampler.next_batch(cfg.batch_size);
            let (x, y) = stack_batch(&samples, &idx)?;
            let (loss, grads) = loss_and_grads(&params, &x, &y, &loss_cfg)?;
            adam_step(params.store_mut(), &grads, &mut state, lr, &adam)?;
            state.record_loss(loss);
            step_losses.push(loss);
        }
        let val_psnr = if val_cubes.is_empty() {
            None
        } else {
            Some(validation_psnr(&params, val_cubes)?)
        };
        let row = EpochLog {
            epoch,
            lr,
            steps,
            train_loss: state.take_mean_loss(),
            val_psnr,
        };
        on_epoch(&row);
        if let Some(v) = val_psnr {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, params.clone()));
            }
        }
        log.push(row);
    }
    let (best_epoch, best) = match best {
        Some((_, e, p)) => (e, p),
        None => (cfg.epochs - 1, params.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        log,
        step_losses,
        state,
    })
}

/// Scores for one cube and method.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub report: MetricReport,
}

/// Per-cube rows for the network and the bicubic baseline, plus means.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub scale: usize,
    pub model: Vec<EvalRow>,
    pub bicubic: Vec<EvalRow>,
    pub model_mean: MetricReport,
    pub bicubic_mean: MetricReport,
}

/// Suffix marking baseline rows in the CSV.
pub const BICUBIC_SUFFIX: &str = "@bicubic";

impl EvalTable {
    /// Network rows, then `mean`, then baseline rows and `mean@bicubic`.
    pub fn to_csv(&self) -> String {
        let d = self.scale;
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.model {
            let _ = writeln!(s, "{}", r.report.csv_row(&r.id, d));
        }
        let _ = writeln!(s, "{}", self.model_mean.csv_row("mean", d));
        for r in &self.bicubic {
            let _ = writeln!(s, "{}", r.report.csv_row(&format!("{}{BICUBIC_SUFFIX}", r.id), d));
        }
        let _ = writeln!(s, "{}", self.bicubic_mean.csv_row(&format!("mean{BICUBIC_SUFFIX}"), d));
        s
    }
}

/// Degrades each cube, super-resolves it and scores both the network and
/// plain bicubic upsampling against the original.
///
/// With `self_check` the reference is scored against itself in place of
/// the network output, which must give a perfect row.
pub fn evaluate(
    params: &SspsrParams,
    cubes: &[(String, HsiCube)],
    self_check: bool,
) -> Result<EvalTable> {
    if cubes.is_empty() {
        return Err(Error::Config("no cubes to evaluate".into()));
    }
    let d = params.config().scale;
    let bands = params.config().bands;
    let mut model = Vec::with_capacity(cubes.len());
    let mut bicubic = Vec::with_capacity(cubes.len());
    for (id, hr) in cubes {
        if hr.bands() != bands {
            return Err(Error::Config(format!(
                "cube `{id}` has {} bands, the checkpoint expects {bands}",
                hr.bands()
            )));
        }
        if hr.height() % d != 0 || hr.width() % d != 0 {
            return Err(Error::Config(format!(
                "cube `{id}` extent {}x{} is not divisible by scale {d}",
                hr.height(),
                hr.width()
            )));
        }
        let lr = degrade(hr, d)?;
        let sr = if self_check {
            hr.clone()
        } else {
            super_resolve(params, &lr)?
        };
        model.push(EvalRow {
            id: id.clone(),
            report: evaluate_all(hr, &sr, d)?,
        });
        let up = bicubic_resize(&lr, d, Direction::Up)?;
        bicubic.push(EvalRow {
            id: id.clone(),
            report: evaluate_all(hr, &up, d)?,
        });
    }
    let mean = |rows: &[EvalRow]| {
        MetricReport::mean(&rows.iter().map(|r| r.report.clone()).collect::<Vec<_>>())
    };
    Ok(EvalTable {
        scale: d,
        model_mean: mean(&model)?,
        bicubic_mean: mean(&bicubic)?,
        model,
        bicubic,
    })
}
