//! Training loop: Lion optimizer, linear-step learning-rate schedule,
//! global-norm gradient clipping, seeded shuffling, best-validation
//! checkpoint selection, and CSV logging of losses and lambda histories.

use crate::metrics::{compute_report, BandSpec, MetricsReport};
use crate::model::Model;
use crate::tensor::{Precision, Shape, Tape, Tensor};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// In-memory supervised pairs: inputs (n, c_in, h, w), targets (n, k, h, w).
#[derive(Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        let (i, t) = (inputs.shape, targets.shape);
        if i.n() != t.n() || i.h() != t.h() || i.w() != t.w() {
            return Err(Error::ShapeMismatch(format!("dataset: inputs {i} vs targets {t}")));
        }
        if i.n() == 0 {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy the given sample indices into a contiguous batch.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let gather_one = |t: &Tensor| {
            let s = t.shape;
            let per = s.c() * s.h() * s.w();
            let mut out = Tensor::zeros(Shape([idx.len(), s.c(), s.h(), s.w()]));
            for (bi, &si) in idx.iter().enumerate() {
                out.data[bi * per..(bi + 1) * per].copy_from_slice(&t.data[si * per..(si + 1) * per]);
            }
            out
        };
        (gather_one(&self.inputs), gather_one(&self.targets))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Epoch after which the linear step decay begins.
    pub decay_start: usize,
    pub decay_steps: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validate every this many epochs.
    pub eval_every: usize,
    /// Suppress wall-clock columns so logs replay bit-exactly.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr_initial: 8e-4,
            lr_final: 8e-5,
            decay_start: 700,
            decay_steps: 10,
            batch_size: 8,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.05,
            seed: 0,
            eval_every: 1,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 || self.decay_steps == 0
        {
            return Err(Error::InvalidConfig("train config counts must be positive".into()));
        }
        if self.lr_initial <= 0.0 || self.lr_final <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::InvalidConfig("train config rates must be positive".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::InvalidConfig("betas must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Learning rate at a given epoch: constant until `decay_start`, then a
/// staircase of `decay_steps` equal drops reaching `lr_final` at the last
/// epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.decay_start || cfg.epochs <= cfg.decay_start {
        return cfg.lr_initial;
    }
    let span = (cfg.epochs - cfg.decay_start) as f64;
    let seg = ((epoch - cfg.decay_start) as f64 / span * cfg.decay_steps as f64).floor() as usize;
    let seg = seg.min(cfg.decay_steps - 1) + 1;
    cfg.lr_initial - seg as f64 * (cfg.lr_initial - cfg.lr_final) / cfg.decay_steps as f64
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. Below-threshold gradients are untouched.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.data.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for v in &mut g.data {
                *v *= scale;
            }
        }
    }
    norm
}

/// Lion optimizer state: sign-of-interpolated-momentum updates with
/// decoupled weight decay. Decay-exempt parameters (the lambda vectors)
/// skip the decay term.
pub struct LionState {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
}

impl LionState {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        LionState {
            beta1,
            beta2,
            weight_decay,
            m: params.iter().map(|p| Tensor::zeros(p.shape)).collect(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        exempt: &[bool],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch("lion: parameter/gradient count".into()));
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Numerical("lion: non-finite gradient, step refused".into()));
        }
        for i in 0..params.len() {
            let wd = if exempt[i] { 0.0 } else { self.weight_decay };
            let (p, g, m) = (&mut params[i], &grads[i], &mut self.m[i]);
            for j in 0..p.data.len() {
                let c = self.beta1 * m.data[j] + (1.0 - self.beta1) * g.data[j];
                // f64::signum maps 0.0 to 1.0; a zero update direction must stay zero
                let sign = if c == 0.0 { 0.0 } else { c.signum() };
                p.data[j] -= lr * (sign + wd * p.data[j]);
                m.data[j] = self.beta2 * m.data[j] + (1.0 - self.beta2) * g.data[j];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IterLog {
    pub iteration: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub iter_ms: f64,
}

#[derive(Debug, Clone)]
pub struct LambdaLog {
    pub iteration: usize,
    pub component: &'static str,
    pub layer: String,
    pub mean_lambda_dc: f64,
    pub mean_lambda_hfc: f64,
}

pub struct FitReport {
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub final_val_loss: f64,
    pub train_log: Vec<IterLog>,
    pub lambda_log: Vec<LambdaLog>,
    pub val_log: Vec<(usize, f64)>,
}

impl FitReport {
    pub fn median_iter_ms(&self) -> f64 {
        let mut t: Vec<f64> = self.train_log.iter().map(|l| l.iter_ms).collect();
        if t.is_empty() {
            return 0.0;
        }
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t[t.len() / 2]
    }
}

fn component_of(site: &str) -> &'static str {
    if site.starts_with("dec") || site.starts_with("up") || site.starts_with("head") {
        "decoder"
    } else {
        "encoder"
    }
}

/// Mean squared error of the model over a dataset, batched.
pub fn dataset_loss(
    model: &Model,
    ds: &Dataset,
    batch_size: usize,
    precision: Precision,
) -> Result<f64> {
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    let n = ds.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (x, t) = ds.gather(&idx);
        let pred = model.forward(&x, precision)?;
        sq_sum += pred
            .data
            .iter()
            .zip(&t.data)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
        count += pred.numel();
        start = end;
    }
    Ok(sq_sum / count as f64)
}

/// Train the model in place. On success the model carries the parameters of
/// the best-validation-loss checkpoint. On divergence the model is restored
/// to the last good checkpoint and an error is returned after logs are
/// flushed.
pub fn fit(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("train and validation sets must be non-empty".into()));
    }
    let precision = Precision::F64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lion = LionState::new(&model.params, cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut report = FitReport {
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        final_val_loss: f64::NAN,
        train_log: Vec::new(),
        lambda_log: Vec::new(),
        val_log: Vec::new(),
    };
    let mut best_params: Vec<Tensor> = model.params.clone();
    let mut iteration = 0usize;
    let mut diverged: Option<Error> = None;

    'epochs: for epoch in 0..cfg.epochs {
        // seeded Fisher-Yates shuffle
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let lr = lr_at(epoch, cfg);
        for chunk in order.chunks(cfg.batch_size) {
            let t0 = Instant::now();
            let (x, t) = train.gather(chunk);
            let mut tape = Tape::new(precision);
            let xv = tape.leaf(x, false);
            let step = (|| -> Result<(f64, Vec<Tensor>)> {
                let (out, param_vars) = model.forward_graph(&mut tape, xv, true)?;
                let tv = tape.leaf(t, false);
                let loss = tape.mse_loss(out, tv)?;
                tape.backward(loss)?;
                let grads: Vec<Tensor> = param_vars
                    .iter()
                    .zip(&model.params)
                    .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape)))
                    .collect();
                Ok((tape.value(loss).scalar_value(), grads))
            })();
            let (loss, mut grads) = match step {
                Ok(v) => v,
                Err(e) => {
                    diverged = Some(e);
                    break 'epochs;
                }
            };
            if !loss.is_finite() {
                diverged = Some(Error::Numerical("training loss is non-finite".into()));
                break 'epochs;
            }
            let grad_norm = clip_grad_norm(&mut grads, cfg.clip_norm);
            if let Err(e) = lion.step(&mut model.params, &grads, &model.decay_exempt, lr) {
                diverged = Some(e);
                break 'epochs;
            }
            let iter_ms = if cfg.deterministic {
                0.0
            } else {
                t0.elapsed().as_secs_f64() * 1e3
            };
            report.train_log.push(IterLog { iteration, epoch, loss, lr, grad_norm, iter_ms });
            iteration += 1;
        }
        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            for (site, dc, hfc) in model.lambda_snapshot() {
                report.lambda_log.push(LambdaLog {
                    iteration,
                    component: component_of(&site),
                    layer: site,
                    mean_lambda_dc: dc,
                    mean_lambda_hfc: hfc,
                });
            }
            let val_loss = match dataset_loss(model, val, cfg.batch_size, precision) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(_) => {
                    diverged = Some(Error::Numerical("validation loss is non-finite".into()));
                    break 'epochs;
                }
            };
            report.val_log.push((epoch, val_loss));
            report.final_val_loss = val_loss;
            if val_loss < report.best_val_loss {
                report.best_val_loss = val_loss;
                report.best_epoch = epoch;
                best_params = model.params.clone();
            }
        }
    }

    model.params = best_params;
    if let Some(dir) = out_dir {
        write_logs(&report, dir)?;
    }
    match diverged {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn write_logs(report: &FitReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join("train_log.csv"))?;
    writeln!(f, "iteration,epoch,loss,lr,grad_norm,iter_ms")?;
    for l in &report.train_log {
        writeln!(
            f,
            "{},{},{:.17e},{:.17e},{:.17e},{:.3}",
            l.iteration, l.epoch, l.loss, l.lr, l.grad_norm, l.iter_ms
        )?;
    }
    let mut f = std::fs::File::create(dir.join("lambda_log.csv"))?;
    writeln!(f, "iteration,component,layer,mean_lambda_dc,mean_lambda_hfc")?;
    for l in &report.lambda_log {
        writeln!(
            f,
            "{},{},{},{:.17e},{:.17e}",
            l.iteration, l.component, l.layer, l.mean_lambda_dc, l.mean_lambda_hfc
        )?;
    }
    Ok(())
}

/// Full metrics over a test set, averaging the spectral quantities per
/// sample and prediction step.
pub fn evaluate(
    model: &Model,
    test: &Dataset,
    bands: &BandSpec,
    precision: Precision,
) -> Result<MetricsReport> {
    let mut preds = Tensor::zeros(test.targets.shape);
    let n = test.len();
    let per = test.targets.numel() / n;
    let batch = 8;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (x, _) = test.gather(&idx);
        let out = model.forward(&x, precision)?;
        preds.data[start * per..end * per].copy_from_slice(&out.data);
        start = end;
    }
    compute_report(&preds, &test.targets, bands, None)
}
