//! Command-line surface: dataset generation, training, evaluation, size
//! sweeps, spectra, latent analysis, effectiveness maps, and paired
//! checkpoint comparison.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use specbias::effectiveness::{hfs_gradient_ratio, localized_field, Roi};
use specbias::io::{
    read_pgm, write_pgm, DatasetContainer, FieldData, FieldRecord, KvConfig, NormBounds,
    RunConfig,
};
use specbias::metrics::{energy_spectrum, hf_energy_ratio, MetricsReport};
use specbias::model::{Model, ModelConfig};
use specbias::solver::Solver;
use specbias::tensor::{Precision, Shape, Tensor};
use specbias::train::{evaluate, fit, Dataset};
use specbias::{Error, Result};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "specbias", version, about = "Neural-operator spectral bias lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Bit-exact replay mode (suppresses wall-clock log columns).
    #[arg(long)]
    deterministic: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config overrides, key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate Kolmogorov-flow trajectories into a dataset container.
    GenData(Common),
    /// Train a model on a generated dataset.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train/evaluate across a list of width configurations.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated width list; repeatable, one per model size.
        #[arg(long = "widths", required = true)]
        widths: Vec<String>,
    },
    /// Radial energy spectra of truth vs prediction per step.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Latent feature dumps and high-frequency energy ratios.
    Latents {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test-split sample index.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Gradient-magnitude ratio maps for HFS applied to a raw snapshot.
    Effectiveness {
        #[command(flatten)]
        common: Common,
        /// Grayscale raster input; a constructed localized field when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0.85)]
        lambda_dc: f64,
        #[arg(long, default_value_t = 1.15)]
        lambda_hfc: f64,
        #[arg(long, default_value_t = 8)]
        patch: usize,
        /// Region of interest as y0,x0,h,w; full field when absent.
        #[arg(long)]
        roi: Option<String>,
    },
    /// Side-by-side metric and latent-ratio comparison of two checkpoints.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(common) => cmd_gen_data(&resolve(&common)?),
        Cmd::Train(common) => cmd_train(&resolve(&common)?),
        Cmd::Eval { common, checkpoint } => cmd_eval(&resolve(&common)?, &checkpoint),
        Cmd::Sweep { common, widths } => cmd_sweep(&resolve(&common)?, &widths),
        Cmd::Spectrum { common, checkpoint } => cmd_spectrum(&resolve(&common)?, &checkpoint),
        Cmd::Latents { common, checkpoint, sample } => {
            cmd_latents(&resolve(&common)?, &checkpoint, sample)
        }
        Cmd::Effectiveness { common, input, lambda_dc, lambda_hfc, patch, roi } => {
            cmd_effectiveness(&resolve(&common)?, input.as_deref(), lambda_dc, lambda_hfc, patch, roi.as_deref())
        }
        Cmd::Compare { common, baseline, candidate } => {
            cmd_compare(&resolve(&common)?, &baseline, &candidate)
        }
    }
}

struct Resolved {
    rc: RunConfig,
    kv: KvConfig,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let mut kv = match &common.config {
        Some(path) => KvConfig::from_file(path)?,
        None => KvConfig::default(),
    };
    kv.apply_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        kv.set("seed", seed.to_string());
    }
    if common.deterministic {
        kv.set("deterministic", "true".to_string());
    }
    if let Some(out) = &common.out {
        kv.set("out", out.display().to_string());
    }
    let rc = RunConfig::from_kv(&kv)?;
    Ok(Resolved { rc, kv })
}

/// Echo the fully resolved configuration for replay.
fn echo_config(res: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&res.rc.out_dir)?;
    std::fs::write(res.rc.out_dir.join("config.txt"), res.kv.echo())?;
    Ok(())
}

fn require_dataset(rc: &RunConfig) -> Result<PathBuf> {
    rc.dataset
        .clone()
        .ok_or_else(|| Error::InvalidConfig("dataset path required (key `dataset`)".into()))
}

fn load_test_pair(rc: &RunConfig, path: &Path) -> Result<(Dataset, Dataset, Dataset)> {
    let container = DatasetContainer::read(path)?;
    let _ = rc;
    specbias::io::load_splits(&container)
}

// ── gen-data ────────────────────────────────────────────────────────

fn cmd_gen_data(res: &Resolved) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let n = rc.gen.trajectories;
    if n < 3 {
        return Err(Error::InvalidConfig("need at least 3 trajectories for 3 splits".into()));
    }
    let total_frames = (rc.gen.t_final / rc.gen.dt_record).round() as usize;
    if rc.gen.input_frames == 0 || rc.gen.input_frames >= total_frames {
        return Err(Error::InvalidConfig(format!(
            "input_frames {} must lie in 1..{total_frames}",
            rc.gen.input_frames
        )));
    }
    let seeds: Vec<u64> = (0..n).map(|i| rc.seed.wrapping_add(i as u64)).collect();
    let records = seeds
        .par_iter()
        .map(|&seed| {
            let solver = Solver::new(rc.solver)?;
            solver.solve(seed, rc.gen.t_final, rc.gen.dt_record)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_train = ((n as f64) * 0.8).round() as usize;
    let n_val = ((n as f64) * 0.1).round() as usize;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidConfig("split sizes must all be positive".into()));
    }
    let g = rc.solver.grid;
    let (c_in, c_out) = (rc.gen.input_frames, total_frames - rc.gen.input_frames);

    let pack = |records: &[specbias::solver::TrajectoryRecord]| {
        let m = records.len();
        let mut inputs = Tensor::zeros(Shape([m, c_in, g, g]));
        let mut targets = Tensor::zeros(Shape([m, c_out, g, g]));
        for (s, rec) in records.iter().enumerate() {
            for (f, snap) in rec.snapshots.iter().enumerate() {
                let (t, ch) = if f < c_in { (&mut inputs, f) } else { (&mut targets, f - c_in) };
                let base = t.idx(s, ch, 0, 0);
                t.data[base..base + g * g].copy_from_slice(snap);
            }
        }
        (inputs, targets)
    };
    let (mut train_in, mut train_tg) = pack(&records[..n_train]);
    let (mut val_in, mut val_tg) = pack(&records[n_train..n_train + n_val]);
    let (mut test_in, mut test_tg) = pack(&records[n_train + n_val..]);

    // normalization bounds from the raw training split only
    let bounds = NormBounds::from_values(train_in.data.iter().chain(train_tg.data.iter()))?;
    for t in [&mut train_in, &mut train_tg, &mut val_in, &mut val_tg, &mut test_in, &mut test_tg] {
        bounds.normalize_slice(&mut t.data);
    }

    let field = |name: &str, t: &Tensor| FieldRecord {
        name: name.to_string(),
        shape: t.shape.0.iter().map(|d| *d as u64).collect(),
        dt: rc.gen.dt_record,
        norm_min: bounds.min,
        norm_max: bounds.max,
        data: FieldData::F64(t.data.clone()),
    };
    let container = DatasetContainer {
        fields: vec![
            field("train_inputs", &train_in),
            field("train_targets", &train_tg),
            field("val_inputs", &val_in),
            field("val_targets", &val_tg),
            field("test_inputs", &test_in),
            field("test_targets", &test_tg),
        ],
        manifest: serde_json::json!({
            "grid": g,
            "nu": rc.solver.nu,
            "chi": rc.solver.chi,
            "t_final": rc.gen.t_final,
            "dt_record": rc.gen.dt_record,
            "input_frames": c_in,
            "target_frames": c_out,
            "base_seed": rc.seed,
            "seeds": seeds,
            "splits": {"train": n_train, "val": n_val, "test": n_test},
            "norm": {"min": bounds.min, "max": bounds.max},
        }),
    };
    let path = rc.out_dir.join("dataset.sbds");
    container.write(&path)?;
    println!(
        "wrote {} trajectories ({n_train}/{n_val}/{n_test}) to {}",
        n,
        path.display()
    );
    Ok(())
}

// ── train / eval ────────────────────────────────────────────────────

fn build_model_for(rc: &RunConfig, train: &Dataset) -> Result<Model> {
    let cfg = rc.model.clone();
    let (ci, co) = (train.inputs.shape.c(), train.targets.shape.c());
    if cfg.in_channels != ci || cfg.out_channels != co {
        return Err(Error::InvalidConfig(format!(
            "model channels ({}, {}) do not match dataset ({ci}, {co})",
            cfg.in_channels, cfg.out_channels
        )));
    }
    if cfg.input_size != train.inputs.shape.h() {
        return Err(Error::InvalidConfig(format!(
            "model input size {} does not match dataset grid {}",
            cfg.input_size,
            train.inputs.shape.h()
        )));
    }
    cfg.validate()?;
    Model::build(cfg, rc.seed)
}

fn cmd_train(res: &Resolved) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let path = require_dataset(rc)?;
    let (train_ds, val_ds, _) = load_test_pair(rc, &path)?;
    let mut model = build_model_for(rc, &train_ds)?;
    println!(
        "training {:?} variant, {} parameters",
        model.config.scaling_variant,
        model.param_count()
    );
    let report = fit(&mut model, &train_ds, &val_ds, &rc.train, Some(&rc.out_dir))?;
    let ckpt = rc.out_dir.join("model.sblb");
    model.save(&ckpt)?;
    println!(
        "best val loss {:.6e} at epoch {}, median iter {:.1} ms, checkpoint {}",
        report.best_val_loss,
        report.best_epoch,
        report.median_iter_ms(),
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(res: &Resolved, checkpoint: &Path) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let path = require_dataset(rc)?;
    let (_, _, test_ds) = load_test_pair(rc, &path)?;
    let model = Model::load(checkpoint)?;
    let report = evaluate(&model, &test_ds, &rc.bands, Precision::F64)?;
    let mut f = std::fs::File::create(rc.out_dir.join("report.csv"))?;
    writeln!(f, "{}", MetricsReport::csv_header())?;
    writeln!(f, "{}", report.csv_row())?;
    println!("{report}");
    Ok(())
}

// ── sweep ───────────────────────────────────────────────────────────

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad width entry {p:?}")))
        })
        .collect()
}

fn cmd_sweep(res: &Resolved, widths: &[String]) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let path = require_dataset(rc)?;
    let (train_ds, val_ds, test_ds) = load_test_pair(rc, &path)?;
    let mut rows = Vec::new();
    for spec in widths {
        let w = parse_widths(spec)?;
        let cfg = ModelConfig {
            widths: w.clone(),
            levels: w.len() - 1,
            ..rc.model.clone()
        };
        let mut local = rc.clone();
        local.model = cfg;
        let mut model = build_model_for(&local, &train_ds)?;
        let params = model.param_count();
        println!("sweep point {spec}: {params} parameters");
        fit(&mut model, &train_ds, &val_ds, &rc.train, None)?;
        let report = evaluate(&model, &test_ds, &rc.bands, Precision::F64)?;
        rows.push((spec.clone(), params, report));
    }
    rows.sort_by_key(|r| r.1);
    let mut f = std::fs::File::create(rc.out_dir.join("sweep.csv"))?;
    writeln!(f, "widths,params,variant,{}", MetricsReport::csv_header())?;
    for (spec, params, report) in &rows {
        writeln!(
            f,
            "\"{spec}\",{params},{:?},{}",
            rc.model.scaling_variant,
            report.csv_row()
        )?;
    }
    println!("wrote {} sweep rows", rows.len());
    Ok(())
}

// ── spectrum ────────────────────────────────────────────────────────

fn cmd_spectrum(res: &Resolved, checkpoint: &Path) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let path = require_dataset(rc)?;
    let (_, _, test_ds) = load_test_pair(rc, &path)?;
    let model = Model::load(checkpoint)?;
    let shape = test_ds.targets.shape;
    let (n, k, h, w) = (shape.n(), shape.c(), shape.h(), shape.w());
    let mut truth_spectra = vec![vec![0.0; specbias::fft::max_shell(h, w) + 1]; k];
    let mut pred_spectra = truth_spectra.clone();
    for s in 0..n {
        let idx = [s];
        let (x, t) = test_ds.gather(&idx);
        let pred = model.forward(&x, Precision::F64)?;
        for step in 0..k {
            let base = t.idx(0, step, 0, 0);
            for (acc, p) in truth_spectra[step]
                .iter_mut()
                .zip(energy_spectrum(&t.data[base..base + h * w], h, w))
            {
                *acc += p / n as f64;
            }
            for (acc, p) in pred_spectra[step]
                .iter_mut()
                .zip(energy_spectrum(&pred.data[base..base + h * w], h, w))
            {
                *acc += p / n as f64;
            }
        }
    }
    let mut f = std::fs::File::create(rc.out_dir.join("spectrum.csv"))?;
    writeln!(f, "step,shell,p_truth,p_pred")?;
    for step in 0..k {
        for (shell, (pt, pp)) in truth_spectra[step].iter().zip(&pred_spectra[step]).enumerate() {
            writeln!(f, "{step},{shell},{pt:.12e},{pp:.12e}")?;
        }
    }
    println!("wrote spectra for {k} prediction steps over {n} samples");
    Ok(())
}

// ── latents ─────────────────────────────────────────────────────────

/// High-frequency cutoff per encoder level: 12.5% at full resolution,
/// growing by alternating 3/2 and 4/3 factors, capped at 50%.
fn cutoff_schedule(levels: usize) -> Vec<f64> {
    (0..levels)
        .map(|l| {
            let base = 0.125 * f64::powi(2.0, (l / 2) as i32);
            let v = if l % 2 == 1 { base * 1.5 } else { base };
            v.min(0.5)
        })
        .collect()
}

fn cmd_latents(res: &Resolved, checkpoint: &Path, sample: usize) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let path = require_dataset(rc)?;
    let (_, _, test_ds) = load_test_pair(rc, &path)?;
    if sample >= test_ds.len() {
        return Err(Error::InvalidConfig(format!(
            "sample {sample} out of range ({} test samples)",
            test_ds.len()
        )));
    }
    let model = Model::load(checkpoint)?;
    let (x, _) = test_ds.gather(&[sample]);
    let features = model.forward_features(&x, Precision::F64)?;
    let cutoffs = cutoff_schedule(model.config.levels);
    let mut f = std::fs::File::create(rc.out_dir.join("latents.csv"))?;
    writeln!(f, "layer,cutoff,hf_energy_ratio")?;
    for (name, feat) in &features {
        let (c, h, w) = (feat.shape.c(), feat.shape.h(), feat.shape.w());
        // mean feature map over channels
        let mut mean = vec![0.0; h * w];
        for ch in 0..c {
            let base = feat.idx(0, ch, 0, 0);
            for (m, v) in mean.iter_mut().zip(&feat.data[base..base + h * w]) {
                *m += v / c as f64;
            }
        }
        write_pgm(&rc.out_dir.join(format!("latent_{name}.pgm")), &mean, h, w)?;
        if let Some(level) = name.strip_prefix("enc").and_then(|s| s.parse::<usize>().ok()) {
            let cutoff = cutoffs[level];
            let mut ratio = 0.0;
            for ch in 0..c {
                let base = feat.idx(0, ch, 0, 0);
                ratio += hf_energy_ratio(&feat.data[base..base + h * w], h, w, cutoff)? / c as f64;
            }
            writeln!(f, "{name},{cutoff},{ratio:.12e}")?;
        }
    }
    println!("wrote {} latent maps", features.len());
    Ok(())
}

// ── effectiveness ───────────────────────────────────────────────────

fn cmd_effectiveness(
    res: &Resolved,
    input: Option<&Path>,
    lambda_dc: f64,
    lambda_hfc: f64,
    patch: usize,
    roi: Option<&str>,
) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let (field, h, w) = match input {
        Some(path) => read_pgm(path)?,
        None => {
            let n = 64;
            (localized_field(n, rc.seed), n, n)
        }
    };
    let roi = match roi {
        None => Roi::full(h, w),
        Some(s) => {
            let parts: Vec<usize> = s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad roi entry {p:?}")))
                })
                .collect::<Result<Vec<usize>>>()?;
            if parts.len() != 4 {
                return Err(Error::InvalidConfig("roi must be y0,x0,h,w".into()));
            }
            Roi { y0: parts[0], x0: parts[1], h: parts[2], w: parts[3] }
        }
    };
    let report = hfs_gradient_ratio(&field, h, w, patch, lambda_dc, lambda_hfc, roi)?;
    write_pgm(&rc.out_dir.join("grad_baseline.pgm"), &report.grad_baseline, h, w)?;
    write_pgm(&rc.out_dir.join("grad_hfs.pgm"), &report.grad_hfs, h, w)?;
    let mut ratio_map = vec![0.0; h * w];
    for (y, x, r) in &report.ratio {
        ratio_map[y * w + x] = *r;
    }
    write_pgm(&rc.out_dir.join("ratio.pgm"), &ratio_map, h, w)?;
    let mut f = std::fs::File::create(rc.out_dir.join("effectiveness.csv"))?;
    writeln!(f, "sample,cv,mean_ratio")?;
    writeln!(f, "0,{:.12e},{:.12e}", report.cv, report.mean_ratio)?;
    println!("cv {:.6}, mean ratio {:.6}", report.cv, report.mean_ratio);
    Ok(())
}

// ── compare ─────────────────────────────────────────────────────────

fn latent_ratios(model: &Model, ds: &Dataset) -> Result<Vec<(String, f64)>> {
    let (x, _) = ds.gather(&[0]);
    let features = model.forward_features(&x, Precision::F64)?;
    let cutoffs = cutoff_schedule(model.config.levels);
    let mut out = Vec::new();
    for (name, feat) in &features {
        if let Some(level) = name.strip_prefix("enc").and_then(|s| s.parse::<usize>().ok()) {
            let (c, h, w) = (feat.shape.c(), feat.shape.h(), feat.shape.w());
            let mut ratio = 0.0;
            for ch in 0..c {
                let base = feat.idx(0, ch, 0, 0);
                ratio +=
                    hf_energy_ratio(&feat.data[base..base + h * w], h, w, cutoffs[level])? / c as f64;
            }
            out.push((name.clone(), ratio));
        }
    }
    Ok(out)
}

fn cmd_compare(res: &Resolved, baseline: &Path, candidate: &Path) -> Result<()> {
    let rc = &res.rc;
    echo_config(res)?;
    let path = require_dataset(rc)?;
    let (_, _, test_ds) = load_test_pair(rc, &path)?;
    let model_a = Model::load(baseline)?;
    let model_b = Model::load(candidate)?;
    let report_a = evaluate(&model_a, &test_ds, &rc.bands, Precision::F64)?;
    let report_b = evaluate(&model_b, &test_ds, &rc.bands, Precision::F64)?;
    let to_map = |r: &MetricsReport| -> Result<serde_json::Map<String, serde_json::Value>> {
        match serde_json::to_value(r) {
            Ok(serde_json::Value::Object(m)) => Ok(m),
            _ => Err(Error::Format("report serialization".into())),
        }
    };
    let (ma, mb) = (to_map(&report_a)?, to_map(&report_b)?);
    let mut f = std::fs::File::create(rc.out_dir.join("compare.csv"))?;
    writeln!(f, "metric,baseline,candidate")?;
    for (key, va) in &ma {
        let vb = &mb[key];
        writeln!(f, "{key},{},{}", json_num(va), json_num(vb))?;
    }
    let la = latent_ratios(&model_a, &test_ds)?;
    let lb = latent_ratios(&model_b, &test_ds)?;
    let mut f = std::fs::File::create(rc.out_dir.join("latent_compare.csv"))?;
    writeln!(f, "layer,baseline,candidate")?;
    for ((name, ra), (_, rb)) in la.iter().zip(&lb) {
        writeln!(f, "{name},{ra:.12e},{rb:.12e}")?;
    }
    println!(
        "rel_error baseline {:.6} vs candidate {:.6}",
        report_a.rel_error, report_b.rel_error
    );
    Ok(())
}

fn json_num(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Number(n) => n.to_string(),
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}
