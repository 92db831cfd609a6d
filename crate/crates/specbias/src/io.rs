//! File formats and run configuration: the SBDS dataset container with a
//! JSON manifest sidecar, [-1,1] normalization bookkeeping, the key=value
//! run-config format with command-line overrides, and portable graymap
//! rasters for the effectiveness pipeline.

use crate::metrics::BandSpec;
use crate::model::{ModelConfig, ScalingVariant};
use crate::solver::SolverConfig;
use crate::tensor::{Shape, Tensor};
use crate::train::{Dataset, TrainConfig};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const DATASET_MAGIC: &[u8; 4] = b"SBDS";
const DATASET_VERSION: u32 = 1;

// ── dataset container ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
    Bool,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
            Dtype::Bool => 2,
        }
    }
    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::Bool),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    Bool(Vec<u8>),
}

impl FieldData {
    pub fn len(&self) -> usize {
        match self {
            FieldData::F64(v) => v.len(),
            FieldData::F32(v) => v.len(),
            FieldData::Bool(v) => v.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn dtype(&self) -> Dtype {
        match self {
            FieldData::F64(_) => Dtype::F64,
            FieldData::F32(_) => Dtype::F32,
            FieldData::Bool(_) => Dtype::Bool,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRecord {
    pub name: String,
    pub shape: Vec<u64>,
    pub dt: f64,
    pub norm_min: f64,
    pub norm_max: f64,
    pub data: FieldData,
}

impl FieldRecord {
    pub fn tensor(&self) -> Result<Tensor> {
        if self.shape.len() != 4 {
            return Err(Error::Format(format!(
                "field {} has rank {}, expected 4",
                self.name,
                self.shape.len()
            )));
        }
        let dims: Vec<usize> = self.shape.iter().map(|d| *d as usize).collect();
        let data = match &self.data {
            FieldData::F64(v) => v.clone(),
            FieldData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            FieldData::Bool(_) => {
                return Err(Error::Format(format!("field {} is boolean", self.name)))
            }
        };
        Tensor::from_vec(Shape([dims[0], dims[1], dims[2], dims[3]]), data)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetContainer {
    pub fields: Vec<FieldRecord>,
    pub manifest: serde_json::Value,
}

impl DatasetContainer {
    pub fn field(&self, name: &str) -> Result<&FieldRecord> {
        self.fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Format(format!("dataset field {name} not found")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        for f in &self.fields {
            let numel: u64 = f.shape.iter().product();
            if numel as usize != f.data.len() {
                return Err(Error::Format(format!(
                    "field {}: shape product {numel} != data length {}",
                    f.name,
                    f.data.len()
                )));
            }
            buf.extend_from_slice(&(f.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(f.name.as_bytes());
            buf.push(f.data.dtype().code());
            buf.extend_from_slice(&(f.shape.len() as u32).to_le_bytes());
            for d in &f.shape {
                buf.extend_from_slice(&d.to_le_bytes());
            }
            buf.extend_from_slice(&f.dt.to_le_bytes());
            buf.extend_from_slice(&f.norm_min.to_le_bytes());
            buf.extend_from_slice(&f.norm_max.to_le_bytes());
            match &f.data {
                FieldData::F64(v) => {
                    for x in v {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
                FieldData::F32(v) => {
                    for x in v {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
                FieldData::Bool(v) => buf.extend_from_slice(v),
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let manifest_text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
        std::fs::write(manifest_path(path), manifest_text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<DatasetContainer> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format("truncated dataset container".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != DATASET_MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut fields = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Format("field name not utf-8".into()))?;
            let dtype = Dtype::from_code(take(&mut pos, 1)?[0])?;
            let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            let dt = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let norm_min = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let norm_max = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let numel = shape.iter().product::<u64>() as usize;
            let data = match dtype {
                Dtype::F64 => {
                    let raw = take(&mut pos, numel * 8)?;
                    FieldData::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                Dtype::F32 => {
                    let raw = take(&mut pos, numel * 4)?;
                    FieldData::F32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                Dtype::Bool => FieldData::Bool(take(&mut pos, numel)?.to_vec()),
            };
            fields.push(FieldRecord { name, shape, dt, norm_min, norm_max, data });
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes in dataset container".into()));
        }
        let manifest_text = std::fs::read_to_string(manifest_path(path))?;
        let manifest = serde_json::from_str(&manifest_text)
            .map_err(|e| Error::Format(format!("manifest parse: {e}")))?;
        Ok(DatasetContainer { fields, manifest })
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

// ── normalization ───────────────────────────────────────────────────

/// Affine map between a raw value range and [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBounds {
    pub min: f64,
    pub max: f64,
}

impl NormBounds {
    pub fn from_values<'a>(values: impl Iterator<Item = &'a f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(*v);
            max = max.max(*v);
        }
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(Error::Numerical(format!("degenerate value range [{min}, {max}]")));
        }
        Ok(NormBounds { min, max })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v - self.min) / (self.max - self.min) - 1.0
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + (v + 1.0) * (self.max - self.min) / 2.0
    }

    pub fn normalize_slice(&self, vs: &mut [f64]) {
        for v in vs {
            *v = self.normalize(*v);
        }
    }
}

/// Load the three splits of a generated dataset container into memory.
pub fn load_splits(container: &DatasetContainer) -> Result<(Dataset, Dataset, Dataset)> {
    let get = |split: &str| -> Result<Dataset> {
        let inputs = container.field(&format!("{split}_inputs"))?.tensor()?;
        let targets = container.field(&format!("{split}_targets"))?.tensor()?;
        Dataset::new(inputs, targets)
    };
    Ok((get("train")?, get("val")?, get("test")?))
}

// ── run configuration ───────────────────────────────────────────────

/// Plain `key = value` configuration text with `#` comments.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "config line {}: empty key or value",
                    lineno + 1
                )));
            }
            map.insert(key.to_string(), value.to_string());
        }
        Ok(KvConfig { map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("--set {s}: expected key=value")))?;
            if key.trim().is_empty() || value.trim().is_empty() {
                return Err(Error::InvalidConfig(format!("--set {s}: empty key or value")));
            }
            self.map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    /// Canonical text form, echoed into output directories for replay.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::InvalidConfig(format!("config key {key}: cannot parse {v:?}"))
            }),
        }
    }

    fn known_keys() -> &'static [&'static str] {
        &[
            "seed",
            "out",
            "dataset",
            "deterministic",
            "model.in_channels",
            "model.out_channels",
            "model.levels",
            "model.widths",
            "model.input_size",
            "model.residual_blocks",
            "model.scaling_variant",
            "model.patch_base",
            "model.lambda_init_dc",
            "model.lambda_init_hfc",
            "model.tau",
            "train.epochs",
            "train.lr_initial",
            "train.lr_final",
            "train.decay_start",
            "train.decay_steps",
            "train.batch_size",
            "train.clip_norm",
            "train.beta1",
            "train.beta2",
            "train.weight_decay",
            "train.eval_every",
            "solver.grid",
            "solver.nu",
            "solver.chi",
            "gen.trajectories",
            "gen.t_final",
            "gen.dt_record",
            "gen.input_frames",
            "bands.low",
            "bands.mid",
        ]
    }
}

/// Dataset-generation parameters.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub trajectories: usize,
    pub t_final: f64,
    pub dt_record: f64,
    /// Leading snapshots used as network input; the rest are targets.
    pub input_frames: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { trajectories: 250, t_final: 12.5, dt_record: 0.5, input_frames: 20 }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub gen: GenConfig,
    pub bands: BandSpec,
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<RunConfig> {
        for key in kv.map.keys() {
            if !KvConfig::known_keys().contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown config key {key}")));
            }
        }
        let md = ModelConfig::kolmogorov_default();
        let widths = match kv.map.get("model.widths") {
            None => md.widths.clone(),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse::<usize>().map_err(|_| {
                        Error::InvalidConfig(format!("model.widths: bad entry {p:?}"))
                    })
                })
                .collect::<Result<Vec<usize>>>()?,
        };
        let variant: ScalingVariant = match kv.map.get("model.scaling_variant") {
            None => md.scaling_variant,
            Some(v) => v.parse()?,
        };
        let model = ModelConfig {
            in_channels: kv.get_parsed("model.in_channels", md.in_channels)?,
            out_channels: kv.get_parsed("model.out_channels", md.out_channels)?,
            levels: kv.get_parsed("model.levels", md.levels)?,
            widths,
            input_size: kv.get_parsed("model.input_size", md.input_size)?,
            residual_blocks: kv.get_parsed("model.residual_blocks", md.residual_blocks)?,
            scaling_variant: variant,
            patch_base: kv.get_parsed("model.patch_base", md.patch_base)?,
            lambda_init_dc: kv.get_parsed("model.lambda_init_dc", md.lambda_init_dc)?,
            lambda_init_hfc: kv.get_parsed("model.lambda_init_hfc", md.lambda_init_hfc)?,
            tau: kv.get_parsed("model.tau", md.tau)?,
        };
        let td = TrainConfig::default();
        let seed = kv.get_parsed("seed", 0u64)?;
        let deterministic = kv.get_parsed("deterministic", false)?;
        let train = TrainConfig {
            epochs: kv.get_parsed("train.epochs", td.epochs)?,
            lr_initial: kv.get_parsed("train.lr_initial", td.lr_initial)?,
            lr_final: kv.get_parsed("train.lr_final", td.lr_final)?,
            decay_start: kv.get_parsed("train.decay_start", td.decay_start)?,
            decay_steps: kv.get_parsed("train.decay_steps", td.decay_steps)?,
            batch_size: kv.get_parsed("train.batch_size", td.batch_size)?,
            clip_norm: kv.get_parsed("train.clip_norm", td.clip_norm)?,
            beta1: kv.get_parsed("train.beta1", td.beta1)?,
            beta2: kv.get_parsed("train.beta2", td.beta2)?,
            weight_decay: kv.get_parsed("train.weight_decay", td.weight_decay)?,
            eval_every: kv.get_parsed("train.eval_every", td.eval_every)?,
            seed,
            deterministic,
        };
        let sd = SolverConfig::default();
        let solver = SolverConfig {
            grid: kv.get_parsed("solver.grid", sd.grid)?,
            nu: kv.get_parsed("solver.nu", sd.nu)?,
            chi: kv.get_parsed("solver.chi", sd.chi)?,
            ..sd
        };
        let gd = GenConfig::default();
        let gen = GenConfig {
            trajectories: kv.get_parsed("gen.trajectories", gd.trajectories)?,
            t_final: kv.get_parsed("gen.t_final", gd.t_final)?,
            dt_record: kv.get_parsed("gen.dt_record", gd.dt_record)?,
            input_frames: kv.get_parsed("gen.input_frames", gd.input_frames)?,
        };
        let bd = BandSpec::default();
        let bands = BandSpec {
            low_fraction: kv.get_parsed("bands.low", bd.low_fraction)?,
            mid_fraction: kv.get_parsed("bands.mid", bd.mid_fraction)?,
        };
        bands.validate()?;
        let out_dir = PathBuf::from(
            kv.map.get("out").cloned().unwrap_or_else(|| "out".to_string()),
        );
        let dataset = kv.map.get("dataset").map(PathBuf::from);
        Ok(RunConfig {
            model,
            train,
            solver,
            gen,
            bands,
            dataset,
            out_dir,
            seed,
            deterministic,
        })
    }
}

// ── portable graymap ────────────────────────────────────────────────

/// Write a field as an 8-bit binary PGM, affinely mapped to 0..=255.
pub fn write_pgm(path: &Path, field: &[f64], h: usize, w: usize) -> Result<()> {
    if field.len() != h * w {
        return Err(Error::ShapeMismatch("pgm: field length".into()));
    }
    let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    for v in field {
        let g = ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8;
        buf.push(g);
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Read a binary (P5) or ascii (P2) PGM into values scaled to [0, 1].
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated pgm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes)?;
    if magic != "P5" && magic != "P2" {
        return Err(Error::Format(format!("unsupported pgm magic {magic}")));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| Error::Format("pgm width".into()))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| Error::Format("pgm height".into()))?;
    let maxval: f64 = token(&bytes)?.parse().map_err(|_| Error::Format("pgm maxval".into()))?;
    if maxval <= 0.0 || maxval > 255.0 {
        return Err(Error::Format("pgm maxval out of range".into()));
    }
    let mut out = Vec::with_capacity(h * w);
    if magic == "P5" {
        pos += 1; // single whitespace after maxval
        if pos + h * w > bytes.len() {
            return Err(Error::Format("truncated pgm payload".into()));
        }
        out.extend(bytes[pos..pos + h * w].iter().map(|b| *b as f64 / maxval));
    } else {
        for _ in 0..h * w {
            let v: f64 =
                token(&bytes)?.parse().map_err(|_| Error::Format("pgm pixel".into()))?;
            out.push(v / maxval);
        }
    }
    Ok((out, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sbds");
        let container = DatasetContainer {
            fields: vec![
                FieldRecord {
                    name: "train_inputs".into(),
                    shape: vec![2, 3, 2, 2],
                    dt: 0.5,
                    norm_min: -1.5,
                    norm_max: 2.5,
                    data: FieldData::F64((0..24).map(|i| (i as f64).sin()).collect()),
                },
                FieldRecord {
                    name: "aux".into(),
                    shape: vec![4],
                    dt: 0.0,
                    norm_min: 0.0,
                    norm_max: 1.0,
                    data: FieldData::F32(vec![0.25, -0.5, 1.0e-7, 3.0]),
                },
                FieldRecord {
                    name: "mask".into(),
                    shape: vec![2, 2],
                    dt: 0.0,
                    norm_min: 0.0,
                    norm_max: 1.0,
                    data: FieldData::Bool(vec![1, 0, 0, 1]),
                },
            ],
            manifest: serde_json::json!({"nu": 1e-3, "seeds": [1, 2], "split": "train"}),
        };
        container.write(&path).unwrap();
        let back = DatasetContainer::read(&path).unwrap();
        assert_eq!(container.fields, back.fields);
        assert_eq!(container.manifest, back.manifest);
        if let (FieldData::F64(a), FieldData::F64(b)) =
            (&container.fields[0].data, &back.fields[0].data)
        {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        } else {
            panic!("dtype changed in round trip");
        }
    }

    #[test]
    fn container_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.sbds");
        let container = DatasetContainer {
            fields: vec![FieldRecord {
                name: "x".into(),
                shape: vec![2],
                dt: 0.0,
                norm_min: 0.0,
                norm_max: 1.0,
                data: FieldData::F64(vec![1.0, 2.0]),
            }],
            manifest: serde_json::json!({}),
        };
        container.write(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(DatasetContainer::read(&path).is_err());
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(DatasetContainer::read(&path).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 4.2 - 1.1).collect();
        let bounds = NormBounds::from_values(values.iter()).unwrap();
        for v in &values {
            let n = bounds.normalize(*v);
            assert!((-1.0..=1.0).contains(&n));
            assert!((bounds.denormalize(n) - v).abs() < 1e-12);
        }
        assert!(NormBounds::from_values([3.0f64; 4].iter()).is_err());
    }

    #[test]
    fn kv_config_parses_comments_and_overrides() {
        let text = "\n# comment\nseed = 7\nmodel.levels = 2  # trailing\n\ntrain.epochs = 5\n";
        let mut kv = KvConfig::parse(text).unwrap();
        kv.apply_overrides(&["train.epochs=9".to_string(), "bands.low=0.03".to_string()])
            .unwrap();
        let rc = RunConfig::from_kv(&kv).unwrap();
        assert_eq!(rc.seed, 7);
        assert_eq!(rc.model.levels, 2);
        assert_eq!(rc.train.epochs, 9);
        assert!((rc.bands.low_fraction - 0.03).abs() < 1e-15);
        // echo re-parses to the same resolved config
        let kv2 = KvConfig::parse(&kv.echo()).unwrap();
        let rc2 = RunConfig::from_kv(&kv2).unwrap();
        assert_eq!(rc2.train.epochs, 9);
        assert_eq!(rc2.model, rc.model);
    }

    #[test]
    fn kv_config_rejects_bad_input() {
        assert!(KvConfig::parse("just words\n").is_err());
        assert!(KvConfig::parse("key =\n").is_err());
        let kv = KvConfig::parse("no.such.key = 1\n").unwrap();
        assert!(RunConfig::from_kv(&kv).is_err());
        let kv = KvConfig::parse("model.levels = banana\n").unwrap();
        assert!(RunConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn run_config_defaults_match_desk_scale() {
        let rc = RunConfig::from_kv(&KvConfig::default()).unwrap();
        assert_eq!(rc.solver.grid, 64);
        assert_eq!(rc.solver.nu, 1e-3);
        assert_eq!(rc.gen.trajectories, 250);
        assert_eq!(rc.gen.input_frames, 20);
        assert_eq!(rc.model.in_channels, 20);
        assert_eq!(rc.model.out_channels, 5);
    }

    #[test]
    fn widths_list_parses() {
        let kv = KvConfig::parse("model.widths = 4, 8, 16\nmodel.levels = 2\n").unwrap();
        let rc = RunConfig::from_kv(&kv).unwrap();
        assert_eq!(rc.model.widths, vec![4, 8, 16]);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let (h, w) = (5, 7);
        let field: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        write_pgm(&path, &field, h, w).unwrap();
        let (back, rh, rw) = read_pgm(&path).unwrap();
        assert_eq!((rh, rw), (h, w));
        // 8-bit quantization of the affinely mapped values
        let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (orig, got) in field.iter().zip(&back) {
            let expect = ((orig - min) / (max - min) * 255.0).round() / 255.0;
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn pgm_ascii_variant_reads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        std::fs::write(&path, "P2\n# c\n2 2\n255\n0 128\n255 64\n").unwrap();
        let (v, h, w) = read_pgm(&path).unwrap();
        assert_eq!((h, w), (2, 2));
        assert!((v[1] - 128.0 / 255.0).abs() < 1e-12);
    }
}
