//! Configurable encoder-decoder neural operator: UNet / ResUNet with
//! optional patch-based or Fourier-domain high-frequency scaling.
//!
//! The network topology is defined once in `network`, generically over a
//! `Graph` backend. The `Builder` backend walks it to allocate parameters;
//! the `Runner` backend walks it again to record ops on a `Tape`. This keeps
//! initialization and forward in lockstep by construction.

use crate::tensor::{Precision, Shape, Tape, Tensor, VarId};
use crate::{Error, Result};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const NORM_EPS: f64 = 1e-5;
const CHECKPOINT_MAGIC: &[u8; 4] = b"SBLB";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingVariant {
    None,
    Hfs,
    Fourier,
}

impl std::str::FromStr for ScalingVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ScalingVariant::None),
            "hfs" => Ok(ScalingVariant::Hfs),
            "fourier" => Ok(ScalingVariant::Fourier),
            other => Err(Error::InvalidConfig(format!("unknown scaling variant {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of downsampling steps; widths has `levels + 1` entries
    /// (per-level channel counts, last one is the bottleneck).
    pub levels: usize,
    pub widths: Vec<usize>,
    pub input_size: usize,
    pub residual_blocks: bool,
    pub scaling_variant: ScalingVariant,
    /// Patch size at full resolution; halved per level, floored at 2.
    pub patch_base: usize,
    pub lambda_init_dc: f64,
    pub lambda_init_hfc: f64,
    /// Radial threshold for the Fourier variant.
    pub tau: f64,
}

impl ModelConfig {
    pub fn kolmogorov_default() -> Self {
        ModelConfig {
            in_channels: 20,
            out_channels: 5,
            levels: 3,
            widths: vec![8, 16, 32, 64],
            input_size: 64,
            residual_blocks: true,
            scaling_variant: ScalingVariant::None,
            patch_base: 8,
            lambda_init_dc: 1.0,
            lambda_init_hfc: 1.0,
            tau: 0.25,
        }
    }

    pub fn patch_at(&self, level: usize) -> usize {
        (self.patch_base >> level).max(2)
    }

    fn groups_for(&self, c: usize) -> Result<usize> {
        if c < 8 {
            Ok(c)
        } else if c % 8 == 0 {
            Ok(8)
        } else {
            Err(Error::InvalidConfig(format!(
                "width {c} >= 8 must be divisible by 8 for group normalization"
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if self.widths.len() != self.levels + 1 {
            return Err(Error::InvalidConfig(format!(
                "expected {} widths for {} levels, got {}",
                self.levels + 1,
                self.levels,
                self.widths.len()
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.widths.iter().any(|w| *w == 0) {
            return Err(Error::InvalidConfig("channel counts must be positive".into()));
        }
        if self.input_size % (1 << self.levels) != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {} not divisible by 2^{}",
                self.input_size, self.levels
            )));
        }
        for w in &self.widths {
            self.groups_for(*w)?;
        }
        if self.scaling_variant == ScalingVariant::Hfs {
            if self.patch_base == 0 {
                return Err(Error::InvalidConfig("patch_base must be positive".into()));
            }
            for level in 0..=self.levels {
                let size = self.input_size >> level;
                let p = self.patch_at(level);
                if size % p != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "level {level}: patch {p} does not divide spatial size {size}"
                    )));
                }
            }
        }
        if self.scaling_variant == ScalingVariant::Fourier && !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!("tau {} outside (0,1)", self.tau)));
        }
        Ok(())
    }

    fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hasher.finalize().into()
    }
}

enum Init {
    HeConv,
    Zeros,
    Ones,
    Const(f64),
}

/// Backend abstraction over the network walk.
trait Graph {
    type V: Copy;
    fn param(&mut self, name: String, shape: Shape, init: Init, exempt: bool) -> Result<Self::V>;
    fn conv(&mut self, x: Self::V, w: Self::V, b: Self::V, stride: usize, pad: usize) -> Result<Self::V>;
    fn gelu(&mut self, x: Self::V) -> Result<Self::V>;
    fn group_norm(&mut self, x: Self::V, gamma: Self::V, beta: Self::V, groups: usize) -> Result<Self::V>;
    fn upsample(&mut self, x: Self::V) -> Result<Self::V>;
    fn concat(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn hfs(&mut self, x: Self::V, dc: Self::V, hfc: Self::V, patch: usize) -> Result<Self::V>;
    fn fourier(&mut self, x: Self::V, low: Self::V, high: Self::V, tau: f64) -> Result<Self::V>;
    /// Hook for latent-feature inspection; no-op by default.
    fn probe(&mut self, _name: &str, _v: Self::V) {}
}

/// Allocates parameters in walk order.
struct Builder {
    rng: rand_chacha::ChaCha8Rng,
    params: Vec<Tensor>,
    names: Vec<String>,
    exempt: Vec<bool>,
}

impl Graph for Builder {
    type V = ();
    fn param(&mut self, name: String, shape: Shape, init: Init, exempt: bool) -> Result<()> {
        let mut t = Tensor::zeros(shape);
        match init {
            Init::HeConv => {
                let fan_in = (shape.c() * shape.h() * shape.w()) as f64;
                let std = (2.0 / fan_in).sqrt();
                for v in &mut t.data {
                    *v = std * crate::tensor::sample_normal(&mut self.rng);
                }
            }
            Init::Zeros => {}
            Init::Ones => t.data.fill(1.0),
            Init::Const(c) => t.data.fill(c),
        }
        self.params.push(t);
        self.names.push(name);
        self.exempt.push(exempt);
        Ok(())
    }
    fn conv(&mut self, _: (), _: (), _: (), _: usize, _: usize) -> Result<()> { Ok(()) }
    fn gelu(&mut self, _: ()) -> Result<()> { Ok(()) }
    fn group_norm(&mut self, _: (), _: (), _: (), _: usize) -> Result<()> { Ok(()) }
    fn upsample(&mut self, _: ()) -> Result<()> { Ok(()) }
    fn concat(&mut self, _: (), _: ()) -> Result<()> { Ok(()) }
    fn add(&mut self, _: (), _: ()) -> Result<()> { Ok(()) }
    fn hfs(&mut self, _: (), _: (), _: (), _: usize) -> Result<()> { Ok(()) }
    fn fourier(&mut self, _: (), _: (), _: (), _: f64) -> Result<()> { Ok(()) }
}

/// Replays the walk against a tape, consuming pre-leafed parameter vars.
struct Runner<'t, 'v> {
    tape: &'t mut Tape,
    vars: &'v [VarId],
    cursor: usize,
    probes: Vec<(String, VarId)>,
}

impl Graph for Runner<'_, '_> {
    type V = VarId;
    fn param(&mut self, _name: String, _shape: Shape, _init: Init, _exempt: bool) -> Result<VarId> {
        let v = self.vars.get(self.cursor).copied().ok_or_else(|| {
            Error::InvalidConfig("parameter list shorter than network walk".into())
        })?;
        self.cursor += 1;
        Ok(v)
    }
    fn conv(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> Result<VarId> {
        self.tape.conv2d(x, w, b, stride, pad)
    }
    fn gelu(&mut self, x: VarId) -> Result<VarId> {
        self.tape.gelu(x)
    }
    fn group_norm(&mut self, x: VarId, gamma: VarId, beta: VarId, groups: usize) -> Result<VarId> {
        self.tape.group_norm(x, gamma, beta, groups, NORM_EPS)
    }
    fn upsample(&mut self, x: VarId) -> Result<VarId> {
        self.tape.upsample_nearest2(x)
    }
    fn concat(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.tape.concat_channels(a, b)
    }
    fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.tape.add(a, b)
    }
    fn hfs(&mut self, x: VarId, dc: VarId, hfc: VarId, patch: usize) -> Result<VarId> {
        self.tape.hfs_apply(x, dc, hfc, patch)
    }
    fn fourier(&mut self, x: VarId, low: VarId, high: VarId, tau: f64) -> Result<VarId> {
        self.tape.fourier_scale(x, low, high, tau)
    }
    fn probe(&mut self, name: &str, v: VarId) {
        self.probes.push((name.to_string(), v));
    }
}

fn conv_layer<G: Graph>(
    g: &mut G,
    x: G::V,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    name: &str,
) -> Result<G::V> {
    let w = g.param(format!("{name}.weight"), Shape([c_out, c_in, k, k]), Init::HeConv, false)?;
    let b = g.param(format!("{name}.bias"), Shape([1, c_out, 1, 1]), Init::Zeros, false)?;
    g.conv(x, w, b, stride, k / 2)
}

/// Scaling module after a convolution output (or skip transform), when the
/// variant calls for one.
fn scaling<G: Graph>(
    cfg: &ModelConfig,
    g: &mut G,
    x: G::V,
    c: usize,
    level: usize,
    name: &str,
) -> Result<G::V> {
    match cfg.scaling_variant {
        ScalingVariant::None => Ok(x),
        ScalingVariant::Hfs => {
            let dc = g.param(
                format!("{name}.lambda_dc"),
                Shape([1, c, 1, 1]),
                Init::Const(cfg.lambda_init_dc),
                true,
            )?;
            let hfc = g.param(
                format!("{name}.lambda_hfc"),
                Shape([1, c, 1, 1]),
                Init::Const(cfg.lambda_init_hfc),
                true,
            )?;
            g.hfs(x, dc, hfc, cfg.patch_at(level))
        }
        ScalingVariant::Fourier => {
            let low = g.param(
                format!("{name}.lambda_low"),
                Shape([1, c, 1, 1]),
                Init::Const(cfg.lambda_init_dc),
                true,
            )?;
            let high = g.param(
                format!("{name}.lambda_high"),
                Shape([1, c, 1, 1]),
                Init::Const(cfg.lambda_init_hfc),
                true,
            )?;
            g.fourier(x, low, high, cfg.tau)
        }
    }
}

fn norm_layer<G: Graph>(
    cfg: &ModelConfig,
    g: &mut G,
    x: G::V,
    c: usize,
    name: &str,
) -> Result<G::V> {
    let gamma = g.param(format!("{name}.gamma"), Shape([1, c, 1, 1]), Init::Ones, false)?;
    let beta = g.param(format!("{name}.beta"), Shape([1, c, 1, 1]), Init::Zeros, false)?;
    let groups = cfg.groups_for(c)?;
    g.group_norm(x, gamma, beta, groups)
}

/// conv-scale-norm-act-conv-scale-norm(-residual)-act. The skip transform is
/// identity when channel counts match, 1x1 conv (plus scaling) otherwise.
fn res_block<G: Graph>(
    cfg: &ModelConfig,
    g: &mut G,
    x: G::V,
    c_in: usize,
    c_out: usize,
    level: usize,
    name: &str,
) -> Result<G::V> {
    let h = conv_layer(g, x, c_in, c_out, 3, 1, &format!("{name}.conv1"))?;
    let h = scaling(cfg, g, h, c_out, level, &format!("{name}.conv1"))?;
    let h = norm_layer(cfg, g, h, c_out, &format!("{name}.norm1"))?;
    let h = g.gelu(h)?;
    let h = conv_layer(g, h, c_out, c_out, 3, 1, &format!("{name}.conv2"))?;
    let h = scaling(cfg, g, h, c_out, level, &format!("{name}.conv2"))?;
    let h = norm_layer(cfg, g, h, c_out, &format!("{name}.norm2"))?;
    if !cfg.residual_blocks {
        return g.gelu(h);
    }
    let skip = if c_in == c_out {
        x
    } else {
        let s = conv_layer(g, x, c_in, c_out, 1, 1, &format!("{name}.skip"))?;
        scaling(cfg, g, s, c_out, level, &format!("{name}.skip"))?
    };
    let sum = g.add(h, skip)?;
    g.gelu(sum)
}

fn network<G: Graph>(cfg: &ModelConfig, g: &mut G, input: G::V) -> Result<G::V> {
    let mut cur = input;
    let mut skips = Vec::with_capacity(cfg.levels);
    let mut c_in = cfg.in_channels;
    for l in 0..cfg.levels {
        let w = cfg.widths[l];
        cur = res_block(cfg, g, cur, c_in, w, l, &format!("enc{l}a"))?;
        cur = res_block(cfg, g, cur, w, w, l, &format!("enc{l}b"))?;
        g.probe(&format!("enc{l}"), cur);
        skips.push(cur);
        cur = conv_layer(g, cur, w, cfg.widths[l + 1], 3, 2, &format!("down{l}"))?;
        c_in = cfg.widths[l + 1];
    }
    cur = res_block(cfg, g, cur, c_in, cfg.widths[cfg.levels], cfg.levels, "bottleneck")?;
    g.probe("bottleneck", cur);
    for l in (0..cfg.levels).rev() {
        let w = cfg.widths[l];
        cur = g.upsample(cur)?;
        cur = conv_layer(g, cur, cfg.widths[l + 1], w, 3, 1, &format!("up{l}"))?;
        cur = g.concat(skips[l], cur)?;
        cur = res_block(cfg, g, cur, 2 * w, w, l, &format!("dec{l}a"))?;
        cur = res_block(cfg, g, cur, w, w, l, &format!("dec{l}b"))?;
        g.probe(&format!("dec{l}"), cur);
    }
    // linear head
    conv_layer(g, cur, cfg.widths[0], cfg.out_channels, 1, 1, "head")
}

pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
    pub decay_exempt: Vec<bool>,
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut builder = Builder {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            names: Vec::new(),
            exempt: Vec::new(),
        };
        network(&config, &mut builder, ())?;
        Ok(Model {
            config,
            params: builder.params,
            names: builder.names,
            decay_exempt: builder.exempt,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Parameter count of the scaling (lambda) modules alone.
    pub fn scaling_param_count(&self) -> usize {
        self.params
            .iter()
            .zip(&self.decay_exempt)
            .filter(|(_, e)| **e)
            .map(|(p, _)| p.numel())
            .sum()
    }

    /// Record the forward graph; returns the output node and the parameter
    /// leaf vars (same order as `self.params`).
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        input: VarId,
        trainable: bool,
    ) -> Result<(VarId, Vec<VarId>)> {
        let shape = tape.value(input).shape;
        if shape.c() != self.config.in_channels
            || shape.h() != self.config.input_size
            || shape.w() != self.config.input_size
        {
            return Err(Error::ShapeMismatch(format!(
                "model expects (n, {}, {}, {}), got {shape}",
                self.config.in_channels, self.config.input_size, self.config.input_size
            )));
        }
        let vars: Vec<VarId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect();
        let mut runner = Runner { tape, vars: &vars, cursor: 0, probes: Vec::new() };
        let out = network(&self.config, &mut runner, input)?;
        debug_assert_eq!(runner.cursor, vars.len());
        Ok((out, vars))
    }

    /// Latent feature maps at the encoder levels, bottleneck, and decoder
    /// levels, in network order.
    pub fn forward_features(
        &self,
        input: &Tensor,
        precision: Precision,
    ) -> Result<Vec<(String, Tensor)>> {
        let mut tape = Tape::new(precision);
        let x = tape.leaf(input.clone(), false);
        let vars: Vec<VarId> = self.params.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let probes = {
            let mut runner =
                Runner { tape: &mut tape, vars: &vars, cursor: 0, probes: Vec::new() };
            network(&self.config, &mut runner, x)?;
            runner.probes
        };
        Ok(probes
            .into_iter()
            .map(|(name, v)| (name, tape.value(v).clone()))
            .collect())
    }

    /// Inference forward pass.
    pub fn forward(&self, input: &Tensor, precision: Precision) -> Result<Tensor> {
        let mut tape = Tape::new(precision);
        let x = tape.leaf(input.clone(), false);
        let (out, _) = self.forward_graph(&mut tape, x, false)?;
        Ok(tape.value(out).clone())
    }

    /// Autoregressive evaluation: each predicted k-step block is appended to
    /// the history for the next block. `steps` must be a multiple of k.
    pub fn rollout(&self, history: &Tensor, steps: usize, precision: Precision) -> Result<Tensor> {
        let k = self.config.out_channels;
        if steps == 0 || steps % k != 0 {
            return Err(Error::InvalidConfig(format!(
                "rollout steps {steps} not a positive multiple of k={k}"
            )));
        }
        if self.config.in_channels < k {
            return Err(Error::InvalidConfig(
                "rollout requires in_channels >= out_channels".into(),
            ));
        }
        let shape = history.shape;
        let (n, h, w) = (shape.n(), shape.h(), shape.w());
        let plane = h * w;
        let mut hist = history.clone();
        let mut preds: Vec<Tensor> = Vec::new();
        for _ in 0..steps / k {
            let block = self.forward(&hist, precision)?;
            // shift history: drop the oldest k frames, append the prediction
            let c = self.config.in_channels;
            let mut next = Tensor::zeros(shape);
            for s in 0..n {
                let src = hist.idx(s, k, 0, 0);
                let dst = next.idx(s, 0, 0, 0);
                next.data[dst..dst + (c - k) * plane]
                    .copy_from_slice(&hist.data[src..src + (c - k) * plane]);
                let src = block.idx(s, 0, 0, 0);
                let dst = next.idx(s, c - k, 0, 0);
                next.data[dst..dst + k * plane]
                    .copy_from_slice(&block.data[src..src + k * plane]);
            }
            preds.push(block);
            hist = next;
        }
        let mut out = Tensor::zeros(Shape([n, steps, h, w]));
        for s in 0..n {
            for (bi, block) in preds.iter().enumerate() {
                let src = block.idx(s, 0, 0, 0);
                let dst = out.idx(s, bi * k, 0, 0);
                out.data[dst..dst + k * plane].copy_from_slice(&block.data[src..src + k * plane]);
            }
        }
        Ok(out)
    }

    /// Ordered (site, mean lambda_dc/low, mean lambda_hfc/high) over all
    /// scaling modules.
    pub fn lambda_snapshot(&self) -> Vec<(String, f64, f64)> {
        let mean = |t: &Tensor| t.data.iter().sum::<f64>() / t.numel() as f64;
        let mut out = Vec::new();
        for (i, name) in self.names.iter().enumerate() {
            let site = match name
                .strip_suffix(".lambda_dc")
                .or_else(|| name.strip_suffix(".lambda_low"))
            {
                Some(site) => site,
                None => continue,
            };
            // the paired high-frequency vector is allocated immediately after
            out.push((site.to_string(), mean(&self.params[i]), mean(&self.params[i + 1])));
        }
        out
    }

    // ── checkpoint I/O ──────────────────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config_json = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
        buf.extend_from_slice(&self.config.digest());
        buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&config_json);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for ((p, name), exempt) in self.params.iter().zip(&self.names).zip(&self.decay_exempt) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            for d in p.shape.0 {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            buf.push(u8::from(*exempt));
            for v in &p.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader { bytes: &bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let digest: Vec<u8> = r.take(32)?.to_vec();
        let config_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
            .map_err(|e| Error::Format(format!("config parse: {e}")))?;
        if config.digest().as_slice() != digest.as_slice() {
            return Err(Error::Format("checkpoint config digest mismatch".into()));
        }
        config.validate()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        let mut names = Vec::with_capacity(count);
        let mut exempt = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("parameter name not utf-8".into()))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u64()? as usize;
            }
            let ex = r.take(1)?[0] != 0;
            let shape = Shape(dims);
            let mut t = Tensor::zeros(shape);
            for v in &mut t.data {
                let raw = r.take(8)?;
                *v = f64::from_le_bytes(raw.try_into().unwrap());
            }
            params.push(t);
            names.push(name);
            exempt.push(ex);
        }
        // cross-check against a fresh build of the same config
        let reference = Model::build(config.clone(), 0)?;
        if reference.names != names {
            return Err(Error::Format("checkpoint parameters do not match config topology".into()));
        }
        Ok(Model { config, params, names, decay_exempt: exempt })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
