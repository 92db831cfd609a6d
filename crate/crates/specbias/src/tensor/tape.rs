//! Wengert tape over 4-axis tensors.
//!
//! Ops append nodes in topological order; `backward` walks the list in
//! reverse exactly once. Only the primitives the operator and HFS modules
//! need are provided. No control-flow tracing, no higher-order gradients.

use super::conv::{conv2d_backward, conv2d_forward};
use super::{Shape, Tensor};
use crate::hfs;
use crate::{Error, Result};

/// Storage precision of op outputs. F32 rounds every primitive output
/// through 32-bit storage; F64 is required for finite-difference checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

const GELU_C: f64 = 0.044715;

enum Op {
    Leaf,
    Conv2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    },
    Gelu {
        x: VarId,
    },
    GroupNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        groups: usize,
        // per (sample, group) statistics saved from the forward pass
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    UpsampleNearest2 {
        x: VarId,
    },
    Concat {
        a: VarId,
        b: VarId,
    },
    Add {
        a: VarId,
        b: VarId,
    },
    ScalePerChannel {
        x: VarId,
        lambda: VarId,
    },
    HfsApply {
        x: VarId,
        lambda_dc: VarId,
        lambda_hfc: VarId,
        patch: usize,
    },
    FourierScale {
        x: VarId,
        lambda_low: VarId,
        lambda_high: VarId,
        tau: f64,
        // low/high-passed inputs saved for the lambda gradients
        x_low: Tensor,
        x_high: Tensor,
    },
    MseLoss {
        pred: VarId,
        target: VarId,
    },
}

pub struct Tape {
    precision: Precision,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
    requires: Vec<bool>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Tape {
            precision,
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn leaf(&mut self, mut t: Tensor, requires_grad: bool) -> VarId {
        if self.precision == Precision::F32 {
            t.round_to_f32();
        }
        self.push(t, requires_grad, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn grad(&self, id: VarId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    fn push(&mut self, t: Tensor, requires: bool, op: Op) -> VarId {
        self.values.push(t);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        VarId(self.values.len() - 1)
    }

    fn record(&mut self, mut t: Tensor, requires: bool, op: Op) -> Result<VarId> {
        if self.precision == Precision::F32 {
            t.round_to_f32();
        }
        if !t.all_finite() {
            return Err(Error::Numerical("non-finite op output".into()));
        }
        Ok(self.push(t, requires, op))
    }

    fn req(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|id| self.requires[id.0])
    }

    // ── forward primitives ──────────────────────────────────────────

    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    ) -> Result<VarId> {
        let (xs, ws, bs) = (
            self.values[x.0].shape,
            self.values[w.0].shape,
            self.values[b.0].shape,
        );
        let k = ws.h();
        if !(k == 1 || k == 3) || !(stride == 1 || stride == 2) {
            return Err(Error::InvalidConfig(format!(
                "conv2d supports k in {{1,3}}, stride in {{1,2}}; got k={k}, stride={stride}"
            )));
        }
        if ws.w() != k || ws.c() != xs.c() || bs.c() != ws.n() {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: x {xs}, w {ws}, b {bs}"
            )));
        }
        if xs.h() + 2 * pad < k || xs.w() + 2 * pad < k {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: input {xs} too small for k={k}, pad={pad}"
            )));
        }
        let y = conv2d_forward(
            &self.values[x.0],
            &self.values[w.0],
            &self.values[b.0],
            stride,
            pad,
        );
        let requires = self.req(&[x, w, b]);
        self.record(y, requires, Op::Conv2d { x, w, b, stride, pad })
    }

    pub fn gelu(&mut self, x: VarId) -> Result<VarId> {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let mut y = self.values[x.0].clone();
        for v in &mut y.data {
            let s = c * (*v + GELU_C * *v * *v * *v);
            *v = 0.5 * *v * (1.0 + s.tanh());
        }
        let requires = self.requires[x.0];
        self.record(y, requires, Op::Gelu { x })
    }

    pub fn group_norm(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        groups: usize,
        eps: f64,
    ) -> Result<VarId> {
        let xs = self.values[x.0].shape;
        let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
        if groups == 0 || c % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "group_norm: {c} channels not divisible by {groups} groups"
            )));
        }
        if self.values[gamma.0].shape.c() != c || self.values[beta.0].shape.c() != c {
            return Err(Error::ShapeMismatch("group_norm affine size".into()));
        }
        let cg = c / groups;
        let m = (cg * h * w) as f64;
        let mut y = Tensor::zeros(xs);
        let mut means = vec![0.0; n * groups];
        let mut inv_stds = vec![0.0; n * groups];
        {
            let xv = &self.values[x.0];
            let gv = &self.values[gamma.0];
            let bv = &self.values[beta.0];
            for s in 0..n {
                for g in 0..groups {
                    let base = xv.idx(s, g * cg, 0, 0);
                    let slab = &xv.data[base..base + cg * h * w];
                    let mean = slab.iter().sum::<f64>() / m;
                    let var = slab.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    means[s * groups + g] = mean;
                    inv_stds[s * groups + g] = inv_std;
                    for ci in 0..cg {
                        let ch = g * cg + ci;
                        let (ga, be) = (gv.data[ch], bv.data[ch]);
                        for i in 0..h * w {
                            let v = slab[ci * h * w + i];
                            y.data[base + ci * h * w + i] = ga * (v - mean) * inv_std + be;
                        }
                    }
                }
            }
        }
        let requires = self.req(&[x, gamma, beta]);
        self.record(
            y,
            requires,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean: means,
                inv_std: inv_stds,
            },
        )
    }

    pub fn upsample_nearest2(&mut self, x: VarId) -> Result<VarId> {
        let xs = self.values[x.0].shape;
        let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
        let mut y = Tensor::zeros(Shape([n, c, 2 * h, 2 * w]));
        {
            let xv = &self.values[x.0];
            for s in 0..n {
                for ch in 0..c {
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            *y.at_mut(s, ch, yy, xx) = xv.at(s, ch, yy / 2, xx / 2);
                        }
                    }
                }
            }
        }
        let requires = self.requires[x.0];
        self.record(y, requires, Op::UpsampleNearest2 { x })
    }

    pub fn concat_channels(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.values[a.0].shape, self.values[b.0].shape);
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(Error::ShapeMismatch(format!("concat: {sa} vs {sb}")));
        }
        let (n, h, w) = (sa.n(), sa.h(), sa.w());
        let (ca, cb) = (sa.c(), sb.c());
        let mut y = Tensor::zeros(Shape([n, ca + cb, h, w]));
        {
            let (av, bv) = (&self.values[a.0], &self.values[b.0]);
            let plane = h * w;
            for s in 0..n {
                let dst = y.idx(s, 0, 0, 0);
                y.data[dst..dst + ca * plane]
                    .copy_from_slice(&av.data[s * ca * plane..(s + 1) * ca * plane]);
                let dst = y.idx(s, ca, 0, 0);
                y.data[dst..dst + cb * plane]
                    .copy_from_slice(&bv.data[s * cb * plane..(s + 1) * cb * plane]);
            }
        }
        let requires = self.req(&[a, b]);
        self.record(y, requires, Op::Concat { a, b })
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.values[a.0].shape != self.values[b.0].shape {
            return Err(Error::ShapeMismatch(format!(
                "add: {} vs {}",
                self.values[a.0].shape, self.values[b.0].shape
            )));
        }
        let mut y = self.values[a.0].clone();
        for (v, bv) in y.data.iter_mut().zip(&self.values[b.0].data) {
            *v += bv;
        }
        let requires = self.req(&[a, b]);
        self.record(y, requires, Op::Add { a, b })
    }

    pub fn scale_per_channel(&mut self, x: VarId, lambda: VarId) -> Result<VarId> {
        let xs = self.values[x.0].shape;
        if self.values[lambda.0].shape.c() != xs.c() {
            return Err(Error::ShapeMismatch("scale_per_channel lambda size".into()));
        }
        let mut y = self.values[x.0].clone();
        {
            let lv = &self.values[lambda.0];
            let plane = xs.h() * xs.w();
            for s in 0..xs.n() {
                for c in 0..xs.c() {
                    let base = (s * xs.c() + c) * plane;
                    let l = lv.data[c];
                    for v in &mut y.data[base..base + plane] {
                        *v *= l;
                    }
                }
            }
        }
        let requires = self.req(&[x, lambda]);
        self.record(y, requires, Op::ScalePerChannel { x, lambda })
    }

    /// Patch DC/HFC decomposition with learnable per-channel scaling.
    pub fn hfs_apply(
        &mut self,
        x: VarId,
        lambda_dc: VarId,
        lambda_hfc: VarId,
        patch: usize,
    ) -> Result<VarId> {
        let xs = self.values[x.0].shape;
        if patch == 0 || xs.h() % patch != 0 || xs.w() % patch != 0 {
            return Err(Error::InvalidConfig(format!(
                "hfs_apply: patch {patch} does not divide spatial size {}x{}",
                xs.h(),
                xs.w()
            )));
        }
        if self.values[lambda_dc.0].shape.c() != xs.c()
            || self.values[lambda_hfc.0].shape.c() != xs.c()
        {
            return Err(Error::ShapeMismatch("hfs_apply lambda size".into()));
        }
        let y = hfs::hfs_forward(
            &self.values[x.0],
            &self.values[lambda_dc.0].data,
            &self.values[lambda_hfc.0].data,
            patch,
        );
        let requires = self.req(&[x, lambda_dc, lambda_hfc]);
        self.record(
            y,
            requires,
            Op::HfsApply {
                x,
                lambda_dc,
                lambda_hfc,
                patch,
            },
        )
    }

    /// Frequency-domain alternative: per-channel DFT, radial low/high split
    /// at threshold tau, per-channel scaling, inverse transform.
    pub fn fourier_scale(
        &mut self,
        x: VarId,
        lambda_low: VarId,
        lambda_high: VarId,
        tau: f64,
    ) -> Result<VarId> {
        let xs = self.values[x.0].shape;
        if self.values[lambda_low.0].shape.c() != xs.c()
            || self.values[lambda_high.0].shape.c() != xs.c()
        {
            return Err(Error::ShapeMismatch("fourier_scale lambda size".into()));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidConfig(format!("fourier_scale: tau={tau}")));
        }
        let (x_low, x_high) = hfs::fourier_split(&self.values[x.0], tau)?;
        let mut y = Tensor::zeros(xs);
        {
            let (ll, lh) = (&self.values[lambda_low.0], &self.values[lambda_high.0]);
            let plane = xs.h() * xs.w();
            for s in 0..xs.n() {
                for c in 0..xs.c() {
                    let base = (s * xs.c() + c) * plane;
                    for i in base..base + plane {
                        y.data[i] = ll.data[c] * x_low.data[i] + lh.data[c] * x_high.data[i];
                    }
                }
            }
        }
        let requires = self.req(&[x, lambda_low, lambda_high]);
        self.record(
            y,
            requires,
            Op::FourierScale {
                x,
                lambda_low,
                lambda_high,
                tau,
                x_low,
                x_high,
            },
        )
    }

    pub fn mse_loss(&mut self, pred: VarId, target: VarId) -> Result<VarId> {
        let (ps, ts) = (self.values[pred.0].shape, self.values[target.0].shape);
        if ps != ts {
            return Err(Error::ShapeMismatch(format!("mse_loss: {ps} vs {ts}")));
        }
        let n = ps.numel() as f64;
        let sum: f64 = self.values[pred.0]
            .data
            .iter()
            .zip(&self.values[target.0].data)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let requires = self.req(&[pred, target]);
        self.record(Tensor::scalar(sum / n), requires, Op::MseLoss { pred, target })
    }

    // ── backward ────────────────────────────────────────────────────

    fn accumulate(&mut self, id: VarId, delta: Tensor) {
        if !self.requires[id.0] {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(delta.data) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Populate gradient buffers for every requires-grad node reachable
    /// from `loss`. Repeated calls accumulate.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if loss.0 >= self.values.len() {
            return Err(Error::InvalidConfig("loss not on this tape".into()));
        }
        if !self.values[loss.0].is_scalar() {
            return Err(Error::InvalidConfig("backward requires a scalar loss".into()));
        }
        if !self.requires[loss.0] {
            return Err(Error::InvalidConfig(
                "loss is detached from every requires-grad leaf".into(),
            ));
        }
        self.accumulate(loss, Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let g = match self.grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                    let (dx, dw, db) =
                        conv2d_backward(&self.values[x.0], &self.values[w.0], &g, stride, pad);
                    self.accumulate(x, dx);
                    self.accumulate(w, dw);
                    self.accumulate(b, db);
                }
                Op::Gelu { x } => {
                    let x = *x;
                    let c = (2.0 / std::f64::consts::PI).sqrt();
                    let mut dx = g;
                    for (dv, v) in dx.data.iter_mut().zip(&self.values[x.0].data) {
                        let s = c * (v + GELU_C * v * v * v);
                        let t = s.tanh();
                        let ds = c * (1.0 + 3.0 * GELU_C * v * v);
                        *dv *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * ds;
                    }
                    self.accumulate(x, dx);
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    mean,
                    inv_std,
                } => {
                    let (x, gamma, beta, groups) = (*x, *gamma, *beta, *groups);
                    let xs = self.values[x.0].shape;
                    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
                    let cg = c / groups;
                    let m = (cg * h * w) as f64;
                    let xv = &self.values[x.0];
                    let gv = &self.values[gamma.0];
                    let mut dx = Tensor::zeros(xs);
                    let mut dgamma = Tensor::zeros(self.values[gamma.0].shape);
                    let mut dbeta = Tensor::zeros(self.values[beta.0].shape);
                    for s in 0..n {
                        for grp in 0..groups {
                            let mu = mean[s * groups + grp];
                            let istd = inv_std[s * groups + grp];
                            let base = xv.idx(s, grp * cg, 0, 0);
                            // sums for the projection terms
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xhat = 0.0;
                            for ci in 0..cg {
                                let ga = gv.data[grp * cg + ci];
                                for i in 0..h * w {
                                    let j = base + ci * h * w + i;
                                    let xhat = (xv.data[j] - mu) * istd;
                                    let dxhat = g.data[j] * ga;
                                    sum_dxhat += dxhat;
                                    sum_dxhat_xhat += dxhat * xhat;
                                    dgamma.data[grp * cg + ci] += g.data[j] * xhat;
                                    dbeta.data[grp * cg + ci] += g.data[j];
                                }
                            }
                            let mean_dxhat = sum_dxhat / m;
                            let mean_dxhat_xhat = sum_dxhat_xhat / m;
                            for ci in 0..cg {
                                let ga = gv.data[grp * cg + ci];
                                for i in 0..h * w {
                                    let j = base + ci * h * w + i;
                                    let xhat = (xv.data[j] - mu) * istd;
                                    let dxhat = g.data[j] * ga;
                                    dx.data[j] =
                                        istd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                                }
                            }
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(gamma, dgamma);
                    self.accumulate(beta, dbeta);
                }
                Op::UpsampleNearest2 { x } => {
                    let x = *x;
                    let xs = self.values[x.0].shape;
                    let (n, c, h, w) = (xs.n(), xs.c(), xs.h(), xs.w());
                    let mut dx = Tensor::zeros(xs);
                    for s in 0..n {
                        for ch in 0..c {
                            for yy in 0..2 * h {
                                for xx in 0..2 * w {
                                    *dx.at_mut(s, ch, yy / 2, xx / 2) += g.at(s, ch, yy, xx);
                                }
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
                Op::Concat { a, b } => {
                    let (a, b) = (*a, *b);
                    let (sa, sb) = (self.values[a.0].shape, self.values[b.0].shape);
                    let (n, h, w) = (sa.n(), sa.h(), sa.w());
                    let (ca, cb) = (sa.c(), sb.c());
                    let plane = h * w;
                    let mut da = Tensor::zeros(sa);
                    let mut db = Tensor::zeros(sb);
                    for s in 0..n {
                        let src = g.idx(s, 0, 0, 0);
                        da.data[s * ca * plane..(s + 1) * ca * plane]
                            .copy_from_slice(&g.data[src..src + ca * plane]);
                        let src = g.idx(s, ca, 0, 0);
                        db.data[s * cb * plane..(s + 1) * cb * plane]
                            .copy_from_slice(&g.data[src..src + cb * plane]);
                    }
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::ScalePerChannel { x, lambda } => {
                    let (x, lambda) = (*x, *lambda);
                    let xs = self.values[x.0].shape;
                    let plane = xs.h() * xs.w();
                    let mut dx = g.clone();
                    let mut dl = Tensor::zeros(self.values[lambda.0].shape);
                    for s in 0..xs.n() {
                        for c in 0..xs.c() {
                            let base = (s * xs.c() + c) * plane;
                            let l = self.values[lambda.0].data[c];
                            let mut acc = 0.0;
                            for i in base..base + plane {
                                acc += g.data[i] * self.values[x.0].data[i];
                                dx.data[i] *= l;
                            }
                            dl.data[c] += acc;
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(lambda, dl);
                }
                Op::HfsApply {
                    x,
                    lambda_dc,
                    lambda_hfc,
                    patch,
                } => {
                    let (x, ldc, lhfc, patch) = (*x, *lambda_dc, *lambda_hfc, *patch);
                    let (dx, ddc, dhfc) = hfs::hfs_backward(
                        &self.values[x.0],
                        &self.values[ldc.0].data,
                        &self.values[lhfc.0].data,
                        patch,
                        &g,
                    );
                    self.accumulate(x, dx);
                    self.accumulate(ldc, ddc);
                    self.accumulate(lhfc, dhfc);
                }
                Op::FourierScale {
                    x,
                    lambda_low,
                    lambda_high,
                    tau,
                    x_low,
                    x_high,
                } => {
                    let (x, ll, lh, tau) = (*x, *lambda_low, *lambda_high, *tau);
                    let xs = self.values[x.0].shape;
                    let plane = xs.h() * xs.w();
                    // lambda grads from the saved band-passed inputs
                    let mut dll = Tensor::zeros(self.values[ll.0].shape);
                    let mut dlh = Tensor::zeros(self.values[lh.0].shape);
                    for s in 0..xs.n() {
                        for c in 0..xs.c() {
                            let base = (s * xs.c() + c) * plane;
                            let (mut al, mut ah) = (0.0, 0.0);
                            for i in base..base + plane {
                                al += g.data[i] * x_low.data[i];
                                ah += g.data[i] * x_high.data[i];
                            }
                            dll.data[c] += al;
                            dlh.data[c] += ah;
                        }
                    }
                    // the mask-scale pipeline is self-adjoint: dx applies the
                    // same band split to the incoming gradient
                    let (g_low, g_high) = hfs::fourier_split(&g, tau)
                        .expect("band split of gradient cannot fail");
                    let mut dx = Tensor::zeros(xs);
                    for s in 0..xs.n() {
                        for c in 0..xs.c() {
                            let base = (s * xs.c() + c) * plane;
                            let (vl, vh) = (
                                self.values[ll.0].data[c],
                                self.values[lh.0].data[c],
                            );
                            for i in base..base + plane {
                                dx.data[i] = vl * g_low.data[i] + vh * g_high.data[i];
                            }
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(ll, dll);
                    self.accumulate(lh, dlh);
                }
                Op::MseLoss { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    let n = self.values[pred.0].numel() as f64;
                    let gs = g.scalar_value();
                    let mut dp = Tensor::zeros(self.values[pred.0].shape);
                    for (d, (p, t)) in dp.data.iter_mut().zip(
                        self.values[pred.0]
                            .data
                            .iter()
                            .zip(&self.values[target.0].data),
                    ) {
                        *d = gs * 2.0 * (p - t) / n;
                    }
                    if self.requires[target.0] {
                        let mut dt = dp.clone();
                        for v in &mut dt.data {
                            *v = -*v;
                        }
                        self.accumulate(target, dt);
                    }
                    self.accumulate(pred, dp);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: Shape, seed: u64) -> Tensor {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
        t
    }

    #[test]
    fn gelu_fixed_points() {
        let mut tape = Tape::new(Precision::F64);
        let x = tape.leaf(
            Tensor::from_vec(Shape([1, 1, 1, 3]), vec![0.0, 10.0, -10.0]).unwrap(),
            false,
        );
        let y = tape.gelu(x).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.data[0], 0.0);
        assert!((yv.data[1] - 10.0).abs() < 1e-6);
        assert!(yv.data[2].abs() < 1e-6);
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let mut tape = Tape::new(Precision::F64);
        let x = tape.leaf(Tensor::full(Shape([2, 4, 3, 3]), 7.5), false);
        let gamma = tape.leaf(Tensor::full(Shape([1, 4, 1, 1]), 1.0), false);
        let beta = tape.leaf(Tensor::zeros(Shape([1, 4, 1, 1])), false);
        let y = tape.group_norm(x, gamma, beta, 2, 1e-5).unwrap();
        for v in &tape.value(y).data {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn group_norm_affine_collapse() {
        let mut tape = Tape::new(Precision::F64);
        let x = tape.leaf(rand_tensor(Shape([1, 4, 4, 4]), 3), false);
        let gamma = tape.leaf(Tensor::zeros(Shape([1, 4, 1, 1])), false);
        let beta = tape.leaf(Tensor::full(Shape([1, 4, 1, 1]), 5.0), false);
        let y = tape.group_norm(x, gamma, beta, 4, 1e-5).unwrap();
        for v in &tape.value(y).data {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_statistics() {
        let mut tape = Tape::new(Precision::F64);
        let x = tape.leaf(rand_tensor(Shape([2, 8, 4, 4]), 11), false);
        let gamma = tape.leaf(Tensor::full(Shape([1, 8, 1, 1]), 1.0), false);
        let beta = tape.leaf(Tensor::zeros(Shape([1, 8, 1, 1])), false);
        let y = tape.group_norm(x, gamma, beta, 4, 1e-5).unwrap();
        let yv = tape.value(y);
        let cg = 2;
        for s in 0..2 {
            for g in 0..4 {
                let mut vals = Vec::new();
                for ci in 0..cg {
                    for yy in 0..4 {
                        for xx in 0..4 {
                            vals.push(yv.at(s, g * cg + ci, yy, xx));
                        }
                    }
                }
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / vals.len() as f64;
                assert!(m.abs() < 1e-6, "group mean {m}");
                assert!((var - 1.0).abs() < 1e-4, "group var {var}");
            }
        }
    }

    #[test]
    fn add_of_negation_is_zero() {
        let mut tape = Tape::new(Precision::F64);
        let t = rand_tensor(Shape([1, 2, 3, 3]), 5);
        let mut neg = t.clone();
        for v in &mut neg.data {
            *v = -*v;
        }
        let a = tape.leaf(t, false);
        let b = tape.leaf(neg, false);
        let y = tape.add(a, b).unwrap();
        assert!(tape.value(y).data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scale_per_channel_unit_lambda_is_identity() {
        let mut tape = Tape::new(Precision::F64);
        let t = rand_tensor(Shape([2, 3, 4, 4]), 9);
        let x = tape.leaf(t.clone(), false);
        let l = tape.leaf(Tensor::full(Shape([1, 3, 1, 1]), 1.0), false);
        let y = tape.scale_per_channel(x, l).unwrap();
        assert_eq!(tape.value(y).data, t.data);
    }

    #[test]
    fn concat_shapes() {
        let mut tape = Tape::new(Precision::F64);
        let a = tape.leaf(rand_tensor(Shape([2, 3, 4, 4]), 1), false);
        let b = tape.leaf(rand_tensor(Shape([2, 5, 4, 4]), 2), false);
        let y = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(y).shape, Shape([2, 8, 4, 4]));
    }

    #[test]
    fn mse_loss_values() {
        let mut tape = Tape::new(Precision::F64);
        let t = rand_tensor(Shape([1, 2, 3, 3]), 4);
        let mut shifted = t.clone();
        for v in &mut shifted.data {
            *v += 2.0;
        }
        let p = tape.leaf(shifted, false);
        let q = tape.leaf(t.clone(), false);
        let same = tape.mse_loss(q, q).unwrap();
        assert_eq!(tape.value(same).scalar_value(), 0.0);
        let l = tape.mse_loss(p, q).unwrap();
        assert!((tape.value(l).scalar_value() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn upsample_duplicates_2x2_blocks() {
        let mut tape = Tape::new(Precision::F64);
        let x = tape.leaf(
            Tensor::from_vec(Shape([1, 1, 2, 2]), vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            false,
        );
        let y = tape.upsample_nearest2(x).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.shape, Shape([1, 1, 4, 4]));
        for yy in 0..4 {
            for xx in 0..4 {
                let expect = if (yy / 2) == (xx / 2) { 1.0 } else { 0.0 };
                assert_eq!(yv.at(0, 0, yy, xx), expect);
            }
        }
    }

    #[test]
    fn grad_of_unused_leaf_is_none() {
        let mut tape = Tape::new(Precision::F64);
        let used = tape.leaf(rand_tensor(Shape([1, 1, 2, 2]), 7), true);
        let unused = tape.leaf(rand_tensor(Shape([1, 1, 2, 2]), 8), true);
        let target = tape.leaf(Tensor::zeros(Shape([1, 1, 2, 2])), false);
        let loss = tape.mse_loss(used, target).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(used).is_some());
        assert!(tape.grad(unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new(Precision::F64);
        let x = tape.leaf(rand_tensor(Shape([1, 1, 2, 2]), 7), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn scale_per_channel_lambda_grad_is_sum_of_products() {
        let mut tape = Tape::new(Precision::F64);
        let t = rand_tensor(Shape([2, 2, 2, 2]), 13);
        let x = tape.leaf(t.clone(), false);
        let l = tape.leaf(Tensor::full(Shape([1, 2, 1, 1]), 0.5), true);
        let y = tape.scale_per_channel(x, l).unwrap();
        let target = tape.leaf(Tensor::zeros(Shape([2, 2, 2, 2])), false);
        let loss = tape.mse_loss(y, target).unwrap();
        tape.backward(loss).unwrap();
        // d loss/d lambda_c = sum over (n,h,w) of 2*(0.5*x)*x / numel
        let n = 16.0;
        for c in 0..2 {
            let mut expect = 0.0;
            for s in 0..2 {
                for yy in 0..2 {
                    for xx in 0..2 {
                        let v = t.at(s, c, yy, xx);
                        expect += 2.0 * (0.5 * v) / n * v;
                    }
                }
            }
            let got = tape.grad(l).unwrap().data[c];
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }
}
