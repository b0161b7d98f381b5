//! Orientation losses with analytic gradients and decode rules.
//!
//! Five heads are supported: `sin(2θ)/cos(2θ)` regression, direct angle
//! regression with an `ℓ1(sin Δ)` loss, plain `sin θ/cos θ` regression,
//! MultiBin, and the flip-aware head, which regresses `(sin θ, cos θ)` and a
//! single logit for the probability that the regressed heading points
//! backwards.
//!
//! All per-step terms are summed over the horizon. Gradients are exact for
//! the piecewise-smooth losses; at a `min` tie the full-range branch is taken.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Angle;

/// Smooth-L1 (Huber-style) penalty: `0.5 x² / β` inside `|x| < β`,
/// `|x| − 0.5 β` outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothL1 {
    pub beta: f64,
}

impl SmoothL1 {
    pub const DEFAULT_BETA: f64 = 0.04;

    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("smooth-L1 beta must be positive, got {beta}")));
        }
        Ok(SmoothL1 { beta })
    }

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        let a = x.abs();
        if a < self.beta {
            0.5 * x * x / self.beta
        } else {
            a - 0.5 * self.beta
        }
    }

    /// Derivative; saturates at ±1 outside the quadratic zone.
    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        if x.abs() < self.beta {
            x / self.beta
        } else {
            x.signum()
        }
    }
}

impl Default for SmoothL1 {
    fn default() -> Self {
        SmoothL1 {
            beta: Self::DEFAULT_BETA,
        }
    }
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    SmoothL1 { beta }.value(x)
}

pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    SmoothL1 { beta }.grad(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MethodKind {
    SinCos2x,
    L1Sin,
    SinCos,
    MultiBin(usize),
    FlipAware,
}

impl MethodKind {
    /// Number of raw outputs for a horizon of `h` steps.
    pub fn head_arity(self, h: usize) -> usize {
        match self {
            MethodKind::SinCos2x | MethodKind::SinCos => 2 * h,
            MethodKind::L1Sin => h,
            MethodKind::MultiBin(n) => 3 * n * h,
            MethodKind::FlipAware => 2 * h + 1,
        }
    }

    pub fn is_half_range(self) -> bool {
        matches!(self, MethodKind::SinCos2x | MethodKind::L1Sin)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            MethodKind::MultiBin(n) if n < 2 => {
                Err(Error::Config(format!("multibin needs at least 2 bins, got {n}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodKind::SinCos2x => f.write_str("sin_cos_2x"),
            MethodKind::L1Sin => f.write_str("l1_sin"),
            MethodKind::SinCos => f.write_str("sin_cos"),
            MethodKind::MultiBin(n) => write!(f, "multibin_{n}"),
            MethodKind::FlipAware => f.write_str("flip_aware"),
        }
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "sin_cos_2x" => MethodKind::SinCos2x,
            "l1_sin" => MethodKind::L1Sin,
            "sin_cos" => MethodKind::SinCos,
            "flip_aware" => MethodKind::FlipAware,
            other => match other.strip_prefix("multibin_").map(str::parse::<usize>) {
                Some(Ok(n)) => MethodKind::MultiBin(n),
                _ => return Err(Error::Parse(format!("unknown method `{s}`"))),
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for MethodKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodKind> for String {
    fn from(m: MethodKind) -> String {
        m.to_string()
    }
}

/// A method plus the flip-aware ablation switches.
///
/// `no_half` drops the half-range term from the flip-aware loss;
/// `no_flip` trains the flip-aware head with `full + half` only and
/// disables its flip output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub kind: MethodKind,
    pub no_half: bool,
    pub no_flip: bool,
}

impl Method {
    pub fn new(kind: MethodKind) -> Self {
        Method {
            kind,
            no_half: false,
            no_flip: false,
        }
    }

    pub fn with_ablation(kind: MethodKind, no_half: bool, no_flip: bool) -> Result<Self> {
        let m = Method {
            kind,
            no_half,
            no_flip,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if (self.no_half || self.no_flip) && self.kind != MethodKind::FlipAware {
            return Err(Error::Config(format!(
                "ablation flags are only valid for flip_aware, not {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn has_flip_output(&self) -> bool {
        match self.kind {
            MethodKind::FlipAware => !self.no_flip,
            MethodKind::MultiBin(_) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if self.no_half {
            f.write_str("-no-half")?;
        }
        if self.no_flip {
            f.write_str("-no-flip")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut rest = s;
        let mut no_half = false;
        let mut no_flip = false;
        loop {
            if let Some(r) = rest.strip_suffix("-no-flip") {
                no_flip = true;
                rest = r;
            } else if let Some(r) = rest.strip_suffix("-no-half") {
                no_half = true;
                rest = r;
            } else {
                break;
            }
        }
        Method::with_ablation(rest.parse()?, no_half, no_flip)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// An unnormalized `(sin, cos)` output pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SinCosPair {
    pub sin: f64,
    pub cos: f64,
}

impl SinCosPair {
    pub const fn new(sin: f64, cos: f64) -> Self {
        SinCosPair { sin, cos }
    }

    pub fn of(a: Angle) -> Self {
        let (s, c) = a.radians().sin_cos();
        SinCosPair { sin: s, cos: c }
    }
}

impl std::ops::Neg for SinCosPair {
    type Output = SinCosPair;
    fn neg(self) -> Self {
        SinCosPair::new(-self.sin, -self.cos)
    }
}

/// One MultiBin bin: confidence logit and unnormalized residual pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BinOutput {
    pub logit: f64,
    pub res_sin: f64,
    pub res_cos: f64,
}

/// Raw model outputs for one actor. Per-step vectors have one entry per
/// horizon step.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    SinCos2x(Vec<SinCosPair>),
    /// Raw angles in radians.
    L1Sin(Vec<f64>),
    SinCos(Vec<SinCosPair>),
    /// `[step][bin]`.
    MultiBin(Vec<Vec<BinOutput>>),
    FlipAware {
        pairs: Vec<SinCosPair>,
        flip_logit: f64,
    },
}

/// ∂loss/∂output, laid out exactly like the [`HeadOutput`] it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradient(pub HeadOutput);

impl HeadOutput {
    pub fn horizon(&self) -> usize {
        match self {
            HeadOutput::SinCos2x(p) | HeadOutput::SinCos(p) => p.len(),
            HeadOutput::L1Sin(a) => a.len(),
            HeadOutput::MultiBin(b) => b.len(),
            HeadOutput::FlipAware { pairs, .. } => pairs.len(),
        }
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            HeadOutput::SinCos2x(_) => MethodKind::SinCos2x,
            HeadOutput::L1Sin(_) => MethodKind::L1Sin,
            HeadOutput::SinCos(_) => MethodKind::SinCos,
            HeadOutput::MultiBin(b) => MethodKind::MultiBin(b.first().map_or(0, Vec::len)),
            HeadOutput::FlipAware { .. } => MethodKind::FlipAware,
        }
    }

    /// Flat layout used by the model: pairs interleave `(sin, cos)`,
    /// MultiBin is `(logit, res_sin, res_cos)` per bin per step, and the
    /// flip logit comes last.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.kind().head_arity(self.horizon()));
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        let push_pairs = |out: &mut Vec<f64>, p: &[SinCosPair]| {
            for q in p {
                out.push(q.sin);
                out.push(q.cos);
            }
        };
        match self {
            HeadOutput::SinCos2x(p) | HeadOutput::SinCos(p) => push_pairs(out, p),
            HeadOutput::L1Sin(a) => out.extend_from_slice(a),
            HeadOutput::MultiBin(steps) => {
                for b in steps.iter().flatten() {
                    out.extend_from_slice(&[b.logit, b.res_sin, b.res_cos]);
                }
            }
            HeadOutput::FlipAware { pairs, flip_logit } => {
                push_pairs(out, pairs);
                out.push(*flip_logit);
            }
        }
    }

    pub fn from_flat(kind: MethodKind, horizon: usize, v: &[f64]) -> Result<Self> {
        kind.validate()?;
        let arity = kind.head_arity(horizon);
        if v.len() != arity {
            return Err(Error::Shape(format!(
                "{kind} head with horizon {horizon} needs {arity} values, got {}",
                v.len()
            )));
        }
        let pairs = |v: &[f64]| {
            v.chunks_exact(2)
                .map(|c| SinCosPair::new(c[0], c[1]))
                .collect::<Vec<_>>()
        };
        Ok(match kind {
            MethodKind::SinCos2x => HeadOutput::SinCos2x(pairs(v)),
            MethodKind::SinCos => HeadOutput::SinCos(pairs(v)),
            MethodKind::L1Sin => HeadOutput::L1Sin(v.to_vec()),
            MethodKind::MultiBin(n) => HeadOutput::MultiBin(
                v.chunks_exact(3 * n)
                    .map(|step| {
                        step.chunks_exact(3)
                            .map(|b| BinOutput {
                                logit: b[0],
                                res_sin: b[1],
                                res_cos: b[2],
                            })
                            .collect()
                    })
                    .collect(),
            ),
            MethodKind::FlipAware => HeadOutput::FlipAware {
                pairs: pairs(&v[..2 * horizon]),
                flip_logit: v[2 * horizon],
            },
        })
    }

    /// A head of the same shape filled with zeros.
    pub fn zeros_like(&self) -> Self {
        let n = self.to_flat().len();
        HeadOutput::from_flat(self.kind(), self.horizon(), &vec![0.0; n])
            .expect("shape taken from a valid head")
    }

    fn validate_against(&self, method: &Method, gt: &GtOrientationTrack) -> Result<()> {
        let h = self.horizon();
        if h != gt.horizon() {
            return Err(Error::Shape(format!(
                "head horizon {h} does not match ground-truth horizon {}",
                gt.horizon()
            )));
        }
        if let HeadOutput::MultiBin(steps) = self {
            let MethodKind::MultiBin(n) = method.kind else {
                return Err(Error::Shape(format!("multibin head given to {method}")));
            };
            if steps.iter().any(|s| s.len() != n) {
                return Err(Error::Shape(format!("every multibin step needs {n} bins")));
            }
        } else if self.kind() != method.kind {
            return Err(Error::Shape(format!("{} head given to {method}", self.kind())));
        }
        Ok(())
    }
}

/// Ground-truth full-range yaw for every horizon step.
#[derive(Clone, Debug, PartialEq)]
pub struct GtOrientationTrack {
    pub yaws: Vec<Angle>,
}

impl GtOrientationTrack {
    pub fn new(yaws: Vec<Angle>) -> Result<Self> {
        if yaws.is_empty() {
            return Err(Error::Shape("ground-truth track needs at least one step".into()));
        }
        if yaws.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("ground-truth yaw"));
        }
        Ok(GtOrientationTrack {
            yaws: yaws.into_iter().map(Angle::full).collect(),
        })
    }

    pub fn constant(yaw: Angle, horizon: usize) -> Result<Self> {
        Self::new(vec![yaw; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.yaws.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flip_label: Option<u8>,
}

impl LossResult {
    fn single(name: &str, value: f64) -> Self {
        let mut components = BTreeMap::new();
        components.insert(name.to_string(), value);
        LossResult {
            total: value,
            components,
            flip_label: None,
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

fn check_steps(n: usize, gt: &GtOrientationTrack) -> Result<()> {
    if n != gt.horizon() {
        return Err(Error::Shape(format!(
            "prediction horizon {n} does not match ground-truth horizon {}",
            gt.horizon()
        )));
    }
    Ok(())
}

/// Σ ℓ1(pred − target) over pairs, accumulating ∂/∂pred into `grad`.
fn pair_loss(
    l1: SmoothL1,
    pred: &[SinCosPair],
    targets: impl Iterator<Item = SinCosPair>,
    mut grad: Option<&mut [SinCosPair]>,
) -> f64 {
    let mut total = 0.0;
    for (t, (p, q)) in pred.iter().zip(targets).enumerate() {
        let (ds, dc) = (p.sin - q.sin, p.cos - q.cos);
        total += l1.value(ds) + l1.value(dc);
        if let Some(g) = grad.as_deref_mut() {
            g[t].sin += l1.grad(ds);
            g[t].cos += l1.grad(dc);
        }
    }
    total
}

fn double_angle_targets(gt: &GtOrientationTrack) -> impl Iterator<Item = SinCosPair> + '_ {
    gt.yaws
        .iter()
        .map(|&a| SinCosPair::of(Angle::from_radians(2.0 * a.radians())))
}

fn full_targets(gt: &GtOrientationTrack) -> impl Iterator<Item = SinCosPair> + '_ {
    gt.yaws.iter().map(|&a| SinCosPair::of(a))
}

/// Half-range loss on `(sin 2θ, cos 2θ)` outputs.
pub fn loss_half(l1: SmoothL1, pred: &[SinCosPair], gt: &GtOrientationTrack) -> Result<LossResult> {
    check_steps(pred.len(), gt)?;
    Ok(LossResult::single(
        "half",
        pair_loss(l1, pred, double_angle_targets(gt), None),
    ))
}

/// Full-range loss on `(sin θ, cos θ)` outputs.
pub fn loss_full(l1: SmoothL1, pred: &[SinCosPair], gt: &GtOrientationTrack) -> Result<LossResult> {
    check_steps(pred.len(), gt)?;
    Ok(LossResult::single("full", pair_loss(l1, pred, full_targets(gt), None)))
}

/// Full-range loss against the half-turned prediction `(−s, −c)`.
pub fn loss_flipped(
    l1: SmoothL1,
    pred: &[SinCosPair],
    gt: &GtOrientationTrack,
) -> Result<LossResult> {
    check_steps(pred.len(), gt)?;
    let negated: Vec<_> = pred.iter().map(|p| -*p).collect();
    Ok(LossResult::single(
        "flipped",
        pair_loss(l1, &negated, full_targets(gt), None),
    ))
}

/// `(sin 2θ, cos 2θ)` from a possibly unnormalized `(sin θ, cos θ)` pair.
pub fn half_params_from_full(s: f64, c: f64) -> (f64, f64) {
    (2.0 * s * c, c * c - s * s)
}

/// 1 when the flipped loss is strictly lower, else 0.
pub fn flip_label(l_full: f64, l_flipped: f64) -> u8 {
    u8::from(l_full > l_flipped)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `label`, in logit form.
pub fn bce_with_logit(z: f64, label: u8) -> f64 {
    let y = f64::from(label);
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn half_from_full_loss(
    l1: SmoothL1,
    pairs: &[SinCosPair],
    gt: &GtOrientationTrack,
    grad: Option<&mut [SinCosPair]>,
) -> f64 {
    let doubled: Vec<SinCosPair> = pairs
        .iter()
        .map(|p| {
            let (s2, c2) = half_params_from_full(p.sin, p.cos);
            SinCosPair::new(s2, c2)
        })
        .collect();
    match grad {
        None => pair_loss(l1, &doubled, double_angle_targets(gt), None),
        Some(g) => {
            let mut g2 = vec![SinCosPair::default(); pairs.len()];
            let v = pair_loss(l1, &doubled, double_angle_targets(gt), Some(&mut g2));
            for ((out, p), d) in g.iter_mut().zip(pairs).zip(&g2) {
                // s2 = 2sc, c2 = c² − s²
                out.sin += d.sin * 2.0 * p.cos - d.cos * 2.0 * p.sin;
                out.cos += d.sin * 2.0 * p.sin + d.cos * 2.0 * p.cos;
            }
            v
        }
    }
}

fn final_loss_impl(
    l1: SmoothL1,
    method: &Method,
    pairs: &[SinCosPair],
    flip_logit: f64,
    gt: &GtOrientationTrack,
    mut grad: Option<(&mut [SinCosPair], &mut f64)>,
) -> LossResult {
    let mut components = BTreeMap::new();
    let mut total = 0.0;

    if !method.no_half {
        let g = grad.as_mut().map(|(g, _)| &mut **g);
        let half = half_from_full_loss(l1, pairs, gt, g);
        components.insert("half".to_string(), half);
        total += half;
    }

    let full = pair_loss(l1, pairs, full_targets(gt), None);
    components.insert("full".to_string(), full);

    if method.no_flip {
        if let Some((g, _)) = grad.as_mut() {
            pair_loss(l1, pairs, full_targets(gt), Some(&mut **g));
        }
        total += full;
        return LossResult {
            total,
            components,
            flip_label: None,
        };
    }

    let negated: Vec<_> = pairs.iter().map(|p| -*p).collect();
    let flipped = pair_loss(l1, &negated, full_targets(gt), None);
    components.insert("flipped".to_string(), flipped);
    let label = flip_label(full, flipped);
    let bce = bce_with_logit(flip_logit, label);
    components.insert("bce".to_string(), bce);
    total += full.min(flipped) + bce;

    if let Some((g, gz)) = grad {
        if label == 1 {
            let mut gn = vec![SinCosPair::default(); pairs.len()];
            pair_loss(l1, &negated, full_targets(gt), Some(&mut gn));
            for (o, d) in g.iter_mut().zip(&gn) {
                o.sin -= d.sin;
                o.cos -= d.cos;
            }
        } else {
            pair_loss(l1, pairs, full_targets(gt), Some(g));
        }
        *gz += sigmoid(flip_logit) - f64::from(label);
    }

    LossResult {
        total,
        components,
        flip_label: Some(label),
    }
}

/// Flip-aware loss: `half(via identities) + min(full, flipped) + BCE`.
pub fn loss_final(
    l1: SmoothL1,
    pairs: &[SinCosPair],
    flip_logit: f64,
    gt: &GtOrientationTrack,
) -> Result<LossResult> {
    check_steps(pairs.len(), gt)?;
    Ok(final_loss_impl(
        l1,
        &Method::new(MethodKind::FlipAware),
        pairs,
        flip_logit,
        gt,
        None,
    ))
}

fn l1sin_impl(
    l1: SmoothL1,
    angles: &[f64],
    gt: &GtOrientationTrack,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut total = 0.0;
    for (t, (&a, g)) in angles.iter().zip(&gt.yaws).enumerate() {
        let d = a - g.radians();
        let (s, c) = d.sin_cos();
        total += l1.value(s);
        if let Some(out) = grad.as_deref_mut() {
            out[t] += l1.grad(s) * c;
        }
    }
    total
}

/// `ℓ1(sin(θ̂ − θ))` on raw angle outputs (radians).
pub fn loss_l1sin(l1: SmoothL1, pred: &[f64], gt: &GtOrientationTrack) -> Result<LossResult> {
    check_steps(pred.len(), gt)?;
    Ok(LossResult::single("l1_sin", l1sin_impl(l1, pred, gt, None)))
}

/// Bin centers sorted ascending in (−180°, 180°]; `{0°, 180°}` for two
/// bins, `{−90°, 0°, 90°, 180°}` for four.
pub fn multibin_centers(n: usize) -> Vec<Angle> {
    let mut c: Vec<Angle> = (0..n)
        .map(|i| Angle::from_degrees(i as f64 * 360.0 / n as f64).full())
        .collect();
    c.sort_by(|a, b| a.radians().total_cmp(&b.radians()));
    c
}

/// Bins overlap by 20%: each covers `1.2 × 360°/n`.
pub fn multibin_half_width(n: usize) -> Angle {
    Angle::from_degrees(0.6 * 360.0 / n as f64)
}

pub fn multibin_covering(n: usize, gt: Angle) -> Vec<usize> {
    let hw = multibin_half_width(n).radians();
    multibin_centers(n)
        .iter()
        .enumerate()
        .filter(|(_, &c)| (gt - c).full().radians().abs() <= hw + 1e-12)
        .map(|(i, _)| i)
        .collect()
}

pub fn multibin_nearest(n: usize, gt: Angle) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in multibin_centers(n).iter().enumerate() {
        let d = (gt - c).full().radians().abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn multibin_impl(
    steps: &[Vec<BinOutput>],
    gt: &GtOrientationTrack,
    mut grad: Option<&mut [Vec<BinOutput>]>,
) -> (f64, f64) {
    let n = steps.first().map_or(0, Vec::len);
    let centers = multibin_centers(n);
    let (mut conf, mut res) = (0.0, 0.0);
    for (t, (bins, &theta)) in steps.iter().zip(&gt.yaws).enumerate() {
        let logits: Vec<f64> = bins.iter().map(|b| b.logit).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        let pos = multibin_nearest(n, theta);
        conf += lse - logits[pos];
        let probs = grad.is_some().then(|| softmax(&logits));

        for i in multibin_covering(n, theta) {
            let b = &bins[i];
            let phi = b.res_sin.atan2(b.res_cos);
            let u = theta.radians() - centers[i].radians() - phi;
            res += 1.0 - u.cos();
            if let Some(g) = grad.as_deref_mut() {
                let r2 = b.res_sin * b.res_sin + b.res_cos * b.res_cos;
                let dphi = -u.sin();
                g[t][i].res_sin += dphi * b.res_cos / r2;
                g[t][i].res_cos -= dphi * b.res_sin / r2;
            }
        }
        if let (Some(g), Some(p)) = (grad.as_deref_mut(), probs) {
            for (i, pi) in p.iter().enumerate() {
                g[t][i].logit += pi - f64::from(u8::from(i == pos));
            }
        }
    }
    (conf, res)
}

/// MultiBin: softmax cross-entropy with the nearest-center bin as the
/// positive class, plus `1 − cos` residual distance on every covering bin.
pub fn loss_multibin(steps: &[Vec<BinOutput>], gt: &GtOrientationTrack) -> Result<LossResult> {
    check_steps(steps.len(), gt)?;
    let n = steps.first().map_or(0, Vec::len);
    if n < 2 || steps.iter().any(|s| s.len() != n) {
        return Err(Error::Shape("multibin steps need a consistent bin count ≥ 2".into()));
    }
    Ok(multibin_loss_result(multibin_impl(steps, gt, None)))
}

fn multibin_loss_result((conf, res): (f64, f64)) -> LossResult {
    let mut components = BTreeMap::new();
    components.insert("multibin_conf".to_string(), conf);
    components.insert("multibin_res".to_string(), res);
    LossResult {
        total: conf + res,
        components,
        flip_label: None,
    }
}

fn loss_impl(
    l1: SmoothL1,
    method: &Method,
    head: &HeadOutput,
    gt: &GtOrientationTrack,
    grad: Option<&mut HeadOutput>,
) -> Result<LossResult> {
    method.validate()?;
    head.validate_against(method, gt)?;
    let result = match (head, grad) {
        (HeadOutput::SinCos2x(p), g) => {
            let g = g.map(|g| match g {
                HeadOutput::SinCos2x(g) => g.as_mut_slice(),
                _ => unreachable!(),
            });
            LossResult::single("half", pair_loss(l1, p, double_angle_targets(gt), g))
        }
        (HeadOutput::SinCos(p), g) => {
            let g = g.map(|g| match g {
                HeadOutput::SinCos(g) => g.as_mut_slice(),
                _ => unreachable!(),
            });
            LossResult::single("full", pair_loss(l1, p, full_targets(gt), g))
        }
        (HeadOutput::L1Sin(a), g) => {
            let g = g.map(|g| match g {
                HeadOutput::L1Sin(g) => g.as_mut_slice(),
                _ => unreachable!(),
            });
            LossResult::single("l1_sin", l1sin_impl(l1, a, gt, g))
        }
        (HeadOutput::MultiBin(steps), g) => {
            let g = g.map(|g| match g {
                HeadOutput::MultiBin(g) => g.as_mut_slice(),
                _ => unreachable!(),
            });
            multibin_loss_result(multibin_impl(steps, gt, g))
        }
        (HeadOutput::FlipAware { pairs, flip_logit }, g) => {
            let g = g.map(|g| match g {
                HeadOutput::FlipAware { pairs, flip_logit } => (pairs.as_mut_slice(), flip_logit),
                _ => unreachable!(),
            });
            final_loss_impl(l1, method, pairs, *flip_logit, gt, g)
        }
    };
    Ok(result)
}

/// Total loss of `method` on one actor.
pub fn method_loss(
    l1: SmoothL1,
    method: &Method,
    head: &HeadOutput,
    gt: &GtOrientationTrack,
) -> Result<LossResult> {
    loss_impl(l1, method, head, gt, None)
}

/// Loss and its exact gradient with respect to every raw head output.
pub fn loss_and_grad(
    l1: SmoothL1,
    method: &Method,
    head: &HeadOutput,
    gt: &GtOrientationTrack,
) -> Result<(LossResult, HeadGradient)> {
    let mut g = head.zeros_like();
    let r = loss_impl(l1, method, head, gt, Some(&mut g))?;
    Ok((r, HeadGradient(g)))
}

pub fn grad(
    l1: SmoothL1,
    method: &Method,
    head: &HeadOutput,
    gt: &GtOrientationTrack,
) -> Result<HeadGradient> {
    loss_and_grad(l1, method, head, gt).map(|(_, g)| g)
}

/// Decoded per-step headings plus the probability that they are flipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub yaws: Vec<Angle>,
    pub flip_prob: Option<f64>,
}

fn pair_angle(p: SinCosPair, what: &'static str) -> Result<Angle> {
    if !(p.sin.is_finite() && p.cos.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Angle::from_sin_cos(p.sin, p.cos).ok_or(Error::ZeroDirection { what })
}

pub fn decode(method: &Method, head: &HeadOutput) -> Result<Decoded> {
    method.validate()?;
    let decoded = match head {
        HeadOutput::SinCos2x(p) => Decoded {
            yaws: p
                .iter()
                .map(|&q| {
                    pair_angle(q, "sin2/cos2")
                        .map(|a| Angle::from_radians(0.5 * a.radians()).half())
                })
                .collect::<Result<_>>()?,
            flip_prob: None,
        },
        HeadOutput::L1Sin(a) => Decoded {
            yaws: a
                .iter()
                .map(|&x| crate::geom::wrap_half(Angle::from_radians(x)))
                .collect::<Result<_>>()?,
            flip_prob: None,
        },
        HeadOutput::SinCos(p) => Decoded {
            yaws: p
                .iter()
                .map(|&q| pair_angle(q, "sin/cos").map(Angle::full))
                .collect::<Result<_>>()?,
            flip_prob: None,
        },
        HeadOutput::MultiBin(steps) => decode_multibin(steps)?,
        HeadOutput::FlipAware { pairs, flip_logit } => Decoded {
            yaws: pairs
                .iter()
                .map(|&q| pair_angle(q, "sin/cos").map(Angle::full))
                .collect::<Result<_>>()?,
            flip_prob: (!method.no_flip).then(|| sigmoid(*flip_logit)),
        },
    };
    Ok(decoded)
}

/// Index of the bin whose center is closest to `center_i + 180°`.
pub fn multibin_antipode(n: usize, i: usize) -> usize {
    let centers = multibin_centers(n);
    multibin_nearest(n, centers[i].flipped())
}

fn decode_multibin(steps: &[Vec<BinOutput>]) -> Result<Decoded> {
    let n = steps.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(Error::Shape("multibin head needs at least 2 bins".into()));
    }
    let centers = multibin_centers(n);
    let mut yaws = Vec::with_capacity(steps.len());
    let mut flip_prob = None;
    for bins in steps {
        let logits: Vec<f64> = bins.iter().map(|b| b.logit).collect();
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("multibin logit"));
        }
        let p = softmax(&logits);
        let best = (0..n).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        let r = pair_angle(
            SinCosPair::new(bins[best].res_sin, bins[best].res_cos),
            "multibin residual",
        )?;
        yaws.push((centers[best] + r).full());
        if flip_prob.is_none() {
            let anti = p[multibin_antipode(n, best)];
            flip_prob = Some(anti / (p[best] + anti));
        }
    }
    Ok(Decoded { yaws, flip_prob })
}

/// Turns every heading by 180° when the flip probability exceeds 0.5 and
/// reports `1 − p` afterwards, so the result never exceeds 0.5.
pub fn postprocess_flip(d: Decoded) -> Decoded {
    match d.flip_prob {
        Some(p) if p > 0.5 => Decoded {
            yaws: d.yaws.into_iter().map(Angle::flipped).collect(),
            flip_prob: Some(1.0 - p),
        },
        _ => d,
    }
}
