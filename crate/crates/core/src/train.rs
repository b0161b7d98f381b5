//! Desk-scale training harness: a one-hidden-layer perceptron with an
//! orientation head (shaped by the method) and a waypoint head, trained by
//! minibatch SGD with momentum; a central-difference gradient checker; and
//! the toy evaluation that feeds decoded headings into the metrics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Angle, Point2};
use crate::losses::{
    self, decode, loss_and_grad, method_loss, postprocess_flip, GtOrientationTrack, HeadGradient,
    HeadOutput, Method, MethodKind, SmoothL1,
};
use crate::metrics::{self, DetectionRecord, EvalConfig, Evaluation, GtActor, STEP_SECONDS};
use crate::synth::SynthActor;

/// Waypoint outputs are average velocities over `[0, t]`, in units of 10 m/s.
pub const WAYPOINT_SCALE_MPS: f64 = 10.0;

pub const CHECKPOINT_FORMAT: &str = "orient-bench-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut d = Dense::zeros(rows, cols);
        for w in d.weights.iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
        d
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o = self.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `g ⊗ x` into the weight gradient and `g` into the bias.
    fn accumulate(&mut self, g: &[f64], x: &[f64]) {
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            self.bias[r] += gr;
            let row = &mut self.weights[r * self.cols..(r + 1) * self.cols];
            for (w, v) in row.iter_mut().zip(x) {
                *w += gr * v;
            }
        }
    }

    /// `out += Wᵀ g`.
    fn backward_input(&self, g: &[f64], out: &mut [f64]) {
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += gr * w;
            }
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn check(&self, name: &str, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows
            || self.cols != cols
            || self.weights.len() != rows * cols
            || self.bias.len() != rows
        {
            return Err(Error::Shape(format!(
                "layer `{name}` must be {rows}×{cols}, found {}×{} with {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub method: Method,
    pub horizon: usize,
    pub input_dim: usize,
    pub hidden_width: usize,
    /// Fixed standardization applied to the features: `(x − shift) × scale`.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub hidden: Dense,
    pub orientation: Dense,
    pub waypoints: Dense,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.input_shift.len() != self.input_dim || self.input_scale.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input standardization must have {} entries",
                self.input_dim
            )));
        }
        if self.input_shift.iter().chain(&self.input_scale).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input standardization"));
        }
        self.hidden.check("hidden", self.hidden_width, self.input_dim)?;
        self.orientation.check(
            "orientation",
            self.method.kind.head_arity(self.horizon),
            self.hidden_width,
        )?;
        self.waypoints
            .check("waypoints", 2 * self.horizon, self.hidden_width)?;
        if self.values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameter"));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        ModelParams {
            hidden: Dense::zeros(self.hidden.rows, self.hidden.cols),
            orientation: Dense::zeros(self.orientation.rows, self.orientation.cols),
            waypoints: Dense::zeros(self.waypoints.rows, self.waypoints.cols),
            ..self.clone()
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.hidden
            .values()
            .chain(self.orientation.values())
            .chain(self.waypoints.values())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.hidden
            .values_mut()
            .chain(self.orientation.values_mut())
            .chain(self.waypoints.values_mut())
    }

    pub fn num_params(&self) -> usize {
        self.values().count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::to_string_pretty_rounded(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        c.params.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: MethodKind,
    pub no_half: bool,
    pub no_flip: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub horizon: usize,
    pub hidden_width: usize,
    pub smooth_l1_beta: f64,
    pub lr_schedule: LrSchedule,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over all updates.
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Rate for update `step` of `total`.
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let x = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: MethodKind::FlipAware,
            no_half: false,
            no_flip: false,
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 1,
            horizon: 30,
            hidden_width: 64,
            smooth_l1_beta: SmoothL1::DEFAULT_BETA,
            lr_schedule: LrSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn method(&self) -> Result<Method> {
        Method::with_ablation(self.method, self.no_half, self.no_flip)
    }

    pub fn smooth_l1(&self) -> Result<SmoothL1> {
        SmoothL1::new(self.smooth_l1_beta)
    }

    pub fn validate(&self) -> Result<()> {
        self.method()?;
        self.smooth_l1()?;
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Rectifier hidden layer with He-uniform weights, LeCun-uniform heads,
/// zero biases.
pub fn init_model(cfg: &TrainConfig, input_dim: usize) -> Result<ModelParams> {
    cfg.validate()?;
    if input_dim == 0 {
        return Err(Error::Config("input_dim must be at least 1".into()));
    }
    let method = cfg.method()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.hidden_width;
    let hidden = Dense::uniform(h, input_dim, (6.0 / input_dim as f64).sqrt(), &mut rng);
    let head_limit = (3.0 / h as f64).sqrt();
    let orientation = Dense::uniform(method.kind.head_arity(cfg.horizon), h, head_limit, &mut rng);
    let waypoints = Dense::uniform(2 * cfg.horizon, h, head_limit, &mut rng);
    Ok(ModelParams {
        method,
        horizon: cfg.horizon,
        input_dim,
        hidden_width: h,
        input_shift: vec![0.0; input_dim],
        input_scale: vec![1.0; input_dim],
        hidden,
        orientation,
        waypoints,
    })
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Activations {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub orientation: Vec<f64>,
    pub waypoints: Vec<f64>,
}

pub fn forward_activations(params: &ModelParams, features: &[f64]) -> Result<Activations> {
    if features.len() != params.input_dim {
        return Err(Error::Shape(format!(
            "model expects {} features, got {}",
            params.input_dim,
            features.len()
        )));
    }
    let input: Vec<f64> = features
        .iter()
        .zip(params.input_shift.iter().zip(&params.input_scale))
        .map(|(x, (m, k))| (x - m) * k)
        .collect();
    let mut pre = vec![0.0; params.hidden_width];
    params.hidden.forward(&input, &mut pre);
    let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let mut orientation = vec![0.0; params.orientation.rows];
    params.orientation.forward(&hidden, &mut orientation);
    let mut waypoints = vec![0.0; params.waypoints.rows];
    params.waypoints.forward(&hidden, &mut waypoints);
    Ok(Activations {
        input,
        pre,
        hidden,
        orientation,
        waypoints,
    })
}

/// Raw orientation-head output for one feature vector.
pub fn forward(params: &ModelParams, features: &[f64]) -> Result<HeadOutput> {
    let a = forward_activations(params, features)?;
    HeadOutput::from_flat(params.method.kind, params.horizon, &a.orientation)
}

/// Predicted future positions from the waypoint head.
pub fn predicted_waypoints(params: &ModelParams, act: &Activations, center: Point2) -> Vec<Point2> {
    act.waypoints
        .chunks_exact(2)
        .enumerate()
        .map(|(i, v)| {
            let t = (i + 1) as f64 * STEP_SECONDS * WAYPOINT_SCALE_MPS;
            Point2::new(center.x + v[0] * t, center.y + v[1] * t)
        })
        .take(params.horizon)
        .collect()
}

fn waypoint_targets(actor: &GtActor, horizon: usize) -> Result<Vec<f64>> {
    if actor.waypoints.len() != horizon {
        return Err(Error::Shape(format!(
            "actor {} has {} waypoints, model horizon is {horizon}",
            actor.id,
            actor.waypoints.len()
        )));
    }
    let c = actor.bbox.center();
    Ok(actor
        .waypoints
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            let t = (i + 1) as f64 * STEP_SECONDS * WAYPOINT_SCALE_MPS;
            [(p.x - c.x) / t, (p.y - c.y) / t]
        })
        .collect())
}

fn gt_track(actor: &GtActor, horizon: usize) -> Result<GtOrientationTrack> {
    if actor.yaws.len() != horizon {
        return Err(Error::Shape(format!(
            "actor {} has {} yaw steps, model horizon is {horizon}",
            actor.id,
            actor.yaws.len()
        )));
    }
    GtOrientationTrack::new(actor.yaws.clone())
}

/// A training example with targets precomputed.
#[derive(Clone, Debug)]
pub struct Example {
    pub features: Vec<f64>,
    pub track: GtOrientationTrack,
    pub waypoint_targets: Vec<f64>,
}

impl Example {
    pub fn from_actor(a: &SynthActor, horizon: usize) -> Result<Self> {
        Ok(Example {
            features: a.features.clone(),
            track: gt_track(&a.gt, horizon)?,
            waypoint_targets: waypoint_targets(&a.gt, horizon)?,
        })
    }
}

/// Loss of one example and, when `grads` is given, its gradient added in.
fn example_loss(
    params: &ModelParams,
    l1: SmoothL1,
    ex: &Example,
    grads: Option<&mut ModelParams>,
) -> Result<f64> {
    let act = forward_activations(params, &ex.features)?;
    let head = HeadOutput::from_flat(params.method.kind, params.horizon, &act.orientation)?;

    let mut wp_loss = 0.0;
    let mut g_wp = vec![0.0; act.waypoints.len()];
    for ((o, t), g) in act.waypoints.iter().zip(&ex.waypoint_targets).zip(g_wp.iter_mut()) {
        wp_loss += l1.value(o - t);
        *g = l1.grad(o - t);
    }

    let Some(grads) = grads else {
        return Ok(method_loss(l1, &params.method, &head, &ex.track)?.total + wp_loss);
    };
    let (res, HeadGradient(g_head)) = loss_and_grad(l1, &params.method, &head, &ex.track)?;
    let g_or = g_head.to_flat();

    grads.orientation.accumulate(&g_or, &act.hidden);
    grads.waypoints.accumulate(&g_wp, &act.hidden);
    let mut g_hidden = vec![0.0; params.hidden_width];
    params.orientation.backward_input(&g_or, &mut g_hidden);
    params.waypoints.backward_input(&g_wp, &mut g_hidden);
    for (g, &p) in g_hidden.iter_mut().zip(&act.pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    grads.hidden.accumulate(&g_hidden, &act.input);
    Ok(res.total + wp_loss)
}

/// Mean loss over `batch` and the gradient of that mean.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    l1: SmoothL1,
    batch: &[&Example],
) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        total += example_loss(params, l1, ex, Some(&mut grads))?;
    }
    let n = batch.len().max(1) as f64;
    grads.values_mut().for_each(|g| *g /= n);
    Ok((total / n, grads))
}

pub fn mean_loss(params: &ModelParams, l1: SmoothL1, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        total += example_loss(params, l1, ex, None)?;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss for each epoch.
    pub history: Vec<f64>,
}

/// Sets the input standardization to zero mean, unit variance over
/// `examples`; near-constant features are only centred.
pub fn fit_standardization(params: &mut ModelParams, examples: &[Example]) {
    let n = examples.len().max(1) as f64;
    for j in 0..params.input_dim {
        let mean = examples.iter().map(|e| e.features[j]).sum::<f64>() / n;
        let var = examples.iter().map(|e| (e.features[j] - mean).powi(2)).sum::<f64>() / n;
        params.input_shift[j] = mean;
        params.input_scale[j] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    }
}

/// Minibatch SGD with heavy-ball momentum (`v ← μv + g; θ ← θ − ηv`).
/// Batches are reshuffled every epoch from a seeded stream.
pub fn train(cfg: &TrainConfig, actors: &[&SynthActor]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if actors.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let input_dim = actors[0].features.len();
    if actors.iter().any(|a| a.features.len() != input_dim) {
        return Err(Error::Shape("actors have differing feature dimensions".into()));
    }
    let examples: Vec<Example> = actors
        .iter()
        .map(|a| Example::from_actor(a, cfg.horizon))
        .collect::<Result<_>>()?;
    let l1 = cfg.smooth_l1()?;
    let mut params = init_model(cfg, input_dim)?;
    fit_standardization(&mut params, &examples);
    let initial_loss = mean_loss(&params, l1, &examples)?;
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = per_epoch * cfg.epochs;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = batch_loss_and_grad(&params, l1, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            epoch_total += loss * batch.len() as f64;
            let lr = cfg
                .lr_schedule
                .rate(cfg.learning_rate, epoch * per_epoch + b, total_steps);
            for ((p, v), g) in params
                .values_mut()
                .zip(velocity.values_mut())
                .zip(grads.values())
            {
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        let mean = epoch_total / examples.len() as f64;
        if !mean.is_finite() || params.values().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                batch: per_epoch,
                loss: mean,
            });
        }
        history.push(mean);
    }
    Ok(TrainOutcome {
        params,
        initial_loss,
        history,
    })
}

/// Decoded heading sequence and flip probability for one actor, after the
/// method's post-processing (flip for flip-aware heads, trajectory-direction
/// disambiguation for half-range heads).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub yaws: Vec<Angle>,
    pub flip_prob: Option<f64>,
    pub waypoints: Vec<Point2>,
}

pub fn predict(params: &ModelParams, actor: &GtActor, features: &[f64]) -> Result<Prediction> {
    let act = forward_activations(params, features)?;
    let head = HeadOutput::from_flat(params.method.kind, params.horizon, &act.orientation)?;
    let waypoints = predicted_waypoints(params, &act, actor.bbox.center());
    let mut decoded = decode(&params.method, &head)?;
    if params.method.kind == MethodKind::FlipAware {
        decoded = postprocess_flip(decoded);
    }
    if params.method.kind.is_half_range() {
        decoded.yaws = decoded
            .yaws
            .iter()
            .map(|&y| metrics::traj_direction_convert(y, &waypoints))
            .collect();
    }
    Ok(Prediction {
        yaws: decoded.yaws,
        flip_prob: decoded.flip_prob,
        waypoints,
    })
}

/// Detections for `actors`: ground-truth boxes carrying the predicted
/// heading, score 1.
pub fn predict_detections(params: &ModelParams, actors: &[&SynthActor]) -> Result<Vec<DetectionRecord>> {
    actors
        .iter()
        .map(|a| {
            let p = predict(params, &a.gt, &a.features)?;
            let yaw = *p
                .yaws
                .first()
                .ok_or_else(|| Error::Shape("empty heading sequence".into()))?;
            Ok(DetectionRecord {
                frame: a.gt.frame,
                id: a.gt.id,
                bbox: a.gt.bbox.with_yaw(yaw),
                score: 1.0,
                yaws: p.yaws,
                flip_prob: p.flip_prob,
                waypoints: p.waypoints,
            })
        })
        .collect()
}

pub fn evaluate(params: &ModelParams, actors: &[&SynthActor], cfg: &EvalConfig) -> Result<Evaluation> {
    params.validate()?;
    let dets = predict_detections(params, actors)?;
    let gts: Vec<GtActor> = actors.iter().map(|a| a.gt.clone()).collect();
    let mut ev = metrics::evaluate(&dets, &gts, cfg)?;
    ev.report.label = params.method.to_string();
    Ok(ev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub method: Method,
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub tolerance: f64,
    pub epsilon: f64,
    /// Trials whose smooth-L1 arguments or min-branch gap fall this close
    /// to a switch point are skipped.
    pub kink_margin: f64,
    pub horizon: usize,
    pub seed: u64,
    pub smooth_l1_beta: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            trials: 100,
            tolerance: 1e-4,
            epsilon: 1e-5,
            kink_margin: 1e-3,
            horizon: 3,
            seed: 5,
            smooth_l1_beta: SmoothL1::DEFAULT_BETA,
        }
    }
}

/// Relative error with the denominator floored at 1e-3, so gradients that
/// vanish analytically are compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random_head(kind: MethodKind, horizon: usize, rng: &mut ChaCha8Rng) -> HeadOutput {
    let n = kind.head_arity(horizon);
    let v: Vec<f64> = match kind {
        MethodKind::L1Sin => (0..n)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect(),
        MethodKind::MultiBin(_) => (0..n)
            .map(|i| {
                if i % 3 == 0 {
                    rng.random_range(-3.0..3.0)
                } else {
                    let m = rng.random_range(0.2..1.5);
                    if rng.random::<bool>() {
                        m
                    } else {
                        -m
                    }
                }
            })
            .collect(),
        MethodKind::FlipAware => (0..n)
            .map(|i| {
                if i == n - 1 {
                    rng.random_range(-4.0..4.0)
                } else {
                    rng.random_range(-1.5..1.5)
                }
            })
            .collect(),
        _ => (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
    };
    HeadOutput::from_flat(kind, horizon, &v).expect("arity matches")
}

/// Distance from the nearest non-smooth point of the loss: smooth-L1
/// branch switches at `±β` and, for the flip-aware head, `full = flipped`.
pub fn kink_distance(l1: SmoothL1, method: &Method, head: &HeadOutput, gt: &GtOrientationTrack) -> f64 {
    let near = |x: f64| (x.abs() - l1.beta).abs();
    let mut d = f64::INFINITY;
    let pairs_to = |pairs: &[losses::SinCosPair], targets: &mut dyn Iterator<Item = (f64, f64)>| {
        pairs
            .iter()
            .zip(targets)
            .map(|(p, (ts, tc))| near(p.sin - ts).min(near(p.cos - tc)))
            .fold(f64::INFINITY, f64::min)
    };
    let full_t = || gt.yaws.iter().map(|a| a.radians().sin_cos());
    let half_t = || gt.yaws.iter().map(|a| (2.0 * a.radians()).sin_cos());
    match head {
        HeadOutput::SinCos2x(p) => d = d.min(pairs_to(p, &mut half_t())),
        HeadOutput::SinCos(p) => d = d.min(pairs_to(p, &mut full_t())),
        HeadOutput::L1Sin(a) => {
            for (x, g) in a.iter().zip(&gt.yaws) {
                d = d.min(near((x - g.radians()).sin()));
            }
        }
        HeadOutput::MultiBin(_) => {}
        HeadOutput::FlipAware { pairs, .. } => {
            let negated: Vec<_> = pairs.iter().map(|p| -*p).collect();
            let doubled: Vec<_> = pairs
                .iter()
                .map(|p| {
                    let (s2, c2) = losses::half_params_from_full(p.sin, p.cos);
                    losses::SinCosPair::new(s2, c2)
                })
                .collect();
            d = d
                .min(pairs_to(pairs, &mut full_t()))
                .min(pairs_to(&negated, &mut full_t()));
            if !method.no_half {
                d = d.min(pairs_to(&doubled, &mut half_t()));
            }
            if !method.no_flip {
                let full = losses::loss_full(l1, pairs, gt).map_or(0.0, |r| r.total);
                let flipped = losses::loss_flipped(l1, pairs, gt).map_or(0.0, |r| r.total);
                d = d.min((full - flipped).abs());
            }
        }
    }
    d
}

/// Compares `grad_fn` against central finite differences of the method
/// loss on random heads and ground truths.
pub fn gradcheck_with<F>(method: &Method, cfg: &GradcheckConfig, mut grad_fn: F) -> Result<GradcheckReport>
where
    F: FnMut(&HeadOutput, &GtOrientationTrack) -> Result<HeadGradient>,
{
    method.validate()?;
    let l1 = SmoothL1::new(cfg.smooth_l1_beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut checked, mut skipped) = (0, 0);
    let mut max_rel: f64 = 0.0;
    for _ in 0..cfg.trials {
        let gt = GtOrientationTrack::new(
            (0..cfg.horizon)
                .map(|_| Angle::from_radians(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)))
                .collect(),
        )?;
        let head = random_head(method.kind, cfg.horizon, &mut rng);
        if kink_distance(l1, method, &head, &gt) < cfg.kink_margin {
            skipped += 1;
            continue;
        }
        let analytic = grad_fn(&head, &gt)?.0.to_flat();
        let base = head.to_flat();
        let eval = |v: &[f64]| -> Result<f64> {
            let h = HeadOutput::from_flat(method.kind, cfg.horizon, v)?;
            Ok(method_loss(l1, method, &h, &gt)?.total)
        };
        let mut probe = base.clone();
        for (i, &a) in analytic.iter().enumerate() {
            probe[i] = base[i] + cfg.epsilon;
            let up = eval(&probe)?;
            probe[i] = base[i] - cfg.epsilon;
            let down = eval(&probe)?;
            probe[i] = base[i];
            let numeric = (up - down) / (2.0 * cfg.epsilon);
            max_rel = max_rel.max(relative_error(a, numeric));
        }
        checked += 1;
    }
    Ok(GradcheckReport {
        method: *method,
        trials: cfg.trials,
        checked,
        skipped,
        max_rel_error: max_rel,
        tolerance: cfg.tolerance,
        passed: checked > 0 && max_rel < cfg.tolerance,
    })
}

pub fn gradcheck(method: &Method, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let l1 = SmoothL1::new(cfg.smooth_l1_beta)?;
    gradcheck_with(method, cfg, |h, gt| losses::grad(l1, method, h, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SceneConfig};

    fn tiny_scene() -> SceneConfig {
        SceneConfig {
            frames: 10,
            actors_per_frame: 8,
            horizon: 5,
            ..SceneConfig::default()
        }
    }

    fn tiny_train(kind: MethodKind) -> TrainConfig {
        TrainConfig {
            method: kind,
            horizon: 5,
            hidden_width: 16,
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = TrainConfig::default();
        let a = init_model(&cfg, 64).unwrap();
        assert_eq!(a, init_model(&cfg, 64).unwrap());
        assert_eq!(a.orientation.rows, 61);
        assert!(a.hidden.bias.iter().all(|&b| b == 0.0));
        assert!(init_model(&TrainConfig { hidden_width: 0, ..cfg.clone() }, 64).is_err());
        assert!(init_model(
            &TrainConfig {
                method: MethodKind::SinCos,
                no_half: true,
                ..cfg
            },
            64
        )
        .is_err());
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut p = init_model(&tiny_train(MethodKind::SinCos), 64).unwrap();
        p.orientation.weights.iter_mut().for_each(|w| *w = 0.0);
        let head = forward(&p, &vec![1.0; 64]).unwrap();
        assert!(head.to_flat().iter().all(|&v| v == 0.0));
        assert!(decode(&p.method, &head).is_err());
    }

    #[test]
    fn head_is_linear_in_its_weights() {
        let p = init_model(&tiny_train(MethodKind::FlipAware), 64).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = forward(&p, &x).unwrap().to_flat();
        let mut q = p.clone();
        q.orientation.weights.iter_mut().for_each(|w| *w *= 2.0);
        let b = forward(&q, &x).unwrap().to_flat();
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_item_gradients() {
        let d = generate_dataset(&tiny_scene()).unwrap();
        let p = init_model(&tiny_train(MethodKind::FlipAware), 64).unwrap();
        let l1 = SmoothL1::default();
        let ex: Vec<Example> = d.actors[..4].iter().map(|a| Example::from_actor(a, 5).unwrap()).collect();
        let refs: Vec<&Example> = ex.iter().collect();
        let (_, batch) = batch_loss_and_grad(&p, l1, &refs).unwrap();
        let mut sum = p.zeros_like();
        for e in &ex {
            let (_, g) = batch_loss_and_grad(&p, l1, &[e]).unwrap();
            for (s, v) in sum.values_mut().zip(g.values()) {
                *s += v / 4.0;
            }
        }
        for (a, b) in batch.values().zip(sum.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let d = generate_dataset(&tiny_scene()).unwrap();
        let cfg = tiny_train(MethodKind::SinCos);
        let p = init_model(&cfg, 64).unwrap();
        let l1 = SmoothL1::new(1.0).unwrap();
        let ex = [Example::from_actor(&d.actors[3], 5).unwrap()];
        let (_, g) = batch_loss_and_grad(&p, l1, &[&ex[0]]).unwrap();
        let grads: Vec<f64> = g.values().copied().collect();
        let n = p.num_params();
        for i in (0..n).step_by(97) {
            let mut q = p.clone();
            *q.values_mut().nth(i).unwrap() += 1e-6;
            let up = mean_loss(&q, l1, &ex).unwrap();
            *q.values_mut().nth(i).unwrap() -= 2e-6;
            let down = mean_loss(&q, l1, &ex).unwrap();
            let num = (up - down) / 2e-6;
            assert!(relative_error(grads[i], num) < 1e-4, "param {i}: {} vs {num}", grads[i]);
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let d = generate_dataset(&tiny_scene()).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_train(MethodKind::SinCos2x)
        };
        let out = train(&cfg, &d.train()).unwrap();
        let mut init = init_model(&cfg, 64).unwrap();
        let ex: Vec<Example> = d.train().iter().map(|a| Example::from_actor(a, 5).unwrap()).collect();
        fit_standardization(&mut init, &ex);
        assert_eq!(out.params, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let d = generate_dataset(&tiny_scene()).unwrap();
        let cfg = tiny_train(MethodKind::FlipAware);
        let a = train(&cfg, &d.train()).unwrap();
        let b = train(&cfg, &d.train()).unwrap();
        assert_eq!(a, b);
        assert!(a.history.last().unwrap() < &a.initial_loss);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(train(&TrainConfig::default(), &[]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let d = generate_dataset(&tiny_scene()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            ..tiny_train(MethodKind::SinCos)
        };
        assert!(matches!(train(&cfg, &d.train()), Err(Error::Diverged { .. })));
    }

    #[test]
    fn flip_aware_predictions_never_exceed_half() {
        let d = generate_dataset(&tiny_scene()).unwrap();
        let out = train(&tiny_train(MethodKind::FlipAware), &d.train()).unwrap();
        let dets = predict_detections(&out.params, &d.val()).unwrap();
        assert!(dets.iter().all(|x| x.flip_prob.unwrap() <= 0.5));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_model(&tiny_train(MethodKind::MultiBin(4)), 64).unwrap();
        let c = Checkpoint::new(p.clone());
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back.params.method, p.method);
        for (a, b) in back.params.values().zip(p.values()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300));
        }
        let mut bad = c.clone();
        bad.params.hidden.bias.pop();
        assert!(Checkpoint::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }

    #[test]
    fn gradcheck_passes_for_every_method() {
        for m in [
            "sin_cos_2x",
            "l1_sin",
            "sin_cos",
            "multibin_2",
            "multibin_4",
            "flip_aware",
            "flip_aware-no-half",
            "flip_aware-no-flip",
        ] {
            let method: Method = m.parse().unwrap();
            let r = gradcheck(&method, &GradcheckConfig::default()).unwrap();
            assert!(r.passed, "{m}: {r:?}");
            assert!(r.checked >= 50, "{m}: {r:?}");
        }
    }

    #[test]
    fn gradcheck_catches_corrupted_gradients() {
        let method = Method::new(MethodKind::SinCos);
        let l1 = SmoothL1::default();
        let r = gradcheck_with(&method, &GradcheckConfig::default(), |h, gt| {
            let mut g = losses::grad(l1, &method, h, gt)?.0.to_flat();
            g[0] += 0.1;
            Ok(HeadGradient(HeadOutput::from_flat(h.kind(), h.horizon(), &g)?))
        })
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn gradcheck_with_zero_tolerance_fails() {
        let cfg = GradcheckConfig {
            tolerance: 0.0,
            ..GradcheckConfig::default()
        };
        let r = gradcheck(&Method::new(MethodKind::FlipAware), &cfg).unwrap();
        assert!(!r.passed);
    }
}
