//! Deterministic synthetic scenes.
//!
//! Every actor carries a BEV occupancy histogram standing in for lidar
//! features: points on the box outline (plus two earlier sweeps displaced
//! against the velocity for moving actors) are soft-binned into
//! `rings × 8` polar cells around the actor center, in the world frame, so
//! the histogram encodes the heading up to a half turn. The rear half of
//! the outline is weighted by `1 + a` and the front by `1 − a`, where
//! `a = front_signal × visibility` and visibility is drawn per actor from
//! [`MIN_VISIBILITY`, 1]. The rear-heavy imbalance agrees with the sweep
//! trail of a forward-moving actor and contradicts it when reversing.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Angle, OrientedBox, Point2};
use crate::io::sig9;
use crate::metrics::{DetectionRecord, GtActor, STEP_SECONDS};

pub const ANGULAR_SECTORS: usize = 8;
pub const RING_WIDTH_M: f64 = 0.75;
pub const MIN_VISIBILITY: f64 = 0.2;
/// Points sampled along each box outline.
const OUTLINE_POINTS: usize = 32;
/// Angular concentration of the sector soft-assignment.
const SECTOR_KAPPA: f64 = 4.0;
/// Earlier sweeps (seconds before t = 0) and their weight.
const HISTORY_SWEEPS: [f64; 2] = [0.25, 0.5];
const HISTORY_WEIGHT: f64 = 0.5;
const MIN_CENTER_GAP_M: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub actors_per_frame: usize,
    pub frames: usize,
    pub static_fraction: f64,
    /// Share of all actors that drive backwards; drawn from the moving ones.
    pub reversing_fraction: f64,
    pub speed_range: [f64; 2],
    pub length_range: [f64; 2],
    pub width_range: [f64; 2],
    pub feature_dim: usize,
    pub front_signal: f64,
    pub feature_noise: f64,
    pub horizon: usize,
    /// Half-extent of the square region actors are placed in.
    pub extent_m: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            actors_per_frame: 20,
            frames: 100,
            static_fraction: 0.4,
            reversing_fraction: 0.1,
            speed_range: [1.0, 10.0],
            length_range: [3.8, 5.2],
            width_range: [1.6, 2.1],
            feature_dim: 64,
            front_signal: 0.6,
            feature_noise: 0.3,
            horizon: 30,
            extent_m: 60.0,
            val_fraction: 0.2,
            seed: 7,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} must be an ordered range ≥ {min}, got {r:?}")));
    }
    Ok(())
}

fn check_fraction(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")));
    }
    Ok(())
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.actors_per_frame == 0 || self.frames == 0 {
            return Err(Error::Config("scene needs at least one frame and one actor".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        check_fraction("static_fraction", self.static_fraction)?;
        check_fraction("reversing_fraction", self.reversing_fraction)?;
        check_fraction("front_signal", self.front_signal)?;
        check_fraction("val_fraction", self.val_fraction)?;
        if self.static_fraction + self.reversing_fraction > 1.0 + 1e-12 {
            return Err(Error::Config(
                "static_fraction + reversing_fraction cannot exceed 1".into(),
            ));
        }
        check_range("speed_range", self.speed_range, 0.0)?;
        check_range("length_range", self.length_range, f64::MIN_POSITIVE)?;
        check_range("width_range", self.width_range, f64::MIN_POSITIVE)?;
        if self.feature_dim == 0 || !self.feature_dim.is_multiple_of(ANGULAR_SECTORS) {
            return Err(Error::Config(format!(
                "feature_dim must be a positive multiple of {ANGULAR_SECTORS}, got {}",
                self.feature_dim
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("feature_noise must be finite and ≥ 0".into()));
        }
        if !(self.extent_m > 0.0 && self.extent_m.is_finite()) {
            return Err(Error::Config("extent_m must be positive".into()));
        }
        Ok(())
    }

    pub fn rings(&self) -> usize {
        self.feature_dim / ANGULAR_SECTORS
    }

    pub fn train_frames(&self) -> usize {
        self.frames - (self.frames as f64 * self.val_fraction).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Static,
    Forward,
    Reversing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthActor {
    pub gt: GtActor,
    pub features: Vec<f64>,
    pub split: Split,
}

impl SynthActor {
    /// Velocity recovered from the first waypoint.
    pub fn velocity(&self) -> Point2 {
        match self.gt.waypoints.first() {
            Some(w) => {
                let d = *w - self.gt.bbox.center();
                Point2::new(d.x / STEP_SECONDS, d.y / STEP_SECONDS)
            }
            None => Point2::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub actors: Vec<SynthActor>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SynthActor> {
        self.actors.iter().filter(move |a| a.split == split)
    }

    pub fn train(&self) -> Vec<&SynthActor> {
        self.split(Split::Train).collect()
    }

    pub fn val(&self) -> Vec<&SynthActor> {
        self.split(Split::Val).collect()
    }
}

/// Polar occupancy histogram of weighted points (relative to the actor
/// center, world frame), `rings × 8`, ring-major.
pub fn polar_histogram(points: &[(Point2, f64)], rings: usize) -> Vec<f64> {
    let mut h = vec![0.0; rings * ANGULAR_SECTORS];
    let sector_width = TAU / ANGULAR_SECTORS as f64;
    for &(p, w) in points {
        let r = p.norm();
        let alpha = p.y.atan2(p.x);
        // Linear interpolation between ring centers.
        let pos = (r / RING_WIDTH_M - 0.5).clamp(0.0, (rings - 1) as f64);
        let r0 = pos.floor() as usize;
        let fr = pos - r0 as f64;
        let kernel: Vec<f64> = (0..ANGULAR_SECTORS)
            .map(|k| (SECTOR_KAPPA * ((alpha - k as f64 * sector_width).cos() - 1.0)).exp())
            .collect();
        let ksum: f64 = kernel.iter().sum();
        for (k, kv) in kernel.iter().enumerate() {
            let a = w * kv / ksum;
            h[r0 * ANGULAR_SECTORS + k] += a * (1.0 - fr);
            if r0 + 1 < rings {
                h[(r0 + 1) * ANGULAR_SECTORS + k] += a * fr;
            }
        }
    }
    h
}

/// Outline points of a centered box in its own frame.
fn outline(length: f64, width: f64) -> Vec<Point2> {
    let perimeter = 2.0 * (length + width);
    (0..OUTLINE_POINTS)
        .map(|i| {
            let mut s = (i as f64 + 0.5) / OUTLINE_POINTS as f64 * perimeter;
            let (hl, hw) = (0.5 * length, 0.5 * width);
            if s < length {
                return Point2::new(-hl + s, -hw);
            }
            s -= length;
            if s < width {
                return Point2::new(hl, -hw + s);
            }
            s -= width;
            if s < length {
                return Point2::new(hl - s, hw);
            }
            s -= length;
            Point2::new(-hl, hw - s)
        })
        .collect()
}

/// Noise-free features for a box with heading `yaw` and world velocity
/// `velocity`, relative to the box center.
pub fn clean_features(
    length: f64,
    width: f64,
    yaw: Angle,
    velocity: Point2,
    asymmetry: f64,
    rings: usize,
) -> Vec<f64> {
    let (s, c) = yaw.radians().sin_cos();
    let rotate = |p: Point2| Point2::new(c * p.x - s * p.y, s * p.x + c * p.y);
    let mut pts = Vec::new();
    for p in outline(length, width) {
        let w = if p.x > 0.0 {
            1.0 - asymmetry
        } else if p.x < 0.0 {
            1.0 + asymmetry
        } else {
            1.0
        };
        pts.push((rotate(p), w));
    }
    if velocity.norm() > 0.0 {
        for dt in HISTORY_SWEEPS {
            for p in outline(length, width) {
                let q = rotate(p);
                pts.push((
                    Point2::new(q.x - velocity.x * dt, q.y - velocity.y * dt),
                    HISTORY_WEIGHT,
                ));
            }
        }
    }
    let mut h = polar_histogram(&pts, rings);
    // Unit mean cell value for a stationary actor.
    let scale = (rings * ANGULAR_SECTORS) as f64 / OUTLINE_POINTS as f64;
    h.iter_mut().for_each(|x| *x *= scale);
    h
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn generate_frame(cfg: &SceneConfig, frame: usize) -> Result<Vec<SynthActor>> {
    let mut rng = frame_rng(cfg.seed, frame as u64);
    let noise = Normal::new(0.0, cfg.feature_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let split = if frame < cfg.train_frames() {
        Split::Train
    } else {
        Split::Val
    };
    let mut centers: Vec<Point2> = Vec::with_capacity(cfg.actors_per_frame);
    let mut actors = Vec::with_capacity(cfg.actors_per_frame);
    for idx in 0..cfg.actors_per_frame {
        let mut center = Point2::default();
        for attempt in 0.. {
            center = Point2::new(
                rng.random_range(-cfg.extent_m..cfg.extent_m),
                rng.random_range(-cfg.extent_m..cfg.extent_m),
            );
            if centers.iter().all(|c| c.dist(center) >= MIN_CENTER_GAP_M) || attempt > 10_000 {
                break;
            }
        }
        centers.push(center);

        let yaw_deg = sig9(rng.random_range(-180.0..180.0f64));
        let yaw = Angle::from_degrees(if yaw_deg == -180.0 { 180.0 } else { yaw_deg });
        let length = sig9(uniform(&mut rng, cfg.length_range));
        let width = sig9(uniform(&mut rng, cfg.width_range));
        let u: f64 = rng.random();
        let motion = if u < cfg.static_fraction {
            Motion::Static
        } else if u < cfg.static_fraction + cfg.reversing_fraction {
            Motion::Reversing
        } else {
            Motion::Forward
        };
        let speed = match motion {
            Motion::Static => 0.0,
            _ => uniform(&mut rng, cfg.speed_range),
        };
        let visibility = rng.random_range(MIN_VISIBILITY..=1.0);

        let travel = match motion {
            Motion::Reversing => yaw.flipped(),
            _ => yaw,
        };
        let (s, c) = travel.radians().sin_cos();
        let velocity = Point2::new(speed * c, speed * s);
        let cx = sig9(center.x);
        let cy = sig9(center.y);
        let waypoints: Vec<Point2> = (1..=cfg.horizon)
            .map(|t| {
                let dt = t as f64 * STEP_SECONDS;
                Point2::new(sig9(cx + velocity.x * dt), sig9(cy + velocity.y * dt))
            })
            .collect();

        let mut features = clean_features(
            length,
            width,
            yaw,
            velocity,
            cfg.front_signal * visibility,
            cfg.rings(),
        );
        if cfg.feature_noise > 0.0 {
            for f in features.iter_mut() {
                *f += noise.sample(&mut rng);
            }
        }
        features.iter_mut().for_each(|f| *f = sig9(*f));

        let bbox = OrientedBox::new(cx, cy, length, width, yaw)?;
        let gt = GtActor::new(
            frame as u64,
            (frame * cfg.actors_per_frame + idx) as u64,
            bbox,
            vec![yaw; cfg.horizon],
            waypoints,
        )?;
        actors.push(SynthActor {
            gt,
            features,
            split,
        });
    }
    Ok(actors)
}

/// Generates every frame; frame `f` draws from its own ChaCha stream, so
/// output depends only on the config.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut actors = Vec::with_capacity(cfg.frames * cfg.actors_per_frame);
    for f in 0..cfg.frames {
        actors.extend(generate_frame(cfg, f)?);
    }
    Ok(Dataset { actors })
}

/// Front and rear halves of a histogram relative to `yaw`: total mass of
/// sectors whose center points ahead of / behind the heading.
pub fn front_rear_mass(features: &[f64], yaw: Angle) -> (f64, f64) {
    let sector_width = TAU / ANGULAR_SECTORS as f64;
    let (mut front, mut rear) = (0.0, 0.0);
    for (i, v) in features.iter().enumerate() {
        let k = i % ANGULAR_SECTORS;
        let d = (k as f64 * sector_width - yaw.radians()).cos();
        if d > 1e-9 {
            front += v;
        } else if d < -1e-9 {
            rear += v;
        }
    }
    (front, rear)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub pos_sigma: f64,
    pub yaw_sigma_deg: f64,
    pub flip_fraction: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            pos_sigma: 0.0,
            yaw_sigma_deg: 0.0,
            flip_fraction: 0.0,
            fp_rate: 0.0,
            fn_rate: 0.0,
            seed: 11,
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<bool> {
    let k = ((n as f64 * fraction).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut mask = vec![false; n];
    idx.into_iter().take(k).for_each(|i| mask[i] = true);
    mask
}

/// Detection fixtures derived from ground truth.
///
/// Exactly `round(rate × n)` actors are missed, flipped, or spawn a false
/// positive. Scores fall with the applied perturbation; false positives
/// score below every clean detection.
pub fn perturb_detections(gts: &[GtActor], cfg: &PerturbConfig) -> Result<Vec<DetectionRecord>> {
    for (name, x) in [
        ("flip_fraction", cfg.flip_fraction),
        ("fp_rate", cfg.fp_rate),
        ("fn_rate", cfg.fn_rate),
    ] {
        check_fraction(name, x)?;
    }
    if !(cfg.pos_sigma >= 0.0 && cfg.yaw_sigma_deg >= 0.0) {
        return Err(Error::Config("noise sigmas must be ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = gts.len();
    let missed = pick(&mut rng, n, cfg.fn_rate);
    let flipped = pick(&mut rng, n, cfg.flip_fraction);
    let spawn_fp = pick(&mut rng, n, cfg.fp_rate);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut dets = Vec::new();
    for (i, g) in gts.iter().enumerate() {
        if !missed[i] {
            let dx = cfg.pos_sigma * std_normal.sample(&mut rng);
            let dy = cfg.pos_sigma * std_normal.sample(&mut rng);
            let dyaw = Angle::from_degrees(cfg.yaw_sigma_deg * std_normal.sample(&mut rng));
            let turn = if flipped[i] { Angle::HALF_TURN } else { Angle::ZERO };
            let yaw = (g.bbox.yaw + dyaw + turn).full();
            let quality = (-(dx * dx + dy * dy) - 4.0 * dyaw.radians().powi(2)).exp();
            let score = 0.5 + 0.5 * quality * rng.random_range(0.5..=1.0);
            dets.push(DetectionRecord {
                frame: g.frame,
                id: g.id,
                bbox: OrientedBox {
                    cx: g.bbox.cx + dx,
                    cy: g.bbox.cy + dy,
                    yaw,
                    ..g.bbox
                },
                score,
                yaws: g.yaws.iter().map(|&a| (a + dyaw + turn).full()).collect(),
                flip_prob: None,
                waypoints: g
                    .waypoints
                    .iter()
                    .map(|p| Point2::new(p.x + dx, p.y + dy))
                    .collect(),
            });
        }
        if spawn_fp[i] {
            let heading = rng.random_range(-PI..PI);
            let dist = rng.random_range(3.0..6.0) * g.bbox.length;
            let bbox = OrientedBox {
                cx: g.bbox.cx + dist * heading.cos(),
                cy: g.bbox.cy + dist * heading.sin(),
                yaw: Angle::from_radians(rng.random_range(-PI..PI)),
                ..g.bbox
            };
            dets.push(DetectionRecord {
                frame: g.frame,
                id: u64::MAX - i as u64,
                bbox,
                score: rng.random_range(0.05..0.5),
                yaws: vec![bbox.yaw; g.yaws.len()],
                flip_prob: None,
                waypoints: vec![bbox.center(); g.waypoints.len()],
            });
        }
    }
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            frames: 5,
            actors_per_frame: 6,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SceneConfig {
            seed: 8,
            ..small()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn counts_and_split() {
        let cfg = small();
        let d = generate_dataset(&cfg).unwrap();
        assert_eq!(d.actors.len(), 30);
        assert_eq!(d.train().len(), 24);
        assert_eq!(d.val().len(), 6);
        assert!(d.actors.iter().all(|a| a.features.len() == 64));
        assert!(d.actors.iter().all(|a| a.gt.waypoints.len() == 30));
    }

    #[test]
    fn all_static() {
        let d = generate_dataset(&SceneConfig {
            static_fraction: 1.0,
            reversing_fraction: 0.0,
            ..small()
        })
        .unwrap();
        assert!(d.actors.iter().all(|a| a.gt.speed == 0.0 && !a.gt.moving));
    }

    #[test]
    fn reversing_actors_move_backwards() {
        let d = generate_dataset(&SceneConfig {
            static_fraction: 0.0,
            reversing_fraction: 1.0,
            ..small()
        })
        .unwrap();
        for a in &d.actors {
            let v = a.velocity();
            let travel = Angle::from_radians(v.y.atan2(v.x));
            assert!((crate::geom::foe(a.gt.bbox.yaw, travel).unwrap() - 180.0).abs() < 1e-4);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SceneConfig { frames: 0, ..small() },
            SceneConfig { actors_per_frame: 0, ..small() },
            SceneConfig { static_fraction: 1.2, ..small() },
            SceneConfig { static_fraction: 0.8, reversing_fraction: 0.3, ..small() },
            SceneConfig { feature_dim: 60, ..small() },
            SceneConfig { speed_range: [5.0, 1.0], ..small() },
        ] {
            assert!(generate_dataset(&cfg).is_err());
        }
    }

    #[test]
    fn full_signal_separates_front_and_rear() {
        let d = generate_dataset(&SceneConfig {
            front_signal: 1.0,
            feature_noise: 0.0,
            static_fraction: 1.0,
            reversing_fraction: 0.0,
            ..small()
        })
        .unwrap();
        for a in &d.actors {
            let (front, rear) = front_rear_mass(&a.features, a.gt.bbox.yaw);
            assert!(rear > front + 1e-3, "front {front} rear {rear}");
        }
    }

    #[test]
    fn zero_signal_is_flip_symmetric() {
        let f = clean_features(4.5, 1.9, Angle::from_degrees(31.0), Point2::default(), 0.0, 8);
        let g = clean_features(4.5, 1.9, Angle::from_degrees(211.0), Point2::default(), 0.0, 8);
        for (a, b) in f.iter().zip(&g) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn perturbation_fixtures() {
        let d = generate_dataset(&small()).unwrap();
        let gts: Vec<_> = d.actors.iter().map(|a| a.gt.clone()).collect();
        let clean = perturb_detections(&gts, &PerturbConfig::default()).unwrap();
        assert_eq!(clean.len(), gts.len());
        for (d, g) in clean.iter().zip(&gts) {
            assert_eq!(d.bbox.center(), g.bbox.center());
            assert!(crate::geom::foe(d.bbox.yaw, g.bbox.yaw).unwrap() < 1e-9);
        }

        let cfg = PerturbConfig {
            fn_rate: 0.3,
            fp_rate: 0.2,
            flip_fraction: 0.5,
            ..PerturbConfig::default()
        };
        let a = perturb_detections(&gts, &cfg).unwrap();
        assert_eq!(a, perturb_detections(&gts, &cfg).unwrap());
        assert_eq!(a.len(), 30 - 9 + 6);
    }
}
