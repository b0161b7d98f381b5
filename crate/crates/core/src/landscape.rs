//! Loss surfaces over a single (s, c) prediction for a fixed ground truth.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Angle;
use crate::io::fmt_f64;
use crate::losses::{half_params_from_full, loss_flipped, loss_full, loss_half, GtOrientationTrack, SinCosPair, SmoothL1};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeLoss {
    Full,
    FullPlusHalf,
    MinFullFlipped,
    MinPlusHalf,
}

impl LandscapeLoss {
    pub const ALL: [LandscapeLoss; 4] = [
        LandscapeLoss::Full,
        LandscapeLoss::FullPlusHalf,
        LandscapeLoss::MinFullFlipped,
        LandscapeLoss::MinPlusHalf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LandscapeLoss::Full => "full",
            LandscapeLoss::FullPlusHalf => "full_plus_half",
            LandscapeLoss::MinFullFlipped => "min_full_flipped",
            LandscapeLoss::MinPlusHalf => "min_plus_half",
        }
    }

    pub fn eval(self, l1: SmoothL1, s: f64, c: f64, gt: &GtOrientationTrack) -> Result<f64> {
        let p = [SinCosPair::new(s, c)];
        let full = loss_full(l1, &p, gt)?.total;
        let with_min = |full: f64| -> Result<f64> { Ok(full.min(loss_flipped(l1, &p, gt)?.total)) };
        let (s2, c2) = half_params_from_full(s, c);
        let half = || -> Result<f64> { Ok(loss_half(l1, &[SinCosPair::new(s2, c2)], gt)?.total) };
        match self {
            LandscapeLoss::Full => Ok(full),
            LandscapeLoss::FullPlusHalf => Ok(full + half()?),
            LandscapeLoss::MinFullFlipped => with_min(full),
            LandscapeLoss::MinPlusHalf => Ok(with_min(full)? + half()?),
        }
    }
}

impl std::fmt::Display for LandscapeLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LandscapeLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LandscapeLoss::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown landscape loss `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeConfig {
    pub losses: Vec<LandscapeLoss>,
    pub gt_yaw_deg: f64,
    /// Half-width of the square grid, centred on the origin.
    pub extent: f64,
    pub step: f64,
    pub smooth_l1_beta: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            losses: LandscapeLoss::ALL.to_vec(),
            gt_yaw_deg: 0.0,
            extent: 1.5,
            step: 0.01,
            smooth_l1_beta: SmoothL1::DEFAULT_BETA,
        }
    }
}

impl LandscapeConfig {
    pub fn validate(&self) -> Result<()> {
        SmoothL1::new(self.smooth_l1_beta)?;
        if !(self.step > 0.0 && self.extent > 0.0 && self.step.is_finite() && self.extent.is_finite()) {
            return Err(Error::Config("landscape extent and step must be positive".into()));
        }
        if self.extent / self.step > 5000.0 {
            return Err(Error::Config("landscape grid exceeds 10001 points per side".into()));
        }
        if !self.gt_yaw_deg.is_finite() {
            return Err(Error::NonFinite("gt_yaw_deg"));
        }
        Ok(())
    }

    /// Cells on each side of the centre.
    pub fn half_cells(&self) -> usize {
        (self.extent / self.step + 1e-9).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub s: f64,
    pub c: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landscape {
    pub loss: LandscapeLoss,
    /// Axis coordinates; identical for s and c.
    pub axis: Vec<f64>,
    /// Row-major `values[i_c * n + i_s]`.
    pub values: Vec<f64>,
}

pub fn evaluate_grid(loss: LandscapeLoss, cfg: &LandscapeConfig) -> Result<Landscape> {
    cfg.validate()?;
    let l1 = SmoothL1::new(cfg.smooth_l1_beta)?;
    let gt = GtOrientationTrack::constant(Angle::from_degrees(cfg.gt_yaw_deg), 1)?;
    let m = cfg.half_cells() as i64;
    // Integer offsets keep 0 and ±1 exactly on the grid.
    let axis: Vec<f64> = (-m..=m).map(|i| i as f64 * cfg.step).collect();
    let mut values = Vec::with_capacity(axis.len() * axis.len());
    for &c in &axis {
        for &s in &axis {
            values.push(loss.eval(l1, s, c, &gt)?);
        }
    }
    Ok(Landscape { loss, axis, values })
}

impl Landscape {
    pub fn side(&self) -> usize {
        self.axis.len()
    }

    pub fn at(&self, i_s: usize, i_c: usize) -> GridPoint {
        GridPoint {
            s: self.axis[i_s],
            c: self.axis[i_c],
            loss: self.values[i_c * self.side() + i_s],
        }
    }

    /// Interior points strictly below all eight neighbours.
    pub fn local_minima(&self) -> Vec<GridPoint> {
        let n = self.side();
        let mut out = Vec::new();
        for ic in 1..n.saturating_sub(1) {
            for is in 1..n - 1 {
                let v = self.values[ic * n + is];
                let strict = (ic - 1..=ic + 1)
                    .flat_map(|jc| (is - 1..=is + 1).map(move |js| (jc, js)))
                    .filter(|&(jc, js)| (jc, js) != (ic, is))
                    .all(|(jc, js)| v < self.values[jc * n + js]);
                if strict {
                    out.push(self.at(is, ic));
                }
            }
        }
        out
    }

    /// Points within `tol` of the smallest value.
    pub fn global_minima(&self, tol: f64) -> Vec<GridPoint> {
        let best = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let n = self.side();
        (0..self.values.len())
            .filter(|&k| self.values[k] <= best + tol)
            .map(|k| self.at(k % n, k / n))
            .collect()
    }

    /// Loss at the grid point nearest `(s, c)`.
    pub fn value_near(&self, s: f64, c: f64) -> f64 {
        let idx = |x: f64| {
            self.axis
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                .map_or(0, |(i, _)| i)
        };
        self.at(idx(s), idx(c)).loss
    }

    pub fn to_csv(&self) -> String {
        let n = self.side();
        let mut out = String::with_capacity(n * n * 24);
        out.push_str("s,c,loss\n");
        for ic in 0..n {
            for is in 0..n {
                let p = self.at(is, ic);
                let _ = writeln!(out, "{},{},{}", fmt_f64(p.s), fmt_f64(p.c), fmt_f64(p.loss));
            }
        }
        out
    }

    /// Plain (P2) graymap, darker = lower loss; the top row is the largest c.
    pub fn to_pgm(&self) -> String {
        let n = self.side();
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = format!("P2\n# {}\n{n} {n}\n255\n", self.loss);
        for ic in (0..n).rev() {
            let row: Vec<String> = (0..n)
                .map(|is| {
                    let v = (self.values[ic * n + is] - lo) / span;
                    ((v * 255.0).round() as u8).to_string()
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse(loss: LandscapeLoss) -> Landscape {
        let cfg = LandscapeConfig {
            step: 0.05,
            ..LandscapeConfig::default()
        };
        evaluate_grid(loss, &cfg).unwrap()
    }

    #[test]
    fn grid_contains_unit_points_exactly() {
        let l = coarse(LandscapeLoss::Full);
        assert_eq!(l.side(), 61);
        assert!(l.axis.contains(&1.0) && l.axis.contains(&-1.0) && l.axis.contains(&0.0));
    }

    #[test]
    fn full_has_single_minimum_at_truth() {
        let l = coarse(LandscapeLoss::Full);
        let m = l.local_minima();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].s, m[0].c, m[0].loss), (0.0, 1.0, 0.0));
    }

    #[test]
    fn min_variant_minima_are_antipodal_and_equal() {
        for loss in [LandscapeLoss::MinFullFlipped, LandscapeLoss::MinPlusHalf] {
            let g = coarse(loss).global_minima(1e-12);
            let pts: Vec<_> = g.iter().map(|p| (p.s, p.c)).collect();
            assert_eq!(pts, vec![(0.0, -1.0), (0.0, 1.0)], "{loss}");
            assert!((g[0].loss - g[1].loss).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_and_pgm_shapes() {
        let cfg = LandscapeConfig {
            extent: 0.1,
            step: 0.05,
            ..LandscapeConfig::default()
        };
        let l = evaluate_grid(LandscapeLoss::Full, &cfg).unwrap();
        let csv = l.to_csv();
        assert_eq!(csv.lines().count(), 1 + 25);
        assert!(csv.starts_with("s,c,loss\n-0.1,-0.1,"));
        let pgm = l.to_pgm();
        let lines: Vec<_> = pgm.lines().collect();
        assert_eq!(lines[0], "P2");
        assert_eq!(lines[2], "5 5");
        assert_eq!(lines.len(), 4 + 5);
        // (0, 0.1) is the lowest point of this window: top row, middle column.
        assert_eq!(lines[4].split(' ').nth(2), Some("0"));
    }

    #[test]
    fn names_round_trip_and_bad_config_rejected() {
        for l in LandscapeLoss::ALL {
            assert_eq!(l.name().parse::<LandscapeLoss>().unwrap(), l);
        }
        assert!("nope".parse::<LandscapeLoss>().is_err());
        let bad = LandscapeConfig {
            step: 0.0,
            ..LandscapeConfig::default()
        };
        assert!(evaluate_grid(LandscapeLoss::Full, &bad).is_err());
    }
}
