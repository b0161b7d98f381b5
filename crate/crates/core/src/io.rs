//! File formats: JSON-lines datasets and detections, plus the float
//! formatting shared by every artifact (9 significant digits).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geom::{Angle, OrientedBox, Point2};
use crate::metrics::{DetectionRecord, GtActor};
use crate::synth::{Split, SynthActor};

pub const SIG_DIGITS: usize = 9;

/// Rounds to 9 significant digits; the shortest round-trip repr of the
/// result never carries more.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every number inside a JSON value in place.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(r) = n.as_f64().map(sig9).and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

pub fn to_json_rounded<T: Serialize>(x: &T) -> Result<Value> {
    let mut v = serde_json::to_value(x)?;
    round_json(&mut v);
    Ok(v)
}

pub fn to_string_pretty_rounded<T: Serialize>(x: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_json_rounded(x)?)?)
}

/// `f64` formatted for CSV/text output; `nan` for missing values.
pub fn fmt_f64(x: f64) -> String {
    format!("{}", sig9(x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub l: f64,
    pub w: f64,
    pub yaw_deg: f64,
}

impl BoxRecord {
    pub fn of(b: &OrientedBox) -> Self {
        BoxRecord {
            cx: b.cx,
            cy: b.cy,
            l: b.length,
            w: b.width,
            yaw_deg: b.yaw.degrees(),
        }
    }

    pub fn to_box(&self) -> Result<OrientedBox> {
        OrientedBox::new(self.cx, self.cy, self.l, self.w, Angle::from_degrees(self.yaw_deg))
    }
}

/// One line of a dataset or detections file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorLine {
    pub frame: u64,
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: BoxRecord,
    /// `[x, y, yaw_deg]` per future step.
    pub waypoints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_prob: Option<f64>,
}

fn waypoint_rows(points: &[Point2], yaws: &[Angle]) -> Vec<[f64; 3]> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let yaw = yaws.get(i).or(yaws.last()).map_or(0.0, |a| a.degrees());
            [p.x, p.y, yaw]
        })
        .collect()
}

fn split_rows(rows: &[[f64; 3]]) -> (Vec<Point2>, Vec<Angle>) {
    rows.iter()
        .map(|r| (Point2::new(r[0], r[1]), Angle::from_degrees(r[2])))
        .unzip()
}

impl ActorLine {
    pub fn from_actor(a: &SynthActor) -> Self {
        ActorLine {
            frame: a.gt.frame,
            id: a.gt.id,
            bbox: BoxRecord::of(&a.gt.bbox),
            waypoints: waypoint_rows(&a.gt.waypoints, &a.gt.yaws),
            features: a.features.clone(),
            split: Some(a.split),
            score: None,
            flip_prob: None,
        }
    }

    pub fn from_detection(d: &DetectionRecord) -> Self {
        ActorLine {
            frame: d.frame,
            id: d.id,
            bbox: BoxRecord::of(&d.bbox),
            waypoints: waypoint_rows(&d.waypoints, &d.yaws),
            features: Vec::new(),
            split: None,
            score: Some(d.score),
            flip_prob: d.flip_prob,
        }
    }

    pub fn to_actor(&self) -> Result<SynthActor> {
        let (waypoints, yaws) = split_rows(&self.waypoints);
        let gt = GtActor::new(self.frame, self.id, self.bbox.to_box()?, yaws, waypoints)?;
        Ok(SynthActor {
            gt,
            features: self.features.clone(),
            split: self.split.unwrap_or(Split::Train),
        })
    }

    pub fn to_detection(&self) -> Result<DetectionRecord> {
        let (waypoints, yaws) = split_rows(&self.waypoints);
        let score = self
            .score
            .ok_or_else(|| Error::Parse(format!("detection {} in frame {} has no score", self.id, self.frame)))?;
        Ok(DetectionRecord {
            frame: self.frame,
            id: self.id,
            bbox: self.bbox.to_box()?,
            score,
            yaws,
            flip_prob: self.flip_prob,
            waypoints,
        })
    }
}

pub fn write_jsonl<W: Write>(mut w: W, lines: &[ActorLine]) -> Result<()> {
    for l in lines {
        let v = to_json_rounded(l)?;
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ActorLine>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(w: W, actors: &[SynthActor]) -> Result<()> {
    let lines: Vec<_> = actors.iter().map(ActorLine::from_actor).collect();
    write_jsonl(w, &lines)
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<SynthActor>> {
    read_jsonl(r)?.iter().map(ActorLine::to_actor).collect()
}

pub fn write_detections<W: Write>(w: W, dets: &[DetectionRecord]) -> Result<()> {
    let lines: Vec<_> = dets.iter().map(ActorLine::from_detection).collect();
    write_jsonl(w, &lines)
}

pub fn read_detections<R: BufRead>(r: R) -> Result<Vec<DetectionRecord>> {
    read_jsonl(r)?.iter().map(ActorLine::to_detection).collect()
}
