use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, SensingError};
use crate::geometry::{FrameSpec, Pt2, GEOM_TOL};

/// Minimum rest length of a sensor segment (mm).
const MIN_SENSOR_LEN: f64 = 1.0;

/// A stretch sensor: a straight strip of fabric between two rest points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSegment {
    pub id: usize,
    pub a: Pt2,
    pub b: Pt2,
}

impl SensorSegment {
    pub fn new(id: usize, a: Pt2, b: Pt2) -> Result<Self> {
        if ![a.x, a.y, b.x, b.y].iter().all(|v| v.is_finite()) {
            return Err(SensingError::InvalidSensor(format!("sensor {id} has non-finite endpoints")));
        }
        let len = (b - a).norm();
        if len < MIN_SENSOR_LEN {
            return Err(SensingError::InvalidSensor(format!(
                "sensor {id} is {len} mm long, minimum is {MIN_SENSOR_LEN} mm"
            )));
        }
        Ok(Self { id, a, b })
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Named, ordered set of sensors. Sensor ids equal their list position.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrangement {
    name: String,
    sensors: Vec<SensorSegment>,
}

impl Arrangement {
    pub fn new(name: impl Into<String>, sensors: Vec<SensorSegment>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(SensingError::InvalidArrangement("an arrangement needs at least one sensor".into()));
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.id != i {
                return Err(SensingError::InvalidArrangement(format!(
                    "sensor at position {i} has id {}",
                    s.id
                )));
            }
        }
        Ok(Self { name: name.into(), sensors })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sensors(&self) -> &[SensorSegment] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    /// Fails unless both endpoints of every sensor lie inside or on the frame.
    pub fn check_within(&self, frame: &FrameSpec) -> Result<()> {
        for s in &self.sensors {
            for p in [s.a, s.b] {
                if !frame.contains(&p) {
                    return Err(SensingError::InvalidArrangement(format!(
                        "sensor {} endpoint ({}, {}) lies outside the {}x{} frame",
                        s.id,
                        p.x,
                        p.y,
                        frame.width(),
                        frame.height()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_file(&self, frame: &FrameSpec) -> ArrangementFile {
        ArrangementFile {
            name: self.name.clone(),
            frame: FrameDims { width: frame.width(), height: frame.height() },
            sensors: self
                .sensors
                .iter()
                .map(|s| SensorRecord { id: s.id, a: [s.a.x, s.a.y], b: [s.b.x, s.b.y] })
                .collect(),
        }
    }

    pub fn to_json(&self, frame: &FrameSpec) -> String {
        serde_json::to_string_pretty(&self.to_file(frame)).expect("arrangement serializes")
    }

    /// Parses and validates an arrangement file.
    ///
    /// Returns the arrangement together with the frame size recorded in the file.
    pub fn from_json(text: &str) -> Result<(Self, FrameDims)> {
        let file: ArrangementFile = serde_json::from_str(text).map_err(|e| SensingError::File(e.to_string()))?;
        file.into_arrangement()
    }

    pub fn load(path: &Path) -> Result<(Self, FrameDims)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SensingError::File(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDims {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorRecord {
    id: usize,
    a: [f64; 2],
    b: [f64; 2],
}

/// On-disk arrangement format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrangementFile {
    pub name: String,
    pub frame: FrameDims,
    sensors: Vec<SensorRecord>,
}

impl ArrangementFile {
    fn into_arrangement(self) -> Result<(Arrangement, FrameDims)> {
        let mut seen = BTreeSet::new();
        for s in &self.sensors {
            if !seen.insert(s.id) {
                return Err(SensingError::DuplicateSensorId(s.id));
            }
        }
        let mut records = self.sensors;
        records.sort_by_key(|s| s.id);
        let sensors = records
            .into_iter()
            .map(|s| SensorSegment::new(s.id, Pt2::new(s.a[0], s.a[1]), Pt2::new(s.b[0], s.b[1])))
            .collect::<Result<Vec<_>>>()?;
        let arrangement = Arrangement::new(self.name, sensors)?;
        let dims = self.frame;
        if !(dims.width > 0.0 && dims.height > 0.0) {
            return Err(SensingError::File(format!("frame {}x{} is not positive", dims.width, dims.height)));
        }
        for s in arrangement.sensors() {
            for p in [s.a, s.b] {
                if p.x < -GEOM_TOL || p.y < -GEOM_TOL || p.x > dims.width + GEOM_TOL || p.y > dims.height + GEOM_TOL {
                    return Err(SensingError::InvalidArrangement(format!(
                        "sensor {} endpoint ({}, {}) lies outside the {}x{} frame",
                        s.id, p.x, p.y, dims.width, dims.height
                    )));
                }
            }
        }
        Ok((arrangement, dims))
    }
}

/// How to lay out an arrangement on a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrangementSpec {
    /// `n_per_side` patches on every edge, perpendicular to it.
    Border {
        n_per_side: usize,
        #[serde(default = "default_patch_len")]
        patch_len_mm: f64,
        #[serde(default = "default_inset")]
        inset_mm: f64,
    },
    /// Patch counts per edge in the order bottom, right, top, left.
    BorderEdges {
        counts: [usize; 4],
        #[serde(default = "default_patch_len")]
        patch_len_mm: f64,
        #[serde(default = "default_inset")]
        inset_mm: f64,
    },
    /// Four sensors radiating from the frame center along +x, +y, -x, -y.
    Cross { arm_len_mm: f64 },
    /// `n` chords joining border points half a perimeter apart.
    Chords { n: usize },
    Custom { path: PathBuf },
}

fn default_patch_len() -> f64 {
    20.0
}

fn default_inset() -> f64 {
    2.0
}

impl ArrangementSpec {
    pub fn border(n_per_side: usize, patch_len_mm: f64, inset_mm: f64) -> Self {
        Self::Border { n_per_side, patch_len_mm, inset_mm }
    }

    /// Name the generated arrangement will carry (custom files carry their own).
    pub fn default_name(&self) -> Option<String> {
        match self {
            Self::Border { n_per_side, .. } => Some(format!("border-{}", 4 * n_per_side)),
            Self::BorderEdges { counts, .. } => Some(format!("border-{}", counts.iter().sum::<usize>())),
            Self::Cross { .. } => Some("cross-4".into()),
            Self::Chords { n } => Some(format!("chords-{n}")),
            Self::Custom { .. } => None,
        }
    }

    pub fn build(&self, frame: &FrameSpec) -> Result<Arrangement> {
        let arrangement = match self {
            Self::Border { n_per_side, patch_len_mm, inset_mm } => {
                border_layout(frame, [*n_per_side; 4], *patch_len_mm, *inset_mm, self)?
            }
            Self::BorderEdges { counts, patch_len_mm, inset_mm } => {
                border_layout(frame, *counts, *patch_len_mm, *inset_mm, self)?
            }
            Self::Cross { arm_len_mm } => cross_layout(frame, *arm_len_mm)?,
            Self::Chords { n } => chord_layout(frame, *n)?,
            Self::Custom { path } => {
                let (arrangement, dims) = Arrangement::load(path)?;
                if (dims.width - frame.width()).abs() > GEOM_TOL || (dims.height - frame.height()).abs() > GEOM_TOL {
                    return Err(SensingError::InvalidParams(format!(
                        "{} was laid out for a {}x{} frame, not {}x{}",
                        path.display(),
                        dims.width,
                        dims.height,
                        frame.width(),
                        frame.height()
                    )));
                }
                arrangement
            }
        };
        arrangement.check_within(frame).map_err(|e| SensingError::InvalidParams(e.to_string()))?;
        Ok(arrangement)
    }
}

fn border_layout(
    frame: &FrameSpec,
    counts: [usize; 4],
    patch_len: f64,
    inset: f64,
    spec: &ArrangementSpec,
) -> Result<Arrangement> {
    if counts.iter().sum::<usize>() == 0 {
        return Err(SensingError::InvalidParams("border layout needs at least one patch".into()));
    }
    if !(inset >= 0.0 && patch_len >= MIN_SENSOR_LEN) {
        return Err(SensingError::InvalidParams(format!(
            "inset must be >= 0 and patch length >= {MIN_SENSOR_LEN} mm (got {inset}, {patch_len})"
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    let inner = inset + patch_len;
    let mut sensors = Vec::new();
    // edges traversed counter-clockwise starting at the bottom-left corner
    for (edge, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let f = (2 * i + 1) as f64 / (2 * n) as f64;
            let (outer, inner_pt) = match edge {
                0 => (Pt2::new(w * f, inset), Pt2::new(w * f, inner)),
                1 => (Pt2::new(w - inset, h * f), Pt2::new(w - inner, h * f)),
                2 => (Pt2::new(w * (1.0 - f), h - inset), Pt2::new(w * (1.0 - f), h - inner)),
                _ => (Pt2::new(inset, h * (1.0 - f)), Pt2::new(inner, h * (1.0 - f))),
            };
            for p in [outer, inner_pt] {
                if !frame.contains(&p) {
                    return Err(SensingError::InvalidParams(format!(
                        "patch endpoint ({}, {}) leaves the frame",
                        p.x, p.y
                    )));
                }
            }
            sensors.push(SensorSegment::new(sensors.len(), outer, inner_pt)?);
        }
    }
    Arrangement::new(spec.default_name().unwrap_or_default(), sensors)
}

fn cross_layout(frame: &FrameSpec, arm: f64) -> Result<Arrangement> {
    if !(arm >= MIN_SENSOR_LEN) {
        return Err(SensingError::InvalidParams(format!("arm length {arm} mm is too short")));
    }
    let c = frame.center();
    let tips = [Pt2::new(c.x + arm, c.y), Pt2::new(c.x, c.y + arm), Pt2::new(c.x - arm, c.y), Pt2::new(c.x, c.y - arm)];
    let mut sensors = Vec::with_capacity(4);
    for (id, tip) in tips.into_iter().enumerate() {
        if !frame.contains(&tip) {
            return Err(SensingError::InvalidParams(format!("cross arm of {arm} mm leaves the frame")));
        }
        sensors.push(SensorSegment::new(id, c, tip)?);
    }
    Arrangement::new("cross-4", sensors)
}

fn chord_layout(frame: &FrameSpec, n: usize) -> Result<Arrangement> {
    if n == 0 {
        return Err(SensingError::InvalidParams("chord layout needs n >= 1".into()));
    }
    let (w, h) = (frame.width(), frame.height());
    let perimeter = 2.0 * (w + h);
    let at = |s: f64| -> Pt2 {
        let s = s.rem_euclid(perimeter);
        if s < w {
            Pt2::new(s, 0.0)
        } else if s < w + h {
            Pt2::new(w, s - w)
        } else if s < 2.0 * w + h {
            Pt2::new(w - (s - w - h), h)
        } else {
            Pt2::new(0.0, h - (s - 2.0 * w - h))
        }
    };
    // start points are spread over half the perimeter so no two chords coincide
    let sensors = (0..n)
        .map(|i| {
            let s = (i as f64 + 0.5) * perimeter / (2 * n) as f64;
            SensorSegment::new(i, at(s), at(s + 0.5 * perimeter))
        })
        .collect::<Result<Vec<_>>>()?;
    Arrangement::new(format!("chords-{n}"), sensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_border_layout() {
        let f = FrameSpec::default();
        let a = ArrangementSpec::border(3, 20.0, 2.0).build(&f).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a.name(), "border-12");
        let bottom: Vec<_> = a.sensors().iter().filter(|s| s.a.y == 2.0).collect();
        assert_eq!(bottom.len(), 3);
        assert!((bottom[0].a.x - 125.0 / 6.0).abs() < 1e-12);
        assert_eq!(bottom[0].b.y, 22.0);
        for s in a.sensors() {
            assert!((s.length() - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn border_edges_counts() {
        let f = FrameSpec::default();
        let spec = ArrangementSpec::BorderEdges { counts: [2, 1, 2, 1], patch_len_mm: 20.0, inset_mm: 2.0 };
        let a = spec.build(&f).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.name(), "border-6");
    }

    #[test]
    fn cross_meets_at_center() {
        let f = FrameSpec::default();
        let a = ArrangementSpec::Cross { arm_len_mm: 30.0 }.build(&f).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.sensors().iter().all(|s| s.a == Pt2::new(62.5, 62.5)));
        assert!(ArrangementSpec::Cross { arm_len_mm: 70.0 }.build(&f).is_err());
    }

    #[test]
    fn chords_are_distinct_and_on_border() {
        let f = FrameSpec::default();
        for n in [1, 3, 8] {
            let a = ArrangementSpec::Chords { n }.build(&f).unwrap();
            assert_eq!(a.len(), n);
            for s in a.sensors() {
                assert!(f.on_boundary(&s.a) && f.on_boundary(&s.b));
            }
        }
    }

    #[test]
    fn invalid_params() {
        let f = FrameSpec::default();
        assert!(matches!(
            ArrangementSpec::border(3, 200.0, 2.0).build(&f),
            Err(SensingError::InvalidParams(_))
        ));
        assert!(ArrangementSpec::border(0, 20.0, 2.0).build(&f).is_err());
        assert!(ArrangementSpec::Chords { n: 0 }.build(&f).is_err());
    }

    #[test]
    fn json_round_trip_is_fixpoint() {
        let f = FrameSpec::default();
        let a = ArrangementSpec::Chords { n: 5 }.build(&f).unwrap();
        let text = a.to_json(&f);
        let (back, dims) = Arrangement::from_json(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(dims, FrameDims { width: 125.0, height: 125.0 });
        assert_eq!(back.to_json(&f), text);
    }

    #[test]
    fn loader_rejects_bad_files() {
        let dup = r#"{"name":"x","frame":{"width":125,"height":125},
            "sensors":[{"id":0,"a":[1,1],"b":[1,20]},{"id":0,"a":[5,1],"b":[5,20]}]}"#;
        assert!(matches!(Arrangement::from_json(dup), Err(SensingError::DuplicateSensorId(0))));
        let gap = r#"{"name":"x","frame":{"width":125,"height":125},
            "sensors":[{"id":0,"a":[1,1],"b":[1,20]},{"id":2,"a":[5,1],"b":[5,20]}]}"#;
        assert!(matches!(Arrangement::from_json(gap), Err(SensingError::InvalidArrangement(_))));
        let outside = r#"{"name":"x","frame":{"width":125,"height":125},
            "sensors":[{"id":0,"a":[1,1],"b":[1,200]}]}"#;
        assert!(Arrangement::from_json(outside).is_err());
        let short = r#"{"name":"x","frame":{"width":125,"height":125},
            "sensors":[{"id":0,"a":[1,1],"b":[1,1.5]}]}"#;
        assert!(matches!(Arrangement::from_json(short), Err(SensingError::InvalidSensor(_))));
        assert!(Arrangement::from_json("{}").is_err());
    }

    #[test]
    fn unordered_ids_are_sorted() {
        let text = r#"{"name":"x","frame":{"width":125,"height":125},
            "sensors":[{"id":1,"a":[5,1],"b":[5,20]},{"id":0,"a":[1,1],"b":[1,20]}]}"#;
        let (a, _) = Arrangement::from_json(text).unwrap();
        assert_eq!(a.sensors()[0].a, Pt2::new(1.0, 1.0));
    }

    #[test]
    fn spec_serde_tags() {
        let s: ArrangementSpec = serde_json::from_str(r#"{"kind":"border","n_per_side":3}"#).unwrap();
        assert_eq!(s, ArrangementSpec::border(3, 20.0, 2.0));
        let s: ArrangementSpec = toml::from_str("kind = \"cross\"\narm_len_mm = 30.0").unwrap();
        assert_eq!(s, ArrangementSpec::Cross { arm_len_mm: 30.0 });
    }
}
