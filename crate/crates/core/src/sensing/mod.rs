//! Stretch sensors on the deformed fabric.
//!
//! A sensor is a straight segment of fabric at rest. Its reading is the arc
//! length of the deformed segment divided by its rest length.

mod arrangement;
mod noise;

pub use arrangement::{Arrangement, ArrangementFile, ArrangementSpec, SensorSegment};
pub use noise::{apply_noise, to_resistance, GaugeModel, NoiseModel};

use thiserror::Error;

use crate::geometry::{indent_profile, FrameSpec, GeometryError, Pt2, TouchEvent};

/// Default number of material points sampled along a sensor.
pub const DEFAULT_STRETCH_SAMPLES: usize = 16;

#[derive(Debug, Error)]
pub enum SensingError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("need at least 2 samples per sensor, got {0}")]
    TooFewSamples(usize),
    #[error("invalid sensor: {0}")]
    InvalidSensor(String),
    #[error("invalid arrangement: {0}")]
    InvalidArrangement(String),
    #[error("duplicate sensor id {0}")]
    DuplicateSensorId(usize),
    #[error("invalid arrangement parameters: {0}")]
    InvalidParams(String),
    #[error("invalid noise or gauge parameters: {0}")]
    InvalidModel(String),
    #[error("arrangement file: {0}")]
    File(String),
}

pub type Result<T, E = SensingError> = std::result::Result<T, E>;

/// Stretch ratio of `sensor` under `touch`, using `samples` points along it.
///
/// `samples == 2` is chord mode: only the endpoints are used. For more
/// samples the polyline through the evenly spaced points is also split where
/// the segment crosses a fold of the indented surface (the creases running
/// from the apex to the frame corners), so every piece lies flat on one facet.
///
/// Always at least 1; exactly 1 when every sampled height is equal.
pub fn measure_stretch(frame: &FrameSpec, touch: &TouchEvent, sensor: &SensorSegment, samples: usize) -> Result<f64> {
    if samples < 2 {
        return Err(SensingError::TooFewSamples(samples));
    }
    if !(touch.depth >= 0.0 && touch.depth.is_finite()) {
        return Err(GeometryError::InvalidTouch(format!("depth {} must be >= 0", touch.depth)).into());
    }
    let apex = touch.position();
    let steps = samples - 1;
    let mut params: Vec<f64> = (0..samples).map(|i| i as f64 / steps as f64).collect();
    if samples > 2 {
        params.extend(fold_crossings(frame, apex, sensor));
        params.sort_by(f64::total_cmp);
        params.dedup_by(|b, a| *b - *a < PARAM_EPS);
        // keep the exact endpoint even if a fold crossing landed next to it
        *params.last_mut().expect("non-empty") = 1.0;
    }

    let len = sensor.length();
    let mut prev_u = 0.0;
    let mut prev_g = indent_profile(frame, apex, sensor.a)?;
    let (mut weighted, mut total) = (0.0, 0.0);
    for &u in &params[1..] {
        let p = if u == 1.0 { sensor.b } else { lerp(sensor.a, sensor.b, u) };
        let g = indent_profile(frame, apex, p)?;
        let du = u - prev_u;
        // dz scales linearly in depth, so the ratio is monotone in depth
        let slope = touch.depth * (g - prev_g) / (du * len);
        weighted += du * (1.0 + slope * slope).sqrt();
        total += du;
        prev_u = u;
        prev_g = g;
    }
    Ok(weighted / total)
}

const PARAM_EPS: f64 = 1e-12;

// Parameters in (0, 1) where the sensor crosses a fold line of the tent or
// passes through its apex.
fn fold_crossings(frame: &FrameSpec, apex: Pt2, sensor: &SensorSegment) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let a = sensor.a;
    let d = sensor.b - sensor.a;
    let cross = |u: nalgebra::Vector2<f64>, v: nalgebra::Vector2<f64>| u.x * v.y - u.y * v.x;
    let mut out = Vec::new();
    for corner in [Pt2::new(0.0, 0.0), Pt2::new(w, 0.0), Pt2::new(w, h), Pt2::new(0.0, h)] {
        let e = corner - apex;
        let denom = cross(d, e);
        if denom.abs() < 1e-15 {
            continue;
        }
        let ap = apex - a;
        let u = cross(ap, e) / denom;
        let v = cross(ap, d) / denom;
        if u > PARAM_EPS && u < 1.0 - PARAM_EPS && (0.0..=1.0).contains(&v) {
            out.push(u);
        }
    }
    let u = (apex - a).dot(&d) / d.norm_squared();
    if u > PARAM_EPS && u < 1.0 - PARAM_EPS && (lerp(sensor.a, sensor.b, u) - apex).norm() < 1e-9 {
        out.push(u);
    }
    out
}

fn lerp(a: Pt2, b: Pt2, t: f64) -> Pt2 {
    Pt2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
}

/// Stretch ratio of every sensor in arrangement order.
pub fn feature_vector(
    frame: &FrameSpec,
    touch: &TouchEvent,
    arrangement: &Arrangement,
    samples: usize,
) -> Result<Vec<f64>> {
    arrangement.sensors().iter().map(|s| measure_stretch(frame, touch, s, samples)).collect()
}
