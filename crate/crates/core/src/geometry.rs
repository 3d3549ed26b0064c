//! Piecewise-linear ("tent") deformation of a fabric stretched over a
//! rectangular frame and indented at a single point.
//!
//! The frame occupies `[0, width] x [0, height]` in millimeters. Under an
//! indent of depth `d` at apex `t`, every ray from `t` to the frame border is
//! a straight line in 3D: the surface height falls linearly from `-d` at the
//! apex to `0` at the border. In-plane coordinates of material points are
//! left unchanged.

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Pt2 = Point2<f64>;
pub type Pt3 = Point3<f64>;

/// Tolerance for geometric predicates, in millimeters.
pub const GEOM_TOL: f64 = 1e-9;

/// Default maximum indentation depth in millimeters.
pub const DEFAULT_DEPTH_MAX: f64 = 25.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("ray direction is degenerate (|through - origin| < {GEOM_TOL} mm)")]
    DegenerateRay,
    #[error("point ({x}, {y}) lies outside the frame")]
    OutsideFrame { x: f64, y: f64 },
    #[error("ray origin ({x}, {y}) is not strictly inside the frame")]
    OriginNotInside { x: f64, y: f64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid touch: {0}")]
    InvalidTouch(String),
    #[error("grid shapes do not match: {0}")]
    ShapeMismatch(String),
    #[error("every marker is masked")]
    AllMasked,
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Axis-aligned rectangle in frame coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> Pt2 {
        Pt2::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn contains(&self, p: &Pt2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    fn is_finite(&self) -> bool {
        [self.min_x, self.min_y, self.max_x, self.max_y].iter().all(|v| v.is_finite())
    }
}

/// The rectangular sensing frame and the inner area where touches happen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrameSpecRaw", into = "FrameSpecRaw")]
pub struct FrameSpec {
    width: f64,
    height: f64,
    touch_area: Rect,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameSpecRaw {
    width: f64,
    height: f64,
    #[serde(default)]
    touch_area: Option<Rect>,
}

impl TryFrom<FrameSpecRaw> for FrameSpec {
    type Error = GeometryError;

    fn try_from(raw: FrameSpecRaw) -> Result<Self> {
        match raw.touch_area {
            Some(area) => FrameSpec::new(raw.width, raw.height, area),
            None => FrameSpec::centered(raw.width, raw.height, DEFAULT_TOUCH_SIDE, DEFAULT_TOUCH_SIDE),
        }
    }
}

impl From<FrameSpec> for FrameSpecRaw {
    fn from(f: FrameSpec) -> Self {
        FrameSpecRaw { width: f.width, height: f.height, touch_area: Some(f.touch_area) }
    }
}

const DEFAULT_FRAME_SIDE: f64 = 125.0;
const DEFAULT_TOUCH_SIDE: f64 = 80.0;

impl Default for FrameSpec {
    /// 125 x 125 mm frame with a centered 80 x 80 mm touch area.
    fn default() -> Self {
        FrameSpec::centered(DEFAULT_FRAME_SIDE, DEFAULT_FRAME_SIDE, DEFAULT_TOUCH_SIDE, DEFAULT_TOUCH_SIDE)
            .expect("default frame is valid")
    }
}

impl FrameSpec {
    pub fn new(width: f64, height: f64, touch_area: Rect) -> Result<Self> {
        if !(width.is_finite() && width > 0.0 && height.is_finite() && height > 0.0) {
            return Err(GeometryError::InvalidFrame(format!(
                "frame dimensions must be positive, got {width} x {height}"
            )));
        }
        if !touch_area.is_finite() || touch_area.width() <= 0.0 || touch_area.height() <= 0.0 {
            return Err(GeometryError::InvalidFrame("touch area must have positive size".into()));
        }
        if !(touch_area.min_x > 0.0
            && touch_area.min_y > 0.0
            && touch_area.max_x < width
            && touch_area.max_y < height)
        {
            return Err(GeometryError::InvalidFrame(
                "touch area must lie strictly inside the frame".into(),
            ));
        }
        Ok(Self { width, height, touch_area })
    }

    /// Frame with a touch area of the given size centered in it.
    pub fn centered(width: f64, height: f64, touch_w: f64, touch_h: f64) -> Result<Self> {
        let mx = 0.5 * (width - touch_w);
        let my = 0.5 * (height - touch_h);
        Self::new(width, height, Rect::new(mx, my, mx + touch_w, my + touch_h))
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn touch_area(&self) -> Rect {
        self.touch_area
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }

    pub fn center(&self) -> Pt2 {
        Pt2::new(0.5 * self.width, 0.5 * self.height)
    }

    /// Inside or on the border, with [`GEOM_TOL`] slack.
    pub fn contains(&self, p: &Pt2) -> bool {
        p.x >= -GEOM_TOL
            && p.y >= -GEOM_TOL
            && p.x <= self.width + GEOM_TOL
            && p.y <= self.height + GEOM_TOL
    }

    pub fn strictly_contains(&self, p: &Pt2) -> bool {
        p.x > GEOM_TOL && p.y > GEOM_TOL && p.x < self.width - GEOM_TOL && p.y < self.height - GEOM_TOL
    }

    pub fn on_boundary(&self, p: &Pt2) -> bool {
        self.contains(p) && !self.strictly_contains(p)
    }
}

/// A single indentation at `(x, y)` pressed `depth` millimeters into the fabric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchEvent {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl TouchEvent {
    pub fn new(x: f64, y: f64, depth: f64) -> Self {
        Self { x, y, depth }
    }

    pub fn position(&self) -> Pt2 {
        Pt2::new(self.x, self.y)
    }

    /// Checks the event against the frame's touch area and a depth limit.
    pub fn validate(&self, frame: &FrameSpec, depth_max: f64) -> Result<()> {
        if !frame.touch_area().contains(&self.position()) {
            return Err(GeometryError::InvalidTouch(format!(
                "({}, {}) is outside the touch area",
                self.x, self.y
            )));
        }
        if !(self.depth >= 0.0 && self.depth <= depth_max) {
            return Err(GeometryError::InvalidTouch(format!(
                "depth {} outside [0, {depth_max}]",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Point where the ray from `origin` through `through` leaves the frame.
///
/// The coordinate of the edge that is hit is set exactly, so the result lies
/// on the border without rounding slack.
pub fn ray_border_intersection(frame: &FrameSpec, origin: Pt2, through: Pt2) -> Result<Pt2> {
    if !frame.strictly_contains(&origin) {
        return Err(GeometryError::OriginNotInside { x: origin.x, y: origin.y });
    }
    let dir = through - origin;
    if dir.norm() < GEOM_TOL {
        return Err(GeometryError::DegenerateRay);
    }

    let (tx, edge_x) = axis_exit(origin.x, dir.x, frame.width);
    let (ty, edge_y) = axis_exit(origin.y, dir.y, frame.height);

    let hit = if tx < ty {
        Pt2::new(edge_x, (origin.y + tx * dir.y).clamp(0.0, frame.height))
    } else if ty < tx {
        Pt2::new((origin.x + ty * dir.x).clamp(0.0, frame.width), edge_y)
    } else {
        Pt2::new(edge_x, edge_y)
    };
    Ok(hit)
}

// Ray parameter at which one coordinate reaches 0 or `limit`.
fn axis_exit(start: f64, step: f64, limit: f64) -> (f64, f64) {
    if step > 0.0 {
        ((limit - start) / step, limit)
    } else if step < 0.0 {
        (-start / step, 0.0)
    } else {
        (f64::INFINITY, f64::NAN)
    }
}

/// Fraction of the full indent depth reached at `p`: 1 at the apex, 0 on the
/// border, linear along every apex-to-border ray.
pub fn indent_profile(frame: &FrameSpec, apex: Pt2, p: Pt2) -> Result<f64> {
    if !frame.contains(&p) {
        return Err(GeometryError::OutsideFrame { x: p.x, y: p.y });
    }
    if !frame.strictly_contains(&apex) {
        return Err(GeometryError::InvalidTouch(format!(
            "apex ({}, {}) must lie strictly inside the frame",
            apex.x, apex.y
        )));
    }
    if frame.on_boundary(&p) {
        return Ok(0.0);
    }
    let r = (p - apex).norm();
    if r < GEOM_TOL {
        return Ok(1.0);
    }
    let border = ray_border_intersection(frame, apex, p)?;
    let reach = (border - apex).norm();
    Ok((1.0 - r / reach).clamp(0.0, 1.0))
}

/// Height of the indented surface at planar point `p` (mm, non-positive).
pub fn deform_z(frame: &FrameSpec, touch: &TouchEvent, p: Pt2) -> Result<f64> {
    if !(touch.depth >= 0.0 && touch.depth.is_finite()) {
        return Err(GeometryError::InvalidTouch(format!("depth {} must be >= 0", touch.depth)));
    }
    let g = indent_profile(frame, touch.position(), p)?;
    let z = -touch.depth * g;
    // avoid -0.0 leaking into outputs
    Ok(if z == 0.0 { 0.0 } else { z })
}

/// Deformed 3D position of the material point resting at `p`.
pub fn deform_point(frame: &FrameSpec, touch: &TouchEvent, p: Pt2) -> Result<Pt3> {
    Ok(Pt3::new(p.x, p.y, deform_z(frame, touch, p)?))
}

/// Row-major `rows x cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GeometryError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.cols + col]
    }

    fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data.len() == other.data.len()
    }
}

/// One captured frame of tracked fabric markers laid out on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; `None` where the marker was not tracked.
    pub positions: Vec<Option<Pt3>>,
}

impl MarkerGrid {
    pub fn new(rows: usize, cols: usize, positions: Vec<Option<Pt3>>) -> Result<Self> {
        if positions.len() != rows * cols {
            return Err(GeometryError::ShapeMismatch(format!(
                "{} markers for a {rows}x{cols} grid",
                positions.len()
            )));
        }
        Ok(Self { rows, cols, positions })
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Pt3> {
        self.positions[self.index(row, col)]
    }

    pub fn valid_count(&self) -> usize {
        self.positions.iter().filter(|p| p.is_some()).count()
    }

    pub fn mask(&self) -> Grid<bool> {
        Grid { rows: self.rows, cols: self.cols, data: self.positions.iter().map(Option::is_some).collect() }
    }

    /// Iterator over `(row, col, position)` of tracked markers.
    pub fn valid(&self) -> impl Iterator<Item = (usize, usize, Pt3)> + '_ {
        self.positions
            .iter()
            .enumerate()
            .filter_map(move |(i, p)| p.map(|p| (i / self.cols, i % self.cols, p)))
    }
}

/// Per-marker and overall RMS between model and measured heights.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRms {
    /// `None` where a marker was masked in every frame.
    pub per_point: Grid<Option<f64>>,
    /// RMS over all valid (marker, frame) pairs, as a fraction of the unit range.
    pub overall: f64,
}

/// RMS height error over a sequence of frames.
///
/// All three slices hold one grid per frame; `mask` marks which entries of
/// the measured grid are valid.
pub fn surface_rms(model_z: &[Grid<f64>], measured_z: &[Grid<f64>], mask: &[Grid<bool>]) -> Result<SurfaceRms> {
    if model_z.len() != measured_z.len() || model_z.len() != mask.len() {
        return Err(GeometryError::ShapeMismatch(format!(
            "frame counts differ: model {}, measured {}, mask {}",
            model_z.len(),
            measured_z.len(),
            mask.len()
        )));
    }
    let Some(first) = model_z.first() else {
        return Err(GeometryError::AllMasked);
    };
    let (rows, cols) = (first.rows, first.cols);
    for ((m, z), k) in model_z.iter().zip(measured_z).zip(mask) {
        if !(m.same_shape(first) && z.same_shape(first) && k.same_shape(first)) {
            return Err(GeometryError::ShapeMismatch(format!("all grids must be {rows}x{cols}")));
        }
    }

    let mut sum_sq = vec![0.0; rows * cols];
    let mut counts = vec![0usize; rows * cols];
    for ((m, z), k) in model_z.iter().zip(measured_z).zip(mask) {
        for i in 0..rows * cols {
            if k.data[i] {
                let e = m.data[i] - z.data[i];
                sum_sq[i] += e * e;
                counts[i] += 1;
            }
        }
    }

    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(GeometryError::AllMasked);
    }
    let overall = (sum_sq.iter().sum::<f64>() / total as f64).sqrt();
    let per_point = sum_sq
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| (n > 0).then(|| (s / n as f64).sqrt()))
        .collect();
    Ok(SurfaceRms { per_point: Grid { rows, cols, data: per_point }, overall })
}
