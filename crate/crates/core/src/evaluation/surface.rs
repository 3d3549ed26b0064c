//! Comparison of the deformation model with tracked marker grids.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::format::{fmt_g9, write_file, write_json};
use super::{EvalError, Result};
use crate::dataset::{normalize_frames, DatasetError};
use crate::geometry::{deform_point, deform_z, surface_rms, FrameSpec, Grid, MarkerGrid, Pt2, Pt3, TouchEvent};

/// The fabric in normalized coordinates: the rest marker grid spans the unit
/// square and its outer markers sit on the clamped border.
pub fn unit_frame() -> FrameSpec {
    FrameSpec::centered(1.0, 1.0, 0.64, 0.64).expect("unit frame is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceReport {
    pub rows: usize,
    pub cols: usize,
    /// Scored frames (all but the rest frame).
    pub n_frames: usize,
    /// RMS of model minus measured height over every valid marker and frame,
    /// in units of the normalized side length.
    pub overall_rms: f64,
    #[serde(skip)]
    pub per_point: Grid<Option<f64>>,
}

impl SurfaceReport {
    /// `rows × cols` grid of per-marker RMS; empty cells are masked markers.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols).map(|c| self.per_point.get(r, c).map(fmt_g9).unwrap_or_default()).collect();
            out += &line.join(",");
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path, meta: &[(&str, String)]) -> Result<()> {
        write_file(&dir.join("heatmap.csv"), self.heatmap_csv().as_bytes())?;
        let m: BTreeMap<&str, &String> = meta.iter().map(|(k, v)| (*k, v)).collect();
        write_json(&dir.join("surface.json"), &serde_json::json!({ "meta": m, "report": self }))
    }
}

/// Evaluates the model at every marker's rest position using the tracked
/// indenter of each frame, after normalizing all frames (and the track) by
/// the rest frame's transform. Indent depth is how far the indenter is below
/// the rest plane; frames with the indenter above it predict a flat surface.
/// The rest frame defines the coordinates and is not scored; its track
/// entry may be absent.
pub fn validate_surface_model(frames: &[MarkerGrid], track: &[Option<Pt3>], rest_index: usize) -> Result<SurfaceReport> {
    if frames.len() != track.len() {
        return Err(EvalError::Config(format!("{} mocap frames but {} track entries", frames.len(), track.len())));
    }
    let normalized = normalize_frames(frames, rest_index)?;
    let rest = &normalized.frames[rest_index];
    let frame = unit_frame();
    let (rows, cols) = (rest.rows, rest.cols);

    let mut model = Vec::with_capacity(frames.len());
    let mut measured = Vec::with_capacity(frames.len());
    let mut masks = Vec::with_capacity(frames.len());
    for (f, grid) in normalized.frames.iter().enumerate() {
        if f == rest_index {
            continue;
        }
        let head = track[f].ok_or(EvalError::MissingTouchTrack { frame: f })?;
        let head = normalized.transform.apply(&head);
        let touch = TouchEvent::new(head.x, head.y, (-head.z).max(0.0));
        let mut mz = vec![0.0; rows * cols];
        let mut zz = vec![0.0; rows * cols];
        let mut mask = vec![false; rows * cols];
        for i in 0..rows * cols {
            if let (Some(p0), Some(p)) = (rest.positions[i], grid.positions[i]) {
                mz[i] = if touch.depth > 0.0 { deform_z(&frame, &touch, Pt2::new(p0.x, p0.y))? } else { 0.0 };
                zz[i] = p.z;
                mask[i] = true;
            }
        }
        model.push(Grid { rows, cols, data: mz });
        measured.push(Grid { rows, cols, data: zz });
        masks.push(Grid { rows, cols, data: mask });
    }
    let rms = surface_rms(&model, &measured, &masks)?;
    Ok(SurfaceReport { rows, cols, n_frames: model.len(), overall_rms: rms.overall, per_point: rms.per_point })
}

/// Reads a `frame,x,y,z` indenter track; rows with blank coordinates mean
/// the indenter was not seen in that frame.
pub fn parse_touch_track<R: Read>(input: R) -> Result<BTreeMap<u64, Option<Pt3>>> {
    let parse_err = |line: u64, column: usize, message: String| EvalError::Dataset(DatasetError::Parse { line, column, message });
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut out = BTreeMap::new();
    let mut header = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), 1, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if !header {
            if rec.iter().ne(["frame", "x", "y", "z"]) {
                return Err(parse_err(line, 1, "expected header `frame,x,y,z`".into()));
            }
            header = true;
            continue;
        }
        if rec.len() != 4 {
            return Err(parse_err(line, rec.len().min(4) + 1, format!("expected 4 fields, found {}", rec.len())));
        }
        let frame: u64 = rec[0].parse().map_err(|_| parse_err(line, 1, format!("bad frame number `{}`", &rec[0])))?;
        let pos = if (1..4).all(|i| rec[i].is_empty()) {
            None
        } else {
            let mut v = [0.0; 3];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = rec[k + 1]
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(line, k + 2, format!("bad coordinate `{}`", &rec[k + 1])))?;
            }
            Some(Pt3::new(v[0], v[1], v[2]))
        };
        if out.insert(frame, pos).is_some() {
            return Err(parse_err(line, 1, format!("frame {frame} listed twice")));
        }
    }
    if !header {
        return Err(parse_err(1, 1, "empty file".into()));
    }
    Ok(out)
}

/// Lines up a parsed track with numbered mocap frames.
pub fn align_track(frame_ids: &[u64], track: &BTreeMap<u64, Option<Pt3>>) -> Vec<Option<Pt3>> {
    frame_ids.iter().map(|id| track.get(id).copied().flatten()).collect()
}

/// Marker grid spanning the whole frame, pressed by `touches` one frame at a
/// time, with the unpressed grid as frame 0. The indenter sits 5 mm above the
/// fabric in the rest frame. `z_noise` is a standard deviation in normalized
/// units added to the heights of pressed frames.
pub fn synthetic_mocap(
    frame: &FrameSpec,
    rows: usize,
    cols: usize,
    touches: &[TouchEvent],
    z_noise: f64,
    seed: u64,
) -> Result<(Vec<MarkerGrid>, Vec<Option<Pt3>>)> {
    if rows < 2 || cols < 2 {
        return Err(EvalError::Config("synthetic grid needs at least 2x2 markers".into()));
    }
    let rest_pts: Vec<Pt2> = (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            Pt2::new(frame.width() * c as f64 / (cols - 1) as f64, frame.height() * r as f64 / (rows - 1) as f64)
        })
        .collect();
    // normalized z is raw z times the mean of the x and y scales
    let z_scale = 0.5 * (1.0 / frame.width() + 1.0 / frame.height());
    let noise = Normal::new(0.0, z_noise / z_scale).map_err(|e| EvalError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let rest = MarkerGrid::new(rows, cols, rest_pts.iter().map(|p| Some(Pt3::new(p.x, p.y, 0.0))).collect())?;
    let mut frames = vec![rest];
    let c = frame.center();
    let mut track = vec![Some(Pt3::new(c.x, c.y, 5.0))];
    for t in touches {
        let positions = rest_pts
            .iter()
            .map(|p| {
                let mut q = deform_point(frame, t, *p)?;
                if z_noise > 0.0 {
                    q.z += noise.sample(&mut rng);
                }
                Ok(Some(q))
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(MarkerGrid::new(rows, cols, positions)?);
        track.push(Some(Pt3::new(t.x, t.y, -t.depth)));
    }
    Ok((frames, track))
}
