//! Motion-capture marker grids: CSV ingestion and normalization to the unit
//! cube of the rest frame.
//!
//! CSV layout: header `frame,row,col,x,y,z`, one marker per line, millimeters.
//! A marker that was not tracked leaves `x`, `y` and `z` empty.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{DatasetError, Result};
use crate::geometry::{MarkerGrid, Pt3};

const MOCAP_HEADER: [&str; 6] = ["frame", "row", "col", "x", "y", "z"];

pub fn ingest_mocap_csv(path: &Path, rows: usize, cols: usize) -> Result<Vec<(u64, MarkerGrid)>> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
    parse_mocap_frames(file, rows, cols)
}

/// Parses marker records into one grid per frame, ordered by frame number.
pub fn parse_mocap_csv<R: Read>(input: R, rows: usize, cols: usize) -> Result<Vec<MarkerGrid>> {
    Ok(parse_mocap_frames(input, rows, cols)?.into_iter().map(|(_, g)| g).collect())
}

/// Like `parse_mocap_csv`, keeping each grid's frame number.
#[allow(clippy::type_complexity)]
pub fn parse_mocap_frames<R: Read>(input: R, rows: usize, cols: usize) -> Result<Vec<(u64, MarkerGrid)>> {
    if rows == 0 || cols == 0 {
        return Err(DatasetError::InvalidInput(format!("grid must be at least 1x1, got {rows}x{cols}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    // per frame: one slot per marker (outer None = not listed yet) and a fill count
    let mut frames: BTreeMap<u64, (Vec<Option<Option<Pt3>>>, usize)> = BTreeMap::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            if record.iter().ne(MOCAP_HEADER.iter().copied()) {
                return Err(DatasetError::Parse {
                    line,
                    column: 1,
                    message: format!("expected header `{}`", MOCAP_HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if record.len() != MOCAP_HEADER.len() {
            return Err(DatasetError::Parse {
                line,
                column: record.len().min(MOCAP_HEADER.len()) + 1,
                message: format!("expected 6 fields, found {}", record.len()),
            });
        }
        let frame: u64 = parse_field(&record, 0, line)?;
        let row: usize = parse_field(&record, 1, line)?;
        let col: usize = parse_field(&record, 2, line)?;
        if row >= rows || col >= cols {
            let column = if row >= rows { 2 } else { 3 };
            return Err(DatasetError::Parse {
                line,
                column,
                message: format!("marker ({row}, {col}) outside the {rows}x{cols} grid"),
            });
        }
        let coords: Vec<&str> = (3..6).map(|i| &record[i]).collect();
        let position = if coords.iter().all(|c| c.is_empty()) {
            None
        } else {
            let x: f64 = parse_coord(&record, 3, line)?;
            let y: f64 = parse_coord(&record, 4, line)?;
            let z: f64 = parse_coord(&record, 5, line)?;
            Some(Pt3::new(x, y, z))
        };

        let (slots, count) = frames.entry(frame).or_insert_with(|| (vec![None; rows * cols], 0));
        let slot = &mut slots[row * cols + col];
        if slot.is_some() {
            return Err(DatasetError::Parse {
                line,
                column: 2,
                message: format!("marker ({row}, {col}) appears twice in frame {frame}"),
            });
        }
        *slot = Some(position);
        *count += 1;
    }
    if !saw_header {
        return Err(DatasetError::Parse { line: 1, column: 1, message: "empty file".into() });
    }
    if frames.is_empty() {
        return Err(DatasetError::Parse { line: 2, column: 1, message: "no marker records".into() });
    }

    frames
        .into_iter()
        .map(|(frame, (slots, count))| {
            if count != rows * cols {
                return Err(DatasetError::GridMismatch { frame, expected: rows * cols, found: count });
            }
            let positions = slots.into_iter().map(|s| s.expect("all slots filled")).collect();
            Ok((frame, MarkerGrid::new(rows, cols, positions)?))
        })
        .collect()
}

fn csv_error(e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    DatasetError::Parse { line, column: 1, message: e.to_string() }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    record[i].parse().map_err(|_| DatasetError::Parse {
        line,
        column: i + 1,
        message: format!("cannot parse `{}` as {}", &record[i], MOCAP_HEADER[i]),
    })
}

fn parse_coord(record: &csv::StringRecord, i: usize, line: u64) -> Result<f64> {
    let v: f64 = parse_field(record, i, line)?;
    if !v.is_finite() {
        return Err(DatasetError::Parse { line, column: i + 1, message: format!("non-finite {}", MOCAP_HEADER[i]) });
    }
    Ok(v)
}

/// Rigid alignment plus per-axis scaling that maps the rest frame onto the
/// unit square (x, y) with the fabric plane at z = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTransform {
    /// Rows are the in-plane column axis, in-plane row axis and plane normal.
    pub rotation: Matrix3<f64>,
    pub centroid: Vector3<f64>,
    pub offset: Vector3<f64>,
    pub scale: Vector3<f64>,
}

impl UnitTransform {
    pub fn apply(&self, p: &Pt3) -> Pt3 {
        let q = self.rotation * (p.coords - self.centroid) - self.offset;
        Pt3::from(q.component_mul(&self.scale))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFrames {
    pub frames: Vec<MarkerGrid>,
    pub transform: UnitTransform,
}

/// Expresses every frame in the coordinate system of the rest frame.
///
/// A least-squares plane through the rest markers gives the normal; the
/// in-plane x axis follows increasing grid columns and y follows increasing
/// rows. x and y are scaled so the rest markers span `[0, 1]`; z uses the
/// mean of the two scales so heights stay commensurate with lengths.
pub fn normalize_frames(frames: &[MarkerGrid], rest_index: usize) -> Result<NormalizedFrames> {
    let rest = frames
        .get(rest_index)
        .ok_or_else(|| DatasetError::InvalidInput(format!("rest frame {rest_index} out of range")))?;
    let transform = fit_unit_transform(rest)?;
    let frames = frames
        .iter()
        .map(|g| MarkerGrid {
            rows: g.rows,
            cols: g.cols,
            positions: g.positions.iter().map(|p| p.map(|p| transform.apply(&p))).collect(),
        })
        .collect();
    Ok(NormalizedFrames { frames, transform })
}

fn fit_unit_transform(rest: &MarkerGrid) -> Result<UnitTransform> {
    let pts: Vec<(usize, usize, Vector3<f64>)> = rest.valid().map(|(r, c, p)| (r, c, p.coords)).collect();
    if pts.len() < 3 {
        return Err(DatasetError::DegenerateRestFrame(format!("{} valid markers, need 3", pts.len())));
    }
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Vector3::zeros(), |acc, (_, _, p)| acc + p) / n;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, (_, _, p)| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || l2 <= 1e-12 * l1 {
        return Err(DatasetError::DegenerateRestFrame("valid markers are collinear".into()));
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[2]).into_owned();

    // position ~ base + col * step_col + row * step_row
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Matrix3::<f64>::zeros();
    for (r, c, p) in &pts {
        let a = Vector3::new(1.0, *c as f64, *r as f64);
        ata += a * a.transpose();
        atb += a * p.transpose();
    }
    let steps = ata
        .cholesky()
        .ok_or_else(|| DatasetError::DegenerateRestFrame("marker grid indices are collinear".into()))?
        .solve(&atb);
    let step_col: Vector3<f64> = steps.row(1).transpose();
    let step_row: Vector3<f64> = steps.row(2).transpose();

    let in_plane = step_col - normal * step_col.dot(&normal);
    if in_plane.norm() <= 1e-12 * step_col.norm().max(f64::MIN_POSITIVE) {
        return Err(DatasetError::DegenerateRestFrame("grid columns are parallel to the plane normal".into()));
    }
    let u = in_plane.normalize();
    let mut v = normal.cross(&u);
    if v.dot(&step_row) < 0.0 {
        normal = -normal;
        v = -v;
    }
    let rotation = Matrix3::from_rows(&[u.transpose(), v.transpose(), normal.transpose()]);

    let rotated: Vec<Vector3<f64>> = pts.iter().map(|(_, _, p)| rotation * (p - centroid)).collect();
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for q in &rotated {
        lo = lo.inf(q);
        hi = hi.sup(q);
    }
    let (span_x, span_y) = (hi.x - lo.x, hi.y - lo.y);
    if !(span_x > 0.0 && span_y > 0.0) {
        return Err(DatasetError::DegenerateRestFrame("rest markers have no planar extent".into()));
    }
    let (sx, sy) = (1.0 / span_x, 1.0 / span_y);
    Ok(UnitTransform {
        rotation,
        centroid,
        offset: Vector3::new(lo.x, lo.y, 0.0),
        scale: Vector3::new(sx, sy, 0.5 * (sx + sy)),
    })
}

/// Distance between two markers in every frame, relative to the rest frame.
/// Frames where either marker is missing yield `None`.
pub fn marker_pair_stretch(frames: &[MarkerGrid], rest_index: usize, pair: (usize, usize)) -> Result<Vec<Option<f64>>> {
    let rest = frames
        .get(rest_index)
        .ok_or_else(|| DatasetError::InvalidInput(format!("rest frame {rest_index} out of range")))?;
    let (i, j) = pair;
    let n = rest.positions.len();
    if i >= n || j >= n {
        return Err(DatasetError::InvalidInput(format!("marker index out of range (grid has {n})")));
    }
    let (Some(a), Some(b)) = (rest.positions[i], rest.positions[j]) else {
        return Err(DatasetError::InvalidInput(format!("marker {i} or {j} is missing in the rest frame")));
    };
    let rest_len = (b - a).norm();
    if !(rest_len > 0.0) {
        return Err(DatasetError::InvalidInput(format!("markers {i} and {j} coincide at rest")));
    }
    Ok(frames
        .iter()
        .map(|g| match (g.positions.get(i).copied().flatten(), g.positions.get(j).copied().flatten()) {
            (Some(p), Some(q)) => Some((q - p).norm() / rest_len),
            _ => None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};

    fn grid_csv(rows: usize, cols: usize, frames: usize, blank: &[(usize, usize)]) -> String {
        let mut s = String::from("frame,row,col,x,y,z\n");
        for f in 0..frames {
            for r in 0..rows {
                for c in 0..cols {
                    if blank.contains(&(r, c)) {
                        s += &format!("{f},{r},{c},,,\n");
                    } else {
                        s += &format!("{f},{r},{c},{},{},{}\n", c as f64 * 10.0, r as f64 * 10.0, f as f64);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(parse_mocap_csv("".as_bytes(), 7, 7), Err(DatasetError::Parse { line: 1, .. })));
    }

    #[test]
    fn full_grid_one_frame() {
        let grids = parse_mocap_csv(grid_csv(7, 7, 1, &[]).as_bytes(), 7, 7).unwrap();
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0].valid_count(), 49);
    }

    #[test]
    fn blank_markers_are_masked() {
        let grids = parse_mocap_csv(grid_csv(7, 7, 2, &[(0, 0), (3, 4), (6, 6)]).as_bytes(), 7, 7).unwrap();
        assert_eq!(grids.len(), 2);
        assert_eq!(grids[1].mask().data.iter().filter(|v| !**v).count(), 3);
    }

    #[test]
    fn malformed_rows_report_line_and_column() {
        let mut text = grid_csv(2, 2, 1, &[]);
        text = text.replace("1,1,10,10,0", "1,1,10,1x0,0");
        match parse_mocap_csv(text.as_bytes(), 2, 2) {
            Err(DatasetError::Parse { line, column, .. }) => assert_eq!((line, column), (5, 5)),
            other => panic!("{other:?}"),
        }
        let partial = "frame,row,col,x,y,z\n0,0,0,1,,3\n";
        assert!(matches!(parse_mocap_csv(partial.as_bytes(), 1, 1), Err(DatasetError::Parse { line: 2, .. })));
        let short = "frame,row,col,x,y,z\n0,0,0,1,2\n";
        assert!(matches!(parse_mocap_csv(short.as_bytes(), 1, 1), Err(DatasetError::Parse { line: 2, column: 6, .. })));
        let header = "frame,row,x,y,z\n";
        assert!(matches!(parse_mocap_csv(header.as_bytes(), 1, 1), Err(DatasetError::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_markers_are_grid_mismatch() {
        let text = "frame,row,col,x,y,z\n0,0,0,1,2,3\n";
        assert!(matches!(
            parse_mocap_csv(text.as_bytes(), 2, 2),
            Err(DatasetError::GridMismatch { frame: 0, expected: 4, found: 1 })
        ));
    }

    fn rest_grid(rows: usize, cols: usize) -> MarkerGrid {
        let positions = (0..rows * cols)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                Some(Pt3::new(10.0 + 20.0 * c as f64, 5.0 + 15.0 * r as f64, 3.0))
            })
            .collect();
        MarkerGrid::new(rows, cols, positions).unwrap()
    }

    fn transformed(g: &MarkerGrid, f: impl Fn(&Pt3) -> Pt3) -> MarkerGrid {
        MarkerGrid { rows: g.rows, cols: g.cols, positions: g.positions.iter().map(|p| p.map(|p| f(&p))).collect() }
    }

    fn assert_close(a: &MarkerGrid, b: &MarkerGrid, tol: f64) {
        for (p, q) in a.positions.iter().zip(&b.positions) {
            match (p, q) {
                (Some(p), Some(q)) => assert!((p - q).norm() < tol, "{p} vs {q}"),
                (None, None) => {}
                _ => panic!("mask differs"),
            }
        }
    }

    #[test]
    fn rest_frame_maps_to_unit_square() {
        let rest = rest_grid(7, 7);
        let n = normalize_frames(&[rest], 0).unwrap();
        for (r, c, p) in n.frames[0].valid() {
            assert!((p.x - c as f64 / 6.0).abs() < 1e-12);
            assert!((p.y - r as f64 / 6.0).abs() < 1e-12);
            assert!(p.z.abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_under_translation_and_rotation() {
        let rest = rest_grid(5, 6);
        let mut pressed = rest.clone();
        pressed.positions[14] = pressed.positions[14].map(|p| Pt3::new(p.x, p.y, p.z - 8.0));
        pressed.positions[3] = None;
        let base = normalize_frames(&[rest.clone(), pressed.clone()], 0).unwrap();

        let shift = |p: &Pt3| Pt3::new(p.x + 100.0, p.y + 100.0, p.z + 100.0);
        let moved = normalize_frames(&[transformed(&rest, shift), transformed(&pressed, shift)], 0).unwrap();
        for (a, b) in base.frames.iter().zip(&moved.frames) {
            assert_close(a, b, 1e-9);
        }

        // 90 degrees about the plane normal, then an arbitrary tilt and scaling
        let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let tilt = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, -2.0, 0.5)), 0.7);
        let rigid = |p: &Pt3| Pt3::from((tilt * spin * p.coords) * 2.5 + Vector3::new(-40.0, 12.0, 7.0));
        let turned = normalize_frames(&[transformed(&rest, rigid), transformed(&pressed, rigid)], 0).unwrap();
        for (a, b) in base.frames.iter().zip(&turned.frames) {
            assert_close(a, b, 1e-9);
        }
    }

    #[test]
    fn degenerate_rest_frames() {
        let mut line = rest_grid(1, 5);
        assert!(matches!(normalize_frames(&[line.clone()], 0), Err(DatasetError::DegenerateRestFrame(_))));
        line.positions.truncate(2);
        line.cols = 2;
        assert!(matches!(normalize_frames(&[line], 0), Err(DatasetError::DegenerateRestFrame(_))));
    }

    #[test]
    fn pair_stretch_basics() {
        let rest = rest_grid(3, 3);
        let mut moved = rest.clone();
        moved.positions[1] = moved.positions[1].map(|p| Pt3::new(p.x, p.y, p.z - 15.0));
        let mut masked = rest.clone();
        masked.positions[0] = None;
        let s = marker_pair_stretch(&[rest, moved, masked], 0, (0, 1)).unwrap();
        assert_eq!(s[0], Some(1.0));
        assert!((s[1].unwrap() - (20.0f64.powi(2) + 15.0f64.powi(2)).sqrt() / 20.0).abs() < 1e-12);
        assert_eq!(s[2], None);
    }
}
