//! Multichannel resistance recordings and touch-window detection.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalUnit {
    #[default]
    Ohm,
    Adc,
}

/// Time series of per-sensor readings sharing one clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceStream {
    timestamps: Vec<f64>,
    channels: Vec<Vec<f64>>,
    pub unit: SignalUnit,
}

impl ResistanceStream {
    pub fn new(timestamps: Vec<f64>, channels: Vec<Vec<f64>>, unit: SignalUnit) -> Result<Self> {
        for (i, ch) in channels.iter().enumerate() {
            if ch.len() != timestamps.len() {
                return Err(DatasetError::InvalidStream(format!(
                    "channel {i} has {} samples, clock has {}",
                    ch.len(),
                    timestamps.len()
                )));
            }
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] >= w[0])) {
            return Err(DatasetError::InvalidStream(format!("timestamps decrease at sample {}", i + 1)));
        }
        Ok(Self { timestamps, channels, unit })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    unit: SignalUnit,
}

/// Reads `path`; the unit comes from `path` with a `.toml` extension when
/// that file exists (`unit = "ohm"` or `unit = "adc"`), ohms otherwise.
pub fn read_resistance_csv(path: &Path) -> Result<ResistanceStream> {
    let sidecar = path.with_extension("toml");
    let unit = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar)?;
        toml::from_str::<Sidecar>(&text)
            .map_err(|e| DatasetError::InvalidInput(format!("{}: {e}", sidecar.display())))?
            .unit
    } else {
        SignalUnit::Ohm
    };
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
    parse_resistance_csv(file, unit)
}

/// Parses a `t,s0,s1,...` CSV.
pub fn parse_resistance_csv<R: Read>(input: R, unit: SignalUnit) -> Result<ResistanceStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(DatasetError::Parse { line: 1, column: 1, message: "empty file".into() }),
        Some(r) => r.map_err(csv_error)?,
    };
    let line = header.position().map_or(1, |p| p.line());
    if header.len() < 2 || &header[0] != "t" {
        return Err(DatasetError::Parse { line, column: 1, message: "expected header `t,s0,s1,...`".into() });
    }
    for (i, name) in header.iter().enumerate().skip(1) {
        if name != format!("s{}", i - 1) {
            return Err(DatasetError::Parse { line, column: i + 1, message: format!("expected column s{}", i - 1) });
        }
    }
    let n_channels = header.len() - 1;

    let mut timestamps = Vec::new();
    let mut channels = vec![Vec::new(); n_channels];
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != n_channels + 1 {
            return Err(DatasetError::Parse {
                line,
                column: record.len().min(n_channels + 1) + 1,
                message: format!("expected {} fields, found {}", n_channels + 1, record.len()),
            });
        }
        let mut values = record.iter().enumerate().map(|(i, v)| match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(DatasetError::Parse { line, column: i + 1, message: format!("cannot parse `{v}` as a number") }),
        });
        let t = values.next().expect("length checked")?;
        if let Some(&prev) = timestamps.last() {
            if t < prev {
                return Err(DatasetError::Parse { line, column: 1, message: format!("timestamp {t} < {prev}") });
            }
        }
        timestamps.push(t);
        for (ch, v) in channels.iter_mut().zip(values) {
            ch.push(v?);
        }
    }
    ResistanceStream::new(timestamps, channels, unit)
}

fn csv_error(e: csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    DatasetError::Parse { line, column: 1, message: e.to_string() }
}

/// A detected press: samples `start..end` and the mean deviation of each
/// channel from its baseline over that span.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchWindow {
    pub start: usize,
    pub end: usize,
    pub mean_delta: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Finds spans where at least one channel leaves its resting band.
///
/// The baseline of each channel is its median and the band half-width is
/// `threshold_sigma` times its median absolute deviation. A window is a run of
/// at least `min_len` consecutive samples with some channel outside its band;
/// it ends at the first sample where every channel is back inside.
pub fn segment_touch_windows(stream: &ResistanceStream, threshold_sigma: f64, min_len: usize) -> Result<Vec<TouchWindow>> {
    if stream.is_empty() || stream.channels.is_empty() {
        return Err(DatasetError::EmptyStream);
    }
    if !(threshold_sigma >= 0.0) || min_len == 0 {
        return Err(DatasetError::InvalidInput(format!(
            "threshold must be >= 0 and min_len >= 1 (got {threshold_sigma}, {min_len})"
        )));
    }
    let bands: Vec<(f64, f64)> = stream
        .channels
        .iter()
        .map(|ch| {
            let mut v = ch.clone();
            let base = median(&mut v);
            let mut dev: Vec<f64> = ch.iter().map(|x| (x - base).abs()).collect();
            (base, threshold_sigma * median(&mut dev))
        })
        .collect();

    let active = |t: usize| stream.channels.iter().zip(&bands).any(|(ch, (base, band))| (ch[t] - base).abs() > *band);

    let mut windows = Vec::new();
    let mut t = 0;
    while t < stream.len() {
        if !active(t) {
            t += 1;
            continue;
        }
        let start = t;
        while t < stream.len() && active(t) {
            t += 1;
        }
        if t - start >= min_len {
            let mean_delta = stream
                .channels
                .iter()
                .zip(&bands)
                .map(|(ch, (base, _))| ch[start..t].iter().map(|x| x - base).sum::<f64>() / (t - start) as f64)
                .collect();
            windows.push(TouchWindow { start, end: t, mean_delta });
        }
    }
    Ok(windows)
}
