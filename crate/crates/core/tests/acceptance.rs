//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bordertouch::evaluation::{
    run_depth_classification, run_localization, run_sweep, synthetic_mocap, validate_surface_model, ExperimentConfig,
};
use bordertouch::geometry::{deform_z, ray_border_intersection, FrameSpec, Pt2, TouchEvent};
use bordertouch::models::{fit, gradient_check, ForestParams, MlpParams, MlpTask, Model, ModelSpec, Targets};
use bordertouch::sensing::{measure_stretch, Arrangement, ArrangementSpec, SensorSegment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// Independent tent evaluation: scale p - t until it meets the border.
fn tent_z(w: f64, h: f64, t: Pt2, d: f64, p: Pt2) -> f64 {
    let (dx, dy) = (p.x - t.x, p.y - t.y);
    if dx.abs() < 1e-15 && dy.abs() < 1e-15 {
        return -d;
    }
    let mut s = f64::INFINITY;
    if dx > 0.0 {
        s = s.min((w - t.x) / dx);
    }
    if dx < 0.0 {
        s = s.min(-t.x / dx);
    }
    if dy > 0.0 {
        s = s.min((h - t.y) / dy);
    }
    if dy < 0.0 {
        s = s.min(-t.y / dy);
    }
    -d * (1.0 - 1.0 / s)
}

fn random_touch(rng: &mut ChaCha8Rng, frame: &FrameSpec, d_max: f64) -> TouchEvent {
    let a = frame.touch_area();
    TouchEvent::new(rng.random_range(a.min_x..=a.max_x), rng.random_range(a.min_y..=a.max_y), rng.random_range(0.0..=d_max))
}

fn random_point(rng: &mut ChaCha8Rng, frame: &FrameSpec) -> Pt2 {
    Pt2::new(rng.random_range(0.0..=frame.width()), rng.random_range(0.0..=frame.height()))
}

fn c1_geometry() -> Check {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let w = rng.random_range(50.0..250.0);
        let h = rng.random_range(50.0..250.0);
        let frame = FrameSpec::centered(w, h, 0.64 * w, 0.64 * h).map_err(|e| e.to_string())?;
        let t = random_touch(&mut rng, &frame, 25.0);
        let z = |p: Pt2| deform_z(&frame, &t, p).map_err(|e| e.to_string());
        let mut err = |got: f64, want: f64, what: &str| -> Result<(), String> {
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= TOL, || format!("case {case}: {what}: {got} vs {want}"))
        };

        // border stays fixed
        let s = rng.random_range(0.0..1.0);
        for b in [Pt2::new(s * w, 0.0), Pt2::new(s * w, h), Pt2::new(0.0, s * h), Pt2::new(w, s * h)] {
            err(z(b)?, 0.0, "border")?;
        }
        err(z(t.position())?, -t.depth, "apex")?;

        let p = random_point(&mut rng, &frame);
        let zp = z(p)?;
        ensure(zp <= TOL && zp >= -t.depth - TOL, || format!("case {case}: z {zp} outside [-{}, 0]", t.depth))?;
        err(zp, tent_z(w, h, t.position(), t.depth, p), "oracle")?;

        // affine along the apex-border ray through p
        if (p - t.position()).norm() > 1e-6 {
            let b = ray_border_intersection(&frame, t.position(), p).map_err(|e| e.to_string())?;
            let lam = rng.random_range(0.0..=1.0);
            err(z(t.position() + (b - t.position()) * lam)?, -t.depth * (1.0 - lam), "ray")?;
        }

        // mirror symmetry about both center lines
        let mx = deform_z(&frame, &TouchEvent::new(w - t.x, t.y, t.depth), Pt2::new(w - p.x, p.y)).map_err(|e| e.to_string())?;
        let my = deform_z(&frame, &TouchEvent::new(t.x, h - t.y, t.depth), Pt2::new(p.x, h - p.y)).map_err(|e| e.to_string())?;
        err(mx, zp, "mirror x")?;
        err(my, zp, "mirror y")?;
    }
    Ok(format!("1000 cases, max deviation {worst:.1e} mm"))
}

fn random_segment(rng: &mut ChaCha8Rng, frame: &FrameSpec) -> SensorSegment {
    loop {
        let (a, b) = (random_point(rng, frame), random_point(rng, frame));
        if (a - b).norm() > 1.0 {
            return SensorSegment::new(0, a, b).expect("valid segment");
        }
    }
}

fn c2_stretch() -> Check {
    let frame = FrameSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let st = |t: &TouchEvent, s: &SensorSegment, k: usize| measure_stretch(&frame, t, s, k).map_err(|e| e.to_string());
    let border = ArrangementSpec::border(3, 20.0, 2.0).build(&frame).map_err(|e| e.to_string())?;

    let mut min_ratio = f64::INFINITY;
    for _ in 0..1000 {
        let t = random_touch(&mut rng, &frame, 25.0);
        let s = random_segment(&mut rng, &frame);
        for k in [2, 16, 64] {
            let r = st(&t, &s, k)?;
            min_ratio = min_ratio.min(r);
            ensure(r >= 1.0, || format!("ratio {r} < 1"))?;
        }
        let flat = TouchEvent::new(t.x, t.y, 0.0);
        ensure(st(&flat, &s, 16)? == 1.0, || "ratio != 1 at depth 0".into())?;
    }

    for i in 0..100 {
        let mut d = [rng.random_range(0.0..25.0), rng.random_range(0.0..25.0), rng.random_range(0.0..25.0)];
        d.sort_by(f64::total_cmp);
        let base = random_touch(&mut rng, &frame, 0.0);
        let s = if i % 2 == 0 { random_segment(&mut rng, &frame) } else { border.sensors()[i % border.len()] };
        let r: Vec<f64> = d.iter().map(|&d| st(&TouchEvent::new(base.x, base.y, d), &s, 16)).collect::<Result<_, _>>()?;
        ensure(r[0] <= r[1] && r[1] <= r[2], || format!("triple {i}: {r:?} not monotone for depths {d:?}"))?;
    }

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = random_touch(&mut rng, &frame, 25.0);
        let s = if rng.random_bool(0.5) { random_segment(&mut rng, &frame) } else { border.sensors()[rng.random_range(0..12)] };
        worst = worst.max((st(&t, &s, 64)? - st(&t, &s, 1024)?).abs());
    }
    ensure(worst <= 1e-4, || format!("K=64 vs K=1024 differ by {worst:e}"))?;
    Ok(format!("min ratio {min_ratio:.9}, 100 monotone triples, K=64 vs 1024 max diff {worst:.1e}"))
}

fn c3_gradients() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        for task in [MlpTask::Regression, MlpTask::Classification] {
            let e = gradient_check(&[3, 5, 5, 2], task, 8, seed);
            ensure(e <= 1e-4, || format!("seed {seed} {task:?}: relative error {e:e}"))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("20 seeds x 2 losses on 3-5-5-2, max relative error {worst:.1e}"))
}

fn c4_oracle_gate() -> Check {
    let mut c = ExperimentConfig::example(42);
    c.localization.depths = vec![20.0];
    c.localization.n_samples = 2500;
    c.localization.n_train = Some(2000);
    c.localization.noise.sigma = 0.0;
    c.localization.models = vec![ModelSpec::Mlp(MlpParams::default()), ModelSpec::Forest(ForestParams::default())];
    let r = run_localization(&c).map_err(|e| e.to_string())?;
    ensure(r.n_train == 2000 && r.n_test == 500 && r.n_sensors == 12, || "wrong split or arrangement".into())?;
    let oracle = r.oracle.mae;
    let mut parts = vec![format!("knn {oracle:.3} mm")];
    for name in ["mlp", "forest"] {
        let mae = r.model(name).and_then(|m| m.localization()).ok_or(format!("{name} missing"))?.mae;
        parts.push(format!("{name} {mae:.3} mm"));
        ensure(mae <= 3.0 * oracle, || format!("{name} MAE {mae} > 3 x oracle {oracle}"))?;
        ensure(mae <= 2.5, || format!("{name} MAE {mae} > 2.5 mm"))?;
    }
    Ok(parts.join(", "))
}

fn c5_classification() -> Check {
    let mut c = ExperimentConfig::example(42);
    c.classification.noise.sigma = 0.0;
    let clean = run_depth_classification(&c).map_err(|e| e.to_string())?;
    ensure(clean.n_train == 997 && clean.n_test == 499, || "wrong split".into())?;
    let knn = clean.oracle.accuracy;
    let mlp = clean.model("mlp").and_then(|m| m.classification()).ok_or("mlp missing")?.accuracy;
    ensure(knn >= 0.99, || format!("noiseless knn accuracy {knn} < 0.99"))?;
    ensure(mlp >= 0.95, || format!("noiseless mlp accuracy {mlp} < 0.95"))?;

    c.calibration.target_accuracy = Some(0.83);
    let noisy = run_depth_classification(&c).map_err(|e| e.to_string())?;
    let cal = noisy.calibration.as_ref().ok_or("no calibration record")?;
    let acc = noisy.model("mlp").and_then(|m| m.classification()).ok_or("mlp missing")?.accuracy;
    ensure((0.75..=0.95).contains(&acc), || format!("calibrated mlp accuracy {acc} outside [0.75, 0.95]"))?;
    Ok(format!(
        "noiseless knn {knn:.3}, mlp {mlp:.3}; calibrated sigma {:.4} (search mean {:.3}) -> mlp {acc:.3}",
        cal.sigma, cal.accuracy
    ))
}

fn c6_monotonicity() -> Check {
    let names = ["cross-4", "border-6", "border-12"];
    let mut sums = [0.0; 3];
    for seed in 1..=5u64 {
        let mut c = ExperimentConfig::example(seed);
        c.arrangements = vec![
            ArrangementSpec::Cross { arm_len_mm: 30.0 },
            ArrangementSpec::BorderEdges { counts: [2, 1, 2, 1], patch_len_mm: 20.0, inset_mm: 2.0 },
            ArrangementSpec::border(3, 20.0, 2.0),
        ];
        c.localization.models = vec![ModelSpec::Forest(ForestParams::default())];
        let r = run_sweep(&c, None).map_err(|e| e.to_string())?;
        for (i, n) in names.iter().enumerate() {
            sums[i] += r.mae(n, "forest").ok_or(format!("no forest row for {n}"))?;
        }
    }
    let m = sums.map(|s| s / 5.0);
    let summary = format!("mean forest MAE cross-4 {:.3}, border-6 {:.3}, border-12 {:.3} mm", m[0], m[1], m[2]);
    ensure(m[0] > m[1] && m[1] >= m[2], || summary.clone())?;
    Ok(summary)
}

fn c7_surface() -> Check {
    let frame = FrameSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let touches: Vec<TouchEvent> = (0..60).map(|_| random_touch(&mut rng, &frame, 25.0)).map(|t| TouchEvent { depth: 5.0 + t.depth * 0.8, ..t }).collect();
    let (frames, track) = synthetic_mocap(&frame, 9, 9, &touches, 0.0, 0).map_err(|e| e.to_string())?;
    let clean = validate_surface_model(&frames, &track, 0).map_err(|e| e.to_string())?.overall_rms;
    ensure(clean <= 1e-12, || format!("noiseless RMS {clean:e}"))?;
    let (frames, track) = synthetic_mocap(&frame, 9, 9, &touches, 0.017, 77).map_err(|e| e.to_string())?;
    let noisy = validate_surface_model(&frames, &track, 0).map_err(|e| e.to_string())?.overall_rms;
    ensure((noisy - 0.017).abs() <= 0.0017, || format!("noisy RMS {noisy} not within 10% of 0.017"))?;
    Ok(format!("noiseless RMS {clean:.1e}, injected 0.017 -> {noisy:.5}"))
}

const DETERMINISM_CONFIG: &str = r#"
seed = 8

[[arrangements]]
kind = "border"
n_per_side = 3

[[arrangements]]
kind = "cross"
arm_len_mm = 30

[localization]
n_samples = 900

[classification]
n_samples = 600
n_train = 400
"#;

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bordertouch"));
    c.env_remove("BORDERTOUCH_OUT");
    c
}

fn c8_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("experiment.toml");
    std::fs::write(&cfg, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    for cmd in ["sweep", "classify", "localize"] {
        let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("{cmd}-{i}"))).collect();
        for out in &runs {
            let o = bin().args([cmd, "--config"]).arg(&cfg).arg("--output-dir").arg(out).output().map_err(|e| e.to_string())?;
            ensure(o.status.success(), || format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)))?;
        }
        let files = files_under(&runs[0]);
        ensure(!files.is_empty() && files == files_under(&runs[1]), || format!("{cmd}: different file sets"))?;
        for f in &files {
            let a = std::fs::read(runs[0].join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(runs[1].join(f)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{cmd}: {} differs between runs", f.display()))?;
        }
        checked.push(format!("{cmd} ({} files)", files.len()));
    }
    Ok(format!("byte-identical reruns: {}", checked.join(", ")))
}

fn mutate(rng: &mut ChaCha8Rng, lines: &mut [String], first_data: usize, kinds: usize, mocap: bool) -> usize {
    // returns the 1-based line that must be reported
    loop {
        let idx = rng.random_range(first_data..lines.len());
        let mut fields: Vec<String> = lines[idx].split(',').map(String::from).collect();
        let n = fields.len();
        match rng.random_range(0..kinds) {
            0 => fields[rng.random_range(0..n)] = "abc".into(),
            1 => {
                fields.pop();
            }
            2 => fields.push("7".into()),
            3 => {
                let k = if mocap { rng.random_range(3..n) } else { rng.random_range(0..n) };
                fields[k] = ["nan", "inf", "-inf", "1e999"][rng.random_range(0..4)].into();
            }
            4 if mocap => fields[1] = "99".into(),
            4 => {
                if idx == first_data {
                    continue;
                }
                fields[0] = "-1".into();
            }
            5 if mocap => {
                if idx == first_data {
                    continue;
                }
                fields = lines[idx - 1].split(',').map(String::from).collect();
            }
            5 => fields[rng.random_range(1..n)] = String::new(),
            _ => {
                // x blank with y, z present
                fields[3] = String::new();
            }
        }
        lines[idx] = fields.join(",");
        return idx + 1;
    }
}

fn c9_round_trips() -> Check {
    let frame = FrameSpec::default();
    for spec in [
        ArrangementSpec::border(3, 20.0, 2.0),
        ArrangementSpec::BorderEdges { counts: [2, 1, 2, 1], patch_len_mm: 20.0, inset_mm: 2.0 },
        ArrangementSpec::Cross { arm_len_mm: 30.0 },
        ArrangementSpec::Chords { n: 6 },
    ] {
        let a = spec.build(&frame).map_err(|e| e.to_string())?;
        let text = a.to_json(&frame);
        let (b, _) = Arrangement::from_json(&text).map_err(|e| e.to_string())?;
        ensure(b == a && b.to_json(&frame) == text, || format!("{} is not a fixpoint", a.name()))?;
    }

    let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 / 40.0]).collect();
    let reg = Targets::Regression(x.iter().map(|r| vec![r[0] * r[1], r[2]]).collect());
    let cls = Targets::Classes { labels: (0..40).map(|i| i % 3).collect(), n_classes: 3 };
    let specs = [
        ModelSpec::Linear {},
        ModelSpec::Polynomial { degree: 3 },
        ModelSpec::Forest(ForestParams { n_trees: 5, ..ForestParams::default() }),
        ModelSpec::Mlp(MlpParams { hidden: vec![8, 4], epochs: 5, ..MlpParams::default() }),
    ];
    let mut n_models = 0;
    for targets in [&reg, &cls] {
        for spec in &specs {
            if matches!(targets, Targets::Classes { .. }) && matches!(spec, ModelSpec::Linear {} | ModelSpec::Polynomial { .. }) {
                continue;
            }
            let m = fit(spec, &x, targets, 3).map_err(|e| e.to_string())?;
            let text = m.to_json();
            let loaded = Model::from_json(&text).map_err(|e| e.to_string())?;
            let again = Model::from_json(&loaded.to_json()).map_err(|e| e.to_string())?;
            ensure(loaded.to_json() == text && again == loaded, || format!("{} is not a fixpoint", spec.name()))?;
            n_models += 1;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut mocap = vec!["frame,row,col,x,y,z".to_string()];
    for f in 0..4 {
        for r in 0..3 {
            for c in 0..3 {
                let z = if f > 0 && r == 1 && c == 1 { -(f as f64) } else { 0.0 };
                mocap.push(format!("{f},{r},{c},{},{},{z}", 10.0 * c as f64 + 0.1 * f as f64, 10.0 * r as f64));
            }
        }
    }
    let mut resistance = vec!["t,s0,s1,s2".to_string()];
    for i in 0..40 {
        resistance.push(format!("{},{},{},{}", i as f64 * 0.01, 100.0 + (i % 3) as f64, 200.0, 300.0 - (i % 2) as f64));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100 {
        let is_mocap = case % 2 == 0;
        let mut lines = if is_mocap { mocap.clone() } else { resistance.clone() };
        let line = mutate(&mut rng, &mut lines, 1, if is_mocap { 7 } else { 6 }, is_mocap);
        let path = dir.path().join(format!("case{case}.csv"));
        std::fs::write(&path, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
        let o = if is_mocap {
            bin().args(["ingest-mocap", "--rows", "3", "--cols", "3", "--input"]).arg(&path).output()
        } else {
            bin().args(["ingest-resistance", "--input"]).arg(&path).output()
        }
        .map_err(|e| e.to_string())?;
        let stderr = String::from_utf8_lossy(&o.stderr);
        ensure(o.status.code() == Some(2), || format!("case {case}: exit {:?}: {stderr}", o.status.code()))?;
        ensure(stderr.contains(&format!("line {line},")), || format!("case {case}: expected line {line}: {stderr}"))?;
        ensure(o.stdout.is_empty(), || format!("case {case}: wrote results despite the error"))?;
    }
    Ok(format!("4 arrangements, {n_models} models round-trip; 100 mutated CSVs rejected at the right line with exit 2"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("geometry invariants", Duration::from_secs(5), c1_geometry),
        ("stretch properties", Duration::from_secs(10), c2_stretch),
        ("mlp gradient check", Duration::from_secs(10), c3_gradients),
        ("localization oracle gate", Duration::from_secs(300), c4_oracle_gate),
        ("depth classification", Duration::from_secs(300), c5_classification),
        ("arrangement monotonicity", Duration::from_secs(600), c6_monotonicity),
        ("surface validation self-test", Duration::from_secs(30), c7_surface),
        ("determinism", Duration::from_secs(600), c8_determinism),
        ("round-trips and ingestion fuzz", Duration::from_secs(600), c9_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > *budget => Err(format!("{d}; took {took:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {id}. {name}: {detail} ({:.1}s)", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id}. {name}: {why} ({:.1}s)", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
