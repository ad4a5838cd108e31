//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion
//! (straight to stderr, so the lines show up even when output is
//! captured) and fails if any criterion fails.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use gafvit::clustering::{cosine_distance, EndpointFeature};
use gafvit::engine::{Matrix, ParamStore, Tape};
use gafvit::gaf::{
    encode_matrix, gadf, gadf_from_angles, gasf, gasf_from_angles, normalize_series, reconstruct_from_gasf, to_polar,
    FeatureMatrix,
};
use gafvit::metrics::{confusion, report};
use gafvit::vit::{attention_maps, encode, patchify, PatchMode, TokenSequence, VitConfig, VitParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn gafvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gafvit"))
        .args(args)
        .env_remove("GAFVIT_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = gafvit(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`gafvit {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() < limit_s,
        format!("{what} took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    for _ in 0..1000 {
        let m = rng.random_range(2..=128);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let series: Vec<f64> = (0..m).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let Ok(norm) = normalize_series(&series) else { continue };
        let f = norm.values();
        let (s, d) = (gasf(&norm), gadf(&norm));
        for j in 0..m {
            check(d[(j, j)] == 0.0, "GADF diagonal not zero")?;
            worst[0] = worst[0].max((s[(j, j)] - (2.0 * f[j] * f[j] - 1.0)).abs());
            for k in 0..m {
                check(s[(j, k)] == s[(k, j)], "GASF not symmetric")?;
                check(d[(j, k)] == -d[(k, j)], "GADF not antisymmetric")?;
                check(s[(j, k)].abs() <= 1.0 && d[(j, k)].abs() <= 1.0, "entry outside [-1, 1]")?;
            }
        }
        let angles = to_polar(&norm).angles;
        let (st, dt) = (gasf_from_angles(&angles), gadf_from_angles(&angles));
        for (a, b) in s.as_slice().iter().zip(st.as_slice()).chain(d.as_slice().iter().zip(dt.as_slice())) {
            worst[1] = worst[1].max((a - b).abs());
        }
        let diag: Vec<f64> = (0..m).map(|j| s[(j, j)]).collect();
        let back = reconstruct_from_gasf(&diag).map_err(|e| e.to_string())?;
        for (a, b) in back.values().iter().zip(f) {
            worst[2] = worst[2].max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    let summary = format!(
        "diagonal {:.1e}, algebraic vs trig {:.1e}, round trip {:.1e}, {:.2} s",
        worst[0],
        worst[1],
        worst[2],
        elapsed.as_secs_f64()
    );
    check(worst.iter().all(|&w| w <= 1e-12), format!("error above 1e-12: {summary}"))?;
    within(elapsed, 10.0, "invariant suite")?;
    Ok(summary)
}

fn criterion_2(tmp: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let columns: Vec<Vec<f64>> = (0..3).map(|_| (0..99).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let image = encode_matrix(&FeatureMatrix::from_columns(&columns, &["speed", "accel", "jerk"], 0.1).unwrap())
        .map_err(|e| e.to_string())?;
    check(image.shape() == (99, 99, 6), format!("image shape {:?}", image.shape()))?;
    let strip = VitConfig::reference(99, 6);
    let square = VitConfig {
        patch_mode: PatchMode::Square,
        ..strip.clone()
    };
    let n_strip = patchify(&image, &strip).map_err(|e| e.to_string())?.rows();
    let n_square = patchify(&image, &square).map_err(|e| e.to_string())?.rows();
    check(n_strip == 11 && n_square == 121, format!("{n_strip} strip / {n_square} square patches"))?;

    // The same through the binary: one 99-step trip becomes six 99x99 PGMs.
    let trips = tmp.join("trip.csv");
    let mut csv = String::from("trip_id,t,speed\n");
    for i in 0..99 {
        let _ = std::fmt::Write::write_fmt(&mut csv, format_args!("T1,{:.1},{}\n", i as f64 * 0.1, 5.0 + (i as f64 * 0.2).sin()));
    }
    fs::write(&trips, csv).unwrap();
    let out = tmp.join("images");
    run_ok(&["transform", "--trips", path(&trips), "--trip", "T1", "-o", path(&out)])?;
    let mut pgms: Vec<_> = fs::read_dir(out.join("T1")).unwrap().map(|e| e.unwrap().path()).collect();
    pgms.sort();
    check(pgms.len() == 6, format!("{} images written", pgms.len()))?;
    for p in &pgms {
        let bytes = fs::read(p).unwrap();
        check(
            bytes.starts_with(b"P5\n99 99\n255\n") && bytes.len() == 13 + 99 * 99,
            format!("{} is not a 99x99 PGM", p.display()),
        )?;
    }
    Ok("99x99x6 image, 11 strip and 121 square patches, 6 PGM files".into())
}

fn criterion_3(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let out = tmp.join("gradcheck");
    run_ok(&["gradcheck", "-o", path(&out)])?;
    let elapsed = start.elapsed();
    let checks = read_json(&out.join("gradcheck.json"))?;
    let mut parts = Vec::new();
    for c in checks.as_array().ok_or("gradcheck.json is not a list")? {
        let err = c["max_rel_error"].as_f64().unwrap_or(f64::NAN);
        let tol = c["tolerance"].as_f64().unwrap_or(0.0);
        check(err < tol, format!("{}: {err:e} >= {tol:e}", c["name"]))?;
        parts.push(format!("{:.1e}", err));
    }
    let attention = &checks[2];
    check(
        attention["name"].as_str().is_some_and(|n| n.contains("attention")) && attention["tolerance"] == 1e-4,
        "attention-only check missing",
    )?;
    within(elapsed, 60.0, "gradient check")?;
    Ok(format!("max relative errors [{}], {:.1} s", parts.join(", "), elapsed.as_secs_f64()))
}

fn criterion_4() -> Outcome {
    let config = VitConfig {
        image_h: 8,
        image_w: 8,
        channels: 2,
        patch_mode: PatchMode::StripRows,
        patch_size: 2,
        embed_dim: 8,
        depth: 2,
        heads: 2,
        mlp_dim: 16,
        num_classes: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new(4);
    let params = VitParams::register(&mut store, &config, &mut rng).unwrap();
    let tokens = |rng: &mut ChaCha8Rng, rows: usize| {
        Matrix::from_vec(rows, 8, (0..rows * 8).map(|_| rng.random_range(-2.0..2.0)).collect())
    };

    let mut worst_row = 0.0f64;
    for _ in 0..50 {
        let z = TokenSequence(tokens(&mut rng, 5));
        for block in &params.blocks {
            for map in attention_maps(&z, &store, block, config.heads).unwrap() {
                for r in 0..map.rows() {
                    worst_row = worst_row.max((map.row(r).iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    check(worst_row <= 1e-9, format!("softmax row sum off by {worst_row:e}"))?;

    let mut worst_ln = 0.0f64;
    for _ in 0..50 {
        let mut tape = Tape::new();
        let x = tape.constant(tokens(&mut rng, 5));
        let g = tape.constant(Matrix::filled(1, 8, 1.0));
        let b = tape.constant(Matrix::zeros(1, 8));
        let y = tape.layer_norm(x, g, b);
        let y = tape.value(y);
        for r in 0..y.rows() {
            let mean = y.row(r).iter().sum::<f64>() / 8.0;
            let var = y.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            worst_ln = worst_ln.max(mean.abs()).max((var - 1.0).abs());
        }
    }
    check(worst_ln <= 1e-6, format!("layer norm off by {worst_ln:e}"))?;

    let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.starts_with("vit.block")).map(|(id, _)| id).collect();
    for id in ids {
        store.value_mut(id).scale_in_place(0.0);
    }
    let z0 = TokenSequence(tokens(&mut rng, config.num_patches() + 1));
    let z = encode(&z0, &store, &params, config.heads).unwrap();
    check(z == z0, "zero-weight encoder changed its input")?;
    Ok(format!("softmax rows {worst_row:.1e}, layer norm {worst_ln:.1e}, zero encoder exact"))
}

fn criterion_5(tmp: &Path) -> Outcome {
    let ep = |v: &[f64]| EndpointFeature::new(v.to_vec()).unwrap();
    let units = [
        cosine_distance(&ep(&[2.0, 1.0, 0.5]), &ep(&[2.0, 1.0, 0.5])),
        cosine_distance(&ep(&[1.0, 0.0]), &ep(&[0.0, 1.0])),
        cosine_distance(&ep(&[1.0, 0.0]), &ep(&[-1.0, 0.0])),
    ]
    .map(|d| d.unwrap());
    check(units == [0.0, 0.5, 1.0], format!("unit distances {units:?}"))?;

    let start = Instant::now();
    let data = tmp.join("cluster_data");
    let out = tmp.join("cluster_out");
    run_ok(&["synth", "--counts", "100,100,100,100", "--seed", "5", "-o", path(&data)])?;
    run_ok(&["cluster", "--data", path(&data), "-o", path(&out)])?;
    let elapsed = start.elapsed();
    let info = read_json(&out.join("clusters.json"))?;
    let k = info["clusters"].as_u64().unwrap_or(0);
    let agreement = info["agreement_with_input_labels"].as_f64().unwrap_or(0.0);
    let theta = info["threshold"].as_f64().unwrap_or(f64::NAN);
    check(k == 4, format!("elbow threshold {theta} gives {k} clusters"))?;
    check(agreement >= 0.95, format!("agreement {agreement:.4}"))?;
    within(elapsed, 30.0, "clustering")?;
    Ok(format!(
        "threshold {theta}, {k} clusters, agreement {agreement:.4}, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

/// One full synth → train → eval run; returns (history, checkpoint,
/// metrics, training time).
fn end_to_end(tmp: &Path, data: &Path, tag: &str) -> Result<(Vec<u8>, Vec<u8>, Value, Duration), String> {
    let run = tmp.join(format!("train_{tag}"));
    let eval = tmp.join(format!("eval_{tag}"));
    let start = Instant::now();
    run_ok(&["train", "--data", path(data), "--seed", "7", "--threads", "1", "-o", path(&run)])?;
    let elapsed = start.elapsed();
    let ck = run.join("model.gvt");
    run_ok(&["eval", "--checkpoint", path(&ck), "--data", path(data), "-o", path(&eval)])?;
    let history = fs::read(run.join("history.csv")).map_err(|e| e.to_string())?;
    let checkpoint = fs::read(&ck).map_err(|e| e.to_string())?;
    Ok((history, checkpoint, read_json(&eval.join("metrics.json"))?, elapsed))
}

fn val_losses(history: &[u8]) -> Vec<f64> {
    String::from_utf8_lossy(history)
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(3)?.parse().ok())
        .collect()
}

/// Kendall's tau of the series against time.
fn kendall_tau(x: &[f64]) -> f64 {
    let mut s = 0i64;
    let mut pairs = 0i64;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            s += (x[j] - x[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            pairs += 1;
        }
    }
    s as f64 / pairs.max(1) as f64
}

fn criterion_6(first: &Result<(Vec<u8>, Vec<u8>, Value, Duration), String>) -> Outcome {
    let (history, _, metrics, elapsed) = first.as_ref().map_err(Clone::clone)?;
    let accuracy = metrics["accuracy"].as_f64().unwrap_or(0.0);
    let f1 = metrics["macro"]["f1"].as_f64().unwrap_or(0.0);
    let losses = val_losses(history);
    check(losses.len() >= 10, format!("only {} epochs recorded", losses.len()))?;
    let tau = kendall_tau(&losses[..10]);
    let summary = format!(
        "test accuracy {accuracy:.4}, macro F1 {f1:.4}, val loss {:.4} -> {:.4} over epochs 1-10 (tau {tau:.2}), training {:.0} s",
        losses[0],
        losses[9],
        elapsed.as_secs_f64()
    );
    check(accuracy >= 0.90 && f1 >= 0.85, format!("targets missed: {summary}"))?;
    check(tau <= -0.6 && losses[9] < losses[0], format!("no decreasing trend: {summary}"))?;
    within(*elapsed, 1800.0, "training")?;
    Ok(summary)
}

fn criterion_8(
    first: &Result<(Vec<u8>, Vec<u8>, Value, Duration), String>,
    second: &Result<(Vec<u8>, Vec<u8>, Value, Duration), String>,
) -> Outcome {
    let (h1, c1, _, _) = first.as_ref().map_err(Clone::clone)?;
    let (h2, c2, _, _) = second.as_ref().map_err(Clone::clone)?;
    check(h1 == h2, "history CSV differs between runs")?;
    check(c1 == c2, "checkpoint differs between runs")?;
    Ok(format!("history ({} bytes) and checkpoint ({} bytes) identical", h1.len(), c1.len()))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=150);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let r = report(&confusion(&truth, &pred, k).unwrap()).unwrap();
        for c in &r.per_class {
            let count = |f: &dyn Fn(usize, usize) -> bool| truth.iter().zip(&pred).filter(|(&t, &p)| f(t, p)).count() as u64;
            let k = c.class;
            let expect = (
                count(&|t, p| t == k && p == k),
                count(&|t, p| t != k && p == k),
                count(&|t, p| t == k && p != k),
                count(&|t, p| t != k && p != k),
            );
            check((c.tp, c.fp, c.fn_, c.tn) == expect, format!("case {case} class {k} counts differ"))?;
            if c.precision > 0.0 && c.recall > 0.0 {
                let h = 2.0 * c.precision * c.recall / (c.precision + c.recall);
                check(c.f1 == h, format!("case {case} class {k}: F1 {} vs {h}", c.f1))?;
            }
        }
    }
    Ok("100 random cases match the brute-force counter".into())
}

fn criterion_9(tmp: &Path, data: &Path) -> Outcome {
    let mut parts = Vec::new();
    for flag in ["--no-attention", "--no-gaf"] {
        let run = tmp.join(format!("ablation{flag}"));
        let eval = tmp.join(format!("ablation_eval{flag}"));
        run_ok(&["train", "--data", path(data), flag, "--epochs", "2", "--seed", "7", "-o", path(&run)])?;
        run_ok(&["eval", "--checkpoint", path(&run.join("model.gvt")), "--data", path(data), "-o", path(&eval)])?;
        let m = read_json(&eval.join("metrics.json"))?;
        let acc = m["accuracy"].as_f64().ok_or("metrics.json has no accuracy")?;
        parts.push(format!("{flag} accuracy {acc:.3}"));
    }
    Ok(format!("{} (2 epochs each)", parts.join(", ")))
}

fn report_line(n: usize, outcome: &Outcome) {
    let line = match outcome {
        Ok(msg) => format!("criterion {n}: PASS  {msg}\n"),
        Err(msg) => format!("criterion {n}: FAIL  {msg}\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let tmp = tmp.path();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |n: usize, outcome: Outcome| {
        report_line(n, &outcome);
        results.push((n, outcome));
    };

    record(1, criterion_1());
    record(2, criterion_2(tmp));
    record(3, criterion_3(tmp));
    record(4, criterion_4());
    record(5, criterion_5(tmp));

    let data = tmp.join("synthetic");
    let synth = run_ok(&["synth", "--counts", "250,250,250,250", "--seed", "7", "-o", path(&data)]);
    let first = synth.and_then(|_| end_to_end(tmp, &data, "a"));
    record(6, criterion_6(&first));
    record(7, criterion_7());
    let second = end_to_end(tmp, &data, "b");
    record(8, criterion_8(&first, &second));
    record(9, criterion_9(tmp, &data));

    let failed: Vec<usize> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
