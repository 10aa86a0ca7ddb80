//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line;
//! the test fails afterwards if any of them did.

mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use common::{gradient_errors, perturb_coordinate_heads};
use naepro::evalgen::{bench_graphs, evaluate, transform_deviation};
use naepro::fragments::mine_fragments;
use naepro::geometry::{dist, RigidTransform, CA_STEP};
use naepro::io::checkpoint::{checkpoint_from_str, checkpoint_to_string, save_checkpoint};
use naepro::io::fasta::parse_aligned_fasta_str;
use naepro::io::records::{parse_records_str, records_to_string, write_records, ProteinRecord};
use naepro::layers::Variant;
use naepro::model::{Model, ModelConfig};
use naepro::synthetic::random_record;
use naepro::training::{anneal_fraction, fit, literal_anneal_value, prepare, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

/// Writes past the test harness's output capture so the verdicts show up
/// in a plain `cargo test` log.
fn say(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

fn model(config: ModelConfig) -> Model {
    Model::new(config).unwrap()
}

fn certification() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_c, mut worst_p) = (0.0f64, 0.0f64);
    for variant in Variant::ALL {
        for trial in 0..20 {
            let n = [8, 32][trial % 2];
            let layers = [1, 3][(trial / 2) % 2];
            let mut m = model(ModelConfig {
                layers,
                d_model: 32,
                heads: 4,
                variant,
                seed: rng.gen(),
                ..ModelConfig::default()
            });
            perturb_coordinate_heads(&mut m, 0.05, &mut rng);
            let r = random_record("t", n, rng.gen_range(0..=n / 2), &mut rng);
            let t = RigidTransform::random(&mut rng, trial % 4 < 2);
            let dev = transform_deviation(&m, &r, &t, rng.gen()).map_err(|e| e.to_string())?;
            ensure(dev.coords <= 1e-7 && dev.probs <= 1e-8, || {
                format!("{variant} trial {trial} (N={n}, L={layers}): {dev:?}")
            })?;
            worst_c = worst_c.max(dev.coords);
            worst_p = worst_p.max(dev.probs);
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "100 trials, worst coords {worst_c:.1e}, probs {worst_p:.1e}, {:.1?}",
        start.elapsed()
    ))
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut m = model(ModelConfig {
        layers: 2,
        d_model: 8,
        heads: 2,
        k: 3,
        seed: 7,
        ..ModelConfig::default()
    });
    perturb_coordinate_heads(&mut m, 0.05, &mut rng);
    let r = random_record("g", 6, 2, &mut rng);
    let ex = prepare(&m, &r, 0.0, 1, 0, 0).map_err(|e| e.to_string())?;
    let checks = gradient_errors(&m, &ex, 1e-5);
    let mut worst = 0.0f64;
    for g in &checks {
        ensure(g.passes(1e-4), || {
            format!("{}: relative {:.2e} (|fd| {:.1e})", g.name, g.relative(), g.fd_norm)
        })?;
        if g.analytic_norm >= 1e-12 {
            worst = worst.max(g.relative());
        }
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!("{} tensors, worst relative {worst:.1e}", checks.len()))
}

fn knn_matches_complete_graph() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (n, k) in [(8, 7), (12, 30), (20, 19)] {
        let mut base = model(ModelConfig {
            layers: 2,
            d_model: 16,
            heads: 4,
            k,
            seed: rng.gen(),
            ..ModelConfig::default()
        });
        perturb_coordinate_heads(&mut base, 0.05, &mut rng);
        let mut full = base.clone();
        full.config.variant = Variant::NoKnn;
        let r = random_record("k", n, 3, &mut rng);
        let seed = rng.gen();
        let a = base.predict(&r, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = full.predict(&r, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        ensure(a.logits == b.logits && a.coords == b.coords, || {
            format!("N={n}, k={k}: outputs differ")
        })?;
    }
    Ok("bit-identical at (N, k) = (8, 7), (12, 30), (20, 19)".into())
}

fn overfit_records() -> Vec<ProteinRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..4).map(|i| random_record(format!("p{i}"), 20, 6, &mut rng)).collect()
}

/// Trains on the four records (also used as validation so the kept model
/// is the one fitting them best) and returns (recovery, rmsd, steps).
fn overfit_run(d_model: usize, fixed_layouts: bool) -> Result<(f64, f64, u64), String> {
    let data = overfit_records();
    let config = TrainConfig {
        epochs: 2000,
        batch_size: 4,
        learning_rate: 5e-4,
        fixed_layouts,
        ..TrainConfig::default()
    };
    let m = model(ModelConfig {
        layers: 3,
        d_model,
        heads: 4,
        k: 10,
        freeze_fragments: true,
        seed: 1,
        ..ModelConfig::default()
    });
    let out = fit(m, &data, &data, &config, |_| {}).map_err(|e| e.to_string())?;
    let steps = out.log.last().unwrap().steps;
    let report = evaluate(&out.best, &data, config.seed).map_err(|e| e.to_string())?;
    Ok((
        report.recovery.unwrap().mean,
        report.rmsd.unwrap().mean,
        steps,
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let (recovery, rmsd, steps) = overfit_run(48, true)?;
    let elapsed = start.elapsed();
    let detail = format!("recovery {recovery:.1}%, RMSD {rmsd:.3} A after {steps} steps, {elapsed:.1?}");
    ensure(steps <= 2000, || format!("{steps} steps"))?;
    ensure(recovery >= 95.0 && rmsd <= 0.5, || detail.clone())?;
    within(start, Duration::from_secs(600))?;
    Ok(detail)
}

fn annealing() -> Outcome {
    let c = TrainConfig::default();
    let mut prev = f64::INFINITY;
    for e in 1..=12usize {
        let f = anneal_fraction(e, &c);
        let expect = if e > 10 { 0.0 } else { 0.85 * (10 - e) as f64 / 10.0 };
        ensure((f - expect).abs() < 1e-15, || format!("epoch {e}: {f} vs {expect}"))?;
        ensure(f <= prev, || format!("increase at epoch {e}"))?;
        prev = f;
    }
    let lit = TrainConfig {
        anneal_literal: true,
        ..TrainConfig::default()
    };
    for e in 1..=10usize {
        let printed = 0.85 * (10.0 - e as f64) / e as f64;
        let v = literal_anneal_value(e, &lit);
        ensure((v - printed).abs() < 1e-12, || format!("literal epoch {e}: {v}"))?;
        ensure(anneal_fraction(e, &lit) == printed.clamp(0.0, 1.0), || {
            format!("literal fraction at epoch {e}")
        })?;
    }
    Ok("epochs 1..12 match 0.85(10-e)/10 then 0; literal form reproduced".into())
}

fn mining() -> Outcome {
    let parse = |rows: &[&str]| {
        let text: String = rows
            .iter()
            .enumerate()
            .map(|(i, r)| format!(">r{}\n{r}\n", i + 1))
            .collect();
        parse_aligned_fasta_str(&text).unwrap()
    };
    // Column identities 50, 100, 50, 100, 25.
    let a = parse(&["MK-LV", "MKALI", "TKAL-", "SKGLW"]);
    let expected: [(f64, [&[usize]; 4]); 5] = [
        (0.0, [&[1, 2, 3, 4], &[1, 2, 3, 4, 5], &[1, 2, 3, 4], &[1, 2, 3, 4, 5]]),
        (18.0, [&[1, 2, 3, 4], &[1, 2, 3, 4, 5], &[1, 2, 3, 4], &[1, 2, 3, 4, 5]]),
        (30.0, [&[1, 2, 3], &[1, 2, 3, 4], &[1, 2, 3, 4], &[1, 2, 3, 4]]),
        (50.0, [&[2, 3], &[2, 4], &[2, 4], &[2, 4]]),
        (100.0, [&[], &[], &[], &[]]),
    ];
    let mut previous: Option<Vec<Vec<usize>>> = None;
    for (tau, rows) in expected {
        let m = mine_fragments(&a, tau).map_err(|e| e.to_string())?;
        let got: Vec<Vec<usize>> = m.fragments.values().cloned().collect();
        let want: Vec<Vec<usize>> = rows.iter().map(|r| r.to_vec()).collect();
        ensure(got == want, || format!("tau {tau}: {got:?}"))?;
        if let Some(prev) = &previous {
            ensure(got.iter().zip(prev).all(|(g, p)| g.iter().all(|i| p.contains(i))), || {
                format!("tau {tau} is not a subset of the lower threshold")
            })?;
        }
        previous = Some(got);
    }
    let small = mine_fragments(&parse(&["AC-D", "ACGD", "ACGD"]), 30.0).map_err(|e| e.to_string())?;
    ensure(
        small.fragments["r1"] == [1, 2, 3] && small.fragments["r2"] == [1, 2, 3, 4],
        || format!("{:?}", small.fragments),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let letters = b"ACDEFGHIKL-";
    for _ in 0..20 {
        let rows: Vec<String> = (0..6)
            .map(|_| (0..15).map(|_| letters[rng.gen_range(0..letters.len())] as char).collect())
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let al = parse(&refs);
        let sets: Vec<_> = [0.0, 18.0, 30.0, 50.0, 100.0]
            .iter()
            .map(|&t| mine_fragments(&al, t).unwrap().fragments)
            .collect();
        for w in sets.windows(2) {
            for (id, hi) in &w[1] {
                ensure(hi.iter().all(|i| w[0][id].contains(i)), || format!("random alignment, row {id}"))?;
            }
        }
    }
    Ok("fixture sets exact at tau 0/18/30/50/100; nested on 20 random alignments".into())
}

fn efficiency() -> Outcome {
    let report = bench_graphs(&[(500, 30)], 16, 5, 11).map_err(|e| e.to_string())?;
    let sparse = report.find(500, 30, Variant::Default).ok_or("no kNN entry")?;
    let full = report.find(500, 30, Variant::NoKnn).ok_or("no complete-graph entry")?;
    ensure(sparse.runs_s.len() >= 5 && full.runs_s.len() >= 5, || "fewer than 5 runs".into())?;
    ensure(sparse.edges == 500 * 30 && full.edges == 500 * 499, || {
        format!("edges {} and {}", sparse.edges, full.edges)
    })?;
    let detail = format!(
        "median {:.4}s (kNN, {} edges) vs {:.4}s (complete, {} edges)",
        sparse.median_s, sparse.edges, full.median_s, full.edges
    );
    ensure(sparse.median_s < full.median_s, || detail.clone())?;
    Ok(detail)
}

fn spherical_init() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = model(ModelConfig {
        layers: 1,
        d_model: 8,
        heads: 2,
        ..ModelConfig::default()
    });
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for trial in 0..200 {
        let n = rng.gen_range(1..60);
        let r = random_record("s", n, rng.gen_range(0..=n), &mut rng);
        let frags = r.fragment_positions();
        let x = m.initial_coordinates(&r, &frags, &mut rng).map_err(|e| e.to_string())?;
        for i in 0..n {
            if frags.contains(&i) {
                ensure(x[i] == r.coords[i], || format!("trial {trial}: fragment {i} moved"))?;
                continue;
            }
            let prev = if i == 0 { [0.0; 3] } else { x[i - 1] };
            worst = worst.max((dist(&prev, &x[i]) - CA_STEP).abs());
            pairs += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("step error {worst:e}"))?;
    Ok(format!("{pairs} generated steps, worst |d - 3.75| {worst:.1e}; fragments bit-exact"))
}

fn naepro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_naepro"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let records: Vec<_> = (0..10)
        .map(|i| random_record(format!("rec{i}"), rng.gen_range(10..16), 3, &mut rng))
        .collect();
    let data = dir.join("data.jsonl");
    write_records(&data, &records).unwrap();
    data
}

fn log_without_clock(text: &str) -> Vec<Value> {
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_s");
            v
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "layers = 2\nd_model = 8\nheads = 2\nk = 4\nepochs = 4\nbatch_size = 3\nseed = 5\n").unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = naepro(&["train", "--data", path(&data), "--config", path(&config), "--out", path(&out)]);
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        runs.push((
            std::fs::read_to_string(out.join("log.jsonl")).unwrap(),
            std::fs::read(out.join("checkpoint.json")).unwrap(),
            std::fs::read(out.join("split.json")).unwrap(),
        ));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let log = log_without_clock(&a.0);
    ensure(log.len() == 4, || format!("{} log lines", log.len()))?;
    ensure(log == log_without_clock(&b.0), || "logs differ".into())?;
    ensure(a.1 == b.1, || "checkpoints differ".into())?;
    ensure(a.2 == b.2, || "splits differ".into())?;
    Ok(format!("2 runs: identical {}-epoch logs, checkpoints ({} bytes) and splits", log.len(), a.1.len()))
}

fn single_error_line(o: &Output) -> Result<(), String> {
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().collect();
    ensure(
        lines.len() == 1 && lines[0].starts_with("error[") && lines[0].contains("]: "),
        || format!("stderr was {err:?}"),
    )
}

fn round_trips_and_exit_codes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let records: Vec<_> = (0..5)
        .map(|i| random_record(format!("x{i}"), rng.gen_range(3..30), 2, &mut rng))
        .collect();
    let text = records_to_string(&records).map_err(|e| e.to_string())?;
    let back = parse_records_str(&text).map_err(|e| e.to_string())?;
    ensure(back == records, || "record round trip changed values".into())?;
    ensure(records_to_string(&back).unwrap() == text, || "record text not stable".into())?;

    let mut m = model(ModelConfig {
        layers: 2,
        d_model: 8,
        heads: 2,
        k: 4,
        variant: Variant::NoGate,
        seed: 3,
        ..ModelConfig::default()
    });
    perturb_coordinate_heads(&mut m, 0.3, &mut rng);
    let restored = checkpoint_from_str(&checkpoint_to_string(&m).unwrap()).map_err(|e| e.to_string())?;
    ensure(restored.config == m.config, || "config changed".into())?;
    let same = restored.params.tensors().iter().zip(m.params.tensors()).all(|(a, b)| {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    ensure(same, || "checkpoint parameters changed".into())?;

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d);
    let ckpt = d.join("model.json");
    save_checkpoint(&m, &ckpt).unwrap();
    let garbage = d.join("garbage.json");
    std::fs::write(&garbage, "{\"version\": 1").unwrap();
    let ragged = d.join("ragged.fasta");
    std::fs::write(&ragged, ">a\nACD\n>b\nAC\n").unwrap();
    let bad_config = d.join("bad.toml");
    std::fs::write(&bad_config, "layerz = 3\n").unwrap();
    let missing = d.join("missing.jsonl");
    let out = d.join("out");

    let runtime: Vec<(&str, Vec<&str>)> = vec![
        ("train", vec!["train", "--data", path(&missing), "--out", path(&out)]),
        ("train", vec!["train", "--data", path(&data), "--config", path(&bad_config), "--out", path(&out)]),
        ("init", vec!["init", "--config", path(&bad_config), "--out", path(&out)]),
        ("generate", vec!["generate", "--checkpoint", path(&garbage), "--input", path(&data), "--out", path(&out)]),
        ("generate", vec!["generate", "--checkpoint", path(&ckpt), "--input", path(&ragged), "--out", path(&out)]),
        ("mine-fragments", vec!["mine-fragments", "--msa", path(&ragged), "--tau", "30", "--out", path(&out)]),
        ("mine-fragments", vec!["mine-fragments", "--msa", path(&missing), "--tau", "30", "--out", path(&out)]),
        ("check-equivariance", vec!["check-equivariance", "--checkpoint", path(&missing)]),
        ("check-equivariance", vec!["check-equivariance", "--checkpoint", path(&ckpt), "--trials", "0"]),
        ("eval", vec!["eval", "--checkpoint", path(&ckpt), "--data", path(&garbage), "--out", path(&out)]),
        ("bench", vec!["bench", "--grid", "500:x", "--out", path(&out)]),
        ("bench", vec!["bench", "--grid", "50:30", "--repetitions", "1", "--out", path(&out)]),
    ];
    let mut seen = std::collections::BTreeSet::new();
    for (sub, args) in &runtime {
        let o = naepro(args);
        ensure(o.status.code() == Some(1), || format!("{sub}: exit {:?}", o.status.code()))?;
        single_error_line(&o).map_err(|e| format!("{sub}: {e}"))?;
        seen.insert(*sub);
    }
    let usage: [&[&str]; 4] = [
        &["frobnicate"],
        &["train", "--bogus"],
        &["mine-fragments", "--msa", "x", "--tau", "high", "--out", "y"],
        &["eval", "--checkpoint", "a", "--data", "b", "--out", "c", "--format", "xml"],
    ];
    for args in usage {
        let o = naepro(args);
        ensure(o.status.code() == Some(2), || format!("{args:?}: exit {:?}", o.status.code()))?;
    }
    ensure(!out.exists(), || "a failing command left output behind".into())?;
    Ok(format!(
        "records and checkpoint round-trip bit-exactly; {} runtime failures over {} subcommands exit 1, 4 usage errors exit 2",
        runtime.len(),
        seen.len()
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("equivariance certification", certification),
        ("gradient oracle", gradient_oracle),
        ("kNN equals complete graph when k >= N-1", knn_matches_complete_graph),
        ("overfit four proteins", overfit),
        ("annealing schedule", annealing),
        ("fragment mining", mining),
        ("kNN faster than complete graph", efficiency),
        ("spherical initialization", spherical_init),
        ("deterministic training", determinism),
        ("round trips and exit codes", round_trips_and_exit_codes),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => say(format!("PASS {:>2} {name}: {detail}", i + 1)),
            Err(why) => {
                say(format!("FAIL {:>2} {name}: {why}", i + 1));
                failed.push(i + 1);
            }
        }
    }

    // Not a criterion: the same run with a fresh layout every epoch, the
    // default policy. Printed so the gap stays visible.
    match overfit_run(48, false) {
        Ok((rec, rmsd, steps)) => say(format!(
            "INFO    overfit with per-epoch layouts: recovery {rec:.1}%, RMSD {rmsd:.3} A after {steps} steps"
        )),
        Err(e) => say(format!("INFO    overfit with per-epoch layouts failed: {e}")),
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
