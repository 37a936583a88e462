use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coxreg::cli::output::{FitOutput, PointRecord};
use coxreg::space::trapezoid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn coxreg(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coxreg"));
    cmd.args(args).env_remove("COXREG_THREADS");
    if let Some(t) = threads {
        cmd.env("COXREG_THREADS", t.to_string());
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_fit(path: &Path) -> FitOutput {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_tables(dir: &Path, rows: &[(Vec<f64>, Vec<f64>)]) -> (PathBuf, PathBuf) {
    let p = rows[0].0.len();
    let cols: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    let mut ev = format!("replicate_id,t,{}\n", cols.join(","));
    let mut rep = format!("replicate_id,{}\n", cols.join(","));
    for (i, (x, arr)) in rows.iter().enumerate() {
        let xs: Vec<String> = x.iter().map(f64::to_string).collect();
        writeln!(rep, "d{i},{}", xs.join(",")).unwrap();
        for t in arr {
            writeln!(ev, "d{i},{t},{}", xs.join(",")).unwrap();
        }
    }
    let (e, r) = (dir.join("events.csv"), dir.join("replicates.csv"));
    std::fs::write(&e, ev).unwrap();
    std::fs::write(&r, rep).unwrap();
    (e, r)
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&coxreg(&["simulate", "--preset", "lqd-paper", "--n", "100", "--seed", "7", "--out", s(&sim)], None));
    let reps = std::fs::read_to_string(sim.join("replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 101);
    let latent = std::fs::read_to_string(sim.join("latent.csv")).unwrap();
    assert_eq!(latent.lines().next().unwrap().split(',').count(), 2 + 100);

    let fit = dir.path().join("fit.json");
    let out = coxreg(
        &[
            "fit",
            "--events",
            s(&sim.join("events.csv")),
            "--replicates",
            s(&sim.join("replicates.csv")),
            "--window",
            "1",
            "--bandwidth",
            "0.4",
            "--x-grid",
            "0.1:0.9:9",
            "--out",
            s(&fit),
        ],
        None,
    );
    ok(&out);
    assert!(out.stderr.is_empty(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_fit(&fit);
    assert_eq!(doc.points.len(), 9);
    assert_eq!(doc.data.replicates, 100);
    let text = std::fs::read_to_string(&fit).unwrap();
    assert_eq!(serde_json::to_string_pretty(&doc).unwrap() + "\n", text);
    for p in &doc.points {
        let PointRecord::Ok(p) = p else { panic!("{p:?}") };
        assert_eq!(p.quantile.len(), 100);
        assert!((trapezoid(&p.density_grid, &p.density) - 1.0).abs() < 1e-6);
        assert!(p.tau_rel > 0.5 && p.tau_rel < 1.5, "{}", p.tau_rel);
    }
}

#[test]
fn empty_simulation_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&coxreg(&["simulate", "--preset", "truncnorm-paper", "--n", "0", "--out", s(&sim)], None));
    assert_eq!(std::fs::read_to_string(sim.join("events.csv")).unwrap(), "replicate_id,t,x1\n");
    assert_eq!(std::fs::read_to_string(sim.join("replicates.csv")).unwrap(), "replicate_id,x1\n");
}

/// Daily rentals over 24 hours with temperature as covariate.
fn bike_rows(days: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..days)
        .map(|_| {
            let temp: f64 = rng.random_range(-5.0..28.0);
            let rate = 60.0 + 4.0 * temp.max(0.0);
            let n = Poisson::new(rate).unwrap().sample(&mut rng) as usize;
            // peak moves later on warm days
            let peak = 8.0 + 0.3 * temp.clamp(0.0, 25.0);
            let arr = (0..n)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() + rng.random::<f64>() - 1.0;
                    (peak + 5.0 * u).clamp(0.0, 24.0)
                })
                .collect();
            (vec![temp], arr)
        })
        .collect()
}

#[test]
fn bike_style_local_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (e, r) = write_tables(dir.path(), &bike_rows(400));
    let fit = dir.path().join("bike.json");
    ok(&coxreg(
        &[
            "fit", "--events", s(&e), "--replicates", s(&r), "--window", "24", "--bandwidth", "1.5", "--x-grid",
            "-2:24:27", "--out", s(&fit),
        ],
        None,
    ));
    let doc = read_fit(&fit);
    assert_eq!(doc.points.len(), 27);
    let fits: Vec<_> = doc
        .points
        .iter()
        .map(|p| match p {
            PointRecord::Ok(p) => p,
            other => panic!("{other:?}"),
        })
        .collect();
    // warmer days have more rentals and later activity
    assert!(fits[26].tau_rel > fits[0].tau_rel);
    assert!(fits[26].quantile[49] > fits[0].quantile[49] + 3.0);
    for p in fits {
        assert!(p.quantile.iter().all(|&q| (0.0..24.0).contains(&q)));
        assert!((trapezoid(&p.density_grid, &p.density) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn taxi_style_global_fit_matches_group_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rates = [100.0, 130.0, 90.0, 70.0];
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..140)
        .map(|i| {
            let g = i % 4;
            let mut x = vec![0.0; 3];
            if g > 0 {
                x[g - 1] = 1.0;
            }
            let n = Poisson::new(rates[g]).unwrap().sample(&mut rng) as usize;
            let arr = (0..n).map(|_| 24.0 * rng.random::<f64>().powf(1.0 + 0.3 * g as f64)).collect();
            (x, arr)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let (e, r) = write_tables(dir.path(), &rows);
    let fit = dir.path().join("taxi.json");
    ok(&coxreg(
        &[
            "fit", "--events", s(&e), "--replicates", s(&r), "--window", "24", "--mode", "global", "--xs",
            "0,0,0;1,0,0;0,1,0;0,0,1", "--out", s(&fit),
        ],
        None,
    ));
    let doc = read_fit(&fit);
    assert_eq!(doc.points.len(), 4);
    let total: f64 = rows.iter().map(|r| r.1.len() as f64).sum::<f64>() / rows.len() as f64;
    for (g, p) in doc.points.iter().enumerate() {
        let PointRecord::Ok(p) = p else { panic!("{p:?}") };
        let group: Vec<f64> =
            rows.iter().enumerate().filter(|(i, _)| i % 4 == g).map(|(_, r)| r.1.len() as f64).collect();
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        // a saturated indicator design reproduces group means
        assert!((p.tau_rel - mean / total).abs() < 1e-10, "{g}: {} vs {}", p.tau_rel, mean / total);
    }
}

#[test]
fn per_point_failures_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (e, r) = write_tables(dir.path(), &bike_rows(100));
    let fit = dir.path().join("f.json");
    let base = ["fit", "--events", s(&e), "--replicates", s(&r), "--out", s(&fit), "--window", "24"];

    let args: Vec<&str> = base.iter().copied().chain(["--bandwidth", "1.5", "--xs", "10;50"]).collect();
    let out = coxreg(&args, None);
    ok(&out);
    let doc = read_fit(&fit);
    assert!(matches!(doc.points[0], PointRecord::Ok(_)));
    assert!(matches!(&doc.points[1], PointRecord::Error { error, .. } if error.contains("degenerate")));

    let args: Vec<&str> = base.iter().copied().chain(["--bandwidth", "1.5", "--xs", "60;50"]).collect();
    assert_eq!(coxreg(&args, None).status.code(), Some(4));

    let args: Vec<&str> = base.iter().copied().chain(["--xs", "10"]).collect();
    assert_eq!(coxreg(&args, None).status.code(), Some(2));

    let args: Vec<&str> = base.iter().copied().chain(["--bandwidth", "1.5", "--xs", "1,2"]).collect();
    assert_eq!(coxreg(&args, None).status.code(), Some(2));

    let args: Vec<&str> = base[..7].iter().copied().chain(["--bandwidth", "1.5", "--xs", "10", "--window", "12"]).collect();
    let out = coxreg(&args, None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("events.csv:"));

    assert_eq!(coxreg(&["simulate", "--n", "5", "--window", "-1", "--out", s(dir.path())], None).status.code(), Some(2));
    assert_eq!(coxreg(&["evaluate", "--preset", "nope", "--out", s(dir.path())], None).status.code(), Some(2));
    assert_eq!(coxreg(&["bogus"], None).status.code(), Some(2));
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_do_not_depend_on_threads_or_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let mut sims = Vec::new();
    for (k, threads) in [1, 4, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("sim{k}"));
        ok(&coxreg(&["simulate", "--n", "60", "--seed", "3", "--out", s(&out)], Some(threads)));
        sims.push(tree_bytes(&out));
    }
    assert_eq!(sims[0], sims[1]);
    assert_eq!(sims[1], sims[2]);

    let sim = dir.path().join("sim0");
    let mut fits = Vec::new();
    for threads in [1, 4] {
        let out = dir.path().join(format!("fit{threads}.json"));
        ok(&coxreg(
            &[
                "--threads",
                &threads.to_string(),
                "fit",
                "--events",
                s(&sim.join("events.csv")),
                "--replicates",
                s(&sim.join("replicates.csv")),
                "--window",
                "1",
                "--mode",
                "global",
                "--x-grid",
                "0:1:11",
                "--out",
                s(&out),
            ],
            None,
        ));
        fits.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(fits[0], fits[1]);

    let mut evals = Vec::new();
    for threads in [1, 4] {
        let out = dir.path().join(format!("eval{threads}"));
        ok(&coxreg(
            &[
                "evaluate", "--preset", "fig2-desk", "--seed", "1", "--replicates", "3", "--n-values", "50,80",
                "--eval-grid", "6", "--oracle-reps", "40", "--out", s(&out),
            ],
            Some(threads),
        ));
        evals.push(tree_bytes(&out));
    }
    assert_eq!(evals[0], evals[1]);
    let csv = String::from_utf8(evals[0][1].1.clone()).unwrap();
    assert_eq!(csv.lines().count(), 7);
}
