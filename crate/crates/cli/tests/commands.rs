use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sizeshape_cli::commands::{read_truth, Truth};
use sizeshape_cli::io::{dataset_csv, read_dataset};
use sizeshape::FunctionSample;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sizeshape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

const FOURIER_PM1: &str = "\
seed = 11
sim_generator = model
phase_prior = pm1
sim_n = 30
sim_t = 50
sim_sigma2 = 0.1
sim_sigma_c2 = 0.25
fixed_count = 6
random_count = 6
fixed_basis = fourier
random_basis = bspline
";

#[test]
fn simulate_fourier_pm1_shape_and_truth_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("sim.cfg"), FOURIER_PM1);
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(text.lines().all(|l| l.split(',').count() == 31));
    let truth = read_truth(&out.join("truth.json")).unwrap();
    assert_eq!(truth.seed, 11);
    assert_eq!(truth.phases.len(), 30);
    let again: Truth = serde_json::from_str(&serde_json::to_string(&truth).unwrap()).unwrap();
    assert_eq!(again, truth);
    for p in &truth.phases {
        p.to_phase().unwrap();
    }
}

#[test]
fn simulate_minimal_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("sim.cfg"),
        "seed = 1\nsim_generator = model\nsim_n = 1\nsim_t = 2\nsim_sigma2 = 0.1\nsim_sigma_c2 = 0.1\nfixed_count = 2\nrandom_count = 2\nfixed_basis = fourier\nrandom_basis = fourier\n",
    );
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&["simulate", "--config", s(&cfg), "--out", s(&a), "--seed", "5"]);
    run(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "6"]);
    assert_ne!(
        std::fs::read(a.join("dataset.csv")).unwrap(),
        std::fs::read(b.join("dataset.csv")).unwrap()
    );
    assert_eq!(read_truth(&a.join("truth.json")).unwrap().seed, 5);
}

#[test]
fn missing_key_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("sim.cfg"), "seed = 1\nsim_generator = model\nsim_t = 10\n");
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sim_n"));
    assert!(!out.exists());

    let o = run(&["simulate", "--config", s(&dir.path().join("nope.cfg"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn fit_rejects_bad_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("fit.cfg"),
        "seed = 1\ndata = d.csv\niterations = 10\nburn_in = 5\n",
    );
    for body in ["t,x\n0,1\n0.6,2\n0.5,3\n1,4\n", "t,x\n0,1\n0.5,nan\n1,4\n"] {
        write(&dir.path().join("d.csv"), body);
        let out = dir.path().join("out");
        let o = run(&["fit", "--config", s(&cfg), "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
    }
}

fn small_fit_setup(dir: &Path, extra: &str) -> PathBuf {
    let sim = write(
        &dir.join("sim.cfg"),
        "seed = 3\nsim_generator = model\nsim_n = 4\nsim_t = 20\nsim_sigma2 = 0.1\nsim_sigma_c2 = 0.2\nfixed_count = 4\nrandom_count = 4\n",
    );
    assert!(run(&["simulate", "--config", s(&sim), "--out", s(dir)]).status.success());
    write(
        &dir.join("fit.cfg"),
        &format!(
            "seed = 3\ndata = dataset.csv\ndraws = draws.csv\ntruth = truth.json\nfixed_count = 4\nrandom_count = 4\n{extra}"
        ),
    )
}

#[test]
fn fit_row_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fit_setup(dir.path(), "iterations = 3000\nburn_in = 1000\nthin = 100\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["fit", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let draws = std::fs::read(a.join("draws.csv")).unwrap();
    assert_eq!(draws, std::fs::read(b.join("draws.csv")).unwrap());
    let text = String::from_utf8(draws).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 1 + 4 + 2 + 4);
    assert_eq!(files_in(&a), ["acceptance.json", "draws.csv", "proposal.json"]);

    let c = dir.path().join("c");
    let o = run(&["fit", "--config", s(&cfg), "--out", s(&c), "--chains", "2"]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(c.join("draws_chain1.csv")).unwrap(),
        std::fs::read(a.join("draws.csv")).unwrap()
    );
    assert_ne!(
        std::fs::read(c.join("draws_chain1.csv")).unwrap(),
        std::fs::read(c.join("draws_chain2.csv")).unwrap()
    );
}

#[test]
fn fit_pm2_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fit_setup(
        dir.path(),
        "iterations = 2000\nburn_in = 1000\nthin = 10\nphase_prior = pm2\nphase_knots = 5\n",
    );
    assert!(run(&["fit", "--config", s(&cfg), "--out", s(dir.path())]).status.success());
    let header = std::fs::read_to_string(dir.path().join("draws.csv")).unwrap();
    assert!(header.starts_with("iteration,a_1,a_2,a_3,a_4,sigma2,sigma_c2,gamma_1_1,gamma_1_2,gamma_1_3,gamma_2_1"));
    let out = dir.path().join("summary");
    let o = run(&["summarize", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        files_in(&out),
        [
            "delta.json",
            "gamma_bar.csv",
            "mu_summary.csv",
            "sigma2_draws.csv",
            "sigma_c2_draws.csv",
            "trace.csv"
        ]
    );
    let summary = std::fs::read_to_string(out.join("mu_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "t,mean,q2.5,q97.5");
    assert_eq!(summary.lines().count(), 21);

    // Truth equal to the posterior mean gives Δ_μ = 0.
    let mean: Vec<f64> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let mut truth = read_truth(&dir.path().join("truth.json")).unwrap();
    truth.mu = mean;
    let tpath = dir.path().join("self_truth.json");
    std::fs::write(&tpath, serde_json::to_string(&truth).unwrap()).unwrap();
    let out2 = dir.path().join("summary2");
    let o = run(&["summarize", "--config", s(&cfg), "--out", s(&out2), "--truth", s(&tpath)]);
    assert!(o.status.success());
    let delta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("delta.json")).unwrap()).unwrap();
    assert_eq!(delta["delta_mu"].as_f64().unwrap(), 0.0);
}

#[test]
fn summarize_identical_draws_and_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fit_setup(dir.path(), "");
    let row = "0.5,-0.2,0.1,0.3,0.2,0.1,0.1,-0.3,0,0.4";
    let mut text = String::from("iteration,a_1,a_2,a_3,a_4,sigma2,sigma_c2,alpha_1,alpha_2,alpha_3,alpha_4\n");
    for j in 1..=5 {
        text.push_str(&format!("{j},{row}\n"));
    }
    write(&dir.path().join("draws.csv"), &text);
    let out = dir.path().join("s");
    let o = run(&["summarize", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for line in std::fs::read_to_string(out.join("mu_summary.csv")).unwrap().lines().skip(1) {
        let v: Vec<&str> = line.split(',').collect();
        assert_eq!(v[2], v[3]);
    }
    write(&dir.path().join("draws.csv"), "iteration,a_1\n1,0\n");
    let out = dir.path().join("s2");
    let o = run(&["summarize", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

fn fpca_run(dir: &Path, data: &[FunctionSample], times: &[f64], extra: &str) -> PathBuf {
    std::fs::write(dir.join("d.csv"), dataset_csv(times, data)).unwrap();
    let cfg = write(
        &dir.join("fpca.cfg"),
        &format!("data = d.csv\nfpca_family = pm1\nfpca_components = 2\n{extra}"),
    );
    let out = dir.join("out");
    let o = run(&["fpca", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn energy_rows(out: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(out.join("fpca_energy.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn fpca_identical_and_rank_one() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..41).map(|k| k as f64 / 40.0).collect();
    let base: Vec<f64> = times.iter().map(|t| (6.0 * t).sin() + t).collect();
    let out = fpca_run(dir.path(), &vec![FunctionSample::new(base.clone()); 4], &times, "sweep_max = 3\n");
    assert!(energy_rows(&out).iter().all(|r| r[1] == 0.0));
    assert_eq!(
        files_in(&out),
        ["fpca_basis.csv", "fpca_energy.csv", "fpca_mean.csv", "residual_sweep.csv"]
    );

    // Positive constants around a positive flat mean: ∫√γ̇ ≤ 1 makes the
    // identity the best warp, so only amplitude variation is left.
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<FunctionSample> = [0.5, 1.0, 1.5, 0.3, 0.8]
        .iter()
        .map(|c| FunctionSample::new(times.iter().map(|_| *c).collect()))
        .collect();
    let out = fpca_run(dir.path(), &data, &times, "sweep_max = 3\nfpca_iters = 0\n");
    let rows = energy_rows(&out);
    assert!((rows[0][3] - 1.0).abs() < 1e-10, "{:?}", rows[0]);
}

#[test]
fn fpca_sweep_phase_optimized_never_worse() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..61).map(|k| k as f64 / 60.0).collect();
    let data: Vec<FunctionSample> = [0.55, 0.62, 0.7, 0.66]
        .iter()
        .map(|c| {
            FunctionSample::new(
                times
                    .iter()
                    .map(|t| 3.0 * (-5.0 * t).exp() + 1.5 * (-(t - c) * (t - c) / 0.006).exp())
                    .collect(),
            )
        })
        .collect();
    let out = fpca_run(dir.path(), &data, &times, "sweep_max = 12\n");
    let text = std::fs::read_to_string(out.join("residual_sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 13);
    for l in text.lines().skip(1) {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1], "{l}");
    }
    let back = read_dataset(&dir.path().join("d.csv")).unwrap();
    assert_eq!(back.data, data);
}
