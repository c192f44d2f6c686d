use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BENCHMARK: &str = "\
[model]
name = linear1d
[run]
dt = 0.01
t_end = 5
[filter]
n_particles = 1000
gain = exact_gaussian
[seeds]
truth = 1
obs = 2
filter = 3
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fpf-lab"));
    c.env_remove("FPF_LAB_THREADS");
    c
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: Option<&Path>, obs: Option<&Path>, out: &Path) -> Output {
    let mut c = bin();
    c.args(args).arg("--out").arg(out);
    if let Some(p) = cfg {
        c.arg("--config").arg(p);
    }
    if let Some(p) = obs {
        c.arg("--obs").arg(p);
    }
    c.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn summary(dir: &Path) -> Vec<(String, String)> {
    fs::read_to_string(dir.join("summary.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn lookup(s: &[(String, String)], key: &str) -> f64 {
    s.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no {key}")).1.parse().unwrap()
}

/// Benchmark config plus simulated observations in a fresh directory.
fn benchmark() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "bench.cfg", BENCHMARK);
    let o = run(&["simulate"], Some(&cfg), None, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let obs = dir.path().join("obs.csv");
    (dir, cfg, obs)
}

#[test]
fn simulate_row_counts_and_determinism() {
    let (dir, cfg, obs) = benchmark();
    let truth = dir.path().join("truth.csv");
    assert_eq!(data_rows(&truth).len(), 501);
    assert_eq!(data_rows(&obs).len(), 500);
    assert_eq!(fs::read_to_string(&truth).unwrap().lines().next().unwrap(), "t,x_1");
    assert_eq!(fs::read_to_string(&obs).unwrap().lines().next().unwrap(), "t,y,dz");
    let again = dir.path().join("again");
    let o = run(&["simulate"], Some(&cfg), None, &again);
    assert!(o.status.success());
    assert_eq!(fs::read(&truth).unwrap(), fs::read(again.join("truth.csv")).unwrap());
    assert_eq!(fs::read(&obs).unwrap(), fs::read(again.join("obs.csv")).unwrap());
}

#[test]
fn missing_dt_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[model]\nname = linear1d\n[run]\nt_end = 1\n[seeds]\ntruth = 1\nobs = 2\n");
    let o = run(&["simulate"], Some(&cfg), None, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`dt`"), "{}", stderr(&o));
}

#[test]
fn missing_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[model]\nname = linear1d\n[run]\ndt = 0.1\nt_end = 1\n");
    let o = run(&["simulate"], Some(&cfg), None, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`truth`"), "{}", stderr(&o));
}

#[test]
fn unparsable_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[model\nname = linear1d\n");
    assert_eq!(run(&["simulate"], Some(&cfg), None, dir.path()).status.code(), Some(2));
    let missing = dir.path().join("nope.cfg");
    assert_eq!(run(&["simulate"], Some(&missing), None, dir.path()).status.code(), Some(2));
}

#[test]
fn non_psd_prior_exits_3() {
    let (dir, _, obs) = benchmark();
    let cfg = write_cfg(dir.path(), "c.cfg", &format!("{BENCHMARK}[prior]\ncov = -1\n"));
    let o = run(&["filter"], Some(&cfg), Some(&obs), dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn non_psd_diffusion_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.cfg",
        "[model]\ndim = 2\ndrift = -x1; -x2\nh = x1\ndiffusion_cov = 1, 2; 2, 1\n[run]\ndt = 0.01\nt_end = 1\n[seeds]\ntruth = 1\nobs = 2\n",
    );
    let o = run(&["simulate"], Some(&cfg), None, dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("not PSD"), "{}", stderr(&o));
}

#[test]
fn filter_trace_has_one_row_more_than_obs() {
    let (dir, cfg, obs) = benchmark();
    let o = run(&["filter"], Some(&cfg), Some(&obs), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = dir.path().join("fpf_trace.csv");
    let header = fs::read_to_string(&trace).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,dz,mean_1,cov_11,h_hat,n_flagged");
    let rows = data_rows(&trace);
    assert_eq!(rows.len(), data_rows(&obs).len() + 1);
    assert!(rows.iter().all(|r| r[5] == "0"));
}

#[test]
fn filter_needs_obs() {
    let (dir, cfg, _) = benchmark();
    let o = run(&["filter"], Some(&cfg), None, dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn obs_on_a_different_grid_is_rejected() {
    let (dir, _, obs) = benchmark();
    let cfg = write_cfg(dir.path(), "c.cfg", &BENCHMARK.replace("dt = 0.01", "dt = 0.02"));
    let o = run(&["filter"], Some(&cfg), Some(&obs), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exact_gain_with_nonlinear_h_exits_3() {
    let (dir, _, obs) = benchmark();
    let cfg = write_cfg(dir.path(), "c.cfg", &BENCHMARK.replace("name = linear1d", "name = linear1d\nh = x^3"));
    let o = run(&["filter"], Some(&cfg), Some(&obs), dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("exact solver requires affine h"), "{}", stderr(&o));
}

#[test]
fn galerkin_degree_three_completes_unflagged() {
    let (dir, _, obs) = benchmark();
    let cfg = write_cfg(dir.path(), "c.cfg", &BENCHMARK.replace("gain = exact_gaussian", "gain = galerkin\ndegree = 3"));
    let o = run(&["filter"], Some(&cfg), Some(&obs), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&dir.path().join("fpf_trace.csv"));
    assert_eq!(rows.len(), 501);
    assert!(rows.iter().all(|r| r[5] == "0"));
}

#[test]
fn inadmissible_control_exits_4() {
    let (dir, _, obs) = benchmark();
    // a floor above 1 flags every particle whose map shrinks volume at all
    let text = BENCHMARK.replace("gain = exact_gaussian", "gain = galerkin\ndegree = 2\ndet_floor = 2");
    let cfg = write_cfg(dir.path(), "c.cfg", &text);
    let o = run(&["filter"], Some(&cfg), Some(&obs), dir.path());
    assert_eq!(o.status.code(), Some(4));
    let msg = stderr(&o);
    assert!(msg.contains("step 1") && msg.contains("1000 particle(s) flagged"), "{msg}");
}

#[test]
fn thread_count_does_not_change_output() {
    let (dir, _, obs) = benchmark();
    let cfg = write_cfg(dir.path(), "c.cfg", &BENCHMARK.replace("gain = exact_gaussian", "gain = galerkin\ndegree = 3"));
    let mut outs = Vec::new();
    for threads in ["1", "4", "0"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = bin()
            .env("FPF_LAB_THREADS", threads)
            .args(["filter", "--config"])
            .arg(&cfg)
            .arg("--obs")
            .arg(&obs)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(fs::read(out.join("fpf_trace.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn bad_thread_count_exits_2() {
    let o = bin().env("FPF_LAB_THREADS", "many").args(["verify", "--suite", "taylor"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_benchmark_summary() {
    let (dir, cfg, obs) = benchmark();
    let o = run(&["compare"], Some(&cfg), Some(&obs), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(dir.path());
    let p_star = 2f64.sqrt() - 1.0;
    assert!(lookup(&s, "fpf_mean_rmse_vs_kb") <= 0.15 * p_star.sqrt());
    assert_eq!(lookup(&s, "fpf_flagged_total"), 0.0);
    assert!(lookup(&s, "grid_mean_rmse_vs_kb") < 0.01);
    for g in ["kl", "hellinger", "tv"] {
        assert!(lookup(&s, &format!("fpf_vs_grid_final_{g}")).is_finite());
    }
    let header = fs::read_to_string(dir.path().join("compare.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,fpf_mean,fpf_var,kb_mean,kb_var,bpf_mean,bpf_var,grid_mean,grid_var");
    assert_eq!(data_rows(&dir.path().join("compare.csv")).len(), 501);
    assert_eq!(data_rows(&dir.path().join("divergence.csv")).len(), 3);
}

#[test]
fn constant_h_filters_agree() {
    let (dir, _, obs) = benchmark();
    let cfg = write_cfg(dir.path(), "c.cfg", &BENCHMARK.replace("name = linear1d", "name = linear1d\nh = 2"));
    let o = run(&["compare"], Some(&cfg), Some(&obs), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    // every filter just propagates the prior, so all means sit within
    // Monte Carlo error of the exact one (std ≤ 1, N = 1000)
    for row in data_rows(&dir.path().join("compare.csv")) {
        let v: Vec<f64> = row.iter().map(|s| s.parse().unwrap()).collect();
        let (fpf, kb, bpf, grid) = (v[1], v[3], v[5], v[7]);
        for m in [fpf, bpf, grid] {
            assert!((m - kb).abs() < 0.13, "{row:?}");
        }
    }
}

#[test]
fn compare_without_kalman_reference_in_nonlinear_case() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[model]\nname = cubic-sensor\n[run]\ndt = 0.01\nt_end = 1\nx0 = 0.5\n[prior]\nmean = 0.5\ncov = 0.25\n\
                [filter]\nn_particles = 500\ngain = galerkin\ndegree = 3\n[seeds]\ntruth = 4\nobs = 5\nfilter = 6\n\
                [compare]\ngrid_lo = -4\ngrid_hi = 4\n";
    let cfg = write_cfg(dir.path(), "c.cfg", text);
    assert!(run(&["simulate"], Some(&cfg), None, dir.path()).status.success());
    let o = run(&["compare"], Some(&cfg), Some(&dir.path().join("obs.csv")), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = summary(dir.path());
    assert!(s.iter().all(|(k, _)| !k.contains("kb")));
    assert!(lookup(&s, "fpf_mean_rmse_vs_grid") < 0.15);
}

#[test]
fn verify_piola_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--suite", "piola"], None, None, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&dir.path().join("verify_piola.csv"));
    assert!(rows.len() >= 100);
    assert!(rows.iter().all(|r| r[4] == "true"));
}

#[test]
fn verify_appendix_b_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "v.cfg", "[verify]\nsuite = appendixB\nseed = 9\n");
    let o = run(&["verify"], Some(&cfg), None, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = data_rows(&dir.path().join("verify_appendixB.csv"));
    for id in 1..=8 {
        let name = format!("appendixB-{id}");
        assert_eq!(rows.iter().filter(|r| r[0] == name).count(), 50, "{name}");
    }
}

#[test]
fn verify_unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--suite", "foo"], None, None, dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_command_exits_2() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
