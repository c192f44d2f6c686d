use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fpf_core::divergence::{f_divergence, kde_density, FGenerator};
use fpf_core::fpf::{FeedbackParticleFilter, FilterConfig, FilterTrace, TraceRow};
use fpf_core::grid::GridDensity;
use fpf_core::identity::{run_suite, SUITES};
use fpf_core::io::{fmt_g, read_obs, write_checks, write_divergence, write_obs, write_trace, write_truth};
use fpf_core::reference::{run_bootstrap, run_kalman_bucy, run_kushner, KalmanState};
use fpf_core::sde::{simulate_truth, synthesize_observations, ObservationRecord};
use fpf_core::Ensemble;

use crate::config::{Experiment, RawConfig};
use crate::error::CliError;

fn io_err(path: &Path) -> impl Fn(fpf_core::FpfError) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn output_dir(cli_out: Option<&Path>, exp: Option<&Experiment>) -> Result<PathBuf, CliError> {
    let dir = cli_out
        .map(Path::to_path_buf)
        .or_else(|| exp.and_then(|e| e.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn simulate(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let seeds = exp.seeds(true, false)?;
    let t_end = exp.t_end()?;
    let x0 = exp.x0()?;
    let truth = simulate_truth(&exp.model, &x0, t_end, exp.dt, seeds.truth).map_err(|e| match e {
        fpf_core::FpfError::InvalidArgument(m) => CliError::Config(format!("[run]: {m}")),
        other => CliError::Model(other.to_string()),
    })?;
    let obs = synthesize_observations(&truth, &exp.model, seeds.obs, false);
    let truth_path = out.join("truth.csv");
    let obs_path = out.join("obs.csv");
    write_truth(&truth_path, &truth).map_err(io_err(&truth_path))?;
    write_obs(&obs_path, &obs).map_err(io_err(&obs_path))?;
    Ok(vec![truth_path, obs_path])
}

/// Reads an observation file and checks its time grid against `dt`.
pub fn load_obs(path: Option<&Path>, dt: f64) -> Result<Vec<ObservationRecord<f64>>, CliError> {
    let path = path.ok_or_else(|| CliError::Config("this command needs --obs <path>".into()))?;
    let obs = read_obs(path).map_err(|e| CliError::Config(format!("observations: {e}")))?;
    for (k, o) in obs.iter().enumerate() {
        let expect = (k + 1) as f64 * dt;
        if (o.time - expect).abs() > 1e-9 * expect.max(1.0) {
            return Err(CliError::Config(format!(
                "{}: row {} has t = {} but config dt = {} puts it at {}",
                path.display(),
                k + 1,
                fmt_g(o.time),
                fmt_g(dt),
                fmt_g(expect)
            )));
        }
    }
    Ok(obs)
}

fn filter_config(exp: &Experiment) -> Result<FilterConfig<f64>, CliError> {
    let f = exp.filter()?;
    let seeds = exp.seeds(false, true)?;
    let mut cfg = FilterConfig::new(f.gain, exp.dt, f.n_particles, seeds.filter);
    cfg.abort_on_inadmissible = f.abort_on_inadmissible;
    if let Some(floor) = f.det_floor {
        cfg.det_floor = floor;
    }
    Ok(cfg)
}

/// Runs the particle filter and hands back the trace plus the final ensemble.
fn run_fpf(exp: &Experiment, obs: &[ObservationRecord<f64>]) -> Result<(FilterTrace<f64>, Ensemble), CliError> {
    let cfg = filter_config(exp)?;
    let mut filter = FeedbackParticleFilter::new(exp.model.clone(), cfg, &exp.prior_mean, &exp.prior_cov)
        .map_err(CliError::from_run)?;
    let mut rows = vec![TraceRow::from_stats(0.0, 0.0, &filter.stats(), 0)];
    for o in obs {
        let step = filter.step(o).map_err(CliError::from_run)?;
        rows.push(TraceRow::from_stats(o.time, o.dz, &step.posterior, step.flagged.len()));
    }
    let ens = filter.ensemble().clone();
    Ok((FilterTrace { dim: exp.model.dim(), rows }, ens))
}

pub fn filter(exp: &Experiment, obs_path: Option<&Path>, out: &Path) -> Result<(PathBuf, usize), CliError> {
    let obs = load_obs(obs_path, exp.dt)?;
    let (trace, _) = run_fpf(exp, &obs)?;
    let path = out.join("fpf_trace.csv");
    write_trace(&path, &trace).map_err(io_err(&path))?;
    Ok((path, trace.total_flagged()))
}

fn rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    // the shared prior row is skipped
    for (x, y) in a.iter().zip(b).skip(1) {
        for (u, v) in x.iter().zip(y) {
            s += (u - v) * (u - v);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

struct Column {
    name: &'static str,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

impl Column {
    fn from_trace(name: &'static str, rows: &[TraceRow<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.mean.len());
        Self {
            name,
            mean: rows.iter().map(|r| r.mean.clone()).collect(),
            var: rows.iter().map(|r| (0..d).map(|i| r.cov[(i, i)]).collect()).collect(),
        }
    }
}

pub struct CompareOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn compare(exp: &Experiment, obs_path: Option<&Path>, out: &Path) -> Result<CompareOutput, CliError> {
    let obs = load_obs(obs_path, exp.dt)?;
    let f = exp.filter()?;
    let cmp = exp.compare(f.n_particles)?;
    let seeds = exp.seeds(false, true)?;
    let model = &exp.model;
    let d = model.dim();

    let (trace, ens) = run_fpf(exp, &obs)?;
    let mut cols = vec![Column::from_trace("fpf", &trace.rows)];

    let affine = model.drift.as_linear().is_some() && model.obs.as_affine().is_some();
    if affine {
        let init = KalmanState { mean: exp.prior_mean.clone(), cov: exp.prior_cov.clone() };
        let kb = run_kalman_bucy(model, &obs, exp.dt, init).map_err(CliError::from_run)?;
        cols.push(Column {
            name: "kb",
            mean: kb.iter().map(|(_, s)| s.mean.clone()).collect(),
            var: kb.iter().map(|(_, s)| (0..d).map(|i| s.cov[(i, i)]).collect()).collect(),
        });
    }

    // a stream of its own, so the two particle filters never share draws
    let bpf_seed = seeds.filter.wrapping_add(1);
    let bpf = run_bootstrap(model, &obs, exp.dt, cmp.bootstrap_particles, bpf_seed, &exp.prior_mean, &exp.prior_cov)
        .map_err(CliError::from_run)?;
    cols.push(Column::from_trace("bpf", &bpf));

    let mut divergences = Vec::new();
    if d == 1 {
        let var = exp.prior_cov[(0, 0)];
        let init = GridDensity::gaussian(exp.prior_mean[0], var, cmp.grid_lo, cmp.grid_hi, cmp.grid_n)
            .map_err(|e| CliError::Config(format!("[compare] grid: {e}")))?;
        let (rows, kept) = run_kushner(model, &obs, exp.dt, init, &[obs.len()]).map_err(CliError::from_run)?;
        cols.push(Column {
            name: "grid",
            mean: rows.iter().map(|r| vec![r.1]).collect(),
            var: rows.iter().map(|r| vec![r.2]).collect(),
        });
        let grid = &kept[0];
        let kde = kde_density(&ens, cmp.grid_lo, cmp.grid_hi, cmp.grid_n, None).map_err(CliError::from_run)?;
        let t = obs.last().map_or(0.0, |o| o.time);
        for g in FGenerator::ALL {
            let r = f_divergence(&kde, grid, g).map_err(CliError::from_run)?;
            divergences.push((t, g.name(), r.value));
        }
    }

    let times: Vec<f64> = trace.rows.iter().map(|r| r.t).collect();
    let compare_path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&compare_path).map_err(|e| CliError::Io(e.to_string()))?;
    let mut header = vec!["t".to_string()];
    for c in &cols {
        let dd = c.mean[0].len();
        let suffix = |i: usize| if dd == 1 { String::new() } else { format!("_{}", i + 1) };
        header.extend((0..dd).map(|i| format!("{}_mean{}", c.name, suffix(i))));
        header.extend((0..dd).map(|i| format!("{}_var{}", c.name, suffix(i))));
    }
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for (k, t) in times.iter().enumerate() {
        let mut rec = vec![fmt_g(*t)];
        for c in &cols {
            rec.extend(c.mean[k].iter().map(|&v| fmt_g(v)));
            rec.extend(c.var[k].iter().map(|&v| fmt_g(v)));
        }
        w.write_record(&rec).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;

    let mut summary = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(summary, "{k}={v}");
    };
    put("model", exp.model_name.clone());
    put("n_steps", obs.len().to_string());
    put("n_particles", f.n_particles.to_string());
    put("gain", f.gain.name().to_string());
    put("fpf_flagged_total", trace.total_flagged().to_string());
    let reference: Vec<&Column> = cols.iter().filter(|c| c.name == "kb" || c.name == "grid").collect();
    for r in &reference {
        for c in cols.iter().filter(|c| c.name != r.name) {
            if c.name == "kb" {
                continue;
            }
            put(&format!("{}_mean_rmse_vs_{}", c.name, r.name), fmt_g(rmse(&c.mean, &r.mean)));
            put(&format!("{}_var_rmse_vs_{}", c.name, r.name), fmt_g(rmse(&c.var, &r.var)));
        }
    }
    for (_, g, v) in &divergences {
        put(&format!("fpf_vs_grid_final_{g}"), fmt_g(*v));
    }
    let summary_path = out.join("summary.txt");
    std::fs::write(&summary_path, &summary)?;
    let mut files = vec![compare_path, summary_path];
    if !divergences.is_empty() {
        let div_path = out.join("divergence.csv");
        write_divergence(&div_path, &divergences).map_err(io_err(&div_path))?;
        files.push(div_path);
    }
    Ok(CompareOutput { files, summary })
}

pub struct VerifyOutput {
    pub path: PathBuf,
    pub passed: usize,
    pub total: usize,
}

/// Suite and seed come from the flags, falling back to `[verify]` in the config.
pub fn verify_target(suite: Option<&str>, seed: Option<u64>, raw: Option<&RawConfig>) -> Result<(String, u64), CliError> {
    let suite = match (suite, raw.and_then(|r| r.get("verify", "suite"))) {
        (Some(s), _) | (None, Some(s)) => s.to_string(),
        (None, None) => return Err(CliError::Config("verify needs --suite or `suite` in [verify]".into())),
    };
    let seed = match (seed, raw) {
        (Some(s), _) => s,
        (None, Some(r)) => r.parsed("verify", "seed")?.unwrap_or(1),
        (None, None) => 1,
    };
    if !SUITES.contains(&suite.as_str()) {
        return Err(CliError::Config(format!("unknown suite `{suite}`; expected one of {}", SUITES.join(", "))));
    }
    Ok((suite, seed))
}

pub fn verify(suite: &str, seed: u64, out: &Path) -> Result<VerifyOutput, CliError> {
    let rows = run_suite(suite, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let path = out.join(format!("verify_{suite}.csv"));
    let file = std::fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_checks(std::io::BufWriter::new(file), &rows).map_err(io_err(&path))?;
    Ok(VerifyOutput { path, passed: rows.iter().filter(|r| r.pass).count(), total: rows.len() })
}
