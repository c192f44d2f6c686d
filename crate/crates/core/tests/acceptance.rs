//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::Instant;

use fpf_core::divergence::{f_divergence, kde_density, FGenerator};
use fpf_core::fpf::{run_filter, FeedbackParticleFilter, FilterConfig};
use fpf_core::gain::{check_admissible, solve_gain_constant, solve_gain_galerkin, GainMethod, GalerkinBasis};
use fpf_core::grid::GridDensity;
use fpf_core::identity::{run_suite, CheckRow};
use fpf_core::reference::{run_kalman_bucy, run_kushner, KalmanState};
use fpf_core::sde::{simulate_truth, synthesize_observations, ObservationRecord};
use fpf_core::{presets, sample_initial_ensemble, Matrix, Model};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn observations(model: &Model, t_end: f64, dt: f64, seed: u64) -> Vec<ObservationRecord<f64>> {
    let truth = simulate_truth(model, &[0.0], t_end, dt, seed).unwrap();
    synthesize_observations(&truth, model, seed + 1000, false)
}

fn kb_init() -> KalmanState<f64> {
    KalmanState { mean: vec![0.0], cov: Matrix::identity(1) }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn suite_outcome(names: &[&str], seed: u64) -> Outcome {
    let mut rows: Vec<CheckRow> = Vec::new();
    for n in names {
        rows.extend(run_suite(n, seed).unwrap());
    }
    let failed: Vec<&CheckRow> = rows.iter().filter(|r| !r.pass).collect();
    let worst = rows
        .iter()
        .filter(|r| !r.check.ends_with("convergence") && r.check != "poincare-growth" && r.tolerance > 0.0)
        .map(|r| r.residual / r.tolerance)
        .fold(0.0, f64::max);
    let conv = rows.iter().filter(|r| r.check.ends_with("convergence")).count();
    let mut detail = format!("{} rows ({conv} step-halving), worst residual/tolerance {worst:.3e}", rows.len());
    if let Some(f) = failed.first() {
        detail += &format!(", {} failed, first {} at {}: {:e} > {:e}", failed.len(), f.check, f.point, f.residual, f.tolerance);
    }
    outcome(failed.is_empty(), detail)
}

/// Criteria 1 and 9 share these runs.
struct Benchmark {
    rmse: f64,
    steady_var: f64,
    flagged: usize,
    secs: f64,
}

fn benchmark() -> Benchmark {
    let start = Instant::now();
    let model = presets::linear1d::<f64>();
    let dt = 0.01;
    let (mut sq, mut n, mut var_sum, mut var_n, mut flagged) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for seed in 0..20u64 {
        let obs = observations(&model, 5.0, dt, seed);
        let cfg = FilterConfig::new(GainMethod::ExactGaussian, dt, 1000, seed + 2000);
        let trace = run_filter(&model, &obs, &cfg, &[0.0], &Matrix::identity(1)).unwrap();
        let kb = run_kalman_bucy(&model, &obs, dt, kb_init()).unwrap();
        for (row, (_, s)) in trace.rows.iter().zip(&kb).skip(1) {
            sq += (row.mean[0] - s.mean[0]).powi(2);
            n += 1;
            if row.t >= 2.0 - 1e-9 {
                var_sum += row.cov[(0, 0)];
                var_n += 1;
            }
        }
        flagged += trace.total_flagged();
    }
    Benchmark { rmse: (sq / n as f64).sqrt(), steady_var: var_sum / var_n as f64, flagged, secs: start.elapsed().as_secs_f64() }
}

fn criterion_1(b: &Benchmark) -> Outcome {
    let p_star = 2f64.sqrt() - 1.0;
    let bound = 0.15 * p_star.sqrt();
    let rel = (b.steady_var - p_star).abs() / p_star;
    outcome(
        b.rmse <= bound && rel <= 0.2 && b.secs <= 30.0,
        format!(
            "mean RMSE vs Kalman-Bucy {:.4} (bound {bound:.4}), steady variance {:.4} vs P* {p_star:.4} ({:.1}%), {:.1}s",
            b.rmse,
            b.steady_var,
            100.0 * rel,
            b.secs
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let model = presets::linear1d::<f64>();
    let ens = sample_initial_ensemble(100_000, &[0.0], &Matrix::identity(1), 1).unwrap();
    let kc = solve_gain_constant(&ens, &model).k[0];
    let basis = GalerkinBasis::new(1, 3).unwrap();
    let g3 = solve_gain_galerkin(&ens, &model, &basis, Some(1e-6)).unwrap();
    let coeffs = g3.coeffs.clone().unwrap();
    let k0 = basis.potential(&coeffs).gradient(&[0.0])[0];
    let high = coeffs[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let g1 = solve_gain_galerkin(&ens, &model, &GalerkinBasis::new(1, 1).unwrap(), None).unwrap();
    let deg1_gap = g1.k.iter().fold(0.0f64, |m, &k| m.max((k - kc).abs()));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (kc - 1.0).abs() <= 0.02 && (k0 - 1.0).abs() <= 0.05 && high <= 0.05 && deg1_gap <= 1e-10 && secs <= 10.0,
        format!(
            "constant K {kc:.4}, degree-3 K(0) {k0:.4} (max higher coefficient {high:.2e}), degree-1 vs constant {deg1_gap:.1e}, {secs:.1}s"
        ),
    )
}

fn criterion_7() -> Outcome {
    let model = presets::linear1d::<f64>();
    let dt = 0.01;
    let grid0 = || GridDensity::gaussian(0.0, 1.0, -8.0, 8.0, 801).unwrap();

    // grid against Kalman-Bucy over 100 steps; means compared on the scale
    // of the posterior standard deviation since they cross zero
    let obs = observations(&model, 1.0, dt, 77);
    let (rows, _) = run_kushner(&model, &obs, dt, grid0(), &[]).unwrap();
    let kb = run_kalman_bucy(&model, &obs, dt, kb_init()).unwrap();
    let (mut worst_m, mut worst_v) = (0.0f64, 0.0f64);
    for ((_, m, v), (_, s)) in rows.iter().zip(&kb) {
        let p = s.cov[(0, 0)];
        worst_m = worst_m.max((m - s.mean[0]).abs() / p.sqrt());
        worst_v = worst_v.max((v - p).abs() / p);
    }

    let mut kl = [Vec::new(), Vec::new()];
    for seed in 0..10u64 {
        let obs = observations(&model, 2.0, dt, 500 + seed);
        let (_, kept) = run_kushner(&model, &obs, dt, grid0(), &[obs.len()]).unwrap();
        for (slot, n) in [4000usize, 8000].into_iter().enumerate() {
            let cfg = FilterConfig::new(GainMethod::ExactGaussian, dt, n, 900 + seed);
            let mut f = FeedbackParticleFilter::new(model.clone(), cfg, &[0.0], &Matrix::identity(1)).unwrap();
            for o in &obs {
                f.step(o).unwrap();
            }
            let kde = kde_density(f.ensemble(), -8.0, 8.0, 801, None).unwrap();
            kl[slot].push(f_divergence(&kde, &kept[0], FGenerator::Kl).unwrap().value);
        }
    }
    let (k4, k8) = (median(kl[0].clone()), median(kl[1].clone()));
    outcome(
        worst_m <= 0.02 && worst_v <= 0.02 && k4 <= 0.05 && k8 < k4,
        format!(
            "grid vs Kalman-Bucy worst mean gap {:.2}% of std, worst variance gap {:.2}%; median KL N=4000 {k4:.4}, N=8000 {k8:.4}",
            100.0 * worst_m,
            100.0 * worst_v
        ),
    )
}

fn criterion_9(b: &Benchmark) -> Outcome {
    // I + ∇vᵀ = 0 in one dimension, rank one in two
    let one = check_admissible(1, &[-1.0f64], 1e-8);
    let two = check_admissible(2, &[-1.0f64, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0], 1e-8);
    let ok = one.flagged == vec![0] && two.flagged == vec![0] && b.flagged == 0;
    outcome(
        ok,
        format!(
            "singular displacements flagged {:?} / {:?}, benchmark flagged {} over 20 seeds",
            one.flagged, two.flagged, b.flagged
        ),
    )
}

fn main() {
    let bench = benchmark();
    let results: Vec<(&str, Outcome)> = vec![
        ("linear-Gaussian consistency", criterion_1(&bench)),
        ("gain-solver oracle agreement", criterion_2()),
        ("Piola identity", suite_outcome(&["piola"], 2024)),
        ("f-invariance of the stationarity condition", suite_outcome(&["el-invariance"], 2024)),
        ("Taylor-expansion equations", suite_outcome(&["taylor"], 2024)),
        ("identity ledger and second-order identity", suite_outcome(&["appendixB", "lm2"], 2024)),
        ("Kushner grid oracle", criterion_7()),
        ("Poincare counterexample", suite_outcome(&["poincare"], 2024)),
        ("admissibility guard", criterion_9(&bench)),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
