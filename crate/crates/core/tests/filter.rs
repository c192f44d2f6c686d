use fpf_core::fpf::{run_filter, FilterConfig};
use fpf_core::gain::GainMethod;
use fpf_core::reference::{run_bootstrap, run_kalman_bucy, KalmanState};
use fpf_core::sde::{simulate_truth, synthesize_observations, ObservationRecord};
use fpf_core::{presets, Matrix, Model};

fn obs(model: &Model, t_end: f64, seed: u64) -> Vec<ObservationRecord<f64>> {
    let truth = simulate_truth(model, &vec![0.0; model.dim()], t_end, 0.01, seed).unwrap();
    synthesize_observations(&truth, model, seed + 1, false)
}

fn kb_means(model: &Model, o: &[ObservationRecord<f64>]) -> Vec<Vec<f64>> {
    let d = model.dim();
    let init = KalmanState { mean: vec![0.0; d], cov: Matrix::identity(d) };
    run_kalman_bucy(model, o, 0.01, init).unwrap().into_iter().map(|(_, s)| s.mean).collect()
}

fn rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (x, y) in a.iter().zip(b).skip(1) {
        for (u, v) in x.iter().zip(y) {
            s += (u - v).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
}

#[test]
fn error_shrinks_with_ensemble_size() {
    let model = presets::linear1d::<f64>();
    let sizes = [250, 1000, 4000];
    let mut med = Vec::new();
    for &n in &sizes {
        let errs: Vec<f64> = (0..10)
            .map(|seed| {
                let o = obs(&model, 2.0, 100 + seed);
                let cfg = FilterConfig::new(GainMethod::ExactGaussian, 0.01, n, 300 + seed);
                let t = run_filter(&model, &o, &cfg, &[0.0], &Matrix::identity(1)).unwrap();
                let m: Vec<Vec<f64>> = t.rows.iter().map(|r| r.mean.clone()).collect();
                rmse(&m, &kb_means(&model, &o))
            })
            .collect();
        med.push(median(errs));
    }
    assert!(med[0] > med[1] && med[1] > med[2], "{med:?}");
    // quadrupling N roughly halves the error
    assert!(med[0] / med[2] > 2.5, "{med:?}");
}

#[test]
fn two_dimensional_galerkin_tracks_kalman() {
    let model = presets::linear2d::<f64>();
    let o = obs(&model, 3.0, 7);
    let cfg = FilterConfig::new(GainMethod::Galerkin { degree: 2, ridge: None }, 0.01, 2000, 8);
    let t = run_filter(&model, &o, &cfg, &[0.0, 0.0], &Matrix::identity(2)).unwrap();
    let m: Vec<Vec<f64>> = t.rows.iter().map(|r| r.mean.clone()).collect();
    let e = rmse(&m, &kb_means(&model, &o));
    assert!(e < 0.08, "{e}");
    assert_eq!(t.total_flagged(), 0);
}

#[test]
fn bootstrap_tracks_kalman() {
    let model = presets::linear1d::<f64>();
    let o = obs(&model, 2.0, 17);
    let rows = run_bootstrap(&model, &o, 0.01, 2000, 18, &[0.0], &Matrix::identity(1)).unwrap();
    let m: Vec<Vec<f64>> = rows.iter().map(|r| r.mean.clone()).collect();
    let e = rmse(&m, &kb_means(&model, &o));
    assert!(e < 0.06, "{e}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = presets::cubic_sensor::<f64>();
    let o = obs(&model, 0.5, 27);
    let cfg = FilterConfig::new(GainMethod::Galerkin { degree: 3, ridge: None }, 0.01, 3000, 28);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_filter(&model, &o, &cfg, &[0.5], &Matrix::identity(1).scale(0.25)).unwrap())
    };
    let one = run(1);
    for threads in [2, 5] {
        let other = run(threads);
        for (a, b) in one.rows.iter().zip(&other.rows) {
            assert_eq!(a.mean[0].to_bits(), b.mean[0].to_bits());
            assert_eq!(a.cov[(0, 0)].to_bits(), b.cov[(0, 0)].to_bits());
        }
    }
}
