//! CSV files with a header row and `%.12g` numbers.

use std::io::Write;
use std::path::Path;

use crate::error::{FpfError, Result};
use crate::fpf::FilterTrace;
use crate::gain::GainField;
use crate::grid::GridDensity;
use crate::identity::CheckRow;
use crate::model::ParticleEnsemble;
use crate::reference::KalmanState;
use crate::sde::{ObservationRecord, TruthPath};

/// C's `%.12g`: twelve significant digits, trailing zeros dropped,
/// exponent form outside `1e-4 ≤ |v| < 1e12`.
pub fn fmt_g(v: f64) -> String {
    const P: i32 = 12;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // the exponent after rounding to P digits decides the style
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().from_path(path)?)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn indexed(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}_{i}"))
}

fn cov_names(d: usize) -> Vec<String> {
    let sep = if d < 10 { "" } else { "_" };
    (1..=d).flat_map(|i| (1..=d).map(move |j| format!("cov_{i}{sep}{j}"))).collect()
}

/// `t,x_1..x_d`.
pub fn write_truth(path: &Path, truth: &TruthPath<f64>) -> Result<()> {
    let d = truth.states.first().map_or(0, Vec::len);
    let mut w = writer(path)?;
    w.write_record(std::iter::once("t".to_string()).chain(indexed("x", d)))?;
    for (t, x) in truth.times.iter().zip(&truth.states) {
        w.write_record(std::iter::once(fmt_g(*t)).chain(x.iter().map(|&v| fmt_g(v))))?;
    }
    finish(w)
}

/// `t,y,dz`.
pub fn write_obs(path: &Path, obs: &[ObservationRecord<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "y", "dz"])?;
    for o in obs {
        w.write_record([fmt_g(o.time), fmt_g(o.y), fmt_g(o.dz)])?;
    }
    finish(w)
}

pub fn read_obs(path: &Path) -> Result<Vec<ObservationRecord<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["t", "y", "dz"] {
        return Err(FpfError::InvalidArgument(format!(
            "{}: expected header t,y,dz, found {}",
            path.display(),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                FpfError::InvalidArgument(format!("{}: bad number on data row {}", path.display(), line + 1))
            })
        };
        out.push(ObservationRecord { time: num(0)?, y: num(1)?, dz: num(2)? });
    }
    Ok(out)
}

/// `t,dz,mean_1..mean_d,cov_11..cov_dd,h_hat,n_flagged`.
pub fn write_trace(path: &Path, trace: &FilterTrace<f64>) -> Result<()> {
    let d = trace.dim;
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string(), "dz".to_string()];
    header.extend(indexed("mean", d));
    header.extend(cov_names(d));
    header.extend(["h_hat".to_string(), "n_flagged".to_string()]);
    w.write_record(&header)?;
    for row in &trace.rows {
        let mut rec = vec![fmt_g(row.t), fmt_g(row.dz)];
        rec.extend(row.mean.iter().map(|&v| fmt_g(v)));
        for i in 0..d {
            rec.extend((0..d).map(|j| fmt_g(row.cov[(i, j)])));
        }
        rec.push(fmt_g(row.h_hat));
        rec.push(row.n_flagged.to_string());
        w.write_record(&rec)?;
    }
    finish(w)
}

/// `i,x_1..x_d,K_1..K_d,u_1..u_d,detV` with `detV = det(I + ∇vᵀ)` for the
/// displacement `v = K dz + u dt`.
pub fn write_gain(path: &Path, ens: &ParticleEnsemble<f64>, gain: &GainField<f64>, dz: f64, dt: f64) -> Result<()> {
    let d = ens.dim();
    let jac = gain.displacement_jacobians(dz, dt);
    let mut w = writer(path)?;
    let mut header = vec!["i".to_string()];
    header.extend(indexed("x", d));
    header.extend(indexed("K", d));
    header.extend(indexed("u", d));
    header.push("detV".into());
    w.write_record(&header)?;
    for i in 0..ens.len() {
        let mut a = crate::Matrix::from_row_slice(d, d, &jac[i * d * d..(i + 1) * d * d]);
        for k in 0..d {
            a[(k, k)] += 1.0;
        }
        let mut rec = vec![i.to_string()];
        rec.extend(ens.particle(i).iter().map(|&v| fmt_g(v)));
        rec.extend(gain.k_at(i).iter().map(|&v| fmt_g(v)));
        rec.extend(gain.u_at(i).iter().map(|&v| fmt_g(v)));
        rec.push(fmt_g(a.determinant()));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// `x,p`.
pub fn write_grid(path: &Path, g: &GridDensity<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x", "p"])?;
    for (i, &p) in g.values().iter().enumerate() {
        w.write_record([fmt_g(g.x(i)), fmt_g(p)])?;
    }
    finish(w)
}

/// `t,mean,cov` in one dimension, `t,mean_1..,cov_11..` otherwise.
pub fn write_kalman(path: &Path, rows: &[(f64, KalmanState<f64>)]) -> Result<()> {
    let d = rows.first().map_or(1, |(_, s)| s.mean.len());
    let mut w = writer(path)?;
    if d == 1 {
        w.write_record(["t", "mean", "cov"])?;
    } else {
        let mut header = vec!["t".to_string()];
        header.extend(indexed("mean", d));
        header.extend(cov_names(d));
        w.write_record(&header)?;
    }
    for (t, s) in rows {
        let mut rec = vec![fmt_g(*t)];
        rec.extend(s.mean.iter().map(|&v| fmt_g(v)));
        for i in 0..d {
            rec.extend((0..d).map(|j| fmt_g(s.cov[(i, j)])));
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

/// `t,generator,value`.
pub fn write_divergence(path: &Path, rows: &[(f64, &str, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "generator", "value"])?;
    for (t, g, v) in rows {
        w.write_record([fmt_g(*t), g.to_string(), fmt_g(*v)])?;
    }
    finish(w)
}

/// `check,point,residual,tolerance,pass`.
pub fn write_checks<W: Write>(out: W, rows: &[CheckRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "point", "residual", "tolerance", "pass"])?;
    for r in rows {
        w.write_record([r.check.clone(), r.point.clone(), fmt_g(r.residual), fmt_g(r.tolerance), r.pass.to_string()])?;
    }
    finish(w)
}
