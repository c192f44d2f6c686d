//! Flat `key = value` files with `[section]` headers. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fpf_core::gain::GainMethod;
use fpf_core::model::{presets, Drift, Observation};
use fpf_core::{Matrix, Model, PolyField, Polynomial};

use crate::error::CliError;
use crate::expr::parse_polynomial;

#[derive(Debug, Default)]
pub struct RawConfig {
    path: PathBuf,
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: &str| CliError::Config(format!("{}:{}: {msg}", path.display(), n + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| at("unterminated section header"))?.trim();
                if name.is_empty() {
                    return Err(at("empty section name"));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| at("expected `key = value`"))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(at("empty key"));
            }
            if current.is_empty() {
                return Err(at("key outside of any [section]"));
            }
            let prev = sections.entry(current.clone()).or_default().insert(key.to_string(), v.trim().to_string());
            if prev.is_some() {
                return Err(at(&format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { path: path.to_path_buf(), sections })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    fn missing(&self, section: &str, key: &str) -> CliError {
        CliError::Config(format!("{}: missing field `{key}` in [{section}]", self.path.display()))
    }

    fn bad(&self, section: &str, key: &str, why: impl std::fmt::Display) -> CliError {
        CliError::Config(format!("{}: field `{key}` in [{section}]: {why}", self.path.display()))
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, CliError> {
        self.get(section, key).ok_or_else(|| self.missing(section, key))
    }

    pub fn parsed<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<V>, CliError>
    where
        V::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|e| self.bad(section, key, format!("`{s}`: {e}"))),
        }
    }

    pub fn required<V: FromStr>(&self, section: &str, key: &str) -> Result<V, CliError>
    where
        V::Err: std::fmt::Display,
    {
        self.parsed(section, key)?.ok_or_else(|| self.missing(section, key))
    }

    /// Comma separated numbers.
    pub fn vector(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(section, key)
            .map(|s| parse_list(s).map_err(|e| self.bad(section, key, e)))
            .transpose()
    }

    /// A scalar multiple of the identity or a diagonal written as one row.
    /// Full matrices separate their rows with `;`.
    pub fn matrix(&self, section: &str, key: &str, d: usize) -> Result<Option<Matrix<f64>>, CliError> {
        let Some(s) = self.get(section, key) else { return Ok(None) };
        let rows: Vec<Vec<f64>> = s
            .split(';')
            .map(parse_list)
            .collect::<Result<_, _>>()
            .map_err(|e| self.bad(section, key, e))?;
        let flat: Vec<f64> = rows.concat();
        let m = if rows.len() == 1 && flat.len() == 1 {
            Matrix::identity(d).scale(flat[0])
        } else if rows.len() == 1 && flat.len() == d {
            Matrix::from_diag(&flat)
        } else if rows.len() == d && rows.iter().all(|r| r.len() == d) {
            Matrix::from_rows(&rows)
        } else {
            return Err(self.bad(section, key, format!("expected a scalar, {d} diagonal entries or {d} rows of {d}")));
        };
        Ok(Some(m))
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", t.trim())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub truth: u64,
    pub obs: u64,
    pub filter: u64,
}

#[derive(Debug, Clone)]
pub struct FilterSection {
    pub n_particles: usize,
    pub gain: GainMethod<f64>,
    pub abort_on_inadmissible: bool,
    pub det_floor: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CompareSection {
    pub bootstrap_particles: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_n: usize,
}

/// The parts of a config every command shares.
pub struct Experiment {
    pub raw: RawConfig,
    pub model: Model,
    pub model_name: String,
    pub dt: f64,
    pub prior_mean: Vec<f64>,
    pub prior_cov: Matrix<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Experiment {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let (model, model_name) = build_model(&raw)?;
        let d = model.dim();
        let dt: f64 = raw.required("run", "dt")?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(raw.bad("run", "dt", "must be positive"));
        }
        let prior_mean = raw.vector("prior", "mean")?.unwrap_or_else(|| vec![0.0; d]);
        if prior_mean.len() != d {
            return Err(raw.bad("prior", "mean", format!("expected {d} entries")));
        }
        let prior_cov = raw.matrix("prior", "cov", d)?.unwrap_or_else(|| Matrix::identity(d));
        let out_dir = raw.get("output", "dir").map(PathBuf::from);
        Ok(Self { raw, model, model_name, dt, prior_mean, prior_cov, out_dir })
    }

    pub fn t_end(&self) -> Result<f64, CliError> {
        let t: f64 = self.raw.required("run", "t_end")?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(self.raw.bad("run", "t_end", "must be positive"));
        }
        Ok(t)
    }

    pub fn x0(&self) -> Result<Vec<f64>, CliError> {
        let d = self.model.dim();
        let x0 = self.raw.vector("run", "x0")?.unwrap_or_else(|| vec![0.0; d]);
        if x0.len() != d {
            return Err(self.raw.bad("run", "x0", format!("expected {d} entries")));
        }
        Ok(x0)
    }

    pub fn seeds(&self, need_truth: bool, need_filter: bool) -> Result<Seeds, CliError> {
        let get = |k: &str, needed: bool| -> Result<u64, CliError> {
            if needed { self.raw.required("seeds", k) } else { Ok(self.raw.parsed("seeds", k)?.unwrap_or(0)) }
        };
        Ok(Seeds { truth: get("truth", need_truth)?, obs: get("obs", need_truth)?, filter: get("filter", need_filter)? })
    }

    pub fn filter(&self) -> Result<FilterSection, CliError> {
        let r = &self.raw;
        let n_particles: usize = r.required("filter", "n_particles")?;
        if n_particles < 2 {
            return Err(r.bad("filter", "n_particles", "need at least 2 particles"));
        }
        let gain = match r.require("filter", "gain")? {
            "exact_gaussian" => GainMethod::ExactGaussian,
            "constant" => GainMethod::Constant,
            "galerkin" => {
                let degree: u32 = r.required("filter", "degree")?;
                if degree == 0 {
                    return Err(r.bad("filter", "degree", "must be at least 1"));
                }
                GainMethod::Galerkin { degree, ridge: r.parsed("filter", "ridge")? }
            }
            other => {
                return Err(r.bad("filter", "gain", format!("unknown method `{other}`; expected exact_gaussian, constant or galerkin")))
            }
        };
        Ok(FilterSection {
            n_particles,
            gain,
            abort_on_inadmissible: r.parsed("filter", "abort_on_inadmissible")?.unwrap_or(true),
            det_floor: r.parsed("filter", "det_floor")?,
        })
    }

    pub fn compare(&self, n_particles: usize) -> Result<CompareSection, CliError> {
        let r = &self.raw;
        let c = CompareSection {
            bootstrap_particles: r.parsed("compare", "bootstrap_particles")?.unwrap_or(n_particles),
            grid_lo: r.parsed("compare", "grid_lo")?.unwrap_or(-8.0),
            grid_hi: r.parsed("compare", "grid_hi")?.unwrap_or(8.0),
            grid_n: r.parsed("compare", "grid_n")?.unwrap_or(801),
        };
        if !(c.grid_hi > c.grid_lo) || c.grid_n < 3 {
            return Err(r.bad("compare", "grid_n", "need grid_hi > grid_lo and at least 3 nodes"));
        }
        Ok(c)
    }
}

/// A registry name with optional per-field overrides, or a model spelled
/// out in full starting from `dim`.
fn build_model(raw: &RawConfig) -> Result<(Model, String), CliError> {
    let base = match raw.get("model", "name") {
        Some(name) => Some((
            presets::by_name::<f64>(name).ok_or_else(|| {
                raw.bad("model", "name", format!("unknown model `{name}`; expected one of {}", presets::NAMES.join(", ")))
            })?,
            name.to_string(),
        )),
        None => None,
    };
    let d = match (&base, raw.parsed::<usize>("model", "dim")?) {
        (Some((m, _)), None) => m.dim(),
        (Some((m, _)), Some(d)) if d == m.dim() => d,
        (Some(_), Some(_)) => return Err(raw.bad("model", "dim", "does not match the named model")),
        (None, Some(d)) if d >= 1 => d,
        (None, Some(_)) => return Err(raw.bad("model", "dim", "must be at least 1")),
        (None, None) => return Err(raw.missing("model", "name")),
    };
    let drift = match raw.get("model", "drift") {
        Some(s) => Some(parse_drift(s, d).map_err(|e| raw.bad("model", "drift", e))?),
        None => None,
    };
    let h = match raw.get("model", "h") {
        Some(s) => Some(parse_polynomial(s, d).map_err(|e| raw.bad("model", "h", e))?),
        None => None,
    };
    let diffusion = raw.matrix("model", "diffusion", d)?;
    let diffusion_cov = raw.matrix("model", "diffusion_cov", d)?;
    if diffusion.is_some() && diffusion_cov.is_some() {
        return Err(raw.bad("model", "diffusion_cov", "give either diffusion or diffusion_cov"));
    }
    let (name, drift, sigma, obs) = match base {
        Some((m, name)) => {
            let drift = drift.unwrap_or_else(|| m.drift.clone());
            let obs = h.map(Observation::poly).unwrap_or_else(|| m.obs.clone());
            (name, drift, diffusion.unwrap_or_else(|| m.diffusion().clone()), obs)
        }
        None => {
            let drift = drift.ok_or_else(|| raw.missing("model", "drift"))?;
            let h = h.ok_or_else(|| raw.missing("model", "h"))?;
            ("custom".to_string(), drift, diffusion.unwrap_or_else(|| Matrix::identity(d)), Observation::poly(h))
        }
    };
    let model = match diffusion_cov {
        Some(q) => Model::with_diffusion_cov(drift, q, obs),
        None => Model::new(drift, sigma, obs),
    }
    .map_err(|e| CliError::Model(format!("model: {e}")))?;
    let problems = fpf_core::validate_model(&model);
    if !problems.is_empty() {
        return Err(CliError::Model(format!("model: {}", problems.join(", "))));
    }
    Ok((model, name))
}

/// Components separated by `;`. All-affine drifts become linear so the
/// Kalman–Bucy reference applies.
fn parse_drift(s: &str, d: usize) -> Result<Drift<f64>, String> {
    let parts: Vec<&str> = s.split(';').collect();
    if parts.len() != d {
        return Err(format!("expected {d} components separated by `;`, found {}", parts.len()));
    }
    let comps: Vec<Polynomial<f64>> = parts.iter().map(|p| parse_polynomial(p, d)).collect::<Result<_, _>>()?;
    let affine: Option<Vec<(Vec<f64>, f64)>> = comps.iter().map(Polynomial::as_affine).collect();
    Ok(match affine {
        Some(rows) => {
            let f = Matrix::from_rows(&rows.iter().map(|(a, _)| a.clone()).collect::<Vec<_>>());
            Drift::Linear { f, offset: rows.iter().map(|(_, c)| *c).collect() }
        }
        None => Drift::Poly(PolyField::new(comps)),
    })
}
