//! Flat `(block, param, value)` views of a state and the trace/report
//! files built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mcmc::{BlockReport, PosteriorSamples};
use crate::model::ModelState;

pub type FlatEntry = (String, String, f64);

impl ModelState {
    /// Every scalar of the state with its block and parameter name.
    pub fn flatten(&self) -> Vec<FlatEntry> {
        let mut out = Vec::new();
        let mut scalar = |name: &str, v: f64| out.push((name.to_string(), name.to_string(), v));
        scalar("rho_y", self.rho_y);
        scalar("rho", self.rho);
        scalar("tau2_y", self.tau2_y);
        scalar("a_g", self.a_g);
        scalar("b_g", self.b_g);
        scalar("a_r", self.a_r);
        scalar("b_r", self.b_r);
        scalar("c2", self.c2);
        scalar("sigma2_g", self.sigma2_g);
        scalar("sigma2_r", self.sigma2_r);
        scalar("alpha", self.alpha);
        for (t, &v) in self.tau2_eps.iter().enumerate() {
            out.push(("tau2_eps".into(), format!("tau2_eps[{t}]"), v));
        }
        for (name, vec) in [("beta1", &self.beta1), ("beta_dyn", &self.beta_dyn), ("c1", &self.c1)] {
            for (j, &v) in vec.iter().enumerate() {
                out.push((name.into(), format!("{name}[{j}]"), v));
            }
        }
        for (name, m) in [("shift1", &self.shift1), ("shift2", &self.shift2)] {
            for (t, row) in m.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    out.push((name.into(), format!("{name}[{t},{j}]"), v));
                }
            }
        }
        for (t, row) in self.y.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                out.push(("y".into(), format!("y[{t},{i}]"), v));
            }
        }
        out
    }

    /// Look up a scalar by its flat parameter name, e.g. `c2`, `beta1[0]`,
    /// `y[1,17]`.
    pub fn param(&self, name: &str) -> Option<f64> {
        let (base, idx) = split_name(name)?;
        let one = |v: &Vec<f64>| idx.first().and_then(|&j| v.get(j)).copied();
        let two = |m: &Vec<Vec<f64>>| match idx.as_slice() {
            [a, b] => m.get(*a).and_then(|r| r.get(*b)).copied(),
            _ => None,
        };
        match (base, idx.len()) {
            ("rho_y", 0) => Some(self.rho_y),
            ("rho", 0) => Some(self.rho),
            ("tau2_y", 0) => Some(self.tau2_y),
            ("a_g", 0) => Some(self.a_g),
            ("b_g", 0) => Some(self.b_g),
            ("a_r", 0) => Some(self.a_r),
            ("b_r", 0) => Some(self.b_r),
            ("c2", 0) => Some(self.c2),
            ("sigma2_g", 0) => Some(self.sigma2_g),
            ("sigma2_r", 0) => Some(self.sigma2_r),
            ("alpha", 0) => Some(self.alpha),
            ("tau2_eps", 1) => one(&self.tau2_eps),
            ("beta1", 1) => one(&self.beta1),
            ("beta_dyn", 1) => one(&self.beta_dyn),
            ("c1", 1) => one(&self.c1),
            ("shift1", 2) => two(&self.shift1),
            ("shift2", 2) => two(&self.shift2),
            ("y", 2) => two(&self.y),
            _ => None,
        }
    }

    /// Set a scalar by flat name; the slot must exist.
    pub fn set_param(&mut self, name: &str, v: f64) -> Result<()> {
        let Some((base, idx)) = split_name(name) else {
            return domain(format!("malformed parameter name {name:?}"));
        };
        let slot: Option<&mut f64> = match (base, idx.as_slice()) {
            ("rho_y", []) => Some(&mut self.rho_y),
            ("rho", []) => Some(&mut self.rho),
            ("tau2_y", []) => Some(&mut self.tau2_y),
            ("a_g", []) => Some(&mut self.a_g),
            ("b_g", []) => Some(&mut self.b_g),
            ("a_r", []) => Some(&mut self.a_r),
            ("b_r", []) => Some(&mut self.b_r),
            ("c2", []) => Some(&mut self.c2),
            ("sigma2_g", []) => Some(&mut self.sigma2_g),
            ("sigma2_r", []) => Some(&mut self.sigma2_r),
            ("alpha", []) => Some(&mut self.alpha),
            ("tau2_eps", [j]) => self.tau2_eps.get_mut(*j),
            ("beta1", [j]) => self.beta1.get_mut(*j),
            ("beta_dyn", [j]) => self.beta_dyn.get_mut(*j),
            ("c1", [j]) => self.c1.get_mut(*j),
            ("shift1", [a, b]) => self.shift1.get_mut(*a).and_then(|r| r.get_mut(*b)),
            ("shift2", [a, b]) => self.shift2.get_mut(*a).and_then(|r| r.get_mut(*b)),
            ("y", [a, b]) => self.y.get_mut(*a).and_then(|r| r.get_mut(*b)),
            _ => None,
        };
        match slot {
            Some(s) => {
                *s = v;
                Ok(())
            }
            None => domain(format!("unknown parameter {name:?} for this state shape")),
        }
    }
}

/// Everything about a run that is not a per-draw state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: Vec<usize>,
    pub deviance: Vec<f64>,
    pub acceptance: Vec<BlockReport>,
    pub warnings: Vec<String>,
    /// Gage records dropped by the zero screen.
    pub screened_zeros: usize,
}

/// Long-format trace: one row per kept draw and scalar.
pub fn write_trace(path: &Path, samples: &PosteriorSamples) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "block", "param", "value"])?;
    for (it, d) in samples.iterations.iter().zip(&samples.draws) {
        let it = it.to_string();
        for (block, param, v) in d.flatten() {
            // shortest round-trip formatting keeps reloads bit-exact
            w.write_record([it.as_str(), &block, &param, &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct TraceRow {
    iter: usize,
    #[allow(dead_code)]
    block: String,
    param: String,
    value: f64,
}

/// Read a trace back into states shaped like `template`. Every scalar of
/// the template must be present for every draw.
pub fn read_trace(path: &Path, template: &ModelState) -> Result<(Vec<usize>, Vec<ModelState>)> {
    let width = template.flatten().len();
    let mut r = csv::Reader::from_path(path)?;
    let mut iters = Vec::new();
    let mut draws: Vec<ModelState> = Vec::new();
    let mut count = 0usize;
    for row in r.deserialize() {
        let row: TraceRow = row?;
        if iters.last() != Some(&row.iter) {
            if !draws.is_empty() && count != width {
                return domain(format!("trace draw at iteration {} has {count} of {width} values", iters[iters.len() - 1]));
            }
            iters.push(row.iter);
            draws.push(template.clone());
            count = 0;
        }
        let d = draws.last_mut().expect("pushed above");
        d.set_param(&row.param, row.value)?;
        count += 1;
    }
    if draws.is_empty() {
        return domain(format!("trace {} holds no draws", path.display()));
    }
    if count != width {
        return domain(format!("last trace draw has {count} of {width} values"));
    }
    Ok((iters, draws))
}

pub fn write_report(path: &Path, report: &FitReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Numerical(e.to_string()))?;
    crate::io::write_text(path, &(text + "\n"))
}

pub fn read_report(path: &Path) -> Result<FitReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Reassemble samples from a trace and its report.
pub fn load_samples(trace: &Path, report: &Path, template: &ModelState) -> Result<PosteriorSamples> {
    let (iterations, draws) = read_trace(trace, template)?;
    let rep = read_report(report)?;
    if rep.iterations != iterations || rep.deviance.len() != draws.len() {
        return domain(format!(
            "{} and {} describe different runs",
            trace.display(),
            report.display()
        ));
    }
    Ok(PosteriorSamples {
        draws,
        deviance: rep.deviance,
        iterations,
        acceptance: rep.acceptance,
        warnings: rep.warnings,
    })
}

fn split_name(name: &str) -> Option<(&str, Vec<usize>)> {
    match name.find('[') {
        None => Some((name, Vec::new())),
        Some(p) => {
            let inner = name[p + 1..].strip_suffix(']')?;
            let idx = inner
                .split(',')
                .map(|s| s.trim().parse::<usize>().ok())
                .collect::<Option<Vec<_>>>()?;
            Some((&name[..p], idx))
        }
    }
}
