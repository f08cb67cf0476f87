use std::fmt;

use super::params::Params;
use crate::error::{Error, Result};

/// Agreement between analytic and central-difference gradients for one named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| !e.flagged)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check (tol {:.1e}):", self.tolerance)?;
        for e in &self.entries {
            writeln!(
                f,
                "  {:<32} rel {:.3e}  max|Δ| {:.3e}{}",
                e.name,
                e.rel_error,
                e.max_abs_error,
                if e.flagged { "  <-- FAIL" } else { "" }
            )?;
        }
        Ok(())
    }
}

const NORM_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `f` with step `h`.
pub fn grad_check<F>(
    mut f: F,
    params: &Params<f64>,
    analytic: &Params<f64>,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&Params<f64>) -> f64,
{
    params.check_same_keys(analytic)?;
    let base = f(params);
    if !base.is_finite() {
        return Err(Error::NonFinite("objective at the base point".into()));
    }
    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let n = params.get(&name)?.len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = params.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + h;
            let fp = f(&work);
            work.get_mut(&name)?.data_mut()[i] = orig - h;
            let fm = f(&work);
            work.get_mut(&name)?.data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("objective perturbing {name}[{i}]")));
            }
            *slot = (fp - fm) / (2.0 * h);
        }
        let a = analytic.get(&name)?.data();
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel_error = diff / na.max(nn).max(NORM_FLOOR);
        let max_abs_error = a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        entries.push(ParamCheck {
            name,
            rel_error,
            max_abs_error,
            flagged: !(rel_error < tolerance),
        });
    }
    Ok(GradCheckReport { entries, tolerance })
}
