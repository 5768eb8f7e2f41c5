use std::collections::BTreeMap;

use super::params::ParamSet;
use super::tape::{GradTape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all checked entries of `|fd - an| / max(1, |fd|, |an|)`.
    pub max_rel_error: f64,
    pub per_param: BTreeMap<String, f64>,
    /// Parameter holding the maximum, if any parameter was checked.
    pub worst: Option<String>,
    pub checked_entries: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / 1f64.max(fd.abs()).max(an.abs())
}

/// Checks every parameter `f` records on its tape.
///
/// `f` must build a scalar on the given tape from `params`; it is called once
/// for the analytic pass and twice per parameter entry for the differences.
pub fn grad_check<F>(f: F, params: &ParamSet, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut GradTape, &ParamSet) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    let mut tape = GradTape::new();
    let loss = f(&mut tape, params)?;
    let analytic = tape.backward(loss)?.params(&tape);

    let eval = |p: &ParamSet, name: &str| -> Result<f64> {
        let mut t = GradTape::new();
        let y = f(&mut t, p)?;
        let v = t.value(y).data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                param: name.to_string(),
            })
        }
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: BTreeMap::new(),
        worst: None,
        checked_entries: 0,
    };
    for (name, an) in &analytic {
        if !an.is_finite() {
            return Err(Error::NonFinite { param: name.clone() });
        }
        let mut worst = 0.0f64;
        for i in 0..an.len() {
            let orig = work.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + h;
            let plus = eval(&work, name)?;
            work.get_mut(name)?.data_mut()[i] = orig - h;
            let minus = eval(&work, name)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(fd, an.data()[i]));
            report.checked_entries += 1;
        }
        if report.worst.is_none() || worst > report.max_rel_error {
            report.max_rel_error = worst;
            report.worst = Some(name.clone());
        }
        report.per_param.insert(name.clone(), worst);
    }
    Ok(report)
}
