//! Central-difference gradient checking in double precision.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;


use num_traits::Float;

use super::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error per parameter tensor.
    pub tolerance: f64,
    /// Denominator floor of the relative error, so that near-zero
    /// gradients are compared absolutely.
    pub abs_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { step: 1e-4, tolerance: 1e-3, abs_floor: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckEntry {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(9).max(9);
        writeln!(
            f,
            "{:<width$}  {:>14}  {:>14}  {:>12}  status",
            "parameter", "analytic_norm", "numeric_norm", "max_rel_err"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<width$}  {:>14.6e}  {:>14.6e}  {:>12.3e}  {}",
                e.name,
                e.analytic_norm,
                e.numeric_norm,
                e.max_rel_error,
                if e.passed { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Compares tape gradients of `loss_fn` against central differences for every
/// element of every named parameter.
///
/// `loss_fn` receives a fresh tape on which the parameters were recorded as
/// leaves, in order, and returns the scalar loss.
pub fn gradcheck<F>(params: &[(String, Tensor<f64>)], loss_fn: F, cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[(String, Tensor<f64>)]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();
    drop(tape);

    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let n = work[pi].1.numel();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = work[pi].1.data()[i];
            work[pi].1.data_mut()[i] = orig + cfg.step;
            let plus = loss_value(&eval, &work)?;
            work[pi].1.data_mut()[i] = orig - cfg.step;
            let minus = loss_value(&eval, &work)?;
            work[pi].1.data_mut()[i] = orig;
            let d = (plus - minus) / (2.0 * cfg.step);
            if !d.is_finite() {
                return Err(Error::NonFinite(name.clone()));
            }
            numeric.push(d);
        }
        let an = analytic[pi].data();
        if !an.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(name.clone()));
        }
        let max_rel_error = an
            .iter()
            .zip(&numeric)
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(cfg.abs_floor))
            .fold(0.0, f64::max);
        entries.push(GradcheckEntry {
            name: name.clone(),
            analytic_norm: analytic[pi].l2_norm(),
            numeric_norm: Float::sqrt(numeric.iter().map(|v| v * v).sum::<f64>()),
            max_rel_error,
            passed: max_rel_error < cfg.tolerance,
        });
    }
    Ok(GradcheckReport { entries, tolerance: cfg.tolerance })
}

fn loss_value<E>(eval: &E, values: &[(String, Tensor<f64>)]) -> Result<f64>
where
    E: Fn(&[(String, Tensor<f64>)]) -> Result<(Tape<f64>, Vec<Var>, Var)>,
{
    let (tape, _, loss) = eval(values)?;
    tape.value(loss).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn quadratic_passes() {
        let params = vec![("x".to_string(), Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap())];
        let report = gradcheck(
            &params,
            |tape, v| {
                let sq = tape.mul(v[0], v[0])?;
                Ok(tape.sum(sq))
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.max_rel_error() < 1e-8);
    }

    #[test]
    fn non_finite_names_parameter() {
        let params = vec![("bad".to_string(), Tensor::new(&[1], vec![-1.0]).unwrap())];
        // sqrt-free way to produce NaN: exp overflow times zero
        let err = gradcheck(
            &params,
            |tape, v| {
                let big = tape.scale(v[0], -1e6);
                let e = tape.exp(big);
                let z = tape.scale(v[0], 0.0);
                let p = tape.mul(e, z)?;
                Ok(tape.sum(p))
            },
            &GradcheckConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::NonFinite("bad".to_string()));
    }
}
