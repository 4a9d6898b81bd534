//! Central finite-difference check of tape gradients.

use crate::error::{Error, Result};
use crate::param::{Bindings, Module};
use crate::tape::{OpClass, Tape, Var};

/// Step used by the built-in checks.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `h`, over every coordinate of every parameter.
pub fn finite_diff_check<M, F>(module: &mut M, h: f64, f: F) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M, &mut Tape, &Bindings) -> Result<Var>,
{
    finite_diff_check_with(module, h, None, f)
}

/// Like [`finite_diff_check`], optionally corrupting one adjoint class on
/// the analytic pass.
pub fn finite_diff_check_with<M, F>(
    module: &mut M,
    h: f64,
    fault: Option<OpClass>,
    f: F,
) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M, &mut Tape, &Bindings) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut tape = match fault {
        Some(class) => Tape::with_corrupted_adjoint(class),
        None => Tape::new(),
    };
    let bindings = Bindings::bind(module, &mut tape)?;
    let loss = f(module, &mut tape, &bindings)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "gradient check objective".into() });
    }
    tape.backward(loss)?;
    let analytic: Vec<(String, Vec<f64>)> = module
        .params()
        .iter()
        .map(|p| {
            let g = tape
                .grad(bindings.var(p))
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.value().numel()]);
            (p.name().to_string(), g)
        })
        .collect();

    let eval = |module: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let bindings = Bindings::bind(module, &mut tape)?;
        let loss = f(module, &mut tape, &bindings)?;
        let v = tape.value(loss).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "gradient check objective".into() })
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for (ci, &a) in grad.iter().enumerate() {
            let original = module.params()[pi].value().data()[ci];
            module.params_mut()[pi].value_mut().data_mut()[ci] = original + h;
            let plus = eval(module);
            module.params_mut()[pi].value_mut().data_mut()[ci] = original - h;
            let minus = eval(module);
            module.params_mut()[pi].value_mut().data_mut()[ci] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), ci));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{ParamSet, Parameter};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_at_three() {
        let mut set = ParamSet(vec![Parameter::new("w", Tensor::vector(vec![3.0]))]);
        let report = finite_diff_check(&mut set, 1e-5, |m, tape, b| {
            let w = b.var(&m.0[0]);
            let sq = tape.mul(w, w)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-7, "{report:?}");
        assert_eq!(report.coordinates, 1);
    }

    #[test]
    fn linear_layer_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut set = ParamSet(vec![
            Parameter::uniform("w", &[5, 3], 1.0, &mut rng),
            Parameter::uniform("b", &[3], 1.0, &mut rng),
        ]);
        let x = Tensor::vector(vec![0.2, -1.0, 0.7, 1.5, -0.3]);
        let report = finite_diff_check(&mut set, 1e-5, |m, tape, b| {
            let xv = tape.constant(x.clone());
            let z = tape.vecmat(xv, b.var(&m.0[0]))?;
            let z = tape.add(z, b.var(&m.0[1]))?;
            tape.cross_entropy(z, 1)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn corrupted_adjoint_is_detected() {
        let mut set = ParamSet(vec![Parameter::new("w", Tensor::vector(vec![0.5, -1.0]))]);
        let report = finite_diff_check_with(&mut set, 1e-5, Some(OpClass::Relu), |m, tape, b| {
            let w = b.var(&m.0[0]);
            let sq = tape.mul(w, w)?;
            let r = tape.relu(sq);
            Ok(tape.sum(r))
        })
        .unwrap();
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_objective_errors() {
        let mut set = ParamSet(vec![Parameter::new("w", Tensor::vector(vec![f64::MAX]))]);
        let res = finite_diff_check(&mut set, 1e-5, |m, tape, b| {
            let w = b.var(&m.0[0]);
            let s = tape.scale(w, 10.0);
            Ok(tape.sum(s))
        });
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }
}
