//! Central finite-difference gradient checking.

use crate::error::{Result, TensorError};
use crate::tape::{GradFault, Tape, Var};
use crate::tensor::Tensor;

/// One probed coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Value of `f` at the unperturbed parameters.
    pub loss: f64,
    pub probes: Vec<Probe>,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape's gradients of `f` against central differences with
/// step `epsilon` over every coordinate of every parameter.
///
/// `f` receives one leaf per parameter, in order, and must return a scalar.
pub fn grad_check<F>(params: &[Tensor], epsilon: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    run(params, epsilon, None, f)
}

/// Same as [`grad_check`] but with the analytic pass deliberately corrupted.
pub fn grad_check_with_fault<F>(
    params: &[Tensor],
    epsilon: f64,
    fault: GradFault,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    run(params, epsilon, Some(fault), f)
}

fn evaluate<F>(params: &[Tensor], f: &F, context: impl FnOnce() -> String) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let value = f(&tape, &vars)?.item()?;
    if !value.is_finite() {
        return Err(TensorError::NonFinite {
            context: context(),
            value,
        });
    }
    Ok(value)
}

fn run<F>(
    params: &[Tensor],
    epsilon: f64,
    fault: Option<GradFault>,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TensorError::Invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }

    let (loss, analytic): (f64, Vec<Vec<f64>>) = {
        let tape = fault.map_or_else(Tape::new, Tape::with_fault);
        let vars: Vec<Var<'_>> = params
            .iter()
            .map(|p| tape.leaf(p.clone().with_requires_grad(true)))
            .collect();
        let loss = f(&tape, &vars)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                context: "unperturbed loss".into(),
                value,
            });
        }
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(params)
            .map(|(v, p)| {
                tape.grad(*v)
                    .map_or_else(|| vec![0.0; p.numel()], Tensor::into_data)
            })
            .collect();
        (value, grads)
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        loss: 0.0,
        probes: Vec::new(),
    };
    report.loss = loss;
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &ga) in grads.iter().enumerate() {
            let original = probe[pi].data()[j];
            probe[pi].data_mut()[j] = original + epsilon;
            let plus = evaluate(&probe, &f, || format!("param {pi}[{j}] + eps"))?;
            probe[pi].data_mut()[j] = original - epsilon;
            let minus = evaluate(&probe, &f, || format!("param {pi}[{j}] - eps"))?;
            probe[pi].data_mut()[j] = original;

            let gn = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(ga, gn);
            report.coordinates += 1;
            report.probes.push(Probe {
                param: pi,
                index: j,
                analytic: ga,
                numeric: gn,
            });
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, j));
                report.analytic = ga;
                report.numeric = gn;
            }
        }
    }
    Ok(report)
}
