//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::ParameterStore;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relative error bound.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that components that are
    /// zero up to rounding compare on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Components whose difference stencil straddles a kink (ReLU, max-pool,
    /// top-N switch). These are reported, not compared.
    pub nonsmooth: usize,
    pub max_rel_err: f64,
    pub failures: Vec<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.nonsmooth += other.nonsmooth;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks d(loss)/d(param) for every scalar of every parameter in `store`
/// (or only those whose name passes `filter`).
pub fn check_parameters<F>(
    store: &ParameterStore,
    loss_fn: F,
    cfg: GradCheckConfig,
    filter: impl Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut work = store.clone();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, &work)?;
    let f0 = tape.scalar(loss);
    tape.backward(loss, &mut work)?;
    let analytic = work.clone();

    let names: Vec<String> = store.names().filter(|n| filter(n)).map(String::from).collect();
    let mut report = GradCheckReport::default();
    for name in names {
        let n = store.get(&name)?.len();
        for i in 0..n {
            let x0 = store.get(&name)?.data()[i];
            let eval = |work: &mut ParameterStore, x: f64| -> Result<f64> {
                work.get_mut(&name)?.data_mut()[i] = x;
                let mut t = Tape::new();
                let l = loss_fn(&mut t, work)?;
                Ok(t.scalar(l))
            };
            let fp = eval(&mut work, x0 + cfg.step)?;
            let fm = eval(&mut work, x0 - cfg.step)?;
            work.get_mut(&name)?.data_mut()[i] = x0;
            let a = analytic.grad(&name)?.data()[i];
            report.merge(compare(&name, i, a, f0, fp, fm, cfg));
        }
    }
    Ok(report)
}

/// Checks the gradient with respect to a constant input of the graph.
/// `build` receives the (possibly perturbed) input values.
pub fn check_input<F>(input: &[f64], build: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[f64]) -> Result<(Var, Var)>,
{
    let mut tape = Tape::new();
    let (x, loss) = build(&mut tape, input)?;
    let f0 = tape.scalar(loss);
    let grads = tape.gradients(loss)?;
    let analytic: Vec<f64> = grads.get(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
    let mut report = GradCheckReport::default();
    let mut work = input.to_vec();
    for i in 0..input.len() {
        let mut eval = |v: f64| -> Result<f64> {
            work[i] = v;
            let mut t = Tape::new();
            let (_, l) = build(&mut t, &work)?;
            Ok(t.scalar(l))
        };
        let fp = eval(input[i] + cfg.step)?;
        let fm = eval(input[i] - cfg.step)?;
        work[i] = input[i];
        report.merge(compare("input", i, analytic[i], f0, fp, fm, cfg));
    }
    Ok(report)
}

fn compare(name: &str, i: usize, a: f64, f0: f64, fp: f64, fm: f64, cfg: GradCheckConfig) -> GradCheckReport {
    let h = cfg.step;
    let central = (fp - fm) / (2.0 * h);
    let err = relative_error(a, central, cfg.floor);
    let mut r = GradCheckReport { checked: 1, ..Default::default() };
    if err < cfg.tolerance {
        r.max_rel_err = err;
        return r;
    }
    // A kink inside the stencil shows up as disagreeing one-sided slopes with
    // the analytic value matching one side.
    let fwd = (fp - f0) / h;
    let bwd = (f0 - fm) / h;
    let jump = (fwd - bwd).abs();
    let side = (a - fwd).abs().min((a - bwd).abs());
    if jump > 1e-3 * a.abs().max(1e-3) && side < 0.25 * jump {
        r.checked = 0;
        r.nonsmooth = 1;
        return r;
    }
    r.max_rel_err = err;
    r.failures.push((name.to_string(), i, a, central));
    r
}
