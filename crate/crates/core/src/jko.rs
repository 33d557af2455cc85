//! Implicit-Euler Wasserstein gradient-flow stepping for a single density.
//!
//! One outer step solves min_p W_gamma(p, q) + tau f(p) through a KL
//! minimization over couplings, handled by Dykstra's algorithm with both the
//! plan and its correction term kept in diagonally scaled form. The N x N
//! plan never exists in memory: each inner iteration costs a kernel apply
//! plus elementwise work.

use crate::domain::neumaier_sum;
use crate::error::{Error, Result};
use crate::kernels::KernelOp;
use crate::prox::ProxFn;

/// Smallest density value fed to the scaling recurrences. Zeros in targets
/// and prox outputs are lifted here so every scaling vector stays strictly
/// positive while remaining far inside the admissible range below.
pub(crate) const DENSITY_FLOOR: f64 = 1e-100;

/// Admissible range for scaling-vector entries; leaving it aborts the run.
const SCALE_MIN: f64 = 1e-150;
const SCALE_MAX: f64 = 1e150;

/// Parameters of one flow: entropic strength, time step, inner stopping
/// tolerance and iteration cap.
#[derive(Debug, Clone, Copy)]
pub struct FlowParams {
    pub gamma: f64,
    pub tau: f64,
    pub eps: f64,
    pub max_inner: usize,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("tau", self.tau), ("eps", self.eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_inner < 2 {
            return Err(Error::Config(format!(
                "max_inner must allow at least one sweep, got {}",
                self.max_inner
            )));
        }
        Ok(())
    }

    /// Prox strength of the inner KL problem.
    pub fn sigma(&self) -> f64 {
        self.tau / self.gamma
    }
}

/// Snapshot of the scaling iteration: the plan is diag(a) xi diag(b) and the
/// Dykstra correction is the rank-1 matrix u v^T.
#[derive(Debug, Clone)]
pub struct ScalingState {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iteration: usize,
}

/// Per-step diagnostics, one row per outer step.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub inner_iterations: usize,
    pub final_violation: f64,
    pub mass: f64,
    pub max_density: f64,
}

pub(crate) fn floor_density(q: &[f64]) -> Vec<f64> {
    q.iter().map(|&x| x.max(DENSITY_FLOOR)).collect()
}

pub(crate) fn check_range(vecs: [&[f64]; 4]) -> Result<()> {
    for vec in vecs {
        for &x in vec {
            if !(SCALE_MIN..=SCALE_MAX).contains(&x) {
                return Err(Error::ScalingOutOfRange { value: x });
            }
        }
    }
    Ok(())
}

/// Dykstra iteration in scaling form for one implicit step. Odd iterations
/// project the column marginal onto the step's source density; even
/// iterations apply the functional's prox to the row marginal. `advance`
/// performs a single iteration so callers can inspect every iterate.
pub struct JkoDykstra<'a> {
    kernel: &'a dyn KernelOp,
    prox: &'a dyn ProxFn,
    q: Vec<f64>,
    sigma: f64,
    iteration: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    u_pp: Vec<f64>,
    v_pp: Vec<f64>,
    last_prox: Vec<f64>,
}

impl<'a> JkoDykstra<'a> {
    /// `q` may contain zeros; they are lifted to the density floor
    /// internally. `sigma` is the prox strength tau / gamma.
    pub fn new(kernel: &'a dyn KernelOp, prox: &'a dyn ProxFn, q: &[f64], sigma: f64) -> Result<Self> {
        if q.len() != kernel.len() {
            return Err(Error::Domain(format!(
                "density has {} entries but kernel acts on {}",
                q.len(),
                kernel.len()
            )));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {sigma}")));
        }
        let n = q.len();
        let ones = vec![1.0; n];
        Ok(JkoDykstra {
            kernel,
            prox,
            q: floor_density(q),
            sigma,
            iteration: 0,
            a: ones.clone(),
            b: ones.clone(),
            u: ones.clone(),
            v: ones.clone(),
            u_pp: ones.clone(),
            v_pp: ones.clone(),
            last_prox: Vec::new(),
        })
    }

    /// Completed iteration count.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Output of the most recent even iteration's prox, exactly as the prox
    /// produced it (no floor applied).
    pub fn last_prox(&self) -> Option<&[f64]> {
        if self.last_prox.is_empty() {
            None
        } else {
            Some(&self.last_prox)
        }
    }

    pub fn state(&self) -> ScalingState {
        ScalingState {
            a: self.a.clone(),
            b: self.b.clone(),
            u: self.u.clone(),
            v: self.v.clone(),
            iteration: self.iteration,
        }
    }

    /// Run one Dykstra iteration (odd: column projection; even: row prox).
    pub fn advance(&mut self) -> Result<()> {
        let ell = self.iteration + 1;
        let (a_new, b_new) = if ell % 2 == 1 {
            let a_new: Vec<f64> = self.a.iter().zip(&self.u_pp).map(|(&a, &u)| a * u).collect();
            let kt = self.kernel.apply_transpose(&a_new)?;
            let b_new: Vec<f64> = self.q.iter().zip(&kt).map(|(&q, &k)| q / k).collect();
            (a_new, b_new)
        } else {
            let b_new: Vec<f64> = self.b.iter().zip(&self.v_pp).map(|(&b, &v)| b * v).collect();
            let kb = self.kernel.apply(&b_new)?;
            let tilde_row: Vec<f64> = self
                .a
                .iter()
                .zip(&self.u_pp)
                .zip(&kb)
                .map(|((&a, &u), &k)| a * u * k)
                .collect();
            let p = self.prox.evaluate(&tilde_row, self.sigma)?;
            let a_new: Vec<f64> = p
                .iter()
                .zip(&kb)
                .map(|(&pi, &k)| pi.max(DENSITY_FLOOR) / k)
                .collect();
            self.last_prox = p;
            (a_new, b_new)
        };
        let u_new: Vec<f64> = self
            .u_pp
            .iter()
            .zip(&self.a)
            .zip(&a_new)
            .map(|((&u, &prev), &new)| u * prev / new)
            .collect();
        let v_new: Vec<f64> = self
            .v_pp
            .iter()
            .zip(&self.b)
            .zip(&b_new)
            .map(|((&v, &prev), &new)| v * prev / new)
            .collect();
        check_range([&a_new, &b_new, &u_new, &v_new])?;
        self.u_pp = std::mem::replace(&mut self.u, u_new);
        self.v_pp = std::mem::replace(&mut self.v, v_new);
        self.a = a_new;
        self.b = b_new;
        self.iteration = ell;
        Ok(())
    }

    /// L1 violation of the column-marginal constraint at the current state.
    pub fn violation(&self) -> Result<f64> {
        let kt = self.kernel.apply_transpose(&self.a)?;
        Ok(l1_deviation(&self.b, &kt, &self.q))
    }
}

fn l1_deviation(b: &[f64], kt: &[f64], q: &[f64]) -> f64 {
    let diffs: Vec<f64> = b
        .iter()
        .zip(kt)
        .zip(q)
        .map(|((&bj, &kj), &qj)| (bj * kj - qj).abs())
        .collect();
    neumaier_sum(&diffs)
}

/// L1 distance between the column marginal implied by `state` and `q`.
pub fn constraint_violation(state: &ScalingState, kernel: &dyn KernelOp, q: &[f64]) -> Result<f64> {
    let kt = kernel.apply_transpose(&state.a)?;
    Ok(l1_deviation(&state.b, &kt, q))
}

/// One implicit step from source density `q`. Returns the new density and
/// diagnostics. The returned density is the raw prox output of the final
/// even iteration.
pub fn jko_step(
    kernel: &dyn KernelOp,
    prox: &dyn ProxFn,
    q: &[f64],
    params: &FlowParams,
) -> Result<(Vec<f64>, StepDiagnostics)> {
    params.validate()?;
    let mut dykstra = JkoDykstra::new(kernel, prox, q, params.sigma())?;
    loop {
        dykstra.advance()?;
        dykstra.advance()?;
        let violation = dykstra.violation()?;
        if violation <= params.eps {
            let p = dykstra.last_prox.clone();
            let mass = neumaier_sum(&p);
            let max_density = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            return Ok((
                p,
                StepDiagnostics {
                    inner_iterations: dykstra.iteration,
                    final_violation: violation,
                    mass,
                    max_density,
                },
            ));
        }
        if dykstra.iteration >= params.max_inner {
            return Err(Error::MaxInnerExceeded {
                max_inner: params.max_inner,
                violation,
                eps: params.eps,
            });
        }
    }
}

/// Run `steps` outer steps from `p0`, emitting `steps + 1` frames through
/// `on_frame` (frame 0 is `p0` itself). Returns one diagnostics row per
/// step taken.
pub fn run_flow(
    kernel: &dyn KernelOp,
    prox: &dyn ProxFn,
    p0: &[f64],
    params: &FlowParams,
    steps: usize,
    mut on_frame: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<Vec<StepDiagnostics>> {
    params.validate()?;
    on_frame(0, p0)?;
    let mut p = p0.to_vec();
    let mut diagnostics = Vec::with_capacity(steps);
    for step in 1..=steps {
        let (next, diag) = jko_step(kernel, prox, &p, params).map_err(|e| Error::Flow {
            step,
            source: Box::new(e),
        })?;
        on_frame(step, &next)?;
        diagnostics.push(diag);
        p = next;
    }
    Ok(diagnostics)
}
