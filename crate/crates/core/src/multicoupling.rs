//! Dykstra scaling over several couplings at once, with joint proximal maps
//! acting across the row (odd sweeps) and column (even sweeps) marginals of
//! all couplings. Used for target attraction, pairwise attraction of two
//! densities, and functionals of a sum of densities.
//!
//! The per-coupling state mirrors the single-coupling stepper exactly: at
//! M = 1 with the row prox pinning the source density, the iterates coincide
//! with `jko::JkoDykstra` under the swap (a, b, u, v) -> (b, a, v, u).

use std::sync::Arc;

use crate::domain::{neumaier_sum, PotentialField};
use crate::error::{Error, Result};
use crate::jko::{check_range, floor_density, DENSITY_FLOOR};
use crate::kernels::KernelOp;
use crate::prox::{
    EqualityProx, JointProx, ProxFn, ShiftJointProx, ShiftProx, SingletonProx, SumProx, TiePinProx,
};

/// One multi-coupling KL minimization: kernels, KL weights and the two joint
/// proxes. The weights only document the geometry; they are already baked
/// into the proxes' exponents and strengths, and the scaling updates are
/// weight-free.
pub struct MultiCouplingProblem<'a> {
    kernels: Vec<&'a dyn KernelOp>,
    lambda: Vec<f64>,
    psi1: Box<dyn JointProx>,
    psi2: Box<dyn JointProx>,
}

impl<'a> MultiCouplingProblem<'a> {
    pub fn new(
        kernels: Vec<&'a dyn KernelOp>,
        lambda: Vec<f64>,
        psi1: Box<dyn JointProx>,
        psi2: Box<dyn JointProx>,
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::Config("at least one coupling is required".into()));
        }
        let n = kernels[0].len();
        if kernels.iter().any(|k| k.len() != n) {
            return Err(Error::Config("kernels have mismatched dimensions".into()));
        }
        if lambda.len() != kernels.len() {
            return Err(Error::Config(format!(
                "{} weights for {} couplings",
                lambda.len(),
                kernels.len()
            )));
        }
        if lambda.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::Config("KL weights must be positive".into()));
        }
        if psi1.arity() != kernels.len() || psi2.arity() != kernels.len() {
            return Err(Error::Config(format!(
                "joint prox arities ({}, {}) do not match coupling count {}",
                psi1.arity(),
                psi2.arity(),
                kernels.len()
            )));
        }
        Ok(MultiCouplingProblem {
            kernels,
            lambda,
            psi1,
            psi2,
        })
    }

    pub fn coupling_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn node_count(&self) -> usize {
        self.kernels[0].len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }
}

/// Snapshot of all per-coupling scaling vectors.
#[derive(Debug, Clone)]
pub struct MultiScalingState {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub iteration: usize,
}

/// Converged solution: both marginal families plus iteration stats.
#[derive(Debug, Clone)]
pub struct MultiSolution {
    /// Row marginals, exactly as the last odd-sweep prox produced them.
    pub row_marginals: Vec<Vec<f64>>,
    /// Column marginals from the last even sweep.
    pub col_marginals: Vec<Vec<f64>>,
    pub inner_iterations: usize,
    pub final_residual: f64,
}

/// The sweep engine. Odd iterations apply psi1 across row marginals, even
/// iterations psi2 across column marginals; `advance` runs one sweep so
/// callers can compare iterates against other paths.
pub struct MultiDykstra<'a, 'b> {
    problem: &'b MultiCouplingProblem<'a>,
    iteration: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    u_pp: Vec<Vec<f64>>,
    v_pp: Vec<Vec<f64>>,
    last_psi1: Vec<Vec<f64>>,
    last_psi2: Vec<Vec<f64>>,
    // xi_m^T(a_m) from the latest even sweep, reused by `residual`.
    cached_ka: Vec<Vec<f64>>,
}

impl<'a, 'b> MultiDykstra<'a, 'b> {
    pub fn new(problem: &'b MultiCouplingProblem<'a>) -> Self {
        let m = problem.coupling_count();
        let n = problem.node_count();
        let ones = || vec![vec![1.0; n]; m];
        MultiDykstra {
            problem,
            iteration: 0,
            a: ones(),
            b: ones(),
            u: ones(),
            v: ones(),
            u_pp: ones(),
            v_pp: ones(),
            last_psi1: Vec::new(),
            last_psi2: Vec::new(),
            cached_ka: Vec::new(),
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn last_psi1(&self) -> Option<&[Vec<f64>]> {
        if self.last_psi1.is_empty() {
            None
        } else {
            Some(&self.last_psi1)
        }
    }

    pub fn last_psi2(&self) -> Option<&[Vec<f64>]> {
        if self.last_psi2.is_empty() {
            None
        } else {
            Some(&self.last_psi2)
        }
    }

    pub fn state(&self) -> MultiScalingState {
        MultiScalingState {
            a: self.a.clone(),
            b: self.b.clone(),
            u: self.u.clone(),
            v: self.v.clone(),
            iteration: self.iteration,
        }
    }

    /// Run one sweep across all couplings.
    pub fn advance(&mut self) -> Result<()> {
        let m_count = self.problem.coupling_count();
        let ell = self.iteration + 1;
        let odd = ell % 2 == 1;

        // Tilde factors fold in each constraint's own correction from two
        // sweeps back; the other side's factor is untouched at this parity.
        let a_tilde: Vec<Vec<f64>> = (0..m_count)
            .map(|m| mul(&self.a[m], &self.u_pp[m]))
            .collect();
        let b_tilde: Vec<Vec<f64>> = (0..m_count)
            .map(|m| mul(&self.b[m], &self.v_pp[m]))
            .collect();

        let (a_new, b_new) = if odd {
            let kb: Vec<Vec<f64>> = (0..m_count)
                .map(|m| self.problem.kernels[m].apply(&b_tilde[m]))
                .collect::<Result<_>>()?;
            let marginals: Vec<Vec<f64>> =
                (0..m_count).map(|m| mul(&a_tilde[m], &kb[m])).collect();
            let outputs = self.problem.psi1.evaluate(&marginals)?;
            let a_new: Vec<Vec<f64>> = (0..m_count)
                .map(|m| div_floored(&outputs[m], &kb[m]))
                .collect();
            self.last_psi1 = outputs;
            (a_new, b_tilde)
        } else {
            let ka: Vec<Vec<f64>> = (0..m_count)
                .map(|m| self.problem.kernels[m].apply_transpose(&a_tilde[m]))
                .collect::<Result<_>>()?;
            let marginals: Vec<Vec<f64>> =
                (0..m_count).map(|m| mul(&b_tilde[m], &ka[m])).collect();
            let outputs = self.problem.psi2.evaluate(&marginals)?;
            let b_new: Vec<Vec<f64>> = (0..m_count)
                .map(|m| div_floored(&outputs[m], &ka[m]))
                .collect();
            self.last_psi2 = outputs;
            self.cached_ka = ka;
            (a_tilde, b_new)
        };

        for m in 0..m_count {
            let u_new = ratio_update(&self.u_pp[m], &self.a[m], &a_new[m]);
            let v_new = ratio_update(&self.v_pp[m], &self.b[m], &b_new[m]);
            check_range([&a_new[m], &b_new[m], &u_new, &v_new])?;
            self.u_pp[m] = std::mem::replace(&mut self.u[m], u_new);
            self.v_pp[m] = std::mem::replace(&mut self.v[m], v_new);
        }
        self.a = a_new;
        self.b = b_new;
        self.iteration = ell;
        Ok(())
    }

    /// Residual after a completed odd+even pair: L1 deviation of the current
    /// marginals from the latest prox outputs, summed over couplings and
    /// both marginal families.
    pub fn residual(&self) -> Result<f64> {
        let mut total = 0.0;
        for m in 0..self.problem.coupling_count() {
            let kb = self.problem.kernels[m].apply(&self.b[m])?;
            let row = mul(&self.a[m], &kb);
            total += l1_diff(&row, &self.last_psi1[m]);
            let col = mul(&self.b[m], &self.cached_ka[m]);
            total += l1_diff(&col, &self.last_psi2[m]);
        }
        Ok(total)
    }
}

fn mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(&a, &b)| a * b).collect()
}

fn div_floored(num: &[f64], den: &[f64]) -> Vec<f64> {
    num.iter()
        .zip(den)
        .map(|(&p, &k)| p.max(DENSITY_FLOOR) / k)
        .collect()
}

fn ratio_update(pp: &[f64], prev: &[f64], new: &[f64]) -> Vec<f64> {
    pp.iter()
        .zip(prev)
        .zip(new)
        .map(|((&c, &p), &n)| c * p / n)
        .collect()
}

fn l1_diff(x: &[f64], y: &[f64]) -> f64 {
    let diffs: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| (a - b).abs()).collect();
    neumaier_sum(&diffs)
}

/// Solve one multi-coupling problem to tolerance `eps`.
pub fn generalized_scaling_solve(
    problem: &MultiCouplingProblem,
    eps: f64,
    max_inner: usize,
) -> Result<MultiSolution> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut dykstra = MultiDykstra::new(problem);
    loop {
        dykstra.advance()?;
        dykstra.advance()?;
        let residual = dykstra.residual()?;
        if residual <= eps {
            return Ok(MultiSolution {
                row_marginals: dykstra.last_psi1.clone(),
                col_marginals: dykstra.last_psi2.clone(),
                inner_iterations: dykstra.iteration,
                final_residual: residual,
            });
        }
        if dykstra.iteration >= max_inner {
            return Err(Error::MaxInnerExceeded {
                max_inner,
                violation: residual,
                eps,
            });
        }
    }
}

fn maybe_shifted(
    h: Option<Arc<dyn ProxFn>>,
    w: Option<&PotentialField>,
) -> Option<Arc<dyn ProxFn>> {
    match (h, w) {
        (h, None) => h,
        (h, Some(w)) => {
            let base: Box<dyn ProxFn> = match h {
                Some(h) => Box::new(h),
                None => Box::new(crate::prox::IdentityProx),
            };
            Some(Arc::new(ShiftProx::new(base, w.clone())))
        }
    }
}

/// Attraction of a single density toward a fixed target `r`, with an
/// optional extra functional h on the evolving density. Two couplings: the
/// step's transport from `q` and the attraction transport from `r`, KL
/// weights (1, tau).
pub struct AttractionScenario {
    pub target: Vec<f64>,
    pub tau: f64,
    /// Prox strength of the flow functional, tau / gamma.
    pub sigma: f64,
    pub h: Option<Arc<dyn ProxFn>>,
}

/// Joint proxes for one attraction step from source `q`.
pub fn attraction_psi(
    scenario: &AttractionScenario,
    q: &[f64],
) -> Result<(Box<dyn JointProx>, Box<dyn JointProx>)> {
    let exponents = EqualityProx::normalized_exponents(&[1.0, scenario.tau]);
    let inner_sigma = scenario.sigma / (1.0 + scenario.tau);
    let psi1 = Box::new(EqualityProx::new(
        exponents,
        scenario.h.clone(),
        inner_sigma,
    ));
    let psi2 = Box::new(SingletonProx::new(vec![
        floor_density(q),
        floor_density(&scenario.target),
    ]));
    Ok((psi1, psi2))
}

/// Two densities, each transported from its own source, attracted to each
/// other through a third coupling with KL weights (1, 1, tau * alpha).
/// Per-density functionals h1, h2 and linear potentials w1, w2 act on the
/// tied marginals.
pub struct PairwiseScenario {
    pub alpha: f64,
    pub tau: f64,
    /// Prox strength of the flow functional, tau / gamma.
    pub sigma: f64,
    pub h1: Option<Arc<dyn ProxFn>>,
    pub h2: Option<Arc<dyn ProxFn>>,
    pub w1: Option<PotentialField>,
    pub w2: Option<PotentialField>,
    /// Replace the published tie exponents (1/(1+tau*alpha), tau/(1+tau*alpha))
    /// with the weight-normalized pair (1/(1+tau*alpha), tau*alpha/(1+tau*alpha)).
    /// The two coincide at alpha = 1.
    pub normalized_exponents: bool,
}

impl PairwiseScenario {
    fn tie_exponents(&self) -> (f64, f64) {
        let ta = self.tau * self.alpha;
        if self.normalized_exponents {
            (1.0 / (1.0 + ta), ta / (1.0 + ta))
        } else {
            (1.0 / (1.0 + ta), self.tau / (1.0 + ta))
        }
    }
}

/// Joint proxes for one pairwise step from sources (q1, q2). Couplings are
/// ordered: transport of density 1, transport of density 2, attraction.
/// Density 1 lives on the row side (tied in psi1 with coupling 2's rows),
/// density 2 on the column side.
pub fn pairwise_psi(
    scenario: &PairwiseScenario,
    q1: &[f64],
    q2: &[f64],
) -> Result<(Box<dyn JointProx>, Box<dyn JointProx>)> {
    if !(scenario.alpha.is_finite() && scenario.alpha > 0.0) {
        return Err(Error::Config(format!(
            "alpha must be positive, got {}",
            scenario.alpha
        )));
    }
    let exponents = scenario.tie_exponents();
    let inner_sigma = scenario.sigma / (1.0 + scenario.tau * scenario.alpha);
    let psi1 = Box::new(TiePinProx::new(
        3,
        (0, 2),
        exponents,
        maybe_shifted(scenario.h1.clone(), scenario.w1.as_ref()),
        inner_sigma,
        1,
        floor_density(q2),
    )?);
    let psi2 = Box::new(TiePinProx::new(
        3,
        (1, 2),
        exponents,
        maybe_shifted(scenario.h2.clone(), scenario.w2.as_ref()),
        inner_sigma,
        0,
        floor_density(q1),
    )?);
    Ok((psi1, psi2))
}

/// Two densities coupled through a functional of their sum plus linear
/// potentials, KL weights (1, 1).
pub struct SumCouplingScenario {
    /// Prox strength of the flow functional, tau / gamma.
    pub sigma: f64,
    pub h: Arc<dyn ProxFn>,
    pub w1: Option<PotentialField>,
    pub w2: Option<PotentialField>,
}

/// Joint proxes for one summation-coupling step from sources (q1, q2).
pub fn sum_coupling_psi(
    scenario: &SumCouplingScenario,
    q1: &[f64],
    q2: &[f64],
) -> Result<(Box<dyn JointProx>, Box<dyn JointProx>)> {
    let n = q1.len();
    let zero = || vec![0.0; n];
    let scaled = |w: &Option<PotentialField>| -> Vec<f64> {
        match w {
            Some(w) => w.values().iter().map(|&x| scenario.sigma * x).collect(),
            None => zero(),
        }
    };
    let sum: Box<dyn JointProx> = Box::new(SumProx::new(2, scenario.h.clone(), scenario.sigma));
    let psi1: Box<dyn JointProx> = if scenario.w1.is_none() && scenario.w2.is_none() {
        sum
    } else {
        Box::new(ShiftJointProx::new(
            sum,
            &[scaled(&scenario.w1), scaled(&scenario.w2)],
            &[1.0, 1.0],
        )?)
    };
    let psi2 = Box::new(SingletonProx::new(vec![
        floor_density(q1),
        floor_density(q2),
    ]));
    Ok((psi1, psi2))
}

/// What a multi-density flow needs per outer step: KL weights, the step's
/// joint proxes given the current densities, and which solved marginals
/// become the next densities.
pub trait MultiScenario {
    fn coupling_count(&self) -> usize;

    fn density_count(&self) -> usize;

    fn lambda(&self) -> Vec<f64>;

    fn build(&self, current: &[Vec<f64>]) -> Result<(Box<dyn JointProx>, Box<dyn JointProx>)>;

    fn read(&self, solution: &MultiSolution) -> Vec<Vec<f64>>;
}

impl MultiScenario for AttractionScenario {
    fn coupling_count(&self) -> usize {
        2
    }

    fn density_count(&self) -> usize {
        1
    }

    fn lambda(&self) -> Vec<f64> {
        vec![1.0, self.tau]
    }

    fn build(&self, current: &[Vec<f64>]) -> Result<(Box<dyn JointProx>, Box<dyn JointProx>)> {
        attraction_psi(self, &current[0])
    }

    fn read(&self, solution: &MultiSolution) -> Vec<Vec<f64>> {
        // The tied row marginals are equal; slot 0 is the deterministic pick.
        vec![solution.row_marginals[0].clone()]
    }
}

impl MultiScenario for PairwiseScenario {
    fn coupling_count(&self) -> usize {
        3
    }

    fn density_count(&self) -> usize {
        2
    }

    fn lambda(&self) -> Vec<f64> {
        vec![1.0, 1.0, self.tau * self.alpha]
    }

    fn build(&self, current: &[Vec<f64>]) -> Result<(Box<dyn JointProx>, Box<dyn JointProx>)> {
        pairwise_psi(self, &current[0], &current[1])
    }

    fn read(&self, solution: &MultiSolution) -> Vec<Vec<f64>> {
        vec![
            solution.row_marginals[0].clone(),
            solution.col_marginals[1].clone(),
        ]
    }
}

impl MultiScenario for SumCouplingScenario {
    fn coupling_count(&self) -> usize {
        2
    }

    fn density_count(&self) -> usize {
        2
    }

    fn lambda(&self) -> Vec<f64> {
        vec![1.0, 1.0]
    }

    fn build(&self, current: &[Vec<f64>]) -> Result<(Box<dyn JointProx>, Box<dyn JointProx>)> {
        sum_coupling_psi(self, &current[0], &current[1])
    }

    fn read(&self, solution: &MultiSolution) -> Vec<Vec<f64>> {
        vec![
            solution.row_marginals[0].clone(),
            solution.row_marginals[1].clone(),
        ]
    }
}

/// Per-step diagnostics of a multi-density flow.
#[derive(Debug, Clone)]
pub struct MultiStepDiagnostics {
    pub inner_iterations: usize,
    pub final_residual: f64,
    pub masses: Vec<f64>,
    pub max_densities: Vec<f64>,
}

/// Run a multi-density flow for `steps` outer steps. `kernels` must have one
/// entry per coupling (entries may repeat). Frames carry all evolving
/// densities; frame 0 is the initial tuple.
pub fn run_multi_flow(
    kernels: &[&dyn KernelOp],
    scenario: &dyn MultiScenario,
    initial: &[Vec<f64>],
    eps: f64,
    max_inner: usize,
    steps: usize,
    mut on_frame: impl FnMut(usize, &[Vec<f64>]) -> Result<()>,
) -> Result<Vec<MultiStepDiagnostics>> {
    if initial.len() != scenario.density_count() {
        return Err(Error::Config(format!(
            "scenario evolves {} densities, got {} initial ones",
            scenario.density_count(),
            initial.len()
        )));
    }
    if kernels.len() != scenario.coupling_count() {
        return Err(Error::Config(format!(
            "scenario uses {} couplings, got {} kernels",
            scenario.coupling_count(),
            kernels.len()
        )));
    }
    on_frame(0, initial)?;
    let mut current: Vec<Vec<f64>> = initial.to_vec();
    let mut diagnostics = Vec::with_capacity(steps);
    for step in 1..=steps {
        let run = || -> Result<(Vec<Vec<f64>>, MultiStepDiagnostics)> {
            let (psi1, psi2) = scenario.build(&current)?;
            let problem =
                MultiCouplingProblem::new(kernels.to_vec(), scenario.lambda(), psi1, psi2)?;
            let solution = generalized_scaling_solve(&problem, eps, max_inner)?;
            let next = scenario.read(&solution);
            let diag = MultiStepDiagnostics {
                inner_iterations: solution.inner_iterations,
                final_residual: solution.final_residual,
                masses: next.iter().map(|p| neumaier_sum(p)).collect(),
                max_densities: next
                    .iter()
                    .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .collect(),
            };
            Ok((next, diag))
        };
        let (next, diag) = run().map_err(|e| Error::Flow {
            step,
            source: Box::new(e),
        })?;
        on_frame(step, &next)?;
        diagnostics.push(diag);
        current = next;
    }
    Ok(diagnostics)
}
