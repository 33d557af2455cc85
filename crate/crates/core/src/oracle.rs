//! Slow reference solvers, deliberately written along different algorithmic
//! paths than the fast code: dense matrices instead of scaling vectors,
//! Euclidean projected descent instead of KL proximal sweeps, direct Fourier
//! sums instead of factorized solves. Tests cross-check the fast paths
//! against these.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{DenseKernel, KernelOp};
use crate::prox::{gen_entropy_value, kl_divergence, ProxFn};

/// Materialize any kernel as a dense row-major matrix by applying it to the
/// standard basis.
pub fn materialize(kernel: &dyn KernelOp) -> Result<Vec<f64>> {
    let n = kernel.len();
    let mut out = vec![0.0; n * n];
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = kernel.apply(&basis)?;
        basis[j] = 0.0;
        for i in 0..n {
            out[i * n + j] = col[i];
        }
    }
    Ok(out)
}

/// Deterministic symmetric kernel with entries in (0, 1].
pub fn random_symmetric_kernel(n: usize, seed: u64) -> DenseKernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = rng.gen_range(0.05..=1.0);
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    DenseKernel::new(n, entries, 1.0).expect("generated kernel is valid")
}

/// Deterministic strictly positive density with unit mass.
pub fn random_density(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn row_sums(pi: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| pi[i * n..(i + 1) * n].iter().sum())
        .collect()
}

fn col_sums(pi: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..n {
        for (j, o) in out.iter_mut().enumerate() {
            *o += pi[i * n + j];
        }
    }
    out
}

/// Dense alternating KL projections with explicit correction matrices. Odd
/// iterations rescale columns onto `q`; even iterations apply `prox` to the
/// row sums. The correction z is a full matrix here, not a rank-1 factor.
pub struct DenseDykstra<'a> {
    n: usize,
    xi: Vec<f64>,
    q: Vec<f64>,
    prox: &'a dyn ProxFn,
    sigma: f64,
    pi: Vec<f64>,
    z: Vec<f64>,
    z_prev: Vec<f64>,
    iteration: usize,
}

impl<'a> DenseDykstra<'a> {
    pub fn new(xi: Vec<f64>, q: &[f64], prox: &'a dyn ProxFn, sigma: f64) -> Result<Self> {
        let n = q.len();
        if xi.len() != n * n {
            return Err(Error::Config(format!(
                "kernel matrix has {} entries for {n} nodes",
                xi.len()
            )));
        }
        Ok(DenseDykstra {
            n,
            pi: xi.clone(),
            xi,
            q: q.iter().map(|&x| x.max(1e-100)).collect(),
            prox,
            sigma,
            z: vec![1.0; n * n],
            z_prev: vec![1.0; n * n],
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn plan(&self) -> &[f64] {
        &self.pi
    }

    pub fn correction(&self) -> &[f64] {
        &self.z
    }

    pub fn advance(&mut self) -> Result<()> {
        let n = self.n;
        let tilde: Vec<f64> = self
            .pi
            .iter()
            .zip(&self.z_prev)
            .map(|(&p, &z)| p * z)
            .collect();
        let next = if (self.iteration + 1) % 2 == 1 {
            let cols = col_sums(&tilde, n);
            let mut next = tilde.clone();
            for i in 0..n {
                for j in 0..n {
                    next[i * n + j] *= self.q[j] / cols[j];
                }
            }
            next
        } else {
            let rows = row_sums(&tilde, n);
            let proxed = self.prox.evaluate(&rows, self.sigma)?;
            let mut next = tilde.clone();
            for i in 0..n {
                let scale = proxed[i].max(1e-100) / rows[i];
                for j in 0..n {
                    next[i * n + j] *= scale;
                }
            }
            next
        };
        let z_new: Vec<f64> = self
            .z_prev
            .iter()
            .zip(&self.pi)
            .zip(&next)
            .map(|((&z, &old), &new)| z * old / new)
            .collect();
        self.z_prev = std::mem::replace(&mut self.z, z_new);
        self.pi = next;
        self.iteration += 1;
        Ok(())
    }

    #[allow(dead_code)]
    fn xi(&self) -> &[f64] {
        &self.xi
    }
}

/// Marginal constraints of the dense primal problems, acting on a stack of
/// couplings laid out contiguously in row-major order.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// Column sums of one coupling pinned to a target (with nonnegativity).
    ColumnSums { coupling: usize, target: Vec<f64> },
    /// Row sums of one coupling pinned to a target (with nonnegativity).
    RowSums { coupling: usize, target: Vec<f64> },
    /// Row sums of one coupling capped at kappa.
    RowSumCap { coupling: usize, kappa: f64 },
    /// Row sums of two couplings forced equal.
    TieRows { a: usize, b: usize },
    /// Column sums of two couplings forced equal.
    TieCols { a: usize, b: usize },
    /// Row sums of one coupling equal to column sums of another.
    TieRowsToCols { rows_of: usize, cols_of: usize },
    /// Entrywise nonnegativity across all couplings.
    Nonnegative,
}

/// Project `y` onto the simplex slice {x >= 0, sum x = s} (exact, by sorting).
fn project_fixed_sum(y: &mut [f64], s: f64) {
    let mut sorted: Vec<f64> = y.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = (sorted[0] - s).min(0.0);
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - s) / (k as f64 + 1.0);
        if v - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for x in y.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

impl Constraint {
    fn project(&self, x: &mut [f64], m_count: usize, n: usize) {
        let block = n * n;
        match self {
            Constraint::ColumnSums { coupling, target } => {
                let base = coupling * block;
                for j in 0..n {
                    let mut col: Vec<f64> = (0..n).map(|i| x[base + i * n + j]).collect();
                    project_fixed_sum(&mut col, target[j]);
                    for i in 0..n {
                        x[base + i * n + j] = col[i];
                    }
                }
            }
            Constraint::RowSums { coupling, target } => {
                let base = coupling * block;
                for i in 0..n {
                    project_fixed_sum(&mut x[base + i * n..base + (i + 1) * n], target[i]);
                }
            }
            Constraint::RowSumCap { coupling, kappa } => {
                let base = coupling * block;
                for i in 0..n {
                    let row = &mut x[base + i * n..base + (i + 1) * n];
                    let s: f64 = row.iter().sum();
                    if s > *kappa {
                        let shift = (s - kappa) / n as f64;
                        row.iter_mut().for_each(|v| *v -= shift);
                    }
                }
            }
            Constraint::TieRows { a, b } => {
                for i in 0..n {
                    let sa: f64 = x[a * block + i * n..a * block + (i + 1) * n].iter().sum();
                    let sb: f64 = x[b * block + i * n..b * block + (i + 1) * n].iter().sum();
                    let shift = (sa - sb) / (2.0 * n as f64);
                    for j in 0..n {
                        x[a * block + i * n + j] -= shift;
                        x[b * block + i * n + j] += shift;
                    }
                }
            }
            Constraint::TieCols { a, b } => {
                for j in 0..n {
                    let sa: f64 = (0..n).map(|i| x[a * block + i * n + j]).sum();
                    let sb: f64 = (0..n).map(|i| x[b * block + i * n + j]).sum();
                    let shift = (sa - sb) / (2.0 * n as f64);
                    for i in 0..n {
                        x[a * block + i * n + j] -= shift;
                        x[b * block + i * n + j] += shift;
                    }
                }
            }
            Constraint::TieRowsToCols { rows_of, cols_of } => {
                for i in 0..n {
                    let sr: f64 = x[rows_of * block + i * n..rows_of * block + (i + 1) * n]
                        .iter()
                        .sum();
                    let sc: f64 = (0..n).map(|k| x[cols_of * block + k * n + i]).sum();
                    let shift = (sr - sc) / (2.0 * n as f64);
                    for j in 0..n {
                        x[rows_of * block + i * n + j] -= shift;
                        x[cols_of * block + j * n + i] += shift;
                    }
                }
            }
            Constraint::Nonnegative => {
                for v in x.iter_mut().take(m_count * block) {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }
}

/// Euclidean projection onto the intersection of the constraint sets by
/// Dykstra's algorithm with per-set corrections.
fn dykstra_project(x: &mut Vec<f64>, constraints: &[Constraint], m_count: usize, n: usize) {
    let mut corrections = vec![vec![0.0; x.len()]; constraints.len()];
    for _ in 0..20_000 {
        let start = x.clone();
        for (set, corr) in constraints.iter().zip(&mut corrections) {
            let y: Vec<f64> = x.iter().zip(corr.iter()).map(|(&a, &c)| a + c).collect();
            *x = y.clone();
            set.project(x, m_count, n);
            for (c, (&yv, &xv)) in corr.iter_mut().zip(y.iter().zip(x.iter())) {
                *c = yv - xv;
            }
        }
        let delta = x
            .iter()
            .zip(&start)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max);
        if delta <= 1e-13 {
            break;
        }
    }
}

/// Optional smooth entropy term sigma * e_m(row sums of one coupling).
#[derive(Debug, Clone, Copy)]
pub struct EntropyTerm {
    pub coupling: usize,
    pub sigma: f64,
    pub m: f64,
}

/// Dense primal problem: minimize sum_m lambda_m KL(pi_m | xi_m) plus an
/// optional entropy term, over the intersection of marginal constraints.
/// Solved by projected gradient descent with backtracking; projections go
/// through Euclidean Dykstra.
pub struct DensePrimalProblem {
    pub n: usize,
    pub kernels: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub entropy: Option<EntropyTerm>,
}

const PLAN_FLOOR: f64 = 1e-30;

impl DensePrimalProblem {
    fn coupling_count(&self) -> usize {
        self.kernels.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let block = self.n * self.n;
        let mut total = 0.0;
        for (m, (xi, &lam)) in self.kernels.iter().zip(&self.lambda).enumerate() {
            total += lam * kl_divergence(&x[m * block..(m + 1) * block], xi);
        }
        if let Some(term) = &self.entropy {
            let rows = row_sums(&x[term.coupling * block..(term.coupling + 1) * block], self.n);
            total += term.sigma * gen_entropy_value(&rows, term.m);
        }
        total
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let block = self.n * self.n;
        let mut g = vec![0.0; x.len()];
        for (m, (xi, &lam)) in self.kernels.iter().zip(&self.lambda).enumerate() {
            for k in 0..block {
                g[m * block + k] = lam * (x[m * block + k] / xi[k]).ln();
            }
        }
        if let Some(term) = &self.entropy {
            let base = term.coupling * block;
            let rows = row_sums(&x[base..base + block], self.n);
            for (i, &row) in rows.iter().enumerate() {
                let s = row.max(PLAN_FLOOR);
                let d = if term.m == 1.0 {
                    s.ln()
                } else {
                    term.m * (s.powf(term.m - 1.0) - 1.0) / (term.m - 1.0)
                };
                for j in 0..self.n {
                    g[base + i * self.n + j] += term.sigma * d;
                }
            }
        }
        g
    }

    fn project(&self, x: &mut Vec<f64>) {
        dykstra_project(x, &self.constraints, self.coupling_count(), self.n);
        for v in x.iter_mut() {
            if *v < PLAN_FLOOR {
                *v = PLAN_FLOOR;
            }
        }
    }

    fn feasible_start(&self) -> Vec<f64> {
        let n = self.n;
        let block = n * n;
        let mut x = Vec::with_capacity(self.coupling_count() * block);
        for (m, xi) in self.kernels.iter().enumerate() {
            let mut pi = xi.clone();
            let col_target = self.constraints.iter().find_map(|c| match c {
                Constraint::ColumnSums { coupling, target } if *coupling == m => Some(target),
                _ => None,
            });
            let row_target = self.constraints.iter().find_map(|c| match c {
                Constraint::RowSums { coupling, target } if *coupling == m => Some(target),
                _ => None,
            });
            if let Some(target) = col_target {
                let cols = col_sums(&pi, n);
                for i in 0..n {
                    for j in 0..n {
                        pi[i * n + j] *= target[j] / cols[j];
                    }
                }
            } else if let Some(target) = row_target {
                let rows = row_sums(&pi, n);
                for i in 0..n {
                    for j in 0..n {
                        pi[i * n + j] *= target[i] / rows[i];
                    }
                }
            }
            x.extend_from_slice(&pi);
        }
        self.project(&mut x);
        x
    }

    /// Solve to projected-gradient residual `tol` (unit step, L-infinity).
    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<Vec<Vec<f64>>> {
        let block = self.n * self.n;
        let mut x = self.feasible_start();
        let mut alpha = 1.0f64;
        let mut fx = self.objective(&x);
        for _ in 0..max_iter {
            let g = self.gradient(&x);

            let mut unit = x.iter().zip(&g).map(|(&a, &b)| a - b).collect::<Vec<f64>>();
            self.project(&mut unit);
            let residual = unit
                .iter()
                .zip(&x)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0, f64::max);
            if residual <= tol {
                return Ok((0..self.coupling_count())
                    .map(|m| x[m * block..(m + 1) * block].to_vec())
                    .collect());
            }

            loop {
                let mut trial: Vec<f64> = x
                    .iter()
                    .zip(&g)
                    .map(|(&a, &b)| a - alpha * b)
                    .collect();
                self.project(&mut trial);
                let ft = self.objective(&trial);
                let lin: f64 = g
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(&gi, (&t, &xi))| gi * (t - xi))
                    .sum();
                let quad: f64 = trial
                    .iter()
                    .zip(&x)
                    .map(|(&t, &xi)| (t - xi) * (t - xi))
                    .sum();
                // Slack covers roundoff when ft - fx is at noise level.
                let slack = 1e-15 * (1.0 + fx.abs());
                if ft <= fx + lin + quad / (2.0 * alpha) + slack || quad == 0.0 {
                    x = trial;
                    fx = ft;
                    alpha = (alpha * 1.3).min(4.0);
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-18 {
                    return Err(Error::Config(
                        "dense primal line search stalled".into(),
                    ));
                }
            }
        }
        Err(Error::Config(format!(
            "dense primal solver did not reach residual {tol} in {max_iter} iterations"
        )))
    }
}

/// Root of log(psi) + m sigma (psi^(m-1) - 1)/(m - 1) = log(s) by plain
/// bisection in log space; independent of the Newton path.
pub fn entropy_root_bisection(s: f64, m: f64, sigma: f64) -> f64 {
    if s == 0.0 || sigma == 0.0 {
        return s;
    }
    let resid = |t: f64| -> f64 {
        if m == 1.0 {
            (1.0 + sigma) * t - s.ln()
        } else {
            (t - s.ln()) + (m * sigma / (m - 1.0)) * ((m - 1.0) * t).exp_m1()
        }
    };
    let mut lo = s.ln().min(0.0);
    let mut hi = s.ln().max(0.0);
    debug_assert!(resid(lo) <= 0.0 && resid(hi) >= 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if resid(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Minimize p log(p/q) - p + q + sigma * f(p) over p in [0, hi] by golden
/// section (the objective is unimodal for convex f). Returns the minimizer
/// to absolute accuracy ~1e-9 * hi.
pub fn golden_section_prox(q: f64, sigma: f64, f: impl Fn(f64) -> f64, hi: f64) -> f64 {
    let phi = |p: f64| -> f64 {
        let kl = if p == 0.0 { q } else { p * (p / q).ln() - p + q };
        kl + sigma * f(p)
    };
    let ratio = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..120 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = phi(d);
        }
    }
    0.5 * (a + b)
}

/// Heat-kernel application on a periodic chain of `n` nodes with spacing
/// `h`, computed mode-by-mode with the exact ring eigenpairs and a direct
/// O(n^2) Fourier sum: mode k is damped by (1 + (gamma/L) lambda_k)^(-L).
pub fn periodic_heat_fourier_apply(x: &[f64], gamma: f64, substeps: usize, spacing: f64) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    let l = substeps as f64;
    let mut out = vec![0.0; n];
    for k in 0..n {
        let kf = k as f64;
        let lambda = 4.0 * (PI * kf / nf).sin().powi(2) / (spacing * spacing);
        let factor = (1.0 + gamma / l * lambda).powi(-(substeps as i32));
        let (mut c, mut s) = (0.0, 0.0);
        for (j, &xj) in x.iter().enumerate() {
            let angle = 2.0 * PI * kf * j as f64 / nf;
            c += xj * angle.cos();
            s += xj * angle.sin();
        }
        for (i, o) in out.iter_mut().enumerate() {
            let angle = 2.0 * PI * kf * i as f64 / nf;
            *o += factor * (c * angle.cos() + s * angle.sin()) / nf;
        }
    }
    out
}
