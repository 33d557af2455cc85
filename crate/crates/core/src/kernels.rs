//! Gibbs kernels: operators applying xi = exp(-c / gamma) without ever
//! materializing the full matrix.
//!
//! Two production kernels are provided. `GaussianGridKernel` evaluates the
//! squared-distance kernel on full grids by exact separable 1-D passes.
//! `HeatKernel` approximates the kernel on arbitrary domains through `L`
//! implicit diffusion substeps, `(Id - (gamma/L) Lap)^-L`, with a one-time
//! sparse LDL^T factorization reused by every application. `DenseKernel` and
//! `IdentityKernel` exist for tests and reference solves.

use sprs::{CsMat, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};
use crate::domain::GridDomain;
use crate::laplacian::LaplacianMatrix;

/// An N x N positive linear operator standing in for the Gibbs kernel.
pub trait KernelOp: Send + Sync {
    /// Number of domain nodes.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entropic regularization strength the kernel was built for.
    fn gamma(&self) -> f64;

    fn is_symmetric(&self) -> bool {
        true
    }

    /// xi v
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// xi^T v; identical to `apply` for symmetric kernels.
    fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply(v)
    }
}

/// Exact Gaussian kernel on a full grid, applied as two 1-D convolution
/// passes: O(N (w + h)) per application.
#[derive(Debug, Clone)]
pub struct GaussianGridKernel {
    width: usize,
    height: usize,
    gamma: f64,
    /// wx[d] = exp(-(d * spacing)^2 / gamma), likewise wy.
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl GaussianGridKernel {
    pub fn new(grid: &GridDomain, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Kernel(format!("gamma must be positive, got {gamma}")));
        }
        if !grid.is_full() {
            return Err(Error::Kernel(
                "gaussian grid kernel requires a full mask; use a heat kernel on masked domains"
                    .into(),
            ));
        }
        let weight = |d: usize| {
            let x = d as f64 * grid.spacing;
            (-x * x / gamma).exp()
        };
        Ok(GaussianGridKernel {
            width: grid.width,
            height: grid.height,
            gamma,
            wx: (0..grid.width).map(weight).collect(),
            wy: (0..grid.height).map(weight).collect(),
        })
    }
}

impl KernelOp for GaussianGridKernel {
    fn len(&self) -> usize {
        self.width * self.height
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(v.len(), self.len());
        let (w, h) = (self.width, self.height);
        // Pass 1: convolve each row.
        let mut tmp = vec![0.0; v.len()];
        for y in 0..h {
            let row = &v[y * w..(y + 1) * w];
            let out = &mut tmp[y * w..(y + 1) * w];
            for (xo, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (xi, &val) in row.iter().enumerate() {
                    acc += self.wx[xo.abs_diff(xi)] * val;
                }
                *o = acc;
            }
        }
        // Pass 2: convolve each column.
        let mut out = vec![0.0; v.len()];
        for x in 0..w {
            for yo in 0..h {
                let mut acc = 0.0;
                for yi in 0..h {
                    acc += self.wy[yo.abs_diff(yi)] * tmp[yi * w + x];
                }
                out[yo * w + x] = acc;
            }
        }
        Ok(out)
    }
}

/// Configuration for the implicit heat-kernel approximation.
#[derive(Debug, Clone, Copy)]
pub struct HeatKernelConfig {
    pub gamma: f64,
    /// Number of implicit substeps L.
    pub substeps: usize,
    /// Relative residual bound checked after every linear solve.
    pub solver_tolerance: f64,
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        HeatKernelConfig {
            gamma: 1.0,
            substeps: 10,
            solver_tolerance: 1e-10,
        }
    }
}

/// (Id - (gamma/L) Lap)^-L with a prefactorized system matrix.
pub struct HeatKernel {
    n: usize,
    gamma: f64,
    substeps: usize,
    solver_tolerance: f64,
    system: CsMat<f64>,
    factor: LdlNumeric<f64, usize>,
}

impl HeatKernel {
    pub fn new(lap: &LaplacianMatrix, config: HeatKernelConfig) -> Result<Self> {
        if !(config.gamma.is_finite() && config.gamma > 0.0) {
            return Err(Error::Kernel(format!(
                "gamma must be positive, got {}",
                config.gamma
            )));
        }
        if config.substeps == 0 {
            return Err(Error::Kernel("substep count must be at least 1".into()));
        }
        if !(config.solver_tolerance > 0.0 && config.solver_tolerance <= 1e-6) {
            return Err(Error::Kernel(format!(
                "solver tolerance must lie in (0, 1e-6], got {}",
                config.solver_tolerance
            )));
        }
        let n = lap.n();
        let t = config.gamma / config.substeps as f64;
        // system = Id - t * Lap, symmetric positive definite.
        let mut tri = TriMat::new((n, n));
        let mut seen_diag = vec![false; n];
        for (row, vec) in lap.csr().outer_iterator().enumerate() {
            for (col, &w) in vec.iter() {
                let mut val = -t * w;
                if row == col {
                    val += 1.0;
                    seen_diag[row] = true;
                }
                tri.add_triplet(row, col, val);
            }
        }
        for (row, seen) in seen_diag.iter().enumerate() {
            if !seen {
                tri.add_triplet(row, row, 1.0);
            }
        }
        let system = tri.to_csr();
        let factor = Ldl::new()
            .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee)
            .numeric(system.view())
            .map_err(|e| Error::Kernel(format!("factorization failed: {e}")))?;
        Ok(HeatKernel {
            n,
            gamma: config.gamma,
            substeps: config.substeps,
            solver_tolerance: config.solver_tolerance,
            system,
            factor,
        })
    }

    fn solve_checked(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let x = self.factor.solve(rhs);
        // Relative residual check; direct solves on these well-conditioned
        // systems sit far below the bound, anything above it means trouble.
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            return Ok(x);
        }
        let mut res = 0.0;
        for (row, vec) in self.system.outer_iterator().enumerate() {
            let mut acc = 0.0;
            for (col, &w) in vec.iter() {
                acc += w * x[col];
            }
            let r = acc - rhs[row];
            res += r * r;
        }
        let achieved = res.sqrt() / rhs_norm;
        // A NaN residual must fail the gate too.
        if achieved.is_nan() || achieved > self.solver_tolerance {
            return Err(Error::SolverResidual {
                achieved,
                tolerance: self.solver_tolerance,
            });
        }
        Ok(x)
    }
}

impl KernelOp for HeatKernel {
    fn len(&self) -> usize {
        self.n
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(v.len(), self.n);
        let nonneg_input = v.iter().all(|&x| x >= 0.0);
        let positive_mass = v.iter().any(|&x| x > 0.0);
        let mut x = v.to_vec();
        for _ in 0..self.substeps {
            x = self.solve_checked(&x)?;
        }
        if nonneg_input && positive_mass {
            if let Some(bad) = x.iter().position(|&y| y.is_nan() || y <= 0.0) {
                return Err(Error::Kernel(format!(
                    "kernel output entry {bad} is {} for a nonnegative input; \
                     reduce gamma per substep (negative off-diagonal weights?)",
                    x[bad]
                )));
            }
        }
        Ok(x)
    }
}

/// Kernel from an explicit dense matrix (row-major). Test and oracle helper.
#[derive(Debug, Clone)]
pub struct DenseKernel {
    n: usize,
    gamma: f64,
    entries: Vec<f64>,
    symmetric: bool,
}

impl DenseKernel {
    pub fn new(n: usize, entries: Vec<f64>, gamma: f64) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Kernel(format!(
                "matrix has {} entries, expected {n}x{n}",
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Kernel("kernel entries must be finite and nonnegative".into()));
        }
        let symmetric = (0..n).all(|i| (0..n).all(|j| entries[i * n + j] == entries[j * n + i]));
        Ok(DenseKernel {
            n,
            gamma,
            entries,
            symmetric,
        })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

impl KernelOp for DenseKernel {
    fn len(&self) -> usize {
        self.n
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(v.len(), self.n);
        Ok((0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| self.entries[i * self.n + j] * v[j])
                    .sum()
            })
            .collect())
    }

    fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(v.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, &vi) in v.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.entries[i * self.n + j] * vi;
            }
        }
        Ok(out)
    }
}

/// Identity kernel: the degenerate gamma -> 0 limit where transport is
/// forbidden. Useful for pinning down fixed-point behavior in tests.
#[derive(Debug, Clone)]
pub struct IdentityKernel {
    n: usize,
    gamma: f64,
}

impl IdentityKernel {
    pub fn new(n: usize, gamma: f64) -> Self {
        IdentityKernel { n, gamma }
    }
}

impl KernelOp for IdentityKernel {
    fn len(&self) -> usize {
        self.n
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }
}

/// Exact Gaussian kernel on a full grid.
pub fn gaussian_grid_kernel(grid: &GridDomain, gamma: f64) -> Result<GaussianGridKernel> {
    GaussianGridKernel::new(grid, gamma)
}

/// Heat-kernel approximation over any Laplacian.
pub fn heat_kernel(lap: &LaplacianMatrix, config: HeatKernelConfig) -> Result<HeatKernel> {
    HeatKernel::new(lap, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_grid_domain;
    use crate::laplacian::grid_laplacian;

    fn full_grid(w: usize, h: usize, spacing: f64) -> GridDomain {
        make_grid_domain(w, h, spacing, None)
            .unwrap()
            .as_grid()
            .unwrap()
            .clone()
    }

    #[test]
    fn two_node_line_blurs_a_dirac() {
        let g = full_grid(2, 1, 1.0);
        let k = gaussian_grid_kernel(&g, 1.0).unwrap();
        let out = k.apply(&[1.0, 0.0]).unwrap();
        assert_eq!(out[0], 1.0);
        assert!((out[1] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_kernel_rejects_masked_grids_and_bad_gamma() {
        let mask = [true, false, true, true];
        let masked = make_grid_domain(2, 2, 1.0, Some(&mask)).unwrap();
        assert!(GaussianGridKernel::new(masked.as_grid().unwrap(), 1.0).is_err());
        let g = full_grid(2, 2, 1.0);
        assert!(GaussianGridKernel::new(&g, 0.0).is_err());
        assert!(GaussianGridKernel::new(&g, -1.0).is_err());
    }

    #[test]
    fn separable_passes_match_dense_kernel_matrix() {
        let g = full_grid(6, 5, 0.4);
        let gamma = 0.7;
        let k = gaussian_grid_kernel(&g, gamma).unwrap();
        let n = g.node_count();
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            let pi = g.position(i);
            for j in 0..n {
                let pj = g.position(j);
                let d2 = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2);
                dense[i * n + j] = (-d2 / gamma).exp();
            }
        }
        let dk = DenseKernel::new(n, dense, gamma).unwrap();
        let v: Vec<f64> = (0..n).map(|i| 0.1 + ((i * 37) % 11) as f64).collect();
        let a = k.apply(&v).unwrap();
        let b = dk.apply(&v).unwrap();
        for i in 0..n {
            assert!(
                (a[i] - b[i]).abs() <= 1e-12 * b[i].abs().max(1.0),
                "entry {i}: {} vs {}",
                a[i],
                b[i]
            );
        }
    }

    #[test]
    fn heat_kernel_validates_config() {
        let g = full_grid(3, 3, 1.0);
        let lap = grid_laplacian(&g).unwrap();
        let bad_gamma = HeatKernelConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(HeatKernel::new(&lap, bad_gamma).is_err());
        let bad_steps = HeatKernelConfig {
            substeps: 0,
            ..Default::default()
        };
        assert!(HeatKernel::new(&lap, bad_steps).is_err());
        let bad_tol = HeatKernelConfig {
            solver_tolerance: 1e-3,
            ..Default::default()
        };
        assert!(HeatKernel::new(&lap, bad_tol).is_err());
    }

    #[test]
    fn heat_kernel_preserves_mass_on_masked_grid() {
        let mut mask = vec![true; 8 * 8];
        for c in [9, 10, 18, 35, 36, 44] {
            mask[c] = false;
        }
        let d = make_grid_domain(8, 8, 1.0, Some(&mask)).unwrap();
        let g = d.as_grid().unwrap();
        let lap = grid_laplacian(g).unwrap();
        let k = HeatKernel::new(
            &lap,
            HeatKernelConfig {
                gamma: 2.0,
                substeps: 10,
                solver_tolerance: 1e-10,
            },
        )
        .unwrap();
        let n = g.node_count();
        let v: Vec<f64> = (0..n).map(|i| (i % 7) as f64 * 0.3 + 0.1).collect();
        let out = k.apply(&v).unwrap();
        let before: f64 = v.iter().sum();
        let after: f64 = out.iter().sum();
        assert!((before - after).abs() <= 1e-10 * before);
        assert!(out.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn dirac_response_is_unimodal_and_radially_decreasing() {
        let g = full_grid(65, 65, 1.0);
        let lap = grid_laplacian(&g).unwrap();
        let k = HeatKernel::new(
            &lap,
            HeatKernelConfig {
                gamma: 40.0,
                substeps: 50,
                solver_tolerance: 1e-10,
            },
        )
        .unwrap();
        let mut v = vec![0.0; g.node_count()];
        let center = g.index_of(32, 32).unwrap();
        v[center] = 1.0;
        let out = k.apply(&v).unwrap();
        let val = |x: usize, y: usize| out[g.index_of(x, y).unwrap()];
        assert!(out.iter().all(|&x| x <= val(32, 32)));
        // Monotone decay along the axis and the diagonal leaving the center.
        for x in 32..64 {
            assert!(val(x + 1, 32) < val(x, 32));
            assert!(val(x + 1, x + 1) < val(x, x));
        }
    }

    #[test]
    fn dense_kernel_transpose_flips_asymmetric_action() {
        let k = DenseKernel::new(2, vec![1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
        assert!(!k.is_symmetric());
        assert_eq!(k.apply(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert_eq!(k.apply_transpose(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0]);
    }
}
