//! Cross-checks of the factored scaling solver against dense references
//! that materialize full coupling and correction matrices.

use wjko::jko::JkoDykstra;
use wjko::oracle::{
    random_density, random_symmetric_kernel, Constraint, DenseDykstra, DensePrimalProblem,
    EntropyTerm,
};
use wjko::prox::{CongestionProx, EntropyProx, IdentityProx, ProxFn};
use wjko::{jko_step, FlowParams, KernelOp};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// diag(a) xi diag(b) as a dense row-major matrix.
fn reconstruct_plan(a: &[f64], xi: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = a[i] * xi[i * n + j] * b[j];
        }
    }
    out
}

fn outer(u: &[f64], v: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = u[i] * v[j];
        }
    }
    out
}

fn check_iterates_agree(prox: &dyn ProxFn, sigma: f64, seed: u64) {
    let n = 6;
    let kernel = random_symmetric_kernel(n, seed);
    let q = random_density(n, seed + 1);
    let mut fast = JkoDykstra::new(&kernel, prox, &q, sigma).unwrap();
    let mut dense = DenseDykstra::new(kernel.entries().to_vec(), &q, prox, sigma).unwrap();
    for step in 1..=200 {
        fast.advance().unwrap();
        dense.advance().unwrap();
        let s = fast.state();
        let plan = reconstruct_plan(&s.a, kernel.entries(), &s.b);
        let corr = outer(&s.u, &s.v);
        assert!(
            max_abs_diff(&plan, dense.plan()) <= 1e-10,
            "plan diverged at iteration {step} (seed {seed})"
        );
        assert!(
            max_abs_diff(&corr, dense.correction()) <= 1e-10,
            "correction diverged at iteration {step} (seed {seed})"
        );
    }
}

#[test]
fn factored_iterates_match_dense_dykstra_for_zero_functional() {
    check_iterates_agree(&IdentityProx, 1.0, 40);
}

#[test]
fn factored_iterates_match_dense_dykstra_for_congestion() {
    let prox = CongestionProx::new(0.35, None).unwrap();
    check_iterates_agree(&prox, 0.8, 41);
}

#[test]
fn factored_iterates_match_dense_dykstra_for_entropy() {
    let prox = EntropyProx::uniform(1.5).unwrap();
    check_iterates_agree(&prox, 1.2, 42);
}

#[test]
fn step_matches_dense_primal_minimum() {
    let n = 5;
    let kernel = random_symmetric_kernel(n, 50);
    let q = random_density(n, 51);
    let sigma = 0.7;
    let prox = EntropyProx::uniform(2.0).unwrap();
    let params = FlowParams {
        gamma: 1.0,
        tau: sigma,
        eps: 1e-12,
        max_inner: 100_000,
    };
    let (p, _) = jko_step(&kernel, &prox, &q, &params).unwrap();

    let problem = DensePrimalProblem {
        n,
        kernels: vec![kernel.entries().to_vec()],
        lambda: vec![1.0],
        constraints: vec![Constraint::ColumnSums {
            coupling: 0,
            target: q.clone(),
        }],
        entropy: Some(EntropyTerm {
            coupling: 0,
            sigma,
            m: 2.0,
        }),
    };
    let pi = &problem.solve(1e-10, 100_000).unwrap()[0];
    let rows: Vec<f64> = (0..n).map(|i| pi[i * n..(i + 1) * n].iter().sum()).collect();
    assert!(
        max_abs_diff(&p, &rows) <= 1e-6,
        "worst gap {}",
        max_abs_diff(&p, &rows)
    );
}

#[test]
fn step_matches_dense_primal_minimum_with_congestion() {
    let n = 4;
    let kernel = random_symmetric_kernel(n, 52);
    let q = random_density(n, 53);
    let kappa = 0.4;
    let prox = CongestionProx::new(kappa, None).unwrap();
    let params = FlowParams {
        gamma: 1.0,
        tau: 1.0,
        eps: 1e-12,
        max_inner: 100_000,
    };
    let (p, _) = jko_step(&kernel, &prox, &q, &params).unwrap();

    let problem = DensePrimalProblem {
        n,
        kernels: vec![kernel.entries().to_vec()],
        lambda: vec![1.0],
        constraints: vec![
            Constraint::ColumnSums {
                coupling: 0,
                target: q.clone(),
            },
            Constraint::RowSumCap {
                coupling: 0,
                kappa,
            },
            Constraint::Nonnegative,
        ],
        entropy: None,
    };
    let pi = &problem.solve(1e-10, 100_000).unwrap()[0];
    let rows: Vec<f64> = (0..n).map(|i| pi[i * n..(i + 1) * n].iter().sum()).collect();
    assert!(
        max_abs_diff(&p, &rows) <= 1e-6,
        "worst gap {}",
        max_abs_diff(&p, &rows)
    );
    assert!(p.iter().all(|&x| x <= kappa * (1.0 + 1e-10)));
}

#[test]
fn violation_reporting_matches_dense_marginal_error() {
    let n = 6;
    let kernel = random_symmetric_kernel(n, 60);
    let q = random_density(n, 61);
    let prox = EntropyProx::uniform(1.5).unwrap();
    let mut fast = JkoDykstra::new(&kernel, &prox, &q, 0.5).unwrap();
    for _ in 0..6 {
        fast.advance().unwrap();
    }
    let s = fast.state();
    let kb = kernel.apply_transpose(&s.a).unwrap();
    let expected: f64 = s
        .b
        .iter()
        .zip(&kb)
        .zip(&q)
        .map(|((&b, &k), &qi)| (b * k - qi).abs())
        .sum();
    let reported = fast.violation().unwrap();
    assert!((reported - expected).abs() <= 1e-14);
}
