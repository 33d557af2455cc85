//! Cross-checks of the generalized multi-coupling solver against a dense
//! primal solve of the same constrained KL minimization.

use wjko::multicoupling::{
    attraction_psi, generalized_scaling_solve, pairwise_psi, AttractionScenario,
    MultiCouplingProblem, PairwiseScenario,
};
use wjko::oracle::{random_density, random_symmetric_kernel, Constraint, DensePrimalProblem};
use wjko::KernelOp;

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

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn attraction_marginals_match_dense_primal() {
    let n = 4;
    let kernel = random_symmetric_kernel(n, 70);
    let q = random_density(n, 71);
    let target = random_density(n, 72);
    let tau = 0.5;

    let scenario = AttractionScenario {
        target: target.clone(),
        tau,
        sigma: 1.0,
        h: None,
    };
    let (psi1, psi2) = attraction_psi(&scenario, &q).unwrap();
    let kernels: Vec<&dyn KernelOp> = vec![&kernel, &kernel];
    let problem = MultiCouplingProblem::new(kernels, vec![1.0, tau], psi1, psi2).unwrap();
    let solution = generalized_scaling_solve(&problem, 1e-11, 200_000).unwrap();
    let fast_p = &solution.row_marginals[0];

    let dense = DensePrimalProblem {
        n,
        kernels: vec![kernel.entries().to_vec(), kernel.entries().to_vec()],
        lambda: vec![1.0, tau],
        constraints: vec![
            Constraint::ColumnSums {
                coupling: 0,
                target: q.clone(),
            },
            Constraint::ColumnSums {
                coupling: 1,
                target: target.clone(),
            },
            Constraint::TieRows { a: 0, b: 1 },
        ],
        entropy: None,
    };
    let plans = dense.solve(1e-10, 200_000).unwrap();
    let dense_p = row_sums(&plans[0], n);

    assert!(
        max_abs_diff(fast_p, &dense_p) <= 1e-5,
        "worst marginal gap {}",
        max_abs_diff(fast_p, &dense_p)
    );
}

#[test]
fn pairwise_marginals_match_dense_primal() {
    let n = 3;
    let kernel = random_symmetric_kernel(n, 80);
    let q1 = random_density(n, 81);
    let q2 = random_density(n, 82);
    let (alpha, tau) = (1.0, 0.8);

    let scenario = PairwiseScenario {
        alpha,
        tau,
        sigma: 1.0,
        h1: None,
        h2: None,
        w1: None,
        w2: None,
        normalized_exponents: true,
    };
    let (psi1, psi2) = pairwise_psi(&scenario, &q1, &q2).unwrap();
    let kernels: Vec<&dyn KernelOp> = vec![&kernel, &kernel, &kernel];
    let problem =
        MultiCouplingProblem::new(kernels, vec![1.0, 1.0, tau * alpha], psi1, psi2).unwrap();
    let solution = generalized_scaling_solve(&problem, 1e-11, 200_000).unwrap();
    let fast_p1 = &solution.row_marginals[0];
    let fast_p2 = &solution.col_marginals[1];

    let xi = kernel.entries().to_vec();
    let dense = DensePrimalProblem {
        n,
        kernels: vec![xi.clone(), xi.clone(), xi],
        lambda: vec![1.0, 1.0, tau * alpha],
        constraints: vec![
            Constraint::ColumnSums {
                coupling: 0,
                target: q1.clone(),
            },
            Constraint::RowSums {
                coupling: 1,
                target: q2.clone(),
            },
            Constraint::TieRows { a: 0, b: 2 },
            Constraint::TieCols { a: 1, b: 2 },
        ],
        entropy: None,
    };
    let plans = dense.solve(1e-10, 200_000).unwrap();
    let dense_p1 = row_sums(&plans[0], n);
    let dense_p2 = col_sums(&plans[1], n);

    assert!(
        max_abs_diff(fast_p1, &dense_p1) <= 1e-5,
        "p1 gap {}",
        max_abs_diff(fast_p1, &dense_p1)
    );
    assert!(
        max_abs_diff(fast_p2, &dense_p2) <= 1e-5,
        "p2 gap {}",
        max_abs_diff(fast_p2, &dense_p2)
    );
}
