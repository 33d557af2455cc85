//! Library backing the `wjko` command line tool: config parsing, scenario
//! runs, frame rendering, and dense reference solves for small instances.

pub mod config;
pub mod scenario;

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use wjko::io::{read_frame, write_pgm, FrameLayout};
use wjko::oracle::{
    random_density, random_symmetric_kernel, Constraint, DenseDykstra, DensePrimalProblem,
};
use wjko::prox::EntropyProx;

/// Failures split by exit code: bad configuration or input data exits 2,
/// failures during an otherwise valid run exit 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn input(e: impl Display) -> Self {
        CliError::Input(e.to_string())
    }

    pub(crate) fn runtime(e: impl Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Execute the scenario described by `config_path`, writing all artifacts
/// into `out_dir`. Relative paths inside the config resolve against the
/// config file's directory.
pub fn run(config_path: &Path, out_dir: &Path) -> Result<scenario::RunSummary, CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Input(format!(
            "cannot read config {}: {e}",
            config_path.display()
        ))
    })?;
    let config = config::parse_config(&text)?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    scenario::run_scenario(&config, base, out_dir)
}

/// Convert one frame file into an 8-bit PGM preview.
pub fn render(frame_path: &Path, pgm_path: &Path) -> Result<(), CliError> {
    let (layout, values) = read_frame(frame_path).map_err(CliError::input)?;
    match layout {
        FrameLayout::Grid { width, height } => {
            write_pgm(pgm_path, width as usize, height as usize, &values)
                .map_err(CliError::runtime)
        }
        FrameLayout::Mesh { .. } => Err(CliError::Input(
            "mesh frames have no PGM rendering; only grid frames convert".into(),
        )),
    }
}

fn print_values(out: &mut impl Write, values: &[f64]) -> Result<(), CliError> {
    for v in values {
        writeln!(out, "{v:.17e}").map_err(CliError::runtime)?;
    }
    Ok(())
}

/// Dense brute-force reference solves on deterministic random instances.
/// `jko` prints the row marginal of one box-congested step (kappa = 0.6),
/// `dykstra` prints the dense coupling after 200 alternating projections
/// with a quadratic entropy, `attraction` prints the common marginal of the
/// two-coupling attraction problem.
pub fn oracle(case: &str, n: usize, seed: u64, out: &mut impl Write) -> Result<(), CliError> {
    if !(2..=8).contains(&n) {
        return Err(CliError::Config(format!(
            "oracle size n must lie in [2, 8], got {n}"
        )));
    }
    let kernel = random_symmetric_kernel(n, seed);
    let xi = kernel.entries().to_vec();
    let q = random_density(n, seed.wrapping_add(1));
    writeln!(out, "# case={case} n={n} seed={seed}").map_err(CliError::runtime)?;
    match case {
        "jko" => {
            let problem = DensePrimalProblem {
                n,
                kernels: vec![xi],
                lambda: vec![1.0],
                constraints: vec![
                    Constraint::ColumnSums {
                        coupling: 0,
                        target: q,
                    },
                    Constraint::RowSumCap {
                        coupling: 0,
                        kappa: 0.6,
                    },
                    Constraint::Nonnegative,
                ],
                entropy: None,
            };
            let pi = &problem.solve(1e-10, 200_000).map_err(CliError::runtime)?[0];
            let rows: Vec<f64> = (0..n)
                .map(|i| pi[i * n..(i + 1) * n].iter().sum())
                .collect();
            print_values(out, &rows)
        }
        "dykstra" => {
            let prox = EntropyProx::uniform(2.0).map_err(CliError::runtime)?;
            let mut dykstra = DenseDykstra::new(xi, &q, &prox, 1.0).map_err(CliError::runtime)?;
            for _ in 0..200 {
                dykstra.advance().map_err(CliError::runtime)?;
            }
            for i in 0..n {
                let row: Vec<String> = dykstra.plan()[i * n..(i + 1) * n]
                    .iter()
                    .map(|v| format!("{v:.17e}"))
                    .collect();
                writeln!(out, "{}", row.join(",")).map_err(CliError::runtime)?;
            }
            Ok(())
        }
        "attraction" => {
            let target = random_density(n, seed.wrapping_add(2));
            let problem = DensePrimalProblem {
                n,
                kernels: vec![xi.clone(), xi],
                lambda: vec![1.0, 0.5],
                constraints: vec![
                    Constraint::ColumnSums {
                        coupling: 0,
                        target: q,
                    },
                    Constraint::ColumnSums {
                        coupling: 1,
                        target,
                    },
                    Constraint::TieRows { a: 0, b: 1 },
                ],
                entropy: None,
            };
            let pi = &problem.solve(1e-10, 200_000).map_err(CliError::runtime)?[0];
            let rows: Vec<f64> = (0..n)
                .map(|i| pi[i * n..(i + 1) * n].iter().sum())
                .collect();
            print_values(out, &rows)
        }
        other => Err(CliError::Config(format!(
            "unknown oracle case {other:?}; expected jko, dykstra or attraction"
        ))),
    }
}
