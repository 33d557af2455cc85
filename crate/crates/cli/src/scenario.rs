//! Turns a validated config into domain, kernel, functional and initial
//! densities, runs the flow, and writes frames, previews, diagnostics and
//! the output MANIFEST.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use wjko::domain::{load_mesh_off, normalize_density, DomainSpec, GridDomain, PotentialField};
use wjko::io::{
    expand_to_raster, read_anisotropy_csv, read_pgm, read_raw_field, restrict_to_nodes,
    write_frame, write_pgm, write_ppm, FrameLayout,
};
use wjko::kernels::{GaussianGridKernel, HeatKernel, HeatKernelConfig};
use wjko::laplacian::{anisotropic_laplacian, cotangent_laplacian, grid_laplacian};
use wjko::multicoupling::{
    run_multi_flow, AttractionScenario, MultiStepDiagnostics, PairwiseScenario,
    SumCouplingScenario,
};
use wjko::prox::{BinaryCongestionProx, CongestionProx, EntropyProx, ShiftProx, Weight};
use wjko::{run_flow, FlowParams, KernelOp, ProxFn, StepDiagnostics};

use crate::config::{DomainConfig, FieldSpec, KernelConfig, ScenarioConfig, ScenarioKind};
use crate::CliError;

pub struct RunSummary {
    pub steps: usize,
    pub frames: usize,
    pub out_dir: PathBuf,
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn build_domain(config: &DomainConfig, base: &Path) -> Result<DomainSpec, CliError> {
    match config {
        DomainConfig::Grid {
            width,
            height,
            spacing,
            mask,
        } => {
            let mask_bits = match mask {
                Some(path) => {
                    let full = resolve(base, path);
                    let (w, h, values) = read_pgm(&full).map_err(CliError::input)?;
                    if w != *width || h != *height {
                        return Err(CliError::Input(format!(
                            "mask {} is {w}x{h}, domain is {width}x{height}",
                            full.display()
                        )));
                    }
                    Some(values.iter().map(|&v| v > 0.0).collect::<Vec<bool>>())
                }
                None => None,
            };
            let grid = GridDomain::new(*width, *height, *spacing, mask_bits.as_deref())
                .map_err(CliError::input)?;
            Ok(DomainSpec::Grid(grid))
        }
        DomainConfig::Mesh { path } => {
            load_mesh_off(&resolve(base, path)).map_err(CliError::input)
        }
    }
}

fn build_kernel(
    config: &KernelConfig,
    domain: &DomainSpec,
    base: &Path,
) -> Result<Box<dyn KernelOp>, CliError> {
    match config {
        KernelConfig::Gaussian { gamma } => {
            let grid = domain
                .as_grid()
                .ok_or_else(|| CliError::Input("gaussian kernel needs a grid domain".into()))?;
            Ok(Box::new(
                GaussianGridKernel::new(grid, *gamma).map_err(CliError::input)?,
            ))
        }
        KernelConfig::Heat {
            gamma,
            substeps,
            solver_tolerance,
            anisotropy,
        } => {
            let lap = match domain {
                DomainSpec::Grid(grid) => match anisotropy {
                    Some(path) => {
                        let field = read_anisotropy_csv(&resolve(base, path), grid)
                            .map_err(CliError::input)?;
                        let ratio = field.max_ratio();
                        if ratio > 10.0 {
                            eprintln!(
                                "warning: anisotropy ratio {ratio:.1} exceeds 10; \
                                 assembly accuracy degrades at this contrast"
                            );
                        }
                        anisotropic_laplacian(grid, &field).map_err(CliError::input)?
                    }
                    None => grid_laplacian(grid).map_err(CliError::input)?,
                },
                DomainSpec::Mesh(mesh) => cotangent_laplacian(mesh).map_err(CliError::input)?,
            };
            let kernel = HeatKernel::new(
                &lap,
                HeatKernelConfig {
                    gamma: *gamma,
                    substeps: *substeps,
                    solver_tolerance: *solver_tolerance,
                },
            )
            .map_err(CliError::input)?;
            Ok(Box::new(kernel))
        }
    }
}

/// Evaluate a field spec into one value per domain node.
fn build_field(
    spec: &FieldSpec,
    domain: &DomainSpec,
    seed: u64,
    base: &Path,
) -> Result<Vec<f64>, CliError> {
    let n = domain.node_count();
    let geometric = |name: &str| -> Result<&GridDomain, CliError> {
        domain.as_grid().ok_or_else(|| {
            CliError::Input(format!(
                "field kind {name} needs a grid domain; meshes support constant, raw and uniform_random"
            ))
        })
    };
    match spec {
        FieldSpec::Constant { value } => {
            if !value.is_finite() {
                return Err(CliError::Input(format!("constant field value {value} is not finite")));
            }
            Ok(vec![*value; n])
        }
        FieldSpec::Raw { path } => {
            read_raw_field(&resolve(base, path), n).map_err(CliError::input)
        }
        FieldSpec::Pgm { path } => {
            let grid = geometric("pgm")?;
            let full = resolve(base, path);
            let (w, h, values) = read_pgm(&full).map_err(CliError::input)?;
            if w != grid.width || h != grid.height {
                return Err(CliError::Input(format!(
                    "field image {} is {w}x{h}, domain is {}x{}",
                    full.display(),
                    grid.width,
                    grid.height
                )));
            }
            Ok(restrict_to_nodes(grid, &values))
        }
        FieldSpec::Linear { gx, gy, offset } => {
            let grid = geometric("linear")?;
            Ok((0..n)
                .map(|node| {
                    let [x, y] = grid.position(node);
                    gx * x + gy * y + offset
                })
                .collect())
        }
        FieldSpec::Gaussian {
            cx,
            cy,
            width,
            amplitude,
            floor,
        } => {
            let grid = geometric("gaussian")?;
            if !(width.is_finite() && *width > 0.0) {
                return Err(CliError::Input(format!(
                    "gaussian field width must be positive, got {width}"
                )));
            }
            Ok((0..n)
                .map(|node| {
                    let [x, y] = grid.position(node);
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    amplitude * (-d2 / (width * width)).exp() + floor
                })
                .collect())
        }
        FieldSpec::Rect {
            x0,
            y0,
            x1,
            y1,
            inside,
            outside,
        } => {
            let grid = geometric("rect")?;
            Ok((0..n)
                .map(|node| {
                    let [x, y] = grid.position(node);
                    if x >= *x0 && x <= *x1 && y >= *y0 && y <= *y1 {
                        *inside
                    } else {
                        *outside
                    }
                })
                .collect())
        }
        FieldSpec::UniformRandom => Ok(wjko::oracle::random_density(n, seed)),
    }
}

fn build_potential(
    spec: &Option<FieldSpec>,
    domain: &DomainSpec,
    seed: u64,
    base: &Path,
) -> Result<Option<PotentialField>, CliError> {
    match spec {
        None => Ok(None),
        Some(spec) => {
            let values = build_field(spec, domain, seed, base)?;
            Ok(Some(PotentialField::new(values).map_err(CliError::input)?))
        }
    }
}

fn build_initial(
    spec: &FieldSpec,
    domain: &DomainSpec,
    seed: u64,
    base: &Path,
) -> Result<Vec<f64>, CliError> {
    let raw = build_field(spec, domain, seed, base)?;
    Ok(normalize_density(&raw)
        .map_err(CliError::input)?
        .into_values())
}

/// Optional per-density functional for the coupled scenarios: congestion
/// when kappa is set, generalized entropy when m is set, a bare potential
/// tilt when only the potential is present.
fn optional_prox(
    kappa: Option<f64>,
    m: Option<f64>,
    b: Option<f64>,
    potential: Option<PotentialField>,
) -> Result<Option<Arc<dyn ProxFn>>, CliError> {
    if let Some(kappa) = kappa {
        let prox = CongestionProx::new(kappa, potential).map_err(CliError::input)?;
        return Ok(Some(Arc::new(prox)));
    }
    if let Some(m) = m {
        let entropy = EntropyProx::new(
            Weight::Constant(m),
            Weight::Constant(b.unwrap_or(1.0)),
        )
        .map_err(CliError::input)?;
        let prox: Arc<dyn ProxFn> = match potential {
            Some(w) => Arc::new(ShiftProx::new(Box::new(entropy), w)),
            None => Arc::new(entropy),
        };
        return Ok(Some(prox));
    }
    if let Some(w) = potential {
        let tilt = ShiftProx::new(Box::new(wjko::prox::IdentityProx), w);
        return Ok(Some(Arc::new(tilt)));
    }
    Ok(None)
}

/// Writes numbered frame files plus previews, keeping MANIFEST in sync
/// after every completed frame.
struct FrameWriter<'a> {
    out_dir: &'a Path,
    layout: FrameLayout,
    grid: Option<&'a GridDomain>,
    manifest: Vec<String>,
}

impl<'a> FrameWriter<'a> {
    fn new(out_dir: &'a Path, domain: &'a DomainSpec) -> FrameWriter<'a> {
        FrameWriter {
            out_dir,
            layout: FrameLayout::for_domain(domain),
            grid: domain.as_grid(),
            manifest: Vec::new(),
        }
    }

    fn payload(&self, nodes: &[f64]) -> Vec<f64> {
        match self.grid {
            Some(grid) => expand_to_raster(grid, nodes),
            None => nodes.to_vec(),
        }
    }

    fn record(&mut self, name: String) -> wjko::Result<()> {
        self.manifest.push(name);
        let listing = self.manifest.join("\n") + "\n";
        let path = self.out_dir.join("MANIFEST");
        fs::write(&path, listing).map_err(|source| wjko::Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn write_single(&mut self, step: usize, nodes: &[f64]) -> wjko::Result<()> {
        let raster = self.payload(nodes);
        let name = format!("p-{step:05}.dat");
        write_frame(&self.out_dir.join(&name), self.layout, &raster)?;
        if let Some(grid) = self.grid {
            write_pgm(
                &self.out_dir.join(format!("p-{step:05}.pgm")),
                grid.width,
                grid.height,
                &raster,
            )?;
        }
        self.record(name)
    }

    fn write_pair(&mut self, step: usize, p1: &[f64], p2: &[f64]) -> wjko::Result<()> {
        let r1 = self.payload(p1);
        let r2 = self.payload(p2);
        let name1 = format!("p1-{step:05}.dat");
        let name2 = format!("p2-{step:05}.dat");
        write_frame(&self.out_dir.join(&name1), self.layout, &r1)?;
        self.record(name1)?;
        write_frame(&self.out_dir.join(&name2), self.layout, &r2)?;
        if let Some(grid) = self.grid {
            write_ppm(
                &self.out_dir.join(format!("pair-{step:05}.ppm")),
                grid.width,
                grid.height,
                &r1,
                &r2,
            )?;
        }
        self.record(name2)
    }
}

fn write_single_diagnostics(out_dir: &Path, diags: &[StepDiagnostics]) -> Result<(), CliError> {
    let mut text = String::from("step,inner_iterations,final_violation,mass,max_density\n");
    for (i, d) in diags.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            d.inner_iterations,
            d.final_violation,
            d.mass,
            d.max_density
        ));
    }
    fs::write(out_dir.join("diagnostics.csv"), text).map_err(CliError::runtime)
}

fn write_multi_diagnostics(
    out_dir: &Path,
    diags: &[MultiStepDiagnostics],
    densities: usize,
) -> Result<(), CliError> {
    let mut text = String::from("step,inner_iterations,final_residual");
    if densities == 1 {
        text.push_str(",mass,max_density\n");
    } else {
        text.push_str(",mass1,mass2,max_density1,max_density2\n");
    }
    for (i, d) in diags.iter().enumerate() {
        text.push_str(&format!("{},{},{}", i + 1, d.inner_iterations, d.final_residual));
        for m in &d.masses {
            text.push_str(&format!(",{m}"));
        }
        for m in &d.max_densities {
            text.push_str(&format!(",{m}"));
        }
        text.push('\n');
    }
    fs::write(out_dir.join("diagnostics.csv"), text).map_err(CliError::runtime)
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn run_scenario(
    config: &ScenarioConfig,
    base: &Path,
    out_dir: &Path,
) -> Result<RunSummary, CliError> {
    let domain = build_domain(&config.domain, base)?;
    let kernel = build_kernel(&config.kernel, &domain, base)?;
    let gamma = config.kernel.gamma();
    let tau = config.flow.tau;
    let sigma = tau / gamma;
    let steps = config.flow.steps;
    let eps = config.flow.eps;
    let max_inner = config.flow.max_inner;

    let p0 = build_initial(&config.initial, &domain, config.seed, base)?;
    let p0_2 = match &config.initial2 {
        // Offset keeps the two seeded draws distinct but reproducible.
        Some(spec) => Some(build_initial(spec, &domain, config.seed.wrapping_add(1), base)?),
        None => None,
    };

    let f = &config.functional;
    let initial_max = match &p0_2 {
        Some(p2) => max_of(&p0).max(max_of(p2)),
        None => max_of(&p0),
    };
    let kappa = f.kappa.map(|k| k.resolve(initial_max));
    let potential = build_potential(&f.potential, &domain, config.seed.wrapping_add(2), base)?;
    let potential2 = build_potential(&f.potential2, &domain, config.seed.wrapping_add(3), base)?;

    fs::create_dir_all(out_dir).map_err(CliError::runtime)?;
    let mut writer = FrameWriter::new(out_dir, &domain);

    match config.scenario {
        ScenarioKind::CongestionCrowd
        | ScenarioKind::BinaryCrowd
        | ScenarioKind::NonlinearDiffusion => {
            let prox: Box<dyn ProxFn> = match config.scenario {
                ScenarioKind::CongestionCrowd => Box::new(
                    CongestionProx::new(kappa.expect("validated"), potential)
                        .map_err(CliError::input)?,
                ),
                ScenarioKind::BinaryCrowd => Box::new(
                    BinaryCongestionProx::new(kappa.expect("validated"), potential)
                        .map_err(CliError::input)?,
                ),
                _ => {
                    let entropy = EntropyProx::new(
                        Weight::Constant(f.m.expect("validated")),
                        Weight::Constant(f.b.unwrap_or(1.0)),
                    )
                    .map_err(CliError::input)?;
                    match potential {
                        Some(w) => Box::new(ShiftProx::new(Box::new(entropy), w)),
                        None => Box::new(entropy),
                    }
                }
            };
            let params = FlowParams {
                gamma,
                tau,
                eps,
                max_inner,
            };
            let diags = run_flow(kernel.as_ref(), prox.as_ref(), &p0, &params, steps, |s, p| {
                writer.write_single(s, p)
            })
            .map_err(CliError::runtime)?;
            write_single_diagnostics(out_dir, &diags)?;
            Ok(RunSummary {
                steps: diags.len(),
                frames: steps + 1,
                out_dir: out_dir.to_path_buf(),
            })
        }
        ScenarioKind::WassersteinAttraction => {
            let target = build_initial(
                f.target.as_ref().expect("validated"),
                &domain,
                config.seed.wrapping_add(4),
                base,
            )?;
            let h = optional_prox(kappa, f.m, f.b, potential)?;
            let scenario = AttractionScenario {
                target,
                tau: f.attraction_weight.unwrap_or(1.0),
                sigma,
                h,
            };
            let kernels: Vec<&dyn KernelOp> = vec![kernel.as_ref(), kernel.as_ref()];
            let diags = run_multi_flow(
                &kernels,
                &scenario,
                &[p0],
                eps,
                max_inner,
                steps,
                |s, ps| writer.write_single(s, &ps[0]),
            )
            .map_err(CliError::runtime)?;
            write_multi_diagnostics(out_dir, &diags, 1)?;
            Ok(RunSummary {
                steps: diags.len(),
                frames: steps + 1,
                out_dir: out_dir.to_path_buf(),
            })
        }
        ScenarioKind::PairwiseAttraction => {
            let h1 = optional_prox(kappa, None, None, potential)?;
            let h2 = optional_prox(kappa, None, None, potential2)?;
            let scenario = PairwiseScenario {
                alpha: f.alpha.unwrap_or(1.0),
                tau: f.attraction_weight.unwrap_or(1.0),
                sigma,
                h1,
                h2,
                // Potentials ride inside h1/h2 above.
                w1: None,
                w2: None,
                normalized_exponents: f.normalized_exponents.unwrap_or(true),
            };
            let kernels: Vec<&dyn KernelOp> =
                vec![kernel.as_ref(), kernel.as_ref(), kernel.as_ref()];
            let p0_2 = p0_2.expect("validated");
            let diags = run_multi_flow(
                &kernels,
                &scenario,
                &[p0, p0_2],
                eps,
                max_inner,
                steps,
                |s, ps| writer.write_pair(s, &ps[0], &ps[1]),
            )
            .map_err(CliError::runtime)?;
            write_multi_diagnostics(out_dir, &diags, 2)?;
            Ok(RunSummary {
                steps: diags.len(),
                frames: 2 * (steps + 1),
                out_dir: out_dir.to_path_buf(),
            })
        }
        ScenarioKind::SumCoupling => {
            let h = optional_prox(kappa, f.m, f.b, None)?
                .expect("validated: kappa or m is present");
            let scenario = SumCouplingScenario {
                sigma,
                h,
                w1: potential,
                w2: potential2,
            };
            let kernels: Vec<&dyn KernelOp> = vec![kernel.as_ref(), kernel.as_ref()];
            let p0_2 = p0_2.expect("validated");
            let diags = run_multi_flow(
                &kernels,
                &scenario,
                &[p0, p0_2],
                eps,
                max_inner,
                steps,
                |s, ps| writer.write_pair(s, &ps[0], &ps[1]),
            )
            .map_err(CliError::runtime)?;
            write_multi_diagnostics(out_dir, &diags, 2)?;
            Ok(RunSummary {
                steps: diags.len(),
                frames: 2 * (steps + 1),
                out_dir: out_dir.to_path_buf(),
            })
        }
    }
}
