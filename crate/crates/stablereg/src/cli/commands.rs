use std::fmt::Write as _;

use serde::Deserialize;

use super::{module_err, CliError, Context, Outcome};
use crate::fit::{loglog_slope, PowerBound};
use crate::flows::{DriftField, FlowConfig};
use crate::grid::Grid;
use crate::kernels::{kernel_property_suite, SuiteConfig};
use crate::model::{validate_model, ResidualKernel};
use crate::montecarlo::{scaling_experiment, EulerConfig, ScalingConfig};
use crate::parametrix::{phi_total, residual_envelope_constant, transition_density, FieldConfig, ParametrixConfig};
use crate::regression::{regression_law, RegressionConfig};

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    fn run(&self, ctx: &Context) -> Result<Outcome, CliError>;
}

pub struct CommandRegistry {
    commands: Vec<Box<dyn Command>>,
}

impl CommandRegistry {
    pub fn empty() -> Self {
        CommandRegistry { commands: Vec::new() }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(DensitySlice));
        r.register(Box::new(Flow));
        r.register(Box::new(PhiDiagnostics));
        r.register(Box::new(Parametrix));
        r.register(Box::new(Scaling));
        r.register(Box::new(ValidateModel));
        r.register(Box::new(KernelProps));
        r
    }

    /// Adds a command, replacing any with the same name.
    pub fn register(&mut self, c: Box<dyn Command>) {
        self.commands.retain(|x| x.name() != c.name());
        self.commands.push(c);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Command> {
        self.commands.iter().find(|c| c.name() == name).map(|c| c.as_ref())
    }

    pub fn names(&self) -> Vec<(&'static str, &'static str)> {
        self.commands.iter().map(|c| (c.name(), c.about())).collect()
    }
}

fn kv(out: &mut String, k: &str, v: impl std::fmt::Display) {
    writeln!(out, "{k}={v}").unwrap();
}

fn default_variant() -> String {
    "chi".into()
}

fn check_grid(g: &Grid, what: &str) -> Result<(), CliError> {
    if g.is_valid() {
        Ok(())
    } else {
        Err(CliError::Config(format!("invalid {what} grid {g:?}")))
    }
}

fn check_times(ts: &[f64]) -> Result<(), CliError> {
    if ts.len() < 2 || ts.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::Config("t_list needs at least two positive times".into()));
    }
    Ok(())
}

struct DensitySlice;

#[derive(Deserialize)]
struct DensitySliceParams {
    t: f64,
    x: f64,
    grid: Grid,
    #[serde(default = "default_variant")]
    variant: String,
}

impl Command for DensitySlice {
    fn name(&self) -> &'static str {
        "density-slice"
    }

    fn about(&self) -> &'static str {
        "regression-law density y -> p(t, x, y) on a grid"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let p: DensitySliceParams = ctx.params()?;
        check_grid(&p.grid, "y")?;
        let model = ctx.model()?;
        let rcfg = RegressionConfig::default();
        let law = regression_law(&model, p.x, p.t, &p.variant, &rcfg).map_err(module_err)?;
        let spec = rcfg.inversion();
        let mut csv = String::from("t,x,y,value\n");
        for y in p.grid.points() {
            let v = law.density(y, &spec).map_err(module_err)?;
            writeln!(csv, "{:e},{:e},{y:e},{v:e}", p.t, p.x).unwrap();
        }
        let mut report = String::new();
        kv(&mut report, "variant", &p.variant);
        kv(&mut report, "regressor", format!("{:e}", law.regressor));
        kv(&mut report, "scale", format!("{:e}", law.scale));
        kv(&mut report, "lambda", format!("{:e}", law.innovation.lambda));
        kv(&mut report, "rho", format!("{:e}", law.innovation.rho));
        kv(&mut report, "upsilon", format!("{:e}", law.innovation.upsilon));
        Ok(Outcome { csv, report, passed: true })
    }
}

struct Flow;

#[derive(Deserialize)]
struct FlowParams {
    x: f64,
    t: f64,
    /// `chi`, `kappa`, `chi_t`, `chi_bar` or `picard:<k>`.
    #[serde(default = "default_variant")]
    kind: String,
    #[serde(default)]
    flow: FlowConfig,
}

impl Command for Flow {
    fn name(&self) -> &'static str {
        "flow"
    }

    fn about(&self) -> &'static str {
        "trajectory of a deterministic flow"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let p: FlowParams = ctx.params()?;
        let model = ctx.model()?;
        let field = DriftField::new(&model, p.flow.mollifier);
        let traj = match p.kind.split_once(':') {
            Some(("picard", k)) => {
                let k = k.parse().map_err(|_| CliError::Config(format!("bad picard order {k:?}")))?;
                field.picard(p.x, p.t, k, &p.flow)
            }
            _ => match p.kind.as_str() {
                "chi" => field.chi(p.x, p.t, &p.flow),
                "kappa" => field.kappa(p.x, p.t, &p.flow),
                "chi_t" => field.chi_t(p.x, p.t, &p.flow),
                "chi_bar" => field.chi_bar(p.x, p.t, &p.flow),
                other => return Err(CliError::Config(format!("unknown flow kind {other:?}"))),
            },
        }
        .map_err(module_err)?;
        let mut report = String::new();
        kv(&mut report, "kind", &p.kind);
        kv(&mut report, "endpoint", format!("{:e}", traj.endpoint()));
        kv(&mut report, "nodes", traj.times.len());
        Ok(Outcome {
            csv: traj.to_csv(),
            report,
            passed: true,
        })
    }
}

struct PhiDiagnostics;

#[derive(Deserialize)]
struct PhiParams {
    #[serde(default = "phi_times")]
    t_list: Vec<f64>,
    #[serde(default)]
    field: FieldConfig,
}

fn phi_times() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}

impl Command for PhiDiagnostics {
    fn name(&self) -> &'static str {
        "phi-diagnostics"
    }

    fn about(&self) -> &'static str {
        "sup_x integral of |Phi_t| and its parts over a list of times"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let p: PhiParams = ctx.params()?;
        check_times(&p.t_list)?;
        check_grid(&p.field.rows, "row")?;
        let model = ctx.model()?;
        let delta = model.deltas().map_err(module_err)?.delta;
        let mut csv = String::from("t,phi_l1,drift_l1,alpha_l1,nu_l1,q_l1\n");
        let mut norms = Vec::new();
        for &t in &p.t_list {
            let f = phi_total(&model, t, &p.field).map_err(module_err)?;
            writeln!(
                csv,
                "{t:e},{:e},{:e},{:e},{:e},{:e}",
                f.sup_l1,
                f.drift.sup_row_l1(),
                f.alpha.sup_row_l1(),
                f.nu.sup_row_l1(),
                f.q_sup
            )
            .unwrap();
            norms.push(f.sup_l1);
        }
        let mut report = String::new();
        let bound = PowerBound::fit(&p.t_list, &norms, -1.0 + delta);
        kv(&mut report, "delta", format!("{delta:e}"));
        if norms.iter().all(|v| *v > 0.0) {
            let slope = loglog_slope(&p.t_list, &norms);
            kv(&mut report, "slope", format!("{slope:e}"));
            kv(&mut report, "slope_required", format!("{:e}", -1.0 + delta - 0.1));
        }
        kv(&mut report, "fitted_c", format!("{:e}", bound.constant));
        Ok(Outcome { csv, report, passed: true })
    }
}

struct Parametrix;

#[derive(Deserialize)]
struct ParametrixParams {
    t: f64,
    #[serde(default, flatten)]
    cfg: ParametrixConfig,
}

impl Command for Parametrix {
    fn name(&self) -> &'static str {
        "parametrix"
    }

    fn about(&self) -> &'static str {
        "transition density p = p0 + p0*Psi with residual against the regression law"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let p: ParametrixParams = ctx.params()?;
        check_grid(&p.cfg.field.rows, "row")?;
        let model = ctx.model()?;
        let td = transition_density(&model, p.t, &p.cfg).map_err(module_err)?;
        let mut csv = String::from("t,x,y,p,p0,main,residual\n");
        for i in 0..td.p.rows.n {
            let x = td.p.rows.point(i);
            for j in 0..td.p.y.n {
                writeln!(
                    csv,
                    "{:e},{x:e},{:e},{:e},{:e},{:e},{:e}",
                    p.t,
                    td.p.y.point(j),
                    td.p.get(i, j),
                    td.p0.get(i, j),
                    td.main.get(i, j),
                    td.residual.get(i, j)
                )
                .unwrap();
            }
        }
        let mut report = td.report.to_text();
        if matches!(model.nu(), ResidualKernel::Density { .. }) {
            let c = residual_envelope_constant(&model, &td).map_err(module_err)?;
            kv(&mut report, "pointwise_envelope_c", format!("{c:e}"));
        }
        Ok(Outcome {
            csv,
            report,
            passed: !td.report.diverging,
        })
    }
}

struct Scaling;

#[derive(Deserialize)]
struct ScalingParams {
    x0: f64,
    t_list: Vec<f64>,
    #[serde(default = "default_variant")]
    variant: String,
    #[serde(default)]
    n_paths: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    dt_ratio: Option<f64>,
    #[serde(default)]
    jump_cut: Option<f64>,
    #[serde(default)]
    bootstrap: Option<usize>,
}

impl Command for Scaling {
    fn name(&self) -> &'static str {
        "scaling"
    }

    fn about(&self) -> &'static str {
        "Kolmogorov distance between simulated paths and the regression law over t"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let p: ScalingParams = ctx.params()?;
        let model = ctx.model()?;
        let d = ScalingConfig::default();
        let cfg = ScalingConfig {
            euler: EulerConfig {
                n_paths: p.n_paths.unwrap_or(d.euler.n_paths),
                seed: ctx.seed.or(p.seed).unwrap_or(d.euler.seed),
                jump_cut: p.jump_cut.unwrap_or(d.euler.jump_cut),
                ..d.euler
            },
            dt_ratio: p.dt_ratio.unwrap_or(d.dt_ratio),
            bootstrap: p.bootstrap.unwrap_or(d.bootstrap),
            synthetic_inject: ctx.synthetic_inject,
        };
        let r = scaling_experiment(&model, p.x0, &p.t_list, &p.variant, &cfg).map_err(|e| match e {
            crate::montecarlo::MonteCarloError::Invalid(m) => CliError::Config(m),
            other => module_err(other),
        })?;
        Ok(Outcome {
            csv: r.to_csv(),
            report: r.metadata(),
            passed: true,
        })
    }
}

struct ValidateModel;

#[derive(Deserialize)]
struct ValidateParams {
    #[serde(default = "validation_grid")]
    grid: Grid,
}

fn validation_grid() -> Grid {
    Grid::new(-10.0, 10.0, 2001)
}

impl Command for ValidateModel {
    fn name(&self) -> &'static str {
        "validate-model"
    }

    fn about(&self) -> &'static str {
        "probe the model conditions on a grid"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let p: ValidateParams = ctx.params()?;
        check_grid(&p.grid, "validation")?;
        let model = ctx.model()?;
        let r = validate_model(&model, &p.grid);
        let mut csv = String::from("check,passed,constant\n");
        for c in &r.checks {
            writeln!(csv, "{},{},{:e}", c.name, c.passed, c.constant).unwrap();
        }
        let mut report = r.to_string();
        kv(&mut report, "all_passed", r.all_passed());
        Ok(Outcome {
            csv,
            report,
            passed: r.all_passed(),
        })
    }
}

struct KernelProps;

#[derive(Deserialize)]
struct KernelParamsFile {
    #[serde(default, flatten)]
    suite: SuiteConfig,
}

impl Command for KernelProps {
    fn name(&self) -> &'static str {
        "kernel-props"
    }

    fn about(&self) -> &'static str {
        "randomized comparison-kernel inequalities with fitted constants"
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let mut p: KernelParamsFile = ctx.params()?;
        if let Some(s) = ctx.seed {
            p.suite.seed = s;
        }
        let checks = kernel_property_suite(&p.suite).map_err(module_err)?;
        let mut csv = String::from("property,constant,constant_doubled,samples,seed,stable\n");
        let mut report = String::new();
        for c in &checks {
            writeln!(
                csv,
                "{},{:e},{:e},{},{},{}",
                c.name,
                c.constant,
                c.constant_doubled,
                c.samples,
                c.seed,
                c.stable()
            )
            .unwrap();
            kv(&mut report, &c.name, if c.stable() { "stable" } else { "unstable" });
        }
        let ok = checks.iter().all(|c| c.stable());
        kv(&mut report, "all_stable", ok);
        Ok(Outcome { csv, report, passed: ok })
    }
}
