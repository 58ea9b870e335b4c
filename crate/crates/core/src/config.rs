//! JSON run configuration for the command-line front-end.
//!
//! A document has the blocks `model` and `grid` (required) and `solver`, `adjoint`,
//! `output`, `initial`, `roster` (optional). Unknown keys are rejected with a
//! suggestion for the closest known key.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ergodic::{default_c_ladder, GMapConfig};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, PeriodicGrid};
use crate::hamiltonians::{
    ContactNonlinearity, Family, Hamiltonian, HamiltonianModel, Potential, DEFAULT_R_BOUND,
};
use crate::schemes::{Flux, SchemeConfig, Side, Viscosity};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    grid: RawGrid,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    adjoint: RawAdjoint,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    initial: Option<FieldSpec>,
    #[serde(default)]
    roster: Vec<FieldSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Prototype,
    Classical,
    DiscountedQuadratic,
    EikonalContact,
    Magnetic,
    StrictMonotoneTest,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    family: FamilyName,
    m: Option<f64>,
    potential: Option<PotentialSpec>,
    phi: Option<PotentialSpec>,
    f: Option<NonlinearitySpec>,
    lambda: Option<f64>,
    r_bound: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum PotentialSpec {
    Zero,
    Example4,
    Expr(String),
    RadialBump { radius: f64, k_in: f64, k_out: f64 },
    Csv(PathBuf),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum NonlinearitySpec {
    PiecewiseLinear,
    CubicPlus,
    Table(Vec<(f64, f64)>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dim: usize,
    n: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FluxSpec {
    Auto,
    LaxFriedrichs,
    Upwind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ViscositySpec {
    Local,
    LocalBox,
    Global,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SideSpec {
    Sub,
    Super,
    Both,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSolver {
    /// Defaults to `max(3, C₁ + 2)`.
    lambda: Option<f64>,
    damping: f64,
    outer_tol: f64,
    max_outer: usize,
    cfl: f64,
    steady_tol: f64,
    max_steps: usize,
    flux: FluxSpec,
    viscosity: ViscositySpec,
    margin: f64,
    eps: f64,
    c: f64,
    certify_tol: f64,
    side: SideSpec,
    exclude_radius: usize,
    kink_jump_tol: f64,
    c_ladder: Option<Vec<f64>>,
    u0_tol: f64,
}

impl Default for RawSolver {
    fn default() -> Self {
        let g = GMapConfig::default();
        let s = SchemeConfig::default();
        RawSolver {
            lambda: None,
            damping: g.damping,
            outer_tol: g.outer_tol,
            max_outer: g.max_outer,
            cfl: s.cfl,
            steady_tol: s.steady_tol,
            max_steps: s.max_steps,
            flux: FluxSpec::Auto,
            viscosity: ViscositySpec::Local,
            margin: s.margin,
            eps: 0.1,
            c: 0.0,
            certify_tol: 0.05,
            side: SideSpec::Both,
            exclude_radius: 0,
            kink_jump_tol: 0.5,
            c_ladder: None,
            u0_tol: 1e-4,
        }
    }
}

/// Which nodes serve as adjoint sources.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Spec {
    /// `k` evenly spaced nodes starting at node 0.
    Count(usize),
    /// Explicit flat node indices.
    Nodes(Vec<usize>),
    /// `k` distinct nodes drawn with the run seed.
    Random(usize),
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawAdjoint {
    eps_ladder: Vec<f64>,
    x0: X0Spec,
    threshold: f64,
    certificate_tol: f64,
}

impl Default for RawAdjoint {
    fn default() -> Self {
        RawAdjoint {
            eps_ladder: vec![0.4, 0.2, 0.1],
            x0: X0Spec::Count(16),
            threshold: 1e-3,
            certificate_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Gnuplot,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    formats: Vec<OutputFormat>,
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput {
            dir: None,
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

/// A grid function given in the config.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum FieldSpec {
    Zero,
    Constant(f64),
    Expr(String),
    Csv(PathBuf),
}

#[derive(Debug, Clone)]
pub struct AdjointSettings {
    pub eps_ladder: Vec<f64>,
    pub x0: X0Spec,
    pub threshold: f64,
    pub certificate_tol: f64,
}

#[derive(Debug, Clone)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
}

impl OutputSettings {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

/// A fully validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub family: FamilyName,
    pub model: HamiltonianModel,
    pub grid: PeriodicGrid,
    pub gmap: GMapConfig,
    pub scheme: SchemeConfig,
    pub eps: f64,
    pub c: f64,
    pub certify_tol: f64,
    pub side: Side,
    pub exclude_radius: usize,
    pub kink_jump_tol: f64,
    pub c_ladder: Vec<f64>,
    pub u0_tol: f64,
    pub adjoint: AdjointSettings,
    pub output: OutputSettings,
    pub initial: Option<GridFunction>,
    pub roster: Vec<GridFunction>,
}

impl RunConfig {
    /// The configured initial datum, or `u ≡ 0`.
    pub fn initial_or_zero(&self) -> GridFunction {
        self.initial
            .clone()
            .unwrap_or_else(|| GridFunction::zeros(self.grid))
    }

    /// Resolves the adjoint source nodes; `seed` drives `random` samples.
    pub fn x0_nodes(&self, seed: u64) -> Result<Vec<usize>> {
        let len = self.grid.len();
        match &self.adjoint.x0 {
            X0Spec::Count(k) => Ok((0..*k).map(|j| j * len / k).collect()),
            X0Spec::Nodes(v) => Ok(v.clone()),
            X0Spec::Random(k) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut v = sample(&mut rng, len, *k).into_vec();
                v.sort_unstable();
                Ok(v)
            }
        }
    }
}

/// Reads and validates a configuration file; relative paths inside it are resolved
/// against the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::config(format!("config {} is not valid UTF-8", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(json_error)?;
    validate(raw, base)
}

fn json_error(e: serde_json::Error) -> Error {
    let full = e.to_string();
    let message = match full.rfind(" at line ") {
        Some(i) => full[..i].to_string(),
        None => full,
    };
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: with_suggestion(message),
    }
}

/// Appends "did you mean" for serde's unknown field/variant messages, whose first
/// backquoted token is the offending name and the rest are the accepted ones.
fn with_suggestion(message: String) -> String {
    if !(message.starts_with("unknown field") || message.starts_with("unknown variant")) {
        return message;
    }
    let tokens: Vec<&str> = message.split('`').skip(1).step_by(2).collect();
    let Some((bad, known)) = tokens.split_first() else {
        return message;
    };
    let best = known
        .iter()
        .map(|k| (strsim::damerau_levenshtein(bad, k), *k))
        .min();
    match best {
        Some((d, k)) if d <= 2.max(bad.len() / 3) => format!("{message}; did you mean `{k}`?"),
        _ => message,
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    let msg = msg.to_string();
    let msg = msg.strip_prefix("configuration error: ").unwrap_or(&msg);
    Error::config(format!("{field}: {msg}"))
}

fn resolve(base: &Path, p: &Path, field: &str) -> Result<PathBuf> {
    let full = if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    };
    if !full.is_file() {
        return Err(field_err(
            field,
            format!("file {} does not exist", full.display()),
        ));
    }
    Ok(full)
}

fn load_grid_csv(base: &Path, p: &Path, grid: PeriodicGrid, field: &str) -> Result<GridFunction> {
    let f = GridFunction::load_csv(&resolve(base, p, field)?)?;
    if *f.grid() != grid {
        return Err(field_err(
            field,
            format!(
                "CSV grid (dim {}, N {}) differs from the configured grid (dim {}, N {})",
                f.grid().dim(),
                f.grid().nodes_per_axis(),
                grid.dim(),
                grid.nodes_per_axis()
            ),
        ));
    }
    Ok(f)
}

fn potential(
    spec: Option<PotentialSpec>,
    base: &Path,
    grid: PeriodicGrid,
    field: &str,
) -> Result<Potential> {
    Ok(match spec.unwrap_or(PotentialSpec::Zero) {
        PotentialSpec::Zero => Potential::Zero,
        PotentialSpec::Example4 => Potential::Example4,
        PotentialSpec::Expr(s) => Potential::expr(&s).map_err(|e| field_err(field, e))?,
        PotentialSpec::RadialBump {
            radius,
            k_in,
            k_out,
        } => {
            if !(radius > 0.0 && radius < 0.5) {
                return Err(field_err(field, "radius must lie in (0, 1/2)"));
            }
            Potential::RadialBump {
                radius,
                k_in,
                k_out,
            }
        }
        PotentialSpec::Csv(p) => {
            let f = load_grid_csv(base, &p, grid, field)?;
            Potential::Sampled(crate::hamiltonians::SampledField::new(f))
        }
    })
}

fn nonlinearity(spec: Option<NonlinearitySpec>) -> Result<ContactNonlinearity> {
    match spec.unwrap_or(NonlinearitySpec::CubicPlus) {
        NonlinearitySpec::PiecewiseLinear => Ok(ContactNonlinearity::PiecewiseLinear),
        NonlinearitySpec::CubicPlus => Ok(ContactNonlinearity::CubicPlus),
        NonlinearitySpec::Table(k) => {
            ContactNonlinearity::table(k).map_err(|e| field_err("model.f", e))
        }
    }
}

fn build_model(raw: RawModel, grid: PeriodicGrid, base: &Path) -> Result<HamiltonianModel> {
    let name = raw.family;
    let unused = |field: &str, present: bool| -> Result<()> {
        if present {
            Err(field_err(
                &format!("model.{field}"),
                format!("does not apply to family {name:?}"),
            ))
        } else {
            Ok(())
        }
    };
    let m = raw.m.unwrap_or(2.0);
    let dim = grid.dim();
    let family = match name {
        FamilyName::Prototype => {
            unused("phi", raw.phi.is_some())?;
            unused("lambda", raw.lambda.is_some())?;
            Family::Prototype {
                m,
                potential: potential(raw.potential, base, grid, "model.potential")?,
                f: nonlinearity(raw.f)?,
            }
        }
        FamilyName::Classical => {
            unused("phi", raw.phi.is_some())?;
            unused("lambda", raw.lambda.is_some())?;
            unused("f", raw.f.is_some())?;
            Family::Classical {
                m,
                potential: potential(raw.potential, base, grid, "model.potential")?,
            }
        }
        FamilyName::DiscountedQuadratic => {
            unused("phi", raw.phi.is_some())?;
            unused("f", raw.f.is_some())?;
            unused("m", raw.m.is_some())?;
            Family::DiscountedQuadratic {
                lambda: raw.lambda.ok_or_else(|| {
                    field_err("model.lambda", "required for discounted_quadratic")
                })?,
                potential: potential(raw.potential, base, grid, "model.potential")?,
            }
        }
        FamilyName::EikonalContact => {
            unused("phi", raw.phi.is_some())?;
            unused("lambda", raw.lambda.is_some())?;
            unused("m", raw.m.is_some())?;
            Family::EikonalContact {
                potential: potential(raw.potential, base, grid, "model.potential")?,
                f: nonlinearity(raw.f)?,
            }
        }
        FamilyName::Magnetic => {
            unused("potential", raw.potential.is_some())?;
            unused("lambda", raw.lambda.is_some())?;
            unused("m", raw.m.is_some())?;
            Family::Magnetic {
                phi: potential(raw.phi, base, grid, "model.phi")?,
                f: nonlinearity(raw.f)?,
            }
        }
        FamilyName::StrictMonotoneTest => {
            unused("phi", raw.phi.is_some())?;
            unused("lambda", raw.lambda.is_some())?;
            unused("f", raw.f.is_some())?;
            unused("m", raw.m.is_some())?;
            Family::StrictMonotoneTest {
                potential: potential(raw.potential, base, grid, "model.potential")?,
            }
        }
    };
    HamiltonianModel::make(dim, family, raw.r_bound.unwrap_or(DEFAULT_R_BOUND))
        .map_err(|e| field_err("model", e))
}

fn field(spec: FieldSpec, base: &Path, grid: PeriodicGrid, name: &str) -> Result<GridFunction> {
    Ok(match spec {
        FieldSpec::Zero => GridFunction::zeros(grid),
        FieldSpec::Constant(c) => {
            if !c.is_finite() {
                return Err(field_err(name, "constant must be finite"));
            }
            GridFunction::constant(grid, c)
        }
        FieldSpec::Expr(s) => {
            let e = crate::expr::Expr::parse(&s).map_err(|e| field_err(name, e))?;
            if grid.dim() == 1 && e.uses_y() {
                return Err(field_err(name, "expression uses y on a 1D grid"));
            }
            GridFunction::from_fn(grid, |x| e.value(x))
        }
        FieldSpec::Csv(p) => load_grid_csv(base, &p, grid, name)?,
    })
}

fn check_eps(field: &str, eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(field_err(field, format!("ε must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

fn validate(raw: RawConfig, base: &Path) -> Result<RunConfig> {
    let grid = PeriodicGrid::new(raw.grid.dim, raw.grid.n).map_err(|e| field_err("grid", e))?;
    let family = raw.model.family;
    let model = build_model(raw.model, grid, base)?;
    let s = raw.solver;
    let c1 = model.meta().lipschitz_r;
    let lambda = s.lambda.unwrap_or((c1 + 2.0).max(3.0));
    if !(lambda > c1 + 1.0) || !lambda.is_finite() {
        return Err(field_err(
            "solver.lambda",
            format!("λ > C₁+1 is required (λ = {lambda}, C₁ = {c1} for this model)"),
        ));
    }
    if !(s.damping > 0.0 && s.damping <= 1.0) {
        return Err(field_err(
            "solver.damping",
            format!("γ must lie in (0, 1], got {}", s.damping),
        ));
    }
    check_eps("solver.eps", s.eps)?;
    if !(s.outer_tol > 0.0) {
        return Err(field_err("solver.outer_tol", "must be positive"));
    }
    if !(s.certify_tol >= 0.0) {
        return Err(field_err("solver.certify_tol", "must be nonnegative"));
    }
    if !(s.u0_tol > 0.0) {
        return Err(field_err("solver.u0_tol", "must be positive"));
    }
    if !s.c.is_finite() {
        return Err(field_err("solver.c", "must be finite"));
    }
    let scheme = SchemeConfig {
        flux: match s.flux {
            FluxSpec::Auto => Flux::Auto,
            FluxSpec::LaxFriedrichs => Flux::LaxFriedrichs,
            FluxSpec::Upwind => Flux::Upwind,
        },
        viscosity: match s.viscosity {
            ViscositySpec::Local => Viscosity::Local,
            ViscositySpec::LocalBox => Viscosity::LocalBox,
            ViscositySpec::Global => Viscosity::Global,
            ViscositySpec::Fixed(v) => Viscosity::Fixed(v),
        },
        margin: s.margin,
        cfl: s.cfl,
        max_steps: s.max_steps,
        steady_tol: s.steady_tol,
        ..SchemeConfig::default()
    };
    scheme.validate().map_err(|e| field_err("solver", e))?;
    scheme
        .flux
        .resolve(&model)
        .map_err(|e| field_err("solver.flux", e))?;
    let gmap = GMapConfig {
        lambda,
        damping: s.damping,
        outer_tol: s.outer_tol,
        max_outer: s.max_outer,
        inner: scheme.clone(),
    };
    gmap.validate(&model).map_err(|e| field_err("solver", e))?;
    let c_ladder = s.c_ladder.unwrap_or_else(default_c_ladder);
    if c_ladder.is_empty()
        || c_ladder.iter().any(|c| !(*c > 0.0))
        || c_ladder.windows(2).any(|w| !(w[1] < w[0]))
    {
        return Err(field_err(
            "solver.c_ladder",
            "must be a nonempty strictly decreasing list of positive values",
        ));
    }

    let a = raw.adjoint;
    if a.eps_ladder.is_empty() {
        return Err(field_err("adjoint.eps_ladder", "must not be empty"));
    }
    for e in &a.eps_ladder {
        check_eps("adjoint.eps_ladder", *e)?;
    }
    if !(a.threshold > 0.0) {
        return Err(field_err("adjoint.threshold", "must be positive"));
    }
    if !(a.certificate_tol >= 0.0) {
        return Err(field_err("adjoint.certificate_tol", "must be nonnegative"));
    }
    match &a.x0 {
        X0Spec::Count(k) | X0Spec::Random(k) if *k == 0 || *k > grid.len() => {
            return Err(field_err(
                "adjoint.x0",
                format!("sample size must lie in 1..={}", grid.len()),
            ));
        }
        X0Spec::Nodes(v) if v.is_empty() || v.iter().any(|i| *i >= grid.len()) => {
            return Err(field_err(
                "adjoint.x0",
                format!("nodes must be a nonempty list below {}", grid.len()),
            ));
        }
        _ => {}
    }
    if raw.output.formats.is_empty() {
        return Err(field_err("output.formats", "must list at least one format"));
    }
    let initial = raw
        .initial
        .map(|f| field(f, base, grid, "initial"))
        .transpose()?;
    let roster = raw
        .roster
        .into_iter()
        .enumerate()
        .map(|(k, f)| field(f, base, grid, &format!("roster[{k}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunConfig {
        family,
        model,
        grid,
        gmap,
        scheme,
        eps: s.eps,
        c: s.c,
        certify_tol: s.certify_tol,
        side: match s.side {
            SideSpec::Sub => Side::Sub,
            SideSpec::Super => Side::Super,
            SideSpec::Both => Side::Both,
        },
        exclude_radius: s.exclude_radius,
        kink_jump_tol: s.kink_jump_tol,
        c_ladder,
        u0_tol: s.u0_tol,
        adjoint: AdjointSettings {
            eps_ladder: a.eps_ladder,
            x0: a.x0,
            threshold: a.threshold,
            certificate_tol: a.certificate_tol,
        },
        output: OutputSettings {
            dir: raw
                .output
                .dir
                .map(|d| if d.is_absolute() { d } else { base.join(d) }),
            formats: raw.output.formats,
        },
        initial,
        roster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("."))
    }

    const MINIMAL: &str = r#"{"model": {"family": "prototype"}, "grid": {"dim": 1, "n": 64}}"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.gmap.lambda, 14.0);
        assert_eq!(c.gmap.inner, SchemeConfig::default());
        assert_eq!((c.gmap.damping, c.gmap.max_outer), (0.5, 500));
        assert_eq!(c.scheme, SchemeConfig::default());
        assert_eq!(c.adjoint.eps_ladder, vec![0.4, 0.2, 0.1]);
        assert_eq!(c.adjoint.x0, X0Spec::Count(16));
        assert_eq!(c.c_ladder, default_c_ladder());
        assert!(c.initial.is_none() && c.roster.is_empty());
        assert_eq!(c.model.power(), 2.0);
        assert_eq!(c.x0_nodes(0).unwrap()[1], 4);
    }

    #[test]
    fn lambda_precondition_is_cited() {
        let text = r#"{"model": {"family": "strict_monotone_test"}, "grid": {"dim": 1, "n": 64},
                       "solver": {"lambda": 1}}"#;
        let e = parse(text).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("λ > C₁+1"), "{e}");
    }

    #[test]
    fn unknown_key_suggests_the_closest() {
        let text = r#"{"model": {"family": "prototype"}, "grid": {"dim": 1, "n": 64},
                       "solver": {"dampng": 0.5}}"#;
        let e = parse(text).unwrap_err();
        let Error::Parse { line, message, .. } = &e else {
            panic!("{e}")
        };
        assert_eq!(*line, 2);
        assert!(
            message.contains("`dampng`") && message.contains("did you mean `damping`?"),
            "{message}"
        );
        let e =
            parse(r#"{"model": {"family": "protoype"}, "grid": {"dim": 1, "n": 64}}"#).unwrap_err();
        assert!(e.to_string().contains("did you mean `prototype`?"), "{e}");
        let e = parse(
            r#"{"model": {"family": "prototype"}, "grid": {"dim": 1, "n": 64}, "zzzzzz": 1}"#,
        )
        .unwrap_err();
        assert!(!e.to_string().contains("did you mean"), "{e}");
    }

    #[test]
    fn ranges_and_files_are_checked() {
        for (block, msg) in [
            (r#""solver": {"eps": 0}"#, "solver.eps"),
            (r#""solver": {"damping": 1.5}"#, "solver.damping"),
            (
                r#""adjoint": {"eps_ladder": [0.2, 2.0]}"#,
                "adjoint.eps_ladder",
            ),
            (r#""adjoint": {"x0": {"nodes": [64]}}"#, "adjoint.x0"),
            (
                r#""initial": {"csv": "no/such/file.csv"}"#,
                "does not exist",
            ),
            (r#""initial": {"expr": "sin(y)"}"#, "uses y"),
        ] {
            let text = format!(
                r#"{{"model": {{"family": "prototype"}}, "grid": {{"dim": 1, "n": 64}}, {block}}}"#
            );
            let e = parse(&text).unwrap_err();
            assert!(e.to_string().contains(msg), "{block}: {e}");
            assert_eq!(e.exit_code(), 2);
        }
        let e = parse(
            r#"{"model": {"family": "prototype", "phi": "zero"}, "grid": {"dim": 1, "n": 64}}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("model.phi"), "{e}");
        assert!(matches!(parse("{\"model\": "), Err(Error::Parse { .. })));
    }

    #[test]
    fn full_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = PeriodicGrid::new(1, 32).unwrap();
        GridFunction::from_fn(g, |x| x[0])
            .save_csv(&dir.path().join("u.csv"), "u")
            .unwrap();
        let text = r#"{
            "model": {"family": "magnetic", "phi": {"expr": "0.1*sin(2*pi*x)"}, "f": "piecewise_linear"},
            "grid": {"dim": 1, "n": 32},
            "solver": {"flux": "lax_friedrichs", "viscosity": {"fixed": [0.5]}, "side": "sub"},
            "adjoint": {"x0": {"random": 5}, "threshold": 0.01},
            "output": {"dir": "out", "formats": ["csv", "gnuplot"]},
            "initial": {"csv": "u.csv"},
            "roster": ["zero", {"constant": -0.1}]
        }"#;
        let path = dir.path().join("run.json");
        std::fs::write(&path, text).unwrap();
        let c = parse_config(&path).unwrap();
        assert_eq!(c.family, FamilyName::Magnetic);
        assert_eq!(c.scheme.viscosity, Viscosity::Fixed(vec![0.5]));
        assert_eq!(c.side, Side::Sub);
        assert_eq!(c.roster.len(), 2);
        assert_eq!(
            c.output.dir.as_deref(),
            Some(dir.path().join("out").as_path())
        );
        let a = c.x0_nodes(7).unwrap();
        assert_eq!(a, c.x0_nodes(7).unwrap());
        assert_eq!(a.len(), 5);
        assert!(c.output.wants(OutputFormat::Gnuplot) && !c.output.wants(OutputFormat::Json));
    }
}
