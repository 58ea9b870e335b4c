//! Constructive solvers for `H(x, u, Du) = c`: the normalized map
//! `G(u) = v − min v` with `λv + H(x, u, Dv) = λu`, its damped fixed-point
//! iteration, the prototype solvers for `c > 0` and the limit `c → 0`, and
//! comparisons on the zero set of the potential.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, NodeMask, PeriodicGrid};
use crate::hamiltonians::{Family, Hamiltonian, HamiltonianModel};
use crate::schemes::{
    residual, solve_implicit, solve_stationary, ImplicitProblem, RArg, SchemeConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GMapConfig {
    pub lambda: f64,
    pub damping: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner: SchemeConfig,
}

impl Default for GMapConfig {
    fn default() -> Self {
        GMapConfig {
            lambda: 3.0,
            damping: 0.5,
            outer_tol: 1e-4,
            max_outer: 500,
            inner: SchemeConfig::default(),
        }
    }
}

impl GMapConfig {
    pub fn validate<H: Hamiltonian + ?Sized>(&self, model: &H) -> Result<()> {
        self.inner.validate()?;
        let c1 = model.meta().lipschitz_r;
        if !(self.lambda > c1 + 1.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "λ = {} must exceed C₁ + 1 = {}",
                self.lambda,
                c1 + 1.0
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::config("outer_tol must be positive"));
        }
        if self.max_outer == 0 {
            return Err(Error::config("max_outer must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GMapOutput {
    pub w: GridFunction,
    /// `−λ · min v`.
    pub c_est: f64,
    /// Node attaining `min v` (first index on ties).
    pub argmin: usize,
    pub inner_residual: f64,
}

/// One application of `G`.
pub fn g_map<H: Hamiltonian + ?Sized>(
    model: &H,
    u: &GridFunction,
    cfg: &GMapConfig,
) -> Result<GMapOutput> {
    cfg.validate(model)?;
    let rep = solve_stationary(model, u, cfg.lambda, &cfg.inner)?;
    let argmin = rep.v.argmin();
    let vmin = rep.v.values()[argmin];
    let w = rep.v.map(|x| x - vmin);
    Ok(GMapOutput {
        w,
        c_est: 0.0 - cfg.lambda * vmin,
        argmin,
        inner_residual: rep.residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicSolution {
    #[serde(skip)]
    pub u: GridFunction,
    pub c: f64,
    pub residual_linf: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖G(u) − u‖_∞` per outer iteration.
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Damped iteration `u ← (1−γ)u + γG(u)` until `‖G(u) − u‖_∞ ≤ outer_tol`.
/// Exhausting `max_outer` yields `converged = false`, not an error.
pub fn fixed_point_ergodic<H: Hamiltonian + ?Sized>(
    model: &H,
    u_init: &GridFunction,
    cfg: &GMapConfig,
) -> Result<ErgodicSolution> {
    cfg.validate(model)?;
    let mut warnings = Vec::new();
    if !model.meta().superlinear_p {
        warnings
            .push("Hamiltonian is not superlinear in p; the fixed-point set may be empty".into());
    }
    let mut u = u_init.clone();
    let mut history = Vec::new();
    let mut last = None;
    for it in 1..=cfg.max_outer {
        let out = g_map(model, &u, cfg)?;
        let diff = out.w.linf_distance(&u)?;
        history.push(diff);
        if diff <= cfg.outer_tol {
            let res = residual(model, &out.w, out.c_est, &cfg.inner)?;
            return Ok(ErgodicSolution {
                u: out.w,
                c: out.c_est,
                residual_linf: res.linf,
                iterations: it,
                converged: true,
                history,
                warnings,
            });
        }
        u = u.zip_map(&out.w, |a, b| (1.0 - cfg.damping) * a + cfg.damping * b)?;
        last = Some(out);
    }
    let out = last.expect("at least one outer iteration");
    let res = residual(model, &out.w, out.c_est, &cfg.inner)?;
    warnings.push(format!(
        "fixed-point iteration stagnated after {} iterations (last ‖G(u)−u‖ = {:.3e})",
        cfg.max_outer,
        history.last().copied().unwrap_or(f64::NAN)
    ));
    Ok(ErgodicSolution {
        u: out.w,
        c: out.c_est,
        residual_linf: res.linf,
        iterations: cfg.max_outer,
        converged: false,
        history,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KBound {
    pub alpha: f64,
    /// `α(1 + √n)`.
    pub bound: f64,
    /// `max |H(x, 0, 0)|`.
    pub c0: f64,
}

const K_ALPHA_MAX: f64 = 1e6;

/// Smallest integer `α` with `min_x H(x, 0, p) ≥ 3λ(C₀ + α(1+√n))` at every sampled
/// `|p| = α`, found by doubling and then bisection.
pub fn k_bound<H: Hamiltonian + ?Sized>(model: &H, lambda: f64) -> Result<KBound> {
    let dim = model.meta().dim;
    let grid = PeriodicGrid::new(dim, if dim == 1 { 256 } else { 64 })?;
    let c0 = (0..grid.len())
        .map(|i| model.eval(grid.point(i), 0.0, [0.0; 2]).abs())
        .fold(0.0, f64::max);
    let dirs: Vec<[f64; 2]> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..16)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 8.0;
                [a.cos(), a.sin()]
            })
            .collect()
    };
    let factor = 1.0 + (dim as f64).sqrt();
    let ok = |alpha: f64| {
        let rhs = 3.0 * lambda * (c0 + alpha * factor);
        (0..grid.len()).all(|i| {
            let x = grid.point(i);
            dirs.iter()
                .all(|d| model.eval(x, 0.0, [alpha * d[0], alpha * d[1]]) >= rhs)
        })
    };
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
        if hi > K_ALPHA_MAX {
            return Err(Error::NonConvergence {
                what: "K-bound search (Hamiltonian not superlinear enough)".into(),
                iterations: 21,
                residual: hi,
            });
        }
    }
    let mut lo = (hi / 2.0).floor();
    if hi == 1.0 {
        lo = 0.0;
    }
    // invariant: ok(hi), !ok(lo) unless lo == 0
    while hi - lo > 1.0 {
        let mid = ((lo + hi) / 2.0).floor();
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(KBound {
        alpha: hi,
        bound: hi * factor,
        c0,
    })
}

/// `‖u‖_∞ + ‖Du‖_∞` with the forward-difference gradient.
pub fn k_norm(u: &GridFunction) -> f64 {
    u.linf_norm() + u.gradient_linf()
}

/// A random nonnegative trigonometric polynomial scaled into
/// `K = {u ≥ 0, ‖u‖_∞ + ‖Du‖_∞ ≤ bound}`.
pub fn sample_k<R: Rng>(rng: &mut R, grid: PeriodicGrid, bound: f64) -> GridFunction {
    let modes = rng.gen_range(1..=4);
    let mut terms = Vec::new();
    for _ in 0..modes {
        let k = [
            rng.gen_range(1..=3) as f64,
            if grid.dim() == 2 {
                rng.gen_range(0..=3) as f64
            } else {
                0.0
            },
        ];
        terms.push((
            k,
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.0..std::f64::consts::TAU),
        ));
    }
    let raw = GridFunction::from_fn(grid, |x| {
        terms
            .iter()
            .map(|(k, a, ph)| a * (std::f64::consts::TAU * (k[0] * x[0] + k[1] * x[1]) + ph).sin())
            .sum()
    });
    let m = raw.min();
    let shifted = raw.map(|v| v - m);
    let n = k_norm(&shifted);
    let target = bound * rng.gen_range(0.05..0.95);
    if n == 0.0 {
        shifted
    } else {
        shifted.map(|v| v * target / n)
    }
}

fn prototype_parts(model: &HamiltonianModel) -> Result<()> {
    match model.family() {
        Family::Prototype { .. } => Ok(()),
        other => Err(Error::config(format!(
            "this solver needs the prototype family, got {}",
            other.name()
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct PositiveSolution {
    pub u: GridFunction,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `|Du|^m − V + f(u) = c` for `c > 0`, from `init` or from the constant
/// supersolution `f⁻¹(c + max V)`. Every solution lies between `f⁻¹(c)` and
/// `f⁻¹(c + max V)`, and `init` is clamped to that band first.
pub fn solve_prototype_positive(
    model: &HamiltonianModel,
    grid: PeriodicGrid,
    c: f64,
    init: Option<&GridFunction>,
    cfg: &SchemeConfig,
) -> Result<PositiveSolution> {
    prototype_parts(model)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::config(format!(
            "solve_prototype_positive needs c > 0 (got {c}); use select_u0 for the limit c → 0"
        )));
    }
    let f = model.nonlinearity().expect("prototype has f");
    let vmax = model.potential().sample(grid).max();
    let (lo, hi) = (f.inverse(c)?, f.inverse(c + vmax)?);
    let start = match init {
        Some(u) => {
            if *u.grid() != grid {
                return Err(Error::config("initial guess lives on a different grid"));
            }
            u.map(|x| x.clamp(lo, hi))
        }
        None => GridFunction::constant(grid, hi),
    };
    let rhs = GridFunction::constant(grid, c);
    let problem = ImplicitProblem {
        lambda: 0.0,
        r: RArg::Unknown,
        rhs: &rhs,
    };
    let tol = cfg.steady_tol.min(1e-3 * c).max(1e-12);
    let cfg = SchemeConfig {
        steady_tol: tol,
        ..cfg.clone()
    };
    let rep = solve_implicit(model, problem, &start, &cfg)?;
    if rep.residual > tol {
        return Err(Error::NonConvergence {
            what: format!("prototype solve at c = {c}"),
            iterations: rep.iterations,
            residual: rep.residual,
        });
    }
    Ok(PositiveSolution {
        u: rep.v,
        residual: rep.residual,
        iterations: rep.iterations,
    })
}

/// `c_k = 0.5 · 2^{-k}`, `k = 0..=40`.
pub fn default_c_ladder() -> Vec<f64> {
    (0..=40).map(|k| 0.5 * 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct U0Selection {
    #[serde(skip)]
    pub u0: GridFunction,
    pub converged: bool,
    /// `(c_k, ‖u_{c_k} − u_{c_{k−1}}‖_∞)` along the ladder (`NaN` at the first rung).
    pub trend: Vec<(f64, f64)>,
    pub last_c: f64,
}

/// Follows `u_c` down a decreasing ladder of `c`, warm-starting each solve, and stops
/// once consecutive solutions differ by at most `outer_tol`.
pub fn select_u0(
    model: &HamiltonianModel,
    grid: PeriodicGrid,
    ladder: &[f64],
    outer_tol: f64,
    cfg: &SchemeConfig,
) -> Result<U0Selection> {
    prototype_parts(model)?;
    if ladder.is_empty() || ladder.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::config(
            "the c-ladder must be a nonempty list of positive values",
        ));
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::config("the c-ladder must be strictly decreasing"));
    }
    let mut prev: Option<GridFunction> = None;
    let mut trend = Vec::new();
    for &c in ladder {
        let sol = solve_prototype_positive(model, grid, c, prev.as_ref(), cfg)?;
        let diff = match &prev {
            Some(p) => sol.u.linf_distance(p)?,
            None => f64::NAN,
        };
        trend.push((c, diff));
        if diff <= outer_tol {
            return Ok(U0Selection {
                u0: sol.u,
                converged: true,
                trend,
                last_c: c,
            });
        }
        prev = Some(sol.u);
    }
    Ok(U0Selection {
        u0: prev.expect("nonempty ladder"),
        converged: false,
        trend,
        last_c: *ladder.last().expect("nonempty ladder"),
    })
}

/// Nodes with `V ≤ tol`.
pub fn m_v_set(v: &GridFunction, tol: f64) -> Result<NodeMask> {
    if !(tol >= 0.0) {
        return Err(Error::config(format!(
            "M_V tolerance must be nonnegative, got {tol}"
        )));
    }
    let min = v.min();
    if min.abs() > crate::hamiltonians::MIN_V_TOL {
        return Err(Error::config(format!(
            "potential must satisfy min V = 0 (found {min:.3e})"
        )));
    }
    let mask = NodeMask::from_predicate(*v.grid(), |i| v.values()[i] <= tol);
    if mask.is_empty() {
        return Err(Error::config("M_V mask is empty at this tolerance"));
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetComparison {
    pub max_diff_on_set: f64,
    pub max_diff_global: f64,
    pub agree_on_set: bool,
    pub agree_globally: bool,
}

pub fn compare_on_set(
    u1: &GridFunction,
    u2: &GridFunction,
    mask: &NodeMask,
    tol: f64,
) -> Result<SetComparison> {
    u1.check_same_grid(u2)?;
    if mask.grid() != u1.grid() {
        return Err(Error::config("mask and grid functions differ in grid"));
    }
    let d: Vec<f64> = u1
        .values()
        .iter()
        .zip(u2.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let on_set = mask.indices().map(|i| d[i]).fold(0.0, f64::max);
    let global = d.iter().copied().fold(0.0, f64::max);
    Ok(SetComparison {
        max_diff_on_set: on_set,
        max_diff_global: global,
        agree_on_set: on_set <= tol,
        agree_globally: global <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{ContactNonlinearity, Potential};

    fn cosine() -> Potential {
        Potential::expr("1 - cos(2*pi*x)").unwrap()
    }

    #[test]
    fn g_map_quadratic_zero() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let m = HamiltonianModel::classical(1, 2.0, Potential::Zero).unwrap();
        let out = g_map(&m, &GridFunction::zeros(g), &GMapConfig::default()).unwrap();
        assert_eq!(out.w.linf_norm(), 0.0);
        assert_eq!(out.c_est, 0.0);
    }

    #[test]
    fn g_map_normalizes() {
        let g = PeriodicGrid::new(1, 128).unwrap();
        let m = HamiltonianModel::strict_monotone_test(1, cosine()).unwrap();
        let u = GridFunction::from_fn(g, |x| 0.3 * (6.0 * x[0]).sin().abs());
        let out = g_map(&m, &u, &GMapConfig::default()).unwrap();
        assert_eq!(out.w.min(), 0.0);
    }

    #[test]
    fn classical_fixed_point_is_immediate() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let m = HamiltonianModel::classical(1, 2.0, Potential::Zero).unwrap();
        let s = fixed_point_ergodic(&m, &GridFunction::zeros(g), &GMapConfig::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.iterations, 1);
        assert_eq!(s.c, 0.0);
    }

    #[test]
    fn k_bound_examples() {
        let m = HamiltonianModel::strict_monotone_test(1, Potential::Zero).unwrap();
        let k = k_bound(&m, 2.0).unwrap();
        assert_eq!(k.alpha, 12.0);
        assert_eq!(k.bound, 24.0);
        let eik = HamiltonianModel::eikonal_contact(
            1,
            Potential::Zero,
            ContactNonlinearity::PiecewiseLinear,
        )
        .unwrap();
        assert!(k_bound(&eik, 2.0).is_err());
        let quart = HamiltonianModel::classical(1, 4.0, Potential::Zero).unwrap();
        let quad = HamiltonianModel::classical(1, 2.0, Potential::Zero).unwrap();
        assert!(k_bound(&quart, 2.0).unwrap().alpha <= k_bound(&quad, 2.0).unwrap().alpha);
    }

    #[test]
    fn positive_constant_solution() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let m =
            HamiltonianModel::prototype(1, 2.0, Potential::Zero, ContactNonlinearity::CubicPlus)
                .unwrap();
        let s = solve_prototype_positive(&m, g, 8.0, None, &SchemeConfig::default()).unwrap();
        for v in s.u.values() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        assert!(matches!(
            solve_prototype_positive(&m, g, 0.0, None, &SchemeConfig::default()),
            Err(Error::Config(msg)) if msg.contains("select_u0")
        ));
    }

    #[test]
    fn positive_solution_bounds_and_ordering() {
        let g = PeriodicGrid::new(1, 256).unwrap();
        let m =
            HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::CubicPlus).unwrap();
        let cfg = SchemeConfig::default();
        let v = cosine().sample(g);
        let mut prev: Option<GridFunction> = None;
        for c in [0.1, 0.5] {
            let s = solve_prototype_positive(&m, g, c, None, &cfg).unwrap();
            let floor = c.cbrt();
            for (i, u) in s.u.values().iter().enumerate() {
                assert!(*u >= floor - 1e-6);
                assert!(u.powi(3) <= v.values()[i] + c + 5e-3);
            }
            if let Some(p) = &prev {
                assert!(p
                    .values()
                    .iter()
                    .zip(s.u.values())
                    .all(|(a, b)| *a <= b + 1e-9));
            }
            prev = Some(s.u);
        }
    }

    #[test]
    fn select_u0_limits() {
        let g = PeriodicGrid::new(1, 128).unwrap();
        let cfg = SchemeConfig::default();
        let flat =
            HamiltonianModel::prototype(1, 2.0, Potential::Zero, ContactNonlinearity::CubicPlus)
                .unwrap();
        let s = select_u0(&flat, g, &default_c_ladder(), 1e-4, &cfg).unwrap();
        assert!(s.converged && s.u0.linf_norm() < 1e-3);

        let m =
            HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::CubicPlus).unwrap();
        let s = select_u0(&m, g, &default_c_ladder(), 1e-4, &cfg).unwrap();
        assert!(s.converged);
        assert!(s.u0.values()[0] <= 1e-3);
        assert!(s.u0.min() >= -1e-6);

        let short = select_u0(&m, g, &[0.5], 1e-4, &cfg).unwrap();
        assert!(!short.converged);
        assert!(select_u0(&m, g, &[0.1, 0.2], 1e-4, &cfg).is_err());
    }

    #[test]
    fn m_v_examples() {
        let g = PeriodicGrid::new(1, 256).unwrap();
        let mask = m_v_set(&cosine().sample(g), 1e-8).unwrap();
        assert_eq!(mask.indices().collect::<Vec<_>>(), vec![0]);
        assert_eq!(m_v_set(&GridFunction::zeros(g), 1e-8).unwrap().count(), 256);
        assert!(m_v_set(&GridFunction::zeros(g), -1.0).is_err());
    }

    #[test]
    fn compare_examples() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let mask = NodeMask::from_predicate(g, |i| i < 8);
        let u = GridFunction::from_fn(g, |x| x[0]);
        let same = compare_on_set(&u, &u, &mask, 1e-12).unwrap();
        assert!(same.agree_on_set && same.agree_globally && same.max_diff_global == 0.0);
        let bumped = GridFunction::from_fn(g, |x| x[0] + if x[0] > 0.5 { 1e-3 } else { 0.0 });
        let c = compare_on_set(&u, &bumped, &mask, 1e-6).unwrap();
        assert!(c.agree_on_set && !c.agree_globally);
    }
}
