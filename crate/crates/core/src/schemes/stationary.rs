use crate::error::{Error, Result};
use crate::grid::{GridFunction, PeriodicGrid};
use crate::hamiltonians::Hamiltonian;

use super::{
    check_model_dim, derivative_bound, estimate_viscosity, from_bound, hat_value, map_nodes,
    node_state, solve_cyclic_tridiagonal, transport_row, Flux, SchemeConfig, Viscosity,
    ViscosityField,
};

/// Where the `r` argument of `H` comes from.
#[derive(Debug, Clone, Copy)]
pub enum RArg<'a> {
    /// A fixed field, as in the frozen problem `λv + H(x, u, Dv) = λu`.
    Frozen(&'a GridFunction),
    /// The unknown itself, as in `H(x, v, Dv) = c`.
    Unknown,
}

/// The discrete equation `λ v_i + Ĥ(x_i, r_i, Dv) − rhs_i = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitProblem<'a> {
    pub lambda: f64,
    pub r: RArg<'a>,
    pub rhs: &'a GridFunction,
}

#[derive(Debug, Clone)]
pub struct StationaryReport {
    pub v: GridFunction,
    /// Final `‖λv + Ĥ − rhs‖_∞`.
    pub residual: f64,
    pub iterations: usize,
    pub reestimates: usize,
    /// `"newton"` or `"explicit"`.
    pub method: &'static str,
    pub theta: ViscosityField,
}

const MAX_NEWTON: usize = 400;

impl<'a> ImplicitProblem<'a> {
    fn r_field<'b>(&self, v: &'b GridFunction) -> &'b GridFunction
    where
        'a: 'b,
    {
        match self.r {
            RArg::Frozen(f) => f,
            RArg::Unknown => v,
        }
    }

    #[inline]
    fn r_at(&self, v: &[f64], i: usize) -> f64 {
        match self.r {
            RArg::Frozen(f) => f.values()[i],
            RArg::Unknown => v[i],
        }
    }

    fn residual<H: Hamiltonian + ?Sized>(
        &self,
        model: &H,
        v: &[f64],
        theta: &ViscosityField,
        flux: Flux,
    ) -> Vec<f64> {
        let grid = *self.rhs.grid();
        let rhs = self.rhs.values();
        map_nodes(grid.len(), |i| {
            let r = self.r_at(v, i);
            let st = node_state(model, &grid, v, r, i, flux);
            self.lambda * v[i] + hat_value(model, &st, r, theta, i, flux) - rhs[i]
        })
    }
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `λ v + Ĥ(x, r, Dv) = rhs` from `init`: pseudo-transient Newton with a
/// periodic tridiagonal solve in 1D, node-wise explicit pseudo-time marching in 2D
/// (and as the 1D fallback). The viscosity field is enlarged and the solve repeated
/// when the solution's gradients exceed it.
pub fn solve_implicit<H: Hamiltonian + ?Sized>(
    model: &H,
    problem: ImplicitProblem<'_>,
    init: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<StationaryReport> {
    cfg.validate()?;
    init.check_same_grid(problem.rhs)?;
    if let RArg::Frozen(f) = problem.r {
        init.check_same_grid(f)?;
    }
    let grid = *init.grid();
    check_model_dim(model, &grid)?;
    if !(problem.lambda >= 0.0) {
        return Err(Error::config("λ must be nonnegative"));
    }
    let flux = cfg.flux.resolve(model)?;
    let mut theta = estimate_viscosity(model, init, problem.r_field(init), cfg)?;
    let mut v = init.values().to_vec();
    let mut total = 0;
    let mut reestimates = 0;
    loop {
        let (next, iters, method) = solve_fixed(model, &problem, &grid, v, &mut theta, flux, cfg)?;
        total += iters;
        v = next;
        let vf = GridFunction::from_vec(grid, v.clone());
        if !matches!(cfg.viscosity, Viscosity::Fixed(_)) && reestimates < cfg.max_reestimates {
            let need = derivative_bound(model, &vf, problem.r_field(&vf), cfg)?;
            if theta.excess(&need) > 1e-12 {
                reestimates += 1;
                theta = theta.max_with(&from_bound(need, cfg))?;
                continue;
            }
        }
        let residual = linf(&problem.residual(model, &v, &theta, flux));
        return Ok(StationaryReport {
            v: vf,
            residual,
            iterations: total,
            reestimates,
            method,
            theta,
        });
    }
}

fn solve_fixed<H: Hamiltonian + ?Sized>(
    model: &H,
    problem: &ImplicitProblem<'_>,
    grid: &PeriodicGrid,
    v: Vec<f64>,
    theta: &mut ViscosityField,
    flux: Flux,
    cfg: &SchemeConfig,
) -> Result<(Vec<f64>, usize, &'static str)> {
    let mut v = v;
    let mut spent = 0;
    if grid.dim() == 1 {
        if let Some((out, iters)) = plain_newton_1d(model, problem, grid, &v, theta, flux, cfg)? {
            return Ok((out, iters, "newton"));
        }
        let (out, iters, ok) = newton_1d(model, problem, grid, v, theta, flux, cfg)?;
        if ok {
            return Ok((out, iters, "newton"));
        }
        v = out;
        spent = iters;
    }
    let (out, iters) = explicit_march(model, problem, grid, v, theta, flux, cfg)?;
    Ok((out, spent + iters, "explicit"))
}

/// Tridiagonal Jacobian rows of the residual at `v`, with `shift` added to the diagonal.
#[allow(clippy::too_many_arguments)]
fn jacobian_1d<H: Hamiltonian + ?Sized>(
    model: &H,
    problem: &ImplicitProblem<'_>,
    grid: &PeriodicGrid,
    v: &[f64],
    theta: &ViscosityField,
    flux: Flux,
    shift: f64,
    rows: &mut (Vec<f64>, Vec<f64>, Vec<f64>),
) {
    let h = grid.spacing();
    for i in 0..grid.len() {
        let r = problem.r_at(v, i);
        let st = node_state(model, grid, v, r, i, flux);
        let (centre, plus, minus) = transport_row(
            model.d_p(st.x, r, st.p),
            st.side,
            [theta.at(i, 0), 0.0],
            h,
            1,
            flux,
        );
        let h_r = match problem.r {
            RArg::Frozen(_) => 0.0,
            RArg::Unknown => model.d_r(st.x, r, st.p),
        };
        rows.0[i] = minus[0];
        rows.1[i] = shift + problem.lambda + h_r + centre;
        rows.2[i] = plus[0];
    }
}

/// Undamped Newton steps. For a scheme convex and monotone in `v` this is policy
/// iteration and converges from any start, though information may travel only one
/// node per step. `None` hands over to the continuation.
fn plain_newton_1d<H: Hamiltonian + ?Sized>(
    model: &H,
    problem: &ImplicitProblem<'_>,
    grid: &PeriodicGrid,
    v0: &[f64],
    theta: &mut ViscosityField,
    flux: Flux,
    cfg: &SchemeConfig,
) -> Result<Option<(Vec<f64>, usize)>> {
    let n = grid.len();
    let mut v = v0.to_vec();
    let mut rows = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut f = problem.residual(model, &v, theta, flux);
    for it in 0..2 * n + 20 {
        let fnorm = linf(&f);
        if !fnorm.is_finite() {
            return Ok(None);
        }
        if fnorm <= cfg.steady_tol {
            return Ok(Some((v, it)));
        }
        jacobian_1d(model, problem, grid, &v, theta, flux, 0.0, &mut rows);
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        let Ok(step) = solve_cyclic_tridiagonal(&rows.0, &rows.1, &rows.2, &neg) else {
            return Ok(None);
        };
        for (a, d) in v.iter_mut().zip(&step) {
            *a += d;
        }
        grow_theta(model, problem, grid, &v, theta, cfg)?;
        f = problem.residual(model, &v, theta, flux);
    }
    Ok(None)
}

fn newton_1d<H: Hamiltonian + ?Sized>(
    model: &H,
    problem: &ImplicitProblem<'_>,
    grid: &PeriodicGrid,
    mut v: Vec<f64>,
    theta: &mut ViscosityField,
    flux: Flux,
    cfg: &SchemeConfig,
) -> Result<(Vec<f64>, usize, bool)> {
    let tol = cfg.steady_tol;
    let n = grid.len();
    let mut f = problem.residual(model, &v, theta, flux);
    let mut fnorm = linf(&f);
    let mut tau = 1.0;
    let mut rows = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for it in 0..MAX_NEWTON {
        if fnorm <= tol {
            return Ok((v, it, true));
        }
        jacobian_1d(model, problem, grid, &v, theta, flux, 1.0 / tau, &mut rows);
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        let step = match solve_cyclic_tridiagonal(&rows.0, &rows.1, &rows.2, &neg) {
            Ok(s) => s,
            Err(_) => {
                tau *= 0.25;
                continue;
            }
        };
        let trial: Vec<f64> = v.iter().zip(&step).map(|(a, d)| a + d).collect();
        let ft = problem.residual(model, &trial, theta, flux);
        let tnorm = linf(&ft);
        if tnorm.is_finite() && tnorm < fnorm {
            tau = (tau * (fnorm / tnorm).min(1e3)).min(1e15);
            v = trial;
            if grow_theta(model, problem, grid, &v, theta, cfg)? {
                f = problem.residual(model, &v, theta, flux);
                fnorm = linf(&f);
            } else {
                f = ft;
                fnorm = tnorm;
            }
        } else {
            tau *= 0.25;
            if tau < 1e-14 {
                return Ok((v, it + 1, false));
            }
        }
    }
    Ok((v, MAX_NEWTON, fnorm <= tol))
}

fn explicit_march<H: Hamiltonian + ?Sized>(
    model: &H,
    problem: &ImplicitProblem<'_>,
    grid: &PeriodicGrid,
    mut v: Vec<f64>,
    theta: &mut ViscosityField,
    flux: Flux,
    cfg: &SchemeConfig,
) -> Result<(Vec<f64>, usize)> {
    let h = grid.spacing();
    let rates = |theta: &ViscosityField| -> Vec<f64> {
        (0..grid.len())
            .map(|i| problem.lambda + (0..grid.dim()).map(|a| theta.at(i, a)).sum::<f64>() / h)
            .collect()
    };
    grow_theta(model, problem, grid, &v, theta, cfg)?;
    let mut base = rates(theta);
    let mut last = f64::INFINITY;
    for it in 0..cfg.max_steps {
        if it > 0 && grow_theta(model, problem, grid, &v, theta, cfg)? {
            base = rates(theta);
        }
        let f = problem.residual(model, &v, theta, flux);
        last = linf(&f);
        if !last.is_finite() {
            return Err(Error::Divergence {
                what: "stationary pseudo-time march".into(),
                step: it,
            });
        }
        if last <= cfg.steady_tol {
            return Ok((v, it));
        }
        let h_r: Vec<f64> = match problem.r {
            RArg::Frozen(_) => vec![0.0; grid.len()],
            RArg::Unknown => map_nodes(grid.len(), |i| {
                let st = node_state(model, grid, &v, v[i], i, flux);
                model.d_r(st.x, v[i], st.p).max(0.0)
            }),
        };
        for i in 0..grid.len() {
            let rate = base[i] + h_r[i];
            if rate > 0.0 {
                v[i] -= cfg.cfl * f[i] / rate;
            }
        }
    }
    Err(Error::NonConvergence {
        what: "stationary pseudo-time march".into(),
        iterations: cfg.max_steps,
        residual: last,
    })
}

/// Enlarges `theta` where the box bound at `v` exceeds it; returns whether it changed.
fn grow_theta<H: Hamiltonian + ?Sized>(
    model: &H,
    problem: &ImplicitProblem<'_>,
    grid: &PeriodicGrid,
    v: &[f64],
    theta: &mut ViscosityField,
    cfg: &SchemeConfig,
) -> Result<bool> {
    if matches!(cfg.viscosity, Viscosity::Fixed(_)) {
        return Ok(false);
    }
    let vf = GridFunction::from_vec(*grid, v.to_vec());
    let need = derivative_bound(model, &vf, problem.r_field(&vf), cfg)?;
    if theta.excess(&need) > 1e-12 {
        *theta = theta.max_with(&from_bound(need, cfg))?;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Solves the frozen problem `λ v + H(x, u, Dv) − λ u = 0` with `u` fixed, starting
/// from `u`. Requires `λ > C₁ + 1`.
pub fn solve_stationary<H: Hamiltonian + ?Sized>(
    model: &H,
    frozen_u: &GridFunction,
    lambda: f64,
    cfg: &SchemeConfig,
) -> Result<StationaryReport> {
    let c1 = model.meta().lipschitz_r;
    if !(lambda > c1 + 1.0) || !lambda.is_finite() {
        return Err(Error::config(format!(
            "λ = {lambda} must exceed C₁ + 1 = {}",
            c1 + 1.0
        )));
    }
    let rhs = frozen_u.map(|x| lambda * x);
    let problem = ImplicitProblem {
        lambda,
        r: RArg::Frozen(frozen_u),
        rhs: &rhs,
    };
    let report = solve_implicit(model, problem, frozen_u, cfg)?;
    if report.residual > cfg.steady_tol {
        return Err(Error::NonConvergence {
            what: "stationary solve".into(),
            iterations: report.iterations,
            residual: report.residual,
        });
    }
    Ok(report)
}
