//! Monotone discretizations of `H(x, r, Du)`, explicit viscous time stepping,
//! stationary solvers, and residual certificates.
//!
//! Two fluxes are available. Lax–Friedrichs works for any Hamiltonian and carries a
//! per-node, per-axis artificial viscosity `θ`. The upwind flux applies to Hamiltonians
//! radial in `p` and needs no viscosity; there `θ` only bounds the transport speed
//! `|∂H/∂p_a|` for the time-step restriction. Every solve freezes `θ` before iterating
//! and checks afterwards that it dominates the speeds of the states actually visited.

mod stationary;
mod stencil;
mod viscous;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, NodeMask, PeriodicGrid};
use crate::hamiltonians::Hamiltonian;

pub use stationary::{solve_implicit, solve_stationary, ImplicitProblem, RArg, StationaryReport};
pub use stencil::{solve_cyclic_tridiagonal, StencilOperator};
pub use viscous::{
    solve_viscous, solve_viscous_pair, solve_viscous_with, step_viscous, step_viscous_with,
    StepCoefficients, ViscousTrajectory,
};

/// Node count above which node loops run on the rayon pool.
pub(crate) const PAR_THRESHOLD: usize = 4096;

/// How the artificial viscosity field is chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Viscosity {
    /// `margin · |∂H/∂p_a|` at the node's own state `(x_i, r_i, central Dv)`: the least
    /// viscosity keeping the linearized scheme monotone.
    Local,
    /// `margin · max |∂H/∂p_a|` over the difference box at each node and its neighbours.
    LocalBox,
    /// The per-axis maximum of the local estimate, used uniformly.
    Global,
    /// A fixed per-axis value.
    Fixed(Vec<f64>),
}

/// Numerical flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flux {
    /// Upwind when the model is radial in `p`, Lax–Friedrichs otherwise.
    Auto,
    /// `H(x, r, (p⁺+p⁻)/2) − Σ_a θ_a (p⁺_a − p⁻_a)/2`.
    LaxFriedrichs,
    /// `H(x, r, p* + m)` where, with `q^± = p^± − p*`, each `m_a` is `q⁻_a` if positive
    /// or `q⁺_a` if negative (the larger in magnitude when both apply), else 0.
    Upwind,
}

impl Flux {
    /// Replaces `Auto` by the concrete flux for `model`.
    pub fn resolve<H: Hamiltonian + ?Sized>(self, model: &H) -> Result<Flux> {
        let radial = model.radial_center([0.0; 2], 0.0).is_some();
        match self {
            Flux::Auto if radial => Ok(Flux::Upwind),
            Flux::Auto => Ok(Flux::LaxFriedrichs),
            Flux::Upwind if !radial => Err(Error::config(
                "the upwind flux needs a Hamiltonian radial in p",
            )),
            f => Ok(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub flux: Flux,
    pub viscosity: Viscosity,
    /// Safety factor applied to estimated derivative bounds.
    pub margin: f64,
    /// Added to every estimated viscosity entry.
    pub floor: f64,
    pub cfl: f64,
    pub max_steps: usize,
    pub steady_tol: f64,
    /// Times `θ` may be enlarged and a solve repeated after a post-hoc bound violation.
    pub max_reestimates: usize,
    /// Mollify the initial datum of viscous runs with radius `ε⁴` when `ε⁴ ≥ h`.
    pub mollify_initial: bool,
    /// Store every `k`-th state of viscous runs on the tape (0 chooses automatically).
    pub checkpoint_every: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            flux: Flux::Auto,
            viscosity: Viscosity::Local,
            margin: 1.25,
            floor: 0.0,
            cfl: 0.9,
            max_steps: 500_000,
            steady_tol: 1e-9,
            max_reestimates: 4,
            mollify_initial: true,
            checkpoint_every: 0,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::config(format!(
                "cfl must lie in (0, 1], got {}",
                self.cfl
            )));
        }
        if !(self.margin >= 1.0) || !self.margin.is_finite() {
            return Err(Error::config("viscosity margin must be at least 1"));
        }
        if !(self.floor >= 0.0) || !self.floor.is_finite() {
            return Err(Error::config("viscosity floor must be nonnegative"));
        }
        if !(self.steady_tol > 0.0) {
            return Err(Error::config("steady_tol must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        if let Viscosity::Fixed(t) = &self.viscosity {
            if t.is_empty() || t.len() > 2 || t.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::config(
                    "fixed viscosity needs one nonnegative value per axis",
                ));
            }
        }
        Ok(())
    }
}

impl SchemeConfig {
    /// Whether derivative bounds are taken over difference boxes and neighbours.
    pub(crate) fn uses_box(&self, flux: Flux) -> bool {
        flux == Flux::LaxFriedrichs && !matches!(self.viscosity, Viscosity::Local)
    }
}

/// Per-node, per-axis artificial viscosity.
#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityField {
    grid: PeriodicGrid,
    theta: [Vec<f64>; 2],
}

impl ViscosityField {
    pub fn uniform(grid: PeriodicGrid, per_axis: &[f64]) -> Result<Self> {
        if per_axis.len() != grid.dim() && per_axis.len() != 1 {
            return Err(Error::config(format!(
                "expected {} viscosity values, got {}",
                grid.dim(),
                per_axis.len()
            )));
        }
        let mut theta = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
        for (a, t) in theta.iter_mut().enumerate().take(grid.dim()) {
            let v = per_axis[a.min(per_axis.len() - 1)];
            t.iter_mut().for_each(|x| *x = v);
        }
        Ok(ViscosityField { grid, theta })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    #[inline]
    pub fn at(&self, idx: usize, axis: usize) -> f64 {
        self.theta[axis][idx]
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.theta[axis]
    }

    pub fn max_per_axis(&self) -> [f64; 2] {
        let m = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        [m(&self.theta[0]), m(&self.theta[1])]
    }

    /// `max_i Σ_a θ_{a,i}`.
    pub fn max_sum(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.theta[0][i] + self.theta[1][i])
            .fold(0.0, f64::max)
    }

    /// Elementwise maximum.
    pub fn max_with(&self, other: &ViscosityField) -> Result<ViscosityField> {
        if self.grid != other.grid {
            return Err(Error::config("viscosity fields live on different grids"));
        }
        let mut out = self.clone();
        for a in 0..2 {
            for (x, y) in out.theta[a].iter_mut().zip(&other.theta[a]) {
                *x = x.max(*y);
            }
        }
        Ok(out)
    }

    /// Largest `need − θ` over nodes and axes (positive means the bound is violated).
    pub fn excess(&self, need: &ViscosityField) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for a in 0..self.grid.dim() {
            for (t, n) in self.theta[a].iter().zip(&need.theta[a]) {
                worst = worst.max(n - t);
            }
        }
        worst
    }

    fn scaled(mut self, margin: f64, floor: f64) -> Self {
        for a in 0..self.grid.dim() {
            self.theta[a]
                .iter_mut()
                .for_each(|t| *t = margin * *t + floor);
        }
        self
    }

    fn globalized(mut self) -> Self {
        let m = self.max_per_axis();
        for a in 0..self.grid.dim() {
            self.theta[a].iter_mut().for_each(|t| *t = m[a]);
        }
        self
    }

    /// Each entry replaced by the maximum over the node and its axis neighbours.
    pub(crate) fn spread(&self) -> Self {
        let g = self.grid;
        let mut out = self.clone();
        for a in 0..g.dim() {
            for (i, o) in out.theta[a].iter_mut().enumerate() {
                let mut m = self.theta[a][i];
                for b in 0..g.dim() {
                    m = m
                        .max(self.theta[a][g.shift(i, b, 1)])
                        .max(self.theta[a][g.shift(i, b, -1)]);
                }
                *o = m;
            }
        }
        out
    }
}

/// Forward and backward differences of `v` at node `i`.
#[inline]
pub(crate) fn one_sided(grid: &PeriodicGrid, v: &[f64], i: usize) -> ([f64; 2], [f64; 2]) {
    let h = grid.spacing();
    let mut pf = [0.0; 2];
    let mut pb = [0.0; 2];
    for a in 0..grid.dim() {
        pf[a] = (v[grid.shift(i, a, 1)] - v[i]) / h;
        pb[a] = (v[i] - v[grid.shift(i, a, -1)]) / h;
    }
    (pf, pb)
}

/// `max |∂H/∂p_a|` over the corners of the box spanned by `pf` and `pb`.
#[inline]
pub(crate) fn corner_bound<H: Hamiltonian + ?Sized>(
    model: &H,
    x: [f64; 2],
    r: f64,
    pf: [f64; 2],
    pb: [f64; 2],
    dim: usize,
) -> [f64; 2] {
    let mut need = [0.0f64; 2];
    let corners1 = [pf[0], pb[0]];
    let corners2 = if dim == 2 { [pf[1], pb[1]] } else { [0.0, 0.0] };
    let n2 = if dim == 2 { 2 } else { 1 };
    for &p0 in &corners1 {
        for &p1 in &corners2[..n2] {
            let d = model.d_p(x, r, [p0, p1]);
            need[0] = need[0].max(d[0].abs());
            need[1] = need[1].max(d[1].abs());
        }
    }
    let d = model.d_p(x, r, [(pf[0] + pb[0]) / 2.0, (pf[1] + pb[1]) / 2.0]);
    need[0] = need[0].max(d[0].abs());
    if dim == 2 {
        need[1] = need[1].max(d[1].abs());
    } else {
        need[1] = 0.0;
    }
    need
}

/// Where the flux evaluates `H` at one node, and which neighbour each axis uses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeState {
    pub x: [f64; 2],
    pub p: [f64; 2],
    /// `p⁺ − p⁻` per axis.
    pub jump: [f64; 2],
    /// Upwind side per axis: −1 backward, +1 forward, 0 none (always 0 for Lax–Friedrichs).
    pub side: [i8; 2],
}

#[inline]
pub(crate) fn node_state<H: Hamiltonian + ?Sized>(
    model: &H,
    grid: &PeriodicGrid,
    v: &[f64],
    r: f64,
    i: usize,
    flux: Flux,
) -> NodeState {
    let (pf, pb) = one_sided(grid, v, i);
    let x = grid.point(i);
    let jump = [pf[0] - pb[0], pf[1] - pb[1]];
    if flux != Flux::Upwind {
        let p = [(pf[0] + pb[0]) / 2.0, (pf[1] + pb[1]) / 2.0];
        return NodeState {
            x,
            p,
            jump,
            side: [0; 2],
        };
    }
    let centre = model.radial_center(x, r).unwrap_or([0.0; 2]);
    let mut p = centre;
    let mut side = [0i8; 2];
    for a in 0..grid.dim() {
        let (qf, qb) = (pf[a] - centre[a], pb[a] - centre[a]);
        if qb > 0.0 && (qf >= 0.0 || qb >= -qf) {
            p[a] = pb[a];
            side[a] = -1;
        } else if qf < 0.0 {
            p[a] = pf[a];
            side[a] = 1;
        }
    }
    NodeState { x, p, jump, side }
}

/// `Ĥ_i` from a node state and frozen field.
#[inline]
pub(crate) fn hat_value<H: Hamiltonian + ?Sized>(
    model: &H,
    st: &NodeState,
    r: f64,
    theta: &ViscosityField,
    i: usize,
    flux: Flux,
) -> f64 {
    let mut out = model.eval(st.x, r, st.p);
    if flux != Flux::Upwind {
        for a in 0..theta.grid.dim() {
            out -= theta.at(i, a) * st.jump[a] / 2.0;
        }
    }
    out
}

/// Derivative of `Ĥ_i` in the neighbouring values, given `D_pH` at the node state:
/// returns the coefficients of `v_i`, `v_{i+e_a}` and `v_{i−e_a}`.
#[inline]
pub(crate) fn transport_row(
    d_p: [f64; 2],
    side: [i8; 2],
    theta: [f64; 2],
    h: f64,
    dim: usize,
    flux: Flux,
) -> (f64, [f64; 2], [f64; 2]) {
    let mut centre = 0.0;
    let (mut plus, mut minus) = ([0.0; 2], [0.0; 2]);
    for a in 0..dim {
        let b = d_p[a];
        if flux == Flux::Upwind {
            match side[a] {
                -1 => {
                    centre += b / h;
                    minus[a] = -b / h;
                }
                1 => {
                    centre -= b / h;
                    plus[a] = b / h;
                }
                _ => {}
            }
        } else {
            centre += theta[a] / h;
            plus[a] = (b - theta[a]) / (2.0 * h);
            minus[a] = (-b - theta[a]) / (2.0 * h);
        }
    }
    (centre, plus, minus)
}

/// Speed bound required at one node: `|∂H/∂p_a|` at the node state, or over the
/// difference box for the box estimators of Lax–Friedrichs.
#[inline]
pub(crate) fn node_need<H: Hamiltonian + ?Sized>(
    model: &H,
    grid: &PeriodicGrid,
    v: &[f64],
    r: f64,
    i: usize,
    flux: Flux,
    use_box: bool,
) -> [f64; 2] {
    if use_box && flux != Flux::Upwind {
        let (pf, pb) = one_sided(grid, v, i);
        return corner_bound(model, grid.point(i), r, pf, pb, grid.dim());
    }
    let st = node_state(model, grid, v, r, i, flux);
    let d = model.d_p(st.x, r, st.p);
    [d[0].abs(), if grid.dim() == 2 { d[1].abs() } else { 0.0 }]
}

pub(crate) fn map_nodes<T: Send>(len: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if len >= PAR_THRESHOLD {
        (0..len).into_par_iter().map(f).collect()
    } else {
        (0..len).map(f).collect()
    }
}

/// The field `θ` must dominate at the state `(v, r)` (margin 1, no floor): node-wise
/// `|∂H/∂p_a|` at the node state for [`Viscosity::Local`] or the upwind flux, the box
/// bound spread over axis neighbours for the other Lax–Friedrichs estimators.
pub fn derivative_bound<H: Hamiltonian + ?Sized>(
    model: &H,
    v: &GridFunction,
    r: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<ViscosityField> {
    v.check_same_grid(r)?;
    let grid = *v.grid();
    check_model_dim(model, &grid)?;
    let flux = cfg.flux.resolve(model)?;
    let use_box = cfg.uses_box(flux);
    let (vv, rv) = (v.values(), r.values());
    let need = map_nodes(grid.len(), |i| {
        node_need(model, &grid, vv, rv[i], i, flux, use_box)
    });
    let mut theta = [vec![0.0; grid.len()], vec![0.0; grid.len()]];
    for (i, n) in need.into_iter().enumerate() {
        theta[0][i] = n[0];
        theta[1][i] = n[1];
    }
    let field = ViscosityField { grid, theta };
    Ok(if use_box { field.spread() } else { field })
}

/// Builds the viscosity field requested by `cfg` from the state `(v, r)`.
pub fn estimate_viscosity<H: Hamiltonian + ?Sized>(
    model: &H,
    v: &GridFunction,
    r: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<ViscosityField> {
    cfg.validate()?;
    if let Viscosity::Fixed(t) = &cfg.viscosity {
        return ViscosityField::uniform(*v.grid(), t);
    }
    let raw = derivative_bound(model, v, r, cfg)?;
    Ok(from_bound(raw, cfg))
}

/// Applies margin, floor and the global/local choice of `cfg` to a required field.
pub(crate) fn from_bound(raw: ViscosityField, cfg: &SchemeConfig) -> ViscosityField {
    let field = raw.scaled(cfg.margin, cfg.floor);
    match cfg.viscosity {
        Viscosity::Global => field.globalized(),
        _ => field,
    }
}

pub(crate) fn check_model_dim<H: Hamiltonian + ?Sized>(
    model: &H,
    grid: &PeriodicGrid,
) -> Result<()> {
    if model.meta().dim != grid.dim() {
        return Err(Error::config(format!(
            "model is {}-dimensional but the grid is {}-dimensional",
            model.meta().dim,
            grid.dim()
        )));
    }
    Ok(())
}

/// `Ĥ_i` at one node with a frozen viscosity field.
#[inline]
pub(crate) fn hat_node<H: Hamiltonian + ?Sized>(
    model: &H,
    grid: &PeriodicGrid,
    u: &[f64],
    r: f64,
    theta: &ViscosityField,
    i: usize,
    flux: Flux,
) -> f64 {
    let st = node_state(model, grid, u, r, i, flux);
    hat_value(model, &st, r, theta, i, flux)
}

/// `Ĥ(x, r, Du)` with an explicit viscosity field and a concrete flux (`Auto` is
/// resolved against `model`).
pub fn numerical_hamiltonian_with<H: Hamiltonian + ?Sized>(
    model: &H,
    u: &GridFunction,
    r_field: &GridFunction,
    theta: &ViscosityField,
    flux: Flux,
) -> Result<GridFunction> {
    u.check_same_grid(r_field)?;
    let grid = *u.grid();
    check_model_dim(model, &grid)?;
    if theta.grid != grid {
        return Err(Error::config(
            "viscosity field and grid function differ in grid",
        ));
    }
    let flux = flux.resolve(model)?;
    let (uv, rv) = (u.values(), r_field.values());
    let out = map_nodes(grid.len(), |i| {
        hat_node(model, &grid, uv, rv[i], theta, i, flux)
    });
    GridFunction::new(grid, out)
}

/// The numerical Hamiltonian `Ĥ(x, r, Du)` with the flux of `cfg`. For Lax–Friedrichs
/// `Ĥ_i = H(x_i, r_i, (p⁺+p⁻)/2) − Σ_a θ_{a,i} (p⁺_a − p⁻_a)/2`,
/// with `θ` estimated from `(u, r_field)` according to `cfg`.
pub fn numerical_hamiltonian<H: Hamiltonian + ?Sized>(
    model: &H,
    u: &GridFunction,
    r_field: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<GridFunction> {
    u.check_same_grid(r_field)?;
    let theta = estimate_viscosity(model, u, r_field, cfg)?;
    numerical_hamiltonian_with(model, u, r_field, &theta, cfg.flux)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub linf: f64,
    pub signed_min: f64,
    pub per_node: GridFunction,
}

/// Residual `Ĥ(x, u, Du) − c` of the stationary equation.
pub fn residual<H: Hamiltonian + ?Sized>(
    model: &H,
    u: &GridFunction,
    c: f64,
    cfg: &SchemeConfig,
) -> Result<ResidualReport> {
    let per_node = numerical_hamiltonian(model, u, u, cfg)?.map(|v| v - c);
    Ok(ResidualReport {
        linf: per_node.linf_norm(),
        signed_min: per_node.min(),
        per_node,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sub,
    Super,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub side: Side,
    pub tol: f64,
    pub pass: bool,
    /// Node with the largest violation among checked nodes (`None` if none were checked).
    pub worst_node: Option<usize>,
    /// Residual at the worst node.
    pub worst_value: f64,
    pub max_residual: f64,
    pub min_residual: f64,
    pub excluded: usize,
}

/// One-sided residual certificate: `sub` requires `Ĥ − c ≤ tol`, `super` requires
/// `Ĥ − c ≥ −tol` at every node outside `exclude`.
pub fn certify<H: Hamiltonian + ?Sized>(
    model: &H,
    u: &GridFunction,
    c: f64,
    side: Side,
    tol: f64,
    cfg: &SchemeConfig,
    exclude: Option<&NodeMask>,
) -> Result<Certificate> {
    if !(tol >= 0.0) {
        return Err(Error::config("certificate tolerance must be nonnegative"));
    }
    if let Some(m) = exclude {
        if m.grid() != u.grid() {
            return Err(Error::config(
                "exclusion mask and grid function differ in grid",
            ));
        }
    }
    let res = residual(model, u, c, cfg)?;
    let mut worst: Option<(usize, f64)> = None;
    let (mut max_r, mut min_r) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut excluded = 0;
    for (i, &r) in res.per_node.values().iter().enumerate() {
        if exclude.is_some_and(|m| m.contains(i)) {
            excluded += 1;
            continue;
        }
        max_r = max_r.max(r);
        min_r = min_r.min(r);
        let violation = match side {
            Side::Sub => r,
            Side::Super => -r,
            Side::Both => r.abs(),
        };
        if worst.is_none_or(|(_, w)| violation > w) {
            worst = Some((i, violation));
        }
    }
    let pass = worst.is_none_or(|(_, w)| w <= tol);
    Ok(Certificate {
        side,
        tol,
        pass,
        worst_node: worst.map(|(i, _)| i),
        worst_value: worst.map_or(0.0, |(i, _)| res.per_node.values()[i]),
        max_residual: max_r,
        min_residual: min_r,
        excluded,
    })
}

/// Nodes where a one-sided difference jumps by more than `jump_tol` along some axis,
/// dilated by `radius` nodes.
pub fn kink_mask(u: &GridFunction, jump_tol: f64, radius: usize) -> NodeMask {
    let grid = *u.grid();
    let v = u.values();
    let raw = NodeMask::from_predicate(grid, |i| {
        let (pf, pb) = one_sided(&grid, v, i);
        (0..grid.dim()).any(|a| (pf[a] - pb[a]).abs() > jump_tol)
    });
    raw.dilate(radius)
}

/// Mask of nodes within `radius` of any of the given points.
pub fn neighborhood_mask(grid: PeriodicGrid, centres: &[[f64; 2]], radius: f64) -> NodeMask {
    NodeMask::from_predicate(grid, |i| {
        centres
            .iter()
            .any(|c| grid.torus_distance(grid.point(i), *c) <= radius + 1e-12)
    })
}
