use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{mollify, GridFunction, PeriodicGrid};
use crate::hamiltonians::Hamiltonian;

use super::{
    check_model_dim, estimate_viscosity, from_bound, hat_value, map_nodes, node_need, node_state,
    transport_row, Flux, SchemeConfig, StencilOperator, ViscosityField,
};

/// Coefficients of the linearized operator at one step: `H_r` and `D_pH` evaluated at
/// the flux's node state `(x, w, p)` (central differences for Lax–Friedrichs, the
/// upwind differences otherwise), with the upwind side per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    pub flux: Flux,
    pub h_r: Vec<f64>,
    pub d_p: [Vec<f64>; 2],
    pub side: [Vec<i8>; 2],
}

/// A solution of `ε w_t + H(x, w, Dw) = ε⁴ Δw` on `t ∈ [0, 1]`.
///
/// The tape stores every `checkpoint_every`-th state; intermediate states are
/// regenerated bit-exactly by re-stepping from the preceding checkpoint.
#[derive(Debug, Clone)]
pub struct ViscousTrajectory {
    pub eps: f64,
    pub dt: f64,
    pub steps: usize,
    pub flux: Flux,
    pub theta: ViscosityField,
    pub checkpoint_every: usize,
    checkpoints: Vec<Vec<f64>>,
    final_state: GridFunction,
    /// Largest `need − θ` over the run (positive means the viscosity bound was violated).
    pub viscosity_excess: f64,
    /// Smallest diagonal entry of the step operators (negative means the CFL bound was violated).
    pub min_diagonal: f64,
    pub reestimates: usize,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    eps: f64,
    eps4: f64,
    h2: f64,
    dt: f64,
    steps: usize,
    times: Vec<f64>,
    files: &'a [String],
}

impl ViscousTrajectory {
    pub fn grid(&self) -> &PeriodicGrid {
        self.final_state.grid()
    }

    pub fn initial(&self) -> GridFunction {
        GridFunction::from_vec(*self.grid(), self.checkpoints[0].clone())
    }

    pub fn final_state(&self) -> &GridFunction {
        &self.final_state
    }

    /// Number of steps recorded on the tape.
    pub fn tape_len(&self) -> usize {
        self.steps
    }

    /// Times of the stored snapshots (checkpoints followed by `t = 1`).
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = (0..self.checkpoints.len())
            .map(|k| (k * self.checkpoint_every) as f64 * self.dt)
            .collect();
        if (self.checkpoints.len() - 1) * self.checkpoint_every != self.steps {
            t.push(1.0);
        }
        t
    }

    /// Stored snapshots, aligned with [`times`](Self::times).
    pub fn states(&self) -> Vec<GridFunction> {
        let g = *self.grid();
        let mut s: Vec<GridFunction> = self
            .checkpoints
            .iter()
            .map(|c| GridFunction::from_vec(g, c.clone()))
            .collect();
        if (self.checkpoints.len() - 1) * self.checkpoint_every != self.steps {
            s.push(self.final_state.clone());
        }
        s
    }

    /// `ε⁴` and `h²`, the physical and grid diffusion scales.
    pub fn scales(&self) -> (f64, f64) {
        (self.eps.powi(4), self.grid().spacing().powi(2))
    }

    /// States `w^k` for `k` in `[first, last)` regenerated from the tape.
    fn replay<H: Hamiltonian + ?Sized>(
        &self,
        model: &H,
        first: usize,
        last: usize,
    ) -> Vec<Vec<f64>> {
        let seg = first / self.checkpoint_every;
        let mut w = self.checkpoints[seg].clone();
        let mut k = seg * self.checkpoint_every;
        let mut out = Vec::with_capacity(last - first);
        while k < last {
            if k >= first {
                out.push(w.clone());
            }
            w = advance(
                model,
                self.grid(),
                &w,
                &self.theta,
                self.eps,
                self.dt,
                self.flux,
            )
            .values;
            k += 1;
        }
        out
    }

    /// The state `w^k`, `0 ≤ k ≤ steps`.
    pub fn state_at<H: Hamiltonian + ?Sized>(&self, model: &H, k: usize) -> Result<GridFunction> {
        if k > self.steps {
            return Err(Error::config(format!(
                "step {k} beyond the tape length {}",
                self.steps
            )));
        }
        if k == self.steps {
            return Ok(self.final_state.clone());
        }
        let v = self.replay(model, k, k + 1).pop().expect("one state");
        Ok(GridFunction::from_vec(*self.grid(), v))
    }

    /// Tape coefficients of step `k`.
    pub fn coefficients<H: Hamiltonian + ?Sized>(
        &self,
        model: &H,
        k: usize,
    ) -> Result<StepCoefficients> {
        if k >= self.steps {
            return Err(Error::config(format!(
                "step {k} beyond the tape length {}",
                self.steps
            )));
        }
        let w = self.replay(model, k, k + 1).pop().expect("one state");
        Ok(step_coefficients(model, self.grid(), &w, self.flux))
    }

    /// The linearized step operator `L_k = I − (dt/ε)(J_k − ε⁴Δ_h)` of step `k`.
    pub fn linearized<H: Hamiltonian + ?Sized>(
        &self,
        model: &H,
        k: usize,
    ) -> Result<StencilOperator> {
        let c = self.coefficients(model, k)?;
        Ok(linearized_operator(
            self.grid(),
            &c,
            &self.theta,
            self.eps,
            self.dt,
        ))
    }

    /// Visits the steps from the last to the first, passing the state `w^k` and the
    /// step operator `L_k`.
    pub fn for_each_step_backward<H: Hamiltonian + ?Sized>(
        &self,
        model: &H,
        mut visit: impl FnMut(usize, &[f64], &StencilOperator) -> Result<()>,
    ) -> Result<()> {
        for seg in (0..self.segments()).rev() {
            let (first, states) = self.segment_states(model, seg);
            for (off, w) in states.iter().enumerate().rev() {
                let c = step_coefficients(model, self.grid(), w, self.flux);
                let op = linearized_operator(self.grid(), &c, &self.theta, self.eps, self.dt);
                visit(first + off, w, &op)?;
            }
        }
        Ok(())
    }

    pub(crate) fn segments(&self) -> usize {
        self.steps.div_ceil(self.checkpoint_every)
    }

    /// First step index of segment `seg` and the states of its steps.
    pub(crate) fn segment_states<H: Hamiltonian + ?Sized>(
        &self,
        model: &H,
        seg: usize,
    ) -> (usize, Vec<Vec<f64>>) {
        let first = seg * self.checkpoint_every;
        let last = (first + self.checkpoint_every).min(self.steps);
        (first, self.replay(model, first, last))
    }

    /// Writes one CSV per snapshot plus `manifest.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (k, s) in self.states().iter().enumerate() {
            let name = format!("snapshot_{k:05}.csv");
            s.save_csv(&dir.join(&name), "w")?;
            files.push(name);
        }
        let (eps4, h2) = self.scales();
        let manifest = Manifest {
            eps: self.eps,
            eps4,
            h2,
            dt: self.dt,
            steps: self.steps,
            times: self.times(),
            files: &files,
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Integrity(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

pub(crate) fn step_coefficients<H: Hamiltonian + ?Sized>(
    model: &H,
    grid: &PeriodicGrid,
    w: &[f64],
    flux: Flux,
) -> StepCoefficients {
    let per = map_nodes(grid.len(), |i| {
        let st = node_state(model, grid, w, w[i], i, flux);
        (
            model.d_r(st.x, w[i], st.p),
            model.d_p(st.x, w[i], st.p),
            st.side,
        )
    });
    let n = grid.len();
    let mut c = StepCoefficients {
        flux,
        h_r: Vec::with_capacity(n),
        d_p: [Vec::with_capacity(n), Vec::with_capacity(n)],
        side: [Vec::with_capacity(n), Vec::with_capacity(n)],
    };
    for (hr, dp, side) in per {
        c.h_r.push(hr);
        c.d_p[0].push(dp[0]);
        c.d_p[1].push(if grid.dim() == 2 { dp[1] } else { 0.0 });
        c.side[0].push(side[0]);
        c.side[1].push(side[1]);
    }
    c
}

impl StepCoefficients {
    /// Largest `Σ_a |∂H/∂p_a|` over nodes.
    pub fn max_speed(&self) -> f64 {
        self.d_p[0]
            .iter()
            .zip(&self.d_p[1])
            .map(|(a, b)| a.abs() + b.abs())
            .fold(0.0, f64::max)
    }

    /// The linearized step `δw ↦ δw'` for these coefficients.
    pub fn operator(
        &self,
        grid: &PeriodicGrid,
        theta: &ViscosityField,
        eps: f64,
        dt: f64,
    ) -> StencilOperator {
        linearized_operator(grid, self, theta, eps, dt)
    }
}

pub(crate) fn linearized_operator(
    grid: &PeriodicGrid,
    c: &StepCoefficients,
    theta: &ViscosityField,
    eps: f64,
    dt: f64,
) -> StencilOperator {
    let h = grid.spacing();
    let n = grid.dim() as f64;
    let k = dt / eps;
    let diff = eps.powi(4) / (h * h);
    let mut op = StencilOperator::zeros(*grid);
    for i in 0..grid.len() {
        let (t, plus, minus) = transport_row(
            [c.d_p[0][i], c.d_p[1][i]],
            [c.side[0][i], c.side[1][i]],
            [theta.at(i, 0), theta.at(i, 1)],
            h,
            grid.dim(),
            c.flux,
        );
        for a in 0..grid.dim() {
            op.plus[a][i] = -k * (plus[a] - diff);
            op.minus[a][i] = -k * (minus[a] - diff);
        }
        op.centre[i] = 1.0 - k * (c.h_r[i] + t + 2.0 * n * diff);
    }
    op
}

struct Advanced {
    values: Vec<f64>,
    need: Option<ViscosityField>,
    max_h_r: f64,
    /// Smallest diagonal entry of the step's linearized operator.
    min_diagonal: f64,
}

#[allow(clippy::too_many_arguments)]
fn advance_impl<H: Hamiltonian + ?Sized>(
    model: &H,
    grid: &PeriodicGrid,
    w: &[f64],
    theta: &ViscosityField,
    eps: f64,
    dt: f64,
    flux: Flux,
    track: bool,
    use_box: bool,
) -> Advanced {
    let h = grid.spacing();
    let n = grid.dim() as f64;
    let diff = eps.powi(4);
    let k = dt / eps;
    let per = map_nodes(grid.len(), |i| {
        let mut lap = -2.0 * n * w[i];
        for a in 0..grid.dim() {
            lap += w[grid.shift(i, a, 1)] + w[grid.shift(i, a, -1)];
        }
        let st = node_state(model, grid, w, w[i], i, flux);
        let hat = hat_value(model, &st, w[i], theta, i, flux);
        let next = w[i] - k * (hat - diff * lap / (h * h));
        if track {
            let need = node_need(model, grid, w, w[i], i, flux, use_box);
            let hr = model.d_r(st.x, w[i], st.p);
            let (t, _, _) = transport_row(
                model.d_p(st.x, w[i], st.p),
                st.side,
                [theta.at(i, 0), theta.at(i, 1)],
                h,
                grid.dim(),
                flux,
            );
            let diag = 1.0 - k * (hr + t + 2.0 * n * diff / (h * h));
            (next, need, hr, diag)
        } else {
            (next, [0.0; 2], 0.0, 1.0)
        }
    });
    let mut values = Vec::with_capacity(grid.len());
    let mut need = if track {
        Some(ViscosityField::uniform(*grid, &[0.0]).expect("valid grid"))
    } else {
        None
    };
    let mut max_h_r = f64::NEG_INFINITY;
    let mut min_diagonal = f64::INFINITY;
    for (i, (v, nd, hr, diag)) in per.into_iter().enumerate() {
        values.push(v);
        if let Some(n) = need.as_mut() {
            n.theta[0][i] = nd[0];
            n.theta[1][i] = nd[1];
        }
        max_h_r = max_h_r.max(hr);
        min_diagonal = min_diagonal.min(diag);
    }
    Advanced {
        values,
        need,
        max_h_r,
        min_diagonal,
    }
}

fn advance<H: Hamiltonian + ?Sized>(
    model: &H,
    grid: &PeriodicGrid,
    w: &[f64],
    theta: &ViscosityField,
    eps: f64,
    dt: f64,
    flux: Flux,
) -> Advanced {
    advance_impl(model, grid, w, theta, eps, dt, flux, false, false)
}

/// Largest admissible time step for the transport speed bound `speed` (`max Σ_a θ_a`)
/// and reaction bound `h_r_max`.
pub(crate) fn max_dt(grid: &PeriodicGrid, speed: f64, eps: f64, h_r_max: f64, cfl: f64) -> f64 {
    let h = grid.spacing();
    let n = grid.dim() as f64;
    let rate = h_r_max.max(0.0) + speed / h + 2.0 * n * eps.powi(4) / (h * h);
    if rate <= 0.0 {
        f64::INFINITY
    } else {
        cfl * eps / rate
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::config(format!("ε must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

/// One explicit step `w' = w − (dt/ε)(Ĥ(x, w, Dw) − ε⁴ Δ_h w)` with a frozen field,
/// returning the tape coefficients of the step alongside the new state.
pub fn step_viscous_with<H: Hamiltonian + ?Sized>(
    model: &H,
    w: &GridFunction,
    eps: f64,
    dt: f64,
    theta: &ViscosityField,
    flux: Flux,
) -> Result<(GridFunction, StepCoefficients)> {
    check_eps(eps)?;
    let grid = *w.grid();
    check_model_dim(model, &grid)?;
    if *theta.grid() != grid {
        return Err(Error::config("viscosity field and state differ in grid"));
    }
    let flux = flux.resolve(model)?;
    let coeffs = step_coefficients(model, &grid, w.values(), flux);
    let h_r_max = coeffs.h_r.iter().copied().fold(0.0, f64::max);
    let speed = match flux {
        Flux::Upwind => coeffs.max_speed(),
        _ => theta.max_sum(),
    };
    let limit = max_dt(&grid, speed, eps, h_r_max, 1.0);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::config(format!(
            "time step {dt:.3e} violates the CFL bound; the maximal admissible dt is {limit:.6e}"
        )));
    }
    let next = advance(model, &grid, w.values(), theta, eps, dt, flux).values;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            what: "viscous step".into(),
            step: 0,
        });
    }
    Ok((GridFunction::from_vec(grid, next), coeffs))
}

/// One explicit viscous step with `θ` estimated from `w` according to `cfg`.
/// The admissible step is `cfg.cfl` times the monotonicity limit.
pub fn step_viscous<H: Hamiltonian + ?Sized>(
    model: &H,
    w: &GridFunction,
    eps: f64,
    dt: f64,
    cfg: &SchemeConfig,
) -> Result<GridFunction> {
    check_eps(eps)?;
    let flux = cfg.flux.resolve(model)?;
    let theta = estimate_viscosity(model, w, w, cfg)?;
    let coeffs = step_coefficients(model, w.grid(), w.values(), flux);
    let h_r_max = coeffs.h_r.iter().copied().fold(0.0, f64::max);
    let limit = max_dt(w.grid(), theta.max_sum(), eps, h_r_max, cfg.cfl);
    if dt > limit {
        return Err(Error::config(format!(
            "time step {dt:.3e} violates the CFL bound; the maximal admissible dt is {limit:.6e}"
        )));
    }
    Ok(step_viscous_with(model, w, eps, dt, &theta, flux)?.0)
}

/// Integrates `ε w_t + H(x, w, Dw) = ε⁴ Δw` from `u0` (mollified at radius `ε⁴` when
/// that exceeds `h`) up to `t = 1`. The viscosity field is estimated from the initial
/// state and enlarged, with the run repeated, if the visited states exceed it.
pub fn solve_viscous<H: Hamiltonian + ?Sized>(
    model: &H,
    u0: &GridFunction,
    eps: f64,
    cfg: &SchemeConfig,
) -> Result<ViscousTrajectory> {
    check_eps(eps)?;
    let init = initial_state(u0, eps, cfg)?;
    let theta = estimate_viscosity(model, &init, &init, cfg)?;
    run(model, init, eps, cfg, theta, true)
}

/// As [`solve_viscous`] with a caller-supplied frozen viscosity field; bound
/// violations are reported as warnings instead of triggering a rerun.
pub fn solve_viscous_with<H: Hamiltonian + ?Sized>(
    model: &H,
    u0: &GridFunction,
    eps: f64,
    cfg: &SchemeConfig,
    theta: &ViscosityField,
) -> Result<ViscousTrajectory> {
    check_eps(eps)?;
    if theta.grid() != u0.grid() {
        return Err(Error::config(
            "viscosity field and initial datum differ in grid",
        ));
    }
    let init = initial_state(u0, eps, cfg)?;
    run(model, init, eps, cfg, theta.clone(), false)
}

fn initial_state(u0: &GridFunction, eps: f64, cfg: &SchemeConfig) -> Result<GridFunction> {
    cfg.validate()?;
    let delta = eps.powi(4);
    if cfg.mollify_initial && delta >= u0.grid().spacing() {
        mollify(u0, delta)
    } else {
        Ok(u0.clone())
    }
}

struct Integrated {
    trajectory: ViscousTrajectory,
    need: ViscosityField,
    max_h_r: f64,
    /// Stopped once the step outran the time step's stability bound; the trajectory is partial.
    aborted: bool,
}

impl Integrated {
    fn bad(&self) -> bool {
        self.aborted
            || self.trajectory.viscosity_excess > 1e-12
            || self.trajectory.min_diagonal < -1e-12
    }
}

const MAX_ABORTS: usize = 64;

/// Steps and time step for a frozen speed bound and reaction bound.
fn step_count(
    grid: &PeriodicGrid,
    theta: &ViscosityField,
    eps: f64,
    h_r_bound: f64,
    cfg: &SchemeConfig,
) -> Result<usize> {
    let dt_limit = max_dt(grid, theta.max_sum(), eps, h_r_bound, cfg.cfl);
    let steps = ((1.0 / dt_limit).ceil() as usize).max(1);
    if steps > cfg.max_steps {
        return Err(Error::config(format!(
            "viscous run needs {steps} steps (dt ≤ {dt_limit:.3e}), above max_steps = {}",
            cfg.max_steps
        )));
    }
    Ok(steps)
}

#[allow(clippy::too_many_arguments)]
fn integrate<H: Hamiltonian + ?Sized>(
    model: &H,
    init: &GridFunction,
    eps: f64,
    cfg: &SchemeConfig,
    flux: Flux,
    theta: &ViscosityField,
    steps: usize,
    abort_on_violation: bool,
) -> Result<Integrated> {
    let grid = *init.grid();
    let use_box = cfg.uses_box(flux);
    let dt = 1.0 / steps as f64;
    let every = if cfg.checkpoint_every > 0 {
        cfg.checkpoint_every
    } else if steps.saturating_mul(grid.len()) <= 1 << 24 {
        1
    } else {
        (steps as f64).sqrt().ceil() as usize
    };
    let mut checkpoints = Vec::with_capacity(steps / every + 1);
    let mut w = init.values().to_vec();
    let mut need = ViscosityField::uniform(grid, &[0.0])?;
    let mut max_h_r = f64::NEG_INFINITY;
    let mut min_diagonal = f64::INFINITY;
    let mut aborted = false;
    for k in 0..steps {
        if k % every == 0 {
            checkpoints.push(w.clone());
        }
        let adv = advance_impl(model, &grid, &w, theta, eps, dt, flux, true, use_box);
        if adv.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                what: format!("viscous run at ε = {eps}"),
                step: k,
            });
        }
        let step_need = adv.need.as_ref().expect("tracked");
        need = need.max_with(step_need)?;
        max_h_r = max_h_r.max(adv.max_h_r);
        min_diagonal = min_diagonal.min(adv.min_diagonal);
        if abort_on_violation
            && (step_need.max_sum() > theta.max_sum() + 1e-12 || adv.min_diagonal < -1e-12)
        {
            aborted = true;
            break;
        }
        w = adv.values;
    }
    if use_box {
        need = need.spread();
    }
    let excess = theta.excess(&need);
    let mut warnings = Vec::new();
    if excess > 1e-12 {
        warnings.push(format!(
            "speed bound θ below max |∂H/∂p| by {excess:.3e}; monotonicity not guaranteed"
        ));
    }
    if min_diagonal < -1e-12 {
        warnings.push(format!(
            "step operator has a negative diagonal entry {min_diagonal:.3e}"
        ));
    }
    Ok(Integrated {
        trajectory: ViscousTrajectory {
            eps,
            dt,
            steps,
            flux,
            theta: theta.clone(),
            checkpoint_every: every,
            checkpoints,
            final_state: GridFunction::from_vec(grid, w),
            viscosity_excess: excess,
            min_diagonal,
            reestimates: 0,
            warnings,
        },
        need,
        max_h_r,
        aborted,
    })
}

fn run<H: Hamiltonian + ?Sized>(
    model: &H,
    init: GridFunction,
    eps: f64,
    cfg: &SchemeConfig,
    theta: ViscosityField,
    adapt: bool,
) -> Result<ViscousTrajectory> {
    let out = run_many(model, &[init], eps, cfg, theta, adapt)?;
    Ok(out.into_iter().next().expect("one run"))
}

/// Integrates several initial data with one shared field and time step, enlarging both
/// and repeating all runs when any of them violates the bounds (if `adapt`).
fn run_many<H: Hamiltonian + ?Sized>(
    model: &H,
    inits: &[GridFunction],
    eps: f64,
    cfg: &SchemeConfig,
    mut theta: ViscosityField,
    adapt: bool,
) -> Result<Vec<ViscousTrajectory>> {
    let grid = *inits[0].grid();
    check_model_dim(model, &grid)?;
    let flux = cfg.flux.resolve(model)?;
    let mut h_r_bound: f64 = 0.0;
    for init in inits {
        let coeffs = step_coefficients(model, &grid, init.values(), flux);
        h_r_bound = h_r_bound.max(cfg.margin * coeffs.h_r.iter().copied().fold(0.0, f64::max));
    }
    let (mut reestimates, mut aborts) = (0, 0);
    loop {
        let steps = step_count(&grid, &theta, eps, h_r_bound, cfg)?;
        let runs = inits
            .iter()
            .map(|init| integrate(model, init, eps, cfg, flux, &theta, steps, adapt))
            .collect::<Result<Vec<_>>>()?;
        let any_aborted = runs.iter().any(|r| r.aborted);
        if any_aborted && aborts == MAX_ABORTS {
            return Err(Error::Divergence {
                what: format!("viscous run at ε = {eps} keeps outgrowing its speed bound"),
                step: steps,
            });
        }
        if any_aborted
            || (adapt && reestimates < cfg.max_reestimates && runs.iter().any(Integrated::bad))
        {
            if any_aborted {
                aborts += 1;
            } else {
                reestimates += 1;
            }
            for r in &runs {
                if r.trajectory.viscosity_excess > 1e-12 {
                    theta = theta.max_with(&from_bound(r.need.clone(), cfg))?;
                }
                h_r_bound = h_r_bound.max(cfg.margin * r.max_h_r);
            }
            continue;
        }
        return Ok(runs
            .into_iter()
            .map(|r| {
                let mut t = r.trajectory;
                t.reestimates = reestimates + aborts;
                t
            })
            .collect());
    }
}

/// Integrates two initial data on a common time grid with a common frozen field (the
/// elementwise maximum of both estimates), so that their step operators are comparable.
pub fn solve_viscous_pair<H: Hamiltonian + ?Sized>(
    model: &H,
    u1: &GridFunction,
    u2: &GridFunction,
    eps: f64,
    cfg: &SchemeConfig,
) -> Result<(ViscousTrajectory, ViscousTrajectory)> {
    check_eps(eps)?;
    u1.check_same_grid(u2)?;
    let a = initial_state(u1, eps, cfg)?;
    let b = initial_state(u2, eps, cfg)?;
    let theta = estimate_viscosity(model, &a, &a, cfg)?
        .max_with(&estimate_viscosity(model, &b, &b, cfg)?)?;
    let mut out = run_many(model, &[a, b], eps, cfg, theta, true)?;
    let second = out.pop().expect("two runs");
    let first = out.pop().expect("two runs");
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::laplacian;
    use crate::hamiltonians::{ContactNonlinearity, HamiltonianModel, Potential};
    use std::f64::consts::PI;

    fn cosine() -> Potential {
        Potential::expr("1 - cos(2*pi*x)").unwrap()
    }

    struct ZeroH(crate::hamiltonians::ModelMeta);

    impl Hamiltonian for ZeroH {
        fn meta(&self) -> &crate::hamiltonians::ModelMeta {
            &self.0
        }
        fn eval(&self, _: [f64; 2], _: f64, _: [f64; 2]) -> f64 {
            0.0
        }
        fn d_r(&self, _: [f64; 2], _: f64, _: [f64; 2]) -> f64 {
            0.0
        }
        fn d_p(&self, _: [f64; 2], _: f64, _: [f64; 2]) -> [f64; 2] {
            [0.0; 2]
        }
        fn d_x(&self, _: [f64; 2], _: f64, _: [f64; 2]) -> [f64; 2] {
            [0.0; 2]
        }
    }

    fn zero_h() -> ZeroH {
        ZeroH(crate::hamiltonians::ModelMeta {
            dim: 1,
            lipschitz_r: 0.0,
            monotone_r: true,
            convex_rp: true,
            superlinear_p: false,
        })
    }

    #[test]
    fn single_step_from_zero_is_potential() {
        let g = PeriodicGrid::new(1, 256).unwrap();
        let m =
            HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::CubicPlus).unwrap();
        let w = step_viscous(
            &m,
            &GridFunction::zeros(g),
            0.1,
            1e-4,
            &SchemeConfig::default(),
        )
        .unwrap();
        for i in 0..g.len() {
            let want = 1e-3 * cosine().value(g.point(i));
            assert!((w.values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_hamiltonian_is_heat_step() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let m = zero_h();
        let w = GridFunction::constant(g, 0.0);
        let theta = ViscosityField::uniform(g, &[0.0]).unwrap();
        let (out, _) = step_viscous_with(&m, &w, 0.5, 1e-4, &theta, Flux::LaxFriedrichs).unwrap();
        assert_eq!(out, w);
        let s = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let (out, _) = step_viscous_with(&m, &s, 0.5, 1e-4, &theta, Flux::LaxFriedrichs).unwrap();
        let lap = laplacian(&s);
        let k = 1e-4 / 0.5 * 0.5f64.powi(4);
        for i in 0..g.len() {
            let heat = s.values()[i] + k * lap.values()[i];
            assert!((out.values()[i] - heat).abs() < 1e-15);
        }
    }

    #[test]
    fn heat_decay_rate() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let s = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let eps = 0.5;
        let cfg = SchemeConfig {
            mollify_initial: false,
            ..Default::default()
        };
        let tr = solve_viscous(&zero_h(), &s, eps, &cfg).unwrap();
        let want = (-4.0 * PI * PI * eps.powi(3)).exp();
        let got = tr.final_state().values()[16];
        assert!((got / want - 1.0).abs() < 0.02, "{got} vs {want}");
    }

    #[test]
    fn cfl_violation_names_limit() {
        let g = PeriodicGrid::new(1, 256).unwrap();
        let m =
            HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::CubicPlus).unwrap();
        let u = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let err = step_viscous(&m, &u, 0.1, 0.5, &SchemeConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Config(msg) if msg.contains("maximal admissible dt")));
    }

    #[test]
    fn trajectory_tape_replays_exactly() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let m =
            HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::CubicPlus).unwrap();
        let u0 = GridFunction::from_fn(g, |x| 0.2 * (2.0 * PI * x[0]).sin());
        let cfg = SchemeConfig {
            checkpoint_every: 7,
            ..Default::default()
        };
        let tr = solve_viscous(&m, &u0, 0.3, &cfg).unwrap();
        assert_eq!(tr.initial(), u0);
        assert_eq!(tr.state_at(&m, tr.steps).unwrap(), *tr.final_state());
        let last = tr.state_at(&m, tr.steps - 1).unwrap();
        let (again, _) = step_viscous_with(&m, &last, tr.eps, tr.dt, &tr.theta, tr.flux).unwrap();
        assert_eq!(again, *tr.final_state());
        let mut visited = 0;
        tr.for_each_step_backward(&m, |k, _, _| {
            assert_eq!(k, tr.steps - 1 - visited);
            visited += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(visited, tr.steps);
        assert_eq!(*tr.times().last().unwrap(), 1.0);
        assert_eq!(tr.times().len(), tr.states().len());
    }

    #[test]
    fn linearized_rows_sum_to_reaction() {
        let g = PeriodicGrid::new(2, 8).unwrap();
        let m = HamiltonianModel::prototype(
            2,
            2.0,
            Potential::expr("1-cos(2*pi*x)*cos(2*pi*y)").unwrap(),
            ContactNonlinearity::CubicPlus,
        )
        .unwrap();
        let w = GridFunction::from_fn(g, |x| 0.5 + 0.1 * (2.0 * PI * x[1]).sin());
        let theta = ViscosityField::uniform(g, &[2.0, 3.0]).unwrap();
        for flux in [Flux::LaxFriedrichs, Flux::Upwind] {
            let c = step_coefficients(&m, &g, w.values(), flux);
            let op = linearized_operator(&g, &c, &theta, 0.2, 1e-4);
            for (i, s) in op.row_sums().iter().enumerate() {
                assert!((s - (1.0 - 1e-4 / 0.2 * c.h_r[i])).abs() < 1e-12);
            }
        }
    }
}
