//! Backward adjoint solves along viscous trajectories, the resulting time-integrated
//! measures, and the uniqueness-set estimate built from them.
//!
//! The adjoint step is the exact transpose of the tape's linearized forward step, so
//! the mass identities and the comparison inequality hold at the discrete level.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, NodeMask, PeriodicGrid};
use crate::hamiltonians::Hamiltonian;
use crate::schemes::{
    certify, solve_viscous, solve_viscous_pair, SchemeConfig, Side, ViscousTrajectory,
};

/// Tolerance of the mass window and the monotonicity of the mass trace.
pub const MASS_TOL: f64 = 1e-6;

/// The adjoint density `σ` along a trajectory, kept as its initial slice, its
/// trapezoidal time integral and its mass trace.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub eps: f64,
    pub x0: usize,
    pub dt: f64,
    /// `σ(·, 0)`.
    pub initial: GridFunction,
    /// `∫₀¹ σ dt` by the trapezoidal rule over the step times.
    pub integrated: GridFunction,
    /// `∫ σ(·, t_k) dx` at `t_k = k·dt`, `k = 0..=steps`.
    pub mass: Vec<f64>,
    /// Smallest value of `σ` over all steps.
    pub min_value: f64,
    /// Largest per-step `|⟨L w, σ⟩ − ⟨w, Lᵀσ⟩|` for a fixed probe `w`.
    pub duality_defect: f64,
}

impl AdjointSolution {
    pub fn times(&self) -> Vec<f64> {
        (0..self.mass.len()).map(|k| k as f64 * self.dt).collect()
    }
}

/// `ν^ε`: the measure `ψ ↦ ∫₀¹∫ ψ σ dx dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointMeasure {
    pub density: GridFunction,
    pub mass: f64,
    pub eps: f64,
    pub x0: usize,
    /// Identifier of the solution the trajectory started from.
    pub source: String,
}

impl AdjointMeasure {
    pub fn grid(&self) -> &PeriodicGrid {
        self.density.grid()
    }

    /// `∫ ψ dν`.
    pub fn pair(&self, psi: &GridFunction) -> Result<f64> {
        self.density.inner(psi)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.density.save_csv(path, "density")
    }
}

fn probe(n: usize) -> Vec<f64> {
    (0..n).map(|i| (1.0 + 0.37 * i as f64).sin()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backward solves from the grid Diracs at each of `x0s` (height `1/h^dim`), run in a
/// single pass over the tape.
pub fn solve_adjoint_many<H: Hamiltonian + ?Sized>(
    model: &H,
    trajectory: &ViscousTrajectory,
    x0s: &[usize],
) -> Result<Vec<AdjointSolution>> {
    let grid = *trajectory.grid();
    if trajectory.steps == 0 {
        return Err(Error::config("trajectory has no recorded steps"));
    }
    if let Some(bad) = x0s.iter().find(|&&i| i >= grid.len()) {
        return Err(Error::config(format!(
            "x0 index {bad} outside a grid of {} nodes",
            grid.len()
        )));
    }
    let vol = grid.cell_volume();
    let dt = trajectory.dt;
    let steps = trajectory.steps;
    let z = probe(grid.len());
    struct State {
        sigma: Vec<f64>,
        integrated: Vec<f64>,
        mass: Vec<f64>,
        min_value: f64,
        defect: f64,
    }
    let mut states: Vec<State> = x0s
        .iter()
        .map(|&x0| {
            let mut sigma = vec![0.0; grid.len()];
            sigma[x0] = 1.0 / vol;
            let integrated = sigma.iter().map(|s| 0.5 * dt * s).collect();
            let mut mass = vec![0.0; steps + 1];
            mass[steps] = 1.0;
            State {
                sigma,
                integrated,
                mass,
                min_value: 0.0,
                defect: 0.0,
            }
        })
        .collect();
    trajectory.for_each_step_backward(model, |k, _, op| {
        let lz = op.apply(&z);
        states.par_iter_mut().for_each(|st| {
            let next = op.apply_transpose(&st.sigma);
            let defect = (dot(&lz, &st.sigma) - dot(&z, &next)).abs() * vol;
            st.defect = st.defect.max(defect);
            let weight = if k == 0 { 0.5 * dt } else { dt };
            let mut m = 0.0;
            let mut lo = f64::INFINITY;
            for (acc, s) in st.integrated.iter_mut().zip(&next) {
                *acc += weight * s;
                m += s;
                lo = lo.min(*s);
            }
            st.mass[k] = m * vol;
            st.min_value = st.min_value.min(lo);
            st.sigma = next;
        });
        Ok(())
    })?;
    Ok(states
        .into_iter()
        .zip(x0s)
        .map(|(st, &x0)| AdjointSolution {
            eps: trajectory.eps,
            x0,
            dt,
            initial: GridFunction::from_vec(grid, st.sigma),
            integrated: GridFunction::from_vec(grid, st.integrated),
            mass: st.mass,
            min_value: st.min_value,
            duality_defect: st.defect,
        })
        .collect())
}

/// Backward solve `σ^k = L_kᵀ σ^{k+1}` from the grid Dirac at `x0`.
pub fn solve_adjoint<H: Hamiltonian + ?Sized>(
    model: &H,
    trajectory: &ViscousTrajectory,
    x0: usize,
) -> Result<AdjointSolution> {
    Ok(solve_adjoint_many(model, trajectory, &[x0])?
        .pop()
        .expect("one solve"))
}

pub fn adjoint_measure(solution: &AdjointSolution, source: &str) -> AdjointMeasure {
    AdjointMeasure {
        mass: solution.integrated.integral(),
        density: solution.integrated.clone(),
        eps: solution.eps,
        x0: solution.x0,
        source: source.to_string(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MassTrace {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    /// Whether the monotone-family laws were asserted.
    pub checked: bool,
}

/// The mass `m(t_k)` of `σ`. When `monotone_r` holds, `m` must lie in `[0, 1]`, be
/// nondecreasing and end at 1 (up to [`MASS_TOL`]); a violation is an integrity error.
pub fn mass_trace(solution: &AdjointSolution, monotone_r: bool) -> Result<MassTrace> {
    let trace = MassTrace {
        times: solution.times(),
        mass: solution.mass.clone(),
        checked: monotone_r,
    };
    if !monotone_r {
        return Ok(trace);
    }
    let last = *trace.mass.last().expect("nonempty trace");
    if (last - 1.0).abs() > 1e-12 {
        return Err(Error::Integrity(format!(
            "terminal adjoint mass {last} differs from 1"
        )));
    }
    for (k, m) in trace.mass.iter().enumerate() {
        if !(-MASS_TOL..=1.0 + MASS_TOL).contains(m) {
            return Err(Error::Integrity(format!(
                "adjoint mass {m:.9} at step {k} outside [0, 1]"
            )));
        }
    }
    if let Some(k) = trace.mass.windows(2).position(|w| w[1] < w[0] - MASS_TOL) {
        return Err(Error::Integrity(format!(
            "adjoint mass decreases from {} to {} at step {k}",
            trace.mass[k],
            trace.mass[k + 1]
        )));
    }
    Ok(trace)
}

/// One `(solution, x0)` pipeline run of [`estimate_m`].
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub solution: usize,
    pub x0: usize,
    /// `(ε, measure mass)` over the ladder.
    pub masses: Vec<(f64, f64)>,
    /// Extrapolation of the mass to `ε → 0`.
    pub limit_mass: f64,
    /// Whether the run's measure was counted as non-vanishing.
    pub contributing: bool,
}

#[derive(Debug, Clone)]
pub struct UniquenessSetEstimate {
    pub mask: NodeMask,
    /// Average of the contributing runs' densities at the smallest `ε`.
    pub density: GridFunction,
    pub total_mass: f64,
    pub threshold: f64,
    pub eps: f64,
    pub runs: Vec<RunRecord>,
}

#[derive(Serialize)]
struct EstimateManifest<'a> {
    threshold: f64,
    eps: f64,
    total_mass: f64,
    nodes_in_mask: usize,
    runs: &'a [RunRecord],
}

impl UniquenessSetEstimate {
    /// Writes `mask.csv`, `density.csv` and `manifest.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.mask
            .to_grid_function()
            .save_csv(&dir.join("mask.csv"), "in_set")?;
        self.density.save_csv(&dir.join("density.csv"), "density")?;
        let manifest = EstimateManifest {
            threshold: self.threshold,
            eps: self.eps,
            total_mass: self.total_mass,
            nodes_in_mask: self.mask.count(),
            runs: &self.runs,
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Integrity(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Polynomial extrapolation of `(ε, m)` samples to `ε = 0` (degree up to 2), clipped
/// to `[0, 1]`.
pub fn extrapolate_mass(samples: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.truncate(3);
    let limit = match pts.len() {
        0 => 0.0,
        1 => pts[0].1,
        _ => {
            // Lagrange interpolation evaluated at 0
            let mut s = 0.0;
            for (i, &(xi, yi)) in pts.iter().enumerate() {
                let mut l = 1.0;
                for (j, &(xj, _)) in pts.iter().enumerate() {
                    if i != j {
                        l *= xj / (xj - xi);
                    }
                }
                s += yi * l;
            }
            s
        }
    };
    limit.clamp(0.0, 1.0)
}

/// Estimates the uniqueness set from a roster of solutions of `H(x, u, Du) = 0`.
///
/// For every solution and `ε` of the ladder one forward run is made; each `x0` of the
/// sample then gets its adjoint measure. A run whose mass extrapolates to at most
/// `threshold` as `ε → 0` is treated as vanishing. The densities of the remaining runs
/// at the smallest `ε` are averaged, and the mask keeps the nodes where that average is
/// at least `threshold` times its mean value.
#[allow(clippy::too_many_arguments)]
pub fn estimate_m<H: Hamiltonian + ?Sized>(
    model: &H,
    roster: &[GridFunction],
    x0s: &[usize],
    eps_ladder: &[f64],
    threshold: f64,
    certificate_tol: f64,
    cfg: &SchemeConfig,
) -> Result<UniquenessSetEstimate> {
    if roster.is_empty() {
        return Err(Error::config("the solution roster is empty"));
    }
    if x0s.is_empty() || eps_ladder.is_empty() {
        return Err(Error::config("estimate_m needs at least one x0 and one ε"));
    }
    if !(threshold > 0.0) {
        return Err(Error::config("the support threshold must be positive"));
    }
    let grid = *roster[0].grid();
    for (k, u) in roster.iter().enumerate() {
        u.check_same_grid(&roster[0])?;
        let cert = certify(model, u, 0.0, Side::Both, certificate_tol, cfg, None)?;
        if !cert.pass {
            return Err(Error::config(format!(
                "roster entry {k} is not a solution: residual {:.3e} at node {:?} exceeds {certificate_tol}",
                cert.worst_value, cert.worst_node
            )));
        }
    }
    let eps_min = eps_ladder.iter().copied().fold(f64::INFINITY, f64::min);
    let mut runs = Vec::new();
    let mut acc = vec![0.0; grid.len()];
    let mut contributing = 0usize;
    for (s, u) in roster.iter().enumerate() {
        let mut per_x0: Vec<Vec<(f64, f64)>> = vec![Vec::new(); x0s.len()];
        let mut finest: Vec<AdjointMeasure> = Vec::new();
        for &eps in eps_ladder {
            let traj = solve_viscous(model, u, eps, cfg)?;
            let sols = solve_adjoint_many(model, &traj, x0s)?;
            for (j, sol) in sols.iter().enumerate() {
                let m = adjoint_measure(sol, &format!("solution {s}"));
                per_x0[j].push((eps, m.mass));
                if eps == eps_min {
                    finest.push(m);
                }
            }
        }
        for (j, &x0) in x0s.iter().enumerate() {
            let limit_mass = extrapolate_mass(&per_x0[j]);
            let counted = limit_mass > threshold;
            if counted {
                contributing += 1;
                for (a, d) in acc.iter_mut().zip(finest[j].density.values()) {
                    *a += d;
                }
            }
            runs.push(RunRecord {
                solution: s,
                x0,
                masses: per_x0[j].clone(),
                limit_mass,
                contributing: counted,
            });
        }
    }
    if contributing > 0 {
        acc.iter_mut().for_each(|a| *a /= contributing as f64);
    }
    let density = GridFunction::from_vec(grid, acc);
    let total_mass = density.integral();
    let cut = threshold * total_mass;
    let mask = if contributing == 0 {
        NodeMask::empty(grid)
    } else {
        NodeMask::from_predicate(grid, |i| density.values()[i] >= cut)
    };
    Ok(UniquenessSetEstimate {
        mask,
        density,
        total_mass,
        threshold,
        eps: eps_min,
        runs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// `∫ (u₁ − u₂) dν` per measure.
    pub pairings: Vec<f64>,
    pub max_pairing: f64,
    pub pointwise_max: f64,
    /// False only when every pairing is `≤ tol` but `max(u₁ − u₂) > tol + slack`.
    pub consistent: bool,
}

/// Pairs `u₁ − u₂` with each measure and checks that nonpositive pairings come with
/// `u₁ ≤ u₂` up to `tol + slack`.
pub fn comparison_functional(
    u1: &GridFunction,
    u2: &GridFunction,
    measures: &[AdjointMeasure],
    tol: f64,
    slack: f64,
) -> Result<ComparisonReport> {
    u1.check_same_grid(u2)?;
    let diff = u1.zip_map(u2, |a, b| a - b)?;
    let pairings = measures
        .iter()
        .map(|m| m.pair(&diff))
        .collect::<Result<Vec<_>>>()?;
    let max_pairing = pairings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pointwise_max = diff.max();
    let all_small = pairings.iter().all(|p| *p <= tol);
    Ok(ComparisonReport {
        consistent: !all_small || pointwise_max <= tol + slack,
        pairings,
        max_pairing,
        pointwise_max,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    /// `(w₁ − w₂)(x₀, 1)`.
    pub lhs: f64,
    /// `∫ (w₁ − w₂)(·, 0) σ(·, 0) dx`.
    pub rhs: f64,
    /// `∫₀¹∫ (w₁ − w₂) σ dx dt`.
    pub time_integrated: f64,
    /// Largest increase of `k ↦ ∫ (w₁ − w₂)(·, t_k) σ(·, t_k) dx` between steps.
    pub max_step_increase: f64,
    pub tol: f64,
    pub holds: bool,
}

/// Checks `(w₁ − w₂)(x₀, 1) ≤ ∫ (w₁ − w₂)(·, 0) σ(·, 0) dx` for the viscous runs from
/// `u1` and `u2`, with `σ` the adjoint along the `u2` run. Requires a Hamiltonian
/// monotone in `r` and jointly convex in `(r, p)`; a violation is reported, not raised.
pub fn duality_check<H: Hamiltonian + ?Sized>(
    model: &H,
    u1: &GridFunction,
    u2: &GridFunction,
    eps: f64,
    x0: usize,
    cfg: &SchemeConfig,
) -> Result<DualityReport> {
    let meta = model.meta();
    if !(meta.monotone_r && meta.convex_rp) {
        return Err(Error::config(
            "the duality inequality needs a Hamiltonian nondecreasing in r and convex in (r, p)",
        ));
    }
    let (t1, t2) = solve_viscous_pair(model, u1, u2, eps, cfg)?;
    let grid = *t2.grid();
    if x0 >= grid.len() {
        return Err(Error::config(format!(
            "x0 index {x0} outside a grid of {} nodes",
            grid.len()
        )));
    }
    let vol = grid.cell_volume();
    let dt = t2.dt;
    let mut sigma = vec![0.0; grid.len()];
    sigma[x0] = 1.0 / vol;
    let lhs = t1.final_state().values()[x0] - t2.final_state().values()[x0];
    let mut pairing = lhs;
    let mut time_integrated = 0.5 * dt * lhs;
    let mut max_step_increase = f64::NEG_INFINITY;
    let mut seg_cache: Option<(usize, usize, Vec<Vec<f64>>)> = None;
    let every = t1.checkpoint_every;
    t2.for_each_step_backward(model, |k, w2, op| {
        let seg = k / every;
        if seg_cache.as_ref().map(|c| c.0) != Some(seg) {
            let (first, states) = t1.segment_states(model, seg);
            seg_cache = Some((seg, first, states));
        }
        let (_, first, states) = seg_cache.as_ref().expect("cached segment");
        let w1 = &states[k - first];
        sigma = op.apply_transpose(&sigma);
        let p: f64 = w1
            .iter()
            .zip(w2)
            .zip(&sigma)
            .map(|((a, b), s)| (a - b) * s)
            .sum::<f64>()
            * vol;
        max_step_increase = max_step_increase.max(pairing - p);
        let weight = if k == 0 { 0.5 * dt } else { dt };
        time_integrated += weight * p;
        pairing = p;
        Ok(())
    })?;
    let scale = 1.0 + u1.linf_norm().max(u2.linf_norm());
    let tol = 1e-6 + 1e-9 * scale;
    Ok(DualityReport {
        lhs,
        rhs: pairing,
        time_integrated,
        max_step_increase,
        tol,
        holds: lhs <= pairing + tol && max_step_increase <= tol,
    })
}
