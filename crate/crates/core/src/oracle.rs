//! Reference solutions: closed forms, shortest-path and value-iteration constructions
//! that do not use the finite-difference schemes, and grid-refinement references.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::ergodic::{fixed_point_ergodic, solve_prototype_positive, GMapConfig};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, NodeMask, PeriodicGrid};
use crate::hamiltonians::{v_example4, HamiltonianModel, Potential, MIN_V_TOL};
use crate::schemes::{neighborhood_mask, SchemeConfig};

/// A reference solution of `H(x, u, Du) = c` with its declared kink nodes.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub u: GridFunction,
    pub c: f64,
    pub construction: String,
    /// Nodes where `u` is not differentiable (or may not be), to be excluded from
    /// residual certificates together with a few neighbours.
    pub kinks: NodeMask,
    pub notes: String,
}

impl OracleSolution {
    fn new(u: GridFunction, c: f64, construction: &str, kinks: NodeMask, notes: &str) -> Self {
        OracleSolution {
            u,
            c,
            construction: construction.to_string(),
            kinks,
            notes: notes.to_string(),
        }
    }

    /// Declared kinks dilated by `radius` nodes.
    pub fn exclusion(&self, radius: usize) -> NodeMask {
        self.kinks.dilate(radius)
    }
}

/// `u₁ = a₁V`, `u₂ = a₂V` with `a₁,₂ = (λ ± √(λ² − 4))/2`: two solutions of
/// `−λu + |u'|² + V = 0` for the piecewise quadratic potential with its kink at 0.
pub fn example4_solutions(
    lambda: f64,
    grid: PeriodicGrid,
) -> Result<(OracleSolution, OracleSolution)> {
    if !(lambda > 2.0) || !lambda.is_finite() {
        return Err(Error::config(format!("λ must exceed 2, got {lambda}")));
    }
    if grid.dim() != 1 {
        return Err(Error::config("the example is one-dimensional"));
    }
    let v = v_example4(grid)?;
    let root = (lambda * lambda - 4.0).sqrt();
    let kinks = neighborhood_mask(grid, &[[0.0, 0.0], [0.5, 0.0]], 0.0);
    let make = |a: f64, branch: &str| {
        OracleSolution::new(
            v.map(|x| a * x),
            0.0,
            "example4",
            kinks.clone(),
            &format!("u = {a:.10}·V ({branch} root); V has a kink at 0 and its zero at 1/2"),
        )
    };
    Ok((
        make((lambda + root) / 2.0, "larger"),
        make((lambda - root) / 2.0, "smaller"),
    ))
}

/// `u − c/λ`, a solution of the same equation with right-hand side `c`.
pub fn example4_shifted(sol: &OracleSolution, lambda: f64, c: f64) -> OracleSolution {
    let mut out = sol.clone();
    out.u = sol.u.map(|x| x - c / lambda);
    out.c = c;
    out.construction = "example4_shifted".into();
    out
}

/// Neighbour offsets with their lengths in units of `h`: 2 in 1D, 8 in 2D.
fn stencil(dim: usize) -> Vec<([i64; 2], f64)> {
    if dim == 1 {
        return vec![([1, 0], 1.0), ([-1, 0], 1.0)];
    }
    let mut out = Vec::with_capacity(8);
    for di in -1..=1i64 {
        for dj in -1..=1i64 {
            if di != 0 || dj != 0 {
                out.push(([di, dj], ((di * di + dj * dj) as f64).sqrt()));
            }
        }
    }
    out
}

fn neighbour(grid: &PeriodicGrid, i: usize, off: [i64; 2]) -> usize {
    let mi = grid.multi_index(i);
    grid.flat_index([mi[0] as i64 + off[0], mi[1] as i64 + off[1]])
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

fn check_min_zero(v: &GridFunction) -> Result<()> {
    let min = v.min();
    if min.abs() > MIN_V_TOL {
        return Err(Error::config(format!(
            "potential must satisfy min V = 0 (found {min:.3e})"
        )));
    }
    Ok(())
}

/// The maximal solution of `|Dv|^m = V` vanishing on `{V ≤ tol}`: the shortest-path
/// distance with edge cost `length · V_mid^{1/m}` over the 2-neighbour (1D) or
/// 8-neighbour (2D) graph, `V_mid` the mean of the end values.
pub fn eikonal_distance(v: &GridFunction, m: f64, tol: f64) -> Result<GridFunction> {
    if !(m >= 1.0) || !m.is_finite() {
        return Err(Error::config(format!(
            "exponent m must be at least 1, got {m}"
        )));
    }
    check_min_zero(v)?;
    let grid = *v.grid();
    let vals = v.values();
    let h = grid.spacing();
    let mut dist = vec![f64::INFINITY; grid.len()];
    let mut heap = BinaryHeap::new();
    for (i, &x) in vals.iter().enumerate() {
        if x <= tol {
            dist[i] = 0.0;
            heap.push(Entry(0.0, i));
        }
    }
    if heap.is_empty() {
        return Err(Error::config("the source set {V ≤ tol} is empty"));
    }
    let nbrs = stencil(grid.dim());
    while let Some(Entry(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        for &(off, len) in &nbrs {
            let j = neighbour(&grid, i, off);
            let mid = (0.5 * (vals[i] + vals[j])).max(0.0);
            let nd = d + len * h * mid.powf(1.0 / m);
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Entry(nd, j));
            }
        }
    }
    GridFunction::new(grid, dist)
}

const SWEEP_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100_000;

/// The solution of `w + |Dw| − V = 0`, `w(x) = inf ∫₀^∞ e^{−t} V(ξ(t)) dt` over paths
/// with `|ξ'| ≤ 1`, by semi-Lagrangian value iteration
/// `w_i = min(V_i, min_j [(1 − e^{−τ_j}) V_mid + e^{−τ_j} w_j])` with alternating sweeps.
pub fn contact_eikonal_w(v: &GridFunction) -> Result<OracleSolution> {
    check_min_zero(v)?;
    let grid = *v.grid();
    let n = grid.nodes_per_axis();
    let h = grid.spacing();
    let vals = v.values();
    let nbrs: Vec<([i64; 2], f64, f64)> = stencil(grid.dim())
        .into_iter()
        .map(|(off, len)| {
            let decay = (-len * h).exp();
            (off, decay, 1.0 - decay)
        })
        .collect();
    let mut w = vals.to_vec();
    let orders: Vec<(bool, bool)> = if grid.dim() == 1 {
        vec![(false, false), (true, false)]
    } else {
        vec![(false, false), (true, false), (false, true), (true, true)]
    };
    let rows = if grid.dim() == 1 { 1 } else { n };
    let mut sweeps = 0;
    loop {
        let mut change: f64 = 0.0;
        for &(rev_i, rev_j) in &orders {
            for a in 0..n {
                let i0 = if rev_i { n - 1 - a } else { a };
                for b in 0..rows {
                    let j0 = if rev_j { rows - 1 - b } else { b };
                    let idx = if grid.dim() == 1 { i0 } else { i0 * n + j0 };
                    let mut best = vals[idx];
                    for &(off, decay, gain) in &nbrs {
                        let j = neighbour(&grid, idx, off);
                        best = best.min(gain * 0.5 * (vals[idx] + vals[j]) + decay * w[j]);
                    }
                    change = change.max((w[idx] - best).abs());
                    w[idx] = best;
                }
            }
        }
        sweeps += 1;
        if change <= SWEEP_TOL {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NonConvergence {
                what: "value iteration for w + |Dw| = V".into(),
                iterations: sweeps,
                residual: change,
            });
        }
    }
    let u = GridFunction::new(grid, w)?;
    Ok(OracleSolution::new(
        u,
        0.0,
        "contact_eikonal_w",
        NodeMask::empty(grid),
        "0 ≤ w ≤ V; may have concave kinks where optimal paths switch",
    ))
}

/// `v − C` with `v` the maximal eikonal solution (`m = 1`) and `C = ‖v‖_∞ + margin`,
/// a nonpositive solution of `|Dv| − V + f(v) = 0` for any `f` vanishing on `(−∞, 0]`.
pub fn shifted_eikonal(v: &GridFunction, margin: f64) -> Result<OracleSolution> {
    if !(margin > 0.0) {
        return Err(Error::config("the shift margin must be positive"));
    }
    let d = eikonal_distance(v, 1.0, 0.0)?;
    let shift = d.linf_norm() + margin;
    Ok(OracleSolution::new(
        d.map(|x| x - shift),
        0.0,
        "shifted_eikonal",
        NodeMask::empty(*v.grid()),
        &format!("maximal eikonal solution shifted down by {shift:.6}"),
    ))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let k = 2 * panels;
    let step = (b - a) / k as f64;
    let mut s = f(a) + f(b);
    for i in 1..k {
        s += f(a + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * step / 3.0
}

/// Example with a solution taking both signs: `u = φ(|x|)` inside `B(0, r)` with
/// `φ' = Ṽ`, `φ(r) = 0`, and `u = w` (see [`contact_eikonal_w`]) outside. `v` is the
/// full potential sampled on the grid and must equal `Ṽ(|x|)` inside the ball.
pub fn radial_bump_solution(
    v_tilde: &dyn Fn(f64) -> f64,
    radius: f64,
    v: &GridFunction,
) -> Result<OracleSolution> {
    let grid = *v.grid();
    if grid.dim() != 2 {
        return Err(Error::config("the radial example is two-dimensional"));
    }
    if !(radius > 0.0 && radius < 0.5) {
        return Err(Error::config(format!(
            "radius must lie in (0, 1/2), got {radius}"
        )));
    }
    if v_tilde(0.0).abs() > 1e-12 || v_tilde(radius).abs() > 1e-12 {
        return Err(Error::config(
            "the radial profile must vanish at 0 and at the radius",
        ));
    }
    let w = contact_eikonal_w(v)?;
    let centre = [0.0, 0.0];
    let u = GridFunction::from_fn(grid, |x| {
        let s = grid.torus_distance(x, centre);
        if s < radius {
            -simpson(v_tilde, s, radius, 64)
        } else {
            f64::NAN
        }
    });
    let values: Vec<f64> = u
        .values()
        .iter()
        .zip(w.u.values())
        .map(|(a, b)| if a.is_nan() { *b } else { *a })
        .collect();
    let h = grid.spacing();
    let rim = NodeMask::from_predicate(grid, |i| {
        (grid.torus_distance(grid.point(i), centre) - radius).abs() <= h
    });
    Ok(OracleSolution::new(
        GridFunction::new(grid, values)?,
        0.0,
        "radial_bump",
        rim,
        "negative inside the ball, glued to w on its boundary; kinks declared on the rim",
    ))
}

/// The radial example at `r = 1/4` with `Ṽ(s) = 16 s (r − s)` inside and
/// `4 (s − r)²` outside.
pub fn example6(grid: PeriodicGrid) -> Result<(Potential, OracleSolution)> {
    let (radius, k_in, k_out) = (0.25, 16.0, 4.0);
    let pot = Potential::RadialBump {
        radius,
        k_in,
        k_out,
    };
    let v = pot.sample(grid);
    let sol = radial_bump_solution(&|s| k_in * s * (radius - s), radius, &v)?;
    Ok((pot, sol))
}

/// `u₁ ≡ C₁`, `u₂ = φ + C₂` and `u₃ = min{u₁, u₂}` for `|Du|² − Du·Dφ + f(u) = 0`.
pub fn magnetic_solutions(
    phi: &GridFunction,
    c1: f64,
    c2: f64,
) -> Result<(OracleSolution, OracleSolution, OracleSolution)> {
    let grid = *phi.grid();
    let bound = phi.linf_norm();
    if !(c1 <= 0.0) {
        return Err(Error::config(format!("C₁ must be nonpositive, got {c1}")));
    }
    if !(c2 <= -bound) {
        return Err(Error::config(format!(
            "C₂ must be at most −‖φ‖_∞ = {}, got {c2}",
            -bound
        )));
    }
    let u1 = GridFunction::constant(grid, c1);
    let u2 = phi.map(|x| x + c2);
    let u3 = u1.zip_map(&u2, f64::min)?;
    let gap = u2.zip_map(&u1, |a, b| a - b)?;
    let crossings = NodeMask::from_predicate(grid, |i| {
        let g = gap.values();
        (0..grid.dim()).any(|a| {
            let j = grid.shift(i, a, 1);
            let k = grid.shift(i, a, -1);
            g[i] == 0.0 || g[i] * g[j] < 0.0 || g[i] * g[k] < 0.0
        })
    });
    Ok((
        OracleSolution::new(
            u1,
            0.0,
            "magnetic_constant",
            NodeMask::empty(grid),
            "u ≡ C₁",
        ),
        OracleSolution::new(
            u2,
            0.0,
            "magnetic_shifted_phi",
            NodeMask::empty(grid),
            "u = φ + C₂",
        ),
        OracleSolution::new(
            u3,
            0.0,
            "magnetic_min",
            crossings,
            "min{C₁, φ + C₂}; kinks where the branches cross",
        ),
    ))
}

/// Which solver produces a refinement reference.
#[derive(Debug, Clone)]
pub enum ReferenceMode {
    /// The prototype solution at a positive level `c`.
    PrototypePositive { c: f64 },
    /// The damped fixed-point iteration from `u ≡ 0`.
    Ergodic(GMapConfig),
}

/// Runs the solver of `mode` on the fine grid with `n_fine` nodes per axis and
/// restricts the result to `working` by node coincidence.
pub fn refine_reference(
    model: &HamiltonianModel,
    mode: &ReferenceMode,
    n_fine: usize,
    working: PeriodicGrid,
    cfg: &SchemeConfig,
) -> Result<OracleSolution> {
    let nw = working.nodes_per_axis();
    if n_fine < 4 * nw {
        return Err(Error::config(format!(
            "reference grid N={n_fine} must be at least 4× the working N={nw}"
        )));
    }
    if !n_fine.is_multiple_of(nw) {
        return Err(Error::config(format!(
            "reference grid N={n_fine} is not a multiple of the working N={nw}"
        )));
    }
    let fine = PeriodicGrid::new(working.dim(), n_fine)?;
    let (u, c) = match mode {
        ReferenceMode::PrototypePositive { c } => {
            (solve_prototype_positive(model, fine, *c, None, cfg)?.u, *c)
        }
        ReferenceMode::Ergodic(g) => {
            let sol = fixed_point_ergodic(model, &GridFunction::zeros(fine), g)?;
            if !sol.converged {
                return Err(Error::NonConvergence {
                    what: "reference fixed-point iteration".into(),
                    iterations: sol.iterations,
                    residual: sol.history.last().copied().unwrap_or(f64::NAN),
                });
            }
            (sol.u, sol.c)
        }
    };
    Ok(OracleSolution::new(
        u.downsample(working)?,
        c,
        "refine_reference",
        NodeMask::empty(working),
        &format!("solved at N={n_fine}, restricted to N={nw}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::ContactNonlinearity;
    use std::f64::consts::PI;

    #[test]
    fn example4_values() {
        let g = PeriodicGrid::new(1, 512).unwrap();
        let (u1, u2) = example4_solutions(3.0, g).unwrap();
        assert!((u1.u.values()[0] - 0.163_627_124_9).abs() < 1e-9);
        assert!((u2.u.values()[0] - 0.023_872_875_1).abs() < 1e-9);
        assert_eq!(u1.u.values()[256], 0.0);
        assert_eq!(u2.u.values()[256], 0.0);
        assert!((u1.u.linf_distance(&u2.u).unwrap() - 5f64.sqrt() / 16.0).abs() < 1e-12);
        assert!(matches!(example4_solutions(2.0, g), Err(Error::Config(_))));
        let s = example4_shifted(&u1, 3.0, 0.3);
        assert!((s.u.values()[256] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn eikonal_distance_examples() {
        let g = PeriodicGrid::new(1, 1024).unwrap();
        assert_eq!(
            eikonal_distance(&GridFunction::zeros(g), 1.0, 0.0)
                .unwrap()
                .linf_norm(),
            0.0
        );
        let v = GridFunction::from_fn(g, |x| 1.0 - (2.0 * PI * x[0]).cos());
        let d = eikonal_distance(&v, 1.0, 1e-12).unwrap();
        assert!((d.values()[512] - 0.5).abs() < 0.01);
        assert_eq!(d.values()[0], 0.0);
        assert!(d.min() >= 0.0);
        let pos = GridFunction::constant(g, 1.0);
        assert!(matches!(
            eikonal_distance(&pos, 1.0, 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn contact_w_examples() {
        for dim in [1, 2] {
            let g = PeriodicGrid::new(dim, if dim == 1 { 256 } else { 32 }).unwrap();
            assert_eq!(
                contact_eikonal_w(&GridFunction::zeros(g))
                    .unwrap()
                    .u
                    .linf_norm(),
                0.0
            );
            let v = GridFunction::from_fn(g, |x| 1.0 - (2.0 * PI * x[0]).cos());
            let w = contact_eikonal_w(&v).unwrap().u;
            assert!(w.values()[0] <= 1e-6);
            for (a, b) in w.values().iter().zip(v.values()) {
                assert!(*a >= 0.0 && a <= b);
            }
            let k = GridFunction::from_fn(g, |x| if x[0] == 0.0 { 0.0 } else { 0.7 });
            let wk = contact_eikonal_w(&k).unwrap().u;
            assert!(wk.values()[g.len() / 2 + if dim == 2 { 16 } else { 0 }] <= 0.7);
        }
    }

    #[test]
    fn example6_profile() {
        let g = PeriodicGrid::new(2, 64).unwrap();
        let (_, sol) = example6(g).unwrap();
        assert!((sol.u.values()[0] + 16.0 * 0.25f64.powi(3) / 6.0).abs() < 1e-10);
        let h = g.spacing();
        for i in sol.kinks.indices() {
            assert!(sol.u.values()[i].abs() <= h * 0.25 * 0.25 * 4.0 + 1e-12);
        }
        assert!(matches!(
            radial_bump_solution(&|s| s + 1.0, 0.25, &Potential::Zero.sample(g)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn magnetic_examples() {
        let g = PeriodicGrid::new(1, 512).unwrap();
        let phi = GridFunction::from_fn(g, |x| 0.1 * (2.0 * PI * x[0]).sin());
        let (u1, u2, u3) = magnetic_solutions(&phi, 0.0, -0.1).unwrap();
        assert_eq!(u1.u.linf_norm(), 0.0);
        assert!(u2.u.max() <= 0.0 && u2.u.values()[128].abs() < 1e-15);
        assert!(u3.u.max() <= 0.0);
        assert!(matches!(
            magnetic_solutions(&phi, 0.0, -0.05),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            magnetic_solutions(&phi, 0.1, -0.1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reference_grid_rules() {
        let m =
            HamiltonianModel::prototype(1, 2.0, Potential::Zero, ContactNonlinearity::CubicPlus)
                .unwrap();
        let w = PeriodicGrid::new(1, 64).unwrap();
        let cfg = SchemeConfig::default();
        let mode = ReferenceMode::PrototypePositive { c: 0.5 };
        assert!(matches!(
            refine_reference(&m, &mode, 128, w, &cfg),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            refine_reference(&m, &mode, 300, w, &cfg),
            Err(Error::Config(_))
        ));
        let r = refine_reference(&m, &mode, 256, w, &cfg).unwrap();
        let want = 0.5f64.cbrt();
        assert!(r.u.values().iter().all(|v| (v - want).abs() < 1e-9));
        let classical = HamiltonianModel::classical(1, 2.0, Potential::Zero).unwrap();
        let r = refine_reference(
            &classical,
            &ReferenceMode::Ergodic(GMapConfig::default()),
            256,
            w,
            &cfg,
        )
        .unwrap();
        assert_eq!(r.u.linf_norm(), 0.0);
        assert!(r.c.abs() < 1e-12);
    }
}
