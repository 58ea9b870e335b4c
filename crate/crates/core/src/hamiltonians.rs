//! Hamiltonian families `H(x, r, p)` with analytic partial derivatives and sampled
//! checks of the structural assumptions (Lipschitz in `r`, superlinear in `p`,
//! monotone in `r`, jointly convex in `(r, p)`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{GridFunction, PeriodicGrid, Point};

/// Tolerance on the `min V = 0` normalization.
pub const MIN_V_TOL: f64 = 1e-10;

/// Interface shared by every Hamiltonian the schemes can discretize.
///
/// In 1D the second components of `x` and `p` are ignored and the second
/// component of vector-valued derivatives is zero.
pub trait Hamiltonian: Send + Sync {
    fn meta(&self) -> &ModelMeta;
    fn eval(&self, x: Point, r: f64, p: [f64; 2]) -> f64;
    fn d_r(&self, x: Point, r: f64, p: [f64; 2]) -> f64;
    fn d_p(&self, x: Point, r: f64, p: [f64; 2]) -> [f64; 2];
    fn d_x(&self, x: Point, r: f64, p: [f64; 2]) -> [f64; 2];

    /// `Some(p*)` when `H(x, r, ·)` depends on `p` only through `|p − p*|`, increasingly.
    /// Such Hamiltonians admit the upwind flux.
    fn radial_center(&self, _x: Point, _r: f64) -> Option<[f64; 2]> {
        None
    }
}

/// Structural metadata of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelMeta {
    pub dim: usize,
    /// Lipschitz constant `C₁` of `r ↦ H` (over `|r| ≤ r_bound` for superlinear `f`).
    pub lipschitz_r: f64,
    pub monotone_r: bool,
    pub convex_rp: bool,
    pub superlinear_p: bool,
}

/// The contact term `f(r)`: zero for `r ≤ 0`, positive, convex and nondecreasing for `r > 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum ContactNonlinearity {
    /// `f(r) = max(r, 0)`.
    PiecewiseLinear,
    /// `f(r) = max(r, 0)^3`.
    CubicPlus,
    /// Piecewise-linear interpolation through `(0, 0)` and the given knots,
    /// extended linearly past the last knot.
    Table(Vec<(f64, f64)>),
}

impl ContactNonlinearity {
    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::config("contact table needs at least one knot"));
        }
        let mut prev = (0.0, 0.0);
        let mut prev_slope = 0.0;
        for &(r, f) in &knots {
            if !(r > prev.0) || !r.is_finite() || !f.is_finite() {
                return Err(Error::config(
                    "contact table knots must have strictly increasing positive r",
                ));
            }
            if !(f > 0.0) {
                return Err(Error::config("contact table values must be positive"));
            }
            let slope = (f - prev.1) / (r - prev.0);
            if slope < prev_slope {
                return Err(Error::config(
                    "contact table must be convex (nondecreasing slopes)",
                ));
            }
            prev = (r, f);
            prev_slope = slope;
        }
        Ok(ContactNonlinearity::Table(knots))
    }

    fn table_segment(knots: &[(f64, f64)], r: f64) -> (f64, f64, f64) {
        // returns (r0, f0, slope) of the segment containing r (left-closed at knots)
        let mut prev = (0.0, 0.0);
        for (k, &(rk, fk)) in knots.iter().enumerate() {
            let slope = (fk - prev.1) / (rk - prev.0);
            if r <= rk || k + 1 == knots.len() {
                return (prev.0, prev.1, slope);
            }
            prev = (rk, fk);
        }
        unreachable!("table validated non-empty")
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self {
            ContactNonlinearity::PiecewiseLinear => r,
            ContactNonlinearity::CubicPlus => r * r * r,
            ContactNonlinearity::Table(k) => {
                let (r0, f0, s) = Self::table_segment(k, r);
                f0 + s * (r - r0)
            }
        }
    }

    /// `f'(r)`; kinks take the left value, so `f'(0) = 0`.
    pub fn derivative(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self {
            ContactNonlinearity::PiecewiseLinear => 1.0,
            ContactNonlinearity::CubicPlus => 3.0 * r * r,
            ContactNonlinearity::Table(k) => Self::table_segment(k, r).2,
        }
    }

    /// `f⁻¹(c)` for `c > 0`.
    pub fn inverse(&self, c: f64) -> Result<f64> {
        if !(c > 0.0) {
            return Err(Error::config(format!("f⁻¹ is defined on (0, ∞), got {c}")));
        }
        Ok(match self {
            ContactNonlinearity::PiecewiseLinear => c,
            ContactNonlinearity::CubicPlus => c.cbrt(),
            ContactNonlinearity::Table(knots) => {
                let mut prev = (0.0, 0.0);
                let mut out = None;
                for (k, &(rk, fk)) in knots.iter().enumerate() {
                    let slope = (fk - prev.1) / (rk - prev.0);
                    if c <= fk || k + 1 == knots.len() {
                        out = Some(prev.0 + (c - prev.1) / slope);
                        break;
                    }
                    prev = (rk, fk);
                }
                out.expect("table validated non-empty")
            }
        })
    }

    /// Lipschitz constant on `r ≤ r_bound`.
    pub fn lipschitz(&self, r_bound: f64) -> f64 {
        match self {
            ContactNonlinearity::PiecewiseLinear => 1.0,
            ContactNonlinearity::CubicPlus => 3.0 * r_bound.max(0.0).powi(2),
            ContactNonlinearity::Table(k) => {
                let (_, _, s) = Self::table_segment(k, f64::INFINITY);
                s.max(self.derivative(r_bound))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ContactNonlinearity::PiecewiseLinear => "piecewise_linear",
            ContactNonlinearity::CubicPlus => "cubic_plus",
            ContactNonlinearity::Table(_) => "custom_table",
        }
    }
}

/// A field sampled on a grid, interpolated multilinearly between nodes with
/// central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    values: GridFunction,
    grad: [Vec<f64>; 2],
}

impl SampledField {
    pub fn new(values: GridFunction) -> Self {
        let g = *values.grid();
        let h = g.spacing();
        let v = values.values();
        let mut grad = [vec![0.0; g.len()], vec![0.0; g.len()]];
        for (axis, ga) in grad.iter_mut().enumerate().take(g.dim()) {
            for (i, gi) in ga.iter_mut().enumerate() {
                *gi = (v[g.shift(i, axis, 1)] - v[g.shift(i, axis, -1)]) / (2.0 * h);
            }
        }
        SampledField { values, grad }
    }

    pub fn values(&self) -> &GridFunction {
        &self.values
    }

    fn interp(&self, data: &[f64], x: Point) -> f64 {
        let g = self.values.grid();
        let n = g.nodes_per_axis() as f64;
        let s0 = x[0] * n;
        let i0 = s0.floor();
        let t0 = s0 - i0;
        if g.dim() == 1 {
            let a = data[g.flat_index([i0 as i64, 0])];
            if t0 == 0.0 {
                return a;
            }
            let b = data[g.flat_index([i0 as i64 + 1, 0])];
            return a + t0 * (b - a);
        }
        let s1 = x[1] * n;
        let i1 = s1.floor();
        let t1 = s1 - i1;
        let (i0, i1) = (i0 as i64, i1 as i64);
        let f = |a: i64, b: i64| data[g.flat_index([a, b])];
        let lo = f(i0, i1) * (1.0 - t1) + if t1 > 0.0 { f(i0, i1 + 1) * t1 } else { 0.0 };
        if t0 == 0.0 {
            return lo;
        }
        let hi = f(i0 + 1, i1) * (1.0 - t1)
            + if t1 > 0.0 {
                f(i0 + 1, i1 + 1) * t1
            } else {
                0.0
            };
        lo * (1.0 - t0) + hi * t0
    }
}

/// A potential-like scalar field on the torus.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    Expr(Expr),
    /// `¼(x − ½)²` on `[0, 1)`, the periodic potential with a concave kink at `0`.
    Example4,
    /// Radially structured 2D potential: `k_in·s(ρ − s)` inside the disc of radius `ρ`
    /// centred at the origin, `k_out·(s − ρ)²` outside, with `s` the torus distance.
    RadialBump {
        radius: f64,
        k_in: f64,
        k_out: f64,
    },
    Sampled(SampledField),
}

impl Potential {
    pub fn expr(src: &str) -> Result<Self> {
        Ok(Potential::Expr(Expr::parse(src)?))
    }

    fn torus_radius(x: Point) -> (f64, [f64; 2]) {
        let wrap = |d: f64| if d >= 0.5 { d - 1.0 } else { d };
        let (dx, dy) = (wrap(x[0]), wrap(x[1]));
        let s = (dx * dx + dy * dy).sqrt();
        (s, [dx, dy])
    }

    pub fn value(&self, x: Point) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Expr(e) => e.value(x),
            Potential::Example4 => 0.25 * (x[0] - 0.5).powi(2),
            Potential::RadialBump {
                radius,
                k_in,
                k_out,
            } => {
                let (s, _) = Self::torus_radius(x);
                if s <= *radius {
                    k_in * s * (radius - s)
                } else {
                    k_out * (s - radius).powi(2)
                }
            }
            Potential::Sampled(f) => f.interp(f.values.values(), x),
        }
    }

    pub fn grad(&self, x: Point) -> [f64; 2] {
        match self {
            Potential::Zero => [0.0; 2],
            Potential::Expr(e) => e.jet(x).grad,
            Potential::Example4 => [0.5 * (x[0] - 0.5), 0.0],
            Potential::RadialBump {
                radius,
                k_in,
                k_out,
            } => {
                let (s, d) = Self::torus_radius(x);
                if s == 0.0 {
                    return [0.0; 2];
                }
                let ds = if s <= *radius {
                    k_in * (radius - 2.0 * s)
                } else {
                    2.0 * k_out * (s - radius)
                };
                [ds * d[0] / s, ds * d[1] / s]
            }
            Potential::Sampled(f) => [f.interp(&f.grad[0], x), f.interp(&f.grad[1], x)],
        }
    }

    /// Hessian; exact for expressions and closed forms, central differences of the
    /// gradient otherwise.
    pub fn hessian(&self, x: Point) -> [[f64; 2]; 2] {
        match self {
            Potential::Zero => [[0.0; 2]; 2],
            Potential::Expr(e) => e.jet(x).hess,
            Potential::Example4 => [[0.5, 0.0], [0.0, 0.0]],
            _ => {
                let step = 1e-6;
                let mut hess = [[0.0; 2]; 2];
                for (a, row) in hess.iter_mut().enumerate() {
                    let mut xp = x;
                    let mut xm = x;
                    xp[a] += step;
                    xm[a] -= step;
                    let (gp, gm) = (self.grad(xp), self.grad(xm));
                    for b in 0..2 {
                        row[b] = (gp[b] - gm[b]) / (2.0 * step);
                    }
                }
                hess
            }
        }
    }

    pub fn sample(&self, grid: PeriodicGrid) -> GridFunction {
        match self {
            Potential::Sampled(f) if *f.values.grid() == grid => f.values.clone(),
            _ => GridFunction::from_fn(grid, |x| self.value(x)),
        }
    }

    /// Minimum over a dense scan of the torus (or the samples of a sampled field).
    pub fn scan_min(&self, dim: usize) -> f64 {
        match self {
            Potential::Sampled(f) => f.values.min(),
            _ => {
                let n = if dim == 1 { 4096 } else { 256 };
                let g = PeriodicGrid::new(dim, n).expect("valid scan grid");
                (0..g.len())
                    .map(|i| self.value(g.point(i)))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Potential::Expr(e) if dim == 1 && e.uses_y() => {
                Err(Error::config("1D potential expression mentions `y`"))
            }
            Potential::Example4 if dim != 1 => {
                Err(Error::config("the example-4 potential is one-dimensional"))
            }
            Potential::RadialBump { radius, .. } => {
                if dim != 2 {
                    Err(Error::config(
                        "the radial bump potential is two-dimensional",
                    ))
                } else if !(*radius > 0.0 && *radius < 0.5) {
                    Err(Error::config("radial bump radius must lie in (0, 1/2)"))
                } else {
                    Ok(())
                }
            }
            Potential::Sampled(f) if f.values.grid().dim() != dim => Err(Error::config(
                "sampled field dimension does not match the model",
            )),
            _ => Ok(()),
        }
    }

    fn check_periodic(&self, dim: usize) -> Result<()> {
        if let Potential::Expr(e) = self {
            for k in 0..=16 {
                let t = k as f64 / 16.0;
                let pairs: Vec<(Point, Point)> = if dim == 1 {
                    vec![([0.0, 0.0], [1.0, 0.0])]
                } else {
                    vec![([0.0, t], [1.0, t]), ([t, 0.0], [t, 1.0])]
                };
                for (a, b) in pairs {
                    let (va, vb) = (e.value(a), e.value(b));
                    if !va.is_finite() || (va - vb).abs() > 1e-8 * (1.0 + va.abs()) {
                        return Err(Error::config(format!(
                            "expression `{}` is not periodic on the unit torus",
                            e.source()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_normalized(&self, dim: usize, what: &str) -> Result<()> {
        self.check_dim(dim)?;
        self.check_periodic(dim)?;
        let m = self.scan_min(dim);
        if !m.is_finite() || m.abs() > MIN_V_TOL {
            return Err(Error::config(format!(
                "{what} must satisfy min V = 0 (found min {m:.3e})"
            )));
        }
        Ok(())
    }
}

/// The Hamiltonian families of the catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `|p|^m − V(x) + f(r)`.
    Prototype {
        m: f64,
        potential: Potential,
        f: ContactNonlinearity,
    },
    /// `|p|^m − V(x)`, no dependence on `r`.
    Classical { m: f64, potential: Potential },
    /// `|p|² + V(x) − λ r`.
    DiscountedQuadratic { lambda: f64, potential: Potential },
    /// `|p| − V(x) + f(r)`.
    EikonalContact {
        potential: Potential,
        f: ContactNonlinearity,
    },
    /// `|p|² − p·Dφ(x) + f(r)`.
    Magnetic {
        phi: Potential,
        f: ContactNonlinearity,
    },
    /// `r + |p|² − V(x)`.
    StrictMonotoneTest { potential: Potential },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Prototype { .. } => "prototype",
            Family::Classical { .. } => "classical",
            Family::DiscountedQuadratic { .. } => "discounted_quadratic",
            Family::EikonalContact { .. } => "eikonal_contact",
            Family::Magnetic { .. } => "magnetic",
            Family::StrictMonotoneTest { .. } => "strict_monotone_test",
        }
    }
}

/// A concrete Hamiltonian from the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    family: Family,
    meta: ModelMeta,
    r_bound: f64,
}

/// Default range `|r| ≤ 2` over which the Lipschitz constant of a superlinear `f` is taken.
pub const DEFAULT_R_BOUND: f64 = 2.0;

impl HamiltonianModel {
    pub fn prototype(
        dim: usize,
        m: f64,
        potential: Potential,
        f: ContactNonlinearity,
    ) -> Result<Self> {
        Self::make(dim, Family::Prototype { m, potential, f }, DEFAULT_R_BOUND)
    }

    pub fn classical(dim: usize, m: f64, potential: Potential) -> Result<Self> {
        Self::make(dim, Family::Classical { m, potential }, DEFAULT_R_BOUND)
    }

    pub fn discounted_quadratic(dim: usize, lambda: f64, potential: Potential) -> Result<Self> {
        Self::make(
            dim,
            Family::DiscountedQuadratic { lambda, potential },
            DEFAULT_R_BOUND,
        )
    }

    pub fn eikonal_contact(
        dim: usize,
        potential: Potential,
        f: ContactNonlinearity,
    ) -> Result<Self> {
        Self::make(
            dim,
            Family::EikonalContact { potential, f },
            DEFAULT_R_BOUND,
        )
    }

    pub fn magnetic(dim: usize, phi: Potential, f: ContactNonlinearity) -> Result<Self> {
        Self::make(dim, Family::Magnetic { phi, f }, DEFAULT_R_BOUND)
    }

    pub fn strict_monotone_test(dim: usize, potential: Potential) -> Result<Self> {
        Self::make(
            dim,
            Family::StrictMonotoneTest { potential },
            DEFAULT_R_BOUND,
        )
    }

    /// Validates parameters and derives metadata. `r_bound` sets the range used for
    /// the Lipschitz constant of superlinear contact terms.
    pub fn make(dim: usize, family: Family, r_bound: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::config(format!(
                "model dimension must be 1 or 2, got {dim}"
            )));
        }
        if !(r_bound > 0.0) {
            return Err(Error::config("r_bound must be positive"));
        }
        let meta = match &family {
            Family::Prototype { m, potential, f } => {
                if !(*m >= 1.0) || !m.is_finite() {
                    return Err(Error::config(format!("prototype requires m ≥ 1, got {m}")));
                }
                potential.validate_normalized(dim, "prototype potential")?;
                ModelMeta {
                    dim,
                    lipschitz_r: f.lipschitz(r_bound),
                    monotone_r: true,
                    convex_rp: true,
                    superlinear_p: *m > 1.0,
                }
            }
            Family::Classical { m, potential } => {
                if !(*m >= 1.0) || !m.is_finite() {
                    return Err(Error::config(format!(
                        "classical family requires m ≥ 1, got {m}"
                    )));
                }
                potential.check_dim(dim)?;
                potential.check_periodic(dim)?;
                ModelMeta {
                    dim,
                    lipschitz_r: 0.0,
                    monotone_r: true,
                    convex_rp: true,
                    superlinear_p: *m > 1.0,
                }
            }
            Family::DiscountedQuadratic { lambda, potential } => {
                if !(*lambda > 2.0) || !lambda.is_finite() {
                    return Err(Error::config(format!(
                        "discounted_quadratic requires λ > 2, got {lambda}"
                    )));
                }
                potential.validate_normalized(dim, "discounted_quadratic potential")?;
                ModelMeta {
                    dim,
                    lipschitz_r: *lambda,
                    monotone_r: false,
                    convex_rp: true,
                    superlinear_p: true,
                }
            }
            Family::EikonalContact { potential, f } => {
                potential.validate_normalized(dim, "eikonal_contact potential")?;
                ModelMeta {
                    dim,
                    lipschitz_r: f.lipschitz(r_bound),
                    monotone_r: true,
                    convex_rp: true,
                    superlinear_p: false,
                }
            }
            Family::Magnetic { phi, f } => {
                phi.check_dim(dim)?;
                phi.check_periodic(dim)?;
                ModelMeta {
                    dim,
                    lipschitz_r: f.lipschitz(r_bound),
                    monotone_r: true,
                    convex_rp: true,
                    superlinear_p: true,
                }
            }
            Family::StrictMonotoneTest { potential } => {
                potential.validate_normalized(dim, "strict_monotone_test potential")?;
                ModelMeta {
                    dim,
                    lipschitz_r: 1.0,
                    monotone_r: true,
                    convex_rp: true,
                    superlinear_p: true,
                }
            }
        };
        Ok(HamiltonianModel {
            family,
            meta,
            r_bound,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn r_bound(&self) -> f64 {
        self.r_bound
    }

    /// The potential `V` when the family has one (`φ` for the magnetic family).
    pub fn potential(&self) -> &Potential {
        match &self.family {
            Family::Prototype { potential, .. }
            | Family::Classical { potential, .. }
            | Family::DiscountedQuadratic { potential, .. }
            | Family::EikonalContact { potential, .. }
            | Family::StrictMonotoneTest { potential } => potential,
            Family::Magnetic { phi, .. } => phi,
        }
    }

    pub fn nonlinearity(&self) -> Option<&ContactNonlinearity> {
        match &self.family {
            Family::Prototype { f, .. }
            | Family::EikonalContact { f, .. }
            | Family::Magnetic { f, .. } => Some(f),
            _ => None,
        }
    }

    /// Exponent `m` of the `|p|^m` term.
    pub fn power(&self) -> f64 {
        match &self.family {
            Family::Prototype { m, .. } | Family::Classical { m, .. } => *m,
            Family::EikonalContact { .. } => 1.0,
            _ => 2.0,
        }
    }
}

#[inline]
fn norm(p: [f64; 2]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

#[inline]
fn pow_norm(p: [f64; 2], m: f64) -> f64 {
    if m == 2.0 {
        p[0] * p[0] + p[1] * p[1]
    } else {
        norm(p).powf(m)
    }
}

/// Gradient of `|p|^m`, taken as zero at `p = 0`.
#[inline]
fn pow_norm_grad(p: [f64; 2], m: f64) -> [f64; 2] {
    if m == 2.0 {
        return [2.0 * p[0], 2.0 * p[1]];
    }
    let n = norm(p);
    if n == 0.0 {
        return [0.0; 2];
    }
    let s = m * n.powf(m - 2.0);
    [s * p[0], s * p[1]]
}

impl Hamiltonian for HamiltonianModel {
    fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn eval(&self, x: Point, r: f64, p: [f64; 2]) -> f64 {
        match &self.family {
            Family::Prototype { m, potential, f } => {
                pow_norm(p, *m) - potential.value(x) + f.eval(r)
            }
            Family::Classical { m, potential } => pow_norm(p, *m) - potential.value(x),
            Family::DiscountedQuadratic { lambda, potential } => {
                pow_norm(p, 2.0) + potential.value(x) - lambda * r
            }
            Family::EikonalContact { potential, f } => norm(p) - potential.value(x) + f.eval(r),
            Family::Magnetic { phi, f } => {
                let g = phi.grad(x);
                pow_norm(p, 2.0) - (p[0] * g[0] + p[1] * g[1]) + f.eval(r)
            }
            Family::StrictMonotoneTest { potential } => r + pow_norm(p, 2.0) - potential.value(x),
        }
    }

    fn d_r(&self, _x: Point, r: f64, _p: [f64; 2]) -> f64 {
        match &self.family {
            Family::Prototype { f, .. }
            | Family::EikonalContact { f, .. }
            | Family::Magnetic { f, .. } => f.derivative(r),
            Family::Classical { .. } => 0.0,
            Family::DiscountedQuadratic { lambda, .. } => -lambda,
            Family::StrictMonotoneTest { .. } => 1.0,
        }
    }

    fn d_p(&self, x: Point, _r: f64, p: [f64; 2]) -> [f64; 2] {
        let dim1 = |mut v: [f64; 2]| {
            if self.meta.dim == 1 {
                v[1] = 0.0;
            }
            v
        };
        dim1(match &self.family {
            Family::Prototype { m, .. } | Family::Classical { m, .. } => pow_norm_grad(p, *m),
            Family::EikonalContact { .. } => pow_norm_grad(p, 1.0),
            Family::Magnetic { phi, .. } => {
                let g = phi.grad(x);
                [2.0 * p[0] - g[0], 2.0 * p[1] - g[1]]
            }
            Family::DiscountedQuadratic { .. } | Family::StrictMonotoneTest { .. } => {
                pow_norm_grad(p, 2.0)
            }
        })
    }

    fn d_x(&self, x: Point, _r: f64, p: [f64; 2]) -> [f64; 2] {
        let mut out = match &self.family {
            Family::Prototype { potential, .. }
            | Family::Classical { potential, .. }
            | Family::EikonalContact { potential, .. }
            | Family::StrictMonotoneTest { potential } => {
                let g = potential.grad(x);
                [-g[0], -g[1]]
            }
            Family::DiscountedQuadratic { potential, .. } => potential.grad(x),
            Family::Magnetic { phi, .. } => {
                let h = phi.hessian(x);
                [
                    -(h[0][0] * p[0] + h[0][1] * p[1]),
                    -(h[1][0] * p[0] + h[1][1] * p[1]),
                ]
            }
        };
        if self.meta.dim == 1 {
            out[1] = 0.0;
        }
        out
    }

    fn radial_center(&self, x: Point, _r: f64) -> Option<[f64; 2]> {
        match &self.family {
            Family::Magnetic { phi, .. } => {
                let g = phi.grad(x);
                Some([
                    g[0] / 2.0,
                    if self.meta.dim == 2 { g[1] / 2.0 } else { 0.0 },
                ])
            }
            _ => Some([0.0; 2]),
        }
    }
}

/// Samples the example-4 potential `¼(x − ½)²` (periodically extended) on a 1D grid.
pub fn v_example4(grid: PeriodicGrid) -> Result<GridFunction> {
    if grid.dim() != 1 {
        return Err(Error::config("the example-4 potential is one-dimensional"));
    }
    Ok(Potential::Example4.sample(grid))
}

/// Region sampled by [`verify_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleBox {
    pub r_min: f64,
    pub r_max: f64,
    pub p_max: f64,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            r_min: -2.0,
            r_max: 2.0,
            p_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub pass: bool,
    /// The statistic the verdict is based on.
    pub value: f64,
    /// Worst sample `(x0, x1, r, p0, p1)`.
    pub witness: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    /// Empirical `max |H(x,r,p) − H(x,s,p)| / |r − s|`.
    pub lipschitz_r: AssumptionCheck,
    /// `min H(x,0,p)/|p|` at `|p| = 100`, passing when it is at least twice the value at `|p| = 10`.
    pub superlinear_p: AssumptionCheck,
    /// Minimum sampled `H_r`.
    pub monotone_r: AssumptionCheck,
    /// Largest midpoint-convexity defect in `(r, p)`.
    pub convex_rp: AssumptionCheck,
}

/// Monte-Carlo checks of the structural assumptions over `sample_box`.
pub fn verify_assumptions<H: Hamiltonian + ?Sized>(
    model: &H,
    sample_box: SampleBox,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if samples < 100 {
        return Err(Error::config(
            "verify_assumptions needs at least 100 samples",
        ));
    }
    let dim = model.meta().dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_x = |rng: &mut ChaCha8Rng| -> Point {
        if dim == 1 {
            [rng.gen::<f64>(), 0.0]
        } else {
            [rng.gen::<f64>(), rng.gen::<f64>()]
        }
    };
    let draw_p = |rng: &mut ChaCha8Rng| -> [f64; 2] {
        let a = rng.gen_range(-sample_box.p_max..=sample_box.p_max);
        let b = if dim == 1 {
            0.0
        } else {
            rng.gen_range(-sample_box.p_max..=sample_box.p_max)
        };
        [a, b]
    };
    let draw_r = |rng: &mut ChaCha8Rng| rng.gen_range(sample_box.r_min..=sample_box.r_max);

    let mut lip = AssumptionCheck {
        name: "lipschitz_r",
        pass: true,
        value: 0.0,
        witness: [0.0; 5],
    };
    let mut mono = AssumptionCheck {
        name: "monotone_r",
        pass: true,
        value: f64::INFINITY,
        witness: [0.0; 5],
    };
    let mut conv = AssumptionCheck {
        name: "convex_rp",
        pass: true,
        value: 0.0,
        witness: [0.0; 5],
    };
    for _ in 0..samples {
        let x = draw_x(&mut rng);
        let p = draw_p(&mut rng);
        let (r, s) = (draw_r(&mut rng), draw_r(&mut rng));
        if (r - s).abs() > 1e-9 {
            let q = (model.eval(x, r, p) - model.eval(x, s, p)).abs() / (r - s).abs();
            if q > lip.value {
                lip.value = q;
                lip.witness = [x[0], x[1], r, p[0], p[1]];
            }
        }
        let dr = model.d_r(x, r, p);
        if dr < mono.value {
            mono.value = dr;
            mono.witness = [x[0], x[1], r, p[0], p[1]];
        }
        let p2 = draw_p(&mut rng);
        let mid_p = [(p[0] + p2[0]) / 2.0, (p[1] + p2[1]) / 2.0];
        let mid_r = (r + s) / 2.0;
        let (ha, hb) = (model.eval(x, r, p), model.eval(x, s, p2));
        let hm = model.eval(x, mid_r, mid_p);
        let defect = hm - (ha + hb) / 2.0;
        let scale = 1e-9 * (1.0 + ha.abs() + hb.abs());
        if defect - scale > conv.value {
            conv.value = defect - scale;
            conv.witness = [x[0], x[1], mid_r, mid_p[0], mid_p[1]];
        }
    }
    lip.pass = lip.value <= model.meta().lipschitz_r * (1.0 + 1e-9) + 1e-12;
    mono.pass = mono.value >= -1e-12;
    conv.pass = conv.value <= 0.0;

    // superlinearity proxy on rays through every sampled direction
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
    let ratio_at = |rng: &mut ChaCha8Rng, rad: f64| -> (f64, [f64; 5]) {
        let mut worst = (f64::INFINITY, [0.0; 5]);
        for _ in 0..samples.min(400) {
            let x = draw_x(rng);
            for d in &dirs {
                let p = [rad * d[0], rad * d[1]];
                let q = model.eval(x, 0.0, p) / rad;
                if q < worst.0 {
                    worst = (q, [x[0], x[1], 0.0, p[0], p[1]]);
                }
            }
        }
        worst
    };
    let (q10, _) = ratio_at(&mut rng, 10.0);
    let (q100, w100) = ratio_at(&mut rng, 100.0);
    let sup = AssumptionCheck {
        name: "superlinear_p",
        pass: q100 > 0.0 && q100 >= 2.0 * q10,
        value: q100,
        witness: w100,
    };
    Ok(AssumptionReport {
        samples,
        lipschitz_r: lip,
        superlinear_p: sup,
        monotone_r: mono,
        convex_rp: conv,
    })
}

/// `min_x ½H(x,r,p)² + D_xH·p` over sampled `x` and directions at `|p| = radius`.
pub fn coercivity_proxy<H: Hamiltonian + ?Sized>(model: &H, r: f64, radius: f64) -> f64 {
    let dim = model.meta().dim;
    let grid = PeriodicGrid::new(dim, if dim == 1 { 64 } else { 16 }).expect("valid grid");
    let dirs: Vec<[f64; 2]> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 4.0;
                [a.cos(), a.sin()]
            })
            .collect()
    };
    let mut worst = f64::INFINITY;
    for i in 0..grid.len() {
        let x = grid.point(i);
        for d in &dirs {
            let p = [radius * d[0], radius * d[1]];
            let h = model.eval(x, r, p);
            let dx = model.d_x(x, r, p);
            worst = worst.min(0.5 * h * h + dx[0] * p[0] + dx[1] * p[1]);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine() -> Potential {
        Potential::expr("1 - cos(2*pi*x)").unwrap()
    }

    #[test]
    fn prototype_metadata() {
        let m =
            HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::CubicPlus).unwrap();
        assert!(m.meta().monotone_r && m.meta().convex_rp && m.meta().superlinear_p);
        assert_eq!(m.meta().lipschitz_r, 12.0);
    }

    #[test]
    fn discounted_quadratic_examples() {
        let m = HamiltonianModel::discounted_quadratic(1, 3.0, Potential::Example4).unwrap();
        assert!(!m.meta().monotone_r);
        for x in [0.0, 0.3, 0.9] {
            assert_eq!(m.d_r([x, 0.0], 0.7, [1.0, 0.0]), -3.0);
        }
        assert_eq!(m.eval([0.0, 0.0], 0.0, [0.0, 0.0]), 0.0625);
        assert!(HamiltonianModel::discounted_quadratic(1, 1.5, Potential::Example4).is_err());
        assert!(HamiltonianModel::discounted_quadratic(1, 2.0, Potential::Example4).is_err());
    }

    #[test]
    fn min_v_enforced() {
        let shifted = Potential::expr("2 - cos(2*pi*x)").unwrap();
        assert!(matches!(
            HamiltonianModel::prototype(1, 2.0, shifted, ContactNonlinearity::CubicPlus),
            Err(Error::Config(_))
        ));
        let nonperiodic = Potential::expr("x^2").unwrap();
        assert!(
            HamiltonianModel::prototype(1, 2.0, nonperiodic, ContactNonlinearity::CubicPlus)
                .is_err()
        );
        assert!(
            HamiltonianModel::prototype(1, 0.5, cosine(), ContactNonlinearity::CubicPlus).is_err()
        );
    }

    #[test]
    fn eval_examples() {
        let m = HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::PiecewiseLinear)
            .unwrap();
        assert_eq!(m.eval([0.0, 0.0], -1.0, [0.0, 0.0]), 0.0);
        let phi = Potential::expr("0.1*sin(2*pi*x)").unwrap();
        let mag = HamiltonianModel::magnetic(1, phi, ContactNonlinearity::PiecewiseLinear).unwrap();
        assert_eq!(mag.eval([0.37, 0.0], 5.0, [0.0, 0.0]), 5.0);
    }

    #[test]
    fn piecewise_kink_left_value() {
        let f = ContactNonlinearity::PiecewiseLinear;
        assert_eq!(f.derivative(0.0), 0.0);
        assert_eq!(f.derivative(1e-300), 1.0);
    }

    #[test]
    fn nonlinearity_inverse_and_monotone() {
        let table = ContactNonlinearity::table(vec![(1.0, 0.5), (2.0, 2.0), (3.0, 5.0)]).unwrap();
        for f in [
            ContactNonlinearity::PiecewiseLinear,
            ContactNonlinearity::CubicPlus,
            table,
        ] {
            for k in 1..=100 {
                let c = k as f64 * 0.1;
                let r = f.inverse(c).unwrap();
                assert!((f.eval(r) - c).abs() <= 1e-10, "{} at {c}", f.name());
            }
            let mut prev = f64::NEG_INFINITY;
            for k in 0..10_000 {
                let r = -5.0 + k as f64 * 1e-3;
                let v = f.eval(r);
                assert!(v >= prev);
                prev = v;
            }
            assert!(f.inverse(0.0).is_err());
        }
        assert!(ContactNonlinearity::table(vec![(1.0, 2.0), (2.0, 2.5)]).is_err());
    }

    #[test]
    fn example4_potential_samples() {
        let g = PeriodicGrid::new(1, 512).unwrap();
        let v = v_example4(g).unwrap();
        assert_eq!(v.values()[0], 0.0625);
        assert_eq!(v.values()[256], 0.0);
        assert_eq!(v.min(), 0.0);
        assert_eq!(v.argmin(), 256);
        assert!(v_example4(PeriodicGrid::new(2, 8).unwrap()).is_err());
    }

    #[test]
    fn verify_examples() {
        let proto =
            HamiltonianModel::prototype(1, 2.0, cosine(), ContactNonlinearity::CubicPlus).unwrap();
        let rep = verify_assumptions(&proto, SampleBox::default(), 2000, 7).unwrap();
        assert!(
            rep.monotone_r.pass
                && rep.convex_rp.pass
                && rep.superlinear_p.pass
                && rep.lipschitz_r.pass
        );

        let disc = HamiltonianModel::discounted_quadratic(1, 3.0, Potential::Example4).unwrap();
        let rep = verify_assumptions(&disc, SampleBox::default(), 500, 7).unwrap();
        assert!(!rep.monotone_r.pass);
        assert_eq!(rep.monotone_r.value, -3.0);

        let eik =
            HamiltonianModel::eikonal_contact(1, cosine(), ContactNonlinearity::PiecewiseLinear)
                .unwrap();
        let rep = verify_assumptions(&eik, SampleBox::default(), 500, 7).unwrap();
        assert!(!rep.superlinear_p.pass);
        assert!(verify_assumptions(&eik, SampleBox::default(), 99, 7).is_err());
    }

    #[test]
    fn sampled_potential_interpolates() {
        let g = PeriodicGrid::new(1, 64).unwrap();
        let v = cosine().sample(g);
        let s = Potential::Sampled(SampledField::new(v.clone()));
        assert_eq!(s.value(g.point(5)), v.values()[5]);
        let mid = 0.5 * (g.point(5)[0] + g.point(6)[0]);
        assert!((s.value([mid, 0.0]) - cosine().value([mid, 0.0])).abs() < 1e-2);
        let gr = s.grad(g.point(5));
        assert!((gr[0] - cosine().grad(g.point(5))[0]).abs() < 1e-2);
    }

    #[test]
    fn radial_bump_zero_set() {
        let v = Potential::RadialBump {
            radius: 0.25,
            k_in: 16.0,
            k_out: 4.0,
        };
        assert_eq!(v.value([0.0, 0.0]), 0.0);
        assert!(v.value([0.25, 0.0]).abs() < 1e-15);
        assert!(v.value([0.1, 0.0]) > 0.0 && v.value([0.5, 0.5]) > 0.0);
        assert!(
            HamiltonianModel::prototype(2, 1.0, v, ContactNonlinearity::PiecewiseLinear).is_ok()
        );
    }
}
