use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;

use super::PAR_THRESHOLD;

/// A nearest-neighbour linear operator on a periodic grid:
/// `(A v)_i = centre_i v_i + Σ_a (plus_{a,i} v_{i+e_a} + minus_{a,i} v_{i−e_a})`.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilOperator {
    pub grid: PeriodicGrid,
    pub centre: Vec<f64>,
    pub plus: [Vec<f64>; 2],
    pub minus: [Vec<f64>; 2],
}

impl StencilOperator {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        let n = grid.len();
        StencilOperator {
            grid,
            centre: vec![0.0; n],
            plus: [vec![0.0; n], vec![0.0; n]],
            minus: [vec![0.0; n], vec![0.0; n]],
        }
    }

    fn row(&self, v: &[f64], i: usize) -> f64 {
        let g = &self.grid;
        let mut s = self.centre[i] * v[i];
        for a in 0..g.dim() {
            s += self.plus[a][i] * v[g.shift(i, a, 1)] + self.minus[a][i] * v[g.shift(i, a, -1)];
        }
        s
    }

    fn column(&self, s: &[f64], j: usize) -> f64 {
        let g = &self.grid;
        let mut out = self.centre[j] * s[j];
        for a in 0..g.dim() {
            // row j−e_a reaches j through its plus entry, row j+e_a through its minus entry
            let (jm, jp) = (g.shift(j, a, -1), g.shift(j, a, 1));
            out += self.plus[a][jm] * s[jm] + self.minus[a][jp] * s[jp];
        }
        out
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.grid.len());
        if v.len() >= PAR_THRESHOLD {
            (0..v.len())
                .into_par_iter()
                .map(|i| self.row(v, i))
                .collect()
        } else {
            (0..v.len()).map(|i| self.row(v, i)).collect()
        }
    }

    /// Exact transpose `Aᵀ s`.
    pub fn apply_transpose(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.grid.len());
        if s.len() >= PAR_THRESHOLD {
            (0..s.len())
                .into_par_iter()
                .map(|j| self.column(s, j))
                .collect()
        } else {
            (0..s.len()).map(|j| self.column(s, j)).collect()
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                let mut s = self.centre[i];
                for a in 0..self.grid.dim() {
                    s += self.plus[a][i] + self.minus[a][i];
                }
                s
            })
            .collect()
    }

    /// Smallest entry of the operator (nonnegative for a monotone step).
    pub fn min_entry(&self) -> f64 {
        let mut m = self.centre.iter().copied().fold(f64::INFINITY, f64::min);
        for a in 0..self.grid.dim() {
            for v in self.plus[a].iter().chain(&self.minus[a]) {
                m = m.min(*v);
            }
        }
        m
    }
}

/// Solves the periodic tridiagonal system
/// `lower_i x_{i−1} + diag_i x_i + upper_i x_{i+1} = rhs_i` (indices mod `n`)
/// by the Sherman–Morrison reduction to a plain tridiagonal solve.
pub fn solve_cyclic_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n || n < 3 {
        return Err(Error::config(
            "cyclic tridiagonal system needs matching lengths ≥ 3",
        ));
    }
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= upper[n - 1] * lower[0] / gamma;
    let x = thomas(lower, &b, upper, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = upper[n - 1];
    let z = thomas(lower, &b, upper, &u)?;
    let vx = x[0] + lower[0] / gamma * x[n - 1];
    let vz = z[0] + lower[0] / gamma * z[n - 1];
    let denom = 1.0 + vz;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Integrity(
            "singular cyclic tridiagonal system".into(),
        ));
    }
    let f = vx / denom;
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - f * zi).collect())
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut m = diag[0];
    if m == 0.0 {
        return Err(Error::Integrity("zero pivot in tridiagonal solve".into()));
    }
    c[0] = upper[0] / m;
    d[0] = rhs[0] / m;
    for i in 1..n {
        m = diag[i] - lower[i] * c[i - 1];
        if m == 0.0 || !m.is_finite() {
            return Err(Error::Integrity("zero pivot in tridiagonal solve".into()));
        }
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [1, 2] {
            let g = PeriodicGrid::new(dim, 9).unwrap();
            let mut op = StencilOperator::zeros(g);
            let mut fill =
                |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            fill(&mut op.centre);
            for a in 0..dim {
                fill(&mut op.plus[a]);
                fill(&mut op.minus[a]);
            }
            let v: Vec<f64> = (0..g.len()).map(|i| (i as f64).sin()).collect();
            let s: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.7).cos()).collect();
            let lhs: f64 = op.apply(&v).iter().zip(&s).map(|(a, b)| a * b).sum();
            let rhs: f64 = v
                .iter()
                .zip(op.apply_transpose(&s))
                .map(|(a, b)| a * b)
                .sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn cyclic_solve_matches_dense() {
        let n = 11;
        let lower: Vec<f64> = (0..n).map(|i| -0.3 - 0.01 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.5 + 0.02 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * i as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let x = solve_cyclic_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for i in 0..n {
            let r = lower[i] * x[(i + n - 1) % n] + diag[i] * x[i] + upper[i] * x[(i + 1) % n];
            assert!((r - rhs[i]).abs() < 1e-12);
        }
    }
}
