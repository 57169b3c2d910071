//! The extension operator `ĥ ↦ Σ_j w_j ĥ_j e^{i x·ξ_j}` on a spatial grid,
//! its discrete adjoint, and grid `L^p` norms.

mod fft;
mod grid;

pub use fft::{extend_fft, fft_compatible_grid, FftPlan};
pub use grid::{Field, SpaceGrid};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, LabError, Result};
use crate::measure::{DiscreteMeasure, Density};
use crate::sum::{pairwise_sum, pairwise_sum_c};

fn cis(theta: f64) -> Complex64 {
    let (s, c) = theta.sin_cos();
    Complex64::new(c, s)
}

fn check_dims(measure: &DiscreteMeasure, grid: &SpaceGrid) -> Result<()> {
    if measure.dim() != grid.dim() {
        return invalid(format!(
            "measure lives in dimension {} but the grid has dimension {}",
            measure.dim(),
            grid.dim()
        ));
    }
    Ok(())
}

/// Per-axis phase tables for direct summation.
///
/// `rows[a][k * n_atoms + j] = e^{i x_{a,k} ξ_{j,a}}` and `cols` holds the
/// conjugate transpose, `cols[a][j * n_a + k]`.
#[derive(Debug, Clone)]
pub struct DirectPlan {
    n_atoms: usize,
    points: Vec<usize>,
    weights: Vec<f64>,
    cell_volume: f64,
    rows: Vec<Vec<Complex64>>,
    cols: Vec<Vec<Complex64>>,
}

impl DirectPlan {
    pub fn new(measure: &DiscreteMeasure, grid: &SpaceGrid) -> Result<Self> {
        check_dims(measure, grid)?;
        let na = measure.len();
        let mut rows = Vec::with_capacity(grid.dim());
        let mut cols = Vec::with_capacity(grid.dim());
        for axis in 0..grid.dim() {
            let xs = grid.axis_coords(axis);
            let n = xs.len();
            let mut row = vec![Complex64::new(0.0, 0.0); n * na];
            let mut col = vec![Complex64::new(0.0, 0.0); n * na];
            for (k, &x) in xs.iter().enumerate() {
                for (j, atom) in measure.atoms().iter().enumerate() {
                    let z = cis(x * atom.point[axis]);
                    row[k * na + j] = z;
                    col[j * n + k] = z.conj();
                }
            }
            rows.push(row);
            cols.push(col);
        }
        Ok(Self {
            n_atoms: na,
            points: grid.points().to_vec(),
            weights: measure.atoms().iter().map(|a| a.weight).collect(),
            cell_volume: grid.cell_volume(),
            rows,
            cols,
        })
    }

    fn outer_count(&self) -> usize {
        self.points[..self.points.len() - 1].iter().product()
    }

    fn outer_index(&self, mut o: usize) -> Vec<usize> {
        let d = self.points.len();
        let mut idx = vec![0; d - 1];
        for axis in (0..d - 1).rev() {
            idx[axis] = o % self.points[axis];
            o /= self.points[axis];
        }
        idx
    }

    pub fn apply(&self, h: &Density) -> Result<Field> {
        if h.len() != self.n_atoms {
            return invalid("density length does not match the measure");
        }
        let na = self.n_atoms;
        let d = self.points.len();
        let n_last = self.points[d - 1];
        let last = &self.rows[d - 1];
        let mut values = vec![Complex64::new(0.0, 0.0); self.outer_count() * n_last];
        values.par_chunks_mut(n_last).enumerate().for_each(|(o, out)| {
            let idx = self.outer_index(o);
            let mut amp: Vec<Complex64> =
                (0..na).map(|j| h.coeffs[j] * self.weights[j]).collect();
            for (axis, &k) in idx.iter().enumerate() {
                let row = &self.rows[axis][k * na..(k + 1) * na];
                for (a, z) in amp.iter_mut().zip(row) {
                    *a *= z;
                }
            }
            for (k, v) in out.iter_mut().enumerate() {
                let row = &last[k * na..(k + 1) * na];
                *v = pairwise_sum_c(na, |j| amp[j] * row[j]);
            }
        });
        Ok(Field::new(values))
    }

    pub fn adjoint(&self, u: &Field) -> Result<Density> {
        let d = self.points.len();
        let n_last = self.points[d - 1];
        let n_outer = self.outer_count();
        if u.len() != n_outer * n_last {
            return invalid("field length does not match the grid");
        }
        let outer: Vec<Vec<usize>> = (0..n_outer).map(|o| self.outer_index(o)).collect();
        let coeffs = (0..self.n_atoms)
            .into_par_iter()
            .map(|j| {
                let last = &self.cols[d - 1][j * n_last..(j + 1) * n_last];
                let total = pairwise_sum_c(n_outer, |o| {
                    let row = &u.values[o * n_last..(o + 1) * n_last];
                    let inner = pairwise_sum_c(n_last, |k| row[k] * last[k]);
                    outer[o].iter().enumerate().fold(inner, |acc, (axis, &k)| {
                        acc * self.cols[axis][j * self.points[axis] + k]
                    })
                });
                total * self.cell_volume
            })
            .collect();
        Ok(Density::new(coeffs))
    }
}

/// Forward/adjoint pair used by the solver, backed by direct summation or
/// by the lattice FFT when the measure and grid allow it.
#[derive(Debug)]
pub enum ExtensionOperator {
    Direct(DirectPlan),
    Fft(FftPlan),
}

impl ExtensionOperator {
    pub fn direct(measure: &DiscreteMeasure, grid: &SpaceGrid) -> Result<Self> {
        Ok(Self::Direct(DirectPlan::new(measure, grid)?))
    }

    /// FFT path when available, direct summation otherwise.
    pub fn auto(measure: &DiscreteMeasure, grid: &SpaceGrid) -> Result<Self> {
        check_dims(measure, grid)?;
        match FftPlan::new(measure, grid) {
            Ok(plan) => Ok(Self::Fft(plan)),
            Err(LabError::UnsupportedOperation(_)) => Self::direct(measure, grid),
            Err(e) => Err(e),
        }
    }

    pub fn is_fft(&self) -> bool {
        matches!(self, Self::Fft(_))
    }

    pub fn apply(&self, h: &Density) -> Result<Field> {
        match self {
            Self::Direct(p) => p.apply(h),
            Self::Fft(p) => p.apply(h),
        }
    }

    pub fn adjoint(&self, u: &Field) -> Result<Density> {
        match self {
            Self::Direct(p) => p.adjoint(u),
            Self::Fft(p) => p.adjoint(u),
        }
    }
}

/// `T_µ ĥ` on every grid point by direct summation over atoms.
pub fn extend(measure: &DiscreteMeasure, h: &Density, grid: &SpaceGrid) -> Result<Field> {
    measure.check_density(h)?;
    DirectPlan::new(measure, grid)?.apply(h)
}

/// `T_µ ĥ` at a single point of ℝ^d.
pub fn extend_at(measure: &DiscreteMeasure, h: &Density, x: &[f64]) -> Result<Complex64> {
    measure.check_density(h)?;
    if x.len() != measure.dim() {
        return invalid("evaluation point has the wrong dimension");
    }
    Ok(pairwise_sum_c(measure.len(), |j| {
        let a = &measure.atoms()[j];
        let phase: f64 = a.point.iter().zip(x).map(|(xi, xx)| xi * xx).sum();
        h.coeffs[j] * a.weight * cis(phase)
    }))
}

/// Adjoint of [`extend`] for the weighted inner product on densities and
/// the cell-volume inner product on fields.
pub fn restrict_adjoint(measure: &DiscreteMeasure, u: &Field, grid: &SpaceGrid) -> Result<Density> {
    check_dims(measure, grid)?;
    if u.len() != grid.len() {
        return invalid("field length does not match the grid");
    }
    DirectPlan::new(measure, grid)?.adjoint(u)
}

/// Grid inner product `cell_volume · Σ u conj(v)`.
pub fn grid_inner(u: &Field, v: &Field, grid: &SpaceGrid) -> Result<Complex64> {
    if u.len() != grid.len() || v.len() != grid.len() {
        return invalid("field length does not match the grid");
    }
    Ok(pairwise_sum_c(u.len(), |i| u.values[i] * v.values[i].conj()) * grid.cell_volume())
}

/// Result of [`lp_norm`]. `argmax` is set only for `p = ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpNorm {
    pub value: f64,
    pub argmax: Option<usize>,
}

/// `|z|^p` computed from `|z|²` with integer powers where possible.
#[inline]
pub(crate) fn abs_pow(z: Complex64, p: f64) -> f64 {
    let half = 0.5 * p;
    if half == half.trunc() && half.abs() < 64.0 {
        z.norm_sqr().powi(half as i32)
    } else if p == p.trunc() && p.abs() < 64.0 {
        z.norm().powi(p as i32)
    } else {
        z.norm_sqr().powf(half)
    }
}

/// Index of the largest modulus, smallest index on ties.
pub fn argmax_modulus(u: &Field) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, z) in u.values.iter().enumerate() {
        let m = z.norm_sqr();
        match best {
            Some((_, b)) if m <= b => {}
            _ => best = Some((i, m)),
        }
    }
    best.map(|(i, _)| i)
}

/// Sum `Σ |u|^p` without the cell volume.
pub(crate) fn power_sum(u: &Field, p: f64) -> f64 {
    pairwise_sum(u.len(), |i| abs_pow(u.values[i], p))
}

/// Discrete `L^p` norm on the grid, `p ∈ (1, ∞]`.
pub fn lp_norm(u: &Field, grid: &SpaceGrid, p: f64) -> Result<LpNorm> {
    if !(p > 1.0) {
        return invalid(format!("L^p norm needs p > 1, got {p}"));
    }
    if u.len() != grid.len() {
        return invalid("field length does not match the grid");
    }
    if p.is_infinite() {
        let argmax = argmax_modulus(u);
        let value = argmax.map_or(0.0, |i| u.values[i].norm());
        return Ok(LpNorm { value, argmax });
    }
    let value = (grid.cell_volume() * power_sum(u, p)).powf(1.0 / p);
    Ok(LpNorm { value, argmax: None })
}

/// Share of `Σ|u|^p` carried by the outer 10% shell of the domain.
pub fn tail_fraction(u: &Field, grid: &SpaceGrid, p: f64) -> f64 {
    tail_fraction_masked(u, &grid.outer_shell_mask(), p)
}

/// [`tail_fraction`] with a precomputed [`SpaceGrid::outer_shell_mask`].
/// Infinite `p` falls back to the `L²` share.
pub fn tail_fraction_masked(u: &Field, mask: &[bool], p: f64) -> f64 {
    let p = if p.is_finite() { p } else { 2.0 };
    let total = power_sum(u, p);
    if total == 0.0 {
        return 0.0;
    }
    let shell = pairwise_sum(u.len(), |i| {
        if mask[i] {
            abs_pow(u.values[i], p)
        } else {
            0.0
        }
    });
    shell / total
}

/// Modulation `ĥ_j ↦ e^{i x₀·ξ_j} ĥ_j`, which translates the extension:
/// `T(out)(x) = T(ĥ)(x + x₀)`.
pub fn translate_modulate(measure: &DiscreteMeasure, h: &Density, shift: &[f64]) -> Result<Density> {
    measure.check_density(h)?;
    if shift.len() != measure.dim() {
        return invalid(format!(
            "shift has dimension {} but the measure has dimension {}",
            shift.len(),
            measure.dim()
        ));
    }
    let coeffs = measure
        .atoms()
        .iter()
        .zip(&h.coeffs)
        .map(|(a, c)| {
            let phase: f64 = a.point.iter().zip(shift).map(|(xi, x)| xi * x).sum();
            c * cis(phase)
        })
        .collect();
    Ok(Density::new(coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_custom, build_family, Atom, Family};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_density(rng: &mut ChaCha8Rng, n: usize) -> Density {
        Density::new((0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
    }

    #[test]
    fn single_atom_has_constant_modulus() {
        let mu = build_custom(vec![Atom::new(vec![0.7, -1.3], 0.4)], 2).unwrap();
        let h = Density::new(vec![c(2.0, -1.0)]);
        let grid = SpaceGrid::new(vec![3.0, 2.0], vec![6, 5]).unwrap();
        let u = extend(&mu, &h, &grid).unwrap();
        let expected = 0.4 * 5f64.sqrt();
        for z in &u.values {
            assert!((z.norm() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_density_gives_zero_field() {
        let mu = build_family(Family::Parabola1D, 1.0, 8).unwrap();
        let grid = SpaceGrid::new(vec![2.0, 2.0], vec![4, 4]).unwrap();
        let u = extend(&mu, &Density::zeros(8), &grid).unwrap();
        assert!(u.values.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn two_atoms_three_points_by_hand() {
        let mu = build_custom(vec![Atom::new(vec![0.5], 2.0), Atom::new(vec![-1.5], 0.25)], 1).unwrap();
        let h = Density::new(vec![c(1.0, 1.0), c(-2.0, 0.5)]);
        let grid = SpaceGrid::new(vec![1.5], vec![3]).unwrap();
        let u = extend(&mu, &h, &grid).unwrap();
        for (k, x) in [-1.0f64, 0.0, 1.0].iter().enumerate() {
            let e0 = c((0.5 * x).cos(), (0.5 * x).sin());
            let e1 = c((-1.5 * x).cos(), (-1.5 * x).sin());
            let expected = c(1.0, 1.0) * 2.0 * e0 + c(-2.0, 0.5) * 0.25 * e1;
            assert!((u.values[k] - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mu = build_family(Family::Parabola1D, 1.0, 4).unwrap();
        let grid = SpaceGrid::new(vec![1.0], vec![4]).unwrap();
        assert!(extend(&mu, &Density::zeros(4), &grid).is_err());
        assert!(translate_modulate(&mu, &Density::zeros(4), &[1.0]).is_err());
    }

    #[test]
    fn adjoint_pairing_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let d = rng.gen_range(1..=3);
            let na = rng.gen_range(1..=12);
            let atoms = (0..na)
                .map(|_| Atom::new((0..d).map(|_| rng.gen_range(-3.0..3.0)).collect(), rng.gen_range(0.1..2.0)))
                .collect();
            let mu = build_custom(atoms, d).unwrap();
            let grid = SpaceGrid::new(vec![2.5; d], (0..d).map(|_| rng.gen_range(2..7)).collect()).unwrap();
            let h = random_density(&mut rng, na);
            let u = Field::new((0..grid.len()).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
            let lhs = grid_inner(&extend(&mu, &h, &grid).unwrap(), &u, &grid).unwrap();
            let rhs = mu.l2_inner(&h, &restrict_adjoint(&mu, &u, &grid).unwrap()).unwrap();
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn adjoint_edge_cases() {
        let xi0 = vec![0.8, -0.3];
        let mu = build_custom(vec![Atom::new(xi0.clone(), 1.7)], 2).unwrap();
        let grid = SpaceGrid::new(vec![2.0, 3.0], vec![5, 4]).unwrap();
        let zero = Field::new(vec![c(0.0, 0.0); grid.len()]);
        assert_eq!(restrict_adjoint(&mu, &zero, &grid).unwrap().coeffs, vec![c(0.0, 0.0)]);
        let plane = Field::new(
            (0..grid.len())
                .map(|i| {
                    let x = grid.point(i);
                    cis(x[0] * xi0[0] + x[1] * xi0[1])
                })
                .collect(),
        );
        let a = restrict_adjoint(&mu, &plane, &grid).unwrap();
        assert!((a.coeffs[0] - c(grid.volume(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lp_norm_examples() {
        let grid = SpaceGrid::new(vec![1.5, 2.0], vec![3, 8]).unwrap();
        let v = grid.volume();
        let u = Field::new(vec![c(0.6, -0.8); grid.len()]);
        for p in [1.5, 2.0, 3.0, 7.3] {
            let n = lp_norm(&u, &grid, p).unwrap().value;
            assert!((n - v.powf(1.0 / p)).abs() < 1e-12);
        }
        let mut spike = Field::new(vec![c(0.0, 0.0); grid.len()]);
        spike.values[13] = c(0.0, -4.0);
        let inf = lp_norm(&spike, &grid, f64::INFINITY).unwrap();
        assert_eq!(inf.value, 4.0);
        assert_eq!(inf.argmax, Some(13));
        assert!(lp_norm(&u, &grid, 1.0).is_err());
    }

    #[test]
    fn argmax_ties_take_smallest_index() {
        let u = Field::new(vec![c(1.0, 0.0), c(0.0, 2.0), c(-2.0, 0.0), c(0.0, -2.0)]);
        assert_eq!(argmax_modulus(&u), Some(1));
    }

    #[test]
    fn lp_norm_matches_independent_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = SpaceGrid::new(vec![1.0, 1.0], vec![16, 16]).unwrap();
        let u = Field::new((0..grid.len()).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
        // Kahan-compensated |z|^4 = (re² + im²)², independent of abs_pow.
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for z in &u.values {
            let m = z.re * z.re + z.im * z.im;
            let y = m * m - comp;
            let t = s + y;
            comp = (t - s) - y;
            s = t;
        }
        let oracle = (s * grid.cell_volume()).powf(0.25);
        let n = lp_norm(&u, &grid, 4.0).unwrap().value;
        assert!((n - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn translation_identity_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = build_family(Family::Paraboloid2D, 1.0, 6).unwrap();
        let h = random_density(&mut rng, mu.len());
        let shift = vec![0.7, -2.1, 1.3];
        let g = translate_modulate(&mu, &h, &shift).unwrap();
        assert!((mu.l2_norm(&g).unwrap() - mu.l2_norm(&h).unwrap()).abs() < 1e-15);
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let lhs = extend_at(&mu, &g, &x).unwrap().norm();
            let rhs = extend_at(&mu, &h, &xs).unwrap().norm();
            assert!((lhs - rhs).abs() < 1e-12);
        }
        assert_eq!(translate_modulate(&mu, &h, &[0.0; 3]).unwrap(), h);
    }

    #[test]
    fn linf_bound_on_random_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mu = build_family(Family::Parabola1D, 1.0, 16).unwrap();
        let grid = SpaceGrid::new(vec![10.0, 10.0], vec![21, 21]).unwrap();
        let bound_factor = mu.total_mass().sqrt();
        for _ in 0..20 {
            let h = random_density(&mut rng, mu.len());
            let u = extend(&mu, &h, &grid).unwrap();
            let sup = lp_norm(&u, &grid, f64::INFINITY).unwrap().value;
            assert!(sup <= mu.l2_norm(&h).unwrap() * bound_factor * (1.0 + 1e-12));
        }
    }

    #[test]
    fn finite_difference_gradient_respects_bound() {
        let mu = build_family(Family::Parabola1D, 1.0, 16).unwrap();
        let h = mu.gaussian_density();
        let grid = SpaceGrid::new(vec![4.0, 4.0], vec![81, 81]).unwrap();
        let u = extend(&mu, &h, &grid).unwrap();
        let dx = grid.spacing(0);
        let n = 81;
        let mut sup = 0.0f64;
        for i in 0..n - 1 {
            for k in 0..n - 1 {
                let z = u.values[i * n + k];
                let gx = (u.values[(i + 1) * n + k] - z) / dx;
                let gt = (u.values[i * n + k + 1] - z) / dx;
                sup = sup.max((gx.norm_sqr() + gt.norm_sqr()).sqrt());
            }
        }
        let bound = mu.total_mass().sqrt() * mu.max_point_norm() * mu.l2_norm(&h).unwrap();
        // forward differences overshoot by at most O(dx · second derivative)
        assert!(sup <= bound * (1.0 + dx));
    }

    proptest! {
        #[test]
        fn extend_is_linear(
            a in (-2.0f64..2.0, -2.0f64..2.0),
            b in (-2.0f64..2.0, -2.0f64..2.0),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = build_family(Family::Parabola1D, 1.0, 6).unwrap();
            let grid = SpaceGrid::new(vec![3.0, 3.0], vec![5, 4]).unwrap();
            let f = random_density(&mut rng, 6);
            let g = random_density(&mut rng, 6);
            let (a, b) = (c(a.0, a.1), c(b.0, b.1));
            let combo = f.scaled(a).add(&g.scaled(b));
            let lhs = extend(&mu, &combo, &grid).unwrap();
            let uf = extend(&mu, &f, &grid).unwrap();
            let ug = extend(&mu, &g, &grid).unwrap();
            for i in 0..grid.len() {
                let rhs = uf.values[i] * a + ug.values[i] * b;
                prop_assert!((lhs.values[i] - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
            }
        }
    }
}
