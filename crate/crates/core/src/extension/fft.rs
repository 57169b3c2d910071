//! Lattice FFT path for the parabola and paraboloid families.
//!
//! With parameter lattice `ξ_m = ξ₀ + mΔξ` and spatial grid
//! `x_a = c + aΔx`, the phase splits as
//! `x_a ξ_m = c ξ_m + aΔx ξ₀ + 2π a m / N` whenever `Δx Δξ = 2π / N`.
//! Each time slice then costs one zero-padded inverse FFT of size `N` per
//! spatial axis instead of a full direct sum.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::{cis, Field, SpaceGrid};
use crate::error::{invalid, LabError, Result};
use crate::measure::{DiscreteMeasure, Density, Family};
use crate::sum::VecAccumulator;

/// Relative mismatch allowed in `Δx Δξ N = 2π`.
const LATTICE_TOL: f64 = 1e-9;

struct Axis {
    fft_size: usize,
    n_points: usize,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Axis")
            .field("fft_size", &self.fft_size)
            .field("n_points", &self.n_points)
            .finish()
    }
}

/// Precomputed FFT plan for one (measure, grid) pair.
#[derive(Debug)]
pub struct FftPlan {
    axes: Vec<Axis>,
    n_atoms: usize,
    /// Flat position of each atom in the padded FFT buffer.
    slots: Vec<usize>,
    /// `w_j e^{i c·ξ_j}`.
    pre: Vec<Complex64>,
    /// `e^{i (x_a − c)·ξ₀}` per spatial output point, row-major.
    post: Vec<Complex64>,
    /// Vertical coordinate `|ξ_j|²` of each atom.
    height: Vec<f64>,
    times: Vec<f64>,
    cell_volume: f64,
}

/// FFT size `N` with `Δx Δξ N = 2π`, if it is an integer `≥ cells`.
fn compatible_size(dx: f64, dxi: f64, cells: usize) -> Option<usize> {
    let exact = 2.0 * PI / (dx * dxi);
    let n = exact.round();
    if n < cells as f64 || ((n - exact) / exact).abs() > LATTICE_TOL {
        None
    } else {
        Some(n as usize)
    }
}

impl FftPlan {
    pub fn new(measure: &DiscreteMeasure, grid: &SpaceGrid) -> Result<Self> {
        if !matches!(measure.family(), Family::Parabola1D | Family::Paraboloid2D) {
            return Err(LabError::UnsupportedOperation(format!(
                "the FFT path needs a parabola or paraboloid measure, not {}",
                measure.family()
            )));
        }
        if measure.dim() != grid.dim() {
            return invalid("measure and grid dimensions differ");
        }
        let lattice = measure
            .param_lattice()
            .ok_or_else(|| LabError::UnsupportedOperation("measure has no parameter lattice".into()))?;
        let k = lattice.param_dim;
        let mut planner = FftPlanner::new();
        let mut axes = Vec::with_capacity(k);
        for axis in 0..k {
            let dx = grid.spacing(axis);
            let size = compatible_size(dx, lattice.spacing, lattice.cells).ok_or_else(|| {
                LabError::UnsupportedOperation(format!(
                    "grid spacing {dx} on axis {axis} is not FFT-compatible with lattice spacing {} \
                     (need Δx·Δξ = 2π/N with integer N ≥ {})",
                    lattice.spacing, lattice.cells
                ))
            })?;
            axes.push(Axis {
                fft_size: size,
                n_points: grid.points()[axis],
                inverse: planner.plan_fft_inverse(size),
                forward: planner.plan_fft_forward(size),
            });
        }
        let slots = lattice
            .indices
            .iter()
            .map(|idx| idx.iter().zip(&axes).fold(0, |acc, (&m, ax)| acc * ax.fft_size + m))
            .collect();
        let corner: Vec<f64> = (0..k).map(|a| grid.coord(a, 0)).collect();
        let pre = measure
            .atoms()
            .iter()
            .map(|at| {
                let phase: f64 = corner.iter().zip(&at.point).map(|(c, xi)| c * xi).sum();
                cis(phase) * at.weight
            })
            .collect();
        let n_spatial: usize = axes.iter().map(|a| a.n_points).product();
        let post = (0..n_spatial)
            .map(|flat| {
                let mut rem = flat;
                let mut phase = 0.0;
                for axis in (0..k).rev() {
                    let a = rem % axes[axis].n_points;
                    rem /= axes[axis].n_points;
                    phase += a as f64 * grid.spacing(axis) * lattice.origin;
                }
                cis(phase)
            })
            .collect();
        Ok(Self {
            n_atoms: measure.len(),
            slots,
            pre,
            post,
            height: measure.atoms().iter().map(|a| a.point[k]).collect(),
            times: grid.axis_coords(k),
            cell_volume: grid.cell_volume(),
            axes,
        })
    }

    fn buffer_len(&self) -> usize {
        self.axes.iter().map(|a| a.fft_size).product()
    }

    fn n_spatial(&self) -> usize {
        self.axes.iter().map(|a| a.n_points).product()
    }

    /// Padded-buffer position of spatial output point `flat`.
    fn wrap(&self, mut flat: usize) -> usize {
        let mut pos = 0;
        let mut stride = 1;
        for ax in self.axes.iter().rev() {
            let a = flat % ax.n_points;
            flat /= ax.n_points;
            pos += (a % ax.fft_size) * stride;
            stride *= ax.fft_size;
        }
        pos
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        match self.axes.len() {
            1 => {
                let ax = &self.axes[0];
                if inverse { ax.inverse.process(buf) } else { ax.forward.process(buf) }
            }
            2 => {
                let (n0, n1) = (self.axes[0].fft_size, self.axes[1].fft_size);
                let (f0, f1) = if inverse {
                    (&self.axes[0].inverse, &self.axes[1].inverse)
                } else {
                    (&self.axes[0].forward, &self.axes[1].forward)
                };
                f1.process(buf);
                let mut col = vec![Complex64::new(0.0, 0.0); n0 * n1];
                for i in 0..n0 {
                    for j in 0..n1 {
                        col[j * n0 + i] = buf[i * n1 + j];
                    }
                }
                f0.process(&mut col);
                for i in 0..n0 {
                    for j in 0..n1 {
                        buf[i * n1 + j] = col[j * n0 + i];
                    }
                }
            }
            _ => unreachable!("lattice dimension is 1 or 2"),
        }
    }

    pub fn apply(&self, h: &Density) -> Result<Field> {
        if h.len() != self.n_atoms {
            return invalid("density length does not match the measure");
        }
        let nt = self.times.len();
        let ns = self.n_spatial();
        let amp: Vec<Complex64> = self.pre.iter().zip(&h.coeffs).map(|(p, c)| p * c).collect();
        let slices: Vec<Vec<Complex64>> = self
            .times
            .par_iter()
            .map(|&t| {
                let mut buf = vec![Complex64::new(0.0, 0.0); self.buffer_len()];
                for j in 0..self.n_atoms {
                    buf[self.slots[j]] = amp[j] * cis(t * self.height[j]);
                }
                self.transform(&mut buf, true);
                (0..ns).map(|s| buf[self.wrap(s)] * self.post[s]).collect()
            })
            .collect();
        let mut values = vec![Complex64::new(0.0, 0.0); ns * nt];
        for (it, slice) in slices.iter().enumerate() {
            for (s, v) in slice.iter().enumerate() {
                values[s * nt + it] = *v;
            }
        }
        Ok(Field::new(values))
    }

    pub fn adjoint(&self, u: &Field) -> Result<Density> {
        let nt = self.times.len();
        let ns = self.n_spatial();
        if u.len() != ns * nt {
            return invalid("field length does not match the grid");
        }
        let slices: Vec<Vec<Complex64>> = self
            .times
            .par_iter()
            .enumerate()
            .map(|(it, &t)| {
                let mut buf = vec![Complex64::new(0.0, 0.0); self.buffer_len()];
                for s in 0..ns {
                    buf[self.wrap(s)] += u.values[s * nt + it] * self.post[s].conj();
                }
                self.transform(&mut buf, false);
                (0..self.n_atoms)
                    .map(|j| buf[self.slots[j]] * cis(-t * self.height[j]))
                    .collect()
            })
            .collect();
        let mut acc = VecAccumulator::new(self.n_atoms);
        for s in slices {
            acc.push(s);
        }
        let sum = acc.finish();
        // pre carries the weight; the adjoint must not, so divide it back out.
        let coeffs = sum
            .iter()
            .zip(&self.pre)
            .map(|(s, p)| s * (p / p.norm()).conj() * self.cell_volume)
            .collect();
        Ok(Density::new(coeffs))
    }
}

/// `T_µ ĥ` through the lattice FFT; agrees with direct summation to
/// rounding.
pub fn extend_fft(measure: &DiscreteMeasure, h: &Density, grid: &SpaceGrid) -> Result<Field> {
    measure.check_density(h)?;
    FftPlan::new(measure, grid)?.apply(h)
}

/// Grid whose spatial spacing is FFT-compatible with the lattice of
/// `measure`: `Δx = 2π / (N Δξ)` on every spatial axis, `n_spatial` points
/// each, plus a time axis on `[-time_half_extent, time_half_extent]`.
pub fn fft_compatible_grid(
    measure: &DiscreteMeasure,
    fft_size: usize,
    n_spatial: usize,
    time_half_extent: f64,
    n_time: usize,
) -> Result<SpaceGrid> {
    let lattice = measure.param_lattice().ok_or_else(|| {
        LabError::UnsupportedOperation(format!("{} has no parameter lattice", measure.family()))
    })?;
    if fft_size < lattice.cells {
        return invalid(format!("FFT size {fft_size} is smaller than the lattice ({})", lattice.cells));
    }
    let dx = 2.0 * PI / (fft_size as f64 * lattice.spacing);
    let mut half = vec![0.5 * dx * n_spatial as f64; lattice.param_dim];
    half.push(time_half_extent);
    let mut points = vec![n_spatial; lattice.param_dim];
    points.push(n_time);
    SpaceGrid::new(half, points)
}
