//! Maximizing `‖T_µ ĥ‖_{L^p} / ‖ĥ‖_{L²(dµ)}`.
//!
//! The finite-`p` solver is the nonlinear power iteration
//! `ĥ ← T*(|Tĥ|^{p−2} Tĥ) / ‖·‖`. With an exact discrete adjoint, Hölder
//! gives `‖Tĥ‖_p^p = ⟨ĥ, T*v⟩ ≤ ‖T*v‖ = ⟨Tĥ', v⟩ ≤ ‖Tĥ'‖_p ‖Tĥ‖_p^{p−1}`,
//! so the ratio never decreases. Between steps the iterate is modulated so
//! that the peak of its field moves to the grid center.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{
    brezis_lieb_gap_with, default_p_bar, dichotomy_check, gradient_bound_check_with, interpolation_check,
    DiagnosticsReport, ROUNDING_SLACK,
};
use crate::error::{invalid, LabError, Result};
use crate::extension::{
    abs_pow, argmax_modulus, lp_norm, tail_fraction_masked, translate_modulate, ExtensionOperator, Field,
    SpaceGrid,
};
use crate::measure::{DiscreteMeasure, Density};

/// Iterates averaged into the weak-limit estimate.
const WEAK_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Discretized `e^{-|ξ|²/2}`.
    TruncatedGaussian,
    /// Uniform coefficients in `[-1, 1]²` from the seeded generator.
    RandomComplex,
    Provided(Density),
}

impl Init {
    pub fn name(&self) -> &'static str {
        match self {
            Init::TruncatedGaussian => "gaussian",
            Init::RandomComplex => "random",
            Init::Provided(_) => "provided",
        }
    }
}

impl FromStr for Init {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "truncated_gaussian" => Ok(Init::TruncatedGaussian),
            "random" | "random_complex" => Ok(Init::RandomComplex),
            other => invalid(format!("unknown initializer '{other}' (gaussian or random)")),
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Target exponent, `p > 2`; `f64::INFINITY` selects the closed form.
    pub p: f64,
    pub max_iters: usize,
    /// Relative ratio increment below which the ratio counts as stagnant.
    pub ratio_tol: f64,
    /// `L²(dµ)` increment between recentered iterates.
    pub cauchy_tol: f64,
    pub recenter_every: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            p: 6.0,
            max_iters: 500,
            ratio_tol: 1e-12,
            cauchy_tol: 1e-6,
            recenter_every: 1,
            seed: 0,
            init: Init::TruncatedGaussian,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 2.0) {
            return invalid(format!("p must exceed 2, got {}", self.p));
        }
        if !(self.ratio_tol > 0.0) || !(self.cauchy_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        if self.recenter_every == 0 {
            return invalid("recenter_every must be at least 1");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Record of one maximization run. Histories are indexed by iteration,
/// entry 0 being the (recentered) initial density.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverRun {
    pub p: f64,
    pub final_density: Density,
    pub ratio_history: Vec<f64>,
    pub shifts: Vec<Vec<f64>>,
    /// `‖g_{k} − g_{k−1}‖`; `NaN` at entry 0.
    pub increments: Vec<f64>,
    pub tail_history: Vec<f64>,
    /// `max |T g_k|` per iteration.
    pub field_max: Vec<f64>,
    pub converged: bool,
    /// Tail fraction of the final field.
    pub tail_fraction: f64,
    pub diagnostics: DiagnosticsReport,
    pub used_fft: bool,
}

impl SolverRun {
    pub fn final_ratio(&self) -> f64 {
        *self.ratio_history.last().expect("runs record at least one ratio")
    }

    pub fn iterations(&self) -> usize {
        self.ratio_history.len() - 1
    }

    pub fn last_increment(&self) -> f64 {
        *self.increments.last().expect("runs record at least one increment")
    }

    /// Largest drop between consecutive ratios (zero for a monotone run).
    pub fn worst_ratio_decrease(&self) -> f64 {
        self.ratio_history.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }

    /// CSV with columns `iter, ratio, increment, shift_*, tail_fraction,
    /// field_max`, followed by the diagnostics as `#` comment lines.
    pub fn to_csv(&self) -> String {
        let dim = self.shifts.first().map_or(0, Vec::len);
        let mut header = vec!["iter".to_string(), "ratio".into(), "increment".into()];
        header.extend((0..dim).map(|i| format!("shift_{i}")));
        header.push("tail_fraction".into());
        header.push("field_max".into());
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.ratio_history.len() {
            let mut row = vec![
                k.to_string(),
                format!("{:.16e}", self.ratio_history[k]),
                format!("{:.16e}", self.increments[k]),
            ];
            row.extend(self.shifts[k].iter().map(|s| format!("{s:.16e}")));
            row.push(format!("{:.16e}", self.tail_history[k]));
            row.push(format!("{:.16e}", self.field_max[k]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out.push_str(&format!("# converged={}\n", self.converged));
        out.push_str(&format!("# iterations={}\n", self.iterations()));
        for line in self.diagnostics.to_key_values().lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

fn ratio_of(u: &Field, grid: &SpaceGrid, p: f64, h_norm: f64) -> Result<f64> {
    Ok(lp_norm(u, grid, p)?.value / h_norm)
}

/// `‖T_µ ĥ‖_{L^p} / ‖ĥ‖_{L²(dµ)}`.
pub fn ratio(measure: &DiscreteMeasure, h: &Density, grid: &SpaceGrid, p: f64) -> Result<f64> {
    let norm = measure.l2_norm(h)?;
    if norm == 0.0 {
        return invalid("ratio of the zero density is undefined");
    }
    let op = ExtensionOperator::direct(measure, grid)?;
    ratio_of(&op.apply(h)?, grid, p, norm)
}

/// Rotate so the largest-modulus coefficient (first on ties) is real and
/// positive.
pub fn phase_gauge(h: &Density) -> Density {
    let mut best = (0usize, -1.0f64);
    for (j, c) in h.coeffs.iter().enumerate() {
        let m = c.norm_sqr();
        if m > best.1 {
            best = (j, m);
        }
    }
    let pivot = h.coeffs.get(best.0).copied().unwrap_or_default();
    if pivot.norm() == 0.0 {
        return h.clone();
    }
    h.scaled(pivot.conj() / pivot.norm())
}

fn nonlinearity(u: &Field, p: f64) -> Field {
    Field::new(u.values.iter().map(|z| z * abs_pow(*z, p - 2.0)).collect())
}

fn power_step_with(op: &ExtensionOperator, measure: &DiscreteMeasure, u: &Field, p: f64) -> Result<Density> {
    let g = op.adjoint(&nonlinearity(u, p))?;
    match measure.normalized(&g) {
        Ok(h) => Ok(h),
        Err(_) => Err(LabError::DegenerateInput("power step produced the zero density".into())),
    }
}

/// One nonlinear power step `T*(|Tĥ|^{p−2} Tĥ)`, normalized.
pub fn power_step(measure: &DiscreteMeasure, h: &Density, grid: &SpaceGrid, p: f64) -> Result<Density> {
    if !(p > 2.0 && p.is_finite()) {
        return invalid(format!("power step needs finite p > 2, got {p}"));
    }
    measure.check_density(h)?;
    let op = ExtensionOperator::direct(measure, grid)?;
    power_step_with(&op, measure, &op.apply(h)?, p)
}

/// Linear (`p = 2`) power step `T*T ĥ / ‖·‖`. Only useful for checking the
/// iteration against a dense eigensolver.
#[doc(hidden)]
pub fn power_step_quadratic(measure: &DiscreteMeasure, h: &Density, grid: &SpaceGrid) -> Result<Density> {
    measure.check_density(h)?;
    let op = ExtensionOperator::direct(measure, grid)?;
    power_step_with(&op, measure, &op.apply(h)?, 2.0)
}

/// Lattice shift carrying the flat grid point `peak` to the grid center.
fn shift_to_center(grid: &SpaceGrid, peak: usize) -> Vec<f64> {
    grid.point(peak).iter().zip(grid.center_point()).map(|(a, c)| a - c).collect()
}

/// Modulate `ĥ` so the peak of `|T ĥ|` on the grid lands on the center
/// cell. Returns the modulated density and the shift.
pub fn recenter(measure: &DiscreteMeasure, h: &Density, grid: &SpaceGrid) -> Result<(Density, Vec<f64>)> {
    if measure.l2_norm(h)? == 0.0 {
        return invalid("cannot recenter the zero density");
    }
    let op = ExtensionOperator::direct(measure, grid)?;
    let u = op.apply(h)?;
    let peak = argmax_modulus(&u).expect("grids are nonempty");
    let shift = shift_to_center(grid, peak);
    Ok((translate_modulate(measure, h, &shift)?, shift))
}

/// The `p = ∞` maximizer: the constant density `1/√‖µ‖`, whose field
/// attains the Cauchy–Schwarz bound `√‖µ‖` at the origin.
pub fn maximize_linf(measure: &DiscreteMeasure) -> (Density, f64) {
    let mass = measure.total_mass();
    let value = Complex64::new(1.0 / mass.sqrt(), 0.0);
    (Density::constant(measure.len(), value), mass.sqrt())
}

fn initial_density(measure: &DiscreteMeasure, cfg: &RunConfig) -> Result<Density> {
    let raw = match &cfg.init {
        Init::TruncatedGaussian => measure.gaussian_density(),
        Init::RandomComplex => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Density::new(
                (0..measure.len())
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect(),
            )
        }
        Init::Provided(h) => {
            measure.check_density(h)?;
            h.clone()
        }
    };
    measure
        .normalized(&raw)
        .map_err(|_| LabError::InvalidArgument("initial density is zero".into()))
}

struct Iterate {
    h: Density,
    u: Field,
    ratio: f64,
    shift: Vec<f64>,
}

/// Recenter unless that would lower the windowed ratio.
fn guarded_recenter(
    op: &ExtensionOperator,
    measure: &DiscreteMeasure,
    grid: &SpaceGrid,
    p: f64,
    it: Iterate,
) -> Result<Iterate> {
    let peak = argmax_modulus(&it.u).expect("grids are nonempty");
    let shift = shift_to_center(grid, peak);
    if shift.iter().all(|s| *s == 0.0) {
        return Ok(it);
    }
    let h = phase_gauge(&translate_modulate(measure, &it.h, &shift)?);
    let u = op.apply(&h)?;
    let ratio = ratio_of(&u, grid, p, 1.0)?;
    if ratio >= it.ratio {
        Ok(Iterate { h, u, ratio, shift })
    } else {
        Ok(it)
    }
}

fn numeric_check(it: &Iterate, k: usize) -> Result<()> {
    if !it.u.is_finite() || !it.ratio.is_finite() || !it.h.is_finite() {
        return Err(LabError::NumericFailure { iteration: k, message: "non-finite field value".into() });
    }
    Ok(())
}

fn cesaro_mean(window: &VecDeque<Density>) -> Density {
    let n = window.len() as f64;
    let mut acc = Density::zeros(window[0].len());
    for h in window {
        acc = acc.add(h);
    }
    acc.scaled(Complex64::new(1.0 / n, 0.0))
}

/// Maximize the ratio on `grid`, using the lattice FFT when possible.
pub fn solve(measure: &DiscreteMeasure, grid: &SpaceGrid, cfg: &RunConfig) -> Result<SolverRun> {
    cfg.validate()?;
    let op = ExtensionOperator::auto(measure, grid)?;
    solve_with(&op, measure, grid, cfg)
}

/// [`solve`] with a caller-chosen operator backend.
pub fn solve_with(
    op: &ExtensionOperator,
    measure: &DiscreteMeasure,
    grid: &SpaceGrid,
    cfg: &RunConfig,
) -> Result<SolverRun> {
    cfg.validate()?;
    if measure.dim() != grid.dim() {
        return invalid("measure and grid dimensions differ");
    }
    if cfg.p.is_infinite() {
        return solve_linf(op, measure, grid);
    }
    let p = cfg.p;
    let p_bar = default_p_bar(p, measure.endpoint_exponent()).expect("finite p");
    let mask = grid.outer_shell_mask();
    let dim = grid.dim();

    let mut ratio_history = Vec::new();
    let mut shifts = Vec::new();
    let mut increments = Vec::new();
    let mut tail_history = Vec::new();
    let mut field_max = Vec::new();
    let mut window: VecDeque<Density> = VecDeque::with_capacity(WEAK_WINDOW);
    let mut worst_interp = f64::INFINITY;
    let mut worst_grad: f64 = 0.0;

    let mut record = |it: &Iterate, increment: f64, window: &mut VecDeque<Density>| -> Result<()> {
        ratio_history.push(it.ratio);
        shifts.push(it.shift.clone());
        increments.push(increment);
        tail_history.push(tail_fraction_masked(&it.u, &mask, p));
        field_max.push(lp_norm(&it.u, grid, f64::INFINITY)?.value);
        worst_interp = worst_interp.min(interpolation_check(&it.u, grid, p, p_bar)?.slack);
        worst_grad = worst_grad.max(gradient_bound_check_with(op, measure, &it.h)?.measured_ratio);
        if window.len() == WEAK_WINDOW {
            window.pop_front();
        }
        window.push_back(it.h.clone());
        Ok(())
    };

    let h0 = phase_gauge(&initial_density(measure, cfg)?);
    let u0 = op.apply(&h0)?;
    let r0 = ratio_of(&u0, grid, p, 1.0)?;
    let mut cur = guarded_recenter(op, measure, grid, p, Iterate { h: h0, u: u0, ratio: r0, shift: vec![0.0; dim] })?;
    numeric_check(&cur, 0)?;
    record(&cur, f64::NAN, &mut window)?;

    let mut converged = false;
    for k in 1..=cfg.max_iters {
        let h = phase_gauge(&power_step_with(op, measure, &cur.u, p)?);
        let u = op.apply(&h)?;
        let ratio = ratio_of(&u, grid, p, 1.0)?;
        let mut next = Iterate { h, u, ratio, shift: vec![0.0; dim] };
        numeric_check(&next, k)?;
        if k % cfg.recenter_every == 0 {
            next = guarded_recenter(op, measure, grid, p, next)?;
            numeric_check(&next, k)?;
        }
        let increment = measure.l2_norm(&next.h.sub(&cur.h))?;
        let rel = (next.ratio - cur.ratio).abs() / cur.ratio;
        record(&next, increment, &mut window)?;
        cur = next;
        if rel < cfg.ratio_tol && increment < cfg.cauchy_tol {
            converged = true;
            break;
        }
    }

    let h_bar = cesaro_mean(&window);
    let weak_mass = measure.l2_norm(&h_bar)?;
    let residual_norm = measure.l2_norm(&cur.h.sub(&h_bar))?;
    let diagnostics = DiagnosticsReport {
        weak_mass,
        residual_norm,
        dichotomy: dichotomy_check(weak_mass, residual_norm, p)?,
        bl_gap: brezis_lieb_gap_with(op, grid, p, &cur.h, &h_bar)?,
        interpolation_ok: worst_interp >= -ROUNDING_SLACK,
        interpolation_slack: worst_interp,
        gradient_bound_ok: worst_grad <= 1.0 + ROUNDING_SLACK,
        gradient_ratio: worst_grad,
        theta: Some(p_bar / p),
        p_bar: Some(p_bar),
    };
    Ok(SolverRun {
        p,
        tail_fraction: *tail_history.last().unwrap(),
        final_density: cur.h,
        ratio_history,
        shifts,
        increments,
        tail_history,
        field_max,
        converged,
        diagnostics,
        used_fft: op.is_fft(),
    })
}

fn solve_linf(op: &ExtensionOperator, measure: &DiscreteMeasure, grid: &SpaceGrid) -> Result<SolverRun> {
    let (h, norm) = maximize_linf(measure);
    let u = op.apply(&h)?;
    let grad = gradient_bound_check_with(op, measure, &h)?;
    let diagnostics = DiagnosticsReport {
        weak_mass: 1.0,
        residual_norm: 0.0,
        dichotomy: dichotomy_check(1.0, 0.0, f64::INFINITY)?,
        bl_gap: 0.0,
        interpolation_ok: true,
        interpolation_slack: 0.0,
        gradient_bound_ok: grad.ok,
        gradient_ratio: grad.measured_ratio,
        theta: None,
        p_bar: None,
    };
    let tail = tail_fraction_masked(&u, &grid.outer_shell_mask(), f64::INFINITY);
    Ok(SolverRun {
        p: f64::INFINITY,
        final_density: h,
        ratio_history: vec![norm],
        shifts: vec![vec![0.0; grid.dim()]],
        increments: vec![0.0],
        tail_history: vec![tail],
        field_max: vec![lp_norm(&u, grid, f64::INFINITY)?.value],
        converged: true,
        tail_fraction: tail,
        diagnostics,
        used_fft: op.is_fft(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::{extend, extend_at};
    use crate::diagnostics::Dichotomy;
    use crate::measure::{build_custom, build_family, parabolic_rescale, Atom, Family};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_atom_ratios() {
        let mu = build_custom(vec![Atom::new(vec![0.4, 1.0], 2.25)], 2).unwrap();
        let grid = SpaceGrid::new(vec![2.0, 3.0], vec![5, 6]).unwrap();
        let h = Density::new(vec![c(0.0, -3.0)]);
        assert!((ratio(&mu, &h, &grid, f64::INFINITY).unwrap() - 1.5).abs() < 1e-14);
        // |field| ≡ √w for unit h, so the L^p ratio is √w · V^{1/p}
        let r4 = ratio(&mu, &h, &grid, 4.0).unwrap();
        assert!((r4 - 1.5 * grid.volume().powf(0.25)).abs() < 1e-12);
        assert!(ratio(&mu, &Density::zeros(1), &grid, 4.0).is_err());
    }

    #[test]
    fn single_atom_is_a_fixed_point() {
        let mu = build_custom(vec![Atom::new(vec![1.0], 0.5)], 1).unwrap();
        let grid = SpaceGrid::new(vec![3.0], vec![9]).unwrap();
        let h = mu.normalized(&Density::new(vec![c(1.0, 1.0)])).unwrap();
        let next = power_step(&mu, &h, &grid, 6.0).unwrap();
        // equal up to a global phase
        assert!((next.coeffs[0].norm() - h.coeffs[0].norm()).abs() < 1e-14);
        let run = solve(&mu, &grid, &RunConfig { p: 5.0, ..Default::default() }).unwrap();
        assert!(run.converged);
        assert_eq!(run.iterations(), 1);
        let expected = 0.5f64.sqrt() * grid.volume().powf(1.0 / 5.0);
        assert!((run.final_ratio() - expected).abs() < 1e-12);
        let inf = solve(&mu, &grid, &RunConfig { p: f64::INFINITY, ..Default::default() }).unwrap();
        assert!((inf.final_ratio() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn power_step_rejects_bad_input() {
        let mu = build_family(Family::Parabola1D, 1.0, 4).unwrap();
        let grid = SpaceGrid::new(vec![2.0, 2.0], vec![4, 4]).unwrap();
        assert!(matches!(
            power_step(&mu, &Density::zeros(4), &grid, 6.0),
            Err(LabError::DegenerateInput(_))
        ));
        assert!(power_step(&mu, &mu.gaussian_density(), &grid, 2.0).is_err());
    }

    #[test]
    fn phase_gauge_makes_pivot_positive() {
        let h = Density::new(vec![c(0.1, 0.0), c(0.0, -2.0), c(1.0, 1.0)]);
        let g = phase_gauge(&h);
        assert!(g.coeffs[1].im.abs() < 1e-15 && g.coeffs[1].re > 0.0);
        assert!((g.coeffs[2].norm() - h.coeffs[2].norm()).abs() < 1e-15);
    }

    #[test]
    fn recenter_examples() {
        let mu = build_family(Family::Parabola1D, 1.0, 16).unwrap();
        let grid = SpaceGrid::new(vec![8.0, 8.0], vec![33, 33]).unwrap();
        let h = mu.gaussian_density();
        // Gaussian peaks at the origin, which is the center of an odd grid.
        let (same, shift) = recenter(&mu, &h, &grid).unwrap();
        assert_eq!(shift, vec![0.0, 0.0]);
        assert_eq!(same, h);

        let dx = grid.spacing(0);
        let x0 = vec![3.0 * dx, -2.0 * dx];
        let moved = translate_modulate(&mu, &h, &x0).unwrap();
        let (back, found) = recenter(&mu, &moved, &grid).unwrap();
        assert!((found[0] + x0[0]).abs() < 1e-12 && (found[1] + x0[1]).abs() < 1e-12);
        let peak = extend_at(&mu, &back, &[0.0, 0.0]).unwrap().norm();
        let sup = lp_norm(&extend(&mu, &moved, &grid).unwrap(), &grid, f64::INFINITY).unwrap().value;
        assert!((peak - sup).abs() < 1e-12);
        assert!(recenter(&mu, &Density::zeros(16), &grid).is_err());
    }

    #[test]
    fn linf_maximizer() {
        let mu = build_family(Family::Parabola1D, 1.0, 32).unwrap();
        let (h, norm) = maximize_linf(&mu);
        assert!((norm - 2f64.sqrt()).abs() < 1e-12);
        assert!((mu.l2_norm(&h).unwrap() - 1.0).abs() < 1e-12);
        let two = build_custom(vec![Atom::new(vec![0.0], 1.0), Atom::new(vec![1.0], 3.0)], 1).unwrap();
        assert!((maximize_linf(&two).1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig { p: 2.0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { recenter_every: 0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { cauchy_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn run_csv_layout() {
        let mu = build_family(Family::Parabola1D, 1.0, 8).unwrap();
        let grid = SpaceGrid::new(vec![6.0, 6.0], vec![16, 16]).unwrap();
        let run = solve(&mu, &grid, &RunConfig { max_iters: 3, ..Default::default() }).unwrap();
        let csv = run.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "iter,ratio,increment,shift_0,shift_1,tail_fraction,field_max");
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 1 + run.ratio_history.len());
        assert!(csv.contains("# weak_mass="));
        assert!(csv.contains("# dichotomy="));
    }

    fn random_custom(seed: u64, n: usize, dim: usize) -> DiscreteMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms = (0..n)
            .map(|_| Atom::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), rng.gen_range(0.5..2.0)))
            .collect();
        build_custom(atoms, dim).unwrap()
    }

    #[test]
    fn quadratic_iteration_finds_the_top_eigenvector() {
        use nalgebra::DMatrix;
        let mu = random_custom(11, 7, 2);
        let grid = SpaceGrid::new(vec![3.0, 3.0], vec![10, 12]).unwrap();
        // W^{1/2} T*T W^{-1/2}, Hermitian, assembled from the definition
        let n = mu.len();
        let cv = grid.cell_volume();
        let s = DMatrix::from_fn(n, n, |j, k| {
            let (a, b) = (&mu.atoms()[j], &mu.atoms()[k]);
            let mut acc = c(0.0, 0.0);
            for flat in 0..grid.len() {
                let x = grid.point(flat);
                let phase = x[0] * (b.point[0] - a.point[0]) + x[1] * (b.point[1] - a.point[1]);
                acc += Complex64::from_polar(cv, phase);
            }
            acc * (a.weight * b.weight).sqrt()
        });
        let eig = s.symmetric_eigen();
        let top = (0..n).max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
        let lambda = eig.eigenvalues[top];
        let v = eig.eigenvectors.column(top);
        let expected = Density::new((0..n).map(|j| v[j] / mu.atoms()[j].weight.sqrt()).collect());

        let mut h = mu.normalized(&Density::constant(n, c(1.0, 0.5))).unwrap();
        for _ in 0..400 {
            h = power_step_quadratic(&mu, &h, &grid).unwrap();
        }
        let overlap = mu.l2_inner(&h, &expected).unwrap().norm() / mu.l2_norm(&expected).unwrap();
        assert!((overlap - 1.0).abs() < 1e-10, "overlap {overlap}");
        let r = ratio(&mu, &h, &grid, 2.0).unwrap();
        assert!((r * r - lambda).abs() < 1e-9 * lambda);
    }

    /// `max_{α, φ} ‖T(cos α, sin α e^{iφ})‖_4` for two unit-weight atoms,
    /// by nested grid search with fields summed in place.
    fn two_atom_oracle(mu: &DiscreteMeasure, grid: &SpaceGrid) -> f64 {
        let (a, b) = (&mu.atoms()[0].point, &mu.atoms()[1].point);
        let pts: Vec<Vec<f64>> = (0..grid.len()).map(|f| grid.point(f)).collect();
        let ea: Vec<Complex64> = pts.iter().map(|x| Complex64::from_polar(1.0, x[0] * a[0] + x[1] * a[1])).collect();
        let eb: Vec<Complex64> = pts.iter().map(|x| Complex64::from_polar(1.0, x[0] * b[0] + x[1] * b[1])).collect();
        let value = |al: f64, ph: f64| -> f64 {
            let (ca, sa) = (al.cos(), Complex64::from_polar(al.sin(), ph));
            let s: f64 = ea.iter().zip(&eb).map(|(u, v)| (u * ca + v * sa).norm_sqr().powi(2)).sum();
            (s * grid.cell_volume()).powf(0.25)
        };
        let (mut best, mut al0, mut ph0) = (0.0, 0.0, 0.0);
        let (mut span_a, mut span_p) = (std::f64::consts::FRAC_PI_2, 2.0 * std::f64::consts::PI);
        let (mut lo_a, mut lo_p) = (0.0, 0.0);
        for _ in 0..6 {
            for i in 0..=40 {
                for k in 0..=40 {
                    let (al, ph) = (lo_a + span_a * i as f64 / 40.0, lo_p + span_p * k as f64 / 40.0);
                    let v = value(al, ph);
                    if v > best {
                        (best, al0, ph0) = (v, al, ph);
                    }
                }
            }
            span_a /= 8.0;
            span_p /= 8.0;
            lo_a = al0 - span_a / 2.0;
            lo_p = ph0 - span_p / 2.0;
        }
        best
    }

    #[test]
    fn two_atoms_match_grid_search() {
        let mu = build_custom(vec![Atom::new(vec![0.0, 0.0], 1.0), Atom::new(vec![0.7, 0.3], 1.0)], 2).unwrap();
        let grid = SpaceGrid::new(vec![3.0, 2.0], vec![14, 11]).unwrap();
        let cfg = RunConfig { p: 4.0, max_iters: 2000, ..Default::default() };
        let run = solve(&mu, &grid, &cfg).unwrap();
        let oracle = two_atom_oracle(&mu, &grid);
        assert!((run.final_ratio() - oracle).abs() < 1e-4, "{} vs {oracle}", run.final_ratio());
    }

    #[test]
    fn ratio_is_monotone_over_200_steps() {
        let mu = build_family(Family::Parabola1D, 1.0, 16).unwrap();
        let grid = SpaceGrid::new(vec![8.0, 8.0], vec![32, 32]).unwrap();
        let cfg = RunConfig { p: 6.0, max_iters: 200, ratio_tol: 1e-300, cauchy_tol: 1e-300, ..Default::default() };
        let run = solve(&mu, &grid, &cfg).unwrap();
        assert_eq!(run.iterations(), 200);
        assert!(run.worst_ratio_decrease() <= 1e-12, "{}", run.worst_ratio_decrease());
        assert!(run.diagnostics.interpolation_ok && run.diagnostics.gradient_bound_ok);
    }

    #[test]
    fn above_the_endpoint_the_iterates_converge() {
        let mu = build_family(Family::Parabola1D, 1.0, 16).unwrap();
        let grid = SpaceGrid::new(vec![10.0, 10.0], vec![40, 40]).unwrap();
        let run = solve(&mu, &grid, &RunConfig { p: 8.0, ..Default::default() }).unwrap();
        assert!(run.converged);
        assert!(run.last_increment() < 1e-6);
        assert!(run.diagnostics.weak_mass > 0.99);
        assert_eq!(run.diagnostics.dichotomy.kind, Dichotomy::MassOnLimit);
    }

    #[test]
    fn parabolic_rescale_preserves_the_l6_ratio() {
        let mu = build_family(Family::Parabola1D, 1.0, 24).unwrap();
        let grid = SpaceGrid::new(vec![9.0, 7.0], vec![30, 26]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Density::new((0..24).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
        for lambda in [0.5, 2.0, 3.0] {
            let (mu2, h2) = parabolic_rescale(&mu, &h, lambda).unwrap();
            let grid2 = grid.scaled(&[1.0 / lambda, 1.0 / (lambda * lambda)]).unwrap();
            let (r1, r2) = (ratio(&mu, &h, &grid, 6.0).unwrap(), ratio(&mu2, &h2, &grid2, 6.0).unwrap());
            assert!((r1 - r2).abs() < 1e-10 * r1, "λ={lambda}: {r1} vs {r2}");
        }
    }

    #[test]
    fn translation_and_phase_invariance() {
        let mu = build_family(Family::Parabola1D, 1.0, 16).unwrap();
        let grid = SpaceGrid::new(vec![4.0, 4.0], vec![16, 16]).unwrap();
        let h = mu.normalized(&Density::constant(16, c(1.0, 0.0))).unwrap();
        let base = ratio(&mu, &h, &grid, 6.0).unwrap();
        let rotated = h.scaled(Complex64::from_polar(1.0, 0.7));
        assert!((ratio(&mu, &rotated, &grid, 6.0).unwrap() - base).abs() < 1e-12);
        // a lattice shift keeping the peak on the grid preserves the sup
        let x0 = [2.0 * grid.spacing(0), -grid.spacing(1)];
        let moved = translate_modulate(&mu, &h, &x0).unwrap();
        assert!((mu.l2_norm(&moved).unwrap() - 1.0).abs() < 1e-12);
        let sup = |g: &Density| ratio(&mu, g, &grid, f64::INFINITY).unwrap();
        assert!((sup(&moved) - sup(&h)).abs() < 1e-12);
    }
}
