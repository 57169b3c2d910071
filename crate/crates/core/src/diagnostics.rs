//! Runtime checks mirroring the compactness argument: Brézis–Lieb
//! splitting, the convexity dichotomy, the `L^p` interpolation inequality
//! and the uniform gradient bound.

use std::fmt;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::extension::{lp_norm, power_sum, ExtensionOperator, Field, SpaceGrid};
use crate::measure::{DiscreteMeasure, Density};

/// Norm below which one side of the dichotomy is declared empty.
pub const DICHOTOMY_THRESHOLD: f64 = 0.05;

/// Rounding slack for inequalities that hold exactly in exact arithmetic.
pub const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dichotomy {
    /// The residual `h_n − h̄` vanishes: all mass sits on the limit.
    MassOnLimit,
    /// The limit vanishes: all mass escaped.
    MassEscaped,
    Undetermined,
}

impl fmt::Display for Dichotomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dichotomy::MassOnLimit => "mass_on_limit",
            Dichotomy::MassEscaped => "mass_escaped",
            Dichotomy::Undetermined => "undetermined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DichotomyVerdict {
    pub kind: Dichotomy,
    /// `(a^p + b^p)^{2/p} − (a² + b²)`, never positive for `p > 2`.
    pub delta: f64,
    pub threshold: f64,
}

/// Classify a splitting `1 ≈ a² + b²` with `a = ‖h_n − h̄‖`, `b = ‖h̄‖`.
pub fn dichotomy_check(norm_limit: f64, norm_residual: f64, p: f64) -> Result<DichotomyVerdict> {
    dichotomy_check_with(norm_limit, norm_residual, p, DICHOTOMY_THRESHOLD)
}

pub fn dichotomy_check_with(
    norm_limit: f64,
    norm_residual: f64,
    p: f64,
    threshold: f64,
) -> Result<DichotomyVerdict> {
    if !(p > 2.0) {
        return invalid(format!("the dichotomy needs p > 2, got {p}"));
    }
    if !(norm_limit >= 0.0) || !(norm_residual >= 0.0) {
        return invalid("norms must be nonnegative");
    }
    let (a, b) = (norm_residual, norm_limit);
    let lp = if p.is_infinite() { a.max(b) } else { lp_pair(a, b, p) };
    let delta = lp * lp - (a * a + b * b);
    let kind = if a < threshold {
        Dichotomy::MassOnLimit
    } else if b < threshold {
        Dichotomy::MassEscaped
    } else {
        Dichotomy::Undetermined
    };
    Ok(DichotomyVerdict { kind, delta, threshold })
}

/// `(a^p + b^p)^{1/p}` without overflow.
fn lp_pair(a: f64, b: f64, p: f64) -> f64 {
    let m = a.max(b);
    if m == 0.0 {
        return 0.0;
    }
    let (x, y) = (a / m, b / m);
    m * (x.powf(p) + y.powf(p)).powf(1.0 / p)
}

/// Residual of the Brézis–Lieb splitting
/// `‖Th_n − Th̄‖_p^p = ‖Th_n‖_p^p − ‖Th̄‖_p^p + o(1)`.
pub fn brezis_lieb_gap(
    measure: &DiscreteMeasure,
    grid: &SpaceGrid,
    p: f64,
    h_n: &Density,
    h_bar: &Density,
) -> Result<f64> {
    let op = ExtensionOperator::direct(measure, grid)?;
    measure.check_density(h_n)?;
    measure.check_density(h_bar)?;
    brezis_lieb_gap_with(&op, grid, p, h_n, h_bar)
}

pub(crate) fn brezis_lieb_gap_with(
    op: &ExtensionOperator,
    grid: &SpaceGrid,
    p: f64,
    h_n: &Density,
    h_bar: &Density,
) -> Result<f64> {
    if !(p > 2.0) || !p.is_finite() {
        return invalid(format!("Brézis–Lieb gap needs finite p > 2, got {p}"));
    }
    let un = op.apply(h_n)?;
    let ub = op.apply(h_bar)?;
    let diff = Field::new(un.values.iter().zip(&ub.values).map(|(a, b)| a - b).collect());
    let cv = grid.cell_volume();
    let split = cv * power_sum(&diff, p);
    let whole = cv * power_sum(&un, p) - cv * power_sum(&ub, p);
    Ok((split - whole).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationCheck {
    pub ok: bool,
    /// `‖u‖_{p̄}^θ ‖u‖_∞^{1−θ} − ‖u‖_p`.
    pub slack: f64,
    pub theta: f64,
}

/// Check `‖u‖_p ≤ ‖u‖_{p̄}^θ ‖u‖_∞^{1−θ}` with `θ = p̄/p`.
pub fn interpolation_check(u: &Field, grid: &SpaceGrid, p: f64, p_bar: f64) -> Result<InterpolationCheck> {
    if !(p_bar > 1.0 && p_bar < p && p.is_finite()) {
        return invalid(format!("interpolation needs 1 < p̄ < p < ∞, got p̄={p_bar}, p={p}"));
    }
    let theta = p_bar / p;
    let lhs = lp_norm(u, grid, p)?.value;
    let low = lp_norm(u, grid, p_bar)?.value;
    let sup = lp_norm(u, grid, f64::INFINITY)?.value;
    let rhs = low.powf(theta) * sup.powf(1.0 - theta);
    let slack = rhs - lhs;
    Ok(InterpolationCheck { ok: slack >= -ROUNDING_SLACK * rhs.max(1.0), slack, theta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub ok: bool,
    /// `sup |∇ T ĥ| / (√‖µ‖ · sup|ξ| · ‖ĥ‖)`; zero when the bound is zero.
    pub measured_ratio: f64,
}

/// Check `sup_x |∇_x T ĥ| ≤ √‖µ‖ · sup|ξ| · ‖ĥ‖` using the exact gradient
/// `∂_i T ĥ = T(i ξ_i ĥ)`.
pub fn gradient_bound_check(measure: &DiscreteMeasure, h: &Density, grid: &SpaceGrid) -> Result<GradientCheck> {
    measure.check_density(h)?;
    let op = ExtensionOperator::direct(measure, grid)?;
    gradient_bound_check_with(&op, measure, h)
}

pub(crate) fn gradient_bound_check_with(
    op: &ExtensionOperator,
    measure: &DiscreteMeasure,
    h: &Density,
) -> Result<GradientCheck> {
    let norm = measure.l2_norm(h)?;
    if norm == 0.0 {
        return invalid("gradient bound check needs a nonzero density");
    }
    let mut sq: Option<Vec<f64>> = None;
    for axis in 0..measure.dim() {
        let dh = Density::new(
            measure
                .atoms()
                .iter()
                .zip(&h.coeffs)
                .map(|(a, c)| c * Complex64::new(0.0, a.point[axis]))
                .collect(),
        );
        let g = op.apply(&dh)?;
        match sq.as_mut() {
            None => sq = Some(g.values.iter().map(|z| z.norm_sqr()).collect()),
            Some(acc) => acc.iter_mut().zip(&g.values).for_each(|(s, z)| *s += z.norm_sqr()),
        }
    }
    let sup = sq.unwrap_or_default().into_iter().fold(0.0, f64::max).sqrt();
    let bound = measure.total_mass().sqrt() * measure.max_point_norm() * norm;
    let measured_ratio = if bound > 0.0 { sup / bound } else { 0.0 };
    Ok(GradientCheck { ok: measured_ratio <= 1.0 + ROUNDING_SLACK, measured_ratio })
}

/// Intermediate exponent used for the interpolation check: halfway between
/// `max(2, p₀)` (when `p₀ < p`) and `p`.
pub fn default_p_bar(p: f64, endpoint: Option<f64>) -> Option<f64> {
    if !p.is_finite() {
        return None;
    }
    let lower = match endpoint {
        Some(p0) if p0 < p => p0.max(2.0),
        _ => 2.0,
    };
    Some(0.5 * (lower + p))
}

/// Summary attached to every solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    /// Norm of the Cesàro mean of the trailing iterates, the stand-in for
    /// the weak limit `h̄`.
    pub weak_mass: f64,
    /// `‖h_last − h̄‖`.
    pub residual_norm: f64,
    pub dichotomy: DichotomyVerdict,
    pub bl_gap: f64,
    pub interpolation_ok: bool,
    pub interpolation_slack: f64,
    pub gradient_bound_ok: bool,
    pub gradient_ratio: f64,
    pub theta: Option<f64>,
    pub p_bar: Option<f64>,
}

impl DiagnosticsReport {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:.16e}"));
        let lines = [
            format!("weak_mass={:.16e}", self.weak_mass),
            format!("residual_norm={:.16e}", self.residual_norm),
            format!("dichotomy={}", self.dichotomy.kind),
            format!("dichotomy_delta={:.16e}", self.dichotomy.delta),
            format!("dichotomy_threshold={}", self.dichotomy.threshold),
            format!("bl_gap={:.16e}", self.bl_gap),
            format!("interpolation_ok={}", self.interpolation_ok),
            format!("interpolation_slack={:.16e}", self.interpolation_slack),
            format!("gradient_bound_ok={}", self.gradient_bound_ok),
            format!("gradient_ratio={:.16e}", self.gradient_ratio),
            format!("theta={}", opt(self.theta)),
            format!("p_bar={}", opt(self.p_bar)),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
