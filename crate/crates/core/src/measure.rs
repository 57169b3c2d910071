//! Quadrature discretizations of compactly supported measures and the
//! weighted L² geometry they induce.
//!
//! The named families are graphs over a parameter domain `|ξ| ≤ M`. The flat
//! measure on such a graph is taken to be the pushforward of Lebesgue measure
//! on the parameter domain, so an atom's weight is just its parameter-cell
//! measure (times `|ξ|^{-1/2}` for the cone).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{invalid, LabError, Result};
use crate::sum::{pairwise_sum, pairwise_sum_c};

/// A support point with its quadrature weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

impl Atom {
    pub fn new(point: Vec<f64>, weight: f64) -> Self {
        Self { point, weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// `{(ξ, ξ²) : ξ ∈ ℝ, |ξ| ≤ M}` in ℝ².
    Parabola1D,
    /// `{(ξ, |ξ|²) : ξ ∈ ℝ², |ξ| ≤ M}` in ℝ³.
    Paraboloid2D,
    /// Both sheets `{(ξ, ±|ξ|) : ξ ∈ ℝ³, |ξ| ≤ M}` in ℝ⁴ with density `|ξ|^{-1/2}`.
    Cone3D,
    /// An explicit atom list.
    Custom,
}

impl Family {
    /// Ambient dimension of the support.
    pub fn ambient_dim(self) -> Option<usize> {
        match self {
            Family::Parabola1D => Some(2),
            Family::Paraboloid2D => Some(3),
            Family::Cone3D => Some(4),
            Family::Custom => None,
        }
    }

    /// Endpoint exponent `p₀`: the smallest `p` with a bounded extension
    /// operator into `L^p`.
    pub fn endpoint_exponent(self) -> Option<f64> {
        match self {
            Family::Parabola1D => Some(6.0),
            Family::Paraboloid2D | Family::Cone3D => Some(4.0),
            Family::Custom => None,
        }
    }

    /// Closed-form total mass for truncation `m`.
    pub fn exact_mass(self, m: f64) -> Option<f64> {
        match self {
            Family::Parabola1D => Some(2.0 * m),
            Family::Paraboloid2D => Some(PI * m * m),
            Family::Cone3D => Some(16.0 * PI / 5.0 * m.powf(2.5)),
            Family::Custom => None,
        }
    }

    /// Resolution giving under 1% mass error at `M = 1`.
    pub fn default_resolution(self) -> usize {
        match self {
            Family::Parabola1D => 64,
            Family::Paraboloid2D => 48,
            Family::Cone3D => 8,
            Family::Custom => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Parabola1D => "parabola1d",
            Family::Paraboloid2D => "paraboloid2d",
            Family::Cone3D => "cone3d",
            Family::Custom => "custom",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parabola1d" | "parabola" => Ok(Family::Parabola1D),
            "paraboloid2d" | "paraboloid" => Ok(Family::Paraboloid2D),
            "cone3d" | "cone" => Ok(Family::Cone3D),
            "custom" => Ok(Family::Custom),
            other => invalid(format!("unknown measure family '{other}'")),
        }
    }
}

/// Uniform parameter lattice underlying the parabola and paraboloid families.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLattice {
    /// Parameter dimension (1 or 2).
    pub param_dim: usize,
    /// Cells per axis.
    pub cells: usize,
    pub spacing: f64,
    /// Center of cell 0 on every axis.
    pub origin: f64,
    /// Per-atom lattice multi-index, `param_dim` entries each.
    pub indices: Vec<Vec<usize>>,
}

/// A finite positive measure given by weighted atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
    dim: usize,
    family: Family,
    truncation: f64,
    endpoint_exponent: Option<f64>,
    resolution: Option<usize>,
}

/// Coefficients of a density `ĥ` at the atoms of a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub coeffs: Vec<Complex64>,
}

impl Density {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(n: usize) -> Self {
        Self { coeffs: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn constant(n: usize, value: Complex64) -> Self {
        Self { coeffs: vec![value; n] }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scaled(&self, s: Complex64) -> Density {
        Density { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    /// `self − other`, coefficientwise.
    pub fn sub(&self, other: &Density) -> Density {
        Density { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect() }
    }

    pub fn add(&self, other: &Density) -> Density {
        Density { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl DiscreteMeasure {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn endpoint_exponent(&self) -> Option<f64> {
        self.endpoint_exponent
    }

    pub fn resolution(&self) -> Option<usize> {
        self.resolution
    }

    /// Parameter-space coordinates of atom `j`: the graph variable `ξ` for
    /// the named families, the whole point for custom measures.
    pub fn param(&self, j: usize) -> &[f64] {
        let p = &self.atoms[j].point;
        match self.family {
            Family::Custom => p,
            _ => &p[..self.dim - 1],
        }
    }

    /// `sup_j |ξ_j|` over full ambient points.
    pub fn max_point_norm(&self) -> f64 {
        self.atoms.iter().map(|a| norm(&a.point)).fold(0.0, f64::max)
    }

    /// Sum of the weights, `∫ 1 dµ`.
    pub fn total_mass(&self) -> f64 {
        pairwise_sum(self.atoms.len(), |j| self.atoms[j].weight)
    }

    pub fn check_density(&self, h: &Density) -> Result<()> {
        if h.len() != self.len() {
            return invalid(format!(
                "density has {} coefficients but the measure has {} atoms",
                h.len(),
                self.len()
            ));
        }
        Ok(())
    }

    /// Weighted inner product `Σ_j w_j f_j conj(g_j)`.
    pub fn l2_inner(&self, f: &Density, g: &Density) -> Result<Complex64> {
        self.check_density(f)?;
        self.check_density(g)?;
        Ok(pairwise_sum_c(self.len(), |j| {
            f.coeffs[j] * g.coeffs[j].conj() * self.atoms[j].weight
        }))
    }

    pub fn l2_norm(&self, f: &Density) -> Result<f64> {
        self.check_density(f)?;
        Ok(pairwise_sum(self.len(), |j| f.coeffs[j].norm_sqr() * self.atoms[j].weight).sqrt())
    }

    /// `f / ‖f‖`; fails on the zero density.
    pub fn normalized(&self, f: &Density) -> Result<Density> {
        let n = self.l2_norm(f)?;
        if !(n > 0.0) || !n.is_finite() {
            return Err(LabError::DegenerateInput("cannot normalize a zero density".into()));
        }
        Ok(f.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    /// Discretized `e^{-|ξ|²/2}` in parameter space, unit L² norm.
    pub fn gaussian_density(&self) -> Density {
        let coeffs = (0..self.len())
            .map(|j| Complex64::new((-0.5 * norm_sqr(self.param(j))).exp(), 0.0))
            .collect();
        // every coefficient is positive, so the norm is too
        self.normalized(&Density::new(coeffs)).expect("positive profile")
    }

    /// Lattice description for the parabola/paraboloid families.
    pub fn param_lattice(&self) -> Option<ParamLattice> {
        let param_dim = match self.family {
            Family::Parabola1D => 1,
            Family::Paraboloid2D => 2,
            _ => return None,
        };
        let cells = self.resolution?;
        let spacing = 2.0 * self.truncation / cells as f64;
        let origin = -self.truncation + 0.5 * spacing;
        let indices = (0..self.len())
            .map(|j| {
                self.param(j)
                    .iter()
                    .map(|&x| ((x - origin) / spacing).round() as usize)
                    .collect()
            })
            .collect();
        Some(ParamLattice { param_dim, cells, spacing, origin, indices })
    }

    /// Plain-text atom table: one line per atom, coordinates then weight.
    pub fn to_atom_table(&self) -> String {
        let mut out = String::new();
        for a in &self.atoms {
            let mut fields: Vec<String> = a.point.iter().map(|x| format!("{x:.16e}")).collect();
            fields.push(format!("{:.16e}", a.weight));
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }
}

fn norm_sqr(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    norm_sqr(x).sqrt()
}

/// Carry a density to another lattice measure of the same family by
/// piecewise-constant interpolation on the source cells. Target atoms outside
/// every source cell get zero.
pub fn resample(from: &DiscreteMeasure, h: &Density, to: &DiscreteMeasure) -> Result<Density> {
    from.check_density(h)?;
    if from.family != to.family {
        return invalid(format!("cannot resample {} onto {}", from.family, to.family));
    }
    let (Some(src), Some(_)) = (from.param_lattice(), to.param_lattice()) else {
        return Err(LabError::UnsupportedOperation(format!("{} has no parameter lattice", from.family)));
    };
    let lookup: std::collections::HashMap<&[usize], usize> =
        src.indices.iter().enumerate().map(|(j, idx)| (idx.as_slice(), j)).collect();
    let lower = src.origin - 0.5 * src.spacing;
    let coeffs = (0..to.len())
        .map(|j| {
            let cell: Option<Vec<usize>> = to
                .param(j)
                .iter()
                .map(|&x| {
                    let k = ((x - lower) / src.spacing).floor();
                    (k >= 0.0 && k < src.cells as f64).then_some(k as usize)
                })
                .collect();
            cell.and_then(|c| lookup.get(c.as_slice()).map(|&i| h.coeffs[i]))
                .unwrap_or_default()
        })
        .collect();
    Ok(Density::new(coeffs))
}

/// Parse an atom table. Blank lines and `#` comments are skipped; the
/// dimension is the column count minus one.
pub fn parse_atom_table(text: &str) -> Result<Vec<Atom>> {
    let mut atoms = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let mut values = values
            .map_err(|e| LabError::InvalidArgument(format!("atom table line {}: {e}", lineno + 1)))?;
        if values.len() < 2 {
            return invalid(format!("atom table line {}: need coordinates and a weight", lineno + 1));
        }
        let weight = values.pop().unwrap();
        atoms.push(Atom::new(values, weight));
    }
    Ok(atoms)
}

/// Quadrature discretization of one of the named families.
///
/// `resolution` is the cell count per parameter axis on `[-M, M]` for the
/// parabola and paraboloid. For the cone it is the number of radial cells
/// and of cells in `cos θ`; the azimuth gets twice as many.
pub fn build_family(family: Family, m: f64, resolution: usize) -> Result<DiscreteMeasure> {
    if !(m > 0.0) || !m.is_finite() {
        return invalid(format!("truncation M must be positive, got {m}"));
    }
    if resolution == 0 {
        return invalid("resolution must be at least 1");
    }
    let n = resolution;
    let atoms = match family {
        Family::Parabola1D => {
            let h = 2.0 * m / n as f64;
            (0..n)
                .map(|j| {
                    let xi = -m + (j as f64 + 0.5) * h;
                    Atom::new(vec![xi, xi * xi], h)
                })
                .collect::<Vec<_>>()
        }
        Family::Paraboloid2D => {
            let h = 2.0 * m / n as f64;
            let mut atoms = Vec::new();
            for i in 0..n {
                let a = -m + (i as f64 + 0.5) * h;
                for k in 0..n {
                    let b = -m + (k as f64 + 0.5) * h;
                    let r2 = a * a + b * b;
                    if r2 <= m * m {
                        atoms.push(Atom::new(vec![a, b, r2], h * h));
                    }
                }
            }
            atoms
        }
        Family::Cone3D => {
            let (nr, nu, nphi) = (n, n, 2 * n);
            let dr = m / nr as f64;
            let du = 2.0 / nu as f64;
            let dphi = 2.0 * PI / nphi as f64;
            let mut atoms = Vec::with_capacity(2 * nr * nu * nphi);
            for sheet in [1.0, -1.0] {
                for i in 0..nr {
                    let r = (i as f64 + 0.5) * dr;
                    // r^{-1/2} · r² dr: the cell never touches r = 0.
                    let w = r.powf(1.5) * dr * du * dphi;
                    for k in 0..nu {
                        let u = -1.0 + (k as f64 + 0.5) * du;
                        let s = (1.0 - u * u).sqrt();
                        for l in 0..nphi {
                            let phi = (l as f64 + 0.5) * dphi;
                            let (sp, cp) = phi.sin_cos();
                            atoms.push(Atom::new(vec![r * s * cp, r * s * sp, r * u, sheet * r], w));
                        }
                    }
                }
            }
            atoms
        }
        Family::Custom => {
            return invalid("custom measures are built from an explicit atom list");
        }
    };
    if atoms.is_empty() {
        return invalid(format!("resolution {n} leaves no cell center inside |ξ| ≤ {m}"));
    }
    Ok(DiscreteMeasure {
        atoms,
        dim: family.ambient_dim().unwrap(),
        family,
        truncation: m,
        endpoint_exponent: family.endpoint_exponent(),
        resolution: Some(n),
    })
}

/// A custom measure from explicit atoms.
pub fn build_custom(atoms: Vec<Atom>, dim: usize) -> Result<DiscreteMeasure> {
    if atoms.is_empty() {
        return invalid("custom measure needs at least one atom");
    }
    if dim == 0 {
        return invalid("dimension must be at least 1");
    }
    for (j, a) in atoms.iter().enumerate() {
        if a.point.len() != dim {
            return invalid(format!("atom {j} has dimension {} (expected {dim})", a.point.len()));
        }
        if !(a.weight > 0.0) || !a.weight.is_finite() {
            return invalid(format!("atom {j} has nonpositive weight {}", a.weight));
        }
        if a.point.iter().any(|x| !x.is_finite()) {
            return invalid(format!("atom {j} has a non-finite coordinate"));
        }
    }
    let truncation = atoms.iter().map(|a| norm(&a.point)).fold(0.0, f64::max);
    Ok(DiscreteMeasure {
        atoms,
        dim,
        family: Family::Custom,
        truncation,
        endpoint_exponent: None,
        resolution: None,
    })
}

/// Parabolic rescaling `ξ → λξ` of the 1-D parabola problem.
///
/// The returned density is `λ^{-1/2} ĥ(ξ/λ)`; both the L² norm and the
/// spacetime `L⁶` ratio are unchanged when the spacetime grid is scaled by
/// `(1/λ, 1/λ²)`.
pub fn parabolic_rescale(
    measure: &DiscreteMeasure,
    h: &Density,
    lambda: f64,
) -> Result<(DiscreteMeasure, Density)> {
    if measure.family != Family::Parabola1D {
        return Err(LabError::UnsupportedOperation(format!(
            "parabolic rescaling is defined for parabola1d, not {}",
            measure.family
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("scale factor must be positive, got {lambda}"));
    }
    measure.check_density(h)?;
    let atoms = measure
        .atoms
        .iter()
        .map(|a| {
            let xi = lambda * a.point[0];
            Atom::new(vec![xi, xi * xi], lambda * a.weight)
        })
        .collect();
    let scaled = DiscreteMeasure {
        atoms,
        truncation: lambda * measure.truncation,
        ..measure.clone()
    };
    let density = h.scaled(Complex64::new(lambda.powf(-0.5), 0.0));
    Ok((scaled, density))
}
