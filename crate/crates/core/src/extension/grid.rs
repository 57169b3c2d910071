use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Uniform cell-centered grid on `Π [-L_i, L_i]`.
///
/// Points are stored row-major with the last axis fastest; "lexicographic
/// index" everywhere in the crate refers to this flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    half_extent: Vec<f64>,
    points: Vec<usize>,
}

impl SpaceGrid {
    pub fn new(half_extent: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if half_extent.is_empty() || half_extent.len() != points.len() {
            return invalid(format!(
                "grid needs matching per-axis extents and point counts ({} vs {})",
                half_extent.len(),
                points.len()
            ));
        }
        if half_extent.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return invalid("grid half-extents must be positive and finite");
        }
        if points.iter().any(|&n| n < 2) {
            return invalid("grid needs at least 2 points per axis");
        }
        Ok(Self { half_extent, points })
    }

    /// Grid with prescribed spacing per axis.
    pub fn with_spacing(spacing: &[f64], points: Vec<usize>) -> Result<Self> {
        if spacing.len() != points.len() {
            return invalid("spacing and point counts differ in length");
        }
        let half = spacing.iter().zip(&points).map(|(&d, &n)| 0.5 * d * n as f64).collect();
        Self::new(half, points)
    }

    /// Same point counts, extents multiplied per axis.
    pub fn scaled(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.dim() {
            return invalid("scale factors must match the grid dimension");
        }
        Self::new(
            self.half_extent.iter().zip(factors).map(|(l, f)| l * f).collect(),
            self.points.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn half_extent(&self) -> &[f64] {
        &self.half_extent
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_extent[axis] / self.points[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i)).product()
    }

    /// Total volume of the truncated domain.
    pub fn volume(&self) -> f64 {
        self.half_extent.iter().map(|l| 2.0 * l).product()
    }

    pub fn coord(&self, axis: usize, k: usize) -> f64 {
        -self.half_extent[axis] + (k as f64 + 0.5) * self.spacing(axis)
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.points[axis]).map(|k| self.coord(axis, k)).collect()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.points[axis];
            flat /= self.points[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.points).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(axis, &k)| self.coord(axis, k))
            .collect()
    }

    /// The cell whose center is closest to the origin (index `⌊n/2⌋` per
    /// axis). It is the origin itself when every point count is odd.
    pub fn center_index(&self) -> Vec<usize> {
        self.points.iter().map(|n| n / 2).collect()
    }

    pub fn center_point(&self) -> Vec<f64> {
        self.center_index().iter().enumerate().map(|(a, &k)| self.coord(a, k)).collect()
    }

    /// [`SpaceGrid::in_outer_shell`] for every point, in flat order.
    pub fn outer_shell_mask(&self) -> Vec<bool> {
        let shell: Vec<Vec<bool>> = (0..self.dim())
            .map(|axis| {
                self.axis_coords(axis)
                    .iter()
                    .map(|x| x.abs() > 0.9 * self.half_extent[axis])
                    .collect()
            })
            .collect();
        let mut mask = vec![false; self.len()];
        let mut idx = vec![0usize; self.dim()];
        for m in mask.iter_mut() {
            *m = idx.iter().enumerate().any(|(axis, &k)| shell[axis][k]);
            for axis in (0..self.dim()).rev() {
                idx[axis] += 1;
                if idx[axis] < self.points[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        mask
    }

    /// Whether the flat point lies in the outer 10% shell of the domain on
    /// any axis.
    pub fn in_outer_shell(&self, flat: usize) -> bool {
        self.multi_index(flat).iter().enumerate().any(|(axis, &k)| {
            self.coord(axis, k).abs() > 0.9 * self.half_extent[axis]
        })
    }
}

/// Values of an extended density on the points of a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<Complex64>,
}

impl Field {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// One row per grid point: coordinates, real part, imaginary part, modulus.
    pub fn to_csv(&self, grid: &SpaceGrid) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = (0..grid.dim()).map(|i| format!("x{i}")).collect();
        header.extend(["re", "im", "modulus"].map(String::from));
        out.push_str(&header.join(","));
        out.push('\n');
        for (flat, z) in self.values.iter().enumerate() {
            let mut row: Vec<String> = grid.point(flat).iter().map(|x| format!("{x:.16e}")).collect();
            row.push(format!("{:.16e}", z.re));
            row.push(format!("{:.16e}", z.im));
            row.push(format!("{:.16e}", z.norm()));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_centers_and_volume() {
        let g = SpaceGrid::new(vec![1.0, 2.0], vec![2, 4]).unwrap();
        assert_eq!(g.axis_coords(0), vec![-0.5, 0.5]);
        assert_eq!(g.axis_coords(1), vec![-1.5, -0.5, 0.5, 1.5]);
        assert_eq!(g.cell_volume(), 1.0);
        assert_eq!(g.volume(), 8.0);
        assert_eq!(g.len(), 8);
    }

    #[test]
    fn flat_and_multi_index_agree() {
        let g = SpaceGrid::new(vec![1.0, 1.0, 1.0], vec![3, 4, 5]).unwrap();
        for flat in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(flat)), flat);
        }
        assert_eq!(g.multi_index(5), vec![0, 1, 0]);
    }

    #[test]
    fn odd_grids_contain_the_origin() {
        let g = SpaceGrid::new(vec![3.0, 1.0], vec![7, 5]).unwrap();
        assert_eq!(g.center_point(), vec![0.0, 0.0]);
        let e = SpaceGrid::new(vec![1.0], vec![4]).unwrap();
        assert_eq!(e.center_point(), vec![0.25]);
    }

    #[test]
    fn invalid_grids() {
        assert!(SpaceGrid::new(vec![1.0], vec![1]).is_err());
        assert!(SpaceGrid::new(vec![0.0], vec![4]).is_err());
        assert!(SpaceGrid::new(vec![1.0, 1.0], vec![4]).is_err());
    }

    #[test]
    fn outer_shell() {
        let g = SpaceGrid::new(vec![1.0], vec![20]).unwrap();
        let shell: Vec<usize> = (0..20).filter(|&k| g.in_outer_shell(k)).collect();
        assert_eq!(shell, vec![0, 19]);
        let g2 = SpaceGrid::new(vec![1.0, 2.0], vec![20, 7]).unwrap();
        let mask = g2.outer_shell_mask();
        for (flat, &m) in mask.iter().enumerate() {
            assert_eq!(m, g2.in_outer_shell(flat));
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = SpaceGrid::new(vec![1.0], vec![2]).unwrap();
        let f = Field::new(vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)]);
        let csv = f.to_csv(&g);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x0,re,im,modulus");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with("5.0000000000000000e0"));
    }
}
