//! Uniform radial grids, their quadrature, and the phase-space state `(u, u_t)`.
//!
//! Every field is radial. A grid stores two families of coefficients:
//!
//! * node weights `w_i ≈ ω_d r_i^{d-1} h` (trapezoid on `r^{d-1} dr`), with the
//!   boundary weight chosen so that the constant function integrates to the
//!   exact ball volume `ω_d r_max^d / d`;
//! * edge coefficients `s_{i+1/2} = ω_d (r_i r_{i+1})^{(d-1)/2} / h` for the
//!   discrete Dirichlet form `Σ s (u_{i+1} - u_i)^2 ≈ ‖∇u‖²`.
//!
//! The discrete Laplacian is `-(W^{-1} S)`, which is self-adjoint in the
//! weighted inner product. For `d = 3` it reduces exactly to the standard
//! second difference of `r u`, i.e. the sine-transform Laplacian.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use crate::error::{LabError, Result};

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Γ(d/2) for positive integer d.
fn gamma_half(d: usize) -> f64 {
    if d % 2 == 0 {
        (1..d / 2).map(|k| k as f64).product()
    } else {
        // Γ(1/2) = √π, Γ(x + 1) = x Γ(x)
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < d as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Volume of the ball of radius `r` in `R^d`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    sphere_area(d) * r.powi(d as i32) / d as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    dim: usize,
    radii: Vec<f64>,
    spacing: f64,
    staggered: bool,
    weights: Vec<f64>,
    edges: Vec<f64>,
}

impl RadialGrid {
    /// Builds a uniform grid with `n` nodes ending at `r_max`.
    ///
    /// Nodes are `r_i = i h` or, when `staggered`, `r_i = (i + 1/2) h`.
    pub fn new(dim: usize, n: usize, r_max: f64, staggered: bool) -> Result<Self> {
        if dim < 2 {
            return Err(LabError::Config(format!("dimension must be >= 2, got {dim}")));
        }
        if n < 3 {
            return Err(LabError::Config(format!("need at least 3 nodes, got {n}")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(LabError::Config(format!("r_max must be positive, got {r_max}")));
        }
        let (spacing, offset) = if staggered {
            let h = r_max / (n as f64 - 0.5);
            (h, 0.5 * h)
        } else {
            (r_max / (n - 1) as f64, 0.0)
        };
        let mut radii: Vec<f64> = (0..n).map(|i| offset + i as f64 * spacing).collect();
        radii[n - 1] = r_max;

        let omega = sphere_area(dim);
        let a = (dim - 1) as f64 / 2.0;
        let mut weights: Vec<f64> = radii
            .iter()
            .map(|&r| omega * r.powi(dim as i32 - 1) * spacing)
            .collect();
        let interior: f64 = weights[..n - 1].iter().sum();
        let closing = ball_volume(dim, r_max) - interior;
        if closing <= 0.0 {
            return Err(LabError::Config(format!(
                "grid too coarse: boundary weight {closing} is not positive"
            )));
        }
        weights[n - 1] = closing;

        let edges = radii
            .windows(2)
            .map(|p| omega * (p[0] * p[1]).powf(a) / spacing)
            .collect();

        Ok(Self {
            dim,
            radii,
            spacing,
            staggered,
            weights,
            edges,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn r_max(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }

    pub fn staggered(&self) -> bool {
        self.staggered
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Edge coefficients `s_{i+1/2}` of the discrete Dirichlet form.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Midpoint radius of edge `i` (between nodes `i` and `i + 1`).
    pub fn edge_radius(&self, i: usize) -> f64 {
        0.5 * (self.radii[i] + self.radii[i + 1])
    }

    /// First node carrying a degree of freedom. On a node-centred grid the
    /// origin has zero weight and is slaved to its neighbours.
    pub fn first_active(&self) -> usize {
        usize::from(!self.staggered)
    }

    /// Range of nodes evolved by the dynamics (the boundary node is Dirichlet).
    pub fn active(&self) -> std::ops::Range<usize> {
        self.first_active()..self.len() - 1
    }

    pub fn quadrature(&self) -> Quadrature {
        Quadrature {
            weights: self.weights.clone(),
        }
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        dot(&self.weights, values)
    }

    /// `∫ a b dx` in the grid inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// Discrete `‖∇u‖²`.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        self.edges
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let du = u[i + 1] - u[i];
                s * du * du
            })
            .sum()
    }

    /// Discrete Laplacian `Δu` on the active nodes; other entries are set to zero.
    pub fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for i in self.active() {
            let right = self.edges[i] * (u[i + 1] - u[i]);
            let left = if i > 0 { self.edges[i - 1] * (u[i] - u[i - 1]) } else { 0.0 };
            out[i] = (right - left) / self.weights[i];
        }
    }

    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.laplacian_into(u, &mut out);
        out
    }

    /// Applies the boundary conditions in place: Dirichlet at `r_max` and, on a
    /// node-centred grid, the even extension `u(0) = (4u(h) - u(2h)) / 3`.
    pub fn apply_boundary(&self, u: &mut [f64]) {
        let n = self.len();
        u[n - 1] = 0.0;
        if !self.staggered {
            u[0] = (4.0 * u[1] - u[2]) / 3.0;
        }
    }

    /// Index of the first node with radius `>= r`, or `len()` if none.
    pub fn index_at_or_above(&self, r: f64) -> usize {
        self.radii.partition_point(|&x| x < r)
    }
}

/// Validating constructor for a radial grid.
pub fn make_grid(dim: usize, n: usize, r_max: f64, staggered: bool) -> Result<RadialGrid> {
    RadialGrid::new(dim, n, r_max, staggered)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quadrature weights for `∫_{|x| < r_max} g(|x|) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Composite Simpson rule on `ω_d r^{d-1} dr`. Requires a node-centred grid
    /// with an odd number of nodes.
    pub fn simpson(grid: &RadialGrid) -> Result<Self> {
        let n = grid.len();
        if grid.staggered() || n % 2 == 0 {
            return Err(LabError::Config(
                "Simpson rule needs a node-centred grid with an odd node count".into(),
            ));
        }
        let omega = sphere_area(grid.dim());
        let h = grid.spacing();
        let weights = grid
            .radii()
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let c = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                omega * r.powi(grid.dim() as i32 - 1) * c * h / 3.0
            })
            .collect();
        Ok(Self { weights })
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        dot(&self.weights, values)
    }
}

/// Phase-space point `(u, u_t)` sampled on a radial grid.
#[derive(Debug, Clone)]
pub struct RadialState {
    pub grid: Arc<RadialGrid>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub time: f64,
}

impl RadialState {
    pub fn zero(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            u: vec![0.0; n],
            v: vec![0.0; n],
            time: 0.0,
        }
    }

    pub fn from_parts(grid: Arc<RadialGrid>, u: Vec<f64>, v: Vec<f64>, time: f64) -> Result<Self> {
        if u.len() != grid.len() || v.len() != grid.len() {
            return Err(LabError::Input(format!(
                "field lengths {}/{} do not match grid size {}",
                u.len(),
                v.len(),
                grid.len()
            )));
        }
        if let Some(i) = u.iter().chain(&v).position(|x| !x.is_finite()) {
            return Err(LabError::Input(format!("non-finite sample at position {i}")));
        }
        Ok(Self { grid, u, v, time })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Multiplies both components by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            u: self.u.iter().map(|x| x * factor).collect(),
            v: self.v.iter().map(|x| x * factor).collect(),
            time: self.time,
        }
    }

    /// Writes `r,u,v` columns with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "u", "v"])?;
        for ((r, u), v) in self.grid.radii().iter().zip(&self.u).zip(&self.v) {
            w.write_record([r.to_string(), u.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an `r,u,v` profile. The radii must form a uniform node-centred or
    /// staggered grid.
    pub fn read_csv(path: &Path, dim: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| LabError::Input(format!("missing column '{name}'")))
        };
        let (ir, iu, iv) = (col("r")?, col("u")?, col("v").ok());
        let (mut r, mut u, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| LabError::Input("short CSV row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| LabError::Input(format!("bad number: {e}")))
            };
            r.push(parse(ir)?);
            u.push(parse(iu)?);
            v.push(match iv {
                Some(i) => parse(i)?,
                None => 0.0,
            });
        }
        if r.len() < 3 {
            return Err(LabError::Input("profile needs at least 3 rows".into()));
        }
        let n = r.len();
        let r_max = r[n - 1];
        let staggered = r[0] > 0.0;
        let grid = RadialGrid::new(dim, n, r_max, staggered)?;
        let tol = 1e-9 * r_max;
        if grid.radii().iter().zip(&r).any(|(a, b)| (a - b).abs() > tol) {
            return Err(LabError::Input("profile radii are not a uniform grid".into()));
        }
        Self::from_parts(Arc::new(grid), u, v, 0.0)
    }
}

/// Samples a radial profile with zero velocity.
pub fn sample<F: Fn(f64) -> f64>(grid: Arc<RadialGrid>, profile: F) -> Result<RadialState> {
    let u: Vec<f64> = grid.radii().iter().map(|&r| profile(r)).collect();
    let v = vec![0.0; u.len()];
    RadialState::from_parts(grid, u, v, 0.0)
}

/// Samples both position and velocity profiles.
pub fn sample_with_velocity<F, G>(grid: Arc<RadialGrid>, profile: F, velocity: G) -> Result<RadialState>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let u: Vec<f64> = grid.radii().iter().map(|&r| profile(r)).collect();
    let v: Vec<f64> = grid.radii().iter().map(|&r| velocity(r)).collect();
    RadialState::from_parts(grid, u, v, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_grid_volume() {
        let g = RadialGrid::new(3, 3, 1.0, false).unwrap();
        assert!((g.integrate(&[1.0; 3]) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!(g.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn disc_area_d2() {
        let g = RadialGrid::new(2, 1024, 20.0, false).unwrap();
        let area = g.integrate(&vec![1.0; g.len()]);
        assert!((area / (PI * 400.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_integral_d3() {
        let g = RadialGrid::new(3, 2048, 40.0, false).unwrap();
        let vals: Vec<f64> = g.radii().iter().map(|r| (-r * r).exp()).collect();
        let exact = PI.powf(1.5);
        assert!((g.integrate(&vals) / exact - 1.0).abs() < 1e-8);
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(RadialGrid::new(1, 64, 1.0, false), Err(LabError::Config(_))));
        assert!(matches!(RadialGrid::new(3, 64, 0.0, false), Err(LabError::Config(_))));
        assert!(matches!(RadialGrid::new(3, 64, -2.0, true), Err(LabError::Config(_))));
    }

    #[test]
    fn zero_profile_sample() {
        let g = Arc::new(RadialGrid::new(3, 32, 4.0, false).unwrap());
        let s = sample(g, |_| 0.0).unwrap();
        assert!(s.u.iter().chain(&s.v).all(|&x| x == 0.0));
        assert_eq!(s.time, 0.0);
    }

    #[test]
    fn nan_sample_rejected() {
        let g = Arc::new(RadialGrid::new(3, 32, 4.0, false).unwrap());
        assert!(matches!(sample(g, |r| if r > 1.0 { f64::NAN } else { 0.0 }), Err(LabError::Input(_))));
    }

    #[test]
    fn d3_laplacian_is_second_difference_of_ru() {
        let g = RadialGrid::new(3, 40, 4.0, false).unwrap();
        let u: Vec<f64> = g.radii().iter().map(|r| (-r * r).exp()).collect();
        let lap = g.laplacian(&u);
        let h = g.spacing();
        let r = g.radii();
        for i in 1..g.len() - 1 {
            let fd = (r[i + 1] * u[i + 1] - 2.0 * r[i] * u[i] + r[i - 1] * u[i - 1]) / (r[i] * h * h);
            assert!((lap[i] - fd).abs() < 1e-10 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn laplacian_is_self_adjoint() {
        for &(d, stag) in &[(2usize, false), (3, false), (4, true), (5, false)] {
            let g = RadialGrid::new(d, 50, 5.0, stag).unwrap();
            let mut a: Vec<f64> = g.radii().iter().map(|r| (-(r - 1.0).powi(2)).exp()).collect();
            let mut b: Vec<f64> = g.radii().iter().map(|r| r.cos() * (-0.3 * r * r).exp()).collect();
            g.apply_boundary(&mut a);
            g.apply_boundary(&mut b);
            let lhs = g.inner(&a, &g.laplacian(&b));
            let rhs = g.inner(&g.laplacian(&a), &b);
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "d={d}");
            // -<u, Δu> equals the Dirichlet form
            let e = g.dirichlet_energy(&a);
            assert!((e + g.inner(&a, &g.laplacian(&a))).abs() < 1e-10 * e);
        }
    }

    #[test]
    fn simpson_requires_odd_nodes() {
        let g = RadialGrid::new(3, 64, 4.0, false).unwrap();
        assert!(Quadrature::simpson(&g).is_err());
        let g = RadialGrid::new(3, 65, 1.0, false).unwrap();
        let q = Quadrature::simpson(&g).unwrap();
        assert!((q.integrate(&vec![1.0; 65]) - 4.0 * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn csv_round_trip() {
        let g = Arc::new(RadialGrid::new(3, 20, 3.0, true).unwrap());
        let s = sample_with_velocity(g, |r| 1.0 / 3.0 * (-r).exp(), |r| r.sin() / 7.0).unwrap();
        let dir = std::env::temp_dir().join(format!("nlkg_grid_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("profile.csv");
        s.write_csv(&p).unwrap();
        let back = RadialState::read_csv(&p, 3).unwrap();
        assert_eq!(back.u, s.u);
        assert_eq!(back.v, s.v);
        assert!(back.grid.staggered());
    }
}
