//! Exact-in-time free Klein-Gordon flow on the discrete radial Laplacian.
//!
//! The discrete Laplacian `-W^{-1} S` is diagonalised in the weighted inner
//! product. In three dimensions on a node-centred grid the symmetrised operator
//! is the Dirichlet second difference, so the eigenbasis is the type-I sine
//! transform and is applied with an FFT. Other grids use a dense symmetric
//! eigendecomposition.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{LabError, Result};
use crate::grid::{RadialGrid, RadialState};

/// Largest active-node count accepted for the dense eigendecomposition.
pub const DENSE_LIMIT: usize = 3000;

enum Basis {
    Sine { fft: Arc<dyn Fft<f64>>, norm: f64 },
    Dense(DMatrix<f64>),
}

/// Spectral representation of the discrete radial Laplacian on one grid.
pub struct FreePropagator {
    grid: Arc<RadialGrid>,
    /// Eigenvalues of `-Δ_h` on the active nodes, ascending.
    eigenvalues: Vec<f64>,
    sqrt_w: Vec<f64>,
    basis: Basis,
}

impl std::fmt::Debug for FreePropagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FreePropagator")
            .field("modes", &self.eigenvalues.len())
            .field("sine_basis", &matches!(self.basis, Basis::Sine { .. }))
            .finish()
    }
}

impl FreePropagator {
    pub fn new(grid: Arc<RadialGrid>) -> Result<Self> {
        let active = grid.active();
        let sqrt_w: Vec<f64> = active.clone().map(|i| grid.weights()[i].sqrt()).collect();
        let m = sqrt_w.len();
        if grid.dim() == 3 && !grid.staggered() {
            let n = m + 1;
            let h = grid.spacing();
            let eigenvalues = (1..=m)
                .map(|k| {
                    let s = (k as f64 * std::f64::consts::PI / (2.0 * n as f64)).sin();
                    4.0 * s * s / (h * h)
                })
                .collect();
            let fft = FftPlanner::new().plan_fft_forward(2 * n);
            return Ok(Self {
                grid,
                eigenvalues,
                sqrt_w,
                basis: Basis::Sine {
                    fft,
                    norm: (2.0 / n as f64).sqrt(),
                },
            });
        }
        if m > DENSE_LIMIT {
            return Err(LabError::Config(format!(
                "dense free propagator limited to {DENSE_LIMIT} modes, grid has {m}"
            )));
        }
        let w = grid.weights();
        let s = grid.edges();
        let offset = active.start;
        let mut t = DMatrix::<f64>::zeros(m, m);
        for a in 0..m {
            let i = a + offset;
            let left = if i > 0 { s[i - 1] } else { 0.0 };
            t[(a, a)] = (s[i] + left) / w[i];
            if a + 1 < m {
                let off = -s[i] / (w[i] * w[i + 1]).sqrt();
                t[(a, a + 1)] = off;
                t[(a + 1, a)] = off;
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(m, m, |i, k| eig.eigenvectors[(i, order[k])]);
        Ok(Self {
            grid,
            eigenvalues,
            sqrt_w,
            basis: Basis::Dense(vectors),
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    fn dst(fft: &Arc<dyn Fft<f64>>, x: &[f64], norm: f64) -> Vec<f64> {
        let m = x.len();
        let n = m + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
        for (j, &xj) in x.iter().enumerate() {
            buf[j + 1].re = xj;
            buf[2 * n - j - 1].re = -xj;
        }
        fft.process(&mut buf);
        (1..=m).map(|k| -0.5 * buf[k].im * norm).collect()
    }

    /// Mode coefficients of a nodal field (weighted projection).
    pub fn forward(&self, field: &[f64]) -> Vec<f64> {
        let start = self.grid.active().start;
        let x: Vec<f64> = self
            .sqrt_w
            .iter()
            .enumerate()
            .map(|(a, sw)| sw * field[a + start])
            .collect();
        match &self.basis {
            Basis::Sine { fft, norm } => Self::dst(fft, &x, *norm),
            Basis::Dense(v) => {
                let xv = nalgebra::DVector::from_vec(x);
                (v.transpose() * xv).iter().copied().collect()
            }
        }
    }

    /// Nodal field from mode coefficients, with boundary conditions applied.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = match &self.basis {
            Basis::Sine { fft, norm } => Self::dst(fft, coeffs, *norm),
            Basis::Dense(v) => {
                let cv = nalgebra::DVector::from_column_slice(coeffs);
                (v * cv).iter().copied().collect()
            }
        };
        let start = self.grid.active().start;
        let mut field = vec![0.0; self.grid.len()];
        for (a, (xa, sw)) in x.iter().zip(&self.sqrt_w).enumerate() {
            field[a + start] = xa / sw;
        }
        self.grid.apply_boundary(&mut field);
        field
    }

    pub fn frequencies(&self, mass: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| (l + mass).sqrt()).collect()
    }

    /// `u(t) = cos(tω) u₀ + sin(tω)/ω v₀`, `ω = sqrt(-Δ_h + mass)`.
    pub fn evolve(&self, state: &RadialState, mass: f64, t: f64) -> RadialState {
        let c0 = self.forward(&state.u);
        let d0 = self.forward(&state.v);
        let omega = self.frequencies(mass);
        let mut c = vec![0.0; c0.len()];
        let mut d = vec![0.0; c0.len()];
        for k in 0..c0.len() {
            let w = omega[k];
            let (s, co) = (w * t).sin_cos();
            let sinc = if w > 0.0 { s / w } else { t };
            c[k] = co * c0[k] + sinc * d0[k];
            d[k] = -w * s * c0[k] + co * d0[k];
        }
        RadialState {
            grid: self.grid.clone(),
            u: self.inverse(&c),
            v: self.inverse(&d),
            time: state.time + t,
        }
    }

    /// Discrete free energy `(‖v‖² + ‖∇u‖² + mass ‖u‖²)/2` evaluated in modes.
    pub fn modal_energy(&self, state: &RadialState, mass: f64) -> f64 {
        let c = self.forward(&state.u);
        let d = self.forward(&state.v);
        0.5 * c
            .iter()
            .zip(&d)
            .zip(&self.eigenvalues)
            .map(|((ci, di), l)| di * di + (l + mass) * ci * ci)
            .sum::<f64>()
    }
}

/// Free Klein-Gordon flow of `state` for time `t` at the given mass.
pub fn free_evolve(state: &RadialState, mass: f64, t: f64) -> Result<RadialState> {
    Ok(FreePropagator::new(state.grid.clone())?.evolve(state, mass, t))
}

/// Forward, backward and cross terms of `∫_0^L ‖∇u_free(t)‖² dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticSplit {
    pub forward: f64,
    pub backward: f64,
    pub cross: f64,
    /// `2/(L ω_min) · sqrt(forward · backward)`, an upper bound for `|cross|`.
    pub cross_bound: f64,
}

impl KineticSplit {
    pub fn total(&self) -> f64 {
        self.forward + self.backward + self.cross
    }

    pub fn equivalence_holds(&self) -> bool {
        self.cross.abs() <= self.cross_bound * (1.0 + 1e-12) + 1e-300
    }
}

/// Half-wave decomposition `φ^± = (u ∓ i⟨∇⟩^{-1} v)/2` of the free flow and the
/// exact time average of its kinetic energy over `[0, L]`.
pub fn mean_kinetic_split(
    propagator: &FreePropagator,
    state: &RadialState,
    window: f64,
    mass: f64,
) -> Result<KineticSplit> {
    if window < 2.0 {
        return Err(LabError::Domain(format!("window length must be >= 2, got {window}")));
    }
    let c = propagator.forward(&state.u);
    let d = propagator.forward(&state.v);
    let omega = propagator.frequencies(mass);
    let mut forward = 0.0;
    let mut backward = 0.0;
    let mut cross = 0.0;
    for k in 0..c.len() {
        let lam = propagator.eigenvalues[k];
        let w = omega[k];
        let plus = Complex64::new(c[k], -d[k] / w) * 0.5;
        let minus = Complex64::new(c[k], d[k] / w) * 0.5;
        forward += lam * plus.norm_sqr();
        backward += lam * minus.norm_sqr();
        // ∫_0^L 2 Re(φ⁺ conj(φ⁻) e^{2iωt}) dt
        let phase = (Complex64::new(0.0, 2.0 * w * window).exp() - 1.0) / Complex64::new(0.0, 2.0 * w);
        cross += lam * 2.0 * (plus * minus.conj() * phase).re;
    }
    forward *= window;
    backward *= window;
    let omega_min = omega.iter().cloned().fold(f64::INFINITY, f64::min);
    let cross_bound = 2.0 / (window * omega_min) * (forward * backward).sqrt();
    Ok(KineticSplit {
        forward,
        backward,
        cross,
        cross_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample, sample_with_velocity};

    fn bump_state(d: usize, n: usize, stag: bool) -> RadialState {
        let g = Arc::new(RadialGrid::new(d, n, 12.0, stag).unwrap());
        let mut s = sample_with_velocity(
            g,
            |r| (-(r - 1.0).powi(2)).exp() + 0.3 * (-r * r).exp(),
            |r| 0.5 * r * (-r * r).exp(),
        )
        .unwrap();
        let grid = s.grid.clone();
        grid.apply_boundary(&mut s.u);
        grid.apply_boundary(&mut s.v);
        s
    }

    #[test]
    fn time_zero_is_identity() {
        for &(d, stag) in &[(3, false), (2, false), (4, true)] {
            let s = bump_state(d, 200, stag);
            let p = FreePropagator::new(s.grid.clone()).unwrap();
            let e = p.evolve(&s, 1.0, 0.0);
            for i in s.grid.active() {
                assert!((e.u[i] - s.u[i]).abs() < 1e-12);
                assert!((e.v[i] - s.v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_basis_matches_dense_decomposition() {
        let g = Arc::new(RadialGrid::new(3, 60, 6.0, false).unwrap());
        let p = FreePropagator::new(g.clone()).unwrap();
        // build the dense operator directly and compare spectra
        let active = g.active();
        let m = active.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for a in 0..m {
            let i = a + active.start;
            t[(a, a)] = (g.edges()[i] + g.edges()[i - 1]) / g.weights()[i];
            if a + 1 < m {
                let off = -g.edges()[i] / (g.weights()[i] * g.weights()[i + 1]).sqrt();
                t[(a, a + 1)] = off;
                t[(a + 1, a)] = off;
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(p.eigenvalues()) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn energy_is_conserved_exactly() {
        for &(d, stag) in &[(3, false), (2, false)] {
            let s = bump_state(d, 256, stag);
            let p = FreePropagator::new(s.grid.clone()).unwrap();
            let direct = crate::functionals::free_energy(&s, 1.0);
            let e0 = p.modal_energy(&s, 1.0);
            assert!((e0 - direct).abs() < 1e-12 * direct);
            let later = p.evolve(&s, 1.0, 17.3);
            let e1 = crate::functionals::free_energy(&later, 1.0);
            assert!((e1 - e0).abs() < 1e-12 * e0, "d={d}: {e0} {e1}");
        }
    }

    #[test]
    fn single_mode_oscillates_at_its_frequency() {
        let g = Arc::new(RadialGrid::new(2, 120, 10.0, false).unwrap());
        let p = FreePropagator::new(g.clone()).unwrap();
        let k = 3;
        let mut coeffs = vec![0.0; p.modes()];
        coeffs[k] = 1.0;
        let u = p.inverse(&coeffs);
        let s = RadialState::from_parts(g.clone(), u.clone(), vec![0.0; g.len()], 0.0).unwrap();
        // the mode is an eigenvector of the discrete Laplacian
        let lap = g.laplacian(&u);
        for i in g.active() {
            assert!((lap[i] + p.eigenvalues()[k] * u[i]).abs() < 1e-8 * (1.0 + u[i].abs()));
        }
        let w = (p.eigenvalues()[k] + 1.0).sqrt();
        let t = 2.345;
        let e = p.evolve(&s, 1.0, t);
        for i in g.active() {
            assert!((e.u[i] - (w * t).cos() * u[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_state_split() {
        let g = Arc::new(RadialGrid::new(3, 64, 8.0, false).unwrap());
        let s = RadialState::zero(g.clone());
        let p = FreePropagator::new(g).unwrap();
        let k = mean_kinetic_split(&p, &s, 2.0, 1.0).unwrap();
        assert_eq!((k.forward, k.backward, k.cross), (0.0, 0.0, 0.0));
        assert!(mean_kinetic_split(&p, &s, 1.0, 1.0).is_err());
    }

    #[test]
    fn static_data_splits_symmetrically() {
        let g = Arc::new(RadialGrid::new(3, 128, 8.0, false).unwrap());
        let s = sample(g.clone(), |r| (-r * r).exp()).unwrap();
        let p = FreePropagator::new(g).unwrap();
        let k = mean_kinetic_split(&p, &s, 3.0, 1.0).unwrap();
        assert!((k.forward - k.backward).abs() < 1e-14 * k.forward);
        assert!(k.equivalence_holds());
    }
}
