//! Mixed-state representation for noisy evolution.
//!
//! Two storage layouts are supported: a sector block (D x D over the
//! fixed-excitation basis, usable whenever every applied map conserves
//! excitation number) and the full computational space (2^n x 2^n, needed
//! for excitation-breaking channels, guarded to small n).

use std::sync::Arc;

use ndarray::Array2;

use crate::collision::SwapPairs;
use crate::error::{Error, Result};
use crate::scalar::{Scalar, C};
use crate::subspace::{PureState, SubspaceBasis};

/// Full-space density matrices hold 4^n entries; refuse beyond this.
pub const MAX_FULL_DENSITY_QUBITS: usize = 12;

/// Storage layout of a [`DensityState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// D x D block over the fixed-excitation sector basis.
    SubspaceBlock,
    /// 2^n x 2^n over all computational masks.
    FullSpace,
}

impl Representation {
    pub fn name(self) -> &'static str {
        match self {
            Representation::SubspaceBlock => "subspace-block",
            Representation::FullSpace => "full-space",
        }
    }
}

/// Density matrix tagged with its sector of origin.
#[derive(Debug, Clone)]
pub struct DensityState<T: Scalar> {
    rep: Representation,
    basis: Arc<SubspaceBasis>,
    mat: Array2<C<T>>,
}

impl<T: Scalar> DensityState<T> {
    /// |psi><psi| in the sector-block layout.
    pub fn pure_subspace(state: &PureState<T>) -> Self {
        let amps = state.amplitudes();
        let dim = amps.len();
        let mut mat = Array2::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                mat[[r, c]] = amps[r] * amps[c].conj();
            }
        }
        DensityState { rep: Representation::SubspaceBlock, basis: state.basis().clone(), mat }
    }

    /// |psi><psi| embedded in the full computational space.
    pub fn pure_full(state: &PureState<T>) -> Result<Self> {
        let n = state.basis().n();
        if n > MAX_FULL_DENSITY_QUBITS {
            return Err(Error::capacity(format!(
                "full-space density matrices support at most {MAX_FULL_DENSITY_QUBITS} qubits, got {n}"
            )));
        }
        let full = state.embed_full()?;
        let dim = full.len();
        let mut mat = Array2::zeros((dim, dim));
        for r in 0..dim {
            if full[r].norm_sqr() == T::zero() {
                continue;
            }
            for c in 0..dim {
                mat[[r, c]] = full[r] * full[c].conj();
            }
        }
        Ok(DensityState { rep: Representation::FullSpace, basis: state.basis().clone(), mat })
    }

    /// Lift a sector-block state into the full space (needed before
    /// excitation-breaking channels).
    pub fn lift_to_full(&self) -> Result<Self> {
        match self.rep {
            Representation::FullSpace => Ok(self.clone()),
            Representation::SubspaceBlock => {
                let n = self.basis.n();
                if n > MAX_FULL_DENSITY_QUBITS {
                    return Err(Error::capacity(format!(
                        "full-space density matrices support at most {MAX_FULL_DENSITY_QUBITS} qubits, got {n}"
                    )));
                }
                let dim = 1usize << n;
                let masks = self.basis.masks();
                let mut mat = Array2::zeros((dim, dim));
                for (r, &mr) in masks.iter().enumerate() {
                    for (c, &mc) in masks.iter().enumerate() {
                        mat[[mr as usize, mc as usize]] = self.mat[[r, c]];
                    }
                }
                Ok(DensityState {
                    rep: Representation::FullSpace,
                    basis: self.basis.clone(),
                    mat,
                })
            }
        }
    }

    pub fn rep(&self) -> Representation {
        self.rep
    }

    pub fn basis(&self) -> &Arc<SubspaceBasis> {
        &self.basis
    }

    /// Matrix side length for the current layout.
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn matrix(&self) -> &Array2<C<T>> {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<C<T>> {
        &mut self.mat
    }

    /// Computational mask of a row/column index in the current layout.
    pub fn mask_of(&self, index: usize) -> u64 {
        match self.rep {
            Representation::SubspaceBlock => self.basis.masks()[index],
            Representation::FullSpace => index as u64,
        }
    }

    pub fn trace(&self) -> T {
        (0..self.dim()).map(|i| self.mat[[i, i]].re).sum()
    }

    /// Tr(rho^2); 1 for pure states, 1/dim for the maximally mixed state
    /// of the stored block.
    pub fn purity(&self) -> T {
        self.mat.iter().map(|x| x.norm_sqr()).sum()
    }

    /// Largest absolute deviation from rho = rho^dagger.
    pub fn hermiticity_error(&self) -> T {
        let dim = self.dim();
        let mut worst = T::zero();
        for r in 0..dim {
            for c in r..dim {
                let d = (self.mat[[r, c]] - self.mat[[c, r]].conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// <psi| rho |psi> for a pure sector state in either layout.
    #[allow(clippy::needless_range_loop)]
    pub fn expectation_pure(&self, state: &PureState<T>) -> Result<T> {
        if !Arc::ptr_eq(state.basis(), &self.basis)
            && (state.basis().n() != self.basis.n() || state.basis().m() != self.basis.m())
        {
            return Err(Error::domain(
                "expectation state lives in a different sector".to_string(),
            ));
        }
        let amps = state.amplitudes();
        let value = match self.rep {
            Representation::SubspaceBlock => {
                let dim = amps.len();
                let mut acc = C::new(T::zero(), T::zero());
                for r in 0..dim {
                    let mut row = C::new(T::zero(), T::zero());
                    for c in 0..dim {
                        row += self.mat[[r, c]] * amps[c];
                    }
                    acc += amps[r].conj() * row;
                }
                acc
            }
            Representation::FullSpace => {
                let masks = self.basis.masks();
                let mut acc = C::new(T::zero(), T::zero());
                for (r, &mr) in masks.iter().enumerate() {
                    let mut row = C::new(T::zero(), T::zero());
                    for (c, &mc) in masks.iter().enumerate() {
                        row += self.mat[[mr as usize, mc as usize]] * amps[c];
                    }
                    acc += amps[r].conj() * row;
                }
                acc
            }
        };
        Ok(value.re)
    }

    /// Overlap with the uniform equal-amplitude sector target:
    /// sum of the sector block of rho divided by D.
    pub fn fidelity_uniform_target(&self) -> T {
        let d = T::of(self.basis.dim() as f64);
        let total = match self.rep {
            Representation::SubspaceBlock => {
                let dim = self.basis.dim();
                let mut acc = C::new(T::zero(), T::zero());
                for r in 0..dim {
                    for c in 0..dim {
                        acc += self.mat[[r, c]];
                    }
                }
                acc
            }
            Representation::FullSpace => {
                let masks = self.basis.masks();
                let mut acc = C::new(T::zero(), T::zero());
                for &mr in masks {
                    for &mc in masks {
                        acc += self.mat[[mr as usize, mc as usize]];
                    }
                }
                acc
            }
        };
        (total.re / d).max(T::zero()).min(T::one())
    }

    /// Phase-insensitive analogue of [`Self::fidelity_uniform_target`]:
    /// sum of |rho_ij| over the sector block divided by D. For a pure
    /// state this equals the pure magnitude fidelity (sum |a_i|)^2 / D,
    /// and it always upper-bounds the phase-sensitive value.
    pub fn fidelity_uniform_magnitude(&self) -> T {
        let d = T::of(self.basis.dim() as f64);
        let total: T = match self.rep {
            Representation::SubspaceBlock => self.mat.iter().map(|x| x.norm()).sum(),
            Representation::FullSpace => {
                let masks = self.basis.masks();
                let mut acc = T::zero();
                for &mr in masks {
                    for &mc in masks {
                        acc += self.mat[[mr as usize, mc as usize]].norm();
                    }
                }
                acc
            }
        };
        (total / d).min(T::one())
    }

    /// rho <- U rho U^dagger for a two-qubit collision already compiled
    /// against this layout.
    pub fn conjugate_unitary(&mut self, pairs: &SwapPairs, gamma: T) {
        let dim = self.dim();
        let flat = self.mat.as_slice_mut().expect("density storage is contiguous");
        pairs.apply_rows(flat, dim, gamma);
        pairs.apply_cols_dagger(flat, dim, gamma);
    }

    /// Compile a collision pair against this layout.
    pub fn compile_pair(&self, qubit_a: usize, qubit_b: usize) -> Result<SwapPairs> {
        match self.rep {
            Representation::SubspaceBlock => SwapPairs::subspace(&self.basis, qubit_a, qubit_b),
            Representation::FullSpace => SwapPairs::full(self.basis.n(), qubit_a, qubit_b),
        }
    }

    /// Smallest eigenvalue of the (Hermitian) matrix, for positivity
    /// checks. O(dim^3) Jacobi sweeps; intended for tests and small n.
    pub fn min_eigenvalue(&self) -> T {
        min_eigenvalue_hermitian(&self.mat)
    }
}

/// Smallest eigenvalue of a Hermitian complex matrix via Jacobi iteration
/// on the real-symmetric embedding [[Re, -Im], [Im, Re]] (its spectrum is
/// the complex spectrum, doubled).
pub fn min_eigenvalue_hermitian<T: Scalar>(mat: &Array2<C<T>>) -> T {
    let d = mat.nrows();
    let n = 2 * d;
    let mut a = vec![T::zero(); n * n];
    for r in 0..d {
        for c in 0..d {
            let v = mat[[r, c]];
            a[r * n + c] = v.re;
            a[r * n + (c + d)] = -v.im;
            a[(r + d) * n + c] = v.im;
            a[(r + d) * n + (c + d)] = v.re;
        }
    }
    // Classical cyclic Jacobi on the symmetric matrix `a`.
    let tol = T::of(1e-14);
    for _sweep in 0..60 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < T::of(1e-300) {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut min = T::infinity();
    for i in 0..n {
        if a[i * n + i] < min {
            min = a[i * n + i];
        }
    }
    min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{fidelity_phase, ProtocolSpec, ScheduleVariant};
    use approx::assert_abs_diff_eq;

    fn sample_state() -> PureState<f64> {
        let spec = ProtocolSpec::new(5, 2, ScheduleVariant::Interleaved).unwrap();
        crate::protocol::state_after_rounds(&spec, 0.3, 0.9, 4).unwrap()
    }

    #[test]
    fn pure_density_has_unit_trace_and_is_hermitian() {
        let psi = sample_state();
        for rho in [DensityState::pure_subspace(&psi), DensityState::pure_full(&psi).unwrap()] {
            assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-12);
            assert!(rho.hermiticity_error() < 1e-14);
        }
    }

    #[test]
    fn fidelity_matches_pure_state_phase_fidelity() {
        let psi = sample_state();
        let f_pure = fidelity_phase(&psi);
        let rho_s = DensityState::pure_subspace(&psi);
        let rho_f = DensityState::pure_full(&psi).unwrap();
        assert_abs_diff_eq!(rho_s.fidelity_uniform_target(), f_pure, epsilon = 1e-12);
        assert_abs_diff_eq!(rho_f.fidelity_uniform_target(), f_pure, epsilon = 1e-12);
    }

    #[test]
    fn magnitude_fidelity_matches_pure_state_value() {
        let psi = sample_state();
        let f_mag = crate::protocol::fidelity_magnitude(&psi);
        let rho_s = DensityState::pure_subspace(&psi);
        let rho_f = DensityState::pure_full(&psi).unwrap();
        assert_abs_diff_eq!(rho_s.fidelity_uniform_magnitude(), f_mag, epsilon = 1e-12);
        assert_abs_diff_eq!(rho_f.fidelity_uniform_magnitude(), f_mag, epsilon = 1e-12);
        assert!(rho_s.fidelity_uniform_magnitude() >= rho_s.fidelity_uniform_target() - 1e-14);
    }

    #[test]
    fn expectation_against_self_is_one() {
        let psi = sample_state();
        let rho = DensityState::pure_subspace(&psi);
        assert_abs_diff_eq!(rho.expectation_pure(&psi).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lift_preserves_sector_fidelity() {
        let psi = sample_state();
        let rho = DensityState::pure_subspace(&psi);
        let lifted = rho.lift_to_full().unwrap();
        assert_eq!(lifted.rep(), Representation::FullSpace);
        assert_abs_diff_eq!(
            lifted.fidelity_uniform_target(),
            rho.fidelity_uniform_target(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(lifted.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn conjugation_matches_pure_evolution() {
        // U rho U^dagger of a pure projector equals the projector of the
        // evolved pure state.
        let psi = sample_state();
        let mut rho = DensityState::pure_subspace(&psi);
        let pairs = rho.compile_pair(0, 3).unwrap();
        rho.conjugate_unitary(&pairs, 0.7);

        let mut evolved = psi.clone();
        crate::collision::apply_partial_swap(&mut evolved, 0, 3, 0.7).unwrap();
        let expect = DensityState::pure_subspace(&evolved);
        let dim = rho.dim();
        for r in 0..dim {
            for c in 0..dim {
                let d = (rho.matrix()[[r, c]] - expect.matrix()[[r, c]]).norm();
                assert!(d < 1e-12, "entry ({r},{c}) deviates by {d}");
            }
        }
    }

    #[test]
    fn pure_projector_spectrum_is_0_and_1() {
        let psi = sample_state();
        let rho = DensityState::pure_subspace(&psi);
        let min = rho.min_eigenvalue();
        assert!(min > -1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn jacobi_finds_known_spectrum() {
        // Hermitian 2x2 [[1, i], [-i, 1]] has eigenvalues 0 and 2.
        let mut m = Array2::<C<f64>>::zeros((2, 2));
        m[[0, 0]] = C::new(1.0, 0.0);
        m[[0, 1]] = C::new(0.0, 1.0);
        m[[1, 0]] = C::new(0.0, -1.0);
        m[[1, 1]] = C::new(1.0, 0.0);
        assert_abs_diff_eq!(min_eigenvalue_hermitian(&m), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn full_space_guard_rejects_large_n() {
        let basis = SubspaceBasis::shared(13, 2).unwrap();
        let psi = PureState::<f64>::basis_state(basis, 0b11).unwrap();
        assert!(matches!(DensityState::pure_full(&psi), Err(Error::Capacity { .. })));
    }
}
