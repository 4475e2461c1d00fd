//! Partial-SWAP collisions and local Rz phase rotations.
//!
//! A collision on qubits (a, b) is the two-qubit unitary
//! `U(gamma) = cos(gamma) I + i sin(gamma) SWAP`. Restricted to an
//! excitation sector it exchanges amplitude between the two masks of every
//! bit-swap pair and multiplies equal-bit masks by `exp(i gamma)`; that
//! phase is kept, not stripped, because it carries relative phase between
//! sectors of the pair's action.
//!
//! Rz convention: `Rz(theta) = diag(exp(-i theta / 2), exp(+i theta / 2))`
//! per qubit, which on a fixed-excitation sector reduces (up to one global
//! phase) to multiplying the amplitude of mask x by
//! `exp(-i sum_{j in x} theta_j)`. The serialized angle files use this
//! convention.

use crate::error::{Error, Result};
use crate::scalar::{cis, imag_unit, Scalar, C};
use crate::subspace::{PureState, SubspaceBasis};

/// Local Rz rotation angles, one per qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAngles<T: Scalar>(pub Vec<T>);

impl<T: Scalar> PhaseAngles<T> {
    pub fn zeros(n: usize) -> Self {
        PhaseAngles(vec![T::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn negated(&self) -> Self {
        PhaseAngles(self.0.iter().map(|&t| -t).collect())
    }
}

/// Precomputed index layout of one qubit pair over a basis: every bit-swap
/// partner pair plus the equal-bit members.
#[derive(Debug, Clone)]
pub struct SwapPairs {
    /// (i, j) where mask_i has bit a set, bit b clear and mask_j is its
    /// bit-swapped partner.
    pairs: Vec<(u32, u32)>,
    /// Members whose bits at a and b agree.
    equal: Vec<u32>,
}

impl SwapPairs {
    /// Pair layout within one excitation sector.
    pub fn subspace(basis: &SubspaceBasis, qubit_a: usize, qubit_b: usize) -> Result<Self> {
        check_pair(basis.n(), qubit_a, qubit_b)?;
        let flip = (1u64 << qubit_a) | (1u64 << qubit_b);
        let mut pairs = Vec::new();
        let mut equal = Vec::new();
        for (i, &mask) in basis.masks().iter().enumerate() {
            let bit_a = mask >> qubit_a & 1;
            let bit_b = mask >> qubit_b & 1;
            if bit_a == bit_b {
                equal.push(i as u32);
            } else if bit_a == 1 {
                let j = basis.rank(mask ^ flip)?;
                pairs.push((i as u32, j as u32));
            }
        }
        Ok(SwapPairs { pairs, equal })
    }

    /// Pair layout over the full 2^n computational space.
    pub fn full(n: usize, qubit_a: usize, qubit_b: usize) -> Result<Self> {
        check_pair(n, qubit_a, qubit_b)?;
        let flip = (1u64 << qubit_a) | (1u64 << qubit_b);
        let mut pairs = Vec::new();
        let mut equal = Vec::new();
        for mask in 0u64..1 << n {
            let bit_a = mask >> qubit_a & 1;
            let bit_b = mask >> qubit_b & 1;
            if bit_a == bit_b {
                equal.push(mask as u32);
            } else if bit_a == 1 {
                pairs.push((mask as u32, (mask ^ flip) as u32));
            }
        }
        Ok(SwapPairs { pairs, equal })
    }

    /// In-place `U(gamma)` on an amplitude vector.
    pub fn apply_vec<T: Scalar>(&self, amps: &mut [C<T>], gamma: T) {
        let c = gamma.cos();
        let is = imag_unit::<T>() * gamma.sin();
        for &(i, j) in &self.pairs {
            let (i, j) = (i as usize, j as usize);
            let x = amps[i];
            let y = amps[j];
            amps[i] = x * c + y * is;
            amps[j] = y * c + x * is;
        }
        let phase = cis(gamma);
        for &e in &self.equal {
            amps[e as usize] *= phase;
        }
    }

    /// In-place left multiplication `U(gamma) M` on a dense row-major matrix.
    pub fn apply_rows<T: Scalar>(&self, m: &mut [C<T>], dim: usize, gamma: T) {
        let c = gamma.cos();
        let is = imag_unit::<T>() * gamma.sin();
        for &(i, j) in &self.pairs {
            let (ri, rj) = (i as usize * dim, j as usize * dim);
            for col in 0..dim {
                let x = m[ri + col];
                let y = m[rj + col];
                m[ri + col] = x * c + y * is;
                m[rj + col] = y * c + x * is;
            }
        }
        let phase = cis(gamma);
        for &e in &self.equal {
            let r = e as usize * dim;
            for col in 0..dim {
                m[r + col] *= phase;
            }
        }
    }

    /// In-place right multiplication `M U(gamma)^dagger` on a dense
    /// row-major matrix. `U(gamma)^dagger = U(-gamma)` acting on columns.
    pub fn apply_cols_dagger<T: Scalar>(&self, m: &mut [C<T>], dim: usize, gamma: T) {
        let c = gamma.cos();
        let is = imag_unit::<T>() * (-gamma.sin());
        for &(i, j) in &self.pairs {
            let (i, j) = (i as usize, j as usize);
            for row in 0..dim {
                let base = row * dim;
                let x = m[base + i];
                let y = m[base + j];
                m[base + i] = x * c + y * is;
                m[base + j] = y * c + x * is;
            }
        }
        let phase = cis(-gamma);
        for &e in &self.equal {
            let e = e as usize;
            for row in 0..dim {
                m[row * dim + e] *= phase;
            }
        }
    }
}

fn check_pair(n: usize, a: usize, b: usize) -> Result<()> {
    if a == b {
        return Err(Error::domain(format!("collision requires distinct qubits, got ({a}, {b})")));
    }
    if a >= n || b >= n {
        return Err(Error::domain(format!(
            "qubit indices ({a}, {b}) out of range for n={n}"
        )));
    }
    Ok(())
}

/// In-place partial-SWAP collision on a sector state.
pub fn apply_partial_swap<T: Scalar>(
    state: &mut PureState<T>,
    qubit_a: usize,
    qubit_b: usize,
    gamma: T,
) -> Result<()> {
    let pairs = SwapPairs::subspace(state.basis(), qubit_a, qubit_b)?;
    pairs.apply_vec(state.amplitudes_mut(), gamma);
    debug_assert!(
        (state.norm_sqr() - T::one()).abs() < T::of(1e-10),
        "partial swap must preserve the norm"
    );
    Ok(())
}

/// Copying variant of [`apply_partial_swap`].
pub fn partial_swapped<T: Scalar>(
    state: &PureState<T>,
    qubit_a: usize,
    qubit_b: usize,
    gamma: T,
) -> Result<PureState<T>> {
    let mut out = state.clone();
    apply_partial_swap(&mut out, qubit_a, qubit_b, gamma)?;
    Ok(out)
}

/// In-place local Rz rotations: amplitude of mask x gains
/// `exp(-i sum_{j in x} theta_j)`.
pub fn apply_rz_phases<T: Scalar>(state: &mut PureState<T>, thetas: &PhaseAngles<T>) -> Result<()> {
    let basis = state.basis().clone();
    if thetas.len() != basis.n() {
        return Err(Error::domain(format!(
            "expected {} Rz angles, got {}",
            basis.n(),
            thetas.len()
        )));
    }
    for (idx, &mask) in basis.masks().iter().enumerate() {
        let mut phi = T::zero();
        for (j, &theta) in thetas.0.iter().enumerate() {
            if mask >> j & 1 == 1 {
                phi += theta;
            }
        }
        let amp = &mut state.amplitudes_mut()[idx];
        *amp *= cis(-phi);
    }
    Ok(())
}

/// Copying variant of [`apply_rz_phases`].
pub fn rz_phased<T: Scalar>(state: &PureState<T>, thetas: &PhaseAngles<T>) -> Result<PureState<T>> {
    let mut out = state.clone();
    apply_rz_phases(&mut out, thetas)?;
    Ok(out)
}

/// Helper shared with the verify path: phase factor a mask acquires under
/// the given angles.
pub fn mask_phase<T: Scalar>(mask: u64, thetas: &PhaseAngles<T>) -> C<T> {
    let mut phi = T::zero();
    for (j, &theta) in thetas.0.iter().enumerate() {
        if mask >> j & 1 == 1 {
            phi += theta;
        }
    }
    cis(-phi)
}
