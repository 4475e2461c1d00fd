//! Combinatorial machinery for the fixed-excitation manifold.
//!
//! The m-excitation sector of an n-qubit register is spanned by the
//! computational-basis states whose bitmask has popcount m. Basis order is
//! canonical: ascending integer mask value, with qubit 0 on the least
//! significant bit. `rank`/`unrank` convert between masks and dense indices
//! into that ordering.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, C};

/// Largest register size the basis machinery supports.
pub const MAX_QUBITS: usize = 20;

/// Largest register size for which full 2^n vectors may be materialized.
pub const MAX_EMBED_QUBITS: usize = 14;

/// Exact binomial coefficient n choose m.
///
/// Errors on m > n. Exact integer arithmetic; no overflow for n <= 20.
pub fn subspace_dim(n: usize, m: usize) -> Result<usize> {
    if m > n {
        return Err(Error::domain(format!(
            "excitation count m={m} exceeds qubit count n={n}"
        )));
    }
    if n > MAX_QUBITS {
        return Err(Error::capacity(format!(
            "n={n} exceeds the supported maximum of {MAX_QUBITS} qubits"
        )));
    }
    let k = m.min(n - m);
    let mut result: u64 = 1;
    for i in 1..=k {
        // Multiply before dividing; the intermediate product of consecutive
        // binomials is always divisible by i.
        result = result * (n - k + i) as u64 / i as u64;
    }
    Ok(result as usize)
}

/// Index structures for one m-excitation sector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubspaceBasis {
    n: usize,
    m: usize,
    /// Member masks in ascending order; `masks[rank] = mask`.
    masks: Vec<u64>,
}

impl SubspaceBasis {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        let dim = subspace_dim(n, m)?;
        if n == 0 {
            return Err(Error::domain("qubit count must be positive"));
        }
        let mut masks = Vec::with_capacity(dim);
        if m == 0 {
            masks.push(0);
        } else {
            // Gosper's hack: enumerate popcount-m masks in ascending order.
            let mut v: u64 = (1 << m) - 1;
            let limit: u64 = 1 << n;
            while v < limit {
                masks.push(v);
                let c = v & v.wrapping_neg();
                let r = v + c;
                v = (((r ^ v) >> 2) / c) | r;
            }
        }
        debug_assert_eq!(masks.len(), dim);
        Ok(SubspaceBasis { n, m, masks })
    }

    /// Convenience constructor returning a shared handle.
    pub fn shared(n: usize, m: usize) -> Result<Arc<Self>> {
        Ok(Arc::new(Self::new(n, m)?))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Sector dimension, binomial(n, m).
    pub fn dim(&self) -> usize {
        self.masks.len()
    }

    /// All member masks in canonical (ascending) order.
    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    /// Position of `mask` in the canonical ordering.
    pub fn rank(&self, mask: u64) -> Result<usize> {
        if mask >> self.n != 0 {
            return Err(Error::domain(format!(
                "mask {mask:#b} does not fit in {} qubits",
                self.n
            )));
        }
        let found = mask.count_ones();
        if found as usize != self.m {
            return Err(Error::ExcitationViolation {
                mask,
                found,
                expected: self.m as u32,
            });
        }
        // Masks are sorted, so the rank is just the binary-search position.
        Ok(self
            .masks
            .binary_search(&mask)
            .expect("popcount-checked mask must be a basis member"))
    }

    /// Inverse of [`rank`](Self::rank).
    pub fn unrank(&self, index: usize) -> Result<u64> {
        self.masks.get(index).copied().ok_or_else(|| {
            Error::domain(format!(
                "index {index} out of range for dimension {}",
                self.dim()
            ))
        })
    }
}

/// Pure state on one excitation sector: a dense complex amplitude vector in
/// canonical basis order.
#[derive(Debug, Clone)]
pub struct PureState<T: Scalar> {
    basis: Arc<SubspaceBasis>,
    amplitudes: Vec<C<T>>,
}

impl<T: Scalar> PureState<T> {
    /// The basis state `mask` with unit amplitude.
    pub fn basis_state(basis: Arc<SubspaceBasis>, mask: u64) -> Result<Self> {
        let idx = basis.rank(mask)?;
        let mut amplitudes = vec![C::new(T::zero(), T::zero()); basis.dim()];
        amplitudes[idx] = C::new(T::one(), T::zero());
        Ok(PureState { basis, amplitudes })
    }

    /// Build from raw amplitudes (length must match the sector dimension).
    pub fn from_amplitudes(basis: Arc<SubspaceBasis>, amplitudes: Vec<C<T>>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::domain(format!(
                "amplitude vector length {} does not match dimension {}",
                amplitudes.len(),
                basis.dim()
            )));
        }
        Ok(PureState { basis, amplitudes })
    }

    pub fn basis(&self) -> &Arc<SubspaceBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[C<T>] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C<T>] {
        &mut self.amplitudes
    }

    pub fn norm_sqr(&self) -> T {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Inner product `<self|other>`.
    pub fn overlap(&self, other: &PureState<T>) -> C<T> {
        debug_assert_eq!(self.basis.dim(), other.basis.dim());
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .fold(C::new(T::zero(), T::zero()), |acc, x| acc + x)
    }

    /// Lift the sector vector into the full 2^n space.
    ///
    /// Amplitude at computational index x equals the sector amplitude at
    /// rank(x) when popcount(x) = m, else zero.
    pub fn embed_full(&self) -> Result<Vec<C<T>>> {
        let n = self.basis.n();
        if n > MAX_EMBED_QUBITS {
            return Err(Error::capacity(format!(
                "embedding requires n <= {MAX_EMBED_QUBITS}, got {n}"
            )));
        }
        let mut full = vec![C::new(T::zero(), T::zero()); 1 << n];
        for (idx, &mask) in self.basis.masks().iter().enumerate() {
            full[mask as usize] = self.amplitudes[idx];
        }
        Ok(full)
    }

    /// Project a full 2^n vector back onto the sector, discarding amplitudes
    /// outside it.
    pub fn project_full(basis: Arc<SubspaceBasis>, full: &[C<T>]) -> Result<Self> {
        if full.len() != 1 << basis.n() {
            return Err(Error::domain(format!(
                "full vector length {} does not match 2^{}",
                full.len(),
                basis.n()
            )));
        }
        let amplitudes = basis.masks().iter().map(|&m| full[m as usize]).collect();
        Ok(PureState { basis, amplitudes })
    }
}

/// Norm of the part of a full-space vector lying outside the sector.
pub fn off_sector_norm<T: Scalar>(basis: &SubspaceBasis, full: &[C<T>]) -> T {
    let mut acc = T::zero();
    for (x, amp) in full.iter().enumerate() {
        if x.count_ones() as usize != basis.m() {
            acc += amp.norm_sqr();
        }
    }
    acc.sqrt()
}
