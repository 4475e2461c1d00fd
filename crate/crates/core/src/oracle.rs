//! Independent dense full-space evolution used to cross-check the sector
//! simulation path. Everything here is built directly from 2^n x 2^n
//! matrices with no shared arithmetic with the sector engine.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::protocol::{round_schedule, CollisionKind, ProtocolSpec};
use crate::scalar::{Scalar, C};

/// Dense matrices grow as 4^n; keep the oracle path small.
pub const MAX_ORACLE_QUBITS: usize = 8;

fn check_capacity(n: usize) -> Result<()> {
    if n > MAX_ORACLE_QUBITS {
        return Err(Error::capacity(format!(
            "dense oracle supports at most {MAX_ORACLE_QUBITS} qubits, got {n}"
        )));
    }
    Ok(())
}

fn swap_bits(x: usize, a: usize, b: usize) -> usize {
    let ba = (x >> a) & 1;
    let bb = (x >> b) & 1;
    if ba == bb {
        x
    } else {
        x ^ ((1 << a) | (1 << b))
    }
}

/// Dense two-qubit collision `cos(gamma) I + i sin(gamma) SWAP(a, b)` on
/// n qubits.
pub fn dense_collision<T: Scalar>(n: usize, a: usize, b: usize, gamma: T) -> Result<Array2<C<T>>> {
    check_capacity(n)?;
    if a >= n || b >= n || a == b {
        return Err(Error::domain(format!(
            "collision pair ({a}, {b}) invalid for {n} qubits"
        )));
    }
    let dim = 1usize << n;
    let c = C::new(gamma.cos(), T::zero());
    let is = C::new(T::zero(), gamma.sin());
    let mut u = Array2::zeros((dim, dim));
    for col in 0..dim {
        u[[col, col]] += c;
        u[[swap_bits(col, a, b), col]] += is;
    }
    Ok(u)
}

/// Full-space state after `rounds` rounds, built purely from dense matrix
/// products over the event schedule. Round t applies the block of shuttle
/// `(t - 1) mod m` to the all-excitations-on-shuttles basis state.
pub fn full_space_trace<T: Scalar>(
    spec: &ProtocolSpec,
    gamma_in: T,
    gamma_sh: T,
    rounds: usize,
) -> Result<Vec<C<T>>> {
    check_capacity(spec.n())?;
    let dim = 1usize << spec.n();
    let schedule = round_schedule(spec);
    let mut psi: Vec<C<T>> = vec![C::new(T::zero(), T::zero()); dim];
    psi[(1usize << spec.m()) - 1] = C::new(T::one(), T::zero());
    for t in 0..rounds {
        for ev in schedule.block(t % spec.m()) {
            let gamma = match ev.kind {
                CollisionKind::Shuttle => gamma_sh,
                CollisionKind::Intra => gamma_in,
            };
            let u = dense_collision(spec.n(), ev.qubit_a, ev.qubit_b, gamma)?;
            let mut next = vec![C::new(T::zero(), T::zero()); dim];
            for col in 0..dim {
                let amp = psi[col];
                if amp.norm_sqr() > T::zero() {
                    for row in 0..dim {
                        let m = u[[row, col]];
                        if m.norm_sqr() > T::zero() {
                            next[row] += m * amp;
                        }
                    }
                }
            }
            psi = next;
        }
    }
    Ok(psi)
}
