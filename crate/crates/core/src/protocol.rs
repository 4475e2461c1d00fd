//! Collision-round scheduling and fidelity traces.
//!
//! Qubit layout for a target with `n` qubits and `m` excitations:
//! shuttle qubits occupy indices `0..m`, register half `r` occupies
//! `m..m + l_r` with `l_r = floor((n - m) / 2)`, and register half `s`
//! occupies the remaining `l_s = (n - m) - l_r` indices (so `s` carries
//! the extra qubit when the register is odd). The initial state places
//! every excitation on the shuttles: mask `(1 << m) - 1`.
//!
//! One **round** is a single shuttle qubit's pass over the register:
//! round `t` is served by shuttle `(t - 1) mod m`, so `m` consecutive
//! rounds make one full cycle over all shuttles. Within a round the
//! shuttle alternates between the halves (`r_1, s_1, r_2, s_2, ...`,
//! the longer half finishing alone) and fidelity is recorded after every
//! round. Two event orderings are supported:
//!
//! * `Interleaved` - after each shuttle collision the nearest-neighbour
//!   chain of the half just touched is run, so shuttle and chain events
//!   alternate within the round.
//! * `Factored` - all shuttle collisions of the round first, then all
//!   chain passes. The event multiset per round is identical to
//!   `Interleaved`; only the order differs.

use std::sync::Arc;

use serde::Serialize;

use crate::collision::SwapPairs;
use crate::error::{Error, Result};
use crate::scalar::{Scalar, C};
use crate::subspace::{subspace_dim, PureState, SubspaceBasis};

/// Event ordering within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleVariant {
    Interleaved,
    Factored,
}

impl ScheduleVariant {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleVariant::Interleaved => "interleaved",
            ScheduleVariant::Factored => "factored",
        }
    }
}

impl std::str::FromStr for ScheduleVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interleaved" => Ok(ScheduleVariant::Interleaved),
            "factored" => Ok(ScheduleVariant::Factored),
            other => Err(Error::config(format!(
                "unknown schedule variant '{other}' (expected 'interleaved' or 'factored')"
            ))),
        }
    }
}

/// Which collision strength an event uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionKind {
    /// Shuttle-register collision, strength `gamma_sh`.
    Shuttle,
    /// Intra-register chain collision, strength `gamma_in`.
    Intra,
}

/// One two-qubit collision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleEvent {
    /// Round-robin block this event belongs to (shuttle index).
    pub block: usize,
    pub qubit_a: usize,
    pub qubit_b: usize,
    pub kind: CollisionKind,
}

/// Ordered event list of one full cycle (every shuttle's round once,
/// shuttle 0 first), with recorded block boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub variant: ScheduleVariant,
    pub events: Vec<ScheduleEvent>,
    /// `block_bounds[j]..block_bounds[j + 1]` is shuttle j's round.
    pub block_bounds: Vec<usize>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: CollisionKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Events of shuttle j's round.
    pub fn block(&self, j: usize) -> &[ScheduleEvent] {
        &self.events[self.block_bounds[j]..self.block_bounds[j + 1]]
    }

    pub fn blocks(&self) -> usize {
        self.block_bounds.len() - 1
    }
}

/// Geometry and ordering of the preparation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProtocolSpec {
    n: usize,
    m: usize,
    l_r: usize,
    l_s: usize,
    variant: ScheduleVariant,
}

impl ProtocolSpec {
    pub fn new(n: usize, m: usize, variant: ScheduleVariant) -> Result<Self> {
        // Validates n and m ranges as a side effect.
        subspace_dim(n, m)?;
        if m == 0 || m >= n {
            return Err(Error::domain(format!(
                "target needs 0 < m < n, got n={n}, m={m}"
            )));
        }
        let reg = n - m;
        let l_r = reg / 2;
        let l_s = reg - l_r;
        Ok(ProtocolSpec { n, m, l_r, l_s, variant })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// (first half, second half) register sizes; the second half is the
    /// larger one when the register is odd.
    pub fn register_split(&self) -> (usize, usize) {
        (self.l_r, self.l_s)
    }

    pub fn variant(&self) -> ScheduleVariant {
        self.variant
    }

    pub fn with_variant(mut self, variant: ScheduleVariant) -> Self {
        self.variant = variant;
        self
    }

    /// Index of shuttle qubit `j` (0-based, `j < m`).
    pub fn shuttle(&self, j: usize) -> usize {
        debug_assert!(j < self.m);
        j
    }

    /// Index of the k-th qubit of register half r (0-based, `k < l_r`).
    pub fn r_qubit(&self, k: usize) -> usize {
        debug_assert!(k < self.l_r);
        self.m + k
    }

    /// Index of the k-th qubit of register half s (0-based, `k < l_s`).
    pub fn s_qubit(&self, k: usize) -> usize {
        debug_assert!(k < self.l_s);
        self.m + self.l_r + k
    }

    /// All-excitations-on-shuttles sector state.
    pub fn initial_state<T: Scalar>(&self) -> Result<PureState<T>> {
        let basis = SubspaceBasis::shared(self.n, self.m)?;
        let mask = (1u64 << self.m) - 1;
        PureState::basis_state(basis, mask)
    }

    pub fn basis(&self) -> Result<Arc<SubspaceBasis>> {
        SubspaceBasis::shared(self.n, self.m)
    }

    /// Default round horizon for loss minimization: 200 full cycles.
    pub fn default_rounds_max(&self) -> usize {
        200 * self.m
    }
}

fn push_chain(events: &mut Vec<ScheduleEvent>, block: usize, first: usize, len: usize) {
    for k in 0..len.saturating_sub(1) {
        events.push(ScheduleEvent {
            block,
            qubit_a: first + k,
            qubit_b: first + k + 1,
            kind: CollisionKind::Intra,
        });
    }
}

/// Event list of one full cycle (all m shuttle rounds) under the spec's
/// variant.
pub fn round_schedule(spec: &ProtocolSpec) -> Schedule {
    let (l_r, l_s) = spec.register_split();
    let mut events = Vec::new();
    let mut block_bounds = vec![0usize];
    for j in 0..spec.m() {
        let shuttle = ScheduleEvent {
            block: j,
            qubit_a: spec.shuttle(j),
            qubit_b: 0, // patched below
            kind: CollisionKind::Shuttle,
        };
        match spec.variant {
            ScheduleVariant::Interleaved => {
                for k in 0..l_r.max(l_s) {
                    if k < l_r {
                        events.push(ScheduleEvent { qubit_b: spec.r_qubit(k), ..shuttle });
                        push_chain(&mut events, j, spec.r_qubit(0), l_r);
                    }
                    if k < l_s {
                        events.push(ScheduleEvent { qubit_b: spec.s_qubit(k), ..shuttle });
                        push_chain(&mut events, j, spec.s_qubit(0), l_s);
                    }
                }
            }
            ScheduleVariant::Factored => {
                for k in 0..l_r.max(l_s) {
                    if k < l_r {
                        events.push(ScheduleEvent { qubit_b: spec.r_qubit(k), ..shuttle });
                    }
                    if k < l_s {
                        events.push(ScheduleEvent { qubit_b: spec.s_qubit(k), ..shuttle });
                    }
                }
                for k in 0..l_r.max(l_s) {
                    if k < l_r {
                        push_chain(&mut events, j, spec.r_qubit(0), l_r);
                    }
                    if k < l_s {
                        push_chain(&mut events, j, spec.s_qubit(0), l_s);
                    }
                }
            }
        }
        block_bounds.push(events.len());
    }
    Schedule { variant: spec.variant, events, block_bounds }
}

/// A cycle schedule with per-pair index layouts precomputed, ready for
/// repeated application.
pub struct CompiledSchedule {
    schedule: Schedule,
    pairs: Vec<SwapPairs>,
    /// (pair index, kind) per event, aligned with `schedule.events`.
    compiled: Vec<(u32, CollisionKind)>,
    blocks: usize,
}

impl CompiledSchedule {
    /// Compile against a fixed-excitation sector basis.
    pub fn subspace(spec: &ProtocolSpec, basis: &SubspaceBasis) -> Result<Self> {
        Self::build(spec, |a, b| SwapPairs::subspace(basis, a, b))
    }

    /// Compile against the full 2^n computational space.
    pub fn full_space(spec: &ProtocolSpec) -> Result<Self> {
        let n = spec.n();
        Self::build(spec, |a, b| SwapPairs::full(n, a, b))
    }

    fn build(
        spec: &ProtocolSpec,
        mut make: impl FnMut(usize, usize) -> Result<SwapPairs>,
    ) -> Result<Self> {
        let schedule = round_schedule(spec);
        let mut pairs: Vec<SwapPairs> = Vec::new();
        let mut seen: Vec<(usize, usize)> = Vec::new();
        let mut compiled = Vec::with_capacity(schedule.events.len());
        for ev in &schedule.events {
            let key = (ev.qubit_a.min(ev.qubit_b), ev.qubit_a.max(ev.qubit_b));
            let idx = match seen.iter().position(|&k| k == key) {
                Some(i) => i,
                None => {
                    seen.push(key);
                    pairs.push(make(key.0, key.1)?);
                    pairs.len() - 1
                }
            };
            compiled.push((idx as u32, ev.kind));
        }
        let blocks = schedule.blocks();
        Ok(CompiledSchedule { schedule, pairs, compiled, blocks })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    /// Per-event (pair layout, kind, source event) walk of shuttle j's round.
    pub fn block_events(
        &self,
        j: usize,
    ) -> impl Iterator<Item = (&SwapPairs, CollisionKind, &ScheduleEvent)> {
        let range = self.schedule.block_bounds[j]..self.schedule.block_bounds[j + 1];
        self.compiled[range.clone()]
            .iter()
            .zip(&self.schedule.events[range])
            .map(|(&(idx, kind), ev)| (&self.pairs[idx as usize], kind, ev))
    }

    /// Apply shuttle j's round to an amplitude vector.
    pub fn apply_block_vec<T: Scalar>(&self, j: usize, amps: &mut [C<T>], gamma_in: T, gamma_sh: T) {
        let range = self.schedule.block_bounds[j]..self.schedule.block_bounds[j + 1];
        for &(idx, kind) in &self.compiled[range] {
            let gamma = match kind {
                CollisionKind::Shuttle => gamma_sh,
                CollisionKind::Intra => gamma_in,
            };
            self.pairs[idx as usize].apply_vec(amps, gamma);
        }
    }
}

/// Apply one round (the block of shuttle `(round - 1) mod m`) to a sector
/// state. Convenience wrapper; for repeated rounds compile once and reuse.
pub fn apply_round<T: Scalar>(
    state: &mut PureState<T>,
    spec: &ProtocolSpec,
    round: usize,
    gamma_in: T,
    gamma_sh: T,
) -> Result<()> {
    if round == 0 {
        return Err(Error::domain("rounds are 1-based".to_string()));
    }
    if state.basis().n() != spec.n() || state.basis().m() != spec.m() {
        return Err(Error::domain(format!(
            "state sector ({}, {}) does not match protocol target ({}, {})",
            state.basis().n(),
            state.basis().m(),
            spec.n(),
            spec.m()
        )));
    }
    let compiled = CompiledSchedule::subspace(spec, state.basis())?;
    compiled.apply_block_vec((round - 1) % spec.m(), state.amplitudes_mut(), gamma_in, gamma_sh);
    Ok(())
}

/// Phase-sensitive overlap with the uniform target:
/// `|sum_i a_i|^2 / D`.
pub fn fidelity_phase<T: Scalar>(state: &PureState<T>) -> T {
    let sum: C<T> = state.amplitudes().iter().copied().sum();
    let d = T::of(state.basis().dim() as f64);
    (sum.norm_sqr() / d).min(T::one())
}

/// Phase-insensitive overlap bound: `(sum_i |a_i|)^2 / D`. Equals the
/// phase-sensitive value after perfect per-amplitude phase alignment.
pub fn fidelity_magnitude<T: Scalar>(state: &PureState<T>) -> T {
    let sum: T = state.amplitudes().iter().map(|a| a.norm()).sum();
    let d = T::of(state.basis().dim() as f64);
    (sum * sum / d).min(T::one())
}

/// Which fidelity a trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityKind {
    Phase,
    Magnitude,
}

impl FidelityKind {
    pub fn name(self) -> &'static str {
        match self {
            FidelityKind::Phase => "phase",
            FidelityKind::Magnitude => "magnitude",
        }
    }

    pub fn eval<T: Scalar>(self, state: &PureState<T>) -> T {
        match self {
            FidelityKind::Phase => fidelity_phase(state),
            FidelityKind::Magnitude => fidelity_magnitude(state),
        }
    }
}

impl std::str::FromStr for FidelityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(FidelityKind::Phase),
            "magnitude" => Ok(FidelityKind::Magnitude),
            other => Err(Error::config(format!(
                "unknown loss fidelity kind '{other}' (expected 'magnitude' or 'phase')"
            ))),
        }
    }
}

/// Per-round fidelity trace; `values[r - 1]` is the fidelity after round r.
#[derive(Debug, Clone)]
pub struct FidelityTrace<T: Scalar> {
    pub kind: FidelityKind,
    pub values: Vec<T>,
    /// 1-based round with the highest fidelity; earliest on ties.
    pub best_round: usize,
    pub best_value: T,
}

/// Incremental round-by-round protocol evolution of a pure sector state.
pub struct TraceRunner<T: Scalar> {
    state: PureState<T>,
    compiled: Arc<CompiledSchedule>,
    gamma_in: T,
    gamma_sh: T,
    rounds_done: usize,
}

impl<T: Scalar> TraceRunner<T> {
    pub fn new(spec: &ProtocolSpec, gamma_in: T, gamma_sh: T) -> Result<Self> {
        let state = spec.initial_state()?;
        let compiled = Arc::new(CompiledSchedule::subspace(spec, state.basis())?);
        Ok(TraceRunner { state, compiled, gamma_in, gamma_sh, rounds_done: 0 })
    }

    /// Reuse an already compiled schedule (saves recompilation across many
    /// gamma evaluations on the same target).
    pub fn with_compiled(
        spec: &ProtocolSpec,
        compiled: Arc<CompiledSchedule>,
        gamma_in: T,
        gamma_sh: T,
    ) -> Result<Self> {
        let state = spec.initial_state()?;
        Ok(TraceRunner { state, compiled, gamma_in, gamma_sh, rounds_done: 0 })
    }

    /// Advance one round (the next shuttle's pass).
    pub fn step(&mut self) {
        let j = self.rounds_done % self.compiled.blocks();
        self.compiled
            .apply_block_vec(j, self.state.amplitudes_mut(), self.gamma_in, self.gamma_sh);
        self.rounds_done += 1;
    }

    pub fn state(&self) -> &PureState<T> {
        &self.state
    }

    pub fn into_state(self) -> PureState<T> {
        self.state
    }

    pub fn rounds_done(&self) -> usize {
        self.rounds_done
    }
}

/// Evolve from the initial state for `rounds` rounds, recording the chosen
/// fidelity after every round.
pub fn run_trace<T: Scalar>(
    spec: &ProtocolSpec,
    gamma_in: T,
    gamma_sh: T,
    rounds: usize,
    kind: FidelityKind,
) -> Result<FidelityTrace<T>> {
    if rounds == 0 {
        return Err(Error::domain("trace needs at least one round".to_string()));
    }
    let mut runner = TraceRunner::new(spec, gamma_in, gamma_sh)?;
    let mut values = Vec::with_capacity(rounds);
    let mut best_round = 1;
    let mut best_value = T::neg_infinity();
    for r in 1..=rounds {
        runner.step();
        let f = kind.eval(runner.state());
        if f > best_value {
            best_value = f;
            best_round = r;
        }
        values.push(f);
    }
    Ok(FidelityTrace { kind, values, best_round, best_value })
}

/// State after exactly `rounds` rounds from the initial state.
pub fn state_after_rounds<T: Scalar>(
    spec: &ProtocolSpec,
    gamma_in: T,
    gamma_sh: T,
    rounds: usize,
) -> Result<PureState<T>> {
    let mut runner = TraceRunner::new(spec, gamma_in, gamma_sh)?;
    for _ in 0..rounds {
        runner.step();
    }
    Ok(runner.into_state())
}
