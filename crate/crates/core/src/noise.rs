//! Imperfect dynamics: gate-dropout mixtures, single-qubit Kraus
//! channels, a density-matrix trace engine, and a Monte-Carlo trajectory
//! sampler for the dropout model.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::collision::SwapPairs;
use crate::density::{DensityState, Representation};
use crate::error::{Error, Result};
use crate::protocol::{
    fidelity_phase, CollisionKind, CompiledSchedule, FidelityKind, FidelityTrace, ProtocolSpec,
};
use crate::scalar::{Scalar, C};

/// Which single-qubit channel a [`KrausChannel`] implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelLabel {
    Identity,
    Dephasing,
    Depolarizing,
    AmplitudeDamping,
}

impl ChannelLabel {
    pub fn name(self) -> &'static str {
        match self {
            ChannelLabel::Identity => "identity",
            ChannelLabel::Dephasing => "dephasing",
            ChannelLabel::Depolarizing => "depolarizing",
            ChannelLabel::AmplitudeDamping => "damping",
        }
    }

    /// Channels that commute with total excitation number may run in the
    /// sector-block density representation.
    pub fn preserves_excitation(self) -> bool {
        matches!(self, ChannelLabel::Identity | ChannelLabel::Dephasing)
    }
}

impl std::str::FromStr for ChannelLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(ChannelLabel::Identity),
            "dephasing" => Ok(ChannelLabel::Dephasing),
            "depolarizing" => Ok(ChannelLabel::Depolarizing),
            "damping" | "amplitude_damping" => Ok(ChannelLabel::AmplitudeDamping),
            other => Err(Error::config(format!(
                "unknown channel '{other}' (expected identity, dephasing, depolarizing, or damping)"
            ))),
        }
    }
}

type Kraus2<T> = [[C<T>; 2]; 2];

/// Single-qubit channel as a set of 2x2 Kraus operators.
#[derive(Debug, Clone)]
pub struct KrausChannel<T: Scalar> {
    label: ChannelLabel,
    q: T,
    operators: Vec<Kraus2<T>>,
}

fn czero<T: Scalar>() -> C<T> {
    C::new(T::zero(), T::zero())
}

fn creal<T: Scalar>(x: T) -> C<T> {
    C::new(x, T::zero())
}

/// Build the named channel at strength `q`. Operators with identically
/// zero weight are dropped (so `q = 0` yields the single identity
/// operator for every label).
pub fn make_channel<T: Scalar>(label: ChannelLabel, q: T) -> Result<KrausChannel<T>> {
    if !(T::zero()..=T::one()).contains(&q) || !q.is_finite() {
        return Err(Error::domain(format!(
            "channel strength must lie in [0, 1], got {q}"
        )));
    }
    let zero = czero::<T>();
    let one = T::one();
    let half = T::of(0.5);
    let mut ops: Vec<Kraus2<T>> = Vec::new();
    match label {
        ChannelLabel::Identity => {
            ops.push([[creal(one), zero], [zero, creal(one)]]);
        }
        ChannelLabel::Dephasing => {
            let a = (one - q).sqrt();
            let b = q.sqrt();
            ops.push([[creal(a), zero], [zero, creal(a)]]);
            ops.push([[creal(b), zero], [zero, creal(-b)]]);
        }
        ChannelLabel::Depolarizing => {
            let a = (one - T::of(3.0) * q / T::of(4.0)).sqrt();
            let w = q.sqrt() * half;
            ops.push([[creal(a), zero], [zero, creal(a)]]);
            // X / 2
            ops.push([[zero, creal(w)], [creal(w), zero]]);
            // Y / 2
            ops.push([[zero, C::new(T::zero(), -w)], [C::new(T::zero(), w), zero]]);
            // Z / 2
            ops.push([[creal(w), zero], [zero, creal(-w)]]);
        }
        ChannelLabel::AmplitudeDamping => {
            ops.push([[creal(one), zero], [zero, creal((one - q).sqrt())]]);
            ops.push([[zero, creal(q.sqrt())], [zero, zero]]);
        }
    }
    ops.retain(|k| {
        k.iter()
            .flatten()
            .any(|e| e.norm_sqr() > T::zero())
    });
    let channel = KrausChannel { label, q, operators: ops };
    debug_assert!(channel.completeness_error() < T::of(1e-12));
    Ok(channel)
}

impl<T: Scalar> KrausChannel<T> {
    pub fn label(&self) -> ChannelLabel {
        self.label
    }

    pub fn q(&self) -> T {
        self.q
    }

    pub fn operators(&self) -> &[Kraus2<T>] {
        &self.operators
    }

    pub fn preserves_excitation(&self) -> bool {
        self.label.preserves_excitation()
    }

    /// Max-norm deviation of sum K^dagger K from the identity.
    #[allow(clippy::needless_range_loop)]
    pub fn completeness_error(&self) -> T {
        let mut sum = [[czero::<T>(); 2]; 2];
        for k in &self.operators {
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = czero::<T>();
                    for l in 0..2 {
                        acc += k[l][i].conj() * k[l][j];
                    }
                    sum[i][j] += acc;
                }
            }
        }
        let mut worst = T::zero();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { creal(T::one()) } else { czero() };
                let d = (sum[i][j] - expect).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

/// When decoherence channels fire during a noisy trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplicationPolicy {
    /// After every round, on every qubit.
    PerRoundAllQubits,
    /// Right after each collision, on its two participants.
    PerCollisionParticipants,
}

impl ApplicationPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ApplicationPolicy::PerRoundAllQubits => "per_round",
            ApplicationPolicy::PerCollisionParticipants => "per_collision",
        }
    }
}

impl std::str::FromStr for ApplicationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_round" | "per_round_all_qubits" => Ok(ApplicationPolicy::PerRoundAllQubits),
            "per_collision" | "per_collision_participants" => {
                Ok(ApplicationPolicy::PerCollisionParticipants)
            }
            other => Err(Error::config(format!(
                "unknown application policy '{other}' (expected per_round or per_collision)"
            ))),
        }
    }
}

/// How a noisy trace is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseEngine {
    DensityMatrix,
    Trajectories { count: usize, seed: u64 },
}

/// Complete imperfection model for one run.
#[derive(Debug, Clone)]
pub struct NoiseConfig<T: Scalar> {
    /// Probability that a scheduled shuttle collision is skipped.
    pub p_miss: T,
    /// Optional decoherence channel (identity behaves like none).
    pub channel: Option<KrausChannel<T>>,
    pub policy: ApplicationPolicy,
    pub engine: NoiseEngine,
    /// Extend gate dropout to intra-register collisions too.
    pub drop_intra: bool,
}

impl<T: Scalar> Default for NoiseConfig<T> {
    fn default() -> Self {
        NoiseConfig {
            p_miss: T::zero(),
            channel: None,
            policy: ApplicationPolicy::PerRoundAllQubits,
            engine: NoiseEngine::DensityMatrix,
            drop_intra: false,
        }
    }
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(T::zero()..=T::one()).contains(&self.p_miss) || !self.p_miss.is_finite() {
            return Err(Error::domain(format!(
                "p_miss must lie in [0, 1], got {}",
                self.p_miss
            )));
        }
        if let NoiseEngine::Trajectories { count, .. } = self.engine {
            if count < 1 {
                return Err(Error::domain("trajectory count must be at least 1".to_string()));
            }
        }
        Ok(())
    }

    /// True when the model changes nothing (useful for dispatching to the
    /// noiseless engine).
    pub fn is_trivial(&self) -> bool {
        self.p_miss == T::zero()
            && self
                .channel
                .as_ref()
                .is_none_or(|c| c.label() == ChannelLabel::Identity || c.q() == T::zero())
    }

    /// Whether everything applied conserves excitation number (sector
    /// block representation allowed).
    pub fn sector_safe(&self) -> bool {
        self.channel.as_ref().is_none_or(|c| c.preserves_excitation())
    }
}

/// Apply the channel to one qubit of the density state, in place.
///
/// Excitation-breaking channels require the full-space layout; ask for
/// [`DensityState::lift_to_full`] first when needed.
pub fn apply_channel<T: Scalar>(
    rho: &mut DensityState<T>,
    qubit: usize,
    channel: &KrausChannel<T>,
) -> Result<()> {
    if qubit >= rho.n() {
        return Err(Error::domain(format!(
            "qubit {qubit} out of range for {} qubits",
            rho.n()
        )));
    }
    if channel.label() == ChannelLabel::Identity {
        return Ok(());
    }
    match rho.rep() {
        Representation::SubspaceBlock => {
            if !channel.preserves_excitation() {
                return Err(Error::representation(format!(
                    "channel '{}' breaks excitation number; lift the state to the full space first",
                    channel.label().name()
                )));
            }
            // Dephasing is diagonal in the mask basis: entries whose
            // masks differ at `qubit` shrink by (1 - 2q), the rest are
            // untouched.
            let factor = T::one() - T::of(2.0) * channel.q();
            let dim = rho.dim();
            let bit = 1u64 << qubit;
            let masks: Vec<u64> = (0..dim).map(|i| rho.mask_of(i)).collect();
            let mat = rho.matrix_mut();
            for r in 0..dim {
                for c in 0..dim {
                    if (masks[r] ^ masks[c]) & bit != 0 {
                        mat[[r, c]] = mat[[r, c]].scale(factor);
                    }
                }
            }
        }
        Representation::FullSpace => {
            apply_kraus_full(rho.matrix_mut(), qubit, channel);
        }
    }
    debug_assert!((rho.trace() - T::one()).abs() < T::of(1e-10));
    debug_assert!(rho.hermiticity_error() < T::of(1e-10));
    Ok(())
}

/// Kraus sum on one qubit of a full-space density matrix.
fn apply_kraus_full<T: Scalar>(mat: &mut Array2<C<T>>, qubit: usize, channel: &KrausChannel<T>) {
    let dim = mat.nrows();
    let bit = 1usize << qubit;
    let mut out = Array2::<C<T>>::zeros((dim, dim));
    let mut tmp = Array2::<C<T>>::zeros((dim, dim));
    for k in channel.operators() {
        // tmp = K rho (row pairs move together).
        tmp.fill(czero());
        for r0 in 0..dim {
            if r0 & bit != 0 {
                continue;
            }
            let r1 = r0 | bit;
            for c in 0..dim {
                let a = mat[[r0, c]];
                let b = mat[[r1, c]];
                tmp[[r0, c]] = k[0][0] * a + k[0][1] * b;
                tmp[[r1, c]] = k[1][0] * a + k[1][1] * b;
            }
        }
        // out += tmp K^dagger (column pairs).
        for c0 in 0..dim {
            if c0 & bit != 0 {
                continue;
            }
            let c1 = c0 | bit;
            for r in 0..dim {
                let a = tmp[[r, c0]];
                let b = tmp[[r, c1]];
                out[[r, c0]] += a * k[0][0].conj() + b * k[0][1].conj();
                out[[r, c1]] += a * k[1][0].conj() + b * k[1][1].conj();
            }
        }
    }
    mat.assign(&out);
}

/// Convex gate-dropout mixture: with probability `1 - p_miss` the
/// collision unitary acts, otherwise the state is left alone.
pub fn apply_missing_collision<T: Scalar>(
    rho: &mut DensityState<T>,
    qubit_a: usize,
    qubit_b: usize,
    gamma: T,
    p_miss: T,
) -> Result<()> {
    if !(T::zero()..=T::one()).contains(&p_miss) || !p_miss.is_finite() {
        return Err(Error::domain(format!(
            "p_miss must lie in [0, 1], got {p_miss}"
        )));
    }
    let pairs = rho.compile_pair(qubit_a, qubit_b)?;
    missing_collision_with(rho, &pairs, gamma, p_miss);
    Ok(())
}

fn missing_collision_with<T: Scalar>(
    rho: &mut DensityState<T>,
    pairs: &SwapPairs,
    gamma: T,
    p_miss: T,
) {
    if p_miss == T::zero() {
        rho.conjugate_unitary(pairs, gamma);
        return;
    }
    if p_miss == T::one() {
        return;
    }
    let kept = rho.matrix().clone();
    rho.conjugate_unitary(pairs, gamma);
    let survive = T::one() - p_miss;
    let mat = rho.matrix_mut();
    for (out, orig) in mat.iter_mut().zip(kept.iter()) {
        *out = out.scale(survive) + orig.scale(p_miss);
    }
}

/// Density-matrix noisy run: returns the per-round fidelity trace and the
/// final state. `kind` selects the recorded fidelity: `Phase` is the
/// mixed-state overlap with the pure target, `Magnitude` its
/// phase-insensitive ceiling.
pub fn run_noisy_evolution<T: Scalar>(
    spec: &ProtocolSpec,
    gamma_in: T,
    gamma_sh: T,
    rounds: usize,
    noise: &NoiseConfig<T>,
    kind: FidelityKind,
) -> Result<(FidelityTrace<T>, DensityState<T>)> {
    noise.validate()?;
    if rounds == 0 {
        return Err(Error::domain("trace needs at least one round".to_string()));
    }
    let psi0 = spec.initial_state::<T>()?;
    let (mut rho, compiled) = if noise.sector_safe() {
        (
            DensityState::pure_subspace(&psi0),
            CompiledSchedule::subspace(spec, psi0.basis())?,
        )
    } else {
        (DensityState::pure_full(&psi0)?, CompiledSchedule::full_space(spec)?)
    };
    let channel = noise.channel.as_ref().filter(|c| c.label() != ChannelLabel::Identity);
    let mut values = Vec::with_capacity(rounds);
    let mut best_round = 1;
    let mut best_value = T::neg_infinity();
    for t in 0..rounds {
        let j = t % spec.m();
        for (pairs, kind, ev) in compiled.block_events(j) {
            match kind {
                CollisionKind::Shuttle => {
                    missing_collision_with(&mut rho, pairs, gamma_sh, noise.p_miss)
                }
                CollisionKind::Intra => {
                    if noise.drop_intra {
                        missing_collision_with(&mut rho, pairs, gamma_in, noise.p_miss);
                    } else {
                        rho.conjugate_unitary(pairs, gamma_in);
                    }
                }
            }
            if noise.policy == ApplicationPolicy::PerCollisionParticipants {
                if let Some(ch) = channel {
                    apply_channel(&mut rho, ev.qubit_a, ch)?;
                    apply_channel(&mut rho, ev.qubit_b, ch)?;
                }
            }
        }
        if noise.policy == ApplicationPolicy::PerRoundAllQubits {
            if let Some(ch) = channel {
                for q in 0..spec.n() {
                    apply_channel(&mut rho, q, ch)?;
                }
            }
        }
        let f = match kind {
            FidelityKind::Phase => rho.fidelity_uniform_target(),
            FidelityKind::Magnitude => rho.fidelity_uniform_magnitude(),
        };
        if f > best_value {
            best_value = f;
            best_round = t + 1;
        }
        values.push(f);
    }
    let trace = FidelityTrace { kind, values, best_round, best_value };
    Ok((trace, rho))
}

/// Density-matrix noisy run, mixed-state fidelity trace only.
pub fn run_noisy_trace<T: Scalar>(
    spec: &ProtocolSpec,
    gamma_in: T,
    gamma_sh: T,
    rounds: usize,
    noise: &NoiseConfig<T>,
) -> Result<FidelityTrace<T>> {
    run_noisy_evolution(spec, gamma_in, gamma_sh, rounds, noise, FidelityKind::Phase)
        .map(|(trace, _)| trace)
}

/// Monte-Carlo estimate of a dropout-noisy trace.
#[derive(Debug, Clone)]
pub struct TrajectoryTrace<T: Scalar> {
    /// Mean phase fidelity per round across trajectories.
    pub values: Vec<T>,
    /// Standard error of the mean per round (0 when count < 2).
    pub stderr: Vec<T>,
    pub best_round: usize,
    pub best_value: T,
    pub best_stderr: T,
    pub count: usize,
}

/// Sample `count` independent dropout histories (trajectory i uses RNG
/// seed `seed + i`) and average the per-round pure-state fidelities. The
/// mean estimates the density-matrix fidelity exactly because the dropout
/// model is a mixture of unitaries.
pub fn run_trajectories<T: Scalar>(
    spec: &ProtocolSpec,
    gamma_in: T,
    gamma_sh: T,
    rounds: usize,
    p_miss: T,
    count: usize,
    seed: u64,
) -> Result<TrajectoryTrace<T>> {
    if count < 1 {
        return Err(Error::domain("trajectory count must be at least 1".to_string()));
    }
    if rounds == 0 {
        return Err(Error::domain("trace needs at least one round".to_string()));
    }
    if !(T::zero()..=T::one()).contains(&p_miss) || !p_miss.is_finite() {
        return Err(Error::domain(format!(
            "p_miss must lie in [0, 1], got {p_miss}"
        )));
    }
    let p = p_miss.to_f64().expect("probability representable as f64");
    let basis = spec.basis()?;
    let compiled = std::sync::Arc::new(CompiledSchedule::subspace(spec, &basis)?);
    let m = spec.m();

    let per_trajectory: Vec<Vec<T>> = (0..count)
        .into_par_iter()
        .map(|i| -> Result<Vec<T>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut state = spec.initial_state::<T>()?;
            let mut values = Vec::with_capacity(rounds);
            for t in 0..rounds {
                for (pairs, kind, _) in compiled.block_events(t % m) {
                    match kind {
                        CollisionKind::Shuttle => {
                            if !rng.random_bool(p) {
                                pairs.apply_vec(state.amplitudes_mut(), gamma_sh);
                            }
                        }
                        CollisionKind::Intra => {
                            pairs.apply_vec(state.amplitudes_mut(), gamma_in);
                        }
                    }
                }
                values.push(fidelity_phase(&state));
            }
            Ok(values)
        })
        .collect::<Result<Vec<_>>>()?;

    // Deterministic sequential reduction (independent of worker count).
    let mut mean = vec![T::zero(); rounds];
    for traj in &per_trajectory {
        for (acc, &v) in mean.iter_mut().zip(traj) {
            *acc += v;
        }
    }
    let cnt = T::of(count as f64);
    for v in &mut mean {
        *v /= cnt;
    }
    let mut stderr = vec![T::zero(); rounds];
    if count > 1 {
        for traj in &per_trajectory {
            for (acc, (&v, &mu)) in stderr.iter_mut().zip(traj.iter().zip(&mean)) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        let denom = T::of((count - 1) as f64);
        for s in &mut stderr {
            *s = (*s / denom).sqrt() / cnt.sqrt();
        }
    }
    let mut best_round = 1;
    let mut best_value = T::neg_infinity();
    for (idx, &v) in mean.iter().enumerate() {
        if v > best_value {
            best_value = v;
            best_round = idx + 1;
        }
    }
    let best_stderr = stderr[best_round - 1];
    Ok(TrajectoryTrace { values: mean, stderr, best_round, best_value, best_stderr, count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{run_trace, ScheduleVariant};
    use crate::subspace::{subspace_dim, PureState, SubspaceBasis};
    use approx::assert_abs_diff_eq;

    fn spec52() -> ProtocolSpec {
        ProtocolSpec::new(5, 2, ScheduleVariant::Interleaved).unwrap()
    }

    #[test]
    fn channels_are_complete_on_a_strength_grid() {
        for label in [
            ChannelLabel::Identity,
            ChannelLabel::Dephasing,
            ChannelLabel::Depolarizing,
            ChannelLabel::AmplitudeDamping,
        ] {
            for k in 0..=10 {
                let q = k as f64 / 10.0;
                let ch = make_channel::<f64>(label, q).unwrap();
                assert!(
                    ch.completeness_error() < 1e-12,
                    "{} at q={q}: {}",
                    label.name(),
                    ch.completeness_error()
                );
            }
        }
    }

    #[test]
    fn zero_strength_channels_collapse_to_identity() {
        for label in [
            ChannelLabel::Dephasing,
            ChannelLabel::Depolarizing,
            ChannelLabel::AmplitudeDamping,
        ] {
            let ch = make_channel::<f64>(label, 0.0).unwrap();
            assert_eq!(ch.operators().len(), 1, "{}", label.name());
            let k = ch.operators()[0];
            assert_abs_diff_eq!(k[0][0].re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(k[1][1].re, 1.0, epsilon = 1e-15);
            assert!(k[0][1].norm() < 1e-15 && k[1][0].norm() < 1e-15);
        }
    }

    #[test]
    fn channel_strength_is_validated() {
        assert!(make_channel::<f64>(ChannelLabel::Dephasing, -0.1).is_err());
        assert!(make_channel::<f64>(ChannelLabel::Dephasing, 1.1).is_err());
        assert!(make_channel::<f64>(ChannelLabel::Dephasing, f64::NAN).is_err());
    }

    #[test]
    fn depolarizing_operators_match_the_formula() {
        let q = 0.36f64;
        let ch = make_channel::<f64>(ChannelLabel::Depolarizing, q).unwrap();
        assert_eq!(ch.operators().len(), 4);
        let w = q.sqrt() / 2.0;
        assert_abs_diff_eq!(ch.operators()[0][0][0].re, (1.0 - 3.0 * q / 4.0).sqrt());
        assert_abs_diff_eq!(ch.operators()[1][0][1].re, w);
        assert_abs_diff_eq!(ch.operators()[2][0][1].im, -w);
        assert_abs_diff_eq!(ch.operators()[3][1][1].re, -w);
    }

    /// Two-qubit sector state 0.8|01> + 0.6i|10>.
    fn two_qubit_state() -> PureState<f64> {
        let basis = SubspaceBasis::shared(2, 1).unwrap();
        PureState::from_amplitudes(basis, vec![C::new(0.8, 0.0), C::new(0.0, 0.6)]).unwrap()
    }

    #[test]
    fn damping_moves_excited_weight_to_ground() {
        // q-damping on the excited qubit of |01><01| gives diag weights
        // (q on ground, 1-q on excited).
        let basis = SubspaceBasis::shared(2, 1).unwrap();
        let psi = PureState::<f64>::basis_state(basis, 0b01).unwrap();
        let mut rho = DensityState::pure_full(&psi).unwrap();
        let q = 0.37;
        apply_channel(&mut rho, 0, &make_channel(ChannelLabel::AmplitudeDamping, q).unwrap())
            .unwrap();
        assert_abs_diff_eq!(rho.matrix()[[0, 0]].re, q, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.matrix()[[1, 1]].re, 1.0 - q, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn full_damping_empties_the_qubit() {
        let basis = SubspaceBasis::shared(2, 1).unwrap();
        let psi = PureState::<f64>::basis_state(basis, 0b01).unwrap();
        let mut rho = DensityState::pure_full(&psi).unwrap();
        apply_channel(&mut rho, 0, &make_channel(ChannelLabel::AmplitudeDamping, 1.0).unwrap())
            .unwrap();
        assert_abs_diff_eq!(rho.matrix()[[0, 0]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.matrix()[[1, 1]].re, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn half_dephasing_kills_cross_terms_and_full_flips_their_sign() {
        // The Kraus pair {sqrt(1-q) I, sqrt(q) Z} scales coherences
        // between masks differing at the target bit by (1 - 2q): they die
        // at q = 1/2 and flip sign at q = 1 (a deterministic Z).
        for (q, factor) in [(0.5, 0.0), (1.0, -1.0), (0.2, 0.6)] {
            let psi = two_qubit_state();
            let mut rho = DensityState::pure_subspace(&psi);
            let before = rho.matrix()[[0, 1]];
            apply_channel(&mut rho, 0, &make_channel(ChannelLabel::Dephasing, q).unwrap())
                .unwrap();
            let after = rho.matrix()[[0, 1]];
            assert!((after - before.scale(factor)).norm() < 1e-14, "q={q}");
            // Diagonal untouched.
            assert_abs_diff_eq!(rho.matrix()[[0, 0]].re, 0.64, epsilon = 1e-14);
            assert_abs_diff_eq!(rho.matrix()[[1, 1]].re, 0.36, epsilon = 1e-14);
        }
    }

    #[test]
    fn dephasing_agrees_between_representations() {
        let psi = two_qubit_state();
        let mut sector = DensityState::pure_subspace(&psi);
        let mut full = DensityState::pure_full(&psi).unwrap();
        let ch = make_channel(ChannelLabel::Dephasing, 0.23).unwrap();
        for qubit in 0..2 {
            apply_channel(&mut sector, qubit, &ch).unwrap();
            apply_channel(&mut full, qubit, &ch).unwrap();
        }
        // Compare the sector block entries.
        let masks = [0b01usize, 0b10usize];
        for (r, &mr) in masks.iter().enumerate() {
            for (c, &mc) in masks.iter().enumerate() {
                let d = (sector.matrix()[[r, c]] - full.matrix()[[mr, mc]]).norm();
                assert!(d < 1e-14, "entry ({r},{c}) deviates by {d}");
            }
        }
    }

    #[test]
    fn excitation_breaking_channel_requires_full_space() {
        let psi = two_qubit_state();
        let mut rho = DensityState::pure_subspace(&psi);
        let ch = make_channel(ChannelLabel::AmplitudeDamping, 0.3).unwrap();
        let err = apply_channel(&mut rho, 0, &ch).unwrap_err();
        assert!(matches!(err, Error::Representation { .. }));
        let mut lifted = rho.lift_to_full().unwrap();
        apply_channel(&mut lifted, 0, &ch).unwrap();
        assert_abs_diff_eq!(lifted.trace(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn missing_collision_endpoints() {
        let psi = two_qubit_state();
        // p = 0: plain conjugation.
        let mut a = DensityState::pure_subspace(&psi);
        apply_missing_collision(&mut a, 0, 1, 0.9, 0.0).unwrap();
        let mut b = DensityState::pure_subspace(&psi);
        let pairs = b.compile_pair(0, 1).unwrap();
        b.conjugate_unitary(&pairs, 0.9);
        for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
            assert!((x - y).norm() < 1e-15);
        }
        // p = 1: untouched.
        let mut c = DensityState::pure_subspace(&psi);
        apply_missing_collision(&mut c, 0, 1, 0.9, 1.0).unwrap();
        let orig = DensityState::pure_subspace(&psi);
        for (x, y) in c.matrix().iter().zip(orig.matrix().iter()) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn missing_collision_half_swap_mixture() {
        // p = 1/2 with a full swap on |01><01|: equal mixture of |01> and
        // |10| projectors.
        let basis = SubspaceBasis::shared(2, 1).unwrap();
        let psi = PureState::<f64>::basis_state(basis, 0b01).unwrap();
        let mut rho = DensityState::pure_subspace(&psi);
        apply_missing_collision(&mut rho, 0, 1, std::f64::consts::FRAC_PI_2, 0.5).unwrap();
        assert_abs_diff_eq!(rho.matrix()[[0, 0]].re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(rho.matrix()[[1, 1]].re, 0.5, epsilon = 1e-14);
        assert!(rho.matrix()[[0, 1]].norm() < 1e-14);
    }

    #[test]
    fn missing_collision_matches_dense_formula_on_random_state() {
        // Independent elementwise check of the convex mixture against
        // dense matrix products on a random two-qubit Hermitian state.
        use crate::oracle::dense_collision;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 4usize;
        let mut raw = Array2::<C<f64>>::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                raw[[r, c]] = C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
        // rho = A A^dagger normalized: Hermitian, positive, trace 1.
        let mut rho_mat = Array2::<C<f64>>::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = C::new(0.0, 0.0);
                for k in 0..dim {
                    acc += raw[[r, k]] * raw[[c, k]].conj();
                }
                rho_mat[[r, c]] = acc;
            }
        }
        let tr: f64 = (0..dim).map(|i| rho_mat[[i, i]].re).sum();
        rho_mat.mapv_inplace(|x| x / tr);

        let (gamma, p) = (0.73, 0.31);
        let u = dense_collision::<f64>(2, 0, 1, gamma).unwrap();
        let mut expect = Array2::<C<f64>>::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = C::new(0.0, 0.0);
                for i in 0..dim {
                    for j in 0..dim {
                        acc += u[[r, i]] * rho_mat[[i, j]] * u[[c, j]].conj();
                    }
                }
                expect[[r, c]] = acc.scale(1.0 - p) + rho_mat[[r, c]].scale(p);
            }
        }

        let basis = SubspaceBasis::shared(2, 1).unwrap();
        let psi = PureState::<f64>::basis_state(basis, 0b01).unwrap();
        let mut rho = DensityState::pure_full(&psi).unwrap();
        rho.matrix_mut().assign(&rho_mat);
        apply_missing_collision(&mut rho, 0, 1, gamma, p).unwrap();
        for r in 0..dim {
            for c in 0..dim {
                let d = (rho.matrix()[[r, c]] - expect[[r, c]]).norm();
                assert!(d < 1e-13, "entry ({r},{c}) deviates by {d}");
            }
        }
    }

    #[test]
    fn noiseless_density_trace_matches_pure_engine() {
        let spec = spec52();
        let noise = NoiseConfig::<f64>::default();
        let dm = run_noisy_trace(&spec, 0.0, 1.624, 24, &noise).unwrap();
        let pure = run_trace::<f64>(&spec, 0.0, 1.624, 24, FidelityKind::Phase).unwrap();
        for (a, b) in dm.values.iter().zip(&pure.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn certain_dropout_freezes_the_state() {
        let spec = spec52();
        let noise = NoiseConfig::<f64> { p_miss: 1.0, ..Default::default() };
        let trace = run_noisy_trace(&spec, 0.7, 1.1, 10, &noise).unwrap();
        let floor = 1.0 / subspace_dim(5, 2).unwrap() as f64;
        for v in &trace.values {
            assert_abs_diff_eq!(*v, floor, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_damping_kills_fidelity() {
        let spec = spec52();
        let noise = NoiseConfig::<f64> {
            channel: Some(make_channel(ChannelLabel::AmplitudeDamping, 1.0).unwrap()),
            ..Default::default()
        };
        let trace = run_noisy_trace(&spec, 0.0, 1.624, 6, &noise).unwrap();
        for v in &trace.values {
            assert!(v.abs() < 1e-12, "fidelity {v} should vanish");
        }
    }

    #[test]
    fn noisy_states_stay_physical() {
        let spec = spec52();
        for noise in [
            NoiseConfig::<f64> { p_miss: 0.25, ..Default::default() },
            NoiseConfig::<f64> {
                channel: Some(make_channel(ChannelLabel::Dephasing, 0.08).unwrap()),
                ..Default::default()
            },
            NoiseConfig::<f64> {
                channel: Some(make_channel(ChannelLabel::Depolarizing, 0.08).unwrap()),
                policy: ApplicationPolicy::PerCollisionParticipants,
                ..Default::default()
            },
        ] {
            let (trace, rho) = run_noisy_evolution(&spec, 0.3, 1.2, 12, &noise, FidelityKind::Phase).unwrap();
            assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-10);
            assert!(rho.hermiticity_error() < 1e-10);
            assert!(rho.min_eigenvalue() > -1e-8);
            for v in &trace.values {
                assert!((0.0..=1.0 + 1e-12).contains(v));
            }
        }
    }

    #[test]
    fn dropout_mixing_strictly_decreases_purity() {
        // Gate dropout is a mixture of unitaries (a unital channel), so
        // Tr(rho^2) can never grow along the trace.
        let spec = spec52();
        let noise = NoiseConfig::<f64> { p_miss: 0.1, ..Default::default() };
        let mut last = 1.0f64;
        for rounds in [2usize, 6, 12, 24] {
            let (_, rho) = run_noisy_evolution(&spec, 0.0, 1.624, rounds, &noise, FidelityKind::Phase).unwrap();
            let purity = rho.purity();
            assert!(purity <= last + 1e-12, "purity rose: {purity} > {last}");
            last = purity;
        }
        assert!(last < 0.9, "24 dropout rounds should visibly mix the state, purity {last}");
    }

    #[test]
    fn trajectories_without_dropout_match_noiseless_exactly() {
        let spec = spec52();
        let traj = run_trajectories::<f64>(&spec, 0.0, 1.624, 12, 0.0, 8, 11).unwrap();
        let pure = run_trace::<f64>(&spec, 0.0, 1.624, 12, FidelityKind::Phase).unwrap();
        for ((v, s), p) in traj.values.iter().zip(&traj.stderr).zip(&pure.values) {
            assert_abs_diff_eq!(v, p, epsilon = 1e-12);
            assert_abs_diff_eq!(*s, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn trajectories_with_certain_dropout_are_flat() {
        let spec = spec52();
        let traj = run_trajectories::<f64>(&spec, 0.7, 1.1, 6, 1.0, 16, 3).unwrap();
        let floor = 1.0 / subspace_dim(5, 2).unwrap() as f64;
        for (v, s) in traj.values.iter().zip(&traj.stderr) {
            assert_abs_diff_eq!(*v, floor, epsilon = 1e-12);
            assert_abs_diff_eq!(*s, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn trajectories_are_reproducible_and_seed_sensitive() {
        let spec = spec52();
        let a = run_trajectories::<f64>(&spec, 0.0, 1.624, 10, 0.3, 64, 42).unwrap();
        let b = run_trajectories::<f64>(&spec, 0.0, 1.624, 10, 0.3, 64, 42).unwrap();
        assert_eq!(a.values, b.values);
        let c = run_trajectories::<f64>(&spec, 0.0, 1.624, 10, 0.3, 64, 43).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn trajectory_mean_brackets_the_density_matrix_result() {
        let spec = spec52();
        let rounds = 20;
        let noise = NoiseConfig::<f64> { p_miss: 0.3, ..Default::default() };
        let exact = run_noisy_trace(&spec, 0.0, 1.624, rounds, &noise).unwrap();
        let traj = run_trajectories::<f64>(&spec, 0.0, 1.624, rounds, 0.3, 600, 2024).unwrap();
        for r in [4usize, 9, 19] {
            let sigma = traj.stderr[r].max(1e-6);
            let dev = (traj.values[r] - exact.values[r]).abs();
            assert!(
                dev < 3.0 * sigma,
                "round {}: dev {dev} vs 3 sigma {}",
                r + 1,
                3.0 * sigma
            );
        }
    }

    #[test]
    fn rejects_invalid_noise_settings() {
        let spec = spec52();
        let bad = NoiseConfig::<f64> { p_miss: 1.5, ..Default::default() };
        assert!(run_noisy_trace(&spec, 0.1, 0.2, 3, &bad).is_err());
        assert!(run_trajectories::<f64>(&spec, 0.1, 0.2, 3, 0.5, 0, 1).is_err());
        assert!(run_trajectories::<f64>(&spec, 0.1, 0.2, 3, -0.1, 4, 1).is_err());
    }
}
