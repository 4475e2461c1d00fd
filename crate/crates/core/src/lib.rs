//! Simulation and controller-synthesis core for deterministic Dicke-state
//! preparation by repeated two-qubit partial-swap collisions.
//!
//! The crate is generic over the floating-point scalar (`f32` / `f64`)
//! through the [`scalar::Scalar`] trait; concrete `f64` aliases live at
//! the crate root.

pub mod collision;
pub mod density;
pub mod error;
pub mod noise;
pub mod optimizer;
pub mod oracle;
pub mod protocol;
pub mod scalar;
pub mod subspace;

pub use collision::{
    apply_partial_swap, apply_rz_phases, mask_phase, partial_swapped, rz_phased, PhaseAngles,
    SwapPairs,
};
pub use density::{DensityState, Representation, MAX_FULL_DENSITY_QUBITS};
pub use error::{Error, Result};
pub use noise::{
    apply_channel, apply_missing_collision, make_channel, run_noisy_evolution, run_noisy_trace,
    run_trajectories, ApplicationPolicy, ChannelLabel, KrausChannel, NoiseConfig, NoiseEngine,
    TrajectoryTrace,
};
pub use optimizer::{
    align_phases_state, finite_diff_gradient, lbfgsb_minimize, loss, multistart_optimize,
    optimize_aligned, optimize_phases, sweep_noise, AlignedOutcome, Bounds, ControlSolution,
    GridPoint, JitterSpec, LocalConfig, LocalResult, MultistartOutcome, OptimizerConfig,
    SweepAxis, SweepEntry, Termination,
};
pub use oracle::{dense_collision, full_space_trace, MAX_ORACLE_QUBITS};
pub use protocol::{
    apply_round, fidelity_magnitude, fidelity_phase, round_schedule, run_trace,
    state_after_rounds, CollisionKind, CompiledSchedule, FidelityKind, FidelityTrace,
    ProtocolSpec, Schedule, ScheduleEvent, ScheduleVariant, TraceRunner,
};
pub use scalar::{cis, imag_unit, Scalar, C};
pub use subspace::{
    off_sector_norm, subspace_dim, PureState, SubspaceBasis, MAX_EMBED_QUBITS, MAX_QUBITS,
};

/// Double-precision complex amplitude.
pub type C64 = C<f64>;
/// Double-precision sector state vector.
pub type PureState64 = PureState<f64>;
/// Double-precision local phase-rotation angles.
pub type PhaseAngles64 = PhaseAngles<f64>;
/// Double-precision fidelity trace.
pub type FidelityTrace64 = FidelityTrace<f64>;
/// Double-precision density matrix.
pub type DensityState64 = DensityState<f64>;
/// Double-precision noise model.
pub type NoiseConfig64 = NoiseConfig<f64>;
/// Double-precision Kraus channel.
pub type KrausChannel64 = KrausChannel<f64>;
/// Double-precision trajectory-averaged trace.
pub type TrajectoryTrace64 = TrajectoryTrace<f64>;
/// Double-precision synthesis configuration.
pub type OptimizerConfig64 = OptimizerConfig<f64>;
/// Double-precision synthesized controller.
pub type ControlSolution64 = ControlSolution<f64>;
/// Double-precision noise-sweep row.
pub type SweepEntry64 = SweepEntry<f64>;
