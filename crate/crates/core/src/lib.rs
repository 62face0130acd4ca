//! Secure key-rate modelling for round-robin differential-phase-shift (RRDPS)
//! quantum key distribution.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: binary entropy, photon-number laws, truncated series, fiber loss.
//! * [`sources`]: packet-level photon statistics of weak coherent pulses (WCP) and
//!   heralded single-photon sources (HSPS).
//! * [`channel`]: no-eavesdropper yields, error rates, gains and QBERs.
//! * [`decoy`]: finite decoy-state lower bounds on yields and upper bounds on error rates.
//! * [`rates`]: per-packet key rates without decoys, with infinite decoys and with
//!   two/three/four-intensity decoys.
//! * [`optimize`]: grid search over intensity and photon threshold, distance sweeps.
//! * [`mc`]: seeded Monte Carlo checks of the detection statistics and of sifting.

pub mod channel;
pub mod decoy;
mod error;
pub mod mc;
pub mod numerics;
pub mod optimize;
pub mod rates;
pub mod sources;

pub use channel::ChannelParams;
pub use decoy::{DecoyObservation, YieldBounds};
pub use error::{Error, Result};
pub use numerics::Probability;
pub use rates::{DecoyTier, ProtocolParams, RateResult};
pub use sources::{SourceKind, SourceModel};

/// Operating parameters of the reference fiber link and heralded source.
pub mod reference {
    /// Heralding detector efficiency.
    pub const ETA_A: f64 = 0.045;
    /// Heralding detector dark-count probability per gate.
    pub const D_A: f64 = 1.7e-6;
    /// Intrinsic misalignment error.
    pub const E_D: f64 = 0.033;
    /// Fiber loss in dB/km.
    pub const ALPHA_DB_PER_KM: f64 = 0.2;
    /// Error-correction inefficiency.
    pub const F_EC: f64 = 1.16;
}
