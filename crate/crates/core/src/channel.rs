//! Detection model without an eavesdropper: photon-number yields and error
//! rates, and the overall gain and QBER each source produces.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{self, PhotonLaw};
use crate::sources::{self, Heralded, PacketLaw, SourceKind, SourceModel};

/// Error rate of background counts; dark clicks give random bits.
pub const BACKGROUND_ERROR: f64 = 0.5;

/// Per-pulse dark-count probability of Bob's detector.
pub const DARK_COUNT_PER_PULSE: f64 = crate::reference::D_A;

/// Efficiency of Bob's detector, the same detector class as the herald.
pub const BOB_EFFICIENCY: f64 = crate::reference::ETA_A;

/// Link and detector parameters.
///
/// `eta` is the overall transmittance, fiber times receiver. Sweeps derive it
/// from a distance with [`ChannelParams::at_distance`], which multiplies the
/// fiber transmittance by `eta_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelParams {
    pub eta: f64,
    pub y0: f64,
    pub e0: f64,
    pub e_d: f64,
    pub alpha_db_per_km: f64,
    pub eta_b: f64,
    pub f: f64,
}

impl ChannelParams {
    /// Reference fiber link for packets of `packet_length` pulses: background yield
    /// aggregated over the packet from the per-pulse dark count, Bob's
    /// detector efficiency folded into the transmittance, `eta = eta_b`.
    pub fn reference_link(packet_length: u32) -> Self {
        ChannelParams {
            eta: BOB_EFFICIENCY,
            y0: packet_background_yield(DARK_COUNT_PER_PULSE, packet_length),
            e0: BACKGROUND_ERROR,
            e_d: crate::reference::E_D,
            alpha_db_per_km: crate::reference::ALPHA_DB_PER_KM,
            eta_b: BOB_EFFICIENCY,
            f: crate::reference::F_EC,
        }
    }

    /// Link given directly by its overall transmittance, as on transmittance
    /// axes: background of a single detector gate, no separate receiver
    /// efficiency.
    pub fn bare_link(eta: f64) -> Result<Self> {
        ChannelParams {
            y0: DARK_COUNT_PER_PULSE,
            eta_b: 1.0,
            ..Self::reference_link(2)
        }
        .with_eta(eta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::domain("eta", self.eta, "(0, 1]"));
        }
        if !(0.0..1.0).contains(&self.y0) {
            return Err(Error::domain("y0", self.y0, "[0, 1)"));
        }
        if !(0.0..=0.5).contains(&self.e0) {
            return Err(Error::domain("e0", self.e0, "[0, 0.5]"));
        }
        if !(0.0..=0.5).contains(&self.e_d) {
            return Err(Error::domain("e_d", self.e_d, "[0, 0.5]"));
        }
        if !(self.alpha_db_per_km > 0.0) {
            return Err(Error::domain("alpha", self.alpha_db_per_km, "> 0 dB/km"));
        }
        if !(self.eta_b > 0.0 && self.eta_b <= 1.0) {
            return Err(Error::domain("eta_b", self.eta_b, "(0, 1]"));
        }
        if !(self.f >= 1.0) {
            return Err(Error::domain("f", self.f, ">= 1"));
        }
        Ok(())
    }

    /// Copy with the overall transmittance replaced.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        let ch = ChannelParams { eta, ..*self };
        ch.validate()?;
        Ok(ch)
    }

    /// Copy with `eta = eta_b * 10^{-alpha d / 10}`.
    pub fn at_distance(&self, distance_km: f64) -> Result<Self> {
        let fiber = numerics::distance_to_transmittance(distance_km, self.alpha_db_per_km)?;
        self.with_eta(self.eta_b * fiber)
    }

    /// Fiber length whose loss gives this channel's `eta`.
    pub fn distance_km(&self) -> Result<f64> {
        numerics::transmittance_to_distance((self.eta / self.eta_b).min(1.0), self.alpha_db_per_km)
    }

    /// `1 - (1 - eta)^n`, the probability at least one of `n` photons arrives.
    pub fn arrival(&self, n: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        -(n as f64 * (-self.eta).ln_1p()).exp_m1()
    }
}

/// `1 - (1 - d)^L`: a packet clicks on background if any of its pulses does.
pub fn packet_background_yield(dark_per_pulse: f64, packet_length: u32) -> f64 {
    -(packet_length as f64 * (-dark_per_pulse).ln_1p()).exp_m1()
}

/// `Y_n = 1 - (1 - Y_0)(1 - eta)^n`.
pub fn yield_n(ch: &ChannelParams, n: u32) -> f64 {
    ch.y0 + (1.0 - ch.y0) * ch.arrival(n)
}

/// `e_n Y_n = e_0 Y_0 + e_d (1 - Y_0)(1 - (1 - eta)^n)`.
pub fn error_yield_n(ch: &ChannelParams, n: u32) -> f64 {
    ch.e0 * ch.y0 + ch.e_d * (1.0 - ch.y0) * ch.arrival(n)
}

/// Error rate of `n`-photon detections.
pub fn error_n(ch: &ChannelParams, n: u32) -> Result<f64> {
    let y = yield_n(ch, n);
    if y <= 0.0 {
        return Err(Error::Degenerate(format!("yield Y_{n} is zero")));
    }
    Ok(error_yield_n(ch, n) / y)
}

/// Overall gain and QBER of one intensity setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainQber {
    pub gain: f64,
    pub qber: f64,
}

impl GainQber {
    fn from_sums(gain: f64, error_gain: f64) -> Result<Self> {
        if !(gain > 0.0) {
            return Err(Error::Degenerate("gain is zero".into()));
        }
        Ok(GainQber {
            gain,
            qber: error_gain / gain,
        })
    }
}

/// Closed-form gain and QBER of weak coherent pulses at packet intensity `L mu`.
pub fn wcp_gain_qber(ch: &ChannelParams, mu: f64, packet_length: u32) -> Result<GainQber> {
    sources::check_packet_length(packet_length)?;
    if !(mu >= 0.0) {
        return Err(Error::domain("mu", mu, ">= 0"));
    }
    let detect = -(-(packet_length as f64) * ch.eta * mu).exp_m1();
    let gain = ch.y0 + (1.0 - ch.y0) * detect;
    let error_gain = ch.e0 * ch.y0 + ch.e_d * (1.0 - ch.y0) * detect;
    GainQber::from_sums(gain, error_gain)
}

/// Photon-number series `Q = sum Y_n P(n)`, `E Q = sum e_n Y_n P(n)` for any law.
pub fn series_gain_qber<D: PhotonLaw>(ch: &ChannelParams, law: &D) -> Result<GainQber> {
    let gain = law.expectation(|n| yield_n(ch, n));
    let error_gain = law.expectation(|n| error_yield_n(ch, n));
    GainQber::from_sums(gain, error_gain)
}

/// Closed-form gain and QBER of the heralded source.
pub fn hsps_closed_gain_qber(ch: &ChannelParams, law: &Heralded) -> Result<GainQber> {
    let x = law.mean();
    let (eta_a, d_a) = (law.eta_a(), law.d_a());
    let (eta, y0) = (ch.eta, ch.y0);
    let norm = d_a * (1.0 + x * eta_a) + x * eta_a * (1.0 + x);
    let lossy = x * (1.0 - y0) * (1.0 + x * eta_a) * (1.0 - eta);
    let first = lossy / (norm * (1.0 + x * eta));
    let second = lossy * (1.0 - eta_a) / (norm * (1.0 + x * eta + x * eta_a - x * eta * eta_a));

    let gain = (d_a * y0 * (1.0 + x * eta_a) + x * eta_a * (1.0 + x)) / norm - first + second;
    let error_gain = (d_a * ch.e0 * y0 * (1.0 + x * eta_a)
        + x * eta_a * (1.0 + x) * (ch.e0 * y0 + ch.e_d * (1.0 - y0)))
        / norm
        - ch.e_d * first
        + ch.e_d * second;
    GainQber::from_sums(gain, error_gain)
}

/// Gain and QBER of the heralded source. The photon-number series is the
/// normative value; [`hsps_closed_gain_qber`] is kept as a cross-check.
pub fn hsps_gain_qber(ch: &ChannelParams, src: &SourceModel, packet_length: u32) -> Result<GainQber> {
    match src.packet_law(packet_length)? {
        PacketLaw::Heralded(law) => series_gain_qber(ch, &law),
        PacketLaw::Poisson(_) => Err(Error::Unsupported("hsps_gain_qber needs a heralded source".into())),
    }
}

/// Gain and QBER for either source.
pub fn gain_qber(ch: &ChannelParams, src: &SourceModel, packet_length: u32) -> Result<GainQber> {
    match src.kind {
        SourceKind::Wcp => wcp_gain_qber(ch, src.mu, packet_length),
        SourceKind::Hsps { .. } => hsps_gain_qber(ch, src, packet_length),
    }
}
