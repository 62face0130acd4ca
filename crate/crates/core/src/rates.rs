//! Per-packet secret key rates.
//!
//! Three estimates are provided, from weakest to strongest assumptions:
//!
//! * no decoys: photon statistics enter only through `e_src = Pr(n > v_th)`,
//!   and the phase error is bounded for the whole packet;
//! * finite decoys: yields and error rates of the first one to three photon
//!   numbers come from [`crate::decoy`] bounds;
//! * infinite decoys: every `Y_n` and `e_n` is known exactly (no-eavesdropper
//!   values), the limit the finite tiers approach.
//!
//! The phase error of an `n`-photon packet is `(1 - (1 - 2/L)^n) / 2`.

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams};
use crate::decoy::{self, DecoyLadder, YieldBounds};
use crate::error::{Error, Result};
use crate::numerics::{binary_entropy, capped_entropy, PhotonLaw, Probability};
use crate::sources::{self, SourceModel};

/// How much decoy-state information the rate may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoyTier {
    None,
    Infinite,
    Two,
    Three,
    Four,
}

impl DecoyTier {
    pub const ALL: [DecoyTier; 5] = [
        DecoyTier::None,
        DecoyTier::Infinite,
        DecoyTier::Two,
        DecoyTier::Three,
        DecoyTier::Four,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecoyTier::None => "none",
            DecoyTier::Infinite => "infinite",
            DecoyTier::Two => "two",
            DecoyTier::Three => "three",
            DecoyTier::Four => "four",
        }
    }

    /// Highest photon number a finite tier bounds; `None` otherwise.
    pub fn photon_cutoff(self) -> Option<u32> {
        match self {
            DecoyTier::Two => Some(1),
            DecoyTier::Three => Some(2),
            DecoyTier::Four => Some(3),
            DecoyTier::None | DecoyTier::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        self.photon_cutoff().is_some()
    }
}

impl std::str::FromStr for DecoyTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecoyTier::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unsupported(format!("unknown decoy tier `{s}`")))
    }
}

impl std::fmt::Display for DecoyTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Accounting used by the infinite-decoy rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfiniteForm {
    /// `sum_n Y_n P(n) max(0, 1 - f h(e_n) - h(e_ph^n))`: error correction
    /// charged per photon number, the limit of the finite-decoy rate.
    #[default]
    PerPhotonNumber,
    /// `Q (1 - f h(E)) - sum_n Y_n P(n) h(e_ph^n)`: error correction charged
    /// on the aggregate QBER.
    Aggregate,
}

/// Protocol settings shared by every rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub packet_length: u32,
    /// Photon threshold; only the no-decoy rate uses it.
    pub v_th: u32,
    pub tier: DecoyTier,
    /// Decoy intensities as fractions of the signal; `None` picks the default
    /// ladder for the tier.
    pub ladder: Option<DecoyLadder>,
    #[serde(default)]
    pub infinite_form: InfiniteForm,
}

impl ProtocolParams {
    pub fn new(packet_length: u32, v_th: u32, tier: DecoyTier) -> Result<Self> {
        let p = ProtocolParams {
            packet_length,
            v_th,
            tier,
            ladder: None,
            infinite_form: InfiniteForm::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        sources::check_packet_length(self.packet_length)?;
        if self.v_th > max_threshold(self.packet_length) {
            return Err(Error::domain("v_th", self.v_th as f64, "< (L - 1) / 2"));
        }
        if let Some(ladder) = &self.ladder {
            let needed = self.tier.photon_cutoff().map_or(0, |n| n as usize + 1);
            if ladder.fractions().len() < needed {
                return Err(Error::InsufficientObservations {
                    tier: self.tier.name(),
                    needed: needed + 1,
                    got: ladder.fractions().len() + 1,
                });
            }
        }
        Ok(())
    }

    /// Decoy ladder in force for this tier.
    pub fn decoy_ladder(&self) -> Result<DecoyLadder> {
        match &self.ladder {
            Some(l) => Ok(l.clone()),
            None => DecoyLadder::default_for(self.tier),
        }
    }

    pub fn with_v_th(&self, v_th: u32) -> Self {
        ProtocolParams { v_th, ..self.clone() }
    }

    pub fn with_tier(&self, tier: DecoyTier) -> Self {
        ProtocolParams { tier, ..self.clone() }
    }
}

/// Largest photon threshold allowed for packets of `packet_length` pulses.
pub fn max_threshold(packet_length: u32) -> u32 {
    // v_th < (L - 1) / 2  <=>  2 v_th + 1 < L
    (packet_length.saturating_sub(2)) / 2
}

/// Key rate with everything that went into it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateResult {
    pub tier: DecoyTier,
    pub mu: f64,
    /// Photon threshold, for the no-decoy rate.
    pub v_th: Option<u32>,
    /// Key bits per packet, clamped at zero.
    pub rate: f64,
    /// Value before clamping.
    pub raw_rate: f64,
    pub gain: f64,
    pub e_bit: f64,
    /// Probability mass of packets treated as fully leaked: above `v_th`
    /// without decoys, above the bounded photon numbers for finite tiers.
    pub e_src: f64,
    /// Packet phase error without decoys, yield-weighted mean of the
    /// per-photon-number phase errors otherwise.
    pub e_ph: f64,
    /// `e_ph^n` for the photon numbers a finite tier bounds.
    pub e_ph_by_n: Vec<f64>,
    /// The packet phase-error bound fell back to its worst case.
    pub phase_error_vacuous: bool,
    pub yield_bounds: Option<YieldBounds>,
    pub eta: f64,
    pub distance_km: Option<f64>,
}

impl RateResult {
    fn new(tier: DecoyTier, src: &SourceModel, ch: &ChannelParams, raw_rate: f64) -> Self {
        RateResult {
            tier,
            mu: src.mu,
            v_th: None,
            rate: raw_rate.max(0.0),
            raw_rate,
            gain: 0.0,
            e_bit: 0.0,
            e_src: 0.0,
            e_ph: 0.0,
            e_ph_by_n: Vec::new(),
            phase_error_vacuous: false,
            yield_bounds: None,
            eta: ch.eta,
            distance_km: None,
        }
    }
}

/// `e_ph^n = (1 - (1 - 2/L)^n) / 2`.
pub fn phase_error_n(packet_length: u32, n: u32) -> Result<Probability> {
    sources::check_packet_length(packet_length)?;
    let keep = 1.0 - 2.0 / packet_length as f64;
    Probability::new((1.0 - keep.powf(n as f64)) / 2.0)
}

/// Packet phase-error bound with a flag for the worst-case fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseError {
    pub value: f64,
    pub vacuous: bool,
}

/// `e_ph = e_src/Q + (1 - e_src/Q) e_ph^{v_th}`; one half when `e_src >= Q`.
pub fn phase_error_packet(packet_length: u32, v_th: u32, e_src: f64, gain: f64) -> Result<PhaseError> {
    if !(gain > 0.0) {
        return Err(Error::Degenerate("phase error needs a nonzero gain".into()));
    }
    if e_src >= gain {
        return Ok(PhaseError { value: 0.5, vacuous: true });
    }
    let leak = e_src / gain;
    let base = phase_error_n(packet_length, v_th)?.get();
    Ok(PhaseError {
        value: leak + (1.0 - leak) * base,
        vacuous: false,
    })
}

/// No-decoy rate from observed quantities:
/// `(Q - e_src)(1 - f h(E) - h(e_ph^{v_th})) - e_src f h(E)`.
pub fn no_decoy_formula(f: f64, gain: f64, e_bit: f64, e_src: f64, packet_length: u32, v_th: u32) -> Result<f64> {
    let h_bit = capped_entropy(e_bit)?;
    let h_ph = binary_entropy(phase_error_n(packet_length, v_th)?);
    Ok((gain - e_src) * (1.0 - f * h_bit - h_ph) - e_src * f * h_bit)
}

fn check_tier(proto: &ProtocolParams, expected: &[DecoyTier], what: &str) -> Result<()> {
    proto.validate()?;
    if !expected.contains(&proto.tier) {
        return Err(Error::Unsupported(format!("{what} called with the {} tier", proto.tier)));
    }
    Ok(())
}

/// Rate without decoy states at threshold `proto.v_th`.
pub fn rate_no_decoy(src: &SourceModel, ch: &ChannelParams, proto: &ProtocolParams) -> Result<RateResult> {
    check_tier(proto, &[DecoyTier::None], "rate_no_decoy")?;
    ch.validate()?;
    let l = proto.packet_length;
    let mut out = RateResult::new(DecoyTier::None, src, ch, 0.0);
    out.v_th = Some(proto.v_th);
    let e_src = sources::e_src(src, l, proto.v_th)?.get();
    out.e_src = e_src;
    if src.mu == 0.0 && ch.y0 == 0.0 {
        return Ok(out);
    }
    let gq = channel::gain_qber(ch, src, l)?;
    let ph = phase_error_packet(l, proto.v_th, e_src, gq.gain)?;
    let raw = no_decoy_formula(ch.f, gq.gain, gq.qber, e_src, l, proto.v_th)?;
    out.gain = gq.gain;
    out.e_bit = gq.qber;
    out.e_ph = ph.value;
    out.phase_error_vacuous = ph.vacuous;
    out.raw_rate = raw;
    out.rate = raw.max(0.0);
    Ok(out)
}

/// Per-photon-number contribution `Y P max(0, 1 - f h(e) - h(e_ph^n))`.
fn photon_term(f: f64, y: f64, p: f64, e: f64, e_ph: f64) -> Result<f64> {
    let bracket = 1.0 - f * capped_entropy(e)? - binary_entropy(Probability::new(e_ph)?);
    Ok(if bracket > 0.0 { y * p * bracket } else { 0.0 })
}

/// Rate with exact (no-eavesdropper) yields and error rates for every photon number.
pub fn rate_infinite_decoy(src: &SourceModel, ch: &ChannelParams, proto: &ProtocolParams) -> Result<RateResult> {
    check_tier(proto, &[DecoyTier::Infinite], "rate_infinite_decoy")?;
    ch.validate()?;
    let l = proto.packet_length;
    let mut out = RateResult::new(DecoyTier::Infinite, src, ch, 0.0);
    if src.mu == 0.0 && ch.y0 == 0.0 {
        return Ok(out);
    }
    let law = src.packet_law(l)?;
    let gq = channel::gain_qber(ch, src, l)?;
    let phase = |n: u32| phase_error_n(l, n).map(|p| p.get()).unwrap_or(0.5);

    let mut failure = None;
    let raw = match proto.infinite_form {
        InfiniteForm::PerPhotonNumber => law.expectation(|n| {
            let y = channel::yield_n(ch, n);
            if y <= 0.0 {
                return 0.0;
            }
            let e = channel::error_yield_n(ch, n) / y;
            photon_term(ch.f, y, 1.0, e, phase(n)).unwrap_or_else(|err| {
                failure.get_or_insert(err);
                0.0
            })
        }),
        InfiniteForm::Aggregate => {
            let leak = law.expectation(|n| channel::yield_n(ch, n) * binary_entropy(Probability::new(phase(n)).unwrap_or(Probability::ONE)));
            gq.gain * (1.0 - ch.f * capped_entropy(gq.qber)?) - leak
        }
    };
    if let Some(err) = failure {
        return Err(err);
    }
    let weighted_phase = law.expectation(|n| channel::yield_n(ch, n) * phase(n));
    out.gain = gq.gain;
    out.e_bit = gq.qber;
    out.e_ph = weighted_phase / gq.gain;
    out.raw_rate = raw;
    out.rate = raw.max(0.0);
    Ok(out)
}

/// Rate from decoy-state bounds on the first few photon numbers. Packets with
/// more photons than the tier bounds contribute nothing.
pub fn rate_finite_decoy(
    src: &SourceModel,
    ch: &ChannelParams,
    proto: &ProtocolParams,
    bounds: &YieldBounds,
) -> Result<RateResult> {
    check_tier(
        proto,
        &[DecoyTier::Two, DecoyTier::Three, DecoyTier::Four],
        "rate_finite_decoy",
    )?;
    ch.validate()?;
    let n_max = proto.tier.photon_cutoff().expect("finite tier");
    let l = proto.packet_length;
    let law = src.packet_law(l)?;

    let mut raw = 0.0;
    let mut weighted_phase = 0.0;
    let mut bounded_yield = 0.0;
    let mut e_ph_by_n = Vec::with_capacity(n_max as usize + 1);
    for n in 0..=n_max {
        let y = bounds
            .yield_lower(n)
            .ok_or_else(|| Error::InvalidBounds(format!("no Y{n} bound for the {} tier", proto.tier)))?;
        let e = if n == 0 {
            ch.e0
        } else {
            bounds
                .error_upper(n)
                .ok_or_else(|| Error::InvalidBounds(format!("no e{n} bound for the {} tier", proto.tier)))?
        };
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidBounds(format!("Y{n} = {y} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::InvalidBounds(format!("e{n} = {e} outside [0, 1]")));
        }
        let p = law.pmf(n);
        let e_ph = phase_error_n(l, n)?.get();
        raw += photon_term(ch.f, y, p, e, e_ph)?;
        weighted_phase += y * p * e_ph;
        bounded_yield += y * p;
        e_ph_by_n.push(e_ph);
    }

    let mut out = RateResult::new(proto.tier, src, ch, raw);
    out.e_src = crate::numerics::tail_probability(&law, n_max).get();
    out.e_ph = if bounded_yield > 0.0 { weighted_phase / bounded_yield } else { 0.0 };
    out.e_ph_by_n = e_ph_by_n;
    out.yield_bounds = Some(bounds.clone());
    if let Ok(gq) = channel::gain_qber(ch, src, l) {
        out.gain = gq.gain;
        out.e_bit = gq.qber;
    }
    Ok(out)
}

/// Rate for whatever tier `proto` selects. Finite tiers estimate their bounds
/// from the observations the channel produces without an eavesdropper.
pub fn key_rate(src: &SourceModel, ch: &ChannelParams, proto: &ProtocolParams) -> Result<RateResult> {
    match proto.tier {
        DecoyTier::None => rate_no_decoy(src, ch, proto),
        DecoyTier::Infinite => rate_infinite_decoy(src, ch, proto),
        DecoyTier::Two | DecoyTier::Three | DecoyTier::Four => {
            if !src.is_poissonian() {
                return Err(Error::Unsupported(
                    "finite decoy bounds assume Poissonian photon statistics".into(),
                ));
            }
            proto.validate()?;
            ch.validate()?;
            if src.mu == 0.0 {
                return Ok(RateResult::new(proto.tier, src, ch, 0.0));
            }
            let observations = decoy::simulate_observations(ch, proto.packet_length, src.mu, &proto.decoy_ladder()?)?;
            let bounds = decoy::estimate_bounds(proto.tier, &observations)?;
            rate_finite_decoy(src, ch, proto, &bounds)
        }
    }
}
