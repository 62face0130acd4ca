//! Packet-level photon statistics of the two light sources.
//!
//! A packet of `L` pulses at per-pulse intensity `mu` is a single mode of mean
//! `L * mu`. Weak coherent pulses give a Poisson law. The heralded source is a
//! thermal law filtered by the heralding detector (efficiency `eta_a`, dark
//! count `d_a`), evaluated at the packet intensity as well.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, PhotonLaw, Poisson, Probability, Thermal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceKind {
    Wcp,
    Hsps { eta_a: f64, d_a: f64 },
}

impl SourceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SourceKind::Wcp => "wcp",
            SourceKind::Hsps { .. } => "hsps",
        }
    }
}

/// A light source at a given per-pulse mean photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceModel {
    pub kind: SourceKind,
    pub mu: f64,
}

impl SourceModel {
    pub fn wcp(mu: f64) -> Result<Self> {
        Self::new(SourceKind::Wcp, mu)
    }

    pub fn hsps(mu: f64, eta_a: f64, d_a: f64) -> Result<Self> {
        Self::new(SourceKind::Hsps { eta_a, d_a }, mu)
    }

    /// Heralded source with the reference heralding detector.
    pub fn hsps_reference(mu: f64) -> Result<Self> {
        Self::hsps(mu, crate::reference::ETA_A, crate::reference::D_A)
    }

    pub fn new(kind: SourceKind, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::domain("mu", mu, ">= 0"));
        }
        if let SourceKind::Hsps { eta_a, d_a } = kind {
            if !(eta_a > 0.0 && eta_a <= 1.0) {
                return Err(Error::domain("eta_a", eta_a, "(0, 1]"));
            }
            if !(0.0..1.0).contains(&d_a) {
                return Err(Error::domain("d_a", d_a, "[0, 1)"));
            }
        }
        Ok(SourceModel { kind, mu })
    }

    /// Same source at another intensity.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(self.kind, mu)
    }

    pub fn is_poissonian(&self) -> bool {
        matches!(self.kind, SourceKind::Wcp)
    }

    /// Photon-number law of a whole packet of `packet_length` pulses.
    pub fn packet_law(&self, packet_length: u32) -> Result<PacketLaw> {
        check_packet_length(packet_length)?;
        let x = packet_length as f64 * self.mu;
        match self.kind {
            SourceKind::Wcp => Ok(PacketLaw::Poisson(Poisson::new(x)?)),
            SourceKind::Hsps { eta_a, d_a } => Ok(PacketLaw::Heralded(Heralded::new(x, eta_a, d_a)?)),
        }
    }
}

pub(crate) fn check_packet_length(packet_length: u32) -> Result<()> {
    if packet_length < 2 {
        return Err(Error::domain("packet length", packet_length as f64, ">= 2"));
    }
    Ok(())
}

/// Thermal light post-selected on a heralding click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heralded {
    thermal: Thermal,
    eta_a: f64,
    d_a: f64,
    post: f64,
}

impl Heralded {
    pub fn new(mean: f64, eta_a: f64, d_a: f64) -> Result<Self> {
        let thermal = Thermal::new(mean)?;
        let post = post_selection_probability(mean, eta_a, d_a);
        if !(post > 0.0) {
            return Err(Error::Degenerate(format!(
                "heralding probability vanishes (mean {mean}, d_a {d_a})"
            )));
        }
        Ok(Heralded {
            thermal,
            eta_a,
            d_a,
            post,
        })
    }

    /// `P_post(x) = d_a / (1 + x) + x eta_a / (1 + x eta_a)`.
    pub fn post_selection(&self) -> f64 {
        self.post
    }

    pub fn mean(&self) -> f64 {
        self.thermal.mean()
    }

    pub fn eta_a(&self) -> f64 {
        self.eta_a
    }

    pub fn d_a(&self) -> f64 {
        self.d_a
    }

    /// Probability the heralding detector fires on `n` photons, `1 - (1 - eta_a)^n`.
    pub fn herald_efficiency(&self, n: u32) -> f64 {
        -(n as f64 * (-self.eta_a).ln_1p()).exp_m1()
    }
}

/// `P_post(x)` for thermal mean `x`.
pub fn post_selection_probability(x: f64, eta_a: f64, d_a: f64) -> f64 {
    d_a / (1.0 + x) + x * eta_a / (1.0 + x * eta_a)
}

impl PhotonLaw for Heralded {
    fn pmf(&self, n: u32) -> f64 {
        let weight = if n == 0 { self.d_a } else { self.herald_efficiency(n) };
        weight * self.thermal.pmf(n) / self.post
    }

    fn tail_bound(&self, n: u32, _pmf_n: f64) -> f64 {
        self.thermal.tail_bound(n, self.thermal.pmf(n)) / self.post
    }
}

/// Packet photon-number law for either source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PacketLaw {
    Poisson(Poisson),
    Heralded(Heralded),
}

impl PacketLaw {
    pub fn mean_intensity(&self) -> f64 {
        match self {
            PacketLaw::Poisson(p) => p.mean(),
            PacketLaw::Heralded(h) => h.mean(),
        }
    }
}

impl PhotonLaw for PacketLaw {
    fn pmf(&self, n: u32) -> f64 {
        match self {
            PacketLaw::Poisson(p) => p.pmf(n),
            PacketLaw::Heralded(h) => h.pmf(n),
        }
    }

    fn tail_bound(&self, n: u32, pmf_n: f64) -> f64 {
        match self {
            PacketLaw::Poisson(p) => p.tail_bound(n, pmf_n),
            PacketLaw::Heralded(h) => h.tail_bound(n, pmf_n),
        }
    }
}

/// Probability that a packet of `packet_length` pulses carries `n` photons.
pub fn packet_pmf(src: &SourceModel, packet_length: u32, n: u32) -> Result<Probability> {
    Probability::new(src.packet_law(packet_length)?.pmf(n))
}

/// `e_src = Pr(n > v_th)` for one packet.
pub fn e_src(src: &SourceModel, packet_length: u32, v_th: u32) -> Result<Probability> {
    Ok(numerics::tail_probability(&src.packet_law(packet_length)?, v_th))
}
