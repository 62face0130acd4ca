//! Run configuration: one JSON document, every field optional.
//!
//! The defaults describe the weak-coherent and heralded sources on the
//! reference fiber link at packet length 32, swept from 0 to 160 km without
//! decoys and with infinite decoys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rrdps::channel::{self, ChannelParams};
use rrdps::decoy::DecoyLadder;
use rrdps::optimize::SearchSpec;
use rrdps::rates::{self, DecoyTier, InfiniteForm, ProtocolParams};
use rrdps::{reference, SourceKind, SourceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Keyword {
    Optimize,
    Default,
}

/// A value the run either fixes or leaves to a keyword.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged, expecting = "a value, \"optimize\" or \"default\"")]
pub enum Setting<T> {
    Fixed(T),
    Keyword(Keyword),
}

impl<T> Setting<T> {
    fn fixed(&self) -> Option<&T> {
        match self {
            Setting::Fixed(v) => Some(v),
            Setting::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceName {
    Wcp,
    Hsps,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceBlock {
    pub kinds: Vec<SourceName>,
    /// Per-pulse mean photon number, or "optimize".
    pub mu: Setting<f64>,
    pub eta_a: f64,
    pub d_a: f64,
}

impl Default for SourceBlock {
    fn default() -> Self {
        SourceBlock {
            kinds: vec![SourceName::Wcp, SourceName::Hsps],
            mu: Setting::Keyword(Keyword::Optimize),
            eta_a: reference::ETA_A,
            d_a: reference::D_A,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelBlock {
    pub alpha_db_per_km: f64,
    /// Packet background yield; derived from `dark_count_per_pulse` if absent.
    pub y0: Option<f64>,
    pub dark_count_per_pulse: f64,
    pub e0: f64,
    pub e_d: f64,
    pub f: f64,
    /// Receiver efficiency multiplying the fiber transmittance.
    pub eta_b: f64,
    /// Fixed overall transmittance; replaces the sweep with a single point.
    pub eta: Option<f64>,
}

impl Default for ChannelBlock {
    fn default() -> Self {
        ChannelBlock {
            alpha_db_per_km: reference::ALPHA_DB_PER_KM,
            y0: None,
            dark_count_per_pulse: channel::DARK_COUNT_PER_PULSE,
            e0: channel::BACKGROUND_ERROR,
            e_d: reference::E_D,
            f: reference::F_EC,
            eta_b: channel::BOB_EFFICIENCY,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolBlock {
    pub packet_length: u32,
    /// Photon threshold, or "optimize".
    pub v_th: Setting<u32>,
    pub tiers: Vec<DecoyTier>,
    /// Decoy intensities as fractions of the signal, strongest first, or "default".
    pub decoys: Setting<Vec<f64>>,
    pub infinite_form: InfiniteForm,
}

impl Default for ProtocolBlock {
    fn default() -> Self {
        ProtocolBlock {
            packet_length: 32,
            v_th: Setting::Keyword(Keyword::Optimize),
            tiers: vec![DecoyTier::None, DecoyTier::Infinite],
            decoys: Setting::Keyword(Keyword::Default),
            infinite_form: InfiniteForm::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TransmittanceRange {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

/// Exactly one of the fields may be set; none means the default distance range.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub distance_km: Option<DistanceRange>,
    pub distances_km: Option<Vec<f64>>,
    /// Log-spaced overall transmittances, largest first.
    pub transmittance: Option<TransmittanceRange>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBlock {
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_points: usize,
    pub v_th_min: Option<u32>,
    pub v_th_max: Option<u32>,
    pub refine_rounds: u32,
    /// Coordinate-descent rounds over the decoy fractions; 0 keeps them fixed.
    pub decoy_rounds: u32,
}

impl Default for SearchBlock {
    fn default() -> Self {
        let s = SearchSpec::default();
        SearchBlock {
            mu_min: s.mu_min,
            mu_max: s.mu_max,
            mu_points: s.mu_points,
            v_th_min: None,
            v_th_max: None,
            refine_rounds: s.refine_rounds,
            decoy_rounds: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateBlock {
    pub trials: u64,
    pub seed: u64,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        ValidateBlock {
            trials: 200_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub path: Option<PathBuf>,
    /// Significant digits of every number written.
    pub precision: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            path: None,
            precision: 12,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceBlock,
    pub channel: ChannelBlock,
    pub protocol: ProtocolBlock,
    pub sweep: Option<SweepBlock>,
    pub search: SearchBlock,
    pub validate: ValidateBlock,
    pub output: OutputBlock,
}

/// One point of a sweep: a channel and the distance it stands for.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub distance_km: f64,
    pub channel: ChannelParams,
}

impl RunConfig {
    /// Reads a config file without validating it, so command-line
    /// overrides can be applied first.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("line {}, column {}: {e}", e.line(), e.column()))
    }

    /// Parses and validates.
    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::from_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field against the library's invariants, naming the
    /// offending field on failure.
    pub fn validate(&self) -> Result<()> {
        if self.source.kinds.is_empty() {
            bail!("source.kinds: list at least one source");
        }
        if let Some(mu) = self.source.mu.fixed() {
            if !(*mu > 0.0 && mu.is_finite()) {
                bail!("source.mu: expected a positive number or \"optimize\", got {mu}");
            }
        }
        if self.source.mu == Setting::Keyword(Keyword::Default) {
            bail!("source.mu: expected a number or \"optimize\"");
        }
        SourceModel::new(
            SourceKind::Hsps {
                eta_a: self.source.eta_a,
                d_a: self.source.d_a,
            },
            0.1,
        )
        .context("source.eta_a / source.d_a")?;

        let l = self.protocol.packet_length;
        if l < 2 {
            bail!("protocol.packet_length: must be at least 2, got {l}");
        }
        if let Some(v) = self.protocol.v_th.fixed() {
            if *v > rates::max_threshold(l) {
                bail!(
                    "protocol.v_th: must satisfy v_th < (L - 1) / 2, i.e. at most {} for L = {l}; got {v}",
                    rates::max_threshold(l)
                );
            }
        }
        if self.protocol.v_th == Setting::Keyword(Keyword::Default) {
            bail!("protocol.v_th: expected an integer or \"optimize\"");
        }
        if self.protocol.tiers.is_empty() {
            bail!("protocol.tiers: list at least one tier");
        }
        if self.protocol.decoys == Setting::Keyword(Keyword::Optimize) {
            bail!("protocol.decoys: use \"default\" with search.decoy_rounds > 0 to tune the decoys");
        }
        for tier in &self.protocol.tiers {
            self.protocol_params(*tier).with_context(|| format!("protocol.tiers: {tier}"))?;
            if tier.is_finite() && self.source.kinds.contains(&SourceName::Hsps) {
                bail!("protocol.tiers: the {tier} tier needs a weak-coherent source; finite decoy bounds assume Poissonian photon statistics");
            }
        }

        self.template(l).context("channel")?;
        self.search_spec().context("search")?;
        if self.search.v_th_min.unwrap_or(0) > self.search.v_th_max.unwrap_or(u32::MAX) {
            bail!("search.v_th_min: exceeds search.v_th_max");
        }
        self.sweep_points(l).context("sweep")?;
        if self.validate.trials == 0 {
            bail!("validate.trials: must be at least 1");
        }
        if !(1..=17).contains(&self.output.precision) {
            bail!("output.precision: must be between 1 and 17 significant digits");
        }
        Ok(())
    }

    /// Channel at the reference point (zero distance or the fixed `eta`).
    pub fn template(&self, packet_length: u32) -> Result<ChannelParams> {
        let c = &self.channel;
        let y0 = match c.y0 {
            Some(y0) => y0,
            None => {
                if !(0.0..1.0).contains(&c.dark_count_per_pulse) {
                    bail!("dark_count_per_pulse: must lie in [0, 1), got {}", c.dark_count_per_pulse);
                }
                channel::packet_background_yield(c.dark_count_per_pulse, packet_length)
            }
        };
        let ch = ChannelParams {
            eta: c.eta.unwrap_or(c.eta_b),
            y0,
            e0: c.e0,
            e_d: c.e_d,
            alpha_db_per_km: c.alpha_db_per_km,
            eta_b: c.eta_b,
            f: c.f,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn source(&self, name: SourceName) -> Result<SourceModel> {
        let mu = self.source.mu.fixed().copied().unwrap_or(0.1);
        Ok(match name {
            SourceName::Wcp => SourceModel::wcp(mu)?,
            SourceName::Hsps => SourceModel::hsps(mu, self.source.eta_a, self.source.d_a)?,
        })
    }

    pub fn protocol_params(&self, tier: DecoyTier) -> Result<ProtocolParams> {
        let mut p = ProtocolParams::new(
            self.protocol.packet_length,
            self.protocol.v_th.fixed().copied().unwrap_or(0),
            tier,
        )?;
        p.infinite_form = self.protocol.infinite_form;
        if let (Some(fractions), Some(n)) = (self.protocol.decoys.fixed(), tier.photon_cutoff()) {
            // Lower tiers keep the strongest decoys and the weakest one.
            let keep = n as usize;
            if fractions.len() < keep + 1 {
                bail!(
                    "protocol.decoys: the {tier} tier needs {} decoys, {} given",
                    keep + 1,
                    fractions.len()
                );
            }
            let mut chosen = fractions[..keep].to_vec();
            chosen.push(*fractions.last().expect("nonempty"));
            p.ladder = Some(DecoyLadder::new(chosen)?);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn search_spec(&self) -> Result<SearchSpec> {
        let s = &self.search;
        let (mu_min, mu_max, mu_points) = match self.source.mu.fixed() {
            Some(mu) => (*mu, *mu, 1),
            None => (s.mu_min, s.mu_max, s.mu_points),
        };
        let top = rates::max_threshold(self.protocol.packet_length);
        let v_th_range = match self.protocol.v_th.fixed() {
            Some(v) => Some((*v, *v)),
            None => Some((s.v_th_min.unwrap_or(0), s.v_th_max.unwrap_or(top).min(top))),
        };
        let spec = SearchSpec {
            mu_min,
            mu_max,
            mu_points,
            v_th_range,
            refine_rounds: s.refine_rounds,
            seeds: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Channels to evaluate, in output order.
    pub fn sweep_points(&self, packet_length: u32) -> Result<Vec<SweepPoint>> {
        let template = self.template(packet_length)?;
        let at_eta = |eta: f64| -> Result<SweepPoint> {
            let channel = template.with_eta(eta)?;
            Ok(SweepPoint {
                distance_km: channel.distance_km()?,
                channel,
            })
        };
        if let Some(eta) = self.channel.eta {
            if self.sweep.is_some() {
                bail!("channel.eta fixes a single point; remove either it or the sweep block");
            }
            return Ok(vec![at_eta(eta)?]);
        }
        let default_sweep = SweepBlock {
            distance_km: Some(DistanceRange {
                start: 0.0,
                stop: 160.0,
                step: 1.0,
            }),
            ..SweepBlock::default()
        };
        let sweep = self.sweep.as_ref().unwrap_or(&default_sweep);
        let set = [
            sweep.distance_km.is_some(),
            sweep.distances_km.is_some(),
            sweep.transmittance.is_some(),
        ];
        if set.iter().filter(|s| **s).count() != 1 {
            bail!("set exactly one of sweep.distance_km, sweep.distances_km, sweep.transmittance");
        }
        let distances = if let Some(r) = &sweep.distance_km {
            if !(r.step > 0.0 && r.start >= 0.0 && r.stop >= r.start) {
                bail!("distance_km: need 0 <= start <= stop and step > 0");
            }
            let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize;
            (0..=n).map(|i| r.start + i as f64 * r.step).collect()
        } else if let Some(d) = &sweep.distances_km {
            if d.iter().any(|x| !(*x >= 0.0)) || d.windows(2).any(|w| w[0] >= w[1]) {
                bail!("distances_km: need nonnegative, strictly ascending distances");
            }
            d.clone()
        } else {
            let t = sweep.transmittance.as_ref().expect("one field is set");
            if !(t.min > 0.0 && t.max <= 1.0 && t.min <= t.max && t.points >= 1) {
                bail!("transmittance: need 0 < min <= max <= 1 and points >= 1");
            }
            let mut etas = rrdps::optimize::log_grid(t.min, t.max, t.points);
            etas.reverse();
            return etas.into_iter().map(at_eta).collect();
        };
        distances
            .into_iter()
            .map(|d| {
                Ok(SweepPoint {
                    distance_km: d,
                    channel: template.at_distance(d)?,
                })
            })
            .collect()
    }
}
