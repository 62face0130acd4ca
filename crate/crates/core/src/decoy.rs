//! Finite decoy-state estimation for Poissonian sources.
//!
//! Every observation is a packet intensity `x = L v` with its gain `Q_x` and
//! QBER `E_x`. With `F(x) = Q_x e^x = sum_n Y_n x^n / n!` and
//! `G(x) = E_x Q_x e^x = sum_n e_n Y_n x^n / n!`, divided differences of `F`
//! and `G` isolate the low photon-number terms. The remaining higher-order
//! terms are bounded through the signal observation, which needs the signal
//! intensity to exceed the sum of the decoys involved.
//!
//! Observations are used in fixed subsets anchored on the strongest decoy
//! `d1` and the weakest one `dk` (normally vacuum):
//!
//! | quantity      | observations          |
//! |---------------|-----------------------|
//! | `Y0, Y1, e1`  | `d1, dk`              |
//! | `Y2, e2`      | `d1, d2, dk`          |
//! | `Y3, e3`      | `d1, d2, d3, dk`      |
//!
//! so a richer decoy list never changes the lower-order bounds.
//!
//! Each linear combination carries a rounding margin proportional to the sum
//! of the magnitudes of its terms. Lower bounds subtract it and upper bounds add
//! it, so a bound swamped by cancellation turns vacuous instead of unsound.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::rates::DecoyTier;

/// Rounding margin, in units of machine epsilon, per unit of absolute term mass.
const ROUNDING_ULPS: f64 = 64.0;

/// One intensity setting as Alice and Bob observe it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyObservation {
    /// Mean photon number of the whole packet, `L v`.
    pub packet_intensity: f64,
    pub gain: f64,
    pub qber: f64,
}

impl DecoyObservation {
    pub fn new(packet_intensity: f64, gain: f64, qber: f64) -> Result<Self> {
        if !(packet_intensity.is_finite() && packet_intensity >= 0.0) {
            return Err(Error::domain("packet intensity", packet_intensity, ">= 0"));
        }
        if !(0.0..=1.0).contains(&gain) {
            return Err(Error::domain("gain", gain, "[0, 1]"));
        }
        if !(0.0..=1.0).contains(&qber) {
            return Err(Error::domain("qber", qber, "[0, 1]"));
        }
        Ok(DecoyObservation {
            packet_intensity,
            gain,
            qber,
        })
    }

    /// `Q e^x`, formed in log space.
    fn scaled_gain(&self) -> f64 {
        if self.gain == 0.0 {
            0.0
        } else {
            (self.gain.ln() + self.packet_intensity).exp()
        }
    }

    /// `E Q e^x`.
    fn scaled_error_gain(&self) -> f64 {
        if self.gain == 0.0 || self.qber == 0.0 {
            0.0
        } else {
            (self.gain.ln() + self.qber.ln() + self.packet_intensity).exp()
        }
    }
}

/// A sum of terms that remembers how much cancellation went into it.
#[derive(Debug, Default, Clone, Copy)]
struct Combination {
    value: f64,
    mass: f64,
}

impl Combination {
    fn add(&mut self, term: f64) {
        self.value += term;
        self.mass += term.abs();
    }

    fn margin(&self) -> f64 {
        ROUNDING_ULPS * f64::EPSILON * self.mass
    }

    fn lower(&self) -> f64 {
        self.value - self.margin()
    }

    fn upper(&self) -> f64 {
        self.value + self.margin()
    }
}

/// A clamped bound together with whether clamping made it vacuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    pub vacuous: bool,
}

impl Bound {
    fn lower(raw: f64) -> Self {
        if raw.is_nan() || raw <= 0.0 {
            Bound { value: 0.0, vacuous: true }
        } else {
            Bound { value: raw.min(1.0), vacuous: false }
        }
    }

    fn upper(raw: f64) -> Self {
        if raw.is_nan() || raw >= 1.0 {
            Bound { value: 1.0, vacuous: true }
        } else {
            Bound { value: raw.max(0.0), vacuous: false }
        }
    }

    fn vacuous_upper() -> Self {
        Bound { value: 1.0, vacuous: true }
    }
}

fn check_descending(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Ordering(format!("{what}: intensities must be finite and >= 0, got {xs:?}")));
    }
    if xs.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Ordering(format!("{what}: intensities must strictly decrease, got {xs:?}")));
    }
    Ok(())
}

fn check_signal_dominates(signal: f64, decoys: &[f64], what: &str) -> Result<()> {
    let sum: f64 = decoys.iter().sum();
    if signal <= sum {
        return Err(Error::Ordering(format!(
            "{what}: signal intensity {signal} must exceed the decoy sum {sum}"
        )));
    }
    Ok(())
}

/// `Y0 >= (a F(b) - b F(a)) / (a - b)`, exact when `b = 0`.
pub fn bound_y0(strong: &DecoyObservation, weak: &DecoyObservation) -> Result<Bound> {
    let (a, b) = (strong.packet_intensity, weak.packet_intensity);
    check_descending(&[a, b], "Y0 bound")?;
    let mut c = Combination::default();
    c.add(a * weak.scaled_gain());
    c.add(-b * strong.scaled_gain());
    if b == 0.0 {
        // Vacuum decoy: the combination is exactly a F(0).
        return Ok(Bound::lower(weak.scaled_gain()));
    }
    Ok(Bound::lower(c.lower() / (a - b)))
}

/// Lower bound on the single-photon yield from the signal and two decoys.
pub fn bound_y1(
    signal: &DecoyObservation,
    strong: &DecoyObservation,
    weak: &DecoyObservation,
    y0_l: f64,
) -> Result<Bound> {
    let (s, a, b) = (signal.packet_intensity, strong.packet_intensity, weak.packet_intensity);
    check_descending(&[s, a, b], "Y1 bound")?;
    check_signal_dominates(s, &[a, b], "Y1 bound")?;
    let k = (a * a - b * b) / (s * s);
    let mut c = Combination::default();
    c.add(strong.scaled_gain());
    c.add(-weak.scaled_gain());
    c.add(-k * signal.scaled_gain());
    c.add(k * y0_l);
    let denom = s * (a - b) - (a * a - b * b);
    if denom <= 0.0 {
        return Err(Error::Degenerate(format!("Y1 bound denominator {denom} <= 0")));
    }
    Ok(Bound::lower(s / denom * c.lower()))
}

/// Coefficients `1 / prod_{j != i} (x_i - x_j)` of the divided difference.
fn divided_difference_weights(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(i, xi)| {
            let prod: f64 = xs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, xj)| xi - xj)
                .product();
            1.0 / prod
        })
        .collect()
}

/// Lower bound on the two-photon yield from the signal and three decoys.
pub fn bound_y2(
    signal: &DecoyObservation,
    decoys: [&DecoyObservation; 3],
    y0_l: f64,
    y1_l: f64,
) -> Result<Bound> {
    let s = signal.packet_intensity;
    let xs: Vec<f64> = decoys.iter().map(|o| o.packet_intensity).collect();
    check_descending(&[&[s][..], &xs].concat(), "Y2 bound")?;
    check_signal_dominates(s, &xs, "Y2 bound")?;
    let sum: f64 = xs.iter().sum();
    // Second divided difference of F bounds Y2 / 2 plus the higher orders,
    // which are at most (sum / s^3) (F(s) - Y0 - Y1 s - Y2 s^2 / 2).
    let mut c = Combination::default();
    for (w, o) in divided_difference_weights(&xs).iter().zip(decoys) {
        c.add(s * w * o.scaled_gain());
    }
    let tail = sum / (s * s);
    c.add(-tail * signal.scaled_gain());
    c.add(tail * y0_l);
    c.add(tail * y1_l * s);
    Ok(Bound::lower(2.0 * c.lower() / (s - sum)))
}

/// Lower bound on the three-photon yield from the signal and four decoys.
pub fn bound_y3(
    signal: &DecoyObservation,
    decoys: [&DecoyObservation; 4],
    y0_l: f64,
    y1_l: f64,
    y2_l: f64,
) -> Result<Bound> {
    let s = signal.packet_intensity;
    let xs: Vec<f64> = decoys.iter().map(|o| o.packet_intensity).collect();
    check_descending(&[&[s][..], &xs].concat(), "Y3 bound")?;
    check_signal_dominates(s, &xs, "Y3 bound")?;
    let sum: f64 = xs.iter().sum();
    let mut c = Combination::default();
    for (w, o) in divided_difference_weights(&xs).iter().zip(decoys) {
        c.add(s * w * o.scaled_gain());
    }
    let tail = sum / (s * s * s);
    c.add(-tail * signal.scaled_gain());
    c.add(tail * y0_l);
    c.add(tail * y1_l * s);
    c.add(tail * y2_l * s * s / 2.0);
    Ok(Bound::lower(6.0 * c.lower() / (s - sum)))
}

/// Upper bound on the single-photon error rate.
pub fn bound_e1(strong: &DecoyObservation, weak: &DecoyObservation, y1_l: f64) -> Result<Bound> {
    let (a, b) = (strong.packet_intensity, weak.packet_intensity);
    check_descending(&[a, b], "e1 bound")?;
    let mut c = Combination::default();
    c.add(strong.scaled_error_gain());
    c.add(-weak.scaled_error_gain());
    error_bound(c, (a - b) * y1_l)
}

/// Upper bound on the two-photon error rate.
pub fn bound_e2(decoys: [&DecoyObservation; 3], y2_l: f64) -> Result<Bound> {
    let xs: Vec<f64> = decoys.iter().map(|o| o.packet_intensity).collect();
    check_descending(&xs, "e2 bound")?;
    let mut c = Combination::default();
    for (w, o) in divided_difference_weights(&xs).iter().zip(decoys) {
        c.add(w * o.scaled_error_gain());
    }
    error_bound(c, y2_l / 2.0)
}

/// Upper bound on the three-photon error rate.
pub fn bound_e3(decoys: [&DecoyObservation; 4], y3_l: f64) -> Result<Bound> {
    let xs: Vec<f64> = decoys.iter().map(|o| o.packet_intensity).collect();
    check_descending(&xs, "e3 bound")?;
    let mut c = Combination::default();
    for (w, o) in divided_difference_weights(&xs).iter().zip(decoys) {
        c.add(w * o.scaled_error_gain());
    }
    error_bound(c, y3_l / 6.0)
}

fn error_bound(numerator: Combination, denom: f64) -> Result<Bound> {
    if !(denom > 0.0) {
        return Ok(Bound::vacuous_upper());
    }
    if numerator.value == 0.0 && numerator.mass == 0.0 {
        return Ok(Bound { value: 0.0, vacuous: false });
    }
    Ok(Bound::upper(numerator.upper() / denom))
}

/// Decoy-state estimates of the low photon-number yields and error rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YieldBounds {
    pub tier: DecoyTier,
    pub y0_l: Bound,
    pub y1_l: Bound,
    pub y2_l: Option<Bound>,
    pub y3_l: Option<Bound>,
    pub e1_u: Bound,
    pub e2_u: Option<Bound>,
    pub e3_u: Option<Bound>,
}

impl YieldBounds {
    /// Lower bound on `Y_n`, `None` when the tier does not estimate it.
    pub fn yield_lower(&self, n: u32) -> Option<f64> {
        match n {
            0 => Some(self.y0_l.value),
            1 => Some(self.y1_l.value),
            2 => self.y2_l.map(|b| b.value),
            3 => self.y3_l.map(|b| b.value),
            _ => None,
        }
    }

    /// Upper bound on `e_n` for `n >= 1`.
    pub fn error_upper(&self, n: u32) -> Option<f64> {
        match n {
            1 => Some(self.e1_u.value),
            2 => self.e2_u.map(|b| b.value),
            3 => self.e3_u.map(|b| b.value),
            _ => None,
        }
    }

    /// Names of the bounds that clamping made vacuous.
    pub fn vacuous(&self) -> Vec<&'static str> {
        let all = [
            ("Y0_L", Some(self.y0_l)),
            ("Y1_L", Some(self.y1_l)),
            ("Y2_L", self.y2_l),
            ("Y3_L", self.y3_l),
            ("e1_U", Some(self.e1_u)),
            ("e2_U", self.e2_u),
            ("e3_U", self.e3_u),
        ];
        all.into_iter()
            .filter_map(|(name, b)| b.filter(|b| b.vacuous).map(|_| name))
            .collect()
    }

    /// Bounds supplied directly, e.g. the exact no-eavesdropper values.
    pub fn from_values(tier: DecoyTier, yields: &[f64], errors: &[f64]) -> Result<Self> {
        let n_max = tier
            .photon_cutoff()
            .ok_or_else(|| Error::InvalidBounds(format!("{} tier has no decoy bounds", tier.name())))?
            as usize;
        if yields.len() != n_max + 1 || errors.len() != n_max {
            return Err(Error::InvalidBounds(format!(
                "{} tier needs {} yields and {} error rates",
                tier.name(),
                n_max + 1,
                n_max
            )));
        }
        let check = |name: &str, v: f64| -> Result<Bound> {
            if !(-crate::numerics::PROBABILITY_SLACK..=1.0 + crate::numerics::PROBABILITY_SLACK).contains(&v) {
                return Err(Error::InvalidBounds(format!("{name} = {v} outside [0, 1]")));
            }
            Ok(Bound { value: v.clamp(0.0, 1.0), vacuous: false })
        };
        let y = yields
            .iter()
            .enumerate()
            .map(|(n, v)| check(&format!("Y{n}"), *v))
            .collect::<Result<Vec<_>>>()?;
        let e = errors
            .iter()
            .enumerate()
            .map(|(n, v)| check(&format!("e{}", n + 1), *v))
            .collect::<Result<Vec<_>>>()?;
        Ok(YieldBounds {
            tier,
            y0_l: y[0],
            y1_l: y[1],
            y2_l: y.get(2).copied(),
            y3_l: y.get(3).copied(),
            e1_u: e[0],
            e2_u: e.get(1).copied(),
            e3_u: e.get(2).copied(),
        })
    }
}

/// Runs the bound formulas of `tier` on `observations`: the signal first, then
/// decoys in strictly decreasing intensity. Extra decoys are skipped from the
/// middle of the list, so the weakest (vacuum) decoy always anchors the bounds.
pub fn estimate_bounds(tier: DecoyTier, observations: &[DecoyObservation]) -> Result<YieldBounds> {
    let n_max = tier
        .photon_cutoff()
        .ok_or_else(|| Error::Unsupported(format!("{} tier does not use decoy bounds", tier.name())))?
        as usize;
    let needed = n_max + 2;
    if observations.len() < needed {
        return Err(Error::InsufficientObservations {
            tier: tier.name(),
            needed,
            got: observations.len(),
        });
    }
    let xs: Vec<f64> = observations.iter().map(|o| o.packet_intensity).collect();
    check_descending(&xs, "observations")?;

    let signal = &observations[0];
    let decoys = &observations[1..];
    let weakest = decoys.last().expect("at least two decoys");
    let d1 = &decoys[0];

    let y0_l = bound_y0(d1, weakest)?;
    let y1_l = bound_y1(signal, d1, weakest, y0_l.value)?;
    let e1_u = if y1_l.vacuous {
        Bound::vacuous_upper()
    } else {
        bound_e1(d1, weakest, y1_l.value)?
    };

    let mut bounds = YieldBounds {
        tier,
        y0_l,
        y1_l,
        y2_l: None,
        y3_l: None,
        e1_u,
        e2_u: None,
        e3_u: None,
    };

    if n_max >= 2 {
        let set = [d1, &decoys[1], weakest];
        let y2 = bound_y2(signal, set, y0_l.value, y1_l.value)?;
        bounds.e2_u = Some(if y2.vacuous {
            Bound::vacuous_upper()
        } else {
            bound_e2(set, y2.value)?
        });
        bounds.y2_l = Some(y2);
    }
    if n_max >= 3 {
        let set = [d1, &decoys[1], &decoys[2], weakest];
        let y2 = bounds.y2_l.map_or(0.0, |b| b.value);
        let y3 = bound_y3(signal, set, y0_l.value, y1_l.value, y2)?;
        bounds.e3_u = Some(if y3.vacuous {
            Bound::vacuous_upper()
        } else {
            bound_e3(set, y3.value)?
        });
        bounds.y3_l = Some(y3);
    }
    Ok(bounds)
}

/// Decoy intensities as fractions of the signal intensity, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyLadder {
    fractions: Vec<f64>,
}

/// Strongest decoy of the default ladder, as a fraction of the signal.
pub const DEFAULT_LEAD_FRACTION: f64 = 0.02;

impl DecoyLadder {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.len() < 2 {
            return Err(Error::InsufficientObservations {
                tier: "decoy ladder",
                needed: 2,
                got: fractions.len(),
            });
        }
        check_descending(&fractions, "decoy ladder")?;
        if fractions[0] >= 1.0 {
            return Err(Error::Ordering(format!(
                "decoy fraction {} must be below the signal",
                fractions[0]
            )));
        }
        check_signal_dominates(1.0, &fractions, "decoy ladder")?;
        Ok(DecoyLadder { fractions })
    }

    /// Halving ladder `c, c/2, ..., vacuum` with as many decoys as `tier` uses.
    pub fn geometric(tier: DecoyTier, lead: f64) -> Result<Self> {
        let n_max = tier
            .photon_cutoff()
            .ok_or_else(|| Error::Unsupported(format!("{} tier has no decoys", tier.name())))?;
        let mut fractions: Vec<f64> = (0..n_max).map(|i| lead / 2f64.powi(i as i32)).collect();
        fractions.push(0.0);
        Self::new(fractions)
    }

    pub fn default_for(tier: DecoyTier) -> Result<Self> {
        Self::geometric(tier, DEFAULT_LEAD_FRACTION)
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Per-pulse decoy intensities for signal intensity `mu`.
    pub fn intensities(&self, mu: f64) -> Vec<f64> {
        self.fractions.iter().map(|f| f * mu).collect()
    }
}

/// Observations a Poissonian source produces on `ch` without an eavesdropper:
/// the signal at `mu` followed by the ladder's decoys.
pub fn simulate_observations(
    ch: &ChannelParams,
    packet_length: u32,
    mu: f64,
    ladder: &DecoyLadder,
) -> Result<Vec<DecoyObservation>> {
    std::iter::once(mu)
        .chain(ladder.intensities(mu))
        .map(|v| {
            let x = packet_length as f64 * v;
            let detect = -(-ch.eta * x).exp_m1();
            let gain = ch.y0 + (1.0 - ch.y0) * detect;
            let error_gain = ch.e0 * ch.y0 + ch.e_d * (1.0 - ch.y0) * detect;
            let qber = if gain > 0.0 { error_gain / gain } else { 0.0 };
            DecoyObservation::new(x, gain, qber)
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct ObservationRow {
    intensity_per_pulse: f64,
    gain: f64,
    qber: f64,
}

/// Reads `intensity_per_pulse,gain,qber` rows, returning them strongest first.
pub fn read_observations<R: Read>(reader: R, packet_length: u32) -> Result<Vec<DecoyObservation>> {
    crate::sources::check_packet_length(packet_length)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<ObservationRow>().enumerate() {
        let row = row.map_err(|e| Error::Io(format!("row {}: {e}", line + 2)))?;
        let obs = DecoyObservation::new(packet_length as f64 * row.intensity_per_pulse, row.gain, row.qber)
            .map_err(|e| Error::Io(format!("row {}: {e}", line + 2)))?;
        out.push(obs);
    }
    out.sort_by(|a, b| b.packet_intensity.total_cmp(&a.packet_intensity));
    Ok(out)
}

pub fn read_observations_file(path: &Path, packet_length: u32) -> Result<Vec<DecoyObservation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_observations(file, packet_length)
}

/// Tier a list of observations supports: signal plus 2, 3 or 4+ decoys.
pub fn infer_tier(observation_count: usize) -> Result<DecoyTier> {
    match observation_count {
        0..=2 => Err(Error::InsufficientObservations {
            tier: "two",
            needed: 3,
            got: observation_count,
        }),
        3 => Ok(DecoyTier::Two),
        4 => Ok(DecoyTier::Three),
        _ => Ok(DecoyTier::Four),
    }
}
