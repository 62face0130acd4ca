//! Seeded Monte Carlo checks of the detection model and of sifting.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`). Trials are split
//! into [`PARTITIONS`] fixed partitions; partition `k` uses the generator
//! seeded with `ChaCha8Rng::seed_from_u64(seed)` and switched to stream `k`.
//! Partition `k` runs trials `k * T / P .. (k + 1) * T / P`. Counts are summed
//! as integers, so the estimate is bit-identical for any thread count.
//!
//! Per trial the photon number is drawn from the packet law: Poisson for weak
//! coherent pulses, thermal then heralded (unheralded trials discarded) for
//! the heralded source. Each photon survives with probability `eta`, and a
//! background click happens with probability `Y0`. Background clicks are
//! wrong with probability `e0` and take precedence; otherwise a photon click
//! is wrong with probability `e_d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::sources::{self, SourceKind, SourceModel};

/// Number of independent random streams the trials are split over.
pub const PARTITIONS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialConfig {
    pub trials: u64,
    pub seed: u64,
    pub src: SourceModel,
    pub ch: ChannelParams,
    pub packet_length: u32,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::domain("trials", 0.0, ">= 1"));
        }
        sources::check_packet_length(self.packet_length)?;
        self.ch.validate()
    }
}

fn partition_rng(seed: u64, partition: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(partition);
    rng
}

fn partition_len(trials: u64, partition: u64) -> u64 {
    let share = |k: u64| (trials as u128 * k as u128 / PARTITIONS as u128) as u64;
    share(partition + 1) - share(partition)
}

/// Integer counts over the partitions, summed in partition order.
fn run_partitions<T, F>(cfg: &TrialConfig, body: F) -> T
where
    T: Send + Default + std::ops::Add<Output = T>,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    (0..PARTITIONS)
        .into_par_iter()
        .map(|k| body(&mut partition_rng(cfg.seed, k), partition_len(cfg.trials, k)))
        .collect::<Vec<T>>()
        .into_iter()
        .fold(T::default(), |a, b| a + b)
}

/// Draws the photon number of one emitted packet; `None` when the heralded
/// source fails to herald.
struct PhotonSampler {
    kind: Kind,
}

enum Kind {
    Vacuum,
    Poisson(Poisson<f64>),
    Heralded { thermal: Geometric, eta_a: f64, d_a: f64 },
}

impl PhotonSampler {
    fn new(src: &SourceModel, packet_length: u32) -> Result<Self> {
        let x = packet_length as f64 * src.mu;
        let kind = match src.kind {
            SourceKind::Wcp if x == 0.0 => Kind::Vacuum,
            SourceKind::Wcp => Kind::Poisson(
                Poisson::new(x).map_err(|e| Error::Unsupported(format!("Poisson sampler: {e}")))?,
            ),
            SourceKind::Hsps { eta_a, d_a } => Kind::Heralded {
                // Failures before the first success with p = 1 / (1 + x)
                // follow the thermal law of mean x.
                thermal: Geometric::new(1.0 / (1.0 + x))
                    .map_err(|e| Error::Unsupported(format!("thermal sampler: {e}")))?,
                eta_a,
                d_a,
            },
        };
        Ok(PhotonSampler { kind })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Option<u64> {
        match &self.kind {
            Kind::Vacuum => Some(0),
            Kind::Poisson(p) => Some(p.sample(rng) as u64),
            Kind::Heralded { thermal, eta_a, d_a } => {
                let n = thermal.sample(rng);
                let heralded = if n == 0 {
                    rng.random::<f64>() < *d_a
                } else {
                    (0..n).any(|_| rng.random::<f64>() < *eta_a)
                };
                heralded.then_some(n)
            }
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Counts {
    packets: u64,
    detections: u64,
    errors: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            packets: self.packets + o.packets,
            detections: self.detections + o.detections,
            errors: self.errors + o.errors,
        }
    }
}

/// Empirical gain and QBER with binomial standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub gain: f64,
    pub qber: f64,
    pub gain_stderr: f64,
    pub qber_stderr: f64,
    /// Packets actually sent (heralded ones for the heralded source).
    pub packets: u64,
    pub detections: u64,
    pub errors: u64,
}

/// Binomial proportion and its standard error, zero for an empty sample.
fn proportion(hits: u64, total: u64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 0.0);
    }
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

/// Simulates `cfg.trials` packet emissions through the channel.
pub fn mc_gain_qber(cfg: &TrialConfig) -> Result<McEstimate> {
    cfg.validate()?;
    let sampler = PhotonSampler::new(&cfg.src, cfg.packet_length)?;
    let ch = cfg.ch;
    let counts = run_partitions(cfg, |rng, trials| {
        let mut c = Counts::default();
        for _ in 0..trials {
            let Some(n) = sampler.sample(rng) else {
                continue;
            };
            c.packets += 1;
            let background = rng.random::<f64>() < ch.y0;
            let arrived = (0..n).any(|_| rng.random::<f64>() < ch.eta);
            if !(background || arrived) {
                continue;
            }
            c.detections += 1;
            let error_rate = if background { ch.e0 } else { ch.e_d };
            if rng.random::<f64>() < error_rate {
                c.errors += 1;
            }
        }
        c
    });
    let (gain, gain_stderr) = proportion(counts.detections, counts.packets);
    let (qber, qber_stderr) = proportion(counts.errors, counts.detections);
    Ok(McEstimate {
        gain,
        qber,
        gain_stderr,
        qber_stderr,
        packets: counts.packets,
        detections: counts.detections,
        errors: counts.errors,
    })
}

/// Histogram of emitted packet photon numbers; the last bin collects
/// everything at or above `bins - 1`.
pub fn photon_histogram(cfg: &TrialConfig, bins: usize) -> Result<Vec<u64>> {
    cfg.validate()?;
    if bins == 0 {
        return Err(Error::domain("bins", 0.0, ">= 1"));
    }
    let sampler = PhotonSampler::new(&cfg.src, cfg.packet_length)?;
    Ok(run_partitions(cfg, |rng, trials| {
        let mut h = Histogram(vec![0; bins]);
        for _ in 0..trials {
            if let Some(n) = sampler.sample(rng) {
                h.0[(n as usize).min(bins - 1)] += 1;
            }
        }
        h
    })
    .0)
}

#[derive(Default)]
struct Histogram(Vec<u64>);

impl std::ops::Add for Histogram {
    type Output = Histogram;
    fn add(self, o: Histogram) -> Histogram {
        if self.0.is_empty() {
            return o;
        }
        Histogram(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
}

/// One round of the sifting steps for a single-photon packet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PacketRound {
    /// Alice's phase bits.
    pub s: Vec<bool>,
    /// Bob's delay, in `1..L`.
    pub r: u32,
    /// Pulse pair Bob announces; `j - i = +-r (mod L)`.
    pub pair: (u32, u32),
    pub s_a: bool,
    pub s_b: bool,
}

impl PacketRound {
    /// Alice encodes, Bob measures with delay `r` and announces the pair.
    pub fn simulate<R: Rng>(rng: &mut R, packet_length: u32, flip_probability: f64) -> Self {
        let l = packet_length;
        let s: Vec<bool> = (0..l).map(|_| rng.random()).collect();
        let r = rng.random_range(1..l);
        let i = rng.random_range(0..l);
        let j = if rng.random() { (i + r) % l } else { (i + l - r) % l };
        let parity = s[i as usize] ^ s[j as usize];
        let flip = flip_probability > 0.0 && rng.random::<f64>() < flip_probability;
        PacketRound {
            s,
            r,
            pair: (i, j),
            s_a: parity,
            s_b: parity ^ flip,
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Matches(u64);

impl std::ops::Add for Matches {
    type Output = Matches;
    fn add(self, o: Matches) -> Matches {
        Matches(self.0 + o.0)
    }
}

/// Fraction of `cfg.trials` rounds where Alice's and Bob's sifted bits agree.
/// Bob's bit flips with probability `cfg.ch.e_d` unless `noiseless`.
pub fn mc_sift(cfg: &TrialConfig, noiseless: bool) -> Result<f64> {
    cfg.validate()?;
    let flip = if noiseless { 0.0 } else { cfg.ch.e_d };
    let matches = run_partitions(cfg, |rng, rounds| {
        Matches(
            (0..rounds)
                .filter(|_| {
                    let round = PacketRound::simulate(rng, cfg.packet_length, flip);
                    round.s_a == round.s_b
                })
                .count() as u64,
        )
    });
    Ok(matches.0 as f64 / cfg.trials as f64)
}

/// Critical value of the chi-square law with `dof` degrees of freedom at
/// significance `alpha`.
pub fn chi_square_critical(dof: usize, alpha: f64) -> Result<f64> {
    let law = ChiSquared::new(dof as f64).map_err(|e| Error::Degenerate(format!("chi-square law: {e}")))?;
    Ok(law.inverse_cdf(1.0 - alpha))
}

/// Pearson statistic of `observed` against `expected` probabilities, pooling
/// trailing bins until each expects at least five counts. Returns the
/// statistic and its degrees of freedom.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> (f64, usize) {
    let total: u64 = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, p) in observed.iter().zip(expected) {
        o_acc += *o as f64;
        e_acc += p * total as f64;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += o_acc;
        last.1 += e_acc;
    }
    let stat = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    (stat, cells.len().saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::gain_qber;
    use crate::numerics::PhotonLaw;

    fn cfg(src: SourceModel, ch: ChannelParams, trials: u64) -> TrialConfig {
        TrialConfig {
            trials,
            seed: 7,
            src,
            ch,
            packet_length: 32,
        }
    }

    #[test]
    fn vacuum_never_clicks_without_background() {
        let ch = ChannelParams { y0: 0.0, ..ChannelParams::reference_link(32) };
        let est = mc_gain_qber(&cfg(SourceModel::wcp(0.0).unwrap(), ch, 10_000)).unwrap();
        assert_eq!(est.gain, 0.0);
        assert_eq!(est.packets, 10_000);
    }

    #[test]
    fn perfect_channel_has_no_errors() {
        let ch = ChannelParams { eta: 1.0, y0: 0.0, e_d: 0.0, ..ChannelParams::reference_link(32) };
        for src in [SourceModel::wcp(0.05).unwrap(), SourceModel::hsps_reference(0.05).unwrap()] {
            let est = mc_gain_qber(&cfg(src, ch, 100_000)).unwrap();
            assert_eq!(est.qber, 0.0);
            assert!(est.detections > 0);
        }
    }

    #[test]
    fn agrees_with_closed_forms() {
        for eta in [1e-3, 1e-2, 0.1, 0.5] {
            for mu in [0.005, 0.02, 0.1] {
                let ch = ChannelParams::reference_link(32).with_eta(eta).unwrap();
                for src in [SourceModel::wcp(mu).unwrap(), SourceModel::hsps_reference(mu).unwrap()] {
                    let est = mc_gain_qber(&cfg(src, ch, 200_000)).unwrap();
                    let exact = gain_qber(&ch, &src, 32).unwrap();
                    assert!(
                        (est.gain - exact.gain).abs() <= 4.0 * est.gain_stderr,
                        "gain {est:?} vs {exact:?}"
                    );
                    if est.detections > 1000 {
                        assert!(
                            (est.qber - exact.qber).abs() <= 4.0 * est.qber_stderr,
                            "qber {est:?} vs {exact:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bit_identical_for_a_seed() {
        let c = cfg(SourceModel::wcp(0.02).unwrap(), ChannelParams::reference_link(32).with_eta(0.1).unwrap(), 50_000);
        let a = mc_gain_qber(&c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mc_gain_qber(&c).unwrap());
        assert_eq!(a, b);
        let other = mc_gain_qber(&TrialConfig { seed: 8, ..c }).unwrap();
        assert_ne!(a.detections, other.detections);
    }

    #[test]
    fn partitions_cover_every_trial() {
        for trials in [1, 63, 64, 65, 1_000_003] {
            let sum: u64 = (0..PARTITIONS).map(|k| partition_len(trials, k)).sum();
            assert_eq!(sum, trials);
        }
    }

    #[test]
    fn photon_histograms_match_packet_laws() {
        for src in [SourceModel::wcp(0.05).unwrap(), SourceModel::hsps_reference(0.05).unwrap()] {
            let c = cfg(src, ChannelParams::reference_link(32), 1_000_000);
            let bins = 16;
            let hist = photon_histogram(&c, bins).unwrap();
            let law = src.packet_law(32).unwrap();
            let mut expected: Vec<f64> = (0..bins as u32 - 1).map(|n| law.pmf(n)).collect();
            expected.push(1.0 - expected.iter().sum::<f64>());
            let (stat, dof) = chi_square(&hist, &expected);
            assert!(dof >= 2);
            assert!(stat < chi_square_critical(dof, 1e-3).unwrap(), "{} stat {stat} dof {dof}", src.kind.name());
        }
    }

    #[test]
    fn chi_square_quantile_is_accurate() {
        // Tabulated 0.999 quantiles.
        assert!((chi_square_critical(5, 1e-3).unwrap() - 20.515).abs() < 1e-3);
        assert!((chi_square_critical(10, 1e-3).unwrap() - 29.588).abs() < 1e-3);
    }

    #[test]
    fn sifting_is_correct() {
        let ch = ChannelParams::reference_link(32);
        let c = cfg(SourceModel::wcp(0.02).unwrap(), ch, 1_000_000);
        assert_eq!(mc_sift(&c, true).unwrap(), 1.0);
        let rate = mc_sift(&c, false).unwrap();
        let sigma = (0.967 * 0.033 / 1e6f64).sqrt();
        assert!((rate - 0.967).abs() <= 4.0 * sigma, "{rate}");
        let short = TrialConfig { packet_length: 2, trials: 1000, ..c };
        assert_eq!(mc_sift(&short, true).unwrap(), 1.0);
    }

    #[test]
    fn rounds_respect_the_protocol() {
        let mut rng = partition_rng(1, 0);
        for l in [2u32, 3, 32] {
            for _ in 0..200 {
                let r = PacketRound::simulate(&mut rng, l, 0.0);
                assert!(r.r >= 1 && r.r < l);
                let (i, j) = r.pair;
                let d = (j + l - i) % l;
                assert!(d == r.r || d == l - r.r);
                assert_eq!(r.s_a, r.s[i as usize] ^ r.s[j as usize]);
                assert_eq!(r.s_a, r.s_b);
            }
        }
    }

    #[test]
    fn rejects_empty_runs() {
        let c = cfg(SourceModel::wcp(0.02).unwrap(), ChannelParams::reference_link(32), 0);
        assert!(mc_gain_qber(&c).is_err());
    }
}
