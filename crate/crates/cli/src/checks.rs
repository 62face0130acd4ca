//! Model self-checks behind `rrdps validate`.
//!
//! Every check is deterministic for a given config and seed, so two runs
//! produce byte-identical reports.

use anyhow::Result;
use serde::Serialize;

use crate::config::{RunConfig, SourceName};
use rrdps::channel::{self, ChannelParams};
use rrdps::decoy::{self, DecoyLadder};
use rrdps::mc::{self, TrialConfig};
use rrdps::numerics::Poisson;
use rrdps::optimize::{self, SearchSpec};
use rrdps::sources::{self, PacketLaw};
use rrdps::{DecoyTier, SourceModel};

/// Largest tolerated deviation of a Monte Carlo proportion, in standard errors.
const MAX_Z: f64 = 4.0;
/// Significance of the photon-number goodness-of-fit test.
const CHI_SQUARE_ALPHA: f64 = 1e-3;
const CHECK_MU: f64 = 0.05;

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    let checks = vec![
        closed_forms(cfg)?,
        monte_carlo_rates(cfg)?,
        photon_statistics(cfg)?,
        sifting(cfg)?,
        bound_soundness(cfg)?,
        tier_ordering(cfg)?,
        background_recovery(cfg)?,
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(Report { checks, pass })
}

fn source(cfg: &RunConfig, name: SourceName, mu: f64) -> Result<SourceModel> {
    Ok(cfg.source(name)?.with_mu(mu)?)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Binomial deviation in units of the standard error the model predicts.
fn z_score(observed: f64, expected: f64, n: u64) -> f64 {
    if observed == expected {
        return 0.0;
    }
    (observed - expected).abs() / (expected * (1.0 - expected) / n as f64).sqrt()
}

fn closed_forms(cfg: &RunConfig) -> Result<Check> {
    let l = cfg.protocol.packet_length;
    let template = cfg.template(l)?;
    let mut worst: f64 = 0.0;
    for eta in [1e-4, 1e-2, 1.0] {
        let ch = template.with_eta(eta)?;
        for mu in [0.005, 0.05, 0.5] {
            let closed = channel::wcp_gain_qber(&ch, mu, l)?;
            let series = channel::series_gain_qber(&ch, &Poisson::new(l as f64 * mu)?)?;
            worst = worst.max(relative_gap(closed.gain, series.gain)).max(relative_gap(closed.qber, series.qber));
            if let PacketLaw::Heralded(law) = source(cfg, SourceName::Hsps, mu)?.packet_law(l)? {
                let closed = channel::hsps_closed_gain_qber(&ch, &law)?;
                let series = channel::series_gain_qber(&ch, &law)?;
                worst = worst.max(relative_gap(closed.gain, series.gain)).max(relative_gap(closed.qber, series.qber));
            }
        }
    }
    Ok(Check {
        name: "closed-form gain and error rate match the photon-number series",
        pass: worst <= 1e-9,
        detail: format!("largest relative gap {worst:.3e}, tolerance 1e-9"),
    })
}

fn trial_config(cfg: &RunConfig, src: SourceModel, ch: ChannelParams, offset: u64) -> TrialConfig {
    TrialConfig {
        trials: cfg.validate.trials,
        seed: cfg.validate.seed.wrapping_add(offset),
        src,
        ch,
        packet_length: cfg.protocol.packet_length,
    }
}

fn monte_carlo_rates(cfg: &RunConfig) -> Result<Check> {
    let l = cfg.protocol.packet_length;
    let template = cfg.template(l)?;
    let mut worst: f64 = 0.0;
    let mut offset = 0;
    for &kind in &cfg.source.kinds {
        for eta in [1e-2, 1.0] {
            let ch = template.with_eta(eta)?;
            let src = source(cfg, kind, CHECK_MU)?;
            let est = mc::mc_gain_qber(&trial_config(cfg, src, ch, offset))?;
            let exact = channel::gain_qber(&ch, &src, l)?;
            worst = worst
                .max(z_score(est.gain, exact.gain, est.packets))
                .max(z_score(est.qber, exact.qber, est.detections));
            offset += 1;
        }
    }
    Ok(Check {
        name: "simulated gain and error rate agree with the model",
        pass: worst <= MAX_Z,
        detail: format!("largest deviation {worst:.3} standard errors, limit {MAX_Z}"),
    })
}

fn photon_statistics(cfg: &RunConfig) -> Result<Check> {
    let l = cfg.protocol.packet_length;
    let ch = cfg.template(l)?;
    const BINS: usize = 12;
    let mut details = Vec::new();
    let mut pass = true;
    for (i, &kind) in cfg.source.kinds.iter().enumerate() {
        let src = source(cfg, kind, CHECK_MU)?;
        let observed = mc::photon_histogram(&trial_config(cfg, src, ch, 100 + i as u64), BINS)?;
        let mut expected: Vec<f64> = (0..BINS as u32 - 1)
            .map(|n| sources::packet_pmf(&src, l, n).map(|p| p.get()))
            .collect::<rrdps::Result<_>>()?;
        expected.push((1.0 - expected.iter().sum::<f64>()).max(0.0));
        let (stat, dof) = mc::chi_square(&observed, &expected);
        let critical = mc::chi_square_critical(dof.max(1), CHI_SQUARE_ALPHA)?;
        pass &= stat <= critical;
        details.push(format!("{}: chi2 {stat:.3} on {dof} dof, critical {critical:.3}", kind_name(kind)));
    }
    Ok(Check {
        name: "simulated photon numbers follow the packet law",
        pass,
        detail: details.join("; "),
    })
}

fn kind_name(kind: SourceName) -> &'static str {
    match kind {
        SourceName::Wcp => "wcp",
        SourceName::Hsps => "hsps",
    }
}

fn sifting(cfg: &RunConfig) -> Result<Check> {
    let l = cfg.protocol.packet_length;
    let ch = cfg.template(l)?;
    let src = source(cfg, SourceName::Wcp, CHECK_MU)?;
    let tc = trial_config(cfg, src, ch, 200);
    let noiseless = mc::mc_sift(&tc, true)?;
    let noisy = mc::mc_sift(&tc, false)?;
    let z = z_score(1.0 - noisy, ch.e_d, tc.trials);
    Ok(Check {
        name: "sifted bits agree, up to the misalignment rate",
        pass: noiseless == 1.0 && z <= MAX_Z,
        detail: format!(
            "noiseless match rate {noiseless}; noisy mismatch {:.6} against e_d {} ({z:.3} standard errors)",
            1.0 - noisy,
            ch.e_d
        ),
    })
}

fn bound_soundness(cfg: &RunConfig) -> Result<Check> {
    let l = cfg.protocol.packet_length;
    let template = cfg.template(l)?;
    let ladder = DecoyLadder::default_for(DecoyTier::Four)?;
    let mut failures = Vec::new();
    let mut cases = 0;
    for k in 0..=10 {
        let ch = template.with_eta(10f64.powf(-(k as f64) / 2.0))?;
        for mu in [0.01, 0.05, 0.2] {
            let obs = decoy::simulate_observations(&ch, l, mu, &ladder)?;
            let b = decoy::estimate_bounds(DecoyTier::Four, &obs)?;
            for n in 0..=3 {
                let (lo, truth) = (b.yield_lower(n).unwrap_or(0.0), channel::yield_n(&ch, n));
                if lo > truth * (1.0 + 1e-12) {
                    failures.push(format!("Y{n} at eta {:.1e}, mu {mu}", ch.eta));
                }
            }
            for n in 1..=3 {
                let (up, truth) = (b.error_upper(n).unwrap_or(0.5), channel::error_n(&ch, n)?);
                if up < truth * (1.0 - 1e-12) {
                    failures.push(format!("e{n} at eta {:.1e}, mu {mu}", ch.eta));
                }
            }
            cases += 1;
        }
    }
    Ok(Check {
        name: "decoy bounds enclose the true yields and error rates",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{cases} channels, all bounds sound")
        } else {
            format!("violated: {}", failures.join(", "))
        },
    })
}

/// Only decoy tiers are ordered: without decoys the threshold-tuned packet
/// rate can beat a two-decoy estimate that credits single photons alone.
fn tier_ordering(cfg: &RunConfig) -> Result<Check> {
    let l = cfg.protocol.packet_length;
    let template = cfg.template(l)?;
    let src = cfg.source(SourceName::Wcp)?;
    let spec = SearchSpec {
        mu_points: 30,
        refine_rounds: 2,
        ..cfg.search_spec()?
    };
    let tiers = [DecoyTier::Two, DecoyTier::Three, DecoyTier::Four, DecoyTier::Infinite];
    let mut violations = Vec::new();
    for d in [0.0, 40.0, 80.0, 120.0] {
        let ch = template.at_distance(d)?;
        let mut seeds = Vec::new();
        let mut previous: Option<(DecoyTier, f64)> = None;
        for tier in tiers {
            let proto = cfg.protocol_params(tier)?;
            let opt = optimize::optimize_point(&src, &ch, &proto, &SearchSpec { seeds: seeds.clone(), ..spec.clone() })?;
            if let Some((lower, r)) = previous {
                if opt.rate < r {
                    violations.push(format!("{tier} below {lower} at {d} km"));
                }
            }
            seeds.push(opt.mu);
            previous = Some((tier, opt.rate));
        }
    }
    Ok(Check {
        name: "more decoys never lower the optimized rate",
        pass: violations.is_empty(),
        detail: if violations.is_empty() {
            "two <= three <= four <= infinite at 0, 40, 80 and 120 km".to_owned()
        } else {
            violations.join(", ")
        },
    })
}

fn background_recovery(cfg: &RunConfig) -> Result<Check> {
    let l = cfg.protocol.packet_length;
    let template = cfg.template(l)?;
    let ladder = DecoyLadder::new(vec![0.3, 0.0])?;
    let mut worst: f64 = 0.0;
    for eta in [1e-5, 1e-2, 1.0] {
        let ch = template.with_eta(eta)?;
        let obs = decoy::simulate_observations(&ch, l, CHECK_MU, &ladder)?;
        let y0 = decoy::bound_y0(&obs[1], &obs[2])?.value;
        worst = worst.max(relative_gap(y0, ch.y0));
    }
    Ok(Check {
        name: "a vacuum decoy recovers the background yield",
        pass: worst <= 1e-12,
        detail: format!("largest relative error {worst:.3e}, tolerance 1e-12"),
    })
}
