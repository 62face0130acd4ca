//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use rrdps::channel::{self, ChannelParams};
use rrdps::decoy::{self, DecoyLadder, DecoyObservation};
use rrdps::mc::{self, TrialConfig};
use rrdps::numerics::Poisson;
use rrdps::optimize::{self, SearchSpec};
use rrdps::rates::{self, DecoyTier, ProtocolParams};
use rrdps::sources::{PacketLaw, SourceModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn wcp() -> SourceModel {
    SourceModel::wcp(0.1).unwrap()
}

fn hsps() -> SourceModel {
    SourceModel::hsps_reference(0.1).unwrap()
}

fn proto(l: u32, tier: DecoyTier) -> ProtocolParams {
    ProtocolParams::new(l, 0, tier).unwrap()
}

fn max_distance(src: &SourceModel, l: u32, tier: DecoyTier, max_km: f64) -> Option<f64> {
    let grid = optimize::distance_grid(max_km, 1.0);
    optimize::sweep_distance(src, &ChannelParams::reference_link(l), &proto(l, tier), &SearchSpec::default(), &grid)
        .unwrap()
        .max_positive_distance
}

fn headline_distance() -> Outcome {
    match max_distance(&wcp(), 32, DecoyTier::Three, 160.0) {
        Some(d) => outcome((d - 128.0).abs() <= 8.0, format!("three-intensity range {d:.1} km, target 128 +- 8 km")),
        None => outcome(false, "no positive key anywhere"),
    }
}

fn tier_dominance() -> Outcome {
    let spec = SearchSpec::default();
    let mut worst_order = f64::NEG_INFINITY;
    let mut worst_gap: (f64, f64) = (0.0, 0.0);
    let mut best_gap = f64::INFINITY;
    for d in optimize::distance_grid(160.0, 1.0) {
        let ch = ChannelParams::reference_link(32).at_distance(d).unwrap();
        let mut seeds = Vec::new();
        let mut rates = Vec::new();
        for tier in [DecoyTier::Two, DecoyTier::Three, DecoyTier::Four, DecoyTier::Infinite] {
            let s = SearchSpec { seeds: seeds.clone(), ..spec.clone() };
            let opt = optimize::optimize_point(&wcp(), &ch, &proto(32, tier), &s).unwrap();
            if opt.rate > 0.0 {
                seeds.push(opt.mu);
            }
            rates.push(opt.rate);
        }
        for w in rates.windows(2) {
            worst_order = worst_order.max(w[0] - w[1]);
        }
        let (four, inf) = (rates[2], rates[3]);
        if inf > 1e-8 {
            let gap = (inf - four) / inf;
            best_gap = best_gap.min(gap);
            if gap > worst_gap.0 {
                worst_gap = (gap, d);
            }
        }
    }
    let ordered = worst_order <= 1e-12;
    let close = worst_gap.0 < 0.05;
    outcome(
        ordered && close,
        format!(
            "ordering {} (largest violation {worst_order:.2e}); four vs infinite relative gap {:.1}% to {:.1}% (largest at {} km), target < 5%",
            if ordered { "holds" } else { "broken" },
            100.0 * best_gap,
            100.0 * worst_gap.0,
            worst_gap.1
        ),
    )
}

fn check_soundness(ch: &ChannelParams, obs: &[DecoyObservation]) -> std::result::Result<f64, String> {
    let b = decoy::estimate_bounds(DecoyTier::Four, obs).map_err(|e| e.to_string())?;
    for n in 0..=3 {
        let (lo, truth) = (b.yield_lower(n).unwrap(), channel::yield_n(ch, n));
        if lo > truth * (1.0 + 1e-12) {
            return Err(format!("Y{n}_L {lo} above Y{n} {truth}"));
        }
    }
    for n in 1..=3 {
        let (up, truth) = (b.error_upper(n).unwrap(), channel::error_n(ch, n).unwrap());
        if up < truth * (1.0 - 1e-12) {
            return Err(format!("e{n}_U {up} below e{n} {truth}"));
        }
    }
    Ok(b.y1_l.value / channel::yield_n(ch, 1))
}

fn bound_soundness() -> Outcome {
    // Optimized signal and decoys on a transmittance grid.
    let spec = SearchSpec { mu_points: 30, refine_rounds: 2, ..SearchSpec::default() };
    let mut worst_ratio: f64 = 1.0;
    for k in 0..=8 {
        let eta = 10f64.powf(-(k as f64) / 2.0);
        let ch = ChannelParams::reference_link(32).with_eta(eta).unwrap();
        let (ladder, opt) = optimize::optimize_decoys(&wcp(), &ch, &proto(32, DecoyTier::Four), &spec, 2).unwrap();
        let obs = decoy::simulate_observations(&ch, 32, opt.mu, &ladder).unwrap();
        match check_soundness(&ch, &obs) {
            Ok(ratio) if eta >= 1e-3 => worst_ratio = worst_ratio.min(ratio),
            Ok(_) => {}
            Err(e) => return outcome(false, format!("eta {eta:.1e}: {e}")),
        }
    }

    // Arbitrary intensities and ladders.
    let mut runner = TestRunner::new(Config { cases: 512, failure_persistence: None, ..Config::default() });
    let property = runner.run(
        &(-4.0f64..0.0, 1e-3f64..0.5, 1e-3f64..0.3, 2u32..129),
        |(log_eta, mu, lead, l)| {
            let ch = ChannelParams::reference_link(l).with_eta(10f64.powf(log_eta)).unwrap();
            let ladder = DecoyLadder::geometric(DecoyTier::Four, lead).unwrap();
            let obs = decoy::simulate_observations(&ch, l, mu, &ladder).unwrap();
            check_soundness(&ch, &obs).map_err(TestCaseError::fail)?;
            Ok(())
        },
    );
    if let Err(e) = property {
        return outcome(false, format!("property: {e}"));
    }
    outcome(
        worst_ratio >= 0.9,
        format!("all bounds sound; worst Y1_L / Y1 for eta >= 1e-3 is {worst_ratio:.4}, target >= 0.9"),
    )
}

fn source_comparison() -> Outcome {
    let spec = SearchSpec::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for (l, wcp_should_win) in [(128u32, true), (32, false)] {
        let (mut wins, mut total) = (0, 0);
        for k in 0..=16 {
            let eta = 10f64.powf(-(k as f64) / 4.0);
            let ch = ChannelParams { e_d: 0.03, ..ChannelParams::bare_link(eta).unwrap() };
            let w = optimize::optimize_point(&wcp(), &ch, &proto(l, DecoyTier::None), &spec).unwrap().rate;
            let h = optimize::optimize_point(&hsps(), &ch, &proto(l, DecoyTier::None), &spec).unwrap().rate;
            if w == 0.0 && h == 0.0 {
                continue;
            }
            total += 1;
            if (wcp_should_win && w >= h) || (!wcp_should_win && h >= w) {
                wins += 1;
            }
        }
        let share = wins as f64 / total.max(1) as f64;
        pass &= total > 0 && share >= 0.8;
        let winner = if wcp_should_win { "WCP >= HSPS" } else { "HSPS >= WCP" };
        lines.push(format!("L={l}: {winner} at {wins}/{total} points with key"));
    }
    outcome(pass, lines.join("; "))
}

fn decoy_benefit() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, src) in [("WCP", wcp()), ("HSPS", hsps())] {
        let none = max_distance(&src, 32, DecoyTier::None, 250.0);
        let inf = max_distance(&src, 32, DecoyTier::Infinite, 250.0);
        pass &= matches!((none, inf), (Some(a), Some(b)) if b > a);
        lines.push(format!(
            "{name}: no decoy {:.1} km, infinite decoys {:.1} km",
            none.unwrap_or(0.0),
            inf.unwrap_or(0.0)
        ));
    }
    outcome(pass, lines.join("; "))
}

fn landscape_interior() -> Outcome {
    let spec = SearchSpec::default();
    let ch = ChannelParams::bare_link(1e-5).unwrap();
    let mus = spec.mu_grid();
    let top = rates::max_threshold(128);
    let thresholds: Vec<u32> = (0..=top).collect();
    let cells = optimize::landscape(&wcp(), &ch, &proto(128, DecoyTier::None), &mus, &thresholds).unwrap();
    let best = cells.iter().fold(cells[0], |b, c| if c.rate > b.rate { *c } else { b });
    let interior_mu = best.mu > mus[0] && best.mu < mus[mus.len() - 1];
    let interior_v = best.v_th > 0 && best.v_th < top;
    outcome(
        best.rate > 0.0 && interior_mu && interior_v,
        format!(
            "maximum R = {:.3e} at mu = {:.4}, v_th = {} (grids mu {:.0e}..{:.0e}, v_th 0..{top})",
            best.rate, best.mu, best.v_th, mus[0], mus[mus.len() - 1]
        ),
    )
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn closed_vs_series_gap(eta: f64, y0: f64, mu: f64, l: u32) -> f64 {
    let ch = ChannelParams { eta, y0, ..ChannelParams::reference_link(l) };
    let w_closed = channel::wcp_gain_qber(&ch, mu, l).unwrap();
    let w_series = channel::series_gain_qber(&ch, &Poisson::new(l as f64 * mu).unwrap()).unwrap();
    let PacketLaw::Heralded(law) = SourceModel::hsps_reference(mu).unwrap().packet_law(l).unwrap() else {
        unreachable!("heralded source");
    };
    let h_closed = channel::hsps_closed_gain_qber(&ch, &law).unwrap();
    let h_series = channel::series_gain_qber(&ch, &law).unwrap();
    [
        relative_gap(w_closed.gain, w_series.gain),
        relative_gap(w_closed.qber, w_series.qber),
        relative_gap(h_closed.gain, h_series.gain),
        relative_gap(h_closed.qber, h_series.qber),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn closed_form_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for l in [2u32, 8, 32, 64, 128] {
        for k_eta in 0..=5 {
            for k_mu in 0..=8 {
                for y0 in [0.0, 1.7e-6, 1e-4] {
                    let eta = 10f64.powi(-k_eta);
                    let mu = 10f64.powf(-(k_mu as f64) / 2.0);
                    worst = worst.max(closed_vs_series_gap(eta, y0, mu, l));
                }
            }
        }
    }
    let mut runner = TestRunner::new(Config { cases: 1024, failure_persistence: None, ..Config::default() });
    let property = runner.run(
        &(-6.0f64..0.0, -4.0f64..0.0, 0.0f64..1e-3, 2u32..257),
        |(log_eta, log_mu, y0, l)| {
            let gap = closed_vs_series_gap(10f64.powf(log_eta), y0, 10f64.powf(log_mu), l);
            prop_assert!(gap <= 1e-9, "relative gap {}", gap);
            Ok(())
        },
    );
    match property {
        Err(e) => outcome(false, format!("property: {e}")),
        Ok(()) => outcome(worst <= 1e-9, format!("largest relative gap on the grid {worst:.2e}, target 1e-9")),
    }
}

/// Deviation of an empirical proportion in units of the binomial standard
/// error the model predicts for `n` draws.
fn z_score(observed: f64, expected: f64, n: u64) -> f64 {
    let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
    if observed == expected {
        0.0
    } else {
        (observed - expected).abs() / sigma
    }
}

fn monte_carlo() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for eta in [1e-3, 1e-2, 0.1, 1.0] {
        for mu in [0.005, 0.02, 0.1] {
            for src in [SourceModel::wcp(mu).unwrap(), SourceModel::hsps_reference(mu).unwrap()] {
                let ch = ChannelParams::reference_link(32).with_eta(eta).unwrap();
                let cfg = TrialConfig {
                    trials: 1_000_000,
                    seed: 2024 + points,
                    src,
                    ch,
                    packet_length: 32,
                };
                let est = mc::mc_gain_qber(&cfg).unwrap();
                let exact = channel::gain_qber(&ch, &src, 32).unwrap();
                let z_gain = z_score(est.gain, exact.gain, est.packets);
                let z_qber = z_score(est.qber, exact.qber, est.detections);
                worst = worst.max(z_gain).max(z_qber);
                points += 1;
            }
        }
    }
    let cfg = TrialConfig {
        trials: 1_000_000,
        seed: 1,
        src: wcp(),
        ch: ChannelParams::reference_link(32),
        packet_length: 32,
    };
    let sift = mc::mc_sift(&cfg, true).unwrap();
    outcome(
        worst <= 4.0 && sift == 1.0,
        format!("{points} grid points, largest deviation {worst:.2} standard errors (target 4); noiseless sifting match rate {sift}"),
    )
}

fn exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for l in [2u32, 32, 128] {
        for eta in [1e-5, 1e-2, 1.0] {
            let ch = ChannelParams::reference_link(l).with_eta(eta).unwrap();
            let ladder = DecoyLadder::new(vec![0.3, 0.0]).unwrap();
            let obs = decoy::simulate_observations(&ch, l, 0.05, &ladder).unwrap();
            let y0 = decoy::bound_y0(&obs[1], &obs[2]).unwrap().value;
            worst = worst.max(relative_gap(y0, ch.y0));
        }
    }
    let phase = rates::phase_error_n(32, 1).unwrap().get();
    outcome(
        worst <= 1e-12 && phase == 1.0 / 32.0,
        format!("vacuum-decoy Y0 relative error {worst:.1e}; phase error (L=32, n=1) = {phase}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("headline distance", headline_distance, Duration::from_secs(60)),
        ("decoy tier dominance", tier_dominance, Duration::from_secs(300)),
        ("bound soundness", bound_soundness, Duration::from_secs(60)),
        ("source comparison", source_comparison, Duration::from_secs(300)),
        ("decoy benefit", decoy_benefit, Duration::from_secs(120)),
        ("landscape maximum", landscape_interior, Duration::from_secs(60)),
        ("closed forms vs series", closed_form_identity, Duration::from_secs(300)),
        ("monte carlo agreement", monte_carlo, Duration::from_secs(180)),
        ("exactness cases", exactness, Duration::from_secs(60)),
    ];
    let mut failures = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= *budget;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {} {:<24} {}  {} [{:.1} s of {} s]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
