//! Grid search over the signal intensity and photon threshold.
//!
//! The intensity grid is log-spaced and then refined around the incumbent: each
//! round shrinks the log-width of the search interval four-fold and re-grids.
//! The threshold only matters without decoys and is searched exhaustively.
//! Grid points are evaluated in parallel and reduced in index order, so the
//! answer does not depend on scheduling. Ties go to the smaller intensity,
//! then the smaller threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::decoy::DecoyLadder;
use crate::error::{Error, Result};
use crate::rates::{self, DecoyTier, ProtocolParams, RateResult};
use crate::sources::SourceModel;

/// Search grid for [`optimize_point`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_points: usize,
    /// Inclusive threshold range; `None` searches every allowed threshold.
    pub v_th_range: Option<(u32, u32)>,
    pub refine_rounds: u32,
    /// Extra intensities always evaluated, e.g. another tier's optimum.
    #[serde(default)]
    pub seeds: Vec<f64>,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            mu_min: 1e-4,
            mu_max: 1.0,
            mu_points: 60,
            v_th_range: None,
            refine_rounds: 3,
            seeds: Vec::new(),
        }
    }
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_min > 0.0 && self.mu_min.is_finite()) {
            return Err(Error::domain("mu_min", self.mu_min, "> 0"));
        }
        if !(self.mu_max >= self.mu_min && self.mu_max.is_finite()) {
            return Err(Error::domain("mu_max", self.mu_max, ">= mu_min"));
        }
        if self.mu_points == 0 {
            return Err(Error::domain("mu_points", 0.0, ">= 1"));
        }
        if let Some((lo, hi)) = self.v_th_range {
            if lo > hi {
                return Err(Error::Ordering(format!("threshold range {lo}..={hi} is empty")));
            }
        }
        if let Some(s) = self.seeds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::domain("seed intensity", *s, "> 0"));
        }
        Ok(())
    }

    /// The log-spaced intensity grid, seeds excluded.
    pub fn mu_grid(&self) -> Vec<f64> {
        log_grid(self.mu_min, self.mu_max, self.mu_points)
    }

    /// Thresholds searched for `tier` at packet length `packet_length`.
    pub fn thresholds(&self, tier: DecoyTier, packet_length: u32, fallback: u32) -> Vec<u32> {
        if tier != DecoyTier::None {
            return vec![fallback];
        }
        let top = rates::max_threshold(packet_length);
        let (lo, hi) = self.v_th_range.unwrap_or((0, top));
        (lo..=hi.min(top)).collect()
    }
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let step = (b - a) / (points - 1) as f64;
            (0..points)
                .map(|i| match i {
                    0 => lo,
                    i if i + 1 == points => hi,
                    i => (a + step * i as f64).exp(),
                })
                .collect()
        }
    }
}

/// Best grid point found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub mu: f64,
    /// Threshold, for the no-decoy rate.
    pub v_th: Option<u32>,
    pub rate: f64,
    /// Largest unclamped rate seen, negative when no setting gives key.
    pub best_raw_rate: f64,
    pub result: RateResult,
}

fn evaluate(
    src: &SourceModel,
    ch: &ChannelParams,
    proto: &ProtocolParams,
    points: &[(f64, u32)],
) -> Result<Vec<RateResult>> {
    points
        .par_iter()
        .map(|&(mu, v_th)| rates::key_rate(&src.with_mu(mu)?, ch, &proto.with_v_th(v_th)))
        .collect()
}

/// Index of the best entry, preferring the smaller `(mu, v_th)` on ties.
fn best_index(points: &[(f64, u32)], results: &[RateResult]) -> Option<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[i].1.cmp(&points[j].1))
    });
    let mut best: Option<usize> = None;
    for i in order {
        if best.map_or(true, |b| results[i].rate > results[b].rate) {
            best = Some(i);
        }
    }
    best
}

/// Maximizes the rate of `proto.tier` over intensity (and threshold without decoys).
pub fn optimize_point(
    src: &SourceModel,
    ch: &ChannelParams,
    proto: &ProtocolParams,
    spec: &SearchSpec,
) -> Result<Optimum> {
    spec.validate()?;
    proto.validate()?;
    let thresholds = spec.thresholds(proto.tier, proto.packet_length, proto.v_th);
    if thresholds.is_empty() {
        return Err(Error::domain("v_th range", spec.v_th_range.map_or(0.0, |r| r.0 as f64), "within the allowed thresholds"));
    }
    let grid_of = |mus: &[f64]| -> Vec<(f64, u32)> {
        mus.iter()
            .flat_map(|&mu| thresholds.iter().map(move |&v| (mu, v)))
            .collect()
    };

    let mut mus = spec.mu_grid();
    mus.extend(spec.seeds.iter().copied());
    let mut points = grid_of(&mus);
    let mut results = evaluate(src, ch, proto, &points)?;

    let ratio = if spec.mu_points > 1 { spec.mu_max / spec.mu_min } else { 1.0 };
    let mut half_width = ratio.ln() / 2.0;
    for _ in 0..spec.refine_rounds {
        let b = best_index(&points, &results).expect("grid is nonempty");
        if results[b].rate <= 0.0 {
            break;
        }
        half_width /= 4.0;
        let centre = points[b].0.ln();
        let lo = (centre - half_width).exp().max(spec.mu_min);
        let hi = (centre + half_width).exp().min(spec.mu_max);
        let refined = grid_of(&log_grid(lo, hi, spec.mu_points));
        let refined_results = evaluate(src, ch, proto, &refined)?;
        points.extend(refined);
        results.extend(refined_results);
    }

    let best_raw_rate = results.iter().map(|r| r.raw_rate).fold(f64::NEG_INFINITY, f64::max);
    let b = best_index(&points, &results).expect("grid is nonempty");
    let (mu, v_th, result) = if results[b].rate > 0.0 {
        (points[b].0, points[b].1, results[b].clone())
    } else {
        // No key anywhere: report the smallest grid intensity.
        let first = points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.1 .1.cmp(&b.1 .1)))
            .map(|(i, _)| i)
            .expect("grid is nonempty");
        (points[first].0, points[first].1, results[first].clone())
    };
    Ok(Optimum {
        mu,
        v_th: (proto.tier == DecoyTier::None).then_some(v_th),
        rate: result.rate,
        best_raw_rate,
        result,
    })
}

/// Optimized rates along a fiber, with the key-generation range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub points: Vec<Optimum>,
    /// Largest distance with positive key, interpolated linearly between the
    /// last positive point and the next one. `None` if no point has key.
    pub max_positive_distance: Option<f64>,
}

/// Runs [`optimize_point`] at each distance of the ascending grid `distances_km`.
pub fn sweep_distance(
    src: &SourceModel,
    template: &ChannelParams,
    proto: &ProtocolParams,
    spec: &SearchSpec,
    distances_km: &[f64],
) -> Result<Sweep> {
    if distances_km.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Ordering("distance grid must be strictly ascending".into()));
    }
    let points = distances_km
        .par_iter()
        .map(|&d| {
            let ch = template.at_distance(d)?;
            let mut opt = optimize_point(src, &ch, proto, spec)?;
            opt.result.distance_km = Some(d);
            Ok(opt)
        })
        .collect::<Result<Vec<_>>>()?;
    let max_positive_distance = max_positive_distance(distances_km, &points);
    Ok(Sweep {
        points,
        max_positive_distance,
    })
}

/// Largest distance with positive key along an ascending grid, interpolated
/// linearly towards the next point's best unclamped rate.
pub fn max_positive_distance(distances: &[f64], points: &[Optimum]) -> Option<f64> {
    let last = points.iter().rposition(|p| p.rate > 0.0)?;
    let Some(next) = points.get(last + 1) else {
        return Some(distances[last]);
    };
    let (r0, r1) = (points[last].rate, next.best_raw_rate.min(0.0));
    let (d0, d1) = (distances[last], distances[last + 1]);
    Some(d0 + (d1 - d0) * r0 / (r0 - r1))
}

/// Evenly spaced distances `0, step, ..., <= max`.
pub fn distance_grid(max_km: f64, step_km: f64) -> Vec<f64> {
    let n = (max_km / step_km + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step_km).collect()
}

/// One cell of the intensity/threshold landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandscapePoint {
    pub mu: f64,
    pub v_th: u32,
    pub rate: f64,
}

/// Rates over the full `mu x v_th` grid, threshold-major.
pub fn landscape(
    src: &SourceModel,
    ch: &ChannelParams,
    proto: &ProtocolParams,
    mus: &[f64],
    thresholds: &[u32],
) -> Result<Vec<LandscapePoint>> {
    let points: Vec<(f64, u32)> = thresholds
        .iter()
        .flat_map(|&v| mus.iter().map(move |&mu| (mu, v)))
        .collect();
    let results = evaluate(src, ch, proto, &points)?;
    Ok(points
        .iter()
        .zip(results)
        .map(|(&(mu, v_th), r)| LandscapePoint { mu, v_th, rate: r.rate })
        .collect())
}

/// Coordinate descent over the nonzero decoy fractions, re-optimizing the
/// signal intensity for every candidate ladder. Starts from `proto`'s ladder
/// and only accepts strict improvements, so the result never loses rate.
pub fn optimize_decoys(
    src: &SourceModel,
    ch: &ChannelParams,
    proto: &ProtocolParams,
    spec: &SearchSpec,
    rounds: u32,
) -> Result<(DecoyLadder, Optimum)> {
    if !proto.tier.is_finite() {
        return Err(Error::Unsupported(format!("the {} tier has no decoys to tune", proto.tier)));
    }
    let mut ladder = proto.decoy_ladder()?;
    let run = |l: &DecoyLadder| {
        let p = ProtocolParams {
            ladder: Some(l.clone()),
            ..proto.clone()
        };
        optimize_point(src, ch, &p, spec)
    };
    let mut best = run(&ladder)?;
    const STEPS: [f64; 4] = [0.5, 0.8, 1.25, 2.0];
    for _ in 0..rounds {
        let mut improved = false;
        let active = ladder.fractions().iter().filter(|f| **f > 0.0).count();
        for i in 0..active {
            for step in STEPS {
                let mut fr = ladder.fractions().to_vec();
                fr[i] *= step;
                let Ok(candidate) = DecoyLadder::new(fr) else {
                    continue;
                };
                let opt = run(&candidate)?;
                if opt.rate > best.rate {
                    best = opt;
                    ladder = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok((ladder, best))
}
