//! Rate sweeps, landscapes and decoy bounds as tables.

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

use crate::config::{RunConfig, SourceName, SweepPoint};
use crate::table::{Cell, Table};
use rrdps::channel::{self, ChannelParams};
use rrdps::decoy::{self, DecoyObservation, YieldBounds};
use rrdps::optimize::{self, Optimum};
use rrdps::rates::ProtocolParams;
use rrdps::{DecoyTier, SourceModel};

pub const RATE_COLUMNS: [&str; 11] = [
    "distance_km",
    "transmittance",
    "mu_opt",
    "v_th_opt",
    "tier",
    "Q",
    "e_bit",
    "e_src",
    "e_ph",
    "R",
    "source",
];

fn source_name(name: SourceName) -> &'static str {
    match name {
        SourceName::Wcp => "wcp",
        SourceName::Hsps => "hsps",
    }
}

/// Best rate at one channel, tuning the decoys too when asked.
fn optimum(cfg: &RunConfig, src: &SourceModel, ch: &ChannelParams, proto: &ProtocolParams) -> Result<Optimum> {
    let spec = cfg.search_spec()?;
    if proto.tier.is_finite() && cfg.search.decoy_rounds > 0 {
        Ok(optimize::optimize_decoys(src, ch, proto, &spec, cfg.search.decoy_rounds)?.1)
    } else {
        Ok(optimize::optimize_point(src, ch, proto, &spec)?)
    }
}

fn optimize_sweep(
    cfg: &RunConfig,
    src: &SourceModel,
    proto: &ProtocolParams,
    points: &[SweepPoint],
) -> Result<Vec<Optimum>> {
    points
        .par_iter()
        .map(|p| {
            let mut opt = optimum(cfg, src, &p.channel, proto)?;
            opt.result.distance_km = Some(p.distance_km);
            Ok(opt)
        })
        .collect()
}

/// Key range of one source and tier along the sweep.
pub type Range = (&'static str, DecoyTier, Option<f64>);

/// Optimized rate rows ordered by source, tier and sweep point, plus the key
/// range of each source and tier.
pub fn rate(cfg: &RunConfig) -> Result<(Table, Vec<Range>)> {
    let l = cfg.protocol.packet_length;
    let points = cfg.sweep_points(l)?;
    let distances: Vec<f64> = points.iter().map(|p| p.distance_km).collect();
    let mut table = Table::new(&RATE_COLUMNS);
    let mut ranges = Vec::new();
    for &kind in &cfg.source.kinds {
        let src = cfg.source(kind)?;
        for &tier in &cfg.protocol.tiers {
            let proto = cfg.protocol_params(tier)?;
            let optima = optimize_sweep(cfg, &src, &proto, &points)
                .with_context(|| format!("{} source, {tier} tier", source_name(kind)))?;
            for (p, opt) in points.iter().zip(&optima) {
                let r = &opt.result;
                table.push(vec![
                    p.distance_km.into(),
                    p.channel.eta.into(),
                    opt.mu.into(),
                    opt.v_th.into(),
                    tier.name().into(),
                    r.gain.into(),
                    r.e_bit.into(),
                    r.e_src.into(),
                    r.e_ph.into(),
                    r.rate.into(),
                    source_name(kind).into(),
                ]);
            }
            ranges.push((source_name(kind), tier, optimize::max_positive_distance(&distances, &optima)));
        }
    }
    Ok((table, ranges))
}

/// Rate without decoys over the intensity and threshold grid at `channel.eta`,
/// threshold-major.
pub fn landscape(cfg: &RunConfig) -> Result<Table> {
    let l = cfg.protocol.packet_length;
    let ch = cfg.sweep_points(l)?[0].channel;
    let spec = cfg.search_spec()?;
    let mus = spec.mu_grid();
    let thresholds = spec.thresholds(DecoyTier::None, l, 0);
    let proto = cfg.protocol_params(DecoyTier::None)?;
    let mut table = Table::new(&["mu", "v_th", "R", "source"]);
    for &kind in &cfg.source.kinds {
        let src = cfg.source(kind)?;
        for cell in optimize::landscape(&src, &ch, &proto, &mus, &thresholds)? {
            table.push(vec![
                cell.mu.into(),
                Some(cell.v_th).into(),
                cell.rate.into(),
                source_name(kind).into(),
            ]);
        }
    }
    Ok(table)
}

pub const BOUND_COLUMNS: [&str; 19] = [
    "distance_km",
    "transmittance",
    "mu",
    "tier",
    "Y0_L",
    "Y0",
    "Y1_L",
    "Y1",
    "Y2_L",
    "Y2",
    "Y3_L",
    "Y3",
    "e1_U",
    "e1",
    "e2_U",
    "e2",
    "e3_U",
    "e3",
    "vacuous",
];

/// Bound columns, with the true values alongside when the channel is known.
fn bound_cells(b: &YieldBounds, truth: Option<&ChannelParams>) -> Result<Vec<Cell>> {
    let mut cells = vec![b.tier.name().into()];
    for n in 0..=3 {
        cells.push(b.yield_lower(n).into());
        cells.push(truth.map(|ch| channel::yield_n(ch, n)).into());
    }
    for n in 1..=3 {
        cells.push(b.error_upper(n).into());
        let e = truth.map(|ch| channel::error_n(ch, n)).transpose()?;
        cells.push(e.into());
    }
    cells.push(b.vacuous().join(";").as_str().into());
    Ok(cells)
}

/// Bounds from measured gains and error rates.
pub fn bounds_from_file(cfg: &RunConfig, path: &Path) -> Result<Table> {
    let obs: Vec<DecoyObservation> = decoy::read_observations_file(path, cfg.protocol.packet_length)?;
    let tier = decoy::infer_tier(obs.len()).with_context(|| format!("observations in {}", path.display()))?;
    let b = decoy::estimate_bounds(tier, &obs)?;
    let mut table = Table::new(&BOUND_COLUMNS);
    let mut row = vec![Cell::Empty, Cell::Empty, Cell::Empty];
    row.extend(bound_cells(&b, None)?);
    table.push(row);
    Ok(table)
}

/// Bounds the weak-coherent source would observe at its optimal intensity on
/// every sweep point, for each finite tier of the run (four decoys if none).
pub fn bounds_simulated(cfg: &RunConfig) -> Result<Table> {
    let l = cfg.protocol.packet_length;
    let points = cfg.sweep_points(l)?;
    let mut tiers: Vec<DecoyTier> = cfg.protocol.tiers.iter().copied().filter(|t| t.is_finite()).collect();
    if tiers.is_empty() {
        tiers.push(DecoyTier::Four);
    }
    let src = cfg.source(SourceName::Wcp)?;
    let mut table = Table::new(&BOUND_COLUMNS);
    for tier in tiers {
        let proto = cfg.protocol_params(tier)?;
        let rows: Vec<Vec<Cell>> = points
            .par_iter()
            .map(|p| {
                let (ladder, opt) = if cfg.search.decoy_rounds > 0 {
                    optimize::optimize_decoys(&src, &p.channel, &proto, &cfg.search_spec()?, cfg.search.decoy_rounds)?
                } else {
                    (proto.decoy_ladder()?, optimize::optimize_point(&src, &p.channel, &proto, &cfg.search_spec()?)?)
                };
                let obs = decoy::simulate_observations(&p.channel, l, opt.mu, &ladder)?;
                let b = decoy::estimate_bounds(tier, &obs)?;
                let mut row = vec![p.distance_km.into(), p.channel.eta.into(), opt.mu.into()];
                row.extend(bound_cells(&b, Some(&p.channel))?);
                Ok(row)
            })
            .collect::<Result<_>>()?;
        for row in rows {
            table.push(row);
        }
    }
    Ok(table)
}
