use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma;

use super::{EnsembleResult, Window};
use crate::cascade::GAMMA;
use crate::error::{Error, Result};
use crate::format::{sig17, sig17_seq};
use crate::spectrum::{eigenvalues_up_to, heat_trace, Boundary, Pencil, Tolerance};
use crate::stats;

/// Heat-trace sampling relative to a resolved window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatConfig {
    pub t_points: usize,
    /// Times run from `t_lo_factor / λ_hi` to `t_hi_factor / λ_lo`.
    #[serde(serialize_with = "sig17")]
    pub t_lo_factor: f64,
    #[serde(serialize_with = "sig17")]
    pub t_hi_factor: f64,
    /// Eigenvalues are extracted up to `cutoff_factor · λ_hi`.
    #[serde(serialize_with = "sig17")]
    pub cutoff_factor: f64,
    /// Relative width of the eigenvalue brackets.
    #[serde(serialize_with = "sig17")]
    pub rtol: f64,
    /// Largest tolerated truncation remainder relative to the trace.
    #[serde(serialize_with = "sig17")]
    pub accuracy: f64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            t_points: 16,
            t_lo_factor: 4.0,
            t_hi_factor: 1.0,
            cutoff_factor: 12.0,
            rtol: 1e-3,
            accuracy: 1e-6,
        }
    }
}

/// `t^{2/3} Z(t)` on a log grid of times with its plateau.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatTracePlateau {
    #[serde(serialize_with = "sig17_seq")]
    pub t: Vec<f64>,
    /// Ensemble mean of `Z(t) = Σ e^{-λt}` (Neumann).
    #[serde(serialize_with = "sig17_seq")]
    pub mean_trace: Vec<f64>,
    #[serde(serialize_with = "sig17_seq")]
    pub scaled: Vec<f64>,
    #[serde(serialize_with = "sig17")]
    pub plateau: f64,
    #[serde(serialize_with = "sig17")]
    pub plateau_stderr: f64,
    /// `Γ(1 + 2/3)`.
    #[serde(serialize_with = "sig17")]
    pub gamma_factor: f64,
    #[serde(serialize_with = "sig17")]
    pub predicted: f64,
    #[serde(serialize_with = "sig17")]
    pub relative_error: f64,
}

/// Heat-trace plateau of an ensemble, compared with `c0 · Γ(5/3)`.
pub fn heat_trace_plateau(
    ensemble: &EnsembleResult,
    window: &Window,
    c0: f64,
    cfg: &HeatConfig,
) -> Result<HeatTracePlateau> {
    if cfg.t_points < 2 || !(cfg.t_lo_factor > 0.0 && cfg.t_hi_factor > 0.0 && cfg.cutoff_factor > 0.0) {
        return Err(Error::invalid("heat-trace sampling parameters must be positive"));
    }
    let (t_lo, t_hi) = (cfg.t_lo_factor / window.hi, cfg.t_hi_factor / window.lo);
    if !(t_lo < t_hi) {
        return Err(Error::WindowUnresolved {
            lo: window.lo,
            hi: window.hi,
            reason: "window too narrow for the heat-trace time range".into(),
        });
    }
    let ts: Vec<f64> = (0..cfg.t_points)
        .map(|i| t_lo * (t_hi / t_lo).powf(i as f64 / (cfg.t_points - 1) as f64))
        .collect();
    let cutoff = cfg.cutoff_factor * window.hi;
    let per_replica = ensemble
        .replicas
        .par_iter()
        .map(|c| -> Result<Vec<f64>> {
            let rn = ensemble.config.replica_network(c.replica, 0)?;
            let p = Pencil::new(&rn.network, Boundary::Neumann)?;
            let tol = Tolerance::relative(cfg.rtol, 1e-12 * cutoff);
            let eigs = eigenvalues_up_to(&p, cutoff, tol, p.dimension())?;
            ts.iter()
                .map(|&t| {
                    let h = heat_trace(&eigs, t, None)?;
                    if h.remainder > cfg.accuracy * h.estimate {
                        return Err(Error::Truncation {
                            bound: h.remainder,
                            accuracy: cfg.accuracy * h.estimate,
                        });
                    }
                    Ok(h.estimate)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_replica.len();
    let mean_at = |idx: &[usize]| -> Vec<f64> {
        (0..ts.len())
            .map(|i| idx.iter().map(|&r| per_replica[r][i]).sum::<f64>() / idx.len() as f64)
            .collect()
    };
    let plateau_of = |trace: &[f64]| -> f64 {
        stats::mean(&ts.iter().zip(trace).map(|(t, z)| t.powf(GAMMA) * z).collect::<Vec<_>>())
    };
    let all: Vec<usize> = (0..n).collect();
    let mean_trace = mean_at(&all);
    let scaled: Vec<f64> = ts.iter().zip(&mean_trace).map(|(t, z)| t.powf(GAMMA) * z).collect();
    let plateau = plateau_of(&mean_trace);
    let boot = stats::Bootstrap::run(
        n,
        ensemble.config.bootstrap,
        crate::rng::derive(ensemble.config.master_seed, crate::rng::tag::BOOTSTRAP, 3),
        |idx| plateau_of(&mean_at(idx)),
    );
    let gamma_factor = gamma(1.0 + GAMMA);
    let predicted = c0 * gamma_factor;
    Ok(HeatTracePlateau {
        t: ts,
        mean_trace,
        scaled,
        plateau,
        plateau_stderr: boot.std_dev(),
        gamma_factor,
        predicted,
        relative_error: (plateau - predicted).abs() / predicted,
    })
}
