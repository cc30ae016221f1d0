use rayon::prelude::*;
use serde::Serialize;

use super::{EnsembleConfig, Route};
use crate::cascade::{nu_gamma_moments, Address, GAMMA};
use crate::error::{Error, Result};
use crate::format::{sig17, sig17_seq};
use crate::spectrum::EtaHierarchy;
use crate::stats;

/// Renewal estimate of `m(∞) = ∫ e^{-γt} E η(t) dt / ∫ t ν_γ(dt)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalConfig {
    pub ensemble: EnsembleConfig,
    /// First grid time; the integrand must vanish there.
    #[serde(serialize_with = "sig17")]
    pub t_lo: f64,
    #[serde(serialize_with = "sig17")]
    pub t_step: f64,
    /// Largest tolerated integrand at the upper edge.
    #[serde(serialize_with = "sig17")]
    pub tail_tolerance: f64,
}

impl Default for RenewalConfig {
    fn default() -> Self {
        RenewalConfig {
            ensemble: EnsembleConfig {
                replicas: 50,
                depth: 10,
                ..EnsembleConfig::default()
            },
            t_lo: -2.0,
            t_step: 0.05,
            tail_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalEstimate {
    pub replicas: usize,
    #[serde(serialize_with = "sig17_seq")]
    pub t: Vec<f64>,
    #[serde(serialize_with = "sig17_seq")]
    pub mean_eta: Vec<f64>,
    /// `e^{-γt} E η(t)`.
    #[serde(serialize_with = "sig17_seq")]
    pub integrand: Vec<f64>,
    /// Upper integration limit, where the mean `N^D` reaches the window fraction.
    #[serde(serialize_with = "sig17")]
    pub t_hi: f64,
    #[serde(serialize_with = "sig17")]
    pub integral: f64,
    /// `(6/γ) e^{-γ t_hi}`, a bound on the neglected tail.
    #[serde(serialize_with = "sig17")]
    pub tail_bound: f64,
    #[serde(serialize_with = "sig17")]
    pub nu_total_mass: f64,
    #[serde(serialize_with = "sig17")]
    pub nu_first_moment: f64,
    #[serde(serialize_with = "sig17")]
    pub m_infinity: f64,
    #[serde(serialize_with = "sig17")]
    pub m_infinity_stderr: f64,
    /// Grid times below `-ln diam` where some replica had `η ≠ 0`.
    pub zero_violations: usize,
    /// Grid times below `-ln diam` that were checked.
    pub zero_checks: usize,
}

struct EtaPath {
    eta: Vec<f64>,
    count: Vec<f64>,
    vertices: f64,
    zero_checks: usize,
    zero_violations: usize,
}

impl EtaPath {
    fn etas(&self) -> &[f64] {
        &self.eta
    }

    fn counts(&self) -> &[f64] {
        &self.count
    }
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

const MAX_STEPS: usize = 20_000;

pub fn estimate_renewal_constant(cfg: &RenewalConfig) -> Result<RenewalEstimate> {
    let ens = &cfg.ensemble;
    ens.validate()?;
    if ens.route != Route::SelfSimilar {
        return Err(Error::invalid("the renewal estimator needs the self-similar route"));
    }
    if !(cfg.t_step > 0.0) || !cfg.t_lo.is_finite() {
        return Err(Error::invalid("renewal grid needs a finite start and positive step"));
    }
    ens.check_budget(crate::cell_budget())?;
    let stop = ens.grid.stop_fraction;
    let paths = (0..ens.replicas)
        .into_par_iter()
        .map(|r| -> Result<EtaPath> {
            let rn = ens.replica_network(r, 1)?;
            let cascade = rn.cascade.as_ref().expect("self-similar replica");
            let h = EtaHierarchy::new(&rn.network, cascade, 1)?;
            let vertices = rn.network.vertex_count() as f64;
            let zero_below = -rn.network.diameter().ln();
            let mut p = EtaPath {
                eta: Vec::new(),
                count: Vec::new(),
                vertices,
                zero_checks: 0,
                zero_violations: 0,
            };
            for j in 0..MAX_STEPS {
                let t = cfg.t_lo + j as f64 * cfg.t_step;
                let lambda = t.exp();
                let eta = h.eta_at(Address::ROOT, lambda);
                let n = h.count(Address::ROOT, lambda) as f64;
                if t < zero_below {
                    p.zero_checks += 1;
                    p.zero_violations += (eta != 0) as usize;
                }
                p.eta.push(eta as f64);
                p.count.push(n);
                if n >= stop * vertices {
                    break;
                }
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let len = paths.iter().map(|p| p.eta.len()).min().unwrap_or(0);
    let t: Vec<f64> = (0..len).map(|j| cfg.t_lo + j as f64 * cfg.t_step).collect();
    let mean_col = |idx: &[usize], pick: fn(&EtaPath) -> &[f64]| -> Vec<f64> {
        (0..len)
            .map(|j| idx.iter().map(|&r| pick(&paths[r])[j]).sum::<f64>() / idx.len() as f64)
            .collect()
    };
    let all: Vec<usize> = (0..paths.len()).collect();
    let mean_count = mean_col(&all, EtaPath::counts);
    let vertices = stats::mean(&paths.iter().map(|p| p.vertices).collect::<Vec<_>>());
    let target = ens.window.hi_fraction * vertices;
    let hi = mean_count.iter().position(|&n| n >= target).ok_or_else(|| {
        Error::Tail(format!("mean Dirichlet count stays below {target:.1} on the time grid"))
    })?;
    let integrand_of = |idx: &[usize]| -> Vec<f64> {
        mean_col(idx, EtaPath::etas)
            .iter()
            .zip(&t)
            .map(|(e, t)| (-GAMMA * t).exp() * e)
            .collect()
    };
    let mean_eta = mean_col(&all, EtaPath::etas);
    let integrand = integrand_of(&all);
    if integrand[0] != 0.0 {
        return Err(Error::Tail(format!("integrand {:e} at t = {}", integrand[0], t[0])));
    }
    if integrand[hi].abs() > cfg.tail_tolerance {
        return Err(Error::Tail(format!(
            "integrand {:e} at t = {} above tolerance {:e}",
            integrand[hi], t[hi], cfg.tail_tolerance
        )));
    }
    let (nu_total, nu_first) = nu_gamma_moments();
    let integral = trapezoid(&t[..=hi], &integrand[..=hi]);
    let boot = stats::Bootstrap::run(
        paths.len(),
        ens.bootstrap,
        crate::rng::derive(ens.master_seed, crate::rng::tag::BOOTSTRAP, 5),
        |idx| trapezoid(&t[..=hi], &integrand_of(idx)[..=hi]) / nu_first,
    );
    Ok(RenewalEstimate {
        replicas: paths.len(),
        t_hi: t[hi],
        tail_bound: 6.0 / GAMMA * (-GAMMA * t[hi]).exp(),
        integral,
        nu_total_mass: nu_total,
        nu_first_moment: nu_first,
        m_infinity: integral / nu_first,
        m_infinity_stderr: boot.std_dev(),
        zero_violations: paths.iter().map(|p| p.zero_violations).sum(),
        zero_checks: paths.iter().map(|p| p.zero_checks).sum(),
        t,
        mean_eta,
        integrand,
    })
}
