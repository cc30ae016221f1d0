//! Ensembles of counting curves and the estimators built on them: the
//! plateau of `λ^{-2/3} N(λ)` and its slope, the renewal constant `m(∞)`,
//! heat-trace plateaus, the excursion route and single-realization checks.

mod heat;
mod output;
mod renewal;

pub use heat::{heat_trace_plateau, HeatConfig, HeatTracePlateau};
pub use output::{config_hash, write_ensemble, FitOutcome, ResultsDir, RunMeta, VERSION};
pub use renewal::{estimate_renewal_constant, RenewalConfig, RenewalEstimate};

use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::{sample_cascade, CascadeTree, PerturbationTable, GAMMA};
use crate::error::{Error, Result};
use crate::excursion::{reduced_tree_at, sample_excursion, sample_leaf_times};
use crate::format::{sig17, sig17_opt, sig17_pair};
use crate::forms::{assemble_cut_set, assemble_network, cut_level_for_depth, ResistanceNetwork};
use crate::oracle::MAX_DIM;
use crate::rng;
use crate::spectrum::{dense_eigenvalues, smallest_eigenvalue, Boundary, Pencil};
use crate::stats::{self, bootstrap_indices, least_squares, LineFit};

/// Hard cap on grid points per replica.
const MAX_GRID_POINTS: usize = 2000;

/// Where replica networks come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Resistance networks of the random self-similar dendrite.
    SelfSimilar,
    /// Reduced trees spanned by uniform leaves of a sampled excursion.
    Excursion,
}

/// Which cells make up a self-similar network of a given depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    /// Every cell of length `n`.
    Level,
    /// The cut set of [`cut_level_for_depth`]: cells no longer than
    /// `3^{-(n-1)/2}`, on average as many as at level `n`.
    CutSet,
}

/// Boundary condition of a counting curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Neumann,
    Dirichlet,
}

/// Log-spaced grid `λ_j = lo · 10^{j / per_decade}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaGrid {
    #[serde(serialize_with = "sig17")]
    pub lo: f64,
    /// Last grid value; `None` extends each replica until its Neumann count
    /// reaches `stop_fraction` of its vertices.
    #[serde(serialize_with = "sig17_opt")]
    pub hi: Option<f64>,
    pub per_decade: usize,
    #[serde(serialize_with = "sig17")]
    pub stop_fraction: f64,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid {
            lo: 1.0,
            hi: None,
            per_decade: 10,
            stop_fraction: 0.2,
        }
    }
}

impl LambdaGrid {
    pub fn point(&self, j: usize) -> f64 {
        self.lo * 10f64.powf(j as f64 / self.per_decade as f64)
    }

    fn last_index(&self) -> Option<usize> {
        self.hi
            .map(|hi| (self.per_decade as f64 * (hi / self.lo).log10() + 1e-9).floor() as usize)
    }
}

/// Plateau window: from `lo_factor` times the median Dirichlet floor up to the
/// first grid value where the mean Neumann count reaches `hi_fraction` of the
/// mean vertex count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowRule {
    #[serde(serialize_with = "sig17")]
    pub lo_factor: f64,
    #[serde(serialize_with = "sig17")]
    pub hi_fraction: f64,
}

impl Default for WindowRule {
    fn default() -> Self {
        WindowRule {
            lo_factor: 100.0,
            hi_fraction: 0.05,
        }
    }
}

/// Parameters of the excursion route.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcursionRoute {
    pub steps: usize,
    pub leaves: usize,
    /// Subdivide tree edges longer than this.
    #[serde(serialize_with = "sig17_opt")]
    pub max_edge: Option<f64>,
}

impl Default for ExcursionRoute {
    fn default() -> Self {
        ExcursionRoute {
            steps: 1 << 16,
            leaves: 8000,
            max_edge: None,
        }
    }
}

/// Everything that determines an ensemble run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub replicas: usize,
    pub depth: usize,
    /// Truncation depth `m` of the resistance perturbations (0 for the debug cascade).
    pub trunc_depth: usize,
    pub master_seed: u64,
    pub grid: LambdaGrid,
    pub window: WindowRule,
    pub route: Route,
    pub discretization: Discretization,
    /// Deterministic `Δ ≡ (1/3, 1/3, 1/3)`, `R ≡ 1` cascade.
    pub debug_cascade: bool,
    pub excursion: ExcursionRoute,
    pub bootstrap: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            replicas: 200,
            depth: 12,
            trunc_depth: 4,
            master_seed: 0,
            grid: LambdaGrid::default(),
            window: WindowRule::default(),
            route: Route::SelfSimilar,
            discretization: Discretization::CutSet,
            debug_cascade: false,
            excursion: ExcursionRoute::default(),
            bootstrap: 1000,
        }
    }
}

/// A replica's network with the data needed to reproduce or inspect it.
pub struct ReplicaNetwork {
    pub seed: u64,
    pub network: ResistanceNetwork<f64>,
    pub dirichlet: Boundary,
    pub cascade: Option<CascadeTree>,
    pub leaf_height: Option<f64>,
    pub total_length: Option<f64>,
}

/// Counting curves of one replica on the ensemble grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaCurves {
    pub replica: usize,
    pub seed: u64,
    pub vertices: usize,
    #[serde(serialize_with = "sig17")]
    pub dirichlet_floor: f64,
    #[serde(serialize_with = "sig17_opt")]
    pub leaf_height: Option<f64>,
    #[serde(serialize_with = "sig17_opt")]
    pub total_length: Option<f64>,
    pub neumann: Vec<u64>,
    pub dirichlet: Vec<u64>,
}

impl ReplicaCurves {
    pub fn counts(&self, side: Side) -> &[u64] {
        match side {
            Side::Neumann => &self.neumann,
            Side::Dirichlet => &self.dirichlet,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if self.replicas == 0 {
            return Err(Error::invalid("replicas must be >= 1"));
        }
        if !(g.lo > 0.0) || g.per_decade == 0 || g.hi.is_some_and(|hi| !(hi > g.lo)) {
            return Err(Error::invalid("grid needs 0 < lo < hi and per_decade >= 1"));
        }
        if !(g.stop_fraction > 0.0 && g.stop_fraction <= 1.0) {
            return Err(Error::invalid("stop_fraction must lie in (0, 1]"));
        }
        if !(self.window.lo_factor > 0.0 && self.window.hi_fraction > 0.0) {
            return Err(Error::invalid("window rule parameters must be positive"));
        }
        if self.route == Route::Excursion && (self.excursion.steps < 2 || self.excursion.leaves == 0) {
            return Err(Error::invalid("excursion route needs steps >= 2 and leaves >= 1"));
        }
        if self.excursion.max_edge.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::invalid("max_edge must be positive"));
        }
        Ok(())
    }

    pub fn replica_seed(&self, r: usize) -> u64 {
        rng::replica_seed(self.master_seed, r as u64)
    }

    pub fn replica_seeds(&self) -> Vec<u64> {
        (0..self.replicas).map(|r| self.replica_seed(r)).collect()
    }

    /// Cells (or grid steps) times replicas, checked against the budget.
    fn check_budget(&self, budget: u128) -> Result<()> {
        let per = match self.route {
            Route::SelfSimilar => 3u128.checked_pow(self.depth as u32).unwrap_or(u128::MAX),
            Route::Excursion => self.excursion.steps as u128,
        };
        let needed = per.saturating_mul(self.replicas as u128);
        if needed > budget {
            return Err(Error::Capacity {
                what: format!("ensemble of {} replicas", self.replicas),
                needed,
                budget,
            });
        }
        Ok(())
    }

    /// Network of replica `r`; cells of length `<= index_depth` stay
    /// extractable on cut-set networks.
    pub fn replica_network(&self, r: usize, index_depth: usize) -> Result<ReplicaNetwork> {
        let seed = self.replica_seed(r);
        let budget = crate::cell_budget();
        match self.route {
            Route::SelfSimilar => {
                let m = if self.debug_cascade { 0 } else { self.trunc_depth };
                let (network, cascade) = match self.discretization {
                    Discretization::Level => {
                        let c = if self.debug_cascade {
                            CascadeTree::uniform(self.depth)
                        } else {
                            sample_cascade(self.depth, seed, budget)?
                        };
                        let table = PerturbationTable::anchored(&c, m);
                        (assemble_network(&c, &table)?, c)
                    }
                    Discretization::CutSet => {
                        let stored = self.depth.saturating_sub(1).min(14);
                        let c = if self.debug_cascade {
                            CascadeTree::uniform(stored)
                        } else {
                            sample_cascade(stored, seed, budget)?
                        };
                        let t = cut_level_for_depth(self.depth);
                        (assemble_cut_set(&c, t, m, index_depth, budget)?, c)
                    }
                };
                Ok(ReplicaNetwork {
                    seed,
                    network,
                    dirichlet: Boundary::dirichlet(),
                    cascade: Some(cascade),
                    leaf_height: None,
                    total_length: None,
                })
            }
            Route::Excursion => {
                let ex = &self.excursion;
                let f = sample_excursion(ex.steps, seed)?;
                let times = sample_leaf_times(&f, ex.leaves, seed);
                let tree = reduced_tree_at(&f, &times, ex.max_edge)?;
                let parent: Vec<Option<usize>> = (0..tree.len()).map(|v| tree.parent(v)).collect();
                let length: Vec<f64> = (0..tree.len()).map(|v| tree.edge_length(v)).collect();
                let network = ResistanceNetwork::from_tree(&parent, &length, tree.masses())?;
                let leaf = tree.leaves()[0];
                let dirichlet = if leaf == tree.root() {
                    Boundary::Dirichlet(vec![tree.root()])
                } else {
                    Boundary::Dirichlet(vec![tree.root(), leaf])
                };
                Ok(ReplicaNetwork {
                    seed,
                    network,
                    dirichlet,
                    cascade: None,
                    leaf_height: Some(tree.height(leaf)),
                    total_length: Some(tree.total_length()),
                })
            }
        }
    }

    /// Neumann and Dirichlet counting curves of replica `r`.
    pub fn count_replica(&self, r: usize) -> Result<ReplicaCurves> {
        let rn = self.replica_network(r, 0)?;
        let net = &rn.network;
        let pn = Pencil::new(net, Boundary::Neumann)?;
        let pd = Pencil::new(net, rn.dirichlet.clone())?;
        let floor = smallest_eigenvalue(&pd, 1e-9).unwrap_or(f64::INFINITY);
        let last = self.grid.last_index();
        let stop = self.grid.stop_fraction * net.vertex_count() as f64;
        let (mut neumann, mut dirichlet) = (Vec::new(), Vec::new());
        for j in 0..MAX_GRID_POINTS {
            if last.is_some_and(|l| j > l) {
                break;
            }
            let lambda = self.grid.point(j);
            let n = pn.count_below(lambda);
            neumann.push(n as u64);
            dirichlet.push(pd.count_below(lambda) as u64);
            if last.is_none() && n as f64 >= stop {
                break;
            }
        }
        Ok(ReplicaCurves {
            replica: r,
            seed: rn.seed,
            vertices: net.vertex_count(),
            dirichlet_floor: floor,
            leaf_height: rn.leaf_height,
            total_length: rn.total_length,
            neumann,
            dirichlet,
        })
    }
}

/// Per-replica curves truncated to a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub config: EnsembleConfig,
    pub lambdas: Vec<f64>,
    pub replicas: Vec<ReplicaCurves>,
}

/// Run every replica (in parallel on the current rayon pool; the output does
/// not depend on scheduling).
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    config.check_budget(crate::cell_budget())?;
    let mut replicas = (0..config.replicas)
        .into_par_iter()
        .map(|r| config.count_replica(r))
        .collect::<Result<Vec<_>>>()?;
    let common = replicas.iter().map(|c| c.neumann.len()).min().unwrap_or(0);
    for c in &mut replicas {
        c.neumann.truncate(common);
        c.dirichlet.truncate(common);
    }
    Ok(EnsembleResult {
        config: config.clone(),
        lambdas: (0..common).map(|j| config.grid.point(j)).collect(),
        replicas,
    })
}

/// Resolved plateau window on the ensemble grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Window {
    #[serde(serialize_with = "sig17")]
    pub lo: f64,
    #[serde(serialize_with = "sig17")]
    pub hi: f64,
    pub first: usize,
    pub last: usize,
    #[serde(serialize_with = "sig17")]
    pub median_dirichlet_floor: f64,
    #[serde(serialize_with = "sig17")]
    pub mean_vertices: f64,
}

impl Window {
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn points(&self) -> usize {
        self.last + 1 - self.first
    }
}

/// Fitted scaling on a window, with bootstrap errors over replicas.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub side: Side,
    #[serde(serialize_with = "sig17")]
    pub lambda_lo: f64,
    #[serde(serialize_with = "sig17")]
    pub lambda_hi: f64,
    pub points: usize,
    #[serde(serialize_with = "sig17")]
    pub slope: f64,
    #[serde(serialize_with = "sig17")]
    pub slope_stderr: f64,
    /// `d_S = 2 · slope`.
    #[serde(serialize_with = "sig17")]
    pub spectral_dimension: f64,
    /// Mean of `λ^{-2/3} N(λ)` over the window.
    #[serde(serialize_with = "sig17")]
    pub plateau: f64,
    #[serde(serialize_with = "sig17")]
    pub plateau_stderr: f64,
    /// 95% percentile bootstrap interval of the plateau.
    #[serde(serialize_with = "sig17_pair")]
    pub plateau_ci: (f64, f64),
    #[serde(serialize_with = "sig17")]
    pub rms_residual: f64,
}

/// Least-squares slope of `ln N` against `ln λ` and mean of `λ^{-2/3} N` over
/// the window.
pub fn fit_scaling(lambdas: &[f64], counts: &[f64], window: &Window) -> Result<(LineFit, f64)> {
    let idx = window.indices();
    if window.last >= lambdas.len() || window.points() < 2 {
        return Err(Error::WindowUnresolved {
            lo: window.lo,
            hi: window.hi,
            reason: "window outside the grid".into(),
        });
    }
    if counts[idx.clone()].iter().any(|&c| !(c > 0.0)) {
        return Err(Error::WindowUnresolved {
            lo: window.lo,
            hi: window.hi,
            reason: "zero counts inside the window".into(),
        });
    }
    let x: Vec<f64> = idx.clone().map(|j| lambdas[j].ln()).collect();
    let y: Vec<f64> = idx.clone().map(|j| counts[j].ln()).collect();
    let plateau = stats::mean(&idx.map(|j| counts[j] * lambdas[j].powf(-GAMMA)).collect::<Vec<_>>());
    Ok((least_squares(&x, &y), plateau))
}

impl EnsembleResult {
    pub fn mean_vertices(&self) -> f64 {
        stats::mean(&self.replicas.iter().map(|c| c.vertices as f64).collect::<Vec<_>>())
    }

    pub fn median_floor(&self) -> f64 {
        stats::median(&self.replicas.iter().map(|c| c.dirichlet_floor).collect::<Vec<_>>())
    }

    fn mean_over(&self, side: Side, idx: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.lambdas.len()];
        for &r in idx {
            for (acc, &c) in m.iter_mut().zip(self.replicas[r].counts(side)) {
                *acc += c as f64;
            }
        }
        m.iter_mut().for_each(|v| *v /= idx.len() as f64);
        m
    }

    /// Mean count at every grid value.
    pub fn mean_curve(&self, side: Side) -> Vec<f64> {
        let all: Vec<usize> = (0..self.replicas.len()).collect();
        self.mean_over(side, &all)
    }

    fn bootstrap_seed(&self, side: Side) -> u64 {
        rng::derive(self.config.master_seed, rng::tag::BOOTSTRAP, side as u64)
    }

    /// 95% bootstrap interval of the mean count at every grid value.
    pub fn curve_intervals(&self, side: Side) -> Vec<(f64, f64)> {
        let n = self.replicas.len();
        let draws: Vec<Vec<f64>> = bootstrap_indices(n, self.config.bootstrap, self.bootstrap_seed(side))
            .iter()
            .map(|idx| self.mean_over(side, idx))
            .collect();
        (0..self.lambdas.len())
            .map(|j| {
                let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
                if col.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    (stats::quantile(&col, 0.025), stats::quantile(&col, 0.975))
                }
            })
            .collect()
    }

    /// Window from the ensemble's own Dirichlet floors and Neumann counts.
    pub fn window(&self) -> Result<Window> {
        let rule = self.config.window;
        let floor = self.median_floor();
        let vertices = self.mean_vertices();
        let lo = rule.lo_factor * floor;
        let target = rule.hi_fraction * vertices;
        let mean = self.mean_curve(Side::Neumann);
        let top = self.lambdas.last().copied().unwrap_or(f64::NAN);
        let last = mean.iter().position(|&m| m >= target).ok_or_else(|| Error::WindowUnresolved {
            lo,
            hi: top,
            reason: format!("mean Neumann count stays below {target:.1} on the grid"),
        })?;
        let hi = self.lambdas[last];
        let first = self.lambdas.iter().position(|&l| l >= lo).unwrap_or(usize::MAX);
        if first == usize::MAX || first + 2 > last {
            return Err(Error::WindowUnresolved {
                lo,
                hi,
                reason: "fewer than three grid values between the Dirichlet floor and the discretization ceiling".into(),
            });
        }
        Ok(Window {
            lo,
            hi,
            first,
            last,
            median_dirichlet_floor: floor,
            mean_vertices: vertices,
        })
    }

    /// Scaling fit of the mean curve with bootstrap errors over replicas.
    pub fn fit(&self, side: Side, window: &Window) -> Result<ScalingFit> {
        let (line, plateau) = fit_scaling(&self.lambdas, &self.mean_curve(side), window)?;
        let n = self.replicas.len();
        let (mut slopes, mut plateaus) = (Vec::new(), Vec::new());
        for idx in bootstrap_indices(n, self.config.bootstrap, self.bootstrap_seed(side)) {
            if let Ok((l, p)) = fit_scaling(&self.lambdas, &self.mean_over(side, &idx), window) {
                slopes.push(l.slope);
                plateaus.push(p);
            }
        }
        let ci = if plateaus.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (stats::quantile(&plateaus, 0.025), stats::quantile(&plateaus, 0.975))
        };
        Ok(ScalingFit {
            side,
            lambda_lo: window.lo,
            lambda_hi: window.hi,
            points: window.points(),
            slope: line.slope,
            slope_stderr: stats::std_dev(&slopes),
            spectral_dimension: 2.0 * line.slope,
            plateau,
            plateau_stderr: stats::std_dev(&plateaus),
            plateau_ci: ci,
            rms_residual: line.rms_residual,
        })
    }

    /// `λ^{-2/3} N(λ)` averaged over the window, for every replica.
    pub fn replica_plateaus(&self, side: Side, window: &Window) -> Vec<f64> {
        self.replicas
            .iter()
            .map(|c| {
                let v: Vec<f64> = window
                    .indices()
                    .map(|j| c.counts(side)[j] as f64 * self.lambdas[j].powf(-GAMMA))
                    .collect();
                stats::mean(&v)
            })
            .collect()
    }

    /// Leaf heights and tree sizes of an excursion-route ensemble.
    pub fn excursion_summary(&self) -> Option<ExcursionSummary> {
        let heights: Vec<f64> = self.replicas.iter().filter_map(|c| c.leaf_height).collect();
        let lengths: Vec<f64> = self.replicas.iter().filter_map(|c| c.total_length).collect();
        if heights.is_empty() {
            return None;
        }
        Some(ExcursionSummary {
            mean_leaf_height: stats::mean(&heights),
            leaf_height_stderr: stats::std_error(&heights),
            mean_total_length: stats::mean(&lengths),
            mean_vertices: self.mean_vertices(),
        })
    }
}

/// Summary of the trees behind an excursion-route ensemble.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcursionSummary {
    /// Mean distance from the root to the first leaf.
    #[serde(serialize_with = "sig17")]
    pub mean_leaf_height: f64,
    #[serde(serialize_with = "sig17")]
    pub leaf_height_stderr: f64,
    #[serde(serialize_with = "sig17")]
    pub mean_total_length: f64,
    #[serde(serialize_with = "sig17")]
    pub mean_vertices: f64,
}

/// Compare every count of a small ensemble with the dense eigensolver.
/// Returns the number of comparisons made.
pub fn oracle_validate(result: &EnsembleResult) -> Result<usize> {
    let cfg = &result.config;
    if cfg.route != Route::SelfSimilar {
        return Err(Error::invalid("the dense oracle needs positive masses (self-similar route)"));
    }
    let mut compared = 0;
    for c in &result.replicas {
        let rn = cfg.replica_network(c.replica, 0)?;
        if rn.network.vertex_count() > MAX_DIM {
            return Err(Error::invalid(format!(
                "replica {} has {} vertices, above the dense oracle limit {MAX_DIM}",
                c.replica,
                rn.network.vertex_count()
            )));
        }
        for (side, boundary) in [(Side::Neumann, Boundary::Neumann), (Side::Dirichlet, rn.dirichlet.clone())] {
            let dense = dense_eigenvalues(&rn.network, &boundary)?;
            for (&lambda, &fast) in result.lambdas.iter().zip(c.counts(side)) {
                let want = dense.iter().filter(|&&e| e <= lambda).count();
                if want != fast as usize {
                    return Err(Error::OracleMismatch {
                        lambda,
                        fast: fast as usize,
                        dense: want,
                    });
                }
                compared += 1;
            }
        }
    }
    Ok(compared)
}

/// Single-realization plateaus across depths against the ensemble constant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlmostSureReport {
    pub master_seed: u64,
    pub depths: Vec<usize>,
    #[serde(serialize_with = "crate::format::sig17_seq")]
    pub plateaus: Vec<f64>,
    /// `|p(n) - p(n-1)|` for consecutive depths.
    #[serde(serialize_with = "crate::format::sig17_seq")]
    pub drift: Vec<f64>,
    #[serde(serialize_with = "sig17")]
    pub ensemble_plateau: f64,
    /// Bootstrap estimate of the spread of single-replica plateaus.
    #[serde(serialize_with = "sig17")]
    pub replica_sigma: f64,
    /// `|p(deepest) - C₀| / σ`.
    #[serde(serialize_with = "sig17")]
    pub z_score: f64,
}

impl AlmostSureReport {
    /// Whether the last drift is smaller than the one before it.
    pub fn drift_decreasing(&self) -> bool {
        match self.drift.as_slice() {
            [.., a, b] => b < a,
            _ => false,
        }
    }
}

/// Follow one fixed-seed realization (`replicas = 1` of `base` with
/// `master_seed`) through `depths`, each with its own window.
pub fn almost_sure_check(
    base: &EnsembleConfig,
    master_seed: u64,
    depths: &[usize],
    ensemble: &EnsembleResult,
) -> Result<AlmostSureReport> {
    let window = ensemble.window()?;
    let fit = ensemble.fit(Side::Neumann, &window)?;
    let singles = ensemble.replica_plateaus(Side::Neumann, &window);
    let spread = stats::Bootstrap::run(
        singles.len(),
        ensemble.config.bootstrap,
        rng::derive(master_seed, rng::tag::BOOTSTRAP, 7),
        |idx| stats::std_dev(&idx.iter().map(|&i| singles[i]).collect::<Vec<_>>()),
    );
    let sigma = stats::mean(&spread.values);
    let mut plateaus = Vec::with_capacity(depths.len());
    for &d in depths {
        let cfg = EnsembleConfig {
            replicas: 1,
            depth: d,
            master_seed,
            ..base.clone()
        };
        let single = run_ensemble(&cfg)?;
        let w = single.window()?;
        plateaus.push(fit_scaling(&single.lambdas, &single.mean_curve(Side::Neumann), &w)?.1);
    }
    let drift = plateaus.windows(2).map(|p| (p[1] - p[0]).abs()).collect();
    let last = plateaus.last().copied().unwrap_or(f64::NAN);
    Ok(AlmostSureReport {
        master_seed,
        depths: depths.to_vec(),
        plateaus,
        drift,
        ensemble_plateau: fit.plateau,
        replica_sigma: sigma,
        z_score: (last - fit.plateau).abs() / sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::HEIGHT_SCALE;

    fn small(depth: usize, replicas: usize) -> EnsembleConfig {
        EnsembleConfig {
            replicas,
            depth,
            master_seed: 11,
            bootstrap: 100,
            ..EnsembleConfig::default()
        }
    }

    #[test]
    fn depth_zero_jump() {
        let cfg = EnsembleConfig {
            grid: LambdaGrid {
                lo: 0.01,
                hi: Some(1e4),
                per_decade: 50,
                stop_fraction: 1.0,
            },
            discretization: Discretization::Level,
            ..small(0, 1)
        };
        let res = run_ensemble(&cfg).unwrap();
        let rn = cfg.replica_network(0, 0).unwrap();
        let r = rn.network.resistance(0) * HEIGHT_SCALE;
        let jump = 4.0 * HEIGHT_SCALE / r;
        for (l, &n) in res.lambdas.iter().zip(&res.replicas[0].neumann) {
            assert_eq!(n, if *l < jump { 1 } else { 2 }, "λ = {l}");
        }
        assert!(res.replicas[0].dirichlet.iter().all(|&d| d == 0));
    }

    #[test]
    fn ensemble_is_deterministic_across_pools() {
        let cfg = small(5, 6);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_ensemble(&cfg)).unwrap();
        let b = three.install(|| run_ensemble(&cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_and_fit_on_small_ensemble() {
        let res = run_ensemble(&small(7, 12)).unwrap();
        let w = res.window().unwrap();
        assert!(w.points() >= 3 && w.lo < w.hi);
        let fit = res.fit(Side::Neumann, &w).unwrap();
        assert!((fit.slope - 2.0 / 3.0).abs() < 0.1, "{fit:?}");
        assert!(fit.plateau_ci.0 <= fit.plateau && fit.plateau <= fit.plateau_ci.1);
        let d = res.fit(Side::Dirichlet, &w).unwrap();
        assert!((fit.plateau - d.plateau).abs() <= 2.0 * w.lo.powf(-GAMMA));
    }

    #[test]
    fn unresolved_window_is_reported() {
        let res = run_ensemble(&small(2, 2)).unwrap();
        assert!(matches!(res.window(), Err(Error::WindowUnresolved { .. })));
    }

    #[test]
    fn budget_is_enforced() {
        let cfg = small(30, 10);
        assert!(matches!(run_ensemble(&cfg), Err(Error::Capacity { .. })));
    }

    #[test]
    fn oracle_agrees_on_small_networks() {
        let cfg = EnsembleConfig {
            grid: LambdaGrid {
                lo: 0.1,
                hi: Some(1e6),
                per_decade: 3,
                stop_fraction: 1.0,
            },
            ..small(3, 4)
        };
        let res = run_ensemble(&cfg).unwrap();
        assert_eq!(oracle_validate(&res).unwrap(), 4 * 2 * res.lambdas.len());
    }

    #[test]
    fn debug_cascade_slope() {
        // With R = 1 the series pair of children has resistance ratio 1/2 and
        // mass ratio 1/3, so counts scale like λ^{ln 3 / ln 6}.
        let expected = 3f64.ln() / 6f64.ln();
        let cfg = EnsembleConfig {
            debug_cascade: true,
            trunc_depth: 0,
            discretization: Discretization::Level,
            ..small(10, 1)
        };
        let res = run_ensemble(&cfg).unwrap();
        let fit = res.fit(Side::Neumann, &res.window().unwrap()).unwrap();
        assert!((fit.slope - expected).abs() < 0.02, "{}", fit.slope);
        assert!(fit.plateau > 0.0 && fit.slope_stderr < 1e-12);
    }

    #[test]
    fn shifted_grid_gives_same_plateau() {
        let base = small(8, 10);
        let shifted = EnsembleConfig {
            grid: LambdaGrid {
                lo: 10f64.powf(0.05),
                ..base.grid.clone()
            },
            ..base.clone()
        };
        let plateau = |cfg: &EnsembleConfig| {
            let r = run_ensemble(cfg).unwrap();
            r.fit(Side::Neumann, &r.window().unwrap()).unwrap().plateau
        };
        let (a, b) = (plateau(&base), plateau(&shifted));
        assert!((a - b).abs() < 0.02 * a, "{a} {b}");
    }

    #[test]
    fn excursion_route_runs() {
        let cfg = EnsembleConfig {
            route: Route::Excursion,
            excursion: ExcursionRoute {
                steps: 1 << 12,
                leaves: 200,
                max_edge: None,
            },
            ..small(0, 4)
        };
        let res = run_ensemble(&cfg).unwrap();
        let s = res.excursion_summary().unwrap();
        assert!(s.mean_leaf_height > 0.0 && s.mean_total_length > s.mean_leaf_height);
        assert!(res.replicas.iter().all(|c| c.neumann[0] >= 1));
    }
}
