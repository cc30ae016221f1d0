use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crt_spectra::asymptotics::{
    self, estimate_renewal_constant, heat_trace_plateau, run_ensemble, write_ensemble, Discretization,
    EnsembleConfig, ExcursionRoute, FitOutcome, HeatConfig, LambdaGrid, RenewalConfig, ResultsDir, Route,
    WindowRule,
};
use crt_spectra::cascade::{sample_cascade, CascadeTree, PerturbationTable};
use crt_spectra::excursion::sample_excursion;
use crt_spectra::format::{fmt17, sig17, sig17_opt};
use crt_spectra::forms::{assemble_cut_set, assemble_network, cut_level_for_depth};
use crt_spectra::spectrum::{dirichlet_floor, log_grid, Boundary, Bracketing};
use crt_spectra::{cell_budget, Error, Network, Pencil};

#[derive(Parser)]
#[command(name = "crt-spectra", version, about = "Spectral asymptotics of the continuum random tree")]
struct Cli {
    /// Worker threads for ensemble runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a normalized Brownian excursion on a grid of N steps.
    SampleExcursion {
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the mass cascade down to a depth.
    SampleCascade {
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deterministic (1/3, 1/3, 1/3) triples.
        #[arg(long)]
        uniform: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Counting curves of one network.
    Spectrum(SpectrumArgs),
    /// Ensemble of counting curves with the plateau fit.
    Ensemble(EnsembleArgs),
    /// Renewal estimate of the plateau constant.
    Renewal(RenewalArgs),
    /// Ensemble over trees cut out of sampled excursions.
    CrtRoute(CrtArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Neumann,
    Dirichlet,
    Both,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum DiscretizationArg {
    Level,
    CutSet,
}

impl From<DiscretizationArg> for Discretization {
    fn from(d: DiscretizationArg) -> Self {
        match d {
            DiscretizationArg::Level => Discretization::Level,
            DiscretizationArg::CutSet => Discretization::CutSet,
        }
    }
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    trunc_depth: usize,
    #[arg(long, value_enum, default_value = "level")]
    discretization: DiscretizationArg,
    #[arg(long, default_value_t = 1.0)]
    lambda_lo: f64,
    #[arg(long, default_value_t = 1e6)]
    lambda_hi: f64,
    #[arg(long, default_value_t = 61)]
    points: usize,
    #[arg(long, value_enum, default_value = "both")]
    boundary: BoundaryArg,
    /// Check both bracketing chains at every grid value; exit 4 on a violation.
    #[arg(long)]
    check_bracketing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda_lo: f64,
    /// Last grid value; by default each replica runs until its count reaches the stop fraction.
    #[arg(long)]
    lambda_hi: Option<f64>,
    #[arg(long, default_value_t = 10)]
    per_decade: usize,
    #[arg(long, default_value_t = 0.2)]
    stop_fraction: f64,
    #[arg(long, default_value_t = 100.0)]
    window_lo_factor: f64,
    #[arg(long, default_value_t = 0.05)]
    window_hi_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
}

impl GridArgs {
    fn grid(&self) -> LambdaGrid {
        LambdaGrid {
            lo: self.lambda_lo,
            hi: self.lambda_hi,
            per_decade: self.per_decade,
            stop_fraction: self.stop_fraction,
        }
    }

    fn window(&self) -> WindowRule {
        WindowRule {
            lo_factor: self.window_lo_factor,
            hi_fraction: self.window_hi_fraction,
        }
    }
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long, default_value_t = 200)]
    replicas: usize,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    trunc_depth: usize,
    #[arg(long, value_enum, default_value = "cut-set")]
    discretization: DiscretizationArg,
    /// Deterministic cascade with R = 1.
    #[arg(long)]
    debug_cascade: bool,
    #[command(flatten)]
    grid: GridArgs,
    /// Compare every count with the dense eigensolver (small networks only).
    #[arg(long)]
    oracle: bool,
    /// Also compute the heat-trace plateau.
    #[arg(long)]
    heat_trace: bool,
    /// Exit 4 when the plateau window is unresolved.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenewalArgs {
    #[arg(long, default_value_t = 50)]
    replicas: usize,
    #[arg(long, default_value_t = 10)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    trunc_depth: usize,
    #[arg(long, value_enum, default_value = "cut-set")]
    discretization: DiscretizationArg,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    t_lo: f64,
    #[arg(long, default_value_t = 0.05)]
    t_step: f64,
    #[arg(long, default_value_t = 0.05)]
    tail_tolerance: f64,
    #[arg(long, default_value_t = 0.2)]
    stop_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    window_hi_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CrtArgs {
    #[arg(long, default_value_t = 65536)]
    steps: usize,
    #[arg(long, default_value_t = 8000)]
    leaves: usize,
    #[arg(long, default_value_t = 20)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subdivide tree edges longer than this.
    #[arg(long)]
    max_edge: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Capacity { .. } | Error::EigenBudget { .. } => 3,
        e if e.is_numerical() => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Capacity { needed, budget, .. } = &e {
                eprintln!("budget report: needed {needed}, budget {budget} (set CRT_SPECTRA_BUDGET to change)");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn output(path: &Option<PathBuf>) -> crt_spectra::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(command: Command) -> crt_spectra::Result<u8> {
    match command {
        Command::SampleExcursion { steps, seed, out } => {
            let f = sample_excursion(steps, seed)?;
            let mut w = output(&out)?;
            f.write_csv(&mut w)?;
            w.flush()?;
            Ok(0)
        }
        Command::SampleCascade {
            depth,
            seed,
            uniform,
            out,
        } => {
            let c = if uniform {
                crt_spectra::cascade::check_budget("cascade", depth, 1, cell_budget())?;
                CascadeTree::uniform(depth)
            } else {
                sample_cascade(depth, seed, cell_budget())?
            };
            let mut w = output(&out)?;
            c.write_json(&mut w)?;
            writeln!(w)?;
            w.flush()?;
            Ok(0)
        }
        Command::Spectrum(a) => spectrum(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Renewal(a) => renewal(a),
        Command::CrtRoute(a) => crt_route(a),
    }
}

#[derive(Serialize)]
struct SpectrumConfig {
    depth: usize,
    seed: u64,
    trunc_depth: usize,
    discretization: Discretization,
    #[serde(serialize_with = "sig17")]
    lambda_lo: f64,
    #[serde(serialize_with = "sig17")]
    lambda_hi: f64,
    points: usize,
    check_bracketing: bool,
}

#[derive(Serialize)]
struct SpectrumSummary {
    vertices: usize,
    #[serde(serialize_with = "sig17_opt")]
    dirichlet_floor: Option<f64>,
    #[serde(serialize_with = "sig17_opt")]
    diameter: Option<f64>,
    gap_violations: usize,
    bracketing_violations: usize,
}

fn spectrum(a: SpectrumArgs) -> crt_spectra::Result<u8> {
    let lambdas = log_grid(a.lambda_lo, a.lambda_hi, a.points)?;
    let budget = cell_budget();
    let (cascade, net): (CascadeTree, Network) = match a.discretization {
        DiscretizationArg::Level => {
            let c = sample_cascade(a.depth, a.seed, budget)?;
            let table = PerturbationTable::anchored(&c, a.trunc_depth);
            let net = assemble_network(&c, &table)?;
            (c, net)
        }
        DiscretizationArg::CutSet => {
            let c = sample_cascade(a.depth.saturating_sub(1).min(14), a.seed, budget)?;
            let net = assemble_cut_set(&c, cut_level_for_depth(a.depth), a.trunc_depth, 1, budget)?;
            (c, net)
        }
    };
    let config = SpectrumConfig {
        depth: a.depth,
        seed: a.seed,
        trunc_depth: a.trunc_depth,
        discretization: a.discretization.into(),
        lambda_lo: a.lambda_lo,
        lambda_hi: a.lambda_hi,
        points: a.points,
        check_bracketing: a.check_bracketing,
    };
    let dir = ResultsDir::create(&a.out, "spectrum", &config, a.seed, &[a.seed])?;
    let sides: Vec<Boundary> = match a.boundary {
        BoundaryArg::Neumann => vec![Boundary::Neumann],
        BoundaryArg::Dirichlet => vec![Boundary::dirichlet()],
        BoundaryArg::Both => vec![Boundary::Neumann, Boundary::dirichlet()],
    };
    let mut curves = Vec::new();
    for b in sides {
        let tag = b.tag();
        let curve = Pencil::new(&net, b)?.counting_curve(&lambdas);
        let mut out = dir.csv(&format!("counts_{tag}.csv"))?;
        curve.write_csv(&mut out, true)?;
        out.flush()?;
        curves.push(curve);
    }
    let mut gap_violations = 0usize;
    if let [n, d] = curves.as_slice() {
        gap_violations = n
            .counts
            .iter()
            .zip(&d.counts)
            .filter(|&(&n, &d)| !(d <= n && n <= d + 2))
            .count();
    }
    let floor = if net.vertex_count() > 2 {
        Some(dirichlet_floor(&net)?)
    } else {
        None
    };
    let mut bracketing_violations = 0usize;
    if a.check_bracketing {
        let br = Bracketing::new(&net, &cascade)?;
        let mut out = dir.csv("bracketing.csv")?;
        writeln!(out, "lambda,sum_cells_dirichlet,dirichlet,neumann,sum_cells_neumann,holds")?;
        for &l in &lambdas {
            let r = br.check(l);
            let holds = r.chain_holds() && r.gap_holds();
            bracketing_violations += !holds as usize;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt17(l),
                r.sum_cells_dirichlet,
                r.dirichlet,
                r.neumann,
                r.sum_cells_neumann,
                holds
            )?;
        }
        out.flush()?;
    }
    let summary = SpectrumSummary {
        vertices: net.vertex_count(),
        dirichlet_floor: floor.map(|f| f.lambda),
        diameter: floor.map(|f| f.diameter),
        gap_violations,
        bracketing_violations,
    };
    dir.write_json("spectrum.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if bracketing_violations > 0 || gap_violations > 0 {
        eprintln!("bracketing violated at {} grid values", bracketing_violations.max(gap_violations));
        return Ok(4);
    }
    Ok(0)
}

fn report_fit(outcome: &FitOutcome, strict: bool) -> u8 {
    match outcome {
        FitOutcome::Resolved {
            window,
            neumann,
            dirichlet,
            ..
        } => {
            println!(
                "window [{}, {}] ({} points)\nslope {} ± {}  d_S {}\nplateau N {} ± {}  D {} ± {}",
                fmt17(window.lo),
                fmt17(window.hi),
                window.points(),
                fmt17(neumann.slope),
                fmt17(neumann.slope_stderr),
                fmt17(neumann.spectral_dimension),
                fmt17(neumann.plateau),
                fmt17(neumann.plateau_stderr),
                fmt17(dirichlet.plateau),
                fmt17(dirichlet.plateau_stderr)
            );
            0
        }
        FitOutcome::WindowUnresolved { reason } => {
            eprintln!("warning: plateau window unresolved: {reason}");
            if strict {
                4
            } else {
                0
            }
        }
    }
}

fn run_and_write(cfg: &EnsembleConfig, command: &str, out: &Path) -> crt_spectra::Result<(ResultsDir, asymptotics::EnsembleResult, FitOutcome)> {
    let result = run_ensemble(cfg)?;
    let dir = ResultsDir::create(out, command, cfg, cfg.master_seed, &cfg.replica_seeds())?;
    let outcome = write_ensemble(&dir, &result)?;
    Ok((dir, result, outcome))
}

fn ensemble(a: EnsembleArgs) -> crt_spectra::Result<u8> {
    let cfg = EnsembleConfig {
        replicas: a.replicas,
        depth: a.depth,
        trunc_depth: if a.debug_cascade { 0 } else { a.trunc_depth },
        master_seed: a.seed,
        grid: a.grid.grid(),
        window: a.grid.window(),
        route: Route::SelfSimilar,
        discretization: a.discretization.into(),
        debug_cascade: a.debug_cascade,
        excursion: ExcursionRoute::default(),
        bootstrap: a.grid.bootstrap,
    };
    let (dir, result, outcome) = run_and_write(&cfg, "ensemble", &a.out)?;
    if a.oracle {
        let n = asymptotics::oracle_validate(&result)?;
        println!("oracle: {n} counts agree with the dense eigensolver");
    }
    let code = report_fit(&outcome, a.strict);
    if a.heat_trace {
        if let FitOutcome::Resolved { window, neumann, .. } = &outcome {
            let h = heat_trace_plateau(&result, window, neumann.plateau, &HeatConfig::default())?;
            dir.write_json("heat.json", &h)?;
            println!(
                "heat-trace plateau {} (C0·Γ(5/3) = {}, relative error {})",
                fmt17(h.plateau),
                fmt17(h.predicted),
                fmt17(h.relative_error)
            );
        }
    }
    Ok(code)
}

fn renewal(a: RenewalArgs) -> crt_spectra::Result<u8> {
    let cfg = RenewalConfig {
        ensemble: EnsembleConfig {
            replicas: a.replicas,
            depth: a.depth,
            trunc_depth: a.trunc_depth,
            master_seed: a.seed,
            grid: LambdaGrid {
                stop_fraction: a.stop_fraction,
                ..LambdaGrid::default()
            },
            window: WindowRule {
                hi_fraction: a.window_hi_fraction,
                ..WindowRule::default()
            },
            discretization: a.discretization.into(),
            bootstrap: a.bootstrap,
            ..EnsembleConfig::default()
        },
        t_lo: a.t_lo,
        t_step: a.t_step,
        tail_tolerance: a.tail_tolerance,
    };
    let est = estimate_renewal_constant(&cfg)?;
    let dir = ResultsDir::create(&a.out, "renewal", &cfg, a.seed, &cfg.ensemble.replica_seeds())?;
    dir.write_json("renewal.json", &est)?;
    let mut out = dir.csv("eta.csv")?;
    writeln!(out, "t,mean_eta,u")?;
    for ((t, e), u) in est.t.iter().zip(&est.mean_eta).zip(&est.integrand) {
        writeln!(out, "{},{},{}", fmt17(*t), fmt17(*e), fmt17(*u))?;
    }
    out.flush()?;
    println!(
        "m_infinity {} ± {}\nnu_first_moment {}\nintegral {} (t_hi {}, tail bound {})\nzero checks {} violations {}",
        fmt17(est.m_infinity),
        fmt17(est.m_infinity_stderr),
        fmt17(est.nu_first_moment),
        fmt17(est.integral),
        fmt17(est.t_hi),
        fmt17(est.tail_bound),
        est.zero_checks,
        est.zero_violations
    );
    Ok(0)
}

fn crt_route(a: CrtArgs) -> crt_spectra::Result<u8> {
    let cfg = EnsembleConfig {
        replicas: a.replicas,
        depth: 0,
        trunc_depth: 0,
        master_seed: a.seed,
        grid: a.grid.grid(),
        window: a.grid.window(),
        route: Route::Excursion,
        discretization: Discretization::Level,
        debug_cascade: false,
        excursion: ExcursionRoute {
            steps: a.steps,
            leaves: a.leaves,
            max_edge: a.max_edge,
        },
        bootstrap: a.grid.bootstrap,
    };
    let (dir, result, outcome) = run_and_write(&cfg, "crt-route", &a.out)?;
    if let Some(s) = result.excursion_summary() {
        dir.write_json("trees.json", &s)?;
        println!(
            "mean leaf height {} ± {}  mean tree length {}  mean vertices {}",
            fmt17(s.mean_leaf_height),
            fmt17(s.leaf_height_stderr),
            fmt17(s.mean_total_length),
            fmt17(s.mean_vertices)
        );
    }
    Ok(report_fit(&outcome, a.strict))
}
