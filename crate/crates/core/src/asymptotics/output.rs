use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{EnsembleResult, ScalingFit, Side, Window};
use crate::cascade::GAMMA;
use crate::error::{Error, Result};
use crate::format::fmt17;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identity stamped into every artifact of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
}

/// SHA-256 of the command name and the JSON form of its configuration.
pub fn config_hash<C: Serialize>(command: &str, config: &C) -> Result<String> {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(config)?.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct ConfigDoc<'a, C> {
    #[serde(flatten)]
    meta: &'a RunMeta,
    replica_seeds: &'a [u64],
    config: &'a C,
}

#[derive(Serialize)]
struct Stamped<'a, V> {
    #[serde(flatten)]
    meta: &'a RunMeta,
    #[serde(flatten)]
    value: &'a V,
}

/// Output directory of one run.
pub struct ResultsDir {
    root: PathBuf,
    meta: RunMeta,
}

impl ResultsDir {
    /// Create `root` and write `config.json`.
    pub fn create<C: Serialize>(
        root: &Path,
        command: &str,
        config: &C,
        master_seed: u64,
        replica_seeds: &[u64],
    ) -> Result<Self> {
        fs::create_dir_all(root)?;
        let meta = RunMeta {
            command: command.to_string(),
            version: VERSION.to_string(),
            config_hash: config_hash(command, config)?,
            master_seed,
        };
        let dir = ResultsDir {
            root: root.to_path_buf(),
            meta,
        };
        let doc = ConfigDoc {
            meta: &dir.meta,
            replica_seeds,
            config,
        };
        dir.write_raw_json("config.json", &doc)?;
        Ok(dir)
    }

    pub fn meta(&self) -> &RunMeta {
        &self.meta
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write_raw_json<V: Serialize>(&self, name: &str, value: &V) -> Result<()> {
        let mut out = BufWriter::new(File::create(self.path(name))?);
        serde_json::to_writer_pretty(&mut out, value)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    /// JSON object with the run identity merged into `value`'s fields.
    pub fn write_json<V: Serialize>(&self, name: &str, value: &V) -> Result<()> {
        self.write_raw_json(
            name,
            &Stamped {
                meta: &self.meta,
                value,
            },
        )
    }

    /// Buffered CSV writer whose first line is a `#` comment with the run identity.
    pub fn csv(&self, name: &str) -> Result<BufWriter<File>> {
        let mut out = BufWriter::new(File::create(self.path(name))?);
        writeln!(
            out,
            "# crt-spectra {} command {} seed {} config {}",
            self.meta.version, self.meta.command, self.meta.master_seed, self.meta.config_hash
        )?;
        Ok(out)
    }
}

/// Result of fitting an ensemble, as written to `fit.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Resolved {
        window: Window,
        neumann: ScalingFit,
        dirichlet: ScalingFit,
        /// `|plateau_N - plateau_D|`.
        #[serde(serialize_with = "crate::format::sig17")]
        plateau_gap: f64,
        /// `2 λ_lo^{-2/3}`.
        #[serde(serialize_with = "crate::format::sig17")]
        plateau_gap_bound: f64,
    },
    WindowUnresolved {
        reason: String,
    },
}

impl FitOutcome {
    pub fn from_ensemble(result: &EnsembleResult) -> Result<Self> {
        let window = match result.window() {
            Ok(w) => w,
            Err(Error::WindowUnresolved { lo, hi, reason }) => {
                return Ok(FitOutcome::WindowUnresolved {
                    reason: format!("[{lo:e}, {hi:e}]: {reason}"),
                })
            }
            Err(e) => return Err(e),
        };
        let neumann = result.fit(Side::Neumann, &window)?;
        let dirichlet = result.fit(Side::Dirichlet, &window)?;
        Ok(FitOutcome::Resolved {
            plateau_gap: (neumann.plateau - dirichlet.plateau).abs(),
            plateau_gap_bound: 2.0 * window.lo.powf(-GAMMA),
            window,
            neumann,
            dirichlet,
        })
    }
}

/// Write `curves.csv`, `mean_curve.csv` and `fit.json`.
pub fn write_ensemble(dir: &ResultsDir, result: &EnsembleResult) -> Result<FitOutcome> {
    let mut out = dir.csv("curves.csv")?;
    writeln!(out, "replica,seed,lambda,neumann,dirichlet")?;
    for c in &result.replicas {
        for (j, l) in result.lambdas.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", c.replica, c.seed, fmt17(*l), c.neumann[j], c.dirichlet[j])?;
        }
    }
    out.flush()?;

    let mut out = dir.csv("mean_curve.csv")?;
    writeln!(out, "lambda,neumann,neumann_lo,neumann_hi,dirichlet,dirichlet_lo,dirichlet_hi")?;
    let (mn, md) = (result.mean_curve(Side::Neumann), result.mean_curve(Side::Dirichlet));
    let (cn, cd) = (result.curve_intervals(Side::Neumann), result.curve_intervals(Side::Dirichlet));
    for (j, l) in result.lambdas.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt17(*l),
            fmt17(mn[j]),
            fmt17(cn[j].0),
            fmt17(cn[j].1),
            fmt17(md[j]),
            fmt17(cd[j].0),
            fmt17(cd[j].1)
        )?;
    }
    out.flush()?;

    let outcome = FitOutcome::from_ensemble(result)?;
    dir.write_json("fit.json", &outcome)?;
    Ok(outcome)
}
