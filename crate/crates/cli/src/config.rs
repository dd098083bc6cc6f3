use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dualmax_core::duality::{Backend, SolveError, DEFAULT_TOL};
use dualmax_core::fixtures;
use dualmax_core::market::{ClaimVector, MarketError, Model, RawClaim, RawModel};
use dualmax_core::oracle::{GridSpec, OracleError};
use dualmax_core::report::ReportError;
use dualmax_core::superrep::SuperrepError;
use dualmax_core::utility::{PiecewiseUtility, UtilityError};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("refusing to overwrite existing file {0}")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Superrep(#[from] SuperrepError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solve(e) => match e {
                SolveError::NoConvergence { .. } | SolveError::RelationViolated { .. } => EXIT_FAILED,
                SolveError::WealthBelowEndowmentBound { .. }
                | SolveError::AssumptionFailure(_)
                | SolveError::DualUnboundedBelow
                | SolveError::PrimalUnbounded => EXIT_ASSUMPTION,
                _ => EXIT_INPUT,
            },
            CliError::Oracle(OracleError::EmptyFeasibleGrid) => EXIT_FAILED,
            CliError::Superrep(SuperrepError::InfeasibleDualDomain) => EXIT_ASSUMPTION,
            _ => EXIT_INPUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Solve,
    Price,
    Decompose,
    Verify,
    Oracle,
}

/// Grid given as `lo:hi:count` per dimension, comma separated. One entry is
/// broadcast to every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GridArg(pub GridSpec);

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bounds = Vec::new();
        let mut counts = Vec::new();
        for part in s.split(',') {
            let f: Vec<&str> = part.trim().split(':').collect();
            let [lo, hi, n] = f[..] else {
                return Err(format!("expected lo:hi:count, got {part:?}"));
            };
            let lo: f64 = lo.parse().map_err(|_| format!("bad bound {lo:?}"))?;
            let hi: f64 = hi.parse().map_err(|_| format!("bad bound {hi:?}"))?;
            let n: usize = n.parse().map_err(|_| format!("bad count {n:?}"))?;
            bounds.push((lo, hi));
            counts.push(n);
        }
        let spec = GridSpec {
            bounds,
            counts,
            ..GridSpec::uniform(0.0, 1.0, 3)
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(GridArg(spec))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// Model file, or the report file for `verify`.
    pub model: PathBuf,
    pub utility: Option<String>,
    pub claim: Option<PathBuf>,
    pub wealth: Option<f64>,
    pub tol: f64,
    pub backend: Option<Backend>,
    pub force: bool,
    pub out: Option<PathBuf>,
    pub grid: Option<GridSpec>,
    pub dual_grid: Option<GridSpec>,
    /// Refinement passes of the default oracle grids.
    pub passes: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0 && self.tol <= 1e-2) {
            return Err(CliError::Invalid(format!(
                "tolerance {} is outside (0, 1e-2]",
                self.tol
            )));
        }
        if let Some(x) = self.wealth {
            if !x.is_finite() {
                return Err(CliError::Invalid(format!("wealth {x} is not finite")));
            }
        }
        Ok(())
    }

    pub fn wealth(&self) -> Result<f64, CliError> {
        self.wealth
            .ok_or_else(|| CliError::Invalid("--wealth is required for this command".into()))
    }
}

pub fn default_tol() -> f64 {
    DEFAULT_TOL
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let raw: RawModel = read_json(path)?;
    Ok(Model::from_raw(&raw)?)
}

pub fn load_claim(path: Option<&Path>, model: &Model) -> Result<ClaimVector, CliError> {
    match path {
        Some(p) => {
            let raw: RawClaim = read_json(p)?;
            Ok(raw.to_claim(&model.tree)?)
        }
        None => Ok(ClaimVector::zeros(model.tree.num_leaves())),
    }
}

/// A utility file, or one of the names `log`, `kink`, `capped`,
/// `crra:<p>`.
pub fn load_utility(spec: Option<&str>) -> Result<PiecewiseUtility, CliError> {
    let spec = spec.unwrap_or("log");
    let path = Path::new(spec);
    if path.exists() {
        return read_json(path);
    }
    match spec.split_once(':') {
        None => match spec {
            "log" => Ok(fixtures::log_utility()),
            "kink" => Ok(fixtures::kink()),
            "capped" => Ok(fixtures::capped_linear()),
            _ => Err(CliError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such utility file or name"),
            }),
        },
        Some(("crra", p)) => {
            let p: f64 = p
                .parse()
                .map_err(|_| CliError::Invalid(format!("bad CRRA exponent {p:?}")))?;
            if !(p > 0.0 && p < 1.0) {
                return Err(CliError::Invalid(format!("CRRA exponent {p} is outside (0, 1)")));
            }
            Ok(fixtures::crra(p))
        }
        Some(_) => Err(CliError::Invalid(format!("unknown utility {spec:?}"))),
    }
}

/// Writes pretty JSON to a new file, or to stdout without a path.
pub fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    match out {
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io {
                path: "<stdout>".into(),
                source: e,
            }),
            _ => Ok(()),
        },
        Some(p) => {
            let io = |source| CliError::Io {
                path: p.to_path_buf(),
                source,
            };
            let mut f = OpenOptions::new().write(true).create_new(true).open(p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    CliError::OutputExists(p.to_path_buf())
                } else {
                    io(e)
                }
            })?;
            f.write_all(text.as_bytes()).map_err(io)?;
            f.write_all(b"\n").map_err(io)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_syntax() {
        let g: GridArg = "-1:2:101".parse().unwrap();
        assert_eq!(g.0.bounds, vec![(-1.0, 2.0)]);
        assert_eq!(g.0.counts, vec![101]);
        let g: GridArg = "0:1:5, 0:2:7".parse().unwrap();
        assert_eq!(g.0.counts, vec![5, 7]);
        assert!("0:1".parse::<GridArg>().is_err());
        assert!("0:1:2".parse::<GridArg>().is_err());
        assert!("a:1:5".parse::<GridArg>().is_err());
    }

    #[test]
    fn tolerance_range() {
        let mut c = RunConfig {
            command: Command::Solve,
            model: "m.json".into(),
            utility: None,
            claim: None,
            wealth: Some(1.0),
            tol: 1e-6,
            backend: None,
            force: false,
            out: None,
            grid: None,
            dual_grid: None,
            passes: 4,
        };
        assert!(c.validate().is_ok());
        c.tol = 0.0;
        assert!(c.validate().is_err());
        c.tol = 0.1;
        assert!(c.validate().is_err());
        c.tol = 1e-2;
        c.wealth = Some(f64::NAN);
        assert!(c.validate().is_err());
    }

    #[test]
    fn named_utilities() {
        assert_eq!(load_utility(None).unwrap(), fixtures::log_utility());
        assert_eq!(load_utility(Some("crra:0.5")).unwrap(), fixtures::crra(0.5));
        assert!(load_utility(Some("crra:2")).is_err());
        assert!(load_utility(Some("no-such-utility")).is_err());
    }

    #[test]
    fn exit_codes() {
        let e = CliError::Solve(SolveError::WealthBelowEndowmentBound { x: 0.2, bound: 0.3 });
        assert_eq!(e.exit_code(), EXIT_ASSUMPTION);
        let e = CliError::Solve(SolveError::NoConvergence { gap: 1.0, report: None });
        assert_eq!(e.exit_code(), EXIT_FAILED);
        assert_eq!(CliError::Invalid("x".into()).exit_code(), EXIT_INPUT);
    }
}
