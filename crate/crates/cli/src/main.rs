//! `dualmax`: assumption checks, primal/dual solves, super-replication
//! prices, decompositions, report verification and brute-force oracles on
//! scenario-tree models given as JSON.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualmax_core::dual_domain::{build_dual_cone, endowment_bound};
use dualmax_core::duality::{
    check_assumptions, report_from_solutions, solve, verify_report, Backend, DualSolution,
    PrimalSolution, SolveError, SolveOptions, BOUND_MARGIN,
};
use dualmax_core::market::{ClaimVector, Model};
use dualmax_core::oracle::{brute_dual, brute_primal, dual_grid_dim, GridSpec};
use dualmax_core::report::{CheckFile, DecompositionFile, PriceFile, ReportFile};
use dualmax_core::superrep::{
    decompose_claim, superrep_hedge, superrep_price, superreplicable_dual,
    superreplicable_primal,
};
use dualmax_core::utility::PiecewiseUtility;

use config::{
    default_tol, emit, load_claim, load_model, load_utility, read_json, CliError, Command,
    GridArg, RunConfig, EXIT_ASSUMPTION, EXIT_OK,
};

#[derive(Parser)]
#[command(name = "dualmax", version, about = "Utility maximization duality on scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Report every standing assumption for a model, utility and endowment.
    Check(Common),
    /// Solve the primal and dual problems and write a report.
    Solve(Common),
    /// Super-replication price and cheapest hedge of a claim.
    Price(Common),
    /// Value process, hedge and consumption of a claim.
    Decompose(Common),
    /// Re-verify the optimality relations of a saved report.
    Verify(VerifyArgs),
    /// Brute-force grid estimates in the report layout.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Model file (`d`, `T`, `nodes`, `cone`).
    model: PathBuf,
    /// Utility file, or one of `log`, `kink`, `capped`, `crra:<p>`.
    #[arg(long)]
    utility: Option<String>,
    /// Claim file `{"values": {"<leaf>": v}}`; endowment for solve, claim
    /// for price and decompose. Zero when omitted.
    #[arg(long)]
    claim: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    wealth: Option<f64>,
    #[arg(long, default_value_t = default_tol())]
    tol: f64,
    /// lp, barrier (alias subgradient, convex) or brute.
    #[arg(long)]
    backend: Option<Backend>,
    /// Run even when assumptions fail.
    #[arg(long)]
    force: bool,
    /// Output file; must not exist. Standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Strategy grid for the oracle, `lo:hi:count[,...]`.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<GridArg>,
    /// Dual weight grid for the oracle, `lo:hi:count[,...]`.
    #[arg(long, allow_hyphen_values = true)]
    dual_grid: Option<GridArg>,
    /// Refinement passes of both oracle grids.
    #[arg(long, default_value_t = 4)]
    passes: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Report written by `solve` or `oracle`.
    report: PathBuf,
    #[arg(long, default_value_t = default_tol())]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config(cli: Cli) -> RunConfig {
    let (command, c) = match cli.command {
        Cmd::Check(c) => (Command::Check, c),
        Cmd::Solve(c) => (Command::Solve, c),
        Cmd::Price(c) => (Command::Price, c),
        Cmd::Decompose(c) => (Command::Decompose, c),
        Cmd::Oracle(c) => (Command::Oracle, c),
        Cmd::Verify(v) => {
            return RunConfig {
                command: Command::Verify,
                model: v.report,
                utility: None,
                claim: None,
                wealth: None,
                tol: v.tol,
                backend: None,
                force: false,
                out: v.out,
                grid: None,
                dual_grid: None,
                passes: 0,
            }
        }
    };
    let with_passes = |g: Option<GridArg>| {
        g.map(|GridArg(mut s)| {
            s.passes = c.passes;
            s
        })
    };
    RunConfig {
        command,
        model: c.model,
        utility: c.utility,
        claim: c.claim,
        wealth: c.wealth,
        tol: c.tol,
        backend: c.backend,
        force: c.force,
        out: c.out,
        grid: with_passes(c.grid),
        dual_grid: with_passes(c.dual_grid),
        passes: c.passes,
    }
}

struct Inputs {
    model: Model,
    utility: PiecewiseUtility,
    claim: ClaimVector,
}

fn inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    let model = load_model(&cfg.model)?;
    let utility = load_utility(cfg.utility.as_deref())?;
    let claim = load_claim(cfg.claim.as_deref(), &model)?;
    Ok(Inputs {
        model,
        utility,
        claim,
    })
}

fn gate(cfg: &RunConfig, i: &Inputs) -> Result<(), CliError> {
    let report = check_assumptions(&i.model, &i.utility, &i.claim);
    if report.passes() || cfg.force {
        Ok(())
    } else {
        Err(SolveError::AssumptionFailure(report.failures).into())
    }
}

fn run(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate()?;
    let out = cfg.out.as_deref();
    match cfg.command {
        Command::Check => {
            let i = inputs(cfg)?;
            let file = CheckFile::from(check_assumptions(&i.model, &i.utility, &i.claim));
            emit(&file, out)?;
            if !file.passes {
                eprintln!("assumptions failed: {}", file.report.failures.join("; "));
                return Ok(EXIT_ASSUMPTION);
            }
            Ok(EXIT_OK)
        }
        Command::Solve => {
            let i = inputs(cfg)?;
            let opts = SolveOptions {
                tol: cfg.tol,
                backend: cfg.backend,
                ..SolveOptions::default()
            };
            match solve(&i.model, &i.utility, &i.claim, cfg.wealth()?, &opts, cfg.force) {
                Ok(r) => {
                    emit(&ReportFile::new(&i.model, &i.utility, &i.claim, &r), out)?;
                    Ok(EXIT_OK)
                }
                Err(SolveError::NoConvergence {
                    gap,
                    report: Some(r),
                }) => {
                    emit(&ReportFile::new(&i.model, &i.utility, &i.claim, &r), out)?;
                    Err(SolveError::NoConvergence { gap, report: None }.into())
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Price => {
            let i = inputs(cfg)?;
            gate(cfg, &i)?;
            let tree = &i.model.tree;
            let dc = build_dual_cone(tree, &i.model.cone);
            let price = superrep_price(&dc, tree, &i.claim)?;
            let (cost, hedge) = superrep_hedge(tree, &i.model.cone, &i.claim)?;
            let shifted = ClaimVector(i.claim.values().iter().map(|r| r - price).collect());
            let primal = superreplicable_primal(tree, &i.model.cone, &shifted)?.feasible;
            let dual = superreplicable_dual(&dc, tree, &shifted)?;
            emit(&PriceFile::new(price, cost, &hedge, primal, dual), out)?;
            Ok(EXIT_OK)
        }
        Command::Decompose => {
            let i = inputs(cfg)?;
            gate(cfg, &i)?;
            let tree = &i.model.tree;
            let dc = build_dual_cone(tree, &i.model.cone);
            let d = decompose_claim(&dc, tree, &i.model.cone, &i.claim)?;
            let residual = d.identity_residual(tree)?;
            emit(&DecompositionFile::new(&d, residual), out)?;
            Ok(EXIT_OK)
        }
        Command::Verify => {
            let file: ReportFile = read_json(&cfg.model)?;
            let r = file.restore()?;
            let cert = verify_report(&r.model, &r.report, &r.utility, &r.endowment, cfg.tol)?;
            emit(&cert, out)?;
            Ok(EXIT_OK)
        }
        Command::Oracle => {
            let i = inputs(cfg)?;
            gate(cfg, &i)?;
            let x = cfg.wealth()?;
            let tree = &i.model.tree;
            let dc = build_dual_cone(tree, &i.model.cone);
            let bound = endowment_bound(&dc, tree, &i.claim)
                .map_err(|e| CliError::Solve(e.into()))?;
            if !(x > bound + BOUND_MARGIN) {
                return Err(SolveError::WealthBelowEndowmentBound { x, bound }.into());
            }
            let grid = cfg.grid.clone().unwrap_or(GridSpec {
                passes: cfg.passes,
                ..GridSpec::uniform(-2.0, 2.0, 401)
            });
            let p = brute_primal(tree, &i.model.cone, &i.utility, &i.claim, x, &grid)?;
            let dual_grid = cfg.dual_grid.clone().unwrap_or_else(|| GridSpec {
                passes: cfg.passes,
                ..GridSpec::uniform(0.0, 3.0, [201, 201, 201, 41, 21][dual_grid_dim(&dc).min(4)])
            });
            let d = brute_dual(tree, &dc, &i.utility, &i.claim, x, &dual_grid)?;
            let primal = PrimalSolution {
                u_value: p.estimate.value,
                h_star: p.strategy,
                x_star: p.terminal_wealth,
                iterations: p.estimate.evaluations,
                gap_bound: p.estimate.error_bound,
                converged: true,
            };
            let dual = DualSolution {
                w_value: d.estimate.value,
                nu_star: d.measure,
                iterations: d.estimate.evaluations,
                gap_bound: d.estimate.error_bound,
                converged: true,
            };
            let r = report_from_solutions(x, &i.utility, &i.claim, Backend::Brute, primal, dual)?;
            emit(&ReportFile::new(&i.model, &i.utility, &i.claim, &r), out)?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cfg = config(Cli::parse());
    let code = match run(&cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
