//! One test per acceptance criterion. Each prints a `PASS` or `FAIL` line
//! straight to stdout, so the lines show up even under output capture.

mod common;

use std::io::Write;
use std::time::Instant;

use common::{base_seed, oracle_agreement, perturbations_rejected, small_shape, solved, BIN1_U};
use dualmax_core::dual_domain::{build_dual_cone, pairing};
use dualmax_core::duality::{solve, verify_relations, Backend, SolveError, SolveOptions, SolveReport, AE_FLOOR};
use dualmax_core::fixtures::{
    arbitrage, bin1, bin2, bin3, capped_linear, crra, kink, linear_middle, log_utility, piecewise_linear,
    power_utility,
};
use dualmax_core::instances::{random_claim, random_model, rng, TreeShape};
use dualmax_core::market::{cone_contains, ClaimVector, Model};
use dualmax_core::oracle::{brute_conjugate, brute_dual, brute_primal, brute_superrep_price, conjugate_grid, GridSpec};
use dualmax_core::superrep::{decompose_claim, superrep_price, superreplicable_dual, superreplicable_primal};
use dualmax_core::utility::PiecewiseUtility;
use rand::Rng;

type Outcome = Result<String, String>;

fn criterion(n: usize, name: &str, body: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = body();
    let secs = start.elapsed().as_secs_f64();
    let line = match &outcome {
        Ok(detail) => format!("PASS criterion {n}: {name}: {detail} [{secs:.1}s]\n"),
        Err(why) => format!("FAIL criterion {n}: {name}: {why} [{secs:.1}s]\n"),
    };
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    assert!(outcome.is_ok(), "{line}");
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

struct Case {
    label: String,
    model: Model,
    u: PiecewiseUtility,
    b: ClaimVector,
    report: SolveReport,
}

/// The fixtures and the seeded random population of the duality criteria.
fn duality_population() -> Result<Vec<Case>, String> {
    let opts = SolveOptions::default();
    let (m3, b3) = bin3();
    let fixtures = [
        ("BIN1", bin1(), ClaimVector::zeros(2)),
        ("BIN2", bin2(), ClaimVector::zeros(2)),
        ("BIN3", m3, b3),
    ];
    let mut out = Vec::new();
    for (label, model, b) in fixtures {
        let u = log_utility();
        let report = solve(&model, &u, &b, 1.0, &opts, false).map_err(|e| format!("{label}: {e}"))?;
        out.push(Case {
            label: label.into(),
            model,
            u,
            b,
            report,
        });
    }
    let base = base_seed();
    for k in 0..50 {
        let s = solved(base + k, TreeShape::default()).map_err(|(seed, e)| format!("seed {seed}: {e}"))?;
        out.push(Case {
            label: format!("seed {} ({})", s.inst.seed, s.inst.utility_name),
            model: s.inst.model,
            u: s.inst.utility,
            b: s.inst.endowment,
            report: s.report,
        });
    }
    Ok(out)
}

#[test]
fn criterion_1_strong_duality() {
    criterion(1, "strong duality", || {
        let cases = duality_population()?;
        let mut worst = 0.0f64;
        for c in &cases {
            let gap = (c.report.u_value - c.report.w_value).abs();
            ensure(gap <= 1e-6, || format!("{}: gap {gap:e}", c.label))?;
            worst = worst.max(gap);
        }
        // piecewise-linear utilities go through the exact LP backend
        let mut worst_lp = 0.0f64;
        let mut lp_cases = 0;
        let opts = SolveOptions::default();
        let (m3, b3) = bin3();
        let mut models = vec![(bin1(), ClaimVector::zeros(2)), (bin2(), ClaimVector::zeros(2)), (m3, b3)];
        let mut r = rng(base_seed() ^ 0x1b);
        for _ in 0..20 {
            let m = random_model(&mut r, TreeShape::default());
            let b = random_claim(&mut r, m.tree.num_leaves(), -1.0, 1.0);
            models.push((m, b));
        }
        for (m, b) in &models {
            let dc = build_dual_cone(&m.tree, &m.cone);
            let bound = dualmax_core::dual_domain::endowment_bound(&dc, &m.tree, b).map_err(|e| e.to_string())?;
            let x = bound + r.gen_range(0.1..2.0);
            let rep = solve(m, &piecewise_linear(), b, x, &opts, true).map_err(|e| e.to_string())?;
            ensure(rep.backend == Backend::Lp, || "piecewise-linear utility off the LP backend".into())?;
            let gap = (rep.u_value - rep.w_value).abs();
            ensure(gap <= 1e-9, || format!("piecewise-linear gap {gap:e}"))?;
            worst_lp = worst_lp.max(gap);
            lp_cases += 1;
        }
        Ok(format!(
            "{} instances, max |u - w| = {worst:.2e}; {lp_cases} piecewise-linear, max {worst_lp:.2e}",
            cases.len()
        ))
    });
}

#[test]
fn criterion_2_optimality_relations() {
    criterion(2, "optimality relations and perturbations", || {
        let cases = duality_population()?;
        let mut worst_subdiff = 0.0f64;
        for c in &cases {
            let cert = verify_relations(&c.report, &c.u, &c.b, 1e-6).map_err(|e| format!("{}: {e}", c.label))?;
            worst_subdiff = worst_subdiff.max(cert.subdiff_violation);
            let rejected = perturbations_rejected(&c.model, &c.u, &c.b, &c.report, 1e-3, 1e-6);
            for (what, ok) in ["X*", "nu*", "x"].iter().zip(rejected) {
                ensure(ok, || format!("{}: perturbation in {what} accepted", c.label))?;
            }
        }
        Ok(format!(
            "{} instances certified at 1e-6 (max subdifferential residual {worst_subdiff:.2e}), 3 perturbations rejected each",
            cases.len()
        ))
    });
}

struct ClaimCase {
    model: Model,
    claim: ClaimVector,
    price: f64,
}

/// 200 seeded (model, claim) pairs. Every fourth claim is shifted onto its
/// own price so the boundary case is represented.
fn claim_population() -> Result<Vec<ClaimCase>, String> {
    let mut r = rng(base_seed() ^ 0x3a);
    let mut out = Vec::new();
    for k in 0..200 {
        let model = random_model(&mut r, TreeShape::default());
        let raw = random_claim(&mut r, model.tree.num_leaves(), -1.0, 1.0);
        let dc = build_dual_cone(&model.tree, &model.cone);
        let p = superrep_price(&dc, &model.tree, &raw).map_err(|e| e.to_string())?;
        let shift = if k % 4 == 0 { 0.0 } else { r.gen_range(-0.5..0.5) };
        let claim = ClaimVector(raw.values().iter().map(|v| v - p + shift).collect());
        let price = superrep_price(&dc, &model.tree, &claim).map_err(|e| e.to_string())?;
        out.push(ClaimCase { model, claim, price });
    }
    Ok(out)
}

#[test]
fn criterion_3_superreplication_equivalence() {
    criterion(3, "primal and polar superreplication tests agree", || {
        let cases = claim_population()?;
        let mut feasible = 0;
        for (k, c) in cases.iter().enumerate() {
            let tree = &c.model.tree;
            let dc = build_dual_cone(tree, &c.model.cone);
            let primal = superreplicable_primal(tree, &c.model.cone, &c.claim).map_err(|e| e.to_string())?;
            let dual = superreplicable_dual(&dc, tree, &c.claim).map_err(|e| e.to_string())?;
            ensure(primal.feasible == dual, || format!("pair {k}: primal {} vs polar {dual}", primal.feasible))?;
            feasible += usize::from(dual);
            let shifted = |s: f64| ClaimVector(c.claim.values().iter().map(|v| v - c.price + s).collect());
            let below = superreplicable_primal(tree, &c.model.cone, &shifted(-1e-6)).map_err(|e| e.to_string())?;
            ensure(below.feasible, || format!("pair {k}: R - price - 1e-6 not superreplicable"))?;
            let above = superreplicable_primal(tree, &c.model.cone, &shifted(1e-4)).map_err(|e| e.to_string())?;
            ensure(!above.feasible, || format!("pair {k}: R - price + 1e-4 superreplicable"))?;
        }
        Ok(format!(
            "{} pairs ({feasible} superreplicable), price brackets hold on all",
            cases.len()
        ))
    });
}

#[test]
fn criterion_4_optional_decomposition() {
    criterion(4, "optional decomposition", || {
        let cases = claim_population()?;
        let mut worst_identity = 0.0f64;
        let mut worst_price = 0.0f64;
        for (k, c) in cases.iter().enumerate() {
            let tree = &c.model.tree;
            let dc = build_dual_cone(tree, &c.model.cone);
            let d = decompose_claim(&dc, tree, &c.model.cone, &c.claim).map_err(|e| format!("pair {k}: {e}"))?;
            let identity = d.identity_residual(tree).map_err(|e| e.to_string())?;
            ensure(identity <= 1e-8, || format!("pair {k}: identity residual {identity:e}"))?;
            worst_identity = worst_identity.max(identity);
            for n in tree.nodes() {
                if let Some(p) = n.parent {
                    ensure(d.c[n.id] >= d.c[p] - 1e-12, || {
                        format!("pair {k}: C drops from {} to {} at node {}", d.c[p], d.c[n.id], n.id)
                    })?;
                }
            }
            for v in tree.nonterminal() {
                let h = d.h.at(v).ok_or_else(|| format!("pair {k}: no hedge at node {v}"))?;
                let inside = cone_contains(&c.model.cone, h).map_err(|e| e.to_string())?;
                ensure(inside, || format!("pair {k}: hedge {h:?} outside the cone at node {v}"))?;
            }
            let gap = (d.initial_value() - c.price).abs();
            ensure(gap <= 1e-8, || format!("pair {k}: V0 {} vs price {}", d.initial_value(), c.price))?;
            worst_price = worst_price.max(gap);
        }
        Ok(format!(
            "{} pairs, max identity residual {worst_identity:.2e}, max |V0 - price| {worst_price:.2e}",
            cases.len()
        ))
    });
}

fn anchor(name: &str, value: f64, expected: f64, tol: f64) -> Result<(), String> {
    ensure((value - expected).abs() <= tol, || format!("{name}: {value} vs {expected}"))
}

fn confirmed(name: &str, estimate: f64, bound: f64, expected: f64) -> Result<(), String> {
    ensure((estimate - expected).abs() <= bound + 1e-6, || {
        format!("{name}: oracle {estimate} (bound {bound:e}) vs {expected}")
    })
}

#[test]
fn criterion_5_closed_form_anchors() {
    criterion(5, "closed-form anchors", || {
        let opts = SolveOptions::default();
        let log = log_utility();
        let z = ClaimVector::zeros(2);
        let grid = GridSpec {
            passes: 6,
            ..GridSpec::uniform(-2.0, 2.0, 4001)
        };
        let dual_grid = GridSpec {
            passes: 6,
            ..GridSpec::uniform(0.0, 3.0, 2001)
        };
        let err = |e: SolveError| e.to_string();

        let m = bin1();
        let expected = 0.5 * (9.0f64 / 8.0).ln();
        anchor("BIN1 constant", BIN1_U, expected, 1e-15)?;
        let r = solve(&m, &log, &z, 1.0, &opts, false).map_err(err)?;
        anchor("BIN1 u(1)", r.u_value, expected, 1e-6)?;
        let p = brute_primal(&m.tree, &m.cone, &log, &z, 1.0, &grid).map_err(|e| e.to_string())?;
        confirmed("BIN1 primal", p.estimate.value, p.estimate.error_bound, expected)?;
        let dc = build_dual_cone(&m.tree, &m.cone);
        let d = brute_dual(&m.tree, &dc, &log, &z, 1.0, &dual_grid).map_err(|e| e.to_string())?;
        confirmed("BIN1 dual", d.estimate.value, d.estimate.error_bound, expected)?;

        let m = bin2();
        let r = solve(&m, &log, &z, 1.0, &opts, false).map_err(err)?;
        anchor("BIN2 u(1)", r.u_value, 0.0, 1e-6)?;
        let p = brute_primal(&m.tree, &m.cone, &log, &z, 1.0, &grid).map_err(|e| e.to_string())?;
        confirmed("BIN2 primal", p.estimate.value, p.estimate.error_bound, 0.0)?;
        let dc = build_dual_cone(&m.tree, &m.cone);
        let d = brute_dual(&m.tree, &dc, &log, &z, 1.0, &dual_grid).map_err(|e| e.to_string())?;
        confirmed("BIN2 dual", d.estimate.value, d.estimate.error_bound, 0.0)?;

        let (m, b) = bin3();
        let expected = -0.5 * 2f64.ln();
        let r = solve(&m, &log, &b, 1.0, &opts, false).map_err(err)?;
        anchor("BIN3 u(1)", r.u_value, expected, 1e-6)?;
        let dens = r.nu_star.densities();
        anchor("BIN3 density 1", dens[0], 1.0, 1e-6)?;
        anchor("BIN3 density 2", dens[1], 2.0, 1e-6)?;
        let budget = pairing(&r.nu_star, &r.x_star).map_err(|e| e.to_string())?;
        anchor("BIN3 pairing", budget, 1.5, 1e-6)?;
        anchor("BIN3 x·nu(Omega)", r.x * r.nu_star.mass(), 1.5, 1e-6)?;
        let p = brute_primal(&m.tree, &m.cone, &log, &b, 1.0, &grid).map_err(|e| e.to_string())?;
        confirmed("BIN3 primal", p.estimate.value, p.estimate.error_bound, expected)?;
        let dc = build_dual_cone(&m.tree, &m.cone);
        let d = brute_dual(&m.tree, &dc, &log, &b, 1.0, &dual_grid).map_err(|e| e.to_string())?;
        confirmed("BIN3 dual", d.estimate.value, d.estimate.error_bound, expected)?;
        let od = d.measure.densities();
        ensure((od[0] - 1.0).abs() <= 1e-3 && (od[1] - 2.0).abs() <= 1e-3, || {
            format!("BIN3 oracle densities {od:?}")
        })?;

        for (label, m, claim, expected) in [
            ("BIN1 call", bin1(), ClaimVector(vec![1.0, 0.0]), 1.0 / 3.0),
            ("BIN2 call", bin2(), ClaimVector(vec![0.1, 0.0]), 1.0 / 12.0),
        ] {
            let dc = build_dual_cone(&m.tree, &m.cone);
            let price = superrep_price(&dc, &m.tree, &claim).map_err(|e| e.to_string())?;
            anchor(label, price, expected, 1e-6)?;
            let (e, _) = brute_superrep_price(&m.tree, &m.cone, &claim, &grid).map_err(|e| e.to_string())?;
            confirmed(label, e.value, e.error_bound, expected)?;
        }
        Ok("BIN1, BIN2, BIN3 values, BIN3 densities and budget, two call prices; all oracle-confirmed".into())
    });
}

#[test]
fn criterion_6_utility_calculus() {
    criterion(6, "Fenchel-Young and asymptotic elasticity", || {
        let mut r = rng(base_seed() ^ 0xf6);
        let mut utilities = vec![log_utility(), kink(), linear_middle(), power_utility(2.0, 0.5)];
        utilities.extend([0.1, 0.3, 0.5, 0.7, 0.9].map(crra));
        let mut worst_equality = 0.0f64;
        let mut equalities = 0;
        for k in 0..10_000 {
            let u = &utilities[k % utilities.len()];
            let x: f64 = r.gen_range(-6.0f64..6.0).exp();
            let y: f64 = r.gen_range(-6.0f64..6.0).exp();
            let uy = u.conjugate(y).map_err(|e| e.to_string())?;
            let ux = u.value(x);
            let slack = uy + x * y - ux;
            ensure(slack >= -1e-10 * (1.0 + ux.abs()), || {
                format!("U({x}) = {ux} exceeds Ũ({y}) + xy by {:e}", -slack)
            })?;
            // equality exactly on the subdifferential: y ∈ ∂U(x) at x, and
            // the conjugate's argmax at y
            let sub = u.subdiff(x).map_err(|e| e.to_string())?;
            let on = if sub.hi.is_finite() { 0.5 * (sub.lo + sub.hi) } else { sub.lo };
            let eq = if on > 0.0 {
                u.conjugate(on).map_err(|e| e.to_string())? + x * on - ux
            } else {
                0.0
            };
            let arg = u.conjugate_argmax(y).map_err(|e| e.to_string())?;
            let at = arg.lo.max(f64::MIN_POSITIVE);
            let eq2 = uy + at * y - u.value(at);
            for e in [eq, eq2] {
                ensure(e.abs() <= 1e-8 * (1.0 + uy.abs().max(ux.abs())), || {
                    format!("equality case off by {e:e} at x = {x}, y = {y}")
                })?;
                worst_equality = worst_equality.max(e.abs());
            }
            equalities += 2;
            if sub.contains(y, 0.0) {
                ensure(slack.abs() <= 1e-8 * (1.0 + ux.abs()), || {
                    format!("y = {y} in ∂U({x}) but slack {slack:e}")
                })?;
            }
        }
        let mut worst_ae = 0.0f64;
        for p in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
            let ae = crra(p).asymptotic_elasticity(AE_FLOOR);
            let closed = p / (1.0 - p);
            let e = (ae.numeric - closed).abs();
            ensure(e <= 1e-3, || format!("AE numeric {} vs {closed} at p = {p}", ae.numeric))?;
            worst_ae = worst_ae.max(e);
        }
        let ae = log_utility().asymptotic_elasticity(AE_FLOOR);
        ensure(ae.numeric.abs() <= 1e-3, || format!("AE numeric {} for log", ae.numeric))?;
        worst_ae = worst_ae.max(ae.numeric.abs());
        Ok(format!(
            "10000 pairs, {equalities} equality cases (max {worst_equality:.2e}); AE max error {worst_ae:.2e}"
        ))
    });
}

#[test]
fn criterion_7_oracle_equivalence() {
    criterion(7, "oracle equivalence", || {
        let opts = SolveOptions::default();
        let (m3, b3) = bin3();
        let fixtures = [
            ("BIN1", bin1(), log_utility(), ClaimVector::zeros(2)),
            ("BIN1 kink", bin1(), kink(), ClaimVector::zeros(2)),
            ("BIN2", bin2(), log_utility(), ClaimVector::zeros(2)),
            ("BIN3", m3, log_utility(), b3),
        ];
        let mut worst = f64::NEG_INFINITY;
        for (label, m, u, b) in &fixtures {
            let r = solve(m, u, b, 1.0, &opts, false).map_err(|e| format!("{label}: {e}"))?;
            let a = oracle_agreement(m, u, b, 1.0, &r).map_err(|e| format!("{label}: {e}"))?;
            let e = a.excess(r.u_value, r.w_value);
            ensure(e <= 1e-6, || format!("{label}: excess {e:e}"))?;
            worst = worst.max(e);
        }
        let mut conjugates = 0;
        for u in [log_utility(), kink(), linear_middle(), crra(0.5)] {
            for y in [0.05, 0.5, 1.0, 2.0, 10.0] {
                let g = brute_conjugate(&u, y, &conjugate_grid()).map_err(|e| e.to_string())?;
                let exact = u.conjugate(y).map_err(|e| e.to_string())?;
                ensure((g.value - exact).abs() <= 1e-6, || format!("conjugate at {y}: {} vs {exact}", g.value))?;
                let iv = u.conjugate_argmax(y).map_err(|e| e.to_string())?;
                ensure(g.argmax_lo <= iv.lo * (1.0 + 1e-9) + 1e-12 && g.argmax_hi >= iv.hi.min(1e9) * (1.0 - 1e-9), || {
                    format!("conjugate argmax at {y}: [{}, {}] misses [{}, {}]", g.argmax_lo, g.argmax_hi, iv.lo, iv.hi)
                })?;
                conjugates += 1;
            }
        }
        let base = base_seed();
        for k in 0..50 {
            let s = solved(base + k, small_shape()).map_err(|(seed, e)| format!("seed {seed}: {e}"))?;
            let a = oracle_agreement(&s.inst.model, &s.inst.utility, &s.inst.endowment, s.x, &s.report)
                .map_err(|e| format!("seed {}: {e}", s.inst.seed))?;
            let e = a.excess(s.report.u_value, s.report.w_value);
            ensure(e <= 1e-6, || format!("seed {}: excess {e:e}", s.inst.seed))?;
            worst = worst.max(e);
        }
        Ok(format!(
            "{} fixtures, {conjugates} conjugates, 50 random instances; max excess over the grid bound {worst:.2e}",
            fixtures.len()
        ))
    });
}

#[test]
fn criterion_8_assumption_gating() {
    criterion(8, "assumption gating", || {
        let opts = SolveOptions::default();
        let z = ClaimVector::zeros(2);
        match solve(&arbitrage(), &log_utility(), &z, 1.0, &opts, false) {
            Err(SolveError::AssumptionFailure(f)) if f.iter().any(|m| m.contains("supermartingale")) => {}
            other => return Err(format!("arbitrage fixture not refused: {other:?}")),
        }
        match solve(&bin1(), &capped_linear(), &z, 1.0, &opts, false) {
            Err(SolveError::AssumptionFailure(f)) if f.iter().any(|m| m.to_lowercase().contains("inada")) => {}
            other => return Err(format!("capped utility not refused: {other:?}")),
        }
        let call = ClaimVector(vec![1.0, 0.0]);
        let msg = match solve(&bin1(), &log_utility(), &call, 0.2, &opts, false) {
            Err(e @ SolveError::WealthBelowEndowmentBound { bound, .. }) => {
                ensure((bound - 1.0 / 3.0).abs() <= 1e-9, || format!("bound {bound}"))?;
                e.to_string()
            }
            other => return Err(format!("wealth below the bound not refused: {other:?}")),
        };
        ensure(msg.contains("0.333"), || format!("bound missing from {msg:?}"))?;
        Ok(format!("arbitrage and capped utility refused; {msg}"))
    });
}
