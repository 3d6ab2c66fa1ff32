use gridmech::equilibrium::EquilibriumReport;
use gridmech::model::{capped_price, investment_cost, operation_cost, system_cost, MarketInstance, MechanismKind};
use gridmech::social_optimum::solve_so;
use gridmech::verification::{certify, mcp_withholding_check, recompute_profits, NashCertificate};
use gridmech::Result;
use serde::Serialize;

/// Relative tolerance for reproducing reported figures from the profile.
const RECOMPUTE_TOL: f64 = 1e-6;

/// Feasibility tolerance, relative to demand.
const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub mechanism: MechanismKind,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<NashCertificate>,
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Re-derive everything a report claims from the instance and its profile,
/// then certify the profile with an independent best-response search.
pub fn verify_report(inst: &MarketInstance, report: &EquilibriumReport, tol: f64) -> Result<Verdict> {
    let mut checks = Vec::new();
    let kind = report.mechanism.kind;
    let inst = inst.with_mechanism(report.mechanism.clone())?;

    let violations = report.profile.violations(&inst, FEASIBILITY_TOL);
    checks.push(check("feasible", violations.is_empty(), violations.join("; ")));
    if !violations.is_empty() {
        return Ok(finish(kind, checks, None));
    }

    let ids_match = report.profits.len() == inst.investors.len()
        && report.profits.iter().zip(&inst.investors).all(|(p, s)| p.id == s.id());
    checks.push(check("investors", ids_match, format!("{} reported", report.profits.len())));
    if !ids_match {
        return Ok(finish(kind, checks, None));
    }

    let cost = system_cost(&inst, &report.profile);
    checks.push(check(
        "system_cost",
        close(cost, report.system_cost, RECOMPUTE_TOL),
        format!("recomputed {cost}, reported {}", report.system_cost),
    ));

    let profits = if kind.has_penalty() {
        let worst = price_gap(&inst, report)?;
        checks.push(check("prices", worst <= RECOMPUTE_TOL, format!("largest relative price gap {worst:e}")));
        recompute_profits(&inst, &report.mechanism, &report.profile)?
    } else {
        market_profits(&inst, report)
    };
    let worst = report
        .profits
        .iter()
        .zip(&profits)
        .filter(|(r, p)| !close(r.profit, **p, RECOMPUTE_TOL))
        .map(|(r, p)| format!("{}: reported {}, recomputed {p}", r.id, r.profit))
        .collect::<Vec<_>>();
    checks.push(check("profits", worst.is_empty(), worst.join("; ")));

    let certificate = match (kind, &report.withholding) {
        (MechanismKind::Mcp, Some(w)) => Some(mcp_withholding_check(&inst, &report.profile, w.epsilon_bound, tol)?),
        (MechanismKind::Mcp, None) => {
            let so = solve_so(&inst)?;
            checks.push(check(
                "social_optimum",
                close(so.system_cost, report.system_cost, tol),
                format!("optimal cost {}, reported {}", so.system_cost, report.system_cost),
            ));
            let allowed = 1e-4 * so.system_cost.abs().max(1.0);
            let largest = profits.iter().map(|p| p.abs()).fold(0.0, f64::max);
            checks.push(check(
                "zero_profit",
                largest <= allowed,
                format!("largest |profit| {largest}, allowed {allowed}"),
            ));
            None
        }
        _ => Some(certify(&inst, &report.mechanism, &report.profile, tol)?),
    };
    if let Some(c) = &certificate {
        checks.push(check("nash", c.pass, format!("largest gain {}", c.epsilon)));
    }
    Ok(finish(kind, checks, certificate))
}

fn finish(mechanism: MechanismKind, checks: Vec<Check>, certificate: Option<NashCertificate>) -> Verdict {
    Verdict {
        mechanism,
        pass: checks.iter().all(|c| c.pass),
        checks,
        certificate,
    }
}

fn price_gap(inst: &MarketInstance, report: &EquilibriumReport) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (w, s) in inst.scenarios.iter().enumerate() {
        for t in 0..s.hours() {
            let supply = report.profile.total_supply(w, t, true).min(s.demand[t]);
            let price = capped_price(supply, s, t, &inst.system, inst.uplift(w, t))?;
            let reported = report.prices.get(w).and_then(|r| r.get(t)).copied().unwrap_or(f64::NAN);
            let gap = (price - reported).abs() / price.abs().max(1.0);
            worst = if gap.is_nan() { f64::INFINITY } else { worst.max(gap) };
        }
    }
    Ok(worst)
}

/// Profits at the reported prices: `E Σ π·A − capital − operation`.
fn market_profits(inst: &MarketInstance, report: &EquilibriumReport) -> Vec<f64> {
    inst.investors
        .iter()
        .zip(&report.profile.investors)
        .map(|(spec, d)| {
            let revenue: f64 = inst
                .scenarios
                .iter()
                .enumerate()
                .map(|(w, s)| {
                    s.probability
                        * (0..s.hours())
                            .map(|t| report.prices.get(w).and_then(|r| r.get(t)).copied().unwrap_or(f64::NAN) * d.net_supply(w, t))
                            .sum::<f64>()
                })
                .sum();
            revenue - investment_cost(spec, d) - operation_cost(spec, d, &inst.scenarios)
        })
        .collect()
}
