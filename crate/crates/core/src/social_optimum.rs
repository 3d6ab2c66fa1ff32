//! Expected system-cost minimization over joint investment and operation,
//! and marginal-cost prices from its power-balance duals.

use serde::{Deserialize, Serialize};

use crate::assembly::{self, Index, InvestorVars};
use crate::error::{Error, Result};
use crate::model::{
    investment_cost, mcp_price, operation_cost, system_cost, ChargeOverlap, DecisionProfile, Hourly, MarketInstance,
    Uplift,
};
use crate::qp::{QpSettings, QpSolution, QuadraticProgram, Relation, Residuals, SolveStatus};

/// Decisions, cost and shadow prices of the social optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoResult {
    pub profile: DecisionProfile,
    /// Expected daily system cost, $.
    pub system_cost: f64,
    /// Probability-weighted power-balance duals.
    pub balance_duals: Hourly,
    /// Marginal-cost prices, $/MWh.
    pub prices: Hourly,
    /// Duals of `p_cv ≥ 0` and `p_cv ≤ γ p̄`.
    pub cer_lower_duals: Hourly,
    pub cer_upper_duals: Hourly,
    /// Duals of `p_sh ≥ 0`.
    pub shed_lower_duals: Hourly,
    pub simultaneous_charge: Vec<ChargeOverlap>,
    pub residuals: Residuals,
}

pub(crate) struct SoLayout {
    pub investors: Vec<InvestorVars>,
    pub cer: Index,
    pub shed: Index,
    pub balance: Index,
}

pub(crate) fn assemble(inst: &MarketInstance) -> Result<(QuadraticProgram, SoLayout)> {
    inst.validate()?;
    let sc = &inst.scenarios;
    let mut qp = QuadraticProgram::new();
    let investors: Vec<InvestorVars> = inst
        .investors
        .iter()
        .map(|spec| assembly::add_investor(&mut qp, spec, sc, None))
        .collect();
    let cap = inst.system.remaining_capacity();
    let cer = assembly::add_cer(&mut qp, sc, |_, _| cap, |w, t| sc[w].slope[t], |w, t| sc[w].intercept[t]);
    let shed = assembly::add_shed(&mut qp, sc, |w, t| sc[w].demand[t], inst.system.voll);
    let mut balance = Vec::with_capacity(sc.len());
    for (w, s) in sc.iter().enumerate() {
        let mut rows = Vec::with_capacity(s.hours());
        for t in 0..s.hours() {
            let mut coeffs: Vec<(usize, f64)> = investors.iter().flat_map(|v| v.net_terms(w, t)).collect();
            coeffs.push((cer[w][t], 1.0));
            coeffs.push((shed[w][t], 1.0));
            rows.push(qp.add_row("balance", coeffs, Relation::Eq, s.demand[t]));
        }
        balance.push(rows);
    }
    Ok((
        qp,
        SoLayout {
            investors,
            cer,
            shed,
            balance,
        },
    ))
}

/// Assemble the system-cost program: one power-balance equality per
/// scenario and hour, conventional output in `[0, γ p̄]` and lost load in
/// `[0, D]`.
pub fn build_so(inst: &MarketInstance) -> Result<QuadraticProgram> {
    assemble(inst).map(|(qp, _)| qp)
}

pub(crate) fn require_optimal(sol: &QpSolution) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        s => Err(Error::Solver(s)),
    }
}

pub fn solve_so(inst: &MarketInstance) -> Result<SoResult> {
    solve_so_with(inst, &QpSettings::default())
}

pub fn solve_so_with(inst: &MarketInstance, settings: &QpSettings) -> Result<SoResult> {
    let (qp, layout) = assemble(inst)?;
    let sol = assembly::solve_selected(&qp, &layout.investors, settings)?;
    require_optimal(&sol)?;
    Ok(extract(inst, &layout, &sol))
}

fn extract(inst: &MarketInstance, layout: &SoLayout, sol: &QpSolution) -> SoResult {
    let x = &sol.x;
    let sc = &inst.scenarios;
    let investors = inst
        .investors
        .iter()
        .zip(&layout.investors)
        .map(|(spec, vars)| vars.extract(spec.id(), x))
        .collect::<Vec<_>>();
    let cap = inst.system.remaining_capacity();
    let cer_output: Hourly = assembly::read(&layout.cer, x)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.clamp(0.0, cap)).collect())
        .collect();
    let shed = assembly::read_clamped(&layout.shed, x);
    let profile = DecisionProfile {
        grid: inst.grid(),
        investors,
        cer_output,
        shed,
    };
    let dual_at = |idx: &Index, v: &[f64]| -> Hourly { idx.iter().map(|r| r.iter().map(|&j| v[j]).collect()).collect() };
    // The balance row is written as supply = demand, so λ = −y.
    let balance_duals: Hourly = layout
        .balance
        .iter()
        .map(|r| r.iter().map(|&k| -sol.row_duals[k]).collect())
        .collect();
    let prices = balance_duals
        .iter()
        .zip(sc.iter())
        .map(|(r, s)| r.iter().map(|l| mcp_price(*l, s.probability).expect("validated probability")).collect())
        .collect();
    SoResult {
        system_cost: system_cost(inst, &profile),
        simultaneous_charge: assembly::simultaneous_charge(&profile.investors),
        profile,
        balance_duals,
        prices,
        cer_lower_duals: dual_at(&layout.cer, &sol.lower_duals),
        cer_upper_duals: dual_at(&layout.cer, &sol.upper_duals),
        shed_lower_duals: dual_at(&layout.shed, &sol.lower_duals),
        residuals: sol.residuals,
    }
}

/// Copy of `inst` with every conventional intercept raised by the uplift.
pub fn apply_uplift(inst: &MarketInstance, uplift: &Uplift) -> Result<MarketInstance> {
    let grid = inst.grid();
    let mut out = inst.clone();
    let mut scenarios = out.scenarios.clone().into_inner();
    for (w, s) in scenarios.iter_mut().enumerate() {
        for t in 0..grid.hours_per_day {
            let d = match uplift {
                Uplift::Uniform(v) => *v,
                Uplift::Hourly(h) => *h
                    .get(w)
                    .and_then(|r| r.get(t))
                    .ok_or_else(|| Error::InvalidParameter("uplift table does not match the hour grid".into()))?,
            };
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::InvalidParameter(format!("uplift {d} must be non-negative")));
            }
            s.intercept[t] += d;
        }
    }
    out.scenarios = crate::model::ScenarioSet::new(scenarios)?;
    Ok(out)
}

/// Per-investor profit at marginal-cost prices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroProfitCheck {
    pub profits: Vec<(String, f64)>,
    /// Largest allowed `|profit|`, `1e-4 ×` system cost.
    pub tolerance: f64,
    pub pass: bool,
}

/// Profit `E Σ π·A − capital − operation` for every investor at the
/// optimum's prices; at the social optimum each should be zero.
pub fn zero_profit_check(so: &SoResult, inst: &MarketInstance) -> ZeroProfitCheck {
    let profits: Vec<(String, f64)> = inst
        .investors
        .iter()
        .zip(&so.profile.investors)
        .map(|(spec, dec)| {
            let revenue: f64 = inst
                .scenarios
                .iter()
                .enumerate()
                .map(|(w, s)| s.probability * (0..s.hours()).map(|t| so.prices[w][t] * dec.net_supply(w, t)).sum::<f64>())
                .sum();
            let profit = revenue - investment_cost(spec, dec) - operation_cost(spec, dec, &inst.scenarios);
            (dec.id.clone(), profit)
        })
        .collect();
    let tolerance = 1e-4 * so.system_cost.abs();
    let pass = profits.iter().all(|(_, p)| p.abs() <= tolerance);
    ZeroProfitCheck {
        profits,
        tolerance,
        pass,
    }
}
