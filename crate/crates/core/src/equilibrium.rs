//! Investor equilibria under the capped-price mechanisms and marginal-cost
//! pricing.
//!
//! Under the penalty mechanisms the game is a potential game: an equilibrium
//! is found by minimizing system cost plus a quadratic term in each
//! investor's effective supply `Ã = A + p_sh`. The supply incentive removes
//! that term, so the incentive mechanism reproduces the social optimum, and
//! an uplift reproduces the social optimum of the instance with shifted
//! intercepts.

use serde::{Deserialize, Serialize};

use crate::assembly::{self, Index, InvestorVars};
use crate::error::{invalid, Error, Result};
use crate::model::{
    capped_price, investment_cost, operation_cost, system_cost, zeros, ChargeOverlap, DecisionProfile, Hourly,
    InvestorSpec, MarketInstance, MechanismKind, MechanismSpec, Uplift,
};
use crate::qp::{self, QpSettings, QpSolution, QuadraticProgram, Relation};
use crate::social_optimum::{apply_uplift, require_optimal, SoResult};

/// Weight of the lost-load split regularizer under the incentive mechanisms.
pub const SPLIT_REGULARIZER: f64 = 1e-6;

/// Marker recorded on reports whose equilibrium maximizes the potential.
pub const POTENTIAL_SELECTION: &str = "potential-maximizer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvestorProfit {
    pub id: String,
    pub profit: f64,
    /// Market revenue on effective supply, $/day.
    pub revenue: f64,
    pub investment_cost: f64,
    pub operation_cost: f64,
    /// Lost-load penalty paid, `VOLL × E Σ p_sh`.
    pub penalty: f64,
    /// Supply incentive received, `E Σ ½ a Ã²`.
    pub incentive: f64,
}

/// Gross transfers between investors and the operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CashFlows {
    pub penalty: f64,
    pub incentive: f64,
    /// Uplift component of energy payments on served demand.
    pub uplift: f64,
}

/// The potential objective at the solution, evaluated two ways.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialCheck {
    /// Sum of investor profits plus pairwise interaction terms.
    pub potential: f64,
    /// `C⁰ − system cost − E Σ ½ a Ã²`.
    pub expansion: f64,
    /// `C⁰ = E Σ (½ a D² + b D)`.
    pub constant: f64,
}

impl PotentialCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.potential - self.expansion).abs() / self.potential.abs().max(self.expansion.abs()).max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WithholdingInfo {
    /// Supply margin kept below the scarcity band.
    pub epsilon: Hourly,
    /// Smallest VOLL for which withholding is an equilibrium.
    pub threshold: Hourly,
    pub condition_holds: bool,
    /// `E Σ ε·VOLL`, the largest gain any deviation may achieve.
    pub epsilon_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub mechanism: MechanismSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium_selection: Option<String>,
    pub profile: DecisionProfile,
    pub prices: Hourly,
    pub profits: Vec<InvestorProfit>,
    /// True expected system cost at the original intercepts.
    pub system_cost: f64,
    /// Objective of the shifted program actually solved, when it differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shifted_objective: Option<f64>,
    pub cash_flows: CashFlows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withholding: Option<WithholdingInfo>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub simultaneous_charge: Vec<ChargeOverlap>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EquilibriumReport {
    pub fn total_profit(&self) -> f64 {
        self.profits.iter().map(|p| p.profit).sum()
    }
}

#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Perturbation {
    /// Relative error injected into every capital-cost coefficient.
    pub capital_cost: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EqOptions {
    pub settings: QpSettings,
    #[doc(hidden)]
    pub perturbation: Perturbation,
}

pub(crate) struct PotentialLayout {
    pub investors: Vec<InvestorVars>,
    pub cer: Index,
}

/// The potential program: system cost, with lost load carried by the
/// investors, plus `w·E Σ ½ a Ã²` per investor, where `w` is one without a
/// supply incentive and zero with it.
pub fn build_potential(inst: &MarketInstance, kind: MechanismKind) -> Result<QuadraticProgram> {
    assemble_potential(inst, kind, Perturbation::default()).map(|(qp, _)| qp)
}

pub(crate) fn assemble_potential(
    inst: &MarketInstance,
    kind: MechanismKind,
    perturbation: Perturbation,
) -> Result<(QuadraticProgram, PotentialLayout)> {
    if !kind.has_penalty() {
        return Err(Error::InvalidParameter("the potential program needs a penalty mechanism".into()));
    }
    let sc = &inst.scenarios;
    let mut qp = QuadraticProgram::new();
    let investors: Vec<InvestorVars> = inst
        .investors
        .iter()
        .map(|spec| assembly::add_investor(&mut qp, spec, sc, Some(inst.system.voll)))
        .collect();
    if perturbation.capital_cost != 0.0 {
        for j in 0..qp.num_vars() {
            if matches!(qp.block_name(qp.var_block[j]), "vre_capacity" | "es_energy" | "es_power") {
                qp.linear[j] *= 1.0 + perturbation.capital_cost;
            }
        }
    }
    let cap = inst.system.remaining_capacity();
    let cer = assembly::add_cer(&mut qp, sc, |_, _| cap, |w, t| sc[w].slope[t], |w, t| sc[w].intercept[t]);
    let weight = if kind.has_incentive() { 0.0 } else { 1.0 };
    let n = investors.len();
    for (w, s) in sc.iter().enumerate() {
        for t in 0..s.hours() {
            let mut coeffs: Vec<(usize, f64)> = investors.iter().flat_map(|v| v.effective_terms(w, t)).collect();
            coeffs.push((cer[w][t], 1.0));
            qp.add_row("balance", coeffs, Relation::Eq, s.demand[t]);
            if weight > 0.0 {
                for v in &investors {
                    qp.add_square(&v.effective_terms(w, t), weight * s.probability * s.slope[t]);
                }
            } else if n > 1 {
                let shares: Vec<usize> = investors.iter().map(|v| v.sh.as_ref().expect("penalty shares")[w][t]).collect();
                for i in 0..n {
                    let terms: Vec<(usize, f64)> = shares
                        .iter()
                        .enumerate()
                        .map(|(j, &sj)| (sj, if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64))
                        .collect();
                    qp.add_square(&terms, 2.0 * SPLIT_REGULARIZER * s.probability);
                }
            }
        }
    }
    Ok((qp, PotentialLayout { investors, cer }))
}

/// Solve the potential program of `kind` on `solve_inst`; prices and profits
/// are evaluated against `true_inst` with the given uplift.
pub(crate) fn potential_equilibrium(
    true_inst: &MarketInstance,
    solve_inst: &MarketInstance,
    mechanism: MechanismSpec,
    opts: &EqOptions,
) -> Result<(EquilibriumReport, QuadraticProgram, QpSolution)> {
    true_inst.validate()?;
    solve_inst.validate()?;
    let (qp, layout) = assemble_potential(solve_inst, mechanism.kind, opts.perturbation)?;
    let sol = assembly::solve_selected(&qp, &layout.investors, &opts.settings)?;
    require_optimal(&sol)?;
    let x = &sol.x;
    let investors: Vec<_> = true_inst
        .investors
        .iter()
        .zip(&layout.investors)
        .map(|(spec, v)| v.extract(spec.id(), x))
        .collect();
    let grid = true_inst.grid();
    let cap = true_inst.system.remaining_capacity();
    let cer_output: Hourly = assembly::read(&layout.cer, x)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.clamp(0.0, cap)).collect())
        .collect();
    let mut shed = zeros(grid.scenario_count, grid.hours_per_day);
    for (w, t) in grid.cells() {
        shed[w][t] = investors.iter().map(|d| d.lost_load_at(w, t)).sum();
    }
    let profile = DecisionProfile {
        grid,
        investors,
        cer_output,
        shed,
    };
    let uplift = |w: usize, t: usize| mechanism.uplift.at(w, t);
    let prices = capped_prices(true_inst, &profile, &uplift)?;
    let profits = penalty_profits(true_inst, &profile, &prices, mechanism.kind.has_incentive());
    let cash_flows = CashFlows {
        penalty: profits.iter().map(|p| p.penalty).sum(),
        incentive: profits.iter().map(|p| p.incentive).sum(),
        uplift: served_weighted(true_inst, &profile, &uplift),
    };
    let system_cost = system_cost(true_inst, &profile);
    let potential = (mechanism.kind == MechanismKind::P).then(|| potential_check(true_inst, &profile, &profits, system_cost));
    let shifted = (mechanism.kind == MechanismKind::Piu).then_some(sol.objective);
    let report = EquilibriumReport {
        mechanism,
        equilibrium_selection: Some(POTENTIAL_SELECTION.to_string()),
        simultaneous_charge: assembly::simultaneous_charge(&profile.investors),
        profile,
        prices,
        profits,
        system_cost,
        shifted_objective: shifted,
        cash_flows,
        potential,
        withholding: None,
        notes: vec!["equilibria outside the potential-maximizing subset are not searched".to_string()],
    };
    Ok((report, qp, sol))
}

fn capped_prices(inst: &MarketInstance, profile: &DecisionProfile, uplift: &dyn Fn(usize, usize) -> f64) -> Result<Hourly> {
    let grid = inst.grid();
    let mut prices = zeros(grid.scenario_count, grid.hours_per_day);
    for (w, t) in grid.cells() {
        let s = &inst.scenarios[w];
        let supply = profile.total_supply(w, t, true).min(s.demand[t]);
        prices[w][t] = capped_price(supply, s, t, &inst.system, uplift(w, t))?;
    }
    Ok(prices)
}

fn served_weighted(inst: &MarketInstance, profile: &DecisionProfile, f: &dyn Fn(usize, usize) -> f64) -> f64 {
    inst.scenarios
        .iter()
        .enumerate()
        .map(|(w, s)| s.probability * (0..s.hours()).map(|t| f(w, t) * (s.demand[t] - profile.shed[w][t])).sum::<f64>())
        .sum()
}

fn penalty_profits(inst: &MarketInstance, profile: &DecisionProfile, prices: &Hourly, incentive: bool) -> Vec<InvestorProfit> {
    inst.investors
        .iter()
        .zip(&profile.investors)
        .map(|(spec, d)| {
            let (mut revenue, mut penalty, mut bonus) = (0.0, 0.0, 0.0);
            for (w, s) in inst.scenarios.iter().enumerate() {
                for t in 0..s.hours() {
                    let eff = d.supply_with_lost_load(w, t);
                    revenue += s.probability * prices[w][t] * eff;
                    penalty += s.probability * inst.system.voll * d.lost_load_at(w, t);
                    if incentive {
                        bonus += s.probability * 0.5 * s.slope[t] * eff * eff;
                    }
                }
            }
            let inv = investment_cost(spec, d);
            let op = operation_cost(spec, d, &inst.scenarios);
            InvestorProfit {
                id: d.id.clone(),
                profit: revenue - inv - op - penalty + bonus,
                revenue,
                investment_cost: inv,
                operation_cost: op,
                penalty,
                incentive: bonus,
            }
        })
        .collect()
}

fn potential_check(inst: &MarketInstance, profile: &DecisionProfile, profits: &[InvestorProfit], cost: f64) -> PotentialCheck {
    let mut interaction = 0.0;
    let mut own = 0.0;
    let mut constant = 0.0;
    for (w, s) in inst.scenarios.iter().enumerate() {
        for t in 0..s.hours() {
            let eff: Vec<f64> = profile.investors.iter().map(|d| d.supply_with_lost_load(w, t)).collect();
            let total: f64 = eff.iter().sum();
            let squares: f64 = eff.iter().map(|e| e * e).sum();
            interaction += s.probability * s.slope[t] * 0.5 * (total * total - squares);
            own += s.probability * 0.5 * s.slope[t] * squares;
            constant += s.probability * (0.5 * s.slope[t] * s.demand[t] * s.demand[t] + s.intercept[t] * s.demand[t]);
        }
    }
    PotentialCheck {
        potential: profits.iter().map(|p| p.profit).sum::<f64>() + interaction,
        expansion: constant - cost - own,
        constant,
    }
}

/// Equilibrium under the capped price with lost-load penalty.
pub fn solve_p_equilibrium(inst: &MarketInstance) -> Result<EquilibriumReport> {
    solve_p_with(inst, &EqOptions::default())
}

pub fn solve_p_with(inst: &MarketInstance, opts: &EqOptions) -> Result<EquilibriumReport> {
    let spec = MechanismSpec::new(MechanismKind::P);
    let inst = inst.with_mechanism(spec.clone())?;
    potential_equilibrium(&inst, &inst, spec, opts).map(|r| r.0)
}

/// Equilibrium with penalty and supply incentive; decisions match the
/// social optimum.
pub fn solve_pi_equilibrium(inst: &MarketInstance) -> Result<EquilibriumReport> {
    solve_pi_with(inst, &EqOptions::default())
}

pub fn solve_pi_with(inst: &MarketInstance, opts: &EqOptions) -> Result<EquilibriumReport> {
    let spec = MechanismSpec::new(MechanismKind::Pi);
    let inst = inst.with_mechanism(spec.clone())?;
    potential_equilibrium(&inst, &inst, spec, opts).map(|r| r.0)
}

/// Equilibrium with penalty, incentive and uplift; decisions match the
/// social optimum of the instance with intercepts raised by the uplift.
/// The reported system cost uses the original intercepts.
pub fn solve_piu_equilibrium(inst: &MarketInstance, uplift: &Uplift) -> Result<EquilibriumReport> {
    solve_piu_with(inst, uplift, &EqOptions::default())
}

pub fn solve_piu_with(inst: &MarketInstance, uplift: &Uplift, opts: &EqOptions) -> Result<EquilibriumReport> {
    let spec = MechanismSpec::piu(uplift.clone());
    let true_inst = inst.with_mechanism(spec.clone())?;
    let mut shifted = apply_uplift(inst, uplift)?;
    shifted.mechanism = MechanismSpec::new(MechanismKind::Pi);
    potential_equilibrium(&true_inst, &shifted, spec, opts).map(|r| r.0)
}

/// Solve whichever mechanism the instance names. Marginal-cost pricing is
/// solved as the withholding equilibrium with the default margin.
pub fn solve_equilibrium(inst: &MarketInstance) -> Result<EquilibriumReport> {
    match inst.mechanism.kind {
        MechanismKind::Mcp => solve_mcp_withholding(inst, None),
        MechanismKind::P => solve_p_equilibrium(inst),
        MechanismKind::Pi => solve_pi_equilibrium(inst),
        MechanismKind::Piu => solve_piu_equilibrium(inst, &inst.mechanism.uplift),
    }
}

/// Smallest VOLL at which homogeneous renewable investors prefer to hold
/// supply just below the scarcity band.
pub fn withholding_threshold(inst: &MarketInstance, n: usize, w: usize, t: usize) -> f64 {
    let s = &inst.scenarios[w];
    let cap = inst.system.remaining_capacity();
    let band = s.demand[t] - cap;
    (1.0 + n as f64 * cap / band) * s.marginal_cost(t, cap)
}

/// The withholding outcome under marginal-cost pricing with homogeneous
/// renewable investors: total supply is held at `D − γ p̄ − ε` so the price
/// stays at VOLL.
///
/// `epsilon` defaults to `1e-3·(D − γ p̄)`.
pub fn solve_mcp_withholding(inst: &MarketInstance, epsilon: Option<&Hourly>) -> Result<EquilibriumReport> {
    let spec = MechanismSpec::new(MechanismKind::Mcp);
    let inst = inst.with_mechanism(spec.clone())?;
    let first = match inst.investors.first() {
        Some(InvestorSpec::Vre(v)) => v.clone(),
        Some(InvestorSpec::Es(_)) => return Err(Error::Unsupported("withholding needs renewable investors only".into())),
        None => return Err(Error::Unsupported("withholding needs at least one investor".into())),
    };
    for other in &inst.investors {
        match other {
            InvestorSpec::Vre(v)
                if v.capacity_cost == first.capacity_cost
                    && v.kappa == first.kappa
                    && v.capacity_factor_key == first.capacity_factor_key => {}
            _ => return Err(Error::Unsupported("withholding needs identical renewable investors".into())),
        }
    }
    let grid = inst.grid();
    let cap = inst.system.remaining_capacity();
    let n = inst.investors.len();
    let mut eps = zeros(grid.scenario_count, grid.hours_per_day);
    for (w, t) in grid.cells() {
        let band = inst.scenarios[w].demand[t] - cap;
        if band <= 0.0 {
            return Err(Error::Unsupported(format!(
                "demand does not exceed conventional capacity at ({w},{t}); no scarcity band"
            )));
        }
        let e = match epsilon {
            Some(h) => *h.get(w).and_then(|r| r.get(t)).ok_or_else(|| invalid("epsilon table does not match the hour grid"))?,
            None => 1e-3 * band,
        };
        if !(e > 0.0 && e < band) {
            return Err(Error::InvalidParameter(format!("epsilon {e} at ({w},{t}) must lie in (0, {band})")));
        }
        eps[w][t] = e;
    }

    let voll = inst.system.voll;
    let sc = &inst.scenarios;
    let mut qp = QuadraticProgram::new();
    let vars = assembly::add_investor(&mut qp, &InvestorSpec::Vre(first.clone()), sc, None);
    for (w, s) in sc.iter().enumerate() {
        for t in 0..s.hours() {
            let terms = vars.net_terms(w, t);
            for &(j, c) in &terms {
                qp.add_linear(j, -s.probability * voll * c);
            }
            qp.add_row("scarcity_band", terms, Relation::Le, s.demand[t] - cap - eps[w][t]);
        }
    }
    let sol = qp::solve(&qp, &QpSettings::default())?;
    require_optimal(&sol)?;
    let total = vars.extract(&first.id, &sol.x);
    let share = 1.0 / n as f64;
    let scale = |h: &Hourly| -> Hourly { h.iter().map(|r| r.iter().map(|v| v * share).collect()).collect() };
    let investors: Vec<_> = inst
        .investors
        .iter()
        .map(|spec| {
            let mut d = total.clone();
            d.id = spec.id().to_string();
            if let crate::model::ResourceDecision::Vre { capacity, market, curtailment } = &mut d.resource {
                *capacity *= share;
                *market = scale(market);
                *curtailment = scale(curtailment);
            }
            d
        })
        .collect();
    let mut cer_output = zeros(grid.scenario_count, grid.hours_per_day);
    let mut shed = zeros(grid.scenario_count, grid.hours_per_day);
    let mut threshold = zeros(grid.scenario_count, grid.hours_per_day);
    for (w, t) in grid.cells() {
        let supply = total.net_supply(w, t);
        let residual = (sc[w].demand[t] - supply).max(0.0);
        cer_output[w][t] = residual.min(cap);
        shed[w][t] = residual - cer_output[w][t];
        threshold[w][t] = withholding_threshold(&inst, n, w, t);
    }
    let profile = DecisionProfile {
        grid,
        investors,
        cer_output,
        shed,
    };
    let prices = vec![vec![voll; grid.hours_per_day]; grid.scenario_count];
    let profits = market_profits(&inst, &profile, &prices);
    let condition_holds = threshold.iter().flatten().all(|th| *th <= voll);
    let epsilon_bound = sc
        .iter()
        .enumerate()
        .map(|(w, s)| s.probability * eps[w].iter().map(|e| e * voll).sum::<f64>())
        .sum();
    let mut notes = vec!["only the symmetric withholding equilibrium is computed".to_string()];
    if !condition_holds {
        notes.push("not certified: VOLL is below the withholding threshold".to_string());
    }
    Ok(EquilibriumReport {
        mechanism: spec,
        equilibrium_selection: None,
        system_cost: system_cost(&inst, &profile),
        profile,
        prices,
        profits,
        shifted_objective: None,
        cash_flows: CashFlows::default(),
        potential: None,
        withholding: Some(WithholdingInfo {
            epsilon: eps,
            threshold,
            condition_holds,
            epsilon_bound,
        }),
        simultaneous_charge: Vec::new(),
        notes,
    })
}

fn market_profits(inst: &MarketInstance, profile: &DecisionProfile, prices: &Hourly) -> Vec<InvestorProfit> {
    inst.investors
        .iter()
        .zip(&profile.investors)
        .map(|(spec, d)| {
            let revenue: f64 = inst
                .scenarios
                .iter()
                .enumerate()
                .map(|(w, s)| s.probability * (0..s.hours()).map(|t| prices[w][t] * d.net_supply(w, t)).sum::<f64>())
                .sum();
            let inv = investment_cost(spec, d);
            let op = operation_cost(spec, d, &inst.scenarios);
            InvestorProfit {
                id: d.id.clone(),
                profit: revenue - inv - op,
                revenue,
                investment_cost: inv,
                operation_cost: op,
                penalty: 0.0,
                incentive: 0.0,
            }
        })
        .collect()
}

/// Marginal-cost pricing under perfect competition: the social optimum with
/// its shadow prices.
pub fn mcp_competitive(inst: &MarketInstance, so: &SoResult) -> Result<EquilibriumReport> {
    let inst = inst.with_mechanism(MechanismSpec::new(MechanismKind::Mcp))?;
    let profits = market_profits(&inst, &so.profile, &so.prices);
    Ok(EquilibriumReport {
        mechanism: inst.mechanism.clone(),
        equilibrium_selection: None,
        profile: so.profile.clone(),
        prices: so.prices.clone(),
        profits,
        system_cost: so.system_cost,
        shifted_objective: None,
        cash_flows: CashFlows::default(),
        potential: None,
        withholding: None,
        simultaneous_charge: so.simultaneous_charge.clone(),
        notes: vec!["perfect competition: investors take the shadow prices as given".to_string()],
    })
}

/// Duplicate investor `k` `counts[k]` times. Copies get ids `<id>-1`,
/// `<id>-2`, ...; a count of one keeps the original id.
pub fn replicate(inst: &MarketInstance, counts: &[usize]) -> Result<MarketInstance> {
    if counts.len() != inst.investors.len() {
        return Err(Error::InvalidParameter(format!(
            "{} replication counts given for {} investors",
            counts.len(),
            inst.investors.len()
        )));
    }
    let mut investors = Vec::new();
    for (spec, &n) in inst.investors.iter().zip(counts) {
        if n == 0 {
            return Err(Error::InvalidParameter(format!("replication count for `{}` must be at least 1", spec.id())));
        }
        if n == 1 {
            investors.push(spec.clone());
            continue;
        }
        for k in 1..=n {
            let mut copy = spec.clone();
            copy.set_id(format!("{}-{k}", spec.id()));
            investors.push(copy);
        }
    }
    let mut out = inst.clone();
    out.investors = investors;
    out.validate()?;
    Ok(out)
}

/// Replicate every investor `n` times.
pub fn replicate_uniform(inst: &MarketInstance, n: usize) -> Result<MarketInstance> {
    replicate(inst, &vec![n; inst.investors.len()])
}

/// Solve the potential program and return it with the raw solution, for
/// residual checks.
pub fn solve_with_program(
    inst: &MarketInstance,
    mechanism: &MechanismSpec,
    opts: &EqOptions,
) -> Result<(EquilibriumReport, QuadraticProgram, QpSolution)> {
    let true_inst = inst.with_mechanism(mechanism.clone())?;
    match mechanism.kind {
        MechanismKind::Mcp => Err(Error::Unsupported("marginal-cost pricing has no potential program".into())),
        MechanismKind::Piu => {
            let mut shifted = apply_uplift(inst, &mechanism.uplift)?;
            shifted.mechanism = MechanismSpec::new(MechanismKind::Pi);
            potential_equilibrium(&true_inst, &shifted, mechanism.clone(), opts)
        }
        _ => potential_equilibrium(&true_inst, &true_inst, mechanism.clone(), opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::social_optimum::solve_so;

    fn total_supply(r: &EquilibriumReport) -> f64 {
        r.profile.total_supply(0, 0, true)
    }

    #[test]
    fn penalty_monopoly() {
        let r = solve_p_equilibrium(&fixtures::toy_b()).unwrap();
        // Best response of a lone investor facing price 0.5(100 − A) + 10.
        let oracle = (0..=1000)
            .map(|k| k as f64 * 0.1)
            .max_by(|a, b| {
                let f = |x: f64| (0.5 * (100.0 - x) + 10.0) * x - 30.0 * x;
                f(*a).partial_cmp(&f(*b)).unwrap()
            })
            .unwrap();
        assert!((total_supply(&r) - 30.0).abs() < 1e-4);
        assert!((oracle - 30.0).abs() < 0.1);
        assert!((r.prices[0][0] - 45.0).abs() < 1e-4);
        assert!((r.profits[0].profit - 450.0).abs() < 1e-3);
        assert_eq!(r.equilibrium_selection.as_deref(), Some(POTENTIAL_SELECTION));
        let p = r.potential.unwrap();
        assert!(p.relative_gap() < 1e-8, "{p:?}");
        assert!((p.constant - 3500.0).abs() < 1e-9);
    }

    #[test]
    fn replicated_totals() {
        for (n, expected) in [(1, 30.0), (2, 40.0), (4, 48.0)] {
            let inst = replicate_uniform(&fixtures::toy_b(), n).unwrap();
            let r = solve_p_equilibrium(&inst).unwrap();
            assert!((total_supply(&r) - expected).abs() < 1e-4, "n={n}");
            for d in &r.profile.investors {
                assert!((d.net_supply(0, 0) - expected / n as f64).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn incentive_matches_optimum() {
        let inst = fixtures::toy_b();
        let r = solve_pi_equilibrium(&inst).unwrap();
        assert!((total_supply(&r) - 60.0).abs() < 1e-4);
        assert!((r.system_cost - 2600.0).abs() < 1e-3);
        assert!((r.profits[0].profit - 900.0).abs() < 1e-3);
        let so = solve_so(&inst).unwrap();
        assert!(so.profile.max_abs_difference(&strip(&r.profile)).unwrap() < 1e-5);
    }

    #[test]
    fn uplift_equilibrium() {
        let inst = fixtures::toy_b();
        let r = solve_piu_equilibrium(&inst, &Uplift::Uniform(5.0)).unwrap();
        assert!((total_supply(&r) - 70.0).abs() < 1e-4);
        assert!((r.system_cost - 2625.0).abs() < 1e-3);
        assert!((r.prices[0][0] - 30.0).abs() < 1e-4);
        assert!(r.shifted_objective.is_some());
        let zero = solve_piu_equilibrium(&inst, &Uplift::Uniform(0.0)).unwrap();
        let pi = solve_pi_equilibrium(&inst).unwrap();
        assert!(zero.profile.max_abs_difference(&pi.profile).unwrap() < 1e-6);
        assert!(total_supply(&r) >= total_supply(&zero));
    }

    #[test]
    fn withholding_on_toy_b() {
        let eps = vec![vec![0.01]];
        let r = solve_mcp_withholding(&fixtures::toy_b(), Some(&eps)).unwrap();
        let info = r.withholding.as_ref().unwrap();
        assert!((info.threshold[0][0] - 250.0).abs() < 1e-9);
        assert!(info.condition_holds);
        assert!((info.epsilon_bound - 10.0).abs() < 1e-9);
        assert!((total_supply(&r) - 19.99).abs() < 1e-5);
        assert!((r.profits[0].profit - 970.0 * 19.99).abs() < 1e-2);

        let low = solve_mcp_withholding(&fixtures::toy_b_with(1, 200.0), Some(&eps)).unwrap();
        assert!(!low.withholding.unwrap().condition_holds);
    }

    #[test]
    fn threshold_with_three_investors() {
        let mut inst = fixtures::toy_b_with(3, 1000.0);
        let mut s = inst.scenarios.clone().into_inner();
        s[0].demand[0] = 150.0;
        s[0].slope[0] = 0.2;
        s[0].intercept[0] = 10.0;
        inst.scenarios = crate::model::ScenarioSet::new(s).unwrap();
        inst.system.p_bar_cv = 100.0;
        assert!((withholding_threshold(&inst, 3, 0, 0) - 210.0).abs() < 1e-9);
    }

    #[test]
    fn withholding_rejects_mixed_investors() {
        let mut inst = fixtures::toy_b_with(2, 1000.0);
        if let InvestorSpec::Vre(v) = &mut inst.investors[1] {
            v.capacity_cost = 31.0;
        }
        assert!(matches!(solve_mcp_withholding(&inst, None), Err(Error::Unsupported(_))));
    }

    #[test]
    fn replicate_contract() {
        let inst = fixtures::toy_b();
        assert_eq!(replicate(&inst, &[1]).unwrap(), inst);
        assert!(replicate(&inst, &[0]).is_err());
        let r = replicate(&inst, &[3]).unwrap();
        let ids: Vec<_> = r.investors.iter().map(|s| s.id().to_string()).collect();
        assert_eq!(ids, ["vre-1", "vre-2", "vre-3"]);
    }

    #[test]
    fn coupled_band_holds() {
        let inst = fixtures::random_instance(8, fixtures::RandomOptions::default());
        let r = solve_p_equilibrium(&inst).unwrap();
        let cap = inst.system.remaining_capacity();
        for (w, t) in inst.grid().cells() {
            let d = inst.scenarios[w].demand[t];
            let s = r.profile.total_supply(w, t, true);
            assert!(s >= d - cap - 1e-6 && s <= d + 1e-6);
        }
        assert!(r.potential.unwrap().relative_gap() < 1e-8);
        assert!(r.profile.violations(&inst.with_mechanism(r.mechanism.clone()).unwrap(), 1e-6).is_empty());
    }

    /// Drop lost-load shares so a penalty profile compares with a plain one.
    fn strip(p: &DecisionProfile) -> DecisionProfile {
        let mut out = p.clone();
        out.investors.iter_mut().for_each(|d| d.lost_load = None);
        out
    }
}
