//! Participant accounting: renewable investors, the conventional fleet,
//! consumers and the system operator.

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumReport;
use crate::error::{Error, Result};
use crate::model::{
    cer_cost, expectation, investment_cost, operation_cost, system_cost, DecisionProfile, Hourly, MarketInstance,
    MechanismKind, MechanismSpec,
};

/// Relative tolerance of [`conservation_check`].
pub const CONSERVATION_TOL: f64 = 1e-6;

/// Who funds the uplift component of the energy price.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpliftPayer {
    #[default]
    Consumers,
    Operator,
}

impl std::str::FromStr for UpliftPayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "consumers" => Ok(Self::Consumers),
            "operator" => Ok(Self::Operator),
            other => Err(Error::InvalidParameter(format!("unknown uplift payer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LerAccount {
    pub id: String,
    /// Energy payments on effective supply.
    pub revenue: f64,
    pub penalty: f64,
    pub incentive: f64,
    pub investment_cost: f64,
    pub operation_cost: f64,
    pub profit: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CerAccount {
    pub revenue: f64,
    pub cost: f64,
    pub surplus: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerAccount {
    /// Energy payment on served demand.
    pub payment: f64,
    /// VOLL-valued unserved demand.
    pub lost_load_value: f64,
    pub surplus: f64,
    /// `VOLL·E Σ D −` surplus.
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorAccount {
    pub penalty_intake: f64,
    /// Energy payments to investors on their allocated lost load.
    pub lost_load_payment: f64,
    pub incentive_outlay: f64,
    pub uplift_outlay: f64,
    pub surplus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurplusReport {
    pub mechanism: MechanismKind,
    pub uplift_payer: UpliftPayer,
    pub investors: Vec<LerAccount>,
    pub cer: CerAccount,
    pub consumers: ConsumerAccount,
    pub operator: OperatorAccount,
    pub system_cost: f64,
    /// `VOLL·E Σ D`.
    pub demand_value: f64,
}

impl SurplusReport {
    pub fn total_ler_profit(&self) -> f64 {
        self.investors.iter().map(|a| a.profit).sum()
    }

    /// Net cash position of every participant: investors, conventional
    /// fleet, consumers, operator.
    pub fn net_cash(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.investors.iter().map(|a| a.revenue - a.penalty + a.incentive).collect();
        out.push(self.cer.revenue);
        out.push(-self.consumers.payment);
        let o = &self.operator;
        out.push(o.penalty_intake - o.lost_load_payment - o.incentive_outlay - o.uplift_outlay);
        out
    }
}

/// `E Σ π·p_cv − G_cv`.
pub fn cer_surplus(inst: &MarketInstance, profile: &DecisionProfile, prices: &Hourly) -> f64 {
    let revenue = weighted(inst, |w, t| prices[w][t] * profile.cer_output[w][t]);
    revenue - cer_cost(&inst.scenarios, &profile.cer_output)
}

/// Consumer surplus `E Σ (VOLL − π)(D − p_sh)` and cost
/// `VOLL·E Σ D −` surplus.
pub fn consumer_accounts(inst: &MarketInstance, profile: &DecisionProfile, prices: &Hourly) -> (f64, f64) {
    let voll = inst.system.voll;
    let surplus = weighted(inst, |w, t| (voll - prices[w][t]) * served(inst, profile, w, t));
    (surplus, voll * demand(inst) - surplus)
}

/// Operator surplus: zero under marginal-cost pricing, otherwise penalty
/// intake net of energy payments on allocated lost load and of the
/// incentive.
pub fn operator_surplus(
    inst: &MarketInstance,
    profile: &DecisionProfile,
    prices: &Hourly,
    mechanism: MechanismKind,
) -> Result<f64> {
    if mechanism == MechanismKind::Mcp {
        return Ok(0.0);
    }
    let voll = inst.system.voll;
    let mut total = 0.0;
    for d in &profile.investors {
        let shares = d
            .lost_load
            .as_ref()
            .ok_or_else(|| Error::Accounting(format!("investor `{}` has no lost-load allocation", d.id)))?;
        total += weighted(inst, |w, t| {
            let eff = d.supply_with_lost_load(w, t);
            let bonus = if mechanism.has_incentive() { 0.5 * inst.scenarios[w].slope[t] * eff * eff } else { 0.0 };
            (voll - prices[w][t]) * shares[w][t] - bonus
        });
    }
    Ok(total)
}

fn weighted(inst: &MarketInstance, f: impl Fn(usize, usize) -> f64) -> f64 {
    inst.scenarios
        .iter()
        .enumerate()
        .map(|(w, s)| s.probability * (0..s.hours()).map(|t| f(w, t)).sum::<f64>())
        .sum()
}

fn served(inst: &MarketInstance, profile: &DecisionProfile, w: usize, t: usize) -> f64 {
    inst.scenarios[w].demand[t] - profile.shed[w][t]
}

fn demand(inst: &MarketInstance) -> f64 {
    weighted(inst, |w, t| inst.scenarios[w].demand[t])
}

/// Full ledger for a profile and the prices it clears at.
pub fn surplus_report(
    inst: &MarketInstance,
    mechanism: &MechanismSpec,
    profile: &DecisionProfile,
    prices: &Hourly,
    payer: UpliftPayer,
) -> Result<SurplusReport> {
    let kind = mechanism.kind;
    let voll = inst.system.voll;
    let uplift = |w: usize, t: usize| if kind == MechanismKind::Piu { mechanism.uplift.at(w, t) } else { 0.0 };
    let mut investors = Vec::with_capacity(profile.investors.len());
    for (spec, d) in inst.investors.iter().zip(&profile.investors) {
        if kind.has_penalty() && d.lost_load.is_none() {
            return Err(Error::Accounting(format!("investor `{}` has no lost-load allocation", d.id)));
        }
        let revenue = weighted(inst, |w, t| prices[w][t] * d.supply_with_lost_load(w, t));
        let penalty = voll * weighted(inst, |w, t| d.lost_load_at(w, t));
        let incentive = if kind.has_incentive() {
            weighted(inst, |w, t| {
                let e = d.supply_with_lost_load(w, t);
                0.5 * inst.scenarios[w].slope[t] * e * e
            })
        } else {
            0.0
        };
        let inv = investment_cost(spec, d);
        let op = operation_cost(spec, d, &inst.scenarios);
        investors.push(LerAccount {
            id: d.id.clone(),
            revenue,
            penalty,
            incentive,
            investment_cost: inv,
            operation_cost: op,
            profit: revenue - penalty + incentive - inv - op,
        });
    }
    let cer_revenue = weighted(inst, |w, t| prices[w][t] * profile.cer_output[w][t]);
    let cer_gen = cer_cost(&inst.scenarios, &profile.cer_output);
    let operator_funded = payer == UpliftPayer::Operator;
    let uplift_total = weighted(inst, |w, t| uplift(w, t) * served(inst, profile, w, t));
    let payment = weighted(inst, |w, t| prices[w][t] * served(inst, profile, w, t))
        - if operator_funded { uplift_total } else { 0.0 };
    let demand_value = voll * demand(inst);
    let lost_load_value = voll * expectation(&inst.scenarios, &profile.shed);
    let consumer_surplus = demand_value - lost_load_value - payment;
    let (penalty_intake, lost_load_payment, incentive_outlay) = if kind.has_penalty() {
        (
            investors.iter().map(|a| a.penalty).sum(),
            weighted(inst, |w, t| prices[w][t] * profile.investors.iter().map(|d| d.lost_load_at(w, t)).sum::<f64>()),
            investors.iter().map(|a| a.incentive).sum(),
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    let uplift_outlay = if operator_funded { uplift_total } else { 0.0 };
    Ok(SurplusReport {
        mechanism: kind,
        uplift_payer: payer,
        investors,
        cer: CerAccount {
            revenue: cer_revenue,
            cost: cer_gen,
            surplus: cer_revenue - cer_gen,
        },
        consumers: ConsumerAccount {
            payment,
            lost_load_value,
            surplus: consumer_surplus,
            cost: demand_value - consumer_surplus,
        },
        operator: OperatorAccount {
            penalty_intake,
            lost_load_payment,
            incentive_outlay,
            uplift_outlay,
            surplus: penalty_intake - lost_load_payment - incentive_outlay - uplift_outlay,
        },
        system_cost: system_cost(inst, profile),
        demand_value,
    })
}

/// Ledger for a solved equilibrium.
pub fn from_equilibrium(inst: &MarketInstance, report: &EquilibriumReport, payer: UpliftPayer) -> Result<SurplusReport> {
    let inst = inst.with_mechanism(report.mechanism.clone())?;
    surplus_report(&inst, &report.mechanism, &report.profile, &report.prices, payer)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    /// Sum of every participant's net cash; zero when money is conserved.
    pub cash_imbalance: f64,
    /// Total surplus minus `VOLL·E Σ D −` system cost.
    pub welfare_gap: f64,
    pub scale: f64,
    pub pass: bool,
}

/// Double-entry closure: transfers sum to zero, and all surpluses add up to
/// VOLL-valued demand less system cost.
pub fn conservation_check(report: &SurplusReport) -> Conservation {
    let cash: Vec<f64> = report.net_cash();
    let imbalance: f64 = cash.iter().sum();
    let costs: f64 = report.investors.iter().map(|a| a.investment_cost + a.operation_cost).sum();
    let ler_profit: f64 = report
        .investors
        .iter()
        .zip(&cash)
        .map(|(a, c)| c - a.investment_cost - a.operation_cost)
        .sum();
    let cer = report.cer.revenue - report.cer.cost;
    let consumers = report.demand_value - report.consumers.lost_load_value - report.consumers.payment;
    let operator = cash[cash.len() - 1];
    let welfare = ler_profit + cer + consumers + operator;
    let gap = welfare - (report.demand_value - report.system_cost);
    let scale = report
        .demand_value
        .abs()
        .max(report.consumers.payment.abs())
        .max(costs + report.cer.cost)
        .max(1.0);
    Conservation {
        cash_imbalance: imbalance,
        welfare_gap: gap,
        scale,
        pass: imbalance.abs() <= CONSERVATION_TOL * scale && gap.abs() <= CONSERVATION_TOL * scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{
        mcp_competitive, solve_mcp_withholding, solve_p_equilibrium, solve_pi_equilibrium, solve_piu_equilibrium,
    };
    use crate::fixtures;
    use crate::model::Uplift;
    use crate::social_optimum::solve_so;

    #[test]
    fn competitive_ledger() {
        let inst = fixtures::toy_b();
        let so = solve_so(&inst).unwrap();
        let eq = mcp_competitive(&inst, &so).unwrap();
        let r = from_equilibrium(&inst, &eq, UpliftPayer::Consumers).unwrap();
        assert!((r.cer.surplus - 400.0).abs() < 1e-4);
        assert_eq!(r.operator.surplus, 0.0);
        assert!(r.investors[0].profit.abs() < 1e-3);
        assert!((r.consumers.surplus - 97000.0).abs() < 1e-3);
        assert!((r.consumers.cost - 3000.0).abs() < 1e-3);
        assert!(conservation_check(&r).pass);
    }

    #[test]
    fn uplift_ledger() {
        let inst = fixtures::toy_b();
        let eq = solve_piu_equilibrium(&inst, &Uplift::Uniform(5.0)).unwrap();
        for payer in [UpliftPayer::Consumers, UpliftPayer::Operator] {
            let r = from_equilibrium(&inst, &eq, payer).unwrap();
            assert!((r.cer.surplus - 375.0).abs() < 1e-3);
            assert!(conservation_check(&r).pass, "{payer:?}");
        }
        let r = from_equilibrium(&inst, &eq, UpliftPayer::Consumers).unwrap();
        // 30·70 + ½·0.5·70² − 30·70.
        assert!((r.total_ler_profit() - 1225.0).abs() < 1e-3);
        assert!((r.operator.surplus + 1225.0).abs() < 1e-3);
    }

    #[test]
    fn operator_under_penalties() {
        let inst = fixtures::toy_b();
        let p = solve_p_equilibrium(&inst).unwrap();
        let r = from_equilibrium(&inst, &p, UpliftPayer::Consumers).unwrap();
        assert!(r.operator.surplus.abs() < 1e-6);
        let pi = solve_pi_equilibrium(&inst).unwrap();
        let s = operator_surplus(&inst, &pi.profile, &pi.prices, MechanismKind::Pi).unwrap();
        assert!((s + 900.0).abs() < 1e-3);
        let so = solve_so(&inst).unwrap();
        assert!(matches!(
            operator_surplus(&inst, &so.profile, &so.prices, MechanismKind::P),
            Err(Error::Accounting(_))
        ));
    }

    #[test]
    fn withholding_leaves_consumers_nothing() {
        let inst = fixtures::toy_b();
        let eq = solve_mcp_withholding(&inst, None).unwrap();
        let r = from_equilibrium(&inst, &eq, UpliftPayer::Consumers).unwrap();
        assert!(r.consumers.surplus.abs() <= 1e-6 * r.demand_value);
        assert!(conservation_check(&r).pass);
    }

    #[test]
    fn consumer_boundaries() {
        let inst = fixtures::toy_b();
        let mut profile = solve_so(&inst).unwrap().profile;
        let prices = vec![vec![30.0]];
        let (s, c) = consumer_accounts(&inst, &profile, &prices);
        assert!((s - 97000.0).abs() < 1e-6 && (c - 3000.0).abs() < 1e-6);
        profile.shed = vec![vec![100.0]];
        let (s, c) = consumer_accounts(&inst, &profile, &prices);
        assert_eq!(s, 0.0);
        assert!((c - 100_000.0).abs() < 1e-9);
        profile.cer_output = vec![vec![0.0]];
        assert_eq!(cer_surplus(&inst, &profile, &prices), 0.0);
    }

    #[test]
    fn corrupted_revenue_is_caught() {
        let inst = fixtures::toy_b();
        let eq = solve_piu_equilibrium(&inst, &Uplift::Uniform(5.0)).unwrap();
        let mut r = from_equilibrium(&inst, &eq, UpliftPayer::Consumers).unwrap();
        r.investors[0].revenue += 1.0;
        assert!(!conservation_check(&r).pass);
    }
}
