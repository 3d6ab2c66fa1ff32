//! Independent certification of reported equilibria.
//!
//! Best responses are assembled here from the price, penalty and incentive
//! formulas directly; nothing in this module goes through the programs the
//! equilibrium solvers build.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    DecisionProfile, InvestorDecision, InvestorSpec, MarketInstance, MechanismKind, MechanismSpec, ResourceDecision,
    Scenario,
};
use crate::qp::{self, QpSettings, QpSolution, QuadraticProgram, Relation};

/// Default relative certification tolerance.
pub const DEFAULT_TOL: f64 = 1e-3;

/// Points per capacity axis in the deviation grids.
pub const GRID_POINTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertifyMethod {
    QpBestResponse,
    GridSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvestorGain {
    pub id: String,
    pub profit: f64,
    pub best_profit: f64,
    pub gain: f64,
    /// Gain allowed for this investor.
    pub allowed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashCertificate {
    pub mechanism: MechanismKind,
    pub method: CertifyMethod,
    pub investors: Vec<InvestorGain>,
    /// Largest gain over investors.
    pub epsilon: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withholding_condition: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// A best response and the improvement over the current decision.
#[derive(Clone, Debug, PartialEq)]
pub struct BestResponse {
    pub decision: InvestorDecision,
    pub profit: f64,
    pub current_profit: f64,
    pub gain: f64,
}

fn check_mechanism(mechanism: &MechanismSpec) -> Result<()> {
    if mechanism.kind == MechanismKind::Mcp {
        return Err(Error::Unsupported(
            "marginal-cost prices are not a closed-form function of one investor's supply; use the withholding check"
                .into(),
        ));
    }
    Ok(())
}

fn position(profile: &DecisionProfile, id: &str) -> Result<usize> {
    profile
        .investors
        .iter()
        .position(|d| d.id == id)
        .ok_or_else(|| Error::UnknownInvestor(id.to_string()))
}

/// Supply of everyone but investor `i`, including allocated lost load.
fn others(profile: &DecisionProfile, i: usize, w: usize, t: usize) -> f64 {
    profile
        .investors
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, d)| d.supply_with_lost_load(w, t))
        .sum()
}

fn capital(spec: &InvestorSpec, d: &InvestorDecision) -> f64 {
    match (spec, &d.resource) {
        (InvestorSpec::Vre(v), ResourceDecision::Vre { capacity, .. }) => v.kappa * v.capacity_cost * capacity,
        (InvestorSpec::Es(e), ResourceDecision::Es { energy_capacity, power_capacity, .. }) => {
            e.kappa * (e.energy_cost * energy_capacity + e.power_cost * power_capacity)
        }
        _ => f64::NAN,
    }
}

fn hourly_operation(spec: &InvestorSpec, d: &InvestorDecision, w: usize, t: usize) -> f64 {
    match (spec, &d.resource) {
        (InvestorSpec::Es(e), ResourceDecision::Es { charge, discharge, .. }) => {
            e.charge_cost * charge[w][t] + e.discharge_cost * discharge[w][t]
        }
        _ => 0.0,
    }
}

/// Capped price for total effective supply `total`.
fn band_price(s: &Scenario, t: usize, cap: f64, total: f64, uplift: f64) -> f64 {
    s.slope[t] * (s.demand[t] - total).clamp(0.0, cap) + s.intercept[t] + uplift
}

/// Every investor's profit under a penalty mechanism, recomputed from the
/// profile: capped-price revenue on effective supply, minus capital and
/// operating cost and the lost-load penalty, plus the supply incentive.
pub fn recompute_profits(inst: &MarketInstance, mechanism: &MechanismSpec, profile: &DecisionProfile) -> Result<Vec<f64>> {
    check_mechanism(mechanism)?;
    if profile.investors.len() != inst.investors.len() {
        return Err(Error::InvalidModel("profile and instance list different investors".into()));
    }
    let cap = inst.system.remaining_capacity();
    let voll = inst.system.voll;
    let incentive = mechanism.kind.has_incentive();
    let mut out = Vec::with_capacity(inst.investors.len());
    for (spec, d) in inst.investors.iter().zip(&profile.investors) {
        let mut f = -capital(spec, d);
        for (w, s) in inst.scenarios.iter().enumerate() {
            for t in 0..s.hours() {
                let total = profile.total_supply(w, t, true);
                let own = d.supply_with_lost_load(w, t);
                let price = band_price(s, t, cap, total, mechanism.uplift.at(w, t));
                let mut hour = price * own - voll * d.lost_load_at(w, t) - hourly_operation(spec, d, w, t);
                if incentive {
                    hour += 0.5 * s.slope[t] * own * own;
                }
                f += s.probability * hour;
            }
        }
        out.push(f);
    }
    Ok(out)
}

/// Investor `id`'s best response to the rest of `profile`, found by solving
/// its concave profit maximization as a QP.
///
/// Inside the band `D − γp̄ ≤ ΣÃ ≤ D` the price is linear in the investor's
/// own effective supply, so revenue is concave.
pub fn best_response(
    inst: &MarketInstance,
    mechanism: &MechanismSpec,
    profile: &DecisionProfile,
    id: &str,
) -> Result<BestResponse> {
    check_mechanism(mechanism)?;
    let i = position(profile, id)?;
    let (_, spec) = inst.investor(id)?;
    let current = recompute_profits(inst, mechanism, profile)?[i];
    let cap = inst.system.remaining_capacity();
    let voll = inst.system.voll;
    let sc = &inst.scenarios;
    let hours = sc.hours();
    // Revenue −a·Ã² without incentive, −½a·Ã² with it.
    let curvature = if mechanism.kind.has_incentive() { 1.0 } else { 2.0 };

    let mut qp = QuadraticProgram::new();
    let inf = f64::INFINITY;
    let grid_of = |qp: &mut QuadraticProgram, name: &str| -> Vec<Vec<usize>> {
        (0..sc.len()).map(|_| (0..hours).map(|_| qp.add_var(name, 0.0, inf)).collect()).collect()
    };
    enum Vars {
        Vre { x: usize, mk: Vec<Vec<usize>>, cur: Vec<Vec<usize>> },
        Es { s: usize, p: usize, ch: Vec<Vec<usize>>, dis: Vec<Vec<usize>>, e: Vec<Vec<usize>> },
    }
    let vars = match spec {
        InvestorSpec::Vre(v) => {
            let x = qp.add_var("capacity", 0.0, inf);
            qp.add_linear(x, v.kappa * v.capacity_cost);
            let mk = grid_of(&mut qp, "market");
            let cur = grid_of(&mut qp, "curtail");
            for (w, s) in sc.iter().enumerate() {
                for t in 0..hours {
                    let nu = s.capacity_factor(&v.capacity_factor_key, t).unwrap_or(0.0);
                    qp.add_row("output", vec![(mk[w][t], 1.0), (cur[w][t], 1.0), (x, -nu)], Relation::Eq, 0.0);
                }
            }
            Vars::Vre { x, mk, cur }
        }
        InvestorSpec::Es(e) => {
            let s = qp.add_var("energy", 0.0, inf);
            let p = qp.add_var("power", 0.0, inf);
            qp.add_linear(s, e.kappa * e.energy_cost);
            qp.add_linear(p, e.kappa * e.power_cost);
            qp.add_row("duration", vec![(p, e.u_min), (s, -1.0)], Relation::Le, 0.0);
            qp.add_row("duration", vec![(s, 1.0), (p, -e.u_max)], Relation::Le, 0.0);
            let ch = grid_of(&mut qp, "charge");
            let dis = grid_of(&mut qp, "discharge");
            let soc = grid_of(&mut qp, "soc");
            for (w, sw) in sc.iter().enumerate() {
                for t in 0..hours {
                    qp.add_linear(ch[w][t], sw.probability * e.charge_cost);
                    qp.add_linear(dis[w][t], sw.probability * e.discharge_cost);
                    qp.add_row("limits", vec![(ch[w][t], 1.0), (p, -1.0)], Relation::Le, 0.0);
                    qp.add_row("limits", vec![(dis[w][t], 1.0), (p, -1.0)], Relation::Le, 0.0);
                    qp.add_row("limits", vec![(soc[w][t], 1.0), (s, -1.0)], Relation::Le, 0.0);
                    let prev = (t + hours - 1) % hours;
                    let mut row = vec![(ch[w][t], -e.eta_c), (dis[w][t], 1.0 / e.eta_d)];
                    if prev != t {
                        row.push((soc[w][t], 1.0));
                        row.push((soc[w][prev], -1.0));
                    }
                    qp.add_row("soc", row, Relation::Eq, 0.0);
                }
            }
            Vars::Es { s, p, ch, dis, e: soc }
        }
    };
    let mut sh = Vec::with_capacity(sc.len());
    for (w, s) in sc.iter().enumerate() {
        let mut row = Vec::with_capacity(hours);
        for t in 0..hours {
            let shed = qp.add_var("lost_load", 0.0, s.demand[t]);
            row.push(shed);
            let mut terms = match &vars {
                Vars::Vre { mk, .. } => vec![(mk[w][t], 1.0)],
                Vars::Es { ch, dis, .. } => vec![(dis[w][t], 1.0), (ch[w][t], -1.0)],
            };
            terms.push((shed, 1.0));
            let rest = others(profile, i, w, t);
            let intercept = s.slope[t] * (s.demand[t] - rest) + s.intercept[t] + mechanism.uplift.at(w, t);
            for &(j, c) in &terms {
                qp.add_linear(j, -s.probability * intercept * c);
            }
            qp.add_linear(shed, s.probability * voll);
            qp.add_square(&terms, curvature * s.probability * s.slope[t]);
            qp.add_row("band", terms.clone(), Relation::Le, s.demand[t] - rest);
            let lower: Vec<(usize, f64)> = terms.iter().map(|&(j, c)| (j, -c)).collect();
            qp.add_row("band", lower, Relation::Le, cap - (s.demand[t] - rest));
        }
        sh.push(row);
    }
    let sol = qp::solve(&qp, &QpSettings::default())?;
    if !sol.is_optimal() {
        return Err(Error::Solver(sol.status));
    }
    let x = &sol.x;
    let get = |idx: &Vec<Vec<usize>>| -> Vec<Vec<f64>> { idx.iter().map(|r| r.iter().map(|&j| x[j].max(0.0)).collect()).collect() };
    let resource = match &vars {
        Vars::Vre { x: cap_var, mk, cur } => ResourceDecision::Vre {
            capacity: x[*cap_var].max(0.0),
            market: get(mk),
            curtailment: get(cur),
        },
        Vars::Es { s, p, ch, dis, e } => ResourceDecision::Es {
            energy_capacity: x[*s].max(0.0),
            power_capacity: x[*p].max(0.0),
            charge: get(ch),
            discharge: get(dis),
            soc: get(e),
        },
    };
    let decision = InvestorDecision {
        id: id.to_string(),
        resource,
        lost_load: Some(get(&sh)),
    };
    let profit = -sol.objective;
    Ok(BestResponse {
        decision,
        profit,
        current_profit: current,
        gain: profit - current,
    })
}

/// Best response of a renewable investor by a coarse-to-fine search over
/// its capacity. For each capacity, the hourly sale and lost-load share are
/// chosen optimally in closed form.
pub fn best_response_grid(
    inst: &MarketInstance,
    mechanism: &MechanismSpec,
    profile: &DecisionProfile,
    id: &str,
    points: usize,
) -> Result<(f64, f64)> {
    check_mechanism(mechanism)?;
    let i = position(profile, id)?;
    let (_, spec) = inst.investor(id)?;
    let InvestorSpec::Vre(v) = spec else {
        return Err(Error::Unsupported("grid search covers renewable investors only".into()));
    };
    let cap = inst.system.remaining_capacity();
    let voll = inst.system.voll;
    let curvature = if mechanism.kind.has_incentive() { 0.5 } else { 1.0 };
    let hourly: Vec<(f64, f64, f64, f64, f64, f64)> = inst
        .scenarios
        .iter()
        .enumerate()
        .flat_map(|(w, s)| {
            let v = &v;
            (0..s.hours()).map(move |t| {
                let rest = others(profile, i, w, t);
                let alpha = s.slope[t] * (s.demand[t] - rest) + s.intercept[t] + mechanism.uplift.at(w, t);
                let nu = s.capacity_factor(&v.capacity_factor_key, t).unwrap_or(0.0);
                let lo = (s.demand[t] - rest - cap).max(0.0);
                let hi = s.demand[t] - rest;
                (s.probability, alpha, curvature * s.slope[t], nu, lo, hi)
            })
        })
        .collect();
    if hourly.iter().any(|h| h.5 < h.4) {
        return Err(Error::InvalidModel("others already oversupply the market".into()));
    }
    let profit_at = |x: f64| -> f64 {
        let mut f = -v.kappa * v.capacity_cost * x;
        for &(rho, alpha, c, nu, lo, hi) in &hourly {
            let g = |e: f64| alpha * e - c * e * e - voll * (e - nu * x).max(0.0);
            let peak = |slope: f64| if c > 0.0 { slope / (2.0 * c) } else { hi };
            let best = [lo, hi, nu * x, peak(alpha), peak(alpha - voll)]
                .into_iter()
                .map(|e| e.clamp(lo, hi))
                .map(g)
                .fold(f64::NEG_INFINITY, f64::max);
            f += rho * best;
        }
        f
    };
    let upper = hourly
        .iter()
        .filter(|h| h.3 > 0.0)
        .map(|h| h.5 / h.3)
        .fold(0.0, f64::max)
        .max(1.0);
    let (mut lo, mut hi) = (0.0, upper);
    let mut best = (0.0, profit_at(0.0));
    for _ in 0..4 {
        let step = (hi - lo) / points as f64;
        for k in 0..=points {
            let x = lo + step * k as f64;
            let f = profit_at(x);
            if f > best.1 {
                best = (x, f);
            }
        }
        lo = (best.0 - 2.0 * step).max(0.0);
        hi = best.0 + 2.0 * step;
    }
    Ok(best)
}

/// Certify a profile as a Nash equilibrium with the QP best response.
pub fn certify(inst: &MarketInstance, mechanism: &MechanismSpec, profile: &DecisionProfile, tol: f64) -> Result<NashCertificate> {
    certify_with(inst, mechanism, profile, tol, CertifyMethod::QpBestResponse)
}

/// Certify with a chosen method. An investor passes when its best
/// response gains at most `tol · max(1, |profit|)`.
pub fn certify_with(
    inst: &MarketInstance,
    mechanism: &MechanismSpec,
    profile: &DecisionProfile,
    tol: f64,
    method: CertifyMethod,
) -> Result<NashCertificate> {
    check_mechanism(mechanism)?;
    let current = recompute_profits(inst, mechanism, profile)?;
    let investors: Vec<InvestorGain> = profile
        .investors
        .par_iter()
        .zip(current.par_iter())
        .map(|(d, &profit)| {
            let best = match method {
                CertifyMethod::QpBestResponse => best_response(inst, mechanism, profile, &d.id)?.profit,
                CertifyMethod::GridSearch => best_response_grid(inst, mechanism, profile, &d.id, GRID_POINTS)?.1,
            };
            Ok(InvestorGain {
                id: d.id.clone(),
                profit,
                best_profit: best,
                gain: best - profit,
                allowed: tol * profit.abs().max(1.0),
            })
        })
        .collect::<Result<_>>()?;
    let epsilon = investors.iter().map(|g| g.gain).fold(0.0, f64::max);
    let mut notes = Vec::new();
    let floor = investors.iter().map(|g| g.gain + g.allowed).fold(f64::INFINITY, f64::min);
    if floor < 0.0 {
        notes.push("a best response scored below the current profit; the verifier is inconsistent".into());
    }
    let pass = floor >= 0.0 && investors.iter().all(|g| g.gain <= g.allowed);
    Ok(NashCertificate {
        mechanism: mechanism.kind,
        method,
        investors,
        epsilon,
        tolerance: tol,
        pass,
        withholding_condition: None,
        epsilon_bound: None,
        notes,
    })
}

/// Price under marginal-cost pricing as a function of renewable supply:
/// VOLL while supply leaves more than the conventional fleet can cover,
/// the conventional marginal cost otherwise.
fn withholding_price(s: &Scenario, t: usize, cap: f64, voll: f64, total: f64) -> f64 {
    let residual = s.demand[t] - total;
    if residual >= cap {
        voll
    } else {
        s.slope[t] * residual.max(0.0) + s.intercept[t]
    }
}

/// Certify the withholding outcome under marginal-cost pricing: checks the
/// VOLL threshold at every hour, then grid-searches each investor's
/// capacity deviations across the scarcity, marginal-cost and saturated
/// regimes.
///
/// The certificate passes when the threshold holds everywhere and no
/// deviation gains more than `E Σ ε·VOLL` plus the tolerance.
pub fn mcp_withholding_check(
    inst: &MarketInstance,
    profile: &DecisionProfile,
    epsilon_bound: f64,
    tol: f64,
) -> Result<NashCertificate> {
    let first = match inst.investors.first() {
        Some(InvestorSpec::Vre(v)) => v,
        _ => return Err(Error::Unsupported("the withholding check needs renewable investors".into())),
    };
    let n = inst.investors.len();
    for s in &inst.investors {
        match s {
            InvestorSpec::Vre(v)
                if v.capacity_cost == first.capacity_cost
                    && v.kappa == first.kappa
                    && v.capacity_factor_key == first.capacity_factor_key => {}
            _ => return Err(Error::Unsupported("the withholding check needs identical renewable investors".into())),
        }
    }
    let cap = inst.system.remaining_capacity();
    let voll = inst.system.voll;
    let mut condition = true;
    for s in inst.scenarios.iter() {
        for t in 0..s.hours() {
            let band = s.demand[t] - cap;
            if band <= 0.0 {
                return Err(Error::Unsupported("no scarcity band at some hour".into()));
            }
            let mc = s.slope[t] * cap + s.intercept[t];
            condition &= voll >= (1.0 + n as f64 * cap / band) * mc;
        }
    }
    let unit_cost = first.kappa * first.capacity_cost;
    let mut investors = Vec::with_capacity(n);
    for (i, d) in profile.investors.iter().enumerate() {
        let rest: Vec<Vec<f64>> = (0..inst.scenarios.len())
            .map(|w| (0..inst.scenarios.hours()).map(|t| profile.investors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o.net_supply(w, t)).sum()).collect())
            .collect();
        let mut current = -unit_cost * d.power_capacity();
        for (w, s) in inst.scenarios.iter().enumerate() {
            for t in 0..s.hours() {
                let own = d.net_supply(w, t);
                current += s.probability * withholding_price(s, t, cap, voll, rest[w][t] + own) * own;
            }
        }
        let profit_at = |x: f64| -> f64 {
            let mut f = -unit_cost * x;
            for (w, s) in inst.scenarios.iter().enumerate() {
                for t in 0..s.hours() {
                    let nu = s.capacity_factor(&first.capacity_factor_key, t).unwrap_or(0.0);
                    let avail = nu * x;
                    let room = (s.demand[t] - rest[w][t]).max(0.0);
                    let edge = (s.demand[t] - cap - rest[w][t]).max(0.0);
                    let hi = avail.min(room);
                    let peak = (s.slope[t] * (s.demand[t] - rest[w][t]) + s.intercept[t]) / (2.0 * s.slope[t]);
                    let best = [hi, avail.min(edge), peak.clamp(edge.min(hi), hi)]
                        .into_iter()
                        .map(|m| withholding_price(s, t, cap, voll, rest[w][t] + m) * m)
                        .fold(f64::NEG_INFINITY, f64::max);
                    f += s.probability * best;
                }
            }
            f
        };
        let mut candidates: Vec<f64> = Vec::new();
        let mut upper: f64 = 1.0;
        for (w, s) in inst.scenarios.iter().enumerate() {
            for t in 0..s.hours() {
                let nu = s.capacity_factor(&first.capacity_factor_key, t).unwrap_or(0.0);
                if nu > 0.0 {
                    candidates.push((s.demand[t] - cap - rest[w][t]).max(0.0) / nu);
                    upper = upper.max(1.5 * (s.demand[t] - rest[w][t]).max(0.0) / nu);
                }
            }
        }
        candidates.extend((0..=GRID_POINTS).map(|k| upper * k as f64 / GRID_POINTS as f64));
        let mut best = f64::NEG_INFINITY;
        for &x in &candidates {
            best = best.max(profit_at(x));
        }
        investors.push(InvestorGain {
            id: d.id.clone(),
            profit: current,
            best_profit: best,
            gain: best - current,
            allowed: epsilon_bound + tol * current.abs().max(1.0),
        });
    }
    let epsilon = investors.iter().map(|g| g.gain).fold(0.0, f64::max);
    let within = investors.iter().all(|g| g.gain <= g.allowed);
    let mut notes = Vec::new();
    if !condition {
        notes.push("VOLL is below the withholding threshold; certificate withheld".into());
    }
    Ok(NashCertificate {
        mechanism: MechanismKind::Mcp,
        method: CertifyMethod::GridSearch,
        investors,
        epsilon,
        tolerance: tol,
        pass: condition && within,
        withholding_condition: Some(condition),
        epsilon_bound: Some(epsilon_bound),
        notes,
    })
}

/// Largest KKT residuals within one named block of a program.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockResidual {
    pub block: String,
    /// `|Qx + q + Aᵀy − μˡ + μᵘ|` over the block's variables.
    pub stationarity: f64,
    /// Constraint and bound violation over the block's rows and variables.
    pub primal: f64,
    /// Negative part of multipliers that must be non-negative.
    pub dual: f64,
    /// `|multiplier × slack|`.
    pub complementarity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub blocks: Vec<BlockResidual>,
}

impl KktReport {
    pub fn max_stationarity(&self) -> f64 {
        self.blocks.iter().map(|b| b.stationarity).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.stationarity.max(b.primal).max(b.dual).max(b.complementarity))
            .fold(0.0, f64::max)
    }

    pub fn block(&self, name: &str) -> Option<&BlockResidual> {
        self.blocks.iter().find(|b| b.block == name)
    }
}

/// Unscaled KKT residuals of a primal-dual point, grouped by block.
pub fn kkt_residuals(program: &QuadraticProgram, sol: &QpSolution) -> KktReport {
    let n = program.num_vars();
    if n == 0 && program.rows.is_empty() {
        return KktReport::default();
    }
    let mut blocks: Vec<BlockResidual> = program
        .blocks
        .iter()
        .map(|b| BlockResidual {
            block: b.clone(),
            ..Default::default()
        })
        .collect();
    let x = &sol.x;
    let mut grad: Vec<f64> = program.linear.clone();
    for &(i, j, v) in &program.quad {
        if i == j {
            grad[i] += v * x[i];
        } else {
            grad[i] += v * x[j];
            grad[j] += v * x[i];
        }
    }
    for (row, &y) in program.rows.iter().zip(&sol.row_duals) {
        let b = &mut blocks[row.block];
        let act: f64 = row.coeffs.iter().map(|(j, c)| c * x[*j]).sum();
        let slack = row.rhs - act;
        match row.relation {
            Relation::Eq => b.primal = b.primal.max(slack.abs()),
            Relation::Le => {
                b.primal = b.primal.max(-slack);
                b.dual = b.dual.max(-y);
                b.complementarity = b.complementarity.max((y * slack).abs());
            }
        }
        for &(j, c) in &row.coeffs {
            grad[j] += y * c;
        }
    }
    for j in 0..n {
        let b = &mut blocks[program.var_block[j]];
        let (ml, mu) = (sol.lower_duals[j], sol.upper_duals[j]);
        b.stationarity = b.stationarity.max((grad[j] - ml + mu).abs());
        b.dual = b.dual.max(-ml).max(-mu);
        if program.lower[j].is_finite() {
            b.primal = b.primal.max(program.lower[j] - x[j]);
            b.complementarity = b.complementarity.max((ml * (x[j] - program.lower[j])).abs());
        }
        if program.upper[j].is_finite() {
            b.primal = b.primal.max(x[j] - program.upper[j]);
            b.complementarity = b.complementarity.max((mu * (program.upper[j] - x[j])).abs());
        }
    }
    KktReport { blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{replicate_uniform, solve_mcp_withholding, solve_p_equilibrium, solve_pi_equilibrium};
    use crate::fixtures;
    use crate::social_optimum::{build_so, solve_so};

    fn p() -> MechanismSpec {
        MechanismSpec::new(MechanismKind::P)
    }

    /// SO decisions dressed as a penalty profile with zero lost-load shares.
    fn as_penalty(profile: &DecisionProfile) -> DecisionProfile {
        let mut out = profile.clone();
        let grid = out.grid;
        for d in &mut out.investors {
            d.lost_load = Some(vec![vec![0.0; grid.hours_per_day]; grid.scenario_count]);
        }
        out
    }

    #[test]
    fn source_is_independent() {
        let src = include_str!("verification.rs");
        let body = &src[..src.find("#[cfg(test)]").unwrap()];
        for banned in ["equilibrium::", "social_optimum::", "assembly::", "network::"] {
            assert!(!body.contains(&format!("crate::{banned}")), "{banned}");
            assert!(!body.contains(&format!("super::{banned}")), "{banned}");
        }
    }

    #[test]
    fn penalty_equilibrium_is_certified() {
        let inst = fixtures::toy_b();
        let r = solve_p_equilibrium(&inst).unwrap();
        let br = best_response(&inst, &p(), &r.profile, "vre").unwrap();
        assert!(br.gain.abs() <= 1e-3, "{}", br.gain);
        assert!((br.current_profit - 450.0).abs() < 1e-3);
        assert!(certify(&inst, &p(), &r.profile, DEFAULT_TOL).unwrap().pass);
    }

    #[test]
    fn optimum_is_not_a_penalty_equilibrium() {
        let inst = fixtures::toy_b();
        let so = solve_so(&inst).unwrap();
        let profile = as_penalty(&so.profile);
        let cert = certify(&inst, &p(), &profile, DEFAULT_TOL).unwrap();
        assert!(!cert.pass);
        assert!((cert.epsilon - 450.0).abs() < 1e-2, "{}", cert.epsilon);
        let br = best_response(&inst, &p(), &profile, "vre").unwrap();
        let cap = br.decision.power_capacity();
        assert!((cap - 30.0).abs() < 1e-4, "{cap}");
    }

    #[test]
    fn zero_capacity_deviates() {
        let inst = fixtures::toy_b();
        let mut profile = as_penalty(&solve_so(&inst).unwrap().profile);
        profile.investors[0].resource = ResourceDecision::Vre {
            capacity: 0.0,
            market: vec![vec![0.0]],
            curtailment: vec![vec![0.0]],
        };
        // Band forces 20 MW of allocated lost load at zero capacity.
        profile.investors[0].lost_load = Some(vec![vec![20.0]]);
        let br = best_response(&inst, &p(), &profile, "vre").unwrap();
        assert!(br.gain > 0.0);
        let (x, f) = best_response_grid(&inst, &p(), &profile, "vre", GRID_POINTS).unwrap();
        assert!((x - 30.0).abs() < 1e-2 && (f - 450.0).abs() < 1e-2);
    }

    #[test]
    fn incentive_equilibrium_is_certified() {
        let inst = fixtures::toy_b();
        let r = solve_pi_equilibrium(&inst).unwrap();
        let cert = certify(&inst, &MechanismSpec::new(MechanismKind::Pi), &r.profile, DEFAULT_TOL).unwrap();
        assert!(cert.pass, "{cert:?}");
        assert!((cert.investors[0].profit - 900.0).abs() < 1e-3);
    }

    #[test]
    fn grid_agrees_with_qp() {
        let inst = replicate_uniform(&fixtures::toy_b(), 2).unwrap();
        let r = solve_p_equilibrium(&inst).unwrap();
        let qp_br = best_response(&inst, &p(), &r.profile, "vre-1").unwrap();
        let (x, f) = best_response_grid(&inst, &p(), &r.profile, "vre-1", GRID_POINTS).unwrap();
        let step = 100.0 / GRID_POINTS as f64;
        assert!((x - qp_br.decision.power_capacity()).abs() <= 2.0 * step);
        assert!((f - qp_br.profit).abs() < 1e-2);
        assert!(certify_with(&inst, &p(), &r.profile, DEFAULT_TOL, CertifyMethod::GridSearch).unwrap().pass);
    }

    #[test]
    fn mcp_is_rejected() {
        let inst = fixtures::toy_b();
        let so = solve_so(&inst).unwrap();
        let err = certify(&inst, &MechanismSpec::new(MechanismKind::Mcp), &so.profile, DEFAULT_TOL);
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn withholding_certificate() {
        let eps = vec![vec![0.01]];
        let inst = fixtures::toy_b();
        let r = solve_mcp_withholding(&inst, Some(&eps)).unwrap();
        let bound = r.withholding.as_ref().unwrap().epsilon_bound;
        let cert = mcp_withholding_check(&inst, &r.profile, bound, DEFAULT_TOL).unwrap();
        assert!(cert.pass, "{cert:?}");
        assert!(cert.epsilon <= 10.0 + 1e-6);
        assert!((cert.epsilon - 9.7).abs() < 1e-3, "{}", cert.epsilon);

        let low = fixtures::toy_b_with(1, 200.0);
        let r = solve_mcp_withholding(&low, Some(&eps)).unwrap();
        let cert = mcp_withholding_check(&low, &r.profile, r.withholding.unwrap().epsilon_bound, DEFAULT_TOL).unwrap();
        assert!(!cert.pass);
        assert_eq!(cert.withholding_condition, Some(false));
    }

    #[test]
    fn saturating_supply_earns_less() {
        // At 50 MW the price falls to the conventional marginal cost.
        let inst = fixtures::toy_b();
        let p = withholding_price(&inst.scenarios[0], 0, 80.0, 1000.0, 50.0);
        assert!((p - 35.0).abs() < 1e-12);
        assert!(p * 50.0 - 30.0 * 50.0 < 970.0 * 19.99);
    }

    #[test]
    fn optimum_residuals_are_small() {
        let inst = fixtures::toy_b();
        let program = build_so(&inst).unwrap();
        let sol = qp::solve(&program, &QpSettings::default()).unwrap();
        let report = kkt_residuals(&program, &sol);
        assert!(report.max_residual() <= 1e-6, "{report:?}");

        let mut bad = sol.clone();
        let j = (0..program.num_vars()).find(|&j| program.blocks[program.var_block[j]] == "cer_output").unwrap();
        bad.x[j] += 1.0;
        let report = kkt_residuals(&program, &bad);
        assert!(report.block("cer_output").unwrap().stationarity > 0.4);
    }

    #[test]
    fn empty_program_has_empty_report() {
        let program = QuadraticProgram::new();
        let sol = qp::solve(&program, &QpSettings::default()).unwrap();
        assert!(kkt_residuals(&program, &sol).blocks.is_empty());
    }
}
