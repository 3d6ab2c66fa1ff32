//! Bus-indexed markets with DC power flow.
//!
//! A [`GridTopology`] splits the demand and the conventional fleet of a
//! [`MarketInstance`] across buses. A bus holding a share `s` of the fleet
//! has capacity `s·γp̄` and slope `a/s`, so a fully meshed network with
//! unlimited lines reproduces the single-bus merit order exactly.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::assembly::{self, Index, InvestorVars};
use crate::equilibrium::{InvestorProfit, SPLIT_REGULARIZER};
use crate::error::{Error, Result};
use crate::model::{
    investment_cost, operation_cost, DecisionProfile, Hourly, MarketInstance, MechanismKind, MechanismSpec,
};
use crate::qp::{QpSettings, QpSolution, QuadraticProgram, Relation};
use crate::social_optimum::require_optimal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    /// Fraction of system demand located here.
    pub demand_share: f64,
    /// Fraction of the conventional fleet located here.
    pub cer_share: f64,
    /// Added to the conventional intercept at this bus, $/MWh.
    #[serde(default)]
    pub intercept_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: String,
    pub to: String,
    /// Per-unit reactance.
    pub reactance: f64,
    /// Flow limit in MW; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTopology {
    /// The first bus is the angle reference.
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<Line>,
    /// Bus of every investor, by id.
    pub investor_bus: BTreeMap<String, String>,
    /// Per-bus price uplift under the uplift mechanism, $/MWh.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bus_uplift: BTreeMap<String, f64>,
}

impl GridTopology {
    /// One bus holding everything.
    pub fn single_bus(inst: &MarketInstance) -> Self {
        Self {
            buses: vec![Bus {
                id: "bus".into(),
                demand_share: 1.0,
                cer_share: 1.0,
                intercept_offset: 0.0,
            }],
            lines: Vec::new(),
            investor_bus: inst.investors.iter().map(|s| (s.id().to_string(), "bus".to_string())).collect(),
            bus_uplift: BTreeMap::new(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn bus_index(&self, id: &str) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::Network(format!("unknown bus `{id}`")))
    }

    /// Check shares, reactances, connectivity and the investor map.
    pub fn validate(&self, inst: &MarketInstance) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::Network("no buses".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.buses {
            if !seen.insert(&b.id) {
                return Err(Error::Network(format!("duplicate bus `{}`", b.id)));
            }
            if !(b.demand_share >= 0.0 && b.cer_share >= 0.0) || !b.intercept_offset.is_finite() {
                return Err(Error::Network(format!("bus `{}` has invalid shares", b.id)));
            }
        }
        for (name, total) in [
            ("demand", self.buses.iter().map(|b| b.demand_share).sum::<f64>()),
            ("conventional", self.buses.iter().map(|b| b.cer_share).sum::<f64>()),
        ] {
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Network(format!("{name} shares sum to {total}, not 1")));
            }
        }
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let (a, b) = (self.bus_index(&l.from)?, self.bus_index(&l.to)?);
            if a == b {
                return Err(Error::Network(format!("line `{}`-`{}` is a self loop", l.from, l.to)));
            }
            if !(l.reactance > 0.0) || !l.reactance.is_finite() {
                return Err(Error::Network(format!("line `{}`-`{}` needs a positive reactance", l.from, l.to)));
            }
            if let Some(f) = l.limit {
                if !(f >= 0.0) {
                    return Err(Error::Network(format!("line `{}`-`{}` has a negative limit", l.from, l.to)));
                }
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut reached = vec![false; n];
        let mut queue = VecDeque::from([0]);
        reached[0] = true;
        while let Some(k) = queue.pop_front() {
            for &m in &adj[k] {
                if !reached[m] {
                    reached[m] = true;
                    queue.push_back(m);
                }
            }
        }
        if let Some(k) = reached.iter().position(|r| !r) {
            return Err(Error::Network(format!("bus `{}` is disconnected", self.buses[k].id)));
        }
        for spec in &inst.investors {
            let bus = self
                .investor_bus
                .get(spec.id())
                .ok_or_else(|| Error::Network(format!("investor `{}` has no bus", spec.id())))?;
            self.bus_index(bus)?;
        }
        for id in self.investor_bus.keys() {
            inst.investor(id).map_err(|_| Error::Network(format!("bus map names unknown investor `{id}`")))?;
        }
        for (bus, v) in &self.bus_uplift {
            self.bus_index(bus)?;
            if !(*v >= 0.0) {
                return Err(Error::Network(format!("uplift at bus `{bus}` must be non-negative")));
            }
        }
        Ok(())
    }

    fn uplift(&self, k: usize) -> f64 {
        self.bus_uplift.get(&self.buses[k].id).copied().unwrap_or(0.0)
    }
}

/// Angles, injections and line flows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    /// Per bus, radians.
    pub angles: Vec<Hourly>,
    /// Net injection per bus, MW.
    pub injections: Vec<Hourly>,
    /// Per line in `from → to` direction, MW.
    pub line_flows: Vec<Hourly>,
}

impl FlowState {
    /// Largest disagreement between the reported flows and injections and
    /// those implied by the angles.
    pub fn physics_residual(&self, topo: &GridTopology) -> Result<f64> {
        let mut worst = 0.0f64;
        let mut implied: Vec<Hourly> = self
            .injections
            .iter()
            .map(|h| h.iter().map(|r| vec![0.0; r.len()]).collect())
            .collect();
        for (l, line) in topo.lines.iter().enumerate() {
            let (a, b) = (topo.bus_index(&line.from)?, topo.bus_index(&line.to)?);
            for (w, row) in self.line_flows[l].iter().enumerate() {
                for (t, f) in row.iter().enumerate() {
                    let phys = (self.angles[a][w][t] - self.angles[b][w][t]) / line.reactance;
                    worst = worst.max((phys - f).abs());
                    implied[a][w][t] += phys;
                    implied[b][w][t] -= phys;
                }
            }
        }
        for (inj, imp) in self.injections.iter().zip(&implied) {
            for (ra, rb) in inj.iter().zip(imp) {
                for (x, y) in ra.iter().zip(rb) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Solution of a networked program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSolution {
    pub mechanism: Option<MechanismKind>,
    pub bus_ids: Vec<String>,
    /// Conventional output and lost load summed over buses.
    pub profile: DecisionProfile,
    pub bus_cer: Vec<Hourly>,
    /// Lost load per bus, operator-held plus allocated shares.
    pub bus_shed: Vec<Hourly>,
    pub bus_prices: Vec<Hourly>,
    pub flow: FlowState,
    pub system_cost: f64,
    /// Investor profits under a penalty mechanism.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profits: Vec<InvestorProfit>,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    So,
    Potential { weight: f64, uplift: bool },
}

struct Layout {
    investors: Vec<InvestorVars>,
    home: Vec<usize>,
    cer: Vec<Option<Index>>,
    shed: Vec<Option<Index>>,
    angles: Vec<Index>,
    flows: Vec<Index>,
    balance: Vec<Index>,
}

struct BusParams {
    demand: f64,
    cap: f64,
    slope: f64,
    intercept: f64,
}

fn bus_params(inst: &MarketInstance, topo: &GridTopology, k: usize, w: usize, t: usize) -> BusParams {
    let s = &inst.scenarios[w];
    let b = &topo.buses[k];
    BusParams {
        demand: b.demand_share * s.demand[t],
        cap: b.cer_share * inst.system.remaining_capacity(),
        slope: if b.cer_share > 0.0 { s.slope[t] / b.cer_share } else { f64::INFINITY },
        intercept: s.intercept[t] + b.intercept_offset,
    }
}

fn assemble(inst: &MarketInstance, topo: &GridTopology, mode: Mode) -> Result<(QuadraticProgram, Layout)> {
    inst.validate()?;
    topo.validate(inst)?;
    let sc = &inst.scenarios;
    let hours = sc.hours();
    let nb = topo.buses.len();
    let penalty = matches!(mode, Mode::Potential { .. });
    let mut qp = QuadraticProgram::new();
    let lost = penalty.then_some(inst.system.voll);
    let investors: Vec<InvestorVars> =
        inst.investors.iter().map(|spec| assembly::add_investor(&mut qp, spec, sc, lost)).collect();
    let home: Vec<usize> = inst
        .investors
        .iter()
        .map(|s| topo.bus_index(&topo.investor_bus[s.id()]))
        .collect::<Result<_>>()?;
    let hosts = |k: usize| home.iter().any(|&h| h == k);
    let mut cer = Vec::with_capacity(nb);
    let mut shed = Vec::with_capacity(nb);
    for k in 0..nb {
        let shift = match mode {
            Mode::Potential { uplift: true, .. } => topo.uplift(k),
            _ => 0.0,
        };
        if topo.buses[k].cer_share > 0.0 {
            cer.push(Some(assembly::add_cer(
                &mut qp,
                sc,
                |w, t| bus_params(inst, topo, k, w, t).cap,
                |w, t| bus_params(inst, topo, k, w, t).slope,
                |w, t| bus_params(inst, topo, k, w, t).intercept + shift,
            )));
        } else {
            if penalty && hosts(k) {
                return Err(Error::Network(format!(
                    "bus `{}` hosts investors but no conventional capacity, so it has no price function",
                    topo.buses[k].id
                )));
            }
            cer.push(None);
        }
        if !penalty || !hosts(k) {
            shed.push(Some(assembly::add_shed(
                &mut qp,
                sc,
                |w, t| bus_params(inst, topo, k, w, t).demand,
                inst.system.voll,
            )));
        } else {
            shed.push(None);
        }
    }
    let angles: Vec<Index> = (0..nb)
        .map(|k| {
            let bound = if k == 0 { 0.0 } else { f64::INFINITY };
            (0..sc.len()).map(|_| (0..hours).map(|_| qp.add_var("angle", -bound, bound)).collect()).collect()
        })
        .collect();
    let mut flows = Vec::with_capacity(topo.lines.len());
    for line in &topo.lines {
        let (a, b) = (topo.bus_index(&line.from)?, topo.bus_index(&line.to)?);
        let lim = line.limit.unwrap_or(f64::INFINITY);
        let idx: Index = (0..sc.len())
            .map(|w| {
                (0..hours)
                    .map(|t| {
                        let f = qp.add_var("line_flow", -lim, lim);
                        let x = line.reactance;
                        qp.add_row(
                            "dc_flow",
                            vec![(f, 1.0), (angles[a][w][t], -1.0 / x), (angles[b][w][t], 1.0 / x)],
                            Relation::Eq,
                            0.0,
                        );
                        f
                    })
                    .collect()
            })
            .collect();
        flows.push(idx);
    }
    let mut balance = Vec::with_capacity(nb);
    for k in 0..nb {
        let mut rows = Vec::with_capacity(sc.len());
        for (w, s) in sc.iter().enumerate() {
            let mut hr = Vec::with_capacity(hours);
            for t in 0..hours {
                let p = bus_params(inst, topo, k, w, t);
                let mut coeffs: Vec<(usize, f64)> = Vec::new();
                let local: Vec<usize> = (0..investors.len()).filter(|&i| home[i] == k).collect();
                for &i in &local {
                    let terms = if penalty { investors[i].effective_terms(w, t) } else { investors[i].net_terms(w, t) };
                    coeffs.extend(terms);
                }
                if let Some(c) = &cer[k] {
                    coeffs.push((c[w][t], 1.0));
                }
                if let Some(sh) = &shed[k] {
                    coeffs.push((sh[w][t], 1.0));
                }
                for (l, line) in topo.lines.iter().enumerate() {
                    if line.from == topo.buses[k].id {
                        coeffs.push((flows[l][w][t], -1.0));
                    } else if line.to == topo.buses[k].id {
                        coeffs.push((flows[l][w][t], 1.0));
                    }
                }
                hr.push(qp.add_row("balance", coeffs, Relation::Eq, p.demand));
                if let Mode::Potential { weight, .. } = mode {
                    if weight > 0.0 {
                        for &i in &local {
                            qp.add_square(&investors[i].effective_terms(w, t), weight * s.probability * p.slope);
                        }
                    } else if local.len() > 1 {
                        let n = local.len() as f64;
                        let shares: Vec<usize> =
                            local.iter().map(|&i| investors[i].sh.as_ref().expect("penalty shares")[w][t]).collect();
                        for a in 0..shares.len() {
                            let terms: Vec<(usize, f64)> = shares
                                .iter()
                                .enumerate()
                                .map(|(b, &j)| (j, if a == b { 1.0 } else { 0.0 } - 1.0 / n))
                                .collect();
                            qp.add_square(&terms, 2.0 * SPLIT_REGULARIZER * s.probability);
                        }
                    }
                }
            }
            rows.push(hr);
        }
        balance.push(rows);
    }
    Ok((
        qp,
        Layout {
            investors,
            home,
            cer,
            shed,
            angles,
            flows,
            balance,
        },
    ))
}

/// The networked system-cost program.
pub fn build_so_network(inst: &MarketInstance, topo: &GridTopology) -> Result<QuadraticProgram> {
    assemble(inst, topo, Mode::So).map(|(qp, _)| qp)
}

/// Networked social optimum with nodal marginal-cost prices.
pub fn solve_so_network(inst: &MarketInstance, topo: &GridTopology) -> Result<NetworkSolution> {
    let (qp, layout) = assemble(inst, topo, Mode::So)?;
    let sol = assembly::solve_selected(&qp, &layout.investors, &QpSettings::default())?;
    require_optimal(&sol)?;
    Ok(extract(inst, topo, &layout, &sol, None))
}

/// Networked equilibrium under the penalty mechanisms: system cost plus,
/// without a supply incentive, `½ a_n Ã_i²` for every investor `i` at bus
/// `n`. Nodal prices follow each bus's conventional marginal cost, plus
/// the bus uplift under the uplift mechanism.
pub fn solve_network_equilibrium(
    inst: &MarketInstance,
    topo: &GridTopology,
    mechanism: MechanismKind,
) -> Result<NetworkSolution> {
    if !mechanism.has_penalty() {
        return Err(Error::Unsupported("marginal-cost pricing has no networked equilibrium here".into()));
    }
    if mechanism != MechanismKind::Piu && !topo.bus_uplift.is_empty() {
        return Err(Error::InvalidParameter("bus uplift applies only under the uplift mechanism".into()));
    }
    let inst = inst.with_mechanism(MechanismSpec::new(mechanism))?;
    let mode = Mode::Potential {
        weight: if mechanism.has_incentive() { 0.0 } else { 1.0 },
        uplift: mechanism == MechanismKind::Piu,
    };
    let (qp, layout) = assemble(&inst, topo, mode)?;
    let sol = assembly::solve_selected(&qp, &layout.investors, &QpSettings::default())?;
    require_optimal(&sol)?;
    Ok(extract(&inst, topo, &layout, &sol, Some(mechanism)))
}

/// Penalty-mechanism equilibrium on a network.
pub fn solve_network_p_equilibrium(inst: &MarketInstance, topo: &GridTopology) -> Result<NetworkSolution> {
    solve_network_equilibrium(inst, topo, MechanismKind::P)
}

fn extract(
    inst: &MarketInstance,
    topo: &GridTopology,
    layout: &Layout,
    sol: &QpSolution,
    mechanism: Option<MechanismKind>,
) -> NetworkSolution {
    let x = &sol.x;
    let sc = &inst.scenarios;
    let grid = inst.grid();
    let nb = topo.buses.len();
    let investors: Vec<_> = inst
        .investors
        .iter()
        .zip(&layout.investors)
        .map(|(s, v)| v.extract(s.id(), x))
        .collect();
    let bus_cer: Vec<Hourly> = (0..nb)
        .map(|k| match &layout.cer[k] {
            Some(idx) => {
                let mut h = assembly::read_clamped(idx, x);
                for (w, row) in h.iter_mut().enumerate() {
                    for (t, v) in row.iter_mut().enumerate() {
                        *v = v.min(bus_params(inst, topo, k, w, t).cap);
                    }
                }
                h
            }
            None => assembly::empty(sc),
        })
        .collect();
    let bus_shed: Vec<Hourly> = (0..nb)
        .map(|k| {
            let mut h = layout.shed[k].as_ref().map_or_else(|| assembly::empty(sc), |idx| assembly::read_clamped(idx, x));
            for (i, d) in investors.iter().enumerate() {
                if layout.home[i] == k {
                    for (w, t) in grid.cells() {
                        h[w][t] += d.lost_load_at(w, t);
                    }
                }
            }
            h
        })
        .collect();
    let mut cer_output = assembly::empty(sc);
    let mut shed = assembly::empty(sc);
    for k in 0..nb {
        for (w, t) in grid.cells() {
            cer_output[w][t] += bus_cer[k][w][t];
            shed[w][t] += bus_shed[k][w][t];
        }
    }
    let bus_prices: Vec<Hourly> = (0..nb)
        .map(|k| {
            let mut h = assembly::empty(sc);
            for (w, t) in grid.cells() {
                let p = bus_params(inst, topo, k, w, t);
                h[w][t] = match (mechanism, &layout.cer[k]) {
                    (Some(m), Some(_)) => {
                        let up = if m == MechanismKind::Piu { topo.uplift(k) } else { 0.0 };
                        p.slope * bus_cer[k][w][t] + p.intercept + up
                    }
                    _ => -sol.row_duals[layout.balance[k][w][t]] / sc[w].probability,
                };
            }
            h
        })
        .collect();
    let read = |idx: &Index| assembly::read(idx, x);
    let angles: Vec<Hourly> = layout.angles.iter().map(read).collect();
    let line_flows: Vec<Hourly> = layout.flows.iter().map(read).collect();
    let mut injections: Vec<Hourly> = vec![assembly::empty(sc); nb];
    for (l, line) in topo.lines.iter().enumerate() {
        let a = topo.bus_index(&line.from).expect("validated");
        let b = topo.bus_index(&line.to).expect("validated");
        for (w, t) in grid.cells() {
            injections[a][w][t] += line_flows[l][w][t];
            injections[b][w][t] -= line_flows[l][w][t];
        }
    }
    let mut cost: f64 = inst
        .investors
        .iter()
        .zip(&investors)
        .map(|(s, d)| investment_cost(s, d) + operation_cost(s, d, sc))
        .sum();
    for k in 0..nb {
        for (w, t) in grid.cells() {
            let p = bus_params(inst, topo, k, w, t);
            let g = bus_cer[k][w][t];
            let gen = if g > 0.0 { 0.5 * p.slope * g * g + p.intercept * g } else { 0.0 };
            cost += sc[w].probability * (gen + inst.system.voll * bus_shed[k][w][t]);
        }
    }
    let profits = match mechanism {
        Some(m) => inst
            .investors
            .iter()
            .zip(&investors)
            .enumerate()
            .map(|(i, (spec, d))| {
                let k = layout.home[i];
                let (mut revenue, mut penalty, mut bonus) = (0.0, 0.0, 0.0);
                for (w, t) in grid.cells() {
                    let rho = sc[w].probability;
                    let e = d.supply_with_lost_load(w, t);
                    revenue += rho * bus_prices[k][w][t] * e;
                    penalty += rho * inst.system.voll * d.lost_load_at(w, t);
                    if m.has_incentive() {
                        bonus += rho * 0.5 * bus_params(inst, topo, k, w, t).slope * e * e;
                    }
                }
                let inv = investment_cost(spec, d);
                let op = operation_cost(spec, d, sc);
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
            .collect(),
        None => Vec::new(),
    };
    NetworkSolution {
        mechanism,
        bus_ids: topo.buses.iter().map(|b| b.id.clone()).collect(),
        profile: DecisionProfile {
            grid,
            investors,
            cer_output,
            shed,
        },
        bus_cer,
        bus_shed,
        bus_prices,
        flow: FlowState {
            angles,
            injections,
            line_flows,
        },
        system_cost: cost,
        profits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_p_equilibrium;
    use crate::fixtures;
    use crate::social_optimum::solve_so;

    fn two_bus(inst: &MarketInstance, shares: [(f64, f64, f64); 2], limit: Option<f64>, homes: &[&str]) -> GridTopology {
        GridTopology {
            buses: shares
                .iter()
                .zip(["north", "south"])
                .map(|(&(d, c, off), id)| Bus {
                    id: id.into(),
                    demand_share: d,
                    cer_share: c,
                    intercept_offset: off,
                })
                .collect(),
            lines: vec![Line {
                from: "north".into(),
                to: "south".into(),
                reactance: 0.1,
                limit,
            }],
            investor_bus: inst.investors.iter().zip(homes).map(|(s, h)| (s.id().to_string(), h.to_string())).collect(),
            bus_uplift: BTreeMap::new(),
        }
    }

    #[test]
    fn single_bus_matches_plain_optimum() {
        let inst = fixtures::toy_b();
        let net = solve_so_network(&inst, &GridTopology::single_bus(&inst)).unwrap();
        let so = solve_so(&inst).unwrap();
        assert!((net.system_cost - so.system_cost).abs() <= 1e-6 * so.system_cost);
        assert!(net.profile.max_abs_difference(&so.profile).unwrap() < 1e-6);
        assert!((net.bus_prices[0][0][0] - so.prices[0][0]).abs() < 1e-6);
    }

    #[test]
    fn single_bus_matches_penalty_equilibrium() {
        let inst = fixtures::toy_b();
        let net = solve_network_p_equilibrium(&inst, &GridTopology::single_bus(&inst)).unwrap();
        let eq = solve_p_equilibrium(&inst).unwrap();
        assert!((net.profile.total_supply(0, 0, true) - 30.0).abs() < 1e-5);
        assert!((net.bus_prices[0][0][0] - eq.prices[0][0]).abs() < 1e-6);
        assert!((net.profits[0].profit - 450.0).abs() < 1e-3);
    }

    #[test]
    fn copper_plate_prices_agree() {
        let inst = fixtures::toy_b();
        let topo = two_bus(&inst, [(0.5, 0.5, 0.0), (0.5, 0.5, 0.0)], None, &["north"]);
        let net = solve_so_network(&inst, &topo).unwrap();
        let so = solve_so(&inst).unwrap();
        assert!((net.bus_prices[0][0][0] - net.bus_prices[1][0][0]).abs() < 1e-6);
        assert!((net.system_cost - so.system_cost).abs() <= 1e-5 * so.system_cost);
        assert!(net.flow.physics_residual(&topo).unwrap() < 1e-6);
    }

    #[test]
    fn islanded_buses_solve_separately() {
        let inst = fixtures::toy_b();
        let topo = two_bus(&inst, [(0.5, 0.5, 0.0), (0.5, 0.5, 0.0)], Some(0.0), &["north"]);
        let net = solve_so_network(&inst, &topo).unwrap();
        assert!(net.flow.line_flows[0][0][0].abs() < 1e-6);
        // South alone: 50 MW demand, 40 MW of capacity with cost ½·1·p² + 10p.
        assert!((net.bus_cer[1][0][0] - 40.0).abs() < 1e-5);
        assert!((net.bus_shed[1][0][0] - 10.0).abs() < 1e-5);
        // North: renewable at 30 $/MWh against marginal cost p + 10.
        assert!((net.bus_cer[0][0][0] - 20.0).abs() < 1e-5);
        assert!((net.profile.investors[0].net_supply(0, 0) - 30.0).abs() < 1e-5);
    }

    #[test]
    fn congestion_separates_prices() {
        let inst = fixtures::toy_b();
        let topo = two_bus(&inst, [(0.0, 0.5, 0.0), (1.0, 0.5, 40.0)], Some(30.0), &["south"]);
        let eq = solve_network_p_equilibrium(&inst, &topo).unwrap();
        assert!((eq.flow.line_flows[0][0][0] - 30.0).abs() < 1e-5);
        assert!(eq.bus_prices[1][0][0] - eq.bus_prices[0][0][0] > 1.0);
        assert!(eq.flow.physics_residual(&topo).unwrap() < 1e-6);
        // South with 30 MW imported: price (70 − A) + 50, band A ∈ [30, 70].
        let oracle = (0..=4000)
            .map(|k| 30.0 + k as f64 * 0.01)
            .max_by(|a, b| {
                let f = |x: f64| (120.0 - x) * x - 30.0 * x;
                f(*a).partial_cmp(&f(*b)).unwrap()
            })
            .unwrap();
        assert!((eq.profile.total_supply(0, 0, true) - oracle).abs() < 1e-2);
    }

    #[test]
    fn symmetric_buses_give_symmetric_equilibrium() {
        let inst = fixtures::toy_b_with(2, 1000.0);
        let topo = two_bus(&inst, [(0.5, 0.5, 0.0), (0.5, 0.5, 0.0)], None, &["north", "south"]);
        let eq = solve_network_p_equilibrium(&inst, &topo).unwrap();
        let a = eq.profile.investors[0].supply_with_lost_load(0, 0);
        let b = eq.profile.investors[1].supply_with_lost_load(0, 0);
        assert!((a - b).abs() < 1e-5, "{a} {b}");
    }

    #[test]
    fn invalid_topologies() {
        let inst = fixtures::toy_b();
        let mut topo = two_bus(&inst, [(0.5, 0.5, 0.0), (0.5, 0.5, 0.0)], None, &["north"]);
        topo.lines.clear();
        assert!(matches!(topo.validate(&inst), Err(Error::Network(_))));
        let mut topo = two_bus(&inst, [(0.5, 0.5, 0.0), (0.5, 0.5, 0.0)], None, &["north"]);
        topo.investor_bus.clear();
        assert!(topo.validate(&inst).is_err());
        let mut topo = two_bus(&inst, [(0.5, 0.5, 0.0), (0.5, 0.5, 0.0)], None, &["north"]);
        topo.lines[0].reactance = 0.0;
        assert!(topo.validate(&inst).is_err());
    }
}
