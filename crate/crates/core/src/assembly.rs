//! Variable and constraint blocks shared by the system-cost and potential
//! programs.

use crate::model::{
    zeros, ChargeOverlap, Hourly, InvestorDecision, InvestorSpec, ResourceDecision, ScenarioSet,
};
use crate::error::Result;
use crate::qp::{self, QpSettings, QpSolution, QuadraticProgram, Relation};

pub(crate) type Index = Vec<Vec<usize>>;

pub(crate) enum ResourceVars {
    Vre { x: usize, mk: Index, cur: Index },
    Es { s: usize, p: usize, ch: Index, dis: Index, e: Index },
}

pub(crate) struct InvestorVars {
    pub res: ResourceVars,
    pub sh: Option<Index>,
}

fn grid_vars(qp: &mut QuadraticProgram, block: &str, scenarios: &ScenarioSet, hi: impl Fn(usize, usize) -> f64) -> Index {
    (0..scenarios.len())
        .map(|w| (0..scenarios.hours()).map(|t| qp.add_var(block, 0.0, hi(w, t))).collect())
        .collect()
}

/// Add one investor's variables, capital and operating costs and resource
/// constraints. With `lost_load` the investor also gets a share of lost load
/// priced at `voll`.
pub(crate) fn add_investor(
    qp: &mut QuadraticProgram,
    spec: &InvestorSpec,
    scenarios: &ScenarioSet,
    lost_load: Option<f64>,
) -> InvestorVars {
    let inf = f64::INFINITY;
    let res = match spec {
        InvestorSpec::Vre(v) => {
            let x = qp.add_var("vre_capacity", 0.0, inf);
            qp.add_linear(x, v.kappa * v.capacity_cost);
            let mk = grid_vars(qp, "vre_market", scenarios, |_, _| inf);
            let cur = grid_vars(qp, "vre_curtail", scenarios, |_, _| inf);
            for (w, s) in scenarios.iter().enumerate() {
                let nu = &s.capacity_factors[&v.capacity_factor_key];
                for t in 0..s.hours() {
                    qp.add_row(
                        "vre_output",
                        vec![(mk[w][t], 1.0), (cur[w][t], 1.0), (x, -nu[t])],
                        Relation::Eq,
                        0.0,
                    );
                }
            }
            ResourceVars::Vre { x, mk, cur }
        }
        InvestorSpec::Es(e) => {
            let s = qp.add_var("es_energy", 0.0, inf);
            let p = qp.add_var("es_power", 0.0, inf);
            qp.add_linear(s, e.kappa * e.energy_cost);
            qp.add_linear(p, e.kappa * e.power_cost);
            qp.add_row("es_duration", vec![(p, e.u_min), (s, -1.0)], Relation::Le, 0.0);
            qp.add_row("es_duration", vec![(s, 1.0), (p, -e.u_max)], Relation::Le, 0.0);
            let ch = grid_vars(qp, "es_charge", scenarios, |_, _| inf);
            let dis = grid_vars(qp, "es_discharge", scenarios, |_, _| inf);
            let soc = grid_vars(qp, "es_soc", scenarios, |_, _| inf);
            for (w, sc) in scenarios.iter().enumerate() {
                let hours = sc.hours();
                for t in 0..hours {
                    qp.add_linear(ch[w][t], sc.probability * e.charge_cost);
                    qp.add_linear(dis[w][t], sc.probability * e.discharge_cost);
                    qp.add_row("es_power_limit", vec![(ch[w][t], 1.0), (p, -1.0)], Relation::Le, 0.0);
                    qp.add_row("es_power_limit", vec![(dis[w][t], 1.0), (p, -1.0)], Relation::Le, 0.0);
                    qp.add_row("es_energy_limit", vec![(soc[w][t], 1.0), (s, -1.0)], Relation::Le, 0.0);
                    let prev = soc[w][(t + hours - 1) % hours];
                    let mut row = vec![(soc[w][t], 1.0), (ch[w][t], -e.eta_c), (dis[w][t], 1.0 / e.eta_d)];
                    if prev != soc[w][t] {
                        row.push((prev, -1.0));
                    } else {
                        // One-hour day: the level returns to itself.
                        row[0].1 = 0.0;
                    }
                    qp.add_row("es_soc", row, Relation::Eq, 0.0);
                }
            }
            ResourceVars::Es { s, p, ch, dis, e: soc }
        }
    };
    let sh = lost_load.map(|voll| {
        let idx = grid_vars(qp, "lost_load_share", scenarios, |w, t| scenarios[w].demand[t]);
        for (w, s) in scenarios.iter().enumerate() {
            for t in 0..s.hours() {
                qp.add_linear(idx[w][t], s.probability * voll);
            }
        }
        idx
    });
    InvestorVars { res, sh }
}

/// Solve `qp`, then pick the optimal point of least norm in the investors'
/// operating variables so that equally cheap dispatches resolve the same way
/// in every program.
pub(crate) fn solve_selected(qp: &QuadraticProgram, investors: &[InvestorVars], settings: &QpSettings) -> Result<QpSolution> {
    let sol = qp::solve(qp, settings)?;
    let select: Vec<usize> = investors.iter().flat_map(InvestorVars::operating).collect();
    qp::select_min_norm(qp, &sol, &select, settings)
}

impl InvestorVars {
    fn operating(&self) -> Vec<usize> {
        let flat = |idx: &Index| idx.iter().flatten().copied().collect::<Vec<_>>();
        match &self.res {
            ResourceVars::Vre { mk, cur, .. } => [flat(mk), flat(cur)].concat(),
            ResourceVars::Es { ch, dis, e, .. } => [flat(ch), flat(dis), flat(e)].concat(),
        }
    }

    /// Terms of net market supply at `(w, t)`.
    pub fn net_terms(&self, w: usize, t: usize) -> Vec<(usize, f64)> {
        match &self.res {
            ResourceVars::Vre { mk, .. } => vec![(mk[w][t], 1.0)],
            ResourceVars::Es { ch, dis, .. } => vec![(dis[w][t], 1.0), (ch[w][t], -1.0)],
        }
    }

    /// Terms of net supply plus the lost-load share.
    pub fn effective_terms(&self, w: usize, t: usize) -> Vec<(usize, f64)> {
        let mut terms = self.net_terms(w, t);
        if let Some(sh) = &self.sh {
            terms.push((sh[w][t], 1.0));
        }
        terms
    }

    pub fn extract(&self, id: &str, x: &[f64]) -> InvestorDecision {
        let get = |idx: &Index| -> Hourly { idx.iter().map(|r| r.iter().map(|&j| x[j].max(0.0)).collect()).collect() };
        let resource = match &self.res {
            ResourceVars::Vre { x: cap, mk, cur } => ResourceDecision::Vre {
                capacity: x[*cap].max(0.0),
                market: get(mk),
                curtailment: get(cur),
            },
            ResourceVars::Es { s, p, ch, dis, e } => ResourceDecision::Es {
                energy_capacity: x[*s].max(0.0),
                power_capacity: x[*p].max(0.0),
                charge: get(ch),
                discharge: get(dis),
                soc: get(e),
            },
        };
        InvestorDecision {
            id: id.to_string(),
            resource,
            lost_load: self.sh.as_ref().map(get),
        }
    }
}

/// Conventional output per `(w, t)` in `[0, cap]` with cost
/// `ρ(½ a p² + b p)`.
pub(crate) fn add_cer(
    qp: &mut QuadraticProgram,
    scenarios: &ScenarioSet,
    cap: impl Fn(usize, usize) -> f64,
    slope: impl Fn(usize, usize) -> f64,
    intercept: impl Fn(usize, usize) -> f64,
) -> Index {
    let idx = grid_vars(qp, "cer_output", scenarios, cap);
    for (w, s) in scenarios.iter().enumerate() {
        for t in 0..s.hours() {
            let j = idx[w][t];
            qp.add_quad(j, j, s.probability * slope(w, t));
            qp.add_linear(j, s.probability * intercept(w, t));
        }
    }
    idx
}

/// Operator-held lost load per `(w, t)` in `[0, limit]` priced at `voll`.
pub(crate) fn add_shed(
    qp: &mut QuadraticProgram,
    scenarios: &ScenarioSet,
    limit: impl Fn(usize, usize) -> f64,
    voll: f64,
) -> Index {
    let idx = grid_vars(qp, "lost_load", scenarios, limit);
    for (w, s) in scenarios.iter().enumerate() {
        for t in 0..s.hours() {
            qp.add_linear(idx[w][t], s.probability * voll);
        }
    }
    idx
}

pub(crate) fn read(idx: &Index, x: &[f64]) -> Hourly {
    idx.iter().map(|r| r.iter().map(|&j| x[j]).collect()).collect()
}

pub(crate) fn read_clamped(idx: &Index, x: &[f64]) -> Hourly {
    idx.iter().map(|r| r.iter().map(|&j| x[j].max(0.0)).collect()).collect()
}

/// Hours where a storage unit charges and discharges at once.
pub(crate) fn simultaneous_charge(decisions: &[InvestorDecision]) -> Vec<ChargeOverlap> {
    let mut out = Vec::new();
    for d in decisions {
        if let ResourceDecision::Es { charge, discharge, .. } = &d.resource {
            for (w, (c, dz)) in charge.iter().zip(discharge).enumerate() {
                for (t, (a, b)) in c.iter().zip(dz).enumerate() {
                    if a * b > 1e-8 {
                        out.push(ChargeOverlap {
                            investor: d.id.clone(),
                            scenario: w,
                            hour: t,
                            product: a * b,
                        });
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn empty(scenarios: &ScenarioSet) -> Hourly {
    zeros(scenarios.len(), scenarios.hours())
}
