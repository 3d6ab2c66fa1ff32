//! Acceptance criteria, one line per criterion.
//!
//! Criterion 11 reads a market CSV named by `GRIDMECH_MARKET_DATA` and is
//! skipped when the variable is unset.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridmech::defaults::Pack;
use gridmech::equilibrium::{
    build_potential, mcp_competitive, replicate_uniform, solve_mcp_withholding, solve_p_equilibrium,
    solve_pi_equilibrium, solve_piu_equilibrium, solve_with_program, EqOptions, EquilibriumReport, Perturbation,
};
use gridmech::fixtures::{self, RandomOptions};
use gridmech::model::{DecisionProfile, MarketInstance, MechanismKind, MechanismSpec, Uplift};
use gridmech::network::{solve_network_p_equilibrium, solve_so_network, Bus, GridTopology, Line};
use gridmech::social_optimum::{apply_uplift, solve_so, zero_profit_check};
use gridmech::supply_curve::{self, ClusterPlan, MarketRecord, ProbabilityWeights};
use gridmech::surplus::{conservation_check, from_equilibrium, UpliftPayer};
use gridmech::sweep::{break_even_uplift, evaluate, run_sweep, SweepParam};
use gridmech::verification::{certify, kkt_residuals, mcp_withholding_check, DEFAULT_TOL};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, rel: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= rel * want.abs().max(1.0), || format!("{what}: got {got}, want {want}"))
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Penalty-mechanism total supply with `n` identical investors on TOY-B,
/// from the symmetric first-order condition `a(D − nA) + b − aA − c = 0`.
fn cournot_total(n: usize) -> f64 {
    let (a, b, d, c) = (0.5, 10.0, 100.0, 30.0);
    n as f64 * (a * d + b - c) / (a * (n as f64 + 1.0))
}

/// Monopoly supply on TOY-B by grid search over `[20, 100]`.
fn monopoly_grid() -> f64 {
    (0..=80_000)
        .map(|k| 20.0 + k as f64 * 1e-3)
        .map(|x| (x, (0.5 * (100.0 - x) + 10.0 - 30.0) * x))
        .fold((0.0, f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best })
        .0
}

fn c1_oracles() -> Outcome {
    let start = Instant::now();
    let tol = 1e-4;
    let inst = fixtures::toy_b();
    let so = solve_so(&inst).map_err(e)?;
    // Renewable cost 30 equals conventional marginal cost 0.5·p + 10 at p = 40.
    close(so.profile.total_supply(0, 0, false), 60.0, tol, "SO supply")?;
    close(so.system_cost, 30.0 * 60.0 + 0.25 * 1600.0 + 400.0, tol, "SO cost")?;
    let p = solve_p_equilibrium(&inst).map_err(e)?;
    close(p.profile.total_supply(0, 0, true), monopoly_grid(), tol, "P supply vs grid")?;
    close(p.profile.total_supply(0, 0, true), cournot_total(1), tol, "P supply")?;
    close(p.prices[0][0], 0.5 * 70.0 + 10.0, tol, "P price")?;
    close(p.total_profit(), (45.0 - 30.0) * 30.0, tol, "P profit")?;
    for n in [2, 4] {
        let r = solve_p_equilibrium(&replicate_uniform(&inst, n).map_err(e)?).map_err(e)?;
        close(r.profile.total_supply(0, 0, true), cournot_total(n), tol, &format!("P total N={n}"))?;
    }
    let pi = solve_pi_equilibrium(&inst).map_err(e)?;
    close(pi.profile.total_supply(0, 0, true), 60.0, tol, "PI supply")?;
    let piu = solve_piu_equilibrium(&inst, &Uplift::Uniform(5.0)).map_err(e)?;
    // 0.5·p + 15 = 30 at p = 30.
    close(piu.profile.total_supply(0, 0, true), 70.0, tol, "PIU supply")?;
    close(piu.system_cost, 30.0 * 70.0 + 0.25 * 900.0 + 300.0, tol, "PIU true cost")?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("all TOY-B oracles within 1e-4 in {took:?}"))
}

fn two_scenario_instances(count: usize) -> Vec<MarketInstance> {
    let opts = RandomOptions {
        max_scenarios: 2,
        ..RandomOptions::default()
    };
    (0..)
        .map(|seed| fixtures::random_instance(seed, opts))
        .filter(|i| i.scenarios.len() == 2)
        .take(count)
        .collect()
}

fn c2_zero_profit() -> Outcome {
    let mut worst = 0.0f64;
    let mut instances = vec![fixtures::toy_b()];
    instances.extend(two_scenario_instances(5));
    for (k, inst) in instances.iter().enumerate() {
        let so = solve_so(inst).map_err(e)?;
        let check = zero_profit_check(&so, inst);
        ensure(check.pass, || format!("instance {k}: {:?}", check.profits))?;
        let ratio = check.profits.iter().map(|p| p.1.abs()).fold(0.0, f64::max) / so.system_cost;
        worst = worst.max(ratio);
    }
    Ok(format!("6 instances, worst |profit|/cost = {worst:.2e}"))
}

fn strip_shares(p: &DecisionProfile) -> DecisionProfile {
    let mut out = p.clone();
    out.investors.iter_mut().for_each(|d| d.lost_load = None);
    out
}

fn c3_identities() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let inst = fixtures::random_instance(seed, RandomOptions::default());
        let so = solve_so(&inst).map_err(e)?;
        let pi = solve_pi_equilibrium(&inst).map_err(e)?;
        let d = so.profile.max_abs_difference(&strip_shares(&pi.profile)).map_err(e)?;
        ensure(d <= 1e-5, || format!("seed {seed}: PI vs SO differ by {d}"))?;
        let uplift = Uplift::Uniform(2.0 + seed as f64);
        let shifted = solve_so(&apply_uplift(&inst, &uplift).map_err(e)?).map_err(e)?;
        let piu = solve_piu_equilibrium(&inst, &uplift).map_err(e)?;
        let d2 = shifted.profile.max_abs_difference(&strip_shares(&piu.profile)).map_err(e)?;
        ensure(d2 <= 1e-5, || format!("seed {seed}: PIU vs shifted SO differ by {d2}"))?;
        worst = worst.max(d).max(d2);
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("10 instances, max-abs difference {worst:.2e}, {took:?}"))
}

fn c4_convergence() -> Outcome {
    let inst = fixtures::toy_b();
    let so = solve_so(&inst).map_err(e)?.system_cost;
    let mut gaps = Vec::new();
    for n in [1, 2, 4, 8] {
        let r = solve_p_equilibrium(&replicate_uniform(&inst, n).map_err(e)?).map_err(e)?;
        gaps.push(r.system_cost - so);
    }
    ensure(gaps.windows(2).all(|w| w[1] < w[0]), || format!("gaps not monotone: {gaps:?}"))?;
    ensure(gaps[3] < gaps[0] / 6.0, || format!("gap at N=8 {} not below 1/6 of {}", gaps[3], gaps[0]))?;
    Ok(format!("gaps {:?}", gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()))
}

fn c5_withholding() -> Outcome {
    let eps = vec![vec![0.01]];
    let inst = fixtures::toy_b();
    let r = solve_mcp_withholding(&inst, Some(&eps)).map_err(e)?;
    let info = r.withholding.as_ref().ok_or("no withholding info")?;
    close(info.threshold[0][0], (1.0 + 80.0 / 20.0) * (0.5 * 80.0 + 10.0), 1e-12, "threshold")?;
    let bound = info.epsilon_bound;
    let cert = mcp_withholding_check(&inst, &r.profile, bound, DEFAULT_TOL).map_err(e)?;
    ensure(cert.pass && cert.epsilon <= bound, || format!("certificate {cert:?}"))?;
    let epsilon = cert.epsilon;
    let low = fixtures::toy_b_with(1, 200.0);
    let r = solve_mcp_withholding(&low, Some(&eps)).map_err(e)?;
    let cert = mcp_withholding_check(&low, &r.profile, r.withholding.unwrap().epsilon_bound, DEFAULT_TOL).map_err(e)?;
    ensure(!cert.pass, || "certificate issued at VOLL 200".into())?;
    Ok(format!("epsilon {epsilon:.4} <= bound {bound}; withheld at VOLL 200"))
}

fn fixture_equilibria() -> Result<Vec<(MarketInstance, EquilibriumReport)>, String> {
    let mut out = Vec::new();
    let toy = fixtures::toy_b();
    for n in [1, 2, 4, 8] {
        let inst = replicate_uniform(&toy, n).map_err(e)?;
        out.push((inst.clone(), solve_p_equilibrium(&inst).map_err(e)?));
    }
    out.push((toy.clone(), solve_pi_equilibrium(&toy).map_err(e)?));
    out.push((toy.clone(), solve_piu_equilibrium(&toy, &Uplift::Uniform(5.0)).map_err(e)?));
    let low = fixtures::toy_b_with(1, 25.0);
    out.push((low.clone(), solve_p_equilibrium(&low).map_err(e)?));
    for seed in 0..3 {
        let inst = fixtures::random_instance(seed, RandomOptions::default());
        out.push((inst.clone(), solve_p_equilibrium(&inst).map_err(e)?));
        out.push((inst.clone(), solve_pi_equilibrium(&inst).map_err(e)?));
    }
    Ok(out)
}

fn c6_certification() -> Outcome {
    let eqs = fixture_equilibria()?;
    let mut worst = 0.0f64;
    for (k, (inst, eq)) in eqs.iter().enumerate() {
        let inst = inst.with_mechanism(eq.mechanism.clone()).map_err(e)?;
        let cert = certify(&inst, &eq.mechanism, &eq.profile, DEFAULT_TOL).map_err(e)?;
        ensure(cert.pass, || format!("equilibrium {k} ({}) not certified: {:?}", eq.mechanism.kind, cert.investors))?;
        worst = worst.max(cert.epsilon);
    }
    let inst = fixtures::toy_b();
    let mech = MechanismSpec::new(MechanismKind::P);
    let opts = EqOptions {
        perturbation: Perturbation { capital_cost: 0.01 },
        ..EqOptions::default()
    };
    let (bad, _, bad_sol) = solve_with_program(&inst, &mech, &opts).map_err(e)?;
    let caught_by_certify = !certify(&inst, &mech, &bad.profile, DEFAULT_TOL).map_err(e)?.pass;
    let clean = build_potential(&inst, MechanismKind::P).map_err(e)?;
    let (_, _, good_sol) = solve_with_program(&inst, &mech, &EqOptions::default()).map_err(e)?;
    let clean_res = kkt_residuals(&clean, &good_sol).max_stationarity();
    let bad_res = kkt_residuals(&clean, &bad_sol).max_stationarity();
    let caught_by_kkt = bad_res > 1e-4 && clean_res < 1e-6;
    ensure(caught_by_certify || caught_by_kkt, || format!("mutation missed (kkt {bad_res:.2e})"))?;
    Ok(format!(
        "{} equilibria certified, max gain {worst:.2e}; 1% mutation caught by {}",
        eqs.len(),
        if caught_by_certify { "certify" } else { "kkt residuals" }
    ))
}

fn c7_accounting() -> Outcome {
    let mut runs = 0;
    let mut instances = vec![fixtures::toy_b(), fixtures::toy_b_with(2, 1000.0), fixtures::toy_b_with(1, 25.0)];
    instances.extend((0..2).map(|s| fixtures::random_instance(s, RandomOptions::default())));
    for inst in &instances {
        let so = solve_so(inst).map_err(e)?;
        let reports = vec![
            mcp_competitive(inst, &so).map_err(e)?,
            solve_p_equilibrium(inst).map_err(e)?,
            solve_pi_equilibrium(inst).map_err(e)?,
            solve_piu_equilibrium(inst, &Uplift::Uniform(5.0)).map_err(e)?,
        ];
        for eq in &reports {
            for payer in [UpliftPayer::Consumers, UpliftPayer::Operator] {
                let s = from_equilibrium(inst, eq, payer).map_err(e)?;
                let c = conservation_check(&s);
                ensure(c.pass, || format!("{} ledger open: {c:?}", eq.mechanism.kind))?;
                if eq.mechanism.kind == MechanismKind::Mcp {
                    ensure(s.operator.surplus == 0.0, || "MCP operator surplus not zero".into())?;
                }
                runs += 1;
            }
        }
    }
    let inst = fixtures::toy_b();
    let w = solve_mcp_withholding(&inst, None).map_err(e)?;
    let s = from_equilibrium(&inst, &w, UpliftPayer::Consumers).map_err(e)?;
    ensure(conservation_check(&s).pass, || "withholding ledger open".into())?;
    ensure(s.consumers.surplus.abs() <= 1e-6 * s.demand_value, || format!("consumer surplus {}", s.consumers.surplus))?;
    Ok(format!("{} ledgers closed; withholding consumer surplus {:.1e}", runs + 1, s.consumers.surplus))
}

fn c8_regression() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
    let records: Vec<MarketRecord> = (0..1000)
        .map(|k| {
            let demand = rng.gen_range(200.0..1200.0);
            let vre = rng.gen_range(0.0..150.0);
            MarketRecord {
                timestamp: base + chrono::Duration::hours(k),
                price: 0.3 * (demand - vre) + 12.0 + rng.gen_range(-1.0..1.0),
                demand,
                vre,
            }
        })
        .collect();
    let (kept, dropped) = supply_curve::clean_records(records);
    ensure(dropped == 0, || format!("{dropped} records dropped"))?;
    let fit = supply_curve::fit_cluster_slope("all", &kept).map_err(e)?;
    ensure((fit.slope - 0.3).abs() <= 0.01, || format!("slope {}", fit.slope))?;
    let b = supply_curve::derive_intercepts(&kept, fit.slope);
    let worst = kept
        .iter()
        .zip(&b)
        .map(|(r, b)| (fit.slope * r.net_demand() + b - r.price).abs() / r.price.abs().max(1.0))
        .fold(0.0, f64::max);
    ensure(worst <= 1e-12, || format!("reconstruction error {worst}"))?;
    Ok(format!("slope {:.5}, reconstruction error {worst:.1e}", fit.slope))
}

fn c9_direction() -> Outcome {
    let inst = fixtures::synthetic_instance(9, 12, 0.7);
    let be = break_even_uplift(&inst, 1.0, UpliftPayer::Consumers).map_err(e)?;
    ensure(be.total_ler_profit.abs() <= 1.0, || format!("break-even profit {}", be.total_ler_profit))?;
    let (_, piu) = evaluate(&inst, &MechanismSpec::piu(Uplift::Uniform(be.uplift)), UpliftPayer::Consumers).map_err(e)?;
    let (_, mcp) = evaluate(&inst, &MechanismSpec::new(MechanismKind::Mcp), UpliftPayer::Consumers).map_err(e)?;
    ensure(piu.consumers.cost < mcp.consumers.cost, || {
        format!("PIU consumer cost {} not below MCP {}", piu.consumers.cost, mcp.consumers.cost)
    })?;
    ensure(piu.cer.surplus < mcp.cer.surplus, || {
        format!("PIU CER profit {} not below MCP {}", piu.cer.surplus, mcp.cer.surplus)
    })?;
    Ok(format!(
        "break-even uplift {:.3} $/MWh; consumer cost {:.0} < {:.0}; CER profit {:.0} < {:.0}",
        be.uplift, piu.consumers.cost, mcp.consumers.cost, piu.cer.surplus, mcp.cer.surplus
    ))
}

fn c10_network() -> Outcome {
    let inst = fixtures::toy_b();
    let one = GridTopology::single_bus(&inst);
    let net = solve_so_network(&inst, &one).map_err(e)?;
    let so = solve_so(&inst).map_err(e)?;
    close(net.system_cost, so.system_cost, 1e-6, "1-bus SO cost")?;
    close(net.bus_prices[0][0][0], so.prices[0][0], 1e-6, "1-bus SO price")?;
    let neq = solve_network_p_equilibrium(&inst, &one).map_err(e)?;
    let eq = solve_p_equilibrium(&inst).map_err(e)?;
    close(neq.system_cost, eq.system_cost, 1e-6, "1-bus P cost")?;
    close(neq.profile.total_supply(0, 0, true), eq.profile.total_supply(0, 0, true), 1e-6, "1-bus P supply")?;

    let limit = 30.0;
    let topo = GridTopology {
        buses: vec![
            Bus {
                id: "north".into(),
                demand_share: 0.0,
                cer_share: 0.5,
                intercept_offset: 0.0,
            },
            Bus {
                id: "south".into(),
                demand_share: 1.0,
                cer_share: 0.5,
                intercept_offset: 40.0,
            },
        ],
        lines: vec![Line {
            from: "north".into(),
            to: "south".into(),
            reactance: 0.1,
            limit: Some(limit),
        }],
        investor_bus: BTreeMap::from([("vre".to_string(), "south".to_string())]),
        bus_uplift: BTreeMap::new(),
    };
    let c = solve_network_p_equilibrium(&inst, &topo).map_err(e)?;
    let flow = c.flow.line_flows[0][0][0];
    close(flow, limit, 1e-6, "congested flow")?;
    let (pn, ps) = (c.bus_prices[0][0][0], c.bus_prices[1][0][0]);
    ensure((ps - pn).abs() > 1.0, || format!("nodal prices {pn} and {ps} coincide"))?;
    Ok(format!("1-bus matches; congested flow {flow:.3} = limit, prices {pn:.2} / {ps:.2}"))
}

fn c11_market_data() -> Option<Outcome> {
    let path = std::env::var_os("GRIDMECH_MARKET_DATA")?;
    let run = || -> Outcome {
        let start = Instant::now();
        let records = supply_curve::load_market_csv(std::path::Path::new(&path)).map_err(e)?;
        let (records, _) = supply_curve::clean_records(records);
        let plan = ClusterPlan::default();
        let clusters = supply_curve::fit_clusters(&records, &plan).map_err(e)?;
        let fit = supply_curve::build_scenarios(&records, &clusters, &plan, &ProbabilityWeights::Uniform, 24).map_err(e)?;
        ensure(fit.scenarios.len() >= 1000, || format!("only {} scenarios", fit.scenarios.len()))?;
        let inst = Pack::default().market_instance(&fit, 0.7).map_err(e)?;
        let be = break_even_uplift(&inst, 1.0, UpliftPayer::Consumers).map_err(e)?;
        let values: Vec<f64> = (0..=20).map(|k| k as f64 * 5.0).collect();
        let rows = run_sweep(&inst, &MechanismSpec::piu(Uplift::Uniform(0.0)), SweepParam::Uplift, &values, UpliftPayer::Consumers)
            .map_err(e)?;
        let took = start.elapsed();
        ensure(took < Duration::from_secs(600), || format!("took {took:?}"))?;
        Ok(format!(
            "{} scenarios, {} sweep rows, break-even uplift {:.2}, {took:?}",
            fit.scenarios.len(),
            rows.len(),
            be.uplift
        ))
    };
    Some(run())
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Option<Outcome>>)> = vec![
        ("oracle equivalence on TOY-B", Box::new(|| Some(c1_oracles()))),
        ("zero profit at marginal-cost prices", Box::new(|| Some(c2_zero_profit()))),
        ("incentive and uplift identities", Box::new(|| Some(c3_identities()))),
        ("convergence under replication", Box::new(|| Some(c4_convergence()))),
        ("withholding certification", Box::new(|| Some(c5_withholding()))),
        ("Nash certification and mutation", Box::new(|| Some(c6_certification()))),
        ("accounting closure", Box::new(|| Some(c7_accounting()))),
        ("regression recovery", Box::new(|| Some(c8_regression()))),
        ("directional comparison at desk scale", Box::new(|| Some(c9_direction()))),
        ("network degeneration and congestion", Box::new(|| Some(c10_network()))),
        ("market data fit and sweep", Box::new(c11_market_data)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Some(Ok(detail)) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Some(Err(why)) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", k + 1);
            }
            None => println!("criterion {:>2} SKIP  {name}: GRIDMECH_MARKET_DATA not set", k + 1),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
