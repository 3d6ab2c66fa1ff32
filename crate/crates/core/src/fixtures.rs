//! Small reference instances used by the tests, the guide and the
//! `example` command.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::defaults::{self, Pack};
use crate::model::{
    EsSpec, InvestorSpec, MarketInstance, MechanismSpec, Scenario, ScenarioSet, SystemParams, VreSpec,
};

/// One hour, one scenario, demand 100 MW, 80 MW of conventional capacity
/// with cost `0.25 p² + 10 p`, and one renewable investor with a daily
/// capital cost of 30 $/MW and capacity factor 1.
pub fn toy_b() -> MarketInstance {
    toy_b_with(1, 1000.0)
}

/// TOY-B with `n` identical renewable investors and the given VOLL.
pub fn toy_b_with(n: usize, voll: f64) -> MarketInstance {
    let scenario = Scenario {
        probability: 1.0,
        demand: vec![100.0],
        slope: vec![0.5],
        intercept: vec![10.0],
        no_load: Vec::new(),
        capacity_factors: BTreeMap::from([("vre".to_string(), vec![1.0])]),
    };
    let investors = (0..n)
        .map(|k| {
            InvestorSpec::Vre(VreSpec {
                id: if n == 1 { "vre".to_string() } else { format!("vre-{}", k + 1) },
                capacity_cost: 30.0,
                kappa: 1.0,
                capacity_factor_key: "vre".into(),
            })
        })
        .collect();
    MarketInstance {
        scenarios: ScenarioSet::new(vec![scenario]).expect("valid scenario"),
        investors,
        system: SystemParams {
            p_bar_cv: 80.0,
            gamma: 1.0,
            voll,
            allow_low_voll: voll <= 50.0,
        },
        mechanism: MechanismSpec::default(),
    }
}

/// Options for [`random_instance`].
#[derive(Clone, Copy, Debug)]
pub struct RandomOptions {
    pub max_investors: usize,
    pub max_scenarios: usize,
    pub hours: usize,
    /// Include storage investors.
    pub storage: bool,
}

impl Default for RandomOptions {
    fn default() -> Self {
        Self {
            max_investors: 3,
            max_scenarios: 4,
            hours: 24,
            storage: true,
        }
    }
}

/// A seeded random instance with distinct investors.
///
/// Every renewable investor has its own capacity-factor profile and cost, and
/// storage carries small charge and discharge costs.
pub fn random_instance(seed: u64, opts: RandomOptions) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hours = opts.hours;
    let n_scen = rng.gen_range(1..=opts.max_scenarios);
    let n_inv = rng.gen_range(1..=opts.max_investors);
    let n_es = if opts.storage && n_inv > 1 { rng.gen_range(0..=1) } else { 0 };
    let n_vre = n_inv - n_es;
    let peak = 100.0;
    let mut weights: Vec<f64> = (0..n_scen).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let scenarios: Vec<Scenario> = weights
        .iter()
        .map(|&p| {
            let level = rng.gen_range(0.7..1.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let demand = (0..hours)
                .map(|t| {
                    let x = t as f64 / hours as f64 * std::f64::consts::TAU + phase;
                    peak * level * (0.75 + 0.2 * x.sin()) + rng.gen_range(-3.0..3.0)
                })
                .collect();
            let mut nu = BTreeMap::new();
            for k in 0..n_vre {
                let shift = rng.gen_range(0.0..hours as f64);
                let profile = (0..hours)
                    .map(|t| {
                        let x = (t as f64 - shift) / hours as f64 * std::f64::consts::TAU;
                        (0.45 + 0.35 * x.cos() + rng.gen_range(-0.08..0.08)).clamp(0.02, 1.0)
                    })
                    .collect();
                nu.insert(format!("cf{k}"), profile);
            }
            Scenario {
                probability: p,
                demand,
                slope: (0..hours).map(|_| rng.gen_range(0.3..0.6)).collect(),
                intercept: (0..hours).map(|_| rng.gen_range(10.0..30.0)).collect(),
                no_load: Vec::new(),
                capacity_factors: nu,
            }
        })
        .collect();
    let mut investors: Vec<InvestorSpec> = (0..n_vre)
        .map(|k| {
            InvestorSpec::Vre(VreSpec {
                id: format!("vre{k}"),
                capacity_cost: rng.gen_range(150.0..400.0),
                kappa: 0.1,
                capacity_factor_key: format!("cf{k}"),
            })
        })
        .collect();
    for k in 0..n_es {
        investors.push(InvestorSpec::Es(EsSpec {
            id: format!("es{k}"),
            energy_cost: rng.gen_range(20.0..60.0),
            power_cost: rng.gen_range(10.0..40.0),
            charge_cost: rng.gen_range(0.5..2.0),
            discharge_cost: rng.gen_range(0.5..2.0),
            eta_c: 0.95,
            eta_d: 0.95,
            u_min: 1.0,
            u_max: 6.0,
            kappa: 0.1,
        }));
    }
    MarketInstance::new(
        ScenarioSet::new(scenarios).expect("generated scenarios are valid"),
        investors,
        SystemParams {
            p_bar_cv: peak,
            gamma: rng.gen_range(0.6..1.0),
            voll: 1000.0,
            allow_low_voll: false,
        },
        MechanismSpec::default(),
    )
    .expect("generated instance is valid")
}

/// Total probability of the stress days in [`synthetic_instance`].
pub const STRESS_PROBABILITY: f64 = 0.01;

/// A deterministic multi-scenario instance built on the reference
/// technology pack: solar, wind and storage investors facing a
/// conventional fleet of which the fraction `retirement` has retired.
///
/// With four or more scenarios the last two are rare stress days with high
/// demand and little sun or wind, together weighted [`STRESS_PROBABILITY`].
pub fn synthetic_instance(seed: u64, scenarios: usize, retirement: f64) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hours = 24;
    let peak = 1000.0;
    let stress = if scenarios >= 4 { 2 } else { 0 };
    let normal = scenarios - stress;
    let list: Vec<Scenario> = (0..scenarios)
        .map(|w| {
            let stressed = w >= normal;
            let season = (w as f64 / scenarios as f64 * std::f64::consts::TAU).cos();
            let (level, clear, windy): (f64, f64, f64) = if stressed {
                (rng.gen_range(1.0..1.1), rng.gen_range(0.15..0.3), rng.gen_range(0.02..0.08))
            } else {
                (0.8 + 0.1 * season + rng.gen_range(-0.05..0.05), rng.gen_range(0.5..1.0), rng.gen_range(0.15..0.55))
            };
            let demand = (0..hours)
                .map(|t| {
                    let x = (t as f64 - 18.0) / 24.0 * std::f64::consts::TAU;
                    peak * level * (0.78 + 0.18 * x.cos()) + rng.gen_range(-10.0..10.0)
                })
                .collect();
            let solar = (0..hours)
                .map(|t| {
                    let x = (t as f64 - 6.0) / 12.0 * std::f64::consts::PI;
                    if (6..18).contains(&t) { (clear * x.sin()).clamp(0.0, 1.0) } else { 0.0 }
                })
                .collect();
            let wind = (0..hours)
                .map(|_| (windy + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
                .collect();
            let probability = if stressed {
                STRESS_PROBABILITY / stress as f64
            } else {
                (1.0 - if stress > 0 { STRESS_PROBABILITY } else { 0.0 }) / normal as f64
            };
            Scenario {
                probability,
                demand,
                slope: vec![0.05 + 0.01 * season; hours],
                intercept: (0..hours).map(|_| rng.gen_range(18.0..28.0)).collect(),
                no_load: Vec::new(),
                capacity_factors: BTreeMap::from([("solar".to_string(), solar), ("wind".to_string(), wind)]),
            }
        })
        .collect();
    let pack = Pack::default();
    MarketInstance::new(
        ScenarioSet::normalized(list).expect("generated scenarios are valid"),
        vec![pack.solar("solar", "solar"), pack.wind("wind", "wind"), pack.storage("storage")],
        SystemParams {
            p_bar_cv: peak,
            gamma: 1.0 - retirement,
            voll: defaults::VOLL,
            allow_low_voll: false,
        },
        MechanismSpec::default(),
    )
    .expect("synthetic instance is valid")
}
