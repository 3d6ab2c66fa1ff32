//! Domain types shared by every solver: scenarios, investors, system
//! parameters, decision profiles and the mechanism price functions.
//!
//! Units are fixed throughout: MW for power, MWh for energy, $ for money,
//! hourly resolution, and all costs are expected values for one day.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Values indexed `[scenario][hour]`.
pub type Hourly = Vec<Vec<f64>>;

/// Tolerance used when checking that scenario probabilities sum to one.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

pub(crate) fn zeros(scenarios: usize, hours: usize) -> Hourly {
    vec![vec![0.0; hours]; scenarios]
}

/// Dimensions of an operating horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourGrid {
    pub hours_per_day: usize,
    pub scenario_count: usize,
}

impl HourGrid {
    pub fn new(hours_per_day: usize, scenario_count: usize) -> Result<Self> {
        if hours_per_day == 0 {
            return Err(invalid("an operating day needs at least one hour"));
        }
        if scenario_count == 0 {
            return Err(invalid("at least one scenario is required"));
        }
        Ok(Self {
            hours_per_day,
            scenario_count,
        })
    }

    /// Iterate over every `(scenario, hour)` pair in scenario-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> {
        let hours = self.hours_per_day;
        (0..self.scenario_count).flat_map(move |w| (0..hours).map(move |t| (w, t)))
    }
}

/// One probability-weighted daily operating profile.
///
/// The conventional fleet has hourly cost `½·a·p² + b·p + c`; the no-load
/// term `c` is carried for completeness and never enters an objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(rename = "rho")]
    pub probability: f64,
    pub demand: Vec<f64>,
    #[serde(rename = "a")]
    pub slope: Vec<f64>,
    #[serde(rename = "b")]
    pub intercept: Vec<f64>,
    #[serde(rename = "c", default, skip_serializing_if = "Vec::is_empty")]
    pub no_load: Vec<f64>,
    /// Capacity factors keyed by the `nu_key` of each renewable investor.
    #[serde(rename = "nu", default)]
    pub capacity_factors: BTreeMap<String, Vec<f64>>,
}

impl Scenario {
    pub fn hours(&self) -> usize {
        self.demand.len()
    }

    /// Conventional marginal cost `a·p + b` at output `p`.
    pub fn marginal_cost(&self, t: usize, output: f64) -> f64 {
        self.slope[t] * output + self.intercept[t]
    }

    /// Conventional operating cost excluding the no-load term.
    pub fn cer_cost(&self, t: usize, output: f64) -> f64 {
        0.5 * self.slope[t] * output * output + self.intercept[t] * output
    }

    pub fn capacity_factor(&self, key: &str, t: usize) -> Option<f64> {
        self.capacity_factors.get(key).and_then(|v| v.get(t)).copied()
    }

    fn validate(&self, index: usize, hours: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidScenario { index, reason };
        if !(self.probability > 0.0) || !self.probability.is_finite() {
            return Err(bad(format!("probability {} must be positive", self.probability)));
        }
        for (name, len) in [
            ("demand", self.demand.len()),
            ("a", self.slope.len()),
            ("b", self.intercept.len()),
        ] {
            if len != hours {
                return Err(bad(format!("`{name}` has {len} entries, expected {hours}")));
            }
        }
        if !self.no_load.is_empty() && self.no_load.len() != hours {
            return Err(bad(format!("`c` has {} entries, expected {hours}", self.no_load.len())));
        }
        for t in 0..hours {
            if !(self.demand[t] >= 0.0) || !self.demand[t].is_finite() {
                return Err(bad(format!("demand at hour {t} is {}", self.demand[t])));
            }
            if !(self.slope[t] > 0.0) || !self.slope[t].is_finite() {
                return Err(bad(format!("slope a at hour {t} is {}; it must be positive", self.slope[t])));
            }
            if !self.intercept[t].is_finite() {
                return Err(bad(format!("intercept b at hour {t} is not finite")));
            }
        }
        for (key, nu) in &self.capacity_factors {
            if nu.len() != hours {
                return Err(bad(format!("capacity factor `{key}` has {} entries, expected {hours}", nu.len())));
            }
            if let Some(v) = nu.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(bad(format!("capacity factor `{key}` value {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A validated, probability-closed set of scenarios sharing one hour grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Scenario>", into = "Vec<Scenario>")]
pub struct ScenarioSet {
    scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self> {
        let first = scenarios
            .first()
            .ok_or_else(|| invalid("a scenario set needs at least one scenario"))?;
        let hours = first.hours();
        HourGrid::new(hours, scenarios.len())?;
        for (i, s) in scenarios.iter().enumerate() {
            s.validate(i, hours)?;
        }
        let total: f64 = scenarios.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(invalid(format!("scenario probabilities sum to {total}, not 1")));
        }
        Ok(Self { scenarios })
    }

    /// Rescale probabilities so they sum to one, then validate.
    pub fn normalized(mut scenarios: Vec<Scenario>) -> Result<Self> {
        let total: f64 = scenarios.iter().map(|s| s.probability).sum();
        if !(total > 0.0) {
            return Err(invalid("scenario probabilities must have a positive sum"));
        }
        for s in &mut scenarios {
            s.probability /= total;
        }
        Self::new(scenarios)
    }

    pub fn hours(&self) -> usize {
        self.scenarios[0].hours()
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Scenario> {
        self.scenarios.iter()
    }

    pub fn as_slice(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn into_inner(self) -> Vec<Scenario> {
        self.scenarios
    }
}

impl std::ops::Index<usize> for ScenarioSet {
    type Output = Scenario;
    fn index(&self, i: usize) -> &Scenario {
        &self.scenarios[i]
    }
}

impl TryFrom<Vec<Scenario>> for ScenarioSet {
    type Error = Error;
    fn try_from(v: Vec<Scenario>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScenarioSet> for Vec<Scenario> {
    fn from(s: ScenarioSet) -> Self {
        s.scenarios
    }
}

/// Daily capital scale `κ = CRF(r, L) / 365` for a lifetime of `years` at
/// discount rate `rate`. A zero rate gives straight-line recovery `1/(365 L)`.
pub fn capital_recovery_kappa(rate: f64, years: f64) -> f64 {
    let crf = if rate.abs() < 1e-12 {
        1.0 / years
    } else {
        let growth = (1.0 + rate).powf(years);
        rate * growth / (growth - 1.0)
    };
    crf / 365.0
}

/// A variable renewable investor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VreSpec {
    pub id: String,
    /// Capital cost per MW of capacity.
    #[serde(rename = "c_x")]
    pub capacity_cost: f64,
    /// Scales capital cost to one day of the investment horizon.
    pub kappa: f64,
    /// Key into each scenario's capacity-factor table.
    #[serde(rename = "nu_key")]
    pub capacity_factor_key: String,
}

/// An energy storage investor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsSpec {
    pub id: String,
    #[serde(rename = "c_s")]
    pub energy_cost: f64,
    #[serde(rename = "c_p")]
    pub power_cost: f64,
    #[serde(rename = "c_ch", default)]
    pub charge_cost: f64,
    #[serde(rename = "c_dis", default)]
    pub discharge_cost: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Duration bounds on energy over power capacity, in hours.
    pub u_min: f64,
    pub u_max: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InvestorSpec {
    Vre(VreSpec),
    Es(EsSpec),
}

impl InvestorSpec {
    pub fn id(&self) -> &str {
        match self {
            InvestorSpec::Vre(v) => &v.id,
            InvestorSpec::Es(e) => &e.id,
        }
    }

    pub fn kappa(&self) -> f64 {
        match self {
            InvestorSpec::Vre(v) => v.kappa,
            InvestorSpec::Es(e) => e.kappa,
        }
    }

    pub(crate) fn set_id(&mut self, id: String) {
        match self {
            InvestorSpec::Vre(v) => v.id = id,
            InvestorSpec::Es(e) => e.id = id,
        }
    }

    /// Multiply every capital cost by `factor`.
    pub fn scale_capital_cost(&mut self, factor: f64) {
        match self {
            InvestorSpec::Vre(v) => v.capacity_cost *= factor,
            InvestorSpec::Es(e) => {
                e.energy_cost *= factor;
                e.power_cost *= factor;
            }
        }
    }

    fn validate(&self, scenarios: &ScenarioSet) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("investor `{}`: {name} = {v} must be positive", self.id())))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("investor `{}`: {name} = {v} must be non-negative", self.id())))
            }
        };
        match self {
            InvestorSpec::Vre(v) => {
                nonneg("c_x", v.capacity_cost)?;
                positive("kappa", v.kappa)?;
                for (i, s) in scenarios.iter().enumerate() {
                    if !s.capacity_factors.contains_key(&v.capacity_factor_key) {
                        return Err(invalid(format!(
                            "investor `{}`: scenario {i} has no capacity factor `{}`",
                            v.id, v.capacity_factor_key
                        )));
                    }
                }
            }
            InvestorSpec::Es(e) => {
                nonneg("c_s", e.energy_cost)?;
                nonneg("c_p", e.power_cost)?;
                nonneg("c_ch", e.charge_cost)?;
                nonneg("c_dis", e.discharge_cost)?;
                positive("kappa", e.kappa)?;
                for (name, eta) in [("eta_c", e.eta_c), ("eta_d", e.eta_d)] {
                    if !(eta > 0.0 && eta <= 1.0) {
                        return Err(invalid(format!("investor `{}`: {name} = {eta} outside (0, 1]", e.id)));
                    }
                }
                positive("u_min", e.u_min)?;
                if e.u_min > e.u_max {
                    return Err(invalid(format!(
                        "investor `{}`: duration bounds inverted ({} > {})",
                        e.id, e.u_min, e.u_max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Conventional fleet and lost-load parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Initial conventional capacity, MW.
    pub p_bar_cv: f64,
    /// Fraction of the initial conventional capacity still in service.
    pub gamma: f64,
    /// Value of lost load, $/MWh.
    pub voll: f64,
    /// Accept a VOLL below the conventional marginal cost at full output.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_low_voll: bool,
}

impl SystemParams {
    /// Remaining conventional capacity `γ·p̄`.
    pub fn remaining_capacity(&self) -> f64 {
        self.gamma * self.p_bar_cv
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    /// Shadow-price (marginal cost) pricing.
    Mcp,
    /// Capped price with a lost-load penalty.
    P,
    /// Penalty plus quadratic supply incentive.
    Pi,
    /// Penalty, incentive and an additive price uplift.
    Piu,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Mcp => "mcp",
            MechanismKind::P => "p",
            MechanismKind::Pi => "pi",
            MechanismKind::Piu => "piu",
        }
    }

    /// Whether investors carry a share of the lost load.
    pub fn has_penalty(self) -> bool {
        !matches!(self, MechanismKind::Mcp)
    }

    pub fn has_incentive(self) -> bool {
        matches!(self, MechanismKind::Pi | MechanismKind::Piu)
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcp" => Ok(MechanismKind::Mcp),
            "p" => Ok(MechanismKind::P),
            "pi" => Ok(MechanismKind::Pi),
            "piu" => Ok(MechanismKind::Piu),
            other => Err(Error::InvalidParameter(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// Energy-price uplift, either one value for every hour or a full table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Uplift {
    Uniform(f64),
    Hourly(Hourly),
}

impl Default for Uplift {
    fn default() -> Self {
        Uplift::Uniform(0.0)
    }
}

impl Uplift {
    pub fn at(&self, w: usize, t: usize) -> f64 {
        match self {
            Uplift::Uniform(v) => *v,
            Uplift::Hourly(h) => h[w][t],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Uplift::Uniform(v) => *v == 0.0,
            Uplift::Hourly(h) => h.iter().flatten().all(|v| *v == 0.0),
        }
    }

    fn validate(&self, grid: HourGrid) -> Result<()> {
        let check = |v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("uplift {v} must be non-negative")))
            }
        };
        match self {
            Uplift::Uniform(v) => check(*v),
            Uplift::Hourly(h) => {
                if h.len() != grid.scenario_count || h.iter().any(|r| r.len() != grid.hours_per_day) {
                    return Err(Error::InvalidParameter("uplift table does not match the hour grid".into()));
                }
                h.iter().flatten().try_for_each(|v| check(*v))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    #[serde(default, skip_serializing_if = "Uplift::is_zero")]
    pub uplift: Uplift,
}

impl Default for MechanismSpec {
    fn default() -> Self {
        Self {
            kind: MechanismKind::Mcp,
            uplift: Uplift::default(),
        }
    }
}

impl MechanismSpec {
    pub fn new(kind: MechanismKind) -> Self {
        Self {
            kind,
            uplift: Uplift::default(),
        }
    }

    pub fn piu(uplift: Uplift) -> Self {
        Self {
            kind: MechanismKind::Piu,
            uplift,
        }
    }
}

/// The full problem statement: scenarios, investors, conventional fleet and
/// the pricing mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    pub scenarios: ScenarioSet,
    pub investors: Vec<InvestorSpec>,
    pub system: SystemParams,
    #[serde(default)]
    pub mechanism: MechanismSpec,
}

/// On-disk form of an instance; scenarios may be inline or referenced.
#[derive(Deserialize)]
struct InstanceFile {
    scenarios: ScenarioSource,
    #[serde(default)]
    investors: Vec<InvestorSpec>,
    system: SystemParams,
    #[serde(default)]
    mechanism: MechanismSpec,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioSource {
    Inline(Vec<Scenario>),
    Json { json: String },
    Csv { csv: String },
}

impl MarketInstance {
    pub fn new(
        scenarios: ScenarioSet,
        investors: Vec<InvestorSpec>,
        system: SystemParams,
        mechanism: MechanismSpec,
    ) -> Result<Self> {
        let inst = Self {
            scenarios,
            investors,
            system,
            mechanism,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn grid(&self) -> HourGrid {
        HourGrid {
            hours_per_day: self.scenarios.hours(),
            scenario_count: self.scenarios.len(),
        }
    }

    pub fn hours(&self) -> usize {
        self.scenarios.hours()
    }

    pub fn investor(&self, id: &str) -> Result<(usize, &InvestorSpec)> {
        self.investors
            .iter()
            .enumerate()
            .find(|(_, s)| s.id() == id)
            .ok_or_else(|| Error::UnknownInvestor(id.to_string()))
    }

    /// Uplift applying at `(w, t)`; zero unless the mechanism is PIU.
    pub fn uplift(&self, w: usize, t: usize) -> f64 {
        if self.mechanism.kind == MechanismKind::Piu {
            self.mechanism.uplift.at(w, t)
        } else {
            0.0
        }
    }

    pub fn with_mechanism(&self, mechanism: MechanismSpec) -> Result<Self> {
        let mut inst = self.clone();
        inst.mechanism = mechanism;
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid();
        let sys = &self.system;
        if !(sys.p_bar_cv >= 0.0) || !sys.p_bar_cv.is_finite() {
            return Err(invalid(format!("p_bar_cv = {} must be non-negative", sys.p_bar_cv)));
        }
        if !(0.0..=1.0).contains(&sys.gamma) {
            return Err(invalid(format!("gamma = {} outside [0, 1]", sys.gamma)));
        }
        if !(sys.voll > 0.0) || !sys.voll.is_finite() {
            return Err(invalid(format!("voll = {} must be positive", sys.voll)));
        }
        if !sys.allow_low_voll {
            let cap = sys.remaining_capacity();
            for (w, t) in grid.cells() {
                let mc = self.scenarios[w].marginal_cost(t, cap);
                if sys.voll <= mc {
                    return Err(invalid(format!(
                        "voll {} does not exceed the conventional marginal cost {mc} at full output \
                         (scenario {w}, hour {t}); set allow_low_voll to accept this",
                        sys.voll
                    )));
                }
            }
        }
        let mut ids = BTreeSet::new();
        for inv in &self.investors {
            if !ids.insert(inv.id()) {
                return Err(invalid(format!("duplicate investor id `{}`", inv.id())));
            }
            inv.validate(&self.scenarios)?;
        }
        if self.mechanism.kind != MechanismKind::Piu && !self.mechanism.uplift.is_zero() {
            return Err(Error::InvalidParameter(format!(
                "uplift is only allowed under piu, not {}",
                self.mechanism.kind
            )));
        }
        self.mechanism.uplift.validate(grid)
    }

    pub fn from_json_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let resolve = |p: &str| match base {
            Some(dir) => dir.join(p),
            None => Path::new(p).to_path_buf(),
        };
        let scenarios = match file.scenarios {
            ScenarioSource::Inline(v) => ScenarioSet::new(v)?,
            ScenarioSource::Json { json } => {
                let path = resolve(&json);
                let text = read_to_string(&path)?;
                let value: serde_json::Value = serde_json::from_str(&text)?;
                // Accept either a bare list or a fitted-scenario document.
                let list = match value.get("scenarios") {
                    Some(inner) => inner.clone(),
                    None => value,
                };
                ScenarioSet::new(serde_json::from_value(list)?)?
            }
            ScenarioSource::Csv { csv } => scenarios_from_csv(&resolve(&csv))?,
        };
        Self::new(scenarios, file.investors, file.system, file.mechanism)
    }

    pub fn from_json_path(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_json_str(&text, path.parent())
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read scenarios from a long-format CSV with columns
/// `scenario,hour,rho,demand,a,b` and optional `c` and `nu:<key>` columns.
///
/// Rows of one scenario must repeat the same `rho`.
pub fn scenarios_from_csv(path: &Path) -> Result<ScenarioSet> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| col(name).ok_or_else(|| invalid(format!("{}: missing column `{name}`", path.display())));
    let (c_s, c_h, c_rho, c_d, c_a, c_b) = (need("scenario")?, need("hour")?, need("rho")?, need("demand")?, need("a")?, need("b")?);
    let c_c = col("c");
    let nu_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.trim().strip_prefix("nu:").map(|k| (i, k.to_string())))
        .collect();

    let mut by_id: BTreeMap<String, Vec<(usize, csv::StringRecord)>> = BTreeMap::new();
    let mut order = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id = rec[c_s].trim().to_string();
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push((line + 2, rec));
    }
    let num = |rec: &csv::StringRecord, c: usize, line: usize| -> Result<f64> {
        let v: f64 = rec[c]
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{}:{line}: cannot parse `{}`", path.display(), &rec[c])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(invalid(format!("{}:{line}: non-finite value", path.display())))
        }
    };
    let mut scenarios = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = by_id.remove(&id).unwrap_or_default();
        let mut keyed = Vec::with_capacity(rows.len());
        for (line, rec) in rows.drain(..) {
            let hour: usize = rec[c_h]
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{}:{line}: bad hour `{}`", path.display(), &rec[c_h])))?;
            keyed.push((hour, line, rec));
        }
        keyed.sort_by_key(|(h, _, _)| *h);
        for (expected, (h, line, _)) in keyed.iter().enumerate() {
            if *h != expected {
                return Err(invalid(format!("{}:{line}: scenario `{id}` is missing hour {expected}", path.display())));
            }
        }
        let mut sc = Scenario {
            probability: num(&keyed[0].2, c_rho, keyed[0].1)?,
            demand: Vec::new(),
            slope: Vec::new(),
            intercept: Vec::new(),
            no_load: Vec::new(),
            capacity_factors: BTreeMap::new(),
        };
        for (_, line, rec) in &keyed {
            sc.demand.push(num(rec, c_d, *line)?);
            sc.slope.push(num(rec, c_a, *line)?);
            sc.intercept.push(num(rec, c_b, *line)?);
            if let Some(c) = c_c {
                sc.no_load.push(num(rec, c, *line)?);
            }
            for (c, key) in &nu_cols {
                sc.capacity_factors.entry(key.clone()).or_default().push(num(rec, *c, *line)?);
            }
        }
        scenarios.push(sc);
    }
    ScenarioSet::new(scenarios)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    invalid(format!("{}: {e}", path.display()))
}

/// Operating decisions of one renewable or storage investor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResourceDecision {
    Vre {
        capacity: f64,
        market: Hourly,
        curtailment: Hourly,
    },
    Es {
        energy_capacity: f64,
        power_capacity: f64,
        charge: Hourly,
        discharge: Hourly,
        /// State of charge at the end of each hour; the level before the
        /// first hour equals the level after the last.
        soc: Hourly,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvestorDecision {
    pub id: String,
    pub resource: ResourceDecision,
    /// Allocated lost load, present under the penalty mechanisms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lost_load: Option<Hourly>,
}

impl InvestorDecision {
    /// Net market supply: renewable output sold, or discharge minus charge.
    pub fn net_supply(&self, w: usize, t: usize) -> f64 {
        match &self.resource {
            ResourceDecision::Vre { market, .. } => market[w][t],
            ResourceDecision::Es { charge, discharge, .. } => discharge[w][t] - charge[w][t],
        }
    }

    pub fn lost_load_at(&self, w: usize, t: usize) -> f64 {
        self.lost_load.as_ref().map_or(0.0, |l| l[w][t])
    }

    /// Net supply plus allocated lost load.
    pub fn supply_with_lost_load(&self, w: usize, t: usize) -> f64 {
        self.net_supply(w, t) + self.lost_load_at(w, t)
    }

    /// Installed power capacity (MW); for storage this is the power rating.
    pub fn power_capacity(&self) -> f64 {
        match &self.resource {
            ResourceDecision::Vre { capacity, .. } => *capacity,
            ResourceDecision::Es { power_capacity, .. } => *power_capacity,
        }
    }

    pub fn energy_capacity(&self) -> Option<f64> {
        match &self.resource {
            ResourceDecision::Vre { .. } => None,
            ResourceDecision::Es { energy_capacity, .. } => Some(*energy_capacity),
        }
    }
}

/// A full strategy profile: every investor's decisions plus the conventional
/// dispatch and aggregate lost load chosen by the operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionProfile {
    pub grid: HourGrid,
    pub investors: Vec<InvestorDecision>,
    pub cer_output: Hourly,
    /// Aggregate lost load; under the penalty mechanisms this equals the sum
    /// of the allocated shares.
    pub shed: Hourly,
}

impl DecisionProfile {
    pub fn investor(&self, id: &str) -> Result<&InvestorDecision> {
        self.investors
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::UnknownInvestor(id.to_string()))
    }

    /// Sum of investors' net supply at `(w, t)`.
    pub fn total_supply(&self, w: usize, t: usize, with_lost_load: bool) -> f64 {
        self.investors
            .iter()
            .map(|d| if with_lost_load { d.supply_with_lost_load(w, t) } else { d.net_supply(w, t) })
            .sum()
    }

    /// Largest absolute difference between the decision tensors of two
    /// profiles over capacities, dispatch, conventional output and
    /// aggregate lost load. Storage state of charge is excluded since it is
    /// only defined up to a shift whenever neither bound binds.
    pub fn max_abs_difference(&self, other: &DecisionProfile) -> Result<f64> {
        if self.grid != other.grid || self.investors.len() != other.investors.len() {
            return Err(invalid("profiles have different shapes"));
        }
        let mut worst = 0.0f64;
        let mut cmp = |a: &Hourly, b: &Hourly| {
            for (ra, rb) in a.iter().zip(b) {
                for (x, y) in ra.iter().zip(rb) {
                    worst = worst.max((x - y).abs());
                }
            }
        };
        cmp(&self.cer_output, &other.cer_output);
        cmp(&self.shed, &other.shed);
        let mut scalars = Vec::new();
        for (a, b) in self.investors.iter().zip(&other.investors) {
            if a.id != b.id {
                return Err(invalid(format!("investor order differs: `{}` vs `{}`", a.id, b.id)));
            }
            match (&a.resource, &b.resource) {
                (
                    ResourceDecision::Vre { capacity: xa, market: ma, curtailment: ca },
                    ResourceDecision::Vre { capacity: xb, market: mb, curtailment: cb },
                ) => {
                    scalars.push((xa - xb).abs());
                    cmp(ma, mb);
                    cmp(ca, cb);
                }
                (
                    ResourceDecision::Es { energy_capacity: sa, power_capacity: pa, charge: cha, discharge: da, .. },
                    ResourceDecision::Es { energy_capacity: sb, power_capacity: pb, charge: chb, discharge: db, .. },
                ) => {
                    scalars.push((sa - sb).abs());
                    scalars.push((pa - pb).abs());
                    cmp(cha, chb);
                    cmp(da, db);
                }
                _ => return Err(invalid(format!("investor `{}` changes resource class", a.id))),
            }
        }
        Ok(scalars.into_iter().fold(worst, f64::max))
    }

    /// List every violated resource or system constraint, with a tolerance
    /// scaled by `max(1, D)`.
    pub fn violations(&self, inst: &MarketInstance, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let grid = inst.grid();
        if self.grid != grid {
            out.push(format!("profile grid {:?} does not match instance {:?}", self.grid, grid));
            return out;
        }
        if self.investors.len() != inst.investors.len() {
            out.push("investor count differs from the instance".into());
            return out;
        }
        let cap = inst.system.remaining_capacity();
        let penalty = inst.mechanism.kind.has_penalty();
        for (spec, dec) in inst.investors.iter().zip(&self.investors) {
            if spec.id() != dec.id {
                out.push(format!("investor `{}` out of order", dec.id));
                continue;
            }
            check_resource(spec, dec, inst, tol, &mut out);
            if penalty != dec.lost_load.is_some() {
                out.push(format!("investor `{}`: lost-load share presence does not match mechanism", dec.id));
            }
        }
        for (w, t) in grid.cells() {
            let s = &inst.scenarios[w];
            let d = s.demand[t];
            let scale = tol * d.max(1.0);
            let supply = self.total_supply(w, t, false);
            let bal = supply + self.cer_output[w][t] + self.shed[w][t] - d;
            if bal.abs() > scale {
                out.push(format!("power balance off by {bal} at ({w},{t})"));
            }
            if self.cer_output[w][t] < -scale || self.cer_output[w][t] > cap + scale {
                out.push(format!("conventional output {} outside [0, {cap}] at ({w},{t})", self.cer_output[w][t]));
            }
            if self.shed[w][t] < -scale {
                out.push(format!("negative lost load at ({w},{t})"));
            }
            if penalty {
                let shares: f64 = self.investors.iter().map(|i| i.lost_load_at(w, t)).sum();
                if (shares - self.shed[w][t]).abs() > scale {
                    out.push(format!("lost-load shares {shares} do not sum to {} at ({w},{t})", self.shed[w][t]));
                }
            }
        }
        out
    }
}

fn check_resource(spec: &InvestorSpec, dec: &InvestorDecision, inst: &MarketInstance, tol: f64, out: &mut Vec<String>) {
    let grid = inst.grid();
    let shaped = |h: &Hourly| h.len() == grid.scenario_count && h.iter().all(|r| r.len() == grid.hours_per_day);
    if let Some(l) = &dec.lost_load {
        if !shaped(l) {
            out.push(format!("investor `{}`: lost-load table has the wrong shape", dec.id));
            return;
        }
        if l.iter().flatten().any(|v| *v < -tol) {
            out.push(format!("investor `{}`: negative lost-load share", dec.id));
        }
    }
    match (spec, &dec.resource) {
        (InvestorSpec::Vre(v), ResourceDecision::Vre { capacity, market, curtailment }) => {
            if !shaped(market) || !shaped(curtailment) {
                out.push(format!("investor `{}`: tables have the wrong shape", dec.id));
                return;
            }
            if *capacity < -tol {
                out.push(format!("investor `{}`: negative capacity", dec.id));
            }
            for (w, t) in grid.cells() {
                let nu = inst.scenarios[w].capacity_factor(&v.capacity_factor_key, t).unwrap_or(0.0);
                let gap = market[w][t] + curtailment[w][t] - nu * capacity;
                let scale = tol * capacity.abs().max(1.0);
                if gap.abs() > scale || market[w][t] < -scale || curtailment[w][t] < -scale {
                    out.push(format!("investor `{}`: output balance violated at ({w},{t})", dec.id));
                }
            }
        }
        (
            InvestorSpec::Es(e),
            ResourceDecision::Es { energy_capacity, power_capacity, charge, discharge, soc },
        ) => {
            if !shaped(charge) || !shaped(discharge) || !shaped(soc) {
                out.push(format!("investor `{}`: tables have the wrong shape", dec.id));
                return;
            }
            let s = *energy_capacity;
            let p = *power_capacity;
            let scale = tol * s.abs().max(p.abs()).max(1.0);
            if s < -scale || p < -scale {
                out.push(format!("investor `{}`: negative capacity", dec.id));
            }
            if e.u_min * p - s > scale || s - e.u_max * p > scale {
                out.push(format!("investor `{}`: duration bound violated (S={s}, P={p})", dec.id));
            }
            let hours = grid.hours_per_day;
            for w in 0..grid.scenario_count {
                for t in 0..hours {
                    let prev = soc[w][(t + hours - 1) % hours];
                    let step = prev + e.eta_c * charge[w][t] - discharge[w][t] / e.eta_d - soc[w][t];
                    if step.abs() > scale {
                        out.push(format!("investor `{}`: state-of-charge dynamics off by {step} at ({w},{t})", dec.id));
                    }
                    for (name, v, hi) in [("charge", charge[w][t], p), ("discharge", discharge[w][t], p), ("soc", soc[w][t], s)] {
                        if v < -scale || v > hi + scale {
                            out.push(format!("investor `{}`: {name} {v} outside [0, {hi}] at ({w},{t})", dec.id));
                        }
                    }
                }
            }
        }
        _ => out.push(format!("investor `{}`: decision class does not match its spec", dec.id)),
    }
}

/// An hour in which a storage unit both charges and discharges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeOverlap {
    pub investor: String,
    pub scenario: usize,
    pub hour: usize,
    /// Product of charge and discharge power.
    pub product: f64,
}

/// Net market supply of investor `id` at `(w, t)`, optionally including its
/// allocated lost load.
pub fn net_supply(profile: &DecisionProfile, id: &str, w: usize, t: usize, with_lost_load: bool) -> Result<f64> {
    let d = profile.investor(id)?;
    if w >= profile.grid.scenario_count || t >= profile.grid.hours_per_day {
        return Err(invalid(format!("({w},{t}) outside the profile grid")));
    }
    Ok(if with_lost_load { d.supply_with_lost_load(w, t) } else { d.net_supply(w, t) })
}

/// Capped market price for total investor supply `total_supply` (including
/// allocated lost load).
///
/// Below the residual band the price sits at the conventional marginal cost
/// at full remaining output; inside the band it follows the marginal cost of
/// the residual demand `D − ΣÃ`. The uplift is added on top.
pub fn capped_price(total_supply: f64, scenario: &Scenario, t: usize, sys: &SystemParams, uplift: f64) -> Result<f64> {
    let demand = scenario.demand[t];
    let slack = 1e-9 * demand.max(1.0);
    if total_supply > demand + slack {
        return Err(Error::InfeasibleSupply {
            supply: total_supply,
            demand,
        });
    }
    let cap = sys.remaining_capacity();
    let residual = (demand - total_supply).clamp(0.0, cap);
    Ok(scenario.marginal_cost(t, residual) + uplift)
}

/// Marginal-cost price from the power-balance dual of the system-cost
/// problem, undoing the probability weighting of the objective.
pub fn mcp_price(dual: f64, probability: f64) -> Result<f64> {
    if !(probability > 0.0) {
        return Err(Error::InvalidParameter(format!("scenario probability {probability} must be positive")));
    }
    Ok(dual / probability)
}

/// Daily capital cost of an investor's capacity.
pub fn investment_cost(spec: &InvestorSpec, dec: &InvestorDecision) -> f64 {
    match (spec, &dec.resource) {
        (InvestorSpec::Vre(v), ResourceDecision::Vre { capacity, .. }) => v.kappa * v.capacity_cost * capacity,
        (InvestorSpec::Es(e), ResourceDecision::Es { energy_capacity, power_capacity, .. }) => {
            e.kappa * (e.energy_cost * energy_capacity + e.power_cost * power_capacity)
        }
        _ => 0.0,
    }
}

/// Expected daily operating cost of an investor (charge/discharge costs).
pub fn operation_cost(spec: &InvestorSpec, dec: &InvestorDecision, scenarios: &ScenarioSet) -> f64 {
    match (spec, &dec.resource) {
        (InvestorSpec::Es(e), ResourceDecision::Es { charge, discharge, .. }) => scenarios
            .iter()
            .enumerate()
            .map(|(w, s)| {
                let day: f64 = (0..s.hours())
                    .map(|t| e.charge_cost * charge[w][t] + e.discharge_cost * discharge[w][t])
                    .sum();
                s.probability * day
            })
            .sum(),
        _ => 0.0,
    }
}

/// Expected daily conventional operating cost.
pub fn cer_cost(scenarios: &ScenarioSet, cer_output: &Hourly) -> f64 {
    scenarios
        .iter()
        .enumerate()
        .map(|(w, s)| s.probability * (0..s.hours()).map(|t| s.cer_cost(t, cer_output[w][t])).sum::<f64>())
        .sum()
}

/// Expected daily system cost: investment, storage operation, conventional
/// generation and lost load valued at VOLL.
pub fn system_cost(inst: &MarketInstance, profile: &DecisionProfile) -> f64 {
    let investors: f64 = inst
        .investors
        .iter()
        .zip(&profile.investors)
        .map(|(s, d)| investment_cost(s, d) + operation_cost(s, d, &inst.scenarios))
        .sum();
    investors + cer_cost(&inst.scenarios, &profile.cer_output) + inst.system.voll * expectation(&inst.scenarios, &profile.shed)
}

/// Probability-weighted sum over hours of an hourly table.
pub fn expectation(scenarios: &ScenarioSet, values: &Hourly) -> f64 {
    scenarios
        .iter()
        .zip(values)
        .map(|(s, row)| s.probability * row.iter().sum::<f64>())
        .sum()
}
