//! Estimate the conventional supply curve from historical market data.
//!
//! Each record carries a day-ahead price, a demand forecast and renewable
//! output. Within a cluster (by default a calendar month) the price is
//! regressed on net demand to get the slope `a`; the per-hour intercept is
//! then backed out so that `a·net + b` reproduces every retained price.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Scenario, ScenarioSet};

#[derive(Debug, thiserror::Error)]
pub enum SupplyCurveError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: cannot parse {column} value `{value}`")]
    Parse { line: usize, column: String, value: String },
    #[error("line {line}: {column} is not finite")]
    NonFinite { line: usize, column: String },
    #[error("line {line}: duplicated timestamp {timestamp}")]
    DuplicateTimestamp { line: usize, timestamp: String },
    #[error("no records")]
    Empty,
    #[error("cluster {cluster}: net demand is constant, slope is undetermined")]
    Singular { cluster: String },
    #[error("record at {timestamp} maps to no fitted cluster")]
    Unmapped { timestamp: String },
    #[error("day {day} is missing hours {missing:?}")]
    Gap { day: String, missing: Vec<usize> },
    #[error("{0}")]
    Csv(String),
}

type Result<T> = std::result::Result<T, SupplyCurveError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketRecord {
    pub timestamp: DateTime<Utc>,
    /// Day-ahead price, $/MWh.
    pub price: f64,
    /// Demand forecast, MW.
    pub demand: f64,
    /// Renewable generation, MW.
    pub vre: f64,
}

impl MarketRecord {
    pub fn net_demand(&self) -> f64 {
        self.demand - self.vre
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

/// Parse market records from CSV text with header `timestamp,price,demand,vre`.
///
/// Line numbers in errors count the header as line 1. Output is sorted by
/// timestamp.
pub fn parse_market_csv<R: Read>(input: R) -> Result<Vec<MarketRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| SupplyCurveError::Csv(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| SupplyCurveError::MissingColumn(name.to_string()))
    };
    let (ct, cp, cd, cv) = (col("timestamp")?, col("price")?, col("demand")?, col("vre")?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| SupplyCurveError::Csv(format!("line {line}: {e}")))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let timestamp = parse_timestamp(field(ct)).ok_or_else(|| SupplyCurveError::Parse {
            line,
            column: "timestamp".into(),
            value: field(ct).into(),
        })?;
        let num = |c: usize, name: &str| -> Result<f64> {
            let v: f64 = field(c).parse().map_err(|_| SupplyCurveError::Parse {
                line,
                column: name.into(),
                value: field(c).into(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(SupplyCurveError::NonFinite {
                    line,
                    column: name.into(),
                })
            }
        };
        out.push((
            line,
            MarketRecord {
                timestamp,
                price: num(cp, "price")?,
                demand: num(cd, "demand")?,
                vre: num(cv, "vre")?,
            },
        ));
    }
    if out.is_empty() {
        return Err(SupplyCurveError::Empty);
    }
    out.sort_by_key(|(line, r)| (r.timestamp, *line));
    for pair in out.windows(2) {
        if pair[0].1.timestamp == pair[1].1.timestamp {
            return Err(SupplyCurveError::DuplicateTimestamp {
                line: pair[0].0.max(pair[1].0),
                timestamp: pair[1].1.timestamp.to_rfc3339(),
            });
        }
    }
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

pub fn load_market_csv(path: &Path) -> Result<Vec<MarketRecord>> {
    let file = std::fs::File::open(path).map_err(|source| SupplyCurveError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_market_csv(std::io::BufReader::new(file))
}

/// Drop records that violate `demand ≥ vre ≥ 0`. Returns the kept records
/// and the number dropped.
pub fn clean_records(records: Vec<MarketRecord>) -> (Vec<MarketRecord>, usize) {
    let before = records.len();
    let kept: Vec<_> = records.into_iter().filter(|r| r.vre >= 0.0 && r.demand >= r.vre).collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} records with negative renewable output or demand below it");
    }
    (kept, dropped)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterKey {
    /// Calendar year and month, e.g. `2021-02`.
    #[default]
    YearMonth,
    /// Month of year regardless of year, e.g. `02`.
    Month,
    /// Every record in one cluster.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub key: ClusterKey,
    /// Records priced above the ceiling are left out of the slope fit.
    pub ceiling: f64,
    pub excluded: Vec<String>,
}

impl Default for ClusterPlan {
    fn default() -> Self {
        Self {
            key: ClusterKey::YearMonth,
            ceiling: 250.0,
            excluded: Vec::new(),
        }
    }
}

impl ClusterPlan {
    pub fn key_of(&self, t: &DateTime<Utc>) -> String {
        match self.key {
            ClusterKey::YearMonth => t.format("%Y-%m").to_string(),
            ClusterKey::Month => t.format("%m").to_string(),
            ClusterKey::All => "all".to_string(),
        }
    }

    pub fn is_excluded(&self, key: &str) -> bool {
        self.excluded.iter().any(|e| e == key)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    /// Intercept of the regression line; not used downstream.
    pub intercept: f64,
    pub points: usize,
    /// Set when the slope is not positive.
    pub flagged: bool,
}

/// Ordinary least squares of price on net demand, with an intercept.
///
/// Returns `None` when fewer than two distinct net-demand values exist.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<SlopeFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > f64::EPSILON * mx.abs().max(1.0).powi(2) * nf) {
        return None;
    }
    let slope = sxy / sxx;
    let flagged = slope <= 0.0;
    if flagged {
        log::warn!("fitted supply-curve slope {slope} is not positive");
    }
    Some(SlopeFit {
        slope,
        intercept: my - slope * mx,
        points: n,
        flagged,
    })
}

/// Fit the slope for one cluster's records, already filtered by ceiling.
pub fn fit_cluster_slope(cluster: &str, records: &[MarketRecord]) -> Result<SlopeFit> {
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.net_demand(), r.price)).collect();
    fit_slope(&points).ok_or_else(|| SupplyCurveError::Singular {
        cluster: cluster.to_string(),
    })
}

/// Per-hour intercepts `b = π − a·(D − R)`.
pub fn derive_intercepts(records: &[MarketRecord], slope: f64) -> Vec<f64> {
    records.iter().map(|r| r.price - slope * r.net_demand()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterFit {
    pub key: String,
    pub fit: SlopeFit,
    /// Records above the price ceiling, left out of the fit.
    pub above_ceiling: usize,
}

/// Fit one slope per non-excluded cluster. Clusters are fitted in parallel
/// and returned in key order.
pub fn fit_clusters(records: &[MarketRecord], plan: &ClusterPlan) -> Result<BTreeMap<String, ClusterFit>> {
    let mut groups: BTreeMap<String, Vec<MarketRecord>> = BTreeMap::new();
    for r in records {
        let key = plan.key_of(&r.timestamp);
        if !plan.is_excluded(&key) {
            groups.entry(key).or_default().push(r.clone());
        }
    }
    if groups.is_empty() {
        return Err(SupplyCurveError::Empty);
    }
    let fitted: Vec<Result<ClusterFit>> = groups
        .into_par_iter()
        .map(|(key, recs)| {
            let (kept, above): (Vec<_>, Vec<_>) = recs.into_iter().partition(|r| r.price <= plan.ceiling);
            let fit = fit_cluster_slope(&key, &kept)?;
            Ok(ClusterFit {
                key,
                fit,
                above_ceiling: above.len(),
            })
        })
        .collect();
    fitted.into_iter().map(|f| f.map(|c| (c.key.clone(), c))).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbabilityWeights {
    /// Every day equally likely.
    #[default]
    Uniform,
    /// Total weight per cluster, split evenly across that cluster's days.
    PerCluster(BTreeMap<String, f64>),
}

/// Scenarios built from market data, with the fits that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedScenarios {
    pub scenarios: ScenarioSet,
    pub days: Vec<String>,
    pub clusters: Vec<ClusterFit>,
    /// Largest observed net demand, a natural conventional fleet size.
    pub suggested_p_bar_cv: f64,
    /// Capacity-factor key holding renewable output normalized by its peak.
    pub capacity_factor_key: String,
}

/// Build one scenario per UTC day from records of non-excluded clusters.
///
/// Demand is net demand `D − R`; the capacity factor of new renewables is
/// the historical renewable profile scaled by its peak.
pub fn build_scenarios(
    records: &[MarketRecord],
    clusters: &BTreeMap<String, ClusterFit>,
    plan: &ClusterPlan,
    weights: &ProbabilityWeights,
    hours_per_day: usize,
) -> Result<FittedScenarios> {
    let retained: Vec<&MarketRecord> = records
        .iter()
        .filter(|r| !plan.is_excluded(&plan.key_of(&r.timestamp)))
        .collect();
    if retained.is_empty() {
        return Err(SupplyCurveError::Empty);
    }
    let peak_vre = retained.iter().map(|r| r.vre).fold(0.0f64, f64::max);
    let mut days: BTreeMap<String, Vec<&MarketRecord>> = BTreeMap::new();
    for r in &retained {
        days.entry(r.timestamp.format("%Y-%m-%d").to_string()).or_default().push(r);
    }
    let key = "vre".to_string();
    let mut scenarios = Vec::with_capacity(days.len());
    let mut day_names = Vec::with_capacity(days.len());
    let mut day_clusters = Vec::with_capacity(days.len());
    for (day, recs) in &days {
        let mut slot: Vec<Option<&MarketRecord>> = vec![None; hours_per_day];
        for r in recs {
            let h = r.timestamp.hour() as usize;
            if h < hours_per_day && r.timestamp.minute() == 0 {
                slot[h] = Some(r);
            }
        }
        let missing: Vec<usize> = (0..hours_per_day).filter(|h| slot[*h].is_none()).collect();
        if !missing.is_empty() {
            return Err(SupplyCurveError::Gap {
                day: day.clone(),
                missing,
            });
        }
        let hours: Vec<&MarketRecord> = slot.into_iter().flatten().collect();
        let cluster = plan.key_of(&hours[0].timestamp);
        let fit = clusters.get(&cluster).ok_or_else(|| SupplyCurveError::Unmapped {
            timestamp: hours[0].timestamp.to_rfc3339(),
        })?;
        let a = fit.fit.slope;
        let owned: Vec<MarketRecord> = hours.iter().map(|r| (*r).clone()).collect();
        let nu: Vec<f64> = hours
            .iter()
            .map(|r| if peak_vre > 0.0 { (r.vre / peak_vre).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        scenarios.push(Scenario {
            probability: 1.0,
            demand: hours.iter().map(|r| r.net_demand()).collect(),
            slope: vec![a; hours_per_day],
            intercept: derive_intercepts(&owned, a),
            no_load: Vec::new(),
            capacity_factors: BTreeMap::from([(key.clone(), nu)]),
        });
        day_names.push(day.clone());
        day_clusters.push(cluster);
    }
    match weights {
        ProbabilityWeights::Uniform => {
            let p = 1.0 / scenarios.len() as f64;
            scenarios.iter_mut().for_each(|s| s.probability = p);
        }
        ProbabilityWeights::PerCluster(w) => {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for c in &day_clusters {
                *counts.entry(c.as_str()).or_default() += 1;
            }
            for (s, c) in scenarios.iter_mut().zip(&day_clusters) {
                s.probability = w.get(c).copied().unwrap_or(0.0) / counts[c.as_str()] as f64;
            }
        }
    }
    let suggested = retained.iter().map(|r| r.net_demand()).fold(0.0f64, f64::max);
    let set = ScenarioSet::normalized(scenarios).map_err(|e| SupplyCurveError::Csv(e.to_string()))?;
    Ok(FittedScenarios {
        scenarios: set,
        days: day_names,
        clusters: clusters.values().cloned().collect(),
        suggested_p_bar_cv: suggested,
        capacity_factor_key: key,
    })
}
