//! Parameter sweeps over solved mechanisms and the break-even uplift.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{self, mcp_competitive, replicate_uniform, EquilibriumReport};
use crate::error::{Error, Result};
use crate::model::{MarketInstance, MechanismKind, MechanismSpec, Uplift};
use crate::social_optimum::solve_so;
use crate::surplus::{from_equilibrium, SurplusReport, UpliftPayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Remaining conventional fraction γ.
    Gamma,
    /// Retirement ratio `1 − γ`.
    Retirement,
    /// Uniform uplift, $/MWh.
    Uplift,
    /// Capital-cost reduction `r`; costs are multiplied by `1 − r`.
    Capcost,
    /// Copies of every investor.
    Ncopies,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Retirement => "retirement",
            SweepParam::Uplift => "uplift",
            SweepParam::Capcost => "capcost",
            SweepParam::Ncopies => "ncopies",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gamma" => SweepParam::Gamma,
            "retirement" => SweepParam::Retirement,
            "uplift" => SweepParam::Uplift,
            "capcost" => SweepParam::Capcost,
            "ncopies" => SweepParam::Ncopies,
            other => return Err(Error::InvalidParameter(format!("unknown sweep parameter `{other}`"))),
        })
    }
}

/// Parse `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParameter(format!("cannot parse sweep values `{text}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|k| start + step * k as f64).collect());
    }
    let values = text.split(',').map(num).collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}

/// One solved point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub total_ler_profit: f64,
    pub consumer_cost: f64,
    pub cer_profit: f64,
    pub system_cost: f64,
    pub operator_surplus: f64,
    /// Installed renewable and storage power capacity, MW.
    pub ler_capacity: f64,
}

impl SweepRow {
    fn from_report(value: f64, eq: &EquilibriumReport, s: &SurplusReport) -> Self {
        Self {
            value,
            total_ler_profit: s.total_ler_profit(),
            consumer_cost: s.consumers.cost,
            cer_profit: s.cer.surplus,
            system_cost: s.system_cost,
            operator_surplus: s.operator.surplus,
            ler_capacity: eq.profile.investors.iter().map(|d| d.power_capacity()).sum(),
        }
    }
}

/// Apply one sweep value to an instance and mechanism.
pub fn apply(
    inst: &MarketInstance,
    mechanism: &MechanismSpec,
    param: SweepParam,
    value: f64,
) -> Result<(MarketInstance, MechanismSpec)> {
    let mut out = inst.clone();
    let mut mech = mechanism.clone();
    match param {
        SweepParam::Gamma => out.system.gamma = value,
        SweepParam::Retirement => out.system.gamma = 1.0 - value,
        SweepParam::Uplift => {
            if mech.kind != MechanismKind::Piu {
                return Err(Error::InvalidParameter("an uplift sweep needs the uplift mechanism".into()));
            }
            mech.uplift = Uplift::Uniform(value);
        }
        SweepParam::Capcost => {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::InvalidParameter(format!("capital-cost reduction {value} must lie in [0, 1)")));
            }
            out.investors.iter_mut().for_each(|s| s.scale_capital_cost(1.0 - value));
        }
        SweepParam::Ncopies => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!("copy count {value} must be a positive integer")));
            }
            out = replicate_uniform(&out, value as usize)?;
        }
    }
    out.mechanism = mech.clone();
    out.validate()?;
    Ok((out, mech))
}

/// Solve a mechanism on an instance. Marginal-cost pricing is evaluated at
/// the social optimum under perfect competition.
pub fn solve_point(inst: &MarketInstance, mechanism: &MechanismSpec) -> Result<EquilibriumReport> {
    let inst = inst.with_mechanism(mechanism.clone())?;
    match mechanism.kind {
        MechanismKind::Mcp => mcp_competitive(&inst, &solve_so(&inst)?),
        _ => equilibrium::solve_equilibrium(&inst),
    }
}

/// Solve and account one point.
pub fn evaluate(inst: &MarketInstance, mechanism: &MechanismSpec, payer: UpliftPayer) -> Result<(EquilibriumReport, SurplusReport)> {
    let eq = solve_point(inst, mechanism)?;
    let s = from_equilibrium(inst, &eq, payer)?;
    Ok((eq, s))
}

/// Run a sweep; rows come back in the order of `values`.
pub fn run_sweep(
    inst: &MarketInstance,
    mechanism: &MechanismSpec,
    param: SweepParam,
    values: &[f64],
    payer: UpliftPayer,
) -> Result<Vec<SweepRow>> {
    values
        .par_iter()
        .map(|&v| {
            let (point, mech) = apply(inst, mechanism, param, v)?;
            let (eq, s) = evaluate(&point, &mech, payer)?;
            Ok(SweepRow::from_report(v, &eq, &s))
        })
        .collect()
}

/// Write rows as CSV with the swept parameter's name as first column.
pub fn write_csv<W: Write>(param: SweepParam, rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    w.write_record([
        param.name(),
        "total_ler_profit",
        "consumer_cost",
        "cer_profit",
        "system_cost",
        "operator_surplus",
        "ler_capacity",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record(
            [r.value, r.total_ler_profit, r.consumer_cost, r.cer_profit, r.system_cost, r.operator_surplus, r.ler_capacity]
                .map(|v| v.to_string()),
        )
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidParameter(format!("csv: {e}")))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    pub uplift: f64,
    pub total_ler_profit: f64,
    pub iterations: usize,
}

/// Smallest uniform uplift at which investors' total profit under the
/// uplift mechanism reaches zero, by a bracketing search to `|profit| ≤ tol`.
///
/// Returns zero uplift when investors already break even without it.
pub fn break_even_uplift(inst: &MarketInstance, tol: f64, payer: UpliftPayer) -> Result<BreakEven> {
    let profit = |u: f64| -> Result<f64> {
        let mech = MechanismSpec::piu(Uplift::Uniform(u));
        let (_, s) = evaluate(inst, &mech, payer)?;
        Ok(s.total_ler_profit())
    };
    let at_zero = profit(0.0)?;
    if at_zero >= -tol {
        return Ok(BreakEven {
            uplift: 0.0,
            total_ler_profit: at_zero,
            iterations: 1,
        });
    }
    let limit = inst.system.voll;
    let (mut lo, mut hi) = (0.0, 1.0f64);
    let mut f_lo = at_zero;
    let mut f_hi = profit(hi)?;
    let mut iterations = 2;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        if hi > limit {
            return Err(Error::Unsupported(format!("investors do not break even at uplifts up to {limit}")));
        }
        f_hi = profit(hi)?;
        iterations += 1;
    }
    if f_hi <= tol {
        return Ok(BreakEven {
            uplift: hi,
            total_ler_profit: f_hi,
            iterations,
        });
    }
    // Illinois false position on the bracket [lo, hi].
    let mut side = 0i8;
    for _ in 0..200 {
        let mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        let f = profit(mid)?;
        iterations += 1;
        if f.abs() <= tol {
            return Ok(BreakEven {
                uplift: mid,
                total_ler_profit: f,
                iterations,
            });
        }
        if f < 0.0 {
            lo = mid;
            f_lo = f;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            f_hi = f;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Err(Error::Unsupported(format!(
        "profit jumps across zero near uplift {hi}; no uplift within tolerance {tol}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn value_syntax() {
        assert_eq!(parse_values("0:100:5").unwrap().len(), 21);
        assert_eq!(parse_values("1,2,4,8").unwrap(), vec![1.0, 2.0, 4.0, 8.0]);
        assert!(parse_values("0:1").is_err());
        assert!(parse_values("5:0:1").is_err());
        assert!(parse_values("x").is_err());
    }

    #[test]
    fn uplift_sweep_rows() {
        let inst = fixtures::toy_b();
        let rows = run_sweep(
            &inst,
            &MechanismSpec::piu(Uplift::Uniform(0.0)),
            SweepParam::Uplift,
            &[0.0, 5.0],
            UpliftPayer::Consumers,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[1].system_cost - 2625.0).abs() < 1e-3);
        assert!((rows[1].cer_profit - 375.0).abs() < 1e-3);
        let mut buf = Vec::new();
        write_csv(SweepParam::Uplift, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("uplift,total_ler_profit,consumer_cost,cer_profit,system_cost"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn copies_sweep_matches_replication() {
        let rows = run_sweep(
            &fixtures::toy_b(),
            &MechanismSpec::new(MechanismKind::P),
            SweepParam::Ncopies,
            &[1.0, 2.0, 4.0],
            UpliftPayer::Consumers,
        )
        .unwrap();
        for (r, total) in rows.iter().zip([30.0, 40.0, 48.0]) {
            assert!((r.ler_capacity - total).abs() < 1e-4);
        }
    }

    #[test]
    fn uplift_needs_its_mechanism() {
        let inst = fixtures::toy_b();
        assert!(apply(&inst, &MechanismSpec::new(MechanismKind::P), SweepParam::Uplift, 1.0).is_err());
        assert!(apply(&inst, &MechanismSpec::new(MechanismKind::P), SweepParam::Capcost, 1.0).is_err());
    }

    #[test]
    fn break_even_on_costly_renewables() {
        // Costlier capacity: without uplift the incentive cannot cover it.
        let mut inst = fixtures::toy_b();
        inst.investors[0].scale_capital_cost(2.0);
        let b = break_even_uplift(&inst, 1.0, UpliftPayer::Consumers).unwrap();
        assert!(b.total_ler_profit.abs() <= 1.0);
        assert!(b.uplift > 0.0);
        // Already profitable at zero uplift.
        let b = break_even_uplift(&fixtures::toy_b(), 1.0, UpliftPayer::Consumers).unwrap();
        assert_eq!(b.uplift, 0.0);
    }
}
