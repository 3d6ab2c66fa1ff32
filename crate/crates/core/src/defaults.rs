//! Reference technology costs and system parameters.

use crate::error::Result;
use crate::model::{
    capital_recovery_kappa, EsSpec, InvestorSpec, MarketInstance, MechanismSpec, SystemParams, VreSpec,
};
use crate::supply_curve::FittedScenarios;

/// Value of lost load, $/MWh.
pub const VOLL: f64 = 3500.0;
/// Solar capital cost, $/MW.
pub const SOLAR_CAPACITY_COST: f64 = 885_000.0;
/// Wind capital cost, $/MW.
pub const WIND_CAPACITY_COST: f64 = 1_355_000.0;
/// Storage energy-capacity cost, $/MWh.
pub const STORAGE_ENERGY_COST: f64 = 385_000.0;
/// Storage power-capacity cost, $/MW.
pub const STORAGE_POWER_COST: f64 = 85_000.0;
/// Round-trip storage efficiency, split evenly between charge and discharge.
pub const ROUND_TRIP_EFFICIENCY: f64 = 0.88;
pub const VRE_LIFETIME_YEARS: f64 = 25.0;
pub const STORAGE_LIFETIME_YEARS: f64 = 10.0;
/// Storage duration bounds, hours.
pub const STORAGE_MIN_DURATION: f64 = 1.0;
pub const STORAGE_MAX_DURATION: f64 = 8.0;

/// Technology pack with a common discount rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pack {
    pub discount_rate: f64,
}

impl Default for Pack {
    fn default() -> Self {
        Self { discount_rate: 0.0 }
    }
}

impl Pack {
    pub fn vre_kappa(&self) -> f64 {
        capital_recovery_kappa(self.discount_rate, VRE_LIFETIME_YEARS)
    }

    pub fn storage_kappa(&self) -> f64 {
        capital_recovery_kappa(self.discount_rate, STORAGE_LIFETIME_YEARS)
    }

    pub fn solar(&self, id: &str, nu_key: &str) -> InvestorSpec {
        InvestorSpec::Vre(VreSpec {
            id: id.to_string(),
            capacity_cost: SOLAR_CAPACITY_COST,
            kappa: self.vre_kappa(),
            capacity_factor_key: nu_key.to_string(),
        })
    }

    pub fn wind(&self, id: &str, nu_key: &str) -> InvestorSpec {
        InvestorSpec::Vre(VreSpec {
            id: id.to_string(),
            capacity_cost: WIND_CAPACITY_COST,
            kappa: self.vre_kappa(),
            capacity_factor_key: nu_key.to_string(),
        })
    }

    pub fn storage(&self, id: &str) -> InvestorSpec {
        let eta = ROUND_TRIP_EFFICIENCY.sqrt();
        InvestorSpec::Es(EsSpec {
            id: id.to_string(),
            energy_cost: STORAGE_ENERGY_COST,
            power_cost: STORAGE_POWER_COST,
            charge_cost: 0.0,
            discharge_cost: 0.0,
            eta_c: eta,
            eta_d: eta,
            u_min: STORAGE_MIN_DURATION,
            u_max: STORAGE_MAX_DURATION,
            kappa: self.storage_kappa(),
        })
    }

    /// Instance over fitted scenarios: a solar-cost renewable investor on the
    /// fitted renewable profile, a storage investor, and a conventional
    /// fleet sized to the largest net demand with fraction `gamma` remaining.
    pub fn market_instance(&self, fit: &FittedScenarios, gamma: f64) -> Result<MarketInstance> {
        MarketInstance::new(
            fit.scenarios.clone(),
            vec![self.solar("vre", &fit.capacity_factor_key), self.storage("storage")],
            SystemParams {
                p_bar_cv: fit.suggested_p_bar_cv,
                gamma,
                voll: VOLL,
                allow_low_voll: false,
            },
            MechanismSpec::default(),
        )
    }
}
