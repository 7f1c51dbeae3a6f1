//! Agency-cost arithmetic: human moderation versus the automated pipeline,
//! normalised per wallet.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostScenario {
    pub moderators: f64,
    pub hours_per_day: f64,
    pub hourly_rate: f64,
    pub fte_fraction: f64,
    pub wallets_baseline: f64,
    pub api_daily: f64,
    pub dev_total: f64,
    pub amortization_days: f64,
    /// Daily cost not covered by API usage or amortised development.
    #[serde(default)]
    pub overhead_daily: f64,
    pub wallets_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overhead_note: Option<String>,
}

const PAPER_OVERHEAD_NOTE: &str = "overhead_daily = 20.00 closes the gap between the itemised \
daily costs (API 5.00 + amortised development 41.10 = 46.10) and the stated total daily \
system expenditure of 66.10; its source is not itemised";

impl CostScenario {
    /// 30 half-time moderators at USD 50/h for 250,000 wallets, against an
    /// automated system with USD 5/day API use, USD 15,000 development
    /// amortised over a year and a 5,000,000-wallet target.
    pub fn paper() -> Self {
        CostScenario {
            moderators: 30.0,
            hours_per_day: 8.0,
            hourly_rate: 50.0,
            fte_fraction: 0.5,
            wallets_baseline: 250_000.0,
            api_daily: 5.0,
            dev_total: 15_000.0,
            amortization_days: 365.0,
            overhead_daily: 20.0,
            wallets_target: 5_000_000.0,
            overhead_note: Some(PAPER_OVERHEAD_NOTE.to_string()),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            other => Err(Error::not_found(format!("cost preset {other:?}"))),
        }
    }

    /// Loads a scenario from TOML or JSON, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scenario: CostScenario = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::validation(e.to_string()))?,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("moderators", self.moderators),
            ("hours_per_day", self.hours_per_day),
            ("hourly_rate", self.hourly_rate),
            ("wallets_baseline", self.wallets_baseline),
            ("api_daily", self.api_daily),
            ("dev_total", self.dev_total),
            ("overhead_daily", self.overhead_daily),
            ("wallets_target", self.wallets_target),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!("{name} must be a non-negative number")));
            }
        }
        if !(self.fte_fraction > 0.0 && self.fte_fraction <= 1.0) {
            return Err(Error::validation("fte_fraction must lie in (0, 1]"));
        }
        if !(self.amortization_days >= 1.0) {
            return Err(Error::validation("amortization_days must be at least 1"));
        }
        if self.wallets_baseline == 0.0 || self.wallets_target == 0.0 {
            return Err(Error::validation("wallet counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub baseline_daily: f64,
    pub baseline_per_wallet: f64,
    pub amortized_dev_daily: f64,
    pub overhead_daily: f64,
    pub system_daily: f64,
    pub system_per_wallet: f64,
    /// `baseline_per_wallet / system_per_wallet`; `None` (infinite) for a
    /// zero-cost system.
    pub reduction_ratio: Option<f64>,
    pub counterfactual_daily_at_target: f64,
    /// `1 - system_daily / baseline_daily` at the baseline wallet count.
    pub daily_reduction_pct: f64,
    /// `1 - system_per_wallet / baseline_per_wallet` at the target wallet count.
    pub per_wallet_reduction_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overhead_note: Option<String>,
}

pub fn compute(s: &CostScenario) -> Result<CostReport> {
    s.validate()?;
    let baseline_daily = s.moderators * s.hours_per_day * s.hourly_rate * s.fte_fraction;
    let baseline_per_wallet = baseline_daily / s.wallets_baseline;
    let amortized_dev_daily = s.dev_total / s.amortization_days;
    let system_daily = s.api_daily + amortized_dev_daily + s.overhead_daily;
    let system_per_wallet = system_daily / s.wallets_target;
    let reduction_ratio = (system_per_wallet > 0.0).then(|| baseline_per_wallet / system_per_wallet);
    let pct = |num: f64, den: f64| if den > 0.0 { 100.0 * (1.0 - num / den) } else { 0.0 };
    Ok(CostReport {
        baseline_daily,
        baseline_per_wallet,
        amortized_dev_daily,
        overhead_daily: s.overhead_daily,
        system_daily,
        system_per_wallet,
        reduction_ratio,
        counterfactual_daily_at_target: baseline_per_wallet * s.wallets_target,
        daily_reduction_pct: pct(system_daily, baseline_daily),
        per_wallet_reduction_pct: pct(system_per_wallet, baseline_per_wallet),
        overhead_note: s.overhead_note.clone(),
    })
}

impl CostReport {
    /// Human-readable summary, one figure per line.
    pub fn render(&self) -> String {
        let ratio = match self.reduction_ratio {
            Some(r) => format!("{r:.1}x"),
            None => "infinite".to_string(),
        };
        let mut out = format!(
            "baseline daily cost        USD {:.2}\n\
             baseline per wallet        USD {:.4}\n\
             amortised development/day  USD {:.2}\n\
             overhead/day               USD {:.2}\n\
             system daily cost          USD {:.2}\n\
             system per wallet          USD {:.8}\n\
             per-wallet reduction       {ratio}\n\
             without system at target   USD {:.2}/day\n\
             daily cost reduction       {:.2}%\n\
             per-wallet cost reduction  {:.2}%\n\
             claimed headline reduction 95% (stated, not derived from the figures above)\n",
            self.baseline_daily,
            self.baseline_per_wallet,
            self.amortized_dev_daily,
            self.overhead_daily,
            self.system_daily,
            self.system_per_wallet,
            self.counterfactual_daily_at_target,
            self.daily_reduction_pct,
            self.per_wallet_reduction_pct,
        );
        if let Some(note) = &self.overhead_note {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_figures() {
        let r = compute(&CostScenario::paper()).unwrap();
        assert_eq!(r.baseline_daily, 6000.0);
        assert!((r.baseline_per_wallet - 0.024).abs() < 1e-12);
        assert!((r.amortized_dev_daily - 41.10).abs() < 0.005);
        assert!((r.system_daily - 66.10).abs() < 0.005);
        assert!((r.system_per_wallet - 0.000_013_22).abs() < 5e-9);
        assert!((r.reduction_ratio.unwrap() - 1815.0).abs() < 1.0);
        assert!((r.counterfactual_daily_at_target - 120_000.0).abs() < 1e-6);
        assert!((r.daily_reduction_pct - 98.9).abs() < 0.05);
        assert!((r.per_wallet_reduction_pct - 99.94).abs() < 0.01);
    }

    #[test]
    fn zero_cost_system_is_infinite() {
        let mut s = CostScenario::paper();
        s.api_daily = 0.0;
        s.dev_total = 0.0;
        s.overhead_daily = 0.0;
        let r = compute(&s).unwrap();
        assert_eq!(r.system_daily, 0.0);
        assert_eq!(r.reduction_ratio, None);
        assert!(r.render().contains("infinite"));
    }

    #[test]
    fn unit_case() {
        let s = CostScenario {
            moderators: 1.0,
            hours_per_day: 1.0,
            hourly_rate: 1.0,
            fte_fraction: 1.0,
            wallets_baseline: 1.0,
            api_daily: 0.0,
            dev_total: 0.0,
            amortization_days: 1.0,
            overhead_daily: 0.0,
            wallets_target: 1.0,
            overhead_note: None,
        };
        let r = compute(&s).unwrap();
        assert_eq!((r.baseline_daily, r.baseline_per_wallet), (1.0, 1.0));
    }

    #[test]
    fn zero_wallets_rejected() {
        let mut s = CostScenario::paper();
        s.wallets_baseline = 0.0;
        assert!(compute(&s).is_err());
        assert!(CostScenario::preset("nope").is_err());
    }
}
