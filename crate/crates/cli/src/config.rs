//! Declarative run configuration (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sucpr::biam::{BandingOptions, RiskNorm};
use sucpr::estimators::EstimationOptions;
use sucpr::model::{CprSpec, EquationOrder};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Sols,
    Sur,
    Fgls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LrArg {
    Kernel,
    Biam,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orders {
    pub trend: usize,
    pub power: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitOrders {
    pub name: String,
    pub trend: usize,
    pub power: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandingConfig {
    pub h: Option<usize>,
    pub l0: Option<usize>,
    pub q: Option<usize>,
    pub r: Option<usize>,
    pub norm: Option<RiskNorm>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Restriction {
    pub unit: String,
    pub coefficient: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub residuals: Option<PathBuf>,
    pub method: Option<MethodArg>,
    pub lr: Option<LrArg>,
    pub alpha: Option<f64>,
    /// Accepted for symmetry with experiment configs; estimation is deterministic.
    pub seed: Option<u64>,
    pub bandwidth: Option<f64>,
    pub block_size: Option<usize>,
    pub variants: Option<Vec<String>>,
    pub model: Option<Orders>,
    #[serde(default)]
    pub units: Vec<UnitOrders>,
    #[serde(default)]
    pub banding: BandingConfig,
    #[serde(default)]
    pub restrictions: Vec<Restriction>,
}

/// Dataset path used by the `ekc` preset.
pub const EKC_DATA: &str = "data/ekc.csv";

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The EKC recipe: quadratic equations with a linear trend, FM-GLS
    /// (BIAM long-run path), kernel long-run path for the SOLS/SUR tests,
    /// 5% level.
    pub fn ekc() -> Self {
        Self {
            data: Some(PathBuf::from(EKC_DATA)),
            method: Some(MethodArg::Fgls),
            alpha: Some(0.05),
            model: Some(Orders { trend: 1, power: 2 }),
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "ekc" => Ok(Self::ekc()),
            other => Err(CliError::Validation(format!(
                "unknown estimation preset '{other}' (available: ekc)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("alpha = {a} must lie in (0, 1)"));
            }
        }
        if let Some(bw) = self.bandwidth {
            if !(bw >= 0.0 && bw.is_finite()) {
                return bad(format!("bandwidth = {bw} must be a non-negative number"));
            }
        }
        if self.block_size.is_some_and(|b| b < 2) {
            return bad("block_size must be at least 2".into());
        }
        if self.model.is_some_and(|m| m.power == 0) || self.units.iter().any(|u| u.power == 0) {
            return bad("power orders must be at least 1".into());
        }
        if self.method == Some(MethodArg::Fgls) && self.lr == Some(LrArg::Kernel) {
            return bad("FM-GLS uses the BIAM long-run covariance; set lr = \"biam\"".into());
        }
        if let Some(vs) = &self.variants {
            for v in vs {
                v.parse::<sucpr::inference::KpssVariant>()?;
            }
        }
        Ok(())
    }

    /// Per-unit orders; units without an entry use `model` (default
    /// quadratic with a linear trend).
    pub fn spec(&self, names: &[String]) -> Result<CprSpec, CliError> {
        for u in &self.units {
            if !names.contains(&u.name) {
                return Err(CliError::Validation(format!("config names unknown unit '{}'", u.name)));
            }
        }
        let base = self.model.unwrap_or(Orders { trend: 1, power: 2 });
        let eqs = names
            .iter()
            .map(|name| match self.units.iter().find(|u| &u.name == name) {
                Some(u) => EquationOrder::new(u.trend, u.power),
                None => EquationOrder::new(base.trend, base.power),
            })
            .collect();
        Ok(CprSpec::new(eqs)?)
    }

    pub fn estimation_options(&self) -> EstimationOptions {
        EstimationOptions {
            bandwidth: self.bandwidth,
            q: self.banding.q,
            r: self.banding.r,
            banding: BandingOptions {
                h: self.banding.h,
                l0: self.banding.l0,
                norm: self.banding.norm.unwrap_or_default(),
            },
        }
    }
}

/// Coefficient labels of an equation: `c`, `t`, `t^2`, …, `x`, `x^2`, ….
pub fn coefficient_names(order: &EquationOrder) -> Vec<String> {
    let mut names = vec!["c".to_string()];
    let label = |base: &str, p: usize| if p == 1 { base.to_string() } else { format!("{base}^{p}") };
    names.extend((1..=order.trend).map(|p| label("t", p)));
    names.extend((1..=order.power).map(|p| label("x", p)));
    names
}

/// Parses `UNIT:COEF=VALUE`.
pub fn parse_restriction(s: &str) -> Result<Restriction, CliError> {
    let bad = || CliError::Validation(format!("restriction '{s}' should look like UNIT:COEF=VALUE"));
    let (lhs, value) = s.split_once('=').ok_or_else(bad)?;
    let (unit, coefficient) = lhs.split_once(':').ok_or_else(bad)?;
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    Ok(Restriction {
        unit: unit.trim().to_string(),
        coefficient: coefficient.trim().to_string(),
        value,
    })
}
