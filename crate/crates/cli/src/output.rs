//! Result documents, human-readable tables and CSV writers.

use serde::Serialize;
use sucpr::estimators::{turning_point, EstimationResult};
use sucpr::inference::KpssResult;
use sucpr::montecarlo::ExperimentReport;

use crate::config::{coefficient_names, LrArg, Restriction};
use crate::dataset::Dataset;
use crate::{CliError, CliResult};

/// Published JSON schemas, keyed by command.
pub const SCHEMAS: [(&str, &str); 4] = [
    ("estimate", include_str!("../../../schemas/estimate.schema.json")),
    ("test", include_str!("../../../schemas/test.schema.json")),
    ("wald", include_str!("../../../schemas/wald.schema.json")),
    ("simulate", include_str!("../../../schemas/simulate.schema.json")),
];

/// Two-sided 95% normal quantile.
const Z_975: f64 = 1.96;

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct UnitEstimate {
    pub name: String,
    pub coefficients: Vec<Coefficient>,
    /// `exp(-β_x / (2 β_{x²}))` for quadratic equations.
    pub turning_point: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub method: String,
    pub lr_source: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub t_first: i64,
    pub t_last: i64,
    pub bandwidth: Option<f64>,
    pub q: Option<usize>,
    pub units: Vec<UnitEstimate>,
}

impl EstimateReport {
    pub fn new(ds: &Dataset, est: &EstimationResult, lr: LrArg) -> CliResult<Self> {
        let cov = est.wald.as_ref().map(|w| w.covariance());
        let mut units = Vec::new();
        for (i, order) in est.spec.equations().iter().enumerate() {
            let names = coefficient_names(order);
            let coefficients: Vec<Coefficient> = names
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let j = est.spec.param_index(i, k);
                    let b = est.beta[j];
                    let se = cov.as_ref().map(|c| c[(j, j)].max(0.0).sqrt());
                    Coefficient {
                        name: name.clone(),
                        estimate: b,
                        std_error: se,
                        ci_lower: se.map(|s| b - Z_975 * s),
                        ci_upper: se.map(|s| b + Z_975 * s),
                    }
                })
                .collect();
            let turning = if order.power == 2 {
                let base = order.trend + 1;
                turning_point(coefficients[base].estimate, coefficients[base + 1].estimate).ok()
            } else {
                None
            };
            units.push(UnitEstimate {
                name: ds.names[i].clone(),
                coefficients,
                turning_point: turning,
            });
        }
        Ok(Self {
            method: est.method.name().to_string(),
            lr_source: match lr {
                LrArg::Kernel => "kernel",
                LrArg::Biam => "biam",
            }
            .to_string(),
            n: ds.names.len(),
            t: ds.t.len(),
            t_first: ds.t[0],
            t_last: *ds.t.last().unwrap(),
            bandwidth: est.lr.as_ref().and_then(|l| l.bandwidth),
            q: est.biam.as_ref().map(|b| b.q()),
            units,
        })
    }

    /// Coefficients to three decimals, one line per unit.
    pub fn table(&self) -> String {
        let mut out = format!("{} ({} long-run path), T = {}\n", self.method, self.lr_source, self.t);
        for u in &self.units {
            let coefs: Vec<String> = u
                .coefficients
                .iter()
                .map(|c| match c.std_error {
                    Some(se) => format!("{} {:.3} ({:.3})", c.name, c.estimate, se),
                    None => format!("{} {:.3}", c.name, c.estimate),
                })
                .collect();
            let tp = u.turning_point.map(|v| format!("  turning point {v:.0}")).unwrap_or_default();
            out.push_str(&format!("{:<12} {}{}\n", u.name, coefs.join("  "), tp));
        }
        out
    }
}

pub fn residual_csv(ds: &Dataset, est: &EstimationResult) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(ds.names.iter().map(|n| format!("u_{n}")));
    w.write_record(&header).map_err(CliError::io)?;
    for (s, tv) in ds.t.iter().enumerate() {
        let mut row = vec![tv.to_string()];
        row.extend((0..ds.names.len()).map(|i| est.residuals[(i, s)].to_string()));
        w.write_record(&row).map_err(CliError::io)?;
    }
    let bytes = w.into_inner().map_err(CliError::io)?;
    String::from_utf8(bytes).map_err(CliError::io)
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha: f64,
    pub tests: Vec<KpssResult>,
}

impl TestReport {
    pub fn new(ds: &Dataset, alpha: f64, tests: Vec<KpssResult>) -> Self {
        Self {
            n: ds.names.len(),
            t: ds.t.len(),
            alpha,
            tests,
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::from("variant  K_max     block  blocks  critical  rule(%)  decision\n");
        for r in &self.tests {
            out.push_str(&format!(
                "{:<8} {:<9.3} {:<6} {:<7} {:<9.3} {:<8.3} {}\n",
                r.variant.name(),
                r.k_max,
                r.block_size,
                r.num_blocks,
                r.critical_value,
                r.rejection_rule,
                if r.reject { "reject" } else { "accept" }
            ));
        }
        out
    }
}

#[derive(Debug, Serialize)]
pub struct RestrictionOut {
    pub unit: String,
    pub coefficient: String,
    pub value: f64,
}

impl From<&Restriction> for RestrictionOut {
    fn from(r: &Restriction) -> Self {
        Self {
            unit: r.unit.clone(),
            coefficient: r.coefficient.clone(),
            value: r.value,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct WaldReport {
    pub method: String,
    pub restrictions: Vec<RestrictionOut>,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

pub fn report_csv(report: &ExperimentReport) -> CliResult<String> {
    let (header, rows) = report.table();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(CliError::io)?;
    for row in rows {
        w.write_record(&row).map_err(CliError::io)?;
    }
    let bytes = w.into_inner().map_err(CliError::io)?;
    String::from_utf8(bytes).map_err(CliError::io)
}
