//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string, so the page
//! needs nothing beyond the generated glue.

use serde::Serialize;
use sucpr::estimators::{estimate, EstimationOptions, Method};
use sucpr::inference::{cointegration_test, critical_value, limit_cdf, KpssOptions, KpssVariant};
use sucpr::model::CprSpec;
use sucpr::montecarlo::{generate, rng_for, DgpConfig, Setting, BETA_TRUE};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

#[derive(Serialize)]
struct CdfCurve {
    n: usize,
    x: Vec<f64>,
    cdf: Vec<f64>,
    /// 5% upper critical value.
    critical_5: f64,
}

/// `P(∫‖W‖² ≤ x)` on `points` equally spaced values in `(0, x_max]`.
#[wasm_bindgen]
pub fn limit_cdf_curve(n: usize, x_max: f64, points: usize) -> Result<String, JsError> {
    if points == 0 || !(x_max > 0.0) {
        return Err(JsError::new("need points >= 1 and x_max > 0"));
    }
    let x: Vec<f64> = (1..=points).map(|k| x_max * k as f64 / points as f64).collect();
    let cdf = x.iter().map(|&v| limit_cdf(n, v)).collect::<Result<Vec<_>, _>>().map_err(js_err)?;
    let critical_5 = critical_value(n, 0.05).map_err(js_err)?;
    to_json(&CdfCurve { n, x, cdf, critical_5 })
}

fn design(setting: &str, n: usize, t_len: usize, param: f64, seed: u64) -> Result<DgpConfig, JsError> {
    let cfg = match setting {
        "A" => DgpConfig::setting_a(n, t_len, param),
        "B" => DgpConfig::setting_b(n, t_len, (0.1, 0.5), param),
        "C_size" => DgpConfig::setting_c(Setting::CSize, n, t_len, (0.1, 0.5), 0),
        "C_power3" => DgpConfig::setting_c(Setting::CPower3, n, t_len, (0.1, 0.5), param.round().max(0.0) as usize),
        other => return Err(JsError::new(&format!("unknown setting '{other}'"))),
    }
    .with_seed(seed);
    cfg.validate().map_err(js_err)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct MethodEstimate {
    method: &'static str,
    /// `β_{i,4}` of every equation.
    beta4: Vec<f64>,
}

#[derive(Serialize)]
struct Estimates {
    truth: f64,
    methods: Vec<MethodEstimate>,
    /// First equation's `(y, x)` for plotting.
    y1: Vec<f64>,
    x1: Vec<f64>,
}

/// Draws one panel and reports the quadratic coefficient from each estimator.
///
/// `param` is `ρ` for setting A and `θ` for setting B.
#[wasm_bindgen]
pub fn simulate_and_estimate(setting: &str, n: usize, t_len: usize, param: f64, seed: u64) -> Result<String, JsError> {
    let cfg = design(setting, n, t_len, param, seed)?;
    let data = generate(&cfg, &mut rng_for(seed, 0)).map_err(js_err)?;
    let spec = CprSpec::quadratic(n).map_err(js_err)?;
    let opts = EstimationOptions::default();
    let mut methods = Vec::new();
    for m in [Method::Ols, Method::FmSols, Method::FmSur, Method::FmGls] {
        let est = estimate(&spec, &data, m, &opts).map_err(js_err)?;
        let beta4 = (0..n).map(|i| est.beta[spec.param_index(i, 3)]).collect();
        methods.push(MethodEstimate { method: m.name(), beta4 });
    }
    to_json(&Estimates {
        truth: BETA_TRUE[3] + cfg.beta4_shift,
        methods,
        y1: data.y().row(0).iter().copied().collect(),
        x1: data.x().row(0).iter().copied().collect(),
    })
}

#[derive(Serialize)]
struct Profile {
    variant: &'static str,
    block_size: usize,
    k_max: f64,
    critical_value: f64,
    reject: bool,
    profile: Vec<(usize, f64)>,
}

/// `K_max(b)` over the candidate block sizes for each test variant.
///
/// `setting` is `C_size` or `C_power3` (then `param` is the number of unit roots).
#[wasm_bindgen]
pub fn kmax_profile(setting: &str, n: usize, t_len: usize, param: f64, seed: u64) -> Result<String, JsError> {
    if !setting.starts_with("C_") {
        return Err(JsError::new("block-size profiles use the C_size or C_power3 designs"));
    }
    let cfg = design(setting, n, t_len, param, seed)?;
    let data = generate(&cfg, &mut rng_for(seed, 0)).map_err(js_err)?;
    let spec = CprSpec::quadratic(n).map_err(js_err)?;
    let mut out = Vec::new();
    for v in KpssVariant::ALL {
        let r = cointegration_test(&spec, &data, v, &EstimationOptions::default(), &KpssOptions::default()).map_err(js_err)?;
        out.push(Profile {
            variant: v.name(),
            block_size: r.block_size,
            k_max: r.k_max,
            critical_value: r.critical_value,
            reject: r.reject,
            profile: r.profile,
        });
    }
    to_json(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // JsError only exists on wasm targets, so native tests check the happy paths.
    #[test]
    fn exports_produce_json() {
        let curve: serde_json::Value = serde_json::from_str(&limit_cdf_curve(1, 3.0, 30).unwrap()).unwrap();
        assert_eq!(curve["cdf"].as_array().unwrap().len(), 30);
        let est: serde_json::Value = serde_json::from_str(&simulate_and_estimate("B", 2, 120, 0.3, 4).unwrap()).unwrap();
        assert_eq!(est["methods"].as_array().unwrap().len(), 4);
        let prof: serde_json::Value = serde_json::from_str(&kmax_profile("C_size", 2, 150, 0.0, 4).unwrap()).unwrap();
        assert_eq!(prof.as_array().unwrap().len(), 3);
    }
}
