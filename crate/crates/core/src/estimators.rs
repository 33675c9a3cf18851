//! OLS and the fully modified SOLS, SUR and GLS estimators.
//!
//! Every normal equation is solved in scaled coordinates: with the diagonal
//! scaling `G`, `β = G (G N G)⁻¹ G c` for a Gram matrix `N` and moment vector `c`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::biam::{select_banding, BandingOptions, BandingSelection, BiamDecomposition, VarLadder};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lrcov::{andrews_bandwidth, andrews_bandwidth_capped, bartlett_lrcov, biam_lrcov, fm_weights, stack_innovations, FmWeights, LongRunCov};
use crate::model::{bhat_vectors, build_regressors, stack_scaled, stack_series, CprSpec, PanelData, RegressorSystem, ScalingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ols,
    FmSols,
    FmSur,
    FmGls,
    InfSols,
    InfSur,
    InfGls,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ols,
        Method::FmSols,
        Method::FmSur,
        Method::FmGls,
        Method::InfSols,
        Method::InfSur,
        Method::InfGls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::FmSols => "fm-sols",
            Method::FmSur => "fm-sur",
            Method::FmGls => "fm-gls",
            Method::InfSols => "inf-sols",
            Method::InfSur => "inf-sur",
            Method::InfGls => "inf-gls",
        }
    }

    pub fn is_infeasible(self) -> bool {
        matches!(self, Method::InfSols | Method::InfSur | Method::InfGls)
    }

    /// Infeasible counterpart of a feasible method and vice versa.
    pub fn counterpart(self) -> Method {
        match self {
            Method::FmSols => Method::InfSols,
            Method::FmSur => Method::InfSur,
            Method::FmGls => Method::InfGls,
            Method::InfSols => Method::FmSols,
            Method::InfSur => Method::FmSur,
            Method::InfGls => Method::FmGls,
            Method::Ols => Method::Ols,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        let alias = match key.as_str() {
            "sols" => "fm-sols",
            "sur" => "fm-sur",
            "fgls" | "gls" => "fm-gls",
            other => other,
        };
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == alias)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Tuning of the feasible estimators. `None` fields use data-driven defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimationOptions {
    /// Bartlett bandwidth for the kernel path (Andrews plug-in if `None`).
    pub bandwidth: Option<f64>,
    /// Fixed banding parameter; otherwise chosen by [`select_banding`].
    pub q: Option<usize>,
    /// Number of blocks summed for `Δ̂` on the BIAM path (default `q`).
    pub r: Option<usize>,
    pub banding: BandingOptions,
}

/// Scaled sandwich `Φ_G = G⁻¹ Φ G⁻¹`, where `Φ` is the asymptotic covariance
/// of `β̂` used by Wald tests.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldFactors {
    pub scaled_cov: DMatrix<f64>,
    pub scaling: ScalingMatrix,
}

impl WaldFactors {
    /// Unscaled `Φ = G Φ_G G`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.scaling.sandwich(&self.scaled_cov)
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub method: Method,
    pub spec: CprSpec,
    pub beta: DVector<f64>,
    /// `y − Z'β̂`, `n × T`.
    pub residuals: DMatrix<f64>,
    /// `y⁺ − Z'β̂` for FM-SOLS and FM-SUR.
    pub modified_residuals: Option<DMatrix<f64>>,
    pub lr: Option<LongRunCov>,
    pub weights: Option<FmWeights>,
    pub biam: Option<BiamDecomposition>,
    pub banding: Option<BandingSelection>,
    pub wald: Option<WaldFactors>,
}

impl EstimationResult {
    /// Coefficients of equation `i`.
    pub fn equation(&self, i: usize) -> DVector<f64> {
        let k = self.spec.equations()[i].len();
        self.beta.rows(self.spec.offset(i), k).into_owned()
    }
}

/// `exp(−β₃ / (2β₄))`, the peak of a quadratic in log income.
pub fn turning_point(beta3: f64, beta4: f64) -> Result<f64> {
    if beta4 == 0.0 || !beta4.is_finite() {
        return Err(Error::InvalidArgument("turning point needs a nonzero quadratic coefficient".into()));
    }
    Ok((-beta3 / (2.0 * beta4)).exp())
}

/// Solves `N β = c` through the scaled system `(G N G) γ = G c`, `β = G γ`.
fn solve_scaled(g: &ScalingMatrix, gram: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let n = g.sandwich(gram);
    let gamma = linalg::spd_solve(&n, &g.apply(rhs), what)?;
    Ok(g.apply(&gamma))
}

fn scaled_inverse(g: &ScalingMatrix, gram: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    linalg::spd_inverse(&g.sandwich(gram), what).map_err(|_| Error::RankDeficient { what: what.to_string() })
}

/// `(G A G)⁻¹ (G B G) (G A G)⁻¹`.
fn scaled_sandwich(g: &ScalingMatrix, bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = scaled_inverse(g, bread, "Wald bread matrix")?;
    let mut out = &b * g.sandwich(meat) * &b;
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// Stacks `coef_i · b̂_i` over equations.
fn bias_term(spec: &CprSpec, bhat: &[DVector<f64>], coef: impl Fn(usize) -> f64) -> DVector<f64> {
    let scales: Vec<f64> = (0..spec.n_equations()).map(coef).collect();
    stack_scaled(spec, bhat, &scales)
}

struct Setup {
    sys: RegressorSystem,
    g: ScalingMatrix,
    cross: Vec<Vec<DMatrix<f64>>>,
}

impl Setup {
    fn new(spec: &CprSpec, data: &PanelData) -> Result<Self> {
        data.check_len(spec)?;
        let sys = build_regressors(spec, data)?;
        let g = ScalingMatrix::new(spec, data.len());
        let cross = sys.cross_products();
        Ok(Self { sys, g, cross })
    }

    fn gram(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.sys.weighted_gram_from(&self.cross, w)
    }
}

fn bare_result(method: Method, spec: &CprSpec, data: &PanelData, sys: &RegressorSystem, beta: DVector<f64>) -> Result<EstimationResult> {
    let residuals = data.y() - sys.fitted(&beta)?;
    Ok(EstimationResult {
        method,
        spec: spec.clone(),
        beta,
        residuals,
        modified_residuals: None,
        lr: None,
        weights: None,
        biam: None,
        banding: None,
        wald: None,
    })
}

/// Equation-by-equation least squares.
pub fn ols(spec: &CprSpec, data: &PanelData) -> Result<EstimationResult> {
    let s = Setup::new(spec, data)?;
    let n = spec.n_equations();
    let eye = DMatrix::identity(n, n);
    let beta = solve_scaled(&s.g, &s.gram(&eye), &s.sys.weighted_cross(&eye, data.y()), "Z'Z")?;
    bare_result(Method::Ols, spec, data, &s.sys, beta)
}

/// Bartlett long-run covariance of `[û', Δx']'`. Residuals with a unit
/// AR(1) root (as under a failure of cointegration) get the capped plug-in
/// bandwidth rather than an error, so the tests can still reject.
pub fn kernel_lr(data: &PanelData, u_hat: &DMatrix<f64>, bandwidth: Option<f64>) -> Result<LongRunCov> {
    let xi = stack_innovations(u_hat, &data.differences())?;
    let bw = match bandwidth {
        Some(bw) => bw,
        None => match andrews_bandwidth(&xi) {
            Err(Error::NonStationary(_)) => andrews_bandwidth_capped(&xi)?,
            other => other?,
        },
    };
    bartlett_lrcov(&xi, bw.min(data.len() as f64 - 1.0))
}

fn fm_sols_impl(s: &Setup, spec: &CprSpec, data: &PanelData, lr: LongRunCov, w: FmWeights, method: Method) -> Result<EstimationResult> {
    let n = spec.n_equations();
    let eye = DMatrix::identity(n, n);
    let y_plus = data.y() - &w.endogeneity_map * data.differences();
    let bhat = bhat_vectors(spec, data)?;
    let a_hat = bias_term(spec, &bhat, |i| w.delta_vu_plus[(i, i)]);
    let gram = s.gram(&eye);
    let rhs = s.sys.weighted_cross(&eye, &y_plus) - a_hat;
    let beta = solve_scaled(&s.g, &gram, &rhs, "Z'Z")?;
    let scaled_cov = scaled_sandwich(&s.g, &gram, &s.gram(&w.omega_udotv))?;
    let mut res = bare_result(method, spec, data, &s.sys, beta)?;
    res.modified_residuals = Some(y_plus - s.sys.fitted(&res.beta)?);
    res.wald = Some(WaldFactors { scaled_cov, scaling: s.g.clone() });
    res.lr = Some(lr);
    res.weights = Some(w);
    Ok(res)
}

fn fm_sur_impl(s: &Setup, spec: &CprSpec, data: &PanelData, lr: LongRunCov, w: FmWeights, method: Method) -> Result<EstimationResult> {
    let weight = linalg::spd_inverse(&w.omega_udotv, "Omega_u.v")?;
    let y_plus = data.y() - &w.endogeneity_map * data.differences();
    let bhat = bhat_vectors(spec, data)?;
    let corr = &w.delta_vu_plus * &weight;
    let a_star = bias_term(spec, &bhat, |i| corr[(i, i)]);
    let gram = s.gram(&weight);
    let rhs = s.sys.weighted_cross(&weight, &y_plus) - a_star;
    let beta = solve_scaled(&s.g, &gram, &rhs, "Z'(I x Omega_u.v^-1)Z")?;
    let mut scaled_cov = scaled_inverse(&s.g, &gram, "Z'(I x Omega_u.v^-1)Z")?;
    linalg::symmetrize(&mut scaled_cov);
    let mut res = bare_result(method, spec, data, &s.sys, beta)?;
    res.modified_residuals = Some(y_plus - s.sys.fitted(&res.beta)?);
    res.wald = Some(WaldFactors { scaled_cov, scaling: s.g.clone() });
    res.lr = Some(lr);
    res.weights = Some(w);
    Ok(res)
}

fn fm_gls_impl(
    s: &Setup,
    spec: &CprSpec,
    data: &PanelData,
    biam: BiamDecomposition,
    lr: LongRunCov,
    w: FmWeights,
    method: Method,
) -> Result<EstimationResult> {
    let t_len = data.len();
    if biam.len() != t_len || biam.dim() != spec.n_equations() {
        return Err(Error::DimensionMismatch(format!(
            "filter is for n = {}, T = {} but the data have n = {}, T = {t_len}",
            biam.dim(),
            biam.len(),
            spec.n_equations()
        )));
    }
    let sigma_ee = lr.sigma_eta_eta().ok_or_else(|| {
        Error::InvalidArgument("FM-GLS needs the innovation covariance of the long-run estimate".into())
    })?;
    let sigma_ne = lr.sigma_eps_eta().expect("sigma present");
    let ouu_inv = linalg::spd_inverse(&lr.omega_uu(), "Omega_uu")?;
    let ovv_inv = linalg::inverse(&lr.omega_vv(), "Omega_vv")?;
    let see_inv = linalg::spd_inverse(&sigma_ee, "Sigma_eta_eta")?;

    let fz = biam.apply_filter(&s.sys.stacked())?;
    let fy = biam.apply_filter(&stack_series(data.y()))?;
    let gram = biam.filtered_form(&fz, &fz);
    let zy = biam.filtered_form(&fz, &fy).column(0).into_owned();

    let k = &ouu_inv * lr.omega_uv() * &ovv_inv;
    let endog = s.sys.weighted_cross(&k, &data.differences());
    let first = &sigma_ne * &see_inv;
    let second = lr.delta_vv() * &ovv_inv * lr.omega_vu() * &ouu_inv;
    let bhat = bhat_vectors(spec, data)?;
    let b_plus = bias_term(spec, &bhat, |i| first[(i, i)] - second[(i, i)]);

    let rhs = zy - endog - b_plus;
    let beta = solve_scaled(&s.g, &gram, &rhs, "Z' Sigma_u^-1(q) Z")?;
    let meat_w = &ouu_inv * &w.omega_udotv * &ouu_inv;
    let scaled_cov = scaled_sandwich(&s.g, &s.gram(&ouu_inv), &s.gram(&meat_w))?;
    let mut res = bare_result(method, spec, data, &s.sys, beta)?;
    res.wald = Some(WaldFactors { scaled_cov, scaling: s.g.clone() });
    res.lr = Some(lr);
    res.weights = Some(w);
    res.biam = Some(biam);
    Ok(res)
}

/// FM-SOLS with the supplied long-run covariance.
pub fn fm_sols(spec: &CprSpec, data: &PanelData, lr: &LongRunCov) -> Result<EstimationResult> {
    let s = Setup::new(spec, data)?;
    fm_sols_impl(&s, spec, data, lr.clone(), fm_weights(lr)?, Method::FmSols)
}

/// FM-SUR with the supplied long-run covariance.
pub fn fm_sur(spec: &CprSpec, data: &PanelData, lr: &LongRunCov) -> Result<EstimationResult> {
    let s = Setup::new(spec, data)?;
    fm_sur_impl(&s, spec, data, lr.clone(), fm_weights(lr)?, Method::FmSur)
}

/// FM-GLS with a supplied filter and a long-run covariance carrying `Σ`.
pub fn fm_gls(spec: &CprSpec, data: &PanelData, biam: &BiamDecomposition, lr: &LongRunCov) -> Result<EstimationResult> {
    let s = Setup::new(spec, data)?;
    fm_gls_impl(&s, spec, data, biam.clone(), lr.clone(), fm_weights(lr)?, Method::FmGls)
}

/// First stage of the FM-GLS pipeline: banding choice, residual filter and
/// BIAM long-run covariance, all from OLS residuals.
pub fn gls_first_stage(
    data: &PanelData,
    u_hat: &DMatrix<f64>,
    opts: &EstimationOptions,
) -> Result<(BiamDecomposition, LongRunCov, Option<BandingSelection>)> {
    let (q, banding) = match opts.q {
        Some(q) => (q, None),
        None => {
            let sel = select_banding(u_hat, &opts.banding)?;
            (sel.q, Some(sel))
        }
    };
    let r = opts.r.unwrap_or(q);
    let biam = BiamDecomposition::fit(u_hat, q)?;
    let xi = stack_innovations(u_hat, &data.differences())?;
    let lr = biam_lrcov(&xi, q, r)?;
    Ok((biam, lr, banding))
}

/// Feasible estimation with the default pipeline.
pub fn estimate(spec: &CprSpec, data: &PanelData, method: Method, opts: &EstimationOptions) -> Result<EstimationResult> {
    if method.is_infeasible() {
        return Err(Error::InvalidArgument(format!(
            "{method} needs supplied covariances; use estimate_with_given_covariances"
        )));
    }
    let s = Setup::new(spec, data)?;
    let n = spec.n_equations();
    let eye = DMatrix::identity(n, n);
    let beta_ols = solve_scaled(&s.g, &s.gram(&eye), &s.sys.weighted_cross(&eye, data.y()), "Z'Z")?;
    let first = bare_result(Method::Ols, spec, data, &s.sys, beta_ols)?;
    match method {
        Method::Ols => {
            let mut res = first;
            res.lr = Some(kernel_lr(data, &res.residuals, opts.bandwidth)?);
            Ok(res)
        }
        Method::FmSols | Method::FmSur => {
            let lr = kernel_lr(data, &first.residuals, opts.bandwidth)?;
            let w = fm_weights(&lr)?;
            if method == Method::FmSols {
                fm_sols_impl(&s, spec, data, lr, w, method)
            } else {
                fm_sur_impl(&s, spec, data, lr, w, method)
            }
        }
        Method::FmGls => {
            let (biam, lr, banding) = gls_first_stage(data, &first.residuals, opts)?;
            let w = fm_weights(&lr)?;
            let mut res = fm_gls_impl(&s, spec, data, biam, lr, w, method)?;
            res.banding = banding;
            Ok(res)
        }
        _ => unreachable!(),
    }
}

/// Estimation with externally supplied long-run covariance and, for the GLS
/// variants, an externally supplied VAR ladder defining the filter.
pub fn estimate_with_given_covariances(
    spec: &CprSpec,
    data: &PanelData,
    method: Method,
    lr: &LongRunCov,
    ladder: Option<&VarLadder>,
) -> Result<EstimationResult> {
    if lr.n() != spec.n_equations() {
        return Err(Error::DimensionMismatch(format!(
            "long-run covariance is for n = {} but the model has {} equations",
            lr.n(),
            spec.n_equations()
        )));
    }
    let s = Setup::new(spec, data)?;
    let w = fm_weights(lr)?;
    let method = if method.is_infeasible() { method } else { method.counterpart() };
    match method {
        Method::InfSols => fm_sols_impl(&s, spec, data, lr.clone(), w, method),
        Method::InfSur => fm_sur_impl(&s, spec, data, lr.clone(), w, method),
        Method::InfGls => {
            let ladder = ladder.ok_or_else(|| Error::InvalidArgument("GLS estimation needs a filter ladder".into()))?;
            let biam = BiamDecomposition::new(ladder.clone(), data.len())?;
            fm_gls_impl(&s, spec, data, biam, lr.clone(), w, method)
        }
        _ => Err(Error::InvalidArgument("OLS takes no covariances".into())),
    }
}
