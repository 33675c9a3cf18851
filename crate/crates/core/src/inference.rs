//! Wald tests and subsampling KPSS-type cointegration tests.

use std::ops::{Range, RangeInclusive};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::biam::BiamDecomposition;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimationOptions, EstimationResult, Method};
use crate::linalg;
use crate::model::{CprSpec, PanelData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// `k × d` matrix selecting the coefficients at `indices`.
pub fn selection_matrix(d: usize, indices: &[usize]) -> Result<DMatrix<f64>> {
    let mut r = DMatrix::zeros(indices.len(), d);
    for (row, &j) in indices.iter().enumerate() {
        if j >= d {
            return Err(Error::InvalidArgument(format!("coefficient index {j} out of range 0..{d}")));
        }
        r[(row, j)] = 1.0;
    }
    Ok(r)
}

/// Column picked by each row of a selection matrix.
fn selected_columns(r: &DMatrix<f64>) -> Result<Vec<usize>> {
    let mut cols = Vec::with_capacity(r.nrows());
    for row in r.row_iter() {
        let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| j).collect();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones.len() != 1 || zeros + 1 != row.len() {
            return Err(Error::InvalidArgument("R must have exactly one unit entry per row and zeros elsewhere".into()));
        }
        if cols.contains(&ones[0]) {
            return Err(Error::InvalidArgument("rows of R must select distinct coefficients".into()));
        }
        cols.push(ones[0]);
    }
    Ok(cols)
}

/// Upper tail of `χ²_k` at `w`.
pub fn chi2_upper(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 1.0;
    }
    gamma_ur(k as f64 / 2.0, w / 2.0)
}

/// `W = (Rβ̂ − r)' Φ̂⁻¹ (Rβ̂ − r)` for a selection matrix `R`.
pub fn wald(est: &EstimationResult, r_mat: &DMatrix<f64>, r: &DVector<f64>) -> Result<WaldResult> {
    let d = est.beta.len();
    if r_mat.ncols() != d || r_mat.nrows() != r.len() || r.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "R is {}x{} and r has length {} for {d} coefficients",
            r_mat.nrows(),
            r_mat.ncols(),
            r.len()
        )));
    }
    let cols = selected_columns(r_mat)?;
    let factors = est
        .wald
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{} provides no Wald covariance", est.method)))?;
    // Work in scaled coordinates: δ = G⁻¹(Rβ̂ − r) restricted to the selected entries.
    let g = factors.scaling.diag();
    let k = cols.len();
    let delta = DVector::from_iterator(k, cols.iter().zip(r.iter()).map(|(&j, &rj)| (est.beta[j] - rj) / g[j]));
    let phi = DMatrix::from_fn(k, k, |a, b| factors.scaled_cov[(cols[a], cols[b])]);
    let phi_inv = linalg::spd_inverse(&phi, "Wald covariance")?;
    let statistic = (delta.transpose() * phi_inv * &delta)[0].max(0.0);
    Ok(WaldResult { statistic, dof: k, p_value: chi2_upper(statistic, k) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KpssVariant {
    Sols,
    Sur,
    Biam,
}

impl KpssVariant {
    pub const ALL: [KpssVariant; 3] = [KpssVariant::Sols, KpssVariant::Sur, KpssVariant::Biam];

    pub fn name(self) -> &'static str {
        match self {
            KpssVariant::Sols => "sols",
            KpssVariant::Sur => "sur",
            KpssVariant::Biam => "biam",
        }
    }

    /// Estimator whose residuals feed the statistic.
    pub fn method(self) -> Method {
        match self {
            KpssVariant::Sols => Method::FmSols,
            KpssVariant::Sur => Method::FmSur,
            KpssVariant::Biam => Method::FmGls,
        }
    }
}

impl std::str::FromStr for KpssVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sols" | "fm-sols" => Ok(KpssVariant::Sols),
            "sur" | "fm-sur" => Ok(KpssVariant::Sur),
            "biam" | "gls" | "fgls" | "fm-gls" => Ok(KpssVariant::Biam),
            _ => Err(Error::InvalidArgument(format!("unknown test variant '{s}'"))),
        }
    }
}

/// Weight matrix of the KPSS quadratic form.
#[derive(Debug, Clone, Copy)]
pub enum KpssWeight<'a> {
    /// `I_b ⊗ W` for an `n × n` matrix `W` (typically `Ω̂_{u.v}⁻¹`).
    Kronecker(&'a DMatrix<f64>),
    /// The trailing `nb × nb` sub-block of the BIAM.
    Biam(&'a BiamDecomposition),
}

/// `K = b⁻² φ' W φ`, with `φ` stacking the partial sums of the `n × b` block.
pub fn kpss_stat(block: &DMatrix<f64>, weight: KpssWeight<'_>) -> Result<f64> {
    let (n, b) = block.shape();
    if b < 2 {
        return Err(Error::InvalidArgument(format!("block size must be at least 2, got {b}")));
    }
    let mut sums = DMatrix::zeros(n, b);
    let mut acc = DVector::zeros(n);
    for t in 0..b {
        acc += block.column(t);
        sums.set_column(t, &acc);
    }
    let quad = match weight {
        KpssWeight::Kronecker(w) => {
            if w.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("weight must be {n}x{n}")));
            }
            (0..b).map(|t| (sums.column(t).transpose() * w * sums.column(t))[0]).sum::<f64>()
        }
        KpssWeight::Biam(biam) => {
            if biam.dim() != n {
                return Err(Error::DimensionMismatch(format!("filter dimension {} but residuals have {n} rows", biam.dim())));
            }
            let phi = DMatrix::from_column_slice(n * b, 1, sums.as_slice());
            biam.tail_quadratic_form(&phi)?[0]
        }
    };
    Ok(quad / (b * b) as f64)
}

/// `⌊T/b⌋` disjoint 0-based index ranges of length `b`, taken alternately from
/// the start and the end of the sample.
pub fn subsample_blocks(t_len: usize, b: usize) -> Result<Vec<Range<usize>>> {
    if b < 1 || b > t_len {
        return Err(Error::InvalidArgument(format!("block size {b} outside 1..={t_len}")));
    }
    Ok((0..t_len / b)
        .map(|k| {
            let start = if k % 2 == 0 { (k / 2) * b } else { t_len - (k / 2 + 1) * b };
            start..start + b
        })
        .collect())
}

/// Default block-size candidates `⌊√T⌋ ..= ⌊2.5√T⌋`.
pub fn default_block_candidates(t_len: usize) -> RangeInclusive<usize> {
    let root = (t_len as f64).sqrt();
    (root.floor() as usize).max(2)..=((2.5 * root).floor() as usize).min(t_len)
}

/// Block size minimizing the rolling standard deviation of `stat(b)` over
/// `b−2..=b+2`; returns the choice and the evaluated profile.
pub fn min_volatility_block<F>(mut stat: F, candidates: RangeInclusive<usize>) -> Result<(usize, Vec<(usize, f64)>)>
where
    F: FnMut(usize) -> Result<f64>,
{
    let bs: Vec<usize> = candidates.collect();
    if bs.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "minimum volatility rule needs at least 5 candidates, got {}",
            bs.len()
        )));
    }
    let profile = bs.iter().map(|&b| Ok((b, stat(b)?))).collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, f64)> = None;
    for c in 2..profile.len() - 2 {
        let w: Vec<f64> = profile[c - 2..=c + 2].iter().map(|p| p.1).collect();
        let mean = w.iter().sum::<f64>() / 5.0;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        if best.is_none_or(|(_, s)| sd < s) {
            best = Some((profile[c].0, sd));
        }
    }
    Ok((best.expect("interior candidate").0, profile))
}

const CDF_TERM_TOL: f64 = 1e-13;
const CDF_MAX_TERMS: usize = 500;

/// `P(∫₀¹ ‖W(r)‖² dr ≤ x)` for an `n`-dimensional standard Brownian motion.
pub fn limit_cdf(n: usize, x: f64) -> Result<f64> {
    if n < 1 || !(x > 0.0) {
        if n >= 1 && x == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::InvalidArgument(format!("limit CDF needs n >= 1 and x > 0, got n = {n}, x = {x}")));
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let h = n as f64 / 2.0;
    let log_pre = h * std::f64::consts::LN_2 - ln_gamma(h);
    let root = 2.0 * x.sqrt();
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for j in 0..CDF_MAX_TERMS {
        let jf = j as f64;
        let l = 2.0 * std::f64::consts::SQRT_2 * jf + n as f64 / std::f64::consts::SQRT_2;
        let e = erfc(l / root);
        let mag = if e > 0.0 { (log_pre + ln_gamma(jf + h) - ln_gamma(jf + 1.0) + e.ln()).exp() } else { 0.0 };
        let term = if j % 2 == 0 { mag } else { -mag };
        sum += term;
        if mag < CDF_TERM_TOL && mag <= prev {
            return Ok(sum.clamp(0.0, 1.0));
        }
        prev = mag;
    }
    if prev > 1e-8 {
        return Err(Error::NonConvergence(format!("limit CDF series at x = {x}, n = {n}")));
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// `c` with `P(∫‖W‖² ≥ c) = tail_prob`.
pub fn critical_value(n: usize, tail_prob: f64) -> Result<f64> {
    if !(tail_prob > 0.0 && tail_prob < 1.0) {
        return Err(Error::InvalidArgument(format!("tail probability {tail_prob} not in (0, 1)")));
    }
    let target = 1.0 - tail_prob;
    let (mut lo, mut hi) = (0.0_f64, n as f64);
    let mut expansions = 0;
    while limit_cdf(n, hi)? < target {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::NonConvergence("could not bracket the critical value".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if limit_cdf(n, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Tuning of the cointegration tests.
#[derive(Debug, Clone, PartialEq)]
pub struct KpssOptions {
    pub alpha: f64,
    /// Fixed block size; otherwise chosen by the minimum volatility rule.
    pub block_size: Option<usize>,
    /// Candidate block sizes (default [`default_block_candidates`]).
    pub candidates: Option<RangeInclusive<usize>>,
}

impl Default for KpssOptions {
    fn default() -> Self {
        Self { alpha: 0.05, block_size: None, candidates: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpssResult {
    pub variant: KpssVariant,
    pub block_size: usize,
    pub num_blocks: usize,
    pub statistics: Vec<f64>,
    pub k_max: f64,
    pub critical_value: f64,
    pub reject: bool,
    /// Bonferroni tail probability of `K_max` in percent, `100·M·(1 − F_n(K_max))` capped at 100.
    pub rejection_rule: f64,
    /// `K_max(b)` for every evaluated candidate.
    pub profile: Vec<(usize, f64)>,
    /// Banding parameter of the BIAM weight.
    pub q: Option<usize>,
    /// Set when `q > b/2`, where the tail weight is a poor approximation.
    pub q_exceeds_half_block: bool,
}

/// Residuals and weight used by each variant.
fn variant_inputs(est: &EstimationResult, variant: KpssVariant) -> Result<(&DMatrix<f64>, Weight)> {
    match variant {
        KpssVariant::Sols | KpssVariant::Sur => {
            let resid = est.modified_residuals.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("{} does not provide modified residuals", est.method))
            })?;
            let w = est.weights.as_ref().expect("FM estimates carry weights");
            let inv = linalg::spd_inverse(&w.omega_udotv, "Omega_u.v")?;
            Ok((resid, Weight::Kron(inv)))
        }
        KpssVariant::Biam => {
            let biam = est
                .biam
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("{} does not provide a BIAM filter", est.method)))?;
            Ok((&est.residuals, Weight::Biam(biam.clone())))
        }
    }
}

enum Weight {
    Kron(DMatrix<f64>),
    Biam(BiamDecomposition),
}

impl Weight {
    fn as_kpss(&self) -> KpssWeight<'_> {
        match self {
            Weight::Kron(w) => KpssWeight::Kronecker(w),
            Weight::Biam(b) => KpssWeight::Biam(b),
        }
    }
}

/// Block statistics `K_1..K_M` at block size `b`.
pub fn block_statistics(resid: &DMatrix<f64>, b: usize, weight: KpssWeight<'_>) -> Result<Vec<f64>> {
    subsample_blocks(resid.ncols(), b)?
        .into_iter()
        .map(|r| kpss_stat(&resid.columns(r.start, b).into_owned(), weight))
        .collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Subsampling test of the cointegration null from a finished estimate.
pub fn kpss_from_estimate(est: &EstimationResult, variant: KpssVariant, opts: &KpssOptions) -> Result<KpssResult> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("significance level {} not in (0, 1)", opts.alpha)));
    }
    let (resid, weight) = variant_inputs(est, variant)?;
    let (n, t_len) = resid.shape();
    let (b, profile) = match opts.block_size {
        Some(b) => (b, Vec::new()),
        None => {
            let cands = opts.candidates.clone().unwrap_or_else(|| default_block_candidates(t_len));
            min_volatility_block(|b| Ok(max_of(&block_statistics(resid, b, weight.as_kpss())?)), cands)?
        }
    };
    let statistics = block_statistics(resid, b, weight.as_kpss())?;
    let m = statistics.len();
    let k_max = max_of(&statistics);
    let critical_value = critical_value(n, opts.alpha / m as f64)?;
    let tail = 1.0 - limit_cdf(n, k_max.max(0.0))?;
    let q = match &weight {
        Weight::Biam(bd) => Some(bd.q()),
        Weight::Kron(_) => None,
    };
    Ok(KpssResult {
        variant,
        block_size: b,
        num_blocks: m,
        reject: k_max > critical_value,
        k_max,
        critical_value,
        rejection_rule: (100.0 * m as f64 * tail).min(100.0),
        statistics,
        profile,
        q,
        q_exceeds_half_block: q.is_some_and(|q| 2 * q > b),
    })
}

/// Estimates with the variant's estimator and runs the test.
pub fn cointegration_test(
    spec: &CprSpec,
    data: &PanelData,
    variant: KpssVariant,
    est_opts: &EstimationOptions,
    opts: &KpssOptions,
) -> Result<KpssResult> {
    let est = estimate(spec, data, variant.method(), est_opts)?;
    kpss_from_estimate(&est, variant, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biam::VarLadder;
    use crate::estimators::{fm_sols, fm_sur};
    use crate::lrcov::LongRunCov;
    use crate::montecarlo::rng_for;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn selection_matrix_validation() {
        let r = selection_matrix(4, &[1, 3]).unwrap();
        assert_eq!(selected_columns(&r).unwrap(), vec![1, 3]);
        assert!(selection_matrix(4, &[4]).is_err());
        let mut bad = r.clone();
        bad[(0, 0)] = 0.5;
        assert!(selected_columns(&bad).is_err());
        assert!(selected_columns(&selection_matrix(4, &[2, 2]).unwrap()).is_err());
    }

    fn toy_estimate(seed: u64) -> (CprSpec, PanelData, EstimationResult) {
        let mut rng = rng_for(seed, 0);
        let t_len = 80;
        let mut x = DMatrix::zeros(2, t_len);
        let mut y = DMatrix::zeros(2, t_len);
        for i in 0..2 {
            let mut acc = 0.0;
            for t in 0..t_len {
                let e: f64 = StandardNormal.sample(&mut rng);
                let u: f64 = StandardNormal.sample(&mut rng);
                acc += e;
                x[(i, t)] = acc;
                y[(i, t)] = 1.0 + 0.1 * t as f64 + 2.0 * acc - 0.3 * acc * acc + u;
            }
        }
        let spec = CprSpec::quadratic(2).unwrap();
        let data = PanelData::new(y, x).unwrap();
        let est = estimate(&spec, &data, Method::FmSur, &EstimationOptions { bandwidth: Some(3.0), ..Default::default() }).unwrap();
        (spec, data, est)
    }

    #[test]
    fn wald_at_estimate_is_zero() {
        let (_, _, est) = toy_estimate(1);
        let r = selection_matrix(8, &[2, 3]).unwrap();
        let w = wald(&est, &r, &(&r * &est.beta)).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert_eq!(w.p_value, 1.0);
        assert_eq!(w.dof, 2);
    }

    #[test]
    fn scalar_wald_by_hand() {
        let (_, _, est) = toy_estimate(2);
        let cov = est.wald.as_ref().unwrap().covariance();
        let r = selection_matrix(8, &[3]).unwrap();
        let w = wald(&est, &r, &DVector::from_element(1, -0.25)).unwrap();
        let expect = (est.beta[3] + 0.25).powi(2) / cov[(3, 3)];
        assert!((w.statistic - expect).abs() < 1e-9 * expect);
        assert!((w.p_value - chi2_upper(expect, 1)).abs() < 1e-12);
    }

    #[test]
    fn chi2_tail_known_values() {
        assert!((chi2_upper(3.841458820694124, 1) - 0.05).abs() < 1e-12);
        assert!((chi2_upper(5.991464547107979, 2) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn wald_is_scale_invariant() {
        let (spec, data, _) = toy_estimate(3);
        let lr = crate::estimators::kernel_lr(&data, &crate::estimators::ols(&spec, &data).unwrap().residuals, Some(3.0)).unwrap();
        let c = 7.5;
        let scaled = data.with_y(data.y() * c).unwrap();
        let mut lr_c = lr.clone();
        // u scales by c, v does not
        for i in 0..4 {
            for j in 0..4 {
                let f = (if i < 2 { c } else { 1.0 }) * (if j < 2 { c } else { 1.0 });
                lr_c.omega[(i, j)] *= f;
                lr_c.delta[(i, j)] *= f;
            }
        }
        let lr_c = LongRunCov::supplied(lr_c.omega, lr_c.delta, None).unwrap();
        let r = selection_matrix(8, &[2, 7]).unwrap();
        let r0 = DVector::from_vec(vec![1.5, -0.2]);
        for (a, b) in [
            (fm_sols(&spec, &data, &lr).unwrap(), fm_sols(&spec, &scaled, &lr_c).unwrap()),
            (fm_sur(&spec, &data, &lr).unwrap(), fm_sur(&spec, &scaled, &lr_c).unwrap()),
        ] {
            let wa = wald(&a, &r, &r0).unwrap().statistic;
            let wb = wald(&b, &r, &(&r0 * c)).unwrap().statistic;
            assert!((wa - wb).abs() < 1e-8 * wa.max(1.0));
        }
    }

    #[test]
    fn wald_rejects_ols() {
        let (spec, data, _) = toy_estimate(4);
        let est = crate::estimators::ols(&spec, &data).unwrap();
        assert!(wald(&est, &selection_matrix(8, &[0]).unwrap(), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn kpss_trivial_cases() {
        let w = DMatrix::identity(2, 2);
        assert_eq!(kpss_stat(&DMatrix::zeros(2, 10), KpssWeight::Kronecker(&w)).unwrap(), 0.0);
        let e = DMatrix::from_row_slice(1, 4, &[1.0, -2.0, 0.5, 3.0]);
        let one = DMatrix::identity(1, 1);
        let s: [f64; 4] = [1.0, -1.0, -0.5, 2.5];
        let expect = s.iter().map(|v| v * v).sum::<f64>() / 16.0;
        assert!((kpss_stat(&e, KpssWeight::Kronecker(&one)).unwrap() - expect).abs() < 1e-15);
        assert!(kpss_stat(&DMatrix::zeros(1, 1), KpssWeight::Kronecker(&one)).is_err());
        let half = DMatrix::identity(1, 1) * 0.5;
        assert!((kpss_stat(&e, KpssWeight::Kronecker(&half)).unwrap() - expect * 0.5).abs() < 1e-15);
    }

    #[test]
    fn kpss_biam_weight_with_identity_filter() {
        let biam = BiamDecomposition::new(VarLadder::white_noise(DMatrix::identity(2, 2), 1).unwrap(), 30).unwrap();
        let mut rng = rng_for(5, 0);
        let e = DMatrix::from_fn(2, 12, |_, _| StandardNormal.sample(&mut rng));
        let eye = DMatrix::identity(2, 2);
        let a = kpss_stat(&e, KpssWeight::Biam(&biam)).unwrap();
        let b = kpss_stat(&e, KpssWeight::Kronecker(&eye)).unwrap();
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn kpss_mean_matches_limit() {
        let n = 2;
        let b = 2000;
        let reps = 10_000;
        let w = DMatrix::identity(n, n);
        let mut total = 0.0;
        for rep in 0..reps {
            let mut rng = rng_for(6, rep);
            let e = DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng));
            total += kpss_stat(&e, KpssWeight::Kronecker(&w)).unwrap();
        }
        let mean = total / reps as f64;
        assert!((mean - n as f64 / 2.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn block_layout_examples() {
        assert_eq!(subsample_blocks(10, 5).unwrap(), vec![0..5, 5..10]);
        assert_eq!(subsample_blocks(7, 3).unwrap(), vec![0..3, 4..7]);
        assert_eq!(subsample_blocks(145, 22).unwrap().len(), 6);
        assert_eq!(subsample_blocks(20, 3).unwrap()[..4], [0..3, 17..20, 3..6, 14..17]);
        assert!(subsample_blocks(5, 6).is_err());
        assert!(subsample_blocks(5, 0).is_err());
    }

    #[test]
    fn blocks_disjoint_exhaustive() {
        for t in 1..=200 {
            for b in 1..=t {
                let blocks = subsample_blocks(t, b).unwrap();
                assert_eq!(blocks.len(), t / b);
                let mut used = vec![false; t];
                for r in blocks {
                    assert_eq!(r.len(), b);
                    for i in r {
                        assert!(!used[i], "T = {t}, b = {b}");
                        used[i] = true;
                    }
                }
            }
        }
    }

    #[test]
    fn min_volatility_examples() {
        let (b, prof) = min_volatility_block(|_| Ok(1.0), 10..=20).unwrap();
        assert_eq!(b, 12);
        assert_eq!(prof.len(), 11);
        // flat stretch around 17 in an otherwise oscillating profile
        let f = |b: usize| Ok(if (15..=19).contains(&b) { 2.0 } else if b % 2 == 0 { 5.0 } else { -1.0 });
        assert_eq!(min_volatility_block(f, 8..=26).unwrap().0, 17);
        assert!(min_volatility_block(|_| Ok(0.0), 1..=4).is_err());
    }

    #[test]
    fn limit_cdf_axioms() {
        for n in 1..=6 {
            assert!(limit_cdf(n, 1e-4).unwrap() < 1e-12);
            // alternating-series cancellation limits accuracy far in the upper tail
            assert!(limit_cdf(n, 200.0).unwrap() > 1.0 - 1e-7);
            let mut prev = 0.0;
            for k in 1..=400 {
                let v = limit_cdf(n, k as f64 * 0.05).unwrap();
                assert!(v >= prev - 1e-7, "n = {n}, x = {}", k as f64 * 0.05);
                prev = v;
            }
        }
        assert!(limit_cdf(0, 1.0).is_err());
        assert!(limit_cdf(1, -1.0).is_err());
    }

    #[test]
    fn limit_cdf_mean_matches_integral() {
        // E ∫‖W‖² = n/2 = ∫₀^∞ (1 − F_n(x)) dx
        for n in [1usize, 3, 6] {
            let h = 0.002;
            let mut mean = 0.0;
            let mut x = h / 2.0;
            while x < 60.0 {
                mean += (1.0 - limit_cdf(n, x).unwrap()) * h;
                x += h;
            }
            assert!((mean - n as f64 / 2.0).abs() < 1e-3, "n = {n}: {mean}");
        }
    }

    #[test]
    fn critical_values_invert_cdf() {
        for n in [1usize, 2, 6] {
            let mut prev = f64::INFINITY;
            for p in [0.001, 0.05 / 6.0, 0.01, 0.05, 0.1, 0.5] {
                let c = critical_value(n, p).unwrap();
                assert!((limit_cdf(n, c).unwrap() - (1.0 - p)).abs() < 1e-10);
                assert!(c < prev);
                prev = c;
            }
        }
        assert!(critical_value(1, 0.0).is_err());
    }

    #[test]
    fn scalar_five_percent_point() {
        // Tabulated 95% quantile of ∫W² (the Brownian-bridge analogue is 0.463).
        let c = critical_value(1, 0.05).unwrap();
        assert!((c - 1.6557).abs() < 5e-4, "{c}");
    }

    #[test]
    fn bonferroni_rejection_rule_example() {
        let v = 6.0 * (1.0 - limit_cdf(6, 8.19).unwrap()) * 100.0;
        assert!((v - 2.73).abs() < 0.05, "{v}");
    }

    #[test]
    fn zero_residuals_do_not_reject() {
        let (spec, data, _) = toy_estimate(7);
        let sys = crate::model::build_regressors(&spec, &data).unwrap();
        let beta = DVector::from_vec(vec![1.0, 0.1, 2.0, -0.3, 1.0, 0.1, 2.0, -0.3]);
        let exact = data.with_y(sys.fitted(&beta).unwrap()).unwrap();
        let mut est = crate::estimators::ols(&spec, &exact).unwrap();
        est.biam = Some(BiamDecomposition::new(VarLadder::white_noise(DMatrix::identity(2, 2), 1).unwrap(), 80).unwrap());
        let res = kpss_from_estimate(&est, KpssVariant::Biam, &KpssOptions::default()).unwrap();
        assert!(res.statistics.iter().all(|&k| k.abs() < 1e-12));
        assert!(!res.reject);
    }

    #[test]
    fn cointegration_test_runs_for_all_variants() {
        let (spec, data, _) = toy_estimate(8);
        for v in KpssVariant::ALL {
            let res = cointegration_test(&spec, &data, v, &EstimationOptions::default(), &KpssOptions::default()).unwrap();
            assert_eq!(res.num_blocks, 80 / res.block_size);
            assert_eq!(res.reject, res.k_max > res.critical_value);
            assert!(default_block_candidates(80).contains(&res.block_size));
            assert_eq!(res.q.is_some(), v == KpssVariant::Biam);
        }
    }

    proptest! {
        #[test]
        fn kpss_homogeneous_in_weight(seed in 0u64..1000, c in 0.1f64..10.0) {
            let mut rng = rng_for(seed, 1);
            let e = DMatrix::from_fn(2, 15, |_, _| StandardNormal.sample(&mut rng));
            let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
            let wc = &w / c;
            let a = kpss_stat(&e, KpssWeight::Kronecker(&w)).unwrap();
            let b = kpss_stat(&e, KpssWeight::Kronecker(&wc)).unwrap();
            prop_assert!((b - a / c).abs() <= 1e-12 * a.abs().max(1e-12));
        }
    }
}
