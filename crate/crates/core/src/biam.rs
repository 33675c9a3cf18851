//! Modified Cholesky block decomposition and the banded inverse
//! autocovariance matrix (BIAM).
//!
//! For an `n`-dimensional stationary series the inverse of the `nT × nT`
//! autocovariance matrix factors as `Σ⁻¹ = M' S⁻¹ M`, where `M` is unit lower
//! block triangular with the negated best-linear-predictor coefficients and
//! `S` is block diagonal with the prediction error covariances. Banding at
//! order `q` keeps only the first `q` lags: row `t` of `M(q)` uses the
//! order-`ℓ_t = min(t-1, q)` predictor.
//!
//! Sequences of blocks are passed as stacked matrices: a `T`-sequence of
//! `n × w` blocks is an `nT × w` matrix whose rows `n(t-1)..nt` hold block `t`.

use nalgebra::{DMatrix, DVectorView};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative eigenvalue floor for accepting a prediction error covariance.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Largest `nT` accepted by [`BiamDecomposition::materialize_small`].
pub const MATERIALIZE_LIMIT: usize = 2000;

/// Ladder of VAR fits of orders `0..=q`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLadder {
    dim: usize,
    /// `coeffs[ℓ-1][j-1] = A_j(ℓ)`.
    coeffs: Vec<Vec<DMatrix<f64>>>,
    /// `innovations[ℓ] = S(ℓ)`.
    innovations: Vec<DMatrix<f64>>,
}

impl VarLadder {
    /// Least-squares VAR fits of orders `1..=q` to the `n × T` series `u`.
    ///
    /// The order-`ℓ` fit minimizes `Σ_{t=ℓ+1}^T ‖u_t − Σ_j Θ_j u_{t-j}‖²` and
    /// `S(ℓ)` averages the residual outer products over `T − ℓ` terms;
    /// `S(0) = T⁻¹ Σ u_t u_t'`.
    pub fn fit(u: &DMatrix<f64>, q: usize) -> Result<Self> {
        let (n, t_len) = u.shape();
        if q < 1 {
            return Err(Error::InvalidArgument("VAR ladder order must be at least 1".into()));
        }
        if n == 0 || t_len <= n * q + 1 {
            return Err(Error::InvalidArgument(format!(
                "T = {t_len} is too short for an order-{q} ladder in dimension {n}"
            )));
        }
        let mut s0 = u * u.transpose() / t_len as f64;
        linalg::symmetrize(&mut s0);
        linalg::check_pd(&s0, PD_TOLERANCE, "S(0)")?;
        let scale = linalg::eigen_range(&s0).1;
        let mut innovations = vec![s0];
        let mut coeffs = Vec::with_capacity(q);

        for l in 1..=q {
            let m = t_len - l;
            let mut lags = DMatrix::zeros(n * l, m);
            for j in 1..=l {
                lags.rows_mut(n * (j - 1), n).copy_from(&u.columns(l - j, m));
            }
            let target = u.columns(l, m);
            let gram = &lags * lags.transpose();
            let cross = target * lags.transpose();
            let chol = gram.cholesky().ok_or_else(|| Error::RankDeficient {
                what: format!("lag Gram matrix of the order-{l} VAR fit"),
            })?;
            let theta = chol.solve(&cross.transpose()).transpose();
            let resid = target - &theta * &lags;
            let mut s = &resid * resid.transpose() / m as f64;
            linalg::symmetrize(&mut s);
            let (lo, hi) = linalg::eigen_range(&s);
            if !(lo >= PD_TOLERANCE * scale) {
                return Err(Error::NotPositiveDefinite {
                    what: format!("S({l})"),
                    min_eigenvalue: lo,
                    max_eigenvalue: hi,
                });
            }
            coeffs.push((0..l).map(|j| theta.columns(n * j, n).into_owned()).collect());
            innovations.push(s);
        }
        Ok(Self { dim: n, coeffs, innovations })
    }

    /// Ladder from explicit coefficient blocks (`coeffs[ℓ-1]` has `ℓ`
    /// blocks) and prediction error covariances `S(0..=q)`.
    pub fn from_parts(coeffs: Vec<Vec<DMatrix<f64>>>, innovations: Vec<DMatrix<f64>>) -> Result<Self> {
        if innovations.len() != coeffs.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficient levels need {} innovation covariances, got {}",
                coeffs.len(),
                coeffs.len() + 1,
                innovations.len()
            )));
        }
        let n = innovations[0].nrows();
        for (l, level) in coeffs.iter().enumerate() {
            if level.len() != l + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "order {} needs {} coefficient blocks, got {}",
                    l + 1,
                    l + 1,
                    level.len()
                )));
            }
            if level.iter().any(|a| a.shape() != (n, n)) {
                return Err(Error::DimensionMismatch(format!("coefficient block of order {} is not {n}x{n}", l + 1)));
            }
        }
        let mut innovations = innovations;
        for (l, s) in innovations.iter_mut().enumerate() {
            if s.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("S({l}) is not {n}x{n}")));
            }
            linalg::symmetrize(s);
            linalg::check_pd(s, PD_TOLERANCE, &format!("S({l})"))?;
        }
        Ok(Self { dim: n, coeffs, innovations })
    }

    /// Ladder of a white-noise series with covariance `sigma`: all `A_j(ℓ) = 0`.
    pub fn white_noise(sigma: DMatrix<f64>, q: usize) -> Result<Self> {
        let n = sigma.nrows();
        let coeffs = (1..=q).map(|l| vec![DMatrix::zeros(n, n); l]).collect();
        Self::from_parts(coeffs, vec![sigma; q + 1])
    }

    /// Population ladder from autocovariances `gamma[h] = E(u_t u_{t-h}')`,
    /// `h = 0..=q`, by solving the Yule–Walker equations of each order.
    pub fn from_autocovariances(gamma: &[DMatrix<f64>], q: usize) -> Result<Self> {
        if gamma.len() < q + 1 {
            return Err(Error::InvalidArgument(format!(
                "order {q} needs {} autocovariances, got {}",
                q + 1,
                gamma.len()
            )));
        }
        let n = gamma[0].nrows();
        // E(u_{t-i} u_{t-j}') = Γ(j - i), with Γ(-h) = Γ(h)'.
        let lagged = |i: usize, j: usize| -> DMatrix<f64> {
            if j >= i {
                gamma[j - i].clone()
            } else {
                gamma[i - j].transpose()
            }
        };
        let mut coeffs = Vec::with_capacity(q);
        let mut innovations = vec![gamma[0].clone()];
        for l in 1..=q {
            let mut big = DMatrix::zeros(n * l, n * l);
            let mut rhs = DMatrix::zeros(n, n * l);
            for i in 0..l {
                rhs.columns_mut(n * i, n).copy_from(&gamma[i + 1]);
                for j in 0..l {
                    big.view_mut((n * i, n * j), (n, n)).copy_from(&lagged(i, j));
                }
            }
            let chol = big.cholesky().ok_or_else(|| Error::RankDeficient {
                what: format!("order-{l} Yule-Walker system"),
            })?;
            let theta = chol.solve(&rhs.transpose()).transpose();
            let s = &gamma[0] - &theta * rhs.transpose();
            coeffs.push((0..l).map(|j| theta.columns(n * j, n).into_owned()).collect());
            innovations.push(s);
        }
        Self::from_parts(coeffs, innovations)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Highest fitted order `q`.
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// `A_j(ℓ)` for `1 ≤ j ≤ ℓ ≤ q`.
    pub fn coeff(&self, l: usize, j: usize) -> &DMatrix<f64> {
        &self.coeffs[l - 1][j - 1]
    }

    /// `S(ℓ)` for `0 ≤ ℓ ≤ q`.
    pub fn innovation_cov(&self, l: usize) -> &DMatrix<f64> {
        &self.innovations[l]
    }

    /// The ladder restricted to orders `0..=q`.
    pub fn truncate(&self, q: usize) -> Result<Self> {
        if q > self.order() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate an order-{} ladder to order {q}",
                self.order()
            )));
        }
        Ok(Self {
            dim: self.dim,
            coeffs: self.coeffs[..q].to_vec(),
            innovations: self.innovations[..=q].to_vec(),
        })
    }
}

/// Implicit representation of `Σ̂⁻¹(q) = M̂'(q) Ŝ⁻¹(q) M̂(q)` for a series of
/// length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiamDecomposition {
    ladder: VarLadder,
    t_len: usize,
    s_inv: Vec<DMatrix<f64>>,
}

impl BiamDecomposition {
    /// Wraps a ladder of order `q < T`.
    pub fn new(ladder: VarLadder, t_len: usize) -> Result<Self> {
        if ladder.order() >= t_len {
            return Err(Error::InvalidArgument(format!(
                "banding parameter {} must be below T = {t_len}",
                ladder.order()
            )));
        }
        let s_inv = ladder
            .innovations
            .iter()
            .enumerate()
            .map(|(l, s)| linalg::spd_inverse(s, &format!("S({l})")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ladder, t_len, s_inv })
    }

    /// Fits the ladder to the `n × T` residuals and wraps it.
    pub fn fit(u: &DMatrix<f64>, q: usize) -> Result<Self> {
        Self::new(VarLadder::fit(u, q)?, u.ncols())
    }

    pub fn ladder(&self) -> &VarLadder {
        &self.ladder
    }

    pub fn q(&self) -> usize {
        self.ladder.order()
    }

    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }

    pub fn dim(&self) -> usize {
        self.ladder.dim
    }

    /// Predictor order used in (0-based) row `s`.
    fn order_at(&self, s: usize) -> usize {
        s.min(self.q())
    }

    fn check_rows(&self, x: &DMatrix<f64>, rows: usize, what: &str) -> Result<()> {
        if x.nrows() != rows {
            return Err(Error::DimensionMismatch(format!(
                "{what} has {} rows, expected {rows}",
                x.nrows()
            )));
        }
        Ok(())
    }

    /// `M̂(q) X`: row `t` becomes `X_t − Σ_{j=1}^{ℓ_t} Â_j(ℓ_t) X_{t-j}`.
    pub fn apply_filter(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        self.check_rows(x, n * self.t_len, "filter input")?;
        let mut out = x.clone();
        for s in 1..self.t_len {
            let l = self.order_at(s);
            let mut row = out.rows_mut(n * s, n);
            for j in 1..=l {
                row.gemm(-1.0, self.ladder.coeff(l, j), &x.rows(n * (s - j), n), 1.0);
            }
        }
        Ok(out)
    }

    /// `X' Σ̂⁻¹(q) Y` computed as `Σ_t (M̂X)_t' Ŝ(ℓ_t)⁻¹ (M̂Y)_t`.
    pub fn quadratic_form(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let fx = self.apply_filter(x)?;
        let fy = self.apply_filter(y)?;
        Ok(self.filtered_form(&fx, &fy))
    }

    /// `Σ_t fx_t' Ŝ(ℓ_t)⁻¹ fy_t` for already filtered inputs.
    pub(crate) fn filtered_form(&self, fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(fx.ncols(), fy.ncols());
        for s in 0..self.t_len {
            let w = &self.s_inv[self.order_at(s)] * fy.rows(n * s, n);
            out.gemm_tr(1.0, &fx.rows(n * s, n), &w, 1.0);
        }
        out
    }

    /// Dense `M̂(q)` following the four-case block rule.
    pub fn filter_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let size = n * self.t_len;
        if size > MATERIALIZE_LIMIT {
            return Err(Error::SizeGuard { size, limit: MATERIALIZE_LIMIT });
        }
        let mut m = DMatrix::identity(size, size);
        for s in 1..self.t_len {
            let l = self.order_at(s);
            for j in 1..=l {
                m.view_mut((n * s, n * (s - j)), (n, n)).copy_from(&(-self.ladder.coeff(l, j)));
            }
        }
        Ok(m)
    }

    /// Dense `Ŝ⁻¹(q)` (block diagonal).
    fn dense_s_inv(&self) -> DMatrix<f64> {
        let n = self.dim();
        let size = n * self.t_len;
        let mut s = DMatrix::zeros(size, size);
        for t in 0..self.t_len {
            s.view_mut((n * t, n * t), (n, n)).copy_from(&self.s_inv[self.order_at(t)]);
        }
        s
    }

    /// Dense `M̂'(q) Ŝ⁻¹(q) M̂(q)`; intended for small problems and tests.
    pub fn materialize_small(&self) -> Result<DMatrix<f64>> {
        let m = self.filter_matrix()?;
        let mut out = m.transpose() * self.dense_s_inv() * m;
        linalg::symmetrize(&mut out);
        Ok(out)
    }

    /// `V' Σ̂⁻¹(q, b) V`, where `Σ̂⁻¹(q, b)` is the sub-block of `Σ̂⁻¹(q)` for
    /// time indices `T−b+1..T` and `V` is an `nb × w` block sequence.
    pub fn tail_quadratic_form(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if v.nrows() == 0 || v.nrows() % n != 0 {
            return Err(Error::DimensionMismatch(format!(
                "tail sequence has {} rows, not a positive multiple of {n}",
                v.nrows()
            )));
        }
        let b = v.nrows() / n;
        if b > self.t_len {
            return Err(Error::InvalidArgument(format!(
                "tail length {b} exceeds T = {}",
                self.t_len
            )));
        }
        let start = self.t_len - b;
        let mut out = DMatrix::zeros(v.ncols(), v.ncols());
        for k in 0..b {
            let l = self.order_at(start + k);
            let mut row = v.rows(n * k, n).into_owned();
            for j in 1..=l.min(k) {
                row.gemm(-1.0, self.ladder.coeff(l, j), &v.rows(n * (k - j), n), 1.0);
            }
            let w = &self.s_inv[l] * &row;
            out.gemm_tr(1.0, &row, &w, 1.0);
        }
        Ok(out)
    }

    /// `Σ_{s=T−r+1}^{T} [M̂⁻¹ Ŝ M̂⁻¹']_{s,T}`: the sum of the last `r` blocks of
    /// the final block column of the implied autocovariance matrix, obtained
    /// by back- and forward-substitution against the unit triangular `M̂`.
    pub fn implied_covariance_tail_sum(&self, r: usize) -> Result<DMatrix<f64>> {
        if r < 1 || r > self.t_len {
            return Err(Error::InvalidArgument(format!(
                "tail length {r} outside 1..={}",
                self.t_len
            )));
        }
        let n = self.dim();
        let t_len = self.t_len;
        let q = self.q();
        // M' w = e_T
        let mut w = vec![DMatrix::<f64>::zeros(n, n); t_len];
        w[t_len - 1] = DMatrix::identity(n, n);
        for i in (0..t_len - 1).rev() {
            let mut acc = DMatrix::zeros(n, n);
            for k in (i + 1)..=(i + q).min(t_len - 1) {
                let l = self.order_at(k);
                if k - i <= l {
                    acc.gemm_tr(1.0, self.ladder.coeff(l, k - i), &w[k], 1.0);
                }
            }
            w[i] = acc;
        }
        // M x = S w
        let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
        for i in 0..t_len {
            let l = self.order_at(i);
            let mut xi = self.ladder.innovation_cov(l) * &w[i];
            for j in 1..=l {
                xi.gemm(1.0, self.ladder.coeff(l, j), &x[i - j], 1.0);
            }
            x.push(xi);
        }
        Ok(x[t_len - r..].iter().fold(DMatrix::zeros(n, n), |acc, xi| acc + xi))
    }
}

/// Matrix norm used by the banding risk criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskNorm {
    /// Maximum absolute column sum.
    #[default]
    L1,
    /// Spectral norm.
    L2,
}

/// Tuning of [`select_banding`]; `None` picks `H = ⌊2T^{1/4}⌋`, `l0 = ⌊T/5⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BandingOptions {
    pub h: Option<usize>,
    pub l0: Option<usize>,
    pub norm: RiskNorm,
}

/// Outcome of the risk-minimizing banding search.
#[derive(Debug, Clone, PartialEq)]
pub struct BandingSelection {
    pub q: usize,
    pub h: usize,
    pub l0: usize,
    /// Average risk for `q̄ = 1..H-1` (index `q̄ - 1`).
    pub risks: Vec<f64>,
}

/// Default `(H, l0)` for a sample of length `T`.
pub fn default_banding_window(t_len: usize) -> (usize, usize) {
    let h = (2.0 * (t_len as f64).powf(0.25)).floor() as usize;
    (h, t_len / 5)
}

/// Selects the banding parameter by subsample risk minimization.
///
/// The residuals are split into `⌊T/l0⌋` consecutive subsequences. For each
/// candidate `q̄ ∈ [1, H)` the BIAM of every subsequence, evaluated at size
/// `nH × nH`, is compared with the inverse of the full-sample `nH × nH`
/// autocovariance estimate; the candidate with the smallest average norm
/// deviation wins (ties go to the smaller `q̄`). Orders the subsequences
/// cannot support are skipped, so `risks` may be shorter than `H - 1`.
pub fn select_banding(u: &DMatrix<f64>, opts: &BandingOptions) -> Result<BandingSelection> {
    let (n, t_len) = u.shape();
    let (dh, dl0) = default_banding_window(t_len);
    let h = opts.h.unwrap_or(dh);
    let l0 = opts.l0.unwrap_or(dl0);
    if h < 2 || h >= l0 || l0 > t_len {
        return Err(Error::InvalidArgument(format!(
            "banding search needs 2 <= H < l0 <= T, got H = {h}, l0 = {l0}, T = {t_len}"
        )));
    }
    // Candidates whose subsequence fit would leave fewer than n + 1 residual
    // degrees of freedom are dropped; near-exact fits make S(q̄) singular.
    let max_q = (1..h).take_while(|&q| l0 >= q + n * q + n + 1).last().ok_or_else(|| {
        Error::InvalidArgument(format!("subsequence length {l0} too short for an order-1 fit in dimension {n}"))
    })?;

    // Full-sample autocovariance of stacked windows [u_{t-H+1}; …; u_t].
    let nh = n * h;
    let mut pi = DMatrix::zeros(nh, nh);
    let count = t_len - h;
    let data = u.as_slice();
    for t in (h - 1)..(t_len - 1) {
        let w = DVectorView::from_slice(&data[n * (t + 1 - h)..n * (t + 1)], nh);
        pi.ger(1.0, &w, &w, 1.0);
    }
    pi /= count as f64;
    linalg::symmetrize(&mut pi);
    let pi_inv = linalg::spd_inverse(&pi, "sample autocovariance of the banding window")?;

    let j0 = t_len / l0;
    let mut risks = vec![0.0; max_q];
    for j in 0..j0 {
        let sub = u.columns(j * l0, l0).into_owned();
        let ladder = VarLadder::fit(&sub, max_q)?;
        for qbar in 1..=max_q {
            let biam = BiamDecomposition::new(ladder.truncate(qbar)?, h)?;
            let diff = biam.materialize_small()? - &pi_inv;
            risks[qbar - 1] += match opts.norm {
                RiskNorm::L1 => linalg::norm_l1(&diff),
                RiskNorm::L2 => linalg::norm_l2_sym(&diff),
            };
        }
    }
    for r in risks.iter_mut() {
        *r /= j0 as f64;
    }
    let mut best = 0;
    for (k, r) in risks.iter().enumerate() {
        if *r < risks[best] {
            best = k;
        }
    }
    Ok(BandingSelection { q: best + 1, h, l0, risks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::rng_for;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut impl rand::Rng, n: usize, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(rng))
    }

    fn simulate_var(coeffs: &[DMatrix<f64>], t_len: usize, seed: u64) -> DMatrix<f64> {
        let n = coeffs[0].nrows();
        let burn = 200;
        let mut rng = rng_for(seed, 0);
        let e = normal(&mut rng, n, t_len + burn);
        let mut u = DMatrix::zeros(n, t_len + burn);
        for t in 0..t_len + burn {
            let mut ut = e.column(t).into_owned();
            for (j, a) in coeffs.iter().enumerate() {
                if t > j {
                    ut += a * u.column(t - j - 1);
                }
            }
            u.set_column(t, &ut);
        }
        u.columns(burn, t_len).into_owned()
    }

    fn op_norm(m: &DMatrix<f64>) -> f64 {
        m.clone().svd(false, false).singular_values.max()
    }

    #[test]
    fn white_noise_ladder_coefficients_vanish() {
        let mut rng = rng_for(7, 0);
        let u = normal(&mut rng, 2, 20_000);
        let ladder = VarLadder::fit(&u, 3).unwrap();
        for l in 1..=3 {
            for j in 1..=l {
                assert!(op_norm(ladder.coeff(l, j)) < 0.05);
            }
            assert!((ladder.innovation_cov(l) - ladder.innovation_cov(0)).amax() < 0.02);
        }
    }

    #[test]
    fn var1_coefficients_recovered() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let u = simulate_var(&[a.clone()], 100_000, 11);
        let ladder = VarLadder::fit(&u, 1).unwrap();
        assert!(op_norm(&(ladder.coeff(1, 1) - &a)) < 0.01);
    }

    #[test]
    fn scalar_ar1_matches_closed_form_slope() {
        let u = simulate_var(&[DMatrix::from_element(1, 1, 0.6)], 500, 3);
        let ladder = VarLadder::fit(&u, 1).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for t in 1..500 {
            num += u[t] * u[t - 1];
            den += u[t - 1] * u[t - 1];
        }
        assert!((ladder.coeff(1, 1)[0] - num / den).abs() < 1e-12);
        let s0: f64 = u.iter().map(|v| v * v).sum::<f64>() / 500.0;
        assert!((ladder.innovation_cov(0)[0] - s0).abs() < 1e-12);
    }

    #[test]
    fn short_series_and_bad_order_rejected() {
        let u = DMatrix::from_fn(2, 5, |i, t| (i + t) as f64);
        assert!(VarLadder::fit(&u, 0).is_err());
        assert!(matches!(VarLadder::fit(&u, 2), Err(Error::InvalidArgument(_))));
        let flat = DMatrix::from_element(1, 30, 1.0);
        assert!(VarLadder::fit(&flat, 1).is_err());
    }

    fn example_ladder() -> VarLadder {
        let a = |v: f64| DMatrix::from_row_slice(2, 2, &[v, 0.1, 0.0, v / 2.0]);
        let s = |v: f64| DMatrix::from_row_slice(2, 2, &[v, 0.2, 0.2, 1.0]);
        VarLadder::from_parts(
            vec![vec![a(0.5)], vec![a(0.4), a(0.2)], vec![a(0.3), a(0.15), a(0.05)]],
            vec![s(2.0), s(1.5), s(1.3), s(1.2)],
        )
        .unwrap()
    }

    #[test]
    fn example_one_block_pattern() {
        let ladder = example_ladder();
        let q2 = BiamDecomposition::new(ladder.truncate(2).unwrap(), 4).unwrap();
        let m = q2.filter_matrix().unwrap();
        let blk = |r: usize, c: usize| m.view((2 * r, 2 * c), (2, 2)).into_owned();
        assert_eq!(blk(1, 0), -ladder.coeff(1, 1));
        assert_eq!(blk(2, 0), -ladder.coeff(2, 2));
        assert_eq!(blk(2, 1), -ladder.coeff(2, 1));
        assert_eq!(blk(3, 0), DMatrix::zeros(2, 2));
        assert_eq!(blk(3, 1), -ladder.coeff(2, 2));
        assert_eq!(blk(3, 2), -ladder.coeff(2, 1));
        assert_eq!(blk(0, 1), DMatrix::zeros(2, 2));

        let q3 = BiamDecomposition::new(ladder.clone(), 4).unwrap();
        let m3 = q3.filter_matrix().unwrap();
        assert_eq!(m3.view((6, 0), (2, 2)).into_owned(), -ladder.coeff(3, 3));

        // Row 4 of the filter uses Â_1(2), Â_2(2) and nothing at lag 3.
        let x = DMatrix::from_fn(8, 1, |i, _| (i as f64 + 1.0).sqrt());
        let f = q2.apply_filter(&x).unwrap();
        let expect = x.rows(6, 2) - ladder.coeff(2, 1) * x.rows(4, 2) - ladder.coeff(2, 2) * x.rows(2, 2);
        assert!((f.rows(6, 2) - expect).amax() < 1e-14);
        assert!((&f - &m * &x).amax() < 1e-13);
    }

    #[test]
    fn scalar_ar1_filter_is_prais_winsten() {
        let rho = 0.7;
        let ladder = VarLadder::from_parts(
            vec![vec![DMatrix::from_element(1, 1, rho)]],
            vec![DMatrix::from_element(1, 1, 1.0 / (1.0 - rho * rho)), DMatrix::from_element(1, 1, 1.0)],
        )
        .unwrap();
        let biam = BiamDecomposition::new(ladder, 6).unwrap();
        let y = DMatrix::from_column_slice(6, 1, &[1.0, 3.0, -2.0, 0.5, 4.0, 1.5]);
        let f = biam.apply_filter(&y).unwrap();
        assert_eq!(f[0], y[0]);
        for t in 1..6 {
            assert!((f[t] - (y[t] - rho * y[t - 1])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_coefficients_give_identity_filter() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let biam = BiamDecomposition::new(VarLadder::white_noise(sigma, 2).unwrap(), 5).unwrap();
        let x = DMatrix::from_fn(10, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(biam.apply_filter(&x).unwrap(), x);
    }

    #[test]
    fn identity_innovations_reduce_to_plain_products() {
        let biam = BiamDecomposition::new(VarLadder::white_noise(DMatrix::identity(2, 2), 1).unwrap(), 4).unwrap();
        let x = DMatrix::from_fn(8, 2, |i, j| (i as f64 - j as f64).sin());
        let y = DMatrix::from_fn(8, 3, |i, j| (i * j) as f64 * 0.1);
        let q = biam.quadratic_form(&x, &y).unwrap();
        assert!((q - x.transpose() * &y).amax() < 1e-13);
        let n1 = BiamDecomposition::new(
            VarLadder::white_noise(DMatrix::from_element(1, 1, 4.0), 1).unwrap(),
            5,
        )
        .unwrap();
        let dense = n1.materialize_small().unwrap();
        assert!((dense - DMatrix::identity(5, 5) * 0.25).amax() < 1e-15);
    }

    #[test]
    fn quadratic_form_matches_dense_oracle() {
        let u = simulate_var(&[DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.2, -0.3])], 40, 5);
        let biam = BiamDecomposition::fit(&u, 3).unwrap();
        let mut rng = rng_for(99, 1);
        let x = normal(&mut rng, 80, 3);
        let y = normal(&mut rng, 80, 2);
        let dense = biam.materialize_small().unwrap();
        let expect = x.transpose() * &dense * &y;
        let got = biam.quadratic_form(&x, &y).unwrap();
        assert!((&got - &expect).amax() <= 1e-10 * expect.amax());
        let xx = biam.quadratic_form(&x, &x).unwrap();
        assert!((&xx - xx.transpose()).amax() < 1e-10 * xx.amax());
        assert!(linalg::eigen_range(&xx).0 > -1e-12 * xx.amax());
        // unit coordinate sequences pick out single entries
        let e = |k: usize| DMatrix::from_fn(80, 1, |i, _| if i == k { 1.0 } else { 0.0 });
        let v = biam.quadratic_form(&e(7), &e(12)).unwrap()[0];
        assert!((v - dense[(7, 12)]).abs() < 1e-12 * dense.amax());
    }

    #[test]
    fn materialize_guard() {
        let biam = BiamDecomposition::new(VarLadder::white_noise(DMatrix::identity(3, 3), 1).unwrap(), 700).unwrap();
        assert!(matches!(biam.materialize_small(), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn tail_form_matches_dense_sub_block() {
        let u = simulate_var(&[DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.3])], 30, 8);
        let biam = BiamDecomposition::fit(&u, 2).unwrap();
        let dense = biam.materialize_small().unwrap();
        let mut rng = rng_for(4, 4);
        for b in [1usize, 2, 3, 10, 30] {
            let v = normal(&mut rng, 2 * b, 1);
            let sub = dense.view((60 - 2 * b, 60 - 2 * b), (2 * b, 2 * b));
            let expect = (v.transpose() * sub * &v)[0];
            let got = biam.tail_quadratic_form(&v).unwrap()[0];
            assert!((got - expect).abs() < 1e-10 * expect.abs().max(1.0), "b = {b}");
        }
        let v = normal(&mut rng, 60, 1);
        let full = biam.quadratic_form(&v, &v).unwrap()[0];
        assert!((biam.tail_quadratic_form(&v).unwrap()[0] - full).abs() < 1e-10 * full);
        assert_eq!(biam.tail_quadratic_form(&DMatrix::zeros(8, 1)).unwrap()[0], 0.0);
        assert!(biam.tail_quadratic_form(&DMatrix::zeros(0, 1)).is_err());
    }

    #[test]
    fn tail_sum_matches_dense_inverse() {
        let u = simulate_var(&[DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4])], 25, 21);
        let biam = BiamDecomposition::fit(&u, 3).unwrap();
        let m = biam.filter_matrix().unwrap();
        let m_inv = m.clone().try_inverse().unwrap();
        let mut s = DMatrix::zeros(50, 50);
        for t in 0..25 {
            s.view_mut((2 * t, 2 * t), (2, 2))
                .copy_from(biam.ladder().innovation_cov(t.min(3)));
        }
        let sigma = &m_inv * s * m_inv.transpose();
        for r in [1usize, 3, 7] {
            let mut expect = DMatrix::zeros(2, 2);
            for blk in (25 - r)..25 {
                expect += sigma.view((2 * blk, 48), (2, 2));
            }
            let got = biam.implied_covariance_tail_sum(r).unwrap();
            assert!((&got - &expect).amax() < 1e-10 * expect.amax(), "r = {r}");
        }
    }

    #[test]
    fn banding_single_candidate() {
        let mut rng = rng_for(1, 2);
        let u = normal(&mut rng, 2, 200);
        let sel = select_banding(&u, &BandingOptions { h: Some(2), ..Default::default() }).unwrap();
        assert_eq!(sel.q, 1);
        assert_eq!(sel.risks.len(), 1);
        assert_eq!(default_banding_window(100), (6, 20));
        assert!(select_banding(&u, &BandingOptions { h: Some(50), l0: Some(40), ..Default::default() }).is_err());
    }

    #[test]
    fn banding_on_white_noise_prefers_one() {
        let mut ones = 0;
        for seed in 0..100 {
            let mut rng = rng_for(seed, 3);
            let u = normal(&mut rng, 2, 500);
            if select_banding(&u, &BandingOptions::default()).unwrap().q == 1 {
                ones += 1;
            }
        }
        assert!(ones > 50, "q = 1 selected in {ones} of 100 runs");
    }

    #[test]
    fn banding_l2_norm_runs() {
        let u = simulate_var(&[DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.0, 0.6])], 300, 2);
        let sel = select_banding(&u, &BandingOptions { norm: RiskNorm::L2, ..Default::default() }).unwrap();
        assert!(sel.q >= 1 && sel.q < sel.h);
    }
}
