//! Long-run covariance estimation for `ξ_t = [u_t', v_t']'`.
//!
//! Orientation follows `Δ = Σ_{h≥0} E(ξ_t ξ_{t+h}')` and
//! `Ω = Δ + Δ' − Γ(0)`. All `2n × 2n` matrices are partitioned with the `u`
//! block first.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::biam::{BiamDecomposition, VarLadder};
use crate::error::{Error, Result};
use crate::linalg;

/// How a [`LongRunCov`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSource {
    Kernel,
    Biam,
    Supplied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongRunCov {
    n: usize,
    pub omega: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    /// Innovation covariance of the fitted VAR (BIAM path and supplied values only).
    pub sigma: Option<DMatrix<f64>>,
    pub source: LrSource,
    /// Kernel bandwidth (kernel path).
    pub bandwidth: Option<f64>,
    /// `(q_T, r_T)` (BIAM path).
    pub orders: Option<(usize, usize)>,
}

fn block(m: &DMatrix<f64>, n: usize, r: usize, c: usize) -> DMatrix<f64> {
    m.view((r * n, c * n), (n, n)).into_owned()
}

impl LongRunCov {
    /// Externally supplied `Ω`, `Δ` and optionally `Σ`, all `2n × 2n`.
    pub fn supplied(omega: DMatrix<f64>, delta: DMatrix<f64>, sigma: Option<DMatrix<f64>>) -> Result<Self> {
        let k = omega.nrows();
        if k == 0 || k % 2 != 0 || !omega.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "long-run covariance must be 2n x 2n, got {}x{}",
                omega.nrows(),
                omega.ncols()
            )));
        }
        if delta.shape() != (k, k) || sigma.as_ref().is_some_and(|s| s.shape() != (k, k)) {
            return Err(Error::DimensionMismatch(format!("delta and sigma must be {k}x{k}")));
        }
        let mut omega = omega;
        linalg::symmetrize(&mut omega);
        Ok(Self {
            n: k / 2,
            omega,
            delta,
            sigma,
            source: LrSource::Supplied,
            bandwidth: None,
            orders: None,
        })
    }

    /// Number of equations `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega_uu(&self) -> DMatrix<f64> {
        block(&self.omega, self.n, 0, 0)
    }

    pub fn omega_uv(&self) -> DMatrix<f64> {
        block(&self.omega, self.n, 0, 1)
    }

    pub fn omega_vu(&self) -> DMatrix<f64> {
        block(&self.omega, self.n, 1, 0)
    }

    pub fn omega_vv(&self) -> DMatrix<f64> {
        block(&self.omega, self.n, 1, 1)
    }

    pub fn delta_vu(&self) -> DMatrix<f64> {
        block(&self.delta, self.n, 1, 0)
    }

    pub fn delta_vv(&self) -> DMatrix<f64> {
        block(&self.delta, self.n, 1, 1)
    }

    /// `Σ_ηη`, the `u` innovation block.
    pub fn sigma_eta_eta(&self) -> Option<DMatrix<f64>> {
        self.sigma.as_ref().map(|s| block(s, self.n, 0, 0))
    }

    /// `Σ_εη`, the `v`-by-`u` innovation block.
    pub fn sigma_eps_eta(&self) -> Option<DMatrix<f64>> {
        self.sigma.as_ref().map(|s| block(s, self.n, 1, 0))
    }
}

/// Quantities entering the fully modified corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct FmWeights {
    /// `Ω_{u.v} = Ω_uu − Ω_uv Ω_vv⁻¹ Ω_vu`.
    pub omega_udotv: DMatrix<f64>,
    /// `Δ⁺_vu = Δ_vu − Δ_vv Ω_vv⁻¹ Ω_vu`.
    pub delta_vu_plus: DMatrix<f64>,
    /// `Ω_uv Ω_vv⁻¹`.
    pub endogeneity_map: DMatrix<f64>,
}

/// Stacks `u` (`n × T`) over `v` (`n × T`).
pub fn stack_innovations(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.shape() != v.shape() {
        return Err(Error::DimensionMismatch(format!(
            "u is {}x{} but v is {}x{}",
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    let n = u.nrows();
    let mut xi = DMatrix::zeros(2 * n, u.ncols());
    xi.rows_mut(0, n).copy_from(u);
    xi.rows_mut(n, n).copy_from(v);
    Ok(xi)
}

fn check_even(xi: &DMatrix<f64>) -> Result<()> {
    if xi.nrows() == 0 || xi.nrows() % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "xi must have 2n rows, got {}",
            xi.nrows()
        )));
    }
    Ok(())
}

/// `Γ̂(h) = T⁻¹ Σ_t ξ_t ξ_{t+h}'`.
fn sample_autocov(xi: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let t_len = xi.ncols();
    let m = t_len - h;
    xi.columns(0, m) * xi.columns(h, m).transpose() / t_len as f64
}

/// Bartlett kernel estimate with bandwidth `bw`; lags beyond `T − 1` are dropped.
pub fn bartlett_lrcov(xi: &DMatrix<f64>, bw: f64) -> Result<LongRunCov> {
    check_even(xi)?;
    let t_len = xi.ncols();
    if !(bw >= 0.0) || !bw.is_finite() || bw >= t_len as f64 {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bw} must lie in [0, T) with T = {t_len}"
        )));
    }
    let lags = (bw.floor() as usize).min(t_len - 1);
    let gamma0 = sample_autocov(xi, 0);
    let mut delta = gamma0.clone();
    for h in 1..=lags {
        delta += sample_autocov(xi, h) * (1.0 - h as f64 / (bw + 1.0));
    }
    let mut omega = &delta + delta.transpose() - gamma0;
    linalg::symmetrize(&mut omega);
    Ok(LongRunCov {
        n: xi.nrows() / 2,
        omega,
        delta,
        sigma: None,
        source: LrSource::Kernel,
        bandwidth: Some(bw),
        orders: None,
    })
}

/// AR(1) plug-in bandwidth for the Bartlett kernel, equal weights across series.
pub fn andrews_bandwidth(xi: &DMatrix<f64>) -> Result<f64> {
    andrews_with_cap(xi, None)
}

/// Largest AR(1) coefficient magnitude used by [`andrews_bandwidth_capped`].
pub const ANDREWS_RHO_CAP: f64 = 0.97;

/// Variant of [`andrews_bandwidth`] that shrinks AR(1) coefficients to
/// `±ANDREWS_RHO_CAP` instead of failing on explosive or unit-root series.
pub fn andrews_bandwidth_capped(xi: &DMatrix<f64>) -> Result<f64> {
    andrews_with_cap(xi, Some(ANDREWS_RHO_CAP))
}

fn andrews_with_cap(xi: &DMatrix<f64>, cap: Option<f64>) -> Result<f64> {
    let t_len = xi.ncols();
    if t_len < 10 {
        return Err(Error::InvalidArgument(format!(
            "bandwidth selection needs T >= 10, got {t_len}"
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, row) in xi.row_iter().enumerate() {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for t in 1..t_len {
            sxy += row[t] * row[t - 1];
            sxx += row[t - 1] * row[t - 1];
        }
        if sxx == 0.0 {
            continue;
        }
        let mut rho = sxy / sxx;
        if let Some(c) = cap {
            rho = rho.clamp(-c, c);
        }
        if !(rho.abs() < 1.0) {
            return Err(Error::NonStationary(format!(
                "AR(1) coefficient {rho:.4} of series {a} is not inside the unit interval"
            )));
        }
        let s2 = (1..t_len).map(|t| (row[t] - rho * row[t - 1]).powi(2)).sum::<f64>() / (t_len - 1) as f64;
        if s2 == 0.0 {
            continue;
        }
        let s4 = s2 * s2;
        num += 4.0 * rho * rho * s4 / ((1.0 - rho).powi(6) * (1.0 + rho).powi(2));
        den += s4 / (1.0 - rho).powi(4);
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(1.1447 * (num / den * t_len as f64).cbrt())
}

/// VAR(`q`) estimate at frequency zero with `Δ̂` from the last `r` blocks of the
/// final column of the implied autocovariance matrix.
pub fn biam_lrcov(xi: &DMatrix<f64>, q: usize, r: usize) -> Result<LongRunCov> {
    check_even(xi)?;
    if q < 1 || r < 1 {
        return Err(Error::InvalidArgument(format!("orders must be positive, got q = {q}, r = {r}")));
    }
    let k = xi.nrows();
    let t_len = xi.ncols();
    let ladder = VarLadder::fit(xi, q)?;
    let mut lag_sum = DMatrix::identity(k, k);
    for j in 1..=q {
        lag_sum -= ladder.coeff(q, j);
    }
    let inv = linalg::inverse(&lag_sum, "I minus the sum of fitted VAR coefficients")?;
    let sigma = ladder.innovation_cov(q).clone();
    let mut omega = &inv * &sigma * inv.transpose();
    linalg::symmetrize(&mut omega);
    let delta = BiamDecomposition::new(ladder, t_len)?.implied_covariance_tail_sum(r)?;
    Ok(LongRunCov {
        n: k / 2,
        omega,
        delta,
        sigma: Some(sigma),
        source: LrSource::Biam,
        bandwidth: None,
        orders: Some((q, r)),
    })
}

/// Derived fully modified blocks.
pub fn fm_weights(lr: &LongRunCov) -> Result<FmWeights> {
    let ovv_inv = linalg::inverse(&lr.omega_vv(), "Omega_vv")?;
    let endogeneity_map = lr.omega_uv() * &ovv_inv;
    let mut omega_udotv = lr.omega_uu() - &endogeneity_map * lr.omega_vu();
    linalg::symmetrize(&mut omega_udotv);
    let delta_vu_plus = lr.delta_vu() - lr.delta_vv() * &ovv_inv * lr.omega_vu();
    Ok(FmWeights { omega_udotv, delta_vu_plus, endogeneity_map })
}
