//! Data model for the SUCPR system.
//!
//! Equation `i` regresses `y_it` on `z_it = [1, t, …, t^{d_i}, x_it, …, x_it^{s_i}]`
//! with `t = 1..T`. The stacked regressor matrix `Z_t = diag[z_1t, …, z_nt]` is
//! block diagonal, so only the per-equation blocks are stored.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trend order `d_i` and stochastic power order `s_i` of one equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquationOrder {
    pub trend: usize,
    pub power: usize,
}

impl EquationOrder {
    pub fn new(trend: usize, power: usize) -> Self {
        Self { trend, power }
    }

    /// Number of coefficients, `d_i + s_i + 1`.
    pub fn len(&self) -> usize {
        self.trend + self.power + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-equation polynomial orders of a SUCPR design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CprSpec {
    equations: Vec<EquationOrder>,
}

impl CprSpec {
    pub fn new(equations: Vec<EquationOrder>) -> Result<Self> {
        if equations.is_empty() {
            return Err(Error::InvalidArgument("a system needs at least one equation".into()));
        }
        if let Some(i) = equations.iter().position(|e| e.power == 0) {
            return Err(Error::InvalidArgument(format!(
                "equation {} has stochastic power order 0; s_i must be at least 1",
                i + 1
            )));
        }
        Ok(Self { equations })
    }

    /// `n` identical equations with the given orders.
    pub fn uniform(n: usize, trend: usize, power: usize) -> Result<Self> {
        Self::new(vec![EquationOrder::new(trend, power); n])
    }

    /// The quadratic design `z_it = [1, t, x_it, x_it²]` used throughout the
    /// simulations and the EKC application.
    pub fn quadratic(n: usize) -> Result<Self> {
        Self::uniform(n, 1, 2)
    }

    pub fn equations(&self) -> &[EquationOrder] {
        &self.equations
    }

    pub fn n_equations(&self) -> usize {
        self.equations.len()
    }

    /// Total parameter count `d = Σ_i (d_i + s_i + 1)`.
    pub fn n_params(&self) -> usize {
        self.equations.iter().map(EquationOrder::len).sum()
    }

    /// Offset of equation `i`'s coefficients inside the stacked `β`.
    pub fn offset(&self, i: usize) -> usize {
        self.equations[..i].iter().map(EquationOrder::len).sum()
    }

    /// Index of coefficient `k` (0-based within the block) of equation `i`.
    pub fn param_index(&self, i: usize, k: usize) -> usize {
        self.offset(i) + k
    }

    /// Smallest admissible sample length.
    pub fn min_len(&self) -> usize {
        self.equations.iter().map(EquationOrder::len).max().unwrap_or(0) + 1
    }
}

/// Observed panel: `n` dependent series and `n` I(1) regressors of length `T`.
///
/// Both matrices are `n × T` (column `t-1` holds period `t`). `x0` is the
/// regressor level before the sample; when it is unknown the first
/// difference `Δx_1` is taken to be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    x0: Option<DVector<f64>>,
}

impl PanelData {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.shape() != x.shape() {
            return Err(Error::DimensionMismatch(format!(
                "y is {}x{} but x is {}x{}",
                y.nrows(),
                y.ncols(),
                x.nrows(),
                x.ncols()
            )));
        }
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::InvalidArgument("empty panel".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("panel contains missing or non-finite values".into()));
        }
        Ok(Self { y, x, x0: None })
    }

    /// Records the pre-sample regressor level so that `Δx_1 = x_1 − x_0`.
    pub fn with_initial_levels(mut self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "x0 has length {} for {} equations",
                x0.len(),
                self.n()
            )));
        }
        self.x0 = Some(x0);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn initial_levels(&self) -> Option<&DVector<f64>> {
        self.x0.as_ref()
    }

    /// Copy of the panel with `y` replaced.
    pub fn with_y(&self, y: DMatrix<f64>) -> Result<Self> {
        let mut out = Self::new(y, self.x.clone())?;
        out.x0 = self.x0.clone();
        Ok(out)
    }

    /// `v_t = Δx_t` as an `n × T` matrix.
    pub fn differences(&self) -> DMatrix<f64> {
        let (n, t_len) = self.x.shape();
        let mut v = DMatrix::zeros(n, t_len);
        for i in 0..n {
            v[(i, 0)] = match &self.x0 {
                Some(x0) => self.x[(i, 0)] - x0[i],
                None => 0.0,
            };
            for t in 1..t_len {
                v[(i, t)] = self.x[(i, t)] - self.x[(i, t - 1)];
            }
        }
        v
    }

    fn check_spec(&self, spec: &CprSpec) -> Result<()> {
        if spec.n_equations() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "spec has {} equations but the panel has {} series",
                spec.n_equations(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Rejects samples too short to estimate `spec`.
    pub fn check_len(&self, spec: &CprSpec) -> Result<()> {
        if self.len() < spec.min_len() {
            return Err(Error::InvalidArgument(format!(
                "T = {} is too short; need T > {}",
                self.len(),
                spec.min_len() - 1
            )));
        }
        Ok(())
    }
}

/// Diagonal of `G_T = diag[G_{1,T}, …, G_{n,T}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMatrix {
    diag: DVector<f64>,
}

impl ScalingMatrix {
    /// Trend entries `T^{-1/2-k}`, power entries `T^{-1/2-k/2}`.
    pub fn new(spec: &CprSpec, t_len: usize) -> Self {
        let t = t_len as f64;
        let mut diag = Vec::with_capacity(spec.n_params());
        for eq in spec.equations() {
            for k in 0..=eq.trend {
                diag.push(t.powf(-0.5 - k as f64));
            }
            for k in 1..=eq.power {
                diag.push(t.powf(-0.5 - 0.5 * k as f64));
            }
        }
        Self { diag: DVector::from_vec(diag) }
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    /// Diagonal of `G_T^{-1}`.
    pub fn inverse_diag(&self) -> DVector<f64> {
        self.diag.map(|g| 1.0 / g)
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `G v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_mul(&self.diag)
    }

    /// `G M G`.
    pub fn sandwich(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] *= self.diag[i] * self.diag[j];
            }
        }
        out
    }
}

/// Per-equation regressor blocks; block `i` is a `T × (d_i + s_i + 1)` matrix
/// whose row `t-1` is `z_it'`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSystem {
    spec: CprSpec,
    blocks: Vec<DMatrix<f64>>,
}

/// Builds `z_it = [1, t, …, t^{d_i}, x_it, …, x_it^{s_i}]` for every `i, t`.
pub fn build_regressors(spec: &CprSpec, data: &PanelData) -> Result<RegressorSystem> {
    data.check_spec(spec)?;
    let t_len = data.len();
    let blocks = spec
        .equations()
        .iter()
        .enumerate()
        .map(|(i, eq)| {
            DMatrix::from_fn(t_len, eq.len(), |t, k| {
                if k <= eq.trend {
                    ((t + 1) as f64).powi(k as i32)
                } else {
                    data.x[(i, t)].powi((k - eq.trend) as i32)
                }
            })
        })
        .collect();
    Ok(RegressorSystem { spec: spec.clone(), blocks })
}

impl RegressorSystem {
    pub fn spec(&self) -> &CprSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks[0].nrows() == 0
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    /// `z_it` for 1-based time `t`.
    pub fn z(&self, i: usize, t: usize) -> DVector<f64> {
        self.blocks[i].row(t - 1).transpose()
    }

    /// System with every column multiplied by the matching entry of `G_T`.
    pub fn scaled(&self, g: &ScalingMatrix) -> RegressorSystem {
        let mut blocks = self.blocks.clone();
        for (i, b) in blocks.iter_mut().enumerate() {
            let off = self.spec.offset(i);
            for k in 0..b.ncols() {
                let s = g.diag()[off + k];
                b.column_mut(k).scale_mut(s);
            }
        }
        RegressorSystem { spec: self.spec.clone(), blocks }
    }

    /// `Z_t' β` for every `t`, as an `n × T` matrix.
    pub fn fitted(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        if beta.len() != self.spec.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {} but the design has {} parameters",
                beta.len(),
                self.spec.n_params()
            )));
        }
        let n = self.spec.n_equations();
        let mut out = DMatrix::zeros(n, self.len());
        for i in 0..n {
            let off = self.spec.offset(i);
            let k = self.blocks[i].ncols();
            let fit = &self.blocks[i] * beta.rows(off, k);
            out.row_mut(i).copy_from(&fit.transpose());
        }
        Ok(out)
    }

    /// Cross-product blocks `C_ij = Σ_t z_it z_jt'`.
    pub fn cross_products(&self) -> Vec<Vec<DMatrix<f64>>> {
        let n = self.spec.n_equations();
        (0..n)
            .map(|i| (0..n).map(|j| self.blocks[i].tr_mul(&self.blocks[j])).collect())
            .collect()
    }

    /// `Σ_t Z_t W Z_t'` for an `n × n` weight `W` (the `d × d` matrix
    /// `Z'(I_T ⊗ W)Z`).
    pub fn weighted_gram(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.weighted_gram_from(&self.cross_products(), w)
    }

    pub(crate) fn weighted_gram_from(&self, cross: &[Vec<DMatrix<f64>>], w: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.spec.n_params();
        let n = self.spec.n_equations();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..n {
            for j in 0..n {
                if w[(i, j)] == 0.0 {
                    continue;
                }
                let (oi, oj) = (self.spec.offset(i), self.spec.offset(j));
                let c = &cross[i][j];
                let mut view = out.view_mut((oi, oj), c.shape());
                view += c * w[(i, j)];
            }
        }
        out
    }

    /// `Σ_t Z_t W e_t` for an `n × T` series `e` (the vector `Z'(I_T ⊗ W)e`).
    pub fn weighted_cross(&self, w: &DMatrix<f64>, e: &DMatrix<f64>) -> DVector<f64> {
        let we = w * e;
        let mut out = DVector::zeros(self.spec.n_params());
        for i in 0..self.spec.n_equations() {
            let off = self.spec.offset(i);
            let k = self.blocks[i].ncols();
            let v = self.blocks[i].tr_mul(&we.row(i).transpose());
            out.rows_mut(off, k).copy_from(&v);
        }
        out
    }

    /// Stacked `nT × d` matrix `Z = [Z_1, …, Z_T]'`; row `n(t-1) + i` holds
    /// `z_it'` in the columns of equation `i`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.spec.n_equations();
        let t_len = self.len();
        let mut out = DMatrix::zeros(n * t_len, self.spec.n_params());
        for i in 0..n {
            let off = self.spec.offset(i);
            let b = &self.blocks[i];
            for t in 0..t_len {
                for k in 0..b.ncols() {
                    out[(n * t + i, off + k)] = b[(t, k)];
                }
            }
        }
        out
    }
}

/// Stacks an `n × T` series into the `nT × 1` vector `[e_1', …, e_T']'`.
pub fn stack_series(e: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(e.len(), 1, e.as_slice())
}

/// `G_T` for `spec` at sample length `t_len`.
pub fn scaling_matrix(spec: &CprSpec, t_len: usize) -> ScalingMatrix {
    ScalingMatrix::new(spec, t_len)
}

/// Bias design vectors `b̂_i = [0'_{d_i+1}, T, 2Σx_it, …, s_i Σ x_it^{s_i-1}]'`.
pub fn bhat_vectors(spec: &CprSpec, data: &PanelData) -> Result<Vec<DVector<f64>>> {
    data.check_spec(spec)?;
    Ok(spec
        .equations()
        .iter()
        .enumerate()
        .map(|(i, eq)| {
            let mut b = DVector::zeros(eq.len());
            for k in 1..=eq.power {
                let sum: f64 = data.x.row(i).iter().map(|x| x.powi(k as i32 - 1)).sum();
                b[eq.trend + k] = k as f64 * sum;
            }
            b
        })
        .collect())
}

/// Stacks per-equation vectors into one length-`d` vector scaled equation-wise.
pub(crate) fn stack_scaled(spec: &CprSpec, parts: &[DVector<f64>], scales: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(spec.n_params());
    for (i, (p, s)) in parts.iter().zip(scales).enumerate() {
        out.rows_mut(spec.offset(i), p.len()).copy_from(&(p * *s));
    }
    out
}

/// `û_t = y_t − Z_t'β` as an `n × T` matrix.
pub fn residuals(spec: &CprSpec, data: &PanelData, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let sys = build_regressors(spec, data)?;
    Ok(data.y() - sys.fitted(beta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn panel(y: Vec<f64>, x: Vec<f64>, n: usize) -> PanelData {
        let t = y.len() / n;
        PanelData::new(DMatrix::from_row_slice(n, t, &y), DMatrix::from_row_slice(n, t, &x)).unwrap()
    }

    #[test]
    fn zero_regressor_gives_trend_only() {
        let spec = CprSpec::quadratic(1).unwrap();
        let data = panel(vec![0.0; 5], vec![0.0; 5], 1);
        let sys = build_regressors(&spec, &data).unwrap();
        for t in 1..=5 {
            assert_eq!(sys.z(0, t).as_slice(), &[1.0, t as f64, 0.0, 0.0]);
        }
    }

    #[test]
    fn quadratic_block_layout() {
        let spec = CprSpec::quadratic(1).unwrap();
        let g = vec![7.5, 7.6, 7.8, 8.0];
        let data = panel(vec![0.0; 4], g.clone(), 1);
        let sys = build_regressors(&spec, &data).unwrap();
        for (t, gt) in g.iter().enumerate() {
            assert_eq!(sys.z(0, t + 1).as_slice(), &[1.0, (t + 1) as f64, *gt, gt * gt]);
        }
    }

    #[test]
    fn linear_case() {
        let spec = CprSpec::uniform(1, 0, 1).unwrap();
        let data = panel(vec![0.0; 3], vec![2.0, 1.0, 0.5], 1);
        let sys = build_regressors(&spec, &data).unwrap();
        assert_eq!(sys.z(0, 1).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = CprSpec::quadratic(2).unwrap();
        let data = panel(vec![0.0; 10], vec![0.0; 10], 1);
        assert!(matches!(build_regressors(&spec, &data), Err(Error::DimensionMismatch(_))));
        assert!(PanelData::new(DMatrix::zeros(2, 5), DMatrix::zeros(2, 4)).is_err());
        assert!(CprSpec::uniform(1, 1, 0).is_err());
    }

    #[test]
    fn scaling_matrix_entries() {
        let spec = CprSpec::quadratic(1).unwrap();
        let g = scaling_matrix(&spec, 100);
        let expect = [100f64.powf(-0.5), 100f64.powf(-1.5), 100f64.powf(-1.0), 100f64.powf(-1.5)];
        for (a, b) in g.diag().iter().zip(expect) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
        let g = scaling_matrix(&CprSpec::uniform(1, 0, 1).unwrap(), 4);
        assert_relative_eq!(g.diag()[0], 0.5);
        assert_relative_eq!(g.diag()[1], 0.25);
        let spec = CprSpec::new(vec![EquationOrder::new(2, 3), EquationOrder::new(0, 1)]).unwrap();
        let g = scaling_matrix(&spec, 1);
        assert!(g.diag().iter().all(|&v| v == 1.0));
        let prod = g.diag().component_mul(&g.inverse_diag());
        assert!(prod.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn trend_scaling_is_bounded() {
        let spec = CprSpec::uniform(1, 3, 1).unwrap();
        let t_len = 250;
        let g = scaling_matrix(&spec, t_len);
        for t in 1..=t_len {
            for k in 0..=3 {
                let v = g.diag()[k] * (t as f64).powi(k as i32);
                assert!(v >= 0.0 && v <= (t_len as f64).powf(-0.5) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn bhat_examples() {
        let s1 = CprSpec::uniform(1, 1, 1).unwrap();
        let data = panel(vec![0.0; 6], vec![0.3, -1.0, 2.0, 0.1, 0.0, 4.0], 1);
        let b = bhat_vectors(&s1, &data).unwrap();
        assert_eq!(b[0].as_slice(), &[0.0, 0.0, 6.0]);

        let s2 = CprSpec::uniform(1, 1, 2).unwrap();
        let data = panel(vec![0.0; 5], vec![1.0; 5], 1);
        assert_eq!(bhat_vectors(&s2, &data).unwrap()[0].as_slice(), &[0.0, 0.0, 5.0, 10.0]);

        // s = 3, x = (1, 2): [T, 2Σx, 3Σx²] = [2, 6, 15]
        let s3 = CprSpec::uniform(1, 0, 3).unwrap();
        let data = panel(vec![0.0; 2], vec![1.0, 2.0], 1);
        assert_eq!(bhat_vectors(&s3, &data).unwrap()[0].as_slice(), &[0.0, 2.0, 6.0, 15.0]);
    }

    #[test]
    fn residual_identities() {
        let spec = CprSpec::quadratic(2).unwrap();
        let x = DMatrix::from_fn(2, 8, |i, t| (t as f64 * 0.7 + i as f64).sin() * 3.0);
        let beta = DVector::from_vec(vec![1.0, 1.0, 5.0, -0.3, -2.0, 0.1, 1.5, 0.2]);
        let zero = PanelData::new(DMatrix::zeros(2, 8), x.clone()).unwrap();
        let sys = build_regressors(&spec, &zero).unwrap();
        let y = sys.fitted(&beta).unwrap();
        let data = PanelData::new(y.clone(), x).unwrap();
        assert!(residuals(&spec, &data, &beta).unwrap().amax() < 1e-12);
        let r0 = residuals(&spec, &data, &DVector::zeros(8)).unwrap();
        assert_eq!(r0, y);
        assert!(residuals(&spec, &data, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn block_sparsity_of_residuals() {
        let spec = CprSpec::quadratic(3).unwrap();
        let x = DMatrix::from_fn(3, 12, |i, t| ((t * (i + 2)) as f64).cos());
        let y = DMatrix::from_fn(3, 12, |i, t| (t as f64 + i as f64).sqrt());
        let data = PanelData::new(y, x).unwrap();
        let beta = DVector::from_fn(12, |k, _| k as f64 * 0.1);
        let mut beta2 = beta.clone();
        for k in spec.offset(1)..spec.offset(2) {
            beta2[k] += 3.0;
        }
        let r1 = residuals(&spec, &data, &beta).unwrap();
        let r2 = residuals(&spec, &data, &beta2).unwrap();
        assert_eq!(r1.row(0), r2.row(0));
        assert_eq!(r1.row(2), r2.row(2));
        assert!(r1.row(1) != r2.row(1));
    }

    #[test]
    fn stacked_matches_blocks() {
        let spec = CprSpec::new(vec![EquationOrder::new(1, 2), EquationOrder::new(0, 1)]).unwrap();
        let x = DMatrix::from_fn(2, 5, |i, t| (i + t) as f64 * 0.5);
        let data = PanelData::new(DMatrix::zeros(2, 5), x).unwrap();
        let sys = build_regressors(&spec, &data).unwrap();
        let z = sys.stacked();
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut dense = DMatrix::zeros(6, 6);
        for t in 0..5 {
            let zt = z.rows(2 * t, 2);
            dense += zt.transpose() * &w * zt;
        }
        assert!((dense - sys.weighted_gram(&w)).amax() < 1e-12);
    }
}
