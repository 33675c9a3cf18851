//! Simulation designs and the Monte Carlo runner.
//!
//! Every replication draws from its own ChaCha stream keyed by the cell seed
//! and the replication index, and results are reduced in replication order,
//! so reports do not depend on the number of worker threads.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::biam::VarLadder;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_with_given_covariances, fm_gls, fm_sols, fm_sur, gls_first_stage, kernel_lr, ols, EstimationOptions,
    EstimationResult, Method,
};
use crate::inference::{kpss_from_estimate, selection_matrix, wald, KpssOptions, KpssVariant};
use crate::linalg;
use crate::lrcov::LongRunCov;
use crate::model::{CprSpec, PanelData};

/// Generator for replication `rep` of a run seeded with `seed`.
pub fn rng_for(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// True coefficients `[intercept, trend, x, x²]` shared by all equations.
pub const BETA_TRUE: [f64; 4] = [1.0, 1.0, 5.0, -0.3];

/// Cubic coefficient added by the second power design.
pub const CUBIC_COEFFICIENT: f64 = 0.01;

/// Largest accepted condition number of `U'U` when rotating eigenvalues.
pub const MAX_ROTATION_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    A,
    B,
    #[serde(rename = "C_size")]
    CSize,
    #[serde(rename = "C_power1")]
    CPower1,
    #[serde(rename = "C_power2")]
    CPower2,
    #[serde(rename = "C_power3")]
    CPower3,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::A => "A",
            Setting::B => "B",
            Setting::CSize => "C_size",
            Setting::CPower1 => "C_power1",
            Setting::CPower2 => "C_power2",
            Setting::CPower3 => "C_power3",
        }
    }

    fn is_power(self) -> bool {
        matches!(self, Setting::CPower1 | Setting::CPower2 | Setting::CPower3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mse,
    WaldSize,
    WaldPower,
    CointSize,
    CointPower,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Mse => "mse",
            Task::WaldSize => "wald_size",
            Task::WaldPower => "wald_power",
            Task::CointSize => "coint_size",
            Task::CointPower => "coint_power",
        }
    }
}

fn default_lambda_low() -> f64 {
    0.1
}

fn default_lambda_high() -> f64 {
    0.5
}

fn default_theta() -> f64 {
    0.3
}

fn default_presample() -> usize {
    200
}

fn default_seed() -> u64 {
    1
}

/// One simulation design. Setting A reads `rho`; the others read
/// `lambda_low`, `lambda_high` and `theta`; the power designs read `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub setting: Setting,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_lambda_low")]
    pub lambda_low: f64,
    #[serde(default = "default_lambda_high")]
    pub lambda_high: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Number of equations violating the null in the power designs.
    #[serde(default)]
    pub j: usize,
    #[serde(default = "default_presample")]
    pub presample: usize,
    /// Shift of every `x²` coefficient away from `-0.3` (Wald power).
    #[serde(default)]
    pub beta4_shift: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl DgpConfig {
    pub fn new(setting: Setting, n: usize, t: usize) -> Self {
        Self {
            setting,
            n,
            t,
            rho: 0.0,
            lambda_low: default_lambda_low(),
            lambda_high: default_lambda_high(),
            theta: default_theta(),
            j: 0,
            presample: default_presample(),
            beta4_shift: 0.0,
            seed: default_seed(),
        }
    }

    pub fn setting_a(n: usize, t: usize, rho: f64) -> Self {
        Self { rho, ..Self::new(Setting::A, n, t) }
    }

    pub fn setting_b(n: usize, t: usize, lambda: (f64, f64), theta: f64) -> Self {
        Self {
            lambda_low: lambda.0,
            lambda_high: lambda.1,
            theta,
            ..Self::new(Setting::B, n, t)
        }
    }

    pub fn setting_c(setting: Setting, n: usize, t: usize, lambda: (f64, f64), j: usize) -> Self {
        Self {
            lambda_low: lambda.0,
            lambda_high: lambda.1,
            j,
            ..Self::new(setting, n, t)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        let min_t = CprSpec::quadratic(self.n)?.min_len();
        if self.t < min_t {
            return bad(format!("T = {} is below the minimum {min_t} for a quadratic model", self.t));
        }
        match self.setting {
            Setting::A => {
                if !(0.0..1.0).contains(&self.rho) {
                    return bad(format!("rho = {} must lie in [0, 1)", self.rho));
                }
            }
            _ => {
                if !(0.0 <= self.lambda_low && self.lambda_low <= self.lambda_high && self.lambda_high < 1.0) {
                    return bad(format!(
                        "eigenvalue range ({}, {}) must satisfy 0 <= low <= high < 1",
                        self.lambda_low, self.lambda_high
                    ));
                }
                if !(self.theta.abs() < 1.0) {
                    return bad(format!("theta = {} must lie in (-1, 1)", self.theta));
                }
            }
        }
        if self.j > self.n {
            return bad(format!("J = {} exceeds n = {}", self.j, self.n));
        }
        if self.j > 0 && !self.setting.is_power() {
            return bad(format!("J is only meaningful for the power designs, not {}", self.setting.name()));
        }
        if !self.beta4_shift.is_finite() {
            return bad("beta4_shift must be finite".into());
        }
        Ok(())
    }
}

/// Equicorrelation matrix with unit diagonal and `rho` off the diagonal.
pub fn toeplitz_sigma(m: usize, rho: f64) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|rho| = {} must be below 1", rho.abs())));
    }
    let s = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho });
    // Eigenvalues are 1 + (m-1)rho and 1 - rho.
    let min = (1.0 - rho).min(1.0 + (m as f64 - 1.0) * rho);
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            what: "toeplitz sigma".into(),
            min_eigenvalue: min,
            max_eigenvalue: (1.0 - rho).max(1.0 + (m as f64 - 1.0) * rho),
        });
    }
    Ok(s)
}

/// Gaussian sampler with a fixed symmetric covariance factor.
#[derive(Debug, Clone)]
struct Gaussian {
    factor: DMatrix<f64>,
}

impl Gaussian {
    fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let factor = linalg::sqrt_spd(sigma).ok_or_else(|| Error::NotPositiveDefinite {
            what: "innovation covariance".into(),
            min_eigenvalue: linalg::eigen_range(sigma).0,
            max_eigenvalue: linalg::eigen_range(sigma).1,
        })?;
        Ok(Self { factor })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

/// Symmetric `H L H'` with `H = U(U'U)^{-1/2}` orthogonal, `U` uniform on
/// `[0,1]`, and eigenvalues `1` for the first `unit_roots` entries and
/// uniform on `[low, high]` otherwise.
pub fn random_rotation_matrix<R: Rng>(n: usize, low: f64, high: f64, unit_roots: usize, rng: &mut R) -> DMatrix<f64> {
    let h = loop {
        let u = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
        let gram = u.transpose() * &u;
        let (min, max) = linalg::eigen_range(&gram);
        if min > 0.0 && max / min < MAX_ROTATION_CONDITION {
            if let Some(root) = linalg::inv_sqrt_spd(&gram) {
                break u * root;
            }
        }
    };
    let eig = DVector::from_fn(n, |i, _| {
        let draw = low + (high - low) * rng.random::<f64>();
        if i < unit_roots {
            1.0
        } else {
            draw
        }
    });
    let mut m = &h * DMatrix::from_diagonal(&eig) * h.transpose();
    linalg::symmetrize(&mut m);
    m
}

/// Simulated innovations `u` and regressor increments `v`, both `n × T`.
#[derive(Debug, Clone)]
pub struct Innovations {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Builds the panel from innovations: `x` is the cumulative sum of `v` from
/// `x_0 = 0` and `y` follows the quadratic design (with the power-design
/// modifications).
pub fn assemble_panel(cfg: &DgpConfig, inn: &Innovations) -> Result<PanelData> {
    let (n, t_len) = inn.u.shape();
    let mut x = DMatrix::zeros(n, t_len);
    let mut y = DMatrix::zeros(n, t_len);
    let b4 = BETA_TRUE[3] + cfg.beta4_shift;
    for i in 0..n {
        let mut level = 0.0;
        let mut walk = 0.0;
        for t in 0..t_len {
            level += inn.v[(i, t)];
            walk += inn.u[(i, t)];
            x[(i, t)] = level;
            let trend = (t + 1) as f64;
            y[(i, t)] = match cfg.setting {
                Setting::CPower3 if i < cfg.j => walk,
                _ => {
                    let mut val = BETA_TRUE[0] + BETA_TRUE[1] * trend + BETA_TRUE[2] * level + b4 * level * level;
                    if cfg.setting == Setting::CPower2 && i < cfg.j {
                        val += CUBIC_COEFFICIENT * level.powi(3);
                    }
                    val + inn.u[(i, t)]
                }
            };
        }
    }
    PanelData::new(y, x)?.with_initial_levels(DVector::zeros(n))
}

/// Fixed per-cell quantities: covariance factors of the innovations.
#[derive(Debug, Clone)]
struct CellSampler {
    cfg: DgpConfig,
    gauss: Gaussian,
}

impl CellSampler {
    fn new(cfg: &DgpConfig) -> Result<Self> {
        cfg.validate()?;
        let gauss = match cfg.setting {
            Setting::A => Gaussian::new(&toeplitz_sigma(cfg.n, cfg.rho)?)?,
            _ => Gaussian::new(&toeplitz_sigma(2 * cfg.n, cfg.theta)?)?,
        };
        Ok(Self { cfg: cfg.clone(), gauss })
    }

    /// Draws innovations, returning the persistence matrices of the
    /// rotation designs alongside.
    fn innovations<R: Rng>(&self, rng: &mut R) -> (Innovations, Option<[DMatrix<f64>; 3]>) {
        let cfg = &self.cfg;
        let n = cfg.n;
        let total = cfg.presample + cfg.t;
        let mut u = DMatrix::zeros(n, cfg.t);
        let mut v = DMatrix::zeros(n, cfg.t);
        match cfg.setting {
            Setting::A => {
                let rho = cfg.rho;
                let mut u_prev = DVector::zeros(n);
                let mut e_prev = DVector::zeros(n);
                for s in 0..total {
                    let eps = self.gauss.draw(rng);
                    let e = self.gauss.draw(rng);
                    let u_t = &u_prev * rho + eps + &e * rho;
                    let v_t = &e + &e_prev * 0.5;
                    if s >= cfg.presample {
                        u.set_column(s - cfg.presample, &u_t);
                        v.set_column(s - cfg.presample, &v_t);
                    }
                    u_prev = u_t;
                    e_prev = e;
                }
                (Innovations { u, v }, None)
            }
            _ => {
                let (low1, high1, units) = match cfg.setting {
                    Setting::B | Setting::CSize | Setting::CPower2 | Setting::CPower3 => {
                        (cfg.lambda_low, cfg.lambda_high, 0)
                    }
                    _ => (default_lambda_low(), default_lambda_high(), cfg.j),
                };
                let (low23, high23) = match cfg.setting {
                    Setting::B => (cfg.lambda_low, cfg.lambda_high),
                    _ => (default_lambda_low(), default_lambda_high()),
                };
                let l1 = random_rotation_matrix(n, low1, high1, units, rng);
                let l2 = random_rotation_matrix(n, low23, high23, 0, rng);
                let l3 = random_rotation_matrix(n, low23, high23, 0, rng);
                let mut u_prev = DVector::zeros(n);
                let mut v_prev = DVector::zeros(n);
                let mut eta_prev = DVector::zeros(n);
                for s in 0..total {
                    let w = self.gauss.draw(rng);
                    let eta = w.rows(0, n).into_owned();
                    let eps = w.rows(n, n).into_owned();
                    let u_t = &l1 * &u_prev + &eta + &l2 * &eta_prev;
                    let v_t = &l3 * &v_prev + eps;
                    if s >= cfg.presample {
                        u.set_column(s - cfg.presample, &u_t);
                        v.set_column(s - cfg.presample, &v_t);
                    }
                    u_prev = u_t;
                    v_prev = v_t;
                    eta_prev = eta;
                }
                (Innovations { u, v }, Some([l1, l2, l3]))
            }
        }
    }

    fn population(&self, lambdas: Option<&[DMatrix<f64>; 3]>, max_lag: usize) -> Result<Population> {
        let cfg = &self.cfg;
        let n = cfg.n;
        let mut phi = DMatrix::zeros(2 * n, 2 * n);
        let mut theta = DMatrix::zeros(2 * n, 2 * n);
        let sigma_w = match (cfg.setting, lambdas) {
            (Setting::A, _) => {
                let s = toeplitz_sigma(n, cfg.rho)?;
                let rho = cfg.rho;
                phi.view_mut((0, 0), (n, n)).fill_with_identity();
                phi.view_mut((0, 0), (n, n)).scale_mut(rho);
                theta.view_mut((n, n), (n, n)).fill_with_identity();
                theta.view_mut((n, n), (n, n)).scale_mut(0.5);
                let mut w = DMatrix::zeros(2 * n, 2 * n);
                w.view_mut((0, 0), (n, n)).copy_from(&(&s * (1.0 + rho * rho)));
                w.view_mut((0, n), (n, n)).copy_from(&(&s * rho));
                w.view_mut((n, 0), (n, n)).copy_from(&(&s * rho));
                w.view_mut((n, n), (n, n)).copy_from(&s);
                w
            }
            (_, Some([l1, l2, l3])) => {
                phi.view_mut((0, 0), (n, n)).copy_from(l1);
                phi.view_mut((n, n), (n, n)).copy_from(l3);
                theta.view_mut((0, 0), (n, n)).copy_from(l2);
                toeplitz_sigma(2 * n, cfg.theta)?
            }
            _ => return Err(Error::InvalidArgument("rotation designs need their persistence matrices".into())),
        };
        varma_population(&phi, &theta, &sigma_w, max_lag)
    }
}

/// Draws one panel of the configured design.
pub fn generate<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<PanelData> {
    let sampler = CellSampler::new(cfg)?;
    assemble_panel(cfg, &sampler.innovations(rng).0)
}

fn expect_setting(cfg: &DgpConfig, ok: &[Setting]) -> Result<()> {
    if ok.contains(&cfg.setting) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("unexpected setting {}", cfg.setting.name())))
    }
}

pub fn generate_setting_a<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<PanelData> {
    expect_setting(cfg, &[Setting::A])?;
    generate(cfg, rng)
}

pub fn generate_setting_b<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<PanelData> {
    expect_setting(cfg, &[Setting::B])?;
    generate(cfg, rng)
}

pub fn generate_setting_c<R: Rng>(cfg: &DgpConfig, rng: &mut R) -> Result<PanelData> {
    expect_setting(cfg, &[Setting::CSize, Setting::CPower1, Setting::CPower2, Setting::CPower3])?;
    generate(cfg, rng)
}

/// Population second moments of `ξ_t = Φ ξ_{t-1} + w_t + Θ w_{t-1}`,
/// `w_t ~ (0, Σ_w)`, with `ξ = [u; v]`.
#[derive(Debug, Clone)]
pub struct Population {
    /// `Ω`, `Δ` and the innovation covariance `Σ_w`.
    pub lr: LongRunCov,
    /// `E(u_t u_{t-h}')` for `h = 0..=max_lag`.
    pub gamma_u: Vec<DMatrix<f64>>,
}

impl Population {
    /// Population VAR ladder of `u` up to order `q`.
    pub fn ladder(&self, q: usize) -> Result<VarLadder> {
        VarLadder::from_autocovariances(&self.gamma_u[..=q], q)
    }
}

/// Moments of a stable VARMA(1,1) from its moving-average weights, truncated
/// once `‖Φ‖^k` falls below machine precision.
pub fn varma_population(phi: &DMatrix<f64>, theta: &DMatrix<f64>, sigma_w: &DMatrix<f64>, max_lag: usize) -> Result<Population> {
    let k = phi.nrows();
    if k == 0 || k % 2 != 0 || theta.shape() != (k, k) || sigma_w.shape() != (k, k) || !phi.is_square() {
        return Err(Error::DimensionMismatch("VARMA matrices must be square of even size".into()));
    }
    let norm = phi.clone().svd(false, false).singular_values.max();
    if norm >= 1.0 {
        return Err(Error::NonStationary(format!("autoregressive matrix has norm {norm} >= 1")));
    }
    let terms = if norm <= 0.0 {
        2
    } else {
        ((f64::EPSILON.ln() / norm.ln()).ceil() as usize + 2).min(100_000)
    };
    let mut psi = Vec::with_capacity(terms + max_lag + 1);
    psi.push(DMatrix::identity(k, k));
    psi.push(phi + theta);
    while psi.len() < terms + max_lag + 1 {
        let next = phi * psi.last().unwrap();
        psi.push(next);
    }
    // Tail sums C_j = Σ_{i≥j} Ψ_i.
    let mut tail = vec![DMatrix::zeros(k, k); psi.len() + 1];
    for j in (0..psi.len()).rev() {
        tail[j] = &tail[j + 1] + &psi[j];
    }
    let omega = &tail[0] * sigma_w * tail[0].transpose();
    let mut delta_t = DMatrix::zeros(k, k);
    for j in 0..terms {
        delta_t += &tail[j] * sigma_w * psi[j].transpose();
    }
    let n = k / 2;
    let gamma_u = (0..=max_lag)
        .map(|h| {
            let mut g = DMatrix::zeros(n, n);
            for j in 0..terms {
                let full = &psi[j + h] * sigma_w * psi[j].transpose();
                g += full.view((0, 0), (n, n));
            }
            g
        })
        .collect();
    let lr = LongRunCov::supplied(omega, delta_t.transpose(), Some(sigma_w.clone()))?;
    Ok(Population { lr, gamma_u })
}

/// One named statistic of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    /// Monte Carlo standard error, where one is defined.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub dgp: DgpConfig,
    pub task: Task,
    pub reps: usize,
    pub failures: usize,
    pub metrics: Vec<Metric>,
}

impl CellReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub cells: Vec<CellReport>,
    /// Elapsed time; excluded from [`ExperimentReport::table`].
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    /// Header and rows of the one-row-per-cell table. Numbers use the
    /// shortest round-trip representation; missing metrics are empty.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut names: Vec<&str> = Vec::new();
        for cell in &self.cells {
            for m in &cell.metrics {
                if !names.contains(&m.name.as_str()) {
                    names.push(&m.name);
                }
            }
        }
        let mut header: Vec<String> = [
            "setting",
            "task",
            "n",
            "T",
            "rho",
            "lambda_low",
            "lambda_high",
            "theta",
            "J",
            "beta4_shift",
            "seed",
            "reps",
            "failures",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for name in &names {
            header.push(name.to_string());
            header.push(format!("{name}_se"));
        }
        let rows = self
            .cells
            .iter()
            .map(|c| {
                let d = &c.dgp;
                let mut row = vec![
                    d.setting.name().to_string(),
                    c.task.name().to_string(),
                    d.n.to_string(),
                    d.t.to_string(),
                    d.rho.to_string(),
                    d.lambda_low.to_string(),
                    d.lambda_high.to_string(),
                    d.theta.to_string(),
                    d.j.to_string(),
                    d.beta4_shift.to_string(),
                    d.seed.to_string(),
                    c.reps.to_string(),
                    c.failures.to_string(),
                ];
                for name in &names {
                    match c.metric(name) {
                        Some(m) => {
                            row.push(m.value.to_string());
                            row.push(m.se.map(|s| s.to_string()).unwrap_or_default());
                        }
                        None => {
                            row.push(String::new());
                            row.push(String::new());
                        }
                    }
                }
                row
            })
            .collect();
        (header, rows)
    }
}

const MSE_METHODS: [Method; 7] = [
    Method::Ols,
    Method::FmSols,
    Method::FmSur,
    Method::FmGls,
    Method::InfSols,
    Method::InfSur,
    Method::InfGls,
];

const WALD_METHODS: [Method; 3] = [Method::FmSols, Method::FmSur, Method::FmGls];

fn has_population(setting: Setting) -> bool {
    matches!(setting, Setting::A | Setting::B)
}

/// Metric names of a task, in output order, with whether each is a rate.
fn metric_names(task: Task, setting: Setting) -> Vec<String> {
    match task {
        Task::Mse => MSE_METHODS
            .iter()
            .filter(|m| !m.is_infeasible() || has_population(setting))
            .map(|m| format!("mse_{}", m.name()))
            .collect(),
        Task::WaldSize | Task::WaldPower => ["single", "joint"]
            .iter()
            .flat_map(|kind| WALD_METHODS.iter().map(move |m| format!("{kind}_{}", m.name())))
            .collect(),
        Task::CointSize | Task::CointPower => {
            KpssVariant::ALL.iter().map(|v| format!("kpss_{}", v.name())).collect()
        }
    }
}

struct Feasible {
    sols: EstimationResult,
    sur: EstimationResult,
    gls: EstimationResult,
}

fn feasible_estimates(spec: &CprSpec, data: &PanelData, opts: &EstimationOptions) -> Result<(EstimationResult, Feasible)> {
    let first = ols(spec, data)?;
    let lr = kernel_lr(data, &first.residuals, opts.bandwidth)?;
    let sols = fm_sols(spec, data, &lr)?;
    let sur = fm_sur(spec, data, &lr)?;
    let (biam, lr_biam, banding) = gls_first_stage(data, &first.residuals, opts)?;
    let mut gls = fm_gls(spec, data, &biam, &lr_biam)?;
    gls.banding = banding;
    Ok((first, Feasible { sols, sur, gls }))
}

/// Per-replication outcome vector aligned with [`metric_names`].
fn replicate(sampler: &CellSampler, task: Task, rep: u64) -> Result<Vec<f64>> {
    let cfg = &sampler.cfg;
    let mut rng = rng_for(cfg.seed, rep);
    let (inn, lambdas) = sampler.innovations(&mut rng);
    let data = assemble_panel(cfg, &inn)?;
    let spec = CprSpec::quadratic(cfg.n)?;
    let opts = EstimationOptions::default();
    let (first, est) = feasible_estimates(&spec, &data, &opts)?;
    let target = spec.param_index(0, 3);
    let b4 = BETA_TRUE[3] + cfg.beta4_shift;
    match task {
        Task::Mse => {
            let mut out = vec![first.beta[target] - b4, est.sols.beta[target] - b4, est.sur.beta[target] - b4];
            out.push(est.gls.beta[target] - b4);
            if has_population(cfg.setting) {
                let q = est.gls.biam.as_ref().map_or(1, |b| b.q());
                let pop = sampler.population(lambdas.as_ref(), q)?;
                let ladder = pop.ladder(q)?;
                for m in [Method::InfSols, Method::InfSur, Method::InfGls] {
                    let res = estimate_with_given_covariances(&spec, &data, m, &pop.lr, Some(&ladder))?;
                    out.push(res.beta[target] - b4);
                }
            }
            Ok(out.into_iter().map(|e| e * e).collect())
        }
        Task::WaldSize | Task::WaldPower => {
            let d = spec.n_params();
            let single = selection_matrix(d, &[target])?;
            let joint_idx: Vec<usize> = (0..cfg.n).map(|i| spec.param_index(i, 3)).collect();
            let joint = selection_matrix(d, &joint_idx)?;
            let null = BETA_TRUE[3];
            let mut out = Vec::with_capacity(6);
            for (r_mat, k) in [(&single, 1), (&joint, cfg.n)] {
                for res in [&est.sols, &est.sur, &est.gls] {
                    let w = wald(res, r_mat, &DVector::from_element(k, null))?;
                    out.push(if w.p_value < 0.05 { 1.0 } else { 0.0 });
                }
            }
            Ok(out)
        }
        Task::CointSize | Task::CointPower => {
            let kopts = KpssOptions::default();
            let mut out = Vec::with_capacity(3);
            for (variant, res) in [
                (KpssVariant::Sols, &est.sols),
                (KpssVariant::Sur, &est.sur),
                (KpssVariant::Biam, &est.gls),
            ] {
                let k = kpss_from_estimate(res, variant, &kopts)?;
                out.push(if k.reject { 1.0 } else { 0.0 });
            }
            Ok(out)
        }
    }
}

#[cfg(feature = "parallel")]
fn map_reps<R, F>(reps: usize, threads: Option<usize>, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match threads {
        None => Ok((0..reps as u64).into_par_iter().map(f).collect()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(|| (0..reps as u64).into_par_iter().map(f).collect()))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn map_reps<R, F>(reps: usize, _threads: Option<usize>, f: F) -> Result<Vec<R>>
where
    F: Fn(u64) -> R,
{
    Ok((0..reps as u64).map(f).collect())
}

/// Largest tolerated share of failed replications before a cell aborts.
pub const MAX_FAILURE_RATE: f64 = 0.01;

fn run_cell(dgp: &DgpConfig, task: Task, reps: usize, threads: Option<usize>) -> Result<CellReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    if matches!(task, Task::CointSize | Task::CointPower) && dgp.setting == Setting::A {
        return Err(Error::InvalidArgument("cointegration tasks use the rotation designs".into()));
    }
    let sampler = CellSampler::new(dgp)?;
    let outcomes = map_reps(reps, threads, |rep| replicate(&sampler, task, rep))?;
    let names = metric_names(task, dgp.setting);
    let mut sums = vec![0.0; names.len()];
    let mut sq_sums = vec![0.0; names.len()];
    let mut failures = 0;
    let mut first_error = None;
    for out in outcomes {
        match out {
            Ok(vals) => {
                for (k, v) in vals.iter().enumerate() {
                    sums[k] += v;
                    sq_sums[k] += v * v;
                }
            }
            Err(e) => {
                failures += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if failures as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(Error::CellAborted {
            failures,
            reps,
            first: first_error.map(|e| e.to_string()).unwrap_or_default(),
        });
    }
    let ok = (reps - failures) as f64;
    let is_rate = task != Task::Mse;
    let mut metrics: Vec<Metric> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mean = sums[k] / ok;
            let se = if is_rate {
                (mean * (1.0 - mean) / ok).sqrt()
            } else {
                let var = if ok > 1.0 { (sq_sums[k] - ok * mean * mean).max(0.0) / (ok - 1.0) } else { f64::NAN };
                (var / ok).sqrt()
            };
            Metric {
                name: name.clone(),
                value: mean,
                se: se.is_finite().then_some(se),
            }
        })
        .collect();
    if task == Task::Mse {
        let base = metrics
            .iter()
            .find(|m| m.name == format!("mse_{}", Method::FmGls.name()))
            .map(|m| m.value)
            .unwrap_or(f64::NAN);
        let ratios: Vec<Metric> = metrics
            .iter()
            .filter(|m| m.name != format!("mse_{}", Method::FmGls.name()))
            .map(|m| Metric {
                name: m.name.replacen("mse_", "ratio_", 1),
                value: m.value / base,
                se: None,
            })
            .collect();
        metrics.extend(ratios);
    }
    Ok(CellReport {
        dgp: dgp.clone(),
        task,
        reps,
        failures,
        metrics,
    })
}

/// Runs one cell. Rates are fractions in `[0, 1]`; MSE ratios are relative
/// to feasible FM-GLS. `threads = None` uses the global pool.
pub fn run_experiment(dgp: &DgpConfig, task: Task, reps: usize, threads: Option<usize>) -> Result<ExperimentReport> {
    let start = Instant::now();
    let cell = run_cell(dgp, task, reps, threads)?;
    Ok(ExperimentReport {
        name: format!("{}-{}", task.name(), dgp.setting.name()),
        cells: vec![cell],
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One cell of an experiment plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellPlan {
    pub task: Task,
    pub dgp: DgpConfig,
}

/// A list of cells run with a common replication count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub reps: usize,
    pub cells: Vec<CellPlan>,
}

impl ExperimentPlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        for c in &mut self.cells {
            c.dgp.seed = seed;
        }
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be positive".into()));
        }
        if self.cells.is_empty() {
            return Err(Error::InvalidArgument("experiment has no cells".into()));
        }
        self.cells.iter().try_for_each(|c| c.dgp.validate())
    }

    /// Runs all cells in order; `progress(done, total)` is called after each.
    pub fn run(&self, threads: Option<usize>, mut progress: impl FnMut(usize, usize)) -> Result<ExperimentReport> {
        self.validate()?;
        let start = Instant::now();
        let mut cells = Vec::with_capacity(self.cells.len());
        for (k, c) in self.cells.iter().enumerate() {
            cells.push(run_cell(&c.dgp, c.task, self.reps, threads)?);
            progress(k + 1, self.cells.len());
        }
        Ok(ExperimentReport {
            name: self.name.clone(),
            cells,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

pub const SETTING_A_RHOS: [f64; 4] = [0.0, 0.3, 0.6, 0.8];
pub const EIGEN_RANGES: [(f64, f64); 3] = [(0.1, 0.5), (0.5, 0.8), (0.8, 0.95)];
pub const SAMPLE_SIZES: [usize; 3] = [100, 200, 500];
pub const PANEL_SIZES: [usize; 2] = [3, 5];

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["table1", "table2", "table3"];
pub const CT_PRESET: &str = "ct-tests";

/// Built-in experiment plans mirroring the published tables.
pub fn preset(name: &str) -> Option<ExperimentPlan> {
    let mut cells = Vec::new();
    let reps = match name {
        "table1" | "table3" => {
            let task = if name == "table1" { Task::Mse } else { Task::WaldSize };
            for &t in &SAMPLE_SIZES {
                for &n in &PANEL_SIZES {
                    for &rho in &SETTING_A_RHOS {
                        cells.push(CellPlan { task, dgp: DgpConfig::setting_a(n, t, rho) });
                    }
                }
            }
            2500
        }
        "table2" => {
            for &theta in &[0.3, 0.5] {
                for &range in &EIGEN_RANGES {
                    for &t in &SAMPLE_SIZES {
                        for &n in &PANEL_SIZES {
                            cells.push(CellPlan { task: Task::Mse, dgp: DgpConfig::setting_b(n, t, range, theta) });
                        }
                    }
                }
            }
            2500
        }
        CT_PRESET => {
            for &range in &EIGEN_RANGES {
                for &t in &SAMPLE_SIZES {
                    for &n in &PANEL_SIZES {
                        cells.push(CellPlan {
                            task: Task::CointSize,
                            dgp: DgpConfig::setting_c(Setting::CSize, n, t, range, 0),
                        });
                    }
                }
            }
            for setting in [Setting::CPower1, Setting::CPower2, Setting::CPower3] {
                for &n in &PANEL_SIZES {
                    for j in [1, 2, n] {
                        for &t in &SAMPLE_SIZES {
                            cells.push(CellPlan {
                                task: Task::CointPower,
                                dgp: DgpConfig::setting_c(setting, n, t, EIGEN_RANGES[0], j),
                            });
                        }
                    }
                }
            }
            2000
        }
        _ => return None,
    };
    Some(ExperimentPlan {
        name: name.to_string(),
        reps,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrcov::bartlett_lrcov;
    use crate::lrcov::stack_innovations;

    #[test]
    fn toeplitz_examples() {
        assert_eq!(toeplitz_sigma(3, 0.0).unwrap(), DMatrix::identity(3, 3));
        assert_eq!(toeplitz_sigma(2, 0.5).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let mut eig: Vec<f64> = toeplitz_sigma(3, 0.8).unwrap().symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip([0.2, 0.2, 2.6]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(toeplitz_sigma(3, -0.5).is_err());
        assert!(toeplitz_sigma(3, -0.49).is_ok());
        assert!(toeplitz_sigma(2, 1.0).is_err());
    }

    #[test]
    fn rotation_matrix_spectrum() {
        let mut rng = rng_for(3, 0);
        for units in 0..=2 {
            let m = random_rotation_matrix(4, 0.5, 0.8, units, &mut rng);
            assert!((&m - m.transpose()).amax() < 1e-14);
            let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let ones = eig.iter().filter(|&&l| (l - 1.0).abs() < 1e-9).count();
            assert_eq!(ones, units);
            assert!(eig.iter().all(|&l| (0.5 - 1e-9..=0.8 + 1e-9).contains(&l) || (l - 1.0).abs() < 1e-9));
        }
        let zero = random_rotation_matrix(3, 0.0, 0.0, 0, &mut rng);
        assert!(zero.amax() < 1e-15);
    }

    #[test]
    fn x_is_cumulative_sum_of_v() {
        for cfg in [
            DgpConfig::setting_a(3, 60, 0.6),
            DgpConfig::setting_b(2, 60, (0.5, 0.8), 0.5),
            DgpConfig::setting_c(Setting::CPower2, 3, 60, (0.1, 0.5), 2),
        ] {
            let sampler = CellSampler::new(&cfg).unwrap();
            let (inn, _) = sampler.innovations(&mut rng_for(9, 4));
            let data = assemble_panel(&cfg, &inn).unwrap();
            for i in 0..cfg.n {
                let mut acc = 0.0;
                for t in 0..cfg.t {
                    acc += inn.v[(i, t)];
                    assert_eq!(data.x()[(i, t)], acc);
                }
            }
            assert!((data.differences() - &inn.v).amax() < 1e-12);
        }
    }

    #[test]
    fn setting_a_white_noise_has_no_lag_one_correlation() {
        let cfg = DgpConfig::setting_a(2, 4000, 0.0);
        let sampler = CellSampler::new(&cfg).unwrap();
        let (inn, _) = sampler.innovations(&mut rng_for(5, 0));
        for i in 0..2 {
            let r = lag_one_autocorrelation(&inn.u.row(i).transpose());
            assert!(r.abs() < 3.0 / (cfg.t as f64).sqrt(), "r = {r}");
        }
    }

    fn lag_one_autocorrelation(x: &DVector<f64>) -> f64 {
        let m = x.mean();
        let d = x.map(|v| v - m);
        let num: f64 = (1..d.len()).map(|t| d[t] * d[t - 1]).sum();
        num / d.norm_squared()
    }

    #[test]
    fn setting_a_lag_one_matches_closed_form() {
        // u is AR(1) with coefficient rho, so the lag-one autocorrelation is rho
        // with asymptotic standard error sqrt((1 - rho^2) / T).
        let rho = 0.6;
        let cfg = DgpConfig::setting_a(3, 100_000, rho);
        let sampler = CellSampler::new(&cfg).unwrap();
        let (inn, _) = sampler.innovations(&mut rng_for(17, 0));
        let se = ((1.0 - rho * rho) / cfg.t as f64).sqrt();
        for i in 0..3 {
            let r = lag_one_autocorrelation(&inn.u.row(i).transpose());
            assert!((r - rho).abs() < 3.0 * se, "r = {r}");
        }
    }

    #[test]
    fn exogenous_regressors_when_feedback_is_off() {
        // theta = 0 makes the u and v innovations independent.
        let cfg = DgpConfig::setting_b(1, 20_000, (0.5, 0.5), 0.0);
        let sampler = CellSampler::new(&cfg).unwrap();
        let (inn, _) = sampler.innovations(&mut rng_for(2, 0));
        let u = inn.u.row(0).transpose();
        let v = inn.v.row(0).transpose();
        let (mu, mv) = (u.mean(), v.mean());
        let cov: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - mu) * (b - mv)).sum();
        let corr = cov / (u.map(|a| a - mu).norm() * v.map(|b| b - mv).norm());
        assert!(corr.abs() < 0.05, "corr = {corr}");
    }

    /// Closed-form moments of the first design for a scalar `Σ = s`.
    fn setting_a_closed_form(rho: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = 1.0;
        let eta = s * (1.0 + rho * rho);
        let omega = DMatrix::from_row_slice(
            2,
            2,
            &[
                eta / (1.0 - rho).powi(2),
                1.5 * rho * s / (1.0 - rho),
                1.5 * rho * s / (1.0 - rho),
                2.25 * s,
            ],
        );
        let delta = DMatrix::from_row_slice(
            2,
            2,
            &[
                eta / ((1.0 - rho * rho) * (1.0 - rho)),
                rho * s * (1.5 + 0.5 * rho),
                (rho + 0.5 * rho * rho) * s / (1.0 - rho),
                1.75 * s,
            ],
        );
        (omega, delta)
    }

    #[test]
    fn population_moments_match_closed_form() {
        for rho in [0.0, 0.3, 0.8] {
            let cfg = DgpConfig::setting_a(1, 50, rho);
            let pop = CellSampler::new(&cfg).unwrap().population(None, 3).unwrap();
            let (omega, delta) = setting_a_closed_form(rho);
            assert!((&pop.lr.omega - &omega).amax() < 1e-10 * omega.amax(), "rho {rho}");
            assert!((&pop.lr.delta - &delta).amax() < 1e-10 * delta.amax(), "rho {rho}");
            let g0 = (1.0 + rho * rho) / (1.0 - rho * rho);
            for h in 0..=3 {
                assert!((pop.gamma_u[h][(0, 0)] - g0 * rho.powi(h as i32)).abs() < 1e-10);
            }
            let ladder = pop.ladder(3).unwrap();
            assert!((ladder.coeff(3, 1)[(0, 0)] - rho).abs() < 1e-10);
            assert!(ladder.coeff(3, 2)[(0, 0)].abs() < 1e-10);
        }
    }

    #[test]
    fn population_matches_long_simulation() {
        let cfg = DgpConfig::setting_b(2, 200_000, (0.1, 0.5), 0.3);
        let sampler = CellSampler::new(&cfg).unwrap();
        let (inn, lambdas) = sampler.innovations(&mut rng_for(8, 0));
        let pop = sampler.population(lambdas.as_ref(), 2).unwrap();
        let xi = stack_innovations(&inn.u, &inn.v).unwrap();
        let est = bartlett_lrcov(&xi, 60.0).unwrap();
        let scale = pop.lr.omega.amax();
        assert!((&est.omega - &pop.lr.omega).amax() < 0.08 * scale);
        assert!((&est.delta - &pop.lr.delta).amax() < 0.08 * scale);
    }

    #[test]
    fn config_validation() {
        assert!(DgpConfig::setting_a(3, 100, 1.0).validate().is_err());
        assert!(DgpConfig::setting_a(3, 3, 0.0).validate().is_err());
        assert!(DgpConfig::setting_b(3, 100, (0.6, 0.5), 0.3).validate().is_err());
        assert!(DgpConfig::setting_c(Setting::CPower1, 3, 100, (0.1, 0.5), 4).validate().is_err());
        assert!(DgpConfig::setting_c(Setting::CSize, 3, 100, (0.1, 0.5), 1).validate().is_err());
        assert!(DgpConfig::setting_b(3, 100, (0.0, 0.0), 0.3).validate().is_ok());
    }

    #[test]
    fn zero_violations_match_size_design() {
        let size = DgpConfig::setting_c(Setting::CSize, 3, 80, (0.1, 0.5), 0);
        for setting in [Setting::CPower1, Setting::CPower2, Setting::CPower3] {
            let power = DgpConfig { setting, ..size.clone() };
            let a = generate(&size, &mut rng_for(4, 1)).unwrap();
            let b = generate(&power, &mut rng_for(4, 1)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn power_designs_modify_leading_equations() {
        let cfg = DgpConfig::setting_c(Setting::CPower3, 3, 50, (0.1, 0.5), 1);
        let sampler = CellSampler::new(&cfg).unwrap();
        let (inn, _) = sampler.innovations(&mut rng_for(6, 0));
        let data = assemble_panel(&cfg, &inn).unwrap();
        let mut walk = 0.0;
        for t in 0..50 {
            walk += inn.u[(0, t)];
            assert_eq!(data.y()[(0, t)], walk);
        }
        let cubic = DgpConfig { setting: Setting::CPower2, j: 3, ..cfg.clone() };
        let data = assemble_panel(&cubic, &inn).unwrap();
        let x = data.x()[(2, 10)];
        let expect = 1.0 + 11.0 + 5.0 * x - 0.3 * x * x + 0.01 * x.powi(3) + inn.u[(2, 10)];
        assert!((data.y()[(2, 10)] - expect).abs() < 1e-12);
    }

    #[test]
    fn unit_roots_enter_power_design_one() {
        let cfg = DgpConfig::setting_c(Setting::CPower1, 3, 60, (0.1, 0.5), 2);
        let sampler = CellSampler::new(&cfg).unwrap();
        let (_, lambdas) = sampler.innovations(&mut rng_for(6, 2));
        let eig = lambdas.unwrap()[0].clone().symmetric_eigen().eigenvalues;
        assert_eq!(eig.iter().filter(|&&l| (l - 1.0).abs() < 1e-9).count(), 2);
    }

    #[test]
    fn runner_is_deterministic_across_threads() {
        let cfg = DgpConfig::setting_a(2, 60, 0.3);
        let a = run_experiment(&cfg, Task::Mse, 8, Some(1)).unwrap();
        let b = run_experiment(&cfg, Task::Mse, 8, Some(3)).unwrap();
        assert_eq!(a.table(), b.table());
        let c = run_experiment(&cfg.clone().with_seed(2), Task::Mse, 8, Some(2)).unwrap();
        assert_ne!(a.table(), c.table());
    }

    #[test]
    fn report_shapes() {
        let cfg = DgpConfig::setting_a(2, 60, 0.0);
        let rep = run_experiment(&cfg, Task::WaldSize, 4, None).unwrap();
        let cell = &rep.cells[0];
        assert_eq!(cell.metrics.len(), 6);
        assert!(cell.metrics.iter().all(|m| (0.0..=1.0).contains(&m.value)));
        let (header, rows) = rep.table();
        assert_eq!(header.len(), rows[0].len());
        let mse = run_experiment(&cfg, Task::Mse, 4, None).unwrap();
        let cell = &mse.cells[0];
        assert_eq!(cell.value("ratio_fm-sols").unwrap(), cell.value("mse_fm-sols").unwrap() / cell.value("mse_fm-gls").unwrap());
        assert!(cell.value("mse_inf-gls").is_some());
        let single = run_experiment(&cfg, Task::Mse, 1, None).unwrap();
        assert!(single.cells[0].metric("mse_fm-gls").unwrap().se.is_none());
    }

    #[test]
    fn coint_task_runs_and_rejects_setting_a() {
        let cfg = DgpConfig::setting_c(Setting::CSize, 2, 80, (0.1, 0.5), 0);
        let rep = run_experiment(&cfg, Task::CointSize, 3, None).unwrap();
        assert_eq!(rep.cells[0].metrics.len(), 3);
        assert!(run_experiment(&DgpConfig::setting_a(2, 80, 0.0), Task::CointSize, 3, None).is_err());
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESETS.iter().chain([&CT_PRESET]) {
            let plan = preset(name).unwrap();
            plan.validate().unwrap();
        }
        assert!(preset("ekc").is_none());
        assert_eq!(preset("table1").unwrap().cells.len(), 24);
    }
}
