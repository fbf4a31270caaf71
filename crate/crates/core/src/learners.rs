//! Per-example update rules behind the [`OnlineLearner`] contract.
//!
//! Passive-aggressive learners ([`PassiveAggressive`], [`Fsol`]) move only when the hinge loss is
//! positive. The gradient learners ([`SgdMomentum`], [`AdaGrad`], [`TruncatedGradient`]) step on
//! every example; their dense per-step effects (velocity decay, periodic truncation) are applied
//! lazily per coordinate so a step costs `O(nnz(x))`, and [`OnlineLearner::weights`] brings every
//! coordinate up to date.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WatError};
use crate::sparse::{hinge_from_margin, Label, SparseVector, WeightVector};

/// Stabilizer added to the AdaGrad accumulator.
pub const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerKind {
    /// Updates only on positive hinge loss.
    PassiveAggressive,
    /// Updates on every example.
    AlwaysUpdate,
}

pub trait OnlineLearner: Send {
    /// `w . x` for the current model.
    fn score(&mut self, x: &SparseVector) -> f64;

    /// Processes one example. Passive-aggressive learners leave the state untouched when the
    /// hinge loss is zero.
    fn update(&mut self, x: &SparseVector, y: Label);

    /// The fully materialized weight vector.
    fn weights(&mut self) -> &WeightVector;

    fn kind(&self) -> LearnerKind;
}

/// PA-II step: `w += l / (|x|^2 + 1/(2C)) * y x`. Returns the step size applied.
///
/// `c_err = f64::INFINITY` gives the hard-constraint PA step.
pub fn pa2_update(w: &mut WeightVector, x: &SparseVector, y: Label, c_err: f64) -> f64 {
    let loss = hinge_from_margin(w.dot(x), y);
    if loss <= 0.0 {
        return 0.0;
    }
    let denom = x.sq_norm() + 0.5 / c_err;
    if denom <= 0.0 {
        return 0.0;
    }
    let tau = loss / denom;
    w.axpy_sparse(tau * y.sign(), x);
    tau
}

/// PA-I step: `w += min(C, l / |x|^2) * y x`. Returns the step size applied.
pub fn pa1_update(w: &mut WeightVector, x: &SparseVector, y: Label, c_err: f64) -> f64 {
    let loss = hinge_from_margin(w.dot(x), y);
    let sq = x.sq_norm();
    if loss <= 0.0 || sq == 0.0 {
        return 0.0;
    }
    let tau = c_err.min(loss / sq);
    w.axpy_sparse(tau * y.sign(), x);
    tau
}

/// `sign(v) * max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    let m = v.abs() - t;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

/// FSOL step: `theta += eta y x`, then `w = soft_threshold(theta, eta * lambda)` on the touched
/// coordinates. Untouched coordinates keep their thresholded value, so `w` stays the thresholded
/// image of `theta` everywhere.
pub fn fsol_update(
    theta: &mut WeightVector,
    w: &mut WeightVector,
    x: &SparseVector,
    y: Label,
    eta: f64,
    lambda: f64,
) -> bool {
    if hinge_from_margin(w.dot(x), y) <= 0.0 {
        return false;
    }
    theta.axpy_sparse(eta * y.sign(), x);
    if let Some(m) = x.max_index() {
        w.ensure_len(m + 1);
    }
    let t = eta * lambda;
    let ws = w.as_mut_slice();
    for &i in x.indices() {
        ws[i] = soft_threshold(theta.get(i), t);
    }
    true
}

/// Closed-form step size variant of the passive-aggressive family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaVariant {
    PaI,
    PaII,
}

#[derive(Debug, Clone)]
pub struct PassiveAggressive {
    w: WeightVector,
    c_err: f64,
    variant: PaVariant,
}

impl PassiveAggressive {
    pub fn new(variant: PaVariant, c_err: f64, dim: usize) -> Self {
        Self {
            w: WeightVector::zeros(dim),
            c_err,
            variant,
        }
    }
}

impl OnlineLearner for PassiveAggressive {
    fn score(&mut self, x: &SparseVector) -> f64 {
        self.w.dot(x)
    }

    fn update(&mut self, x: &SparseVector, y: Label) {
        match self.variant {
            PaVariant::PaI => pa1_update(&mut self.w, x, y, self.c_err),
            PaVariant::PaII => pa2_update(&mut self.w, x, y, self.c_err),
        };
    }

    fn weights(&mut self) -> &WeightVector {
        &self.w
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::PassiveAggressive
    }
}

/// First-order sparse online learning: dual accumulator `theta` and its soft-thresholded image `w`.
#[derive(Debug, Clone)]
pub struct Fsol {
    theta: WeightVector,
    w: WeightVector,
    eta: f64,
    lambda: f64,
}

impl Fsol {
    pub fn new(eta: f64, lambda: f64, dim: usize) -> Self {
        Self {
            theta: WeightVector::zeros(dim),
            w: WeightVector::zeros(dim),
            eta,
            lambda,
        }
    }

    pub fn theta(&self) -> &WeightVector {
        &self.theta
    }

    pub fn threshold(&self) -> f64 {
        self.eta * self.lambda
    }
}

impl OnlineLearner for Fsol {
    fn score(&mut self, x: &SparseVector) -> f64 {
        self.w.dot(x)
    }

    fn update(&mut self, x: &SparseVector, y: Label) {
        fsol_update(&mut self.theta, &mut self.w, x, y, self.eta, self.lambda);
    }

    fn weights(&mut self) -> &WeightVector {
        &self.w
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::PassiveAggressive
    }
}

/// Hinge subgradient scale: `y` when the loss is positive, else 0.
#[inline]
fn hinge_grad_scale(score: f64, y: Label) -> f64 {
    if hinge_from_margin(score, y) > 0.0 {
        y.sign()
    } else {
        0.0
    }
}

/// `m + m^2 + ... + m^k`.
fn geometric_tail(m: f64, k: u64) -> f64 {
    match k {
        0 => 0.0,
        1 => m,
        _ if m == 1.0 => k as f64,
        _ if m == 0.0 => 0.0,
        _ => m * (1.0 - m.powf(k as f64)) / (1.0 - m),
    }
}

/// Hinge-loss SGD with heavy-ball momentum: `v = m v + rate g`, `w += v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    w: WeightVector,
    velocity: Vec<f64>,
    synced: Vec<u64>,
    steps: u64,
    rate: f64,
    momentum: f64,
}

impl SgdMomentum {
    pub fn new(rate: f64, momentum: f64, dim: usize) -> Self {
        Self {
            w: WeightVector::zeros(dim),
            velocity: vec![0.0; dim],
            synced: vec![0; dim],
            steps: 0,
            rate,
            momentum,
        }
    }

    fn grow(&mut self, len: usize) {
        if len > self.velocity.len() {
            self.w.ensure_len(len);
            self.velocity.resize(len, 0.0);
            self.synced.resize(len, self.steps);
        }
    }

    /// Replays the decay-only steps coordinate `i` has missed.
    fn catch_up(&mut self, i: usize) {
        let k = self.steps - self.synced[i];
        if k == 0 {
            return;
        }
        let v = self.velocity[i];
        if v != 0.0 {
            self.w.as_mut_slice()[i] += v * geometric_tail(self.momentum, k);
            self.velocity[i] = v * self.momentum.powf(k as f64);
        }
        self.synced[i] = self.steps;
    }

    fn catch_up_support(&mut self, x: &SparseVector) {
        if let Some(m) = x.max_index() {
            self.grow(m + 1);
        }
        for &i in x.indices() {
            self.catch_up(i);
        }
    }
}

impl OnlineLearner for SgdMomentum {
    fn score(&mut self, x: &SparseVector) -> f64 {
        self.catch_up_support(x);
        self.w.dot(x)
    }

    fn update(&mut self, x: &SparseVector, y: Label) {
        let g = hinge_grad_scale(self.score(x), y);
        let step = self.steps + 1;
        for (i, v) in x.iter() {
            let vel = self.momentum * self.velocity[i] + self.rate * g * v;
            self.velocity[i] = vel;
            self.w.as_mut_slice()[i] += vel;
            self.synced[i] = step;
        }
        self.steps = step;
    }

    fn weights(&mut self) -> &WeightVector {
        for i in 0..self.velocity.len() {
            self.catch_up(i);
        }
        &self.w
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::AlwaysUpdate
    }
}

/// Diagonal AdaGrad on the hinge subgradient.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    w: WeightVector,
    accum: WeightVector,
    rate: f64,
}

impl AdaGrad {
    pub fn new(rate: f64, dim: usize) -> Self {
        Self {
            w: WeightVector::zeros(dim),
            accum: WeightVector::zeros(dim),
            rate,
        }
    }
}

impl OnlineLearner for AdaGrad {
    fn score(&mut self, x: &SparseVector) -> f64 {
        self.w.dot(x)
    }

    fn update(&mut self, x: &SparseVector, y: Label) {
        let g = hinge_grad_scale(self.w.dot(x), y);
        if g == 0.0 {
            return;
        }
        if let Some(m) = x.max_index() {
            self.w.ensure_len(m + 1);
            self.accum.ensure_len(m + 1);
        }
        let acc = self.accum.as_mut_slice();
        let w = self.w.as_mut_slice();
        for (i, v) in x.iter() {
            let gi = g * v;
            acc[i] += gi * gi;
            w[i] += self.rate * gi / (acc[i] + ADAGRAD_EPS).sqrt();
        }
    }

    fn weights(&mut self) -> &WeightVector {
        &self.w
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::AlwaysUpdate
    }
}

/// Hinge SGD with a shrink of `rate * gravity` toward zero on every coordinate each `period`
/// steps.
#[derive(Debug, Clone)]
pub struct TruncatedGradient {
    w: WeightVector,
    synced: Vec<u64>,
    steps: u64,
    truncations: u64,
    rate: f64,
    gravity: f64,
    period: u64,
}

impl TruncatedGradient {
    pub fn new(rate: f64, gravity: f64, period: u64, dim: usize) -> Self {
        Self {
            w: WeightVector::zeros(dim),
            synced: vec![0; dim],
            steps: 0,
            truncations: 0,
            rate,
            gravity,
            period: period.max(1),
        }
    }

    fn grow(&mut self, len: usize) {
        if len > self.synced.len() {
            self.w.ensure_len(len);
            self.synced.resize(len, self.truncations);
        }
    }

    // k successive clipped shrinks by s equal one clipped shrink by k*s
    fn catch_up(&mut self, i: usize) {
        let k = self.truncations - self.synced[i];
        if k == 0 {
            return;
        }
        let wi = &mut self.w.as_mut_slice()[i];
        if *wi != 0.0 {
            *wi = soft_threshold(*wi, self.rate * self.gravity * k as f64);
        }
        self.synced[i] = self.truncations;
    }

    fn catch_up_support(&mut self, x: &SparseVector) {
        if let Some(m) = x.max_index() {
            self.grow(m + 1);
        }
        for &i in x.indices() {
            self.catch_up(i);
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl OnlineLearner for TruncatedGradient {
    fn score(&mut self, x: &SparseVector) -> f64 {
        self.catch_up_support(x);
        self.w.dot(x)
    }

    fn update(&mut self, x: &SparseVector, y: Label) {
        let g = hinge_grad_scale(self.score(x), y);
        if g != 0.0 {
            self.w.axpy_sparse(self.rate * g, x);
        }
        self.steps += 1;
        if self.steps % self.period == 0 {
            self.truncations += 1;
        }
    }

    fn weights(&mut self) -> &WeightVector {
        for i in 0..self.synced.len() {
            self.catch_up(i);
        }
        &self.w
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::AlwaysUpdate
    }
}

/// Algorithm choice with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "snake_case")]
pub enum LearnerConfig {
    /// PA-II.
    Pac { c_err: f64 },
    Pa1 { c_err: f64 },
    Fsol { eta: f64, lambda: f64 },
    Sgdm { rate: f64, momentum: f64 },
    Adagrad { rate: f64 },
    Tgd { rate: f64, gravity: f64, period: u64 },
}

impl LearnerConfig {
    pub const DEFAULT_SGD_RATE: f64 = 0.01;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_ADAGRAD_RATE: f64 = 0.1;
    pub const DEFAULT_TGD_RATE: f64 = 0.1;
    pub const DEFAULT_TGD_GRAVITY: f64 = 0.01;
    pub const DEFAULT_TGD_PERIOD: u64 = 10;

    pub fn sgdm_default() -> Self {
        LearnerConfig::Sgdm {
            rate: Self::DEFAULT_SGD_RATE,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn adagrad_default() -> Self {
        LearnerConfig::Adagrad {
            rate: Self::DEFAULT_ADAGRAD_RATE,
        }
    }

    pub fn tgd_default() -> Self {
        LearnerConfig::Tgd {
            rate: Self::DEFAULT_TGD_RATE,
            gravity: Self::DEFAULT_TGD_GRAVITY,
            period: Self::DEFAULT_TGD_PERIOD,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerConfig::Pac { .. } => "pac",
            LearnerConfig::Pa1 { .. } => "pa1",
            LearnerConfig::Fsol { .. } => "fsol",
            LearnerConfig::Sgdm { .. } => "sgdm",
            LearnerConfig::Adagrad { .. } => "adagrad",
            LearnerConfig::Tgd { .. } => "tgd",
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerConfig::Pac { .. } | LearnerConfig::Pa1 { .. } | LearnerConfig::Fsol { .. } => {
                LearnerKind::PassiveAggressive
            }
            _ => LearnerKind::AlwaysUpdate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(WatError::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            LearnerConfig::Pac { c_err } | LearnerConfig::Pa1 { c_err } => positive("c_err", c_err),
            LearnerConfig::Fsol { eta, lambda } => {
                positive("eta", eta)?;
                if lambda >= 0.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(WatError::InvalidParameter(format!(
                        "lambda must be non-negative, got {lambda}"
                    )))
                }
            }
            LearnerConfig::Sgdm { rate, momentum } => {
                positive("rate", rate)?;
                if (0.0..1.0).contains(&momentum) {
                    Ok(())
                } else {
                    Err(WatError::InvalidParameter(format!(
                        "momentum must lie in [0, 1), got {momentum}"
                    )))
                }
            }
            LearnerConfig::Adagrad { rate } => positive("rate", rate),
            LearnerConfig::Tgd {
                rate,
                gravity,
                period,
            } => {
                positive("rate", rate)?;
                if !(gravity >= 0.0 && gravity.is_finite()) {
                    return Err(WatError::InvalidParameter(format!(
                        "gravity must be non-negative, got {gravity}"
                    )));
                }
                if period == 0 {
                    return Err(WatError::InvalidParameter("period must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Fresh learner with `dim` preallocated coordinates.
    pub fn build(&self, dim: usize) -> Result<Box<dyn OnlineLearner>> {
        self.validate()?;
        Ok(match *self {
            LearnerConfig::Pac { c_err } => {
                Box::new(PassiveAggressive::new(PaVariant::PaII, c_err, dim))
            }
            LearnerConfig::Pa1 { c_err } => {
                Box::new(PassiveAggressive::new(PaVariant::PaI, c_err, dim))
            }
            LearnerConfig::Fsol { eta, lambda } => Box::new(Fsol::new(eta, lambda, dim)),
            LearnerConfig::Sgdm { rate, momentum } => {
                Box::new(SgdMomentum::new(rate, momentum, dim))
            }
            LearnerConfig::Adagrad { rate } => Box::new(AdaGrad::new(rate, dim)),
            LearnerConfig::Tgd {
                rate,
                gravity,
                period,
            } => Box::new(TruncatedGradient::new(rate, gravity, period, dim)),
        })
    }
}

/// `C_err` decades `1e-3 ..= 1e3`.
pub fn c_err_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

/// `eta` powers of two `2^-3 ..= 2^9`.
pub fn eta_grid() -> Vec<f64> {
    (-3..=9).map(|e| 2f64.powi(e)).collect()
}

/// `lambda` in `{0} U {1e-3 ..= 1e3}`.
pub fn lambda_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((-3..=3).map(|e| 10f64.powi(e)))
        .collect()
}
