//! Training loops: weighted-reservoir augmented training over passive-aggressive learners, the
//! pseudo-passive variant for always-updating learners, and the baseline / comparison runs.
//!
//! Ensembles are only built at checkpoints; averaging is a pure function of the stored
//! candidates, so this yields the same vectors as building one after every example.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::Example;
use crate::ensemble::{build_ensemble, Averaging, ExponentialAverage, MovingAverage, TopK};
use crate::error::{Result, WatError};
use crate::learners::{LearnerConfig, LearnerKind, OnlineLearner};
use crate::metrics::{accuracy, oracle_curve, rop, sparsity, AccuracyCurve};
use crate::reservoir::{Reservoir, SurvivalCounter, Weighting};
use crate::sparse::{hinge_from_margin, WeightVector};

pub const DEFAULT_CHECKPOINTS: usize = 200;
/// Reservoir sizes swept by default.
pub const DEFAULT_K_GRID: [usize; 4] = [1, 4, 16, 64];

/// Which ensemble (if any) is tracked next to the base learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum EnsembleSpec {
    /// Base learner only.
    #[default]
    None,
    /// Weighted reservoir sampling of terminated candidates.
    Wrs {
        k: usize,
        weighting: Weighting,
        averaging: Averaging,
        voting_zero: bool,
    },
    /// The `k` longest-surviving candidates, chosen deterministically.
    TopK {
        k: usize,
        weighting: Weighting,
        averaging: Averaging,
        voting_zero: bool,
    },
    /// Mean of the last `k` iterates.
    MovingAvg { k: usize },
    /// Exponentially weighted iterate average.
    ExpAvg { gamma: f64 },
}

impl EnsembleSpec {
    /// Model tag used in metrics files.
    pub fn tag(&self) -> Option<&'static str> {
        match self {
            EnsembleSpec::None => None,
            EnsembleSpec::Wrs { .. } => Some("wrs"),
            EnsembleSpec::TopK { .. } => Some("topk"),
            EnsembleSpec::MovingAvg { .. } => Some("movavg"),
            EnsembleSpec::ExpAvg { .. } => Some("expavg"),
        }
    }

    pub fn wrs(k: usize) -> Self {
        EnsembleSpec::Wrs {
            k,
            weighting: Weighting::Standard,
            averaging: Averaging::Simple,
            voting_zero: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(WatError::InvalidParameter(m.into()));
        match *self {
            EnsembleSpec::Wrs { k, .. }
            | EnsembleSpec::TopK { k, .. }
            | EnsembleSpec::MovingAvg { k }
                if k == 0 =>
            {
                bad("ensemble size K must be at least 1")
            }
            EnsembleSpec::ExpAvg { gamma } if !(gamma > 0.0 && gamma <= 1.0) => {
                bad("gamma must lie in (0, 1]")
            }
            _ => Ok(()),
        }
    }
}

/// Everything that determines one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub learner: LearnerConfig,
    pub ensemble: EnsembleSpec,
    pub seed: u64,
    /// Target number of evenly spaced checkpoints.
    pub checkpoints: usize,
    /// Evaluate on only the first `n` test examples.
    #[serde(default)]
    pub eval_subsample: Option<usize>,
    /// Keep a copy of the base weights at every checkpoint.
    #[serde(default)]
    pub capture_weights: bool,
}

impl RunConfig {
    pub fn new(learner: LearnerConfig, ensemble: EnsembleSpec, seed: u64) -> Self {
        Self {
            learner,
            ensemble,
            seed,
            checkpoints: DEFAULT_CHECKPOINTS,
            eval_subsample: None,
            capture_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.ensemble.validate()?;
        if self.checkpoints < 2 {
            return Err(WatError::InvalidParameter(
                "checkpoint target must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Metrics recorded at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub timestep: u64,
    pub base_acc: f64,
    pub base_sparsity: f64,
    pub ensemble_acc: Option<f64>,
    pub ensemble_sparsity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_base_acc: f64,
    pub final_base_sparsity: f64,
    pub final_ensemble_acc: Option<f64>,
    pub final_ensemble_sparsity: Option<f64>,
    pub rop_base: f64,
    pub rop_ensemble: Option<f64>,
    /// Terminations: aggressive steps, or misclassifications for always-updating learners.
    pub aggressive_steps: u64,
    pub offers: u64,
    pub insertions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    pub learner: LearnerConfig,
    pub ensemble: EnsembleSpec,
    pub dim: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub summary: RunSummary,
    #[serde(skip)]
    pub base_weights: Vec<WeightVector>,
}

impl RunTrace {
    pub fn base_curve(&self) -> AccuracyCurve {
        self.checkpoints
            .iter()
            .map(|c| (c.timestep, c.base_acc))
            .collect()
    }

    pub fn ensemble_curve(&self) -> Option<AccuracyCurve> {
        self.checkpoints
            .iter()
            .map(|c| c.ensemble_acc.map(|a| (c.timestep, a)))
            .collect::<Option<Vec<_>>>()
            .map(AccuracyCurve::new)
    }

    pub fn oracle_curve(&self) -> AccuracyCurve {
        oracle_curve(&self.base_curve())
    }

    /// Base accuracies from checkpoints at or after half of the stream.
    pub fn late_base_accs(&self) -> Vec<f64> {
        let half = self.checkpoints.last().map_or(0, |c| c.timestep) / 2;
        self.checkpoints
            .iter()
            .filter(|c| c.timestep >= half)
            .map(|c| c.base_acc)
            .collect()
    }

    pub fn late_ensemble_accs(&self) -> Vec<f64> {
        let half = self.checkpoints.last().map_or(0, |c| c.timestep) / 2;
        self.checkpoints
            .iter()
            .filter(|c| c.timestep >= half)
            .filter_map(|c| c.ensemble_acc)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `{0, s, 2s, ...} U {n}` with stride `s = max(1, n / target)`.
pub fn checkpoint_schedule(n_train: u64, target: u64) -> Vec<u64> {
    let stride = (n_train / target.max(1)).max(1);
    let mut out: Vec<u64> = (0..=n_train).step_by(stride as usize).collect();
    if out.last() != Some(&n_train) {
        out.push(n_train);
    }
    out
}

/// Ensemble state carried through the loop.
enum Tracker {
    None,
    Wrs {
        reservoir: Reservoir,
        averaging: Averaging,
        voting: bool,
        rng: ChaCha8Rng,
    },
    TopK {
        pool: TopK,
        averaging: Averaging,
        voting: bool,
    },
    Moving(MovingAverage),
    Exp(ExponentialAverage),
}

impl Tracker {
    fn new(spec: &EnsembleSpec, seed: u64) -> Result<Self> {
        Ok(match *spec {
            EnsembleSpec::None => Tracker::None,
            EnsembleSpec::Wrs {
                k,
                weighting,
                averaging,
                voting_zero,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // stream 0 is used for the train/test split
                rng.set_stream(1);
                Tracker::Wrs {
                    reservoir: Reservoir::new(k, weighting)?,
                    averaging,
                    voting: voting_zero,
                    rng,
                }
            }
            EnsembleSpec::TopK {
                k,
                weighting,
                averaging,
                voting_zero,
            } => Tracker::TopK {
                pool: TopK::new(k, weighting)?,
                averaging,
                voting: voting_zero,
            },
            EnsembleSpec::MovingAvg { k } => Tracker::Moving(MovingAverage::new(k)?),
            EnsembleSpec::ExpAvg { gamma } => Tracker::Exp(ExponentialAverage::new(gamma)?),
        })
    }

    fn tracks_iterates(&self) -> bool {
        matches!(self, Tracker::Moving(_) | Tracker::Exp(_))
    }

    fn terminate(&mut self, w: &WeightVector, survival: u64, t: u64) {
        match self {
            Tracker::Wrs { reservoir, rng, .. } => {
                reservoir.offer(w, survival, t, rng);
            }
            Tracker::TopK { pool, .. } => {
                pool.offer(w, survival, t);
            }
            _ => {}
        }
    }

    fn observe_iterate(&mut self, w: &WeightVector) {
        match self {
            Tracker::Moving(m) => m.push(w),
            Tracker::Exp(e) => {
                e.update(w);
            }
            _ => {}
        }
    }

    /// `None` means "use the current base weights".
    fn ensemble(&self) -> Option<WeightVector> {
        match self {
            Tracker::None => None,
            Tracker::Wrs {
                reservoir,
                averaging,
                voting,
                ..
            } => build_ensemble(
                reservoir.candidates(),
                *averaging,
                reservoir.scheme(),
                *voting,
            ),
            Tracker::TopK {
                pool,
                averaging,
                voting,
            } => pool.ensemble(*averaging, *voting),
            Tracker::Moving(m) => m.mean(),
            Tracker::Exp(e) => e.current().cloned(),
        }
    }

    fn counts(&self) -> (u64, u64) {
        match self {
            Tracker::Wrs { reservoir, .. } => (reservoir.offers(), reservoir.insertions()),
            _ => (0, 0),
        }
    }
}

struct Evaluator<'a> {
    test: &'a [Example],
    dim: usize,
}

impl Evaluator<'_> {
    fn eval(&self, w: &WeightVector) -> Result<(f64, f64)> {
        Ok((accuracy(w, self.test)?, sparsity(w, self.dim)?))
    }
}

fn drive(config: &RunConfig, train: &[Example], test: &[Example], dim: usize) -> Result<RunTrace> {
    config.validate()?;
    if train.is_empty() {
        return Err(WatError::EmptyDataset);
    }
    if test.is_empty() {
        return Err(WatError::EmptyTestSet);
    }
    let extent = train
        .iter()
        .chain(test)
        .filter_map(|e| e.x.max_index())
        .max()
        .map_or(0, |m| m + 1);
    if dim < extent {
        return Err(WatError::DimensionTooSmall { dim, extent });
    }
    let eval_set = match config.eval_subsample {
        Some(m) if m > 0 && m < test.len() => &test[..m],
        _ => test,
    };
    let evaluator = Evaluator {
        test: eval_set,
        dim,
    };

    let mut learner: Box<dyn OnlineLearner> = config.learner.build(dim)?;
    let kind = learner.kind();
    let mut tracker = Tracker::new(&config.ensemble, config.seed)?;
    let has_ensemble = !matches!(tracker, Tracker::None);
    let schedule = checkpoint_schedule(train.len() as u64, config.checkpoints as u64);
    let mut next_cp = 0usize;

    let mut counter = SurvivalCounter::new();
    let mut aggressive = 0u64;
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut base_weights = Vec::new();

    if tracker.tracks_iterates() {
        tracker.observe_iterate(learner.weights());
    }

    for t in 0..=train.len() as u64 {
        if t > 0 {
            let ex = &train[(t - 1) as usize];
            let score = learner.score(&ex.x);
            let terminated = match kind {
                LearnerKind::PassiveAggressive => hinge_from_margin(score, ex.y) > 0.0,
                LearnerKind::AlwaysUpdate => ex.y.sign() * score <= 0.0,
            };
            if terminated {
                let survival = counter.reset();
                aggressive += 1;
                tracker.terminate(learner.weights(), survival, t);
                learner.update(&ex.x, ex.y);
            } else {
                counter.tick();
                if kind == LearnerKind::AlwaysUpdate {
                    learner.update(&ex.x, ex.y);
                }
            }
            if tracker.tracks_iterates() {
                tracker.observe_iterate(learner.weights());
            }
        }

        if schedule.get(next_cp) == Some(&t) {
            next_cp += 1;
            let base = learner.weights();
            let (base_acc, base_sparsity) = evaluator.eval(base)?;
            if config.capture_weights {
                base_weights.push(base.clone());
            }
            let (ensemble_acc, ensemble_sparsity) = if has_ensemble {
                let (a, s) = match tracker.ensemble() {
                    Some(e) => evaluator.eval(&e)?,
                    None => (base_acc, base_sparsity),
                };
                (Some(a), Some(s))
            } else {
                (None, None)
            };
            checkpoints.push(Checkpoint {
                timestep: t,
                base_acc,
                base_sparsity,
                ensemble_acc,
                ensemble_sparsity,
            });
        }
    }

    let last = checkpoints.last().expect("schedule includes the final step");
    let base_curve: AccuracyCurve = checkpoints.iter().map(|c| (c.timestep, c.base_acc)).collect();
    let oracle = oracle_curve(&base_curve);
    let rop_ensemble = if has_ensemble {
        let ens: AccuracyCurve = checkpoints
            .iter()
            .map(|c| (c.timestep, c.ensemble_acc.unwrap_or(c.base_acc)))
            .collect();
        Some(rop(&oracle, &ens)?)
    } else {
        None
    };
    let (offers, insertions) = tracker.counts();
    let summary = RunSummary {
        final_base_acc: last.base_acc,
        final_base_sparsity: last.base_sparsity,
        final_ensemble_acc: last.ensemble_acc,
        final_ensemble_sparsity: last.ensemble_sparsity,
        rop_base: rop(&oracle, &base_curve)?,
        rop_ensemble,
        aggressive_steps: aggressive,
        offers,
        insertions,
    };
    Ok(RunTrace {
        seed: config.seed,
        learner: config.learner,
        ensemble: config.ensemble,
        dim,
        checkpoints,
        summary,
        base_weights,
    })
}

/// Weighted-reservoir augmented training over a passive-aggressive learner.
pub fn run_wat(config: &RunConfig, train: &[Example], test: &[Example], dim: usize) -> Result<RunTrace> {
    if config.learner.kind() != LearnerKind::PassiveAggressive {
        return Err(WatError::InvalidParameter(format!(
            "{} is not passive-aggressive; use the pseudo-passive variant",
            config.learner.name()
        )));
    }
    if !matches!(config.ensemble, EnsembleSpec::Wrs { .. }) {
        return Err(WatError::InvalidParameter("run_wat needs a WRS ensemble".into()));
    }
    drive(config, train, test, dim)
}

/// WRS training for always-updating learners: survival counts sign-correct predictions and the
/// pre-mistake weights are offered on each misclassification.
pub fn run_wat_pseudo_passive(
    config: &RunConfig,
    train: &[Example],
    test: &[Example],
    dim: usize,
) -> Result<RunTrace> {
    if config.learner.kind() != LearnerKind::AlwaysUpdate {
        return Err(WatError::InvalidParameter(format!(
            "{} is passive-aggressive; use run_wat",
            config.learner.name()
        )));
    }
    if !matches!(config.ensemble, EnsembleSpec::Wrs { .. }) {
        return Err(WatError::InvalidParameter(
            "run_wat_pseudo_passive needs a WRS ensemble".into(),
        ));
    }
    drive(config, train, test, dim)
}

/// Base learner alone, or with a top-K / moving-average / exponential-average ensemble.
pub fn run_baseline(
    config: &RunConfig,
    train: &[Example],
    test: &[Example],
    dim: usize,
) -> Result<RunTrace> {
    if matches!(config.ensemble, EnsembleSpec::Wrs { .. }) {
        return Err(WatError::InvalidParameter(
            "run_baseline does not take a WRS ensemble".into(),
        ));
    }
    drive(config, train, test, dim)
}

/// Routes to the right loop for the learner and ensemble in `config`.
pub fn run(config: &RunConfig, train: &[Example], test: &[Example], dim: usize) -> Result<RunTrace> {
    match (config.ensemble, config.learner.kind()) {
        (EnsembleSpec::Wrs { .. }, LearnerKind::PassiveAggressive) => {
            run_wat(config, train, test, dim)
        }
        (EnsembleSpec::Wrs { .. }, LearnerKind::AlwaysUpdate) => {
            run_wat_pseudo_passive(config, train, test, dim)
        }
        _ => run_baseline(config, train, test, dim),
    }
}
