//! Ensemble construction over stored weight vectors: reservoir averages with optional voting
//! zeroing, plus the top-K, moving-average and exponential-average comparison schemes.
//!
//! Means are accumulated incrementally (`m += (x - m) * w_j / W_j`), which keeps every output
//! coordinate inside the occupants' range and returns a vector unchanged when all occupants agree.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WatError};
use crate::reservoir::{wrs_weight, Candidate, Weighting};
use crate::sparse::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Simple,
    Weighted,
}

fn extent<'a>(vs: impl Iterator<Item = &'a WeightVector>) -> usize {
    vs.map(WeightVector::len).max().unwrap_or(0)
}

fn running_mean<'a, I>(items: I, len: usize) -> WeightVector
where
    I: IntoIterator<Item = (&'a WeightVector, f64)>,
{
    let mut mean = vec![0.0; len];
    let mut total = 0.0;
    let mut first = true;
    for (v, weight) in items {
        if weight <= 0.0 {
            continue;
        }
        total += weight;
        let src = v.as_slice();
        if first {
            mean[..src.len()].copy_from_slice(src);
            first = false;
            continue;
        }
        let frac = weight / total;
        for (i, m) in mean.iter_mut().enumerate() {
            let x = src.get(i).copied().unwrap_or(0.0);
            *m += (x - *m) * frac;
        }
    }
    WeightVector::from_vec(mean)
}

/// Plain mean of a set of vectors, or `None` if the set is empty.
pub fn mean_of<'a, I>(vectors: I) -> Option<WeightVector>
where
    I: IntoIterator<Item = &'a WeightVector>,
    I::IntoIter: Clone,
{
    let it = vectors.into_iter();
    if it.clone().next().is_none() {
        return None;
    }
    let len = extent(it.clone());
    let mut mean = vec![0.0; len];
    for (k, v) in it.enumerate() {
        let src = v.as_slice();
        if k == 0 {
            mean[..src.len()].copy_from_slice(src);
            continue;
        }
        let n = (k + 1) as f64;
        for (i, m) in mean.iter_mut().enumerate() {
            let x = src.get(i).copied().unwrap_or(0.0);
            *m += (x - *m) / n;
        }
    }
    Some(WeightVector::from_vec(mean))
}

/// Coordinate-wise mean of the occupants (divides by occupant count, not capacity).
pub fn simple_average(cands: &[Candidate]) -> Option<WeightVector> {
    mean_of(cands.iter().map(|c| &c.weights))
}

/// Averaging weights proportional to the WRS weights, normalized so the largest is 1.
///
/// Exponential weights are formed as `e^(s_j - max s)`.
pub fn normalized_weights(cands: &[Candidate], scheme: Weighting) -> Vec<f64> {
    match scheme {
        Weighting::Standard => cands.iter().map(|c| c.survival as f64).collect(),
        Weighting::Exponential => {
            let top = cands.iter().map(|c| c.survival).max().unwrap_or(0);
            cands
                .iter()
                .map(|c| (-((top - c.survival) as f64)).exp())
                .collect()
        }
    }
}

/// Survival-weighted mean; falls back to [`simple_average`] when all weights are zero or equal.
pub fn weighted_average(cands: &[Candidate], scheme: Weighting) -> Option<WeightVector> {
    if cands.is_empty() {
        return None;
    }
    let weights = normalized_weights(cands, scheme);
    let all_equal = weights.iter().all(|w| *w == weights[0]);
    let total: f64 = weights.iter().sum();
    if all_equal || total <= 0.0 {
        return simple_average(cands);
    }
    let len = extent(cands.iter().map(|c| &c.weights));
    Some(running_mean(
        cands.iter().map(|c| &c.weights).zip(weights),
        len,
    ))
}

/// Zeroes every coordinate where a strict majority of `vectors` is exactly zero.
pub fn voting_zero_vectors<'a, I>(avg: &WeightVector, vectors: I) -> WeightVector
where
    I: IntoIterator<Item = &'a WeightVector>,
{
    let mut out = avg.clone();
    voting_zero_in_place(&mut out, vectors);
    out
}

/// In-place form of [`voting_zero_vectors`].
pub fn voting_zero_in_place<'a, I>(avg: &mut WeightVector, vectors: I)
where
    I: IntoIterator<Item = &'a WeightVector>,
{
    let vs: Vec<&WeightVector> = vectors.into_iter().collect();
    let n = vs.len();
    for (i, o) in avg.as_mut_slice().iter_mut().enumerate() {
        if *o == 0.0 {
            continue;
        }
        let zeros = vs.iter().filter(|v| v.get(i) == 0.0).count();
        if 2 * zeros > n {
            *o = 0.0;
        }
    }
}

/// Voting-based zeroing against reservoir occupants. The occupants are not modified.
pub fn voting_zero(avg: &WeightVector, cands: &[Candidate]) -> WeightVector {
    voting_zero_vectors(avg, cands.iter().map(|c| &c.weights))
}

/// Averages `cands` and optionally applies voting zeroing. `None` when `cands` is empty.
pub fn build_ensemble(
    cands: &[Candidate],
    averaging: Averaging,
    scheme: Weighting,
    voting: bool,
) -> Option<WeightVector> {
    let mut avg = match averaging {
        Averaging::Simple => simple_average(cands)?,
        Averaging::Weighted => weighted_average(cands, scheme)?,
    };
    if voting {
        voting_zero_in_place(&mut avg, cands.iter().map(|c| &c.weights));
    }
    Some(avg)
}

/// Deterministic pool of the `K` longest-surviving candidates seen so far.
///
/// On equal survival the earlier candidate is kept.
#[derive(Debug, Clone)]
pub struct TopK {
    slots: Vec<Candidate>,
    capacity: usize,
    scheme: Weighting,
}

impl TopK {
    pub fn new(capacity: usize, scheme: Weighting) -> Result<Self> {
        if capacity == 0 {
            return Err(WatError::InvalidParameter("top-K needs K >= 1".into()));
        }
        Ok(Self {
            slots: Vec::with_capacity(capacity),
            capacity,
            scheme,
        })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    // weakest = lowest survival, latest birth among equals
    fn weakest(&self) -> Option<usize> {
        self.slots
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.survival
                    .cmp(&b.survival)
                    .then(b.birth_timestep.cmp(&a.birth_timestep))
            })
            .map(|(i, _)| i)
    }

    pub fn offer(&mut self, w: &WeightVector, survival: u64, timestep: u64) -> bool {
        let b = wrs_weight(survival, self.scheme);
        if self.slots.len() < self.capacity {
            self.slots.push(Candidate {
                weights: w.clone(),
                survival,
                b,
                log_key: 0.0,
                birth_timestep: timestep,
            });
            return true;
        }
        let i = self.weakest().expect("full pool has slots");
        if survival <= self.slots[i].survival {
            return false;
        }
        let slot = &mut self.slots[i];
        slot.weights.copy_from(w);
        slot.survival = survival;
        slot.b = b;
        slot.birth_timestep = timestep;
        true
    }

    pub fn ensemble(&self, averaging: Averaging, voting: bool) -> Option<WeightVector> {
        build_ensemble(&self.slots, averaging, self.scheme, voting)
    }
}

/// Mean of the most recent `K` weight vectors.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    buf: Vec<WeightVector>,
    next: usize,
    capacity: usize,
}

impl MovingAverage {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(WatError::InvalidParameter("moving-average window must be >= 1".into()));
        }
        Ok(Self {
            buf: Vec::with_capacity(capacity),
            next: 0,
            capacity,
        })
    }

    /// Stores `w`, evicting the oldest entry once the window is full.
    pub fn push(&mut self, w: &WeightVector) {
        if self.buf.len() < self.capacity {
            self.buf.push(w.clone());
        } else {
            self.buf[self.next].copy_from(w);
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored vectors from oldest to newest.
    pub fn window(&self) -> impl Iterator<Item = &WeightVector> + Clone {
        let split = if self.buf.len() < self.capacity { 0 } else { self.next };
        self.buf[split..].iter().chain(self.buf[..split].iter())
    }

    pub fn mean(&self) -> Option<WeightVector> {
        mean_of(self.window())
    }

    /// `push` followed by `mean`.
    pub fn update(&mut self, w: &WeightVector) -> WeightVector {
        self.push(w);
        self.mean().expect("window is non-empty after a push")
    }
}

/// `bar = gamma * w + (1 - gamma) * bar`, initialized to the first `w`.
#[derive(Debug, Clone)]
pub struct ExponentialAverage {
    bar: Option<WeightVector>,
    gamma: f64,
}

impl ExponentialAverage {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(WatError::InvalidParameter(format!(
                "gamma {gamma} must lie in (0, 1]"
            )));
        }
        Ok(Self { bar: None, gamma })
    }

    pub fn current(&self) -> Option<&WeightVector> {
        self.bar.as_ref()
    }

    pub fn update(&mut self, w: &WeightVector) -> &WeightVector {
        let g = self.gamma;
        match &mut self.bar {
            None => self.bar = Some(w.clone()),
            Some(bar) => {
                bar.ensure_len(w.len());
                for (i, b) in bar.as_mut_slice().iter_mut().enumerate() {
                    *b = g * w.get(i) + (1.0 - g) * *b;
                }
            }
        }
        self.bar.as_ref().expect("initialized above")
    }
}
