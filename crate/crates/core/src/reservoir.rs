//! Weighted reservoir of candidate weight vectors (A-Res keys `u^(1/(b + eps))`).
//!
//! Keys are kept in log domain, `ln(u) / (b + eps)`, which is a monotone transform of the
//! literal key and stays finite for any survival count.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WatError};
use crate::sparse::WeightVector;

/// Guard added to every WRS weight before dividing.
pub const WRS_EPS: f64 = 1e-8;

/// How survival counts become WRS weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `b = s`.
    #[default]
    Standard,
    /// `b = e^s`.
    Exponential,
}

/// WRS weight of a candidate that survived `survival` passive steps. May be `inf` for the
/// exponential scheme.
pub fn wrs_weight(survival: u64, scheme: Weighting) -> f64 {
    match scheme {
        Weighting::Standard => survival as f64,
        Weighting::Exponential => (survival as f64).exp(),
    }
}

/// Log-domain WRS key `ln(u) / (b + eps)` for `u` in `(0, 1)`.
pub fn wrs_key(b: f64, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(WatError::InvalidParameter(format!(
            "uniform draw {u} must lie in (0, 1)"
        )));
    }
    if !(b >= 0.0) {
        return Err(WatError::InvalidParameter(format!(
            "wrs weight {b} must be non-negative"
        )));
    }
    Ok(u.ln() / (b + WRS_EPS))
}

/// A terminated weight vector kept in the reservoir.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub weights: WeightVector,
    pub survival: u64,
    /// WRS weight `b`.
    pub b: f64,
    pub log_key: f64,
    /// Timestep at which the candidate was terminated and offered.
    pub birth_timestep: u64,
}

/// Debug view of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDump {
    pub birth_timestep: u64,
    pub survival: u64,
    pub b: f64,
    pub log_k: f64,
    pub nnz: usize,
}

/// Fixed-capacity store of candidates with min-key eviction.
#[derive(Debug, Clone)]
pub struct Reservoir {
    slots: Vec<Candidate>,
    capacity: usize,
    scheme: Weighting,
    offers: u64,
    insertions: u64,
}

impl Reservoir {
    pub fn new(capacity: usize, scheme: Weighting) -> Result<Self> {
        if capacity == 0 {
            return Err(WatError::InvalidParameter(
                "reservoir capacity must be at least 1".into(),
            ));
        }
        Ok(Self {
            slots: Vec::with_capacity(capacity),
            capacity,
            scheme,
            offers: 0,
            insertions: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn scheme(&self) -> Weighting {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.slots
    }

    /// Total calls to [`Reservoir::offer`].
    pub fn offers(&self) -> u64 {
        self.offers
    }

    pub fn insertions(&self) -> u64 {
        self.insertions
    }

    /// Slot holding the smallest key, lowest index on ties.
    pub fn min_key_slot(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.slots.iter().enumerate() {
            match best {
                Some((_, k)) if c.log_key >= k => {}
                _ => best = Some((i, c.log_key)),
            }
        }
        best
    }

    /// Offers the outgoing candidate `w` with its survival count.
    ///
    /// Draws exactly one uniform from `rng`. `w` is copied only if it is kept; a replaced slot's
    /// buffer is reused.
    pub fn offer<R: Rng + ?Sized>(
        &mut self,
        w: &WeightVector,
        survival: u64,
        timestep: u64,
        rng: &mut R,
    ) -> bool {
        self.offers += 1;
        let u: f64 = rng.sample(Open01);
        let b = wrs_weight(survival, self.scheme);
        let log_key = u.ln() / (b + WRS_EPS);
        if !self.is_full() {
            self.slots.push(Candidate {
                weights: w.clone(),
                survival,
                b,
                log_key,
                birth_timestep: timestep,
            });
            self.insertions += 1;
            return true;
        }
        let (i, tau) = self.min_key_slot().expect("full reservoir has slots");
        if log_key > tau {
            let slot = &mut self.slots[i];
            slot.weights.copy_from(w);
            slot.survival = survival;
            slot.b = b;
            slot.log_key = log_key;
            slot.birth_timestep = timestep;
            self.insertions += 1;
            true
        } else {
            false
        }
    }

    pub fn dump(&self) -> Vec<SlotDump> {
        self.slots
            .iter()
            .map(|c| SlotDump {
                birth_timestep: c.birth_timestep,
                survival: c.survival,
                b: c.b,
                log_k: c.log_key,
                nnz: c.weights.nnz(),
            })
            .collect()
    }

    pub fn dump_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.dump())?)
    }
}

/// Counter of consecutive passive steps of the current candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SurvivalCounter(u64);

impl SurvivalCounter {
    pub fn new() -> Self {
        Self(0)
    }

    pub fn tick(&mut self) {
        self.0 += 1;
    }

    /// Returns the count before resetting it to zero.
    pub fn reset(&mut self) -> u64 {
        std::mem::take(&mut self.0)
    }

    pub fn get(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wv(v: f64) -> WeightVector {
        WeightVector::from_vec(vec![v])
    }

    #[test]
    fn weights() {
        assert_eq!(wrs_weight(0, Weighting::Standard), 0.0);
        assert_eq!(wrs_weight(3, Weighting::Standard), 3.0);
        assert!((wrs_weight(2, Weighting::Exponential) - 7.389_056_098_930_65).abs() < 1e-12);
        assert!(wrs_weight(1000, Weighting::Exponential).is_infinite());
    }

    #[test]
    fn keys() {
        let k = wrs_key(1.0, 0.5).unwrap();
        // ln(0.5) / (1 + 1e-8)
        assert!((k - (-0.693_147_173_628_473_6)).abs() < 1e-15);
        assert!((k.exp() - 0.5).abs() < 1e-8);
        let k0 = wrs_key(0.0, 0.5).unwrap();
        assert!((k0 - 0.5f64.ln() * 1e8).abs() < 1e-6);
        let big = wrs_key(1e300, 0.5).unwrap();
        assert!(big < 0.0 && big > -1e-299);
        assert_eq!(wrs_key(f64::INFINITY, 0.5).unwrap(), 0.0);
        assert!(wrs_key(1.0, 0.0).is_err());
        assert!(wrs_key(1.0, 1.0).is_err());
        assert!(wrs_key(-1.0, 0.5).is_err());
    }

    #[test]
    fn log_keys_order_like_direct_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        for _ in 0..10_000 {
            let (u1, u2): (f64, f64) = (rng.sample(Open01), rng.sample(Open01));
            let (b1, b2) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
            let d1 = u1.powf(1.0 / (b1 + WRS_EPS));
            let d2 = u2.powf(1.0 / (b2 + WRS_EPS));
            if d1 == 0.0 || d2 == 0.0 || d1 == d2 {
                continue;
            }
            let l1 = wrs_key(b1, u1).unwrap();
            let l2 = wrs_key(b2, u2).unwrap();
            assert_eq!(d1 > d2, l1 > l2);
            checked += 1;
        }
        assert!(checked > 5_000);
    }

    #[test]
    fn empty_reservoir_always_inserts() {
        let mut r = Reservoir::new(3, Weighting::Standard).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(r.offer(&wv(1.0), 0, 1, &mut rng));
        assert!(r.offer(&wv(2.0), 0, 2, &mut rng));
        assert_eq!(r.len(), 2);
        assert!(Reservoir::new(0, Weighting::Standard).is_err());
    }

    #[test]
    fn full_reservoir_rejects_lower_key() {
        let mut r = Reservoir::new(1, Weighting::Standard).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        r.offer(&wv(1.0), 1_000_000, 1, &mut rng);
        let before = r.candidates()[0].log_key;
        // a zero-survival key is ~1e8 * ln(u), far below any key of weight 1e6
        assert!(!r.offer(&wv(2.0), 0, 2, &mut rng));
        assert_eq!(r.candidates()[0].weights.get(0), 1.0);
        assert_eq!(r.candidates()[0].log_key, before);
        assert_eq!(r.offers(), 2);
        assert_eq!(r.insertions(), 1);
    }

    #[test]
    fn ties_on_min_key_pick_lowest_index() {
        let mut r = Reservoir::new(2, Weighting::Standard).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        r.offer(&wv(1.0), 1, 1, &mut rng);
        r.offer(&wv(2.0), 1, 2, &mut rng);
        r.slots[0].log_key = -1.0;
        r.slots[1].log_key = -1.0;
        assert_eq!(r.min_key_slot(), Some((0, -1.0)));
    }

    #[test]
    fn capacity_is_never_exceeded_and_contents_are_deterministic() {
        let run = |seed| {
            let mut r = Reservoir::new(4, Weighting::Exponential).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for t in 0..500u64 {
                r.offer(&wv(t as f64), t % 13, t, &mut rng);
                assert!(r.len() <= 4);
            }
            r.dump()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn huge_exponential_survival_is_retained() {
        let mut r = Reservoir::new(1, Weighting::Exponential).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        r.offer(&wv(1.0), 3, 1, &mut rng);
        assert!(r.offer(&wv(2.0), 800, 2, &mut rng));
        assert_eq!(r.candidates()[0].log_key, 0.0);
    }

    #[test]
    fn k1_inclusion_is_proportional_to_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 200_000;
        let mut hits = [0usize; 3];
        for _ in 0..trials {
            let mut r = Reservoir::new(1, Weighting::Standard).unwrap();
            for (i, s) in [1u64, 2, 3].into_iter().enumerate() {
                r.offer(&wv(i as f64), s, i as u64, &mut rng);
            }
            hits[r.candidates()[0].weights.get(0) as usize] += 1;
        }
        for (i, h) in hits.iter().enumerate() {
            let p = (i + 1) as f64 / 6.0;
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            let f = *h as f64 / trials as f64;
            assert!((f - p).abs() < 4.0 * sd, "item {i}: {f} vs {p}");
        }
    }

    #[test]
    fn survival_counter() {
        let mut s = SurvivalCounter::new();
        assert_eq!(s.get(), 0);
        s.tick();
        s.tick();
        s.tick();
        assert_eq!(s.get(), 3);
        assert_eq!(s.reset(), 3);
        assert_eq!(s.get(), 0);
    }

    #[test]
    fn dump_is_json() {
        let mut r = Reservoir::new(2, Weighting::Standard).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        r.offer(&WeightVector::from_vec(vec![0.0, 1.0, 2.0]), 4, 10, &mut rng);
        let v: serde_json::Value = serde_json::from_str(&r.dump_json().unwrap()).unwrap();
        assert_eq!(v[0]["nnz"], 2);
        assert_eq!(v[0]["survival"], 4);
        assert_eq!(v[0]["birth_timestep"], 10);
    }
}
