//! Temporal anchor schedules: the frame offsets at which a predicted
//! trajectory is supervised.
//!
//! A schedule of `T` anchors ending at offset `r` is
//! `[floor(r*1/T), floor(r*2/T), ..., r]`. Fixed schedules use a constant
//! `r`; random schedules draw `r` uniformly from an inclusive integer range
//! for every sample.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Strictly increasing, positive frame offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnchorSchedule {
    offsets: Vec<u32>,
}

impl AnchorSchedule {
    pub fn new(offsets: Vec<u32>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::invalid("anchor schedule is empty"));
        }
        if offsets[0] == 0 {
            return Err(Error::invalid("anchor offsets must be >= 1"));
        }
        if let Some(w) = offsets.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "anchor offsets must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { offsets })
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn last(&self) -> u32 {
        *self.offsets.last().expect("non-empty")
    }
}

/// Inclusive discrete uniform range `U{min, max}` for the final anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorDistribution {
    pub min: u32,
    pub max: u32,
}

impl AnchorDistribution {
    pub fn new(min: u32, max: u32) -> Result<Self> {
        if min == 0 || min > max {
            return Err(Error::invalid(format!(
                "anchor range U{{{min}, {max}}} needs 1 <= min <= max"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.random_range(self.min..=self.max)
    }
}

/// `T` anchors evenly spread up to and including `last`, floored.
pub fn spread(last: u32, count: u32) -> Result<AnchorSchedule> {
    if count == 0 {
        return Err(Error::invalid("anchor count must be >= 1"));
    }
    if last < count {
        return Err(Error::invalid(format!(
            "{count} anchors cannot be spread over {last} frames without repeating offsets"
        )));
    }
    let (last, count) = (u64::from(last), u64::from(count));
    let offsets = (1..=count).map(|k| (last * k / count) as u32).collect();
    AnchorSchedule::new(offsets)
}

pub fn fixed_schedule(count: u32, horizon: u32) -> Result<AnchorSchedule> {
    spread(horizon, count)
}

pub fn random_schedule<R: Rng + ?Sized>(dist: &AnchorDistribution, count: u32, rng: &mut R) -> Result<AnchorSchedule> {
    if dist.min < count {
        return Err(Error::invalid(format!(
            "anchor range minimum {} is below the anchor count {count}",
            dist.min
        )));
    }
    spread(dist.sample(rng), count)
}

/// How often each offset is supervised over `n_draws` random schedules.
pub fn schedule_histogram<R: Rng + ?Sized>(
    dist: &AnchorDistribution,
    count: u32,
    n_draws: usize,
    rng: &mut R,
) -> Result<BTreeMap<u32, u64>> {
    let mut hist = BTreeMap::new();
    for _ in 0..n_draws {
        for &t in random_schedule(dist, count, rng)?.offsets() {
            *hist.entry(t).or_insert(0) += 1;
        }
    }
    Ok(hist)
}

/// Where the supervised offsets of a training sample come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnchorSource {
    Fixed(AnchorSchedule),
    Random { dist: AnchorDistribution, count: u32 },
}

impl AnchorSource {
    pub fn fixed(count: u32, horizon: u32) -> Result<Self> {
        Ok(Self::Fixed(fixed_schedule(count, horizon)?))
    }

    pub fn random(count: u32, min: u32, max: u32) -> Result<Self> {
        let dist = AnchorDistribution::new(min, max)?;
        if min < count {
            return Err(Error::invalid(format!(
                "anchors.min = {min} must be >= anchors.count = {count}"
            )));
        }
        Ok(Self::Random { dist, count })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AnchorSchedule> {
        match self {
            Self::Fixed(s) => Ok(s.clone()),
            Self::Random { dist, count } => random_schedule(dist, *count, rng),
        }
    }

    /// Largest offset this source can produce.
    pub fn max_offset(&self) -> u32 {
        match self {
            Self::Fixed(s) => s.last(),
            Self::Random { dist, .. } => dist.max,
        }
    }

    pub fn count(&self) -> u32 {
        match self {
            Self::Fixed(s) => s.len() as u32,
            Self::Random { count, .. } => *count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_examples() {
        let s = fixed_schedule(25, 50).unwrap();
        assert_eq!(s.offsets(), (1..=25).map(|k| 2 * k).collect::<Vec<_>>().as_slice());
        assert_eq!(fixed_schedule(2, 50).unwrap().offsets(), &[25, 50]);
        assert_eq!(fixed_schedule(1, 50).unwrap().offsets(), &[50]);
        assert!(fixed_schedule(51, 50).is_err());
        assert!(fixed_schedule(0, 50).is_err());
    }

    #[test]
    fn spread_examples() {
        assert_eq!(spread(20, 4).unwrap().offsets(), &[5, 10, 15, 20]);
        assert_eq!(spread(21, 4).unwrap().offsets(), &[5, 10, 15, 21]);
        assert_eq!(spread(7, 2).unwrap().offsets(), &[3, 7]);
    }

    #[test]
    fn random_requires_min_at_least_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dist = AnchorDistribution::new(3, 10).unwrap();
        assert!(random_schedule(&dist, 4, &mut rng).is_err());
        assert!(AnchorSource::random(4, 3, 10).is_err());
        assert!(AnchorDistribution::new(10, 9).is_err());
    }

    #[test]
    fn degenerate_range_matches_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = AnchorDistribution::new(50, 50).unwrap();
        let fixed = fixed_schedule(2, 50).unwrap();
        for _ in 0..20 {
            assert_eq!(random_schedule(&dist, 2, &mut rng).unwrap(), fixed);
        }
        let hist = schedule_histogram(&dist, 2, 37, &mut rng).unwrap();
        assert_eq!(hist.into_iter().collect::<Vec<_>>(), vec![(25, 37), (50, 37)]);
    }

    #[test]
    fn production_range_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dist = AnchorDistribution::new(35, 55).unwrap();
        let hist = schedule_histogram(&dist, 2, 100_000, &mut rng).unwrap();
        let expected: Vec<u32> = (35..=55)
            .flat_map(|r| [r / 2, r])
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        assert_eq!(hist.keys().copied().collect::<Vec<_>>(), expected);
        assert_eq!(*hist.keys().next().unwrap(), 17);
        assert_eq!(*hist.keys().last().unwrap(), 55);
    }

    #[test]
    fn single_anchor_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = AnchorDistribution::new(35, 55).unwrap();
        let n = 21_000;
        let hist = schedule_histogram(&dist, 1, n, &mut rng).unwrap();
        let p = 1.0 / 21.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(hist.len(), 21);
        for (&t, &c) in &hist {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "offset {t}: {c} vs {mean}");
        }
    }

    proptest! {
        #[test]
        fn random_offsets_follow_integer_floor(seed in any::<u64>(), count in 1u32..30, min in 30u32..60, width in 0u32..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = AnchorDistribution::new(min, min + width).unwrap();
            let s = random_schedule(&dist, count, &mut rng).unwrap();
            let r = s.last();
            prop_assert!(r >= min && r <= min + width);
            for (k, &t) in s.offsets().iter().enumerate() {
                let k = k as u32 + 1;
                prop_assert_eq!(t, ((r as f64) * (k as f64) / (count as f64)).floor() as u32);
            }
        }
    }
}
