use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;

const MAX_ATTEMPTS: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "valid" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Disjoint train/validation/test node indices covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Part sizes for `fractions`, rounded to integers that sum to `n`
/// (largest-remainder rounding).
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || total <= 0.0 {
        return Err(Error::InvalidArgument(format!("bad split fractions {fractions:?}")));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f / total * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

impl SplitIndex {
    /// Seeded random partition. If some part lacks either treatment arm the
    /// permutation is redrawn from a derived seed, up to 100 attempts.
    pub fn random(treatment: &[u8], fractions: [f64; 3], seed: u64) -> Result<Self> {
        let n = treatment.len();
        if n < 10 {
            return Err(Error::InvalidArgument(format!("need at least 10 nodes to split, got {n}")));
        }
        let [a, b, _] = split_sizes(n, fractions)?;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5917, attempt]));
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let split = SplitIndex {
                train: perm[..a].to_vec(),
                val: perm[a..a + b].to_vec(),
                test: perm[a + b..].to_vec(),
            };
            if split.has_overlap(treatment) {
                return Ok(split);
            }
        }
        Err(Error::Overlap(format!("no split with both arms in every part after {MAX_ATTEMPTS} attempts")))
    }

    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    /// Both treatment arms appear in every part.
    pub fn has_overlap(&self, treatment: &[u8]) -> bool {
        SplitName::ALL.iter().all(|&s| {
            let idx = self.get(s);
            idx.iter().any(|&i| treatment[i] == 1) && idx.iter().any(|&i| treatment[i] == 0)
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Format(format!("split index {i} outside 0..{n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format(format!("node {i} appears in more than one split")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("node {missing} is in no split")));
        }
        Ok(())
    }
}
