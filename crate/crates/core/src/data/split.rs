use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train, validation and test fractions.
pub const PAPER_RATIOS: [f64; 3] = [0.81, 0.09, 0.10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partition sizes by largest remainder; ties go to the earlier part.
pub fn partition_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let raw = ratios.map(|r| r * n as f64);
    let mut sizes = raw.map(|r| r.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Seeded shuffle of `0..n` cut into contiguous train/val/test parts.
pub fn split(n: usize, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidRatios(format!("{ratios:?} must all be positive")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(format!("{ratios:?} do not sum to 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = partition_sizes(n, ratios);
    let test = order.split_off(a + b);
    let val = order.split_off(a);
    Ok(DatasetSplit {
        train: order,
        val,
        test,
        ratios,
        seed,
    })
}
