use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PlatoonRecord;
use crate::error::{Error, Result};

/// Disjoint platoon-level split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// `(floor(r_train*M), round_half_up(r_val*M), remainder)`.
pub fn split_counts(m: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mf = m as f64;
    let train = ((a * mf) + 1e-9).floor() as usize;
    let val = ((b * mf) + 0.5 + 1e-9).floor() as usize;
    let train = train.min(m);
    let val = val.min(m - train);
    Ok((train, val, m - train - val))
}

/// Shuffles platoon ids under `seed` and cuts them by [`split_counts`].
pub fn split_dataset(records: &[PlatoonRecord], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    if records.len() < 3 {
        return Err(Error::Invalid(format!(
            "splitting needs at least 3 platoons, got {}",
            records.len()
        )));
    }
    let (n_train, n_val, _) = split_counts(records.len(), ratios)?;
    let mut ids: Vec<String> = records.iter().map(|r| r.platoon_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(DatasetSplit { train: ids, val, test })
}
