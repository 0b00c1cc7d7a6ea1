//! Per-user random train/val/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::InteractionTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: InteractionTable,
    pub val: InteractionTable,
    pub test: InteractionTable,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
}

/// Split each user's interactions independently: with n interactions,
/// `n_test = max(1, round(test_ratio * n))`, `n_val = max(1, round(val_ratio * n))`,
/// and the remainder trains. Selection is a seeded shuffle of that user's
/// items, so a fixed seed reproduces the split exactly.
pub fn split_dataset(
    table: &InteractionTable,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 {
        return Err(Error::Config("split ratios must all be positive".into()));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            r_train + r_val + r_test
        )));
    }

    let by_user = table.items_by_user();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_pairs = Vec::new();
    let mut val_pairs = Vec::new();
    let mut test_pairs = Vec::new();

    for (u, items) in by_user.iter().enumerate() {
        let n = items.len();
        if n < 3 {
            return Err(Error::UserTooSparse {
                user: table.user_id(u).to_string(),
                degree: n,
                min: 3,
            });
        }
        let n_test = 1.max((r_test * n as f64).round() as usize);
        let n_val = 1.max((r_val * n as f64).round() as usize);
        if n_test + n_val >= n {
            return Err(Error::Config(format!(
                "ratios leave user {} with no training interactions",
                table.user_id(u)
            )));
        }
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        for (pos, &i) in shuffled.iter().enumerate() {
            if pos < n_test {
                test_pairs.push((u, i));
            } else if pos < n_test + n_val {
                val_pairs.push((u, i));
            } else {
                train_pairs.push((u, i));
            }
        }
    }

    Ok(DatasetSplit {
        train: table.with_pairs(train_pairs),
        val: table.with_pairs(val_pairs),
        test: table.with_pairs(test_pairs),
        seed,
        ratios,
    })
}
