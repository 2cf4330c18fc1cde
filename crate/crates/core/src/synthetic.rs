//! Small generated tables for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::AbundanceTable;
use crate::error::Result;

/// `n` samples over `d` features; class 0 is abundant only in the first half
/// of the features and class 1 only in the second half. Rows sum to 1.
pub fn separable_table(n: usize, d: usize, seed: u64) -> Result<AbundanceTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = d / 2;
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let block = if y == 0 { 0..half } else { half..d };
        let mut row = vec![0.0; d];
        for j in block {
            row[j] = rng.random_range(0.05..1.0);
        }
        let s: f64 = row.iter().sum();
        values.extend(row.iter().map(|v| v / s));
        labels.push(y);
    }
    AbundanceTable::new(
        (0..n).map(|i| format!("s{i:04}")).collect(),
        (0..d).map(|j| format!("f{j:04}")).collect(),
        values,
        labels,
        None,
    )
}
