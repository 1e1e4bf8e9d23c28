use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smallest power of two `>= n` (1 for `n = 0`).
pub fn next_power_of_two(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place unnormalized Walsh–Hadamard transform, `v <- H_N v`.
pub fn fwht_inplace(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Applies [`fwht_inplace`] to every column. Row count must be a power of two.
pub(crate) fn fwht_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        fwht_inplace(col.as_mut_slice()).expect("padded to a power of two");
    }
}
