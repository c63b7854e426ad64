//! Set partitions in restricted-growth order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_PARTITION_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetPartition {
    /// Blocks of 0-based indices, each sorted, ordered by smallest element.
    pub blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    /// Blocks as bitmasks over positions 0..n.
    pub fn masks(&self) -> Vec<u32> {
        self.blocks
            .iter()
            .map(|b| b.iter().fold(0u32, |m, &i| m | (1 << i)))
            .collect()
    }
}

/// All partitions of {0,…,n−1}, lexicographic in restricted-growth strings.
pub fn enumerate_partitions(n: usize) -> Result<Vec<SetPartition>> {
    if n == 0 || n > MAX_PARTITION_SIZE {
        return Err(Error::Limit(format!(
            "partitions of {n} elements (supported 1..={MAX_PARTITION_SIZE})"
        )));
    }
    let mut out = Vec::new();
    let mut a = vec![0usize; n];
    loop {
        let nb = a.iter().max().unwrap() + 1;
        let mut blocks = vec![Vec::new(); nb];
        for (i, &b) in a.iter().enumerate() {
            blocks[b].push(i);
        }
        out.push(SetPartition { blocks });
        // next restricted-growth string: a[i] ≤ 1 + max(a[..i])
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            let bound = a[..i].iter().max().unwrap() + 1;
            if a[i] < bound {
                a[i] += 1;
                a[i + 1..].iter_mut().for_each(|v| *v = 0);
                break;
            }
            i -= 1;
        }
    }
}

/// Partitions of the set encoded by `mask`, as lists of sub-masks.
pub fn partitions_of_mask(mask: u32) -> Result<Vec<Vec<u32>>> {
    let bits: Vec<usize> = (0..32).filter(|b| mask & (1 << b) != 0).collect();
    if bits.is_empty() {
        return Ok(vec![Vec::new()]);
    }
    Ok(enumerate_partitions(bits.len())?
        .into_iter()
        .map(|p| {
            p.blocks
                .iter()
                .map(|b| b.iter().fold(0u32, |m, &i| m | (1 << bits[i])))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_numbers() {
        let bell = [1, 2, 5, 15, 52, 203, 877, 4140];
        for (n, &b) in (1..=8).zip(&bell) {
            assert_eq!(enumerate_partitions(n).unwrap().len(), b);
        }
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(9).is_err());
    }

    #[test]
    fn order_and_coverage() {
        let ps = enumerate_partitions(3).unwrap();
        assert_eq!(ps[0].blocks, vec![vec![0, 1, 2]]);
        assert_eq!(ps[4].blocks, vec![vec![0], vec![1], vec![2]]);
        for p in enumerate_partitions(5).unwrap() {
            let m = p.masks();
            assert_eq!(m.iter().fold(0, |a, b| a | b), 0b11111);
            assert_eq!(m.iter().map(|x| x.count_ones()).sum::<u32>(), 5);
        }
        assert_eq!(partitions_of_mask(0b1010).unwrap().len(), 2);
    }
}
