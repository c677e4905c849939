use std::io::{Read, Write};

use rayon::prelude::*;

use super::LeafAssignments;

/// Fraction of trees in which two rows share a leaf. Dense, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ProximityMatrix {
    pub fn from_dense(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "square matrix");
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn into_dense(self) -> Vec<f64> {
        self.data
    }

    /// Symmetric, unit diagonal, entries in `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        (0..self.n).all(|i| {
            self.get(i, i) == 1.0
                && (0..self.n).all(|j| {
                    let v = self.get(i, j);
                    (0.0..=1.0).contains(&v) && v == self.get(j, i)
                })
        })
    }

    /// Binary form: little-endian `u64` N, then N² little-endian `f32`.
    pub fn write_bin<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.data {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_bin<R: Read>(mut input: R) -> std::io::Result<Self> {
        let mut header = [0u8; 8];
        input.read_exact(&mut header)?;
        let n = u64::from_le_bytes(header) as usize;
        let mut data = Vec::with_capacity(n * n);
        let mut buf = [0u8; 4];
        for _ in 0..n * n {
            input.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        Ok(Self { n, data })
    }
}

/// Co-leaf frequencies. Rows are bucketed by leaf per tree, then each row
/// accumulates its co-leaf counts independently, so the result is exact and
/// independent of the thread count.
pub fn proximity_matrix(assign: &LeafAssignments) -> ProximityMatrix {
    let (n, n_trees) = (assign.n_rows, assign.n_trees);
    // per tree: CSR of rows grouped by leaf
    let buckets: Vec<(Vec<usize>, Vec<u32>)> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let n_leaves = (0..n).map(|i| assign.get(i, t) as usize + 1).max().unwrap_or(0);
            let mut offsets = vec![0usize; n_leaves + 1];
            for i in 0..n {
                offsets[assign.get(i, t) as usize + 1] += 1;
            }
            for l in 0..n_leaves {
                offsets[l + 1] += offsets[l];
            }
            let mut fill = offsets.clone();
            let mut members = vec![0u32; n];
            for i in 0..n {
                let leaf = assign.get(i, t) as usize;
                members[fill[leaf]] = i as u32;
                fill[leaf] += 1;
            }
            (offsets, members)
        })
        .collect();

    let denom = n_trees as f64;
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut counts = vec![0u32; n];
            for (t, (offsets, members)) in buckets.iter().enumerate() {
                let leaf = assign.get(i, t) as usize;
                for &j in &members[offsets[leaf]..offsets[leaf + 1]] {
                    counts[j as usize] += 1;
                }
            }
            counts.into_iter().map(move |c| c as f64 / denom)
        })
        .collect();
    ProximityMatrix { n, data }
}
