use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighbourhood radius (inclusive).
    pub eps: f64,
    /// Neighbours, the point itself included, needed for a core point.
    pub min_pts: usize,
}

impl DbscanParams {
    pub const DEMOGRAPHIC: Self = Self { eps: 0.03, min_pts: 20 };
    pub const ACTIVITY: Self = Self { eps: 0.02, min_pts: 10 };
}

/// Cluster id per point, [`NOISE`] for unclustered points. Ids are dense and
/// numbered by the smallest core index of each cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Vec<i32>,
}

impl ClusterLabels {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// Uniform grid with cells of twice the radius, so any pair within `eps`
/// lies in the same or an adjacent cell.
struct Grid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[[f64; 2]], eps: f64) -> Self {
        let cell = 2.0 * eps;
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: &[f64; 2]) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    fn neighbours(&self, points: &[[f64; 2]], i: usize, eps: f64) -> Vec<usize> {
        let p = points[i];
        let (cx, cy) = Self::key(self.cell, &p);
        let eps2 = eps * eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(cx + dx, cy + dy)) {
                    out.extend(b.iter().copied().filter(|&j| within(p, points[j], eps2)));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[inline]
pub(crate) fn within(a: [f64; 2], b: [f64; 2], eps2: f64) -> bool {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy <= eps2
}

/// DBSCAN on 2-D points with the Euclidean metric.
///
/// Clusters are the eps-connected components of core points, expanded in
/// ascending index order. A border point joins the cluster of its
/// lowest-index core neighbour.
pub fn dbscan(points: &[[f64; 2]], params: &DbscanParams) -> ClusterLabels {
    let n = points.len();
    let grid = Grid::new(points, params.eps);
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| grid.neighbours(points, i, params.eps)).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0;
    let mut queue = Vec::new();
    for seed in 0..n {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = next;
        queue.push(seed);
        while let Some(p) = queue.pop() {
            for &q in &neighbours[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    queue.push(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            if let Some(&c) = neighbours[i].iter().find(|&&j| core[j]) {
                labels[i] = labels[c];
            }
        }
    }
    ClusterLabels { labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_points_are_noise() {
        let pts: Vec<[f64; 2]> = (0..5).map(|i| [i as f64 * 0.3, 0.0]).collect();
        let labels = dbscan(&pts, &DbscanParams::DEMOGRAPHIC);
        assert_eq!(labels.labels, vec![NOISE; 5]);
        assert_eq!(labels.n_clusters(), 0);
    }

    #[test]
    fn two_tight_groups() {
        let mut pts = Vec::new();
        for k in 0..25 {
            let a = k as f64 / 25.0 * std::f64::consts::TAU;
            pts.push([0.005 * a.cos(), 0.005 * a.sin()]);
            pts.push([0.5 + 0.005 * a.cos(), 0.005 * a.sin()]);
        }
        let labels = dbscan(&pts, &DbscanParams::DEMOGRAPHIC);
        assert_eq!(labels.n_clusters(), 2);
        assert_eq!(labels.n_noise(), 0);
        assert_eq!(labels.labels[0], 0);
        assert_eq!(labels.labels[1], 1);
    }

    #[test]
    fn border_joins_lowest_index_core_neighbour() {
        // Two cores clusters on a line with a shared border point in between.
        // min_pts = 3: points 0,1,2 form cluster A around x=0, points 3,4,5 form B around x=1.
        let eps = 0.3;
        let pts = vec![
            [0.0, 0.0],
            [0.1, 0.0],
            [0.2, 0.0],
            [1.0, 0.0],
            [0.9, 0.0],
            [0.8, 0.0],
            [0.5, 0.0],
        ];
        let labels = dbscan(&pts, &DbscanParams { eps, min_pts: 3 }).labels;
        // point 6 is within eps of 2 (cluster 0) and of 5 (cluster 1)
        assert_eq!(labels[6], labels[2]);
    }
}
