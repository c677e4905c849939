//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use cohort_synth::diary::{generate_planted_corpus, DiaryCorpus, PlantedSpec};
use cohort_synth::embed::NOISE;

pub fn planted_spec_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/planted_spec.json")
}

pub fn planted(seed: u64) -> (DiaryCorpus, BTreeMap<String, String>) {
    let path = planted_spec_path();
    let mut spec = PlantedSpec::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    spec.seed = seed;
    generate_planted_corpus(&spec).unwrap()
}

/// Textbook formulation: core graph components by union-find, numbered by
/// their smallest core index; borders take their lowest-index core neighbour.
pub fn reference_dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let (dx, dy) = (points[i][0] - points[j][0], points[i][1] - points[j][1]);
        dx * dx + dy * dy <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut ids: BTreeMap<usize, i32> = BTreeMap::new();
    let mut labels = vec![NOISE; n];
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            let next = ids.len() as i32;
            labels[i] = *ids.entry(root).or_insert(next);
        }
    }
    for i in 0..n {
        if !core[i] {
            if let Some(c) = (0..n).find(|&j| core[j] && near(i, j)) {
                labels[i] = labels[c];
            }
        }
    }
    labels
}

