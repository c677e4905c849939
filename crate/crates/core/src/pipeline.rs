//! End-to-end classification: embedding forest, proximity, t-SNE, DBSCAN,
//! label propagation to noise points and the small-class merge.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diary::{DiaryCorpus, DEMOGRAPHIC_VARIABLES};
use crate::embed::{
    dbscan, normalize_coords, proximity_to_distance, tsne_embed, DbscanParams, EmbedError, EmbeddingCoords,
    TsneParams, NOISE,
};
use crate::ensemble::{
    fit_extra_trees, fit_random_trees_embedding, leaf_assignments, proximity_matrix, EmbeddingParams,
    EnsembleError, ExtraTreesParams, Forest,
};
use crate::featurize::{assemble_features_with, build_code_dictionary, CodeDictionary, FeatureError, FeatureMatrix, FeatureSet};
use crate::rng::{derive_seed, Domain};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("featurize: {0}")]
    Feature(#[from] FeatureError),
    #[error("ensemble: {0}")]
    Ensemble(#[from] EnsembleError),
    #[error("embed: {0}")]
    Embed(#[from] EmbedError),
    #[error("propagate: need at least 2 labeled classes, found {found}")]
    TooFewClasses { found: usize },
    #[error("merge: no class reaches the cutoff of {cutoff} (largest has {largest})")]
    NoLargeClass { cutoff: usize, largest: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub feature_set: FeatureSet,
    pub n_trees: usize,
    pub embed_depth: usize,
    /// `None` picks the default for the feature set.
    pub dbscan: Option<DbscanParams>,
    /// Corpus size at which `dbscan.eps` applies as given. For other sizes
    /// eps is scaled by `sqrt(reference / n)`, which keeps the expected
    /// neighbour count of the unit-box embedding constant. `None` disables
    /// the scaling.
    pub dbscan_reference_n: Option<usize>,
    pub propagate_depth: usize,
    /// Trees in the propagation and merge classifiers.
    pub classifier_trees: usize,
    pub merge_cutoff: usize,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    /// Demographic variables to use; `None` means all sixteen.
    pub demographic_variables: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            feature_set: FeatureSet::DemographicPlusActivity,
            n_trees: 2000,
            embed_depth: 5,
            dbscan: None,
            dbscan_reference_n: Some(10_000),
            propagate_depth: 8,
            classifier_trees: 2000,
            merge_cutoff: 25,
            perplexity: 30.0,
            tsne_iterations: 1000,
            demographic_variables: None,
            seed: 0,
        }
    }
}

impl PipelineParams {
    pub fn dbscan_params(&self) -> DbscanParams {
        self.dbscan.unwrap_or(match self.feature_set {
            FeatureSet::DemographicOnly => DbscanParams::DEMOGRAPHIC,
            FeatureSet::DemographicPlusActivity => DbscanParams::ACTIVITY,
        })
    }

    /// DBSCAN parameters for an embedding of `n` points.
    pub fn effective_dbscan(&self, n: usize) -> DbscanParams {
        let base = self.dbscan_params();
        match self.dbscan_reference_n {
            Some(reference) if n > 0 && reference > 0 => DbscanParams {
                eps: base.eps * (reference as f64 / n as f64).sqrt(),
                ..base
            },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidParams(m.to_owned()));
        if self.merge_cutoff < 1 {
            return bad("merge_cutoff must be at least 1");
        }
        if self.n_trees == 0 || self.classifier_trees == 0 {
            return bad("tree counts must be positive");
        }
        if self.perplexity.is_nan() || self.perplexity <= 0.0 {
            return bad("perplexity must be positive");
        }
        Ok(())
    }

    /// Perplexity actually used for `n` rows: at most `(n - 1) / 3`.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        let cap = ((n as f64 - 1.0) / 3.0).max(1.0).min(n as f64 - 1.0);
        if self.perplexity > cap {
            log::warn!("perplexity {} lowered to {cap} for {n} rows", self.perplexity);
            cap
        } else {
            self.perplexity
        }
    }
}

/// Labels after each stage, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub dbscan: Vec<i32>,
    pub propagated: Vec<u32>,
    pub merged: Vec<u32>,
}

impl StageTrace {
    pub fn unlabeled_after_dbscan(&self) -> usize {
        self.dbscan.iter().filter(|&&l| l == NOISE).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAssignment {
    pub feature_set: FeatureSet,
    pub case_ids: Vec<String>,
    /// Final class per diary, corpus order.
    pub labels: Vec<u32>,
    pub stage_trace: StageTrace,
    pub dictionary: CodeDictionary,
    pub embedding_forest: Forest,
    /// Merge-stage classifier; predicts final classes for new feature rows.
    pub final_classifier: Forest,
    /// Normalized embedding with the raw KL trace.
    pub embedding: EmbeddingCoords,
}

impl ClassAssignment {
    pub fn label_map(&self) -> BTreeMap<&str, u32> {
        self.case_ids.iter().map(String::as_str).zip(self.labels.iter().copied()).collect()
    }

    /// Corpus row indices per final class.
    pub fn members(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }
}

/// Features for the configured feature set and demographic subset.
pub fn build_features(corpus: &DiaryCorpus, params: &PipelineParams) -> Result<(CodeDictionary, FeatureMatrix), PipelineError> {
    let dict = build_code_dictionary(corpus)?;
    let names: Vec<&str> = match &params.demographic_variables {
        Some(v) => v.iter().map(String::as_str).collect(),
        None => DEMOGRAPHIC_VARIABLES.to_vec(),
    };
    let x = assemble_features_with(corpus, &dict, params.feature_set, &names)?;
    Ok((dict, x))
}

/// Replaces every noise label with the prediction of a depth-limited
/// extremely randomized forest trained on the labeled rows.
pub fn propagate_labels(
    x: &FeatureMatrix,
    partial: &[i32],
    params: &ExtraTreesParams,
) -> Result<Vec<u32>, PipelineError> {
    let labeled: Vec<usize> = (0..partial.len()).filter(|&i| partial[i] != NOISE).collect();
    let classes: BTreeSet<i32> = labeled.iter().map(|&i| partial[i]).collect();
    if classes.len() < 2 {
        return Err(PipelineError::TooFewClasses { found: classes.len() });
    }
    let mut out: Vec<u32> = partial.iter().map(|&l| l.max(0) as u32).collect();
    let noise: Vec<usize> = (0..partial.len()).filter(|&i| partial[i] == NOISE).collect();
    if noise.is_empty() {
        return Ok(out);
    }
    let y: Vec<u32> = labeled.iter().map(|&i| partial[i] as u32).collect();
    let forest = fit_extra_trees(&x.select_rows(&labeled), &y, params)?;
    let predicted = forest.predict(&x.select_rows(&noise))?;
    for (i, l) in noise.into_iter().zip(predicted) {
        out[i] = l;
    }
    Ok(out)
}

/// Reassigns rows of classes smaller than `cutoff` with a forest trained on
/// the remaining classes, then renumbers surviving classes densely in order
/// of their old ids. Returns the labels and the trained forest.
pub fn merge_small_classes(
    x: &FeatureMatrix,
    labels: &[u32],
    cutoff: usize,
    params: &ExtraTreesParams,
) -> Result<(Vec<u32>, Forest), PipelineError> {
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    let large: BTreeSet<u32> = sizes.iter().filter(|(_, &n)| n >= cutoff).map(|(&l, _)| l).collect();
    if large.is_empty() {
        return Err(PipelineError::NoLargeClass { cutoff, largest: sizes.values().copied().max().unwrap_or(0) });
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| large.contains(&labels[i])).collect();
    let small: Vec<usize> = (0..labels.len()).filter(|&i| !large.contains(&labels[i])).collect();
    let y: Vec<u32> = keep.iter().map(|&i| labels[i]).collect();
    let forest = fit_extra_trees(&x.select_rows(&keep), &y, params)?;

    let mut merged = labels.to_vec();
    if !small.is_empty() {
        for (i, l) in small.iter().zip(forest.predict(&x.select_rows(&small))?) {
            merged[*i] = l;
        }
    }
    let dense: BTreeMap<u32, u32> = large.iter().enumerate().map(|(k, &l)| (l, k as u32)).collect();
    let mut forest = forest;
    forest.class_labels = forest.class_labels.iter().map(|l| dense[l]).collect();
    Ok((merged.iter().map(|l| dense[l]).collect(), forest))
}

/// Runs every stage; the result depends only on the corpus and `params`.
pub fn classify_corpus(corpus: &DiaryCorpus, params: &PipelineParams) -> Result<ClassAssignment, PipelineError> {
    params.validate()?;
    let (dictionary, x) = build_features(corpus, params)?;
    let n = x.n_rows();
    let seed = |k: u64| derive_seed(params.seed, Domain::Pipeline, k);

    let embedding_forest = fit_random_trees_embedding(
        &x,
        &EmbeddingParams { n_trees: params.n_trees, max_depth: params.embed_depth, seed: seed(1) },
    )?;
    let proximity = proximity_matrix(&leaf_assignments(&embedding_forest, &x)?);
    let distance = proximity_to_distance(proximity);
    let tsne = TsneParams {
        perplexity: params.effective_perplexity(n),
        iterations: params.tsne_iterations,
        seed: seed(2),
        ..TsneParams::default()
    };
    let raw = tsne_embed(&distance, &tsne)?;
    drop(distance);
    let embedding = normalize_coords(&raw);
    let db = params.effective_dbscan(n);
    let clusters = dbscan(&embedding.points, &db);
    let n_clusters = clusters.n_clusters();
    log::info!(
        "{}: dbscan (eps {:.4}, min_pts {}) found {n_clusters} clusters, {} of {n} rows unlabeled",
        params.feature_set.short_name(),
        db.eps,
        db.min_pts,
        clusters.n_noise()
    );

    let propagated = match n_clusters {
        0 => return Err(PipelineError::TooFewClasses { found: 0 }),
        1 => vec![0; n],
        _ => propagate_labels(
            &x,
            &clusters.labels,
            &ExtraTreesParams { n_trees: params.classifier_trees, max_depth: Some(params.propagate_depth), seed: seed(3) },
        )?,
    };
    let (merged, final_classifier) = merge_small_classes(
        &x,
        &propagated,
        params.merge_cutoff,
        &ExtraTreesParams { n_trees: params.classifier_trees, max_depth: None, seed: seed(4) },
    )?;

    Ok(ClassAssignment {
        feature_set: params.feature_set,
        case_ids: x.case_ids.clone(),
        labels: merged.clone(),
        stage_trace: StageTrace { dbscan: clusters.labels, propagated, merged },
        dictionary,
        embedding_forest,
        final_classifier,
        embedding,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: u32,
    pub size: usize,
    /// Major category with the most minutes, sleep excluded.
    pub dominant_category: Option<u8>,
    pub dominant_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub feature_set: FeatureSet,
    pub n_classes: usize,
    pub median_size: f64,
    pub max_size: usize,
    pub unlabeled_after_dbscan: usize,
    pub classes: Vec<ClassStats>,
}

pub fn class_summary(assignment: &ClassAssignment, corpus: &DiaryCorpus) -> ClassSummary {
    let lex = &corpus.lexicons;
    let by_id: BTreeMap<&str, usize> = corpus.diaries.iter().enumerate().map(|(i, d)| (d.case_id(), i)).collect();
    let classes: Vec<ClassStats> = assignment
        .members()
        .into_iter()
        .map(|(class_id, rows)| {
            let mut minutes: BTreeMap<u8, u64> = BTreeMap::new();
            for &r in &rows {
                let diary = &corpus.diaries[by_id[assignment.case_ids[r].as_str()]];
                for rec in diary.records().iter().filter(|rec| !lex.is_sleep(rec.code)) {
                    *minutes.entry(rec.code.major_category()).or_default() += rec.duration_min as u64;
                }
            }
            let dominant = minutes
                .iter()
                .fold(None, |best: Option<(u8, u64)>, (&c, &m)| match best {
                    Some((_, bm)) if bm >= m => best,
                    _ => Some((c, m)),
                })
                .map(|(c, _)| c);
            ClassStats {
                class_id,
                size: rows.len(),
                dominant_category: dominant,
                dominant_label: dominant.map(|c| lex.category_label(c)),
            }
        })
        .collect();
    let mut sizes: Vec<usize> = classes.iter().map(|c| c.size).collect();
    sizes.sort_unstable();
    let median_size = match sizes.len() {
        0 => 0.0,
        k if k % 2 == 1 => sizes[k / 2] as f64,
        k => (sizes[k / 2 - 1] + sizes[k / 2]) as f64 / 2.0,
    };
    ClassSummary {
        feature_set: assignment.feature_set,
        n_classes: classes.len(),
        median_size,
        max_size: sizes.last().copied().unwrap_or(0),
        unlabeled_after_dbscan: assignment.stage_trace.unlabeled_after_dbscan(),
        classes,
    }
}

fn choose2(k: u64) -> f64 {
    (k as f64) * (k as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Two
/// single-cluster labelings score 1.
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings of the same items");
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

pub fn write_classes_csv<W: Write>(assignment: &ClassAssignment, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "label", "stage"])?;
    let t = &assignment.stage_trace;
    for (stage, labels) in [
        ("dbscan", t.dbscan.iter().map(|&l| l as i64).collect::<Vec<_>>()),
        ("propagate", t.propagated.iter().map(|&l| l as i64).collect()),
        ("final", t.merged.iter().map(|&l| l as i64).collect()),
    ] {
        for (id, l) in assignment.case_ids.iter().zip(labels) {
            w.write_record([id.as_str(), &l.to_string(), stage])?;
        }
    }
    w.flush()
}

/// Reads the `final` rows of a classes.csv into case id → class.
pub fn read_final_classes(path: &Path) -> Result<BTreeMap<String, u32>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| std::io::Error::other(e.to_string()))?;
        if rec.get(2) == Some("final") {
            let label = rec[1]
                .parse()
                .map_err(|_| std::io::Error::other(format!("bad label {:?} in {}", &rec[1], path.display())))?;
            out.insert(rec[0].to_owned(), label);
        }
    }
    Ok(out)
}

/// Writes the model bundle: both forests, the code dictionary, the
/// embedding and its KL trace, the parameters and the summary.
pub fn write_bundle(
    dir: &Path,
    assignment: &ClassAssignment,
    params: &PipelineParams,
    summary: &ClassSummary,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    assignment.embedding_forest.save(&dir.join("embedding_forest.json"))?;
    assignment.final_classifier.save(&dir.join("final_forest.json"))?;
    std::fs::write(dir.join("dictionary.json"), serde_json::to_string(&assignment.dictionary)?)?;
    assignment
        .embedding
        .write_csv(&assignment.case_ids, std::fs::File::create(dir.join("embedding.csv"))?)?;
    assignment.embedding.write_kl_csv(std::fs::File::create(dir.join("kl_trace.csv"))?)?;
    std::fs::write(dir.join("params.json"), serde_json::to_string_pretty(params)?)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    Ok(())
}
