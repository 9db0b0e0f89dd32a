//! Contrastive counterfactual augmentation of a factual dataset.
//!
//! 1. Train the similarity classifier on same-treatment outcome pairs.
//! 2. For every individual `i`, collect the opposite-treatment individuals
//!    the classifier accepts. If there are at least `K` of them, impute the
//!    counterfactual outcome with the local regressor and append
//!    `(xᵢ, 1 − tᵢ, ŷᵢ)`.
//!
//! The original records are never altered; in the worst case nothing is
//! appended.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{self, ContrastiveSpec, NeighborIndex, SiameseClassifier};
use crate::data::{write_csv, Dataset, FactualSample};
use crate::error::{Error, Result};
use crate::imputers::{self, ImputerKind, KernelSpec, NeighborSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub contrastive: ContrastiveSpec,
    /// Minimum neighbor count `K` required to impute.
    pub min_neighbors: usize,
    /// At most this many nearest neighbors are passed to the regressor.
    pub max_neighbors: usize,
    pub imputer: ImputerKind,
    pub kernel: KernelSpec,
    /// Decision radius used for neighbor selection. `None` uses the
    /// classifier's training radius. May be 0 or infinite.
    pub query_radius: Option<f64>,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            contrastive: ContrastiveSpec::default(),
            min_neighbors: 5,
            max_neighbors: 50,
            imputer: ImputerKind::Gp,
            kernel: KernelSpec::default(),
            query_radius: None,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_neighbors == 0 {
            return Err(Error::spec("K (min_neighbors) must be at least 1"));
        }
        if self.max_neighbors == 0 {
            return Err(Error::spec("max_neighbors must be at least 1"));
        }
        if let Some(r) = self.query_radius {
            if !(r >= 0.0) {
                return Err(Error::spec("radius must be non-negative"));
            }
        }
        self.kernel.validate()?;
        self.contrastive.validate()
    }

    /// The classifier spec with the augmentation seed folded in.
    pub fn effective_contrastive(&self) -> ContrastiveSpec {
        let mut c = self.contrastive.clone();
        c.seed ^= self.seed;
        c.train.seed ^= self.seed;
        c.embedding.init_seed ^= self.seed;
        c
    }
}

/// One appended counterfactual record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddedRecord {
    pub source_index: usize,
    pub imputed_t: u8,
    pub imputed_y: f64,
    pub neighbor_count: usize,
}

#[derive(Debug, Clone)]
pub struct AugmentationReport {
    /// Original records in order, followed by the added ones.
    pub augmented: Dataset,
    pub added: Vec<AddedRecord>,
    /// `|added| / |augmented|`, within `[0, 1/2]`.
    pub alpha: f64,
    pub classifier: SiameseClassifier,
    /// Neighbor count of every original individual.
    pub neighbor_counts: Vec<usize>,
}

impl AugmentationReport {
    pub fn n_original(&self) -> usize {
        self.augmented.len() - self.added.len()
    }
}

/// Trains the classifier on `ds` and augments it.
pub fn augment(ds: &Dataset, spec: &AugmentSpec) -> Result<AugmentationReport> {
    spec.validate()?;
    ds.require_both_groups()?;
    let clf = contrastive::fit(ds, &spec.effective_contrastive())?;
    augment_with_classifier(ds, clf, spec)
}

/// Augmentation step with an already-trained classifier.
pub fn augment_with_classifier(ds: &Dataset, clf: SiameseClassifier, spec: &AugmentSpec) -> Result<AugmentationReport> {
    let kernel = spec.kernel;
    let kind = spec.imputer;
    augment_with_imputer(ds, clf, spec, |_, set| imputers::impute(kind, set, Some(&kernel)))
}

/// Augmentation step with a caller-supplied local regressor, called with the
/// source index and its (capped) neighbor set.
pub fn augment_with_imputer<F>(ds: &Dataset, clf: SiameseClassifier, spec: &AugmentSpec, psi: F) -> Result<AugmentationReport>
where
    F: Fn(usize, &NeighborSet) -> Result<f64> + Sync,
{
    spec.validate()?;
    ds.require_both_groups()?;
    let radius = spec.query_radius.unwrap_or(clf.radius);
    let index = NeighborIndex::new(&clf, ds)?;
    let results: Vec<(usize, Option<f64>)> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let found = index.neighbors(i, radius);
            if found.len() < spec.min_neighbors {
                return Ok((found.len(), None));
            }
            let points = found
                .iter()
                .take(spec.max_neighbors)
                .map(|&(j, _)| (ds.get(j).x.clone(), ds.get(j).y))
                .collect();
            let set = NeighborSet::new(ds.get(i).x.clone(), points);
            Ok((found.len(), Some(psi(i, &set)?)))
        })
        .collect::<Result<_>>()?;

    let mut samples = ds.samples().to_vec();
    let mut added = Vec::new();
    let mut neighbor_counts = Vec::with_capacity(ds.len());
    for (i, (count, imputed)) in results.into_iter().enumerate() {
        neighbor_counts.push(count);
        if let Some(y) = imputed {
            let src = ds.get(i);
            let t = src.t.flip();
            samples.push(FactualSample {
                x: src.x.clone(),
                t,
                y,
                truth: src.truth,
            });
            added.push(AddedRecord {
                source_index: i,
                imputed_t: t.as_u8(),
                imputed_y: y,
                neighbor_count: count,
            });
        }
    }
    let augmented = Dataset::new(format!("{}_aug", ds.name()), ds.d(), samples)?;
    let alpha = added.len() as f64 / augmented.len() as f64;
    Ok(AugmentationReport {
        augmented,
        added,
        alpha,
        classifier: clf,
        neighbor_counts,
    })
}

/// Augmented dataset plus a per-row `augmented ∈ {0, 1}` flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceDataset {
    pub dataset: Dataset,
    pub augmented: Vec<bool>,
}

impl ProvenanceDataset {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(&self.dataset, Some(&self.augmented), path.as_ref())
    }

    pub fn load_csv(path: impl AsRef<Path>, has_ground_truth: bool) -> Result<Self> {
        let (dataset, flags) = crate::data::load_csv_with_provenance(path, has_ground_truth)?;
        let augmented = flags.unwrap_or_else(|| vec![false; dataset.len()]);
        Ok(ProvenanceDataset { dataset, augmented })
    }
}

pub fn mark_provenance(report: &AugmentationReport) -> ProvenanceDataset {
    let n = report.n_original();
    let augmented = (0..report.augmented.len()).map(|k| k >= n).collect();
    ProvenanceDataset {
        dataset: report.augmented.clone(),
        augmented,
    }
}
