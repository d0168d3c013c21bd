use serde::{Deserialize, Serialize};

use crate::dataio::dataset::{ClassRole, Dataset, ImageRole, SplitMode};
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// How the base roles are turned into a working split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Labeled images per test class in few-shot mode.
    pub fewshot_k: usize,
    /// Portion of the unlabeled pool visible to the unsupervised objective.
    pub fraction_p: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::TransductiveZeroShot,
            fewshot_k: 3,
            fraction_p: 1.0,
        }
    }
}

impl SplitSpec {
    pub fn new(mode: SplitMode) -> Self {
        SplitSpec {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction_p) {
            return Err(Error::Config(format!(
                "fraction_p must lie in [0, 1], got {}",
                self.fraction_p
            )));
        }
        Ok(())
    }
}

/// Derives working roles from the dataset's base roles.
///
/// * transductive modes fold the base unlabeled-train classes into the
///   labeled set and use the test images as the unlabeled pool;
/// * few-shot moves `fewshot_k` random images of every test class into the
///   labeled set;
/// * `fraction_p < 1` hides a random `1 - p` share of the unlabeled pool.
///
/// Features, labels and attributes are never touched.
pub fn apply_split(ds: &Dataset, spec: &SplitSpec, rng: &Rng) -> Result<Dataset> {
    spec.validate()?;
    let mut roles = ds.base_roles().to_vec();
    let mut class_roles = ds.base_class_roles().to_vec();
    if spec.mode.is_transductive() {
        for r in roles.iter_mut() {
            if *r == ImageRole::UnlabeledTrain {
                *r = ImageRole::LabeledTrain;
            }
        }
        for c in class_roles.iter_mut() {
            if *c == ClassRole::Unlab {
                *c = ClassRole::Train;
            }
        }
    }
    if spec.mode == SplitMode::TransductiveFewShot {
        let mut pick = rng.derive(1);
        for c in (0..ds.n_classes()).filter(|&c| class_roles[c] == ClassRole::Test) {
            let members: Vec<usize> = (0..ds.n_images())
                .filter(|&i| ds.labels()[i] == c && roles[i] == ImageRole::Test)
                .collect();
            if spec.fewshot_k > members.len() {
                return Err(Error::Data(format!(
                    "few-shot k={} exceeds the {} images of test class {c}",
                    spec.fewshot_k,
                    members.len()
                )));
            }
            for j in pick.choose_k(members.len(), spec.fewshot_k) {
                roles[members[j]] = ImageRole::LabeledTrain;
            }
        }
    }

    let pool: Vec<usize> = if spec.mode.is_transductive() {
        (0..ds.n_images())
            .filter(|&i| roles[i] == ImageRole::Test)
            .collect()
    } else {
        (0..ds.n_images())
            .filter(|&i| roles[i] == ImageRole::UnlabeledTrain)
            .collect()
    };
    let mut hidden = vec![false; ds.n_images()];
    if spec.fraction_p < 1.0 {
        let visible = (spec.fraction_p * pool.len() as f64).round() as usize;
        let mut keep = vec![false; pool.len()];
        for j in rng.derive(2).choose_k(pool.len(), visible) {
            keep[j] = true;
        }
        for (j, &i) in pool.iter().enumerate() {
            hidden[i] = !keep[j];
        }
    }
    ds.with_split(roles, class_roles, spec.mode, hidden)
}
