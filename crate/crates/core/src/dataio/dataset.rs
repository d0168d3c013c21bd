use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::format::{load_feature_matrix, parse_labels, parse_roles, read_text};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageRole {
    LabeledTrain,
    UnlabeledTrain,
    Test,
}

impl ImageRole {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(ImageRole::LabeledTrain),
            "unlab" => Some(ImageRole::UnlabeledTrain),
            "test" => Some(ImageRole::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImageRole::LabeledTrain => "train",
            ImageRole::UnlabeledTrain => "unlab",
            ImageRole::Test => "test",
        }
    }

    fn class_role(self) -> ClassRole {
        match self {
            ImageRole::LabeledTrain => ClassRole::Train,
            ImageRole::UnlabeledTrain => ClassRole::Unlab,
            ImageRole::Test => ClassRole::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassRole {
    Train,
    Unlab,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitMode {
    InductiveZeroShot,
    TransductiveZeroShot,
    TransductiveFewShot,
}

impl SplitMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inductive-zero-shot" | "inductive" => Some(SplitMode::InductiveZeroShot),
            "transductive-zero-shot" | "transductive" => Some(SplitMode::TransductiveZeroShot),
            "transductive-few-shot" | "few-shot" => Some(SplitMode::TransductiveFewShot),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::InductiveZeroShot => "inductive-zero-shot",
            SplitMode::TransductiveZeroShot => "transductive-zero-shot",
            SplitMode::TransductiveFewShot => "transductive-few-shot",
        }
    }

    pub fn is_transductive(self) -> bool {
        !matches!(self, SplitMode::InductiveZeroShot)
    }
}

/// Visual features, labels, class attributes and the role of every image.
///
/// The roles loaded from disk (or generated) are kept as the base split;
/// [`crate::dataio::apply_split`] derives the working roles from them, so a
/// dataset can be re-split any number of times.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    visual: Matrix,
    labels: Vec<usize>,
    attributes: Matrix,
    roles: Vec<ImageRole>,
    class_roles: Vec<ClassRole>,
    base_roles: Vec<ImageRole>,
    base_class_roles: Vec<ClassRole>,
    names: Option<Vec<String>>,
    mode: SplitMode,
    hidden: Vec<bool>,
}

impl Dataset {
    /// Builds an inductive zero-shot dataset; class roles are inferred from
    /// the image roles and must be unambiguous.
    pub fn new(
        visual: Matrix,
        labels: Vec<usize>,
        attributes: Matrix,
        roles: Vec<ImageRole>,
    ) -> Result<Self> {
        let n = visual.rows();
        if labels.len() != n || roles.len() != n {
            return Err(Error::Data(format!(
                "{n} feature rows but {} labels and {} roles",
                labels.len(),
                roles.len()
            )));
        }
        if !visual.is_finite() || !attributes.is_finite() {
            return Err(Error::Data("features and attributes must be finite".into()));
        }
        let n_classes = attributes.rows();
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Data(format!(
                "image {i} has label {l} but only {n_classes} attribute rows exist"
            )));
        }
        let mut class_roles: Vec<Option<ClassRole>> = vec![None; n_classes];
        for (i, (&l, &r)) in labels.iter().zip(&roles).enumerate() {
            let cr = r.class_role();
            match class_roles[l] {
                None => class_roles[l] = Some(cr),
                Some(prev) if prev != cr => {
                    return Err(Error::Data(format!(
                        "class {l} mixes roles: image {i} is {:?} but earlier images are {prev:?}",
                        r
                    )))
                }
                _ => {}
            }
        }
        let class_roles = class_roles
            .into_iter()
            .enumerate()
            .map(|(c, r)| r.ok_or_else(|| Error::Data(format!("class {c} has no images"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            visual,
            labels,
            attributes,
            base_roles: roles.clone(),
            base_class_roles: class_roles.clone(),
            roles,
            class_roles,
            names: None,
            mode: SplitMode::InductiveZeroShot,
            hidden: vec![false; n],
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes() {
            return Err(Error::Data(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    /// Loads features, attributes, labels and roles from files.
    pub fn load(
        visual: impl AsRef<Path>,
        attributes: impl AsRef<Path>,
        labels: impl AsRef<Path>,
        roles: impl AsRef<Path>,
        opts: Preprocess,
    ) -> Result<Self> {
        let mut v = load_feature_matrix(visual)?;
        let mut t = load_feature_matrix(attributes)?;
        if opts.visual_log1p {
            v = preprocess_visual(&v)?;
        }
        if opts.attribute_l2 {
            t = preprocess_attributes(&t)?;
        }
        let labels = parse_labels(&read_text(labels)?)?;
        let roles = parse_roles(&read_text(roles)?)?;
        Dataset::new(v, labels, t, roles)
    }

    pub fn visual(&self) -> &Matrix {
        &self.visual
    }

    pub fn attributes(&self) -> &Matrix {
        &self.attributes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn roles(&self) -> &[ImageRole] {
        &self.roles
    }

    pub fn class_roles(&self) -> &[ClassRole] {
        &self.class_roles
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn mode(&self) -> SplitMode {
        self.mode
    }

    pub fn n_images(&self) -> usize {
        self.visual.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn d_visual(&self) -> usize {
        self.visual.cols()
    }

    pub fn d_attribute(&self) -> usize {
        self.attributes.cols()
    }

    pub fn is_hidden(&self, image: usize) -> bool {
        self.hidden[image]
    }

    pub fn indices_with(&self, role: ImageRole) -> Vec<usize> {
        (0..self.n_images())
            .filter(|&i| self.roles[i] == role)
            .collect()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.indices_with(ImageRole::LabeledTrain)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_with(ImageRole::Test)
    }

    /// Every image of the unlabeled pool, visible or not. In transductive
    /// modes the pool is the test set.
    pub fn unlabeled_pool_all(&self) -> Vec<usize> {
        if self.mode.is_transductive() {
            self.test_indices()
        } else {
            self.indices_with(ImageRole::UnlabeledTrain)
        }
    }

    /// The part of the unlabeled pool the unsupervised objective may see.
    pub fn unlabeled_pool(&self) -> Vec<usize> {
        self.unlabeled_pool_all()
            .into_iter()
            .filter(|&i| !self.hidden[i])
            .collect()
    }

    pub fn classes_with(&self, role: ClassRole) -> Vec<usize> {
        (0..self.n_classes())
            .filter(|&c| self.class_roles[c] == role)
            .collect()
    }

    /// Classes that own at least one labeled image, ascending.
    pub fn supervised_classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .labeled_indices()
            .iter()
            .map(|&i| self.labels[i])
            .collect();
        set.into_iter().collect()
    }

    /// Candidate classes for the unlabeled pool.
    pub fn unlabeled_classes(&self) -> Vec<usize> {
        if self.mode.is_transductive() {
            self.classes_with(ClassRole::Test)
        } else {
            self.classes_with(ClassRole::Unlab)
        }
    }

    pub fn test_classes(&self) -> Vec<usize> {
        self.classes_with(ClassRole::Test)
    }

    pub(crate) fn base_roles(&self) -> &[ImageRole] {
        &self.base_roles
    }

    pub(crate) fn base_class_roles(&self) -> &[ClassRole] {
        &self.base_class_roles
    }

    pub(crate) fn with_split(
        &self,
        roles: Vec<ImageRole>,
        class_roles: Vec<ClassRole>,
        mode: SplitMode,
        hidden: Vec<bool>,
    ) -> Result<Self> {
        let ds = Dataset {
            roles,
            class_roles,
            mode,
            hidden,
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks that image roles agree with class roles under the current mode.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_images();
        if self.roles.len() != n || self.hidden.len() != n {
            return Err(Error::Data("role bookkeeping length mismatch".into()));
        }
        for (i, (&r, &l)) in self.roles.iter().zip(&self.labels).enumerate() {
            let cr = self.class_roles[l];
            let ok = match r {
                ImageRole::LabeledTrain => {
                    cr == ClassRole::Train
                        || (self.mode == SplitMode::TransductiveFewShot && cr == ClassRole::Test)
                }
                ImageRole::UnlabeledTrain => cr == ClassRole::Unlab,
                ImageRole::Test => cr == ClassRole::Test,
            };
            if !ok {
                return Err(Error::Data(format!(
                    "image {i} ({r:?}) belongs to class {l} whose role is {cr:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Ingestion-time preprocessing switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preprocess {
    pub visual_log1p: bool,
    pub attribute_l2: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            visual_log1p: true,
            attribute_l2: true,
        }
    }
}

/// Entrywise `log(1 + v)` for non-negative activations.
pub fn preprocess_visual(v: &Matrix) -> Result<Matrix> {
    for r in 0..v.rows() {
        if let Some(c) = v.row(r).iter().position(|&x| x < 0.0) {
            return Err(Error::Data(format!(
                "negative visual feature {} at row {r}, col {c}; disable log preprocessing for such inputs",
                v.get(r, c)
            )));
        }
    }
    Ok(v.map(f64::ln_1p))
}

/// Scales every attribute row to unit ℓ2 norm.
pub fn preprocess_attributes(t: &Matrix) -> Result<Matrix> {
    let norms = t.row_norms();
    if let Some(c) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Data(format!(
            "attribute row of class {c} is all zeros"
        )));
    }
    Ok(Matrix::from_fn(t.rows(), t.cols(), |r, c| {
        t.get(r, c) / norms[r]
    }))
}
