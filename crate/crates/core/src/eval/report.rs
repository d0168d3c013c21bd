use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{apply_split, ClassRole, Dataset, ImageRole, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::metrics::{
    interpolated_pr, mean_average_precision, precision_recall_curve, top1_accuracy,
};
use crate::model::{predict, ModelParams};
use crate::numcore::Rng;
use crate::trainer::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchSpace {
    /// Only the classes that own the evaluated pool.
    TestOnly,
    /// Every class in the dataset.
    AllClasses,
}

impl SearchSpace {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "test" => Some(SearchSpace::TestOnly),
            "all" => Some(SearchSpace::AllClasses),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SearchSpace::TestOnly => "test",
            SearchSpace::AllClasses => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    pub name: Option<String>,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub map: f64,
    pub per_class_ap: Vec<ClassAp>,
    /// 11-point interpolated precision, macro-averaged over query classes.
    pub pr_curve: Vec<(f64, f64)>,
    pub search_space: SearchSpace,
    pub pool: ImageRole,
    pub n_images: usize,
    pub candidates: Vec<usize>,
    pub warnings: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn pr_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for (r, p) in &self.pr_curve {
            writeln!(s, "{r},{p}").unwrap();
        }
        s
    }
}

/// Candidate classes for a pool under a search space.
pub fn candidate_classes(ds: &Dataset, pool: ImageRole, space: SearchSpace) -> Vec<usize> {
    match space {
        SearchSpace::AllClasses => (0..ds.n_classes()).collect(),
        SearchSpace::TestOnly => match pool {
            ImageRole::Test => ds.test_classes(),
            ImageRole::UnlabeledTrain => ds.classes_with(ClassRole::Unlab),
            ImageRole::LabeledTrain => ds.supervised_classes(),
        },
    }
}

/// Scores every image of `pool` against the candidate classes and computes
/// top-1, mAP and the PR curve.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    pool: ImageRole,
    space: SearchSpace,
) -> Result<EvalReport> {
    let images = ds.indices_with(pool);
    if images.is_empty() {
        return Err(Error::Usage(format!(
            "no images with role {}",
            pool.as_str()
        )));
    }
    let candidates = candidate_classes(ds, pool, space);
    let mut local = vec![usize::MAX; ds.n_classes()];
    for (k, &c) in candidates.iter().enumerate() {
        local[c] = k;
    }
    let labels: Vec<usize> = images.iter().map(|&i| local[ds.labels()[i]]).collect();
    if labels.contains(&usize::MAX) {
        return Err(Error::Data(format!(
            "some {} images belong to classes outside the search space",
            pool.as_str()
        )));
    }
    let scores = predict(
        params,
        &ds.visual().select_rows(&images),
        &ds.attributes().select_rows(&candidates),
    )?;
    let top1 = top1_accuracy(&scores, &labels)?;
    let summary = mean_average_precision(&scores, &labels)?;
    let name = |c: usize| ds.names().map(|n| n[c].clone());
    let mut warnings = Vec::new();
    if !summary.skipped.is_empty() {
        let skipped: Vec<usize> = summary.skipped.iter().map(|&k| candidates[k]).collect();
        let msg = format!("classes without relevant images left out of mAP: {skipped:?}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let curves: Vec<Vec<(f64, f64)>> = summary
        .per_class
        .iter()
        .map(|&(k, _)| {
            let rel: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            precision_recall_curve(&scores.column(k), &rel)
        })
        .collect();
    Ok(EvalReport {
        top1,
        map: summary.map,
        per_class_ap: summary
            .per_class
            .iter()
            .map(|&(k, ap)| ClassAp {
                class: candidates[k],
                name: name(candidates[k]),
                ap,
            })
            .collect(),
        pr_curve: interpolated_pr(&curves),
        search_space: space,
        pool,
        n_images: images.len(),
        candidates,
        warnings,
        metadata: BTreeMap::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub top1: f64,
    pub map: f64,
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_fraction_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Retrains once per `p`, with the unlabeled pool thinned to a fraction
/// `p`, and evaluates on the test images.
pub fn fraction_sweep(
    cfg: &TrainConfig,
    ds: &Dataset,
    split: &SplitSpec,
    p_values: &[f64],
) -> Result<Vec<SweepRow>> {
    if !split.mode.is_transductive() {
        return Err(Error::Config(
            "the fraction sweep needs a transductive split".into(),
        ));
    }
    p_values
        .iter()
        .map(|&p| {
            let wrap = |e: Error| match e {
                Error::Training { iter, message } => Error::Training {
                    iter,
                    message: format!("p={p}: {message}"),
                },
                Error::Config(m) => Error::Config(format!("p={p}: {m}")),
                other => other,
            };
            let spec = SplitSpec {
                fraction_p: p,
                ..*split
            };
            let sds = apply_split(ds, &spec, &Rng::new(cfg.seed)).map_err(wrap)?;
            let (params, _) = train(cfg, &sds).map_err(wrap)?;
            let r = evaluate(&params, &sds, ImageRole::Test, SearchSpace::TestOnly)?;
            Ok(SweepRow {
                p,
                top1: r.top1,
                map: r.map,
            })
        })
        .collect()
}
