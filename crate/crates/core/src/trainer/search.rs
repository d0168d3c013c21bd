use serde::{Deserialize, Serialize};

use crate::dataio::{apply_split, Dataset, ImageRole, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, SearchSpace};
use crate::numcore::Rng;
use crate::par::{map_indexed, Exec};
use crate::trainer::config::TrainConfig;
use crate::trainer::train::train;

/// Held-out share of the supervised classes used for validation.
pub const VALIDATION_SHARE: f64 = 0.2;

/// Builds a class-disjoint validation problem from the supervised classes
/// of a working split: a random 20% of them (at least one) become the
/// held-out classes, the rest stay labeled.
pub fn validation_split(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let sup = ds.supervised_classes();
    if sup.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 supervised classes to hold out validation classes, have {}",
            sup.len()
        )));
    }
    let k = ((VALIDATION_SHARE * sup.len() as f64).round() as usize).clamp(1, sup.len() - 1);
    let mut held = vec![false; ds.n_classes()];
    for j in Rng::new(seed).derive(9).choose_k(sup.len(), k) {
        held[sup[j]] = true;
    }
    let inductive = !ds.mode().is_transductive();
    let mut keep = Vec::new();
    let mut roles = Vec::new();
    for i in 0..ds.n_images() {
        let c = ds.labels()[i];
        match ds.roles()[i] {
            ImageRole::LabeledTrain => {
                keep.push(i);
                roles.push(if held[c] {
                    ImageRole::Test
                } else {
                    ImageRole::LabeledTrain
                });
            }
            ImageRole::UnlabeledTrain if inductive => {
                keep.push(i);
                roles.push(ImageRole::UnlabeledTrain);
            }
            _ => {}
        }
    }
    let mut classes: Vec<usize> = keep.iter().map(|&i| ds.labels()[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut remap = vec![usize::MAX; ds.n_classes()];
    for (k, &c) in classes.iter().enumerate() {
        remap[c] = k;
    }
    let visual = ds.visual().select_rows(&keep);
    let labels = keep.iter().map(|&i| remap[ds.labels()[i]]).collect();
    let attributes = ds.attributes().select_rows(&classes);
    let vds = Dataset::new(visual, labels, attributes, roles)?;
    let mode = if inductive {
        SplitMode::InductiveZeroShot
    } else {
        SplitMode::TransductiveZeroShot
    };
    apply_split(&vds, &SplitSpec::new(mode), &Rng::new(seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta: f64,
    pub lambda: f64,
    pub val_top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub beta: f64,
    pub lambda: f64,
    /// Every evaluated point in evaluation order.
    pub points: Vec<GridPoint>,
}

/// Two-stage selection: `beta` with `lambda = 0`, then `lambda` with the
/// chosen `beta`. Validation top-1 decides; the earlier grid entry wins
/// ties.
pub fn grid_search(ds: &Dataset, base: &TrainConfig) -> Result<GridResult> {
    base.validate()?;
    let vds = validation_split(ds, base.seed)?;
    let mut points = Vec::new();
    let mut score = |beta: f64, lambda: f64| -> Result<f64> {
        let mut cfg = base.clone();
        cfg.weights.beta = beta;
        cfg.weights.lambda = lambda;
        let (params, _) = train(&cfg, &vds)?;
        let val_top1 = evaluate(&params, &vds, ImageRole::Test, SearchSpace::TestOnly)?.top1;
        points.push(GridPoint {
            beta,
            lambda,
            val_top1,
        });
        Ok(val_top1)
    };
    let pick = |grid: &[f64], score: &mut dyn FnMut(f64) -> Result<f64>| -> Result<f64> {
        let mut best = (f64::NEG_INFINITY, grid[0]);
        for &g in grid {
            let s = score(g)?;
            if s > best.0 {
                best = (s, g);
            }
        }
        Ok(best.1)
    };
    let beta = pick(&base.beta_grid, &mut |b| score(b, 0.0))?;
    let lambda = pick(&base.lambda_grid, &mut |l| score(beta, l))?;
    Ok(GridResult {
        beta,
        lambda,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub top1: f64,
    pub map: f64,
    pub final_mmd_dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialsReport {
    pub trials: Vec<TrialResult>,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub map_mean: f64,
    pub map_std: f64,
}

/// Mean and sample standard deviation, summed in the given order.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates trial results by trial index, so the outcome does not depend
/// on the order they were produced in.
pub fn aggregate(mut trials: Vec<TrialResult>) -> TrialsReport {
    trials.sort_by_key(|t| t.trial);
    let top1: Vec<f64> = trials.iter().map(|t| t.top1).collect();
    let map: Vec<f64> = trials.iter().map(|t| t.map).collect();
    let (top1_mean, top1_std) = mean_std(&top1);
    let (map_mean, map_std) = mean_std(&map);
    TrialsReport {
        trials,
        top1_mean,
        top1_std,
        map_mean,
        map_std,
    }
}

/// One split-train-evaluate run with seed `cfg.seed + trial`.
pub fn run_trial(
    cfg: &TrainConfig,
    ds: &Dataset,
    split: &SplitSpec,
    trial: usize,
    space: SearchSpace,
) -> Result<TrialResult> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    let wrap = |e: Error| match e {
        Error::Training { iter, message } => Error::Training {
            iter,
            message: format!("trial {trial}: {message}"),
        },
        Error::Config(m) => Error::Config(format!("trial {trial}: {m}")),
        Error::Data(m) => Error::Data(format!("trial {trial}: {m}")),
        other => other,
    };
    let sds = apply_split(ds, split, &Rng::new(seed)).map_err(wrap)?;
    let (params, trace) = train(&cfg, &sds).map_err(wrap)?;
    let report = evaluate(&params, &sds, ImageRole::Test, space).map_err(wrap)?;
    Ok(TrialResult {
        trial,
        seed,
        top1: report.top1,
        map: report.map,
        final_mmd_dist: trace.last().map_or(0.0, |r| r.mmd_dist),
    })
}

/// Runs `n_trials` independent trials, fanned out per `exec`.
pub fn run_trials(
    cfg: &TrainConfig,
    ds: &Dataset,
    split: &SplitSpec,
    n_trials: usize,
    space: SearchSpace,
    exec: Exec,
) -> Result<TrialsReport> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    let results = map_indexed(n_trials, exec, |k| run_trial(cfg, ds, split, k, space));
    Ok(aggregate(results.into_iter().collect::<Result<Vec<_>>>()?))
}
