use std::fmt::Write as _;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    encode_textual, encode_visual, head_outputs, loss_mmd, objective, update_pseudo_labels, Arch,
    Batch, Branch, LossTerms, ModelParams, Objective, PseudoLabels, Settings,
};
use crate::numcore::{Matrix, NodeId, Rng, Tape, NORM_EPS};
use crate::trainer::adam::{adam_step, AdamHyper, AdamState};
use crate::trainer::config::{variant_weights, TrainConfig};

/// Test images used for the held-out MMD reading.
const PROBE_CAP: usize = 128;

pub const TRACE_HEADER: &str = "iter,L_total,L_sup,L_recon,L_mmd,L_unlab,mmd_dist,pl_changes";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub l_total: f64,
    pub l_sup: f64,
    pub l_recon: f64,
    pub l_mmd: f64,
    pub l_unlab: f64,
    /// Weight the pseudo-label term carried into `l_total`.
    pub lambda_eff: f64,
    /// `alpha · lambda_eff · l_unlab`.
    pub unlab_contribution: f64,
    pub mmd_dist: f64,
    pub pl_changes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    /// Iteration at which the convergence test fired, if it did.
    pub converged_at: Option<usize>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.iter, r.l_total, r.l_sup, r.l_recon, r.l_mmd, r.l_unlab, r.mmd_dist, r.pl_changes
            )
            .unwrap();
        }
        s
    }
}

/// Weight of the pseudo-label term at 1-based iteration `iter`.
pub fn effective_lambda(iter: usize, cfg: &TrainConfig) -> f64 {
    if iter <= cfg.warmup_iters {
        0.0
    } else {
        cfg.weights.lambda
    }
}

/// Epoch-wise shuffled batches without replacement; the tail of an epoch
/// that cannot fill a batch is skipped.
struct Sampler {
    items: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: Rng,
}

impl Sampler {
    fn new(items: Vec<usize>, batch: usize, rng: Rng) -> Self {
        let batch = batch.min(items.len());
        Sampler {
            order: Vec::new(),
            pos: 0,
            items,
            batch,
            rng,
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.batch == 0 {
            return Vec::new();
        }
        if self.order.is_empty() || self.pos + self.batch > self.order.len() {
            self.order = self.items.clone();
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for (r, n) in m.row_norms().into_iter().enumerate() {
        let d = n.max(NORM_EPS);
        out.row_mut(r).iter_mut().for_each(|v| *v /= d);
    }
    out
}

/// Evaluation-mode pseudo-labels for `images` against `classes`.
fn refresh_pseudo_labels(
    params: &ModelParams,
    ds: &Dataset,
    images: &[usize],
    classes: &[usize],
) -> Result<PseudoLabels> {
    if images.is_empty() || classes.is_empty() {
        return Ok(PseudoLabels::default());
    }
    let (hv, ht) = head_outputs(
        params,
        &ds.visual().select_rows(images),
        &ds.attributes().select_rows(classes),
    )?;
    update_pseudo_labels(&unit_rows(&hv), &unit_rows(&ht))
}

/// MMD between the codes of a fixed probe set of test images and the codes
/// of the test classes, computed outside any training graph.
fn probe_mmd(params: &ModelParams, probe: &Matrix, classes: &Matrix, kappa: f64) -> Result<f64> {
    if probe.rows() == 0 || classes.rows() == 0 || params.arch().branch != Branch::Dual {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let b = params.bind_const(&mut tape);
    let x = tape.constant(probe.clone());
    let t = tape.constant(classes.clone());
    let vc = encode_visual(&mut tape, &b, x)?.code;
    let tc = encode_textual(&mut tape, &b, t)?;
    let m = loss_mmd(&mut tape, vc, tc, kappa)?;
    Ok(tape.scalar(m))
}

/// Trains with `cfg` on the working split of `ds`.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<(ModelParams, TrainTrace)> {
    let mut trace = TrainTrace::default();
    let params = train_into(cfg, ds, &mut trace)?;
    Ok((params, trace))
}

/// Like [`train`], but records into a caller-owned trace so the prefix
/// survives a divergence error.
pub fn train_into(cfg: &TrainConfig, ds: &Dataset, trace: &mut TrainTrace) -> Result<ModelParams> {
    cfg.validate()?;
    trace.records.clear();
    trace.converged_at = None;
    let (w, active) = variant_weights(cfg.variant, cfg.weights);

    let labeled = ds.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::Config("the labeled pool is empty".into()));
    }
    let sup_classes = ds.supervised_classes();
    let mut local = vec![usize::MAX; ds.n_classes()];
    for (k, &c) in sup_classes.iter().enumerate() {
        local[c] = k;
    }

    let pool = if active.unlabeled_data {
        ds.unlabeled_pool()
    } else {
        Vec::new()
    };
    let pool_classes = if pool.is_empty() {
        Vec::new()
    } else {
        ds.unlabeled_classes()
    };
    let mut text_classes = sup_classes.clone();
    for &c in &pool_classes {
        if !text_classes.contains(&c) {
            text_classes.push(c);
        }
    }
    let text_pos = |cs: &[usize]| -> Vec<usize> {
        cs.iter()
            .map(|c| text_classes.iter().position(|t| t == c).unwrap())
            .collect()
    };
    let sup_rows = text_pos(&sup_classes);
    let pool_rows = text_pos(&pool_classes);
    let t_all = ds.attributes().select_rows(&text_classes);
    // pool image -> index in the pool
    let mut pool_slot = vec![usize::MAX; ds.n_images()];
    for (k, &i) in pool.iter().enumerate() {
        pool_slot[i] = k;
    }

    let root = Rng::new(cfg.seed);
    let arch = Arch {
        branch: active.branch,
        ..Arch::new(ds.d_visual(), cfg.d_hidden, ds.d_attribute())
    };
    let mut params = ModelParams::init(arch, &mut root.derive(1))?;
    let mut lab_sampler = Sampler::new(labeled, cfg.batch_size, root.derive(2));
    let mut pool_sampler = Sampler::new(pool.clone(), cfg.batch_size, root.derive(3));
    let mut drop_rng = root.derive(4);
    let probe_rows = {
        let test = ds.test_indices();
        let mut pick = root.derive(5).choose_k(test.len(), PROBE_CAP);
        pick.sort_unstable();
        ds.visual()
            .select_rows(&pick.iter().map(|&k| test[k]).collect::<Vec<_>>())
    };
    let probe_classes = ds.attributes().select_rows(&ds.test_classes());

    let mut adam = AdamState::new(params.mats());
    let hyper = AdamHyper {
        lr: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    let mut pseudo = PseudoLabels::default();

    for iter in 1..=cfg.max_iters {
        let lambda_eff = if w.lambda == 0.0 {
            0.0
        } else {
            effective_lambda(iter, cfg)
        };
        let fresh = refresh_pseudo_labels(&params, ds, &pool, &pool_classes)?;
        let pl_changes = fresh.changes_from(&pseudo);
        pseudo = fresh;

        let lab_batch = lab_sampler.next();
        let pool_batch = pool_sampler.next();
        let (nl, nu) = (lab_batch.len(), pool_batch.len());
        let x_val = if nu > 0 {
            Matrix::vstack(&[
                &ds.visual().select_rows(&lab_batch),
                &ds.visual().select_rows(&pool_batch),
            ])?
        } else {
            ds.visual().select_rows(&lab_batch)
        };

        let lab_local: Vec<usize> = lab_batch.iter().map(|&i| local[ds.labels()[i]]).collect();
        let batch_pl = PseudoLabels {
            labels: pool_batch
                .iter()
                .map(|&i| pseudo.labels[pool_slot[i]])
                .collect(),
            n_classes: pseudo.n_classes,
        };
        let batch = Batch {
            images: &x_val,
            n_labeled: nl,
            labels: &lab_local,
            texts: &t_all,
            labeled_classes: &sup_rows,
            pool_classes: &pool_rows,
            pseudo_labels: active.pseudo_labels.then_some(&batch_pl),
        };
        let settings = Settings {
            weights: w,
            lambda: lambda_eff,
            contractive: cfg.contractive,
            indicator: cfg.indicator,
            dropout_keep: cfg.dropout_keep,
        };
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let Objective { total, terms } =
            objective(&mut tape, &b, &batch, &settings, Some(&mut drop_rng))?;
        let LossTerms {
            supervised: sup,
            reconstruct: recon,
            unlab,
            mmd,
        } = terms;
        let val = |n: Option<NodeId>| n.map_or(0.0, |n| tape.scalar(n));
        let l_unlab = val(unlab);
        let record = TraceRecord {
            iter,
            l_total: tape.scalar(total),
            l_sup: tape.scalar(sup),
            l_recon: val(recon),
            l_mmd: val(mmd),
            l_unlab,
            lambda_eff,
            unlab_contribution: if unlab.is_some() {
                w.alpha * lambda_eff * l_unlab
            } else {
                0.0
            },
            mmd_dist: 0.0,
            pl_changes,
        };
        if !record.l_total.is_finite() {
            return Err(Error::Training {
                iter,
                message: format!(
                    "L_total={} (L_sup={}, L_recon={}, L_mmd={}, L_unlab={}); {} records kept",
                    record.l_total,
                    record.l_sup,
                    record.l_recon,
                    record.l_mmd,
                    record.l_unlab,
                    trace.records.len()
                ),
            });
        }
        tape.backward(total)?;
        let grads = b.grads(&tape);
        drop(tape);
        adam_step(params.mats_mut(), &grads, &mut adam, hyper).map_err(|e| match e {
            Error::Training { message, .. } => Error::Training {
                iter,
                message: format!(
                    "{message} (L_total={}, L_sup={}, L_recon={}, L_mmd={}, L_unlab={})",
                    record.l_total, record.l_sup, record.l_recon, record.l_mmd, record.l_unlab
                ),
            },
            other => other,
        })?;
        let mmd_dist = probe_mmd(&params, &probe_rows, &probe_classes, w.kappa)?;
        trace.records.push(TraceRecord { mmd_dist, ..record });

        if iter > cfg.warmup_iters && converged(&trace.records, cfg) {
            trace.converged_at = Some(iter);
            break;
        }
    }
    Ok(params)
}

/// Relative change of the windowed mean of `L_total` between the last two
/// windows, both after warmup.
fn converged(records: &[TraceRecord], cfg: &TrainConfig) -> bool {
    let w = cfg.convergence_window;
    let n = records.len();
    if n < cfg.warmup_iters + 2 * w {
        return false;
    }
    let mean = |s: &[TraceRecord]| s.iter().map(|r| r.l_total).sum::<f64>() / s.len() as f64;
    let prev = mean(&records[n - 2 * w..n - w]);
    let last = mean(&records[n - w..]);
    (last - prev).abs() / prev.abs().max(f64::MIN_POSITIVE) < cfg.convergence_tol
}
