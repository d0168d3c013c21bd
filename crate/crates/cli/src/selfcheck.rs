//! Gradient suites and brute-force oracle comparisons run by `selfcheck`.

use zsembed_core::dataio::{decode_rvf1, encode_rvf1, gen_synthetic, SynthSpec};
use zsembed_core::eval::{mean_average_precision, top1_accuracy};
use zsembed_core::model::{
    loss_mmd, loss_supervised, loss_textual_ae, loss_unlab, loss_visual_ae, objective, Arch, Batch,
    Bound, ContractiveMode, IndicatorEncoding, LossWeights, ModelParams, PseudoLabels, Settings,
};
use zsembed_core::numcore::{grad_check, Matrix, NodeId, Rng, Tape};
use zsembed_core::Result;

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const EXACT_TOL: f64 = 1e-12;

pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, tol: f64) -> Outcome {
    Outcome {
        name,
        passed: worst < tol,
        detail: format!("max error {worst:.3e} (limit {tol:.0e})"),
    }
}

fn failed(name: &'static str, e: zsembed_core::Error) -> Outcome {
    Outcome {
        name,
        passed: false,
        detail: e.to_string(),
    }
}

/// Runs every suite; the order is fixed.
pub fn run_all() -> Vec<Outcome> {
    let suites: [(&'static str, fn() -> Result<f64>, f64); 8] = [
        ("gradient: full objective", grad_full_objective, GRAD_TOL),
        ("gradient: visual autoencoder", grad_visual_ae, GRAD_TOL),
        ("gradient: textual autoencoder", grad_textual_ae, GRAD_TOL),
        ("gradient: mmd", grad_mmd, GRAD_TOL),
        ("gradient: alignment terms", grad_alignment, GRAD_TOL),
        ("oracle: mmd triple sum", mmd_oracle, EXACT_TOL),
        ("oracle: top-1 and mAP", metric_oracles, EXACT_TOL),
        ("round-trip: RVF1", rvf1_round_trip, f64::MIN_POSITIVE),
    ];
    suites
        .into_iter()
        .map(|(name, f, tol)| match f() {
            Ok(worst) => outcome(name, worst, tol),
            Err(e) => failed(name, e),
        })
        .collect()
}

/// Six images of the smoke preset (four labeled, two pooled) and the
/// class rows they refer to.
struct Smoke {
    params: ModelParams,
    images: Matrix,
    labels: Vec<usize>,
    texts: Matrix,
    labeled_classes: Vec<usize>,
    pool_classes: Vec<usize>,
    pseudo: PseudoLabels,
}

fn smoke() -> Result<Smoke> {
    let spec = SynthSpec::smoke(5);
    let ds = gen_synthetic(&spec)?;
    let per = spec.images_per_class;
    let test0 = (spec.train_classes + spec.unlab_classes) * per;
    let rows = [0, per, 2 * per, 3 * per + 1, test0, test0 + per];
    let images = ds.visual().select_rows(&rows);
    let labeled_classes = vec![0, 1, 2, 3];
    let pool_classes = vec![4, 5];
    let class_ids = [
        0,
        1,
        2,
        3,
        spec.train_classes + spec.unlab_classes,
        spec.train_classes + spec.unlab_classes + 1,
    ];
    let texts = ds.attributes().select_rows(&class_ids);
    let arch = Arch::new(spec.d_visual, 5, spec.d_attribute);
    let mut params = ModelParams::init(arch, &mut Rng::new(9))?;
    // Non-zero biases so their gradients are exercised too.
    let mut rng = Rng::new(10);
    let mats: Vec<Matrix> = params
        .mats()
        .iter()
        .map(|m| {
            if m.rows() == 1 {
                Matrix::from_fn(1, m.cols(), |_, _| rng.uniform_range(-0.1, 0.1))
            } else {
                m.clone()
            }
        })
        .collect();
    params = ModelParams::from_parts(arch, mats)?;
    Ok(Smoke {
        params,
        images,
        labels: vec![0, 1, 2, 3],
        texts,
        labeled_classes,
        pool_classes,
        pseudo: PseudoLabels {
            labels: vec![1, 0],
            n_classes: 2,
        },
    })
}

fn grad_full_objective() -> Result<f64> {
    let s = smoke()?;
    let arch = *s.params.arch();
    let batch = Batch {
        images: &s.images,
        n_labeled: 4,
        labels: &s.labels,
        texts: &s.texts,
        labeled_classes: &s.labeled_classes,
        pool_classes: &s.pool_classes,
        pseudo_labels: Some(&s.pseudo),
    };
    let settings = Settings {
        weights: LossWeights {
            kappa: 0.5,
            ..LossWeights::default()
        },
        lambda: 1.0,
        contractive: ContractiveMode::Full,
        indicator: IndicatorEncoding::ZeroOne,
        dropout_keep: 0.7,
    };
    let dropout = Rng::new(77);
    grad_check(
        |tape, ids| {
            let b = Bound::from_nodes(arch, ids)?;
            let mut rng = dropout.clone();
            Ok(objective(tape, &b, &batch, &settings, Some(&mut rng))?.total)
        },
        s.params.mats(),
        FD_STEP,
    )
}

fn bound_check(build: impl Fn(&mut Tape, &Bound) -> Result<NodeId>) -> Result<f64> {
    let s = smoke()?;
    let arch = *s.params.arch();
    grad_check(
        |tape, ids| {
            let b = Bound::from_nodes(arch, ids)?;
            build(tape, &b)
        },
        s.params.mats(),
        FD_STEP,
    )
}

fn grad_visual_ae() -> Result<f64> {
    let s = smoke()?;
    bound_check(|tape, b| {
        let x = tape.constant(s.images.clone());
        Ok(loss_visual_ae(tape, b, x, 0.1, ContractiveMode::Full)?.0)
    })
}

fn grad_textual_ae() -> Result<f64> {
    let s = smoke()?;
    bound_check(|tape, b| {
        let t = tape.constant(s.texts.clone());
        Ok(loss_textual_ae(tape, b, t)?.0)
    })
}

fn grad_mmd() -> Result<f64> {
    let mut rng = Rng::new(3);
    let x = Matrix::from_fn(5, 3, |_, _| rng.uniform_range(-0.4, 0.4));
    let y = Matrix::from_fn(4, 3, |_, _| rng.uniform_range(-0.4, 0.4));
    grad_check(|tape, p| loss_mmd(tape, p[0], p[1], 4.0), &[x, y], FD_STEP)
}

fn grad_alignment() -> Result<f64> {
    let mut rng = Rng::new(4);
    let hv = Matrix::from_fn(5, 4, |_, _| rng.uniform_range(-1.0, 1.0));
    let ht = Matrix::from_fn(3, 4, |_, _| rng.uniform_range(-1.0, 1.0));
    let labels = [0, 2, 1, 1, 0];
    let pl = PseudoLabels {
        labels: vec![2, 2, 0, 1, 0],
        n_classes: 3,
    };
    let sup = grad_check(
        |tape, p| {
            let fv = tape.column_l2_normalize(p[0])?;
            let ft = tape.column_l2_normalize(p[1])?;
            loss_supervised(tape, fv, ft, &labels, IndicatorEncoding::ZeroOne)
        },
        &[hv.clone(), ht.clone()],
        FD_STEP,
    )?;
    let unlab = grad_check(
        |tape, p| {
            let fv = tape.column_l2_normalize(p[0])?;
            let ft = tape.column_l2_normalize(p[1])?;
            loss_unlab(tape, fv, ft, &pl)
        },
        &[hv, ht],
        FD_STEP,
    )?;
    Ok(sup.max(unlab))
}

/// `(1/n²)ΣΣk(x,x') + (1/m²)ΣΣk(y,y') − (2/nm)ΣΣk(x,y)` in plain loops.
fn naive_mmd(x: &Matrix, y: &Matrix, kappa: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-kappa * d2).exp()
    };
    let mean_k = |a: &Matrix, b: &Matrix| {
        let mut s = 0.0;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                s += k(a.row(i), b.row(j));
            }
        }
        s / (a.rows() * b.rows()) as f64
    };
    mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y)
}

fn mmd_oracle() -> Result<f64> {
    let mut rng = Rng::new(21);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let (n, m, d) = (1 + rng.below(30), 1 + rng.below(30), 1 + rng.below(6));
        let x = Matrix::from_fn(n, d, |_, _| rng.uniform_range(-0.5, 0.5));
        let y = Matrix::from_fn(m, d, |_, _| rng.uniform_range(-0.5, 0.5));
        let kappa = rng.uniform_range(0.5, 32.0);
        let mut tape = Tape::new();
        let (xn, yn) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let v = loss_mmd(&mut tape, xn, yn, kappa)?;
        worst = worst.max((tape.scalar(v) - naive_mmd(&x, &y, kappa)).abs());
    }
    Ok(worst)
}

fn metric_oracles() -> Result<f64> {
    let mut rng = Rng::new(22);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let (n, c) = (2 + rng.below(10), 2 + rng.below(4));
        let scores = Matrix::from_fn(n, c, |_, _| rng.below(5) as f64);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mut hits = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let row = scores.row(i);
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            hits += usize::from(best == label);
        }
        let top1 = 100.0 * hits as f64 / n as f64;
        worst = worst.max((top1_accuracy(&scores, &labels)? - top1).abs());

        let mut aps = Vec::new();
        for k in 0..c {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores
                    .get(b, k)
                    .total_cmp(&scores.get(a, k))
                    .then(a.cmp(&b))
            });
            let (mut found, mut sum) = (0usize, 0.0);
            for (rank, &i) in order.iter().enumerate() {
                if labels[i] == k {
                    found += 1;
                    sum += found as f64 / (rank + 1) as f64;
                }
            }
            if found > 0 {
                aps.push(sum / found as f64);
            }
        }
        let map = 100.0 * aps.iter().sum::<f64>() / aps.len() as f64;
        worst = worst.max((mean_average_precision(&scores, &labels)?.map - map).abs());
    }
    Ok(worst)
}

fn rvf1_round_trip() -> Result<f64> {
    let mut rng = Rng::new(23);
    let mut m = Matrix::from_fn(7, 5, |_, _| rng.normal() * 1e3);
    m.set(0, 0, f64::MIN_POSITIVE);
    m.set(1, 1, -0.0);
    let back = decode_rvf1(&encode_rvf1(&m))?;
    let same = m
        .data()
        .iter()
        .zip(back.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(if same && back.rows() == 7 && back.cols() == 5 {
        0.0
    } else {
        1.0
    })
}
