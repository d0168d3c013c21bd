use crate::error::{Error, Result};
use crate::model::losses::{
    encode_textual, encode_visual, loss_mmd, loss_reconstruct, loss_supervised, loss_textual_ae,
    loss_total, loss_unlab, loss_visual_ae, output_scores, ContractiveMode, IndicatorEncoding,
    LossTerms, LossWeights, PseudoLabels,
};
use crate::model::params::{Bound, Branch};
use crate::numcore::{Matrix, NodeId, Rng, Tape};

/// One minibatch of the joint objective.
///
/// `images` holds the labeled rows first, then the unlabeled-pool rows.
/// `texts` holds one attribute row per class the batch can refer to;
/// `labeled_classes[k]` and `pool_classes[k]` are row indices into it.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub images: &'a Matrix,
    pub n_labeled: usize,
    /// Per labeled row, an index into `labeled_classes`.
    pub labels: &'a [usize],
    pub texts: &'a Matrix,
    pub labeled_classes: &'a [usize],
    pub pool_classes: &'a [usize],
    /// Per pool row, an index into `pool_classes`; `None` turns the
    /// pseudo-label term off.
    pub pseudo_labels: Option<&'a PseudoLabels>,
}

/// Which terms participate and with what weights.
#[derive(Clone, Copy, Debug)]
pub struct Settings {
    pub weights: LossWeights,
    /// Weight of the pseudo-label term at this iteration.
    pub lambda: f64,
    pub contractive: ContractiveMode,
    pub indicator: IndicatorEncoding,
    pub dropout_keep: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: NodeId,
    pub terms: LossTerms,
}

/// 0/1 matrix whose product with a class table picks `rows` in order.
pub fn selector(rows: &[usize], n: usize) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), n);
    for (k, &r) in rows.iter().enumerate() {
        m.set(k, r, 1.0);
    }
    m
}

/// Records the joint objective on `tape`.
///
/// Reconstruction and MMD are present only when `alpha > 0`, MMD also
/// needs `beta > 0` and the dual branch. Labeled and pool rows are
/// normalized as separate groups, each against its own classes.
pub fn objective(
    tape: &mut Tape,
    b: &Bound,
    batch: &Batch,
    s: &Settings,
    mut dropout: Option<&mut Rng>,
) -> Result<Objective> {
    let w = s.weights;
    let (n, nl) = (batch.images.rows(), batch.n_labeled);
    if nl > n || batch.labels.len() != nl {
        return Err(Error::shape("objective", (n, nl), (batch.labels.len(), 1)));
    }
    let nu = n - nl;
    let dual = b.arch().branch == Branch::Dual;
    let x = tape.constant(batch.images.clone());
    let t = tape.constant(batch.texts.clone());

    let (reconstruct, v_code, t_code) = if w.alpha > 0.0 {
        let (lv, vc) = loss_visual_ae(tape, b, x, w.gamma, s.contractive)?;
        let (lt, tc) = loss_textual_ae(tape, b, t)?;
        (Some(loss_reconstruct(tape, lv, lt)?), vc, Some(tc))
    } else {
        let vc = encode_visual(tape, b, x)?.code;
        let tc = if dual {
            Some(encode_textual(tape, b, t)?)
        } else {
            None
        };
        (None, vc, tc)
    };
    let mmd = match t_code {
        Some(tc) if w.alpha > 0.0 && w.beta > 0.0 && dual => {
            Some(loss_mmd(tape, v_code, tc, w.kappa)?)
        }
        _ => None,
    };

    // Class codes pass through the textual head; raw attributes are the
    // targets of the visual-only branch.
    let class_codes = if dual { t_code } else { None };
    let pick = |tape: &mut Tape, rows: &[usize]| -> Result<NodeId> {
        match class_codes {
            Some(tc) => {
                let sel = tape.constant(selector(rows, batch.texts.rows()));
                tape.matmul(sel, tc)
            }
            None => Ok(tape.constant(batch.texts.select_rows(rows))),
        }
    };

    let v_lab = tape.slice_rows(v_code, 0, nl)?;
    let t_lab = pick(tape, batch.labeled_classes)?;
    let (fv, ft) = output_scores(
        tape,
        b,
        v_lab,
        t_lab,
        s.dropout_keep,
        dropout.as_deref_mut(),
    )?;
    let supervised = loss_supervised(tape, fv, ft, batch.labels, s.indicator)?;

    let unlab = match batch.pseudo_labels {
        Some(pl) if nu > 0 && w.alpha > 0.0 => {
            let v_u = tape.slice_rows(v_code, nl, n)?;
            let t_u = pick(tape, batch.pool_classes)?;
            let (fvu, ftu) =
                output_scores(tape, b, v_u, t_u, s.dropout_keep, dropout.as_deref_mut())?;
            Some(loss_unlab(tape, fvu, ftu, pl)?)
        }
        _ => None,
    };

    let terms = LossTerms {
        supervised,
        reconstruct,
        unlab,
        mmd,
    };
    Ok(Objective {
        total: loss_total(tape, terms, &w, s.lambda)?,
        terms,
    })
}
