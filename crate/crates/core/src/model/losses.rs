use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{Activation, Bound, Branch, ModelParams, P};
use crate::numcore::{argmax, dropout_mask, Matrix, NodeId, Rng, Tape, NORM_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub kappa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            lambda: 1.0,
            kappa: 32.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!(
                "kappa must be > 0, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// How the encoder Jacobian penalty is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractiveMode {
    /// Frobenius norm of the full input-to-code Jacobian.
    Full,
    /// Sum of the per-layer Jacobian norms; cheaper for wide inputs.
    PerLayer,
}

impl ContractiveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContractiveMode::Full => "full",
            ContractiveMode::PerLayer => "per-layer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(ContractiveMode::Full),
            "per-layer" => Some(ContractiveMode::PerLayer),
            _ => None,
        }
    }
}

/// Entries of the class indicator used by the alignment losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndicatorEncoding {
    /// 1 for the positive class, 0 elsewhere.
    ZeroOne,
    /// +1 for the positive class, -1 elsewhere.
    PlusMinusOne,
}

impl IndicatorEncoding {
    pub fn as_str(self) -> &'static str {
        match self {
            IndicatorEncoding::ZeroOne => "zero-one",
            IndicatorEncoding::PlusMinusOne => "plus-minus-one",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero-one" => Some(IndicatorEncoding::ZeroOne),
            "plus-minus-one" => Some(IndicatorEncoding::PlusMinusOne),
            _ => None,
        }
    }

    fn fill(self) -> (f64, f64) {
        match self {
            IndicatorEncoding::ZeroOne => (1.0, 0.0),
            IndicatorEncoding::PlusMinusOne => (1.0, -1.0),
        }
    }
}

/// One-hot class assignment per unlabeled image; `labels[i]` indexes the
/// candidate class list the scores were computed against.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl PseudoLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indicator(&self) -> Matrix {
        indicator(&self.labels, self.n_classes, IndicatorEncoding::ZeroOne)
    }

    /// Number of positions where `self` and `other` disagree.
    pub fn changes_from(&self, other: &PseudoLabels) -> usize {
        if self.labels.len() != other.labels.len() {
            return self.labels.len();
        }
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count()
    }
}

fn indicator(labels: &[usize], n_classes: usize, enc: IndicatorEncoding) -> Matrix {
    let (pos, neg) = enc.fill();
    let mut m = Matrix::filled(labels.len(), n_classes, neg);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, pos);
    }
    m
}

fn act(tape: &mut Tape, a: Activation, x: NodeId) -> NodeId {
    match a {
        Activation::Tanh => tape.tanh(x),
        Activation::Identity => x,
    }
}

/// Hidden layer and code of the visual encoder.
#[derive(Clone, Copy, Debug)]
pub struct VisualCode {
    pub hidden: NodeId,
    pub code: NodeId,
}

pub fn encode_visual(tape: &mut Tape, b: &Bound, x: NodeId) -> Result<VisualCode> {
    let a = b.arch().activation;
    let pre1 = tape.affine(x, b.id(P::VEnc1W), b.id(P::VEnc1B))?;
    let hidden = act(tape, a, pre1);
    let pre2 = tape.affine(hidden, b.id(P::VEnc2W), b.id(P::VEnc2B))?;
    let code = act(tape, a, pre2);
    Ok(VisualCode { hidden, code })
}

pub fn decode_visual(tape: &mut Tape, b: &Bound, code: NodeId) -> Result<NodeId> {
    let pre = tape.affine(code, b.id(P::VDec1W), b.id(P::VDec1B))?;
    let h = act(tape, b.arch().activation, pre);
    tape.affine(h, b.id(P::VDec2W), b.id(P::VDec2B))
}

pub fn encode_textual(tape: &mut Tape, b: &Bound, t: NodeId) -> Result<NodeId> {
    let pre = tape.affine(t, b.id(P::TEncW), b.id(P::TEncB))?;
    Ok(act(tape, b.arch().activation, pre))
}

pub fn decode_textual(tape: &mut Tape, b: &Bound, code: NodeId) -> Result<NodeId> {
    tape.affine(code, b.id(P::TDecW), b.id(P::TDecB))
}

/// `(1/n) Σ ‖target − recon‖²` over rows.
fn mean_row_sq_error(tape: &mut Tape, recon: NodeId, target: NodeId) -> Result<NodeId> {
    let n = tape.shape(target).0.max(1);
    let diff = tape.sub(recon, target)?;
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// `1 − y²` as a node, or a constant of ones for the identity activation.
fn act_slope(tape: &mut Tape, a: Activation, y: NodeId) -> NodeId {
    match a {
        Activation::Tanh => {
            let sq = tape.square(y);
            let neg = tape.scale(sq, -1.0);
            tape.add_scalar(neg, 1.0)
        }
        Activation::Identity => {
            let (r, c) = tape.shape(y);
            tape.constant(Matrix::ones(r, c))
        }
    }
}

/// Mean squared Frobenius norm of the encoder Jacobian over the batch.
pub fn contractive_term(
    tape: &mut Tape,
    b: &Bound,
    enc: VisualCode,
    mode: ContractiveMode,
) -> Result<NodeId> {
    let a = b.arch().activation;
    let s = act_slope(tape, a, enc.hidden);
    let t = act_slope(tape, a, enc.code);
    let (w1, w2) = (b.id(P::VEnc1W), b.id(P::VEnc2W));
    match mode {
        ContractiveMode::Full => tape.contractive_penalty(s, t, w1, w2),
        ContractiveMode::PerLayer => {
            let l1 = weighted_column_norms(tape, s, w1)?;
            let l2 = weighted_column_norms(tape, t, w2)?;
            tape.add(l1, l2)
        }
    }
}

/// `(1/n) Σᵢ Σⱼ slope_ij² ‖w[:,j]‖²`.
fn weighted_column_norms(tape: &mut Tape, slope: NodeId, w: NodeId) -> Result<NodeId> {
    let n = tape.shape(slope).0.max(1);
    let rows = tape.shape(w).0;
    let ones = tape.constant(Matrix::ones(1, rows));
    let wsq = tape.square(w);
    let colsq = tape.matmul(ones, wsq)?;
    let colsq_t = tape.transpose(colsq);
    let ssq = tape.square(slope);
    let per_row = tape.matmul(ssq, colsq_t)?;
    let s = tape.sum(per_row);
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// Visual autoencoder loss: batch mean of the squared reconstruction error
/// plus `gamma` times the Jacobian penalty. Returns the loss and the code.
pub fn loss_visual_ae(
    tape: &mut Tape,
    b: &Bound,
    x: NodeId,
    gamma: f64,
    mode: ContractiveMode,
) -> Result<(NodeId, NodeId)> {
    let enc = encode_visual(tape, b, x)?;
    let recon = decode_visual(tape, b, enc.code)?;
    let err = mean_row_sq_error(tape, recon, x)?;
    if gamma == 0.0 {
        return Ok((err, enc.code));
    }
    let pen = contractive_term(tape, b, enc, mode)?;
    let pen = tape.scale(pen, gamma);
    Ok((tape.add(err, pen)?, enc.code))
}

/// Textual autoencoder loss: mean over rows of the squared reconstruction
/// error. Returns the loss and the code.
pub fn loss_textual_ae(tape: &mut Tape, b: &Bound, t: NodeId) -> Result<(NodeId, NodeId)> {
    let code = encode_textual(tape, b, t)?;
    let recon = decode_textual(tape, b, code)?;
    Ok((mean_row_sq_error(tape, recon, t)?, code))
}

pub fn loss_reconstruct(tape: &mut Tape, visual_ae: NodeId, textual_ae: NodeId) -> Result<NodeId> {
    tape.add(visual_ae, textual_ae)
}

/// Squared kernel mean-embedding distance between two point sets, biased
/// (V-statistic) estimate with the kernel `exp(−kappa·d²)`.
pub fn loss_mmd(tape: &mut Tape, x: NodeId, y: NodeId, kappa: f64) -> Result<NodeId> {
    let (n, m) = (tape.shape(x).0, tape.shape(y).0);
    if n == 0 || m == 0 {
        return Err(Error::Usage("MMD needs two non-empty point sets".into()));
    }
    let block = |tape: &mut Tape, a: NodeId, c: NodeId, k: f64| -> Result<NodeId> {
        let d2 = tape.pairwise_sq_dists(a, c)?;
        let kern = tape.gaussian_kernel(d2, kappa)?;
        let s = tape.sum(kern);
        Ok(tape.scale(s, k))
    };
    let kxx = block(tape, x, x, 1.0 / (n * n) as f64)?;
    let kyy = block(tape, y, y, 1.0 / (m * m) as f64)?;
    let kxy = block(tape, x, y, -2.0 / (n * m) as f64)?;
    let s = tape.add(kxx, kyy)?;
    tape.add(s, kxy)
}

/// Head outputs normalized along the batch axis.
///
/// With an rng the head inputs get inverted dropout at `keep`; without one
/// the pass is deterministic. In the visual-only branch `t_codes` should be
/// the raw attribute rows, which skip the textual head.
pub fn output_scores(
    tape: &mut Tape,
    b: &Bound,
    v_codes: NodeId,
    t_codes: NodeId,
    keep: f64,
    mut rng: Option<&mut Rng>,
) -> Result<(NodeId, NodeId)> {
    let mut drop = |tape: &mut Tape, x: NodeId| -> Result<NodeId> {
        match rng.as_deref_mut() {
            Some(r) => {
                let (rows, cols) = tape.shape(x);
                let mask = tape.constant(dropout_mask(rows, cols, keep, r)?);
                tape.mul(x, mask)
            }
            None => Ok(x),
        }
    };
    let vin = drop(tape, v_codes)?;
    let hv = tape.affine_tanh(vin, b.id(P::VHeadW), b.id(P::VHeadB))?;
    let ht = match b.arch().branch {
        Branch::Dual => {
            let tin = drop(tape, t_codes)?;
            tape.affine_tanh(tin, b.id(P::THeadW), b.id(P::THeadB))?
        }
        Branch::VisualOnly => t_codes,
    };
    let fv = tape.column_l2_normalize(hv)?;
    let ft = tape.column_l2_normalize(ht)?;
    Ok((fv, ft))
}

/// `−(1/n) Σᵢ Σ_c I_ic ⟨fv_i, ft_c⟩`. `labels[i]` indexes the rows of `ft`.
pub fn loss_supervised(
    tape: &mut Tape,
    fv: NodeId,
    ft: NodeId,
    labels: &[usize],
    enc: IndicatorEncoding,
) -> Result<NodeId> {
    let (n, c) = (tape.shape(fv).0, tape.shape(ft).0);
    if labels.len() != n {
        return Err(Error::shape("loss_supervised", (n, c), (labels.len(), 1)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let ind = tape.constant(indicator(labels, c, enc));
    alignment(tape, fv, ft, ind)
}

/// The pseudo-label counterpart of [`loss_supervised`]; the indicator is
/// always 0/1 and carries no gradient.
pub fn loss_unlab(tape: &mut Tape, fv: NodeId, ft: NodeId, pl: &PseudoLabels) -> Result<NodeId> {
    let (n, c) = (tape.shape(fv).0, tape.shape(ft).0);
    if pl.len() != n || pl.n_classes != c {
        return Err(Error::shape("loss_unlab", (n, c), (pl.len(), pl.n_classes)));
    }
    let ind = tape.constant(pl.indicator());
    alignment(tape, fv, ft, ind)
}

fn alignment(tape: &mut Tape, fv: NodeId, ft: NodeId, ind: NodeId) -> Result<NodeId> {
    let n = tape.shape(fv).0.max(1);
    let ftt = tape.transpose(ft);
    let scores = tape.matmul(fv, ftt)?;
    let picked = tape.mul(scores, ind)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// Argmax class per row of `fv · ftᵀ`, lowest index on ties.
pub fn update_pseudo_labels(fv: &Matrix, ft: &Matrix) -> Result<PseudoLabels> {
    if fv.rows() == 0 {
        return Ok(PseudoLabels {
            labels: Vec::new(),
            n_classes: ft.rows(),
        });
    }
    let scores = fv.matmul_t(ft)?;
    Ok(PseudoLabels {
        labels: (0..scores.rows()).map(|i| argmax(scores.row(i))).collect(),
        n_classes: ft.rows(),
    })
}

/// Loss components of one objective; absent terms are skipped.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub supervised: NodeId,
    pub reconstruct: Option<NodeId>,
    pub unlab: Option<NodeId>,
    pub mmd: Option<NodeId>,
}

/// `sup + alpha·(recon + lambda·unlab + beta·mmd)`. With `alpha = 0` this is
/// the supervised node itself.
pub fn loss_total(
    tape: &mut Tape,
    terms: LossTerms,
    w: &LossWeights,
    lambda: f64,
) -> Result<NodeId> {
    if w.alpha == 0.0 {
        return Ok(terms.supervised);
    }
    let mut parts = Vec::new();
    if let Some(r) = terms.reconstruct {
        parts.push(r);
    }
    if let Some(u) = terms.unlab {
        parts.push(tape.scale(u, lambda));
    }
    if let Some(m) = terms.mmd {
        parts.push(tape.scale(m, w.beta));
    }
    let Some((&first, rest)) = parts.split_first() else {
        return Ok(terms.supervised);
    };
    let mut inner = first;
    for &p in rest {
        inner = tape.add(inner, p)?;
    }
    let inner = tape.scale(inner, w.alpha);
    tape.add(terms.supervised, inner)
}

/// Unnormalized evaluation-mode head outputs for images and classes.
pub fn head_outputs(params: &ModelParams, v: &Matrix, t: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let b = params.bind_const(&mut tape);
    let x = tape.constant(v.clone());
    let enc = encode_visual(&mut tape, &b, x)?;
    let hv = tape.affine_tanh(enc.code, b.id(P::VHeadW), b.id(P::VHeadB))?;
    let ht = match params.arch().branch {
        Branch::Dual => {
            let tn = tape.constant(t.clone());
            let tc = encode_textual(&mut tape, &b, tn)?;
            tape.affine_tanh(tc, b.id(P::THeadW), b.id(P::THeadB))?
        }
        Branch::VisualOnly => tape.constant(t.clone()),
    };
    Ok((tape.value(hv).clone(), tape.value(ht).clone()))
}

/// Cosine similarity between row sets; a zero row scores 0 against anything.
pub fn cosine_scores(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let an = unit_rows(a);
    let bn = unit_rows(b);
    an.matmul_t(&bn)
}

fn unit_rows(m: &Matrix) -> Matrix {
    let norms = m.row_norms();
    let mut out = m.clone();
    for (r, n) in norms.iter().enumerate() {
        let d = n.max(NORM_EPS);
        out.row_mut(r).iter_mut().for_each(|v| *v /= d);
    }
    out
}

/// Cosine scores between every image in `v` and every class in `t`.
pub fn predict(params: &ModelParams, v: &Matrix, t: &Matrix) -> Result<Matrix> {
    let (hv, ht) = head_outputs(params, v, t)?;
    cosine_scores(&hv, &ht)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Arch;

    #[test]
    fn pseudo_labels_argmax_and_ties() {
        let ft = Matrix::identity(3);
        let fv = Matrix::from_rows(&[[0.1, 0.9, 0.3], [0.5, 0.5, 0.0]]).unwrap();
        let pl = update_pseudo_labels(&fv, &ft).unwrap();
        assert_eq!(pl.labels, vec![1, 0]);
        for r in 0..2 {
            assert_eq!(pl.indicator().row(r).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn empty_pool_gives_empty_labels() {
        let pl = update_pseudo_labels(&Matrix::zeros(0, 3), &Matrix::identity(3)).unwrap();
        assert!(pl.is_empty());
    }

    #[test]
    fn total_arithmetic() {
        let mut tape = Tape::new();
        let c: Vec<NodeId> = (1..=4)
            .map(|v| tape.constant(Matrix::scalar(v as f64)))
            .collect();
        let terms = LossTerms {
            supervised: c[0],
            reconstruct: Some(c[1]),
            unlab: Some(c[2]),
            mmd: Some(c[3]),
        };
        let w = LossWeights::default();
        let tot = loss_total(&mut tape, terms, &w, 1.0).unwrap();
        assert_eq!(tape.scalar(tot), 10.0);
        let a0 = LossWeights { alpha: 0.0, ..w };
        assert_eq!(loss_total(&mut tape, terms, &a0, 1.0).unwrap(), c[0]);
    }

    #[test]
    fn singleton_mmd_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[0.0, 0.0]]).unwrap());
        let y = tape.constant(Matrix::from_rows(&[[0.1, 0.2]]).unwrap());
        let m = loss_mmd(&mut tape, x, y, 2.0).unwrap();
        let want = 2.0 - 2.0 * (-2.0f64 * 0.05).exp();
        assert!((tape.scalar(m) - want).abs() < 1e-15);
    }

    #[test]
    fn zero_params_give_zero_codes() {
        let arch = Arch::new(4, 3, 2);
        let mats = ModelParams::init(arch, &mut Rng::new(0))
            .unwrap()
            .mats()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let p = ModelParams::from_parts(arch, mats).unwrap();
        let mut tape = Tape::new();
        let b = p.bind_const(&mut tape);
        let x = tape.constant(Matrix::filled(5, 4, 0.7));
        let enc = encode_visual(&mut tape, &b, x).unwrap();
        assert!(tape.value(enc.code).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_guards_zero_rows() {
        let a = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let s = cosine_scores(&a, &a).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert!((s.get(1, 1) - 1.0).abs() < 1e-15);
    }
}
