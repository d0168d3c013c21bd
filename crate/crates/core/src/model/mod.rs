//! The embedding network, its loss terms and the prediction rule.

mod losses;
mod objective;
mod params;

pub use losses::{
    contractive_term, cosine_scores, decode_textual, decode_visual, encode_textual, encode_visual,
    head_outputs, loss_mmd, loss_reconstruct, loss_supervised, loss_textual_ae, loss_total,
    loss_unlab, loss_visual_ae, output_scores, predict, update_pseudo_labels, ContractiveMode,
    IndicatorEncoding, LossTerms, LossWeights, PseudoLabels, VisualCode,
};
pub use objective::{objective, selector, Batch, Objective, Settings};
pub use params::{
    code_dim, Activation, Arch, Bound, Branch, ModelParams, DEFAULT_HIDDEN, HEAD_DIM, PARAM_NAMES,
};
