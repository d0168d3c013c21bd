use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::format::{decode_rvf1_at, encode_rvf1};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, NodeId, Rng, Tape};

/// Width of the shared score space both heads map into.
pub const HEAD_DIM: usize = 50;
pub const DEFAULT_HIDDEN: usize = 500;

const CHECKPOINT_HEADER: &str = "zsembed-checkpoint 1";
const MANIFEST_FILE: &str = "manifest.txt";
const ARCHIVE_FILE: &str = "params.rvfa";

/// Code width for a given attribute width: 100 above 100 dims, else 75.
pub fn code_dim(d_attribute: usize) -> usize {
    if d_attribute > 100 {
        100
    } else {
        75
    }
}

/// Nonlinearity of the encoder and decoder hidden layers. `Identity`
/// exists for closed-form tests; the heads always use tanh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// `Dual` trains both heads into the shared space. `VisualOnly` maps the
/// visual code straight onto the raw attribute vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Dual,
    VisualOnly,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Dual => "dual",
            Branch::VisualOnly => "visual-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dual" => Some(Branch::Dual),
            "visual-only" => Some(Branch::VisualOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub d_visual: usize,
    pub d_hidden: usize,
    pub d_code: usize,
    pub d_attribute: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub branch: Branch,
}

impl Arch {
    pub fn new(d_visual: usize, d_hidden: usize, d_attribute: usize) -> Self {
        Arch {
            d_visual,
            d_hidden,
            d_code: code_dim(d_attribute),
            d_attribute,
            d_out: HEAD_DIM,
            activation: Activation::Tanh,
            branch: Branch::Dual,
        }
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    /// Output width of the visual head.
    pub fn visual_head_dim(&self) -> usize {
        match self.branch {
            Branch::Dual => self.d_out,
            Branch::VisualOnly => self.d_attribute,
        }
    }

    fn shapes(&self) -> [(usize, usize); N_PARAMS] {
        let (v, h, c, t, o) = (
            self.d_visual,
            self.d_hidden,
            self.d_code,
            self.d_attribute,
            self.d_out,
        );
        let vo = self.visual_head_dim();
        [
            (v, h),
            (1, h),
            (h, c),
            (1, c),
            (c, h),
            (1, h),
            (h, v),
            (1, v),
            (t, c),
            (1, c),
            (c, t),
            (1, t),
            (c, vo),
            (1, vo),
            (c, o),
            (1, o),
        ]
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.d_visual,
            self.d_hidden,
            self.d_code,
            self.d_attribute,
            self.d_out,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "all layer widths must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

pub(crate) const N_PARAMS: usize = 16;

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "visual_enc1_w",
    "visual_enc1_b",
    "visual_enc2_w",
    "visual_enc2_b",
    "visual_dec1_w",
    "visual_dec1_b",
    "visual_dec2_w",
    "visual_dec2_b",
    "text_enc_w",
    "text_enc_b",
    "text_dec_w",
    "text_dec_b",
    "visual_head_w",
    "visual_head_b",
    "text_head_w",
    "text_head_b",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum P {
    VEnc1W,
    VEnc1B,
    VEnc2W,
    VEnc2B,
    VDec1W,
    VDec1B,
    VDec2W,
    VDec2B,
    TEncW,
    TEncB,
    TDecW,
    TDecB,
    VHeadW,
    VHeadB,
    THeadW,
    THeadB,
}

/// All weights of both autoencoders and both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    mats: Vec<Matrix>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Arch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mats = arch
            .shapes()
            .iter()
            .map(|&(r, c)| {
                if r == 1 {
                    Matrix::zeros(r, c)
                } else {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Matrix::from_fn(r, c, |_, _| rng.uniform_range(-a, a))
                }
            })
            .collect();
        Ok(ModelParams { arch, mats })
    }

    pub fn from_parts(arch: Arch, mats: Vec<Matrix>) -> Result<Self> {
        arch.validate()?;
        if mats.len() != N_PARAMS {
            return Err(Error::Config(format!(
                "expected {N_PARAMS} parameter matrices, got {}",
                mats.len()
            )));
        }
        for ((m, want), name) in mats.iter().zip(arch.shapes()).zip(PARAM_NAMES) {
            if m.shape() != want {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?}, architecture needs {want:?}",
                    m.shape()
                )));
            }
        }
        Ok(ModelParams { arch, mats })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub(crate) fn mats_mut(&mut self) -> &mut [Matrix] {
        &mut self.mats
    }

    #[cfg(test)]
    pub(crate) fn get(&self, p: P) -> &Matrix {
        &self.mats[p as usize]
    }

    pub fn get_named(&self, name: &str) -> Option<&Matrix> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.mats[i])
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(Matrix::is_finite)
    }

    /// Puts every matrix on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound::from_ids(
            self.arch,
            self.mats.iter().map(|m| tape.param(m.clone())).collect(),
        )
    }

    /// Puts every matrix on the tape as a constant.
    pub fn bind_const(&self, tape: &mut Tape) -> Bound {
        Bound::from_ids(
            self.arch,
            self.mats.iter().map(|m| tape.constant(m.clone())).collect(),
        )
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let a = &self.arch;
        let mut manifest = format!(
            "{CHECKPOINT_HEADER}\narch {} {} {} {} {} {} {}\n",
            a.d_visual,
            a.d_hidden,
            a.d_code,
            a.d_attribute,
            a.d_out,
            a.activation.as_str(),
            a.branch.as_str()
        );
        let mut archive = Vec::new();
        for (name, m) in PARAM_NAMES.iter().zip(&self.mats) {
            writeln!(
                manifest,
                "{name} {} {} {}",
                m.rows(),
                m.cols(),
                archive.len()
            )
            .unwrap();
            archive.extend_from_slice(&encode_rvf1(m));
        }
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        let apath = dir.join(ARCHIVE_FILE);
        fs::write(&apath, archive).map_err(|e| Error::io(&apath, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST_FILE);
        let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let apath = dir.join(ARCHIVE_FILE);
        let archive = fs::read(&apath).map_err(|e| Error::io(&apath, e))?;
        let bad = |line: usize, message: String| Error::Format {
            location: format!("{} line {line}", mpath.display()),
            message,
        };

        let mut lines = manifest.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad(1, format!("expected header {CHECKPOINT_HEADER:?}")));
        }
        let arch_line = lines.next().unwrap_or_default();
        let f: Vec<&str> = arch_line.split_whitespace().collect();
        let num = |s: &str| s.parse::<usize>().ok();
        let arch = match f.as_slice() {
            ["arch", v, h, c, t, o, act, br] => Arch {
                d_visual: num(v).ok_or_else(|| bad(2, "bad d_visual".into()))?,
                d_hidden: num(h).ok_or_else(|| bad(2, "bad d_hidden".into()))?,
                d_code: num(c).ok_or_else(|| bad(2, "bad d_code".into()))?,
                d_attribute: num(t).ok_or_else(|| bad(2, "bad d_attribute".into()))?,
                d_out: num(o).ok_or_else(|| bad(2, "bad d_out".into()))?,
                activation: Activation::parse(act)
                    .ok_or_else(|| bad(2, format!("unknown activation {act:?}")))?,
                branch: Branch::parse(br)
                    .ok_or_else(|| bad(2, format!("unknown branch {br:?}")))?,
            },
            _ => return Err(bad(2, "expected `arch` line with 7 fields".into())),
        };

        let mut mats = Vec::with_capacity(N_PARAMS);
        for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let lineno = k + 3;
            let f: Vec<&str> = line.split_whitespace().collect();
            let [name, rows, cols, offset] = f.as_slice() else {
                return Err(bad(lineno, "expected `name rows cols offset`".into()));
            };
            if PARAM_NAMES.get(k) != Some(name) {
                return Err(bad(lineno, format!("unexpected parameter {name:?}")));
            }
            let (rows, cols, offset) = match (num(rows), num(cols), num(offset)) {
                (Some(r), Some(c), Some(o)) => (r, c, o),
                _ => return Err(bad(lineno, "non-numeric field".into())),
            };
            if offset > archive.len() {
                return Err(bad(lineno, format!("offset {offset} beyond archive end")));
            }
            let (m, _) = decode_rvf1_at(&archive[offset..], offset)?;
            if m.shape() != (rows, cols) {
                return Err(bad(
                    lineno,
                    format!("manifest says {rows}x{cols}, archive holds {:?}", m.shape()),
                ));
            }
            mats.push(m);
        }
        ModelParams::from_parts(arch, mats)
    }
}

/// Tape handles for one [`ModelParams`].
#[derive(Clone, Debug)]
pub struct Bound {
    arch: Arch,
    ids: Vec<NodeId>,
}

impl Bound {
    fn from_ids(arch: Arch, ids: Vec<NodeId>) -> Self {
        Bound { arch, ids }
    }

    /// Binds caller-owned tape nodes, one per entry of [`PARAM_NAMES`] in
    /// order, e.g. the leaves handed out by a gradient checker.
    pub fn from_nodes(arch: Arch, ids: &[NodeId]) -> Result<Self> {
        if ids.len() != PARAM_NAMES.len() {
            return Err(Error::Usage(format!(
                "expected {} parameter nodes, got {}",
                PARAM_NAMES.len(),
                ids.len()
            )));
        }
        Ok(Bound::from_ids(arch, ids.to_vec()))
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub(crate) fn id(&self, p: P) -> NodeId {
        self.ids[p as usize]
    }

    /// Gradients in parameter order, read from `tape` after `backward`.
    pub fn grads(&self, tape: &Tape) -> Vec<Matrix> {
        self.ids.iter().map(|&id| tape.grad(id).clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_width_rule() {
        assert_eq!(code_dim(85), 75);
        assert_eq!(code_dim(100), 75);
        assert_eq!(code_dim(101), 100);
        assert_eq!(code_dim(312), 100);
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let arch = Arch::new(20, 10, 8);
        let p = ModelParams::init(arch, &mut Rng::new(0)).unwrap();
        let w = p.get(P::VEnc1W);
        let a = (6.0f64 / 30.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= a));
        assert!(p.get(P::VEnc1B).data().iter().all(|&v| v == 0.0));
        assert_eq!(p.get(P::VHeadW).shape(), (75, HEAD_DIM));
    }

    #[test]
    fn visual_only_head_targets_attributes() {
        let arch = Arch::new(20, 10, 8).with_branch(Branch::VisualOnly);
        let p = ModelParams::init(arch, &mut Rng::new(0)).unwrap();
        assert_eq!(p.get_named("visual_head_w").unwrap().shape(), (75, 8));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(Arch::new(6, 4, 3), &mut Rng::new(3)).unwrap();
        p.save(dir.path()).unwrap();
        assert_eq!(ModelParams::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(Arch::new(6, 4, 3), &mut Rng::new(3)).unwrap();
        p.save(dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap().replacen(
            "visual_enc1_w 6 4",
            "visual_enc1_w 4 6",
            1,
        );
        fs::write(&mpath, text).unwrap();
        assert!(ModelParams::load(dir.path()).is_err());
    }
}
