//! Two-stage gated fusion of the auxiliary task features into the main
//! relation-recognition feature, and the three answer-probability heads.
//!
//! Stage one blends the two auxiliary begin-token states through a sigmoid
//! gate; stage two blends that auxiliary vector into the relation-cloze
//! mask state. Gates are bias-free by construction.

use std::collections::BTreeMap;

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::math::tape::{NodeId, Tape};
use crate::math::{softmax, Matrix};
use crate::rng::Rng;
use crate::template::PromptEncoding;
use crate::verbalizer::{AnswerSpace, TaskSpaces};

const INIT_STD: f64 = 0.02;

/// The four learnable gate matrices, each d_h x d_h.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParameters<F> {
    pub w_c: Matrix<F>,
    pub u_c: Matrix<F>,
    pub w_m: Matrix<F>,
    pub u_m: Matrix<F>,
}

impl<F: Float> FusionParameters<F> {
    pub fn new(d_h: usize, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "fusion-init");
        FusionParameters {
            w_c: Matrix::random_normal(d_h, d_h, INIT_STD, &mut rng),
            u_c: Matrix::random_normal(d_h, d_h, INIT_STD, &mut rng),
            w_m: Matrix::random_normal(d_h, d_h, INIT_STD, &mut rng),
            u_m: Matrix::random_normal(d_h, d_h, INIT_STD, &mut rng),
        }
    }

    pub fn zeros(d_h: usize) -> Self {
        FusionParameters {
            w_c: Matrix::zeros(d_h, d_h),
            u_c: Matrix::zeros(d_h, d_h),
            w_m: Matrix::zeros(d_h, d_h),
            u_m: Matrix::zeros(d_h, d_h),
        }
    }

    pub fn d_h(&self) -> usize {
        self.w_c.rows()
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix<F>)) {
        f("fusion.w_c", &self.w_c);
        f("fusion.u_c", &self.u_c);
        f("fusion.w_m", &self.w_m);
        f("fusion.u_m", &self.u_m);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix<F>)) {
        f("fusion.w_c", &mut self.w_c);
        f("fusion.u_c", &mut self.u_c);
        f("fusion.w_m", &mut self.w_m);
        f("fusion.u_m", &mut self.u_m);
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> BoundFusion {
        let mut ids = BTreeMap::new();
        self.visit_params(&mut |name, m| {
            ids.insert(name.to_string(), tape.param(name, m));
        });
        BoundFusion { ids }
    }
}

pub struct BoundFusion {
    ids: BTreeMap<String, NodeId>,
}

impl BoundFusion {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound fusion parameter {name}"))
    }
}

fn check_dim<F: Float>(what: &str, v: &[F], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::DimMismatch {
            context: what.into(),
            expected: d,
            got: v.len(),
        });
    }
    Ok(())
}

/// W x for a column-convention matrix and a vector given as a slice.
fn matvec<F: Float>(w: &Matrix<F>, x: &[F]) -> Vec<F> {
    Matrix::row_vector(x.to_vec())
        .matmul_transpose_b(w)
        .into_parts()
}

fn gate_blend<F: Float>(wa: &[F], ub: &[F], a: &[F], b: &[F]) -> (Vec<F>, Vec<F>) {
    let gate: Vec<F> = wa
        .iter()
        .zip(ub.iter())
        .map(|(&x, &y)| (x + y).sigmoid())
        .collect();
    let blended: Vec<F> = gate
        .iter()
        .zip(a.iter().zip(b.iter()))
        .map(|(&g, (&av, &bv))| g * av + (F::one() - g) * bv)
        .collect();
    (gate, blended)
}

/// First gate: blends the two auxiliary begin-token states into one
/// auxiliary feature vector. Returns (gate, blended).
pub fn fuse_auxiliary<F: Float>(
    h_ssc_c: &[F],
    h_acp_c: &[F],
    params: &FusionParameters<F>,
) -> Result<(Vec<F>, Vec<F>)> {
    let d = params.d_h();
    check_dim("fuse_auxiliary sense-state", h_ssc_c, d)?;
    check_dim("fuse_auxiliary connective-state", h_acp_c, d)?;
    let wa = matvec(&params.w_c, h_ssc_c);
    let ub = matvec(&params.u_c, h_acp_c);
    Ok(gate_blend(&wa, &ub, h_ssc_c, h_acp_c))
}

/// Second gate: blends the auxiliary feature vector into the relation-cloze
/// mask state. Returns (gate, fused state).
pub fn fuse_main<F: Float>(
    h_drr_m: &[F],
    h_aux: &[F],
    params: &FusionParameters<F>,
) -> Result<(Vec<F>, Vec<F>)> {
    let d = params.d_h();
    check_dim("fuse_main mask-state", h_drr_m, d)?;
    check_dim("fuse_main auxiliary-state", h_aux, d)?;
    let wa = matvec(&params.w_m, h_drr_m);
    let ub = matvec(&params.u_m, h_aux);
    Ok(gate_blend(&wa, &ub, h_drr_m, h_aux))
}

fn gate_blend_on_tape<F: Float>(
    tape: &mut Tape<F>,
    w: NodeId,
    u: NodeId,
    a: NodeId,
    b: NodeId,
) -> (NodeId, NodeId) {
    let wa = tape.matmul_transpose_b(a, w);
    let ub = tape.matmul_transpose_b(b, u);
    let pre = tape.add(wa, ub);
    let gate = tape.sigmoid(pre);
    let keep = tape.mul_elem(gate, a);
    let inv = tape.one_minus(gate);
    let pass = tape.mul_elem(inv, b);
    let blended = tape.add(keep, pass);
    (gate, blended)
}

pub fn fuse_auxiliary_on_tape<F: Float>(
    tape: &mut Tape<F>,
    bound: &BoundFusion,
    h_ssc_c: NodeId,
    h_acp_c: NodeId,
) -> (NodeId, NodeId) {
    gate_blend_on_tape(tape, bound.id("fusion.w_c"), bound.id("fusion.u_c"), h_ssc_c, h_acp_c)
}

pub fn fuse_main_on_tape<F: Float>(
    tape: &mut Tape<F>,
    bound: &BoundFusion,
    h_drr_m: NodeId,
    h_aux: NodeId,
) -> (NodeId, NodeId) {
    gate_blend_on_tape(tape, bound.id("fusion.w_m"), bound.id("fusion.u_m"), h_drr_m, h_aux)
}

/// Scores and probabilities for the three task heads on one prompt.
#[derive(Debug, Clone)]
pub struct HeadOutputs<F> {
    pub drr_scores: Vec<F>,
    pub ssc_scores: Vec<F>,
    pub acp_scores: Vec<F>,
    pub drr_probs: Vec<F>,
    pub ssc_probs: Vec<F>,
    pub acp_probs: Vec<F>,
    /// The fused relation-decision state.
    pub fused_state: Vec<F>,
}

/// Restricts a full-vocabulary score vector to an answer space.
pub fn restrict_scores<F: Float>(scores: &[F], space: &AnswerSpace) -> Result<Vec<F>> {
    space
        .entries
        .iter()
        .map(|e| {
            scores.get(e.token_id as usize).copied().ok_or(Error::TokenOutOfRange {
                id: e.token_id,
                vocab_size: scores.len(),
            })
        })
        .collect()
}

fn position(pos: Option<usize>, what: &str) -> Result<usize> {
    pos.ok_or_else(|| Error::Config(format!("prompt encoding lacks the {what} position")))
}

/// Full-model head scoring on an encoded prompt: the relation head reads
/// the fused state, the auxiliary heads read their raw mask states.
pub fn score_heads<F: Float>(
    hidden: &Matrix<F>,
    enc: &PromptEncoding,
    params: &FusionParameters<F>,
    spaces: &TaskSpaces,
    backbone: &dyn Backbone<F>,
) -> Result<HeadOutputs<F>> {
    let drr_m = hidden.row(position(enc.drr_mask_pos, "relation mask")?);
    let ssc_m = hidden.row(position(enc.ssc_mask_pos, "sense mask")?);
    let acp_m = hidden.row(position(enc.acp_mask_pos, "connective mask")?);
    let ssc_c = hidden.row(position(enc.ssc_cls_pos, "sense begin")?);
    let acp_c = hidden.row(position(enc.acp_cls_pos, "connective begin")?);

    let (_, h_aux) = fuse_auxiliary(ssc_c, acp_c, params)?;
    let (_, fused) = fuse_main(drr_m, &h_aux, params)?;

    let drr_scores = restrict_scores(&backbone.mlm_score(&fused)?, &spaces.drr)?;
    let ssc_scores = restrict_scores(&backbone.mlm_score(ssc_m)?, &spaces.ssc)?;
    let acp_scores = restrict_scores(&backbone.mlm_score(acp_m)?, &spaces.acp)?;
    Ok(HeadOutputs {
        drr_probs: softmax(&drr_scores),
        ssc_probs: softmax(&ssc_scores),
        acp_probs: softmax(&acp_scores),
        drr_scores,
        ssc_scores,
        acp_scores,
        fused_state: fused,
    })
}
