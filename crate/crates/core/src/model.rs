//! Latent factor scorers and the pairwise ranking objective.
//!
//! Parameters are Θ = (U, V, W): user embeddings, item embeddings, and a
//! flat vector of extra scorer parameters (empty for plain matrix
//! factorization). The two-tower scorer concatenates an elementwise product
//! path with a small MLP over the concatenated embeddings.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Which scoring function interprets Θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    /// Inner product of user and item embeddings.
    Mf,
    /// Two-tower: elementwise product path plus MLP path, joint readout.
    NeuMf,
}

impl std::str::FromStr for Scorer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Scorer::Mf),
            "neumf" => Ok(Scorer::NeuMf),
            other => Err(Error::Config(format!("unknown scorer {other:?}"))),
        }
    }
}

/// MLP layout for the two-tower scorer: layers [2d -> d -> d/2] with
/// rectifier activations, then a linear readout over the concatenated
/// product path (d) and MLP output (d/2), plus an output bias.
#[derive(Debug, Clone, Copy)]
pub struct NeuMfLayout {
    pub d: usize,
}

impl NeuMfLayout {
    pub fn new(d: usize) -> Self {
        NeuMfLayout { d }
    }
    pub fn h1(&self) -> usize {
        self.d
    }
    pub fn h2(&self) -> usize {
        self.d / 2
    }
    pub fn w1_len(&self) -> usize {
        self.h1() * 2 * self.d
    }
    pub fn w2_len(&self) -> usize {
        self.h2() * self.h1()
    }
    pub fn readout_len(&self) -> usize {
        self.d + self.h2()
    }
    /// Offsets into the flat W vector: (w1, b1, w2, b2, w_out, b_out).
    pub fn offsets(&self) -> (usize, usize, usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = w1 + self.w1_len();
        let w2 = b1 + self.h1();
        let b2 = w2 + self.w2_len();
        let w_out = b2 + self.h2();
        let b_out = w_out + self.readout_len();
        (w1, b1, w2, b2, w_out, b_out)
    }
    pub fn total_len(&self) -> usize {
        self.offsets().5 + 1
    }
}

/// All learnable parameters, row-major embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub scorer: Scorer,
    pub d: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub user_emb: Vec<f64>,
    pub item_emb: Vec<f64>,
    pub w: Vec<f64>,
}

/// A training example: user, an item with positive feedback, an item
/// without.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos_item: u32,
    pub neg_item: u32,
}

/// Exact gradient of the per-example loss, sparse over the touched rows.
#[derive(Debug, Clone)]
pub struct PerExampleGrad {
    pub user: u32,
    pub user_grad: Vec<f64>,
    pub pos_item: u32,
    pub pos_item_grad: Vec<f64>,
    pub neg_item: u32,
    pub neg_item_grad: Vec<f64>,
    pub w_grad: Vec<f64>,
}

impl PerExampleGrad {
    /// L2 norm of the user group (the single touched U row).
    pub fn user_norm(&self) -> f64 {
        l2_norm(&self.user_grad)
    }
    /// L2 norm of the item group (both touched V rows jointly).
    pub fn item_norm(&self) -> f64 {
        (sq_norm(&self.pos_item_grad) + sq_norm(&self.neg_item_grad)).sqrt()
    }
    pub fn w_norm(&self) -> f64 {
        l2_norm(&self.w_grad)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    sq_norm(v).sqrt()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softplus, ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ModelParams {
    /// Seed-controlled initialization: embeddings i.i.d. uniform in
    /// [-1/sqrt(d), 1/sqrt(d)], MLP weights uniform scaled by fan-in, biases
    /// zero. Draw order is fixed (U, then V, then W).
    pub fn init(
        scorer: Scorer,
        d: usize,
        n_users: usize,
        n_items: usize,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        if scorer == Scorer::NeuMf && !d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "two-tower scorer needs an even embedding dim, got {d}"
            )));
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let bound = 1.0 / (d as f64).sqrt();
        let draw = |n: usize, b: f64, rng: &mut ChaCha20Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-b..b)).collect()
        };
        let user_emb = draw(n_users * d, bound, &mut rng);
        let item_emb = draw(n_items * d, bound, &mut rng);
        let w = match scorer {
            Scorer::Mf => Vec::new(),
            Scorer::NeuMf => {
                let layout = NeuMfLayout::new(d);
                let mut w = Vec::with_capacity(layout.total_len());
                let fan1 = 1.0 / ((2 * d) as f64).sqrt();
                w.extend(draw(layout.w1_len(), fan1, &mut rng));
                w.resize(w.len() + layout.h1(), 0.0); // b1
                let fan2 = 1.0 / (layout.h1() as f64).sqrt();
                w.extend(draw(layout.w2_len(), fan2, &mut rng));
                w.resize(w.len() + layout.h2(), 0.0); // b2
                let fan_out = 1.0 / (layout.readout_len() as f64).sqrt();
                w.extend(draw(layout.readout_len(), fan_out, &mut rng));
                w.push(0.0); // b_out
                w
            }
        };
        Ok(ModelParams {
            scorer,
            d,
            n_users,
            n_items,
            user_emb,
            item_emb,
            w,
        })
    }

    pub fn user_row(&self, u: u32) -> &[f64] {
        let i = u as usize * self.d;
        &self.user_emb[i..i + self.d]
    }

    pub fn item_row(&self, v: u32) -> &[f64] {
        let i = v as usize * self.d;
        &self.item_emb[i..i + self.d]
    }

    fn check_indices(&self, u: u32, v: u32) -> Result<()> {
        if u as usize >= self.n_users {
            return Err(Error::IndexOutOfRange {
                kind: "user",
                index: u as usize,
                size: self.n_users,
            });
        }
        if v as usize >= self.n_items {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: v as usize,
                size: self.n_items,
            });
        }
        Ok(())
    }

    /// Checked score under the configured scorer.
    pub fn score(&self, u: u32, v: u32) -> Result<f64> {
        self.check_indices(u, v)?;
        match self.scorer {
            Scorer::Mf => Ok(score_mf_unchecked(self, u, v)),
            Scorer::NeuMf => {
                self.check_w_len()?;
                Ok(neumf_forward(self, u, v).score)
            }
        }
    }

    /// Unchecked score for hot loops; callers validate bounds once.
    pub fn score_unchecked(&self, u: u32, v: u32) -> f64 {
        match self.scorer {
            Scorer::Mf => score_mf_unchecked(self, u, v),
            Scorer::NeuMf => neumf_forward(self, u, v).score,
        }
    }

    fn check_w_len(&self) -> Result<()> {
        let expected = match self.scorer {
            Scorer::Mf => 0,
            Scorer::NeuMf => NeuMfLayout::new(self.d).total_len(),
        };
        if self.w.len() != expected {
            return Err(Error::ParamSizeMismatch {
                expected,
                got: self.w.len(),
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.user_emb.iter().all(|x| x.is_finite())
            && self.item_emb.iter().all(|x| x.is_finite())
            && self.w.iter().all(|x| x.is_finite())
    }
}

/// Inner-product score.
pub fn score_mf(params: &ModelParams, u: u32, v: u32) -> Result<f64> {
    params.check_indices(u, v)?;
    Ok(score_mf_unchecked(params, u, v))
}

fn score_mf_unchecked(params: &ModelParams, u: u32, v: u32) -> f64 {
    dot(params.user_row(u), params.item_row(v))
}

/// Two-tower score.
pub fn score_neumf(params: &ModelParams, u: u32, v: u32) -> Result<f64> {
    params.check_indices(u, v)?;
    params.check_w_len()?;
    Ok(neumf_forward(params, u, v).score)
}

/// Cached forward pass of the two-tower scorer, kept for backprop.
struct NeuMfForward {
    score: f64,
    gmf: Vec<f64>,
    x0: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
}

fn neumf_forward(params: &ModelParams, u: u32, v: u32) -> NeuMfForward {
    let layout = NeuMfLayout::new(params.d);
    let (w1_off, b1_off, w2_off, b2_off, wout_off, bout_off) = layout.offsets();
    let d = params.d;
    let zu = params.user_row(u);
    let zv = params.item_row(v);
    let w = &params.w;

    let gmf: Vec<f64> = (0..d).map(|i| zu[i] * zv[i]).collect();
    let mut x0 = Vec::with_capacity(2 * d);
    x0.extend_from_slice(zu);
    x0.extend_from_slice(zv);

    let a1: Vec<f64> = (0..layout.h1())
        .map(|i| {
            let row = &w[w1_off + i * 2 * d..w1_off + (i + 1) * 2 * d];
            dot(row, &x0) + w[b1_off + i]
        })
        .collect();
    let h1: Vec<f64> = a1.iter().map(|&x| x.max(0.0)).collect();

    let a2: Vec<f64> = (0..layout.h2())
        .map(|i| {
            let row = &w[w2_off + i * layout.h1()..w2_off + (i + 1) * layout.h1()];
            dot(row, &h1) + w[b2_off + i]
        })
        .collect();
    let h2: Vec<f64> = a2.iter().map(|&x| x.max(0.0)).collect();

    let w_gmf = &w[wout_off..wout_off + d];
    let w_mlp = &w[wout_off + d..wout_off + d + layout.h2()];
    let score = dot(w_gmf, &gmf) + dot(w_mlp, &h2) + w[bout_off];

    NeuMfForward {
        score,
        gmf,
        x0,
        a1,
        h1,
        a2,
        h2,
    }
}

/// Backprop of d(score)/d(z_u, z_v, W) given a cached forward pass.
/// Accumulates `coeff * gradient` into the provided buffers.
#[allow(clippy::too_many_arguments)]
fn neumf_backward(
    params: &ModelParams,
    fwd: &NeuMfForward,
    u: u32,
    v: u32,
    coeff: f64,
    gu: &mut [f64],
    gv: &mut [f64],
    gw: &mut [f64],
) {
    let layout = NeuMfLayout::new(params.d);
    let (w1_off, b1_off, w2_off, b2_off, wout_off, bout_off) = layout.offsets();
    let d = params.d;
    let zu = params.user_row(u);
    let zv = params.item_row(v);
    let w = &params.w;

    let w_gmf = &w[wout_off..wout_off + d];
    let w_mlp = &w[wout_off + d..wout_off + d + layout.h2()];

    // Readout.
    for i in 0..d {
        gw[wout_off + i] += coeff * fwd.gmf[i];
    }
    for j in 0..layout.h2() {
        gw[wout_off + d + j] += coeff * fwd.h2[j];
    }
    gw[bout_off] += coeff;

    // GMF path into the embeddings.
    for i in 0..d {
        gu[i] += coeff * w_gmf[i] * zv[i];
        gv[i] += coeff * w_gmf[i] * zu[i];
    }

    // MLP path.
    let da2: Vec<f64> = (0..layout.h2())
        .map(|j| {
            if fwd.a2[j] > 0.0 {
                coeff * w_mlp[j]
            } else {
                0.0
            }
        })
        .collect();
    for j in 0..layout.h2() {
        if da2[j] == 0.0 {
            continue;
        }
        for i in 0..layout.h1() {
            gw[w2_off + j * layout.h1() + i] += da2[j] * fwd.h1[i];
        }
        gw[b2_off + j] += da2[j];
    }
    let mut dh1 = vec![0.0; layout.h1()];
    for j in 0..layout.h2() {
        if da2[j] == 0.0 {
            continue;
        }
        let row = &w[w2_off + j * layout.h1()..w2_off + (j + 1) * layout.h1()];
        for i in 0..layout.h1() {
            dh1[i] += da2[j] * row[i];
        }
    }
    let da1: Vec<f64> = (0..layout.h1())
        .map(|i| if fwd.a1[i] > 0.0 { dh1[i] } else { 0.0 })
        .collect();
    for i in 0..layout.h1() {
        if da1[i] == 0.0 {
            continue;
        }
        for j in 0..2 * d {
            gw[w1_off + i * 2 * d + j] += da1[i] * fwd.x0[j];
        }
        gw[b1_off + i] += da1[i];
    }
    // x0 = [z_u, z_v]
    for i in 0..layout.h1() {
        if da1[i] == 0.0 {
            continue;
        }
        let row = &w[w1_off + i * 2 * d..w1_off + (i + 1) * 2 * d];
        for j in 0..d {
            gu[j] += da1[i] * row[j];
            gv[j] += da1[i] * row[d + j];
        }
    }
}

fn check_triple(triple: &Triple) -> Result<()> {
    if triple.pos_item == triple.neg_item {
        return Err(Error::Config(format!(
            "triple for user {} has identical positive and negative item {}",
            triple.user, triple.pos_item
        )));
    }
    Ok(())
}

/// Pairwise ranking loss of one triple:
/// softplus(-(f(u,v) - f(u,v'))) plus (lambda/2) times the squared norms of
/// the touched parameters (the three embedding rows and all of W).
pub fn bpr_loss(params: &ModelParams, triple: &Triple, lambda: f64) -> Result<f64> {
    check_triple(triple)?;
    let s_pos = params.score(triple.user, triple.pos_item)?;
    let s_neg = params.score(triple.user, triple.neg_item)?;
    let margin = s_pos - s_neg;
    let reg = 0.5
        * lambda
        * (sq_norm(params.user_row(triple.user))
            + sq_norm(params.item_row(triple.pos_item))
            + sq_norm(params.item_row(triple.neg_item))
            + sq_norm(&params.w));
    Ok(softplus(-margin) + reg)
}

/// Exact gradient of [`bpr_loss`] with respect to the touched rows and W.
pub fn per_example_grad(
    params: &ModelParams,
    triple: &Triple,
    lambda: f64,
) -> Result<PerExampleGrad> {
    check_triple(triple)?;
    params.check_indices(triple.user, triple.pos_item)?;
    params.check_indices(triple.user, triple.neg_item)?;
    params.check_w_len()?;

    let d = params.d;
    let mut gu = vec![0.0; d];
    let mut gv_pos = vec![0.0; d];
    let mut gv_neg = vec![0.0; d];
    let mut gw = vec![0.0; params.w.len()];

    match params.scorer {
        Scorer::Mf => {
            let zu = params.user_row(triple.user);
            let zp = params.item_row(triple.pos_item);
            let zn = params.item_row(triple.neg_item);
            let margin = dot(zu, zp) - dot(zu, zn);
            let coeff = -sigmoid(-margin);
            for i in 0..d {
                gu[i] = coeff * (zp[i] - zn[i]);
                gv_pos[i] = coeff * zu[i];
                gv_neg[i] = -coeff * zu[i];
            }
        }
        Scorer::NeuMf => {
            let fwd_pos = neumf_forward(params, triple.user, triple.pos_item);
            let fwd_neg = neumf_forward(params, triple.user, triple.neg_item);
            let margin = fwd_pos.score - fwd_neg.score;
            let coeff = -sigmoid(-margin);
            neumf_backward(
                params,
                &fwd_pos,
                triple.user,
                triple.pos_item,
                coeff,
                &mut gu,
                &mut gv_pos,
                &mut gw,
            );
            neumf_backward(
                params,
                &fwd_neg,
                triple.user,
                triple.neg_item,
                -coeff,
                &mut gu,
                &mut gv_neg,
                &mut gw,
            );
        }
    }

    if lambda != 0.0 {
        let zu = params.user_row(triple.user);
        let zp = params.item_row(triple.pos_item);
        let zn = params.item_row(triple.neg_item);
        for i in 0..d {
            gu[i] += lambda * zu[i];
            gv_pos[i] += lambda * zp[i];
            gv_neg[i] += lambda * zn[i];
        }
        for (g, w) in gw.iter_mut().zip(&params.w) {
            *g += lambda * w;
        }
    }

    Ok(PerExampleGrad {
        user: triple.user,
        user_grad: gu,
        pos_item: triple.pos_item,
        pos_item_grad: gv_pos,
        neg_item: triple.neg_item,
        neg_item_grad: gv_neg,
        w_grad: gw,
    })
}

/// Versioned checkpoint: parameters plus the training RNG streams, so a run
/// resumes exactly where it stopped. Round-trips bit-exactly through JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    pub params: ModelParams,
    pub rng_batch: ChaCha20Rng,
    pub rng_noise: ChaCha20Rng,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer(&mut file, self)?;
        use std::io::Write;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_mf(d: usize, rows_u: &[&[f64]], rows_v: &[&[f64]]) -> ModelParams {
        ModelParams {
            scorer: Scorer::Mf,
            d,
            n_users: rows_u.len(),
            n_items: rows_v.len(),
            user_emb: rows_u.concat(),
            item_emb: rows_v.concat(),
            w: Vec::new(),
        }
    }

    #[test]
    fn mf_score_zero_vector() {
        let p = toy_mf(2, &[&[0.0, 0.0]], &[&[1.0, 2.0], &[3.0, -4.0]]);
        assert_eq!(score_mf(&p, 0, 0).unwrap(), 0.0);
        assert_eq!(score_mf(&p, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn mf_score_dot_product() {
        let p = toy_mf(2, &[&[1.0, 2.0]], &[&[3.0, -1.0]]);
        assert_eq!(score_mf(&p, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn mf_score_orthogonal() {
        let p = toy_mf(2, &[&[1.0, 0.0]], &[&[0.0, 5.0]]);
        assert_eq!(score_mf(&p, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn mf_score_out_of_range() {
        let p = toy_mf(2, &[&[1.0, 0.0]], &[&[0.0, 5.0]]);
        assert!(score_mf(&p, 1, 0).is_err());
        assert!(score_mf(&p, 0, 7).is_err());
    }

    fn toy_neumf(d: usize, n_users: usize, n_items: usize, seed: u64) -> ModelParams {
        ModelParams::init(Scorer::NeuMf, d, n_users, n_items, seed).unwrap()
    }

    #[test]
    fn neumf_zero_w_scores_zero() {
        let mut p = toy_neumf(4, 2, 3, 1);
        p.w.iter_mut().for_each(|x| *x = 0.0);
        assert_eq!(score_neumf(&p, 0, 0).unwrap(), 0.0);
        assert_eq!(score_neumf(&p, 1, 2).unwrap(), 0.0);
    }

    #[test]
    fn neumf_gmf_degenerate_reduces_to_dot() {
        let mut p = toy_neumf(4, 2, 3, 2);
        let layout = NeuMfLayout::new(4);
        let (_, _, _, _, wout_off, bout_off) = layout.offsets();
        p.w.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..4 {
            p.w[wout_off + i] = 1.0; // product-path readout all ones
        }
        p.w[bout_off] = 0.0;
        let got = score_neumf(&p, 1, 2).unwrap();
        let want = dot(p.user_row(1), p.item_row(2));
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn neumf_hand_computed_toy() {
        // d = 2: W layout is w1(2x4), b1(2), w2(1x2), b2(1), w_out(3), b_out.
        let d = 2;
        let layout = NeuMfLayout::new(d);
        let mut w = vec![0.0; layout.total_len()];
        // w1 rows: [1,0,0,0] and [0,1,1,0]; b1 = [0.5, -0.1]
        w[0] = 1.0;
        w[5] = 1.0;
        w[6] = 1.0;
        let (_, b1, w2, b2, wout, bout) = layout.offsets();
        w[b1] = 0.5;
        w[b1 + 1] = -0.1;
        // w2 row: [2, -1]; b2 = 0.25
        w[w2] = 2.0;
        w[w2 + 1] = -1.0;
        w[b2] = 0.25;
        // w_out = [1, -1, 0.5]; b_out = 0.125
        w[wout] = 1.0;
        w[wout + 1] = -1.0;
        w[wout + 2] = 0.5;
        w[bout] = 0.125;

        let p = ModelParams {
            scorer: Scorer::NeuMf,
            d,
            n_users: 1,
            n_items: 1,
            user_emb: vec![1.0, -2.0],
            item_emb: vec![0.5, 3.0],
            w,
        };
        // gmf = (0.5, -6); x0 = (1, -2, 0.5, 3)
        // a1 = (1*1 + 0.5, 1*(-2) + 1*0.5 - 0.1) = (1.5, -1.6); h1 = (1.5, 0)
        // a2 = 2*1.5 - 1*0 + 0.25 = 3.25; h2 = 3.25
        // score = 1*0.5 + (-1)*(-6) + 0.5*3.25 + 0.125 = 0.5 + 6 + 1.625 + 0.125
        let got = score_neumf(&p, 0, 0).unwrap();
        assert!((got - 8.25).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn neumf_w_size_mismatch_rejected() {
        let mut p = toy_neumf(4, 2, 3, 3);
        p.w.pop();
        assert!(matches!(
            score_neumf(&p, 0, 0),
            Err(Error::ParamSizeMismatch { .. })
        ));
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.693147 is the pinned expected value
    fn bpr_loss_equal_scores_is_log_two() {
        let p = toy_mf(2, &[&[0.0, 0.0]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = Triple {
            user: 0,
            pos_item: 0,
            neg_item: 1,
        };
        let loss = bpr_loss(&p, &t, 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn bpr_loss_saturates_to_zero() {
        let p = toy_mf(1, &[&[1.0]], &[&[1e4], &[-1e4]]);
        let t = Triple {
            user: 0,
            pos_item: 0,
            neg_item: 1,
        };
        assert!(bpr_loss(&p, &t, 0.0).unwrap() < 1e-300);
    }

    #[test]
    fn bpr_loss_margin_one() {
        let p = toy_mf(1, &[&[1.0]], &[&[1.0], &[0.0]]);
        let t = Triple {
            user: 0,
            pos_item: 0,
            neg_item: 1,
        };
        let loss = bpr_loss(&p, &t, 0.0).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn grad_saturated_margin_vanishes() {
        let p = toy_mf(1, &[&[1.0]], &[&[1e3], &[-1e3]]);
        let t = Triple {
            user: 0,
            pos_item: 0,
            neg_item: 1,
        };
        let g = per_example_grad(&p, &t, 0.0).unwrap();
        assert!(g.user_norm() < 1e-100);
        assert!(g.item_norm() < 1e-100);
    }

    #[test]
    fn grad_mf_matches_symbolic_form() {
        // d(loss)/d(z_u) = -sigma(-m) (z_v - z_v') + lambda z_u
        let zu = [0.3, -0.7];
        let zp = [1.2, 0.4];
        let zn = [-0.5, 0.9];
        let lambda = 0.3;
        let p = toy_mf(2, &[&zu], &[&zp, &zn]);
        let t = Triple {
            user: 0,
            pos_item: 0,
            neg_item: 1,
        };
        let m = dot(&zu, &zp) - dot(&zu, &zn);
        let c = -sigmoid(-m);
        let g = per_example_grad(&p, &t, lambda).unwrap();
        for i in 0..2 {
            assert!((g.user_grad[i] - (c * (zp[i] - zn[i]) + lambda * zu[i])).abs() < 1e-14);
            assert!((g.pos_item_grad[i] - (c * zu[i] + lambda * zp[i])).abs() < 1e-14);
            assert!((g.neg_item_grad[i] - (-c * zu[i] + lambda * zn[i])).abs() < 1e-14);
        }
    }

    /// Central finite differences over every touched coordinate.
    fn finite_diff_grad(
        params: &ModelParams,
        triple: &Triple,
        lambda: f64,
        step: f64,
    ) -> PerExampleGrad {
        let d = params.d;
        let probe = |mutate: &dyn Fn(&mut ModelParams, f64)| -> f64 {
            let mut plus = params.clone();
            mutate(&mut plus, step);
            let mut minus = params.clone();
            mutate(&mut minus, -step);
            (bpr_loss(&plus, triple, lambda).unwrap() - bpr_loss(&minus, triple, lambda).unwrap())
                / (2.0 * step)
        };
        let u = triple.user as usize;
        let vp = triple.pos_item as usize;
        let vn = triple.neg_item as usize;
        let user_grad: Vec<f64> = (0..d)
            .map(|i| probe(&|p: &mut ModelParams, h: f64| p.user_emb[u * d + i] += h))
            .collect();
        let pos_item_grad: Vec<f64> = (0..d)
            .map(|i| probe(&|p: &mut ModelParams, h: f64| p.item_emb[vp * d + i] += h))
            .collect();
        let neg_item_grad: Vec<f64> = (0..d)
            .map(|i| probe(&|p: &mut ModelParams, h: f64| p.item_emb[vn * d + i] += h))
            .collect();
        let w_grad: Vec<f64> = (0..params.w.len())
            .map(|i| probe(&|p: &mut ModelParams, h: f64| p.w[i] += h))
            .collect();
        PerExampleGrad {
            user: triple.user,
            user_grad,
            pos_item: triple.pos_item,
            pos_item_grad,
            neg_item: triple.neg_item,
            neg_item_grad,
            w_grad,
        }
    }

    fn assert_close(a: &[f64], b: &[f64], what: &str) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let tol = 1e-8 + 1e-4 * x.abs().max(y.abs());
            assert!(
                (x - y).abs() <= tol,
                "{what}[{i}]: analytic {x} vs finite-diff {y}"
            );
        }
    }

    #[test]
    fn grad_matches_finite_differences_both_scorers() {
        use rand::Rng;
        let mut rng = stream_rng(99, Stream::Init);
        for scorer in [Scorer::Mf, Scorer::NeuMf] {
            for trial in 0..20 {
                let d = 4;
                let mut p = ModelParams::init(scorer, d, 3, 5, 1000 + trial).unwrap();
                // Perturb away from the symmetric init so paths activate.
                p.user_emb
                    .iter_mut()
                    .for_each(|x| *x += rng.gen_range(-0.5..0.5));
                p.item_emb
                    .iter_mut()
                    .for_each(|x| *x += rng.gen_range(-0.5..0.5));
                p.w.iter_mut().for_each(|x| *x += rng.gen_range(-0.5..0.5));
                let pos_item = rng.gen_range(0..5);
                let t = Triple {
                    user: rng.gen_range(0..3),
                    pos_item,
                    // a BPR triple never repeats the item
                    neg_item: (pos_item + 1 + rng.gen_range(0..4)) % 5,
                };
                let lambda = rng.gen_range(0.0..0.5);
                let g = per_example_grad(&p, &t, lambda).unwrap();
                let fd = finite_diff_grad(&p, &t, lambda, 1e-5);
                assert_close(&g.user_grad, &fd.user_grad, "user");
                assert_close(&g.pos_item_grad, &fd.pos_item_grad, "pos_item");
                assert_close(&g.neg_item_grad, &fd.neg_item_grad, "neg_item");
                assert_close(&g.w_grad, &fd.w_grad, "w");
            }
        }
    }

    #[test]
    fn loss_nonnegative_and_decreasing_in_margin() {
        let mut margins = Vec::new();
        for s in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let p = toy_mf(1, &[&[1.0]], &[&[s], &[0.0]]);
            let t = Triple {
                user: 0,
                pos_item: 0,
                neg_item: 1,
            };
            margins.push(bpr_loss(&p, &t, 0.0).unwrap());
        }
        for w in margins.windows(2) {
            assert!(w[0] > w[1]);
        }
        assert!(margins.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn mf_symmetry_swapping_roles() {
        let p = toy_mf(3, &[&[0.1, 0.2, 0.3]], &[&[0.4, 0.5, 0.6]]);
        let swapped = ModelParams {
            scorer: Scorer::Mf,
            d: 3,
            n_users: 1,
            n_items: 1,
            user_emb: p.item_emb.clone(),
            item_emb: p.user_emb.clone(),
            w: Vec::new(),
        };
        assert_eq!(
            score_mf(&p, 0, 0).unwrap(),
            score_mf(&swapped, 0, 0).unwrap()
        );
    }

    #[test]
    fn checkpoint_roundtrips_exactly() {
        use rand::RngCore;
        let params = ModelParams::init(Scorer::NeuMf, 4, 3, 4, 7).unwrap();
        // Mid-stream RNG state must survive the round trip too.
        let mut rng_batch = stream_rng(7, Stream::Batch);
        let mut rng_noise = stream_rng(7, Stream::Noise);
        for _ in 0..13 {
            rng_batch.next_u64();
        }
        rng_noise.next_u32();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            step: 42,
            params,
            rng_batch,
            rng_noise,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);
        // Behavioral equality: both streams continue identically.
        let mut a = ckpt.rng_batch.clone();
        let mut b = loaded.rng_batch.clone();
        for _ in 0..8 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn init_rejects_odd_dim_for_two_tower() {
        assert!(ModelParams::init(Scorer::NeuMf, 5, 2, 2, 0).is_err());
        assert!(ModelParams::init(Scorer::Mf, 5, 2, 2, 0).is_ok());
    }
}
