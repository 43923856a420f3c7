//! Forward computations: the coupled recurrent update, the time projection,
//! the item-embedding prediction head, the state-change classifier and the
//! per-interaction loss.
//!
//! Static embeddings are one-hot and never materialized: `W · one_hot(k)` is
//! read as column `k` of `W`. A predicted item embedding has length
//! `num_items + n`, laid out as `[static part ‖ dynamic part]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, matvec_acc, sigmoid_scalar, Mat, Parameters};

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Dynamic embedding size.
    pub n: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub feature_dim: usize,
}

impl Dims {
    /// Length of a predicted item embedding.
    pub fn item_vec_len(&self) -> usize {
        self.num_items + self.n
    }
}

/// Every trainable tensor. The same struct holds gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    /// When false the state classifier ignores the user's one-hot part.
    pub state_uses_static: bool,

    pub w1u: Mat,
    pub w2u: Mat,
    pub w3u: Mat,
    pub w4u: Mat,

    pub w1i: Mat,
    pub w2i: Mat,
    pub w3i: Mat,
    pub w4i: Mat,

    /// `n × 1` time-context layer.
    pub wp: Mat,

    pub pw1: Mat,
    pub pw2: Mat,
    pub pw3: Mat,
    pub pw4: Mat,
    /// `(num_items + n) × 1`.
    pub bias: Mat,

    /// `1 × (n + num_users)`.
    pub theta_w: Mat,
    /// `1 × 1`.
    pub theta_b: Mat,
}

pub const TENSOR_NAMES: [&str; 16] = [
    "w1u", "w2u", "w3u", "w4u", "w1i", "w2i", "w3i", "w4i", "wp", "pw1", "pw2", "pw3", "pw4",
    "bias", "theta_w", "theta_b",
];

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            n,
            num_users: du,
            num_items: di,
            feature_dim: f,
        } = dims;
        let d = di + n;
        ModelParams {
            dims,
            state_uses_static: true,
            w1u: Mat::zeros(n, n),
            w2u: Mat::zeros(n, n),
            w3u: Mat::zeros(n, f),
            w4u: Mat::zeros(n, 1),
            w1i: Mat::zeros(n, n),
            w2i: Mat::zeros(n, n),
            w3i: Mat::zeros(n, f),
            w4i: Mat::zeros(n, 1),
            wp: Mat::zeros(n, 1),
            pw1: Mat::zeros(d, n),
            pw2: Mat::zeros(d, du),
            pw3: Mat::zeros(d, n),
            pw4: Mat::zeros(d, di),
            bias: Mat::zeros(d, 1),
            theta_w: Mat::zeros(1, n + du),
            theta_b: Mat::zeros(1, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = ModelParams::zeros(self.dims);
        z.state_uses_static = self.state_uses_static;
        z
    }

    /// Uniform `±1/√fan_in` for the linear layers, `N(0, 1)` for the
    /// time-context layer (fan-in 1).
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
        let mut p = ModelParams::zeros(dims);
        let n = dims.n as f64;
        let rnn = 1.0 / n.sqrt();
        let head = 1.0 / ((2 * dims.n + dims.num_users + dims.num_items) as f64).sqrt();
        let cls = 1.0 / ((dims.n + dims.num_users) as f64).sqrt();
        let fill = |m: &mut Mat, bound: f64, rng: &mut ChaCha8Rng| {
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            m.as_mut_slice().iter_mut().for_each(|x| *x = dist.sample(rng));
        };
        for m in [
            &mut p.w1u, &mut p.w2u, &mut p.w3u, &mut p.w4u, &mut p.w1i, &mut p.w2i, &mut p.w3i,
            &mut p.w4i,
        ] {
            fill(m, rnn, &mut rng);
        }
        for m in [&mut p.pw1, &mut p.pw2, &mut p.pw3, &mut p.pw4, &mut p.bias] {
            fill(m, head, &mut rng);
        }
        fill(&mut p.theta_w, cls, &mut rng);
        fill(&mut p.theta_b, cls, &mut rng);
        let normal = Normal::new(0.0, 1.0).expect("valid sigma");
        p.wp.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = normal.sample(&mut rng));
        p
    }

    pub fn tensors(&self) -> [&Mat; 16] {
        [
            &self.w1u, &self.w2u, &self.w3u, &self.w4u, &self.w1i, &self.w2i, &self.w3i, &self.w4i,
            &self.wp, &self.pw1, &self.pw2, &self.pw3, &self.pw4, &self.bias, &self.theta_w,
            &self.theta_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 16] {
        [
            &mut self.w1u,
            &mut self.w2u,
            &mut self.w3u,
            &mut self.w4u,
            &mut self.w1i,
            &mut self.w2i,
            &mut self.w3i,
            &mut self.w4i,
            &mut self.wp,
            &mut self.pw1,
            &mut self.pw2,
            &mut self.pw3,
            &mut self.pw4,
            &mut self.bias,
            &mut self.theta_w,
            &mut self.theta_b,
        ]
    }

    /// Checks every tensor shape against `dims`.
    pub fn validate(&self) -> Result<()> {
        let expect = ModelParams::zeros(self.dims);
        for ((name, have), want) in TENSOR_NAMES.iter().zip(self.tensors()).zip(expect.tensors()) {
            if have.shape() != want.shape() {
                return Err(Error::shape(
                    format!("{name} {:?}", have.shape()),
                    format!("expected {:?}", want.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        TENSOR_NAMES
            .iter()
            .zip(self.tensors())
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| *n)
    }

    pub fn fill_zero(&mut self) {
        for m in self.tensors_mut() {
            m.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(1.0, b);
        }
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (t, m) in self.tensors().iter().enumerate() {
            let len = m.as_slice().len();
            if idx < len {
                return (t, idx);
            }
            idx -= len;
        }
        panic!("parameter index out of range");
    }

    /// Tensor name of flat parameter `idx`.
    pub fn tensor_name_of(&self, idx: usize) -> &'static str {
        TENSOR_NAMES[self.locate(idx).0]
    }
}

impl Parameters for ModelParams {
    fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    fn param(&self, idx: usize) -> f64 {
        let (t, k) = self.locate(idx);
        self.tensors()[t].as_slice()[k]
    }

    fn set_param(&mut self, idx: usize, value: f64) {
        let (t, k) = self.locate(idx);
        self.tensors_mut()[t].as_mut_slice()[k] = value;
    }
}

/// Current dynamic embeddings and per-entity bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    /// `num_users × n`.
    pub user_dyn: Mat,
    /// `num_items × n`.
    pub item_dyn: Mat,
    pub last_time_user: Vec<Option<f64>>,
    pub last_time_item: Vec<Option<f64>>,
    /// Item of each user's most recent interaction.
    pub prev_item: Vec<Option<usize>>,
}

/// Every entity starts from one shared unit-norm vector drawn from
/// `N(0, 0.1²)`.
pub fn init_state(dims: Dims, seed: u64) -> EmbeddingState {
    assert!(dims.n > 0, "embedding dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let normal = Normal::new(0.0, 0.1).expect("valid sigma");
    let mut v: Vec<f64> = (0..dims.n).map(|_| normal.sample(&mut rng)).collect();
    let mut norm = numkit::norm(&v);
    while norm == 0.0 {
        v = (0..dims.n).map(|_| rng.random::<f64>() - 0.5).collect();
        norm = numkit::norm(&v);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    EmbeddingState {
        user_dyn: Mat::from_fn(dims.num_users, dims.n, |_, c| v[c]),
        item_dyn: Mat::from_fn(dims.num_items, dims.n, |_, c| v[c]),
        last_time_user: vec![None; dims.num_users],
        last_time_item: vec![None; dims.num_items],
        prev_item: vec![None; dims.num_users],
    }
}

impl EmbeddingState {
    pub fn dims_match(&self, dims: &Dims) -> bool {
        self.user_dyn.shape() == (dims.num_users, dims.n)
            && self.item_dyn.shape() == (dims.num_items, dims.n)
            && self.last_time_user.len() == dims.num_users
            && self.last_time_item.len() == dims.num_items
            && self.prev_item.len() == dims.num_users
    }

    /// Writes the post-interaction embeddings of `user` and `item`.
    pub fn commit(&mut self, user: usize, item: usize, u_new: &[f64], i_new: &[f64], timestamp: f64) {
        self.user_dyn.row_mut(user).copy_from_slice(u_new);
        self.item_dyn.row_mut(item).copy_from_slice(i_new);
        let bump = |slot: &mut Option<f64>| {
            *slot = Some(slot.map_or(timestamp, |t| t.max(timestamp)));
        };
        bump(&mut self.last_time_user[user]);
        bump(&mut self.last_time_item[item]);
        self.prev_item[user] = Some(item);
    }

    pub fn max_abs_diff(&self, other: &EmbeddingState) -> f64 {
        let a = self.user_dyn.as_slice().iter().zip(other.user_dyn.as_slice());
        let b = self.item_dyn.as_slice().iter().zip(other.item_dyn.as_slice());
        a.chain(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

fn check_len(what: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() != want {
        return Err(Error::shape(format!("{what} of length {}", v.len()), format!("expected {want}")));
    }
    Ok(())
}

/// Both post-interaction embeddings, each computed from the pre-interaction
/// pair:
/// `u' = σ(W1u·u + W2u·i + W3u·f + W4u·Δu)`,
/// `i' = σ(W1i·i + W2i·u + W3i·f + W4i·Δi)`.
pub fn update_embeddings(
    u_prev: &[f64],
    i_prev: &[f64],
    f: &[f64],
    du: f64,
    di: f64,
    p: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.dims.n;
    check_len("user embedding", u_prev, n)?;
    check_len("item embedding", i_prev, n)?;
    check_len("feature vector", f, p.dims.feature_dim)?;
    Ok(update_unchecked(u_prev, i_prev, f, du, di, p))
}

fn update_unchecked(
    u_prev: &[f64],
    i_prev: &[f64],
    f: &[f64],
    du: f64,
    di: f64,
    p: &ModelParams,
) -> (Vec<f64>, Vec<f64>) {
    let n = p.dims.n;
    let mut zu: Vec<f64> = (0..n).map(|r| p.w4u.get(r, 0) * du).collect();
    matvec_acc(&p.w1u, u_prev, &mut zu);
    matvec_acc(&p.w2u, i_prev, &mut zu);
    matvec_acc(&p.w3u, f, &mut zu);
    let mut zi: Vec<f64> = (0..n).map(|r| p.w4i.get(r, 0) * di).collect();
    matvec_acc(&p.w1i, i_prev, &mut zi);
    matvec_acc(&p.w2i, u_prev, &mut zi);
    matvec_acc(&p.w3i, f, &mut zi);
    zu.iter_mut().for_each(|z| *z = sigmoid_scalar(*z));
    zi.iter_mut().for_each(|z| *z = sigmoid_scalar(*z));
    (zu, zi)
}

/// `(1 + Wp·Δ) ⊙ u`. Exactly `u` when `Δ == 0`.
pub fn project_user(u: &[f64], delta: f64, p: &ModelParams) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(k, &x)| (1.0 + p.wp.get(k, 0) * delta) * x)
        .collect()
}

/// `W1·û + W2[:, user] + W3·i_prev + W4[:, prev_item] + B`.
///
/// `prev_item_dyn` is the current dynamic embedding of the user's previous
/// item; a user without history passes a zero vector and `None`.
pub fn predict_item_embedding(
    u_proj: &[f64],
    user_idx: usize,
    prev_item_dyn: &[f64],
    prev_item_idx: Option<usize>,
    p: &ModelParams,
) -> Result<Vec<f64>> {
    check_len("projected user embedding", u_proj, p.dims.n)?;
    check_len("previous item embedding", prev_item_dyn, p.dims.n)?;
    if user_idx >= p.dims.num_users {
        return Err(Error::Index {
            what: "user",
            index: user_idx,
            len: p.dims.num_users,
        });
    }
    if let Some(k) = prev_item_idx.filter(|&k| k >= p.dims.num_items) {
        return Err(Error::Index {
            what: "item",
            index: k,
            len: p.dims.num_items,
        });
    }
    Ok(predict_unchecked(u_proj, user_idx, prev_item_dyn, prev_item_idx, p))
}

fn predict_unchecked(
    u_proj: &[f64],
    user_idx: usize,
    prev_item_dyn: &[f64],
    prev_item_idx: Option<usize>,
    p: &ModelParams,
) -> Vec<f64> {
    let d = p.dims.item_vec_len();
    let mut j: Vec<f64> = (0..d)
        .map(|r| {
            let mut v = p.bias.get(r, 0) + p.pw2.get(r, user_idx);
            if let Some(k) = prev_item_idx {
                v += p.pw4.get(r, k);
            }
            v
        })
        .collect();
    matvec_acc(&p.pw1, u_proj, &mut j);
    matvec_acc(&p.pw3, prev_item_dyn, &mut j);
    j
}

/// Unweighted loss terms of one interaction plus their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub prediction: f64,
    pub user_reg: f64,
    pub item_reg: f64,
    pub state_ce: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn add(&mut self, o: &LossComponents) {
        self.prediction += o.prediction;
        self.user_reg += o.user_reg;
        self.item_reg += o.item_reg;
        self.state_ce += o.state_ce;
        self.total += o.total;
    }

    pub fn is_finite(&self) -> bool {
        [self.prediction, self.user_reg, self.item_reg, self.state_ce, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_u: f64,
    pub lambda_i: f64,
    /// Zero disables the state-change term.
    pub state_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_u: 1.0,
            lambda_i: 1.0,
            state_scale: 1.0,
        }
    }
}

/// Squared distance from `j_pred` to `[one_hot(true_idx), true_dyn]`.
pub(crate) fn sq_dist_to_item(j_pred: &[f64], num_items: usize, true_idx: usize, true_dyn: &[f64]) -> f64 {
    let (stat, dynp) = j_pred.split_at(num_items);
    let mut s = 0.0;
    for (k, &v) in stat.iter().enumerate() {
        let t = if k == true_idx { 1.0 } else { 0.0 };
        s += (v - t) * (v - t);
    }
    s + numkit::sq_dist(dynp, true_dyn)
}

/// `‖j̃ − [one_hot(true), i(t⁻)]‖ + λU‖u' − u‖ + λI‖i' − i‖`.
#[allow(clippy::too_many_arguments)]
pub fn interaction_loss(
    j_pred: &[f64],
    true_item_idx: usize,
    true_item_dyn_prev: &[f64],
    u_new: &[f64],
    u_prev: &[f64],
    i_new: &[f64],
    i_prev: &[f64],
    lambda_u: f64,
    lambda_i: f64,
) -> LossComponents {
    let num_items = j_pred.len() - true_item_dyn_prev.len();
    let prediction = sq_dist_to_item(j_pred, num_items, true_item_idx, true_item_dyn_prev).sqrt();
    let user_reg = numkit::sq_dist(u_new, u_prev).sqrt();
    let item_reg = numkit::sq_dist(i_new, i_prev).sqrt();
    LossComponents {
        prediction,
        user_reg,
        item_reg,
        state_ce: 0.0,
        total: prediction + lambda_u * user_reg + lambda_i * item_reg,
    }
}

pub(crate) fn state_logit(u_new: &[f64], user_idx: usize, p: &ModelParams) -> f64 {
    let n = p.dims.n;
    let w = p.theta_w.row(0);
    let mut s = numkit::dot(&w[..n], u_new) + p.theta_b.get(0, 0);
    if p.state_uses_static {
        s += w[n + user_idx];
    }
    s
}

/// Probability that this interaction changes the user's state, from
/// `[u_new ‖ one_hot(user)]`.
pub fn predict_state_change(u_new: &[f64], user_idx: usize, p: &ModelParams) -> f64 {
    sigmoid_scalar(state_logit(u_new, user_idx, p))
}

pub fn cross_entropy(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Everything one interaction needs from the stream.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub user: usize,
    pub item: usize,
    pub prev_item: Option<usize>,
    pub features: &'a [f64],
    pub delta_u: f64,
    pub delta_i: f64,
    pub label: u8,
}

/// Forward quantities of one interaction, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub user: usize,
    pub item: usize,
    pub prev_item: Option<usize>,
    pub label: u8,
    pub delta_u: f64,
    pub delta_i: f64,
    pub features: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub i_prev: Vec<f64>,
    /// Previous item's dynamic embedding (zeros without history).
    pub k_dyn: Vec<f64>,
    pub u_proj: Vec<f64>,
    pub j_pred: Vec<f64>,
    pub u_new: Vec<f64>,
    pub i_new: Vec<f64>,
    pub state_prob: f64,
    pub loss: LossComponents,
}

/// Runs one interaction against `state` without modifying it.
pub fn step_forward(p: &ModelParams, state: &EmbeddingState, x: StepInput<'_>, w: &LossWeights) -> StepTrace {
    let n = p.dims.n;
    let u_prev = state.user_dyn.row(x.user).to_vec();
    let i_prev = state.item_dyn.row(x.item).to_vec();
    let k_dyn = match x.prev_item {
        Some(k) => state.item_dyn.row(k).to_vec(),
        None => vec![0.0; n],
    };
    let u_proj = project_user(&u_prev, x.delta_u, p);
    let j_pred = predict_unchecked(&u_proj, x.user, &k_dyn, x.prev_item, p);
    let (u_new, i_new) = update_unchecked(&u_prev, &i_prev, x.features, x.delta_u, x.delta_i, p);
    let mut loss = interaction_loss(&j_pred, x.item, &i_prev, &u_new, &u_prev, &i_new, &i_prev, w.lambda_u, w.lambda_i);
    let state_prob = predict_state_change(&u_new, x.user, p);
    if w.state_scale != 0.0 {
        loss.state_ce = cross_entropy(state_prob, x.label);
        loss.total += w.state_scale * loss.state_ce;
    }
    StepTrace {
        user: x.user,
        item: x.item,
        prev_item: x.prev_item,
        label: x.label,
        delta_u: x.delta_u,
        delta_i: x.delta_i,
        features: x.features.to_vec(),
        u_prev,
        i_prev,
        k_dyn,
        u_proj,
        j_pred,
        u_new,
        i_new,
        state_prob,
        loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(n: usize, du: usize, di: usize, f: usize) -> Dims {
        Dims {
            n,
            num_users: du,
            num_items: di,
            feature_dim: f,
        }
    }

    #[test]
    fn init_state_is_shared_unit_and_deterministic() {
        let d = dims(6, 3, 4, 1);
        let s = init_state(d, 9);
        assert_eq!(s.user_dyn.row(0), s.user_dyn.row(2));
        assert_eq!(s.user_dyn.row(0), s.item_dyn.row(3));
        assert!((numkit::norm(s.user_dyn.row(1)) - 1.0).abs() < 1e-12);
        assert_eq!(s, init_state(d, 9));
        assert!(s.last_time_user.iter().all(Option::is_none));
    }

    #[test]
    fn zero_params_update_to_half() {
        let p = ModelParams::zeros(dims(3, 1, 1, 2));
        let (u, i) = update_embeddings(&[0.3, -1.0, 2.0], &[1.0, 1.0, 1.0], &[4.0, 5.0], 2.0, 3.0, &p).unwrap();
        assert_eq!(u, vec![0.5; 3]);
        assert_eq!(i, vec![0.5; 3]);
    }

    #[test]
    fn scalar_update_closed_form() {
        let mut p = ModelParams::zeros(dims(1, 1, 1, 0));
        p.w1u.set(0, 0, 1.0);
        p.w2u.set(0, 0, 1.0);
        let (u, _) = update_embeddings(&[0.0], &[3f64.ln()], &[], 0.0, 0.0, &p).unwrap();
        assert!((u[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn symmetric_rnns_give_equal_outputs() {
        let mut p = ModelParams::init(dims(4, 2, 2, 2), 3);
        p.w1i = p.w1u.clone();
        p.w2i = p.w2u.clone();
        p.w3i = p.w3u.clone();
        p.w4i = p.w4u.clone();
        let v = [0.1, -0.2, 0.3, 0.4];
        let (u, i) = update_embeddings(&v, &v, &[1.0, 2.0], 0.7, 0.7, &p).unwrap();
        assert_eq!(u, i);
    }

    #[test]
    fn update_rejects_bad_dims() {
        let p = ModelParams::zeros(dims(2, 1, 1, 1));
        assert!(update_embeddings(&[0.0], &[0.0, 0.0], &[0.0], 0.0, 0.0, &p).is_err());
        assert!(update_embeddings(&[0.0; 2], &[0.0; 2], &[], 0.0, 0.0, &p).is_err());
    }

    #[test]
    fn projection_examples() {
        let mut p = ModelParams::init(dims(2, 1, 1, 1), 1);
        let u = [1.0, 2.0];
        assert_eq!(project_user(&u, 0.0, &p), u.to_vec());
        p.wp = Mat::from_vec(2, 1, vec![0.1, -0.1]).unwrap();
        let h = project_user(&u, 2.0, &p);
        assert!((h[0] - 1.2).abs() < 1e-15 && (h[1] - 1.6).abs() < 1e-15);
        p.wp.fill(0.0);
        assert_eq!(project_user(&u, 17.0, &p), u.to_vec());
    }

    #[test]
    fn prediction_head_examples() {
        let d = dims(1, 2, 2, 0);
        let mut p = ModelParams::zeros(d);
        p.bias = Mat::from_vec(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let j = predict_item_embedding(&[5.0], 1, &[7.0], Some(0), &p).unwrap();
        assert_eq!(j, vec![0.1, 0.2, 0.3]);

        let mut p = ModelParams::zeros(d);
        p.pw4 = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let j = predict_item_embedding(&[5.0], 0, &[7.0], Some(1), &p).unwrap();
        assert_eq!(j, vec![2.0, 4.0, 6.0]);

        // four terms plus bias by hand
        let mut p = ModelParams::zeros(d);
        p.pw1 = Mat::from_vec(3, 1, vec![1.0, 0.0, 2.0]).unwrap();
        p.pw2 = Mat::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.25], vec![1.0, 1.0]]).unwrap();
        p.pw3 = Mat::from_vec(3, 1, vec![0.0, 3.0, -1.0]).unwrap();
        p.pw4 = Mat::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0], vec![0.0, 0.5]]).unwrap();
        p.bias = Mat::from_vec(3, 1, vec![0.01, 0.02, 0.03]).unwrap();
        let j = predict_item_embedding(&[2.0], 1, &[0.5], Some(0), &p).unwrap();
        // r0: 1*2 + 0 + 0 + 0 + .01; r1: 0 + .25 + 1.5 + 2 + .02; r2: 4 + 1 - .5 + 0 + .03
        let want = [2.01, 3.77, 4.53];
        for (a, b) in j.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{j:?}");
        }

        assert!(matches!(
            predict_item_embedding(&[2.0], 2, &[0.5], None, &p),
            Err(Error::Index { what: "user", .. })
        ));
        assert!(matches!(
            predict_item_embedding(&[2.0], 0, &[0.5], Some(2), &p),
            Err(Error::Index { what: "item", .. })
        ));
    }

    #[test]
    fn one_hot_columns_match_materialized_matvec() {
        let p = ModelParams::init(dims(3, 4, 5, 1), 11);
        for k in 0..4 {
            let mut e = vec![0.0; 4];
            e[k] = 1.0;
            assert_eq!(numkit::matvec(&p.pw2, &e).unwrap(), p.pw2.column(k));
        }
        let u = [0.2, 0.1, -0.3];
        let kd = [0.5, 0.5, 0.1];
        let j = predict_item_embedding(&u, 2, &kd, Some(4), &p).unwrap();
        let mut e_u = vec![0.0; 4];
        e_u[2] = 1.0;
        let mut e_i = vec![0.0; 5];
        e_i[4] = 1.0;
        let terms = [
            numkit::matvec(&p.pw1, &u).unwrap(),
            numkit::matvec(&p.pw2, &e_u).unwrap(),
            numkit::matvec(&p.pw3, &kd).unwrap(),
            numkit::matvec(&p.pw4, &e_i).unwrap(),
            p.bias.column(0),
        ];
        for r in 0..j.len() {
            let s: f64 = terms.iter().map(|t| t[r]).sum();
            assert!((s - j[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let dyn_prev = [0.3, 0.4];
        let j = [0.0, 1.0, 0.3, 0.4];
        let l = interaction_loss(&j, 1, &dyn_prev, &[0.1, 0.2], &[0.1, 0.2], &[0.5, 0.5], &[0.5, 0.5], 1.0, 1.0);
        assert_eq!(l.total, 0.0);

        let l = interaction_loss(&j, 0, &dyn_prev, &[0.1, 0.9], &[0.1, 0.2], &[0.0, 0.5], &[0.5, 0.5], 0.0, 0.0);
        assert_eq!(l.total, l.prediction);
        assert!(l.user_reg > 0.0 && l.item_reg > 0.0);

        let l = interaction_loss(&[0.0, 0.0, 0.0], 0, &[0.0], &[0.0], &[0.0], &[0.0], &[0.0], 1.0, 1.0);
        assert_eq!(l.prediction, 1.0);
    }

    #[test]
    fn state_classifier_examples() {
        let d = dims(2, 3, 1, 1);
        let mut p = ModelParams::zeros(d);
        assert_eq!(predict_state_change(&[0.4, 0.6], 1, &p), 0.5);
        p.theta_b.set(0, 0, 1000.0);
        assert!((predict_state_change(&[0.4, 0.6], 1, &p) - 1.0).abs() < 1e-12);
        let mut p = ModelParams::zeros(d);
        p.theta_w.set(0, 2 + 1, 3f64.ln());
        assert!((predict_state_change(&[0.4, 0.6], 1, &p) - 0.75).abs() < 1e-15);
        assert_eq!(predict_state_change(&[0.4, 0.6], 0, &p), 0.5);
        p.state_uses_static = false;
        assert_eq!(predict_state_change(&[0.4, 0.6], 1, &p), 0.5);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(0.5, 0) - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(0.5, 1) - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(1.0, 1) < 1e-11);
        assert!((cross_entropy(0.75, 0) - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(0.0, 1).is_finite());
    }

    #[test]
    fn params_validate_and_index() {
        let p = ModelParams::init(dims(2, 3, 4, 1), 0);
        p.validate().unwrap();
        let total = p.num_params();
        assert_eq!(p.tensor_name_of(0), "w1u");
        assert_eq!(p.tensor_name_of(total - 1), "theta_b");
        let mut bad = p.clone();
        bad.w3u = Mat::zeros(2, 2);
        assert!(bad.validate().is_err());
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, n)
    }

    proptest! {
        #[test]
        fn projection_identity_and_linearity(seed in any::<u64>(), u in arb_vec(5), delta in -3.0f64..3.0, a in -4.0f64..4.0) {
            let p = ModelParams::init(dims(5, 1, 1, 1), seed);
            prop_assert_eq!(project_user(&u, 0.0, &p), u.clone());
            let scaled: Vec<f64> = u.iter().map(|x| a * x).collect();
            let lhs = project_user(&scaled, delta, &p);
            let rhs = project_user(&u, delta, &p);
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - a * r).abs() < 1e-12);
            }
        }

        #[test]
        fn update_outputs_in_open_unit_interval(seed in any::<u64>(), u in arb_vec(4), i in arb_vec(4), du in -2.0f64..2.0) {
            let p = ModelParams::init(dims(4, 1, 1, 1), seed);
            let (un, inn) = update_embeddings(&u, &i, &[0.3], du, -du, &p).unwrap();
            prop_assert!(un.iter().chain(&inn).all(|&v| v > 0.0 && v < 1.0));
            // order-independence: the item update computed first is identical
            let mut q = p.clone();
            std::mem::swap(&mut q.w1u, &mut q.w1i);
            std::mem::swap(&mut q.w2u, &mut q.w2i);
            std::mem::swap(&mut q.w3u, &mut q.w3i);
            std::mem::swap(&mut q.w4u, &mut q.w4i);
            let (in2, un2) = update_embeddings(&i, &u, &[0.3], -du, du, &q).unwrap();
            prop_assert_eq!(un, un2);
            prop_assert_eq!(inn, in2);
        }
    }
}
