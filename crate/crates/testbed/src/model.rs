use linalg_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::FactExample;

/// softmax(w2ᵀ·tanh(w1ᵀ·concat(embed rows of x) + b1) + b2)
///
/// Storage follows the input-major convention: `w1` is (input_len·d_embed × d_hidden)
/// and `w2` is (d_hidden × vocab).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub embed: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Embed,
    W1,
    B1,
    W2,
    B2,
}

/// Gradients; entries for parameters that were not requested stay empty.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    pub embed: Option<Matrix>,
    pub w1: Option<Matrix>,
    pub b1: Option<Vec<f64>>,
    pub w2: Option<Matrix>,
    pub b2: Option<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, p: Param) -> Option<&[f64]> {
        match p {
            Param::Embed => self.embed.as_ref().map(|m| m.as_slice()),
            Param::W1 => self.w1.as_ref().map(|m| m.as_slice()),
            Param::B1 => self.b1.as_deref(),
            Param::W2 => self.w2.as_ref().map(|m| m.as_slice()),
            Param::B2 => self.b2.as_deref(),
        }
    }

    /// `self += s·other` over the parameters present in both.
    pub fn add_scaled(&mut self, s: f64, other: &Grads) {
        fn acc(a: &mut [f64], b: &[f64], s: f64) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        if let (Some(a), Some(b)) = (self.embed.as_mut(), other.embed.as_ref()) {
            acc(a.as_mut_slice(), b.as_slice(), s);
        }
        if let (Some(a), Some(b)) = (self.w1.as_mut(), other.w1.as_ref()) {
            acc(a.as_mut_slice(), b.as_slice(), s);
        }
        if let (Some(a), Some(b)) = (self.b1.as_mut(), other.b1.as_ref()) {
            acc(a, b, s);
        }
        if let (Some(a), Some(b)) = (self.w2.as_mut(), other.w2.as_ref()) {
            acc(a.as_mut_slice(), b.as_slice(), s);
        }
        if let (Some(a), Some(b)) = (self.b2.as_mut(), other.b2.as_ref()) {
            acc(a, b, s);
        }
    }
}

/// Cached activations of a batch forward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub batch: usize,
    /// flattened input tokens, `batch × input_len`
    pub tokens: Vec<u32>,
    /// concatenated embeddings, `batch × input_len·d_embed`
    pub x: Vec<f64>,
    /// hidden activations, `batch × d_hidden`
    pub h: Vec<f64>,
    /// log-probabilities, `batch × vocab`
    pub logp: Vec<f64>,
}

impl Activations {
    pub fn logp_row(&self, i: usize, vocab: usize) -> &[f64] {
        &self.logp[i * vocab..(i + 1) * vocab]
    }
}

impl ToyModel {
    /// Gaussian init: embeddings N(0,1), w1 N(0, 1/(L·d)), w2 N(0, 1/h), zero biases.
    pub fn init(vocab: usize, d_embed: usize, d_hidden: usize, input_len: usize, seed: u64) -> ToyModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |r: usize, c: usize, sd: f64| {
            Matrix::from_fn(r, c, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
        };
        let embed = gauss(vocab, d_embed, 1.0);
        let w1 = gauss(input_len * d_embed, d_hidden, 1.0 / ((input_len * d_embed) as f64).sqrt());
        let w2 = gauss(d_hidden, vocab, 1.0 / (d_hidden as f64).sqrt());
        ToyModel { embed, w1, b1: vec![0.0; d_hidden], w2, b2: vec![0.0; vocab] }
    }

    pub fn zeros(vocab: usize, d_embed: usize, d_hidden: usize, input_len: usize) -> ToyModel {
        ToyModel {
            embed: Matrix::zeros(vocab, d_embed),
            w1: Matrix::zeros(input_len * d_embed, d_hidden),
            b1: vec![0.0; d_hidden],
            w2: Matrix::zeros(d_hidden, vocab),
            b2: vec![0.0; vocab],
        }
    }

    pub fn vocab(&self) -> usize {
        self.embed.rows()
    }

    pub fn d_embed(&self) -> usize {
        self.embed.cols()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn input_len(&self) -> usize {
        self.w1.rows() / self.embed.cols()
    }

    pub fn shapes_consistent(&self) -> bool {
        self.w1.rows() == self.input_len() * self.d_embed()
            && self.b1.len() == self.d_hidden()
            && self.w2.rows() == self.d_hidden()
            && self.w2.cols() == self.vocab()
            && self.b2.len() == self.vocab()
    }

    pub fn is_finite(&self) -> bool {
        self.embed.is_finite()
            && self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }

    pub fn param(&self, p: Param) -> &[f64] {
        match p {
            Param::Embed => self.embed.as_slice(),
            Param::W1 => self.w1.as_slice(),
            Param::B1 => &self.b1,
            Param::W2 => self.w2.as_slice(),
            Param::B2 => &self.b2,
        }
    }

    pub fn param_mut(&mut self, p: Param) -> &mut [f64] {
        match p {
            Param::Embed => self.embed.as_mut_slice(),
            Param::W1 => self.w1.as_mut_slice(),
            Param::B1 => &mut self.b1,
            Param::W2 => self.w2.as_mut_slice(),
            Param::B2 => &mut self.b2,
        }
    }

    /// Probability vector for one input.
    pub fn forward(&self, x: &[u32]) -> Vec<f64> {
        let act = self.forward_tokens(x);
        act.logp.iter().map(|l| l.exp()).collect()
    }

    pub fn forward_examples(&self, examples: &[FactExample]) -> Activations {
        let tokens: Vec<u32> = examples.iter().flat_map(|e| e.input_tokens).collect();
        self.forward_tokens(&tokens)
    }

    /// Fraction of examples whose argmax prediction is the target token.
    pub fn accuracy(&self, examples: &[FactExample]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let v = self.vocab();
        let act = self.forward_examples(examples);
        let hits = examples
            .iter()
            .enumerate()
            .filter(|(i, e)| argmax(act.logp_row(*i, v)) == e.target_token as usize)
            .count();
        hits as f64 / examples.len() as f64
    }

    /// Batch forward over flattened inputs (`len` must be a multiple of input_len).
    pub fn forward_tokens(&self, tokens: &[u32]) -> Activations {
        let l = self.input_len();
        let de = self.d_embed();
        let dh = self.d_hidden();
        let v = self.vocab();
        assert_eq!(tokens.len() % l, 0, "token count not a multiple of input_len");
        let b = tokens.len() / l;

        let mut x = vec![0.0; b * l * de];
        for (slot, &t) in tokens.iter().enumerate() {
            x[slot * de..(slot + 1) * de].copy_from_slice(self.embed.row(t as usize));
        }
        let mut h = vec![0.0; b * dh];
        for i in 0..b {
            h[i * dh..(i + 1) * dh].copy_from_slice(&self.b1);
        }
        gemm(b, l * de, dh, &x, false, self.w1.as_slice(), false, &mut h, 1.0);
        for a in h.iter_mut() {
            *a = a.tanh();
        }
        let mut z = vec![0.0; b * v];
        for i in 0..b {
            z[i * v..(i + 1) * v].copy_from_slice(&self.b2);
        }
        gemm(b, dh, v, &h, false, self.w2.as_slice(), false, &mut z, 1.0);
        for i in 0..b {
            log_softmax_in_place(&mut z[i * v..(i + 1) * v]);
        }
        Activations { batch: b, tokens: tokens.to_vec(), x, h, logp: z }
    }

    /// Backpropagates a gradient w.r.t. the logits (`batch × vocab`, already
    /// scaled by whatever averaging the loss uses).
    pub fn backward(&self, act: &Activations, dz: &[f64], params: &[Param]) -> Grads {
        let l = self.input_len();
        let de = self.d_embed();
        let dh = self.d_hidden();
        let v = self.vocab();
        let b = act.batch;
        assert_eq!(dz.len(), b * v);
        let want = |p: Param| params.contains(&p);
        let mut g = Grads::default();

        if want(Param::W2) {
            // may be non-finite when a caller diverges; callers check
            let mut gw2 = Matrix::zeros(dh, v);
            gemm(dh, b, v, &act.h, true, dz, false, gw2.as_mut_slice(), 0.0);
            g.w2 = Some(gw2);
        }
        if want(Param::B2) {
            let mut gb2 = vec![0.0; v];
            for i in 0..b {
                for (o, d) in gb2.iter_mut().zip(&dz[i * v..(i + 1) * v]) {
                    *o += d;
                }
            }
            g.b2 = Some(gb2);
        }
        if !(want(Param::W1) || want(Param::B1) || want(Param::Embed)) {
            return g;
        }
        // dA = (dZ·w2ᵀ) ⊙ (1 − h²)
        let mut da = vec![0.0; b * dh];
        gemm(b, v, dh, dz, false, self.w2.as_slice(), true, &mut da, 0.0);
        for (d, h) in da.iter_mut().zip(&act.h) {
            *d *= 1.0 - h * h;
        }
        if want(Param::W1) {
            let mut gw1 = Matrix::zeros(l * de, dh);
            gemm(l * de, b, dh, &act.x, true, &da, false, gw1.as_mut_slice(), 0.0);
            g.w1 = Some(gw1);
        }
        if want(Param::B1) {
            let mut gb1 = vec![0.0; dh];
            for i in 0..b {
                for (o, d) in gb1.iter_mut().zip(&da[i * dh..(i + 1) * dh]) {
                    *o += d;
                }
            }
            g.b1 = Some(gb1);
        }
        if want(Param::Embed) {
            let mut dx = vec![0.0; b * l * de];
            gemm(b, dh, l * de, &da, false, self.w1.as_slice(), true, &mut dx, 0.0);
            let mut ge = Matrix::zeros(v, de);
            for (slot, &t) in act.tokens.iter().enumerate() {
                let row = ge.row_mut(t as usize);
                for (o, d) in row.iter_mut().zip(&dx[slot * de..(slot + 1) * de]) {
                    *o += d;
                }
            }
            g.embed = Some(ge);
        }
        g
    }

    /// `param −= step·grad` for every parameter present in `g` and listed in `params`.
    pub fn apply(&mut self, g: &Grads, params: &[Param], step: f64) {
        for &p in params {
            if let Some(gs) = g.get(p) {
                for (w, d) in self.param_mut(p).iter_mut().zip(gs) {
                    *w -= step * d;
                }
            }
        }
    }
}

/// Mean NLL of the targets and its gradient w.r.t. the logits.
pub fn nll_and_dz(act: &Activations, targets: &[u32], vocab: usize) -> (f64, Vec<f64>) {
    let b = act.batch;
    assert_eq!(targets.len(), b);
    let mut dz = vec![0.0; b * vocab];
    let mut loss = 0.0;
    let inv = 1.0 / b as f64;
    for i in 0..b {
        let lp = act.logp_row(i, vocab);
        let y = targets[i] as usize;
        loss -= lp[y];
        let row = &mut dz[i * vocab..(i + 1) * vocab];
        for (d, l) in row.iter_mut().zip(lp) {
            *d = l.exp() * inv;
        }
        row[y] -= inv;
    }
    (loss * inv, dz)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax_in_place(z: &mut [f64]) {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
}

/// C = A·B + beta·C with optional transposes of row-major operands.
/// `a` is (m×k) or, when `ta`, stored as (k×m); likewise `b` is (k×n) or (n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every operand's length to the extents
    // described by (m, k, n) and the strides computed from them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
