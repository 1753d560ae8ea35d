//! Factored image-conditioned next-word model.
//!
//! Given an image feature vector `I` and the preceding words, the next word is
//! scored as `logits = Uᵀ ((V·C) ⊙ (σ·I))`, where `C` is a learned convex
//! combination of the last few word embeddings. Equivalently the per-image
//! word table is `Uᵀ · diag(σ·I) · V`, applied to `C`. After training, an
//! image is placed in word space by the linear readout `Vᵀ(σ·I) / j`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::numerics::{dot, matvec, matvec_t, softmax_slice, ParamStore, Tensor};
use crate::seqdata::EventCorpus;
use crate::{rng, Error, Result};

const U: usize = 0;
const SIGMA: usize = 1;
const V: usize = 2;
const CTX: usize = 3;

/// Default number of context positions.
pub const CONTEXT_WINDOW: usize = 3;
/// Default factor rank `j`.
pub const DEFAULT_RANK: usize = 32;

/// Trainable factors plus the frozen base word table.
///
/// `U` is `j × vocab`, `σ` is `j × d`, `V` is `j × k`; the context weights
/// are stored as logits so that their softmax stays on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct MMParams {
    pub store: ParamStore,
    pub word_embed: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MMCorpusItem {
    pub description: Vec<usize>,
    pub image_feat: Vec<f64>,
}

impl MMParams {
    /// Uniform `[-0.1, 0.1]` factors and uniform context weights.
    pub fn init(
        rank: usize,
        d: usize,
        window: usize,
        word_embed: Tensor,
        seed: u64,
    ) -> Result<Self> {
        if rank == 0 || d == 0 || window == 0 || word_embed.shape().len() != 2 {
            return Err(Error::Config(
                "multimodal model dimensions must be positive".into(),
            ));
        }
        let (vocab, k) = (word_embed.rows(), word_embed.cols());
        let mut r = rng::stream(seed, 0);
        let mut draw = |rows: usize, cols: usize| {
            Tensor::matrix(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| rng::uniform(&mut r, 0.1))
                    .collect(),
            )
        };
        let mut store = ParamStore::new();
        store.add("U", draw(rank, vocab)?);
        store.add("sigma", draw(rank, d)?);
        store.add("V", draw(rank, k)?);
        store.add("ctx_logits", Tensor::zeros(&[window]));
        Ok(MMParams { store, word_embed })
    }

    /// Reassembles parameters from a store laid out as by [`MMParams::init`].
    pub fn from_parts(store: ParamStore, word_embed: Tensor) -> Result<Self> {
        let bad = || Error::Schema("inconsistent multimodal model parameter shapes".into());
        if store.len() != 4 || word_embed.shape().len() != 2 {
            return Err(bad());
        }
        let (u, s, v, c) = (
            store.value(U),
            store.value(SIGMA),
            store.value(V),
            store.value(CTX),
        );
        let j = u.shape()[0];
        let ok = u.shape() == [j, word_embed.rows()]
            && s.shape().len() == 2
            && s.rows() == j
            && v.shape() == [j, word_embed.cols()]
            && c.shape().len() == 1
            && j > 0
            && !c.is_empty()
            && s.cols() > 0;
        if !ok {
            return Err(bad());
        }
        Ok(MMParams { store, word_embed })
    }

    pub fn rank(&self) -> usize {
        self.store.value(U).rows()
    }

    pub fn vocab(&self) -> usize {
        self.word_embed.rows()
    }

    pub fn word_dim(&self) -> usize {
        self.word_embed.cols()
    }

    pub fn feat_dim(&self) -> usize {
        self.store.value(SIGMA).cols()
    }

    pub fn window(&self) -> usize {
        self.store.value(CTX).len()
    }

    pub fn u(&self) -> &Tensor {
        self.store.value(U)
    }

    pub fn sigma(&self) -> &Tensor {
        self.store.value(SIGMA)
    }

    pub fn v(&self) -> &Tensor {
        self.store.value(V)
    }

    /// Mixing weights over context positions, most recent word first.
    pub fn ctx_weights(&self) -> Vec<f64> {
        softmax_slice(self.store.value(CTX).data(), None).expect("finite context logits")
    }

    fn check_image(&self, image: &[f64]) -> Result<()> {
        if image.len() != self.feat_dim() {
            return Err(Error::dimension(
                "image",
                &[self.feat_dim()],
                &[image.len()],
            ));
        }
        Ok(())
    }

    fn image_code(&self, image: &[f64]) -> Vec<f64> {
        matvec(self.sigma().data(), self.rank(), self.feat_dim(), image)
    }
}

/// `Uᵀ · diag(σ·image) · V`, a `vocab × k` matrix.
pub fn cond_word_matrix(p: &MMParams, image: &[f64]) -> Result<Tensor> {
    p.check_image(image)?;
    let diag = p.image_code(image);
    let (j, vocab, k) = (p.rank(), p.vocab(), p.word_dim());
    let (u, v) = (p.u().data(), p.v().data());
    let mut out = vec![0.0; vocab * k];
    for f in 0..j {
        let s = diag[f];
        for w in 0..vocab {
            let uw = u[f * vocab + w] * s;
            if uw == 0.0 {
                continue;
            }
            for c in 0..k {
                out[w * k + c] += uw * v[f * k + c];
            }
        }
    }
    Tensor::matrix(vocab, k, out)
}

/// Renormalized weights for a context of `len` words.
fn position_weights(p: &MMParams, len: usize) -> Vec<f64> {
    let m = len.min(p.window());
    let logits = &p.store.value(CTX).data()[..m];
    softmax_slice(logits, None).expect("finite context logits")
}

/// Weighted average of the last `min(|context|, window)` word embeddings,
/// weights renormalized over the available positions.
pub fn context_vector(p: &MMParams, context: &[usize]) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    if let Some(&w) = context.iter().find(|&&w| w >= p.vocab()) {
        return Err(Error::Schema(format!(
            "word id {w} outside vocabulary of {}",
            p.vocab()
        )));
    }
    let weights = position_weights(p, context.len());
    let mut c = vec![0.0; p.word_dim()];
    for (i, wt) in weights.iter().enumerate() {
        let word = context[context.len() - 1 - i];
        for (ci, e) in c.iter_mut().zip(p.word_embed.row(word)) {
            *ci += wt * e;
        }
    }
    Ok(c)
}

struct Forward {
    weights: Vec<f64>,
    ctx: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    psi: Vec<f64>,
    probs: Vec<f64>,
}

fn forward(p: &MMParams, context: &[usize], image: &[f64]) -> Result<Forward> {
    p.check_image(image)?;
    let ctx = context_vector(p, context)?;
    let j = p.rank();
    let a = matvec(p.v().data(), j, p.word_dim(), &ctx);
    let b = p.image_code(image);
    let psi: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let logits = matvec_t(p.u().data(), j, p.vocab(), &psi);
    let probs = softmax_slice(&logits, None)?;
    Ok(Forward {
        weights: position_weights(p, context.len()),
        ctx,
        a,
        b,
        psi,
        probs,
    })
}

/// Distribution over the next word given the context words and an image.
pub fn predict_next(p: &MMParams, context: &[usize], image: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(p, context, image)?.probs)
}

/// Negative log-likelihood of `target`; accumulates its gradient into
/// `p.store`'s gradient slots.
fn nll_backward(p: &mut MMParams, context: &[usize], target: usize, image: &[f64]) -> Result<f64> {
    let fw = forward(p, context, image)?;
    let (j, vocab, k, d) = (p.rank(), p.vocab(), p.word_dim(), p.feat_dim());
    let nll = -libm::log(fw.probs[target]);
    let mut dlogits = fw.probs.clone();
    dlogits[target] -= 1.0;

    // logits = Uᵀ ψ
    let dpsi = matvec(p.store.value(U).data(), j, vocab, &dlogits);
    {
        let gu = p.store.grad_mut(U).data_mut();
        for f in 0..j {
            let pf = fw.psi[f];
            for w in 0..vocab {
                gu[f * vocab + w] += pf * dlogits[w];
            }
        }
    }
    let da: Vec<f64> = dpsi.iter().zip(&fw.b).map(|(g, b)| g * b).collect();
    let db: Vec<f64> = dpsi.iter().zip(&fw.a).map(|(g, a)| g * a).collect();
    {
        let gv = p.store.grad_mut(V).data_mut();
        for f in 0..j {
            for c in 0..k {
                gv[f * k + c] += da[f] * fw.ctx[c];
            }
        }
    }
    {
        let gs = p.store.grad_mut(SIGMA).data_mut();
        for f in 0..j {
            for c in 0..d {
                gs[f * d + c] += db[f] * image[c];
            }
        }
    }
    let dctx = matvec_t(p.store.value(V).data(), j, k, &da);
    // ctx = Σ_i w_i E[context[-1-i]], w = softmax(logits[..m])
    let dw: Vec<f64> = (0..fw.weights.len())
        .map(|i| dot(&dctx, p.word_embed.row(context[context.len() - 1 - i])))
        .collect();
    let s = dot(&fw.weights, &dw);
    let gc = p.store.grad_mut(CTX).data_mut();
    for (i, (w, g)) in fw.weights.iter().zip(&dw).enumerate() {
        gc[i] += w * (g - s);
    }
    Ok(nll)
}

fn validate_items(p: &MMParams, items: &[MMCorpusItem]) -> Result<()> {
    for (i, it) in items.iter().enumerate() {
        if it.description.len() < 2 {
            return Err(Error::Schema(format!(
                "item {i}: description shorter than 2 words"
            )));
        }
        if it.description.iter().any(|&w| w >= p.vocab()) {
            return Err(Error::Schema(format!(
                "item {i}: word id outside vocabulary"
            )));
        }
        p.check_image(&it.image_feat)?;
    }
    Ok(())
}

fn prefix_pairs(items: &[MMCorpusItem]) -> Vec<(usize, usize)> {
    items
        .iter()
        .enumerate()
        .flat_map(|(i, it)| (1..it.description.len()).map(move |n| (i, n)))
        .collect()
}

/// Mean next-word negative log-likelihood over every (prefix, next word) pair.
pub fn corpus_nll(p: &MMParams, items: &[MMCorpusItem]) -> Result<f64> {
    let pairs = prefix_pairs(items);
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(i, n) in &pairs {
        let it = &items[i];
        let probs = predict_next(p, &it.description[..n], &it.image_feat)?;
        total -= libm::log(probs[it.description[n]]);
    }
    Ok(total / pairs.len() as f64)
}

/// Sum of pair NLLs with gradients accumulated into `p.store` (not zeroed
/// first). Exposed for gradient checking.
pub fn corpus_nll_backward(p: &mut MMParams, items: &[MMCorpusItem]) -> Result<f64> {
    let mut total = 0.0;
    for (i, n) in prefix_pairs(items) {
        let it = &items[i];
        total += nll_backward(p, &it.description[..n], it.description[n], &it.image_feat)?;
    }
    Ok(total)
}

/// Per-pair SGD on next-word NLL, pairs visited in a seeded shuffled order
/// each epoch. Returns the trained parameters and the corpus NLL measured
/// after every epoch.
pub fn train_mm(
    items: &[MMCorpusItem],
    params: &MMParams,
    epochs: usize,
    rate: f64,
    seed: u64,
) -> Result<(MMParams, Vec<f64>)> {
    let mut p = params.clone();
    validate_items(&p, items)?;
    let mut order = prefix_pairs(items);
    let mut r = rng::stream(seed, 0);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut r);
        for &(i, n) in &order {
            let it = &items[i];
            p.store.zero_grads();
            let nll = nll_backward(
                &mut p,
                &it.description[..n],
                it.description[n],
                &it.image_feat,
            )?;
            if !nll.is_finite() {
                return Err(Error::NumericalFault(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            crate::numerics::sgd_step(&mut p.store, rate, crate::numerics::Direction::Descent)
                .map_err(|e| e.context(format!("epoch {epoch}")))?;
        }
        let nll = corpus_nll(&p, items)?;
        if !nll.is_finite() {
            return Err(Error::NumericalFault(format!(
                "non-finite loss in epoch {epoch}"
            )));
        }
        history.push(nll);
    }
    p.store.zero_grads();
    Ok((p, history))
}

/// `Vᵀ(σ·image) / j`: the image's point in word space.
pub fn embed_image(p: &MMParams, image: &[f64]) -> Result<Vec<f64>> {
    p.check_image(image)?;
    let code = p.image_code(image);
    let j = p.rank();
    let mut out = matvec_t(p.v().data(), j, p.word_dim(), &code);
    out.iter_mut().for_each(|x| *x /= j as f64);
    Ok(out)
}

/// Training data drawn from storyline corpora. Every entity becomes a word
/// whose base embedding is its text vector, and every consecutive pair
/// `(a, b)` in a storyline becomes the description `[a, b]` of `b`'s image.
/// Pairs whose second entity has no image are skipped.
pub fn corpus_items(corpora: &[EventCorpus]) -> Result<(Vec<MMCorpusItem>, Tensor)> {
    let mut rows = Vec::new();
    let mut items = Vec::new();
    for c in corpora {
        let offset = rows.len();
        rows.extend(c.entities.iter().map(|e| e.text_vec.clone()));
        for sl in &c.storylines {
            for w in sl.nodes.windows(2) {
                if let Some(img) = &c.entities[w[1]].image_feat {
                    items.push(MMCorpusItem {
                        description: vec![offset + w[0], offset + w[1]],
                        image_feat: img.clone(),
                    });
                }
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Schema("no storyline pair has image features".into()));
    }
    Ok((items, Tensor::from_rows(&rows)?))
}

/// Synthetic corpus where the second word is decided by a binary image class.
///
/// Words `0..vocab-2` are context words; word `vocab-2+c` follows whenever
/// the image belongs to class `c`. Images are a per-class Gaussian prototype
/// plus small noise. Returns items, their classes and the word table.
pub fn synth_conditioned_corpus(
    n_items: usize,
    vocab: usize,
    k: usize,
    d: usize,
    seed: u64,
) -> (Vec<MMCorpusItem>, Vec<usize>, Tensor) {
    assert!(vocab >= 3, "need at least one context word and two targets");
    let mut r = rng::stream(seed, 0);
    let protos: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..d).map(|_| rng::normal(&mut r)).collect())
        .collect();
    let embed = Tensor::matrix(
        vocab,
        k,
        (0..vocab * k).map(|_| rng::normal(&mut r)).collect(),
    )
    .expect("finite embeddings");
    let mut items = Vec::with_capacity(n_items);
    let mut classes = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let c = r.random_range(0..2);
        let first = r.random_range(0..vocab - 2);
        let image = protos[c]
            .iter()
            .map(|x| x + 0.1 * rng::normal(&mut r))
            .collect();
        items.push(MMCorpusItem {
            description: vec![first, vocab - 2 + c],
            image_feat: image,
        });
        classes.push(c);
    }
    (items, classes, embed)
}
