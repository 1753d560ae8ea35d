//! Recurrent generator policy over an event's entity vocabulary.
//!
//! Each channel (txt, img, mm) owns an independent single-layer LSTM. At every
//! step the channel's hidden state is projected into entity-vector space and
//! scored against every candidate's vector for that channel; visited entities
//! are masked out before the softmax. Generation mixes the three per-channel
//! distributions with weights λ.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::numerics::{
    dot, matvec, matvec_t, sgd_step, sigmoid, softmax_slice, Direction, ParamStore, Tensor,
};
use crate::seqdata::{normalize_sequence, EventCorpus, ModalSequence, Storyline};
use crate::{rng, Error, Modality, Result};

const W_X: usize = 0;
const W_H: usize = 1;
const BIAS: usize = 2;
const W_OUT: usize = 3;

/// Default hidden size.
pub const DEFAULT_HIDDEN: usize = 16;

/// An event's entities with their vectors on every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub event_id: String,
    pub names: Vec<String>,
    vectors: [Tensor; 3],
}

impl CandidateSet {
    /// `mm` is derived as `img - txt`.
    pub fn new(
        event_id: impl Into<String>,
        names: Vec<String>,
        txt: Tensor,
        img: Tensor,
    ) -> Result<Self> {
        if !txt.same_shape(&img) || txt.rows() != names.len() {
            return Err(Error::dimension("candidate set", txt.shape(), img.shape()));
        }
        let mm = Tensor::new(
            txt.shape().to_vec(),
            img.data()
                .iter()
                .zip(txt.data())
                .map(|(i, t)| i - t)
                .collect(),
        )?;
        Ok(CandidateSet {
            event_id: event_id.into(),
            names,
            vectors: [txt, img, mm],
        })
    }

    pub fn from_corpus(corpus: &EventCorpus) -> Result<Self> {
        if corpus.entities.is_empty() {
            return Err(Error::Schema(format!(
                "event {:?} has no entities",
                corpus.event_id
            )));
        }
        let mut txt = Vec::with_capacity(corpus.entities.len());
        let mut img = Vec::with_capacity(corpus.entities.len());
        for e in &corpus.entities {
            txt.push(e.text_vec.clone());
            img.push(e.channel(Modality::Img)?);
        }
        CandidateSet::new(
            corpus.event_id.clone(),
            corpus.entities.iter().map(|e| e.name.clone()).collect(),
            Tensor::from_rows(&txt)?,
            Tensor::from_rows(&img)?,
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].cols()
    }

    pub fn channel(&self, m: Modality) -> &Tensor {
        &self.vectors[m.index()]
    }

    pub fn vector(&self, m: Modality, entity: usize) -> &[f64] {
        self.vectors[m.index()].row(entity)
    }

    /// The three channel matrices along a node list, optionally re-expressed
    /// relative to their first row.
    pub fn modal_sequence(&self, nodes: &[usize], normalize: bool) -> ModalSequence {
        let seq = ModalSequence {
            txt: self.sequence(Modality::Txt, nodes),
            img: self.sequence(Modality::Img, nodes),
            mm: self.sequence(Modality::Mm, nodes),
        };
        if normalize {
            normalize_sequence(&seq)
        } else {
            seq
        }
    }

    /// `T × k` matrix of one channel along a node list.
    pub fn sequence(&self, m: Modality, nodes: &[usize]) -> Tensor {
        let rows: Vec<Vec<f64>> = nodes.iter().map(|&n| self.vector(m, n).to_vec()).collect();
        Tensor::from_rows(&rows).expect("consistent candidate rows")
    }
}

/// One channel's recurrent network.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmNet {
    pub store: ParamStore,
}

impl LstmNet {
    fn init(k: usize, h: usize, scale: f64, r: &mut rng::Rng) -> Result<Self> {
        let mut draw = |rows: usize, cols: usize| {
            Tensor::matrix(
                rows,
                cols,
                (0..rows * cols).map(|_| rng::uniform(r, scale)).collect(),
            )
        };
        let mut store = ParamStore::new();
        store.add("w_x", draw(4 * h, k)?);
        store.add("w_h", draw(4 * h, h)?);
        store.add("bias", Tensor::zeros(&[4 * h]));
        store.add("w_out", draw(k, h)?);
        Ok(LstmNet { store })
    }

    pub fn hidden(&self) -> usize {
        self.store.value(W_H).cols()
    }

    pub fn input_dim(&self) -> usize {
        self.store.value(W_X).cols()
    }
}

/// Per-channel generator weights θ = {θ_txt, θ_img, θ_mm}.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub nets: [LstmNet; 3],
}

impl GeneratorParams {
    /// Uniform `[-0.1, 0.1]` weights, zero biases.
    pub fn init(k: usize, h: usize, seed: u64) -> Result<Self> {
        Self::init_scaled(k, h, seed, 0.1)
    }

    pub fn init_scaled(k: usize, h: usize, seed: u64, scale: f64) -> Result<Self> {
        if k == 0 || h == 0 {
            return Err(Error::Config(
                "generator dimensions must be positive".into(),
            ));
        }
        let mut r = rng::stream(seed, 0);
        Ok(GeneratorParams {
            nets: [
                LstmNet::init(k, h, scale, &mut r)?,
                LstmNet::init(k, h, scale, &mut r)?,
                LstmNet::init(k, h, scale, &mut r)?,
            ],
        })
    }

    pub fn from_nets(nets: [LstmNet; 3]) -> Result<Self> {
        let (k, h) = (nets[0].input_dim(), nets[0].hidden());
        for n in &nets {
            let s = &n.store;
            let ok = s.len() == 4
                && s.value(W_X).shape() == [4 * h, k]
                && s.value(W_H).shape() == [4 * h, h]
                && s.value(BIAS).shape() == [4 * h]
                && s.value(W_OUT).shape() == [k, h];
            if !ok {
                return Err(Error::Schema(
                    "inconsistent generator parameter shapes".into(),
                ));
            }
        }
        Ok(GeneratorParams { nets })
    }

    pub fn dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.nets[0].hidden()
    }

    pub fn net(&self, m: Modality) -> &LstmNet {
        &self.nets[m.index()]
    }

    pub fn net_mut(&mut self, m: Modality) -> &mut LstmNet {
        &mut self.nets[m.index()]
    }

    pub fn zero_grads(&mut self) {
        self.nets.iter_mut().for_each(|n| n.store.zero_grads());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    fn zeros(h: usize) -> Self {
        CellState {
            h: vec![0.0; h],
            c: vec![0.0; h],
        }
    }
}

/// Recurrent state after consuming a storyline prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub cells: [CellState; 3],
    /// Entities consumed so far, in order; `visited.len() == t + 1`.
    pub visited: Vec<usize>,
    pub t: usize,
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tc: Vec<f64>,
}

fn cell_forward(net: &LstmNet, x: &[f64], prev: &CellState) -> (CellState, StepCache) {
    let h = net.hidden();
    let s = &net.store;
    let mut z = matvec(s.value(W_X).data(), 4 * h, x.len(), x);
    let zh = matvec(s.value(W_H).data(), 4 * h, h, &prev.h);
    for ((zi, a), b) in z.iter_mut().zip(&zh).zip(s.value(BIAS).data()) {
        *zi += a + b;
    }
    for (idx, zi) in z.iter_mut().enumerate() {
        *zi = if (2 * h..3 * h).contains(&idx) {
            libm::tanh(*zi)
        } else {
            sigmoid(*zi)
        };
    }
    let gates = z;
    let mut c = vec![0.0; h];
    let mut tc = vec![0.0; h];
    let mut hn = vec![0.0; h];
    for u in 0..h {
        let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
        c[u] = f * prev.c[u] + i * g;
        tc[u] = libm::tanh(c[u]);
        hn[u] = o * tc[u];
    }
    (
        CellState { h: hn, c },
        StepCache {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            gates,
            tc,
        },
    )
}

/// Backward through one cell step. `dh`/`dc` are gradients w.r.t. this
/// step's outputs; returns gradients w.r.t. the previous hidden and cell.
fn cell_backward(
    store: &mut ParamStore,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let h = dh.len();
    let g = &cache.gates;
    let mut dz = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for u in 0..h {
        let (i, f, gg, o) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
        let tc = cache.tc[u];
        let d_o = dh[u] * tc;
        let dct = dc[u] + dh[u] * o * (1.0 - tc * tc);
        let di = dct * gg;
        let dg = dct * i;
        let df = dct * cache.c_prev[u];
        dc_prev[u] = dct * f;
        dz[u] = di * i * (1.0 - i);
        dz[h + u] = df * f * (1.0 - f);
        dz[2 * h + u] = dg * (1.0 - gg * gg);
        dz[3 * h + u] = d_o * o * (1.0 - o);
    }
    let k = cache.x.len();
    {
        let gw = store.grad_mut(W_X).data_mut();
        for (r, dzr) in dz.iter().enumerate() {
            if *dzr == 0.0 {
                continue;
            }
            for (w, x) in gw[r * k..(r + 1) * k].iter_mut().zip(&cache.x) {
                *w += dzr * x;
            }
        }
    }
    {
        let gw = store.grad_mut(W_H).data_mut();
        for (r, dzr) in dz.iter().enumerate() {
            if *dzr == 0.0 {
                continue;
            }
            for (w, x) in gw[r * h..(r + 1) * h].iter_mut().zip(&cache.h_prev) {
                *w += dzr * x;
            }
        }
    }
    for (b, d) in store.grad_mut(BIAS).data_mut().iter_mut().zip(&dz) {
        *b += d;
    }
    let dh_prev = matvec_t(store.value(W_H).data(), 4 * h, h, &dz);
    (dh_prev, dc_prev)
}

fn check_cells(cells: &[CellState; 3]) -> Result<()> {
    for (m, c) in cells.iter().enumerate() {
        if c.h.iter().chain(&c.c).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFault(format!(
                "non-finite recurrent activation on channel {}",
                Modality::ALL[m]
            )));
        }
    }
    Ok(())
}

/// One recurrent update on every channel from the previous node's vectors.
pub fn step(
    params: &GeneratorParams,
    cells: &[CellState; 3],
    inputs: [&[f64]; 3],
) -> Result<[CellState; 3]> {
    let k = params.dim();
    for x in inputs {
        if x.len() != k {
            return Err(Error::dimension("policy step", &[k], &[x.len()]));
        }
    }
    let out = [0, 1, 2].map(|m| cell_forward(&params.nets[m], inputs[m], &cells[m]).0);
    check_cells(&out)?;
    Ok(out)
}

impl PolicyState {
    /// State after consuming the start entity.
    pub fn start(params: &GeneratorParams, cands: &CandidateSet, start: usize) -> Result<Self> {
        if start >= cands.len() {
            return Err(Error::Schema(format!(
                "start index {start} outside vocabulary"
            )));
        }
        if cands.dim() != params.dim() {
            return Err(Error::Transfer {
                expected: params.dim(),
                got: cands.dim(),
            });
        }
        let zero = [0, 1, 2].map(|_| CellState::zeros(params.hidden()));
        let cells = step(params, &zero, Modality::ALL.map(|m| cands.vector(m, start)))?;
        Ok(PolicyState {
            cells,
            visited: vec![start],
            t: 0,
        })
    }

    /// State after additionally consuming `entity`.
    pub fn advance(
        &self,
        params: &GeneratorParams,
        cands: &CandidateSet,
        entity: usize,
    ) -> Result<Self> {
        let cells = step(
            params,
            &self.cells,
            Modality::ALL.map(|m| cands.vector(m, entity)),
        )?;
        let mut visited = self.visited.clone();
        visited.push(entity);
        Ok(PolicyState {
            cells,
            visited,
            t: self.t + 1,
        })
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![true; n];
        for &v in &self.visited {
            m[v] = false;
        }
        m
    }
}

fn logits_for(net: &LstmNet, h: &[f64], cands: &CandidateSet, m: Modality) -> Vec<f64> {
    let hid = net.hidden();
    let k = cands.dim();
    let proj = matvec(net.store.value(W_OUT).data(), k, hid, h);
    let scale = 1.0 / libm::sqrt(hid as f64);
    (0..cands.len())
        .map(|e| scale * dot(&proj, cands.vector(m, e)))
        .collect()
}

fn masked_dist(logits: &[f64], mask: &[bool], step: usize) -> Result<Vec<f64>> {
    softmax_slice(logits, Some(mask)).map_err(|e| match e {
        Error::EmptySupport => Error::ExhaustedVocabulary { step },
        e => e,
    })
}

/// π(· | prefix) for one channel; visited entities get probability 0.
pub fn action_dist(
    params: &GeneratorParams,
    state: &PolicyState,
    cands: &CandidateSet,
    m: Modality,
) -> Result<Vec<f64>> {
    let logits = logits_for(params.net(m), &state.cells[m.index()].h, cands, m);
    masked_dist(&logits, &state.mask(cands.len()), state.t + 1)
}

/// How the three channel policies are combined when generating.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampler {
    pub lambda: [f64; 3],
    /// Softmax temperature; `0` selects the mixture's argmax.
    pub temperature: f64,
}

impl Sampler {
    pub fn new(lambda: [f64; 3], temperature: f64) -> Result<Self> {
        if lambda.iter().any(|&l| !l.is_finite() || l < 0.0)
            || lambda.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(format!(
                "invalid modality weights {lambda:?}"
            )));
        }
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(Error::Config(format!("invalid temperature {temperature}")));
        }
        Ok(Sampler {
            lambda,
            temperature,
        })
    }

    /// Sampling from a single channel's policy at temperature 1.
    pub fn only(m: Modality) -> Self {
        let mut lambda = [0.0; 3];
        lambda[m.index()] = 1.0;
        Sampler {
            lambda,
            temperature: 1.0,
        }
    }

    pub fn argmax(self) -> Self {
        Sampler {
            temperature: 0.0,
            ..self
        }
    }
}

/// The λ-weighted mixture of per-channel distributions at the given state.
pub fn mixture_dist(
    params: &GeneratorParams,
    state: &PolicyState,
    cands: &CandidateSet,
    sampler: &Sampler,
) -> Result<Vec<f64>> {
    let total: f64 = sampler.lambda.iter().sum();
    let mask = state.mask(cands.len());
    let tau = if sampler.temperature > 0.0 {
        sampler.temperature
    } else {
        1.0
    };
    let mut mix = vec![0.0; cands.len()];
    for m in Modality::ALL {
        let w = sampler.lambda[m.index()] / total;
        if w == 0.0 {
            continue;
        }
        let mut logits = logits_for(params.net(m), &state.cells[m.index()].h, cands, m);
        if tau != 1.0 {
            logits.iter_mut().for_each(|l| *l /= tau);
        }
        let p = masked_dist(&logits, &mask, state.t + 1)?;
        for (a, b) in mix.iter_mut().zip(&p) {
            *a += w * b;
        }
    }
    Ok(mix)
}

fn choose(dist: &[f64], sampler: &Sampler, r: &mut rng::Rng) -> usize {
    if sampler.temperature == 0.0 {
        let mut best = 0;
        for (i, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = i;
            }
        }
        best
    } else {
        rng::sample_index(r, dist)
    }
}

fn extend(
    params: &GeneratorParams,
    cands: &CandidateSet,
    mut state: PolicyState,
    length: usize,
    sampler: &Sampler,
    r: &mut rng::Rng,
) -> Result<Vec<usize>> {
    while state.visited.len() < length {
        let dist = mixture_dist(params, &state, cands, sampler)?;
        let next = choose(&dist, sampler, r);
        if state.visited.len() + 1 == length {
            state.visited.push(next);
            break;
        }
        state = state.advance(params, cands, next)?;
    }
    Ok(state.visited)
}

/// Generates a `length`-node storyline beginning at `start`.
pub fn sample_storyline(
    params: &GeneratorParams,
    cands: &CandidateSet,
    start: usize,
    length: usize,
    seed: u64,
    sampler: &Sampler,
) -> Result<Storyline> {
    if length > cands.len() {
        return Err(Error::ExhaustedVocabulary { step: cands.len() });
    }
    let state = PolicyState::start(params, cands, start)?;
    let mut r = rng::stream(seed, 0);
    let nodes = extend(params, cands, state, length.max(1), sampler, &mut r)?;
    Ok(Storyline {
        event_id: cands.event_id.clone(),
        nodes,
    })
}

/// Replays `prefix` through the network and returns the resulting state.
pub fn state_after(
    params: &GeneratorParams,
    cands: &CandidateSet,
    prefix: &[usize],
) -> Result<PolicyState> {
    let first = *prefix.first().ok_or(Error::Length { needed: 1, got: 0 })?;
    let mut state = PolicyState::start(params, cands, first)?;
    for (i, &e) in prefix[1..].iter().enumerate() {
        if state.visited.contains(&e) {
            return Err(Error::InvalidTrajectory { step: i + 1 });
        }
        state = state.advance(params, cands, e)?;
    }
    Ok(state)
}

/// `n` independent completions of `partial` to `length` nodes. Rollout `i`
/// draws from its own stream derived from `(seed, i)`, so the set of
/// completions does not depend on evaluation order.
pub fn rollout_complete(
    params: &GeneratorParams,
    cands: &CandidateSet,
    partial: &[usize],
    length: usize,
    n: usize,
    seed: u64,
    sampler: &Sampler,
) -> Result<Vec<Vec<usize>>> {
    if partial.len() >= length {
        return Err(Error::Config(format!(
            "partial of length {} is already complete for length {length}",
            partial.len()
        )));
    }
    if length > cands.len() {
        return Err(Error::ExhaustedVocabulary { step: cands.len() });
    }
    let state = state_after(params, cands, partial)?;
    (0..n)
        .map(|i| {
            let mut r = rng::stream(rng::derive(seed, i as u64), 0);
            extend(params, cands, state.clone(), length, sampler, &mut r)
        })
        .collect()
}

/// Forward pass over one channel with per-step caches.
struct Episode {
    caches: Vec<StepCache>,
    hiddens: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

/// Runs channel `m` over `inputs`, producing the decision distribution after
/// each input except the last. Decision `t` is masked by `targets[..=t]`.
fn run_episode(
    net: &LstmNet,
    cands: &CandidateSet,
    m: Modality,
    inputs: &[usize],
    targets: &[usize],
) -> Result<Episode> {
    let steps = targets.len() - 1;
    let hid = net.hidden();
    let mut cell = CellState::zeros(hid);
    let mut ep = Episode {
        caches: Vec::with_capacity(steps),
        hiddens: Vec::with_capacity(steps),
        probs: Vec::with_capacity(steps),
    };
    let mut mask = vec![true; cands.len()];
    for t in 0..steps {
        let (next, cache) = cell_forward(net, cands.vector(m, inputs[t]), &cell);
        if next.h.iter().chain(&next.c).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFault(format!(
                "non-finite activation at step {t}"
            )));
        }
        mask[targets[t]] = false;
        let logits = logits_for(net, &next.h, cands, m);
        let p = masked_dist(&logits, &mask, t + 1)?;
        if p[targets[t + 1]] == 0.0 {
            return Err(Error::InvalidTrajectory { step: t + 1 });
        }
        ep.hiddens.push(next.h.clone());
        ep.caches.push(cache);
        ep.probs.push(p);
        cell = next;
    }
    Ok(ep)
}

/// Accumulates `∇ Σ_t weights[t] · log π(targets[t+1] | ·)` into `net`'s
/// gradient slots and returns the per-step log-probabilities.
fn episode_backward(
    net: &mut LstmNet,
    cands: &CandidateSet,
    m: Modality,
    inputs: &[usize],
    targets: &[usize],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let ep = run_episode(net, cands, m, inputs, targets)?;
    let steps = ep.probs.len();
    let hid = net.hidden();
    let k = cands.dim();
    let scale = 1.0 / libm::sqrt(hid as f64);
    let logp: Vec<f64> = (0..steps)
        .map(|t| libm::log(ep.probs[t][targets[t + 1]]))
        .collect();
    let mut dh_next = vec![0.0; hid];
    let mut dc_next = vec![0.0; hid];
    for t in (0..steps).rev() {
        let mut dh = dh_next.clone();
        let w = weights[t];
        if w != 0.0 {
            // d log p[target] / d logits = onehot - p
            let p = &ep.probs[t];
            let mut dproj = vec![0.0; k];
            for (e, &pe) in p.iter().enumerate() {
                let dl = w * scale * (f64::from(u8::from(e == targets[t + 1])) - pe);
                if dl == 0.0 {
                    continue;
                }
                for (d, v) in dproj.iter_mut().zip(cands.vector(m, e)) {
                    *d += dl * v;
                }
            }
            let gout = net.store.grad_mut(W_OUT).data_mut();
            for r in 0..k {
                for (g, hv) in gout[r * hid..(r + 1) * hid].iter_mut().zip(&ep.hiddens[t]) {
                    *g += dproj[r] * hv;
                }
            }
            let dh_out = matvec_t(net.store.value(W_OUT).data(), k, hid, &dproj);
            dh.iter_mut().zip(&dh_out).for_each(|(a, b)| *a += b);
        }
        let (dhp, dcp) = cell_backward(&mut net.store, &ep.caches[t], &dh, &dc_next);
        dh_next = dhp;
        dc_next = dcp;
    }
    Ok(logp)
}

/// Accumulates `Σ_t weights[t] ∇ log π_m(s_t | s_{<t})` for storyline
/// `nodes` into channel `m`'s gradient slots; returns the per-step log π.
pub fn accumulate_logprob_grad(
    params: &mut GeneratorParams,
    cands: &CandidateSet,
    nodes: &[usize],
    m: Modality,
    weights: &[f64],
) -> Result<Vec<f64>> {
    if nodes.len() < 2 || weights.len() != nodes.len() - 1 {
        return Err(Error::Length {
            needed: weights.len() + 1,
            got: nodes.len(),
        });
    }
    check_storyline(nodes)?;
    episode_backward(params.net_mut(m), cands, m, nodes, nodes, weights)
}

fn check_storyline(nodes: &[usize]) -> Result<()> {
    for t in 1..nodes.len() {
        if nodes[..t].contains(&nodes[t]) {
            return Err(Error::InvalidTrajectory { step: t });
        }
    }
    Ok(())
}

/// Per-step `log π_m(s_t | s_{<t})` for `t = 1..T-1` and the gradient of
/// each, as one tensor list (matching the channel's parameter order) per step.
pub fn logprob_grads(
    params: &GeneratorParams,
    cands: &CandidateSet,
    sl: &Storyline,
    m: Modality,
) -> Result<(Vec<f64>, Vec<Vec<Tensor>>)> {
    let steps = sl.nodes.len().saturating_sub(1);
    let mut work = params.clone();
    let mut logp = Vec::new();
    let mut grads = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut w = vec![0.0; steps];
        w[t] = 1.0;
        work.zero_grads();
        logp = accumulate_logprob_grad(&mut work, cands, &sl.nodes, m, &w)?;
        grads.push(work.net(m).store.grads().to_vec());
    }
    Ok((logp, grads))
}

/// One demonstration: a storyline within `events[event]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Demo {
    pub event: usize,
    pub nodes: Vec<usize>,
}

/// Candidate sets plus the (windowed) demonstrations that live in them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub events: Vec<CandidateSet>,
    pub demos: Vec<Demo>,
}

impl TrainingSet {
    /// Every stride-1 window of `length` nodes from every storyline.
    pub fn from_corpora(corpora: &[EventCorpus], length: usize) -> Result<Self> {
        let mut events = Vec::with_capacity(corpora.len());
        let mut demos = Vec::new();
        for (i, c) in corpora.iter().enumerate() {
            events.push(CandidateSet::from_corpus(c)?);
            for w in c.windows(length) {
                demos.push(Demo {
                    event: i,
                    nodes: w.nodes,
                });
            }
        }
        if demos.is_empty() {
            return Err(Error::Length {
                needed: length,
                got: 0,
            });
        }
        let k = events[0].dim();
        if events.iter().any(|e| e.dim() != k) {
            return Err(Error::Schema("events disagree on vector dimension".into()));
        }
        Ok(TrainingSet { events, demos })
    }

    pub fn length(&self) -> usize {
        self.demos[0].nodes.len()
    }

    pub fn candidates(&self, d: &Demo) -> &CandidateSet {
        &self.events[d.event]
    }
}

/// Probability that each scheduled-sampling input is the model's own draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// Linear interpolation from `from` at epoch 0 to `to` at the last epoch.
    Linear {
        from: f64,
        to: f64,
    },
}

impl Schedule {
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            Schedule::Constant(e) => e,
            Schedule::Linear { from, to } => {
                if epochs <= 1 {
                    from
                } else {
                    from + (to - from) * epoch as f64 / (epochs - 1) as f64
                }
            }
        }
    }
}

/// Mean per-step negative log-likelihood of the demonstrations under each
/// channel's policy (teacher forcing), averaged over channels.
pub fn demo_nll(params: &GeneratorParams, data: &TrainingSet) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for d in &data.demos {
        let cands = data.candidates(d);
        for m in Modality::ALL {
            let ep = run_episode(params.net(m), cands, m, &d.nodes, &d.nodes)?;
            for (t, p) in ep.probs.iter().enumerate() {
                total -= libm::log(p[d.nodes[t + 1]]);
                count += 1;
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Teacher-forced maximum-likelihood pretraining of all three channels,
/// one SGD step per demonstration in a seeded shuffled order. Returns the
/// parameters and the demonstration NLL after each epoch.
pub fn mle_pretrain(
    params: &GeneratorParams,
    data: &TrainingSet,
    epochs: usize,
    rate: f64,
    seed: u64,
) -> Result<(GeneratorParams, Vec<f64>)> {
    scheduled_sampling_pretrain(params, data, epochs, rate, Schedule::Constant(0.0), seed)
}

/// Maximum-likelihood pretraining where each input after the first is, with
/// probability ε(epoch), the channel's own sample from its previous decision
/// instead of the demonstrated entity. Targets and masks stay the demonstrated
/// ones. With ε ≡ 0 this is exactly [`mle_pretrain`].
pub fn scheduled_sampling_pretrain(
    params: &GeneratorParams,
    data: &TrainingSet,
    epochs: usize,
    rate: f64,
    schedule: Schedule,
    seed: u64,
) -> Result<(GeneratorParams, Vec<f64>)> {
    if data.demos.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    let mut p = params.clone();
    let mut order: Vec<usize> = (0..data.demos.len()).collect();
    let mut shuffle_rng = rng::stream(seed, 0);
    let mut sample_rng = rng::stream(seed, 1);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let eps = schedule.at(epoch, epochs);
        order.shuffle(&mut shuffle_rng);
        for &di in &order {
            let d = &data.demos[di];
            let cands = data.candidates(d);
            let steps = d.nodes.len() - 1;
            let w = vec![-1.0 / steps as f64; steps];
            p.zero_grads();
            for m in Modality::ALL {
                let inputs = if eps > 0.0 {
                    mixed_inputs(p.net(m), cands, m, &d.nodes, eps, &mut sample_rng)?
                } else {
                    d.nodes.clone()
                };
                episode_backward(p.net_mut(m), cands, m, &inputs, &d.nodes, &w)
                    .map_err(|e| e.context(format!("pretraining epoch {epoch}")))?;
            }
            for net in &mut p.nets {
                sgd_step(&mut net.store, rate, Direction::Descent)
                    .map_err(|e| e.context(format!("pretraining epoch {epoch}")))?;
            }
        }
        let nll = demo_nll(&p, data)?;
        if !nll.is_finite() {
            return Err(Error::NumericalFault(format!(
                "non-finite loss in epoch {epoch}"
            )));
        }
        history.push(nll);
    }
    p.zero_grads();
    Ok((p, history))
}

/// Input sequence for scheduled sampling: the start entity, then for each
/// later position either the demonstrated entity or a draw from the
/// channel's decision that predicted it.
fn mixed_inputs(
    net: &LstmNet,
    cands: &CandidateSet,
    m: Modality,
    nodes: &[usize],
    eps: f64,
    r: &mut rng::Rng,
) -> Result<Vec<usize>> {
    let mut inputs = vec![nodes[0]];
    let mut cell = CellState::zeros(net.hidden());
    let mut mask = vec![true; cands.len()];
    for t in 0..nodes.len() - 2 {
        let (next, _) = cell_forward(net, cands.vector(m, inputs[t]), &cell);
        mask[nodes[t]] = false;
        let use_model = r.random::<f64>() < eps;
        let chosen = if use_model {
            let logits = logits_for(net, &next.h, cands, m);
            let p = masked_dist(&logits, &mask, t + 1)?;
            rng::sample_index(r, &p)
        } else {
            nodes[t + 1]
        };
        inputs.push(chosen);
        cell = next;
    }
    Ok(inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cands(n: usize, k: usize, seed: u64) -> CandidateSet {
        let mut r = rng::stream(seed, 5);
        let txt = Tensor::matrix(n, k, (0..n * k).map(|_| rng::normal(&mut r)).collect()).unwrap();
        let img = Tensor::matrix(n, k, (0..n * k).map(|_| rng::normal(&mut r)).collect()).unwrap();
        let names = (0..n).map(|i| format!("n{i}")).collect();
        CandidateSet::new("toy", names, txt, img).unwrap()
    }

    #[test]
    fn zero_weights_zero_input_zero_state() {
        let mut p = GeneratorParams::init(3, 4, 0).unwrap();
        for net in &mut p.nets {
            for i in 0..4 {
                net.store.value_mut(i).fill(0.0);
            }
        }
        let zero = [0, 1, 2].map(|_| CellState::zeros(4));
        let x = [0.0; 3];
        let out = step(&p, &zero, [&x, &x, &x]).unwrap();
        for c in &out {
            assert!(c.h.iter().chain(&c.c).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_unvisited_candidate_gets_everything() {
        let p = GeneratorParams::init(3, 4, 1).unwrap();
        let cands = toy_cands(3, 3, 1);
        let s = state_after(&p, &cands, &[2, 0]).unwrap();
        for m in Modality::ALL {
            assert_eq!(action_dist(&p, &s, &cands, m).unwrap(), vec![0.0, 1.0, 0.0]);
        }
        let s = s.advance(&p, &cands, 1).unwrap();
        assert_eq!(
            action_dist(&p, &s, &cands, Modality::Txt),
            Err(Error::ExhaustedVocabulary { step: 3 })
        );
    }

    #[test]
    fn zero_projection_is_uniform_over_unvisited() {
        let mut p = GeneratorParams::init(3, 4, 2).unwrap();
        p.net_mut(Modality::Img).store.value_mut(W_OUT).fill(0.0);
        let cands = toy_cands(5, 3, 2);
        let s = state_after(&p, &cands, &[1, 3]).unwrap();
        let d = action_dist(&p, &s, &cands, Modality::Img).unwrap();
        for (i, v) in d.iter().enumerate() {
            let expected = if i == 1 || i == 3 { 0.0 } else { 1.0 / 3.0 };
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn length_one_storyline_is_the_start() {
        let p = GeneratorParams::init(3, 4, 3).unwrap();
        let cands = toy_cands(4, 3, 3);
        let s = sample_storyline(&p, &cands, 2, 1, 0, &Sampler::only(Modality::Txt)).unwrap();
        assert_eq!(s.nodes, vec![2]);
    }

    #[test]
    fn storyline_longer_than_vocabulary_is_rejected() {
        let p = GeneratorParams::init(3, 4, 3).unwrap();
        let cands = toy_cands(4, 3, 3);
        assert!(matches!(
            sample_storyline(&p, &cands, 0, 5, 0, &Sampler::only(Modality::Txt)),
            Err(Error::ExhaustedVocabulary { .. })
        ));
    }

    #[test]
    fn uniform_policy_logprob_is_closed_form() {
        let mut p = GeneratorParams::init(3, 4, 4).unwrap();
        p.net_mut(Modality::Mm).store.value_mut(W_OUT).fill(0.0);
        let cands = toy_cands(6, 3, 4);
        let sl = Storyline::new("toy", vec![5, 0, 2, 4]).unwrap();
        let (logp, grads) = logprob_grads(&p, &cands, &sl, Modality::Mm).unwrap();
        assert_eq!(grads.len(), 3);
        for (t, lp) in logp.iter().enumerate() {
            let remaining = 6 - (t + 1);
            assert!((lp - libm::log(1.0 / remaining as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn revisiting_trajectory_is_invalid() {
        let p = GeneratorParams::init(3, 4, 4).unwrap();
        let cands = toy_cands(6, 3, 4);
        let sl = Storyline {
            event_id: "toy".into(),
            nodes: vec![1, 2, 1],
        };
        assert_eq!(
            logprob_grads(&p, &cands, &sl, Modality::Txt).map(|_| ()),
            Err(Error::InvalidTrajectory { step: 2 })
        );
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = Schedule::Linear { from: 1.0, to: 0.0 };
        assert_eq!(s.at(0, 5), 1.0);
        assert_eq!(s.at(4, 5), 0.0);
        assert_eq!(s.at(2, 5), 0.5);
    }
}
