//! Per-channel convolutional sequence discriminator.
//!
//! Each channel has filter banks of widths 2 and 3 over the `k`-dimensional
//! rows, max-over-time pooling, an affine head and a logistic output, so every
//! score lies strictly inside (0, 1).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::numerics::{
    conv1d_maxpool, conv1d_maxpool_backward, dot, sgd_step, sigmoid, ConvFilter, Direction,
    ParamStore, PoolCache, Tensor,
};
use crate::seqdata::ModalSequence;
use crate::{rng, Error, Modality, Result};

pub const FILTER_WIDTHS: [usize; 2] = [2, 3];
pub const DEFAULT_MAPS: usize = 16;

const HEAD_W: usize = 2 * FILTER_WIDTHS.len();
const HEAD_B: usize = HEAD_W + 1;

/// One channel's discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscNet {
    pub store: ParamStore,
}

impl DiscNet {
    fn init(k: usize, maps: usize, r: &mut rng::Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        for w in FILTER_WIDTHS {
            let weight = Tensor::matrix(
                maps,
                w * k,
                (0..maps * w * k).map(|_| rng::uniform(r, 0.1)).collect(),
            )?;
            store.add(format!("conv{w}_w"), weight);
            store.add(format!("conv{w}_b"), Tensor::zeros(&[maps]));
        }
        let n = maps * FILTER_WIDTHS.len();
        store.add(
            "head_w",
            Tensor::vector((0..n).map(|_| rng::uniform(r, 0.1)).collect())?,
        );
        store.add("head_b", Tensor::zeros(&[1]));
        Ok(DiscNet { store })
    }

    pub fn maps(&self) -> usize {
        self.store.value(0).rows()
    }

    pub fn input_dim(&self) -> usize {
        self.store.value(0).cols() / FILTER_WIDTHS[0]
    }

    fn bank(&self) -> Vec<ConvFilter> {
        FILTER_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &width)| ConvFilter {
                width,
                weight: self.store.value(2 * i).clone(),
                bias: self.store.value(2 * i + 1).clone(),
            })
            .collect()
    }

    fn check_input(&self, seq: &Tensor) -> Result<()> {
        if seq.shape().len() != 2 || seq.cols() != self.input_dim() {
            return Err(Error::dimension(
                "discriminator input",
                seq.shape(),
                &[seq.rows(), self.input_dim()],
            ));
        }
        Ok(())
    }

    fn forward(&self, seq: &Tensor) -> Result<(f64, Tensor, PoolCache)> {
        self.check_input(seq)?;
        let (feats, cache) = conv1d_maxpool(seq, &self.bank())?;
        let z =
            dot(self.store.value(HEAD_W).data(), feats.data()) + self.store.value(HEAD_B).data()[0];
        if !z.is_finite() {
            return Err(Error::NumericalFault(
                "non-finite discriminator logit".into(),
            ));
        }
        Ok((z, feats, cache))
    }

    /// Pre-sigmoid score.
    pub fn logit(&self, seq: &Tensor) -> Result<f64> {
        Ok(self.forward(seq)?.0)
    }

    pub fn score(&self, seq: &Tensor) -> Result<f64> {
        Ok(squash(self.logit(seq)?))
    }

    /// Accumulates `grad_logit · ∇z` into the gradient slots; returns `z`.
    pub fn logit_backward(&mut self, seq: &Tensor, grad_logit: f64) -> Result<f64> {
        let (z, feats, cache) = self.forward(seq)?;
        let head: Vec<f64> = self
            .store
            .value(HEAD_W)
            .data()
            .iter()
            .map(|w| w * grad_logit)
            .collect();
        for (g, f) in self
            .store
            .grad_mut(HEAD_W)
            .data_mut()
            .iter_mut()
            .zip(feats.data())
        {
            *g += grad_logit * f;
        }
        self.store.grad_mut(HEAD_B).data_mut()[0] += grad_logit;
        let (_, banks) = conv1d_maxpool_backward(seq, &self.bank(), &cache, &head)?;
        for (i, (gw, gb)) in banks.iter().enumerate() {
            self.store.grad_mut(2 * i).axpy(1.0, gw);
            self.store.grad_mut(2 * i + 1).axpy(1.0, gb);
        }
        Ok(z)
    }

    /// Accumulates `grad_score · ∇D`; returns `D`.
    pub fn score_backward(&mut self, seq: &Tensor, grad_score: f64) -> Result<f64> {
        let d = self.score(seq)?;
        self.logit_backward(seq, grad_score * d * (1.0 - d))?;
        Ok(d)
    }
}

/// Largest `f64` below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function kept strictly inside (0, 1) where `f64` would round.
fn squash(z: f64) -> f64 {
    sigmoid(z).clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// φ = {φ_txt, φ_img, φ_mm}.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscParams {
    pub nets: [DiscNet; 3],
}

impl DiscParams {
    /// Uniform `[-0.1, 0.1]` weights, zero biases.
    pub fn init(k: usize, maps: usize, seed: u64) -> Result<Self> {
        if k == 0 || maps == 0 {
            return Err(Error::Config(
                "discriminator dimensions must be positive".into(),
            ));
        }
        let mut r = rng::stream(seed, 0);
        Ok(DiscParams {
            nets: [
                DiscNet::init(k, maps, &mut r)?,
                DiscNet::init(k, maps, &mut r)?,
                DiscNet::init(k, maps, &mut r)?,
            ],
        })
    }

    pub fn from_nets(nets: [DiscNet; 3]) -> Result<Self> {
        let (k, maps) = (nets[0].input_dim(), nets[0].maps());
        for n in &nets {
            let s = &n.store;
            let mut ok = s.len() == HEAD_B + 1
                && s.value(HEAD_W).shape() == [maps * FILTER_WIDTHS.len()]
                && s.value(HEAD_B).shape() == [1];
            for (i, w) in FILTER_WIDTHS.iter().enumerate() {
                ok &= s.len() > 2 * i + 1
                    && s.value(2 * i).shape() == [maps, w * k]
                    && s.value(2 * i + 1).shape() == [maps];
            }
            if !ok {
                return Err(Error::Schema(
                    "inconsistent discriminator parameter shapes".into(),
                ));
            }
        }
        Ok(DiscParams { nets })
    }

    pub fn dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    pub fn maps(&self) -> usize {
        self.nets[0].maps()
    }

    pub fn net(&self, m: Modality) -> &DiscNet {
        &self.nets[m.index()]
    }

    pub fn net_mut(&mut self, m: Modality) -> &mut DiscNet {
        &mut self.nets[m.index()]
    }
}

/// `D_m(seq)` for a `T × k` channel matrix.
pub fn score(params: &DiscParams, seq: &Tensor, m: Modality) -> Result<f64> {
    params.net(m).score(seq)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn check_batches(real: &[&Tensor], fake: &[&Tensor]) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Length {
            needed: 1,
            got: real.len().min(fake.len()),
        });
    }
    let shape = real[0].shape();
    for s in real.iter().chain(fake) {
        if s.shape() != shape {
            return Err(Error::dimension("discriminator batch", shape, s.shape()));
        }
    }
    Ok(())
}

fn channel_refs(batch: &[ModalSequence], m: Modality) -> Vec<&Tensor> {
    batch.iter().map(|s| s.channel(m)).collect()
}

/// Mean binary cross-entropy of one channel, labels real = 1 and fake = 0.
pub fn xent_loss_net(net: &DiscNet, real: &[&Tensor], fake: &[&Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for s in real {
        total += softplus(-net.logit(s)?);
    }
    for s in fake {
        total += softplus(net.logit(s)?);
    }
    Ok(total / (real.len() + fake.len()) as f64)
}

/// Per-channel mean binary cross-entropy.
pub fn xent_loss(
    params: &DiscParams,
    real: &[ModalSequence],
    fake: &[ModalSequence],
) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for m in Modality::ALL {
        out[m.index()] = xent_loss_net(
            params.net(m),
            &channel_refs(real, m),
            &channel_refs(fake, m),
        )?;
    }
    Ok(out)
}

/// Cross-entropy training of one channel: per-example SGD over the union of
/// both batches in a seeded shuffled order. Returns the loss after each epoch.
pub fn pretrain_xent_net(
    net: &DiscNet,
    real: &[&Tensor],
    fake: &[&Tensor],
    epochs: usize,
    rate: f64,
    seed: u64,
) -> Result<(DiscNet, Vec<f64>)> {
    check_batches(real, fake)?;
    let mut net = net.clone();
    let mut order: Vec<(bool, usize)> = (0..real.len())
        .map(|i| (true, i))
        .chain((0..fake.len()).map(|i| (false, i)))
        .collect();
    let mut r = rng::stream(seed, 0);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut r);
        for &(is_real, i) in &order {
            let (s, y) = if is_real {
                (real[i], 1.0)
            } else {
                (fake[i], 0.0)
            };
            net.store.zero_grads();
            let d = net.score(s)?;
            net.logit_backward(s, d - y)?;
            sgd_step(&mut net.store, rate, Direction::Descent)
                .map_err(|e| e.context(format!("discriminator epoch {epoch}")))?;
        }
        let loss = xent_loss_net(&net, real, fake)?;
        if !loss.is_finite() {
            return Err(Error::NumericalFault(format!(
                "non-finite discriminator loss in epoch {epoch}"
            )));
        }
        history.push(loss);
    }
    net.store.zero_grads();
    Ok((net, history))
}

/// [`pretrain_xent_net`] on every channel. The returned history is the
/// channel-mean loss after each epoch.
pub fn pretrain_xent(
    params: &DiscParams,
    real: &[ModalSequence],
    fake: &[ModalSequence],
    epochs: usize,
    rate: f64,
    seed: u64,
) -> Result<(DiscParams, Vec<f64>)> {
    let mut p = params.clone();
    let mut history = vec![0.0; epochs];
    for m in Modality::ALL {
        let (net, h) = pretrain_xent_net(
            params.net(m),
            &channel_refs(real, m),
            &channel_refs(fake, m),
            epochs,
            rate,
            seed,
        )?;
        *p.net_mut(m) = net;
        history.iter_mut().zip(&h).for_each(|(a, b)| *a += b / 3.0);
    }
    Ok((p, history))
}

/// `−mean D(real) − mean(1 − D(fake))` for one channel.
pub fn adversarial_objective_net(net: &DiscNet, real: &[&Tensor], fake: &[&Tensor]) -> Result<f64> {
    let mut sum_real = 0.0;
    for s in real {
        sum_real += net.score(s)?;
    }
    let mut sum_fake = 0.0;
    for s in fake {
        sum_fake += 1.0 - net.score(s)?;
    }
    Ok(-sum_real / real.len() as f64 - sum_fake / fake.len() as f64)
}

pub fn adversarial_objective(
    params: &DiscParams,
    real: &[ModalSequence],
    fake: &[ModalSequence],
) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for m in Modality::ALL {
        out[m.index()] = adversarial_objective_net(
            params.net(m),
            &channel_refs(real, m),
            &channel_refs(fake, m),
        )?;
    }
    Ok(out)
}

/// One full-batch gradient-descent step on the no-log objective
/// `−mean D(real) − mean(1 − D(fake))`; returns the objective before the step.
pub fn train_step_eq4_net(
    net: &mut DiscNet,
    real: &[&Tensor],
    fake: &[&Tensor],
    rate: f64,
) -> Result<f64> {
    check_batches(real, fake)?;
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    net.store.zero_grads();
    let mut sum_real = 0.0;
    for s in real {
        sum_real += net.score_backward(s, -1.0 / nr)?;
    }
    let mut sum_fake = 0.0;
    for s in fake {
        sum_fake += 1.0 - net.score_backward(s, 1.0 / nf)?;
    }
    let value = -sum_real / nr - sum_fake / nf;
    if !value.is_finite() {
        return Err(Error::NumericalFault(
            "non-finite discriminator objective".into(),
        ));
    }
    sgd_step(&mut net.store, rate, Direction::Descent)?;
    net.store.zero_grads();
    Ok(value)
}

/// [`train_step_eq4_net`] on every channel. Returns the updated parameters
/// and the per-channel objective before the step.
pub fn train_step_eq4(
    params: &DiscParams,
    real: &[ModalSequence],
    fake: &[ModalSequence],
    rate: f64,
) -> Result<(DiscParams, [f64; 3])> {
    let mut p = params.clone();
    let mut objective = [0.0; 3];
    for m in Modality::ALL {
        objective[m.index()] = train_step_eq4_net(
            p.net_mut(m),
            &channel_refs(real, m),
            &channel_refs(fake, m),
            rate,
        )
        .map_err(|e| e.context(format!("{m} discriminator")))?;
    }
    Ok((p, objective))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, k: usize, v: f64) -> Tensor {
        Tensor::matrix(t, k, vec![v; t * k]).unwrap()
    }

    #[test]
    fn zero_weights_score_one_half() {
        let mut p = DiscParams::init(3, 4, 0).unwrap();
        for net in &mut p.nets {
            for i in 0..net.store.len() {
                net.store.value_mut(i).fill(0.0);
            }
        }
        for m in Modality::ALL {
            assert_eq!(score(&p, &seq(4, 3, 0.7), m).unwrap(), 0.5);
        }
    }

    #[test]
    fn short_input_is_a_length_error() {
        let p = DiscParams::init(3, 4, 0).unwrap();
        assert_eq!(
            score(&p, &seq(2, 3, 1.0), Modality::Txt),
            Err(Error::Length { needed: 3, got: 2 })
        );
    }

    #[test]
    fn wrong_width_is_a_dimension_error() {
        let p = DiscParams::init(3, 4, 0).unwrap();
        assert!(matches!(
            score(&p, &seq(4, 2, 1.0), Modality::Img),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn extreme_logits_stay_inside_unit_interval() {
        let mut p = DiscParams::init(2, 2, 0).unwrap();
        p.net_mut(Modality::Txt).store.value_mut(HEAD_B).fill(40.0);
        let s = score(&p, &seq(3, 2, 0.0), Modality::Txt).unwrap();
        assert!(s > 0.0 && s < 1.0);
        p.net_mut(Modality::Txt)
            .store
            .value_mut(HEAD_B)
            .fill(-800.0);
        let s = score(&p, &seq(3, 2, 0.0), Modality::Txt).unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn softplus_matches_naive_form() {
        for z in [-30.0, -2.0, 0.0, 1.5, 30.0] {
            assert!((softplus(z) - libm::log(1.0 + libm::exp(z))).abs() < 1e-12);
        }
    }
}
