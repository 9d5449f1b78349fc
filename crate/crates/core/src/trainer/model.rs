use super::TrainConfig;
use crate::corpus::{Minibatch, Vocabulary};
use crate::encoder::{Encoder, EncoderSpec, Grad, NamedTensor};
use crate::error::{QtError, Result};
use crate::numkern::{Mat, Real, Rng};
use crate::objective::{evaluate_objective, score_all, score_backward, LossReport};

const INIT_STREAM: u64 = 1;

/// Source encoder `f`, candidate encoder `g`, and the vocabulary they index.
#[derive(Clone, Debug, PartialEq)]
pub struct QtModel<T> {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub f: Encoder<T>,
    pub g: Encoder<T>,
}

impl<T: Real> QtModel<T> {
    /// Fresh parameters drawn from the config seed. `pretrained` is only used
    /// (and then required) by the multichannel encoder.
    pub fn new(config: TrainConfig, vocab: Vocabulary, pretrained: Option<&Mat<T>>) -> Result<Self> {
        config.validate()?;
        if vocab.len() > config.vocab_size {
            return Err(QtError::Config(format!(
                "vocabulary of {} exceeds configured maximum {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let spec = EncoderSpec {
            kind: config.encoder,
            vocab_size: vocab.len(),
            emb_dim: config.emb_dim,
            hidden: config.hidden_dim,
        };
        let mut rng = Rng::new(config.seed).fork(INIT_STREAM);
        let f = Encoder::init(spec, &mut rng, pretrained)?;
        let g = Encoder::init(spec, &mut rng, pretrained)?;
        Ok(QtModel { config, vocab, f, g })
    }

    /// Dimension of `[f(s) g(s)]`.
    pub fn embedding_dim(&self) -> usize {
        self.f.out_dim() + self.g.out_dim()
    }

    pub fn embed(&self, batch: &Minibatch) -> Result<Mat<T>> {
        let a = self.f.forward(batch)?.output;
        let b = self.g.forward(batch)?.output;
        a.hcat(&b)
    }

    /// All tensors, `f.` then `g.` prefixed, in optimizer order.
    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        for (p, e) in [("f", &self.f), ("g", &self.g)] {
            out.extend(e.tensors().into_iter().map(|t| NamedTensor {
                name: format!("{p}.{}", t.name),
                value: t.value,
                frozen: t.frozen,
            }));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut out = self.f.tensors_mut();
        out.extend(self.g.tensors_mut());
        out
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.tensors().iter().map(|t| t.frozen).collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.value.shape()).collect()
    }

    /// Objective value on one batch, without gradients.
    pub fn loss(&self, batch: &Minibatch) -> Result<LossReport> {
        let fo = self.f.forward(batch)?;
        let go = self.g.forward(batch)?;
        let s = score_all(&fo.output, &go.output)?;
        Ok(evaluate_objective(&s, &self.config.context, self.config.objective, self.config.margin)?.0)
    }

    /// Objective value and gradients aligned with [`QtModel::tensors`].
    pub fn loss_and_grads(&self, batch: &Minibatch) -> Result<(LossReport, Vec<Grad<T>>)> {
        let fo = self.f.forward(batch)?;
        let go = self.g.forward(batch)?;
        let s = score_all(&fo.output, &go.output)?;
        let (report, ds) = evaluate_objective(&s, &self.config.context, self.config.objective, self.config.margin)?;
        let (df, dg) = score_backward(&ds, &fo.output, &go.output)?;
        let mut grads = self.f.backward(&fo.cache, &df)?;
        grads.extend(self.g.backward(&go.cache, &dg)?);
        Ok((report, grads))
    }
}
