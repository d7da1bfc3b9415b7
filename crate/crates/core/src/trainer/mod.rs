//! End-to-end training: RMSProp over per-example graphs, validation
//! BLEU-4 each epoch, best-checkpoint tracking and ablation runs.

mod ablate;
mod checkpoint;
mod config;
mod optim;

pub use ablate::{median, run_ablation, AblationCell, AblationReport, Grid, Variant};
pub use checkpoint::{Checkpoint, EpochLog};
pub use config::TrainConfig;
pub use optim::{clip_grad_norm, RmsProp};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Example, Vocab};
use crate::error::{Error, Result};
use crate::generate::{generate_all, DecodeOptions};
use crate::kbembed::pretrain_transe;
use crate::metrics::bleu4;
use crate::model::Model;
use crate::numdiff::{Graph, ParamStore, Tensor};
use crate::objective::{example_loss, question_only_loss};

/// splitmix64 finalizer over a combination of the inputs.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub vocab: Vocab,
    pub opt: RmsProp,
    /// Completed epochs.
    pub epoch: usize,
    pub best: Option<(f64, ParamStore)>,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    /// Builds a fresh model for `data`, with TransE-pretrained KB vectors
    /// when enabled.
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        if data.options != config.context_options() {
            return Err(Error::config("dataset context options do not match the config"));
        }
        let kb_size = data.kb.vocab.len();
        let mut model = Model::new(config.model_config(), data.vocab.gen_size(), kb_size, config.seed)?;
        if config.transe {
            let run = pretrain_transe(&data.triples, kb_size, config.d, &config.transe_config())?;
            model.set_kb_embedding(&run.embedding)?;
        }
        model.freeze_kb(config.freeze_kb);
        let opt = RmsProp::new(&model.store, config.rho, config.eps);
        Ok(Trainer {
            config,
            model,
            vocab: data.vocab.clone(),
            opt,
            epoch: 0,
            best: None,
            log: Vec::new(),
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let model = model_from_checkpoint(&ckpt, false)?;
        let best = match (ckpt.best_valid_bleu4, &ckpt.best_params) {
            (Some(b), Some(_)) => Some((b, ckpt.inference_params())),
            _ => None,
        };
        Ok(Trainer {
            opt: RmsProp {
                rho: ckpt.config.rho,
                eps: ckpt.config.eps,
                accum: ckpt.accum,
            },
            best,
            config: ckpt.config,
            model,
            vocab: ckpt.vocab,
            epoch: ckpt.epoch,
            log: ckpt.log,
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    fn example_graph(&self, index: usize) -> Graph {
        if self.config.dropout > 0.0 {
            Graph::training(mix(self.config.seed, self.epoch as u64 + 1, index as u64))
        } else {
            Graph::new()
        }
    }

    /// One pass over `examples` in seeded order. Returns the mean total
    /// loss. On a non-finite loss the parameters and optimizer state are
    /// restored to the start of the epoch.
    pub fn train_epoch(&mut self, examples: &[Example]) -> Result<f64> {
        let snapshot = (self.model.store.clone(), self.opt.accum.clone());
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.config.seed, self.epoch as u64 + 1, u64::MAX)));
        let opts = self.config.loss_options();
        let lr = self.lr();
        let mut total = 0.0;
        self.model.store.zero_grads();
        for batch in order.chunks(self.config.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut g = self.example_graph(i);
                let out = if self.config.answer_loss {
                    example_loss(&self.model, &mut g, &examples[i], &opts)
                } else {
                    question_only_loss(&self.model, &mut g, &examples[i])
                };
                let finite = match out {
                    Ok((loss, br)) if br.total_loss.is_finite() => Some((loss, br)),
                    Ok(_) | Err(Error::Numeric(_)) => None,
                    Err(e) => return Err(e),
                };
                let Some((loss, br)) = finite else {
                    self.model.store = snapshot.0;
                    self.opt.accum = snapshot.1;
                    return Err(Error::Diverged { epoch: self.epoch + 1 });
                };
                total += br.total_loss;
                let scaled = g.scale(loss, inv);
                g.backward(scaled, &mut self.model.store)?;
            }
            clip_grad_norm(&mut self.model.store, self.config.clip);
            self.opt.step(&mut self.model.store, lr)?;
        }
        self.epoch += 1;
        Ok(if examples.is_empty() { 0.0 } else { total / examples.len() as f64 })
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            max_len: self.config.max_len,
            beam_width: self.config.beam,
        }
    }

    /// Corpus BLEU-4 of decoded questions against the references.
    pub fn bleu(&self, data: &Dataset, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let gens = generate_all(&self.model, &data.kb, &self.vocab, examples, &self.decode_options())?;
        let cands: Vec<Vec<String>> = gens.into_iter().map(|g| g.tokens).collect();
        let refs: Vec<Vec<String>> = examples.iter().map(|e| e.reference.clone()).collect();
        Ok(bleu4(&cands, &refs))
    }

    /// Trains one epoch, scores the validation split and updates the best
    /// parameters.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochLog> {
        let loss = self.train_epoch(&data.train)?;
        let valid_bleu4 = self.bleu(data, &data.valid)?;
        if self.best.as_ref().map_or(true, |(b, _)| valid_bleu4 > *b) {
            self.best = Some((valid_bleu4, self.model.store.clone()));
        }
        let entry = EpochLog {
            epoch: self.epoch,
            loss,
            valid_bleu4,
        };
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs until `config.epochs` epochs are complete.
    pub fn run(&mut self, data: &Dataset, mut on_epoch: impl FnMut(&Trainer, &EpochLog) -> Result<()>) -> Result<()> {
        while self.epoch < self.config.epochs {
            let e = self.run_epoch(data)?;
            on_epoch(self, &e)?;
        }
        Ok(())
    }

    /// Full training state, including the best-validation parameters.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            best_valid_bleu4: self.best.as_ref().map(|b| b.0),
            vocab: self.vocab.clone(),
            params: self.model.store.clone(),
            best_params: self
                .best
                .as_ref()
                .map(|(_, s)| s.iter().map(|(_, p)| p.value.clone()).collect()),
            accum: self.opt.accum.clone(),
            log: self.log.clone(),
        }
    }

    /// The model with the best-validation parameters.
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        if let Some((_, store)) = &self.best {
            m.store = store.clone();
        }
        m
    }
}

/// Rebuilds the model described by a checkpoint, with its best-validation
/// parameters when `best` is set (and known).
pub fn model_from_checkpoint(ckpt: &Checkpoint, best: bool) -> Result<Model> {
    let kb_size = ckpt
        .params
        .by_name("kb_emb")
        .ok_or_else(|| Error::Checkpoint("missing kb_emb".into()))?
        .value
        .rows();
    let cfg = &ckpt.config;
    let mut model = Model::new(cfg.model_config(), ckpt.vocab.gen_size(), kb_size, cfg.seed)?;
    if model.store.len() != ckpt.params.len() {
        return Err(Error::Checkpoint("parameter count mismatch".into()));
    }
    let params = if best { ckpt.inference_params() } else { ckpt.params.clone() };
    for (_, p) in params.iter() {
        let id = model
            .store
            .id(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", p.name)))?;
        let slot = model.store.get_mut(id);
        if slot.value.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", p.name)));
        }
        slot.value = p.value.clone();
        slot.frozen = p.frozen;
        slot.grad = Tensor::zeros(p.value.rows(), p.value.cols());
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            d: 8,
            heads: 2,
            layers: 1,
            epochs: 3,
            batch_size: 4,
            lr: 0.01,
            transe_epochs: 5,
            max_len: 8,
            ..Default::default()
        }
    }

    fn tiny_data(cfg: &TrainConfig) -> Dataset {
        let c = synth_corpus(3, 12, 4, 24);
        Dataset::from_synth(&c, cfg.context_options()).unwrap()
    }

    fn values(store: &ParamStore) -> Vec<u64> {
        store.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let data = tiny_data(&cfg);
        let run = || {
            let mut t = Trainer::new(cfg.clone(), &data).unwrap();
            t.run(&data, |_, _| Ok(())).unwrap();
            (t.log.clone(), values(&t.model.store))
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 3);
    }

    #[test]
    fn resume_is_bit_exact() {
        let cfg = tiny_config();
        let data = tiny_data(&cfg);
        let mut full = Trainer::new(cfg.clone(), &data).unwrap();
        full.run(&data, |_, _| Ok(())).unwrap();

        let mut first = Trainer::new(cfg, &data).unwrap();
        first.run_epoch(&data).unwrap();
        let text = first.checkpoint().to_text();
        let mut resumed = Trainer::from_checkpoint(Checkpoint::from_text(&text).unwrap()).unwrap();
        resumed.run(&data, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.log, full.log);
        assert_eq!(values(&resumed.model.store), values(&full.model.store));
        assert_eq!(resumed.opt.accum, full.opt.accum);
    }

    #[test]
    fn zero_lambda_matches_question_only() {
        let mut cfg = tiny_config();
        cfg.lambda = 0.0;
        cfg.epochs = 5;
        let data = tiny_data(&cfg);
        let mut a = Trainer::new(cfg.clone(), &data).unwrap();
        cfg.answer_loss = false;
        let mut b = Trainer::new(cfg, &data).unwrap();
        for _ in 0..5 {
            let la = a.train_epoch(&data.train).unwrap();
            let lb = b.train_epoch(&data.train).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
        }
        assert_eq!(values(&a.model.store), values(&b.model.store));
    }

    #[test]
    fn divergence_restores_last_finite_state() {
        let cfg = tiny_config();
        let data = tiny_data(&cfg);
        let mut t = Trainer::new(cfg, &data).unwrap();
        t.train_epoch(&data.train).unwrap();
        let before = values(&t.model.store);
        let id = t.model.store.id("dec0.ffn.w1").or_else(|| t.model.store.iter().nth(5).map(|(i, _)| i)).unwrap();
        t.model.store.get_mut(id).value.data_mut()[0] = f64::NAN;
        let poisoned = values(&t.model.store);
        let r = t.train_epoch(&data.train);
        assert!(matches!(r, Err(Error::Diverged { epoch: 2 })), "{r:?}");
        assert_eq!(values(&t.model.store), poisoned);
        assert_ne!(before, poisoned);
        assert_eq!(t.epoch, 1);
    }

    #[test]
    fn checkpoint_restores_model() {
        let cfg = tiny_config();
        let data = tiny_data(&cfg);
        let mut t = Trainer::new(cfg, &data).unwrap();
        t.run_epoch(&data).unwrap();
        let m = model_from_checkpoint(&t.checkpoint(), true).unwrap();
        assert_eq!(values(&m.store), values(&t.best_model().store));
        assert_eq!(t.bleu(&data, &data.valid).unwrap(), t.log[0].valid_bleu4);
    }

    #[test]
    fn mismatched_dataset_rejected() {
        let cfg = tiny_config();
        let data = tiny_data(&cfg);
        let cfg = TrainConfig {
            diversified: false,
            ..cfg
        };
        assert!(matches!(Trainer::new(cfg, &data), Err(Error::Config(_))));
    }
}
