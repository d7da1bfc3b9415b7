use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use kbqg_core::corpus::{synth_corpus, ContextOptions, Dataset};
use kbqg_core::generate::greedy_decode;
use kbqg_core::kbembed::{pretrain_transe, TransEConfig};
use kbqg_core::metrics::{bleu4, meteor_lite, rouge_l};
use kbqg_core::numdiff::Graph;
use kbqg_core::objective::{example_loss, LossOptions};
use kbqg_core::trainer::{TrainConfig, Trainer};

fn desk_setup() -> (Dataset, Trainer) {
    let data = Dataset::from_synth(&synth_corpus(0, 120, 12, 400), ContextOptions::default()).unwrap();
    let cfg = TrainConfig {
        transe_epochs: 5,
        ..Default::default()
    };
    let trainer = Trainer::new(cfg, &data).unwrap();
    (data, trainer)
}

fn model(c: &mut Criterion) {
    let (data, trainer) = desk_setup();
    let ex = &data.train[0];
    let opts = LossOptions::default();
    let mut model = trainer.model.clone();

    c.bench_function("forward_backward_example", |b| {
        b.iter(|| {
            let mut g = Graph::training(7);
            let (loss, _) = example_loss(&model, &mut g, ex, &opts).unwrap();
            g.backward(loss, &mut model.store).unwrap();
            model.store.zero_grads();
        })
    });
    c.bench_function("greedy_decode", |b| {
        b.iter(|| greedy_decode(&trainer.model, ex.fact, &ex.contexts, 12).unwrap())
    });
    c.bench_function("train_epoch_16", |b| {
        let batch = &data.train[..16];
        b.iter_batched(
            || trainer.clone(),
            |mut t| black_box(t.train_epoch(batch).unwrap()),
            criterion::BatchSize::LargeInput,
        )
    });
}

fn kb(c: &mut Criterion) {
    let data = Dataset::from_synth(&synth_corpus(0, 120, 12, 400), ContextOptions::default()).unwrap();
    let cfg = TransEConfig {
        epochs: 1,
        ..Default::default()
    };
    c.bench_function("transe_epoch", |b| {
        b.iter(|| pretrain_transe(&data.triples, data.kb.vocab.len(), 32, &cfg).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let data = Dataset::from_synth(&synth_corpus(0, 120, 12, 400), ContextOptions::default()).unwrap();
    let refs: Vec<Vec<String>> = data.train.iter().map(|e| e.reference.clone()).collect();
    let mut cands = refs.clone();
    cands.rotate_left(1);
    c.bench_function("bleu4_320", |b| b.iter(|| bleu4(black_box(&cands), &refs)));
    c.bench_function("rouge_l_320", |b| b.iter(|| rouge_l(black_box(&cands), &refs)));
    c.bench_function("meteor_lite_320", |b| b.iter(|| meteor_lite(black_box(&cands), &refs)));
}

criterion_group!(benches, model, kb, metrics);
criterion_main!(benches);
