//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a criterion fails that is not listed in `KNOWN_FAILING`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kbqg_core::corpus::{synth_corpus, write_corpus, ContextOptions, Dataset};
use kbqg_core::decoder::{copy_position_scores, decode_states, maxout_copy};
use kbqg_core::diagnostics::{check_model_gradients, random_example, GradCheckSetup};
use kbqg_core::evaluation::evaluate;
use kbqg_core::metrics::{answer_coverage, bleu4, meteor_lite, rouge_l};
use kbqg_core::model::Model;
use kbqg_core::numdiff::{Graph, Tensor};
use kbqg_core::objective::{answer_loss, AnswerPair};
use kbqg_core::trainer::{median, run_ablation, AblationReport, Grid, TrainConfig, Trainer};

/// Criteria expected to fail on the synthetic corpus.
const KNOWN_FAILING: &[usize] = &[9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let setup = GradCheckSetup::default();
    let report = check_model_gradients(&setup).expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    let m = setup.model;
    let shape_ok = m.d == 8 && m.heads == 2 && m.layers == 1 && setup.vocab_size == 30 && setup.context_len == 3;
    outcome(
        shape_ok && report.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "max rel error {:.3e} over {} coordinates in {secs:.1}s",
            report.max_rel_error, report.coordinates
        ),
    )
}

fn distribution_invariants() -> Outcome {
    let setup = GradCheckSetup::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_ext, mut worst_mode, mut maxout_mismatch) = (0f64, 0f64, 0usize);
    for draw in 0..1000u64 {
        let model = Model::new(setup.model, setup.vocab_size, setup.kb_size, draw).unwrap();
        let ex = random_example(&setup, &mut rng);
        let mut g = Graph::new();
        let tf = model.teacher_forced(&mut g, &ex).unwrap();
        for r in 0..g.shape(tf.out.probs).0 {
            let s: f64 = g.value(tf.out.probs).row(r).iter().sum();
            worst_ext = worst_ext.max((s - 1.0).abs());
            let s: f64 = g.value(tf.out.modes).row(r).iter().sum();
            worst_mode = worst_mode.max((s - 1.0).abs());
        }

        let enc = model.encode(&mut g, ex.fact, &ex.contexts).unwrap();
        let inputs = model.embedding_rows(&ex.question[..ex.question.len() - 1]);
        let states = decode_states(&mut g, &model.store, &model.decoder, &inputs, enc.h_f).unwrap();
        let scores = copy_position_scores(&mut g, &model.store, &model.decoder, states, enc.context_rows).unwrap();
        let reduced = maxout_copy(&mut g, scores, &enc.source).unwrap();
        let src = &enc.source;
        for r in 0..inputs.len() {
            let row = g.value(scores).row(r);
            let maxes: Vec<f64> = src
                .group_tokens
                .iter()
                .map(|&w| {
                    (0..src.tokens.len())
                        .filter(|&p| src.tokens[p] == w)
                        .map(|p| row[p])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let total: f64 = maxes.iter().sum();
            let oracle: Vec<f64> = maxes.iter().map(|m| m / total).collect();
            if g.value(reduced).row(r) != oracle.as_slice() {
                maxout_mismatch += 1;
            }
        }
    }
    outcome(
        worst_ext <= 1e-6 && worst_mode <= 1e-9 && maxout_mismatch == 0,
        format!("1000 draws: |sum-1| ext {worst_ext:.2e}, modes {worst_mode:.2e}; maxout mismatches {maxout_mismatch}"),
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let corpus = synth_corpus(0, 24, 6, 62);
    let cfg = TrainConfig {
        lambda: 0.2,
        decay: 1.0,
        epochs: 500,
        ..Default::default()
    };
    let data = Dataset::from_synth(&corpus, cfg.context_options()).unwrap();
    let mut t = Trainer::new(cfg, &data).unwrap();
    let mut bleu = 0.0;
    while t.epoch < 500 {
        t.train_epoch(&data.train).unwrap();
        if t.epoch % 10 == 0 {
            bleu = t.bleu(&data, &data.train).unwrap();
            if bleu >= 90.0 {
                break;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        data.train.len() == 50 && bleu >= 90.0 && secs < 600.0,
        format!(
            "{} train examples: BLEU-4 {bleu:.2} after {} epochs in {secs:.1}s",
            data.train.len(),
            t.epoch
        ),
    )
}

fn ablation_corpus(dir: &Path) -> PathBuf {
    let out = dir.join("corpus");
    if !out.exists() {
        std::fs::create_dir_all(&out).unwrap();
        write_corpus(&out, &synth_corpus(0, 300, 12, 2000)).unwrap();
    }
    out
}

fn ablation_base() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        ..Default::default()
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn answer_loss_direction(dir: &Path) -> Outcome {
    let corpus = ablation_corpus(dir);
    let gold = Dataset::load(&corpus, ContextOptions::default()).unwrap();
    let mut stats: BTreeMap<&str, (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (label, lambda) in [("0", 0.0), ("0.5", 0.5)] {
        let e = stats.entry(label).or_default();
        for seed in SEEDS {
            let cfg = TrainConfig {
                lambda,
                seed,
                ..ablation_base()
            };
            let mut t = Trainer::new(cfg, &gold).unwrap();
            t.run(&gold, |_, _| Ok(())).unwrap();
            let model = t.best_model();
            let r = evaluate(&model, &gold, &gold.test, &gold, &gold.test, &t.decode_options()).unwrap();
            e.0.push(r.answer_coverage);
            e.1.push(r.bleu4);
            e.2.push(r.predicate_omission);
        }
    }
    let m = |l: &str, k: usize| {
        let s = &stats[l];
        median([&s.0, &s.1, &s.2][k])
    };
    let (cov0, cov5) = (m("0", 0), m("0.5", 0));
    let (bleu0, bleu5) = (m("0", 1), m("0.5", 1));
    let omit5 = m("0.5", 2);
    outcome(
        cov5 - cov0 >= 5.0 && bleu0 - bleu5 < 2.0 && omit5 > 0.0,
        format!(
            "coverage {cov0:.2} -> {cov5:.2}, test BLEU-4 {bleu0:.2} -> {bleu5:.2}, omission at 0.5 {omit5:.2}"
        ),
    )
}

fn valid_median(r: &AblationReport, label: &str) -> f64 {
    median(&r.cell(label).expect("variant present").valid_bleu4)
}

fn transe_direction(dir: &Path) -> Outcome {
    let corpus = ablation_corpus(dir);
    let r = run_ablation(&ablation_base(), &corpus, Grid::Transe, &SEEDS, |_, _| {}).unwrap();
    let off_gap = valid_median(&r, "fusion=off transe=on") - valid_median(&r, "fusion=off transe=off");
    let on_gap = valid_median(&r, "fusion=on transe=on") - valid_median(&r, "fusion=on transe=off");
    outcome(
        off_gap > 0.0 && on_gap < off_gap,
        format!("valid BLEU-4 gap from TransE: fusion off {off_gap:.2}, fusion on {on_gap:.2}"),
    )
}

fn metric_oracles() -> Outcome {
    let t = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
    let mut failures = Vec::new();
    let mut check = |name: &str, got: String, want: String| {
        if got != want {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };

    // one candidate, one reference: unigram..trigram precision 1, no
    // 4-gram matches (add-one: 1/1), brevity penalty exp(1 - 4/3)
    let bleu = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
    check(
        "bleu4",
        format!("{:.4}", bleu4(&[t("the cat sat")], &[t("the cat sat down")])),
        format!("{bleu:.4}"),
    );
    // LCS 2 of 3 both ways: P = R = 2/3
    let rouge = 100.0 * 2.0 / 3.0;
    check(
        "rouge_l",
        format!("{:.4}", rouge_l(&[t("a b c")], &[t("a c b")])),
        format!("{rouge:.4}"),
    );
    // where/it exact, was/is unmatched, located~locates by stem: 3 matches
    // in 2 chunks, P = R = 3/4
    let (p, r) = (0.75f64, 0.75f64);
    let f = 10.0 * p * r / (r + 9.0 * p);
    let meteor = 100.0 * f * (1.0 - 0.5 * (2.0f64 / 3.0).powi(3));
    check(
        "meteor",
        format!("{:.4}", meteor_lite(&[t("where was it located")], &[t("where is it locates")])),
        format!("{meteor:.4}"),
    );

    let cands = [t("which city is x in ?"), t("where is x ?"), t("what river"), t("who")];
    let answers = [t("city"), t("city"), t("river lake"), t("")];
    for (n, want) in [(4usize, 50.0), (3, 200.0 / 3.0), (1, 100.0), (2, 50.0)] {
        check(
            "coverage",
            format!("{:?}", answer_coverage(&cands[..n], &answers[..n])),
            format!("{want:?}"),
        );
    }

    let same = [t("what city was x born in ?"), t("who wrote it ?"), t("a b")];
    check("bleu4 identical", format!("{:?}", bleu4(&same, &same)), "100.0".into());
    check("rouge_l identical", format!("{:?}", rouge_l(&same, &same)), "100.0".into());
    let pass = failures.is_empty();
    let detail = if pass {
        format!("bleu4 {bleu:.4}, rouge_l {rouge:.4}, meteor {meteor:.4}, coverage ratios exact")
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn loss_semantics() -> Outcome {
    let mut g = Graph::new();
    // rows: steps t = 1, 2; columns a_1, a_2, other
    let probs = g.constant(Tensor::from_rows(&[&[0.1, 0.25, 0.65], &[0.5, 0.2, 0.3]]));
    let (loss, pair) = answer_loss(&mut g, probs, &[0, 1], None).unwrap();
    let value = g.value(loss).item();
    let four_pair = value == -(0.5f64.ln()) && pair == Some(AnswerPair { answer: 0, step: 1 });

    let corpus = synth_corpus(1, 40, 6, 100);
    let mut cfg = TrainConfig {
        lambda: 0.0,
        epochs: 5,
        ..Default::default()
    };
    let data = Dataset::from_synth(&corpus, cfg.context_options()).unwrap();
    let mut a = Trainer::new(cfg.clone(), &data).unwrap();
    cfg.answer_loss = false;
    let mut b = Trainer::new(cfg, &data).unwrap();
    let mut identical = true;
    for _ in 0..5 {
        let (la, lb) = (a.train_epoch(&data.train).unwrap(), b.train_epoch(&data.train).unwrap());
        identical &= la.to_bits() == lb.to_bits();
    }
    let bits = |t: &Trainer| {
        t.model
            .store
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<u64>>()
    };
    identical &= bits(&a) == bits(&b);
    outcome(
        four_pair && identical,
        format!("four-pair loss {value:.6} at {pair:?}; lambda=0 vs question-only bit-identical: {identical}"),
    )
}

fn kbqg(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_kbqg")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "kbqg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// Runs every subcommand into `root` and returns (name, bytes) of all
/// outputs, stdout included.
fn pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(
        root.join("cfg.txt"),
        "d=8\nheads=2\nlayers=1\nepochs=2\nbatch_size=4\ntranse_epochs=5\nmax_len=8\n",
    )
    .unwrap();
    let mut stdout = Vec::new();
    stdout.push(kbqg(&["synth", "--seed", "4", "--entities", "40", "--predicates", "6", "--facts", "120", "--out-dir", &p("corpus")]));
    stdout.push(kbqg(&["pretrain-kb", "--config", &p("cfg.txt"), "--facts", &p("corpus/kb.tsv"), "--seed", "3", "--out", &p("kb.vec")]));
    stdout.push(kbqg(&["train", "--config", &p("cfg.txt"), "--data-dir", &p("corpus"), "--out-dir", &p("run"), "--seed", "3", "--kb-init", &p("kb.vec")]));
    stdout.push(kbqg(&["generate", "--checkpoint", &p("run/model.ckpt"), "--data-dir", &p("corpus"), "--out", &p("gen.tsv")]));
    stdout.push(kbqg(&["generate", "--checkpoint", &p("run/model.ckpt"), "--data-dir", &p("corpus"), "--out", &p("gen_beam.tsv"), "--beam", "3"]));
    stdout.push(kbqg(&["eval", "--generations", &p("gen.tsv"), "--data-dir", &p("corpus"), "--out", &p("eval"), "--annotate", "10", "--seed", "5"]));
    stdout.push(kbqg(&["gradcheck", "--seed", "2"]));
    stdout.push(kbqg(&["ablate", "--config", &p("cfg.txt"), "--grid", "components", "--data-dir", &p("corpus"), "--seeds", "0,1", "--out-dir", &p("ablate")]));

    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(root).unwrap().display().to_string();
                files.push((name, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    for (i, s) in stdout.into_iter().enumerate() {
        files.push((format!("stdout {i}"), s));
    }
    // the run directory is the only thing allowed to differ
    let prefix = root.display().to_string();
    files
        .into_iter()
        .map(|(n, bytes)| (n, String::from_utf8_lossy(&bytes).replace(&prefix, "<root>").into_bytes()))
        .collect()
}

fn determinism(dir: &Path) -> Outcome {
    let a = pipeline(&dir.join("a"));
    let b = pipeline(&dir.join("b"));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let names_match = a.iter().map(|x| &x.0).eq(b.iter().map(|x| &x.0));
    outcome(
        names_match && differing.is_empty() && a.len() > 10,
        format!("{} output files compared byte for byte; differing: {differing:?}", a.len()),
    )
}

fn component_ablation(dir: &Path) -> Outcome {
    let corpus = ablation_corpus(dir);
    let variants = Grid::Components.variants(&ablation_base());
    let base = &variants[0].config;
    let single_off = variants[1..].iter().all(|v| {
        let flips = [
            v.config.copy_context != base.copy_context,
            v.config.copy_kb != base.copy_kb,
            v.config.answer_loss != base.answer_loss,
            v.config.diversified != base.diversified,
        ];
        flips.iter().filter(|&&f| f).count() == 1
    });
    let r = run_ablation(&ablation_base(), &corpus, Grid::Components, &SEEDS, |_, _| {}).unwrap();
    let full = valid_median(&r, "full");
    let mut worse = Vec::new();
    let mut parts = Vec::new();
    for label in ["-context_copy", "-kb_copy", "-answer_loss", "-diversified"] {
        let v = valid_median(&r, label);
        parts.push(format!("{label} {v:.2}"));
        if v > full {
            worse.push(label);
        }
    }
    outcome(
        single_off && worse.is_empty(),
        format!("full {full:.2}; {}; full below: {worse:?}", parts.join(", ")),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "gradient integrity", Box::new(gradient_integrity)),
        (2, "distribution invariants", Box::new(distribution_invariants)),
        (3, "overfit capability", Box::new(overfit)),
        (4, "answer-aware loss direction", Box::new(|| answer_loss_direction(dir))),
        (5, "TransE ablation direction", Box::new(|| transe_direction(dir))),
        (6, "metric oracles", Box::new(metric_oracles)),
        (7, "loss semantics", Box::new(loss_semantics)),
        (8, "CLI determinism", Box::new(|| determinism(dir))),
        (9, "component ablation", Box::new(|| component_ablation(dir))),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, name, run) in &criteria {
        if !filter.is_empty() && !filter.contains(id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let known = KNOWN_FAILING.contains(id);
        let status = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id} {name}: {status} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass && !known {
            unexpected.push(*id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
