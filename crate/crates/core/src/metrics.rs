//! Corpus BLEU-4, ROUGE-L, a dictionary-free METEOR, answer coverage and
//! annotation export.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ROUGE_BETA: f64 = 1.2;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 as a percentage. Clipped n-gram counts and lengths
/// are summed over the corpus; a zero match count for n ≥ 2 is smoothed to
/// `(m + 1) / (t + 1)`.
pub fn bleu4(candidates: &[Vec<String>], references: &[Vec<String>]) -> f64 {
    assert_eq!(candidates.len(), references.len());
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 || matched[0] == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let p = if n > 0 && matched[n] == 0 {
            1.0 / (total[n] + 1) as f64
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_p += p.ln() / 4.0;
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    100.0 * bp * log_p.exp()
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure of one pair in `[0, 1]`.
pub fn rouge_l_pair(candidate: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean per-pair ROUGE-L as a percentage.
pub fn rouge_l(candidates: &[Vec<String>], references: &[Vec<String>]) -> f64 {
    assert_eq!(candidates.len(), references.len());
    if candidates.is_empty() {
        return 0.0;
    }
    let s: f64 = candidates.iter().zip(references).map(|(c, r)| rouge_l_pair(c, r)).sum();
    100.0 * s / candidates.len() as f64
}

/// Strips the first of `ing`, `es`, `ed`, `s` that leaves at least three
/// characters.
pub fn stem(word: &str) -> &str {
    for suf in ["ing", "es", "ed", "s"] {
        if let Some(s) = word.strip_suffix(suf) {
            if s.chars().count() >= 3 {
                return s;
            }
        }
    }
    word
}

/// Alignment statistics of one METEOR pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeteorStats {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Aligns in two stages (exact, then stem). Within a stage the longest
/// run of consecutive matches among unaligned tokens is taken first,
/// earliest candidate then reference position on ties.
fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut c_used = vec![false; candidate.len()];
    let mut r_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let stages: [fn(&str, &str) -> bool; 2] = [|a, b| a == b, |a, b| stem(a) == stem(b)];
    for same in stages {
        loop {
            let mut best: Option<(usize, usize, usize)> = None;
            for i in 0..candidate.len() {
                for j in 0..reference.len() {
                    let mut k = 0;
                    while i + k < candidate.len()
                        && j + k < reference.len()
                        && !c_used[i + k]
                        && !r_used[j + k]
                        && same(&candidate[i + k], &reference[j + k])
                    {
                        k += 1;
                    }
                    if k > 0 && best.map_or(true, |b| k > b.2) {
                        best = Some((i, j, k));
                    }
                }
            }
            let Some((i, j, k)) = best else { break };
            for d in 0..k {
                c_used[i + d] = true;
                r_used[j + d] = true;
                pairs.push((i + d, j + d));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn meteor_pair(candidate: &[String], reference: &[String]) -> MeteorStats {
    let pairs = align(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return MeteorStats {
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            f_mean: 0.0,
            penalty: 0.0,
            score: 0.0,
        };
    }
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    MeteorStats {
        matches: m,
        chunks,
        precision: p,
        recall: r,
        f_mean,
        penalty,
        score: f_mean * (1.0 - penalty),
    }
}

/// Mean per-pair METEOR-lite score as a percentage.
pub fn meteor_lite(candidates: &[Vec<String>], references: &[Vec<String>]) -> f64 {
    assert_eq!(candidates.len(), references.len());
    if candidates.is_empty() {
        return 0.0;
    }
    let s: f64 = candidates.iter().zip(references).map(|(c, r)| meteor_pair(c, r).score).sum();
    100.0 * s / candidates.len() as f64
}

/// First answer word (in `answers` order) present in `candidate`.
pub fn matched_answer<'a>(candidate: &[String], answers: &'a [String]) -> Option<&'a String> {
    answers.iter().find(|a| candidate.contains(a))
}

/// Percentage of candidates containing at least one of their answer-type
/// words.
pub fn answer_coverage(candidates: &[Vec<String>], answers: &[Vec<String>]) -> f64 {
    assert_eq!(candidates.len(), answers.len());
    let covered = candidates
        .iter()
        .zip(answers)
        .filter(|(c, a)| matched_answer(c, a).is_some())
        .count();
    percent(covered, candidates.len())
}

fn percent(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// Percentage of predicates for which at least half of the generated
/// questions contain no answer-type word.
pub fn predicate_omission(predicates: &[String], covered: &[bool]) -> f64 {
    assert_eq!(predicates.len(), covered.len());
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (p, &c) in predicates.iter().zip(covered) {
        let e = per.entry(p).or_default();
        e.0 += usize::from(!c);
        e.1 += 1;
    }
    let omitting = per.values().filter(|(miss, n)| 2 * miss >= *n).count();
    percent(omitting, per.len())
}

/// One evaluated generation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub predicate: String,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
    pub answers: Vec<String>,
    pub covered: bool,
    pub matched: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub answer_coverage: f64,
    pub predicate_omission: f64,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn new(records: Vec<EvalRecord>) -> Self {
        let cands: Vec<Vec<String>> = records.iter().map(|r| r.candidate.clone()).collect();
        let refs: Vec<Vec<String>> = records.iter().map(|r| r.reference.clone()).collect();
        let answers: Vec<Vec<String>> = records.iter().map(|r| r.answers.clone()).collect();
        let preds: Vec<String> = records.iter().map(|r| r.predicate.clone()).collect();
        let covered: Vec<bool> = records.iter().map(|r| r.covered).collect();
        EvalReport {
            bleu4: bleu4(&cands, &refs),
            rouge_l: rouge_l(&cands, &refs),
            meteor: meteor_lite(&cands, &refs),
            answer_coverage: answer_coverage(&cands, &answers),
            predicate_omission: predicate_omission(&preds, &covered),
            records,
        }
    }

    /// Builds records from parallel slices.
    pub fn evaluate(
        predicates: &[String],
        candidates: &[Vec<String>],
        references: &[Vec<String>],
        answers: &[Vec<String>],
    ) -> Self {
        let records = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let matched = matched_answer(c, &answers[i]).cloned();
                EvalRecord {
                    predicate: predicates[i].clone(),
                    candidate: c.clone(),
                    reference: references[i].clone(),
                    answers: answers[i].clone(),
                    covered: matched.is_some(),
                    matched,
                }
            })
            .collect();
        Self::new(records)
    }

    fn rows(&self) -> [(&'static str, f64); 5] {
        [
            ("bleu4", self.bleu4),
            ("rouge_l", self.rouge_l),
            ("meteor", self.meteor),
            ("answer_coverage", self.answer_coverage),
            ("predicate_omission", self.predicate_omission),
        ]
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<20}{:>10}\n", "metric", "value");
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k:<20}{v:>10.4}");
        }
        let _ = writeln!(s, "{:<20}{:>10}", "examples", self.records.len());
        s
    }

    pub fn tsv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k}\t{v:.6}");
        }
        s
    }

    /// `candidate<TAB>reference<TAB>covered<TAB>matched` per example.
    pub fn records_tsv(&self) -> String {
        let mut s = String::from("candidate\treference\tcovered\tmatched\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                r.candidate.join(" "),
                r.reference.join(" "),
                u8::from(r.covered),
                r.matched.as_deref().unwrap_or("")
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRow {
    pub fact: String,
    pub predicate_context: String,
    pub question: String,
}

/// Seeded sample of `n` rows (kept in input order) with empty judgment
/// columns for predicate identification (0/1) and naturalness (0–5).
pub fn export_annotation_sample(rows: &[AnnotationRow], n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, rows.len(), n.min(rows.len())).into_vec();
    idx.sort_unstable();
    let mut s = String::from("fact\tpredicate_context\tquestion\tpredicate_identified\tnaturalness\n");
    for i in idx {
        let r = &rows[i];
        let _ = writeln!(s, "{}\t{}\t{}\t\t", r.fact, r.predicate_context, r.question);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(v: &[&str]) -> Vec<Vec<String>> {
        v.iter().map(|s| t(s)).collect()
    }

    #[test]
    fn bleu_hand_cases() {
        let c = corpus(&["the cat sat"]);
        let r = corpus(&["the cat sat down"]);
        // p1 = p2 = p3 = 1, no 4-grams: smoothed 1/1
        let expect = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        assert!((bleu4(&c, &r) - expect).abs() < 1e-10);
        assert_eq!(format!("{:.4}", bleu4(&c, &r)), "71.6531");
        assert_eq!(bleu4(&corpus(&["a b"]), &corpus(&["c d"])), 0.0);
        let x = corpus(&["what city is it in ?", "who", "a b c"]);
        assert_eq!(bleu4(&x, &x), 100.0);
    }

    #[test]
    fn bleu_clips_and_smooths() {
        let c = corpus(&["the the the the"]);
        let r = corpus(&["the cat"]);
        // p1 = 1/4, p2..p4 smoothed: 1/4, 1/3, 1/2; bp = 1
        let expect = 100.0 * (0.25f64 * 0.25 * (1.0 / 3.0) * 0.5).powf(0.25);
        assert!((bleu4(&c, &r) - expect).abs() < 1e-10);
    }

    #[test]
    fn rouge_hand_cases() {
        let v = rouge_l(&corpus(&["a b c"]), &corpus(&["a c b"]));
        assert!((v - 200.0 / 3.0).abs() < 1e-10);
        assert_eq!(rouge_l(&corpus(&["x y"]), &corpus(&["x y"])), 100.0);
        assert_eq!(rouge_l(&corpus(&["x y"]), &corpus(&["z"])), 0.0);
        // P = 1, R = 1/2: F = 2.44 · 0.5 / (0.5 + 1.44)
        let v = rouge_l_pair(&t("a b"), &t("a x b y"));
        assert!((v - 2.44 * 0.5 / 1.94).abs() < 1e-12);
    }

    fn brute_lcs(a: &[String], b: &[String]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            let mut it = b.iter();
            if sub.iter().all(|w| it.any(|x| x == *w)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    #[test]
    fn stemming() {
        assert_eq!(stem("cities"), "citi");
        assert_eq!(stem("boxes"), "box");
        assert_eq!(stem("located"), "locat");
        assert_eq!(stem("singing"), "sing");
        assert_eq!(stem("cats"), "cat");
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("goes"), "goe");
    }

    #[test]
    fn meteor_hand_cases() {
        let s = meteor_pair(&t("a b c d"), &t("a b c d"));
        assert_eq!((s.matches, s.chunks), (4, 1));
        assert!((s.score - (1.0 - 0.5 / 64.0)).abs() < 1e-12);
        assert_eq!(meteor_lite(&corpus(&["x"]), &corpus(&["y"])), 0.0);

        // "cities" stems to "citi", so only "which" aligns
        let s = meteor_pair(&t("which cities"), &t("which city"));
        assert_eq!(s.matches, 1);
        let s = meteor_pair(&t("where was it located"), &t("where is it locates"));
        assert_eq!((s.matches, s.chunks), (3, 2));
        let (p, r) = (0.75, 0.75);
        let f = 10.0 * p * r / (r + 9.0 * p);
        let expect = f * (1.0 - 0.5 * (2.0f64 / 3.0).powi(3));
        assert!((s.score - expect).abs() < 1e-12);
        assert_eq!(format!("{:.4}", 100.0 * s.score), "63.8889");
    }

    #[test]
    fn meteor_prefers_long_runs() {
        // greedy run alignment keeps "a b" contiguous: one chunk of 2
        let s = meteor_pair(&t("a b"), &t("a x a b"));
        assert_eq!((s.matches, s.chunks), (2, 1));
    }

    #[test]
    fn coverage_cases() {
        let c = corpus(&["which city is x in ?", "where is x ?", "what city", "who"]);
        let a = vec![t("city location"), t("city"), t("town city"), vec![]];
        assert_eq!(answer_coverage(&c, &a), 50.0);
        assert_eq!(matched_answer(&c[2], &a[2]), Some(&"city".to_string()));
        let third = answer_coverage(&c[..3], &a[..3]);
        assert_eq!(third, 200.0 / 3.0);
    }

    #[test]
    fn omission_counts_predicates() {
        let p: Vec<String> = ["p", "p", "q", "q", "r"].map(String::from).to_vec();
        assert_eq!(predicate_omission(&p, &[true, false, true, true, false]), 200.0 / 3.0);
        assert_eq!(predicate_omission(&p, &[true; 5]), 0.0);
    }

    #[test]
    fn report_renders() {
        let preds = vec!["p".to_string(), "q".to_string()];
        let c = corpus(&["which city is x in ?", "when was y born ?"]);
        let a = vec![t("city"), vec![]];
        let r = EvalReport::evaluate(&preds, &c, &c, &a);
        assert_eq!(r.bleu4, 100.0);
        assert_eq!(r.answer_coverage, 50.0);
        assert_eq!(r.predicate_omission, 50.0);
        assert!(r.tsv().starts_with("bleu4\t100.000000\n"));
        assert!(r.table().lines().nth(1).unwrap().ends_with("100.0000"));
        assert_eq!(r.records_tsv().lines().nth(1).unwrap(), "which city is x in ?\twhich city is x in ?\t1\tcity");
    }

    #[test]
    fn annotation_sample_is_seeded() {
        let rows: Vec<AnnotationRow> = (0..10)
            .map(|i| AnnotationRow {
                fact: format!("s{i} p o"),
                predicate_context: "born in".into(),
                question: format!("q{i}"),
            })
            .collect();
        let a = export_annotation_sample(&rows, 4, 7);
        assert_eq!(a, export_annotation_sample(&rows, 4, 7));
        assert_eq!(a.lines().count(), 5);
        assert!(a.lines().skip(1).all(|l| l.ends_with("\t\t") && l.split('\t').count() == 5));
        assert_eq!(export_annotation_sample(&rows, 50, 0).lines().count(), 11);
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "cats", "cat"]), 1..7)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(a in sentence(), b in sentence()) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn metrics_are_permutation_invariant(pairs in prop::collection::vec((sentence(), sentence()), 1..6), rot in 0usize..6) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let k = rot % c.len();
            let (mut c2, mut r2) = (c.clone(), r.clone());
            c2.rotate_left(k);
            r2.rotate_left(k);
            prop_assert!((bleu4(&c, &r) - bleu4(&c2, &r2)).abs() < 1e-9);
            prop_assert!((rouge_l(&c, &r) - rouge_l(&c2, &r2)).abs() < 1e-9);
            prop_assert!((meteor_lite(&c, &r) - meteor_lite(&c2, &r2)).abs() < 1e-9);
        }

        #[test]
        fn ranges_hold(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            for v in [bleu4(&c, &r), rouge_l(&c, &r), meteor_lite(&c, &r)] {
                prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
            }
            for (x, y) in c.iter().zip(&r) {
                let s = meteor_pair(x, y);
                prop_assert!((0.0..=0.5).contains(&s.penalty));
                prop_assert!(s.chunks <= s.matches);
            }
            prop_assert!((bleu4(&c, &c) - 100.0).abs() < 1e-9);
            prop_assert!((rouge_l(&c, &c) - 100.0).abs() < 1e-9);
        }
    }
}
