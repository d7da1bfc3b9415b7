use std::collections::HashSet;

use super::kb::{Fact, KnowledgeBase};
use super::tokenize::tokenize;
use super::vocab::{Vocab, BOS, EOS, SUBJ_PH, UNK};
use crate::error::{Error, Result};

pub const MAX_CONTEXT_TOKENS: usize = 16;

/// Which textual context a token belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Subject = 0,
    Predicate = 1,
    Object = 2,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Subject, Segment::Predicate, Segment::Object];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// How textual contexts are assembled from KB records.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextOptions {
    /// Add domain/range/topic to predicate contexts and notable types to
    /// entity contexts. When off, predicates use only their DS patterns and
    /// entities only their frequent type.
    pub diversified: bool,
    pub max_tokens: usize,
    /// Replace the subject name in questions by the placeholder token.
    pub subject_placeholder: bool,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions {
            diversified: true,
            max_tokens: MAX_CONTEXT_TOKENS,
            subject_placeholder: true,
        }
    }
}

/// Context token lists `x^s`, `x^p`, `x^o` as word ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    pub subject: Vec<usize>,
    pub predicate: Vec<usize>,
    pub object: Vec<usize>,
}

impl ContextSet {
    pub fn get(&self, seg: Segment) -> &[usize] {
        match seg {
            Segment::Subject => &self.subject,
            Segment::Predicate => &self.predicate,
            Segment::Object => &self.object,
        }
    }

    /// `(token, segment)` pairs in `s, p, o` order.
    pub fn tokens_with_segments(&self) -> impl Iterator<Item = (usize, Segment)> + '_ {
        Segment::ALL
            .into_iter()
            .flat_map(move |seg| self.get(seg).iter().map(move |&t| (t, seg)))
    }

    pub fn segment_ids(&self) -> Vec<Segment> {
        self.tokens_with_segments().map(|(_, s)| s).collect()
    }

    pub fn len(&self) -> usize {
        self.subject.len() + self.predicate.len() + self.object.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub fact: Fact,
    pub contexts: ContextSet,
    /// `BOS y_1 … y_n EOS` as word ids.
    pub question: Vec<usize>,
    /// Answer-type words `A`: object-context words that belong to the
    /// generation vocabulary. Sorted, unique, possibly empty.
    pub answer_words: Vec<usize>,
    /// `(start, len)` of the subject name in the tokenized question.
    pub subject_span: Option<(usize, usize)>,
    pub subject_name: Vec<String>,
    /// The gold question tokens with the subject name spelled out.
    pub reference: Vec<String>,
}

fn dedup_truncate(tokens: impl IntoIterator<Item = String>, max: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    tokens
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .take(max)
        .collect()
}

/// Context token strings for one fact, before vocabulary lookup.
pub fn context_tokens(fact: Fact, kb: &KnowledgeBase, opts: &ContextOptions) -> Result<[Vec<String>; 3]> {
    let missing = |what: &str, i: usize| Error::contract(format!("unresolvable {what} index {i}"));
    let subj = kb.entity(fact.subject).ok_or_else(|| missing("subject", fact.subject))?;
    let pred = kb.predicate(fact.predicate).ok_or_else(|| missing("predicate", fact.predicate))?;
    let obj = kb.entity(fact.object).ok_or_else(|| missing("object", fact.object))?;

    let entity = |e: &super::EntityRecord| {
        let toks: Vec<String> = if opts.diversified {
            e.frequent_type.iter().chain(&e.notable_type).cloned().collect()
        } else {
            e.frequent_type.clone()
        };
        dedup_truncate(toks, opts.max_tokens)
    };
    let mut p: Vec<String> = pred.ds_patterns.iter().flatten().cloned().collect();
    if opts.diversified {
        p.extend(pred.domain.iter().chain(&pred.range).chain(&pred.topic).cloned());
    }
    let mut out = [entity(subj), dedup_truncate(p, opts.max_tokens), entity(obj)];
    // Only reachable with diversification off; the encoder needs ≥ 1 token.
    for ctx in &mut out {
        if ctx.is_empty() {
            ctx.push(super::vocab::SPECIAL_TOKENS[UNK].to_string());
        }
    }
    Ok(out)
}

pub fn build_context_set(fact: Fact, kb: &KnowledgeBase, vocab: &Vocab, opts: &ContextOptions) -> Result<ContextSet> {
    let [s, p, o] = context_tokens(fact, kb, opts)?;
    let ids = |t: Vec<String>| t.iter().map(|w| vocab.lookup(w)).collect();
    Ok(ContextSet {
        subject: ids(s),
        predicate: ids(p),
        object: ids(o),
    })
}

/// Replaces the first exact occurrence of `name` in `tokens` by the
/// placeholder string, returning the new tokens and the replaced span.
pub fn replace_subject(tokens: &[String], name: &[String], placeholder: &str) -> (Vec<String>, Option<(usize, usize)>) {
    if name.is_empty() || name.len() > tokens.len() {
        return (tokens.to_vec(), None);
    }
    match tokens.windows(name.len()).position(|w| w == name) {
        Some(start) => {
            let mut out = tokens[..start].to_vec();
            out.push(placeholder.to_string());
            out.extend_from_slice(&tokens[start + name.len()..]);
            (out, Some((start, name.len())))
        }
        None => (tokens.to_vec(), None),
    }
}

/// Question tokens as fed to the vocabulary builder: tokenized, with the
/// subject name replaced when `opts.subject_placeholder` is set.
pub fn question_tokens(question: &str, fact: Fact, kb: &KnowledgeBase, opts: &ContextOptions) -> Result<Vec<String>> {
    let toks = tokenize(question);
    if toks.is_empty() {
        return Err(Error::contract("empty question"));
    }
    if !opts.subject_placeholder {
        return Ok(toks);
    }
    let name = &kb
        .entity(fact.subject)
        .ok_or_else(|| Error::contract(format!("unresolvable subject index {}", fact.subject)))?
        .name;
    Ok(replace_subject(&toks, name, super::vocab::SPECIAL_TOKENS[SUBJ_PH]).0)
}

pub fn prepare_example(
    question: &str,
    fact: Fact,
    kb: &KnowledgeBase,
    vocab: &Vocab,
    opts: &ContextOptions,
) -> Result<Example> {
    let toks = tokenize(question);
    if toks.is_empty() {
        return Err(Error::contract("empty question"));
    }
    let subject = kb
        .entity(fact.subject)
        .ok_or_else(|| Error::contract(format!("unresolvable subject index {}", fact.subject)))?;
    let (replaced, span) = if opts.subject_placeholder {
        replace_subject(&toks, &subject.name, super::vocab::SPECIAL_TOKENS[SUBJ_PH])
    } else {
        (toks.clone(), None)
    };
    let contexts = build_context_set(fact, kb, vocab, opts)?;

    let mut question = Vec::with_capacity(replaced.len() + 2);
    question.push(BOS);
    question.extend(replaced.iter().map(|t| vocab.lookup(t)));
    question.push(EOS);

    let mut answer_words: Vec<usize> = contexts
        .object
        .iter()
        .copied()
        .filter(|&w| w != UNK && w < vocab.gen_size())
        .collect();
    answer_words.sort_unstable();
    answer_words.dedup();

    Ok(Example {
        fact,
        contexts,
        question,
        answer_words,
        subject_span: span,
        subject_name: subject.name.clone(),
        reference: toks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityRecord, PredicateRecord};

    fn s(v: &str) -> Vec<String> {
        v.split_whitespace().map(String::from).collect()
    }

    fn toy_kb() -> KnowledgeBase {
        KnowledgeBase::from_records(
            vec![
                EntityRecord {
                    id: "m.sol".into(),
                    name: s("statue of liberty"),
                    frequent_type: s("structure"),
                    notable_type: s("monument"),
                },
                EntityRecord {
                    id: "m.ny".into(),
                    name: s("new york"),
                    frequent_type: s("administrative region"),
                    notable_type: s("us state"),
                },
                EntityRecord {
                    id: "m.nyc".into(),
                    name: s("new york city"),
                    frequent_type: s("city"),
                    notable_type: s("city"),
                },
            ],
            vec![PredicateRecord {
                id: "location/containedby".into(),
                domain: vec![],
                range: s("location"),
                topic: s("containedby"),
                ds_patterns: vec![],
            }],
        )
        .unwrap()
    }

    fn fact(kb: &KnowledgeBase, s: &str, o: &str) -> Fact {
        kb.resolve(s, "location/containedby", o).unwrap()
    }

    fn vocab(kb: &KnowledgeBase) -> Vocab {
        let q = s("which city is <subj> located in ?");
        let qs = [q.clone(), q];
        Vocab::build(qs.iter().map(|q| q.as_slice()), kb.context_words(), 2)
    }

    #[test]
    fn predicate_context_uses_range_and_topic() {
        let kb = toy_kb();
        let [_, p, _] = context_tokens(fact(&kb, "m.sol", "m.ny"), &kb, &ContextOptions::default()).unwrap();
        assert!(p.contains(&"location".to_string()) && p.contains(&"containedby".to_string()));
    }

    #[test]
    fn entity_context_merges_broad_and_notable_types() {
        let kb = toy_kb();
        let [_, _, o] = context_tokens(fact(&kb, "m.sol", "m.ny"), &kb, &ContextOptions::default()).unwrap();
        assert_eq!(o, s("administrative region us state"));
    }

    #[test]
    fn identical_types_appear_once() {
        let kb = toy_kb();
        let [_, _, o] = context_tokens(fact(&kb, "m.sol", "m.nyc"), &kb, &ContextOptions::default()).unwrap();
        assert_eq!(o, s("city"));
    }

    #[test]
    fn ablated_contexts_fall_back_to_unk() {
        let kb = toy_kb();
        let opts = ContextOptions {
            diversified: false,
            ..Default::default()
        };
        let [subj, p, o] = context_tokens(fact(&kb, "m.sol", "m.ny"), &kb, &opts).unwrap();
        assert_eq!(subj, s("structure"));
        assert_eq!(p, ["<unk>"]);
        assert_eq!(o, s("administrative region"));
    }

    #[test]
    fn subject_name_becomes_placeholder() {
        let kb = toy_kb();
        let v = vocab(&kb);
        let f = fact(&kb, "m.sol", "m.nyc");
        let ex = prepare_example("Which city is Statue of Liberty located in?", f, &kb, &v, &ContextOptions::default())
            .unwrap();
        let words: Vec<&str> = ex.question.iter().map(|&i| v.token(i)).collect();
        assert_eq!(words, ["<s>", "which", "city", "is", "<subj>", "located", "in", "?", "</s>"]);
        assert_eq!(ex.subject_span, Some((3, 3)));
        assert_eq!(ex.reference.join(" "), "which city is statue of liberty located in ?");
        assert_eq!(ex.answer_words, vec![v.id("city").unwrap()]);
    }

    #[test]
    fn absent_subject_leaves_question_unchanged() {
        let kb = toy_kb();
        let v = vocab(&kb);
        let ex = prepare_example("where is it ?", fact(&kb, "m.sol", "m.ny"), &kb, &v, &ContextOptions::default())
            .unwrap();
        assert_eq!(ex.subject_span, None);
        assert_eq!(ex.question.len(), 6);
    }

    #[test]
    fn only_first_occurrence_replaced() {
        let q = s("is new york in new york ?");
        let (out, span) = replace_subject(&q, &s("new york"), "<subj>");
        assert_eq!(out, s("is <subj> in new york ?"));
        assert_eq!(span, Some((1, 2)));
    }

    #[test]
    fn empty_question_rejected() {
        let kb = toy_kb();
        let v = vocab(&kb);
        let err = prepare_example(" ", fact(&kb, "m.sol", "m.ny"), &kb, &v, &ContextOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn answer_words_subset_of_object_context() {
        let kb = toy_kb();
        let v = vocab(&kb);
        let opts = ContextOptions::default();
        let ex = prepare_example("where ?", fact(&kb, "m.sol", "m.nyc"), &kb, &v, &opts).unwrap();
        assert!(!ex.answer_words.is_empty());
        assert!(ex.answer_words.iter().all(|a| ex.contexts.object.contains(a)));
        // none of "administrative region us state" is ever asked about
        let ex = prepare_example("where ?", fact(&kb, "m.sol", "m.ny"), &kb, &v, &opts).unwrap();
        assert!(ex.answer_words.is_empty());
    }
}
