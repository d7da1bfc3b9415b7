//! KB records, tokenization, vocabularies and training examples.

mod example;
mod kb;
pub mod synth;
mod tokenize;
mod vocab;

use std::path::Path;

pub use example::{
    build_context_set, context_tokens, prepare_example, question_tokens, replace_subject, ContextOptions, ContextSet,
    Example, Segment, MAX_CONTEXT_TOKENS,
};
pub use kb::{
    load_entities, load_facts, load_kb, load_predicates, resolve_facts, write_entities, write_facts, write_predicates,
    CorpusFiles, EntityRecord, Fact, KnowledgeBase, PredicateRecord, RawFact, Split,
};
pub use synth::{synth_corpus, SynthCorpus};
pub use tokenize::tokenize;
pub use vocab::{KbVocab, Vocab, BOS, EOS, PAD, SPECIAL_TOKENS, SUBJ_PH, UNK};

use crate::error::Result;

pub const MIN_WORD_FREQ: usize = 2;

/// Writes a synthetic corpus in the on-disk TSV layout.
pub fn write_corpus(dir: &Path, corpus: &SynthCorpus) -> Result<CorpusFiles> {
    std::fs::create_dir_all(dir)?;
    let files = CorpusFiles::in_dir(dir);
    write_entities(&files.entities, &corpus.entities)?;
    write_predicates(&files.predicates, &corpus.predicates)?;
    write_facts(&files.kb_triples, &corpus.kb_triples)?;
    write_facts(&files.train, &corpus.train)?;
    write_facts(&files.valid, &corpus.valid)?;
    write_facts(&files.test, &corpus.test)?;
    Ok(files)
}

/// A loaded corpus: KB, word vocabulary and prepared examples per split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub kb: KnowledgeBase,
    pub vocab: Vocab,
    pub options: ContextOptions,
    /// Every KB triple, question-bearing facts included.
    pub triples: Vec<Fact>,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    /// Loads a corpus directory and builds the vocabulary from its
    /// training questions.
    pub fn load(dir: &Path, options: ContextOptions) -> Result<Self> {
        Self::load_inner(dir, options, None)
    }

    /// Loads a corpus directory reusing an existing vocabulary.
    pub fn load_with_vocab(dir: &Path, options: ContextOptions, vocab: Vocab) -> Result<Self> {
        Self::load_inner(dir, options, Some(vocab))
    }

    fn load_inner(dir: &Path, options: ContextOptions, vocab: Option<Vocab>) -> Result<Self> {
        let files = CorpusFiles::in_dir(dir);
        let kb = load_kb(&files.entities, &files.predicates)?;
        let mut raw: Vec<Vec<(String, Fact)>> = Vec::with_capacity(3);
        for split in [Split::Train, Split::Valid, Split::Test] {
            let path = files.split(split);
            let facts = load_facts(path)?;
            let resolved = resolve_facts(&kb, path, &facts)?;
            raw.push(facts.into_iter().zip(resolved).map(|(r, f)| (r.question, f)).collect());
        }
        let triples = if files.kb_triples.exists() {
            let facts = load_facts(&files.kb_triples)?;
            resolve_facts(&kb, &files.kb_triples, &facts)?
        } else {
            raw.iter().flatten().map(|(_, f)| *f).collect()
        };
        let test = raw.pop().unwrap();
        let valid = raw.pop().unwrap();
        let train = raw.pop().unwrap();
        Self::from_parts(kb, triples, &train, &valid, &test, options, vocab)
    }

    /// Builds a dataset from already resolved `(question, fact)` pairs.
    pub fn from_parts(
        kb: KnowledgeBase,
        triples: Vec<Fact>,
        train: &[(String, Fact)],
        valid: &[(String, Fact)],
        test: &[(String, Fact)],
        options: ContextOptions,
        vocab: Option<Vocab>,
    ) -> Result<Self> {
        let vocab = match vocab {
            Some(v) => v,
            None => {
                let questions = train
                    .iter()
                    .map(|(q, f)| question_tokens(q, *f, &kb, &options))
                    .collect::<Result<Vec<_>>>()?;
                Vocab::build(questions.iter().map(|q| q.as_slice()), kb.context_words(), MIN_WORD_FREQ)
            }
        };
        let prep = |rows: &[(String, Fact)]| {
            rows.iter()
                .map(|(q, f)| prepare_example(q, *f, &kb, &vocab, &options))
                .collect::<Result<Vec<_>>>()
        };
        let (train, valid, test) = (prep(train)?, prep(valid)?, prep(test)?);
        Ok(Dataset {
            kb,
            vocab,
            options,
            triples,
            train,
            valid,
            test,
        })
    }

    /// Builds a dataset straight from an in-memory synthetic corpus.
    pub fn from_synth(corpus: &SynthCorpus, options: ContextOptions) -> Result<Self> {
        let kb = KnowledgeBase::from_records(corpus.entities.clone(), corpus.predicates.clone())?;
        let resolve = |rows: &[RawFact]| -> Result<Vec<(String, Fact)>> {
            rows.iter()
                .map(|r| {
                    let f = kb
                        .resolve(&r.subject, &r.predicate, &r.object)
                        .map_err(crate::error::Error::Contract)?;
                    Ok((r.question.clone(), f))
                })
                .collect()
        };
        let triples = resolve(&corpus.kb_triples)?.into_iter().map(|(_, f)| f).collect();
        let (train, valid, test) = (resolve(&corpus.train)?, resolve(&corpus.valid)?, resolve(&corpus.test)?);
        Self::from_parts(kb, triples, &train, &valid, &test, options, None)
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_and_memory_agree() {
        let corpus = synth_corpus(11, 80, 6, 150);
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let a = Dataset::load(dir.path(), ContextOptions::default()).unwrap();
        let b = Dataset::from_synth(&corpus, ContextOptions::default()).unwrap();
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.triples, b.triples);
    }

    #[test]
    fn synthetic_examples_are_well_formed() {
        let d = Dataset::from_synth(&synth_corpus(2, 120, 8, 300), ContextOptions::default()).unwrap();
        let mut typed_with_answer = 0;
        for ex in d.train.iter().chain(&d.valid).chain(&d.test) {
            assert_eq!(ex.question[0], BOS);
            assert_eq!(*ex.question.last().unwrap(), EOS);
            assert!(ex.subject_span.is_some());
            assert!(ex.question.contains(&SUBJ_PH));
            assert!(ex.answer_words.iter().all(|a| ex.contexts.object.contains(a)));
            if ex.question[1..].iter().any(|w| ex.answer_words.contains(w)) {
                typed_with_answer += 1;
            }
        }
        assert!(typed_with_answer > 0);
    }
}
