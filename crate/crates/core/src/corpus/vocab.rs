use std::collections::{BTreeSet, HashMap};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SUBJ_PH: usize = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<subj>"];

/// Word vocabulary.
///
/// Ids `0..gen_size` form the generation vocabulary `V` (special tokens
/// first, then question words seen at least `min_freq` times in training).
/// Ids `gen_size..` are words that occur only in textual contexts: they have
/// no embedding row of their own and can only be produced by copying.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    gen_size: usize,
}

impl Vocab {
    /// `questions`: training questions, already carrying the subject
    /// placeholder. `context_words`: every token any context can contain.
    pub fn build<'a, Q, C>(questions: Q, context_words: C, min_freq: usize) -> Self
    where
        Q: IntoIterator<Item = &'a [String]>,
        C: IntoIterator<Item = &'a String>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for q in questions {
            for t in q {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut frequent: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(t))
            .collect();
        frequent.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(frequent.iter().map(|(t, _)| t.to_string()));
        let gen_size = tokens.len();
        let mut index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();

        let rest: BTreeSet<&String> = context_words.into_iter().filter(|t| !index.contains_key(*t)).collect();
        for t in rest {
            index.insert(t.clone(), tokens.len());
            tokens.push(t.clone());
        }
        Vocab { tokens, index, gen_size }
    }

    /// Rebuilds a vocabulary from its token list (as stored in a checkpoint).
    pub fn from_tokens(tokens: Vec<String>, gen_size: usize) -> Self {
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocab { tokens, index, gen_size }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Size of the generation vocabulary `V`.
    pub fn gen_size(&self) -> usize {
        self.gen_size
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn lookup(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Row of the embedding table used when `id` is fed as input.
    pub fn embedding_row(&self, id: usize) -> usize {
        if id < self.gen_size {
            id
        } else {
            UNK
        }
    }
}

/// Dense index over KB identifiers (entities and predicates share one space).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KbVocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl KbVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `id`, returning its index and whether it was new.
    pub fn insert(&mut self, id: &str) -> (usize, bool) {
        if let Some(&i) = self.index.get(id) {
            return (i, false);
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        (i, true)
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
