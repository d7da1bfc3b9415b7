use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::tokenize::tokenize;
use super::vocab::KbVocab;
use crate::error::{Error, Result};

/// A triplet fact `(subject, predicate, object)` as KB-vocabulary indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fact {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredicateRecord {
    pub id: String,
    pub domain: Vec<String>,
    pub range: Vec<String>,
    pub topic: Vec<String>,
    /// Distant-supervision relational patterns; empty for most predicates.
    pub ds_patterns: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityRecord {
    pub id: String,
    pub name: Vec<String>,
    pub frequent_type: Vec<String>,
    pub notable_type: Vec<String>,
}

/// A fact line before it is turned into an [`Example`](super::Example).
#[derive(Clone, Debug, PartialEq)]
pub struct RawFact {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub question: String,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    pub vocab: KbVocab,
    entities: HashMap<usize, EntityRecord>,
    predicates: HashMap<usize, PredicateRecord>,
}

impl KnowledgeBase {
    /// Builds the KB from parsed records. Entities are indexed first, in
    /// order, then predicates.
    pub fn from_records(entities: Vec<EntityRecord>, predicates: Vec<PredicateRecord>) -> Result<Self> {
        let mut kb = KnowledgeBase::default();
        for e in entities {
            validate_entity(&e).map_err(|msg| ingest(Path::new("<entities>"), 0, msg))?;
            let (i, fresh) = kb.vocab.insert(&e.id);
            if !fresh {
                return Err(Error::contract(format!("duplicate id {}", e.id)));
            }
            kb.entities.insert(i, e);
        }
        for p in predicates {
            validate_predicate(&p).map_err(|msg| ingest(Path::new("<predicates>"), 0, msg))?;
            let (i, fresh) = kb.vocab.insert(&p.id);
            if !fresh {
                return Err(Error::contract(format!("duplicate id {}", p.id)));
            }
            kb.predicates.insert(i, p);
        }
        Ok(kb)
    }

    pub fn entity(&self, index: usize) -> Option<&EntityRecord> {
        self.entities.get(&index)
    }

    pub fn predicate(&self, index: usize) -> Option<&PredicateRecord> {
        self.predicates.get(&index)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    /// Predicate records in KB-index order.
    pub fn predicates(&self) -> impl Iterator<Item = (usize, &PredicateRecord)> {
        let mut v: Vec<_> = self.predicates.iter().map(|(&i, p)| (i, p)).collect();
        v.sort_by_key(|(i, _)| *i);
        v.into_iter()
    }

    /// Entity records in KB-index order.
    pub fn entities(&self) -> impl Iterator<Item = (usize, &EntityRecord)> {
        let mut v: Vec<_> = self.entities.iter().map(|(&i, e)| (i, e)).collect();
        v.sort_by_key(|(i, _)| *i);
        v.into_iter()
    }

    /// Resolves string ids to a [`Fact`].
    pub fn resolve(&self, subject: &str, predicate: &str, object: &str) -> Result<Fact, String> {
        let entity = |id: &str| {
            self.vocab
                .get(id)
                .filter(|i| self.entities.contains_key(i))
                .ok_or_else(|| format!("unknown entity {id}"))
        };
        let p = self
            .vocab
            .get(predicate)
            .filter(|i| self.predicates.contains_key(i))
            .ok_or_else(|| format!("unknown predicate {predicate}"))?;
        Ok(Fact {
            subject: entity(subject)?,
            predicate: p,
            object: entity(object)?,
        })
    }

    /// Every token that can appear in any textual context.
    pub fn context_words(&self) -> Vec<&String> {
        let mut out = Vec::new();
        for p in self.predicates.values() {
            out.extend(p.domain.iter().chain(&p.range).chain(&p.topic));
            out.extend(p.ds_patterns.iter().flatten());
        }
        for e in self.entities.values() {
            out.extend(e.frequent_type.iter().chain(&e.notable_type));
        }
        out
    }
}

fn validate_entity(e: &EntityRecord) -> std::result::Result<(), String> {
    if e.name.is_empty() {
        return Err(format!("entity {} has an empty name", e.id));
    }
    if e.frequent_type.is_empty() && e.notable_type.is_empty() {
        return Err(format!("entity {} has no type", e.id));
    }
    Ok(())
}

fn validate_predicate(p: &PredicateRecord) -> std::result::Result<(), String> {
    if p.domain.is_empty() && p.range.is_empty() && p.topic.is_empty() {
        return Err(format!("predicate {} has no domain, range or topic", p.id));
    }
    Ok(())
}

fn ingest(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with 1-based line numbers, split on tabs.
fn tsv_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| ingest(path, 0, e.to_string()))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split('\t').map(String::from).collect()))
        .collect())
}

fn require_columns(path: &Path, line: usize, cols: &[String], min: usize) -> Result<()> {
    if cols.len() < min {
        return Err(ingest(path, line, format!("expected {min} columns, found {}", cols.len())));
    }
    Ok(())
}

pub fn load_entities(path: &Path) -> Result<Vec<EntityRecord>> {
    let mut out = Vec::new();
    for (line, cols) in tsv_rows(path)? {
        require_columns(path, line, &cols, 4)?;
        let e = EntityRecord {
            id: cols[0].trim().to_string(),
            name: tokenize(&cols[1]),
            frequent_type: tokenize(&cols[2]),
            notable_type: tokenize(&cols[3]),
        };
        validate_entity(&e).map_err(|m| ingest(path, line, m))?;
        out.push(e);
    }
    Ok(out)
}

pub fn load_predicates(path: &Path) -> Result<Vec<PredicateRecord>> {
    let mut out = Vec::new();
    for (line, cols) in tsv_rows(path)? {
        require_columns(path, line, &cols, 4)?;
        let ds_patterns = cols
            .get(4)
            .map(|c| c.split(';').map(tokenize).filter(|p| !p.is_empty()).collect())
            .unwrap_or_default();
        let p = PredicateRecord {
            id: cols[0].trim().to_string(),
            domain: tokenize(&cols[1]),
            range: tokenize(&cols[2]),
            topic: tokenize(&cols[3]),
            ds_patterns,
        };
        validate_predicate(&p).map_err(|m| ingest(path, line, m))?;
        out.push(p);
    }
    Ok(out)
}

/// Loads both record files and indexes them. Duplicate ids are reported
/// with the line of the second occurrence.
pub fn load_kb(entities_file: &Path, predicates_file: &Path) -> Result<KnowledgeBase> {
    let mut kb = KnowledgeBase::default();
    let entities = load_entities(entities_file)?;
    for (line, e) in line_numbers(entities_file)?.into_iter().zip(entities) {
        let (i, fresh) = kb.vocab.insert(&e.id);
        if !fresh {
            return Err(ingest(entities_file, line, format!("duplicate id {}", e.id)));
        }
        kb.entities.insert(i, e);
    }
    let predicates = load_predicates(predicates_file)?;
    for (line, p) in line_numbers(predicates_file)?.into_iter().zip(predicates) {
        let (i, fresh) = kb.vocab.insert(&p.id);
        if !fresh {
            return Err(ingest(predicates_file, line, format!("duplicate id {}", p.id)));
        }
        kb.predicates.insert(i, p);
    }
    Ok(kb)
}

fn line_numbers(path: &Path) -> Result<Vec<usize>> {
    Ok(tsv_rows(path)?.into_iter().map(|(l, _)| l).collect())
}

/// Loads `subject<TAB>predicate<TAB>object<TAB>question` lines. The
/// question column may be absent for KB-only triples.
pub fn load_facts(path: &Path) -> Result<Vec<RawFact>> {
    let mut out = Vec::new();
    for (line, cols) in tsv_rows(path)? {
        require_columns(path, line, &cols, 3)?;
        out.push(RawFact {
            subject: cols[0].trim().to_string(),
            predicate: cols[1].trim().to_string(),
            object: cols[2].trim().to_string(),
            question: cols.get(3).cloned().unwrap_or_default(),
        });
    }
    Ok(out)
}

/// Resolves raw facts against `kb`, reporting the first unknown id with its
/// line number.
pub fn resolve_facts(kb: &KnowledgeBase, path: &Path, raw: &[RawFact]) -> Result<Vec<Fact>> {
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            kb.resolve(&r.subject, &r.predicate, &r.object)
                .map_err(|m| ingest(path, i + 1, m))
        })
        .collect()
}

pub fn write_entities(path: &Path, entities: &[EntityRecord]) -> Result<()> {
    let mut s = String::new();
    for e in entities {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.id,
            e.name.join(" "),
            e.frequent_type.join(" "),
            e.notable_type.join(" ")
        ));
    }
    write(path, s)
}

pub fn write_predicates(path: &Path, predicates: &[PredicateRecord]) -> Result<()> {
    let mut s = String::new();
    for p in predicates {
        let pats: Vec<String> = p.ds_patterns.iter().map(|t| t.join(" ")).collect();
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            p.id,
            p.domain.join(" "),
            p.range.join(" "),
            p.topic.join(" "),
            pats.join(";")
        ));
    }
    write(path, s)
}

pub fn write_facts(path: &Path, facts: &[RawFact]) -> Result<()> {
    let mut s = String::new();
    for f in facts {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", f.subject, f.predicate, f.object, f.question));
    }
    write(path, s)
}

fn write(path: &Path, contents: String) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Paths of the corpus files inside a data directory.
#[derive(Clone, Debug)]
pub struct CorpusFiles {
    pub entities: PathBuf,
    pub predicates: PathBuf,
    pub kb_triples: PathBuf,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

impl CorpusFiles {
    pub fn in_dir(dir: &Path) -> Self {
        CorpusFiles {
            entities: dir.join("entities.tsv"),
            predicates: dir.join("predicates.tsv"),
            kb_triples: dir.join("kb.tsv"),
            train: dir.join("train.tsv"),
            valid: dir.join("valid.tsv"),
            test: dir.join("test.tsv"),
        }
    }

    pub fn split(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other}")),
        }
    }
}
