//! Scoring generations against a dataset split.

use crate::corpus::{context_tokens, Dataset, Example};
use crate::error::{Error, Result};
use crate::generate::{generate_all, DecodeOptions, GeneratedQuestion};
use crate::metrics::{AnnotationRow, EvalReport};
use crate::model::Model;

fn fact_ids(data: &Dataset, ex: &Example) -> [String; 3] {
    let name = |i: usize| data.kb.vocab.name(i).to_string();
    [name(ex.fact.subject), name(ex.fact.predicate), name(ex.fact.object)]
}

/// Scores generations line-aligned with `gold`. References and answer-type
/// words come from `gold`; fact ids must agree line by line.
pub fn score_generations(gens: &[GeneratedQuestion], data: &Dataset, gold: &[Example]) -> Result<EvalReport> {
    if gens.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} generations for {} examples",
            gens.len(),
            gold.len()
        )));
    }
    for (i, (g, ex)) in gens.iter().zip(gold).enumerate() {
        if g.fact_ids != fact_ids(data, ex) {
            return Err(Error::contract(format!(
                "generation {} is for fact {:?}, expected {:?}",
                i + 1,
                g.fact_ids,
                fact_ids(data, ex)
            )));
        }
    }
    let preds: Vec<String> = gold.iter().map(|e| data.kb.vocab.name(e.fact.predicate).to_string()).collect();
    let cands: Vec<Vec<String>> = gens.iter().map(|g| g.tokens.clone()).collect();
    let refs: Vec<Vec<String>> = gold.iter().map(|e| e.reference.clone()).collect();
    let answers: Vec<Vec<String>> = gold
        .iter()
        .map(|e| e.answer_words.iter().map(|&w| data.vocab.token(w).to_string()).collect())
        .collect();
    Ok(EvalReport::evaluate(&preds, &cands, &refs, &answers))
}

/// Decodes `examples` from `data` and scores them against the aligned
/// `gold` examples of `gold_data`.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    examples: &[Example],
    gold_data: &Dataset,
    gold: &[Example],
    opts: &DecodeOptions,
) -> Result<EvalReport> {
    let gens = generate_all(model, &data.kb, &data.vocab, examples, opts)?;
    score_generations(&gens, gold_data, gold)
}

/// Rows for human judgment: fact ids, predicate context, question.
pub fn annotation_rows(gens: &[GeneratedQuestion], data: &Dataset, gold: &[Example]) -> Result<Vec<AnnotationRow>> {
    gens.iter()
        .zip(gold)
        .map(|(g, ex)| {
            let [_, pred, _] = context_tokens(ex.fact, &data.kb, &data.options)?;
            Ok(AnnotationRow {
                fact: g.fact_ids.join(" "),
                predicate_context: pred.join(" "),
                question: g.text.clone(),
            })
        })
        .collect()
}

/// Parses a generation file (`fact ids<TAB>question<TAB>modes`).
pub fn parse_generations(text: &str) -> Result<Vec<GeneratedQuestion>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let ids: Vec<&str> = f[0].split(' ').collect();
            if f.len() != 3 || ids.len() != 3 {
                return Err(Error::contract(format!("generation line {}: malformed", i + 1)));
            }
            Ok(GeneratedQuestion {
                fact_ids: [ids[0].into(), ids[1].into(), ids[2].into()],
                tokens: f[1].split(' ').filter(|t| !t.is_empty()).map(String::from).collect(),
                text: f[1].to_string(),
                modes: f[2].to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, ContextOptions};

    fn gold_as_generations(data: &Dataset) -> Vec<GeneratedQuestion> {
        data.test
            .iter()
            .map(|ex| GeneratedQuestion {
                fact_ids: fact_ids(data, ex),
                tokens: ex.reference.clone(),
                text: ex.reference.join(" "),
                modes: "g".repeat(ex.reference.len()),
            })
            .collect()
    }

    #[test]
    fn references_score_perfectly() {
        let data = Dataset::from_synth(&synth_corpus(1, 30, 6, 60), ContextOptions::default()).unwrap();
        let gens = gold_as_generations(&data);
        let text: String = gens.iter().map(|g| g.to_line() + "\n").collect();
        let parsed = parse_generations(&text).unwrap();
        assert_eq!(parsed, gens);
        let r = score_generations(&parsed, &data, &data.test).unwrap();
        assert_eq!((r.bleu4, r.rouge_l), (100.0, 100.0));
        assert!(score_generations(&parsed[1..], &data, &data.test).is_err());
        let mut swapped = parsed.clone();
        swapped.swap(0, 1);
        if swapped[0].fact_ids != parsed[0].fact_ids {
            assert!(score_generations(&swapped, &data, &data.test).is_err());
        }
        let rows = annotation_rows(&parsed, &data, &data.test).unwrap();
        assert_eq!(rows.len(), data.test.len());
        assert!(!rows[0].predicate_context.is_empty());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_generations("a b c\tq").is_err());
        assert!(parse_generations("a b\tq\tg").is_err());
    }
}
