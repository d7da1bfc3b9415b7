//! Ablation grids over training configurations.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{ContextOptions, Dataset};
use crate::error::{Error, Result};

use crate::evaluation::evaluate;

use super::{TrainConfig, Trainer};

pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.05, 0.2, 0.5, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    /// λ sweep crossed with TransE on/off.
    Lambda,
    /// Fusion encoder on/off crossed with TransE on/off.
    Transe,
    /// The full model and each single-component ablation.
    Components,
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Grid::Lambda),
            "transe" => Ok(Grid::Transe),
            "components" => Ok(Grid::Components),
            _ => Err(Error::config(format!("unknown grid {s:?} (lambda, transe, components)"))),
        }
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: TrainConfig,
}

impl Grid {
    pub fn variants(self, base: &TrainConfig) -> Vec<Variant> {
        let v = |label: String, config: TrainConfig| Variant { label, config };
        match self {
            Grid::Lambda => LAMBDA_GRID
                .iter()
                .flat_map(|&lambda| {
                    [true, false].map(|transe| {
                        v(
                            format!("lambda={lambda} transe={}", on_off(transe)),
                            TrainConfig {
                                lambda,
                                transe,
                                ..base.clone()
                            },
                        )
                    })
                })
                .collect(),
            Grid::Transe => [true, false]
                .iter()
                .flat_map(|&fusion| {
                    [true, false].map(|transe| {
                        v(
                            format!("fusion={} transe={}", on_off(fusion), on_off(transe)),
                            TrainConfig {
                                fusion,
                                transe,
                                ..base.clone()
                            },
                        )
                    })
                })
                .collect(),
            Grid::Components => vec![
                v("full".into(), base.clone()),
                v(
                    "-context_copy".into(),
                    TrainConfig {
                        copy_context: false,
                        ..base.clone()
                    },
                ),
                v(
                    "-kb_copy".into(),
                    TrainConfig {
                        copy_kb: false,
                        ..base.clone()
                    },
                ),
                v(
                    "-answer_loss".into(),
                    TrainConfig {
                        answer_loss: false,
                        ..base.clone()
                    },
                ),
                v(
                    "-diversified".into(),
                    TrainConfig {
                        diversified: false,
                        ..base.clone()
                    },
                ),
            ],
        }
    }
}

/// Per-seed results of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Best validation BLEU-4 per seed.
    pub valid_bleu4: Vec<f64>,
    pub test_bleu4: Vec<f64>,
    pub test_coverage: Vec<f64>,
    pub test_omission: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub grid: Grid,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, label: &str) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.label == label)
    }

    /// Aligned table of seed medians.
    pub fn table(&self) -> String {
        let w = self.cells.iter().map(|c| c.label.len()).max().unwrap_or(7).max(7) + 2;
        let mut s = format!(
            "{:<w$}{:>12}{:>12}{:>12}{:>12}\n",
            "variant", "valid_bleu4", "test_bleu4", "coverage", "omission"
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:<w$}{:>12.2}{:>12.2}{:>12.2}{:>12.2}",
                c.label,
                median(&c.valid_bleu4),
                median(&c.test_bleu4),
                median(&c.test_coverage),
                median(&c.test_omission)
            );
        }
        s
    }

    /// One line per variant and seed.
    pub fn tsv(&self) -> String {
        let mut s = String::from("variant\tseed\tvalid_bleu4\ttest_bleu4\tcoverage\tomission\n");
        for c in &self.cells {
            for i in 0..c.seeds.len() {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                    c.label, c.seeds[i], c.valid_bleu4[i], c.test_bleu4[i], c.test_coverage[i], c.test_omission[i]
                );
            }
        }
        s
    }
}

/// Trains every variant of `grid` once per seed on the corpus in `dir`.
/// Test answer-type words always come from the default contexts.
/// `progress` receives each finished (variant, seed).
pub fn run_ablation(
    base: &TrainConfig,
    dir: &Path,
    grid: Grid,
    seeds: &[u64],
    mut progress: impl FnMut(&str, u64),
) -> Result<AblationReport> {
    let gold_opts = ContextOptions::default();
    let mut cache: Vec<(ContextOptions, Dataset)> = vec![(gold_opts, Dataset::load(dir, gold_opts)?)];
    let mut cells = Vec::new();
    for variant in grid.variants(base) {
        let opts = variant.config.context_options();
        if !cache.iter().any(|(o, _)| *o == opts) {
            cache.push((opts, Dataset::load(dir, opts)?));
        }
        let data = &cache.iter().find(|(o, _)| *o == opts).expect("cached above").1;
        let mut cell = AblationCell {
            label: variant.label.clone(),
            seeds: seeds.to_vec(),
            valid_bleu4: Vec::new(),
            test_bleu4: Vec::new(),
            test_coverage: Vec::new(),
            test_omission: Vec::new(),
        };
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..variant.config.clone()
            };
            let mut t = Trainer::new(cfg, data)?;
            t.run(data, |_, _| Ok(()))?;
            let model = t.best_model();
            let gold = &cache[0].1;
            let report = evaluate(&model, data, &data.test, gold, &gold.test, &t.decode_options())?;
            cell.valid_bleu4.push(t.best.as_ref().map_or(0.0, |b| b.0));
            cell.test_bleu4.push(report.bleu4);
            cell.test_coverage.push(report.answer_coverage);
            cell.test_omission.push(report.predicate_omission);
            progress(&variant.label, seed);
        }
        cells.push(cell);
    }
    Ok(AblationReport { grid, cells })
}
