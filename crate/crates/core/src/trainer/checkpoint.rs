//! Text checkpoints: config, vocabulary, parameters and optimizer state.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::numdiff::{ParamStore, Tensor};

use super::config::TrainConfig;

const MAGIC: &str = "kbqg-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid_bleu4: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!("{}\t{:.6}\t{:.4}", self.epoch, self.loss, self.valid_bleu4)
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best_valid_bleu4: Option<f64>,
    pub vocab: Vocab,
    /// Current parameters.
    pub params: ParamStore,
    /// Best-validation parameter values in store order.
    pub best_params: Option<Vec<Tensor>>,
    pub accum: Vec<Tensor>,
    pub log: Vec<EpochLog>,
}

fn write_values(s: &mut String, data: &[f64]) {
    let mut first = true;
    for v in data {
        if !first {
            s.push(' ');
        }
        first = false;
        // Debug formatting round-trips f64 exactly
        let _ = write!(s, "{v:?}");
    }
    s.push('\n');
}

impl Checkpoint {
    /// Parameters to decode with: the best-validation values when known.
    pub fn inference_params(&self) -> ParamStore {
        let mut store = self.params.clone();
        if let Some(best) = &self.best_params {
            for ((_, p), t) in store.iter_mut().zip(best) {
                p.value = t.clone();
            }
        }
        store
    }

    pub fn config_hash(&self) -> u64 {
        self.config.hash()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "config_hash {:016x}", self.config_hash());
        let _ = writeln!(s, "epoch {}", self.epoch);
        match self.best_valid_bleu4 {
            Some(b) => {
                let _ = writeln!(s, "best_valid_bleu4 {b:?}");
            }
            None => s.push_str("best_valid_bleu4 none\n"),
        }
        let cfg = self.config.to_text();
        let _ = writeln!(s, "config {}", cfg.lines().count());
        s.push_str(&cfg);
        let _ = writeln!(s, "vocab {} {}", self.vocab.len(), self.vocab.gen_size());
        for t in self.vocab.tokens() {
            let _ = writeln!(s, "{t}");
        }
        let _ = writeln!(s, "params {}", self.params.len());
        for (i, (_, p)) in self.params.iter().enumerate() {
            let _ = writeln!(s, "param {} {} {} {}", p.name, p.value.rows(), p.value.cols(), p.frozen);
            write_values(&mut s, p.value.data());
            let _ = writeln!(s, "accum {}", self.accum[i].len());
            write_values(&mut s, self.accum[i].data());
        }
        match &self.best_params {
            Some(best) => {
                s.push_str("best_params 1\n");
                for t in best {
                    write_values(&mut s, t.data());
                }
            }
            None => s.push_str("best_params 0\n"),
        }
        let _ = writeln!(s, "log {}", self.log.len());
        for e in &self.log {
            let _ = writeln!(s, "{}\t{:?}\t{:?}", e.epoch, e.loss, e.valid_bleu4);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines(),
            line: 0,
        };
        if r.next()? != MAGIC {
            return Err(r.err("not a checkpoint"));
        }
        let hash = r.field("config_hash")?;
        let epoch = r.parse_field("epoch")?;
        let best = match r.field("best_valid_bleu4")? {
            "none" => None,
            v => Some(r.parse_value(v)?),
        };
        let n_cfg: usize = r.parse_field("config")?;
        let mut cfg_text = String::new();
        for _ in 0..n_cfg {
            cfg_text.push_str(r.next()?);
            cfg_text.push('\n');
        }
        let config = TrainConfig::parse(&cfg_text)?;
        if format!("{:016x}", config.hash()) != hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        let sizes = r.field("vocab")?.to_string();
        let (n_tok, gen) = sizes
            .split_once(' ')
            .ok_or_else(|| r.err("vocab header"))?;
        let (n_tok, gen): (usize, usize) = (r.parse_value(n_tok)?, r.parse_value(gen)?);
        let mut tokens = Vec::with_capacity(n_tok);
        for _ in 0..n_tok {
            tokens.push(r.next()?.to_string());
        }
        let vocab = Vocab::from_tokens(tokens, gen);
        let n_params: usize = r.parse_field("params")?;
        let mut params = ParamStore::new();
        let mut accum = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let head: Vec<String> = r.field("param")?.split(' ').map(String::from).collect();
            if head.len() != 4 {
                return Err(r.err("param header"));
            }
            let (rows, cols): (usize, usize) = (r.parse_value(&head[1])?, r.parse_value(&head[2])?);
            let frozen: bool = r.parse_value(&head[3])?;
            let values = r.values(rows * cols)?;
            let id = params.add(head[0].clone(), Tensor::matrix(rows, cols, values))?;
            params.set_frozen(id, frozen);
            let n: usize = r.parse_field("accum")?;
            if n != rows * cols {
                return Err(r.err("accumulator size"));
            }
            accum.push(Tensor::matrix(rows, cols, r.values(n)?));
        }
        let best_params = match r.field("best_params")? {
            "0" => None,
            "1" => {
                let mut best = Vec::with_capacity(params.len());
                for (_, p) in params.iter() {
                    let v = r.values(p.value.len())?;
                    best.push(Tensor::matrix(p.value.rows(), p.value.cols(), v));
                }
                Some(best)
            }
            _ => return Err(r.err("best_params flag")),
        };
        let n_log: usize = r.parse_field("log")?;
        let mut log = Vec::with_capacity(n_log);
        for _ in 0..n_log {
            let line = r.next()?.to_string();
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(r.err("log line"));
            }
            log.push(EpochLog {
                epoch: r.parse_value(f[0])?,
                loss: r.parse_value(f[1])?,
                valid_bleu4: r.parse_value(f[2])?,
            });
        }
        Ok(Checkpoint {
            config,
            epoch,
            best_valid_bleu4: best,
            vocab,
            params,
            best_params,
            accum,
            log,
        })
    }
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        self.line += 1;
        self.lines.next().ok_or_else(|| self.err("unexpected end of file"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.err(&format!("expected {key}")))
    }

    fn parse_value<T: std::str::FromStr>(&self, v: &str) -> Result<T> {
        v.parse().map_err(|_| self.err(&format!("bad value {v:?}")))
    }

    fn parse_field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        self.parse_value(v)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        let v = if n == 0 {
            Vec::new()
        } else {
            l.split(' ').map(|x| self.parse_value(x)).collect::<Result<Vec<f64>>>()?
        };
        if v.len() != n {
            return Err(self.err(&format!("expected {n} values, found {}", v.len())));
        }
        Ok(v)
    }
}
