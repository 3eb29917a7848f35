//! Labeled embeddings, trial lists and score sets, with their text formats.
//!
//! Embedding file:
//! ```text
//! #dim 3
//! utt1 spkA 0.1 0.2 0.3
//! ```
//! Trial file lines are `enroll test [target|nontarget]`; score files carry a
//! `#polarity similarity|distance` header followed by
//! `enroll test score [target|nontarget]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, which is lossless for `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub vector: DVector<f64>,
}

/// An ordered collection of speaker embeddings of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut set = Self::new(dim);
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: record.vector.len(),
            });
        }
        if record.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in '{}'",
                record.utt_id
            )));
        }
        if is_bad_id(&record.utt_id) || is_bad_id(&record.speaker_id) {
            return Err(Error::invalid(format!(
                "ids must be non-empty and contain no whitespace: '{}' '{}'",
                record.utt_id, record.speaker_id
            )));
        }
        if self.index.contains_key(&record.utt_id) {
            return Err(Error::invalid(format!(
                "duplicate utt_id '{}'",
                record.utt_id
            )));
        }
        self.index.insert(record.utt_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, utt_id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(utt_id).map(|&i| &self.records[i])
    }

    /// Record indices grouped by speaker, speakers in first-occurrence order.
    pub fn by_speaker(&self) -> Vec<(&str, Vec<usize>)> {
        let mut order: Vec<(&str, Vec<usize>)> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match pos.get(r.speaker_id.as_str()) {
                Some(&p) => order[p].1.push(i),
                None => {
                    pos.insert(r.speaker_id.as_str(), order.len());
                    order.push((r.speaker_id.as_str(), vec![i]));
                }
            }
        }
        order
    }

    pub fn n_speakers(&self) -> usize {
        self.by_speaker().len()
    }

    /// Applies `f` to every vector, keeping ids. `f` fixes the output dimension.
    pub fn map_vectors<F>(&self, out_dim: usize, mut f: F) -> Result<EmbeddingSet>
    where
        F: FnMut(&EmbeddingRecord) -> Result<DVector<f64>>,
    {
        let mut out = EmbeddingSet::new(out_dim);
        for r in &self.records {
            out.push(EmbeddingRecord {
                utt_id: r.utt_id.clone(),
                speaker_id: r.speaker_id.clone(),
                vector: f(r)?,
            })?;
        }
        Ok(out)
    }
}

fn is_bad_id(id: &str) -> bool {
    id.is_empty() || id.chars().any(char::is_whitespace)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_finite(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    parse_embeddings(path, &read_text(path)?)
}

pub(crate) fn parse_embeddings(path: &Path, text: &str) -> Result<EmbeddingSet> {
    let mut lines = text.lines().enumerate();
    let dim = match lines.next() {
        Some((_, header)) => {
            let mut toks = header.split_whitespace();
            match (toks.next(), toks.next(), toks.next()) {
                (Some("#dim"), Some(d), None) => d
                    .parse::<usize>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| parse_err(path, 1, format!("invalid dimension '{d}'")))?,
                _ => return Err(parse_err(path, 1, "expected header '#dim <d>'")),
            }
        }
        None => return Err(parse_err(path, 1, "empty file; expected header '#dim <d>'")),
    };

    let mut set = EmbeddingSet::new(dim);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(parse_err(path, lineno, "expected 'utt_id speaker_id v1 .. vd'"));
        }
        if toks.len() - 2 != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("row length {} does not match dim {dim}", toks.len() - 2),
            ));
        }
        let values = toks[2..]
            .iter()
            .map(|t| parse_finite(path, lineno, t))
            .collect::<Result<Vec<_>>>()?;
        set.push(EmbeddingRecord {
            utt_id: toks[0].to_string(),
            speaker_id: toks[1].to_string(),
            vector: DVector::from_vec(values),
        })
        .map_err(|e| parse_err(path, lineno, e.to_string()))?;
    }
    Ok(set)
}

pub(crate) fn format_embeddings(set: &EmbeddingSet) -> String {
    let mut out = format!("#dim {}\n", set.dim);
    for r in &set.records {
        out.push_str(&r.utt_id);
        out.push(' ');
        out.push_str(&r.speaker_id);
        for v in r.vector.iter() {
            out.push(' ');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_embeddings(set))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialLabel {
    Target,
    Nontarget,
    Unknown,
}

impl TrialLabel {
    fn as_suffix(self) -> &'static str {
        match self {
            TrialLabel::Target => " target",
            TrialLabel::Nontarget => " nontarget",
            TrialLabel::Unknown => "",
        }
    }
}

impl FromStr for TrialLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "target" => Ok(TrialLabel::Target),
            "nontarget" => Ok(TrialLabel::Nontarget),
            other => Err(format!("invalid label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub entries: Vec<Trial>,
}

impl TrialList {
    pub fn push(&mut self, trial: Trial) -> Result<()> {
        if trial.enroll == trial.test {
            return Err(Error::invalid(format!(
                "trial pairs utterance '{}' with itself",
                trial.enroll
            )));
        }
        self.entries.push(trial);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut list = TrialList::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let label = match toks.len() {
            2 => TrialLabel::Unknown,
            3 => toks[2].parse().map_err(|e: String| parse_err(path, lineno, e))?,
            _ => return Err(parse_err(path, lineno, "expected 'enroll test [label]'")),
        };
        list.push(Trial {
            enroll: toks[0].to_string(),
            test: toks[1].to_string(),
            label,
        })
        .map_err(|e| parse_err(path, lineno, e.to_string()))?;
    }
    Ok(list)
}

pub fn write_trials(list: &TrialList, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for t in &list.entries {
        let _ = writeln!(out, "{} {}{}", t.enroll, t.test, t.label.as_suffix());
    }
    write_text(path.as_ref(), &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// Higher means more likely the same speaker.
    Similarity,
    /// Lower means more likely the same speaker.
    Distance,
}

impl Polarity {
    fn as_str(self) -> &'static str {
        match self {
            Polarity::Similarity => "similarity",
            Polarity::Distance => "distance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub enroll: String,
    pub test: String,
    pub score: f64,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub entries: Vec<ScoredTrial>,
    pub polarity: Polarity,
}

impl ScoreSet {
    pub fn new(polarity: Polarity) -> Self {
        Self {
            entries: Vec::new(),
            polarity,
        }
    }

    /// Builds a similarity-polarity set from bare labeled scores, with
    /// synthetic trial ids. Convenient for evaluation of in-memory scores.
    pub fn from_labeled(targets: &[f64], nontargets: &[f64]) -> Self {
        let mut set = ScoreSet::new(Polarity::Similarity);
        let labeled = targets
            .iter()
            .map(|&s| (s, TrialLabel::Target))
            .chain(nontargets.iter().map(|&s| (s, TrialLabel::Nontarget)));
        for (i, (score, label)) in labeled.enumerate() {
            set.entries.push(ScoredTrial {
                enroll: format!("e{i}"),
                test: format!("t{i}"),
                score,
                label,
            });
        }
        set
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the set in similarity polarity, negating distance scores.
    pub fn into_similarity(mut self) -> ScoreSet {
        if self.polarity == Polarity::Distance {
            for e in &mut self.entries {
                e.score = -e.score;
            }
            self.polarity = Polarity::Similarity;
        }
        self
    }

    /// Similarity-polarity (target, nontarget) scores. Fails if any label is
    /// unknown.
    pub fn split_labeled(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let sign = match self.polarity {
            Polarity::Similarity => 1.0,
            Polarity::Distance => -1.0,
        };
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for e in &self.entries {
            match e.label {
                TrialLabel::Target => tar.push(sign * e.score),
                TrialLabel::Nontarget => non.push(sign * e.score),
                TrialLabel::Unknown => {
                    return Err(Error::invalid(format!(
                        "trial {} {} has no label; metrics require labels",
                        e.enroll, e.test
                    )))
                }
            }
        }
        Ok((tar, non))
    }
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut polarity = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#polarity") {
            polarity = Some(match rest.trim() {
                "similarity" => Polarity::Similarity,
                "distance" => Polarity::Distance,
                other => return Err(parse_err(path, lineno, format!("invalid polarity '{other}'"))),
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&toks.len()) {
            return Err(parse_err(path, lineno, "expected 'enroll test score [label]'"));
        }
        let score = parse_finite(path, lineno, toks[2])?;
        let label = match toks.get(3) {
            Some(l) => l.parse().map_err(|e: String| parse_err(path, lineno, e))?,
            None => TrialLabel::Unknown,
        };
        entries.push(ScoredTrial {
            enroll: toks[0].to_string(),
            test: toks[1].to_string(),
            score,
            label,
        });
    }
    let polarity =
        polarity.ok_or_else(|| parse_err(path, 1, "missing '#polarity similarity|distance' header"))?;
    Ok(ScoreSet { entries, polarity })
}

pub fn write_scores(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("#polarity {}\n", scores.polarity.as_str());
    for e in &scores.entries {
        let _ = writeln!(
            out,
            "{} {} {}{}",
            e.enroll,
            e.test,
            fmt_f64(e.score),
            e.label.as_suffix()
        );
    }
    write_text(path.as_ref(), &out)
}
