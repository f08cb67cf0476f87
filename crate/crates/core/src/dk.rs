//! Domain-knowledge tables: how often each emotion follows a given label-pair.
//!
//! For a label-pair `L` (the gold labels of the `w` utterances preceding a
//! target) the table stores the exact counts `Num(e|L)` and `Num(L)`, the
//! conditional probabilities `P(e|L) = Num(e|L) / Num(L)` and the correlation
//! `C(·|L) = softmax(P(·|L))` taken over the six emotions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, N_CLASSES};

pub const MIN_WINDOW: usize = 2;
pub const MAX_WINDOW: usize = 5;
pub const DK_FILE_VERSION: u32 = 1;

pub type Dist = [f64; N_CLASSES];

pub const UNIFORM: Dist = [1.0 / N_CLASSES as f64; N_CLASSES];

/// Ordered labels of the `w` utterances preceding a target.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelPair(Vec<EmotionLabel>);

impl LabelPair {
    pub fn new(labels: Vec<EmotionLabel>) -> Result<Self> {
        check_window(labels.len())?;
        Ok(LabelPair(labels))
    }

    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let labels = indices
            .iter()
            .map(|&i| EmotionLabel::from_index(i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    pub fn window(&self) -> usize {
        self.0.len()
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|l| l.index()).collect()
    }
}

impl std::fmt::Display for LabelPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<_> = self.0.iter().map(|l| l.name()).collect();
        f.write_str(&names.join("-"))
    }
}

pub fn check_window(w: usize) -> Result<()> {
    if (MIN_WINDOW..=MAX_WINDOW).contains(&w) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "window size {w} outside {MIN_WINDOW}..={MAX_WINDOW}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DkRow {
    pub counts: [u64; N_CLASSES],
    pub total: u64,
    pub probs: Dist,
    pub corr: Dist,
}

impl DkRow {
    fn from_counts(counts: [u64; N_CLASSES]) -> Self {
        let total: u64 = counts.iter().sum();
        let mut probs = [0.0; N_CLASSES];
        for (p, &c) in probs.iter_mut().zip(&counts) {
            *p = c as f64 / total as f64;
        }
        DkRow {
            counts,
            total,
            probs,
            corr: softmax(&probs),
        }
    }
}

/// Max-subtracted softmax over the six emotions.
pub fn softmax(x: &Dist) -> Dist {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CLASSES];
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DkTable {
    window: usize,
    rows: BTreeMap<LabelPair, DkRow>,
}

impl DkTable {
    pub fn empty(window: usize) -> Result<Self> {
        check_window(window)?;
        Ok(DkTable {
            window,
            rows: BTreeMap::new(),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&LabelPair, &DkRow)> {
        self.rows.iter()
    }

    pub fn get(&self, l: &LabelPair) -> Option<&DkRow> {
        self.rows.get(l)
    }

    /// Sum of `Num(L)` over all stored label-pairs.
    pub fn observations(&self) -> u64 {
        self.rows.values().map(|r| r.total).sum()
    }

    /// Records `target` following `labels`.
    pub fn observe(&mut self, labels: &[EmotionLabel], target: EmotionLabel) -> Result<()> {
        if labels.len() != self.window {
            return Err(Error::WindowMismatch {
                expected: self.window,
                got: labels.len(),
            });
        }
        let key = LabelPair(labels.to_vec());
        let row = self
            .rows
            .entry(key)
            .or_insert_with(|| DkRow::from_counts([0; N_CLASSES]));
        let mut counts = row.counts;
        counts[target.index()] += 1;
        *row = DkRow::from_counts(counts);
        Ok(())
    }

    /// Stored `(P, C)` for `l`, or the uniform pair when `l` was never observed.
    pub fn lookup(&self, l: &LabelPair) -> Result<(Dist, Dist)> {
        if l.window() != self.window {
            return Err(Error::WindowMismatch {
                expected: self.window,
                got: l.window(),
            });
        }
        Ok(match self.rows.get(l) {
            Some(row) => (row.probs, row.corr),
            None => (UNIFORM, softmax(&UNIFORM)),
        })
    }

    pub fn to_file(&self) -> DkFile {
        DkFile {
            version: DK_FILE_VERSION,
            window: self.window,
            rows: self
                .rows
                .iter()
                .map(|(l, r)| DkFileRow {
                    labels: l.indices(),
                    counts: r.counts,
                    total: Some(r.total),
                })
                .collect(),
        }
    }

    pub fn from_file(file: DkFile) -> Result<Self> {
        if file.version != DK_FILE_VERSION {
            return Err(Error::Version(file.version));
        }
        let mut table = DkTable::empty(file.window)?;
        for (i, row) in file.rows.into_iter().enumerate() {
            if row.labels.len() != file.window {
                return Err(Error::Corrupted(format!(
                    "row {i}: label-pair has {} entries, window is {}",
                    row.labels.len(),
                    file.window
                )));
            }
            let key = LabelPair::from_indices(&row.labels).map_err(|e| Error::Corrupted(format!("row {i}: {e}")))?;
            let sum: u64 = row.counts.iter().sum();
            if sum == 0 {
                return Err(Error::Corrupted(format!("row {i}: all counts are zero")));
            }
            if let Some(total) = row.total {
                if total != sum {
                    return Err(Error::Corrupted(format!(
                        "row {i}: counts sum to {sum} but total is {total}"
                    )));
                }
            }
            if table.rows.insert(key, DkRow::from_counts(row.counts)).is_some() {
                return Err(Error::Corrupted(format!("row {i}: duplicate label-pair")));
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parsed: DkFile = serde_json::from_reader(BufReader::new(file))?;
        Self::from_file(parsed)
    }
}

/// On-disk layout; probabilities are never serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkFile {
    pub version: u32,
    pub window: usize,
    pub rows: Vec<DkFileRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkFileRow {
    #[serde(rename = "L")]
    pub labels: Vec<usize>,
    pub counts: [u64; N_CLASSES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<u64>,
}

/// Counts every (label-pair, target) observation in the corpus.
///
/// A conversation of length `n` contributes `max(0, n - w)` observations.
pub fn build_dk(convs: &[Conversation], w: usize) -> Result<DkTable> {
    let mut table = DkTable::empty(w)?;
    for conv in convs {
        let labels = conv.labels().ok_or_else(|| Error::InvalidConversation {
            conversation: conv.id.clone(),
            msg: "domain knowledge needs every utterance labeled".into(),
        })?;
        for t in w..labels.len() {
            table.observe(&labels[t - w..t], labels[t])?;
        }
    }
    Ok(table)
}
