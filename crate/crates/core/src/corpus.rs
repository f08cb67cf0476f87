//! Dyadic conversation data: JSONL ingestion, synthetic generation and splits.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, N_CLASSES};
use crate::rng::{Rng, SeedStreams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub conversation_id: String,
    pub turn_index: usize,
    pub speaker: Speaker,
    pub label: Option<EmotionLabel>,
    pub audio: Vec<f32>,
    pub video: Vec<f32>,
    pub text: Vec<f32>,
}

impl Utterance {
    /// Placeholder used to left-pad windows before any context exists.
    pub fn zeros(dims: &Manifest, speaker: Speaker) -> Self {
        Utterance {
            conversation_id: String::new(),
            turn_index: 0,
            speaker,
            label: None,
            audio: vec![0.0; dims.dim_audio],
            video: vec![0.0; dims.dim_video],
            text: vec![0.0; dims.dim_text],
        }
    }

    pub fn check_dims(&self, dims: &Manifest, line: usize) -> Result<()> {
        for (modality, got, expected) in [
            ("audio", self.audio.len(), dims.dim_audio),
            ("video", self.video.len(), dims.dim_video),
            ("text", self.text.len(), dims.dim_text),
        ] {
            if got != expected {
                return Err(Error::DimMismatch {
                    line,
                    modality,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.audio
            .iter()
            .chain(&self.video)
            .chain(&self.text)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<Speaker> {
        let mut out = Vec::with_capacity(2);
        for u in &self.utterances {
            if !out.contains(&u.speaker) {
                out.push(u.speaker);
            }
        }
        out
    }

    pub fn labels(&self) -> Option<Vec<EmotionLabel>> {
        self.utterances.iter().map(|u| u.label).collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.utterances.iter().all(|u| u.label.is_some())
    }
}

/// Expected feature dimensions of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim_audio: usize,
    pub dim_video: usize,
    pub dim_text: usize,
    pub n_classes: usize,
}

impl Manifest {
    pub fn new(dim_audio: usize, dim_video: usize, dim_text: usize) -> Self {
        Manifest {
            dim_audio,
            dim_video,
            dim_text,
            n_classes: N_CLASSES,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_reader(BufReader::new(file))?;
        if m.n_classes != N_CLASSES {
            return Err(Error::Config(format!(
                "manifest declares {} classes, only {N_CLASSES} are supported",
                m.n_classes
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn of_utterance(u: &Utterance) -> Self {
        Manifest::new(u.audio.len(), u.video.len(), u.text.len())
    }
}

pub fn load_corpus(path: &Path, manifest: &Manifest) -> Result<Vec<Conversation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), manifest)
}

/// Feature dims taken from the first record of a corpus file.
pub fn infer_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            return Ok(Manifest::of_utterance(&parse_utterance(&line, i + 1)?));
        }
    }
    Err(Error::MalformedLine {
        line: 0,
        msg: "empty corpus file".into(),
    })
}

/// Parses one JSONL record, reporting `line` (1-based) on failure.
pub fn parse_utterance(text: &str, line: usize) -> Result<Utterance> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::MalformedLine {
        line,
        msg: e.to_string(),
    })?;
    if let Some(s) = value.get("speaker").and_then(|s| s.as_str()) {
        if s != "A" && s != "B" {
            return Err(Error::MalformedLine {
                line,
                msg: format!("non-dyadic conversation: speaker {s:?} (only \"A\" and \"B\" allowed)"),
            });
        }
    }
    serde_json::from_value(value).map_err(|e| Error::MalformedLine {
        line,
        msg: e.to_string(),
    })
}

pub fn read_corpus<R: BufRead>(reader: R, manifest: &Manifest) -> Result<Vec<Conversation>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(usize, Utterance)>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let utt = parse_utterance(&line, lineno)?;
        utt.check_dims(manifest, lineno)?;
        if !utt.all_finite() {
            return Err(Error::MalformedLine {
                line: lineno,
                msg: "non-finite feature value".into(),
            });
        }
        let entry = groups.entry(utt.conversation_id.clone()).or_insert_with(|| {
            order.push(utt.conversation_id.clone());
            Vec::new()
        });
        if let Some((first, _)) = entry.iter().find(|(_, u)| u.turn_index == utt.turn_index) {
            return Err(Error::MalformedLine {
                line: lineno,
                msg: format!(
                    "duplicate turn_index {} in conversation {:?} (first seen on line {first})",
                    utt.turn_index, utt.conversation_id
                ),
            });
        }
        entry.push((lineno, utt));
    }

    let mut convs = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).unwrap_or_default();
        rows.sort_by_key(|(_, u)| u.turn_index);
        let utterances: Vec<Utterance> = rows.into_iter().map(|(_, u)| u).collect();
        let conv = Conversation { id, utterances };
        validate_conversation(&conv)?;
        convs.push(conv);
    }
    Ok(convs)
}

pub fn validate_conversation(conv: &Conversation) -> Result<()> {
    let bad = |msg: String| Error::InvalidConversation {
        conversation: conv.id.clone(),
        msg,
    };
    if conv.utterances.is_empty() {
        return Err(bad("empty conversation".into()));
    }
    for (i, u) in conv.utterances.iter().enumerate() {
        if u.turn_index != i {
            return Err(bad(format!(
                "turn indices must be gapless from 0; position {i} holds turn {}",
                u.turn_index
            )));
        }
        if u.conversation_id != conv.id {
            return Err(bad(format!("utterance {i} belongs to {:?}", u.conversation_id)));
        }
    }
    if conv.speakers().len() > 2 {
        return Err(bad("more than two speakers".into()));
    }
    Ok(())
}

pub fn write_corpus<W: Write>(mut out: W, convs: &[Conversation]) -> Result<()> {
    for conv in convs {
        for u in &conv.utterances {
            serde_json::to_writer(&mut out, u)?;
            out.write_all(b"\n").map_err(|e| Error::io("<corpus writer>", e))?;
        }
    }
    Ok(())
}

pub fn save_corpus(path: &Path, convs: &[Conversation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(&mut w, convs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn count_utterances(convs: &[Conversation]) -> usize {
    convs.iter().map(Conversation::len).sum()
}

/// Per-emotion mean feature vectors, one table per modality (6 rows each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    pub audio: Vec<Vec<f64>>,
    pub video: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
}

/// Recipe for a seeded synthetic corpus with an order-`window` Markov label process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_conversations: usize,
    pub length_range: (usize, usize),
    pub window: usize,
    /// One probability row per label tuple of length `window`; all 6^window tuples present.
    pub transition: BTreeMap<Vec<u8>, [f64; N_CLASSES]>,
    pub class_feature_means: ClassMeans,
    pub feature_noise_sigma: f64,
    pub speaker_offset_sigma: f64,
}

/// Enumerates every label tuple of length `w` in lexicographic order.
pub fn all_label_tuples(w: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..w {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..N_CLASSES as u8).map(move |e| {
                    let mut p = prefix.clone();
                    p.push(e);
                    p
                })
            })
            .collect();
    }
    out
}

impl SynthSpec {
    /// Corpus whose labels follow a peaked transition (`max_entry` on one class per
    /// context, the rest spread evenly) and whose class means sit at least
    /// `separation` noise-sigmas apart in every modality.
    pub fn informative(
        seed: u64,
        n_conversations: usize,
        length_range: (usize, usize),
        window: usize,
        dims: &Manifest,
        max_entry: f64,
        separation: f64,
    ) -> Self {
        let streams = SeedStreams::new(seed);
        let mut rng = streams.stream("synth-structure");
        let rest = (1.0 - max_entry) / (N_CLASSES as f64 - 1.0);
        let transition = all_label_tuples(window)
            .into_iter()
            .map(|l| {
                let peak = rng.random_range(0..N_CLASSES);
                let mut row = [rest; N_CLASSES];
                row[peak] = max_entry;
                (l, row)
            })
            .collect();
        let sigma = 1.0;
        let class_feature_means = ClassMeans {
            audio: separated_means(dims.dim_audio, separation * sigma, &mut rng),
            video: separated_means(dims.dim_video, separation * sigma, &mut rng),
            text: separated_means(dims.dim_text, separation * sigma, &mut rng),
        };
        SynthSpec {
            seed,
            n_conversations,
            length_range,
            window,
            transition,
            class_feature_means,
            feature_noise_sigma: sigma,
            speaker_offset_sigma: 0.25 * sigma,
        }
    }

    pub fn dims(&self) -> Manifest {
        let m = &self.class_feature_means;
        Manifest::new(
            m.audio.first().map_or(0, Vec::len),
            m.video.first().map_or(0, Vec::len),
            m.text.first().map_or(0, Vec::len),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if self.window == 0 {
            return Err(Error::Config("synthetic window must be positive".into()));
        }
        if lo > hi || lo < self.window + 1 {
            return Err(Error::Config(format!(
                "length range ({lo},{hi}) must satisfy window+1 <= min <= max"
            )));
        }
        let expected = N_CLASSES.pow(self.window as u32);
        if self.transition.len() != expected {
            return Err(Error::Config(format!(
                "transition has {} rows, expected {expected}",
                self.transition.len()
            )));
        }
        for (l, row) in &self.transition {
            if l.len() != self.window || l.iter().any(|&e| e as usize >= N_CLASSES) {
                return Err(Error::Config(format!("bad transition key {l:?}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!(
                    "transition row {l:?} is not a distribution (sum {sum})"
                )));
            }
        }
        if !(self.feature_noise_sigma > 0.0) || !(self.speaker_offset_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas out of range".into()));
        }
        let m = &self.class_feature_means;
        for (name, table) in [("audio", &m.audio), ("video", &m.video), ("text", &m.text)] {
            if table.len() != N_CLASSES {
                return Err(Error::Config(format!("{name} means need {N_CLASSES} rows")));
            }
            if table.iter().any(|r| r.len() != table[0].len()) {
                return Err(Error::Config(format!("{name} means have ragged rows")));
            }
        }
        Ok(())
    }
}

fn separated_means(dim: usize, separation: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    if dim >= N_CLASSES {
        // scaled basis vectors: pairwise distance is exactly `separation`
        let scale = separation / std::f64::consts::SQRT_2;
        (0..N_CLASSES)
            .map(|e| {
                let mut v = vec![0.0; dim];
                v[e] = scale;
                v
            })
            .collect()
    } else {
        (0..N_CLASSES)
            .map(|_| {
                (0..dim)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Conversation>> {
    spec.validate()?;
    let mut rng = SeedStreams::new(spec.seed).stream("corpus");
    let noise = Normal::new(0.0, spec.feature_noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let means = &spec.class_feature_means;
    let w = spec.window;
    let (lo, hi) = spec.length_range;

    let mut convs = Vec::with_capacity(spec.n_conversations);
    for c in 0..spec.n_conversations {
        let id = format!("synth-{c:05}");
        let n = rng.random_range(lo..=hi);
        let mut labels: Vec<u8> = Vec::with_capacity(n);
        for t in 0..n {
            let e = if t < w {
                rng.random_range(0..N_CLASSES) as u8
            } else {
                let row = &spec.transition[&labels[t - w..t]];
                sample_categorical(row, &mut rng) as u8
            };
            labels.push(e);
        }
        let offset = |dim: usize, rng: &mut Rng| -> Vec<f64> {
            (0..dim)
                .map(|_| spec.speaker_offset_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let dims = spec.dims();
        let offsets: [[Vec<f64>; 3]; 2] = [
            [
                offset(dims.dim_audio, &mut rng),
                offset(dims.dim_video, &mut rng),
                offset(dims.dim_text, &mut rng),
            ],
            [
                offset(dims.dim_audio, &mut rng),
                offset(dims.dim_video, &mut rng),
                offset(dims.dim_text, &mut rng),
            ],
        ];
        let mut utterances = Vec::with_capacity(n);
        for (t, &e) in labels.iter().enumerate() {
            let speaker = if t % 2 == 0 { Speaker::A } else { Speaker::B };
            let so = &offsets[t % 2];
            let mut feat = |mean: &[f64], off: &[f64]| -> Vec<f32> {
                mean.iter()
                    .zip(off)
                    .map(|(m, o)| (m + o + noise.sample(&mut rng)) as f32)
                    .collect()
            };
            let audio = feat(&means.audio[e as usize], &so[0]);
            let video = feat(&means.video[e as usize], &so[1]);
            let text = feat(&means.text[e as usize], &so[2]);
            utterances.push(Utterance {
                conversation_id: id.clone(),
                turn_index: t,
                speaker,
                label: Some(EmotionLabel::from_index(e as usize)?),
                audio,
                video,
                text,
            });
        }
        convs.push(Conversation { id, utterances });
    }
    Ok(convs)
}

fn sample_categorical(row: &[f64; N_CLASSES], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: fall back to the last class with mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(N_CLASSES - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Conversation>,
    pub valid: Vec<Conversation>,
    pub test: Vec<Conversation>,
}

/// Conversation-level partition. Split sizes use largest remainders, with every
/// non-zero fraction guaranteed at least one conversation.
pub fn split_corpus(convs: &[Conversation], fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fr:?} must be non-negative and sum to 1"
        )));
    }
    let n = convs.len();
    let nonzero = fr.iter().filter(|f| **f > 0.0).count();
    if n < nonzero {
        return Err(Error::Config(format!(
            "{n} conversations cannot fill {nonzero} non-empty splits"
        )));
    }
    let sizes = split_sizes(n, &fr);

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SeedStreams::new(seed).stream("split"));
    let mut parts: Vec<Vec<usize>> = Vec::with_capacity(3);
    let mut start = 0;
    for s in sizes {
        let mut part = idx[start..start + s].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += s;
    }
    let take = |p: &[usize]| p.iter().map(|&i| convs[i].clone()).collect::<Vec<_>>();
    Ok(Splits {
        train: take(&parts[0]),
        valid: take(&parts[1]),
        test: take(&parts[2]),
    })
}

fn split_sizes(n: usize, fr: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fr.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        // guard against 0.8*10 = 7.999...
        sizes[i] = (exact[i] + 1e-9).floor() as usize;
    }
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if fr[i] > 0.0 {
            sizes[i] += 1;
            remaining -= 1;
        }
    }
    for i in 0..3 {
        if fr[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}
