//! Online prediction with domain-knowledge revision.
//!
//! An episode keeps the last `w` utterances and their labels. The first `w`
//! labels are gold (evaluation protocol); after that every prediction is fed
//! back as the label of its utterance, so the label-pair used to look up the
//! DK table is always `w` of the most recent labels.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{argmax, q_values, NetworkConfig, QNetwork};
use crate::corpus::{Conversation, Manifest, Utterance};
use crate::dk::{Dist, DkTable, LabelPair};
use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, N_CLASSES};
use crate::ndiff::{load_checkpoint, save_checkpoint, softmax, Params};

/// A frozen network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: QNetwork,
    pub params: Params<f32>,
}

#[derive(Serialize, Deserialize)]
struct ModelConfig {
    network: NetworkConfig,
}

impl Model {
    pub fn new(cfg: NetworkConfig, params: Params<f32>) -> Result<Self> {
        let net = QNetwork::new(cfg)?;
        let expected = net.init::<f32>(&mut <crate::rng::Rng as rand::SeedableRng>::seed_from_u64(0))?;
        expected.check_same_keys(&params)?;
        for (name, t) in expected.iter() {
            if params.get(name)?.shape() != t.shape() {
                return Err(Error::shape("model", format!("parameter {name} has the wrong shape")));
            }
        }
        Ok(Model { net, params })
    }

    pub fn window(&self) -> usize {
        self.net.window()
    }

    pub fn manifest(&self) -> Manifest {
        self.net.cfg.encoder.manifest()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = serde_json::to_value(ModelConfig { network: self.net.cfg })?;
        save_checkpoint(path, &cfg, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let cfg: ModelConfig = serde_json::from_value(ckpt.config)?;
        Model::new(cfg.network, ckpt.params)
    }

    /// `softmax(Q)` for one complete window.
    pub fn scores(&self, window: &[&Utterance]) -> Result<Dist> {
        let q = q_values(&self.net, &self.params, window)?;
        let q: Vec<f64> = q.iter().map(|&v| v as f64).collect();
        let s = softmax(&q);
        let mut out = [0.0; N_CLASSES];
        out.copy_from_slice(&s);
        Ok(out)
    }
}

/// Which DK terms are added to the model scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Revision {
    /// `scores + P + C`
    #[default]
    Full,
    /// `scores + C`
    CorrOnly,
    Off,
}

impl std::str::FromStr for Revision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Revision::Full),
            "corr-only" => Ok(Revision::CorrOnly),
            "off" => Ok(Revision::Off),
            _ => Err(Error::Config(format!(
                "unknown revision mode {s:?} (full, corr-only, off)"
            ))),
        }
    }
}

pub fn revise(scores: &Dist, p: &Dist, c: &Dist, mode: Revision) -> Dist {
    let mut out = *scores;
    for e in 0..N_CLASSES {
        out[e] += match mode {
            Revision::Full => p[e] + c[e],
            Revision::CorrOnly => c[e],
            Revision::Off => 0.0,
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub turn_index: usize,
    pub label: EmotionLabel,
    pub scores: Dist,
    pub revised: Dist,
    /// False while the label buffer is not yet full (label-free start).
    pub revision_applied: bool,
}

impl Prediction {
    pub fn raw_label(&self) -> EmotionLabel {
        EmotionLabel::from_index(argmax(&self.scores)).expect("argmax is in range")
    }
}

/// Rolling per-conversation state.
#[derive(Debug, Clone)]
pub struct EpisodeState<'a> {
    model: &'a Model,
    table: &'a DkTable,
    revision: Revision,
    conversation_id: Option<String>,
    buffer: VecDeque<Utterance>,
    labels: VecDeque<EmotionLabel>,
    next_turn: usize,
    warmup: Vec<Prediction>,
}

impl<'a> EpisodeState<'a> {
    fn empty(model: &'a Model, table: &'a DkTable, revision: Revision) -> Result<Self> {
        if table.window() != model.window() {
            return Err(Error::WindowMismatch {
                expected: model.window(),
                got: table.window(),
            });
        }
        Ok(EpisodeState {
            model,
            table,
            revision,
            conversation_id: None,
            buffer: VecDeque::with_capacity(model.window()),
            labels: VecDeque::with_capacity(model.window()),
            next_turn: 0,
            warmup: Vec::new(),
        })
    }

    /// Label-free start: windows are left-padded with zero utterances and no
    /// revision happens until `w` predictions fill the label buffer.
    pub fn streaming(model: &'a Model, table: &'a DkTable, revision: Revision) -> Result<Self> {
        Self::empty(model, table, revision)
    }

    pub fn window(&self) -> usize {
        self.model.window()
    }

    pub fn next_turn(&self) -> usize {
        self.next_turn
    }

    pub fn buffered_labels(&self) -> Vec<EmotionLabel> {
        self.labels.iter().copied().collect()
    }

    /// Predictions made while priming a label-free episode.
    pub fn take_warmup(&mut self) -> Vec<Prediction> {
        std::mem::take(&mut self.warmup)
    }

    fn accept(&self, utt: &Utterance) -> Result<()> {
        if let Some(id) = &self.conversation_id {
            if *id != utt.conversation_id {
                return Err(Error::InvalidConversation {
                    conversation: utt.conversation_id.clone(),
                    msg: format!("episode belongs to conversation {id}"),
                });
            }
        }
        if utt.turn_index != self.next_turn {
            return Err(Error::InvalidConversation {
                conversation: utt.conversation_id.clone(),
                msg: format!("expected turn {}, got {}", self.next_turn, utt.turn_index),
            });
        }
        let dims = self.model.manifest();
        if Manifest::of_utterance(utt) != dims {
            return Err(Error::shape(
                "predict",
                format!("turn {} does not match the model's feature dims", utt.turn_index),
            ));
        }
        Ok(())
    }

    fn push(&mut self, utt: &Utterance, label: EmotionLabel) {
        if self.buffer.len() == self.window() {
            self.buffer.pop_front();
            self.labels.pop_front();
        }
        self.buffer.push_back(utt.clone());
        self.labels.push_back(label);
        self.conversation_id.get_or_insert_with(|| utt.conversation_id.clone());
        self.next_turn += 1;
    }

    /// Scores the next utterance and rolls the buffer forward with the prediction.
    pub fn predict_next(&mut self, utt: &Utterance) -> Result<Prediction> {
        self.accept(utt)?;
        let w = self.window();
        let dims = self.model.manifest();
        let missing = w - self.buffer.len();
        let first_speaker = self.buffer.front().map_or(utt.speaker, |u| u.speaker);
        let pads: Vec<Utterance> = (0..missing)
            .map(|k| {
                // alternate backwards from the earliest real utterance
                let sp = if (missing - k) % 2 == 1 {
                    first_speaker.other()
                } else {
                    first_speaker
                };
                Utterance::zeros(&dims, sp)
            })
            .collect();
        let window: Vec<&Utterance> = pads.iter().chain(self.buffer.iter()).chain([utt]).collect();
        let scores = self.model.scores(&window)?;

        let full = self.labels.len() == w;
        let revised = if full && self.revision != Revision::Off {
            let l = LabelPair::new(self.buffered_labels())?;
            let (p, c) = self.table.lookup(&l)?;
            revise(&scores, &p, &c, self.revision)
        } else {
            scores
        };
        if !revised.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("scores for turn {}", utt.turn_index)));
        }
        let label = EmotionLabel::from_index(argmax(&revised))?;
        self.push(utt, label);
        Ok(Prediction {
            turn_index: utt.turn_index,
            label,
            scores,
            revised,
            revision_applied: full && self.revision != Revision::Off,
        })
    }
}

/// Primes an episode from the first `w` utterances of a conversation.
///
/// With gold labels on all of them, prediction starts at turn `w`. Without any
/// labels the episode runs label-free: the head is predicted from padded
/// windows (see [`EpisodeState::take_warmup`]).
pub fn init_episode<'a>(
    model: &'a Model,
    table: &'a DkTable,
    head: &[Utterance],
    revision: Revision,
) -> Result<EpisodeState<'a>> {
    let w = model.window();
    if head.len() != w {
        return Err(Error::WindowMismatch {
            expected: w,
            got: head.len(),
        });
    }
    let mut state = EpisodeState::empty(model, table, revision)?;
    let labeled = head.iter().filter(|u| u.label.is_some()).count();
    if labeled == w {
        for u in head {
            state.accept(u)?;
            state.push(u, u.label.expect("checked above"));
        }
    } else if labeled == 0 {
        let mut warmup = Vec::with_capacity(w);
        for u in head {
            warmup.push(state.predict_next(u)?);
        }
        state.warmup = warmup;
    } else {
        return Err(Error::InvalidConversation {
            conversation: head[0].conversation_id.clone(),
            msg: "initial utterances must be all labeled or all unlabeled".into(),
        });
    }
    Ok(state)
}

/// Gold-initialised episode over a whole conversation: one prediction per
/// utterance from index `w` on.
pub fn run_episode(model: &Model, table: &DkTable, conv: &Conversation, revision: Revision) -> Result<Vec<Prediction>> {
    let w = model.window();
    if conv.len() <= w {
        return Err(Error::InvalidConversation {
            conversation: conv.id.clone(),
            msg: format!("{} utterances, need at least {}", conv.len(), w + 1),
        });
    }
    let mut state = init_episode(model, table, &conv.utterances[..w], revision)?;
    conv.utterances[w..].iter().map(|u| state.predict_next(u)).collect()
}

/// One line of streaming output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub conversation_id: String,
    pub turn_index: usize,
    pub label: usize,
    pub scores: Dist,
    pub revised: Dist,
}

impl PredictionRecord {
    pub fn new(conversation_id: &str, p: &Prediction) -> Self {
        PredictionRecord {
            conversation_id: conversation_id.to_string(),
            turn_index: p.turn_index,
            label: p.label.index(),
            scores: p.scores,
            revised: p.revised,
        }
    }
}

enum StreamPhase<'a> {
    /// Collecting the labeled head of a gold-initialised conversation.
    Head(Vec<Utterance>),
    Running(EpisodeState<'a>),
}

/// Feeds utterances one at a time across consecutive conversations.
///
/// A conversation whose first utterance carries a label is treated as
/// gold-initialised (its first `w` utterances produce no output); otherwise it
/// runs label-free and every utterance is predicted.
pub struct StreamPredictor<'a> {
    model: &'a Model,
    table: &'a DkTable,
    revision: Revision,
    current: Option<(String, StreamPhase<'a>)>,
}

impl<'a> StreamPredictor<'a> {
    pub fn new(model: &'a Model, table: &'a DkTable, revision: Revision) -> Result<Self> {
        if table.window() != model.window() {
            return Err(Error::WindowMismatch {
                expected: model.window(),
                got: table.window(),
            });
        }
        Ok(StreamPredictor {
            model,
            table,
            revision,
            current: None,
        })
    }

    pub fn push(&mut self, utt: &Utterance) -> Result<Vec<PredictionRecord>> {
        let same = matches!(&self.current, Some((id, _)) if *id == utt.conversation_id);
        if !same {
            let phase = if utt.label.is_some() {
                StreamPhase::Head(Vec::with_capacity(self.model.window()))
            } else {
                StreamPhase::Running(EpisodeState::streaming(self.model, self.table, self.revision)?)
            };
            self.current = Some((utt.conversation_id.clone(), phase));
        }
        let (id, phase) = self.current.as_mut().expect("set above");
        let id = id.clone();
        match phase {
            StreamPhase::Head(head) => {
                if utt.turn_index != head.len() {
                    return Err(Error::InvalidConversation {
                        conversation: id,
                        msg: format!("expected turn {}, got {}", head.len(), utt.turn_index),
                    });
                }
                head.push(utt.clone());
                if head.len() == self.model.window() {
                    let state = init_episode(self.model, self.table, head, self.revision)?;
                    *phase = StreamPhase::Running(state);
                }
                Ok(Vec::new())
            }
            StreamPhase::Running(state) => {
                let p = state.predict_next(utt)?;
                Ok(vec![PredictionRecord::new(&id, &p)])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::NetworkConfig;
    use crate::corpus::{synth_generate, SynthSpec};
    use crate::dk::build_dk;
    use crate::encoder::EncoderConfig;
    use crate::graph::GraphConfig;
    use crate::rng::Rng;
    use rand::SeedableRng;

    fn tiny_model(w: usize) -> Model {
        let cfg = NetworkConfig {
            window: w,
            encoder: EncoderConfig {
                dim_audio: 3,
                dim_video: 4,
                dim_text: 3,
                unimodal_hidden: 4,
                unimodal_layers: 1,
                fusion_hidden: 4,
                fusion_layers: 1,
                dropout: 0.0,
            },
            graph: GraphConfig::default(),
            head_hidden: 8,
        };
        let net = QNetwork::new(cfg).unwrap();
        let params = net.init(&mut Rng::seed_from_u64(3)).unwrap();
        Model::new(cfg, params).unwrap()
    }

    fn corpus(w: usize, n: usize) -> Vec<Conversation> {
        let spec = SynthSpec::informative(9, n, (w + 1, w + 6), w, &Manifest::new(3, 4, 3), 0.8, 4.0);
        synth_generate(&spec).unwrap()
    }

    #[test]
    fn revision_adds_both_terms() {
        let s = [1.0 / 6.0; 6];
        let mut p = [0.0; 6];
        p[4] = 1.0;
        let c = crate::dk::softmax(&p);
        let r = revise(&s, &p, &c, Revision::Full);
        assert_eq!(argmax(&r), 4);
        assert!((r[4] - (1.0 / 6.0 + 1.0 + c[4])).abs() < 1e-15);
        assert_eq!(revise(&s, &p, &c, Revision::Off), s);
        assert!((revise(&s, &p, &c, Revision::CorrOnly)[4] - (1.0 / 6.0 + c[4])).abs() < 1e-15);
    }

    #[test]
    fn episode_lengths() {
        let model = tiny_model(3);
        let convs = corpus(3, 10);
        let table = build_dk(&convs, 3).unwrap();
        for conv in &convs {
            let preds = run_episode(&model, &table, conv, Revision::Full).unwrap();
            assert_eq!(preds.len(), conv.len() - 3);
            assert_eq!(preds[0].turn_index, 3);
        }
        let mut short = convs[0].clone();
        short.utterances.truncate(3);
        assert!(run_episode(&model, &table, &short, Revision::Full).is_err());
    }

    #[test]
    fn init_requires_full_head() {
        let model = tiny_model(3);
        let convs = corpus(3, 2);
        let table = DkTable::empty(3).unwrap();
        assert!(init_episode(&model, &table, &convs[0].utterances[..2], Revision::Full).is_err());
        let state = init_episode(&model, &table, &convs[0].utterances[..3], Revision::Full).unwrap();
        assert_eq!(state.next_turn(), 3);
        assert!(init_episode(
            &model,
            &DkTable::empty(2).unwrap(),
            &convs[0].utterances[..3],
            Revision::Full
        )
        .is_err());

        let mut mixed = convs[0].utterances[..3].to_vec();
        mixed[1].label = None;
        assert!(init_episode(&model, &table, &mixed, Revision::Full).is_err());
    }

    #[test]
    fn label_free_start_disables_revision() {
        let model = tiny_model(2);
        let mut conv = corpus(2, 1).remove(0);
        for u in &mut conv.utterances {
            u.label = None;
        }
        let table = build_dk(&corpus(2, 20), 2).unwrap();
        let mut state = init_episode(&model, &table, &conv.utterances[..2], Revision::Full).unwrap();
        let warm = state.take_warmup();
        assert_eq!(warm.len(), 2);
        assert!(warm.iter().all(|p| !p.revision_applied && p.scores == p.revised));
        let next = state.predict_next(&conv.utterances[2]).unwrap();
        assert!(next.revision_applied);
        assert_eq!(state.buffered_labels()[0], warm[1].label);
    }

    #[test]
    fn out_of_order_and_wrong_dims() {
        let model = tiny_model(2);
        let convs = corpus(2, 1);
        let table = DkTable::empty(2).unwrap();
        let mut state = init_episode(&model, &table, &convs[0].utterances[..2], Revision::Full).unwrap();
        assert!(state.predict_next(&convs[0].utterances[3]).is_err());
        let mut bad = convs[0].utterances[2].clone();
        bad.text.push(0.0);
        assert!(state.predict_next(&bad).is_err());
        assert!(state.predict_next(&convs[0].utterances[2]).is_ok());
    }

    #[test]
    fn stream_output_counts() {
        let model = tiny_model(3);
        let convs = corpus(3, 3);
        let table = build_dk(&convs, 3).unwrap();
        let mut stream = StreamPredictor::new(&model, &table, Revision::Full).unwrap();
        let mut n = 0;
        for u in convs.iter().flat_map(|c| &c.utterances) {
            n += stream.push(u).unwrap().len();
        }
        assert_eq!(n, convs.iter().map(|c| c.len() - 3).sum::<usize>());

        let mut unlabeled = convs[0].clone();
        unlabeled.utterances.iter_mut().for_each(|u| u.label = None);
        let mut stream = StreamPredictor::new(&model, &table, Revision::Full).unwrap();
        let n: usize = unlabeled.utterances.iter().map(|u| stream.push(u).unwrap().len()).sum();
        assert_eq!(n, unlabeled.len());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = tiny_model(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), model);
    }
}
