//! Window encoder: one bidirectional GRU per modality, concatenation, and a
//! stacked bidirectional fusion GRU over the `w + 1` utterances of a window.

use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, Speaker, Utterance};
use crate::error::{Error, Result};
use crate::ndiff::{dropout_apply, BiGru, BiGruCache, Dropout, Mode, Params, Real, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim_audio: usize,
    pub dim_video: usize,
    pub dim_text: usize,
    pub unimodal_hidden: usize,
    pub unimodal_layers: usize,
    pub fusion_hidden: usize,
    pub fusion_layers: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn desk() -> Self {
        EncoderConfig {
            dim_audio: 8,
            dim_video: 12,
            dim_text: 8,
            unimodal_hidden: 16,
            unimodal_layers: 1,
            fusion_hidden: 16,
            fusion_layers: 2,
            dropout: 0.3,
        }
    }

    /// Text and audio features of size 100, video 512, hidden size 512.
    pub fn paper() -> Self {
        EncoderConfig {
            dim_audio: 100,
            dim_video: 512,
            dim_text: 100,
            unimodal_hidden: 512,
            unimodal_layers: 1,
            fusion_hidden: 512,
            fusion_layers: 2,
            dropout: 0.3,
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest::new(self.dim_audio, self.dim_video, self.dim_text)
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fusion_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.dim_audio,
            self.dim_video,
            self.dim_text,
            self.unimodal_hidden,
            self.unimodal_layers,
            self.fusion_hidden,
            self.fusion_layers,
        ];
        if all.contains(&0) {
            return Err(Error::Config(
                "encoder dimensions and layer counts must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Fused per-utterance vectors of a window; the target is the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFeatures<T> {
    pub features: Tensor<T>,
    pub speakers: Vec<Speaker>,
}

impl<T: Real> WindowFeatures<T> {
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }
}

/// Raw modality matrices of a window, each (w+1) × D.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityInputs<T> {
    pub audio: Tensor<T>,
    pub video: Tensor<T>,
    pub text: Tensor<T>,
}

impl<T: Real> ModalityInputs<T> {
    pub fn from_utterances(utts: &[&Utterance]) -> Result<Self> {
        let take = |f: fn(&Utterance) -> &Vec<f32>| -> Result<Tensor<T>> {
            let rows: Vec<Vec<T>> = utts
                .iter()
                .map(|u| f(u).iter().map(|&v| T::c(v as f64)).collect())
                .collect();
            Tensor::from_rows(&rows)
        };
        Ok(ModalityInputs {
            audio: take(|u| &u.audio)?,
            video: take(|u| &u.video)?,
            text: take(|u| &u.text)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    unimodal: [BiGruCache<T>; 3],
    concat_mask: Option<Tensor<T>>,
    fusion: BiGruCache<T>,
    out_mask: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub audio: BiGru,
    pub video: BiGru,
    pub text: BiGru,
    pub fusion: BiGru,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let hu = cfg.unimodal_hidden;
        Ok(Encoder {
            audio: BiGru::new("encoder.audio", cfg.dim_audio, hu, cfg.unimodal_layers),
            video: BiGru::new("encoder.video", cfg.dim_video, hu, cfg.unimodal_layers),
            text: BiGru::new("encoder.text", cfg.dim_text, hu, cfg.unimodal_layers),
            fusion: BiGru::new("encoder.fusion", 6 * hu, cfg.fusion_hidden, cfg.fusion_layers),
            cfg,
        })
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        for net in [&self.audio, &self.video, &self.text, &self.fusion] {
            net.init(p, rng)?;
        }
        Ok(())
    }

    pub fn encode_window<T: Real>(
        &self,
        p: &Params<T>,
        utts: &[&Utterance],
        expected_len: usize,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(WindowFeatures<T>, EncoderCache<T>)> {
        if utts.len() != expected_len {
            return Err(Error::WindowMismatch {
                expected: expected_len,
                got: utts.len(),
            });
        }
        let dims = self.cfg.manifest();
        for u in utts {
            if Manifest::of_utterance(u) != dims {
                return Err(Error::shape(
                    "encoder",
                    format!(
                        "turn {} has feature dims ({}, {}, {}), expected ({}, {}, {})",
                        u.turn_index,
                        u.audio.len(),
                        u.video.len(),
                        u.text.len(),
                        dims.dim_audio,
                        dims.dim_video,
                        dims.dim_text
                    ),
                ));
            }
        }
        let inputs = ModalityInputs::from_utterances(utts)?;
        let speakers = utts.iter().map(|u| u.speaker).collect();
        self.forward(p, &inputs, speakers, mode, rng)
    }

    pub fn forward<T: Real>(
        &self,
        p: &Params<T>,
        inputs: &ModalityInputs<T>,
        speakers: Vec<Speaker>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(WindowFeatures<T>, EncoderCache<T>)> {
        let (a, ca) = self.audio.forward(p, &inputs.audio)?;
        let (v, cv) = self.video.forward(p, &inputs.video)?;
        let (t, ct) = self.text.forward(p, &inputs.text)?;
        let concat = Tensor::hcat(&[&a, &v, &t])?;
        let (concat, concat_mask) = dropout_apply(&concat, self.cfg.dropout, mode, rng)?;
        let (fused, cf) = self.fusion.forward(p, &concat)?;
        let (features, out_mask) = dropout_apply(&fused, self.cfg.dropout, mode, rng)?;
        if speakers.len() != features.rows() {
            return Err(Error::shape("encoder", "speaker tags do not match window rows"));
        }
        Ok((
            WindowFeatures { features, speakers },
            EncoderCache {
                unimodal: [ca, cv, ct],
                concat_mask,
                fusion: cf,
                out_mask,
            },
        ))
    }

    /// Accumulates parameter gradients and returns gradients w.r.t. the raw inputs.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &EncoderCache<T>,
        dfeatures: &Tensor<T>,
        g: &mut Params<T>,
    ) -> Result<ModalityInputs<T>> {
        let dfused = Dropout::backward(&cache.out_mask, dfeatures);
        let dconcat = self.fusion.backward(p, &cache.fusion, &dfused, g)?;
        let dconcat = Dropout::backward(&cache.concat_mask, &dconcat);
        let w = 2 * self.cfg.unimodal_hidden;
        let parts = dconcat.hsplit(&[w, w, w])?;
        let [ca, cv, ct] = &cache.unimodal;
        Ok(ModalityInputs {
            audio: self.audio.backward(p, ca, &parts[0], g)?,
            video: self.video.backward(p, cv, &parts[1], g)?,
            text: self.text.backward(p, ct, &parts[2], g)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;
    use crate::ndiff::grad_check;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            dim_audio: 2,
            dim_video: 3,
            dim_text: 2,
            unimodal_hidden: 2,
            unimodal_layers: 1,
            fusion_hidden: 3,
            fusion_layers: 2,
            dropout: 0.3,
        }
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn utterances(n: usize, cfg: &EncoderConfig, rng: &mut Rng) -> Vec<Utterance> {
        (0..n)
            .map(|t| {
                let mut v = |d: usize| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                Utterance {
                    conversation_id: "c".into(),
                    turn_index: t,
                    speaker: if t % 2 == 0 { Speaker::A } else { Speaker::B },
                    label: None,
                    audio: v(cfg.dim_audio),
                    video: v(cfg.dim_video),
                    text: v(cfg.dim_text),
                }
            })
            .collect()
    }

    #[test]
    fn desk_window_shape() {
        let mut rng = Rng::seed_from_u64(0);
        let cfg = EncoderConfig::desk();
        let enc = Encoder::new(cfg).unwrap();
        let mut p = Params::<f32>::new();
        enc.init(&mut p, &mut rng).unwrap();
        let utts = utterances(4, &cfg, &mut rng);
        let refs: Vec<_> = utts.iter().collect();
        let (f, _) = enc.encode_window(&p, &refs, 4, Mode::Eval, &mut rng).unwrap();
        assert_eq!(f.features.shape(), &[4, 32]);
        assert!(f.features.is_finite());

        let (again, _) = enc
            .encode_window(&p, &refs, 4, Mode::Eval, &mut Rng::seed_from_u64(99))
            .unwrap();
        assert_eq!(f, again);

        assert!(enc.encode_window(&p, &refs[..3], 4, Mode::Eval, &mut rng).is_err());
        let mut bad = utts.clone();
        bad[1].audio.pop();
        let refs: Vec<_> = bad.iter().collect();
        assert!(enc.encode_window(&p, &refs, 4, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = tiny();
        cfg.dropout = 1.0;
        assert!(Encoder::new(cfg).is_err());
        let mut cfg = tiny();
        cfg.fusion_hidden = 0;
        assert!(Encoder::new(cfg).is_err());
    }

    #[test]
    fn gradients_reach_raw_inputs() {
        for seed in 0..3 {
            let mut rng = Rng::seed_from_u64(seed);
            let enc = Encoder::new(tiny()).unwrap();
            let mut p = Params::<f64>::new();
            enc.init(&mut p, &mut rng).unwrap();
            p.insert("in.audio", random(&[4, 2], &mut rng)).unwrap();
            p.insert("in.video", random(&[4, 3], &mut rng)).unwrap();
            p.insert("in.text", random(&[4, 2], &mut rng)).unwrap();
            let coef = random(&[4, 6], &mut rng);
            let speakers = vec![Speaker::A, Speaker::B, Speaker::A, Speaker::B];
            // training mode with a fixed dropout stream: the mask is identical on every evaluation
            let run = |p: &Params<f64>| {
                let inputs = ModalityInputs {
                    audio: p.get("in.audio").unwrap().clone(),
                    video: p.get("in.video").unwrap().clone(),
                    text: p.get("in.text").unwrap().clone(),
                };
                enc.forward(p, &inputs, speakers.clone(), Mode::Train, &mut Rng::seed_from_u64(7))
                    .unwrap()
            };
            let f = |p: &Params<f64>| {
                let (out, _) = run(p);
                out.features
                    .data()
                    .iter()
                    .zip(coef.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let (_, cache) = run(&p);
            let mut g = p.zeros_like();
            let din = enc.backward(&p, &cache, &coef, &mut g).unwrap();
            g.set("in.audio", din.audio).unwrap();
            g.set("in.video", din.video).unwrap();
            g.set("in.text", din.text).unwrap();
            let report = grad_check(f, &p, &g, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn modality_order_is_pure_wiring() {
        let mut rng = Rng::seed_from_u64(4);
        let mut cfg = tiny();
        cfg.dropout = 0.0;
        let enc = Encoder::new(cfg).unwrap();
        let mut p = Params::<f64>::new();
        enc.init(&mut p, &mut rng).unwrap();
        let utts = utterances(3, &cfg, &mut rng);
        let refs: Vec<_> = utts.iter().collect();
        let (reference, _) = enc.encode_window(&p, &refs, 3, Mode::Eval, &mut rng).unwrap();

        // concatenate as [text, audio, video] and permute the fusion input rows to match
        let inputs = ModalityInputs::<f64>::from_utterances(&refs).unwrap();
        let (a, _) = enc.audio.forward(&p, &inputs.audio).unwrap();
        let (v, _) = enc.video.forward(&p, &inputs.video).unwrap();
        let (t, _) = enc.text.forward(&p, &inputs.text).unwrap();
        let permuted_in = Tensor::hcat(&[&t, &a, &v]).unwrap();
        let blk = 2 * cfg.unimodal_hidden;
        let mut q = p.clone();
        for dir in ["fwd", "bwd"] {
            for gate in ["z", "r", "h"] {
                let name = format!("encoder.fusion.l0.{dir}.W{gate}");
                let w = p.get(&name).unwrap();
                let rows: Vec<Vec<f64>> = (0..3 * blk).map(|i| w.row(i).to_vec()).collect();
                let reordered: Vec<Vec<f64>> = rows[2 * blk..].iter().chain(&rows[..2 * blk]).cloned().collect();
                q.set(&name, Tensor::from_rows(&reordered).unwrap()).unwrap();
            }
        }
        let (out, _) = enc.fusion.forward(&q, &permuted_in).unwrap();
        for (x, y) in out.data().iter().zip(reference.features.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
