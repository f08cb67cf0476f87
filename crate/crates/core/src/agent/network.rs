//! The full Q-network: window encoder, conversation graph, dueling heads.

use serde::{Deserialize, Serialize};

use super::heads::{DuelingHeads, DuelingOutput, HeadsCache};
use crate::corpus::{Speaker, Utterance};
use crate::dk::check_window;
use crate::encoder::{Encoder, EncoderCache, EncoderConfig, ModalityInputs, WindowFeatures};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphConfig, GraphNet, GraphNetCache, Topology};
use crate::ndiff::{Mode, Params, Real};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub window: usize,
    pub encoder: EncoderConfig,
    pub graph: GraphConfig,
    /// Width of the hidden layer in each dueling stream.
    pub head_hidden: usize,
}

impl NetworkConfig {
    pub fn desk(window: usize) -> Self {
        NetworkConfig {
            window,
            encoder: EncoderConfig::desk(),
            graph: GraphConfig::default(),
            head_hidden: 32,
        }
    }

    pub fn paper(window: usize) -> Self {
        NetworkConfig {
            window,
            encoder: EncoderConfig::paper(),
            graph: GraphConfig {
                rgcn_layers: 1,
                transformer_layers: 1,
                heads: 8,
            },
            head_hidden: 512,
        }
    }

    /// Flattened state width, `(w + 1) · F`.
    pub fn state_dim(&self) -> usize {
        (self.window + 1) * self.encoder.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        check_window(self.window)?;
        self.encoder.validate()?;
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        if self.graph.heads == 0 || !self.encoder.out_dim().is_multiple_of(self.graph.heads) {
            return Err(Error::Config(format!(
                "{} attention heads do not divide node width {}",
                self.graph.heads,
                self.encoder.out_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub cfg: NetworkConfig,
    pub encoder: Encoder,
    pub graph: GraphNet,
    pub heads: DuelingHeads,
}

#[derive(Debug, Clone)]
pub struct QCache<T> {
    encoder: EncoderCache<T>,
    topology: Topology,
    graph: GraphNetCache<T>,
    heads: HeadsCache<T>,
}

impl QNetwork {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(QNetwork {
            encoder: Encoder::new(cfg.encoder)?,
            graph: GraphNet::new(&cfg.graph, cfg.encoder.out_dim())?,
            heads: DuelingHeads::new(cfg.state_dim(), cfg.head_hidden),
            cfg,
        })
    }

    pub fn window(&self) -> usize {
        self.cfg.window
    }

    pub fn init<T: Real>(&self, rng: &mut Rng) -> Result<Params<T>> {
        let mut p = Params::new();
        self.encoder.init(&mut p, rng)?;
        self.graph.init(&mut p, rng)?;
        self.heads.init(&mut p, rng)?;
        Ok(p)
    }

    /// Q values for a window of `w` past utterances followed by the target.
    pub fn forward<T: Real>(
        &self,
        p: &Params<T>,
        window: &[&Utterance],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(DuelingOutput<T>, QCache<T>)> {
        let (feat, ec) = self.encoder.encode_window(p, window, self.window() + 1, mode, rng)?;
        self.forward_features(p, feat, ec)
    }

    /// Same as [`forward`](Self::forward) from already-extracted modality matrices.
    pub fn forward_inputs<T: Real>(
        &self,
        p: &Params<T>,
        inputs: &ModalityInputs<T>,
        speakers: Vec<Speaker>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(DuelingOutput<T>, QCache<T>)> {
        if speakers.len() != self.window() + 1 {
            return Err(Error::WindowMismatch {
                expected: self.window() + 1,
                got: speakers.len(),
            });
        }
        let (feat, ec) = self.encoder.forward(p, inputs, speakers, mode, rng)?;
        self.forward_features(p, feat, ec)
    }

    fn forward_features<T: Real>(
        &self,
        p: &Params<T>,
        feat: WindowFeatures<T>,
        ec: EncoderCache<T>,
    ) -> Result<(DuelingOutput<T>, QCache<T>)> {
        let g = build_graph(feat);
        let (nodes, gc) = self.graph.forward(p, &g)?;
        let state = nodes.reshape(&[1, self.cfg.state_dim()])?;
        let (out, hc) = self.heads.forward(p, &state)?;
        Ok((
            out,
            QCache {
                encoder: ec,
                topology: g.topology,
                graph: gc,
                heads: hc,
            },
        ))
    }

    /// Accumulates parameter gradients for `dq = ∂loss/∂Q` and returns input gradients.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &QCache<T>,
        dq: &[T],
        g: &mut Params<T>,
    ) -> Result<ModalityInputs<T>> {
        let ds = self.heads.backward(p, &cache.heads, dq, g)?;
        let dnodes = ds.reshape(&[self.window() + 1, self.cfg.encoder.out_dim()])?;
        let dfeat = self.graph.backward(p, &cache.topology, &cache.graph, &dnodes, g)?;
        self.encoder.backward(p, &cache.encoder, &dfeat, g)
    }
}
