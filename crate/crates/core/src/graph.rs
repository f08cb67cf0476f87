//! Conversation graph over a window and the two graph layers run on it.
//!
//! Nodes are the window's utterances; every earlier utterance sends a directed
//! edge to every later one, typed INTRA when both come from the same speaker
//! and INTER otherwise. A relational GCN layer (mean-normalised per relation,
//! self-connection through its own weight) is followed by a masked multi-head
//! attention layer in which each node attends over itself and its
//! in-neighbours, with a residual connection.

use serde::{Deserialize, Serialize};

use crate::corpus::Speaker;
use crate::encoder::WindowFeatures;
use crate::error::{Error, Result};
use crate::ndiff::{relu, relu_backward, softmax, softmax_backward, Params, Real, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    Intra,
    Inter,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::Intra, Relation::Inter];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Relation,
}

/// Edge list plus per-node incoming neighbourhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_nodes: usize,
    edges: Vec<Edge>,
    /// `incoming[relation][node]` lists source nodes
    incoming: [Vec<Vec<usize>>; 2],
}

impl Topology {
    pub fn new(n_nodes: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut incoming = [vec![Vec::new(); n_nodes], vec![Vec::new(); n_nodes]];
        for e in &edges {
            if e.src >= n_nodes || e.dst >= n_nodes || e.src == e.dst {
                return Err(Error::shape("graph", format!("bad edge {e:?} for {n_nodes} nodes")));
            }
            incoming[e.relation.index()][e.dst].push(e.src);
        }
        Ok(Topology {
            n_nodes,
            edges,
            incoming,
        })
    }

    /// Full past-to-future DAG over a window, relation by speaker equality.
    pub fn from_speakers(speakers: &[Speaker]) -> Self {
        let n = speakers.len();
        let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for dst in 0..n {
            for src in 0..dst {
                let relation = if speakers[src] == speakers[dst] {
                    Relation::Intra
                } else {
                    Relation::Inter
                };
                edges.push(Edge { src, dst, relation });
            }
        }
        Topology::new(n, edges).expect("forward edges are always valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn incoming(&self, relation: Relation, node: usize) -> &[usize] {
        &self.incoming[relation.index()][node]
    }

    /// `node` followed by all of its in-neighbours (any relation), ascending.
    pub fn attention_set(&self, node: usize) -> Vec<usize> {
        let mut set: Vec<usize> = self.incoming[0][node]
            .iter()
            .chain(&self.incoming[1][node])
            .copied()
            .collect();
        set.push(node);
        set.sort_unstable();
        set.dedup();
        set
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGraph<T> {
    pub nodes: Tensor<T>,
    pub speakers: Vec<Speaker>,
    pub topology: Topology,
}

pub fn build_graph<T: Real>(feat: WindowFeatures<T>) -> ConvGraph<T> {
    let topology = Topology::from_speakers(&feat.speakers);
    ConvGraph {
        nodes: feat.features,
        speakers: feat.speakers,
        topology,
    }
}

#[derive(Serialize)]
struct GraphDump<'a> {
    nodes: Vec<GraphDumpNode>,
    edges: &'a [Edge],
}

#[derive(Serialize)]
struct GraphDumpNode {
    index: usize,
    speaker: Speaker,
    features: Vec<f64>,
}

impl<T: Real> ConvGraph<T> {
    /// Node/edge lists as JSON, for inspection.
    pub fn to_debug_json(&self) -> Result<String> {
        let dump = GraphDump {
            nodes: self
                .speakers
                .iter()
                .enumerate()
                .map(|(i, &speaker)| GraphDumpNode {
                    index: i,
                    speaker,
                    features: self.nodes.row(i).iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
            edges: self.topology.edges(),
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

/// `h_i' = ReLU(h_i W_0 + Σ_r mean_{j ∈ N_r(i)} h_j W_r)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgcnLayer {
    pub w_self: String,
    pub w_rel: [String; 2],
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct RgcnCache<T> {
    input: Tensor<T>,
    output: Tensor<T>,
}

impl RgcnLayer {
    pub fn new(prefix: &str, dim: usize) -> Self {
        RgcnLayer {
            w_self: format!("{prefix}.W_self"),
            w_rel: [format!("{prefix}.W_intra"), format!("{prefix}.W_inter")],
            dim,
        }
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        p.init_uniform(&self.w_self, &[self.dim, self.dim], self.dim, rng)?;
        for w in &self.w_rel {
            p.init_uniform(w, &[self.dim, self.dim], self.dim, rng)?;
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, topo: &Topology, h: &Tensor<T>) -> Result<(Tensor<T>, RgcnCache<T>)> {
        if h.rows() != topo.n_nodes() || h.cols() != self.dim {
            return Err(Error::shape(
                "rgcn",
                format!("nodes {:?} for dim {}", h.shape(), self.dim),
            ));
        }
        let mut pre = h.matmul(p.get(&self.w_self)?)?;
        for r in Relation::ALL {
            let msg = h.matmul(p.get(&self.w_rel[r.index()])?)?;
            for i in 0..topo.n_nodes() {
                let nbrs = topo.incoming(r, i);
                if nbrs.is_empty() {
                    continue;
                }
                let inv = T::c(1.0 / nbrs.len() as f64);
                let row = pre.row_mut(i);
                for &j in nbrs {
                    for (o, &m) in row.iter_mut().zip(msg.row(j)) {
                        *o += inv * m;
                    }
                }
            }
        }
        let output = relu(&pre);
        Ok((
            output.clone(),
            RgcnCache {
                input: h.clone(),
                output,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        topo: &Topology,
        cache: &RgcnCache<T>,
        dout: &Tensor<T>,
        g: &mut Params<T>,
    ) -> Result<Tensor<T>> {
        let dpre = relu_backward(&cache.output, dout);
        let h = &cache.input;
        let w_self = p.get(&self.w_self)?;
        g.get_mut(&self.w_self)?.add_assign(&h.matmul_tn(&dpre)?)?;
        let mut dh = dpre.matmul_nt(w_self)?;
        for r in Relation::ALL {
            let mut dmsg = Tensor::zeros(&[topo.n_nodes(), self.dim]);
            for i in 0..topo.n_nodes() {
                let nbrs = topo.incoming(r, i);
                if nbrs.is_empty() {
                    continue;
                }
                let inv = T::c(1.0 / nbrs.len() as f64);
                for &j in nbrs {
                    let src = dpre.row(i).to_vec();
                    for (o, s) in dmsg.row_mut(j).iter_mut().zip(src) {
                        *o += inv * s;
                    }
                }
            }
            let name = &self.w_rel[r.index()];
            g.get_mut(name)?.add_assign(&h.matmul_tn(&dmsg)?)?;
            dh.add_assign(&dmsg.matmul_nt(p.get(name)?)?)?;
        }
        Ok(dh)
    }
}

/// Masked multi-head attention over `{i} ∪ in(i)` with output projection and residual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTransformerLayer {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub bo: String,
    pub dim: usize,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct TransformerCache<T> {
    input: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    ctx: Tensor<T>,
    /// per head, per node: (attention set, weights)
    attention: Vec<Vec<(Vec<usize>, Vec<T>)>>,
}

impl<T: Real> TransformerCache<T> {
    pub fn attention(&self) -> &[Vec<(Vec<usize>, Vec<T>)>] {
        &self.attention
    }
}

impl GraphTransformerLayer {
    pub fn new(prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide model dim {dim}")));
        }
        Ok(GraphTransformerLayer {
            wq: format!("{prefix}.W_Q"),
            wk: format!("{prefix}.W_K"),
            wv: format!("{prefix}.W_V"),
            wo: format!("{prefix}.W_O"),
            bo: format!("{prefix}.b_O"),
            dim,
            heads,
        })
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        let d = self.dim;
        for name in [&self.wq, &self.wk, &self.wv, &self.wo] {
            p.init_uniform(name, &[d, d], d, rng)?;
        }
        p.init_uniform(&self.bo, &[d], d, rng)
    }

    pub fn forward<T: Real>(
        &self,
        p: &Params<T>,
        topo: &Topology,
        h: &Tensor<T>,
    ) -> Result<(Tensor<T>, TransformerCache<T>)> {
        let n = topo.n_nodes();
        if h.rows() != n || h.cols() != self.dim {
            return Err(Error::shape(
                "graph_transformer",
                format!("nodes {:?} for dim {}", h.shape(), self.dim),
            ));
        }
        let q = h.matmul(p.get(&self.wq)?)?;
        let k = h.matmul(p.get(&self.wk)?)?;
        let v = h.matmul(p.get(&self.wv)?)?;
        let dh = self.head_dim();
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let mut ctx = Tensor::zeros(&[n, self.dim]);
        let mut attention = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let cols = head * dh..(head + 1) * dh;
            let mut per_node = Vec::with_capacity(n);
            for i in 0..n {
                let set = topo.attention_set(i);
                let qi = &q.row(i)[cols.clone()];
                let scores: Vec<T> = set
                    .iter()
                    .map(|&j| crate::ndiff::tensor_dot(qi, &k.row(j)[cols.clone()]) * scale)
                    .collect();
                let alpha = softmax(&scores);
                let out = &mut ctx.row_mut(i)[cols.clone()];
                for (&j, &a) in set.iter().zip(&alpha) {
                    for (o, &vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += a * vv;
                    }
                }
                per_node.push((set, alpha));
            }
            attention.push(per_node);
        }
        let mut out = ctx.matmul(p.get(&self.wo)?)?;
        let bo = p.get(&self.bo)?;
        for i in 0..n {
            for ((o, &b), &r) in out.row_mut(i).iter_mut().zip(bo.data()).zip(h.row(i)) {
                *o += b + r;
            }
        }
        Ok((
            out,
            TransformerCache {
                input: h.clone(),
                q,
                k,
                v,
                ctx,
                attention,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &TransformerCache<T>,
        dout: &Tensor<T>,
        g: &mut Params<T>,
    ) -> Result<Tensor<T>> {
        let n = cache.input.rows();
        let d = self.dim;
        let dh = self.head_dim();
        let scale = T::c(1.0 / (dh as f64).sqrt());

        let mut dinput = dout.clone();
        g.get_mut(&self.wo)?.add_assign(&cache.ctx.matmul_tn(dout)?)?;
        let gb = g.get_mut(&self.bo)?;
        for i in 0..n {
            for (a, &b) in gb.data_mut().iter_mut().zip(dout.row(i)) {
                *a += b;
            }
        }
        let dctx = dout.matmul_nt(p.get(&self.wo)?)?;

        let mut dq = Tensor::zeros(&[n, d]);
        let mut dk = Tensor::zeros(&[n, d]);
        let mut dv = Tensor::zeros(&[n, d]);
        for (head, per_node) in cache.attention.iter().enumerate() {
            let cols = head * dh..(head + 1) * dh;
            for (i, (set, alpha)) in per_node.iter().enumerate() {
                let dci = &dctx.row(i)[cols.clone()];
                let dalpha: Vec<T> = set
                    .iter()
                    .map(|&j| crate::ndiff::tensor_dot(dci, &cache.v.row(j)[cols.clone()]))
                    .collect();
                for (&j, &a) in set.iter().zip(alpha) {
                    for (o, &gc) in dv.row_mut(j)[cols.clone()].iter_mut().zip(dci) {
                        *o += a * gc;
                    }
                }
                let dscore = softmax_backward(alpha, &dalpha);
                for (&j, &ds) in set.iter().zip(&dscore) {
                    let ds = ds * scale;
                    let kj: Vec<T> = cache.k.row(j)[cols.clone()].to_vec();
                    for (o, kv) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *o += ds * kv;
                    }
                    let qi: Vec<T> = cache.q.row(i)[cols.clone()].to_vec();
                    for (o, qv) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *o += ds * qv;
                    }
                }
            }
        }
        for (name, grad) in [(&self.wq, &dq), (&self.wk, &dk), (&self.wv, &dv)] {
            g.get_mut(name)?.add_assign(&cache.input.matmul_tn(grad)?)?;
            dinput.add_assign(&grad.matmul_nt(p.get(name)?)?)?;
        }
        Ok(dinput)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub rgcn_layers: usize,
    pub transformer_layers: usize,
    pub heads: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            rgcn_layers: 1,
            transformer_layers: 1,
            heads: 2,
        }
    }
}

/// RGCN stack followed by the attention stack, all at the encoder's output width.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNet {
    pub rgcn: Vec<RgcnLayer>,
    pub transformer: Vec<GraphTransformerLayer>,
}

#[derive(Debug, Clone)]
pub struct GraphNetCache<T> {
    rgcn: Vec<RgcnCache<T>>,
    transformer: Vec<TransformerCache<T>>,
}

impl GraphNet {
    pub fn new(cfg: &GraphConfig, dim: usize) -> Result<Self> {
        Ok(GraphNet {
            rgcn: (0..cfg.rgcn_layers)
                .map(|l| RgcnLayer::new(&format!("graph.rgcn{l}"), dim))
                .collect(),
            transformer: (0..cfg.transformer_layers)
                .map(|l| GraphTransformerLayer::new(&format!("graph.attn{l}"), dim, cfg.heads))
                .collect::<Result<_>>()?,
        })
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        for l in &self.rgcn {
            l.init(p, rng)?;
        }
        for l in &self.transformer {
            l.init(p, rng)?;
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, g: &ConvGraph<T>) -> Result<(Tensor<T>, GraphNetCache<T>)> {
        let mut h = g.nodes.clone();
        let mut rc = Vec::with_capacity(self.rgcn.len());
        for l in &self.rgcn {
            let (out, c) = l.forward(p, &g.topology, &h)?;
            rc.push(c);
            h = out;
        }
        let mut tc = Vec::with_capacity(self.transformer.len());
        for l in &self.transformer {
            let (out, c) = l.forward(p, &g.topology, &h)?;
            tc.push(c);
            h = out;
        }
        Ok((
            h,
            GraphNetCache {
                rgcn: rc,
                transformer: tc,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        topo: &Topology,
        cache: &GraphNetCache<T>,
        dout: &Tensor<T>,
        grads: &mut Params<T>,
    ) -> Result<Tensor<T>> {
        let mut d = dout.clone();
        for (l, c) in self.transformer.iter().zip(&cache.transformer).rev() {
            d = l.backward(p, c, &d, grads)?;
        }
        for (l, c) in self.rgcn.iter().zip(&cache.rgcn).rev() {
            d = l.backward(p, topo, c, &d, grads)?;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;
    use crate::ndiff::grad_check;
    use Speaker::{A, B};

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn edge(src: usize, dst: usize, relation: Relation) -> Edge {
        Edge { src, dst, relation }
    }

    #[test]
    fn alternating_window_edges() {
        let topo = Topology::from_speakers(&[A, B, A, B]);
        let mut edges = topo.edges().to_vec();
        edges.sort();
        let mut expected = vec![
            edge(0, 2, Relation::Intra),
            edge(1, 3, Relation::Intra),
            edge(0, 1, Relation::Inter),
            edge(0, 3, Relation::Inter),
            edge(1, 2, Relation::Inter),
            edge(2, 3, Relation::Inter),
        ];
        expected.sort();
        assert_eq!(edges, expected);
    }

    #[test]
    fn single_speaker_window_is_all_intra() {
        let topo = Topology::from_speakers(&[A, A, A]);
        assert_eq!(topo.edges().len(), 3);
        assert!(topo.edges().iter().all(|e| e.relation == Relation::Intra));
    }

    #[test]
    fn node_and_edge_counts() {
        for w in 2..=5 {
            let speakers: Vec<_> = (0..=w).map(|t| if t % 3 == 0 { A } else { B }).collect();
            let topo = Topology::from_speakers(&speakers);
            assert_eq!(topo.n_nodes(), w + 1);
            assert_eq!(topo.edges().len(), (w + 1) * w / 2);
            assert!(topo.edges().iter().all(|e| e.src < e.dst));
            assert_eq!(topo, Topology::from_speakers(&speakers));
        }
    }

    fn rgcn_params(dim: usize, rng: &mut Rng) -> (RgcnLayer, Params<f64>) {
        let layer = RgcnLayer::new("r", dim);
        let mut p = Params::new();
        layer.init(&mut p, rng).unwrap();
        (layer, p)
    }

    #[test]
    fn rgcn_hand_cases() {
        let mut rng = Rng::seed_from_u64(0);
        let (layer, mut p) = rgcn_params(2, &mut rng);
        let topo = Topology::from_speakers(&[A, A, A]);
        let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.5], vec![0.25, 4.0]]).unwrap();

        // node 0 has no in-neighbours: ReLU(h_0 W_0)
        let (out, _) = layer.forward(&p, &topo, &h).unwrap();
        let own = h.matmul(p.get("r.W_self").unwrap()).unwrap();
        for (o, v) in out.row(0).iter().zip(own.row(0)) {
            assert_eq!(*o, v.max(0.0));
        }

        for name in ["r.W_self", "r.W_intra", "r.W_inter"] {
            p.set(name, Tensor::identity(2)).unwrap();
        }
        let (out, _) = layer.forward(&p, &topo, &h).unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0]);
        assert_eq!(out.row(1), &[4.0, 2.5]);
        assert_eq!(out.row(2), &[0.25 + 2.0, 4.0 + 1.25]);
    }

    #[test]
    fn rgcn_ignores_non_neighbours() {
        let mut rng = Rng::seed_from_u64(1);
        let (layer, p) = rgcn_params(3, &mut rng);
        // node 1 only hears from node 0; node 2 is a later node
        let topo = Topology::from_speakers(&[A, B, A]);
        let h = random(&[3, 3], &mut rng);
        let (out, _) = layer.forward(&p, &topo, &h).unwrap();
        let mut h2 = h.clone();
        h2.row_mut(2).fill(0.0);
        let (out2, _) = layer.forward(&p, &topo, &h2).unwrap();
        assert_eq!(out.row(0), out2.row(0));
        assert_eq!(out.row(1), out2.row(1));
    }

    #[test]
    fn rgcn_gradients() {
        for seed in 0..10 {
            let mut rng = Rng::seed_from_u64(10 + seed);
            let (layer, mut p) = rgcn_params(3, &mut rng);
            let topo = Topology::from_speakers(&[A, B, A, B]);
            p.insert("h", random(&[4, 3], &mut rng)).unwrap();
            let coef = random(&[4, 3], &mut rng);
            let f = |p: &Params<f64>| {
                let (o, _) = layer.forward(p, &topo, p.get("h").unwrap()).unwrap();
                o.data().iter().zip(coef.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, c) = layer.forward(&p, &topo, p.get("h").unwrap()).unwrap();
            let mut g = p.zeros_like();
            let dh = layer.backward(&p, &topo, &c, &coef, &mut g).unwrap();
            g.set("h", dh).unwrap();
            let r = grad_check(f, &p, &g, 1e-5, 1e-4).unwrap();
            assert!(r.passed(), "seed {seed}: {r}");
        }
    }

    fn attn(dim: usize, heads: usize, rng: &mut Rng) -> (GraphTransformerLayer, Params<f64>) {
        let layer = GraphTransformerLayer::new("t", dim, heads).unwrap();
        let mut p = Params::new();
        layer.init(&mut p, rng).unwrap();
        (layer, p)
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let mut rng = Rng::seed_from_u64(2);
        let (layer, p) = attn(4, 2, &mut rng);
        let topo = Topology::new(1, vec![]).unwrap();
        let h = random(&[1, 4], &mut rng);
        let (out, cache) = layer.forward(&p, &topo, &h).unwrap();
        for head in cache.attention() {
            assert_eq!(head[0].1, vec![1.0]);
        }
        let v = h.matmul(p.get("t.W_V").unwrap()).unwrap();
        let mut expected = v.matmul(p.get("t.W_O").unwrap()).unwrap();
        for ((e, &b), &r) in expected
            .data_mut()
            .iter_mut()
            .zip(p.get("t.b_O").unwrap().data())
            .zip(h.data())
        {
            *e += b + r;
        }
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = Rng::seed_from_u64(3);
        for n in 1..=6 {
            let (layer, p) = attn(6, 3, &mut rng);
            let speakers: Vec<_> = (0..n).map(|_| if rng.random::<bool>() { A } else { B }).collect();
            let topo = Topology::from_speakers(&speakers);
            let (_, cache) = layer.forward(&p, &topo, &random(&[n, 6], &mut rng)).unwrap();
            for head in cache.attention() {
                for (i, (set, w)) in head.iter().enumerate() {
                    assert_eq!(set.len(), i + 1);
                    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
        assert!(GraphTransformerLayer::new("t", 6, 4).is_err());
    }

    #[test]
    fn relabeling_nodes_permutes_outputs() {
        let mut rng = Rng::seed_from_u64(4);
        let (layer, p) = attn(4, 2, &mut rng);
        let (rg, rp) = rgcn_params(4, &mut rng);
        let mut params = p.clone();
        for (k, v) in rp.iter() {
            params.insert(k, v.clone()).unwrap();
        }
        let topo = Topology::from_speakers(&[A, B, A, B, B]);
        let h = random(&[5, 4], &mut rng);
        let perm = [3usize, 0, 4, 1, 2]; // node i is stored at slot perm[i]
        let mut hp = Tensor::zeros(&[5, 4]);
        for i in 0..5 {
            hp.row_mut(perm[i]).copy_from_slice(h.row(i));
        }
        let edges: Vec<Edge> = topo
            .edges()
            .iter()
            .map(|e| edge(perm[e.src], perm[e.dst], e.relation))
            .collect();
        let topo_p = Topology::new(5, edges).unwrap();

        let (r1, _) = rg.forward(&params, &topo, &h).unwrap();
        let (o1, _) = layer.forward(&params, &topo, &r1).unwrap();
        let (r2, _) = rg.forward(&params, &topo_p, &hp).unwrap();
        let (o2, _) = layer.forward(&params, &topo_p, &r2).unwrap();
        for i in 0..5 {
            for (a, b) in o1.row(i).iter().zip(o2.row(perm[i])) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transformer_gradients() {
        for seed in 0..10 {
            let mut rng = Rng::seed_from_u64(20 + seed);
            let (layer, mut p) = attn(4, 2, &mut rng);
            let topo = Topology::from_speakers(&[A, B, B, A]);
            p.insert("h", random(&[4, 4], &mut rng)).unwrap();
            let coef = random(&[4, 4], &mut rng);
            let f = |p: &Params<f64>| {
                let (o, _) = layer.forward(p, &topo, p.get("h").unwrap()).unwrap();
                o.data().iter().zip(coef.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, c) = layer.forward(&p, &topo, p.get("h").unwrap()).unwrap();
            let mut g = p.zeros_like();
            let dh = layer.backward(&p, &c, &coef, &mut g).unwrap();
            g.set("h", dh).unwrap();
            let r = grad_check(f, &p, &g, 1e-5, 1e-4).unwrap();
            assert!(r.passed(), "seed {seed}: {r}");
        }
    }

    #[test]
    fn debug_dump_lists_nodes_and_edges() {
        let feat = WindowFeatures {
            features: Tensor::<f64>::zeros(&[3, 2]),
            speakers: vec![A, B, A],
        };
        let g = build_graph(feat);
        let json: serde_json::Value = serde_json::from_str(&g.to_debug_json().unwrap()).unwrap();
        assert_eq!(json["nodes"].as_array().unwrap().len(), 3);
        assert_eq!(json["edges"].as_array().unwrap().len(), 3);
    }
}
