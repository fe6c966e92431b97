//! Edge-classifying message-passing network over association graphs.
//!
//! Node and edge features are embedded, refined by a fixed number of
//! synchronous message-passing steps with residual updates, and each edge
//! is scored with a link probability. Past-side and future-side messages
//! use separate update networks; all parameters are shared across steps.
//! The backward pass is written by hand and accumulates into a
//! caller-supplied gradient buffer so several graphs (e.g. all hierarchy
//! levels of a training instance) can share one accumulator.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{EdgeFeatures, NodeFeatures};
use crate::graph::AssocGraph;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpnConfig {
    pub d_node: usize,
    pub d_edge: usize,
    /// Message-passing rounds.
    pub steps: usize,
    /// Hidden width of every two-layer block.
    pub hidden: usize,
}

impl Default for MpnConfig {
    fn default() -> Self {
        MpnConfig {
            d_node: 32,
            d_edge: 16,
            steps: 4,
            hidden: 96,
        }
    }
}

impl MpnConfig {
    /// Small variant used where training time matters more than capacity.
    pub fn compact() -> Self {
        MpnConfig {
            d_node: 16,
            d_edge: 8,
            steps: 4,
            hidden: 32,
        }
    }
}

/// Dense affine map, weights stored row-major `[n_out x n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Affine {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Affine {
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
            n_in,
            n_out,
        }
    }

    fn init(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Affine {
            w: (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: vec![0.0; n_out],
            n_in,
            n_out,
        }
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Two-layer perceptron: tanh hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub l1: Affine,
    pub l2: Affine,
}

impl Mlp2 {
    fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Mlp2 {
            l1: Affine::zeros(n_in, hidden),
            l2: Affine::zeros(hidden, n_out),
        }
    }

    fn init(n_in: usize, hidden: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp2 {
            l1: Affine::init(n_in, hidden, rng),
            l2: Affine::init(hidden, n_out, rng),
        }
    }

    fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count()
    }
}

/// All learnable parameters. Sharing is by passing the same object; the
/// flattening order below is the serialization contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: MpnConfig,
    /// Node feature embedding (affine + tanh).
    pub node_init: Affine,
    /// Edge feature embedding.
    pub edge_init: Mlp2,
    /// Residual edge refinement from `[edge, src node, dst node]`.
    pub edge_update: Mlp2,
    /// Message network for edges arriving from the past.
    pub node_update_past: Mlp2,
    /// Message network for edges leaving towards the future.
    pub node_update_future: Mlp2,
    /// Edge embedding -> link logit.
    pub classifier: Mlp2,
}

impl ModelParams {
    pub fn init(cfg: MpnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dn, de, h) = (cfg.d_node, cfg.d_edge, cfg.hidden);
        ModelParams {
            cfg,
            node_init: Affine::init(NodeFeatures::DIM, dn, &mut rng),
            edge_init: Mlp2::init(EdgeFeatures::DIM, h, de, &mut rng),
            edge_update: Mlp2::init(de + 2 * dn, h, de, &mut rng),
            node_update_past: Mlp2::init(dn + de, h, dn, &mut rng),
            node_update_future: Mlp2::init(dn + de, h, dn, &mut rng),
            classifier: Mlp2::init(de, h, 1, &mut rng),
        }
    }

    /// Same-shaped all-zero parameters, e.g. a gradient accumulator.
    pub fn zeros_like(cfg: MpnConfig) -> Self {
        let (dn, de, h) = (cfg.d_node, cfg.d_edge, cfg.hidden);
        ModelParams {
            cfg,
            node_init: Affine::zeros(NodeFeatures::DIM, dn),
            edge_init: Mlp2::zeros(EdgeFeatures::DIM, h, de),
            edge_update: Mlp2::zeros(de + 2 * dn, h, de),
            node_update_past: Mlp2::zeros(dn + de, h, dn),
            node_update_future: Mlp2::zeros(dn + de, h, dn),
            classifier: Mlp2::zeros(de, h, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.node_init.param_count()
            + self.edge_init.param_count()
            + self.edge_update.param_count()
            + self.node_update_past.param_count()
            + self.node_update_future.param_count()
            + self.classifier.param_count()
    }

    fn affines(&self) -> [&Affine; 11] {
        [
            &self.node_init,
            &self.edge_init.l1,
            &self.edge_init.l2,
            &self.edge_update.l1,
            &self.edge_update.l2,
            &self.node_update_past.l1,
            &self.node_update_past.l2,
            &self.node_update_future.l1,
            &self.node_update_future.l2,
            &self.classifier.l1,
            &self.classifier.l2,
        ]
    }

    fn affines_mut(&mut self) -> [&mut Affine; 11] {
        [
            &mut self.node_init,
            &mut self.edge_init.l1,
            &mut self.edge_init.l2,
            &mut self.edge_update.l1,
            &mut self.edge_update.l2,
            &mut self.node_update_past.l1,
            &mut self.node_update_past.l2,
            &mut self.node_update_future.l1,
            &mut self.node_update_future.l2,
            &mut self.classifier.l1,
            &mut self.classifier.l2,
        ]
    }

    /// All parameters in declaration order (weights before biases per
    /// layer). This order is stable: checkpoints depend on it.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for a in self.affines() {
            out.extend_from_slice(&a.w);
            out.extend_from_slice(&a.b);
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for a in self.affines_mut() {
            let nw = a.w.len();
            a.w.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = a.b.len();
            a.b.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    /// `self += other * c`, shapes must match.
    pub fn add_scaled(&mut self, other: &ModelParams, c: f64) {
        let flat = other.flatten();
        let mut own = self.flatten();
        for (a, b) in own.iter_mut().zip(flat) {
            *a += b * c;
        }
        self.assign_from_flat(&own).expect("same shape");
    }

    pub fn scale(&mut self, c: f64) {
        let mut own = self.flatten();
        for a in own.iter_mut() {
            *a *= c;
        }
        self.assign_from_flat(&own).expect("same shape");
    }

    /// Euclidean norm over all parameters (gradient norms in logs).
    pub fn l2_norm(&self) -> f64 {
        self.flatten().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// True when both references point at the same parameter object, i.e. the
/// weights are genuinely shared rather than copied.
pub fn shares_params(a: &ModelParams, b: &ModelParams) -> bool {
    std::ptr::eq(a, b)
}

fn affine_forward(a: &Affine, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), a.n_in);
    debug_assert_eq!(out.len(), a.n_out);
    for o in 0..a.n_out {
        let row = &a.w[o * a.n_in..(o + 1) * a.n_in];
        let mut acc = a.b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[o] = acc;
    }
}

/// Accumulates parameter gradients into `ga` and input gradients into `dx`.
fn affine_backward(a: &Affine, x: &[f64], dy: &[f64], ga: &mut Affine, dx: &mut [f64]) {
    for o in 0..a.n_out {
        let d = dy[o];
        ga.b[o] += d;
        let grow = &mut ga.w[o * a.n_in..(o + 1) * a.n_in];
        let row = &a.w[o * a.n_in..(o + 1) * a.n_in];
        for i in 0..a.n_in {
            grow[i] += d * x[i];
            dx[i] += d * row[i];
        }
    }
}

/// Returns `(hidden post-tanh, output)`.
fn mlp2_forward(m: &Mlp2, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut hidden = vec![0.0; m.l1.n_out];
    affine_forward(&m.l1, x, &mut hidden);
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }
    let mut out = vec![0.0; m.l2.n_out];
    affine_forward(&m.l2, &hidden, &mut out);
    (hidden, out)
}

fn mlp2_backward(
    m: &Mlp2,
    x: &[f64],
    hidden: &[f64],
    dy: &[f64],
    gm: &mut Mlp2,
    dx: &mut [f64],
) {
    let mut dh = vec![0.0; hidden.len()];
    affine_backward(&m.l2, hidden, dy, &mut gm.l2, &mut dh);
    for (d, h) in dh.iter_mut().zip(hidden) {
        *d *= 1.0 - h * h;
    }
    affine_backward(&m.l1, x, &dh, &mut gm.l1, dx);
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct StepTrace {
    /// Hidden activations of the edge-update block, per edge.
    edge_hidden: Vec<Vec<f64>>,
    /// Hidden activations of the past/future message blocks, per edge.
    past_hidden: Vec<Vec<f64>>,
    future_hidden: Vec<Vec<f64>>,
    /// States after this step.
    e: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

/// Everything the backward pass needs from a forward run.
pub struct ForwardTrace {
    node_feats: Vec<Vec<f64>>,
    edge_feats: Vec<Vec<f64>>,
    h0: Vec<Vec<f64>>,
    e0: Vec<Vec<f64>>,
    edge_init_hidden: Vec<Vec<f64>>,
    steps: Vec<StepTrace>,
    classifier_hidden: Vec<Vec<f64>>,
    in_deg: Vec<usize>,
    out_deg: Vec<usize>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Runs the network and keeps all intermediates for a later backward pass.
pub fn forward_trace(p: &ModelParams, g: &AssocGraph) -> ForwardTrace {
    let n = g.nodes.len();
    let m = g.edges.len();
    let node_feats: Vec<Vec<f64>> = g.nodes.iter().map(|nd| nd.features.to_vec().into()).collect();
    let edge_feats: Vec<Vec<f64>> = g.edges.iter().map(|ed| ed.features.to_vec().into()).collect();

    let mut h0 = Vec::with_capacity(n);
    for f in &node_feats {
        let mut out = vec![0.0; p.cfg.d_node];
        affine_forward(&p.node_init, f, &mut out);
        for o in out.iter_mut() {
            *o = o.tanh();
        }
        h0.push(out);
    }
    let mut e0 = Vec::with_capacity(m);
    let mut edge_init_hidden = Vec::with_capacity(m);
    for f in &edge_feats {
        let (hid, out) = mlp2_forward(&p.edge_init, f);
        edge_init_hidden.push(hid);
        e0.push(out);
    }

    let mut in_deg = vec![0usize; n];
    let mut out_deg = vec![0usize; n];
    for ed in &g.edges {
        in_deg[ed.dst] += 1;
        out_deg[ed.src] += 1;
    }

    let mut h = h0.clone();
    let mut e = e0.clone();
    let mut steps = Vec::with_capacity(p.cfg.steps);
    for _ in 0..p.cfg.steps {
        let mut edge_hidden = Vec::with_capacity(m);
        let mut e_new: Vec<Vec<f64>> = Vec::with_capacity(m);
        for (ei, ed) in g.edges.iter().enumerate() {
            let mut x = Vec::with_capacity(p.cfg.d_edge + 2 * p.cfg.d_node);
            x.extend_from_slice(&e[ei]);
            x.extend_from_slice(&h[ed.src]);
            x.extend_from_slice(&h[ed.dst]);
            let (hid, delta) = mlp2_forward(&p.edge_update, &x);
            edge_hidden.push(hid);
            e_new.push(e[ei].iter().zip(delta).map(|(a, d)| a + d).collect());
        }
        let mut past_hidden = Vec::with_capacity(m);
        let mut future_hidden = Vec::with_capacity(m);
        let mut acc_past = vec![vec![0.0; p.cfg.d_node]; n];
        let mut acc_future = vec![vec![0.0; p.cfg.d_node]; n];
        for (ei, ed) in g.edges.iter().enumerate() {
            let mut xp = Vec::with_capacity(p.cfg.d_node + p.cfg.d_edge);
            xp.extend_from_slice(&h[ed.src]);
            xp.extend_from_slice(&e_new[ei]);
            let (hp, pm) = mlp2_forward(&p.node_update_past, &xp);
            past_hidden.push(hp);
            for (a, v) in acc_past[ed.dst].iter_mut().zip(pm) {
                *a += v;
            }
            let mut xf = Vec::with_capacity(p.cfg.d_node + p.cfg.d_edge);
            xf.extend_from_slice(&h[ed.dst]);
            xf.extend_from_slice(&e_new[ei]);
            let (hf, fm) = mlp2_forward(&p.node_update_future, &xf);
            future_hidden.push(hf);
            for (a, v) in acc_future[ed.src].iter_mut().zip(fm) {
                *a += v;
            }
        }
        let mut h_new = h.clone();
        for v in 0..n {
            if in_deg[v] > 0 {
                let inv = 1.0 / in_deg[v] as f64;
                for (hv, a) in h_new[v].iter_mut().zip(&acc_past[v]) {
                    *hv += a * inv;
                }
            }
            if out_deg[v] > 0 {
                let inv = 1.0 / out_deg[v] as f64;
                for (hv, a) in h_new[v].iter_mut().zip(&acc_future[v]) {
                    *hv += a * inv;
                }
            }
        }
        steps.push(StepTrace {
            edge_hidden,
            past_hidden,
            future_hidden,
            e: e_new.clone(),
            h: h_new.clone(),
        });
        e = e_new;
        h = h_new;
    }

    let mut classifier_hidden = Vec::with_capacity(m);
    let mut logits = Vec::with_capacity(m);
    let mut probs = Vec::with_capacity(m);
    for ei in 0..m {
        let (hid, out) = mlp2_forward(&p.classifier, &e[ei]);
        classifier_hidden.push(hid);
        logits.push(out[0]);
        probs.push(sigmoid(out[0]));
    }
    ForwardTrace {
        node_feats,
        edge_feats,
        h0,
        e0,
        edge_init_hidden,
        steps,
        classifier_hidden,
        in_deg,
        out_deg,
        logits,
        probs,
    }
}

/// Link probability per edge, in the graph's edge order.
pub fn forward(p: &ModelParams, g: &AssocGraph) -> Vec<f64> {
    forward_trace(p, g).probs
}

/// Reverse-mode pass: accumulates `dLoss/dparam` into `grads` given
/// `dLoss/dlogit` per edge. Edge contributions are applied in edge-index
/// order so accumulation is bit-reproducible.
pub fn backward(
    p: &ModelParams,
    g: &AssocGraph,
    trace: &ForwardTrace,
    dlogits: &[f64],
    grads: &mut ModelParams,
) {
    let n = g.nodes.len();
    let m = g.edges.len();
    assert_eq!(dlogits.len(), m);
    let (dn, de) = (p.cfg.d_node, p.cfg.d_edge);

    let final_e = if p.cfg.steps == 0 {
        &trace.e0
    } else {
        &trace.steps[p.cfg.steps - 1].e
    };
    let mut d_e: Vec<Vec<f64>> = vec![vec![0.0; de]; m];
    for ei in 0..m {
        mlp2_backward(
            &p.classifier,
            &final_e[ei],
            &trace.classifier_hidden[ei],
            &[dlogits[ei]],
            &mut grads.classifier,
            &mut d_e[ei],
        );
    }
    let mut d_h: Vec<Vec<f64>> = vec![vec![0.0; dn]; n];

    for s in (0..p.cfg.steps).rev() {
        let (e_in, h_in) = if s == 0 {
            (&trace.e0, &trace.h0)
        } else {
            (&trace.steps[s - 1].e, &trace.steps[s - 1].h)
        };
        let e_out = &trace.steps[s].e;
        let step = &trace.steps[s];

        // Node update backward. d_h currently holds dL/dH^{s+1}; the
        // residual passes it straight through to dL/dH^{s}.
        let mut d_h_prev = d_h.clone();
        for (ei, ed) in g.edges.iter().enumerate() {
            if trace.in_deg[ed.dst] > 0 {
                let inv = 1.0 / trace.in_deg[ed.dst] as f64;
                let dy: Vec<f64> = d_h[ed.dst].iter().map(|d| d * inv).collect();
                let mut xp = Vec::with_capacity(dn + de);
                xp.extend_from_slice(&h_in[ed.src]);
                xp.extend_from_slice(&e_out[ei]);
                let mut dx = vec![0.0; dn + de];
                mlp2_backward(
                    &p.node_update_past,
                    &xp,
                    &step.past_hidden[ei],
                    &dy,
                    &mut grads.node_update_past,
                    &mut dx,
                );
                for (a, b) in d_h_prev[ed.src].iter_mut().zip(&dx[..dn]) {
                    *a += b;
                }
                for (a, b) in d_e[ei].iter_mut().zip(&dx[dn..]) {
                    *a += b;
                }
            }
            if trace.out_deg[ed.src] > 0 {
                let inv = 1.0 / trace.out_deg[ed.src] as f64;
                let dy: Vec<f64> = d_h[ed.src].iter().map(|d| d * inv).collect();
                let mut xf = Vec::with_capacity(dn + de);
                xf.extend_from_slice(&h_in[ed.dst]);
                xf.extend_from_slice(&e_out[ei]);
                let mut dx = vec![0.0; dn + de];
                mlp2_backward(
                    &p.node_update_future,
                    &xf,
                    &step.future_hidden[ei],
                    &dy,
                    &mut grads.node_update_future,
                    &mut dx,
                );
                for (a, b) in d_h_prev[ed.dst].iter_mut().zip(&dx[..dn]) {
                    *a += b;
                }
                for (a, b) in d_e[ei].iter_mut().zip(&dx[dn..]) {
                    *a += b;
                }
            }
        }

        // Edge update backward. d_e now holds the full dL/dE^{s+1}.
        let mut d_e_prev: Vec<Vec<f64>> = d_e.clone();
        for (ei, ed) in g.edges.iter().enumerate() {
            let mut x = Vec::with_capacity(de + 2 * dn);
            x.extend_from_slice(&e_in[ei]);
            x.extend_from_slice(&h_in[ed.src]);
            x.extend_from_slice(&h_in[ed.dst]);
            let mut dx = vec![0.0; de + 2 * dn];
            mlp2_backward(
                &p.edge_update,
                &x,
                &step.edge_hidden[ei],
                &d_e[ei],
                &mut grads.edge_update,
                &mut dx,
            );
            for (a, b) in d_e_prev[ei].iter_mut().zip(&dx[..de]) {
                *a += b;
            }
            for (a, b) in d_h_prev[ed.src].iter_mut().zip(&dx[de..de + dn]) {
                *a += b;
            }
            for (a, b) in d_h_prev[ed.dst].iter_mut().zip(&dx[de + dn..]) {
                *a += b;
            }
        }

        d_e = d_e_prev;
        d_h = d_h_prev;
    }

    for ei in 0..m {
        let mut dx = vec![0.0; EdgeFeatures::DIM];
        mlp2_backward(
            &p.edge_init,
            &trace.edge_feats[ei],
            &trace.edge_init_hidden[ei],
            &d_e[ei],
            &mut grads.edge_init,
            &mut dx,
        );
    }
    for v in 0..n {
        let dpre: Vec<f64> = d_h[v]
            .iter()
            .zip(&trace.h0[v])
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        let mut dx = vec![0.0; NodeFeatures::DIM];
        affine_backward(&p.node_init, &trace.node_feats[v], &dpre, &mut grads.node_init, &mut dx);
    }
}

const CHECKPOINT_MAGIC: &[u8; 11] = b"NOOUGAT-MPN";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes parameters to `path`; dimensions and weights round-trip exactly.
pub fn save_checkpoint(p: &ModelParams, path: &Path) -> Result<()> {
    let flat = p.flatten();
    let mut buf = Vec::with_capacity(11 + 4 * 5 + 8 + flat.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [p.cfg.d_node, p.cfg.d_edge, p.cfg.steps, p.cfg.hidden] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 11 + 4 * 5 + 8 {
        return Err(fail("file too short"));
    }
    if &bytes[..11] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let mut pos = 11;
    let read_u32 = |pos: &mut usize| {
        let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
        *pos += 4;
        v
    };
    let version = read_u32(&mut pos);
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let cfg = MpnConfig {
        d_node: read_u32(&mut pos) as usize,
        d_edge: read_u32(&mut pos) as usize,
        steps: read_u32(&mut pos) as usize,
        hidden: read_u32(&mut pos) as usize,
    };
    let count = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
    pos += 8;
    let mut model = ModelParams::zeros_like(cfg);
    if count != model.param_count() {
        return Err(fail(&format!(
            "parameter count {count} does not match dimensions ({} expected)",
            model.param_count()
        )));
    }
    if bytes.len() != pos + count * 8 {
        return Err(fail("truncated or oversized payload"));
    }
    let flat: Vec<f64> = (0..count)
        .map(|i| f64::from_le_bytes(bytes[pos + i * 8..pos + (i + 1) * 8].try_into().unwrap()))
        .collect();
    model.assign_from_flat(&flat)?;
    Ok(model)
}
