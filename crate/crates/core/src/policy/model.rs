use crate::autodiff::{Tape, Tensor, Var};
use crate::env::{snapshot_mask, StateSnapshot};
use crate::tasks::{ProblemInstance, ProblemKind};

use super::params::{PolicyParams, CVRP_FEATURES};
use super::Behavior;

/// Encoder outputs kept on the tape for decoding.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub embeddings: Var,
    graph_query: Var,
    node_query: Var,
    keys: Var,
}

fn param(tape: &mut Tape, p: &PolicyParams, name: &str) -> Var {
    let e = p.entry(name);
    tape.param(e.offset, e.rows, e.cols, name)
}

fn input_features(inst: &ProblemInstance) -> Tensor {
    match inst.kind {
        ProblemKind::Tsp => {
            let data = inst.coords.iter().flat_map(|c| [c[0], c[1]]).collect();
            Tensor::from_vec(inst.len(), 2, data)
        }
        ProblemKind::Cvrp => {
            let depot = inst.depot.expect("CVRP instance without depot");
            let cap = f64::from(inst.capacity());
            let mut data = Vec::with_capacity((inst.len() + 1) * CVRP_FEATURES);
            data.extend_from_slice(&[0.0, 0.0, 0.0, depot[0], depot[1], 1.0, 0.0]);
            for (i, c) in inst.coords.iter().enumerate() {
                let q = f64::from(inst.demand(i)) / cap;
                data.extend_from_slice(&[c[0], c[1], q, 0.0, 0.0, 0.0, 1.0]);
            }
            Tensor::from_vec(inst.len() + 1, CVRP_FEATURES, data)
        }
    }
}

/// Embeds every action node of `inst` (depot first for CVRP).
pub fn encode(tape: &mut Tape, p: &PolicyParams, inst: &ProblemInstance) -> Encoded {
    let x = tape.constant(input_features(inst));
    let mut h = match inst.kind {
        ProblemKind::Tsp => {
            let w = param(tape, p, "embed.tsp.w");
            let b = param(tape, p, "embed.tsp.b");
            let xw = tape.matmul(x, w);
            tape.add_row(xw, b)
        }
        ProblemKind::Cvrp => {
            let w = param(tape, p, "embed.cvrp.w");
            tape.matmul(x, w)
        }
    };
    for l in 0..p.arch.layers {
        let wq = param(tape, p, &format!("enc.{l}.wq"));
        let wk = param(tape, p, &format!("enc.{l}.wk"));
        let wv = param(tape, p, &format!("enc.{l}.wv"));
        let wo = param(tape, p, &format!("enc.{l}.wo"));
        let bo = param(tape, p, &format!("enc.{l}.bo"));
        let q = tape.matmul(h, wq);
        let k = tape.matmul(h, wk);
        let v = tape.matmul(h, wv);
        let att = tape.attention(q, k, v, p.arch.heads);
        let o = tape.matmul(att, wo);
        let o = tape.add_row(o, bo);
        let r = tape.add(h, o);
        let g1 = param(tape, p, &format!("enc.{l}.ln1.g"));
        let b1 = param(tape, p, &format!("enc.{l}.ln1.b"));
        h = tape.layer_norm(r, g1, b1);

        let w1 = param(tape, p, &format!("enc.{l}.ff1.w"));
        let fb1 = param(tape, p, &format!("enc.{l}.ff1.b"));
        let w2 = param(tape, p, &format!("enc.{l}.ff2.w"));
        let fb2 = param(tape, p, &format!("enc.{l}.ff2.b"));
        let f = tape.matmul(h, w1);
        let f = tape.add_row(f, fb1);
        let f = tape.gelu(f);
        let f = tape.matmul(f, w2);
        let f = tape.add_row(f, fb2);
        let r = tape.add(h, f);
        let g2 = param(tape, p, &format!("enc.{l}.ln2.g"));
        let b2 = param(tape, p, &format!("enc.{l}.ln2.b"));
        h = tape.layer_norm(r, g2, b2);
    }
    tape.set_name(h, "embeddings");
    let mean = tape.mean_rows(h);
    let wg = param(tape, p, "dec.graph");
    let graph_query = tape.matmul(mean, wg);
    let wn = param(tape, p, "dec.node");
    let node_query = tape.matmul(h, wn);
    let wk = param(tape, p, "dec.key");
    let keys = tape.matmul(h, wk);
    Encoded {
        embeddings: h,
        graph_query,
        node_query,
        keys,
    }
}

/// Masked log-probabilities (one row per state) over all actions.
/// Returns the log-prob node and the row-major feasibility mask used.
pub fn decode(
    tape: &mut Tape,
    p: &PolicyParams,
    enc: &Encoded,
    inst: &ProblemInstance,
    states: &[&StateSnapshot],
) -> (Var, Vec<bool>) {
    let currents: Vec<usize> = states.iter().map(|s| s.current).collect();
    let mut q = tape.gather_rows(enc.node_query, currents);
    q = tape.add_row(q, enc.graph_query);
    if inst.kind == ProblemKind::Cvrp {
        let cap = f64::from(inst.capacity());
        let col = states.iter().map(|s| f64::from(s.remaining) / cap).collect();
        let wc = param(tape, p, "dec.cap");
        q = tape.add_outer(q, col, wc);
    }
    let scores = tape.matmul_t(q, enc.keys);
    let scores = tape.scale(scores, 1.0 / (p.arch.embed_dim as f64).sqrt());
    let logits = tape.clip_tanh(scores, p.arch.clip);
    let mut mask = Vec::with_capacity(states.len() * inst.num_actions());
    for s in states {
        mask.extend(snapshot_mask(inst, s));
    }
    let logp = tape.masked_log_softmax(logits, mask.clone());
    tape.set_name(logp, "log_probs");
    (logp, mask)
}

/// Inference-only forward pass holding one instance's encoding.
pub struct Forward<'a> {
    tape: Tape<'a>,
    enc: Encoded,
    params: &'a PolicyParams,
    inst: &'a ProblemInstance,
}

impl<'a> Forward<'a> {
    pub fn new(params: &'a PolicyParams, inst: &'a ProblemInstance) -> Self {
        let mut tape = Tape::new(&params.theta);
        let enc = encode(&mut tape, params, inst);
        Self { tape, enc, params, inst }
    }

    pub fn embeddings(&self) -> Tensor {
        self.tape.value(self.enc.embeddings)
    }

    pub fn behaviors(&mut self, states: &[&StateSnapshot]) -> Vec<Behavior> {
        let mark = self.tape.len();
        let (logp, mask) = decode(&mut self.tape, self.params, &self.enc, self.inst, states);
        let c = self.inst.num_actions();
        let data = self.tape.data(logp);
        let out = (0..states.len())
            .map(|r| Behavior::from_log_probs(&data[r * c..(r + 1) * c], &mask[r * c..(r + 1) * c]))
            .collect();
        self.tape.truncate(mark);
        out
    }

    pub fn behavior(&mut self, state: &StateSnapshot) -> Behavior {
        self.behaviors(&[state]).pop().expect("one state")
    }
}
