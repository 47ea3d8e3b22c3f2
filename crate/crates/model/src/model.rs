//! The network: per-object embedding, role encoding, attention encoder and
//! the two heads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nets_core::error::{Error, Result};
use nets_core::segment::{PlaySegment, Role, OBJECTS};

use crate::config::{EmbeddingKind, NetsConfig, Pooling};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

/// Rows of one play inside a batch: ball, five attackers, five defenders.
pub const GROUP: usize = OBJECTS;
const POOL_RANGES: [(usize, usize); 3] = [(0, 1), (1, 6), (6, 11)];

/// Input positions are centered on the front court before embedding.
pub fn normalize_position(p: [f64; 2]) -> [f64; 2] {
    [(p[0] - 25.0) / 10.0, (p[1] - 70.0) / 10.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Trajectory,
    Classification,
}

impl HeadKind {
    pub fn code(self) -> u8 {
        match self {
            HeadKind::Trajectory => 0,
            HeadKind::Classification => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(HeadKind::Trajectory),
            1 => Some(HeadKind::Classification),
            _ => None,
        }
    }
}

/// Named parameter arrays in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl Params {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index(name).map(|i| &mut self.values[i])
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.values.iter().map(|m| m.shape()).collect()
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }
}

struct Init {
    rng: ChaCha8Rng,
    params: Params,
}

impl Init {
    /// Uniform in `±1/√fan_in`.
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-a..=a)).collect();
        self.params.names.push(name);
        self.params.values.push(Matrix::from_vec(rows, cols, data));
    }

    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.uniform(format!("{prefix}.w"), fan_in, fan_out, fan_in);
        self.uniform(format!("{prefix}.b"), 1, fan_out, fan_in);
    }

    fn constant(&mut self, name: String, cols: usize, v: f64) {
        self.params.names.push(name);
        self.params.values.push(Matrix::filled(1, cols, v));
    }
}

fn base_params(cfg: &NetsConfig) -> Params {
    let d = cfg.d_h;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        params: Params {
            names: Vec::new(),
            values: Vec::new(),
        },
    };
    match cfg.embedding {
        EmbeddingKind::Lstm => {
            for l in 0..cfg.lstm_layers {
                let input = if l == 0 { 2 } else { d };
                init.uniform(format!("embed.lstm{l}.w_x"), input, 4 * d, input + d);
                init.uniform(format!("embed.lstm{l}.w_h"), d, 4 * d, input + d);
                init.uniform(format!("embed.lstm{l}.b"), 1, 4 * d, input + d);
            }
        }
        EmbeddingKind::Feedforward => {
            init.dense("embed.ff1", 2 * cfg.steps, d);
            init.dense("embed.ff2", d, d);
        }
    }
    init.dense("embed.proj", d + Role::ALL.len(), d);
    for l in 0..cfg.layers {
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            init.uniform(format!("layer{l}.{w}"), d, d, d);
        }
        init.constant(format!("layer{l}.ln1.g"), d, 1.0);
        init.constant(format!("layer{l}.ln1.b"), d, 0.0);
        init.dense(&format!("layer{l}.ff1"), d, d);
        init.dense(&format!("layer{l}.ff2"), d, d);
        init.constant(format!("layer{l}.ln2.g"), d, 1.0);
        init.constant(format!("layer{l}.ln2.b"), d, 0.0);
    }
    init.params
}

fn head_params(cfg: &NetsConfig, head: HeadKind, seed: u64) -> Params {
    let d = cfg.d_h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut init = Init {
        rng,
        params: Params {
            names: Vec::new(),
            values: Vec::new(),
        },
    };
    match head {
        HeadKind::Trajectory => {
            for role in ["ball", "offense", "defense"] {
                init.dense(&format!("head.traj.{role}.l1"), d, d);
                init.dense(&format!("head.traj.{role}.l2"), d, 2 * cfg.horizon);
            }
        }
        HeadKind::Classification => {
            let pooled = match cfg.pooling {
                Pooling::Sum => 3 * d,
                Pooling::Concat => GROUP * d,
            };
            init.dense("head.cls.l1", pooled, d);
            init.dense("head.cls.l2", d, cfg.classes);
        }
    }
    init.params
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    /// Embeddings after the role projection, one row per object.
    pub z0: Var,
    /// Output of each attention layer.
    pub layers: Vec<Var>,
    /// Attention weights per layer and head.
    pub attention: Vec<Vec<Var>>,
    /// Classification head only: the pooled play embedding.
    pub pooled: Option<Var>,
    /// Velocities `(B·11, 2H)` or class probabilities `(B, K)`.
    pub output: Var,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    pub config: NetsConfig,
    pub head: HeadKind,
    pub params: Params,
}

impl Nets {
    pub fn new(config: NetsConfig, head: HeadKind) -> Result<Self> {
        config.validate()?;
        let mut params = base_params(&config);
        let h = head_params(&config, head, config.seed);
        params.names.extend(h.names);
        params.values.extend(h.values);
        Ok(Self { config, head, params })
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    /// Keeps the base parameters and attaches a freshly initialized head.
    pub fn with_head(&self, head: HeadKind, seed: u64) -> Self {
        let mut params = Params {
            names: Vec::new(),
            values: Vec::new(),
        };
        for (n, v) in self.params.names.iter().zip(&self.params.values) {
            if !Self::is_head_param(n) {
                params.names.push(n.clone());
                params.values.push(v.clone());
            }
        }
        let h = head_params(&self.config, head, seed);
        params.names.extend(h.names);
        params.values.extend(h.values);
        Self {
            config: self.config.clone(),
            head,
            params,
        }
    }

    fn check_segments(&self, segments: &[&PlaySegment]) -> Result<()> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for s in segments {
            if s.steps != self.config.steps {
                return Err(Error::InvalidArgument(format!(
                    "segment {} has {} steps, the model expects {}",
                    s.segment_id, s.steps, self.config.steps
                )));
            }
            if s.object_ids.len() != OBJECTS {
                return Err(Error::InvalidArgument(format!("segment {} does not have 11 objects", s.segment_id)));
            }
        }
        Ok(())
    }

    pub fn forward(&self, segments: &[&PlaySegment]) -> Result<Forward> {
        self.check_segments(segments)?;
        let cfg = &self.config;
        let d = cfg.d_h;
        let b = segments.len();
        let rows = b * GROUP;
        let mut t = Tape::new();
        let pv: BTreeMap<&str, Var> = self
            .params
            .names
            .iter()
            .zip(&self.params.values)
            .enumerate()
            .map(|(i, (n, v))| (n.as_str(), t.param(i, v)))
            .collect();
        let p = |name: &str| pv[name];

        // inputs, one (rows, 2) matrix per step
        let steps: Vec<Var> = (0..cfg.steps)
            .map(|s| {
                let mut m = Matrix::zeros(rows, 2);
                for (g, seg) in segments.iter().enumerate() {
                    for o in 0..GROUP {
                        let q = normalize_position(seg.position(o, s));
                        m.row_mut(g * GROUP + o).copy_from_slice(&q);
                    }
                }
                t.input(m)
            })
            .collect();

        let summary = match cfg.embedding {
            EmbeddingKind::Lstm => {
                let mut seq = steps;
                let mut h = t.input(Matrix::zeros(rows, d));
                for l in 0..cfg.lstm_layers {
                    h = t.input(Matrix::zeros(rows, d));
                    let mut c = t.input(Matrix::zeros(rows, d));
                    let (wx, wh, bias) = (
                        p(&format!("embed.lstm{l}.w_x")),
                        p(&format!("embed.lstm{l}.w_h")),
                        p(&format!("embed.lstm{l}.b")),
                    );
                    let mut outs = Vec::with_capacity(seq.len());
                    for &x in &seq {
                        let a = t.matmul(x, wx);
                        let r = t.matmul(h, wh);
                        let pre = t.add(a, r);
                        let pre = t.add_bias(pre, bias);
                        let i = t.slice_cols(pre, 0, d);
                        let f = t.slice_cols(pre, d, d);
                        let g = t.slice_cols(pre, 2 * d, d);
                        let o = t.slice_cols(pre, 3 * d, d);
                        let (i, f, g, o) = (t.sigmoid(i), t.sigmoid(f), t.tanh(g), t.sigmoid(o));
                        let keep = t.mul(f, c);
                        let write = t.mul(i, g);
                        c = t.add(keep, write);
                        let tc = t.tanh(c);
                        h = t.mul(o, tc);
                        outs.push(h);
                    }
                    seq = outs;
                }
                h
            }
            EmbeddingKind::Feedforward => {
                let flat = t.concat_cols(&steps);
                let h1 = dense(&mut t, flat, p("embed.ff1.w"), p("embed.ff1.b"));
                let h1 = t.relu(h1);
                dense(&mut t, h1, p("embed.ff2.w"), p("embed.ff2.b"))
            }
        };

        let mut roles = Matrix::zeros(rows, Role::ALL.len());
        for g in 0..b {
            for o in 0..GROUP {
                *roles.at_mut(g * GROUP + o, Role::of_object(o).index()) = 1.0;
            }
        }
        let roles = t.input(roles);
        let cat = t.concat_cols(&[summary, roles]);
        let z0 = dense(&mut t, cat, p("embed.proj.w"), p("embed.proj.b"));

        let mut z = z0;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut attention = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (next, weights) = self.layer(&mut t, &p, l, z);
            z = next;
            layers.push(z);
            attention.push(weights);
        }

        let (pooled, output) = match self.head {
            HeadKind::Trajectory => {
                let mut total = None;
                for (r, role) in ["ball", "offense", "defense"].iter().enumerate() {
                    let h1 = dense(
                        &mut t,
                        z,
                        p(&format!("head.traj.{role}.l1.w")),
                        p(&format!("head.traj.{role}.l1.b")),
                    );
                    let h1 = t.relu(h1);
                    let out = dense(
                        &mut t,
                        h1,
                        p(&format!("head.traj.{role}.l2.w")),
                        p(&format!("head.traj.{role}.l2.b")),
                    );
                    let mut mask = Matrix::zeros(rows, 2 * cfg.horizon);
                    for g in 0..b {
                        for o in (0..GROUP).filter(|&o| Role::of_object(o).index() == r) {
                            mask.row_mut(g * GROUP + o).fill(1.0);
                        }
                    }
                    let mask = t.input(mask);
                    let masked = t.mul(out, mask);
                    total = Some(match total {
                        None => masked,
                        Some(acc) => t.add(acc, masked),
                    });
                }
                let out = t.scale(total.expect("three roles"), cfg.velocity_scale);
                (None, out)
            }
            HeadKind::Classification => {
                let pooled = match cfg.pooling {
                    Pooling::Sum => t.group_pool(z, GROUP, &POOL_RANGES),
                    Pooling::Concat => t.reshape(z, b, GROUP * d),
                };
                let h1 = dense(&mut t, pooled, p("head.cls.l1.w"), p("head.cls.l1.b"));
                let h1 = t.relu(h1);
                let logits = dense(&mut t, h1, p("head.cls.l2.w"), p("head.cls.l2.b"));
                (Some(pooled), t.softmax_rows(logits))
            }
        };
        Ok(Forward {
            tape: t,
            z0,
            layers,
            attention,
            pooled,
            output,
            batch: b,
        })
    }

    /// One attention layer; returns its output and the attention weights.
    fn layer(&self, t: &mut Tape, p: &dyn Fn(&str) -> Var, l: usize, z: Var) -> (Var, Vec<Var>) {
        let cfg = &self.config;
        let dk = cfg.head_width();
        let name = |s: &str| format!("layer{l}.{s}");
        let q = t.matmul(z, p(&name("w_q")));
        let k = t.matmul(z, p(&name("w_k")));
        let v = t.matmul(z, p(&name("w_v")));
        let mut heads = Vec::with_capacity(cfg.heads);
        let mut weights = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = t.slice_cols(q, h * dk, dk);
            let kh = t.slice_cols(k, h * dk, dk);
            let vh = t.slice_cols(v, h * dk, dk);
            let s = t.group_scores(qh, kh, GROUP, 1.0 / (dk as f64).sqrt());
            let a = t.softmax_rows(s);
            weights.push(a);
            heads.push(t.group_mix(a, vh, GROUP));
        }
        let cat = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads) };
        let att = t.matmul(cat, p(&name("w_o")));

        let norm = |t: &mut Tape, x: Var, which: &str| {
            if cfg.layer_norm {
                t.layer_norm(x, p(&name(&format!("{which}.g"))), p(&name(&format!("{which}.b"))))
            } else {
                x
            }
        };
        let ff = |t: &mut Tape, x: Var| {
            let h = dense(t, x, p(&name("ff1.w")), p(&name("ff1.b")));
            let h = t.relu(h);
            dense(t, h, p(&name("ff2.w")), p(&name("ff2.b")))
        };
        let out = if cfg.standard_block {
            let r1 = t.add(z, att);
            let a = norm(t, r1, "ln1");
            let f = ff(t, a);
            let r2 = t.add(a, f);
            norm(t, r2, "ln2")
        } else {
            let a = norm(t, att, "ln1");
            let f = ff(t, a);
            let b = norm(t, f, "ln2");
            t.add(b, z)
        };
        (out, weights)
    }

    /// Applies attention layer `l` to a standalone `(11·B, d)` embedding matrix.
    pub fn apply_layer(&self, z: &Matrix, l: usize) -> Matrix {
        let mut t = Tape::new();
        let pv: BTreeMap<&str, Var> = self
            .params
            .names
            .iter()
            .zip(&self.params.values)
            .enumerate()
            .map(|(i, (n, v))| (n.as_str(), t.param(i, v)))
            .collect();
        let zv = t.input(z.clone());
        let (out, _) = self.layer(&mut t, &|n| pv[n], l, zv);
        t.value(out).clone()
    }

    /// Velocity predictions in each segment's `nu` layout.
    pub fn predict_velocities(&self, segments: &[&PlaySegment]) -> Result<Vec<Vec<f64>>> {
        self.expect_head(HeadKind::Trajectory)?;
        let f = self.forward(segments)?;
        let out = f.tape.value(f.output);
        let w = out.cols;
        Ok((0..f.batch)
            .map(|g| out.data[g * GROUP * w..(g + 1) * GROUP * w].to_vec())
            .collect())
    }

    pub fn predict_proba(&self, segments: &[&PlaySegment]) -> Result<Vec<Vec<f64>>> {
        self.expect_head(HeadKind::Classification)?;
        let f = self.forward(segments)?;
        let out = f.tape.value(f.output);
        Ok((0..f.batch).map(|g| out.row(g).to_vec()).collect())
    }

    /// Pooled play embeddings (the classifier's input).
    pub fn pooled_embeddings(&self, segments: &[&PlaySegment]) -> Result<Vec<Vec<f64>>> {
        self.expect_head(HeadKind::Classification)?;
        let f = self.forward(segments)?;
        let pooled = f.tape.value(f.pooled.expect("classification head pools"));
        Ok((0..f.batch).map(|g| pooled.row(g).to_vec()).collect())
    }

    fn expect_head(&self, head: HeadKind) -> Result<()> {
        if self.head != head {
            return Err(Error::InvalidArgument(format!(
                "this operation needs a {head:?} head, the model has a {:?} head",
                self.head
            )));
        }
        Ok(())
    }

    /// Mean squared velocity error and its gradients.
    pub fn trajectory_loss(&self, segments: &[&PlaySegment]) -> Result<(f64, Vec<Matrix>)> {
        self.expect_head(HeadKind::Trajectory)?;
        let mut f = self.forward(segments)?;
        let target = velocity_targets(segments, self.config.horizon)?;
        let loss = f.tape.mse(f.output, target, self.config.horizon);
        let grads = f.tape.backward(loss, &self.params.shapes());
        Ok((f.tape.value(loss).data[0], grads))
    }

    /// Class-weighted negative log-likelihood and its gradients.
    pub fn classification_loss(&self, segments: &[&PlaySegment], labels: &[usize], alpha: &[f64]) -> Result<(f64, Vec<Matrix>)> {
        self.expect_head(HeadKind::Classification)?;
        if labels.iter().any(|&y| y >= self.config.classes) || alpha.len() != self.config.classes {
            return Err(Error::InvalidArgument("labels or class weights do not match the class count".into()));
        }
        let mut f = self.forward(segments)?;
        let loss = f.tape.nll(f.output, labels, alpha);
        let grads = f.tape.backward(loss, &self.params.shapes());
        Ok((f.tape.value(loss).data[0], grads))
    }

    /// Loss without gradients, for validation.
    pub fn loss(&self, segments: &[&PlaySegment], labels: Option<(&[usize], &[f64])>) -> Result<f64> {
        let mut f = self.forward(segments)?;
        let loss = match (self.head, labels) {
            (HeadKind::Trajectory, _) => {
                let target = velocity_targets(segments, self.config.horizon)?;
                f.tape.mse(f.output, target, self.config.horizon)
            }
            (HeadKind::Classification, Some((y, alpha))) => f.tape.nll(f.output, y, alpha),
            (HeadKind::Classification, None) => {
                return Err(Error::InvalidArgument("classification loss needs labels".into()))
            }
        };
        Ok(f.tape.value(loss).data[0])
    }
}

fn dense(t: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let h = t.matmul(x, w);
    t.add_bias(h, b)
}

/// Future velocities stacked as `(B·11, 2H)`, step-major `(vx, vy)` pairs.
pub fn velocity_targets(segments: &[&PlaySegment], horizon: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(segments.len() * GROUP, 2 * horizon);
    for (g, s) in segments.iter().enumerate() {
        let nu = s
            .nu
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("segment {} has no future", s.segment_id)))?;
        if s.horizon != horizon {
            return Err(Error::InvalidArgument(format!(
                "segment {} has horizon {}, the model predicts {horizon}",
                s.segment_id, s.horizon
            )));
        }
        m.data[g * GROUP * 2 * horizon..(g + 1) * GROUP * 2 * horizon].copy_from_slice(nu);
    }
    Ok(m)
}
