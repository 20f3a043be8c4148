use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentAction, ProbabilityMatrix, QMatrix, UtilityMatrix};
use crate::error::{Error, Result};
use crate::nn::{BiLstm, Encoder, EncoderConfig, Graph, Linear, Mlp, Mode, MultiHeadAttention, ParamId, ParamStore, Var};
use crate::policy::features::{Features, ONBOARD_FEATURES, ORDER_FEATURES, WORKER_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Shared embedding width of workers and orders.
    pub width: usize,
    pub hidden: usize,
    pub lstm_hidden: usize,
    pub arl_hidden: usize,
    pub actor_layers: usize,
    pub actor_heads: usize,
    pub actor_ff: usize,
    /// Width of the factorized worker/order scoring vectors.
    pub qk_dim: usize,
    pub reject_hidden: usize,
    pub critic_width: usize,
    pub critic_layers: usize,
    pub critic_heads: usize,
    pub critic_ff: usize,
    pub dropout: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            width: 64,
            hidden: 64,
            lstm_hidden: 16,
            arl_hidden: 16,
            actor_layers: 3,
            actor_heads: 4,
            actor_ff: 256,
            qk_dim: 16,
            reject_hidden: 32,
            critic_width: 128,
            critic_layers: 3,
            critic_heads: 4,
            critic_ff: 256,
            dropout: 0.1,
        }
    }
}

impl PolicyConfig {
    /// A narrower network that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            width: 32,
            hidden: 32,
            lstm_hidden: 8,
            arl_hidden: 8,
            actor_layers: 1,
            actor_heads: 2,
            actor_ff: 64,
            qk_dim: 16,
            reject_hidden: 16,
            critic_width: 32,
            critic_layers: 1,
            critic_heads: 2,
            critic_ff: 64,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 || self.hidden == 0 || self.qk_dim == 0 || self.lstm_hidden == 0 {
            return bad("network widths must be positive");
        }
        if self.actor_heads == 0 || self.width % self.actor_heads != 0 {
            return bad("actor width must be divisible by the head count");
        }
        if self.critic_heads == 0 || self.critic_width % self.critic_heads != 0 {
            return bad("critic width must be divisible by the head count");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Adaptive re-weighting: `y = x ∘ Ω(x)`. Starts as the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arl {
    pub net: Mlp,
}

impl Arl {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut R) -> Self {
        let net = Mlp::new(store, name, &[width, hidden, width], true, rng);
        let last = net.layers.last().expect("two layers");
        store.get_mut(last.b).data_mut().iter_mut().for_each(|v| *v = 1.0);
        Self { net }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let omega = self.net.forward(g, x)?;
        g.mul(x, omega)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub token: Linear,
    pub null_order: ParamId,
    pub encoder: Encoder,
    pub pool_query: ParamId,
    pub pool: MultiHeadAttention,
    pub head: Linear,
}

/// Parameter handles of the whole network. Which tensors a handle points
/// at depends only on the config, so a network rebuilt from the same
/// config can load a checkpoint of another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub worker_arl: Arl,
    pub worker_mlp: Mlp,
    pub onboard: BiLstm,
    pub worker_out: Linear,
    pub order_arl: Arl,
    pub order_mlp: Mlp,
    pub actor: Encoder,
    pub qk_f: Mlp,
    pub qk_g: Mlp,
    pub reject: Mlp,
    pub critics: [Critic; 2],
}

/// Embedded state: one row per worker / order.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub workers: Var,
    pub orders: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ActorOutput {
    /// Contextual embeddings from the attention stack.
    pub workers: Var,
    pub orders: Var,
    /// `n x m` order utilities.
    pub utilities: Var,
    /// `n x 1` reject utilities.
    pub reject: Var,
    /// `n x (m + 1)` row log-probabilities; unavailable rows are not
    /// forced one-hot here (see [`PolicyNet::probabilities`]).
    pub log_probs: Var,
}

/// Parameter groups trained by different losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Encoders and the factorized scoring head (trained in stage 1).
    Stage1,
    /// Everything except the critics.
    Actor,
    Critic(usize),
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let c = config;
        let mut s = ParamStore::new();
        let worker_arl = Arl::new(&mut s, "enc.worker_arl", WORKER_FEATURES, c.arl_hidden, rng);
        let worker_mlp = Mlp::new(&mut s, "enc.worker_mlp", &[WORKER_FEATURES, c.hidden, c.hidden], false, rng);
        let onboard = BiLstm::new(&mut s, "enc.onboard", ONBOARD_FEATURES, c.lstm_hidden, rng);
        let worker_out = Linear::new(&mut s, "enc.worker_out", c.hidden + 2 * c.lstm_hidden, c.width, rng);
        let order_arl = Arl::new(&mut s, "enc.order_arl", ORDER_FEATURES, c.arl_hidden, rng);
        let order_mlp = Mlp::new(&mut s, "enc.order_mlp", &[ORDER_FEATURES, c.hidden, c.width], false, rng);
        let actor_cfg = EncoderConfig {
            width: c.width,
            layers: c.actor_layers,
            heads: c.actor_heads,
            ff_width: c.actor_ff,
            dropout: c.dropout,
        };
        let actor = Encoder::new(&mut s, "actor", actor_cfg, true, rng);
        let qk_f = Mlp::new(&mut s, "qk.f", &[c.width, c.hidden, c.qk_dim], false, rng);
        let qk_g = Mlp::new(&mut s, "qk.g", &[c.width, c.hidden, c.qk_dim], false, rng);
        let reject = Mlp::new(&mut s, "reject", &[c.width, c.reject_hidden, 1], true, rng);
        let critic_cfg = EncoderConfig {
            width: c.critic_width,
            layers: c.critic_layers,
            heads: c.critic_heads,
            ff_width: c.critic_ff,
            dropout: c.dropout,
        };
        let mut make_critic = |k: usize, s: &mut ParamStore| {
            let name = format!("critic{k}");
            Critic {
                token: Linear::new(s, &format!("{name}.token"), 2 * c.width, c.critic_width, rng),
                null_order: s.add_uniform(format!("{name}.null_order"), 1, c.width, c.width, rng),
                encoder: Encoder::new(s, &format!("{name}.encoder"), critic_cfg, false, rng),
                pool_query: s.add_uniform(format!("{name}.pool_query"), 1, c.critic_width, c.critic_width, rng),
                pool: MultiHeadAttention::new(s, &format!("{name}.pool"), c.critic_width, c.critic_heads, false, rng),
                head: Linear::new(s, &format!("{name}.head"), c.critic_width, 1, rng),
            }
        };
        let critics = [make_critic(0, &mut s), make_critic(1, &mut s)];
        let net = Self {
            config,
            worker_arl,
            worker_mlp,
            onboard,
            worker_out,
            order_arl,
            order_mlp,
            actor,
            qk_f,
            qk_g,
            reject,
            critics,
        };
        Ok((net, s))
    }

    pub fn in_group(name: &str, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Stage1 => name.starts_with("enc.") || name.starts_with("qk."),
            ParamGroup::Actor => !name.starts_with("critic"),
            ParamGroup::Critic(k) => name.starts_with(&format!("critic{k}.")),
        }
    }

    /// Per-parameter membership flags for `group`.
    pub fn group_mask(store: &ParamStore, group: ParamGroup) -> Vec<bool> {
        store.entries().iter().map(|e| Self::in_group(&e.name, group)).collect()
    }

    /// Worker and order embeddings of equal width.
    pub fn encode_state(&self, g: &mut Graph, f: &Features) -> Result<Encoded> {
        let wx = g.input(f.workers.clone());
        let wx = self.worker_arl.forward(g, wx)?;
        let wh = self.worker_mlp.forward(g, wx)?;
        let wh = g.relu(wh);
        let seq = self.onboard.forward_batch(g, &f.onboard)?;
        let joined = g.concat_cols(&[wh, seq])?;
        let workers = self.worker_out.forward(g, joined)?;
        let ox = g.input(f.orders.clone());
        let ox = self.order_arl.forward(g, ox)?;
        let orders = self.order_mlp.forward(g, ox)?;
        Ok(Encoded { workers, orders })
    }

    /// `f(w) · normalize(softplus(g(o)))ᵀ`.
    pub fn qk(&self, g: &mut Graph, workers: Var, orders: Var) -> Result<Var> {
        let fw = self.qk_f.forward(g, workers)?;
        let go = self.qk_g.forward(g, orders)?;
        let keys = positive_normalize(g, go);
        let kt = g.transpose(keys);
        g.matmul(fw, kt)
    }

    pub fn actor_forward(&self, g: &mut Graph, enc: Encoded) -> Result<ActorOutput> {
        let n = g.shape(enc.workers).0;
        let tokens = g.concat_rows(&[enc.workers, enc.orders])?;
        let ctx = self.actor.forward(g, tokens, None)?;
        let m = g.shape(enc.orders).0;
        let workers = g.slice_rows(ctx, 0, n)?;
        let orders = g.slice_rows(ctx, n, m)?;
        let utilities = self.qk(g, workers, orders)?;
        let reject = self.reject.forward(g, workers)?;
        let logits = g.concat_cols(&[utilities, reject])?;
        let log_probs = g.log_softmax_rows(logits);
        Ok(ActorOutput { workers, orders, utilities, reject, log_probs })
    }

    /// The probability matrix for an actor output, unavailable rows one-hot.
    pub fn probabilities(&self, g: &Graph, out: &ActorOutput, f: &Features) -> Result<ProbabilityMatrix> {
        let u = UtilityMatrix {
            rows: f.n_workers(),
            cols: f.n_orders(),
            order_utilities: g.value(out.utilities).data().to_vec(),
            reject_utilities: g.value(out.reject).data().to_vec(),
        };
        ProbabilityMatrix::from_utilities_labelled(&u, &f.available, f.worker_ids.clone(), f.order_ids.clone())
    }

    /// Stage-1 Q-matrix: the scoring head applied straight to the encoders.
    pub fn stage1_q(&self, g: &mut Graph, f: &Features) -> Result<Var> {
        let enc = self.encode_state(g, f)?;
        self.qk(g, enc.workers, enc.orders)
    }

    pub fn stage1_q_values(&self, store: &ParamStore, f: &Features) -> Result<QMatrix> {
        let mut g = Graph::new(store, Mode::Eval);
        let q = self.stage1_q(&mut g, f)?;
        QMatrix::labelled(g.value(q).data().to_vec(), f.available.clone(), f.worker_ids.clone(), f.order_ids.clone())
    }

    /// Evaluation-mode probability matrix for one observation.
    pub fn probability_matrix(&self, store: &ParamStore, f: &Features) -> Result<ProbabilityMatrix> {
        let mut g = Graph::new(store, Mode::Eval);
        let enc = self.encode_state(&mut g, f)?;
        let out = self.actor_forward(&mut g, enc)?;
        self.probabilities(&g, &out, f)
    }

    /// Row index into `[orders; null]` for every worker under `action`.
    pub fn action_columns(f: &Features, action: &AssignmentAction) -> Result<Vec<usize>> {
        let mut cols = vec![f.n_orders(); f.n_workers()];
        for &(w, o) in &action.pairs {
            let i = f
                .worker_ids
                .iter()
                .position(|&x| x == w)
                .ok_or_else(|| Error::Constraint(format!("worker {} not in state", w.0)))?;
            let j = f
                .order_ids
                .iter()
                .position(|&x| x == o)
                .ok_or_else(|| Error::Constraint(format!("order {} not in state", o.0)))?;
            cols[i] = j;
        }
        Ok(cols)
    }

    /// Scalar value of `action` from critic `k`, given actor embeddings.
    pub fn critic_forward(
        &self,
        g: &mut Graph,
        workers: Var,
        orders: Var,
        f: &Features,
        action: &AssignmentAction,
        k: usize,
    ) -> Result<Var> {
        let critic = self.critics.get(k).ok_or_else(|| Error::Config(format!("no critic {k}")))?;
        let cols = Self::action_columns(f, action)?;
        let null = g.param(critic.null_order);
        let options = g.concat_rows(&[orders, null])?;
        let chosen = g.gather_rows(options, &cols)?;
        let pairs = g.concat_cols(&[workers, chosen])?;
        let tokens = critic.token.forward(g, pairs)?;
        let h = critic.encoder.forward(g, tokens, None)?;
        let q = g.param(critic.pool_query);
        let pooled = critic.pool.attend(g, q, h, None)?;
        critic.head.forward(g, pooled)
    }
}

/// Softplus then unit L2 norm per row: non-negative, norm one.
pub fn positive_normalize(g: &mut Graph, x: Var) -> Var {
    let sp = g.softplus(x);
    g.normalize_rows_l2(sp)
}

/// Builds the `(row, col)` cells of `log_probs` an action selects: matched
/// pairs and, optionally, rejecting workers' reject column.
pub fn action_cells(f: &Features, action: &AssignmentAction, include_rejects: bool) -> Result<Vec<(usize, usize)>> {
    let cols = PolicyNet::action_columns(f, action)?;
    let m = f.n_orders();
    Ok(cols
        .iter()
        .enumerate()
        .filter(|&(i, &c)| f.available[i] && (c < m || (include_rejects && action.rejecting.contains(&f.worker_ids[i]))))
        .map(|(i, &c)| (i, c))
        .collect())
}
