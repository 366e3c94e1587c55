//! Meta + control modules with hand-written backpropagation.
//!
//! Meta tokens are `[goal; (s_i, g_i, a_i) for each past record]`; the outputs
//! at the record positions are scored by `v·o_i` and softmax-normalized into
//! retrieval weights `α`. The retrieved action is `ā = Σ α_i a_i`.
//!
//! Control tokens are `[s_{n-K+1} .. s_n; g; E_a(ā)]`. The last output feeds
//! a one-hidden-layer head predicting `[agent logits; θ - 0.5]`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ssm::{block_backward, block_forward, matvec, matvec_t_acc, outer_acc, BlockCache, BlockIndex};
use super::{AgentId, OrchestrationAction, ACTION_DIM, GOAL_DIM, NUM_AGENTS, STATE_DIM, THETA_DIM};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ranslice-hdm";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdmConfig {
    pub state_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    /// Token width shared by both modules.
    pub latent: usize,
    /// SSM hidden-state width per block.
    pub ssm_state: usize,
    pub meta_blocks: usize,
    pub control_blocks: usize,
    pub head_hidden: usize,
    /// Past records visible to the meta module.
    pub history_len: usize,
    /// Recent states visible to the control module.
    pub recent_len: usize,
}

impl Default for HdmConfig {
    fn default() -> Self {
        Self {
            state_dim: STATE_DIM,
            goal_dim: GOAL_DIM,
            action_dim: ACTION_DIM,
            latent: 64,
            ssm_state: 32,
            meta_blocks: 2,
            control_blocks: 2,
            head_hidden: 64,
            history_len: 8,
            recent_len: 4,
        }
    }
}

impl HdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.ssm_state == 0 || self.head_hidden == 0 {
            return Err(Error::config("HDM widths must be positive"));
        }
        if self.action_dim != NUM_AGENTS + THETA_DIM {
            return Err(Error::config(format!("action_dim must be {}", NUM_AGENTS + THETA_DIM)));
        }
        if self.recent_len == 0 || self.control_blocks == 0 || self.meta_blocks == 0 {
            return Err(Error::config("HDM needs at least one block per module and one recent state"));
        }
        Ok(())
    }
}

/// Offsets of every tensor in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    emb_s_w: usize,
    emb_s_b: usize,
    emb_g_w: usize,
    emb_g_b: usize,
    emb_a_w: usize,
    emb_a_b: usize,
    meta_bias: usize,
    meta: Vec<BlockIndex>,
    score: usize,
    control: Vec<BlockIndex>,
    head_w1: usize,
    head_b1: usize,
    head_w2: usize,
    head_b2: usize,
    total: usize,
}

impl Layout {
    fn new(c: &HdmConfig) -> Self {
        let d = c.latent;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let emb_s_w = take(d * c.state_dim);
        let emb_s_b = take(d);
        let emb_g_w = take(d * c.goal_dim);
        let emb_g_b = take(d);
        let emb_a_w = take(d * c.action_dim);
        let emb_a_b = take(d);
        let meta_bias = take(d);
        let block = BlockIndex::param_count(d, c.ssm_state);
        let meta = (0..c.meta_blocks).map(|_| BlockIndex::at(take(block), d, c.ssm_state)).collect();
        let score = take(d);
        let control = (0..c.control_blocks).map(|_| BlockIndex::at(take(block), d, c.ssm_state)).collect();
        let head_w1 = take(c.head_hidden * d);
        let head_b1 = take(c.head_hidden);
        let head_w2 = take(c.action_dim * c.head_hidden);
        let head_b2 = take(c.action_dim);
        Self {
            emb_s_w,
            emb_s_b,
            emb_g_w,
            emb_g_b,
            emb_a_w,
            emb_a_b,
            meta_bias,
            meta,
            score,
            control,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            total: at,
        }
    }
}

/// Named tensor: offset into the buffer and `rows × cols` shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// One past orchestration record as seen by the meta module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryToken {
    pub state: Vec<f64>,
    pub goal: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HdmInput {
    /// Oldest first; only the last `history_len` are used.
    pub history: Vec<HistoryToken>,
    /// Oldest first, current state last; only the last `recent_len` are used.
    pub recent: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
}

/// Meta-module retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaChoice {
    /// Position of the selected record in the (truncated) history.
    pub index: usize,
    /// `β`: how many records back from the newest.
    pub steps_back: usize,
    pub action: Vec<f64>,
    pub weights: Vec<f64>,
    /// `Σ α_i a_i`, the action fed to the control module.
    pub blended: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub action: OrchestrationAction,
    /// `[agent logits; θ]` before projection.
    pub raw: Vec<f64>,
    pub meta: Option<MetaChoice>,
}

#[derive(Debug, Clone)]
pub struct HdmModel {
    config: HdmConfig,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: HdmConfig,
    groups: Vec<ParamGroup>,
    params: Vec<f64>,
}

/// Activations of one forward pass.
struct Trace {
    hist: Vec<HistoryToken>,
    meta_caches: Vec<BlockCache>,
    meta_out: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    blended: Vec<f64>,
    recent: Vec<Vec<f64>>,
    goal: Vec<f64>,
    ctrl_caches: Vec<BlockCache>,
    ctrl_tokens: usize,
    last: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; b.len()];
    matvec(w, b.len(), x.len(), x, &mut y);
    y.iter_mut().zip(b).for_each(|(a, c)| *a += c);
    y
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn theta_offset(i: usize) -> f64 {
    if i < NUM_AGENTS {
        0.0
    } else {
        0.5
    }
}

impl HdmModel {
    /// All-zero parameters.
    pub fn zeros(config: HdmConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self {
            config,
            params: vec![0.0; layout.total],
            layout,
        })
    }

    /// Seeded random initialization.
    pub fn new(config: HdmConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = m.param_groups();
        for g in &groups {
            let p = &mut m.params[g.range()];
            let leaf = g.name.rsplit('.').next().unwrap_or(&g.name);
            let mut uniform = |scale: f64| p.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
            match leaf {
                "weight" | "b_in" | "w1" => uniform((3.0 / g.cols as f64).sqrt()),
                "c_out" => uniform((1.0 / g.cols as f64).sqrt()),
                "d_skip" => uniform(0.1 / (g.cols as f64).sqrt()),
                "dt_w" | "score" => uniform(0.5 / (g.len() as f64).sqrt()),
                "w2" => uniform(0.3 / (g.cols as f64).sqrt()),
                "log_decay" => {
                    let n = p.len().max(2) as f64;
                    p.iter_mut()
                        .enumerate()
                        .for_each(|(k, x)| *x = (0.5 + 3.5 * k as f64 / (n - 1.0)).ln());
                }
                // softplus^{-1}(0.5)
                "dt_b" => p[0] = (0.5f64.exp() - 1.0).ln(),
                _ => {}
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &HdmConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let c = &self.config;
        let l = &self.layout;
        let d = c.latent;
        let g = |name: &str, offset, rows, cols| ParamGroup {
            name: name.to_string(),
            offset,
            rows,
            cols,
        };
        let mut out = vec![
            g("embed.state.weight", l.emb_s_w, d, c.state_dim),
            g("embed.state.bias", l.emb_s_b, 1, d),
            g("embed.goal.weight", l.emb_g_w, d, c.goal_dim),
            g("embed.goal.bias", l.emb_g_b, 1, d),
            g("embed.action.weight", l.emb_a_w, d, c.action_dim),
            g("embed.action.bias", l.emb_a_b, 1, d),
            g("meta.token_bias", l.meta_bias, 1, d),
        ];
        let block_groups = |prefix: String, b: &BlockIndex| {
            let (d, n) = (b.width, b.state);
            vec![
                g(&format!("{prefix}.log_decay"), b.log_decay, 1, n),
                g(&format!("{prefix}.b_in"), b.b_in, n, d),
                g(&format!("{prefix}.c_out"), b.c_out, d, n),
                g(&format!("{prefix}.d_skip"), b.d_skip, d, d),
                g(&format!("{prefix}.dt_w"), b.dt_w, 1, d),
                g(&format!("{prefix}.dt_b"), b.dt_b, 1, 1),
            ]
        };
        for (i, b) in l.meta.iter().enumerate() {
            out.extend(block_groups(format!("meta.block{i}"), b));
        }
        out.push(g("meta.score", l.score, 1, d));
        for (i, b) in l.control.iter().enumerate() {
            out.extend(block_groups(format!("control.block{i}"), b));
        }
        out.extend([
            g("head.w1", l.head_w1, c.head_hidden, d),
            g("head.b1", l.head_b1, 1, c.head_hidden),
            g("head.w2", l.head_w2, c.action_dim, c.head_hidden),
            g("head.b2", l.head_b2, 1, c.action_dim),
        ]);
        out
    }

    fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    fn embed_state(&self, s: &[f64]) -> Vec<f64> {
        let d = self.config.latent;
        affine(self.slice(self.layout.emb_s_w, d * self.config.state_dim), self.slice(self.layout.emb_s_b, d), s)
    }

    fn embed_goal(&self, g: &[f64]) -> Vec<f64> {
        let d = self.config.latent;
        affine(self.slice(self.layout.emb_g_w, d * self.config.goal_dim), self.slice(self.layout.emb_g_b, d), g)
    }

    fn embed_action(&self, a: &[f64]) -> Vec<f64> {
        let d = self.config.latent;
        affine(self.slice(self.layout.emb_a_w, d * self.config.action_dim), self.slice(self.layout.emb_a_b, d), a)
    }

    fn check_input(&self, input: &HdmInput) -> Result<()> {
        let c = &self.config;
        let bad = |what: &str| Err(Error::contract(format!("HDM input: {what}")));
        if input.goal.len() != c.goal_dim {
            return bad("goal width");
        }
        if input.recent.is_empty() {
            return bad("no recent state");
        }
        if input.recent.iter().any(|s| s.len() != c.state_dim) {
            return bad("state width");
        }
        for h in &input.history {
            if h.state.len() != c.state_dim || h.goal.len() != c.goal_dim || h.action.len() != c.action_dim {
                return bad("history token width");
            }
        }
        let finite = input.goal.iter().chain(input.recent.iter().flatten()).all(|v| v.is_finite())
            && input
                .history
                .iter()
                .all(|h| h.state.iter().chain(&h.goal).chain(&h.action).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite {
                context: "HDM input".into(),
            });
        }
        Ok(())
    }

    fn run_meta(&self, hist: &[HistoryToken], goal: &[f64]) -> (Vec<BlockCache>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let d = self.config.latent;
        let bias = self.slice(l.meta_bias, d);
        let mut tokens = Vec::with_capacity(hist.len() + 1);
        let mut t0 = self.embed_goal(goal);
        add_into(&mut t0, bias);
        tokens.push(t0);
        for h in hist {
            let mut t = self.embed_state(&h.state);
            add_into(&mut t, &self.embed_goal(&h.goal));
            add_into(&mut t, &self.embed_action(&h.action));
            add_into(&mut t, bias);
            tokens.push(t);
        }
        let mut caches = Vec::with_capacity(l.meta.len());
        let mut x = tokens;
        for b in &l.meta {
            let (o, cache) = block_forward(&self.params, b, &x);
            caches.push(cache);
            x = o;
        }
        let v = self.slice(l.score, d);
        let scores: Vec<f64> = x[1..].iter().map(|o| o.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
        let peak = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - peak).exp()).collect();
        let z: f64 = exps.iter().sum();
        let alpha: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut blended = vec![0.0; self.config.action_dim];
        for (a, h) in alpha.iter().zip(hist) {
            blended.iter_mut().zip(&h.action).for_each(|(b, x)| *b += a * x);
        }
        (caches, x, alpha, blended)
    }

    fn trace(&self, input: &HdmInput) -> Trace {
        let c = &self.config;
        let l = &self.layout;
        let hist: Vec<HistoryToken> = input.history[input.history.len().saturating_sub(c.history_len)..].to_vec();
        let recent: Vec<Vec<f64>> = input.recent[input.recent.len().saturating_sub(c.recent_len)..].to_vec();

        let (meta_caches, meta_out, alpha, blended) = if hist.is_empty() {
            (vec![], vec![], vec![], vec![0.0; c.action_dim])
        } else {
            self.run_meta(&hist, &input.goal)
        };

        let mut tokens: Vec<Vec<f64>> = recent.iter().map(|s| self.embed_state(s)).collect();
        tokens.push(self.embed_goal(&input.goal));
        tokens.push(self.embed_action(&blended));
        let ctrl_tokens = tokens.len();
        let mut ctrl_caches = Vec::with_capacity(l.control.len());
        let mut x = tokens;
        for b in &l.control {
            let (o, cache) = block_forward(&self.params, b, &x);
            ctrl_caches.push(cache);
            x = o;
        }
        let last = x.pop().expect("control tokens");
        let hh = c.head_hidden;
        let hidden: Vec<f64> = affine(self.slice(l.head_w1, hh * c.latent), self.slice(l.head_b1, hh), &last)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let mut out = affine(self.slice(l.head_w2, c.action_dim * hh), self.slice(l.head_b2, c.action_dim), &hidden);
        out.iter_mut().enumerate().for_each(|(i, o)| *o += theta_offset(i));
        Trace {
            hist,
            meta_caches,
            meta_out,
            alpha,
            blended,
            recent,
            goal: input.goal.clone(),
            ctrl_caches,
            ctrl_tokens,
            last,
            hidden,
            out,
        }
    }

    fn meta_choice(t: &Trace) -> Option<MetaChoice> {
        if t.hist.is_empty() {
            return None;
        }
        let mut best = 0;
        for (i, a) in t.alpha.iter().enumerate() {
            if *a > t.alpha[best] {
                best = i;
            }
        }
        Some(MetaChoice {
            index: best,
            steps_back: t.hist.len() - best,
            action: t.hist[best].action.clone(),
            weights: t.alpha.clone(),
            blended: t.blended.clone(),
        })
    }

    /// Decode `[logits; θ]`: argmax agent (lowest index on ties), θ projected
    /// into the feasible set.
    pub fn decode(raw: &[f64]) -> OrchestrationAction {
        let mut best = 0;
        for i in 1..NUM_AGENTS {
            if raw[i] > raw[best] {
                best = i;
            }
        }
        let agent = AgentId::from_index(best).expect("agent index");
        let theta: [f64; THETA_DIM] = raw[NUM_AGENTS..NUM_AGENTS + THETA_DIM].try_into().expect("theta width");
        OrchestrationAction::new(agent, theta)
    }

    pub fn predict(&self, input: &HdmInput) -> Result<Prediction> {
        self.check_input(input)?;
        let t = self.trace(input);
        if t.out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "HDM output".into(),
            });
        }
        Ok(Prediction {
            action: Self::decode(&t.out),
            meta: Self::meta_choice(&t),
            raw: t.out,
        })
    }

    /// Score past records against the goal. Returns `None` for an empty
    /// history.
    pub fn meta_select(&self, history: &[HistoryToken], goal: &[f64]) -> Option<MetaChoice> {
        let hist = &history[history.len().saturating_sub(self.config.history_len)..];
        if hist.is_empty() {
            return None;
        }
        let (_, _, alpha, blended) = self.run_meta(hist, goal);
        let mut best = 0;
        for (i, a) in alpha.iter().enumerate() {
            if *a > alpha[best] {
                best = i;
            }
        }
        Some(MetaChoice {
            index: best,
            steps_back: hist.len() - best,
            action: hist[best].action.clone(),
            weights: alpha,
            blended,
        })
    }

    /// Control module alone, given an already retrieved action vector.
    pub fn control_predict(&self, recent: &[Vec<f64>], goal: &[f64], retrieved: &[f64]) -> Result<OrchestrationAction> {
        let c = &self.config;
        if retrieved.len() != c.action_dim {
            return Err(Error::contract("retrieved action width"));
        }
        self.check_input(&HdmInput {
            history: vec![],
            recent: recent.to_vec(),
            goal: goal.to_vec(),
        })?;
        let recent = &recent[recent.len().saturating_sub(c.recent_len)..];
        let mut tokens: Vec<Vec<f64>> = recent.iter().map(|s| self.embed_state(s)).collect();
        tokens.push(self.embed_goal(goal));
        tokens.push(self.embed_action(retrieved));
        let mut x = tokens;
        for b in &self.layout.control {
            x = block_forward(&self.params, b, &x).0;
        }
        let last = x.pop().expect("control tokens");
        let hh = c.head_hidden;
        let l = &self.layout;
        let hidden: Vec<f64> = affine(self.slice(l.head_w1, hh * c.latent), self.slice(l.head_b1, hh), &last)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let mut out = affine(self.slice(l.head_w2, c.action_dim * hh), self.slice(l.head_b2, c.action_dim), &hidden);
        out.iter_mut().enumerate().for_each(|(i, o)| *o += theta_offset(i));
        Ok(Self::decode(&out))
    }

    /// Mean squared error against `[one-hot agent; θ]`.
    pub fn loss(&self, input: &HdmInput, target: &[f64]) -> f64 {
        let t = self.trace(input);
        mse(&t.out, target)
    }

    /// Loss of one sample; its gradient is added to `grad` scaled by `scale`.
    pub fn loss_and_grad(&self, input: &HdmInput, target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.params.len());
        let c = &self.config;
        let l = &self.layout;
        let d = c.latent;
        let hh = c.head_hidden;
        let t = self.trace(input);
        let loss = mse(&t.out, target);
        let k = c.action_dim as f64;
        let d_out: Vec<f64> = t.out.iter().zip(target).map(|(p, y)| scale * 2.0 * (p - y) / k).collect();

        // head
        outer_acc(&mut grad[l.head_w2..l.head_w2 + c.action_dim * hh], &d_out, &t.hidden);
        add_into(&mut grad[l.head_b2..l.head_b2 + c.action_dim], &d_out);
        let mut d_hidden = vec![0.0; hh];
        matvec_t_acc(self.slice(l.head_w2, c.action_dim * hh), c.action_dim, hh, &d_out, &mut d_hidden);
        let d_pre: Vec<f64> = d_hidden.iter().zip(&t.hidden).map(|(g, z)| g * (1.0 - z * z)).collect();
        outer_acc(&mut grad[l.head_w1..l.head_w1 + hh * d], &d_pre, &t.last);
        add_into(&mut grad[l.head_b1..l.head_b1 + hh], &d_pre);
        let mut d_last = vec![0.0; d];
        matvec_t_acc(self.slice(l.head_w1, hh * d), hh, d, &d_pre, &mut d_last);

        // control stack
        let mut d_tokens = vec![vec![0.0; d]; t.ctrl_tokens];
        d_tokens[t.ctrl_tokens - 1] = d_last;
        for (b, cache) in l.control.iter().zip(&t.ctrl_caches).rev() {
            d_tokens = block_backward(&self.params, b, cache, &d_tokens, grad);
        }
        let nr = t.recent.len();
        for (s, dt) in t.recent.iter().zip(&d_tokens[..nr]) {
            outer_acc(&mut grad[l.emb_s_w..l.emb_s_w + d * c.state_dim], dt, s);
            add_into(&mut grad[l.emb_s_b..l.emb_s_b + d], dt);
        }
        let d_goal_tok = &d_tokens[nr];
        outer_acc(&mut grad[l.emb_g_w..l.emb_g_w + d * c.goal_dim], d_goal_tok, &t.goal);
        add_into(&mut grad[l.emb_g_b..l.emb_g_b + d], d_goal_tok);
        let d_r = &d_tokens[nr + 1];
        outer_acc(&mut grad[l.emb_a_w..l.emb_a_w + d * c.action_dim], d_r, &t.blended);
        add_into(&mut grad[l.emb_a_b..l.emb_a_b + d], d_r);

        if t.hist.is_empty() {
            return loss;
        }

        // retrieval: ā = Σ α_i a_i, α = softmax(v·o_i)
        let mut d_blend = vec![0.0; c.action_dim];
        matvec_t_acc(self.slice(l.emb_a_w, d * c.action_dim), d, c.action_dim, d_r, &mut d_blend);
        let d_alpha: Vec<f64> = t
            .hist
            .iter()
            .map(|h| h.action.iter().zip(&d_blend).map(|(a, b)| a * b).sum())
            .collect();
        let mean: f64 = t.alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
        let d_score: Vec<f64> = t.alpha.iter().zip(&d_alpha).map(|(a, g)| a * (g - mean)).collect();
        let v = self.slice(l.score, d);
        let mut d_meta = vec![vec![0.0; d]; t.hist.len() + 1];
        for (i, ds) in d_score.iter().enumerate() {
            let o = &t.meta_out[i + 1];
            for j in 0..d {
                grad[l.score + j] += ds * o[j];
                d_meta[i + 1][j] = ds * v[j];
            }
        }
        for (b, cache) in l.meta.iter().zip(&t.meta_caches).rev() {
            d_meta = block_backward(&self.params, b, cache, &d_meta, grad);
        }
        let dm0 = &d_meta[0];
        outer_acc(&mut grad[l.emb_g_w..l.emb_g_w + d * c.goal_dim], dm0, &t.goal);
        add_into(&mut grad[l.emb_g_b..l.emb_g_b + d], dm0);
        add_into(&mut grad[l.meta_bias..l.meta_bias + d], dm0);
        for (h, dm) in t.hist.iter().zip(&d_meta[1..]) {
            outer_acc(&mut grad[l.emb_s_w..l.emb_s_w + d * c.state_dim], dm, &h.state);
            add_into(&mut grad[l.emb_s_b..l.emb_s_b + d], dm);
            outer_acc(&mut grad[l.emb_g_w..l.emb_g_w + d * c.goal_dim], dm, &h.goal);
            add_into(&mut grad[l.emb_g_b..l.emb_g_b + d], dm);
            outer_acc(&mut grad[l.emb_a_w..l.emb_a_w + d * c.action_dim], dm, &h.action);
            add_into(&mut grad[l.emb_a_b..l.emb_a_b + d], dm);
            add_into(&mut grad[l.meta_bias..l.meta_bias + d], dm);
        }
        loss
    }

    /// JSON checkpoint with the config, tensor shapes and flat parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            groups: self.param_groups(),
            params: self.params.clone(),
        };
        fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let mut m = Self::zeros(ck.config)?;
        if ck.params.len() != m.params.len() || ck.groups != m.param_groups() {
            return Err(Error::Format("checkpoint shapes do not match its config".into()));
        }
        if ck.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: "checkpoint parameters".into(),
            });
        }
        m.params = ck.params;
        Ok(m)
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64
}
