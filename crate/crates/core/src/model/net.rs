//! Parameter layout and differentiable forward passes for all towers.

use super::{vec_to_row, CmnModel, LatentSample, ModelConfig, BOS, CLS, LOGVAR_CLAMP, SEP};
use crate::error::{CmnError, Result};
use crate::tensor::{NodeId, ParamId, ParamStore, Tape};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;
const MASK_VALUE: f64 = -1e30;
const FFN_FACTOR: usize = 4;
/// Rank of the bilinear context/response agreement form in the pair logit.
/// A handful of directions lets the head compare the segments in learned
/// subspaces (and ignore the embedding components every sentence shares)
/// without growing quadratically in the hidden size.
const AGREEMENT_RANK: usize = 4;

/// Weight standard deviation scaled by fan-in, so attention scores and
/// pooled rows keep comparable, input-dependent magnitudes at any width.
/// A fixed small constant would leave the pooled classification row
/// dominated by its own embedding at toy widths, starving the pair logit
/// and the latent heads of signal.
fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Register every weight for the configured architecture, seeded by
/// `config.seed`. Registration order is deterministic.
pub(super) fn init_params(config: &ModelConfig) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let d = config.hidden_dim;
    let dk = d / config.num_heads;
    let ff = FFN_FACTOR * d;

    let tower = |store: &mut ParamStore,
                 rng: &mut ChaCha8Rng,
                 prefix: &str,
                 layers: usize,
                 with_segments: bool| {
        let emb_std = fan_in_std(d);
        store.register_normal(&format!("{prefix}.tok"), config.vocab_size, d, emb_std, rng);
        store.register_normal(&format!("{prefix}.pos"), config.max_sequence_length, d, emb_std, rng);
        if with_segments {
            store.register_normal(&format!("{prefix}.seg"), 2, d, emb_std, rng);
        }
        for l in 0..layers {
            let lp = format!("{prefix}.l{l}");
            for h in 0..config.num_heads {
                store.register_normal(&format!("{lp}.attn.q{h}"), d, dk, fan_in_std(d), rng);
                store.register_normal(&format!("{lp}.attn.k{h}"), d, dk, fan_in_std(d), rng);
                store.register_normal(&format!("{lp}.attn.v{h}"), d, dk, fan_in_std(d), rng);
            }
            store.register_normal(&format!("{lp}.attn.out"), d, d, fan_in_std(d), rng);
            store.register_zeros(&format!("{lp}.attn.out_b"), 1, d);
            store.register(&format!("{lp}.ln1.g"), Array2::ones((1, d)));
            store.register_zeros(&format!("{lp}.ln1.b"), 1, d);
            store.register_normal(&format!("{lp}.ffn.w1"), d, ff, fan_in_std(d), rng);
            store.register_zeros(&format!("{lp}.ffn.b1"), 1, ff);
            store.register_normal(&format!("{lp}.ffn.w2"), ff, d, fan_in_std(ff), rng);
            store.register_zeros(&format!("{lp}.ffn.b2"), 1, d);
            store.register(&format!("{lp}.ln2.g"), Array2::ones((1, d)));
            store.register_zeros(&format!("{lp}.ln2.b"), 1, d);
        }
    };

    tower(&mut store, &mut rng, "pair", config.encoder_layers, true);
    if !config.share_encoders {
        tower(&mut store, &mut rng, "ctx", config.encoder_layers, true);
    }
    tower(&mut store, &mut rng, "dec", config.decoder_layers, false);

    store.register_normal("head.nsp.w", d, 1, fan_in_std(d), &mut rng);
    // Weights on the context/response agreement features. Random signs
    // break the bilinear saddle between these weights and the embedding
    // alignment they read; training corrects the signs quickly.
    store.register_normal("head.nsp.m", 1, 1, 1.0, &mut rng);
    let rank = d.min(AGREEMENT_RANK);
    store.register_normal("head.nsp.u", d, rank, fan_in_std(d), &mut rng);
    store.register_normal("head.nsp.v", d, rank, fan_in_std(d), &mut rng);
    store.register_zeros("head.nsp.b", 1, 1);
    for head in ["qmu", "qlv", "pmu", "plv"] {
        store.register_normal(&format!("head.{head}.w"), d, config.latent_dim, fan_in_std(d), &mut rng);
        store.register_zeros(&format!("head.{head}.b"), 1, config.latent_dim);
    }
    store.register_normal("dec.z_in", config.latent_dim, d, fan_in_std(config.latent_dim), &mut rng);
    store.register_normal("dec.out.w", d, config.vocab_size, fan_in_std(d), &mut rng);
    store.register_zeros("dec.out.b", 1, config.vocab_size);
    store
}

/// Average over sequence positions into a single 1×d representation.
/// Pooling across every position keeps the per-token interaction features
/// computed by attention and the feed-forward nonlinearity linearly
/// accessible to the heads; reading a single position instead loses them
/// behind one more mixing step and trains far more slowly at toy widths.
fn mean_pool(tape: &mut Tape, rows: NodeId, len: usize) -> NodeId {
    let ones = tape.constant(Array2::from_elem((1, len), 1.0 / len as f64));
    tape.matmul(ones, rows)
}

/// Shrink `(a, b)` to fit `budget` positions: shorten `a` first, then `b`,
/// keeping at least one token of each.
pub(crate) fn fit_lengths(a: usize, b: usize, budget: usize) -> (usize, usize) {
    let mut a_keep = a;
    let mut b_keep = b;
    let over = (a_keep + b_keep).saturating_sub(budget);
    let cut = over.min(a_keep.saturating_sub(1));
    a_keep -= cut;
    let over = (a_keep + b_keep).saturating_sub(budget);
    let cut = over.min(b_keep.saturating_sub(1));
    b_keep -= cut;
    (a_keep, b_keep)
}

fn causal_mask(len: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, len), |(i, j)| if j > i { MASK_VALUE } else { 0.0 })
}

impl CmnModel {
    fn pid(&self, name: &str) -> ParamId {
        self.store
            .id(name)
            .unwrap_or_else(|| panic!("parameter {name} not registered"))
    }

    fn pnode(&self, tape: &mut Tape, name: &str) -> NodeId {
        tape.param(&self.store, self.pid(name))
    }

    fn layer_norm(&self, tape: &mut Tape, x: NodeId, name: &str) -> NodeId {
        let normalized = tape.row_normalize(x, LN_EPS);
        let g = self.pnode(tape, &format!("{name}.g"));
        let b = self.pnode(tape, &format!("{name}.b"));
        let scaled = tape.mul_row(normalized, g);
        tape.add_row(scaled, b)
    }

    /// One post-LN transformer block with per-head projections.
    fn transformer_layer(&self, tape: &mut Tape, x: NodeId, lp: &str, causal: bool) -> NodeId {
        let dk = self.config.hidden_dim / self.config.num_heads;
        let len = tape.value(x).nrows();
        let mask = causal.then(|| tape.constant(causal_mask(len)));

        let mut cat: Option<NodeId> = None;
        for h in 0..self.config.num_heads {
            let wq = self.pnode(tape, &format!("{lp}.attn.q{h}"));
            let wk = self.pnode(tape, &format!("{lp}.attn.k{h}"));
            let wv = self.pnode(tape, &format!("{lp}.attn.v{h}"));
            let q = tape.matmul(x, wq);
            let k = tape.matmul(x, wk);
            let v = tape.matmul(x, wv);
            let kt = tape.transpose(k);
            let raw = tape.matmul(q, kt);
            let mut scores = tape.scale(raw, 1.0 / (dk as f64).sqrt());
            if let Some(m) = mask {
                scores = tape.add(scores, m);
            }
            let attn = tape.row_softmax(scores);
            let head = tape.matmul(attn, v);
            cat = Some(match cat {
                Some(c) => tape.concat_cols(c, head),
                None => head,
            });
        }
        let wo = self.pnode(tape, &format!("{lp}.attn.out"));
        let bo = self.pnode(tape, &format!("{lp}.attn.out_b"));
        let proj = tape.matmul(cat.expect("at least one head"), wo);
        let proj = tape.add_row(proj, bo);
        let res = tape.add(x, proj);
        let x = self.layer_norm(tape, res, &format!("{lp}.ln1"));

        let w1 = self.pnode(tape, &format!("{lp}.ffn.w1"));
        let b1 = self.pnode(tape, &format!("{lp}.ffn.b1"));
        let w2 = self.pnode(tape, &format!("{lp}.ffn.w2"));
        let b2 = self.pnode(tape, &format!("{lp}.ffn.b2"));
        let h1 = tape.matmul(x, w1);
        let h1 = tape.add_row(h1, b1);
        let act = tape.gelu(h1);
        let h2 = tape.matmul(act, w2);
        let h2 = tape.add_row(h2, b2);
        let res2 = tape.add(x, h2);
        self.layer_norm(tape, res2, &format!("{lp}.ln2"))
    }

    fn run_encoder(
        &self,
        tape: &mut Tape,
        prefix: &str,
        ids: &[usize],
        segs: &[usize],
    ) -> NodeId {
        let tok = self.pnode(tape, &format!("{prefix}.tok"));
        let mut x = tape.gather(tok, ids);
        let pos = self.pnode(tape, &format!("{prefix}.pos"));
        let pos_slice = tape.slice_rows(pos, 0, ids.len());
        x = tape.add(x, pos_slice);
        let seg = self.pnode(tape, &format!("{prefix}.seg"));
        let seg_rows = tape.gather(seg, segs);
        x = tape.add(x, seg_rows);
        for l in 0..self.config.encoder_layers {
            x = self.transformer_layer(tape, x, &format!("{prefix}.l{l}"), false);
        }
        x
    }

    /// Pair tower: `[CLS] context [SEP] response` with segment ids, pooled
    /// at the classification position; returns (h 1×d, nsp logit 1×1).
    pub(crate) fn pair_tower_nodes(
        &self,
        tape: &mut Tape,
        context: &[String],
        response: &[String],
    ) -> Result<(NodeId, NodeId)> {
        if context.is_empty() {
            return Err(CmnError::EmptyTokens("context"));
        }
        if response.is_empty() {
            return Err(CmnError::EmptyTokens("response"));
        }
        let budget = self.config.max_sequence_length - 2;
        let (ctx_keep, resp_keep) = fit_lengths(context.len(), response.len(), budget);
        let ctx = &context[context.len() - ctx_keep..];
        let resp = &response[..resp_keep];

        let mut ids = vec![self.vocab.id(CLS)];
        ids.extend(self.vocab.encode(ctx));
        ids.push(self.vocab.id(SEP));
        ids.extend(self.vocab.encode(resp));
        let mut segs = vec![0usize; 2 + ctx.len()];
        segs.extend(std::iter::repeat(1usize).take(resp.len()));

        let out = self.run_encoder(tape, "pair", &ids, &segs);
        let h = mean_pool(tape, out, ids.len());

        // Agreement features: bilinear forms over the two segments' mean
        // token embeddings. A plain linear readout of pooled rows cannot
        // express whether context and response agree topically (negative
        // sampling makes the class-conditional feature means coincide), so
        // the logit gets two such terms: the plain dot product, which lets
        // the embeddings themselves learn word-identity alignment at any
        // effective rank, and a low-rank learned form that can filter out
        // the components every sentence shares. Raw embeddings rather than
        // encoder outputs keep both free of the shared layer-norm component
        // and give co-occurring context and response words a first-order
        // pull toward alignment.
        let tok = self.pnode(tape, "pair.tok");
        let ctx_emb = tape.gather(tok, &self.vocab.encode(ctx));
        let resp_emb = tape.gather(tok, &self.vocab.encode(resp));
        let ctx_mean = mean_pool(tape, ctx_emb, ctx.len());
        let resp_mean = mean_pool(tape, resp_emb, resp.len());
        let resp_mean_t = tape.transpose(resp_mean);
        let dot = tape.matmul(ctx_mean, resp_mean_t);
        let m = self.pnode(tape, "head.nsp.m");
        let dot_scaled = tape.matmul(dot, m);
        let u = self.pnode(tape, "head.nsp.u");
        let v = self.pnode(tape, "head.nsp.v");
        let ctx_proj = tape.matmul(ctx_mean, u);
        let resp_proj = tape.matmul(resp_mean, v);
        let resp_proj_t = tape.transpose(resp_proj);
        let filtered = tape.matmul(ctx_proj, resp_proj_t);
        let agreement = tape.add(dot_scaled, filtered);

        let w = self.pnode(tape, "head.nsp.w");
        let b = self.pnode(tape, "head.nsp.b");
        let content = tape.matmul(h, w);
        let raw = tape.add(content, agreement);
        let logit = tape.add(raw, b);
        Ok((h, logit))
    }

    /// Context tower (the pair tower's weights when sharing is enabled);
    /// returns the pooled representation (1×d).
    pub(crate) fn context_tower_nodes(&self, tape: &mut Tape, context: &[String]) -> Result<NodeId> {
        if context.is_empty() {
            return Err(CmnError::EmptyTokens("context"));
        }
        let prefix = if self.config.share_encoders { "pair" } else { "ctx" };
        let keep = context.len().min(self.config.max_sequence_length - 1);
        let ctx = &context[context.len() - keep..];
        let mut ids = vec![self.vocab.id(CLS)];
        ids.extend(self.vocab.encode(ctx));
        let segs = vec![0usize; ids.len()];
        let out = self.run_encoder(tape, prefix, &ids, &segs);
        Ok(mean_pool(tape, out, ids.len()))
    }

    fn gaussian_head(&self, tape: &mut Tape, h: NodeId, mu: &str, lv: &str) -> (NodeId, NodeId) {
        let wm = self.pnode(tape, &format!("head.{mu}.w"));
        let bm = self.pnode(tape, &format!("head.{mu}.b"));
        let mean_raw = tape.matmul(h, wm);
        let mean = tape.add(mean_raw, bm);
        let wl = self.pnode(tape, &format!("head.{lv}.w"));
        let bl = self.pnode(tape, &format!("head.{lv}.b"));
        let lv_raw = tape.matmul(h, wl);
        let lv_biased = tape.add(lv_raw, bl);
        let logvar = tape.clamp(lv_biased, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);
        (mean, logvar)
    }

    /// Posterior head on a pooled pair representation: (mean, log-variance).
    pub(crate) fn posterior_nodes(&self, tape: &mut Tape, h: NodeId) -> (NodeId, NodeId) {
        self.gaussian_head(tape, h, "qmu", "qlv")
    }

    /// Prior head on a pooled context representation.
    pub(crate) fn prior_nodes(&self, tape: &mut Tape, h: NodeId) -> (NodeId, NodeId) {
        self.gaussian_head(tape, h, "pmu", "plv")
    }

    /// Reparameterized draw z = mean + exp(0.5·logvar) ⊙ eps on the tape, so
    /// gradient flows into both Gaussian heads.
    pub(crate) fn sample_node(
        &self,
        tape: &mut Tape,
        mean: NodeId,
        logvar: NodeId,
        eps: &Array2<f64>,
    ) -> NodeId {
        let half = tape.scale(logvar, 0.5);
        let sd = tape.exp(half);
        let noise = tape.constant(eps.clone());
        let scaled = tape.mul(sd, noise);
        tape.add(mean, scaled)
    }

    /// Closed-form diagonal-Gaussian KL on the tape (1×1 node).
    pub(crate) fn kl_node(
        &self,
        tape: &mut Tape,
        qmu: NodeId,
        qlv: NodeId,
        pmu: NodeId,
        plv: NodeId,
    ) -> NodeId {
        let diff_lv = tape.sub(qlv, plv);
        let ratio = tape.exp(diff_lv);
        let dmu = tape.sub(qmu, pmu);
        let dmu2 = tape.mul(dmu, dmu);
        let neg_plv = tape.scale(plv, -1.0);
        let inv_pvar = tape.exp(neg_plv);
        let maha = tape.mul(dmu2, inv_pvar);
        let sum1 = tape.add(ratio, maha);
        let lv_gap = tape.sub(plv, qlv);
        let sum2 = tape.add(sum1, lv_gap);
        let shifted = tape.add_scalar(sum2, -1.0);
        let total = tape.sum_all(shifted);
        tape.scale(total, 0.5)
    }

    /// Decoder logits for every target slot given a latent node already on
    /// the tape. Returns (logits L×V, target token ids).
    pub(crate) fn decoder_logit_nodes_from_znode(
        &self,
        tape: &mut Tape,
        context: &[String],
        z_node: NodeId,
        target: &[String],
    ) -> Result<(NodeId, Vec<usize>)> {
        if context.is_empty() {
            return Err(CmnError::EmptyTokens("context"));
        }
        if target.is_empty() {
            return Err(CmnError::EmptyTokens("target"));
        }
        // rows: [latent] ctx[..] [BOS] tgt[..L-1]  →  ctx + L + 1 positions
        let budget = self.config.max_sequence_length - 1;
        let (ctx_keep, tgt_keep) = fit_lengths(context.len(), target.len(), budget);
        let ctx = &context[context.len() - ctx_keep..];
        let tgt = &target[..tgt_keep];

        let mut ids = self.vocab.encode(ctx);
        ids.push(self.vocab.id(BOS));
        ids.extend(self.vocab.encode(&tgt[..tgt_keep - 1]));
        let total_len = ids.len() + 1;

        let zw = self.pnode(tape, "dec.z_in");
        let z_emb = tape.matmul(z_node, zw);
        let tok = self.pnode(tape, "dec.tok");
        let emb = tape.gather(tok, &ids);
        let stacked = tape.concat_rows(z_emb, emb);
        let pos = self.pnode(tape, "dec.pos");
        let pos_slice = tape.slice_rows(pos, 0, total_len);
        let positioned = tape.add(stacked, pos_slice);
        // dual injection: the latent embedding is also added to every row
        let mut x = tape.add_row(positioned, z_emb);
        for l in 0..self.config.decoder_layers {
            x = self.transformer_layer(tape, x, &format!("dec.l{l}"), true);
        }
        let pred = tape.slice_rows(x, ctx_keep + 1, tgt_keep);
        let wout = self.pnode(tape, "dec.out.w");
        let bout = self.pnode(tape, "dec.out.b");
        let raw = tape.matmul(pred, wout);
        let logits = tape.add_row(raw, bout);
        Ok((logits, self.vocab.encode(tgt)))
    }

    /// Teacher-forced log-likelihood node (1×1) from a latent node.
    pub(crate) fn decode_logprob_node_from_znode(
        &self,
        tape: &mut Tape,
        context: &[String],
        z_node: NodeId,
        target: &[String],
    ) -> Result<NodeId> {
        let (logits, target_ids) = self.decoder_logit_nodes_from_znode(tape, context, z_node, target)?;
        let logp = tape.row_log_softmax(logits);
        let picked = tape.select_per_row(logp, &target_ids);
        Ok(tape.sum_all(picked))
    }

    fn z_constant(&self, tape: &mut Tape, z: &LatentSample) -> Result<NodeId> {
        if z.z.len() != self.config.latent_dim {
            return Err(CmnError::DimensionMismatch {
                left: z.z.len(),
                right: self.config.latent_dim,
            });
        }
        Ok(tape.constant(vec_to_row(&z.z)))
    }

    pub(crate) fn decoder_logit_nodes(
        &self,
        tape: &mut Tape,
        context: &[String],
        z: &LatentSample,
        target: &[String],
    ) -> Result<(NodeId, Vec<usize>)> {
        let zn = self.z_constant(tape, z)?;
        self.decoder_logit_nodes_from_znode(tape, context, zn, target)
    }

    pub(crate) fn decode_logprob_node(
        &self,
        tape: &mut Tape,
        context: &[String],
        z: &LatentSample,
        target: &[String],
    ) -> Result<NodeId> {
        let zn = self.z_constant(tape, z)?;
        self.decode_logprob_node_from_znode(tape, context, zn, target)
    }
}

#[cfg(test)]
mod fit_tests {
    use super::fit_lengths;

    #[test]
    fn fits_within_budget_untouched() {
        assert_eq!(fit_lengths(3, 4, 10), (3, 4));
        assert_eq!(fit_lengths(3, 4, 7), (3, 4));
    }

    #[test]
    fn shortens_first_side_first() {
        assert_eq!(fit_lengths(6, 4, 8), (4, 4));
        assert_eq!(fit_lengths(10, 2, 8), (6, 2));
    }

    #[test]
    fn falls_back_to_second_side() {
        // first side floors at one token, remainder comes off the second
        assert_eq!(fit_lengths(3, 10, 6), (1, 5));
        assert_eq!(fit_lengths(1, 10, 4), (1, 3));
    }

    #[test]
    fn keeps_one_token_each_at_minimum() {
        assert_eq!(fit_lengths(5, 5, 2), (1, 1));
    }
}
