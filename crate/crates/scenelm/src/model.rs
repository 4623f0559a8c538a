//! Transformer decoder with causal self-attention, cross-attention to the
//! voxel context, a KV cache for incremental decoding, and the multi-token
//! head assembly (shared or per-head token heads, confidence heads, and the
//! feature projection chain).
//!
//! The decoder stacks `layers / 2` blocks of self-attention, cross-attention,
//! and a feed-forward sublayer, all pre-layer-norm with residuals. Head `1`
//! reads the trunk state directly; each further head `i` reads the shared
//! projection module applied to head `i-1`'s state.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder;
use crate::error::ModelError;
use crate::scenegen::substream;
use crate::tensor::{checkpoint, kernels, ParamStore, Tape, Var};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecoderConfig {
    /// Number of attention sublayers, alternating self/cross; must be even.
    pub layers: usize,
    /// Model width d.
    pub width: usize,
    /// Attention heads.
    pub heads: usize,
    /// Vocabulary size.
    pub vocab: usize,
    /// Maximum sequence length (position-embedding table size).
    pub max_seq: usize,
    /// MTP fan-out: tokens predicted per forward pass.
    pub n: usize,
    /// Share token/confidence heads and the projection module across heads.
    pub head_sharing: bool,
    /// Build confidence heads for heads 2..=n.
    pub confidence_heads: bool,
    /// Occupancy-grid resolution for the context encoder.
    pub grid: usize,
    /// Voxel columns grouped per context row, per side; the grid must
    /// divide evenly into patches.
    pub patch: usize,
    /// Scene extent in meters for voxelization.
    pub extent: f32,
}

impl DecoderConfig {
    /// Desk-scale defaults: small enough to train on a CPU.
    pub fn desk(n: usize) -> Self {
        DecoderConfig {
            layers: 4,
            width: 128,
            heads: 4,
            vocab: crate::dsl::VOCAB_SIZE,
            max_seq: 512,
            n,
            head_sharing: true,
            confidence_heads: false,
            grid: 32,
            patch: 2,
            extent: 6.4,
        }
    }

    /// Full-scale configuration used for parameter-count reproduction.
    pub fn full_scale(n: usize) -> Self {
        DecoderConfig {
            layers: 8,
            width: 512,
            heads: 8,
            vocab: crate::dsl::VOCAB_SIZE,
            max_seq: 1024,
            n,
            head_sharing: true,
            confidence_heads: false,
            grid: 32,
            patch: 2,
            extent: 12.8,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.layers % 2 != 0 {
            return Err(ModelError::InvalidConfig("layers must be positive and even".into()));
        }
        if self.width % self.heads != 0 {
            return Err(ModelError::InvalidConfig("width must be divisible by heads".into()));
        }
        if self.n < 1 {
            return Err(ModelError::InvalidConfig("n must be >= 1".into()));
        }
        if self.patch == 0 || self.grid % self.patch != 0 {
            return Err(ModelError::InvalidConfig("grid must be a multiple of patch".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.layers / 2
    }

    pub fn context_rows(&self) -> usize {
        let side = self.grid / self.patch;
        side * side
    }

    fn ffn_hidden(&self) -> usize {
        2 * self.width
    }
}

/// Head indices carrying their own parameter sets.
pub(crate) fn head_tag(cfg: &DecoderConfig, kind: &str, i: usize) -> String {
    if cfg.head_sharing {
        kind.to_string()
    } else {
        format!("{kind}.h{i}")
    }
}

pub struct Model {
    pub config: DecoderConfig,
    pub store: ParamStore,
}

impl Model {
    pub fn new(config: DecoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = substream(seed, "init", 0);
        init_params(&config, &mut store, &mut rng);
        encoder::init_encoder(&mut store, config.grid, config.patch, config.width, &mut rng);
        Ok(Model { config, store })
    }

    pub fn from_parts(config: DecoderConfig, store: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Model { config, store })
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir).map_err(|e| ModelError::Other(format!("{}: {e}", dir.display())))?;
        let cfg_path = dir.join("model.json");
        fs::write(&cfg_path, serde_json::to_string_pretty(&self.config).unwrap())
            .map_err(|e| ModelError::Other(format!("{}: {e}", cfg_path.display())))?;
        checkpoint::save(&self.store, &dir.join("model.fssc"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let cfg_path = dir.join("model.json");
        let text = fs::read_to_string(&cfg_path)
            .map_err(|e| ModelError::Other(format!("{}: {e}", cfg_path.display())))?;
        let config: DecoderConfig =
            serde_json::from_str(&text).map_err(|e| ModelError::Other(format!("model.json: {e}")))?;
        let store = checkpoint::load(&dir.join("model.fssc"))?;
        Model::from_parts(config, store)
    }

    pub fn count_params(&self) -> ParamBreakdown {
        let s = &self.store;
        let decoder = s.num_elements("decoder.");
        let token_heads = s.num_elements("token_head");
        let conf_heads = s.num_elements("conf_head");
        let projection = s.num_elements("proj");
        let encoder = s.num_elements("encoder.");
        ParamBreakdown { decoder, token_heads, conf_heads, projection, encoder }
    }
}

/// Exact integer parameter counts per component.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub decoder: usize,
    pub token_heads: usize,
    pub conf_heads: usize,
    pub projection: usize,
    pub encoder: usize,
}

impl ParamBreakdown {
    /// Language-decoder parameters (excludes the context encoder), the
    /// quantity reported as "Param" in benchmarks.
    pub fn decoder_side(&self) -> usize {
        self.decoder + self.token_heads + self.conf_heads + self.projection
    }

    /// Head-assembly parameters: token + confidence heads + projection.
    pub fn head_assembly(&self) -> usize {
        self.token_heads + self.conf_heads + self.projection
    }

    pub fn total(&self) -> usize {
        self.decoder_side() + self.encoder
    }
}

fn init_params(cfg: &DecoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let d = cfg.width;
    let std = 0.02;
    store.insert_normal("decoder.tok_emb", &[cfg.vocab, d], std, rng);
    store.insert_normal("decoder.pos_emb", &[cfg.max_seq, d], std, rng);
    for b in 0..cfg.blocks() {
        let p = format!("decoder.block{b}");
        for ln in ["ln1", "ln2", "ln3"] {
            store.insert_ones(&format!("{p}.{ln}.g"), &[d]);
            store.insert_zeros(&format!("{p}.{ln}.b"), &[d]);
        }
        for attn in ["self", "cross"] {
            for w in ["wq", "wk", "wv", "wo"] {
                store.insert_normal(&format!("{p}.{attn}.{w}"), &[d, d], std, rng);
            }
            for bias in ["bq", "bk", "bv", "bo"] {
                store.insert_zeros(&format!("{p}.{attn}.{bias}"), &[d]);
            }
        }
        store.insert_normal(&format!("{p}.ffn.w1"), &[d, cfg.ffn_hidden()], std, rng);
        store.insert_zeros(&format!("{p}.ffn.b1"), &[cfg.ffn_hidden()]);
        store.insert_normal(&format!("{p}.ffn.w2"), &[cfg.ffn_hidden(), d], std, rng);
        store.insert_zeros(&format!("{p}.ffn.b2"), &[d]);
    }
    store.insert_ones("decoder.ln_f.g", &[d]);
    store.insert_zeros("decoder.ln_f.b", &[d]);

    // token heads: 3 linear layers, 2 ReLU (d -> d -> d -> V)
    let token_head_ids: Vec<usize> = if cfg.head_sharing { vec![0] } else { (1..=cfg.n).collect() };
    for i in token_head_ids {
        let p = if cfg.head_sharing { "token_head".to_string() } else { format!("token_head.h{i}") };
        store.insert_normal(&format!("{p}.w1"), &[d, d], std, rng);
        store.insert_zeros(&format!("{p}.b1"), &[d]);
        store.insert_normal(&format!("{p}.w2"), &[d, d], std, rng);
        store.insert_zeros(&format!("{p}.b2"), &[d]);
        store.insert_normal(&format!("{p}.w3"), &[d, cfg.vocab], std, rng);
        store.insert_zeros(&format!("{p}.b3"), &[cfg.vocab]);
    }
    // projection module: two feed-forward blocks, each LN + 2 linear + 2 ReLU
    if cfg.n >= 2 {
        let proj_ids: Vec<usize> = if cfg.head_sharing { vec![0] } else { (2..=cfg.n).collect() };
        for i in proj_ids {
            let p = if cfg.head_sharing { "proj".to_string() } else { format!("proj.h{i}") };
            for ff in 0..2 {
                store.insert_ones(&format!("{p}.ff{ff}.ln.g"), &[d]);
                store.insert_zeros(&format!("{p}.ff{ff}.ln.b"), &[d]);
                store.insert_normal(&format!("{p}.ff{ff}.w1"), &[d, d], std, rng);
                store.insert_zeros(&format!("{p}.ff{ff}.b1"), &[d]);
                store.insert_normal(&format!("{p}.ff{ff}.w2"), &[d, d], std, rng);
                store.insert_zeros(&format!("{p}.ff{ff}.b2"), &[d]);
            }
        }
        if cfg.confidence_heads {
            let conf_ids: Vec<usize> = if cfg.head_sharing { vec![0] } else { (2..=cfg.n).collect() };
            for i in conf_ids {
                let p = if cfg.head_sharing { "conf_head".to_string() } else { format!("conf_head.h{i}") };
                store.insert_normal(&format!("{p}.w1"), &[d, d], std, rng);
                store.insert_zeros(&format!("{p}.b1"), &[d]);
                store.insert_normal(&format!("{p}.w2"), &[d, d], std, rng);
                store.insert_zeros(&format!("{p}.b2"), &[d]);
                store.insert_normal(&format!("{p}.w3"), &[d, 1], std, rng);
                store.insert_zeros(&format!("{p}.b3"), &[1]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// training-path forward (tape)
// ---------------------------------------------------------------------------

struct TapeCtx<'a> {
    tape: &'a mut Tape,
    store: &'a ParamStore,
    vars: HashMap<String, Var>,
}

impl<'a> TapeCtx<'a> {
    fn p(&mut self, name: &str) -> Result<Var, ModelError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let param = self.store.get(name)?;
        let v = self.tape.param(name, &param.shape, param.value.clone())?;
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var, ModelError> {
        let wv = self.p(w)?;
        let bv = self.p(b)?;
        let y = self.tape.matmul(x, wv)?;
        Ok(self.tape.add_row(y, bv)?)
    }

    fn affine_ln(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let y = self.tape.layer_norm(x);
        let y = self.tape.mul_row(y, g)?;
        Ok(self.tape.add_row(y, b)?)
    }
}

pub struct TrainOutput {
    /// Padded input length per scene.
    pub seq_len: usize,
    /// Per head i (1-based order): logits over the vocab, [batch*seq_len, V].
    pub head_logits: Vec<Var>,
    /// Per head i in 2..=n: confidence probabilities, [batch*seq_len, 1].
    pub head_conf: Vec<Var>,
    /// Per head: hidden states [batch*seq_len, d].
    pub head_hidden: Vec<Var>,
}

impl Model {
    /// Teacher-forced batch forward. `inputs` is row-major [batch, seq_len]
    /// padded with PAD; `contexts` holds one [M, d] tape var per scene.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        inputs: &[u32],
        batch: usize,
        seq_len: usize,
        contexts: &[Var],
    ) -> Result<TrainOutput, ModelError> {
        let cfg = &self.config;
        if seq_len > cfg.max_seq {
            return Err(ModelError::SequenceOverflow { len: seq_len, max: cfg.max_seq });
        }
        if contexts.len() != batch || inputs.len() != batch * seq_len {
            return Err(ModelError::Other("batch size mismatch".into()));
        }
        let m = cfg.context_rows();
        for &c in contexts {
            if tape.shape(c) != [m, cfg.width] {
                return Err(ModelError::ContextMismatch { got: tape.shape(c)[0], expected: m });
            }
        }
        let mut cx = TapeCtx { tape, store: &self.store, vars: HashMap::new() };
        let ids: Vec<usize> = inputs.iter().map(|&t| t as usize).collect();
        let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..seq_len).collect();
        let tok_emb = cx.p("decoder.tok_emb")?;
        let pos_emb = cx.p("decoder.pos_emb")?;
        let te = cx.tape.embedding(tok_emb, &ids)?;
        let pe = cx.tape.embedding(pos_emb, &pos_ids)?;
        let mut x = cx.tape.add(te, pe)?;
        // batch the per-scene contexts once for the cross K/V projections
        let ctx_cat = cx.tape.concat_rows(contexts)?;
        for b in 0..cfg.blocks() {
            let p = format!("decoder.block{b}");
            // self-attention
            let y = cx.affine_ln(x, &format!("{p}.ln1"))?;
            let q = cx.linear(y, &format!("{p}.self.wq"), &format!("{p}.self.bq"))?;
            let k = cx.linear(y, &format!("{p}.self.wk"), &format!("{p}.self.bk"))?;
            let v = cx.linear(y, &format!("{p}.self.wv"), &format!("{p}.self.bv"))?;
            let mut parts = Vec::with_capacity(batch);
            for s in 0..batch {
                let qs = cx.tape.slice_rows(q, s * seq_len, seq_len)?;
                let ks = cx.tape.slice_rows(k, s * seq_len, seq_len)?;
                let vs = cx.tape.slice_rows(v, s * seq_len, seq_len)?;
                parts.push(cx.tape.attention(qs, ks, vs, cfg.heads, true, 0)?);
            }
            let a = cx.tape.concat_rows(&parts)?;
            let a = cx.linear(a, &format!("{p}.self.wo"), &format!("{p}.self.bo"))?;
            x = cx.tape.add(x, a)?;
            // cross-attention
            let y = cx.affine_ln(x, &format!("{p}.ln2"))?;
            let q = cx.linear(y, &format!("{p}.cross.wq"), &format!("{p}.cross.bq"))?;
            let kc = cx.linear(ctx_cat, &format!("{p}.cross.wk"), &format!("{p}.cross.bk"))?;
            let vc = cx.linear(ctx_cat, &format!("{p}.cross.wv"), &format!("{p}.cross.bv"))?;
            let mut parts = Vec::with_capacity(batch);
            for s in 0..batch {
                let qs = cx.tape.slice_rows(q, s * seq_len, seq_len)?;
                let ks = cx.tape.slice_rows(kc, s * m, m)?;
                let vs = cx.tape.slice_rows(vc, s * m, m)?;
                parts.push(cx.tape.attention(qs, ks, vs, cfg.heads, false, 0)?);
            }
            let a = cx.tape.concat_rows(&parts)?;
            let a = cx.linear(a, &format!("{p}.cross.wo"), &format!("{p}.cross.bo"))?;
            x = cx.tape.add(x, a)?;
            // feed-forward
            let y = cx.affine_ln(x, &format!("{p}.ln3"))?;
            let h = cx.linear(y, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"))?;
            let h = cx.tape.relu(h);
            let h = cx.linear(h, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"))?;
            x = cx.tape.add(x, h)?;
        }
        let trunk = cx.affine_ln(x, "decoder.ln_f")?;

        let mut head_hidden = vec![trunk];
        let mut head_logits = vec![token_head_tape(&mut cx, cfg, trunk, 1)?];
        let mut head_conf = Vec::new();
        for i in 2..=cfg.n {
            let prev = *head_hidden.last().unwrap();
            let h = projection_tape(&mut cx, cfg, prev, i)?;
            head_hidden.push(h);
            head_logits.push(token_head_tape(&mut cx, cfg, h, i)?);
            if cfg.confidence_heads {
                let tag = head_tag(cfg, "conf_head", i);
                let cin = conf_input_tape(&mut cx, cfg, h, *head_logits.last().unwrap())?;
                let c1 = cx.linear(cin, &format!("{tag}.w1"), &format!("{tag}.b1"))?;
                let c1 = cx.tape.relu(c1);
                let c2 = cx.linear(c1, &format!("{tag}.w2"), &format!("{tag}.b2"))?;
                let c2 = cx.tape.relu(c2);
                let c3 = cx.linear(c2, &format!("{tag}.w3"), &format!("{tag}.b3"))?;
                head_conf.push(cx.tape.sigmoid(c3));
            }
        }
        Ok(TrainOutput { seq_len, head_logits, head_conf, head_hidden })
    }
}

fn token_head_tape(cx: &mut TapeCtx, cfg: &DecoderConfig, h: Var, i: usize) -> Result<Var, ModelError> {
    let tag = head_tag(cfg, "token_head", i);
    let a = cx.linear(h, &format!("{tag}.w1"), &format!("{tag}.b1"))?;
    let a = cx.tape.relu(a);
    let a = cx.linear(a, &format!("{tag}.w2"), &format!("{tag}.b2"))?;
    let a = cx.tape.relu(a);
    cx.linear(a, &format!("{tag}.w3"), &format!("{tag}.b3"))
}

/// Confidence-head input: the projected state plus the draft token's
/// embedding, so the head knows which token it is vouching for. The token
/// choice is not differentiable, so the embedding rows enter as constants.
fn conf_input_tape(
    cx: &mut TapeCtx,
    cfg: &DecoderConfig,
    h: Var,
    logits: Var,
) -> Result<Var, ModelError> {
    let (v, d) = (cfg.vocab, cfg.width);
    let emb = cx.store.get("decoder.tok_emb")?;
    let lv = cx.tape.value(logits);
    let n_rows = lv.len() / v;
    let mut rows = vec![0.0f32; n_rows * d];
    for t in 0..n_rows {
        let row = &lv[t * v..(t + 1) * v];
        let mut am = 0;
        for (j, &x) in row.iter().enumerate() {
            if x > row[am] {
                am = j;
            }
        }
        rows[t * d..(t + 1) * d].copy_from_slice(&emb.value[am * d..(am + 1) * d]);
    }
    let c = cx.tape.constant(&[n_rows, d], rows)?;
    Ok(cx.tape.add(h, c)?)
}

fn projection_tape(cx: &mut TapeCtx, cfg: &DecoderConfig, h: Var, i: usize) -> Result<Var, ModelError> {
    let tag = head_tag(cfg, "proj", i);
    let mut x = h;
    for ff in 0..2 {
        let p = format!("{tag}.ff{ff}");
        let y = cx.affine_ln(x, &format!("{p}.ln"))?;
        let y = cx.linear(y, &format!("{p}.w1"), &format!("{p}.b1"))?;
        let y = cx.tape.relu(y);
        let y = cx.linear(y, &format!("{p}.w2"), &format!("{p}.b2"))?;
        let y = cx.tape.relu(y);
        x = cx.tape.add(x, y)?;
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// inference path (plain buffers, KV cache)
// ---------------------------------------------------------------------------

struct LayerKv {
    k: Vec<f32>,
    v: Vec<f32>,
}

/// Per-layer cached keys/values for committed positions.
pub struct KvCache {
    layers: Vec<LayerKv>,
    len: usize,
    width: usize,
}

impl KvCache {
    fn new(blocks: usize, width: usize) -> Self {
        KvCache {
            layers: (0..blocks).map(|_| LayerKv { k: Vec::new(), v: Vec::new() }).collect(),
            len: 0,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Truncates to `m` committed positions.
    pub fn rollback(&mut self, m: usize) -> Result<(), ModelError> {
        if m > self.len {
            return Err(ModelError::RollbackOutOfRange { target: m, len: self.len });
        }
        for layer in &mut self.layers {
            layer.k.truncate(m * self.width);
            layer.v.truncate(m * self.width);
        }
        self.len = m;
        Ok(())
    }
}

/// Output of one multi-token head evaluation at a single position.
pub struct MtpOutput {
    /// Token logits per head, n rows of V values.
    pub logits: Vec<Vec<f32>>,
    /// Confidences for heads 2..=n; empty when the model has none.
    pub confidences: Vec<f32>,
    /// Hidden state per head.
    pub hiddens: Vec<Vec<f32>>,
}

/// One decode session: private KV cache plus precomputed cross-attention
/// keys/values for a single scene context. Sessions over a shared frozen
/// model are independent.
pub struct Session<'m> {
    model: &'m Model,
    cache: KvCache,
    cross_kv: Vec<LayerKv>,
}

fn linear_det(x: &[f32], rows: usize, w: &[f32], b: &[f32], d_in: usize, d_out: usize) -> Vec<f32> {
    let mut out = vec![0.0; rows * d_out];
    kernels::gemm_det(rows, d_in, d_out, x, w, &mut out);
    for r in 0..rows {
        for c in 0..d_out {
            out[r * d_out + c] += b[c];
        }
    }
    out
}

impl<'m> Session<'m> {
    /// `context` is the encoder output, M * d row-major.
    pub fn new(model: &'m Model, context: &[f32]) -> Result<Self, ModelError> {
        let cfg = &model.config;
        let m = cfg.context_rows();
        let d = cfg.width;
        if context.len() != m * d {
            return Err(ModelError::ContextMismatch { got: context.len() / d.max(1), expected: m });
        }
        let mut cross_kv = Vec::with_capacity(cfg.blocks());
        for b in 0..cfg.blocks() {
            let p = format!("decoder.block{b}");
            let wk = model.store.get(&format!("{p}.cross.wk"))?;
            let bk = model.store.get(&format!("{p}.cross.bk"))?;
            let wv = model.store.get(&format!("{p}.cross.wv"))?;
            let bv = model.store.get(&format!("{p}.cross.bv"))?;
            cross_kv.push(LayerKv {
                k: linear_det(context, m, &wk.value, &bk.value, d, d),
                v: linear_det(context, m, &wv.value, &bv.value, d, d),
            });
        }
        Ok(Session { model, cache: KvCache::new(cfg.blocks(), d), cross_kv })
    }

    pub fn position(&self) -> usize {
        self.cache.len()
    }

    pub fn rollback(&mut self, m: usize) -> Result<(), ModelError> {
        self.cache.rollback(m)
    }

    pub fn model_config(&self) -> &DecoderConfig {
        &self.model.config
    }

    /// Head-1 logits alone, for verification.
    pub fn verifier_logits(&self, f: &[f32]) -> Result<Vec<f32>, ModelError> {
        self.token_head(f, 1)
    }

    fn ln(&self, x: &[f32], rows: usize, prefix: &str) -> Result<Vec<f32>, ModelError> {
        let d = self.model.config.width;
        let g = &self.model.store.get(&format!("{prefix}.g"))?.value;
        let b = &self.model.store.get(&format!("{prefix}.b"))?.value;
        let mut out = vec![0.0; rows * d];
        kernels::layer_norm_rows(x, rows, d, &mut out);
        for r in 0..rows {
            for c in 0..d {
                out[r * d + c] = out[r * d + c] * g[c] + b[c];
            }
        }
        Ok(out)
    }

    fn lin(&self, x: &[f32], rows: usize, w: &str, b: &str) -> Result<Vec<f32>, ModelError> {
        let wp = self.model.store.get(w)?;
        let bp = self.model.store.get(b)?;
        Ok(linear_det(x, rows, &wp.value, &bp.value, wp.shape[0], wp.shape[1]))
    }

    /// Processes `tokens` in one pass with causal masking against the cache,
    /// appends their K/V, and returns one post-final-layer-norm hidden state
    /// per new position.
    pub fn forward_tokens(&mut self, tokens: &[u32]) -> Result<Vec<Vec<f32>>, ModelError> {
        let cfg = &self.model.config;
        let d = cfg.width;
        let t = tokens.len();
        let offset = self.cache.len();
        if offset + t > cfg.max_seq {
            return Err(ModelError::SequenceOverflow { len: offset + t, max: cfg.max_seq });
        }
        let tok_emb = self.model.store.get("decoder.tok_emb")?;
        let pos_emb = self.model.store.get("decoder.pos_emb")?;
        let mut x = vec![0.0f32; t * d];
        for (r, &tok) in tokens.iter().enumerate() {
            let tok = tok as usize;
            if tok >= cfg.vocab {
                return Err(ModelError::Other(format!("token id {tok} outside vocabulary")));
            }
            for c in 0..d {
                x[r * d + c] = tok_emb.value[tok * d + c] + pos_emb.value[(offset + r) * d + c];
            }
        }
        let m = cfg.context_rows();
        for b in 0..cfg.blocks() {
            let p = format!("decoder.block{b}");
            // self-attention against cache + new tokens
            let y = self.ln(&x, t, &format!("{p}.ln1"))?;
            let q = self.lin(&y, t, &format!("{p}.self.wq"), &format!("{p}.self.bq"))?;
            let k_new = self.lin(&y, t, &format!("{p}.self.wk"), &format!("{p}.self.bk"))?;
            let v_new = self.lin(&y, t, &format!("{p}.self.wv"), &format!("{p}.self.bv"))?;
            let layer = &mut self.cache.layers[b];
            layer.k.extend_from_slice(&k_new);
            layer.v.extend_from_slice(&v_new);
            let lk = offset + t;
            let mut attn = vec![0.0; t * d];
            kernels::attention_forward(&q, &layer.k, &layer.v, t, lk, d, cfg.heads, true, offset, &mut attn);
            let o = self.lin(&attn, t, &format!("{p}.self.wo"), &format!("{p}.self.bo"))?;
            for i in 0..t * d {
                x[i] += o[i];
            }
            // cross-attention against the precomputed context K/V
            let y = self.ln(&x, t, &format!("{p}.ln2"))?;
            let q = self.lin(&y, t, &format!("{p}.cross.wq"), &format!("{p}.cross.bq"))?;
            let mut attn = vec![0.0; t * d];
            kernels::attention_forward(
                &q,
                &self.cross_kv[b].k,
                &self.cross_kv[b].v,
                t,
                m,
                d,
                cfg.heads,
                false,
                0,
                &mut attn,
            );
            let o = self.lin(&attn, t, &format!("{p}.cross.wo"), &format!("{p}.cross.bo"))?;
            for i in 0..t * d {
                x[i] += o[i];
            }
            // feed-forward
            let y = self.ln(&x, t, &format!("{p}.ln3"))?;
            let h = self.lin(&y, t, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"))?;
            let h: Vec<f32> = h.iter().map(|&v| v.max(0.0)).collect();
            let h = self.lin(&h, t, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"))?;
            for i in 0..t * d {
                x[i] += h[i];
            }
        }
        self.cache.len += t;
        let out = self.ln(&x, t, "decoder.ln_f")?;
        Ok(out.chunks(d).map(|c| c.to_vec()).collect())
    }

    /// Evaluates the head assembly at a single hidden state.
    pub fn mtp_heads(&self, f: &[f32]) -> Result<MtpOutput, ModelError> {
        let cfg = &self.model.config;
        if f.len() != cfg.width {
            return Err(ModelError::Other(format!(
                "hidden state has {} values, expected width {}",
                f.len(),
                cfg.width
            )));
        }
        let mut hiddens = vec![f.to_vec()];
        let mut logits = vec![self.token_head(f, 1)?];
        let mut confidences = Vec::new();
        for i in 2..=cfg.n {
            let prev = hiddens.last().unwrap().clone();
            let h = self.projection(&prev, i)?;
            logits.push(self.token_head(&h, i)?);
            if cfg.confidence_heads {
                let last = logits.last().unwrap();
                let mut draft = 0;
                for (j, &x) in last.iter().enumerate() {
                    if x > last[draft] {
                        draft = j;
                    }
                }
                confidences.push(self.confidence(&h, draft, i)?);
            }
            hiddens.push(h);
        }
        Ok(MtpOutput { logits, confidences, hiddens })
    }

    fn token_head(&self, h: &[f32], i: usize) -> Result<Vec<f32>, ModelError> {
        let tag = head_tag(&self.model.config, "token_head", i);
        let a = self.lin(h, 1, &format!("{tag}.w1"), &format!("{tag}.b1"))?;
        let a: Vec<f32> = a.iter().map(|&v| v.max(0.0)).collect();
        let a = self.lin(&a, 1, &format!("{tag}.w2"), &format!("{tag}.b2"))?;
        let a: Vec<f32> = a.iter().map(|&v| v.max(0.0)).collect();
        self.lin(&a, 1, &format!("{tag}.w3"), &format!("{tag}.b3"))
    }

    /// Confidence for head `i`'s draft token; mirrors `conf_input_tape` by
    /// adding the draft token's embedding to the projected state.
    fn confidence(&self, h: &[f32], draft: usize, i: usize) -> Result<f32, ModelError> {
        let cfg = &self.model.config;
        let d = cfg.width;
        let emb = self.model.store.get("decoder.tok_emb")?;
        let mut x = h.to_vec();
        for (xi, e) in x.iter_mut().zip(&emb.value[draft * d..(draft + 1) * d]) {
            *xi += e;
        }
        let tag = head_tag(cfg, "conf_head", i);
        let a = self.lin(&x, 1, &format!("{tag}.w1"), &format!("{tag}.b1"))?;
        let a: Vec<f32> = a.iter().map(|&v| v.max(0.0)).collect();
        let a = self.lin(&a, 1, &format!("{tag}.w2"), &format!("{tag}.b2"))?;
        let a: Vec<f32> = a.iter().map(|&v| v.max(0.0)).collect();
        let z = self.lin(&a, 1, &format!("{tag}.w3"), &format!("{tag}.b3"))?[0];
        let c = 1.0 / (1.0 + (-z).exp());
        // keep strictly inside (0, 1)
        Ok(c.clamp(1e-7, 1.0 - 1e-7))
    }

    fn projection(&self, h: &[f32], i: usize) -> Result<Vec<f32>, ModelError> {
        let tag = head_tag(&self.model.config, "proj", i);
        let mut x = h.to_vec();
        for ff in 0..2 {
            let p = format!("{tag}.ff{ff}");
            let y = self.ln(&x, 1, &format!("{p}.ln"))?;
            let y = self.lin(&y, 1, &format!("{p}.w1"), &format!("{p}.b1"))?;
            let y: Vec<f32> = y.iter().map(|&v| v.max(0.0)).collect();
            let y = self.lin(&y, 1, &format!("{p}.w2"), &format!("{p}.b2"))?;
            for (xi, yi) in x.iter_mut().zip(y) {
                *xi += yi.max(0.0);
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny_config(n: usize, conf: bool) -> DecoderConfig {
        DecoderConfig {
            layers: 2,
            width: 16,
            heads: 2,
            vocab: crate::dsl::VOCAB_SIZE,
            max_seq: 64,
            n,
            head_sharing: true,
            confidence_heads: conf,
            grid: 4,
            patch: 1,
            extent: 6.4,
        }
    }

    fn random_context(cfg: &DecoderConfig, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cfg.context_rows() * cfg.width).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn feeding_start_yields_one_state() {
        let model = Model::new(tiny_config(1, false), 0).unwrap();
        let ctx = random_context(&model.config, 1);
        let mut s = Session::new(&model, &ctx).unwrap();
        let h = s.forward_tokens(&[crate::dsl::START]).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(s.position(), 1);
    }

    #[test]
    fn cache_equivalence_chunked_vs_monolithic() {
        let model = Model::new(tiny_config(2, false), 3).unwrap();
        let ctx = random_context(&model.config, 2);
        let tokens = [1u32, 3, 10, 11, 12, 13, 14, 15, 16, 17, 2];
        let mut all = Session::new(&model, &ctx).unwrap();
        let hidden_all = all.forward_tokens(&tokens).unwrap();
        let mut inc = Session::new(&model, &ctx).unwrap();
        let mut hidden_inc = Vec::new();
        for chunk in tokens.chunks(3) {
            hidden_inc.extend(inc.forward_tokens(chunk).unwrap());
        }
        for (a, b) in hidden_all.iter().zip(&hidden_inc) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn one_at_a_time_matches_bitwise() {
        let model = Model::new(tiny_config(1, false), 4).unwrap();
        let ctx = random_context(&model.config, 3);
        let tokens = [1u32, 3, 10, 11, 12];
        let mut bulk = Session::new(&model, &ctx).unwrap();
        let hb = bulk.forward_tokens(&tokens).unwrap();
        let mut single = Session::new(&model, &ctx).unwrap();
        for (i, &t) in tokens.iter().enumerate() {
            let h = single.forward_tokens(&[t]).unwrap();
            assert_eq!(
                h[0].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                hb[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "position {i}"
            );
        }
    }

    #[test]
    fn rollback_then_replay_is_identical() {
        let model = Model::new(tiny_config(2, false), 5).unwrap();
        let ctx = random_context(&model.config, 4);
        let mut s = Session::new(&model, &ctx).unwrap();
        s.forward_tokens(&[1, 3, 10]).unwrap();
        let h1 = s.forward_tokens(&[11, 12]).unwrap();
        s.rollback(3).unwrap();
        let h2 = s.forward_tokens(&[11, 12]).unwrap();
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert!(s.rollback(99).is_err());
    }

    #[test]
    fn causality_under_suffix_perturbation() {
        let model = Model::new(tiny_config(1, false), 6).unwrap();
        let ctx = random_context(&model.config, 5);
        let mut a = Session::new(&model, &ctx).unwrap();
        let ha = a.forward_tokens(&[1, 3, 10, 11]).unwrap();
        let mut b = Session::new(&model, &ctx).unwrap();
        let hb = b.forward_tokens(&[1, 3, 10, 200]).unwrap();
        for i in 0..3 {
            assert_eq!(
                ha[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                hb[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "position {i} changed"
            );
        }
        assert_ne!(ha[3], hb[3]);
    }

    #[test]
    fn mtp_head_counts() {
        let m1 = Model::new(tiny_config(1, false), 0).unwrap();
        let ctx = random_context(&m1.config, 0);
        let mut s = Session::new(&m1, &ctx).unwrap();
        let h = s.forward_tokens(&[1]).unwrap();
        let out = s.mtp_heads(&h[0]).unwrap();
        assert_eq!(out.logits.len(), 1);
        assert!(out.confidences.is_empty());

        let m8 = Model::new(tiny_config(8, true), 0).unwrap();
        let ctx = random_context(&m8.config, 0);
        let mut s = Session::new(&m8, &ctx).unwrap();
        let h = s.forward_tokens(&[1]).unwrap();
        let out = s.mtp_heads(&h[0]).unwrap();
        assert_eq!(out.logits.len(), 8);
        assert_eq!(out.confidences.len(), 7);
        for &c in &out.confidences {
            assert!(c > 0.0 && c < 1.0);
        }
    }

    #[test]
    fn shared_head_param_invariance() {
        let count = |n: usize, sharing: bool| {
            let mut cfg = tiny_config(n, true);
            cfg.head_sharing = sharing;
            Model::new(cfg, 0).unwrap().count_params().head_assembly()
        };
        let shared: Vec<usize> = [2, 8, 10].iter().map(|&n| count(n, true)).collect();
        assert_eq!(shared[0], shared[1]);
        assert_eq!(shared[1], shared[2]);
        let unshared: Vec<usize> = [2, 8, 10].iter().map(|&n| count(n, false)).collect();
        assert!(unshared[0] < unshared[1] && unshared[1] < unshared[2]);
        // linear growth: equal per-head increments
        let per_head_a = (unshared[1] - unshared[0]) / 6;
        let per_head_b = (unshared[2] - unshared[1]) / 2;
        assert_eq!(per_head_a, per_head_b);
    }

    #[test]
    fn single_linear_param_count() {
        let model = Model::new(tiny_config(1, false), 0).unwrap();
        let w = model.store.get("token_head.w3").unwrap();
        let b = model.store.get("token_head.b3").unwrap();
        assert_eq!(w.value.len() + b.value.len(), 16 * crate::dsl::VOCAB_SIZE + crate::dsl::VOCAB_SIZE);
    }

    #[test]
    fn full_scale_param_ordering() {
        let ntp = Model::new(DecoderConfig::full_scale(1), 0).unwrap().count_params();
        let ssd = Model::new(DecoderConfig::full_scale(8), 0).unwrap().count_params();
        let cgd = {
            let mut c = DecoderConfig::full_scale(8);
            c.confidence_heads = true;
            Model::new(c, 0).unwrap().count_params()
        };
        let unshared = {
            let mut c = DecoderConfig::full_scale(8);
            c.head_sharing = false;
            Model::new(c, 0).unwrap().count_params()
        };
        let (a, b, c, d) =
            (ntp.decoder_side(), ssd.decoder_side(), cgd.decoder_side(), unshared.decoder_side());
        assert!(a < b && b < c && c < d, "{a} {b} {c} {d}");
        // within 10% of the reference totals
        for (got, want) in [(a, 14.00e6), (b, 15.05e6), (c, 16.10e6), (d, 23.67e6)] {
            let rel = (got as f64 - want) / want;
            assert!(rel.abs() < 0.10, "{got} vs {want}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let model = Model::new(tiny_config(2, true), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let loaded = Model::load(dir.path()).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.store.total_elements(), model.store.total_elements());
    }

    #[test]
    fn train_and_infer_paths_agree() {
        let model = Model::new(tiny_config(2, true), 11).unwrap();
        let cfg = &model.config;
        let tokens = [1u32, 3, 10, 11, 12];
        let ctx_vals = random_context(cfg, 7);
        // inference
        let mut s = Session::new(&model, &ctx_vals).unwrap();
        let hidden = s.forward_tokens(&tokens).unwrap();
        let infer_out = s.mtp_heads(hidden.last().unwrap()).unwrap();
        // training path on the same sequence
        let mut tape = Tape::new();
        let ctx = tape.constant(&[cfg.context_rows(), cfg.width], ctx_vals.clone()).unwrap();
        let out = model.forward_train(&mut tape, &tokens, 1, tokens.len(), &[ctx]).unwrap();
        let last = tokens.len() - 1;
        let logits_train = &tape.value(out.head_logits[0])[last * cfg.vocab..(last + 1) * cfg.vocab];
        for (a, b) in logits_train.iter().zip(&infer_out.logits[0]) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        let conf_train = tape.value(out.head_conf[0])[last];
        assert!((conf_train - infer_out.confidences[0]).abs() < 1e-3);
    }
}
