//! The emotion-embedding network: a V-A encoder (two scalar MLPs) feeding an
//! emotion injection transformer that rewrites a neutral prompt feature into
//! an emotional one.
//!
//! The transformer projects the prompt feature into its hidden space, adds a
//! learned positional embedding, runs a stack of injection blocks (pre-norm
//! self-attention, cross-attention against the valence feature, then the
//! arousal feature, then a feed-forward sublayer, each with a residual), and
//! projects back through a final LayerNorm. The network predicts a residual:
//! the output is that residual added to the input, so a zero output head
//! makes the whole map the identity. Self-attention carries no causal mask.

pub mod checkpoint;
pub mod layers;
pub mod params;

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::va::VAPoint;
use layers::{
    gelu, gelu_bwd, layernorm, layernorm_bwd, linear, linear_bwd, mha, mha_bwd, AttnMaskSpec,
    LnCache, MhaCache, MhaParams,
};
pub use params::{ConfigError, EITConfig, EITParams, ParamSet};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: String,
        got: String,
        context: &'static str,
    },
    #[error("non-finite value produced in {0}")]
    NotFinite(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// A sequence of prompt-feature vectors, (tokens, D_prompt). All entries
/// finite. The network preserves this shape end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFeature {
    data: Array2<f64>,
}

impl PromptFeature {
    pub fn new(data: Array2<f64>) -> Result<Self, NetError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(NetError::ShapeMismatch {
                expected: "at least 1x1".into(),
                got: format!("{}x{}", data.nrows(), data.ncols()),
                context: "prompt feature",
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NetError::NotFinite("prompt feature"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Encoded emotion context: one (L_e, D_model) token block per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionFeatures {
    pub e_v: Array2<f64>,
    pub e_a: Array2<f64>,
}

struct VaMlpCache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
}

struct BlockCache {
    ln1: LnCache,
    x1: Array2<f64>,
    sa: MhaCache,
    ln2: LnCache,
    x2: Array2<f64>,
    cv: MhaCache,
    ln3: LnCache,
    x3: Array2<f64>,
    ca: MhaCache,
    ln4: LnCache,
    x4: Array2<f64>,
    f1: Array2<f64>,
    g1: Array2<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    valid: usize,
    padded_input: Array2<f64>,
    v_mlp: VaMlpCache,
    a_mlp: VaMlpCache,
    e_v: Array2<f64>,
    e_a: Array2<f64>,
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
    ln_f_out: Array2<f64>,
}

fn mha_params<'a>(set: &'a ParamSet, prefix: &str) -> MhaParams<'a> {
    MhaParams {
        wq: set.get(&format!("{prefix}.wq")),
        bq: set.get(&format!("{prefix}.bq")),
        wk: set.get(&format!("{prefix}.wk")),
        bk: set.get(&format!("{prefix}.bk")),
        wv: set.get(&format!("{prefix}.wv")),
        bv: set.get(&format!("{prefix}.bv")),
        wo: set.get(&format!("{prefix}.wo")),
        bo: set.get(&format!("{prefix}.bo")),
    }
}

fn va_mlp_forward(set: &ParamSet, axis: &str, value: f64, l_e: usize, d_model: usize) -> (Array2<f64>, VaMlpCache) {
    let input = Array2::from_elem((1, 1), value);
    let pre1 = linear(&input, set.get(&format!("va_enc.{axis}.w1")), set.get(&format!("va_enc.{axis}.b1")));
    let act1 = gelu(&pre1);
    let flat = linear(&act1, set.get(&format!("va_enc.{axis}.w2")), set.get(&format!("va_enc.{axis}.b2")));
    let tokens = flat
        .into_shape((l_e, d_model))
        .expect("encoder output reshapes to (l_e, d_model)");
    (tokens, VaMlpCache { input, pre1, act1 })
}

fn va_mlp_backward(
    set: &ParamSet,
    grads: &mut ParamSet,
    axis: &str,
    cache: &VaMlpCache,
    d_tokens: &Array2<f64>,
) {
    let e_dim = d_tokens.len();
    let d_flat = d_tokens
        .to_owned()
        .into_shape((1, e_dim))
        .expect("gradient reshapes");
    let w2 = set.get(&format!("va_enc.{axis}.w2"));
    let (d_act1, dw2, db2) = linear_bwd(&cache.act1, w2, &d_flat);
    grads.accumulate(&format!("va_enc.{axis}.w2"), &dw2);
    grads.accumulate(&format!("va_enc.{axis}.b2"), &db2);
    let d_pre1 = gelu_bwd(&cache.pre1, &d_act1);
    let w1 = set.get(&format!("va_enc.{axis}.w1"));
    let (_, dw1, db1) = linear_bwd(&cache.input, w1, &d_pre1);
    grads.accumulate(&format!("va_enc.{axis}.w1"), &dw1);
    grads.accumulate(&format!("va_enc.{axis}.b1"), &db1);
}

/// Runs the two encoder MLPs. `e_v` depends only on valence, `e_a` only on
/// arousal.
pub fn encode_va(params: &EITParams, p: &VAPoint) -> EmotionFeatures {
    let c = &params.config;
    let (e_v, _) = va_mlp_forward(&params.set, "v", p.valence(), c.l_e, c.d_model);
    let (e_a, _) = va_mlp_forward(&params.set, "a", p.arousal(), c.l_e, c.d_model);
    EmotionFeatures { e_v, e_a }
}

fn block_forward(
    set: &ParamSet,
    idx: usize,
    h_prev: Array2<f64>,
    e_v: &Array2<f64>,
    e_a: &Array2<f64>,
    eps: f64,
    num_heads: usize,
    mask: AttnMaskSpec,
) -> (Array2<f64>, BlockCache) {
    let pre = format!("block{idx}");
    let g = |ln: &str, which: &str| format!("{pre}.{ln}.{which}");

    let (x1, ln1) = layernorm(&h_prev, set.get(&g("ln1", "g")), set.get(&g("ln1", "b")), eps);
    let (sa_out, sa) = mha(&x1, &x1, &mha_params(set, &format!("{pre}.self_attn")), num_heads, Some(mask));
    let h_a = &h_prev + &sa_out;

    let (x2, ln2) = layernorm(&h_a, set.get(&g("ln2", "g")), set.get(&g("ln2", "b")), eps);
    let (cv_out, cv) = mha(&x2, e_v, &mha_params(set, &format!("{pre}.cross_v")), num_heads, None);
    let h_b = &h_a + &cv_out;

    let (x3, ln3) = layernorm(&h_b, set.get(&g("ln3", "g")), set.get(&g("ln3", "b")), eps);
    let (ca_out, ca) = mha(&x3, e_a, &mha_params(set, &format!("{pre}.cross_a")), num_heads, None);
    let h_c = &h_b + &ca_out;

    let (x4, ln4) = layernorm(&h_c, set.get(&g("ln4", "g")), set.get(&g("ln4", "b")), eps);
    let f1 = linear(&x4, set.get(&format!("{pre}.ffn.w1")), set.get(&format!("{pre}.ffn.b1")));
    let g1 = gelu(&f1);
    let f2 = linear(&g1, set.get(&format!("{pre}.ffn.w2")), set.get(&format!("{pre}.ffn.b2")));
    let h_out = &h_c + &f2;

    let cache = BlockCache {
        ln1,
        x1,
        sa,
        ln2,
        x2,
        cv,
        ln3,
        x3,
        ca,
        ln4,
        x4,
        f1,
        g1,
    };
    (h_out, cache)
}

/// Backward through one block. Returns d(h_prev); emotion-context gradients
/// are accumulated into `d_e_v` / `d_e_a`.
#[allow(clippy::too_many_arguments)]
fn block_backward(
    set: &ParamSet,
    grads: &mut ParamSet,
    idx: usize,
    cache: &BlockCache,
    e_v: &Array2<f64>,
    e_a: &Array2<f64>,
    num_heads: usize,
    dh_out: &Array2<f64>,
    d_e_v: &mut Array2<f64>,
    d_e_a: &mut Array2<f64>,
) -> Array2<f64> {
    let pre = format!("block{idx}");

    // FFN sublayer.
    let w2 = set.get(&format!("{pre}.ffn.w2"));
    let (d_g1, dw2, db2) = linear_bwd(&cache.g1, w2, dh_out);
    grads.accumulate(&format!("{pre}.ffn.w2"), &dw2);
    grads.accumulate(&format!("{pre}.ffn.b2"), &db2);
    let d_f1 = gelu_bwd(&cache.f1, &d_g1);
    let w1 = set.get(&format!("{pre}.ffn.w1"));
    let (d_x4, dw1, db1) = linear_bwd(&cache.x4, w1, &d_f1);
    grads.accumulate(&format!("{pre}.ffn.w1"), &dw1);
    grads.accumulate(&format!("{pre}.ffn.b1"), &db1);
    let (d_hc_ln, dg4, db4) = layernorm_bwd(&cache.ln4, set.get(&format!("{pre}.ln4.g")), &d_x4);
    grads.accumulate(&format!("{pre}.ln4.g"), &dg4);
    grads.accumulate(&format!("{pre}.ln4.b"), &db4);
    let d_hc = dh_out + &d_hc_ln;

    // Arousal cross-attention sublayer.
    let ca_params = mha_params(set, &format!("{pre}.cross_a"));
    let gca = mha_bwd(&cache.x3, e_a, &ca_params, num_heads, &cache.ca, &d_hc);
    accumulate_mha(grads, &format!("{pre}.cross_a"), &gca);
    *d_e_a += &gca.dkv_in;
    let (d_hb_ln, dg3, db3) = layernorm_bwd(&cache.ln3, set.get(&format!("{pre}.ln3.g")), &gca.dq_in);
    grads.accumulate(&format!("{pre}.ln3.g"), &dg3);
    grads.accumulate(&format!("{pre}.ln3.b"), &db3);
    let d_hb = &d_hc + &d_hb_ln;

    // Valence cross-attention sublayer.
    let cv_params = mha_params(set, &format!("{pre}.cross_v"));
    let gcv = mha_bwd(&cache.x2, e_v, &cv_params, num_heads, &cache.cv, &d_hb);
    accumulate_mha(grads, &format!("{pre}.cross_v"), &gcv);
    *d_e_v += &gcv.dkv_in;
    let (d_ha_ln, dg2, db2_) = layernorm_bwd(&cache.ln2, set.get(&format!("{pre}.ln2.g")), &gcv.dq_in);
    grads.accumulate(&format!("{pre}.ln2.g"), &dg2);
    grads.accumulate(&format!("{pre}.ln2.b"), &db2_);
    let d_ha = &d_hb + &d_ha_ln;

    // Self-attention sublayer.
    let sa_params = mha_params(set, &format!("{pre}.self_attn"));
    let gsa = mha_bwd(&cache.x1, &cache.x1, &sa_params, num_heads, &cache.sa, &d_ha);
    accumulate_mha(grads, &format!("{pre}.self_attn"), &gsa);
    let d_x1 = &gsa.dq_in + &gsa.dkv_in;
    let (d_hp_ln, dg1, db1_) = layernorm_bwd(&cache.ln1, set.get(&format!("{pre}.ln1.g")), &d_x1);
    grads.accumulate(&format!("{pre}.ln1.g"), &dg1);
    grads.accumulate(&format!("{pre}.ln1.b"), &db1_);
    &d_ha + &d_hp_ln
}

fn accumulate_mha(grads: &mut ParamSet, prefix: &str, g: &layers::MhaGrads) {
    grads.accumulate(&format!("{prefix}.wq"), &g.dwq);
    grads.accumulate(&format!("{prefix}.bq"), &g.dbq);
    grads.accumulate(&format!("{prefix}.wk"), &g.dwk);
    grads.accumulate(&format!("{prefix}.bk"), &g.dbk);
    grads.accumulate(&format!("{prefix}.wv"), &g.dwv);
    grads.accumulate(&format!("{prefix}.bv"), &g.dbv);
    grads.accumulate(&format!("{prefix}.wo"), &g.dwo);
    grads.accumulate(&format!("{prefix}.bo"), &g.dbo);
}

/// Runs one emotion injection block on an explicit hidden state. Exposed for
/// block-level verification; `eit_forward` is the end-to-end path.
pub fn eib_forward(
    params: &EITParams,
    block_idx: usize,
    h_prev: &Array2<f64>,
    e: &EmotionFeatures,
) -> Result<Array2<f64>, NetError> {
    let c = &params.config;
    if h_prev.ncols() != c.d_model {
        return Err(NetError::ShapeMismatch {
            expected: format!("(_, {})", c.d_model),
            got: format!("({}, {})", h_prev.nrows(), h_prev.ncols()),
            context: "eib hidden state",
        });
    }
    if e.e_v.raw_dim() != e.e_a.raw_dim() || e.e_v.ncols() != c.d_model {
        return Err(NetError::ShapeMismatch {
            expected: format!("({}, {})", c.l_e, c.d_model),
            got: format!("({}, {})", e.e_v.nrows(), e.e_v.ncols()),
            context: "emotion features",
        });
    }
    let mask = AttnMaskSpec {
        key_valid: h_prev.nrows(),
        causal: c.causal_mask,
    };
    let (h, _) = block_forward(
        &params.set,
        block_idx,
        h_prev.clone(),
        &e.e_v,
        &e.e_a,
        c.ln_epsilon,
        c.num_heads,
        mask,
    );
    Ok(h)
}

/// Full forward pass: pad, project in, run the block stack, project out,
/// add the input residual, truncate back to the caller's token count.
pub fn eit_forward(params: &EITParams, f_n: &PromptFeature, p: &VAPoint) -> Result<PromptFeature, NetError> {
    let (out, _) = eit_forward_cached(params, f_n, p)?;
    Ok(out)
}

pub fn eit_forward_cached(
    params: &EITParams,
    f_n: &PromptFeature,
    p: &VAPoint,
) -> Result<(PromptFeature, ForwardCache), NetError> {
    let c = &params.config;
    if f_n.dim() != c.d_prompt || f_n.tokens() > c.l {
        return Err(NetError::ShapeMismatch {
            expected: format!("(<= {}, {})", c.l, c.d_prompt),
            got: format!("({}, {})", f_n.tokens(), f_n.dim()),
            context: "eit input",
        });
    }
    let valid = f_n.tokens();
    let mut padded = Array2::zeros((c.l, c.d_prompt));
    padded.slice_mut(ndarray::s![..valid, ..]).assign(f_n.data());

    let (e_v, v_mlp) = va_mlp_forward(&params.set, "v", p.valence(), c.l_e, c.d_model);
    let (e_a, a_mlp) = va_mlp_forward(&params.set, "a", p.arousal(), c.l_e, c.d_model);

    let mut h = linear(&padded, params.set.get("p_in.w"), params.set.get("p_in.b"));
    h += params.set.get("pos_emb");

    let mask = AttnMaskSpec {
        key_valid: valid,
        causal: c.causal_mask,
    };
    let mut blocks = Vec::with_capacity(c.num_blocks);
    for i in 0..c.num_blocks {
        let (h_next, cache) = block_forward(&params.set, i, h, &e_v, &e_a, c.ln_epsilon, c.num_heads, mask);
        blocks.push(cache);
        h = h_next;
    }
    let h_last = h;
    let (ln_f_out, ln_f) = layernorm(&h_last, params.set.get("ln_f.g"), params.set.get("ln_f.b"), c.ln_epsilon);
    let residual = linear(&ln_f_out, params.set.get("p_out.w"), params.set.get("p_out.b"));
    let full = &residual + &padded;
    let out = full.slice(ndarray::s![..valid, ..]).to_owned();
    if !out.iter().all(|v| v.is_finite()) {
        return Err(NetError::NotFinite("eit output"));
    }
    let cache = ForwardCache {
        valid,
        padded_input: padded,
        v_mlp,
        a_mlp,
        e_v,
        e_a,
        blocks,
        ln_f,
        ln_f_out,
    };
    Ok((PromptFeature { data: out }, cache))
}

/// Backward pass. `d_out` has the caller's (unpadded) token count; parameter
/// gradients are accumulated into `grads` (same layout as `params.set`).
pub fn eit_backward(
    params: &EITParams,
    cache: &ForwardCache,
    d_out: &Array2<f64>,
    grads: &mut ParamSet,
) {
    let c = &params.config;
    assert_eq!(d_out.nrows(), cache.valid, "output gradient row count");
    assert_eq!(d_out.ncols(), c.d_prompt, "output gradient width");
    let mut d_full = Array2::zeros((c.l, c.d_prompt));
    d_full.slice_mut(ndarray::s![..cache.valid, ..]).assign(d_out);

    // Output head.
    let (d_lnf_out, dpw, dpb) = linear_bwd(&cache.ln_f_out, params.set.get("p_out.w"), &d_full);
    grads.accumulate("p_out.w", &dpw);
    grads.accumulate("p_out.b", &dpb);
    let (mut dh, dgf, dbf) = layernorm_bwd(&cache.ln_f, params.set.get("ln_f.g"), &d_lnf_out);
    grads.accumulate("ln_f.g", &dgf);
    grads.accumulate("ln_f.b", &dbf);

    let mut d_e_v = Array2::zeros(cache.e_v.raw_dim());
    let mut d_e_a = Array2::zeros(cache.e_a.raw_dim());
    for (i, bc) in cache.blocks.iter().enumerate().rev() {
        dh = block_backward(
            &params.set,
            grads,
            i,
            bc,
            &cache.e_v,
            &cache.e_a,
            c.num_heads,
            &dh,
            &mut d_e_v,
            &mut d_e_a,
        );
    }

    // Input projection and positional table.
    grads.accumulate("pos_emb", &dh);
    let (_, dw_in, db_in) = linear_bwd(&cache.padded_input, params.set.get("p_in.w"), &dh);
    grads.accumulate("p_in.w", &dw_in);
    grads.accumulate("p_in.b", &db_in);

    va_mlp_backward(&params.set, grads, "v", &cache.v_mlp, &d_e_v);
    va_mlp_backward(&params.set, grads, "a", &cache.a_mlp, &d_e_a);
}

/// Mean-pools a transformed token sequence into a single vector, for
/// backends that consume a pooled embedding alongside the sequence.
pub fn mean_pool(f: &PromptFeature) -> Vec<f64> {
    let pooled = f.data().mean_axis(Axis(0)).expect("non-empty feature");
    pooled.to_vec()
}
