use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamLayout, Params};
use super::Scalar;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Size of the unified token vocabulary the model was built for.
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            vocab_size: 0,
            max_seq_len: 640,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

/// Decoder stack plus embedding tables and output heads.
///
/// The stack itself is table-agnostic: callers embed tokens by summing rows
/// of any of the tables ([`Transformer::embed`]) and pick one head per output
/// row.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    tables: Vec<ParamId>,
    pos: ParamId,
    layers: Vec<LayerIds>,
    lnf_gain: ParamId,
    lnf_bias: ParamId,
    heads: Vec<(ParamId, ParamId)>,
}

/// One sequence inside a packed batch: rows `start..start + len`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    /// `mask[[i, j]]`: query `i` may attend key `j`.
    pub mask: Array2<bool>,
}

/// Packed input rows (token embeddings without positions) and their segments.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub emb: Array2<F>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    ln1: NormCache<F>,
    h1: Array2<F>,
    qkv: Array2<F>,
    /// Attention probabilities per (segment, head), `segment * n_heads + head`.
    probs: Vec<Array2<F>>,
    concat: Array2<F>,
    drop1: Option<Array2<F>>,
    ln2: NormCache<F>,
    h2: Array2<F>,
    ff_pre: Array2<F>,
    ff_tanh: Array2<F>,
    ff_act: Array2<F>,
    drop2: Option<Array2<F>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    layers: Vec<LayerCache<F>>,
    lnf: NormCache<F>,
    /// Final normalised hidden states, one row per input row.
    pub hidden: Array2<F>,
}

impl<F: Scalar> ForwardCache<F> {
    /// Keys and values of `layer` for rows `rows`, as `(K, V)` each `len x d_model`.
    pub(crate) fn keys_values(&self, layer: usize, d: usize) -> (ArrayView2<'_, F>, ArrayView2<'_, F>) {
        let qkv = &self.layers[layer].qkv;
        (qkv.slice(s![.., d..2 * d]), qkv.slice(s![.., 2 * d..3 * d]))
    }
}

impl Transformer {
    /// `table_rows[i]` rows for embedding table `i`, one output head per entry
    /// of `head_sizes`.
    pub fn new(config: ModelConfig, table_rows: &[usize], head_sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut layout = ParamLayout::default();
        let tables = table_rows
            .iter()
            .enumerate()
            .map(|(i, &r)| layout.matrix(format!("embed{i}"), r, d))
            .collect();
        let pos = layout.matrix("pos", config.max_seq_len, d);
        let layers = (0..config.n_layers)
            .map(|l| LayerIds {
                ln1_gain: layout.vector(format!("layer{l}.ln1.gain"), d),
                ln1_bias: layout.vector(format!("layer{l}.ln1.bias"), d),
                qkv_w: layout.matrix(format!("layer{l}.attn.qkv"), d, 3 * d),
                qkv_b: layout.vector(format!("layer{l}.attn.qkv.bias"), 3 * d),
                out_w: layout.matrix(format!("layer{l}.attn.out"), d, d),
                out_b: layout.vector(format!("layer{l}.attn.out.bias"), d),
                ln2_gain: layout.vector(format!("layer{l}.ln2.gain"), d),
                ln2_bias: layout.vector(format!("layer{l}.ln2.bias"), d),
                ff1_w: layout.matrix(format!("layer{l}.ff1"), d, config.d_ff),
                ff1_b: layout.vector(format!("layer{l}.ff1.bias"), config.d_ff),
                ff2_w: layout.matrix(format!("layer{l}.ff2"), config.d_ff, d),
                ff2_b: layout.vector(format!("layer{l}.ff2.bias"), d),
            })
            .collect();
        let lnf_gain = layout.vector("final_ln.gain", d);
        let lnf_bias = layout.vector("final_ln.bias", d);
        let heads = head_sizes
            .iter()
            .enumerate()
            .map(|(i, &v)| (layout.matrix(format!("head{i}"), d, v), layout.vector(format!("head{i}.bias"), v)))
            .collect();
        Ok(Self {
            config,
            layout,
            tables,
            pos,
            layers,
            lnf_gain,
            lnf_bias,
            heads,
        })
    }

    pub fn n_heads_out(&self) -> usize {
        self.heads.len()
    }

    pub fn head_size(&self, head: usize) -> usize {
        self.layout.entry(self.heads[head].0).cols
    }

    pub fn table_rows(&self, table: usize) -> usize {
        self.layout.entry(self.tables[table]).rows
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Sums the listed `(table, row)` embeddings for every position.
    pub fn embed<F: Scalar>(&self, params: &Params<F>, lookups: &Lookups) -> Array2<F> {
        let d = self.config.d_model;
        let n = lookups.len();
        let mut out = Array2::zeros((n, d));
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for &(table, r) in lookups.get(i) {
                let t = params.mat(&self.layout, self.tables[table as usize]);
                row += &t.row(r as usize);
            }
        }
        out
    }

    /// Scatter-adds `d_emb` rows into the table gradients.
    pub fn embed_backward<F: Scalar>(&self, grads: &mut Params<F>, lookups: &Lookups, d_emb: &Array2<F>) {
        for (i, drow) in d_emb.axis_iter(Axis(0)).enumerate() {
            for &(table, r) in lookups.get(i) {
                let mut t = grads.mat_mut(&self.layout, self.tables[table as usize]);
                let mut trow = t.row_mut(r as usize);
                trow += &drow;
            }
        }
    }

    /// Forward pass over a packed batch. Dropout is active only when `rng` is
    /// given and the configured rate is positive.
    pub fn forward<F: Scalar>(
        &self,
        params: &Params<F>,
        batch: &Batch<F>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardCache<F>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let n = batch.emb.nrows();
        if batch.emb.ncols() != d {
            return Err(Error::Invariant(format!("input width {} != d_model {d}", batch.emb.ncols())));
        }
        for seg in &batch.segments {
            if seg.len > cfg.max_seq_len {
                return Err(Error::Length {
                    len: seg.len,
                    max: cfg.max_seq_len,
                });
            }
        }
        let pos = params.mat(&self.layout, self.pos);
        let mut x = batch.emb.clone();
        for seg in &batch.segments {
            let mut rows = x.slice_mut(s![seg.start..seg.start + seg.len, ..]);
            rows += &pos.slice(s![..seg.len, ..]);
        }

        let keep = 1.0 - cfg.dropout;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let scale = F::of(1.0 / (cfg.head_dim() as f64).sqrt());
        for (l, ids) in self.layers.iter().enumerate() {
            let (h1, ln1) = layer_norm(
                &x,
                params.vec(&self.layout, ids.ln1_gain),
                params.vec(&self.layout, ids.ln1_bias),
            );
            let mut qkv = h1.dot(&params.mat(&self.layout, ids.qkv_w));
            qkv += &params.vec(&self.layout, ids.qkv_b);
            let mut concat = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(batch.segments.len() * cfg.n_heads);
            for seg in &batch.segments {
                let r = seg.start..seg.start + seg.len;
                for h in 0..cfg.n_heads {
                    let c = h * cfg.head_dim()..(h + 1) * cfg.head_dim();
                    let q = qkv.slice(s![r.clone(), c.clone()]);
                    let k = qkv.slice(s![r.clone(), d + c.start..d + c.end]);
                    let v = qkv.slice(s![r.clone(), 2 * d + c.start..2 * d + c.end]);
                    let mut a = Array2::zeros((seg.len, seg.len));
                    general_mat_mul(scale, &q, &k.t(), F::zero(), &mut a);
                    masked_softmax_rows(&mut a, &seg.mask);
                    let mut o = concat.slice_mut(s![r.clone(), c.clone()]);
                    general_mat_mul(F::one(), &a, &v, F::zero(), &mut o);
                    probs.push(a);
                }
            }
            let mut attn = concat.dot(&params.mat(&self.layout, ids.out_w));
            attn += &params.vec(&self.layout, ids.out_b);
            let drop1 = dropout_mask(n, d, keep, &mut rng);
            if let Some(m) = &drop1 {
                attn *= m;
            }
            x += &attn;

            let (h2, ln2) = layer_norm(
                &x,
                params.vec(&self.layout, ids.ln2_gain),
                params.vec(&self.layout, ids.ln2_bias),
            );
            let mut ff_pre = h2.dot(&params.mat(&self.layout, ids.ff1_w));
            ff_pre += &params.vec(&self.layout, ids.ff1_b);
            let ff_tanh = ff_pre.mapv(gelu_tanh);
            let mut ff_act = ff_tanh.clone();
            Zip::from(&mut ff_act)
                .and(&ff_pre)
                .for_each(|t, &x| *t = F::of(0.5) * x * (F::one() + *t));
            let mut ff = ff_act.dot(&params.mat(&self.layout, ids.ff2_w));
            ff += &params.vec(&self.layout, ids.ff2_b);
            let drop2 = dropout_mask(n, d, keep, &mut rng);
            if let Some(m) = &drop2 {
                ff *= m;
            }
            x += &ff;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("output of layer {l}")));
            }
            layers.push(LayerCache {
                ln1,
                h1,
                qkv,
                probs,
                concat,
                drop1,
                ln2,
                h2,
                ff_pre,
                ff_tanh,
                ff_act,
                drop2,
            });
        }
        let (hidden, lnf) = layer_norm(
            &x,
            params.vec(&self.layout, self.lnf_gain),
            params.vec(&self.layout, self.lnf_bias),
        );
        Ok(ForwardCache { layers, lnf, hidden })
    }

    /// Logits of `head` for the selected hidden rows.
    pub fn head_logits<F: Scalar>(&self, params: &Params<F>, hidden: ArrayView2<'_, F>, head: usize) -> Array2<F> {
        let (w, b) = self.heads[head];
        let mut logits = hidden.dot(&params.mat(&self.layout, w));
        logits += &params.vec(&self.layout, b);
        logits
    }

    /// Logits of every position for one sequence: the plain single-sequence
    /// entry point.
    pub fn forward_logits<F: Scalar>(
        &self,
        params: &Params<F>,
        input_embeddings: &Array2<F>,
        mask: &Array2<bool>,
        head: usize,
    ) -> Result<Array2<F>> {
        let t = input_embeddings.nrows();
        if mask.dim() != (t, t) {
            return Err(Error::Invariant("mask shape does not match the input".into()));
        }
        if (0..t).any(|i| !mask[[i, i]]) {
            return Err(Error::Invariant("attention mask must be reflexive".into()));
        }
        let batch = Batch {
            emb: input_embeddings.clone(),
            segments: vec![Segment {
                start: 0,
                len: t,
                mask: mask.clone(),
            }],
        };
        let cache = self.forward(params, &batch, None)?;
        Ok(self.head_logits(params, cache.hidden.view(), head))
    }

    /// Backpropagates head-logit gradients through the stack, accumulating
    /// into `grads`. Each `HeadGrad` names a head, the hidden rows it was
    /// applied to and the gradient of the loss with respect to its logits.
    /// Returns the gradient with respect to `batch.emb`.
    pub fn backward<F: Scalar>(
        &self,
        params: &Params<F>,
        batch: &Batch<F>,
        cache: &ForwardCache<F>,
        head_grads: &[HeadGrad<F>],
        grads: &mut Params<F>,
    ) -> Array2<F> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let n = batch.emb.nrows();
        let lay = &self.layout;
        let one = F::one();

        let mut d_hidden = Array2::<F>::zeros((n, d));
        for hg in head_grads {
            let (w, b) = self.heads[hg.head];
            let h_sel = cache.hidden.select(Axis(0), &hg.rows);
            general_mat_mul(one, &h_sel.t(), &hg.dlogits, one, &mut grads.mat_mut(lay, w));
            grads.vec_mut(lay, b).scaled_add(one, &hg.dlogits.sum_axis(Axis(0)));
            let dh = hg.dlogits.dot(&params.mat(lay, w).t());
            for (i, &r) in hg.rows.iter().enumerate() {
                let mut row = d_hidden.row_mut(r);
                row += &dh.row(i);
            }
        }

        let mut dx = layer_norm_backward(&d_hidden, &cache.lnf, params.vec(lay, self.lnf_gain), grads, lay, self.lnf_gain, self.lnf_bias);
        let scale = F::of(1.0 / (cfg.head_dim() as f64).sqrt());

        for (ids, lc) in self.layers.iter().zip(&cache.layers).rev() {
            // feed-forward branch
            let mut dff = dx.clone();
            if let Some(m) = &lc.drop2 {
                dff *= m;
            }
            general_mat_mul(one, &lc.ff_act.t(), &dff, one, &mut grads.mat_mut(lay, ids.ff2_w));
            grads.vec_mut(lay, ids.ff2_b).scaled_add(one, &dff.sum_axis(Axis(0)));
            let mut dpre = dff.dot(&params.mat(lay, ids.ff2_w).t());
            Zip::from(&mut dpre)
                .and(&lc.ff_pre)
                .and(&lc.ff_tanh)
                .for_each(|g, &x, &t| *g = *g * gelu_grad(x, t));
            general_mat_mul(one, &lc.h2.t(), &dpre, one, &mut grads.mat_mut(lay, ids.ff1_w));
            grads.vec_mut(lay, ids.ff1_b).scaled_add(one, &dpre.sum_axis(Axis(0)));
            let dh2 = dpre.dot(&params.mat(lay, ids.ff1_w).t());
            dx += &layer_norm_backward(&dh2, &lc.ln2, params.vec(lay, ids.ln2_gain), grads, lay, ids.ln2_gain, ids.ln2_bias);

            // attention branch
            let mut dattn = dx.clone();
            if let Some(m) = &lc.drop1 {
                dattn *= m;
            }
            general_mat_mul(one, &lc.concat.t(), &dattn, one, &mut grads.mat_mut(lay, ids.out_w));
            grads.vec_mut(lay, ids.out_b).scaled_add(one, &dattn.sum_axis(Axis(0)));
            let dconcat = dattn.dot(&params.mat(lay, ids.out_w).t());
            let mut dqkv = Array2::<F>::zeros((n, 3 * d));
            for (si, seg) in batch.segments.iter().enumerate() {
                let r = seg.start..seg.start + seg.len;
                for h in 0..cfg.n_heads {
                    let c = h * cfg.head_dim()..(h + 1) * cfg.head_dim();
                    let a = &lc.probs[si * cfg.n_heads + h];
                    let q = lc.qkv.slice(s![r.clone(), c.clone()]);
                    let k = lc.qkv.slice(s![r.clone(), d + c.start..d + c.end]);
                    let v = lc.qkv.slice(s![r.clone(), 2 * d + c.start..2 * d + c.end]);
                    let d_o = dconcat.slice(s![r.clone(), c.clone()]);
                    let mut da = d_o.dot(&v.t());
                    general_mat_mul(one, &a.t(), &d_o, F::zero(), &mut dqkv.slice_mut(s![r.clone(), 2 * d + c.start..2 * d + c.end]));
                    // softmax backward, row-wise
                    for (mut drow, arow) in da.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))) {
                        let dot = drow.iter().zip(arow.iter()).fold(F::zero(), |acc, (&g, &p)| acc + g * p);
                        Zip::from(&mut drow).and(&arow).for_each(|g, &p| *g = p * (*g - dot));
                    }
                    general_mat_mul(scale, &da, &k, F::zero(), &mut dqkv.slice_mut(s![r.clone(), c.clone()]));
                    general_mat_mul(scale, &da.t(), &q, F::zero(), &mut dqkv.slice_mut(s![r.clone(), d + c.start..d + c.end]));
                }
            }
            general_mat_mul(one, &lc.h1.t(), &dqkv, one, &mut grads.mat_mut(lay, ids.qkv_w));
            grads.vec_mut(lay, ids.qkv_b).scaled_add(one, &dqkv.sum_axis(Axis(0)));
            let dh1 = dqkv.dot(&params.mat(lay, ids.qkv_w).t());
            dx += &layer_norm_backward(&dh1, &lc.ln1, params.vec(lay, ids.ln1_gain), grads, lay, ids.ln1_gain, ids.ln1_bias);
        }

        let mut dpos = grads.mat_mut(lay, self.pos);
        for seg in &batch.segments {
            let mut rows = dpos.slice_mut(s![..seg.len, ..]);
            rows += &dx.slice(s![seg.start..seg.start + seg.len, ..]);
        }
        dx
    }

    /// Parameter handles used by the incremental decoder.
    pub(crate) fn ids(&self) -> TransformerIds<'_> {
        TransformerIds { t: self }
    }
}

/// Gradient of the loss with respect to one head's logits.
#[derive(Debug, Clone)]
pub struct HeadGrad<F> {
    pub head: usize,
    pub rows: Vec<usize>,
    pub dlogits: Array2<F>,
}

/// Per-position lists of `(table, row)` lookups, summed to form the input.
#[derive(Debug, Clone, Default)]
pub struct Lookups {
    offsets: Vec<usize>,
    items: Vec<(u32, u32)>,
}

impl Lookups {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, items: &[(u32, u32)]) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.items.extend_from_slice(items);
        self.offsets.push(self.items.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[(u32, u32)] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn extend(&mut self, other: &Lookups) {
        for i in 0..other.len() {
            self.push(other.get(i));
        }
    }
}

pub(crate) struct TransformerIds<'a> {
    t: &'a Transformer,
}

impl TransformerIds<'_> {
    pub fn pos(&self) -> ParamId {
        self.t.pos
    }
    pub fn final_norm(&self) -> (ParamId, ParamId) {
        (self.t.lnf_gain, self.t.lnf_bias)
    }
    pub fn ln1(&self, l: usize) -> (ParamId, ParamId) {
        (self.t.layers[l].ln1_gain, self.t.layers[l].ln1_bias)
    }
    pub fn ln2(&self, l: usize) -> (ParamId, ParamId) {
        (self.t.layers[l].ln2_gain, self.t.layers[l].ln2_bias)
    }
    pub fn qkv(&self, l: usize) -> (ParamId, ParamId) {
        (self.t.layers[l].qkv_w, self.t.layers[l].qkv_b)
    }
    pub fn out(&self, l: usize) -> (ParamId, ParamId) {
        (self.t.layers[l].out_w, self.t.layers[l].out_b)
    }
    pub fn ff1(&self, l: usize) -> (ParamId, ParamId) {
        (self.t.layers[l].ff1_w, self.t.layers[l].ff1_b)
    }
    pub fn ff2(&self, l: usize) -> (ParamId, ParamId) {
        (self.t.layers[l].ff2_w, self.t.layers[l].ff2_b)
    }
}

pub(crate) fn layer_norm<F: Scalar>(
    x: &Array2<F>,
    gain: ndarray::ArrayView1<'_, F>,
    bias: ndarray::ArrayView1<'_, F>,
) -> (Array2<F>, NormCache<F>) {
    let d = x.ncols();
    let inv_d = F::of(1.0 / d as f64);
    let eps = F::of(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() * inv_d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(F::zero(), |a, &v| a + v * v) * inv_d;
        *r = F::one() / (var + eps).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let mut y = &xhat * &gain;
    y += &bias;
    (y, NormCache { xhat, rstd })
}


fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    gain: ndarray::ArrayView1<'_, F>,
    grads: &mut Params<F>,
    layout: &ParamLayout,
    gain_id: ParamId,
    bias_id: ParamId,
) -> Array2<F> {
    let one = F::one();
    grads.vec_mut(layout, gain_id).scaled_add(one, &(dy * &cache.xhat).sum_axis(Axis(0)));
    grads.vec_mut(layout, bias_id).scaled_add(one, &dy.sum_axis(Axis(0)));
    let d = dy.ncols();
    let inv_d = F::of(1.0 / d as f64);
    let mut dx = dy * &gain;
    for ((mut row, xh), &rs) in dx.axis_iter_mut(Axis(0)).zip(cache.xhat.axis_iter(Axis(0))).zip(cache.rstd.iter()) {
        let mean_g = row.sum() * inv_d;
        let mean_gx = row.iter().zip(xh.iter()).fold(F::zero(), |a, (&g, &x)| a + g * x) * inv_d;
        Zip::from(&mut row).and(&xh).for_each(|g, &x| *g = rs * (*g - mean_g - x * mean_gx));
    }
    dx
}

/// Row-wise softmax over allowed entries; disallowed entries become exactly 0.
pub(crate) fn masked_softmax_rows<F: Scalar>(scores: &mut Array2<F>, mask: &Array2<bool>) {
    for (mut row, mrow) in scores.axis_iter_mut(Axis(0)).zip(mask.axis_iter(Axis(0))) {
        let mut max = F::neg_infinity();
        for (&v, &m) in row.iter().zip(mrow.iter()) {
            if m && v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for (v, &m) in row.iter_mut().zip(mrow.iter()) {
            *v = if m { (*v - max).exp() } else { F::zero() };
            sum += *v;
        }
        let inv = F::one() / sum;
        row.mapv_inplace(|v| v * inv);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    F::of(0.5) * x * (F::one() + gelu_tanh(x))
}

/// `tanh` of the GELU inner term, via one `exp`.
#[inline]
fn gelu_tanh<F: Scalar>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    let e = (F::of(-2.0) * u.abs()).exp();
    let t = (F::one() - e) / (F::one() + e);
    if u < F::zero() {
        -t
    } else {
        t
    }
}

/// GELU derivative given `t = gelu_tanh(x)`.
#[inline]
fn gelu_grad<F: Scalar>(x: F, t: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
}

/// Inverted-dropout multiplier; `None` outside training or at rate 0.
fn dropout_mask<F: Scalar>(n: usize, d: usize, keep: f64, rng: &mut Option<&mut dyn RngCore>) -> Option<Array2<F>> {
    if keep >= 1.0 {
        return None;
    }
    let r = rng.as_mut()?;
    let scale = F::of(1.0 / keep);
    Some(Array2::from_shape_simple_fn((n, d), || {
        if r.random::<f64>() < keep {
            scale
        } else {
            F::zero()
        }
    }))
}
