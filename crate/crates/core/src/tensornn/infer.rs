//! Incremental decoding with cached keys and values.
//!
//! A prefix is encoded once under its own mask; every later token attends to
//! all earlier positions. Under a prefix-causal mask no position ever attends
//! to a later one outside the prefix block, so this reproduces the full
//! forward pass exactly.

use ndarray::{s, Array1, Array2, ArrayView1};

use super::params::Params;
use super::transformer::{gelu, layer_norm, masked_softmax_rows, Batch, Segment, Transformer};
use super::Scalar;
use crate::error::{Error, Result};

pub struct InferenceSession<'m, F> {
    model: &'m Transformer,
    params: &'m Params<F>,
    keys: Vec<Array2<F>>,
    values: Vec<Array2<F>>,
    len: usize,
    hidden: Array1<F>,
}

impl<'m, F: Scalar> InferenceSession<'m, F> {
    /// Encodes `emb` (token embeddings, no positions) under `mask`.
    pub fn prefill(model: &'m Transformer, params: &'m Params<F>, emb: Array2<F>, mask: Array2<bool>) -> Result<Self> {
        let cfg = &model.config;
        let t = emb.nrows();
        if t == 0 {
            return Err(Error::Invariant("empty prefix".into()));
        }
        let batch = Batch {
            emb,
            segments: vec![Segment { start: 0, len: t, mask }],
        };
        let cache = model.forward(params, &batch, None)?;
        let cap = cfg.max_seq_len;
        let d = cfg.d_model;
        let mut keys = Vec::with_capacity(cfg.n_layers);
        let mut values = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let (k, v) = cache.keys_values(l, d);
            let mut kc = Array2::zeros((cap, d));
            let mut vc = Array2::zeros((cap, d));
            kc.slice_mut(s![..t, ..]).assign(&k);
            vc.slice_mut(s![..t, ..]).assign(&v);
            keys.push(kc);
            values.push(vc);
        }
        Ok(Self {
            model,
            params,
            keys,
            values,
            len: t,
            hidden: cache.hidden.row(t - 1).to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Final normalised hidden state of the last position.
    pub fn hidden(&self) -> ArrayView1<'_, F> {
        self.hidden.view()
    }

    pub fn logits(&self, head: usize) -> Array1<F> {
        let h = self.hidden.view().insert_axis(ndarray::Axis(0));
        self.model.head_logits(self.params, h, head).row(0).to_owned()
    }

    /// Appends one token embedding attending causally to everything before it.
    pub fn append(&mut self, emb: ArrayView1<'_, F>) -> Result<()> {
        let model = self.model;
        let cfg = &model.config;
        let lay = &model.layout;
        let p = self.params;
        let ids = model.ids();
        if self.len + 1 > cfg.max_seq_len {
            return Err(Error::Length {
                len: self.len + 1,
                max: cfg.max_seq_len,
            });
        }
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let t = self.len;
        let mut x = (&emb + &p.mat(lay, ids.pos()).row(t)).insert_axis(ndarray::Axis(0));
        let scale = F::of(1.0 / (hd as f64).sqrt());
        for l in 0..cfg.n_layers {
            let (g, b) = ids.ln1(l);
            let (h1, _) = layer_norm(&x, p.vec(lay, g), p.vec(lay, b));
            let (w, bias) = ids.qkv(l);
            let mut qkv = h1.dot(&p.mat(lay, w));
            qkv += &p.vec(lay, bias);
            self.keys[l].row_mut(t).assign(&qkv.slice(s![0, d..2 * d]));
            self.values[l].row_mut(t).assign(&qkv.slice(s![0, 2 * d..3 * d]));
            let mut concat = Array2::zeros((1, d));
            let keys = self.keys[l].slice(s![..=t, ..]);
            let values = self.values[l].slice(s![..=t, ..]);
            let all = Array2::from_elem((1, t + 1), true);
            for h in 0..cfg.n_heads {
                let c = h * hd..(h + 1) * hd;
                let q = qkv.slice(s![.., c.clone()]);
                let mut a = q.dot(&keys.slice(s![.., c.clone()]).t());
                a.mapv_inplace(|v| v * scale);
                masked_softmax_rows(&mut a, &all);
                concat
                    .slice_mut(s![.., c.clone()])
                    .assign(&a.dot(&values.slice(s![.., c])));
            }
            let (w, bias) = ids.out(l);
            let mut attn = concat.dot(&p.mat(lay, w));
            attn += &p.vec(lay, bias);
            x += &attn;
            let (g, b) = ids.ln2(l);
            let (h2, _) = layer_norm(&x, p.vec(lay, g), p.vec(lay, b));
            let (w1, b1) = ids.ff1(l);
            let mut pre = h2.dot(&p.mat(lay, w1));
            pre += &p.vec(lay, b1);
            let act = pre.mapv(gelu);
            let (w2, b2) = ids.ff2(l);
            let mut ff = act.dot(&p.mat(lay, w2));
            ff += &p.vec(lay, b2);
            x += &ff;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("output of layer {l}")));
            }
        }
        let (g, b) = ids.final_norm();
        let (hf, _) = layer_norm(&x, p.vec(lay, g), p.vec(lay, b));
        self.hidden = hf.row(0).to_owned();
        self.len += 1;
        Ok(())
    }
}
