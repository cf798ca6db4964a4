//! Central-difference gradient checking in double precision.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::masked_cross_entropy_grad;
use super::params::{ParamLayout, Params};
use super::transformer::{Batch, HeadGrad, Lookups, ModelConfig, Segment, Transformer};
use crate::error::Result;
use crate::seqbuild::prefix_causal_mask;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error.
    pub max_rel_err: f64,
    /// `(tensor name, max |analytic - numeric| / max(|analytic|, |numeric|))`
    /// with the maxima taken over the tensor's entries.
    pub per_tensor: Vec<(String, f64)>,
    pub n_params: usize,
}

/// Compares `analytic` with central differences of `loss` at every entry.
pub fn grad_check(
    layout: &ParamLayout,
    params: &Params<f64>,
    analytic: &Params<f64>,
    eps: f64,
    mut loss: impl FnMut(&Params<f64>) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut probe = params.clone();
    let mut per_tensor = Vec::with_capacity(layout.entries.len());
    let mut max_rel_err: f64 = 0.0;
    for e in &layout.entries {
        let mut max_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in e.range() {
            let orig = probe.data[i];
            probe.data[i] = orig + eps;
            let up = loss(&probe)?;
            probe.data[i] = orig - eps;
            let down = loss(&probe)?;
            probe.data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data[i];
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel = if scale > 0.0 { max_diff / scale } else { max_diff };
        max_rel_err = max_rel_err.max(rel);
        per_tensor.push((e.name.clone(), rel));
    }
    Ok(GradCheckReport {
        max_rel_err,
        per_tensor,
        n_params: layout.total,
    })
}

/// Gradient check of the full stack on a tiny random problem: one embedding
/// table, one head, a prefix-causal mask and a partial loss mask.
pub fn transformer_grad_check(cfg: ModelConfig, seq_len: usize, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let vocab = cfg.vocab_size;
    let model = Transformer::new(cfg, &[vocab], &[vocab])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Params<f64> = Params::init(&model.layout, 0.5, &mut rng);
    let tokens: Vec<u32> = (0..seq_len).map(|_| rng.random_range(0..vocab as u32)).collect();
    let targets: Vec<usize> = (0..seq_len).map(|_| rng.random_range(0..vocab)).collect();
    let bos = seq_len / 3;
    let loss_rows: Vec<usize> = (bos..seq_len).collect();
    let mut lookups = Lookups::new();
    for &t in &tokens {
        lookups.push(&[(0, t)]);
    }
    let mask = prefix_causal_mask(seq_len, bos);

    let eval = |p: &Params<f64>, want_grad: bool| -> Result<(f64, Option<Params<f64>>)> {
        let batch = Batch {
            emb: model.embed(p, &lookups),
            segments: vec![Segment {
                start: 0,
                len: seq_len,
                mask: mask.clone(),
            }],
        };
        let cache = model.forward(p, &batch, None)?;
        let hidden = cache.hidden.select(ndarray::Axis(0), &loss_rows);
        let logits: Array2<f64> = model.head_logits(p, hidden.view(), 0);
        let tg: Vec<usize> = loss_rows.iter().map(|&r| targets[r]).collect();
        let (l, dlogits) = masked_cross_entropy_grad(&logits, &tg, &vec![true; tg.len()])?;
        if !want_grad {
            return Ok((l, None));
        }
        let mut grads = Params::zeros(&model.layout);
        let hg = [HeadGrad {
            head: 0,
            rows: loss_rows.clone(),
            dlogits,
        }];
        let d_emb = model.backward(p, &batch, &cache, &hg, &mut grads);
        model.embed_backward(&mut grads, &lookups, &d_emb);
        Ok((l, Some(grads)))
    };
    let (_, analytic) = eval(&params, true)?;
    let analytic = analytic.expect("gradient computed");
    grad_check(&model.layout, &params, &analytic, eps, |p| eval(p, false).map(|(l, _)| l))
}
