use ndarray::{s, Array1, Array2, Axis};

use super::params::AttentionParams;
use super::{check_shape, FeatureMatrix};
use crate::error::{Error, Result};

/// Intermediate values of one attention evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub query_in: Array2<f64>,
    pub key_in: Array2<f64>,
    pub value_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head softmax matrices, `query tokens × key tokens`.
    pub probs: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub heads_out: Array2<f64>,
    pub output: Array2<f64>,
}

pub(crate) struct AttentionBackward {
    pub d_query: Array2<f64>,
    pub d_key: Array2<f64>,
    pub d_value: Array2<f64>,
    pub grads: AttentionParams,
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn check_params(p: &AttentionParams, d: usize) -> Result<()> {
    for (name, w) in [("W_q", &p.wq), ("W_k", &p.wk), ("W_v", &p.wv), ("W_o", &p.wo)] {
        check_shape(name, w, d, d)?;
    }
    for (name, b) in [("b_q", &p.bq), ("b_k", &p.bk), ("b_v", &p.bv), ("b_o", &p.bo)] {
        if b.len() != d {
            return Err(Error::input(format!("{name} has length {}, expected {d}", b.len())));
        }
    }
    if p.heads == 0 || !d.is_multiple_of(p.heads) {
        return Err(Error::input(format!("{} heads do not divide d = {d}", p.heads)));
    }
    Ok(())
}

pub(crate) fn attention_forward(
    query: &Array2<f64>,
    key: &Array2<f64>,
    value: &Array2<f64>,
    p: &AttentionParams,
) -> Result<AttentionCache> {
    let d = query.ncols();
    if key.ncols() != d || value.ncols() != d {
        return Err(Error::input(format!(
            "attention dims differ: query {d}, key {}, value {}",
            key.ncols(),
            value.ncols()
        )));
    }
    if key.nrows() != value.nrows() {
        return Err(Error::input(format!(
            "key has {} tokens but value has {}",
            key.nrows(),
            value.nrows()
        )));
    }
    check_params(p, d)?;
    let q = affine(query, &p.wq, &p.bq);
    let k = affine(key, &p.wk, &p.bk);
    let v = affine(value, &p.wv, &p.bv);
    let dh = d / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads_out = Array2::zeros((query.nrows(), d));
    let mut probs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let r = h * dh..(h + 1) * dh;
        let mut scores = q.slice(s![.., r.clone()]).dot(&k.slice(s![.., r.clone()]).t()) * scale;
        softmax_rows(&mut scores);
        heads_out
            .slice_mut(s![.., r.clone()])
            .assign(&scores.dot(&v.slice(s![.., r])));
        probs.push(scores);
    }
    let output = affine(&heads_out, &p.wo, &p.bo);
    Ok(AttentionCache {
        query_in: query.clone(),
        key_in: key.clone(),
        value_in: value.clone(),
        q,
        k,
        v,
        probs,
        heads_out,
        output,
    })
}

pub(crate) fn attention_backward(
    cache: &AttentionCache,
    p: &AttentionParams,
    d_out: &Array2<f64>,
) -> AttentionBackward {
    let d = p.dim();
    let dh = d / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut g = AttentionParams::zeros(d, p.heads);
    g.bo = d_out.sum_axis(Axis(0));
    g.wo = cache.heads_out.t().dot(d_out);
    let d_heads = d_out.dot(&p.wo.t());

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, prob) in cache.probs.iter().enumerate() {
        let r = h * dh..(h + 1) * dh;
        let d_o = d_heads.slice(s![.., r.clone()]);
        let d_p = d_o.dot(&cache.v.slice(s![.., r.clone()]).t());
        dv.slice_mut(s![.., r.clone()]).assign(&prob.t().dot(&d_o));
        let row_dot = (&d_p * prob).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_s = prob * &(&d_p - &row_dot);
        dq.slice_mut(s![.., r.clone()])
            .assign(&(d_s.dot(&cache.k.slice(s![.., r.clone()])) * scale));
        dk.slice_mut(s![.., r.clone()])
            .assign(&(d_s.t().dot(&cache.q.slice(s![.., r])) * scale));
    }
    g.wq = cache.query_in.t().dot(&dq);
    g.bq = dq.sum_axis(Axis(0));
    g.wk = cache.key_in.t().dot(&dk);
    g.bk = dk.sum_axis(Axis(0));
    g.wv = cache.value_in.t().dot(&dv);
    g.bv = dv.sum_axis(Axis(0));
    AttentionBackward {
        d_query: dq.dot(&p.wq.t()),
        d_key: dk.dot(&p.wk.t()),
        d_value: dv.dot(&p.wv.t()),
        grads: g,
    }
}

/// `softmax(Q K^T / sqrt(d_head)) V` per head with learned projections, then
/// the output projection. The result carries the query's modality.
pub fn scaled_dot_attention(
    query: &FeatureMatrix,
    key: &FeatureMatrix,
    value: &FeatureMatrix,
    params: &AttentionParams,
) -> Result<FeatureMatrix> {
    let cache = attention_forward(query.values(), key.values(), value.values(), params)?;
    FeatureMatrix::new(cache.output, query.modality())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Modality;
    use ndarray::array;

    #[test]
    fn single_token_passes_projected_value() {
        let mut p = AttentionParams::identity(2, 1);
        p.wv = array![[2.0, 0.0], [1.0, 1.0]];
        p.bv = array![0.5, -0.5];
        let q = array![[0.3, -0.7]];
        let kv = array![[1.0, 2.0]];
        let c = attention_forward(&q, &kv, &kv, &p).unwrap();
        assert_eq!(c.probs[0][[0, 0]], 1.0);
        assert_eq!(c.output, array![[4.5, 1.5]]);
    }

    #[test]
    fn rows_sum_to_one() {
        let p = AttentionParams::identity(4, 2);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let c = attention_forward(&x, &x, &x, &p).unwrap();
        for prob in &c.probs {
            for row in prob.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dim_mismatch_is_input_error() {
        let p = AttentionParams::identity(3, 1);
        let a = FeatureMatrix::new(Array2::ones((2, 3)), Modality::Audio).unwrap();
        let b = FeatureMatrix::new(Array2::ones((2, 4)), Modality::Visual).unwrap();
        assert!(matches!(scaled_dot_attention(&a, &b, &b, &p), Err(Error::Input(_))));
    }
}
