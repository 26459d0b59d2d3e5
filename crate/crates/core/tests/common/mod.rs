//! Helpers shared by the integration tests: seeded random data and an
//! independent, loop-only evaluation of the fusion model.

#![allow(dead_code)]

use bkws::fusion::{AttentionParams, FusionBranch, FusionParams};
use bkws::linalg::CMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

pub fn gaussian_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// `A A^H` with `A` of size `n × 2n`: Hermitian positive definite almost surely.
pub fn random_hpd(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a: Vec<Complex64> = (0..n * 2 * n).map(|_| gaussian_c(rng)).collect();
    CMatrix::from_fn(n, |i, j| {
        (0..2 * n).map(|k| a[i * 2 * n + k] * a[j * 2 * n + k].conj()).sum()
    })
}

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn project(x: &Mat, w: &Array2<f64>, b: &[f64]) -> Mat {
    let w = to_mat(w);
    matmul(x, &w)
        .into_iter()
        .map(|r| r.iter().zip(b).map(|(v, bb)| v + bb).collect())
        .collect()
}

pub fn attention(q_in: &Mat, k_in: &Mat, v_in: &Mat, p: &AttentionParams) -> Mat {
    let d = q_in[0].len();
    let q = project(q_in, &p.wq, p.bq.as_slice().unwrap());
    let k = project(k_in, &p.wk, p.bk.as_slice().unwrap());
    let v = project(v_in, &p.wv, p.bv.as_slice().unwrap());
    let dh = d / p.heads;
    let mut heads = vec![vec![0.0; d]; q.len()];
    for h in 0..p.heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..k.len())
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                heads[i][c] = (0..k.len()).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    project(&heads, &p.wo, p.bo.as_slice().unwrap())
}

pub struct OracleBranch {
    pub relevance: Mat,
    pub pre: Mat,
    pub fused: Mat,
}

/// `C = tanh(X W_j J^T / sqrt(d))`, `Z = W X^T + W_c C^T`, `X_j = (W_h relu(Z))^T + X`.
pub fn branch(x: &Mat, joint: &Mat, b: &FusionBranch) -> OracleBranch {
    let (t, d) = (x.len(), x[0].len());
    let (wj, w, wc, wh) = (to_mat(&b.w_joint), to_mat(&b.w_in), to_mat(&b.w_rel), to_mat(&b.w_out));
    let h = w.len();
    let mut c = vec![vec![0.0; joint.len()]; t];
    for i in 0..t {
        for u in 0..joint.len() {
            let mut s = 0.0;
            for a in 0..d {
                for k in 0..2 * d {
                    s += x[i][a] * wj[a][k] * joint[u][k];
                }
            }
            c[i][u] = (s / (d as f64).sqrt()).tanh();
        }
    }
    let mut z = vec![vec![0.0; t]; h];
    for r in 0..h {
        for i in 0..t {
            let mut s = 0.0;
            for a in 0..d {
                s += w[r][a] * x[i][a];
            }
            for u in 0..joint.len() {
                s += wc[r][u] * c[i][u];
            }
            z[r][i] = s;
        }
    }
    let mut fused = x.clone();
    for i in 0..t {
        for a in 0..d {
            for r in 0..h {
                fused[i][a] += wh[a][r] * z[r][i].max(0.0);
            }
        }
    }
    OracleBranch {
        relevance: c,
        pre: z,
        fused,
    }
}

pub struct OracleTrace {
    pub audio: OracleBranch,
    pub visual: OracleBranch,
    pub logit: f64,
}

pub fn fuse(audio: &Array2<f64>, visual: &Array2<f64>, p: &FusionParams) -> OracleTrace {
    let mut a = to_mat(audio);
    let mut v = to_mat(visual);
    for layer in &p.layers {
        let sa = add(&a, &attention(&a, &a, &a, &layer.audio.self_attn));
        let sv = add(&v, &attention(&v, &v, &v, &layer.visual.self_attn));
        a = add(&sa, &attention(&sv, &sa, &sa, &layer.audio.cross_attn));
        v = add(&sv, &attention(&sa, &sv, &sv, &layer.visual.cross_attn));
    }
    let joint: Mat = a
        .iter()
        .zip(&v)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect();
    let ba = branch(&a, &joint, &p.audio);
    let bv = branch(&v, &joint, &p.visual);
    let t = a.len() as f64;
    let d = a[0].len();
    let mut logit = p.classifier_b[0];
    for k in 0..d {
        let ma: f64 = ba.fused.iter().map(|r| r[k]).sum::<f64>() / t;
        let mv: f64 = bv.fused.iter().map(|r| r[k]).sum::<f64>() / t;
        logit += p.classifier_w[k] * ma + p.classifier_w[d + k] * mv;
    }
    OracleTrace {
        audio: ba,
        visual: bv,
        logit,
    }
}

pub fn max_diff(a: &Array2<f64>, b: &Mat) -> f64 {
    a.indexed_iter()
        .map(|((i, j), v)| (v - b[i][j]).abs())
        .fold(0.0, f64::max)
}
