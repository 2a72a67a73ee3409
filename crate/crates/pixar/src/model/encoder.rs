//! Transformer encoder forward pass with activation caching and the
//! matching hand-written backward pass.
//!
//! Pre-norm blocks: `h += attn(ln1(h))` then `h += ffn(ln2(h))`, followed by
//! a final layer norm. The feed-forward nonlinearity is the tanh GELU, kept
//! smooth so central finite differences agree with the analytic gradients.

use super::{BlockLayout, InputRow, ModelParams, QueryEncoding};

const LN_EPS: f64 = 1e-5;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x)
}

/// y = x · Wᵀ + b for row-major x (n×din), W (dout×din).
fn linear(x: &[f64], n: usize, din: usize, w: &[f64], dout: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        let xi = &x[i * din..(i + 1) * din];
        let yi = &mut y[i * dout..(i + 1) * dout];
        for (o, yo) in yi.iter_mut().enumerate() {
            *yo = b[o] + dot(&w[o * din..(o + 1) * din], xi);
        }
    }
    y
}

/// Backward of [`linear`]: accumulates dW, db and returns dx.
fn linear_backward(
    dy: &[f64],
    x: &[f64],
    n: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * din];
    for i in 0..n {
        let dyi = &dy[i * dout..(i + 1) * dout];
        let xi = &x[i * din..(i + 1) * din];
        let dxi = &mut dx[i * din..(i + 1) * din];
        for o in 0..dout {
            let g = dyi[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wrow = &w[o * din..(o + 1) * din];
            let dwrow = &mut dw[o * din..(o + 1) * din];
            for ((dw_j, dx_j), (x_j, w_j)) in dwrow
                .iter_mut()
                .zip(dxi.iter_mut())
                .zip(xi.iter().zip(wrow))
            {
                *dw_j += g * x_j;
                *dx_j += g * w_j;
            }
        }
    }
    dx
}

struct NormCache {
    xhat: Vec<f64>,    // n×d
    inv_std: Vec<f64>, // n
    out: Vec<f64>,     // n×d
}

fn layer_norm(x: &[f64], n: usize, d: usize, gamma: &[f64], beta: &[f64]) -> NormCache {
    let mut xhat = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let h = (xi[j] - mean) * is;
            xhat[i * d + j] = h;
            out[i * d + j] = gamma[j] * h + beta[j];
        }
    }
    NormCache { xhat, inv_std, out }
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &NormCache,
    n: usize,
    d: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let xhat = &cache.xhat[i * d..(i + 1) * d];
        let mut sum_dh = 0.0;
        let mut sum_dh_xhat = 0.0;
        for j in 0..d {
            let dh = dyi[j] * gamma[j];
            dgamma[j] += dyi[j] * xhat[j];
            dbeta[j] += dyi[j];
            sum_dh += dh;
            sum_dh_xhat += dh * xhat[j];
        }
        let mean_dh = sum_dh / d as f64;
        let mean_dh_xhat = sum_dh_xhat / d as f64;
        let is = cache.inv_std[i];
        for j in 0..d {
            let dh = dyi[j] * gamma[j];
            dx[i * d + j] = is * (dh - mean_dh - xhat[j] * mean_dh_xhat);
        }
    }
    dx
}

struct BlockCache {
    ln1: NormCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,   // heads × n × n softmax weights
    merged: Vec<f64>, // n×d concatenated head outputs
    ln2: NormCache,
    pre_act: Vec<f64>, // n×ff
    act: Vec<f64>,     // n×ff
}

/// Forward activations for one input sequence.
pub struct EncodeCache {
    pub(crate) n: usize,
    pub(crate) q_len: usize,
    blocks: Vec<BlockCache>,
    final_norm: NormCache,
}

impl EncodeCache {
    pub fn output_row(&self, row: usize) -> &[f64] {
        let d = self.final_norm.out.len() / self.n;
        &self.final_norm.out[row * d..(row + 1) * d]
    }

    /// Output vector for decode position `t`: t=0 is the shortlist row,
    /// t=1..=s are the slot rows.
    pub fn output_position(&self, t: usize) -> &[f64] {
        if t == 0 {
            self.output_row(0)
        } else {
            self.output_row(self.q_len + t)
        }
    }
}

fn embed_rows(params: &ModelParams, rows: &[InputRow]) -> Vec<f64> {
    let d = params.config.hidden_dim;
    let mut h = vec![0.0; rows.len() * d];
    let word = params.slice(&params.layout.word_embed);
    let cls = params.slice(&params.layout.cls_embed);
    let slot = params.slice(&params.layout.slot_embed);
    let pos = params.slice(&params.layout.pos_embed);
    for (i, row) in rows.iter().enumerate() {
        let src = match row {
            InputRow::Cls => cls,
            InputRow::Word(b) => &word[b * d..(b + 1) * d],
            InputRow::Slot(t) => &slot[t * d..(t + 1) * d],
        };
        let hi = &mut h[i * d..(i + 1) * d];
        for j in 0..d {
            hi[j] = src[j] + pos[i * d + j];
        }
    }
    h
}

/// Full forward pass over explicit input rows, retaining every activation
/// needed by [`backward`].
pub fn encode_ids(params: &ModelParams, rows: &[InputRow]) -> EncodeCache {
    let cfg = &params.config;
    let d = cfg.hidden_dim;
    let ff = cfg.ff_dim;
    let heads = cfg.n_heads;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let n = rows.len();
    let q_len = n - 1 - cfg.output_len;

    let mut h = embed_rows(params, rows);
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for bl in &params.layout.blocks {
        let input = h;
        let ln1 = layer_norm(
            &input,
            n,
            d,
            params.slice(&bl.ln1_gamma),
            params.slice(&bl.ln1_beta),
        );
        let q = linear(&ln1.out, n, d, params.slice(&bl.wq), d, params.slice(&bl.bq));
        let k = linear(&ln1.out, n, d, params.slice(&bl.wk), d, params.slice(&bl.bk));
        let v = linear(&ln1.out, n, d, params.slice(&bl.wv), d, params.slice(&bl.bv));

        let mut attn = vec![0.0; heads * n * n];
        let mut merged = vec![0.0; n * d];
        for hh in 0..heads {
            let off = hh * dk;
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + dk];
                let row = &mut attn[hh * n * n + i * n..hh * n * n + (i + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    let s = scale * dot(qi, &k[j * d + off..j * d + off + dk]);
                    row[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    z += *x;
                }
                for x in row.iter_mut() {
                    *x /= z;
                }
                let out = &mut merged[i * d + off..i * d + off + dk];
                for j in 0..n {
                    let a = row[j];
                    let vj = &v[j * d + off..j * d + off + dk];
                    for c in 0..dk {
                        out[c] += a * vj[c];
                    }
                }
            }
        }

        let proj = linear(&merged, n, d, params.slice(&bl.wo), d, params.slice(&bl.bo));
        let mut after_attn = input.clone();
        for (x, p) in after_attn.iter_mut().zip(proj.iter()) {
            *x += p;
        }

        let ln2 = layer_norm(
            &after_attn,
            n,
            d,
            params.slice(&bl.ln2_gamma),
            params.slice(&bl.ln2_beta),
        );
        let pre_act = linear(&ln2.out, n, d, params.slice(&bl.ff1_w), ff, params.slice(&bl.ff1_b));
        let act: Vec<f64> = pre_act.iter().map(|&x| gelu(x)).collect();
        let ffn = linear(&act, n, ff, params.slice(&bl.ff2_w), d, params.slice(&bl.ff2_b));

        let mut out = after_attn.clone();
        for (x, f) in out.iter_mut().zip(ffn.iter()) {
            *x += f;
        }
        h = out;
        blocks.push(BlockCache {
            ln1,
            q,
            k,
            v,
            attn,
            merged,
            ln2,
            pre_act,
            act,
        });
    }

    let final_norm = layer_norm(
        &h,
        n,
        d,
        params.slice(&params.layout.final_norm_gamma),
        params.slice(&params.layout.final_norm_beta),
    );
    EncodeCache {
        n,
        q_len,
        blocks,
        final_norm,
    }
}

/// Encode a query into its s+1 output vectors.
pub fn encode(params: &ModelParams, query: &str) -> QueryEncoding {
    let (rows, truncated) = params.input_rows(query);
    let cache = encode_ids(params, &rows);
    let mut vectors = Vec::with_capacity(params.config.output_len + 1);
    for t in 0..=params.config.output_len {
        vectors.push(cache.output_position(t).to_vec());
    }
    QueryEncoding { vectors, truncated }
}

fn attention_backward(
    params: &ModelParams,
    bl: &BlockLayout,
    cache: &BlockCache,
    d_merged: &[f64],
    n: usize,
    grad: &mut [f64],
) -> Vec<f64> {
    let cfg = &params.config;
    let d = cfg.hidden_dim;
    let heads = cfg.n_heads;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let mut dq = vec![0.0; n * d];
    let mut dkk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    for hh in 0..heads {
        let off = hh * dk;
        for i in 0..n {
            let arow = &cache.attn[hh * n * n + i * n..hh * n * n + (i + 1) * n];
            let dmi = &d_merged[i * d + off..i * d + off + dk];

            // dA then softmax backward into dS in one pass.
            let mut da = vec![0.0; n];
            for (j, daj) in da.iter_mut().enumerate() {
                *daj = dot(dmi, &cache.v[j * d + off..j * d + off + dk]);
            }
            let pivot: f64 = arow.iter().zip(da.iter()).map(|(a, g)| a * g).sum();
            for j in 0..n {
                let ds = arow[j] * (da[j] - pivot) * scale;
                let a = arow[j];
                let kj = &cache.k[j * d + off..j * d + off + dk];
                let qi = &cache.q[i * d + off..i * d + off + dk];
                let dqi = &mut dq[i * d + off..i * d + off + dk];
                for c in 0..dk {
                    dqi[c] += ds * kj[c];
                }
                let dkj = &mut dkk[j * d + off..j * d + off + dk];
                for c in 0..dk {
                    dkj[c] += ds * qi[c];
                }
                let dvj = &mut dv[j * d + off..j * d + off + dk];
                for c in 0..dk {
                    dvj[c] += a * dmi[c];
                }
            }
        }
    }

    let mut da_in = vec![0.0; n * d];
    for (dy, wl, br) in [
        (&dq, &bl.wq, &bl.bq),
        (&dkk, &bl.wk, &bl.bk),
        (&dv, &bl.wv, &bl.bv),
    ] {
        let (dw, db) = grad[wl.start..br.end].split_at_mut(wl.len());
        let dx = linear_backward(dy, &cache.ln1.out, n, d, params.slice(wl), d, dw, db);
        for (a, b) in da_in.iter_mut().zip(dx.iter()) {
            *a += b;
        }
    }
    da_in
}

/// Accumulate parameter gradients for one sequence given the loss gradient
/// on the final-norm outputs.
pub(crate) fn backward(
    params: &ModelParams,
    rows: &[InputRow],
    cache: &EncodeCache,
    d_out: &[f64],
    grad: &mut [f64],
) {
    let cfg = &params.config;
    let d = cfg.hidden_dim;
    let ff = cfg.ff_dim;
    let n = cache.n;
    let lay = &params.layout;

    // Final layer norm.
    let mut dh = {
        let (dg, db) = grad[lay.final_norm_gamma.start..lay.final_norm_beta.end]
            .split_at_mut(lay.final_norm_gamma.len());
        layer_norm_backward(
            d_out,
            &cache.final_norm,
            n,
            d,
            params.slice(&lay.final_norm_gamma),
            dg,
            db,
        )
    };

    for (bi, bl) in lay.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[bi];

        // FFN branch: out = after_attn + W2·gelu(W1·ln2(after_attn)+b1)+b2
        let dact = {
            let (dw2, db2) = grad[bl.ff2_w.start..bl.ff2_b.end].split_at_mut(bl.ff2_w.len());
            linear_backward(&dh, &bc.act, n, ff, params.slice(&bl.ff2_w), d, dw2, db2)
        };
        let mut dpre = vec![0.0; n * ff];
        for i in 0..n * ff {
            dpre[i] = dact[i] * gelu_prime(bc.pre_act[i]);
        }
        let dln2_out = {
            let (dw1, db1) = grad[bl.ff1_w.start..bl.ff1_b.end].split_at_mut(bl.ff1_w.len());
            linear_backward(&dpre, &bc.ln2.out, n, d, params.slice(&bl.ff1_w), ff, dw1, db1)
        };
        let dafter_attn_norm = {
            let (dg, db) =
                grad[bl.ln2_gamma.start..bl.ln2_beta.end].split_at_mut(bl.ln2_gamma.len());
            layer_norm_backward(&dln2_out, &bc.ln2, n, d, params.slice(&bl.ln2_gamma), dg, db)
        };
        // Residual: gradient flows both through the norm path and directly.
        for (a, b) in dh.iter_mut().zip(dafter_attn_norm.iter()) {
            *a += b;
        }

        // Attention branch.
        let d_merged = {
            let (dwo, dbo) = grad[bl.wo.start..bl.bo.end].split_at_mut(bl.wo.len());
            linear_backward(&dh, &bc.merged, n, d, params.slice(&bl.wo), d, dwo, dbo)
        };
        let dln1_out = attention_backward(params, bl, bc, &d_merged, n, grad);
        let dinput_norm = {
            let (dg, db) =
                grad[bl.ln1_gamma.start..bl.ln1_beta.end].split_at_mut(bl.ln1_gamma.len());
            layer_norm_backward(&dln1_out, &bc.ln1, n, d, params.slice(&bl.ln1_gamma), dg, db)
        };
        for (a, b) in dh.iter_mut().zip(dinput_norm.iter()) {
            *a += b;
        }
    }

    // Embedding rows: position table plus the per-row source table.
    for (i, row) in rows.iter().enumerate() {
        let dhi = &dh[i * d..(i + 1) * d];
        let pos = &mut grad[lay.pos_embed.start + i * d..lay.pos_embed.start + (i + 1) * d];
        for j in 0..d {
            pos[j] += dhi[j];
        }
        let base = match row {
            InputRow::Cls => lay.cls_embed.start,
            InputRow::Word(b) => lay.word_embed.start + b * d,
            InputRow::Slot(t) => lay.slot_embed.start + t * d,
        };
        let dst = &mut grad[base..base + d];
        for j in 0..d {
            dst[j] += dhi[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_config, ModelParams};

    #[test]
    fn encode_shapes() {
        let cfg = toy_config(8, 4, 50);
        let params = ModelParams::init(cfg, [0; 32], 1).unwrap();
        let enc = encode(&params, "three word query");
        assert_eq!(enc.vectors.len(), 5);
        assert!(enc.vectors.iter().all(|v| v.len() == 8));
        assert!(!enc.truncated);
    }

    #[test]
    fn encode_deterministic() {
        let cfg = toy_config(8, 4, 50);
        let params = ModelParams::init(cfg, [0; 32], 1).unwrap();
        let a = encode(&params, "same query");
        let b = encode(&params, "same query");
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn zero_params_give_zero_outputs_prenorm_exception() {
        // With all-zero final norm gamma the outputs are exactly beta = 0.
        let cfg = toy_config(8, 2, 20);
        let mut params = ModelParams::init(cfg, [0; 32], 1).unwrap();
        let r = params.layout.final_norm_gamma.clone();
        params.data[r].fill(0.0);
        let enc = encode(&params, "whatever");
        assert!(enc
            .vectors
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn empty_query_still_encodes() {
        let cfg = toy_config(8, 3, 20);
        let params = ModelParams::init(cfg, [0; 32], 1).unwrap();
        let enc = encode(&params, "");
        assert_eq!(enc.vectors.len(), 4);
        assert!(enc.vectors.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_prime(x)).abs() < 1e-8, "x={x}");
        }
    }
}
