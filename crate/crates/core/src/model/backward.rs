use super::forward::{check_input, run};
use super::ops::{self, dot, matmul_at_acc, matmul_bt_acc};
use super::{Gradients, ModelParams, Scalar};
use crate::error::{Error, Result};

/// Summed negative log-likelihood over unmasked targets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSum {
    pub sum: f64,
    pub count: usize,
}

impl LossSum {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn merge(self, other: LossSum) -> LossSum {
        LossSum {
            sum: self.sum + other.sum,
            count: self.count + other.count,
        }
    }
}

/// Adds the gradient of the summed NLL over `tokens` into `grads` and
/// returns the summed loss. Fully masked inputs leave `grads` untouched.
pub fn accumulate_gradients<F: Scalar>(
    params: &ModelParams<F>,
    tokens: &[u32],
    targets: &[Option<u32>],
    grads: &mut [F],
) -> Result<LossSum> {
    check_input(params, tokens)?;
    let cfg = params.config();
    let (t, d, v, f) = (tokens.len(), cfg.d_model, cfg.vocab_size, cfg.ff_dim());
    if targets.len() != t {
        return Err(Error::Shape(format!("{} targets for {t} positions", targets.len())));
    }
    if grads.len() != params.data.len() {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }
    if let Some(&id) = targets.iter().flatten().find(|&&x| x as usize >= v) {
        return Err(Error::TokenOutOfRange { id, vocab_size: v });
    }
    if targets.iter().all(Option::is_none) {
        return Ok(LossSum::default());
    }

    let lay = params.layout().clone();
    let (nh, hd) = (cfg.n_heads, cfg.head_dim());
    let scale = F::from_f64(1.0 / (hd as f64).sqrt()).unwrap();
    let acts = run(params, tokens);

    // softmax − onehot at every unmasked position
    let mut loss = LossSum::default();
    let mut dlogits = vec![F::zero(); t * v];
    for (i, tgt) in targets.iter().enumerate() {
        let Some(tgt) = *tgt else { continue };
        let row = &acts.logits[i * v..(i + 1) * v];
        let out = &mut dlogits[i * v..(i + 1) * v];
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for (o, &z) in out.iter_mut().zip(row) {
            *o = (z - max).exp();
            sum += *o;
        }
        let inv = F::one() / sum;
        for o in out.iter_mut() {
            *o *= inv;
        }
        out[tgt as usize] -= F::one();
        let lp = row[tgt as usize] - max - sum.ln();
        loss.sum -= lp.to_f64().unwrap();
        loss.count += 1;
    }

    matmul_at_acc(&acts.nf, &dlogits, &mut grads[lay.unembed..][..d * v], t, d, v);
    let mut dnf = vec![F::zero(); t * d];
    matmul_bt_acc(&dlogits, params.slice(lay.unembed, d * v), &mut dnf, t, v, d);
    let mut dx = vec![F::zero(); t * d];
    ops::rmsnorm_backward(
        &acts.x_final,
        params.slice(lay.final_norm, d),
        &acts.inv_rms_f,
        &dnf,
        &mut dx,
        &mut grads[lay.final_norm..][..d],
        d,
    );

    for (c, b) in acts.layers.iter().zip(&lay.blocks).rev() {
        // feed-forward: x_out = x_mid + gelu(n2 W_in) W_out
        matmul_at_acc(&c.act, &dx, &mut grads[b.w_out..][..f * d], t, f, d);
        let mut dpre = vec![F::zero(); t * f];
        matmul_bt_acc(&dx, params.slice(b.w_out, f * d), &mut dpre, t, d, f);
        for (g, &u) in dpre.iter_mut().zip(&c.pre_act) {
            *g *= ops::gelu_grad(u);
        }
        matmul_at_acc(&c.n2, &dpre, &mut grads[b.w_in..][..d * f], t, d, f);
        let mut dn2 = vec![F::zero(); t * d];
        matmul_bt_acc(&dpre, params.slice(b.w_in, d * f), &mut dn2, t, f, d);
        let mut dmid = dx;
        ops::rmsnorm_backward(
            &c.x_mid,
            params.slice(b.ffn_norm, d),
            &c.inv_rms2,
            &dn2,
            &mut dmid,
            &mut grads[b.ffn_norm..][..d],
            d,
        );

        // attention: x_mid = x_in + attn W_o
        matmul_at_acc(&c.attn, &dmid, &mut grads[b.wo..][..d * d], t, d, d);
        let mut dattn = vec![F::zero(); t * d];
        matmul_bt_acc(&dmid, params.slice(b.wo, d * d), &mut dattn, t, d, d);

        let mut dq = vec![F::zero(); t * d];
        let mut dk = vec![F::zero(); t * d];
        let mut dv = vec![F::zero(); t * d];
        let mut ds = vec![F::zero(); t];
        for h in 0..nh {
            let hs = h * hd..(h + 1) * hd;
            for i in 0..t {
                let p = &c.probs[(h * t + i) * t..][..i + 1];
                let doi = &dattn[i * d..][hs.clone()];
                let mut weighted = F::zero();
                for (j, &pj) in p.iter().enumerate() {
                    let dp = dot(doi, &c.v[j * d..][hs.clone()]);
                    ds[j] = dp;
                    weighted += pj * dp;
                    ops::axpy(pj, doi, &mut dv[j * d..][hs.clone()]);
                }
                let qi = &c.q[i * d..][hs.clone()];
                for (j, &pj) in p.iter().enumerate() {
                    let g = pj * (ds[j] - weighted) * scale;
                    ops::axpy(g, &c.k[j * d..][hs.clone()], &mut dq[i * d..][hs.clone()]);
                    ops::axpy(g, qi, &mut dk[j * d..][hs.clone()]);
                }
            }
        }

        let mut dn1 = vec![F::zero(); t * d];
        for (w, dw) in [(b.wq, &dq), (b.wk, &dk), (b.wv, &dv)] {
            matmul_at_acc(&c.n1, dw, &mut grads[w..][..d * d], t, d, d);
            matmul_bt_acc(dw, params.slice(w, d * d), &mut dn1, t, d, d);
        }
        let mut din = dmid;
        ops::rmsnorm_backward(
            &c.x_in,
            params.slice(b.attn_norm, d),
            &c.inv_rms1,
            &dn1,
            &mut din,
            &mut grads[b.attn_norm..][..d],
            d,
        );
        dx = din;
    }

    for (i, &tok) in tokens.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        ops::axpy(F::one(), row, &mut grads[lay.tok_embed + tok as usize * d..][..d]);
        ops::axpy(F::one(), row, &mut grads[lay.pos_embed + i * d..][..d]);
    }
    Ok(loss)
}

/// Loss and exact gradients of the per-token mean NLL.
pub fn backward<F: Scalar>(
    params: &ModelParams<F>,
    tokens: &[u32],
    targets: &[Option<u32>],
) -> Result<(LossSum, Gradients<F>)> {
    let mut grads = Gradients::zeros_like(params);
    let loss = accumulate_gradients(params, tokens, targets, &mut grads.data)?;
    if loss.count > 0 {
        grads.scale(F::one() / F::from_usize(loss.count).unwrap());
    }
    Ok((loss, grads))
}
