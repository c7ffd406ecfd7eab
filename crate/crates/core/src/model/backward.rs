//! Losses and exact reverse-mode gradients.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::forward::{gelu_grad, head_forward, logits_rows, LnCache};
use super::{forward, forward_hidden, ForwardCache, HeadKind, ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::serializer::Segment;

/// Gold label of a classifier head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    MultiHot(Vec<bool>),
}

/// What to differentiate.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// Next-token cross-entropy: `targets[t]` is predicted from position `t`.
    Lm {
        targets: &'a [usize],
        mask: &'a [bool],
    },
    /// One classifier head read at position `tap`.
    Classify {
        head: HeadKind,
        tap: usize,
        label: &'a Label,
    },
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_lm(rows: usize, cols: usize, targets: &[usize], mask: &[bool]) -> Result<()> {
    if targets.len() != mask.len() || targets.len() > rows {
        return Err(Error::Shape(format!(
            "{} targets, {} mask bits, {rows} logit rows",
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
        return Err(Error::Shape(format!("target {t} outside {cols} classes")));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "every LM target position is masked".into(),
        ));
    }
    Ok(())
}

/// Mean cross-entropy over unmasked target positions.
pub fn lm_loss(logits: ArrayView2<f64>, targets: &[usize], mask: &[bool]) -> Result<f64> {
    check_lm(logits.nrows(), logits.ncols(), targets, mask)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, (&target, &on)) in targets.iter().zip(mask).enumerate() {
        if on {
            let row = logits.row(t);
            total += log_sum_exp(row) - row[target];
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Loss and gradient with respect to the logits (zero rows where masked).
pub fn lm_loss_grad(
    logits: ArrayView2<f64>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    check_lm(logits.nrows(), logits.ncols(), targets, mask)?;
    let count = mask.iter().filter(|&&m| m).count() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (t, (&target, &on)) in targets.iter().zip(mask).enumerate() {
        if on {
            let row = logits.row(t);
            let lse = log_sum_exp(row);
            total += lse - row[target];
            let mut g = grad.row_mut(t);
            g.assign(&row.mapv(|v| (v - lse).exp() / count));
            g[target] -= 1.0 / count;
        }
    }
    Ok((total / count, grad))
}

fn check_label(logits: ArrayView1<f64>, label: &Label, head: HeadKind) -> Result<()> {
    let k = logits.len();
    match (label, head.multi_label()) {
        (Label::Class(c), false) if *c < k && k == head.classes() => Ok(()),
        (Label::MultiHot(f), true) if f.len() == k && k == head.classes() => Ok(()),
        _ => Err(Error::Shape(format!(
            "label {label:?} does not fit the {} head with {k} logits",
            head.name()
        ))),
    }
}

/// Cross-entropy for multi-class heads, mean sigmoid BCE for the multi-label head.
pub fn classification_loss(logits: ArrayView1<f64>, label: &Label, head: HeadKind) -> Result<f64> {
    Ok(classification_loss_grad(logits, label, head)?.0)
}

pub fn classification_loss_grad(
    logits: ArrayView1<f64>,
    label: &Label,
    head: HeadKind,
) -> Result<(f64, Array1<f64>)> {
    check_label(logits, label, head)?;
    match label {
        Label::Class(c) => {
            let lse = log_sum_exp(logits);
            let mut grad = logits.mapv(|v| (v - lse).exp());
            grad[*c] -= 1.0;
            Ok((lse - logits[*c], grad))
        }
        Label::MultiHot(flags) => {
            let k = flags.len() as f64;
            let mut total = 0.0;
            let mut grad = Array1::zeros(flags.len());
            for ((&z, &on), g) in logits.iter().zip(flags).zip(grad.iter_mut()) {
                let y = if on { 1.0 } else { 0.0 };
                total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                let sigma = 1.0 / (1.0 + (-z).exp());
                *g = (sigma - y) / k;
            }
            Ok((total / k, grad))
        }
    }
}

/// Loss value through the plain forward pass, with full LM logits.
pub fn loss(
    params: &Parameters,
    tokens: &[usize],
    segments: &[Segment],
    cfg: &ModelConfig,
    objective: Objective<'_>,
) -> Result<f64> {
    match objective {
        Objective::Lm { targets, mask } => {
            let cache = forward(params, tokens, segments, cfg)?;
            lm_loss(cache.logits.as_ref().expect("forward fills logits").view(), targets, mask)
        }
        Objective::Classify { head, tap, label } => {
            let cache = forward_hidden(params, tokens, segments, cfg)?;
            if tap >= cache.len() {
                return Err(Error::InvalidArgument(format!("tap {tap} beyond sequence")));
            }
            let (logits, _) = head_forward(cache.hidden.row(tap), params.head(head));
            classification_loss(logits.view(), label, head)
        }
    }
}

/// Computes the loss and adds its gradient into `grads`.
///
/// LM logits are only formed at unmasked rows. Classification runs the body
/// on the prefix ending at `tap`, which is exact because attention is causal.
pub fn loss_and_grad(
    params: &Parameters,
    tokens: &[usize],
    segments: &[Segment],
    cfg: &ModelConfig,
    objective: Objective<'_>,
    grads: &mut Parameters,
) -> Result<f64> {
    match objective {
        Objective::Lm { targets, mask } => {
            let cache = forward_hidden(params, tokens, segments, cfg)?;
            check_lm(cache.len(), cfg.vocab_size, targets, mask)?;
            let rows: Vec<usize> = (0..targets.len()).filter(|&t| mask[t]).collect();
            let hidden_act = cache.hidden.select(Axis(0), &rows);
            let logits = logits_rows(params, hidden_act.view());
            let active_targets: Vec<usize> = rows.iter().map(|&t| targets[t]).collect();
            let all_on = vec![true; rows.len()];
            let (value, dlogits) = lm_loss_grad(logits.view(), &active_targets, &all_on)?;
            general_mat_mul(1.0, &dlogits.t(), &hidden_act, 1.0, &mut grads.tok_emb);
            let dh_act = dlogits.dot(&params.tok_emb);
            let mut dhidden = Array2::zeros(cache.hidden.raw_dim());
            for (i, &t) in rows.iter().enumerate() {
                dhidden.row_mut(t).assign(&dh_act.row(i));
            }
            backward(params, cfg, &cache, &dhidden, grads)?;
            Ok(value)
        }
        Objective::Classify { head, tap, label } => {
            if tap >= tokens.len() {
                return Err(Error::InvalidArgument(format!("tap {tap} beyond sequence")));
            }
            let cache = forward_hidden(params, &tokens[..=tap], &segments[..=tap], cfg)?;
            let h = cache.hidden.row(tap);
            let weights = params.head(head);
            let (logits, hc) = head_forward(h, weights);
            let (value, dlogits) = classification_loss_grad(logits.view(), label, head)?;

            let g = grads.head_mut(head);
            outer_add(&mut g.w3, hc.a2.view(), dlogits.view());
            g.b3 += &dlogits;
            let da2 = weights.w3.dot(&dlogits);
            let dz2 = &da2 * &hc.z2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            outer_add(&mut g.w2, hc.a1.view(), dz2.view());
            g.b2 += &dz2;
            let da1 = weights.w2.dot(&dz2);
            let dz1 = &da1 * &hc.z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            outer_add(&mut g.w1, h, dz1.view());
            g.b1 += &dz1;
            let dh = weights.w1.dot(&dz1);

            let mut dhidden = Array2::zeros(cache.hidden.raw_dim());
            dhidden.row_mut(tap).assign(&dh);
            backward(params, cfg, &cache, &dhidden, grads)?;
            Ok(value)
        }
    }
}

fn outer_add(target: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in target.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

fn layer_norm_backward(
    dout: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dout * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dout.sum_axis(Axis(0));
    let dxhat = dout * gain;
    let d = dout.ncols() as f64;
    let mut dx = Array2::zeros(dout.raw_dim());
    for ((mut out, (dxh, xh)), &rstd) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows().into_iter().zip(cache.xhat.rows()))
        .zip(cache.rstd.iter())
    {
        let mean_d = dxh.sum() / d;
        let mean_dx = dxh.dot(&xh) / d;
        out.assign(&((&dxh - mean_d - &(&xh * mean_dx)) * rstd));
    }
    dx
}

/// Backpropagates `dhidden` (gradient w.r.t. the final hidden states)
/// through the body, adding into `grads`.
pub fn backward(
    params: &Parameters,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    dhidden: &Array2<f64>,
    grads: &mut Parameters,
) -> Result<()> {
    if dhidden.dim() != cache.hidden.dim() || cache.blocks.len() != params.blocks.len() {
        return Err(Error::Shape(
            "gradient or cache does not match the forward pass".into(),
        ));
    }
    let d = cfg.model_dim;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = layer_norm_backward(
        dhidden,
        &cache.lnf,
        &params.lnf_g,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
    );

    for ((block, bc), gb) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        // Feed-forward branch.
        general_mat_mul(1.0, &bc.fc_act.t(), &dx, 1.0, &mut gb.w_proj);
        gb.b_proj += &dx.sum_axis(Axis(0));
        let mut dfc = dx.dot(&block.w_proj.t());
        dfc.zip_mut_with(&bc.fc_pre, |g, &x| *g *= gelu_grad(x));
        general_mat_mul(1.0, &bc.h2.t(), &dfc, 1.0, &mut gb.w_fc);
        gb.b_fc += &dfc.sum_axis(Axis(0));
        let dh2 = dfc.dot(&block.w_fc.t());
        let dx_mid = &dx + &layer_norm_backward(&dh2, &bc.ln2, &block.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);

        // Attention branch.
        general_mat_mul(1.0, &bc.attn.t(), &dx_mid, 1.0, &mut gb.w_o);
        gb.b_o += &dx_mid.sum_axis(Axis(0));
        let dattn = dx_mid.dot(&block.w_o.t());
        let mut dqkv = Array2::zeros(bc.qkv.raw_dim());
        for (h, p) in bc.probs.iter().enumerate() {
            let qc = h * dh..(h + 1) * dh;
            let kc = d + h * dh..d + (h + 1) * dh;
            let vc = 2 * d + h * dh..2 * d + (h + 1) * dh;
            let q = bc.qkv.slice(s![.., qc.clone()]);
            let k = bc.qkv.slice(s![.., kc.clone()]);
            let v = bc.qkv.slice(s![.., vc.clone()]);
            let dout = dattn.slice(s![.., qc.clone()]);
            let dp = dout.dot(&v.t());
            dqkv.slice_mut(s![.., vc]).assign(&p.t().dot(&dout));
            let mut ds = &dp * p;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = row.sum();
                row.zip_mut_with(&prow, |g, &pi| *g -= pi * dot);
            }
            ds.mapv_inplace(|v| v * scale);
            dqkv.slice_mut(s![.., qc]).assign(&ds.dot(&k));
            dqkv.slice_mut(s![.., kc]).assign(&ds.t().dot(&q));
        }
        general_mat_mul(1.0, &bc.h1.t(), &dqkv, 1.0, &mut gb.w_qkv);
        let d = cfg.model_dim;
        gb.b_q += &dqkv.slice(s![.., ..d]).sum_axis(Axis(0));
        gb.b_v += &dqkv.slice(s![.., 2 * d..]).sum_axis(Axis(0));
        let dh1 = dqkv.dot(&block.w_qkv.t());
        dx = &dx_mid + &layer_norm_backward(&dh1, &bc.ln1, &block.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
    }

    for (p, ((&tok, &seg), row)) in cache
        .tokens
        .iter()
        .zip(&cache.segments)
        .zip(dx.rows())
        .enumerate()
    {
        let mut t = grads.tok_emb.row_mut(tok);
        t += &row;
        let mut pos = grads.pos_emb.row_mut(p);
        pos += &row;
        if cfg.use_segment_embedding {
            let mut s = grads.seg_emb.row_mut(seg.index());
            s += &row;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_v() {
        let logits = Array2::zeros((5, 13));
        let l = lm_loss(logits.view(), &[1, 2, 3, 4, 5], &[true; 5]).unwrap();
        assert!((l - 13f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn confident_correct_logits_give_zero_loss() {
        let targets = [3, 0, 2];
        let mut logits = Array2::zeros((3, 4));
        for (t, &y) in targets.iter().enumerate() {
            logits[[t, y]] = 1e4;
        }
        assert!(lm_loss(logits.view(), &targets, &[true; 3]).unwrap() < 1e-6);
    }

    #[test]
    fn masked_targets_do_not_matter() {
        let logits = array![[0.1, 0.7, -0.3], [1.0, 0.0, 0.5], [0.2, 0.2, 0.9]];
        let mask = [false, true, false];
        let a = lm_loss(logits.view(), &[0, 1, 2], &mask).unwrap();
        let b = lm_loss(logits.view(), &[2, 1, 0], &mask).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(lm_loss(logits.view(), &[0, 1, 2], &[false; 3]).is_err());
    }

    #[test]
    fn classification_reference_values() {
        let z7 = Array1::zeros(7);
        let l = classification_loss(z7.view(), &Label::Class(4), HeadKind::FurnitureAction).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        assert!((l - 1.9459).abs() < 1e-4);

        let flags = vec![true, false, true, false, false, true, false];
        let l = classification_loss(z7.view(), &Label::MultiHot(flags.clone()), HeadKind::FashionAttribute).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);

        let sharp = Array1::from_iter(flags.iter().map(|&f| if f { 1e4 } else { -1e4 }));
        let l = classification_loss(sharp.view(), &Label::MultiHot(flags), HeadKind::FashionAttribute).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn label_shape_mismatch() {
        let z = Array1::zeros(7);
        assert!(classification_loss(z.view(), &Label::Class(7), HeadKind::FurnitureAction).is_err());
        assert!(classification_loss(z.view(), &Label::Class(1), HeadKind::FashionAttribute).is_err());
        assert!(classification_loss(z.view(), &Label::MultiHot(vec![true; 6]), HeadKind::FashionAttribute).is_err());
        let z5 = Array1::zeros(5);
        assert!(classification_loss(z5.view(), &Label::Class(1), HeadKind::FurnitureAction).is_err());
    }

    #[test]
    fn loss_grads_match_differences() {
        let logits = array![[0.3, -0.2, 1.1], [0.0, 0.4, -0.6]];
        let targets = [2, 0];
        let mask = [true, true];
        let (_, g) = lm_loss_grad(logits.view(), &targets, &mask).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let mut up = logits.clone();
                up[[i, j]] += 1e-6;
                let mut dn = logits.clone();
                dn[[i, j]] -= 1e-6;
                let fd = (lm_loss(up.view(), &targets, &mask).unwrap()
                    - lm_loss(dn.view(), &targets, &mask).unwrap())
                    / 2e-6;
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
        let z = array![0.5, -1.5, 2.0, 0.0, -0.1, 0.3, 1.0];
        let label = Label::MultiHot(vec![true, false, false, true, true, false, false]);
        let (_, g) = classification_loss_grad(z.view(), &label, HeadKind::FashionAttribute).unwrap();
        for k in 0..7 {
            let mut up = z.clone();
            up[k] += 1e-6;
            let mut dn = z.clone();
            dn[k] -= 1e-6;
            let fd = (classification_loss(up.view(), &label, HeadKind::FashionAttribute).unwrap()
                - classification_loss(dn.view(), &label, HeadKind::FashionAttribute).unwrap())
                / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }
}
