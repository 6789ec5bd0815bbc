//! Forward inference and exact reverse-mode gradients for the switching
//! network: stacked bidirectional LSTM, attention pooling over time, and a
//! two-layer softmax head.

use ndarray::{s, Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::SwitchLabel;

use super::{LstmDirParams, ModelParams, Posterior};

const PROB_CLAMP: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-direction cache of one LSTM pass, in processing order.
struct LstmCache {
    gates: Array2<f64>,  // T x 4H, post-activation [i f g o]
    cell: Array2<f64>,   // T x H
    tanh_c: Array2<f64>, // T x H
    hidden: Array2<f64>, // T x H
}

/// Runs one LSTM direction over `x` (T x D) in row order.
fn lstm_forward(p: &LstmDirParams, x: &Array2<f64>) -> LstmCache {
    let t_len = x.nrows();
    let h = p.w_h.ncols();
    // Input projections for the whole sequence in one matrix product.
    let xp = x.dot(&p.w_x.t()); // T x 4H
    let mut gates = Array2::zeros((t_len, 4 * h));
    let mut cell = Array2::zeros((t_len, h));
    let mut tanh_c = Array2::zeros((t_len, h));
    let mut hidden = Array2::zeros((t_len, h));
    let mut h_prev = Array1::zeros(h);
    let mut c_prev: Array1<f64> = Array1::zeros(h);
    for t in 0..t_len {
        let rec = p.w_h.dot(&h_prev); // 4H
        let mut z = xp.row(t).to_owned();
        z += &rec;
        z += &p.b;
        {
            let zs = z.as_slice_mut().unwrap();
            for j in 0..h {
                zs[j] = sigmoid(zs[j]); // input gate
                zs[h + j] = sigmoid(zs[h + j]); // forget gate
                zs[2 * h + j] = zs[2 * h + j].tanh(); // cell candidate
                zs[3 * h + j] = sigmoid(zs[3 * h + j]); // output gate
            }
        }
        let zs = z.as_slice().unwrap();
        {
            let c_row = cell.row_mut(t).into_slice().unwrap();
            let tc_row = tanh_c.row_mut(t).into_slice().unwrap();
            let h_row = hidden.row_mut(t).into_slice().unwrap();
            let cp = c_prev.as_slice().unwrap();
            for j in 0..h {
                let c = zs[h + j] * cp[j] + zs[j] * zs[2 * h + j];
                c_row[j] = c;
                tc_row[j] = c.tanh();
                h_row[j] = zs[3 * h + j] * tc_row[j];
            }
        }
        gates.row_mut(t).assign(&z);
        h_prev.assign(&hidden.row(t));
        c_prev.assign(&cell.row(t));
    }
    LstmCache {
        gates,
        cell,
        tanh_c,
        hidden,
    }
}

/// Backpropagates one LSTM direction. `dh` is the loss gradient w.r.t. the
/// direction's hidden outputs (T x H, processing order). Accumulates weight
/// gradients into `dp` and returns the gradient w.r.t. `x`.
fn lstm_backward(
    p: &LstmDirParams,
    dp: &mut LstmDirParams,
    x: &Array2<f64>,
    cache: &LstmCache,
    dh_out: &Array2<f64>,
) -> Array2<f64> {
    let t_len = x.nrows();
    let h = p.w_h.ncols();
    let mut dz_all = Array2::zeros((t_len, 4 * h));
    let mut dh_rec: Array1<f64> = Array1::zeros(h);
    let mut dc: Array1<f64> = Array1::zeros(h);
    for t in (0..t_len).rev() {
        let gates = cache.gates.row(t);
        let gs = gates.as_slice().unwrap();
        let tc = cache.tanh_c.row(t);
        let tcs = tc.as_slice().unwrap();
        let c_prev_row;
        let cp: &[f64] = if t == 0 {
            &[]
        } else {
            c_prev_row = cache.cell.row(t - 1);
            c_prev_row.as_slice().unwrap()
        };
        let mut dz_row = dz_all.row_mut(t);
        let dz = dz_row.as_slice_mut().unwrap();
        let dho = dh_out.row(t);
        let dho = dho.as_slice().unwrap();
        let dhr = dh_rec.as_slice().unwrap();
        let dcs = dc.as_slice_mut().unwrap();
        for j in 0..h {
            let dh_j = dho[j] + dhr[j];
            let (i, f, g, o) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
            let d_o = dh_j * tcs[j];
            let dc_j = dcs[j] + dh_j * o * (1.0 - tcs[j] * tcs[j]);
            let d_i = dc_j * g;
            let d_g = dc_j * i;
            let d_f = if t == 0 { 0.0 } else { dc_j * cp[j] };
            dz[j] = d_i * i * (1.0 - i);
            dz[h + j] = d_f * f * (1.0 - f);
            dz[2 * h + j] = d_g * (1.0 - g * g);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dcs[j] = dc_j * f;
        }
        dh_rec = p.w_h.t().dot(&dz_all.row(t));
    }
    // Weight gradients over the whole sequence as matrix products.
    dp.w_x += &dz_all.t().dot(x);
    if t_len > 1 {
        let dz_tail = dz_all.slice(s![1.., ..]);
        let h_head = cache.hidden.slice(s![..t_len - 1, ..]);
        dp.w_h += &dz_tail.t().dot(&h_head);
    }
    dp.b += &dz_all.sum_axis(Axis(0));
    dz_all.dot(&p.w_x)
}

/// Row-reversed copy in standard layout.
fn reversed_rows(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        out.row_mut(n - 1 - i).assign(&row);
    }
    out
}

/// Outer product a ⊗ b in standard layout.
fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    let bs = b.as_slice().expect("standard layout");
    for (i, &av) in a.iter().enumerate() {
        let mut row = out.row_mut(i);
        let rs = row.as_slice_mut().unwrap();
        for (j, &bv) in bs.iter().enumerate() {
            rs[j] = av * bv;
        }
    }
    out
}

/// One bidirectional layer: concatenated [forward ‖ backward] hidden states
/// per frame.
struct BiLayerCache {
    input: Array2<f64>,    // T x D
    fwd: LstmCache,        // processing order = time order
    bwd: LstmCache,        // processing order = reversed time
    bwd_in: Array2<f64>,   // reversed input
    output: Array2<f64>,   // T x 2H, time order
}

fn bilstm_forward(dirs: &[LstmDirParams; 2], input: Array2<f64>) -> BiLayerCache {
    let h = dirs[0].w_h.ncols();
    let t_len = input.nrows();
    let fwd = lstm_forward(&dirs[0], &input);
    let bwd_in = reversed_rows(&input);
    let bwd = lstm_forward(&dirs[1], &bwd_in);
    let mut output = Array2::zeros((t_len, 2 * h));
    output.slice_mut(s![.., ..h]).assign(&fwd.hidden);
    output
        .slice_mut(s![.., h..])
        .assign(&reversed_rows(&bwd.hidden));
    BiLayerCache {
        input,
        fwd,
        bwd,
        bwd_in,
        output,
    }
}

fn bilstm_backward(
    dirs: &[LstmDirParams; 2],
    dp: &mut [LstmDirParams; 2],
    cache: &BiLayerCache,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    let h = dirs[0].w_h.ncols();
    let dh_fwd = d_out.slice(s![.., ..h]).to_owned();
    let dh_bwd = reversed_rows(&d_out.slice(s![.., h..]).to_owned());
    let dx_fwd = lstm_backward(&dirs[0], &mut dp[0], &cache.input, &cache.fwd, &dh_fwd);
    let dx_bwd = lstm_backward(&dirs[1], &mut dp[1], &cache.bwd_in, &cache.bwd, &dh_bwd);
    dx_fwd + reversed_rows(&dx_bwd)
}

struct AttnCache {
    proj: Array2<f64>,  // T x P, post-tanh
    alpha: Array1<f64>, // T
    pooled: Array1<f64>,
}

fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn attn_forward(params: &ModelParams, h: &Array2<f64>) -> AttnCache {
    let mut proj = h.dot(&params.attn_w.t()); // T x P
    proj += &params.attn_b;
    proj.mapv_inplace(f64::tanh);
    let mut scores = proj.dot(&params.attn_ctx);
    softmax_inplace(scores.as_slice_mut().unwrap());
    let pooled = h.t().dot(&scores);
    AttnCache {
        proj,
        alpha: scores,
        pooled,
    }
}

/// Attention pooling: u_t = tanh(W·h_t + b), α = softmax_t(u_tᵀ·c),
/// output Σ_t α_t·h_t. Returns the pooled vector and the weights.
pub fn attention_pool(
    h: &Array2<f64>,
    attn_w: &Array2<f64>,
    attn_b: &Array1<f64>,
    attn_ctx: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let mut proj = h.dot(&attn_w.t());
    proj += attn_b;
    proj.mapv_inplace(f64::tanh);
    let mut scores = proj.dot(attn_ctx);
    softmax_inplace(scores.as_slice_mut().unwrap());
    let pooled = h.t().dot(&scores);
    (pooled, scores)
}

fn attn_backward(
    params: &ModelParams,
    grads: &mut ModelParams,
    h: &Array2<f64>,
    cache: &AttnCache,
    d_pooled: &Array1<f64>,
) -> Array2<f64> {
    // pooled = Σ_t α_t h_t
    let mut dh = outer(&cache.alpha, d_pooled);
    let d_alpha = h.dot(d_pooled); // T
    // Softmax backward.
    let dot: f64 = cache
        .alpha
        .iter()
        .zip(d_alpha.iter())
        .map(|(a, d)| a * d)
        .sum();
    let ds: Array1<f64> = cache
        .alpha
        .iter()
        .zip(d_alpha.iter())
        .map(|(a, d)| a * (d - dot))
        .collect();
    // scores = proj · ctx
    grads.attn_ctx += &cache.proj.t().dot(&ds);
    let du = outer(&ds, &params.attn_ctx); // T x P
    let dpre = &du * &cache.proj.mapv(|u| 1.0 - u * u);
    grads.attn_w += &dpre.t().dot(h);
    grads.attn_b += &dpre.sum_axis(Axis(0));
    dh += &dpre.dot(&params.attn_w);
    dh
}

struct ForwardCache {
    layers: Vec<BiLayerCache>,
    attn: AttnCache,
    fc1_pre: Array1<f64>,
    fc1_act: Array1<f64>,
    probs: Array1<f64>,
}

fn forward_full(params: &ModelParams, feats: &FeatureMatrix) -> Result<ForwardCache> {
    if feats.dims() != params.arch.input_dim {
        return Err(Error::invalid(format!(
            "feature dim {} does not match model input dim {}",
            feats.dims(),
            params.arch.input_dim
        )));
    }
    let mut layers = Vec::with_capacity(params.arch.num_layers);
    let mut x = feats.values().clone();
    for dirs in &params.layers {
        let cache = bilstm_forward(dirs, x);
        x = cache.output.clone();
        layers.push(cache);
    }
    let attn = attn_forward(params, &layers.last().unwrap().output);
    let mut fc1_pre = params.fc1_w.dot(&attn.pooled);
    fc1_pre += &params.fc1_b;
    let fc1_act = fc1_pre.mapv(|v| v.max(0.0));
    let mut logits = params.fc2_w.dot(&fc1_act);
    logits += &params.fc2_b;
    softmax_inplace(logits.as_slice_mut().unwrap());
    Ok(ForwardCache {
        layers,
        attn,
        fc1_pre,
        fc1_act,
        probs: logits,
    })
}

/// Posterior for one utterance.
pub fn forward(params: &ModelParams, feats: &FeatureMatrix) -> Result<Posterior> {
    let cache = forward_full(params, feats)?;
    Posterior::new(cache.probs[0], cache.probs[1])
}

/// Binary cross-entropy with the posterior clamped away from zero.
pub fn bce_loss(posterior: &Posterior, label: &SwitchLabel) -> f64 {
    let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0);
    -(label.p[0] * clamp(posterior.p0).ln() + label.p[1] * clamp(posterior.p1).ln())
}

/// Loss and exact gradients for one utterance.
pub fn grad(
    params: &ModelParams,
    feats: &FeatureMatrix,
    label: &SwitchLabel,
) -> Result<(f64, ModelParams)> {
    let cache = forward_full(params, feats)?;
    let posterior = Posterior::new(cache.probs[0], cache.probs[1])?;
    let loss = bce_loss(&posterior, label);
    let mut grads = params.zeros_like();

    // Softmax + cross-entropy.
    let dlogits = Array1::from(vec![
        cache.probs[0] - label.p[0],
        cache.probs[1] - label.p[1],
    ]);
    grads.fc2_w += &dlogits
        .view()
        .insert_axis(Axis(1))
        .to_owned()
        .dot(&cache.fc1_act.view().insert_axis(Axis(0)));
    grads.fc2_b += &dlogits;
    let dfc1_act = params.fc2_w.t().dot(&dlogits);
    let dfc1_pre: Array1<f64> = dfc1_act
        .iter()
        .zip(cache.fc1_pre.iter())
        .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
        .collect();
    grads.fc1_w += &dfc1_pre
        .view()
        .insert_axis(Axis(1))
        .to_owned()
        .dot(&cache.attn.pooled.view().insert_axis(Axis(0)));
    grads.fc1_b += &dfc1_pre;
    let d_pooled = params.fc1_w.t().dot(&dfc1_pre);

    let top = cache.layers.last().unwrap();
    let mut d_out = attn_backward(params, &mut grads, &top.output, &cache.attn, &d_pooled);
    for l in (0..params.layers.len()).rev() {
        // Split borrows: gradient layers vs parameter layers.
        let (dirs, layer_cache) = (&params.layers[l], &cache.layers[l]);
        let dp = &mut grads.layers[l];
        d_out = bilstm_backward(dirs, dp, layer_cache, &d_out);
    }
    Ok((loss, grads))
}

/// Padded-batch forward with masked attention pooling: equal to per-utterance
/// forward up to floating-point reassociation.
pub fn forward_batch(params: &ModelParams, batch: &[&FeatureMatrix]) -> Result<Vec<Posterior>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let b = batch.len();
    let h = params.arch.hidden;
    let lengths: Vec<usize> = batch.iter().map(|f| f.frames()).collect();
    let t_max = *lengths.iter().max().unwrap();
    for f in batch {
        if f.dims() != params.arch.input_dim {
            return Err(Error::invalid(format!(
                "feature dim {} does not match model input dim {}",
                f.dims(),
                params.arch.input_dim
            )));
        }
    }

    // T x B x D with zero padding past each utterance's length.
    let mut x = Array3::zeros((t_max, b, params.arch.input_dim));
    for (bi, f) in batch.iter().enumerate() {
        for t in 0..lengths[bi] {
            x.slice_mut(s![t, bi, ..]).assign(&f.values().row(t));
        }
    }

    for dirs in &params.layers {
        let d = x.shape()[2];
        // Gather each utterance reversed within its own length.
        let mut x_rev = Array3::zeros((t_max, b, d));
        for bi in 0..b {
            for t in 0..lengths[bi] {
                let src = x.slice(s![lengths[bi] - 1 - t, bi, ..]).to_owned();
                x_rev.slice_mut(s![t, bi, ..]).assign(&src);
            }
        }
        let h_fwd = lstm_forward_batch(&dirs[0], &x, b, t_max);
        let h_bwd = lstm_forward_batch(&dirs[1], &x_rev, b, t_max);
        let mut next = Array3::zeros((t_max, b, 2 * h));
        for bi in 0..b {
            for t in 0..lengths[bi] {
                let f_row = h_fwd.slice(s![t, bi, ..]).to_owned();
                next.slice_mut(s![t, bi, ..h]).assign(&f_row);
                let b_row = h_bwd.slice(s![lengths[bi] - 1 - t, bi, ..]).to_owned();
                next.slice_mut(s![t, bi, h..]).assign(&b_row);
            }
        }
        x = next;
    }

    // Masked attention pooling and the head, per utterance.
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let len = lengths[bi];
        let mut hmat = Array2::zeros((len, 2 * h));
        for t in 0..len {
            hmat.row_mut(t).assign(&x.slice(s![t, bi, ..]));
        }
        let attn = attn_forward(params, &hmat);
        let mut fc1 = params.fc1_w.dot(&attn.pooled);
        fc1 += &params.fc1_b;
        let fc1 = fc1.mapv(|v| v.max(0.0));
        let mut logits = params.fc2_w.dot(&fc1);
        logits += &params.fc2_b;
        softmax_inplace(logits.as_slice_mut().unwrap());
        out.push(Posterior::new(logits[0], logits[1])?);
    }
    Ok(out)
}

fn lstm_forward_batch(p: &LstmDirParams, x: &Array3<f64>, b: usize, t_max: usize) -> Array3<f64> {
    let h = p.w_h.ncols();
    let d = x.shape()[2];
    let flat = x
        .view()
        .into_shape_with_order((t_max * b, d))
        .expect("contiguous");
    let xp = flat.dot(&p.w_x.t()); // (T*B) x 4H
    let mut hidden = Array3::zeros((t_max, b, h));
    let mut h_prev: Array2<f64> = Array2::zeros((b, h));
    let mut c_prev: Array2<f64> = Array2::zeros((b, h));
    for t in 0..t_max {
        let mut z = xp.slice(s![t * b..(t + 1) * b, ..]).to_owned(); // B x 4H
        z += &h_prev.dot(&p.w_h.t());
        z += &p.b;
        for bi in 0..b {
            let zrow = z.row_mut(bi);
            let zs = zrow.into_slice().unwrap();
            let c_row = c_prev.row_mut(bi);
            let cs = c_row.into_slice().unwrap();
            let h_row = h_prev.row_mut(bi);
            let hs = h_row.into_slice().unwrap();
            for j in 0..h {
                let i = sigmoid(zs[j]);
                let f = sigmoid(zs[h + j]);
                let g = zs[2 * h + j].tanh();
                let o = sigmoid(zs[3 * h + j]);
                let c = f * cs[j] + i * g;
                cs[j] = c;
                hs[j] = o * c.tanh();
            }
        }
        hidden.slice_mut(s![t, .., ..]).assign(&h_prev);
    }
    hidden
}
