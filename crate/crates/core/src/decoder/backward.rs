// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-derived reverse pass for an unhooked forward [`Trace`].

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use super::forward::{gelu_grad, NormTrace, Trace};
use super::params::{DecoderParams, Slot};

/// Layer-norm backward. Accumulates gain/bias gradients and returns the
/// gradient with respect to the norm's input.
fn norm_backward(
    dy: ArrayView2<f64>,
    trace: &NormTrace,
    gain: ArrayView1<f64>,
    grads: &mut DecoderParams,
    gain_slot: Slot,
    bias_slot: Slot,
) -> Array2<f64> {
    let xhat = &trace.normalized;
    grads.vector_mut(gain_slot).scaled_add(1.0, &(&dy * xhat).sum_axis(Axis(0)));
    grads.vector_mut(bias_slot).scaled_add(1.0, &dy.sum_axis(Axis(0)));

    let dxhat = &dy * &gain;
    let cols = dxhat.ncols() as f64;
    let mut dx = Array2::zeros(dxhat.raw_dim());
    for r in 0..dxhat.nrows() {
        let g = dxhat.row(r);
        let xr = xhat.row(r);
        let mean_g = g.sum() / cols;
        let mean_gx = g.dot(&xr) / cols;
        let is = trace.inv_std[r];
        dx.row_mut(r)
            .iter_mut()
            .zip(g.iter().zip(xr))
            .for_each(|(d, (gv, xv))| *d = is * (gv - mean_g - xv * mean_gx));
    }
    dx
}

/// `grads[slot] += a^T · b`.
fn accumulate_outer(grads: &mut DecoderParams, slot: Slot, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, &mut grads.matrix_mut(slot));
}

/// Accumulates parameter gradients for `dlogits` (gradient of the loss with
/// respect to the final-position logits) into `grads`.
pub(crate) fn backward(params: &DecoderParams, trace: &Trace, dlogits: ArrayView1<f64>, grads: &mut DecoderParams) {
    let config = *params.config();
    let layout = params.layout().clone();
    let t = trace.tokens.len();
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // Output head and final norm (last position only).
    let dlogits2 = dlogits.insert_axis(Axis(0)).to_owned();
    accumulate_outer(grads, layout.unembed, &trace.final_norm.output, &dlogits2);
    let dh_final = dlogits2.dot(&params.matrix(layout.unembed).t());
    let dlast = norm_backward(
        dh_final.view(),
        &trace.final_norm,
        params.vector(layout.final_norm_gain),
        grads,
        layout.final_norm_gain,
        layout.final_norm_bias,
    );
    let mut dx = Array2::<f64>::zeros((t, config.model_dim));
    dx.slice_mut(s![t - 1..t, ..]).assign(&dlast);

    for (l, lt) in trace.layers.iter().enumerate().rev() {
        let slots = &layout.layers[l];

        // Feed-forward block.
        grads.vector_mut(slots.ff_out_bias).scaled_add(1.0, &dx.sum_axis(Axis(0)));
        accumulate_outer(grads, slots.ff_out, &lt.act, &dx);
        let mut dpre = dx.dot(&params.matrix(slots.ff_out).t());
        dpre.zip_mut_with(&lt.pre_act, |g, &u| *g *= gelu_grad(u));
        grads.vector_mut(slots.ff_in_bias).scaled_add(1.0, &dpre.sum_axis(Axis(0)));
        accumulate_outer(grads, slots.ff_in, &lt.ff_norm.output, &dpre);
        let dh2 = dpre.dot(&params.matrix(slots.ff_in).t());
        let mut dmid = dx;
        dmid += &norm_backward(
            dh2.view(),
            &lt.ff_norm,
            params.vector(slots.ff_norm_gain),
            grads,
            slots.ff_norm_gain,
            slots.ff_norm_bias,
        );

        // Attention block.
        accumulate_outer(grads, slots.output, &lt.mixed, &dmid);
        let dmixed = dmid.dot(&params.matrix(slots.output).t());
        let mut dq = Array2::<f64>::zeros((t, config.model_dim));
        let mut dk = Array2::<f64>::zeros((t, config.model_dim));
        let mut dv = Array2::<f64>::zeros((t, config.model_dim));
        for (head, p) in lt.probs.iter().enumerate() {
            let cols = head * dh..(head + 1) * dh;
            let dout = dmixed.slice(s![.., cols.clone()]);
            let qh = lt.q.slice(s![.., cols.clone()]);
            let kh = lt.k.slice(s![.., cols.clone()]);
            let vh = lt.v.slice(s![.., cols.clone()]);

            let dp = dout.dot(&vh.t());
            dv.slice_mut(s![.., cols.clone()]).assign(&p.t().dot(&dout));
            let mut ds = Array2::<f64>::zeros((t, t));
            for i in 0..t {
                let pr = p.row(i);
                let dpr = dp.row(i);
                let inner = pr.dot(&dpr);
                for j in 0..=i {
                    ds[[i, j]] = pr[j] * (dpr[j] - inner) * scale;
                }
            }
            dq.slice_mut(s![.., cols.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![.., cols]).assign(&ds.t().dot(&qh));
        }
        let h1 = &lt.attn_norm.output;
        accumulate_outer(grads, slots.query, h1, &dq);
        accumulate_outer(grads, slots.key, h1, &dk);
        accumulate_outer(grads, slots.value, h1, &dv);
        let mut dh1 = dq.dot(&params.matrix(slots.query).t());
        general_mat_mul(1.0, &dk, &params.matrix(slots.key).t(), 1.0, &mut dh1);
        general_mat_mul(1.0, &dv, &params.matrix(slots.value).t(), 1.0, &mut dh1);
        dx = dmid
            + norm_backward(
                dh1.view(),
                &lt.attn_norm,
                params.vector(slots.attn_norm_gain),
                grads,
                slots.attn_norm_gain,
                slots.attn_norm_bias,
            );
    }

    for (i, &tok) in trace.tokens.iter().enumerate() {
        let row = dx.row(i);
        grads
            .matrix_mut(layout.token_embedding)
            .row_mut(tok as usize)
            .scaled_add(1.0, &row);
        grads
            .matrix_mut(layout.position_embedding)
            .row_mut(i)
            .scaled_add(1.0, &row);
    }
}
