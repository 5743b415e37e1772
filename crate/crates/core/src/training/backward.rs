use ndarray::{s, Array2, Axis};

use crate::exec::Exec;
use crate::fusion::{
    Aggregator, ForwardCache, MetaFeatures, ModelConfig, ModelParams, SubgraphStack, Variant,
};
use crate::hetgraph::FeatureMatrix;

/// Gradients of every parameter block given `∂L/∂logits`.
pub fn backward(
    stack: &SubgraphStack,
    features: &FeatureMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    cache: &ForwardCache<'_>,
    grad_logits: &Array2<f64>,
    exec: Exec,
) -> ModelParams {
    let mut grads = params.zeros_like();
    let fusion = &cache.fusion;
    let head = &cache.head;
    let pattern = fusion.fused.pattern();
    let k = stack.k();

    grads.head_bias = grad_logits.sum_axis(Axis(0)).insert_axis(Axis(0));

    // Head: gradient w.r.t. the fused edge values, and w.r.t. F_meta when
    // F_meta is itself computed.
    let (d_values, mut d_fmeta) = match &fusion.f_meta {
        MetaFeatures::Input(f) => {
            let y = head.outer.as_ref().expect("project-first head caches Y");
            let (dx, dv) = head
                .prop
                .backward(pattern, &head.inner, y, grad_logits, exec);
            grads.head_weight = f.project_transpose(&dx, exec);
            (dv, None)
        }
        MetaFeatures::Dense(fm) => {
            grads.head_weight = head.inner.t().dot(grad_logits);
            let dh = grad_logits.dot(&params.head_weight.t());
            let (dfm, dv) = head.prop.backward(pattern, fm, &head.inner, &dh, exec);
            (dv, Some(dfm))
        }
    };

    match &fusion.attention {
        None => {
            // A_meta[e] = Σ_k α_k a[e, k], α = softmax(w).
            let mut d_alpha = vec![0.0; k];
            for (e, &g) in d_values.iter().enumerate() {
                for (da, a) in d_alpha.iter_mut().zip(stack.entry(e)) {
                    *da += g * a;
                }
            }
            let alpha = &fusion.alpha;
            let inner: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            for kk in 0..k {
                grads.w[[0, kk]] = alpha[kk] * (d_alpha[kk] - inner);
            }
        }
        Some(att) => {
            let slope = config.leaky_slope;
            let act = config.attention_activation;
            let nnz = pattern.nnz();
            // ∂L/∂s for the pre-activation attention logits, nnz × K.
            let mut ds = vec![0.0; nnz * k];
            for e in 0..nnz {
                let w = &att.weights[e * k..(e + 1) * k];
                let a = stack.entry(e);
                let dw: Vec<f64> = a.iter().map(|a| d_values[e] * a).collect();
                let mean: f64 = w.iter().zip(&dw).map(|(w, d)| w * d).sum();
                for kk in 0..k {
                    let dz = w[kk] * (dw[kk] - mean);
                    ds[e * k + kk] = dz * act.derivative(att.logits[e * k + kk], slope);
                }
            }
            let n = pattern.n();
            let mut du = Array2::<f64>::zeros((n, k));
            let mut dv = Array2::<f64>::zeros((n, k));
            exec.for_rows(du.as_slice_mut().expect("contiguous"), k, |i, row| {
                for e in pattern.row_range(i) {
                    for kk in 0..k {
                        row[kk] += ds[e * k + kk];
                    }
                }
            });
            exec.for_rows(dv.as_slice_mut().expect("contiguous"), k, |j, row| {
                for e in pattern.row_range(j) {
                    let m = pattern.mirror[e];
                    for kk in 0..k {
                        row[kk] += ds[m * k + kk];
                    }
                }
            });
            let f_meta = &fusion.f_meta;
            let m = f_meta.cols();
            let gl = f_meta.project_transpose(&du, exec);
            let gr = f_meta.project_transpose(&dv, exec);
            grads.omega.slice_mut(s![.., ..m]).assign(&gl.t());
            grads.omega.slice_mut(s![.., m..]).assign(&gr.t());
            if let Some(dfm) = d_fmeta.as_mut() {
                *dfm += &du.dot(&params.omega.slice(s![.., ..m]));
                *dfm += &dv.dot(&params.omega.slice(s![.., m..]));
            }
        }
    }

    if config.variant == Variant::AggAttention {
        let dfm = d_fmeta.expect("aggregated variant computes F_meta");
        let h = config.hidden_dim;
        let slope = config.leaky_slope;
        let act = config.gnn_activation;
        for kk in 0..k {
            let df0 = match config.aggregator {
                Aggregator::Mean => &dfm / k as f64,
                Aggregator::Concat => dfm.slice(s![.., kk * h..(kk + 1) * h]).to_owned(),
            };
            let pre = &fusion.branch_pre[kk];
            let mut dp = df0;
            dp.zip_mut_with(pre, |g, &p| *g *= act.derivative(p, slope));
            let dx = stack.branch(kk).apply_transpose(stack.pattern(), &dp, exec);
            grads.meta_gnn[kk] = features.project_transpose(&dx, exec);
        }
    }
    grads
}
