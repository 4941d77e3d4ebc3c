//! Small numeric helpers shared by the pipeline stages. Reductions
//! accumulate in f64 so streaming and offline paths stay stable and
//! reproducible; storage stays f32.

pub(crate) const NORM_EPS: f64 = 1e-5;

/// x * sigmoid(x); the swish/SiLU activation.
pub(crate) fn silu(x: f32) -> f32 {
    let xf = x as f64;
    (xf / (1.0 + (-xf).exp())) as f32
}

/// ln(1 + e^x), stable for large |x|.
pub(crate) fn softplus(x: f32) -> f32 {
    let xf = x as f64;
    if xf > 20.0 {
        (xf + (-xf).exp().ln_1p()) as f32
    } else {
        (xf.exp()).ln_1p() as f32
    }
}

/// Row-major matrix-vector product: out[r] = sum_c w[r,c] * x[c].
pub(crate) fn matvec_into(w: &[f32], x: &[f32], out: &mut [f32]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0f64;
        for (a, b) in row.iter().zip(x) {
            acc += *a as f64 * *b as f64;
        }
        *o = acc as f32;
    }
}

/// RMS normalization with learned gain: x / rms(x) * g.
pub(crate) fn rms_norm_into(x: &[f32], gain: &[f32], out: &mut [f32]) {
    let mut ss = 0.0f64;
    for &v in x {
        ss += v as f64 * v as f64;
    }
    let inv = 1.0 / (ss / x.len() as f64 + NORM_EPS).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = (v as f64 * inv * g as f64) as f32;
    }
}

/// Layer normalization with learned gain: (x - mean) / std * g.
pub(crate) fn layer_norm_into(x: &[f32], gain: &[f32], out: &mut [f32]) {
    let n = x.len() as f64;
    let mut mean = 0.0f64;
    for &v in x {
        mean += v as f64;
    }
    mean /= n;
    let mut var = 0.0f64;
    for &v in x {
        let d = v as f64 - mean;
        var += d * d;
    }
    var /= n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = ((v as f64 - mean) * inv * g as f64) as f32;
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
