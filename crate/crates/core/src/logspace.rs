//! Numerically stable helpers for natural-log probabilities.

/// `ln(exp(a) + exp(b))`, with `-inf` as the log of zero.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// `ln(sum_i exp(xs[i]))`. Empty input yields `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Sum with Neumaier compensation; keeps dataset-level averages of many
/// log-likelihoods accurate to the last bit or so.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Natural log mapping exact zeros to `-inf`.
#[inline]
pub fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Rescales `xs` in place so it sums to one. Returns `false` and leaves the
/// slice untouched when the total is not positive and finite.
pub fn normalize(xs: &mut [f64]) -> bool {
    let total: f64 = xs.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return false;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
    true
}
