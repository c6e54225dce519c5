use std::cmp::Ordering;

use super::SubpopWeights;
use crate::error::{DilError, Result};

fn check(n: usize, cap: f64) -> Result<()> {
    if n == 0 {
        return Err(DilError::Empty("capped simplex over zero samples"));
    }
    if !(cap > 0.0 && cap.is_finite()) || cap * (n as f64) < 1.0 - 1e-12 {
        return Err(DilError::Infeasible { cap, n });
    }
    Ok(())
}

/// Euclidean projection of `v` onto `{w : 0 <= w_i <= cap, sum w = 1}`.
///
/// The solution is `w = clip(v - tau, 0, cap)` where the mass
/// `m(tau) = sum clip(v_i - tau, 0, cap)` equals 1. `m` is piecewise linear
/// and non-increasing with breakpoints at `v_i` and `v_i - cap`, so `tau` is
/// found by bisection over the sorted breakpoints and then solved exactly on
/// the bracketing segment.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Result<SubpopWeights> {
    let n = v.len();
    check(n, cap)?;
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(DilError::InvalidParam(format!("entry {i} of the projected vector is not finite")));
    }
    let mass = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, cap)).sum::<f64>();

    let mut bps: Vec<f64> = v.iter().flat_map(|&x| [x - cap, x]).collect();
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    // first breakpoint with mass <= 1; the largest one has mass 0
    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if mass(bps[mid]) <= 1.0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let k = lo;
    let tau = if k == 0 || mass(bps[k]) == 1.0 {
        bps[k]
    } else {
        let (a, b) = (bps[k - 1], bps[k]);
        let mid = 0.5 * (a + b);
        let (mut free_sum, mut free, mut capped) = (0.0, 0usize, 0usize);
        for &x in v {
            let z = x - mid;
            if z >= cap {
                capped += 1;
            } else if z > 0.0 {
                free += 1;
                free_sum += x;
            }
        }
        if free == 0 {
            mid
        } else {
            ((free_sum + cap * capped as f64 - 1.0) / free as f64).clamp(a, b)
        }
    };
    let w: Vec<f64> = v.iter().map(|x| (x - tau).clamp(0.0, cap)).collect();
    SubpopWeights::from_cap(w, cap)
}

/// Exact maximizer of `sum_i w_i * score_i` over the capped simplex with
/// `cap = 1 / (alpha0 * n)`: full cap on the `floor(alpha0 * n)` highest
/// scores, the remaining mass on the next one. Ties go to the lower index.
pub fn top_mass_weights(scores: &[f64], alpha0: f64) -> Result<SubpopWeights> {
    let n = scores.len();
    let cap = super::cap_for(alpha0, n)?;
    check(n, cap)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let full = (((1.0 / cap) * (1.0 + 1e-12)).floor() as usize).min(n);
    let mut w = vec![0.0; n];
    for &i in &order[..full] {
        w[i] = cap;
    }
    let rest = 1.0 - cap * full as f64;
    if rest > 1e-12 && full < n {
        w[order[full]] = rest;
    }
    SubpopWeights::new(w, alpha0)
}
