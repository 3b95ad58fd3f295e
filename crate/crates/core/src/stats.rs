//! Small numeric helpers used across the crate.

/// Finite and strictly positive.
pub fn is_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Finite and non-negative.
pub fn is_non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]. Finite only for `p` strictly inside (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n). For values confined to
/// [0, 1] this is bounded by 0.5.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    var.max(0.0).sqrt()
}

/// Standard error of the mean using the sample standard deviation (n - 1).
pub fn sample_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Mid-ranks (ties get the average rank), 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-NaN values"));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation coefficient.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Exact one-sided permutation p-value for a positive Spearman trend:
/// P(rho_perm >= rho_observed) over all permutations of `ys`. Only feasible
/// for small samples; panics above n = 9.
pub fn spearman_pvalue_positive(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    assert!(n <= 9, "exact permutation test limited to n <= 9");
    let observed = spearman_rho(xs, ys);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut count = 0usize;
    let mut total = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let ys_p: Vec<f64> = p.iter().map(|&i| ys[i]).collect();
        if spearman_rho(xs, &ys_p) >= observed - 1e-12 {
            count += 1;
        }
        total += 1;
    });
    count as f64 / total as f64
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Deterministic seed derivation (splitmix64 finalizer over the combined
/// words). Used to give every sub-task of a run its own RNG stream.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stream.wrapping_add(1)))
        .wrapping_add(0xbf58_476d_1ce4_e5b9u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(50.0) > 1.0 - 1e-12);
        assert!(sigmoid(-50.0) < 1e-12);
        // complementary within machine precision
        for z in [-7.3, -0.2, 0.0, 1.4, 12.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_round_trips() {
        for p in [1e-6, 0.05, 0.5, 0.9, 1.0 - 1e-6] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_perfect_trends() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [0.1, 0.2, 0.4, 0.8, 1.6];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman_rho(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&xs, &down) + 1.0).abs() < 1e-12);
        // perfect positive trend on 5 points: p = 1/120
        let p = spearman_pvalue_positive(&xs, &up);
        assert!((p - 1.0 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0.5, 0.5, 1.0, 2.0];
        let rho = spearman_rho(&xs, &ys);
        assert!(rho > 0.9 && rho <= 1.0);
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(7, 0, 0);
        let b = derive_seed(7, 0, 1);
        let c = derive_seed(7, 1, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 0, 0));
    }
}
