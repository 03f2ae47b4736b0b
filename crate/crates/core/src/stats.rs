//! Hypothesis tests used to compare human and machine translations:
//! Wilcoxon signed-rank with Pratt zero handling, the exact binomial test
//! with a Clopper–Pearson interval, nominal Krippendorff's alpha, and a
//! paired percentile bootstrap.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("all differences are zero")]
    Degenerate,
    #[error("non-finite input value")]
    NonFinite,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no pairable values")]
    NoPairableValues,
}

/// Outcome of one procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    /// z for Wilcoxon, p-hat for binomial, alpha for Krippendorff, mean
    /// difference for the bootstrap.
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub effect_size: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n: usize,
    pub method: String,
    /// Secondary quantities (e.g. `w_plus`), keyed by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Two-sided normal tail probability of `z`.
pub fn two_sided_normal_p(z: f64) -> f64 {
    (2.0 * std_normal().cdf(-z.abs())).min(1.0)
}

/// Effect size `|z| / sqrt(N)`.
pub fn effect_size_r(z: f64, n: usize) -> f64 {
    z.abs() / (n as f64).sqrt()
}

/// Ranks of `values` (1-based), ties receiving their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    /// Exact for at most [`EXACT_MAX_NONZERO`] non-zero differences, normal otherwise.
    Auto,
    Exact,
    Normal,
}

pub const EXACT_MAX_NONZERO: usize = 25;
const EXACT_HARD_LIMIT: usize = 400;

/// Wilcoxon signed-rank test of `a - b` with Pratt zero handling, choosing
/// the exact or normal p-value by sample size.
pub fn wilcoxon_pratt(pairs: &[(f64, f64)]) -> Result<StatResult, StatsError> {
    wilcoxon_pratt_with(pairs, WilcoxonMode::Auto)
}

/// Zero differences are ranked with the rest and then dropped from W+.
/// `statistic` is the signed z of W+ (positive when `a` tends to exceed
/// `b`); `effect_size` is `|z| / sqrt(N)` with N counting zero pairs.
pub fn wilcoxon_pratt_with(pairs: &[(f64, f64)], mode: WilcoxonMode) -> Result<StatResult, StatsError> {
    if pairs.len() < 5 {
        return Err(StatsError::TooFewPairs {
            needed: 5,
            got: pairs.len(),
        });
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let n_total = d.len();
    let n_zero = d.iter().filter(|x| **x == 0.0).count();
    if n_zero == n_total {
        return Err(StatsError::Degenerate);
    }
    let ranks = average_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let nonzero: Vec<(f64, f64)> = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x != 0.0)
        .map(|(x, r)| (*x, *r))
        .collect();
    let w_plus: f64 = nonzero.iter().filter(|(x, _)| *x > 0.0).map(|(_, r)| r).sum();

    let nf = n_total as f64;
    let zf = n_zero as f64;
    let mean = (nf * (nf + 1.0) - zf * (zf + 1.0)) / 4.0;
    let mut var24 = nf * (nf + 1.0) * (2.0 * nf + 1.0) - zf * (zf + 1.0) * (2.0 * zf + 1.0);
    let mut nz_ranks: Vec<f64> = nonzero.iter().map(|(_, r)| *r).collect();
    nz_ranks.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < nz_ranks.len() {
        let mut j = i + 1;
        while j < nz_ranks.len() && nz_ranks[j] == nz_ranks[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        var24 -= 0.5 * t * (t * t - 1.0);
        i = j;
    }
    let sd = (var24 / 24.0).sqrt();
    let z = if sd > 0.0 { (w_plus - mean) / sd } else { 0.0 };

    let use_exact = match mode {
        WilcoxonMode::Auto => nonzero.len() <= EXACT_MAX_NONZERO,
        WilcoxonMode::Exact => true,
        WilcoxonMode::Normal => false,
    };
    let (p, method) = if use_exact {
        if nonzero.len() > EXACT_HARD_LIMIT {
            return Err(StatsError::Invalid(format!(
                "exact distribution limited to {EXACT_HARD_LIMIT} non-zero differences"
            )));
        }
        let doubled: Vec<usize> = nonzero.iter().map(|(_, r)| (2.0 * r).round() as usize).collect();
        let obs: usize = nonzero
            .iter()
            .zip(&doubled)
            .filter(|((x, _), _)| *x > 0.0)
            .map(|(_, r)| *r)
            .sum();
        (exact_signed_rank_p(&doubled, obs), "wilcoxon-pratt-exact")
    } else {
        (two_sided_normal_p(z), "wilcoxon-pratt-normal")
    };

    Ok(StatResult {
        statistic: z,
        p_value: Some(p),
        effect_size: Some(effect_size_r(z, n_total)),
        ci: None,
        n: n_total,
        method: method.to_string(),
        details: BTreeMap::from([
            ("w_plus".to_string(), w_plus),
            ("zeros".to_string(), zf),
        ]),
    })
}

/// Two-sided p of the signed-rank sum under random signs.
///
/// `ranks` are doubled (so tied half-ranks stay integral) and `observed` is
/// the doubled W+. Outcomes at least as far from the mean as `observed`
/// count toward p.
fn exact_signed_rank_p(ranks: &[usize], observed: usize) -> f64 {
    let total: usize = ranks.iter().sum();
    let mut prob = vec![0.0f64; total + 1];
    prob[0] = 1.0;
    let mut reach = 0;
    for &r in ranks {
        reach += r;
        for s in (0..=reach).rev() {
            let keep = prob[s] * 0.5;
            let add = if s >= r { prob[s - r] * 0.5 } else { 0.0 };
            prob[s] = keep + add;
        }
    }
    let dev = (2 * observed).abs_diff(total);
    let p: f64 = prob
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * s).abs_diff(total) >= dev)
        .map(|(_, q)| q)
        .sum();
    p.min(1.0)
}

fn ln_binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    let (kf, nf) = (k as f64, n as f64);
    ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0)
        + kf * p.ln()
        + (nf - kf) * (1.0 - p).ln()
}

/// Exact two-sided binomial test with a 95% Clopper–Pearson interval.
///
/// The p-value sums the probabilities of all outcomes no more likely than
/// the observed one (relative tolerance 1e-7).
pub fn binomial_test(successes: u64, trials: u64, p0: f64) -> Result<StatResult, StatsError> {
    if trials == 0 || successes > trials {
        return Err(StatsError::Invalid(format!(
            "need 0 <= successes <= trials >= 1, got {successes}/{trials}"
        )));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::Invalid(format!("p0 must lie in (0, 1), got {p0}")));
    }
    let observed = ln_binom_pmf(successes, trials, p0);
    let threshold = observed + (1.0 + 1e-7f64).ln();
    let p: f64 = (0..=trials)
        .map(|i| ln_binom_pmf(i, trials, p0))
        .filter(|lp| *lp <= threshold)
        .map(f64::exp)
        .sum();
    let ci = clopper_pearson(successes, trials, 0.05);
    Ok(StatResult {
        statistic: successes as f64 / trials as f64,
        p_value: Some(p.min(1.0)),
        effect_size: None,
        ci: Some(ci),
        n: trials as usize,
        method: "binomial-exact/clopper-pearson".to_string(),
        details: BTreeMap::from([("successes".to_string(), successes as f64)]),
    })
}

/// Exact binomial confidence interval at level `1 - alpha`.
pub fn clopper_pearson(successes: u64, trials: u64, alpha: f64) -> (f64, f64) {
    let (k, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, k, n - k + 1.0)
    };
    let upper = if successes == trials {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k)
    };
    (lower, upper)
}

/// Quantile of Beta(a, b) by bisection on the regularized incomplete beta.
fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Nominal ratings: one row per rater, one column per item, `None` for missing.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingsMatrix<C> {
    rows: Vec<Vec<Option<C>>>,
}

impl<C: Ord + Clone> RatingsMatrix<C> {
    pub fn new(rows: Vec<Vec<Option<C>>>) -> Result<Self, StatsError> {
        if rows.len() < 2 {
            return Err(StatsError::Invalid("at least two raters are required".into()));
        }
        let items = rows[0].len();
        if items == 0 || rows.iter().any(|r| r.len() != items) {
            return Err(StatsError::Invalid(
                "every rater needs a value slot for every item".into(),
            ));
        }
        Ok(RatingsMatrix { rows })
    }

    pub fn raters(&self) -> usize {
        self.rows.len()
    }

    pub fn items(&self) -> usize {
        self.rows[0].len()
    }

    fn item(&self, u: usize) -> impl Iterator<Item = &C> {
        self.rows.iter().filter_map(move |r| r[u].as_ref())
    }
}

/// Krippendorff's alpha for nominal data via the coincidence matrix.
///
/// Items with fewer than two ratings carry no pairable values and are ignored.
pub fn krippendorff_alpha<C: Ord + Clone>(ratings: &RatingsMatrix<C>) -> Result<StatResult, StatsError> {
    // coincidences o[c][k], keyed by category
    let mut o: BTreeMap<(&C, &C), f64> = BTreeMap::new();
    let mut pairable = 0usize;
    for u in 0..ratings.items() {
        let mut counts: BTreeMap<&C, usize> = BTreeMap::new();
        for v in ratings.item(u) {
            *counts.entry(v).or_insert(0) += 1;
        }
        let m: usize = counts.values().sum();
        if m < 2 {
            continue;
        }
        pairable += m;
        let denom = (m - 1) as f64;
        for (c, nc) in &counts {
            for (k, nk) in &counts {
                let pairs = if c == k { nc * (nc - 1) } else { nc * nk };
                if pairs > 0 {
                    *o.entry((*c, *k)).or_insert(0.0) += pairs as f64 / denom;
                }
            }
        }
    }
    if pairable == 0 {
        return Err(StatsError::NoPairableValues);
    }
    let mut marginals: BTreeMap<&C, f64> = BTreeMap::new();
    for ((c, _), v) in &o {
        *marginals.entry(*c).or_insert(0.0) += v;
    }
    let n: f64 = marginals.values().sum();
    let observed: f64 = o.iter().filter(|((c, k), _)| c != k).map(|(_, v)| v).sum();
    let alpha = if observed == 0.0 {
        1.0
    } else {
        let mut expected = 0.0;
        for (c, nc) in &marginals {
            for (k, nk) in &marginals {
                if c != k {
                    expected += nc * nk;
                }
            }
        }
        1.0 - (n - 1.0) * observed / expected
    };
    Ok(StatResult {
        statistic: alpha,
        p_value: None,
        effect_size: None,
        ci: None,
        n: pairable,
        method: "krippendorff-alpha-nominal".to_string(),
        details: BTreeMap::from([("observed_disagreement".to_string(), observed / n)]),
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of the mean paired difference `a - b`.
pub fn paired_bootstrap(pairs: &[(f64, f64)], resamples: usize, seed: u64) -> Result<StatResult, StatsError> {
    if resamples < 100 {
        return Err(StatsError::Invalid(format!("need at least 100 resamples, got {resamples}")));
    }
    if pairs.is_empty() {
        return Err(StatsError::TooFewPairs { needed: 1, got: 0 });
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| d[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let le = means.iter().filter(|m| **m <= 0.0).count();
    let ge = means.iter().filter(|m| **m >= 0.0).count();
    let p = (2.0 * le.min(ge) as f64 / resamples as f64).min(1.0);
    Ok(StatResult {
        statistic: mean,
        p_value: Some(p),
        effect_size: None,
        ci: Some((quantile_sorted(&means, 0.025), quantile_sorted(&means, 0.975))),
        n,
        method: "paired-bootstrap-percentile".to_string(),
        details: BTreeMap::from([("resamples".to_string(), resamples as f64)]),
    })
}

/// Reads score pairs from TSV: the last two tab-separated fields of each
/// line. A first line that does not parse is taken as a header.
pub fn read_pairs_tsv(text: &str) -> Result<Vec<(f64, f64)>, StatsError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = if f.len() >= 2 {
            f[f.len() - 2]
                .trim()
                .parse::<f64>()
                .ok()
                .zip(f[f.len() - 1].trim().parse::<f64>().ok())
        } else {
            None
        };
        match parsed {
            Some(p) => out.push(p),
            None if k == 0 => continue,
            None => {
                return Err(StatsError::Invalid(format!(
                    "line {}: expected two numeric columns",
                    k + 1
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diffs(d: &[f64]) -> Vec<(f64, f64)> {
        d.iter().map(|x| (*x, 0.0)).collect()
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn all_positive_six() {
        let r = wilcoxon_pratt(&diffs(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        assert_eq!(r.method, "wilcoxon-pratt-exact");
        assert!((r.p_value.unwrap() - 2.0 / 64.0).abs() < 1e-15);
        assert_eq!(r.details["w_plus"], 21.0);
        assert!(r.statistic > 0.0);
    }

    #[test]
    fn antisymmetry() {
        let d = [0.5, -1.2, 2.0, 3.1, -0.4, 1.7, 2.2, -0.9];
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        for mode in [WilcoxonMode::Exact, WilcoxonMode::Normal] {
            let a = wilcoxon_pratt_with(&diffs(&d), mode).unwrap();
            let b = wilcoxon_pratt_with(&diffs(&neg), mode).unwrap();
            assert!((a.statistic + b.statistic).abs() < 1e-12);
            assert!((a.p_value.unwrap() - b.p_value.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn pratt_keeps_zeros_in_ranking() {
        // |d| = 0, 1, 2, 3, 4: zero takes rank 1, so W+ = 2+3+4+5 = 14.
        let r = wilcoxon_pratt(&diffs(&[0.0, 1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(r.details["w_plus"], 14.0);
        assert_eq!(r.n, 5);
        // Exact over the 2^4 sign patterns of ranks {2,3,4,5}: only all-plus
        // and all-minus are as extreme.
        assert!((r.p_value.unwrap() - 2.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_short_inputs() {
        assert_eq!(wilcoxon_pratt(&diffs(&[0.0; 6])), Err(StatsError::Degenerate));
        assert!(matches!(wilcoxon_pratt(&diffs(&[1.0; 4])), Err(StatsError::TooFewPairs { .. })));
    }

    #[test]
    fn paper_effect_size() {
        let r = effect_size_r(-67.344, 121_385);
        assert!((r - 0.1933).abs() < 1e-4);
    }

    #[test]
    fn binomial_null_match() {
        let r = binomial_test(75, 150, 0.5).unwrap();
        assert!((r.p_value.unwrap() - 1.0).abs() < 0.01);
        assert_eq!(r.statistic, 0.5);
    }

    #[test]
    fn binomial_all_successes() {
        let r = binomial_test(150, 150, 0.5).unwrap();
        let expected = 2.0 * 0.5f64.powi(150);
        assert!((r.p_value.unwrap() / expected - 1.0).abs() < 1e-9);
        assert_eq!(r.ci.unwrap().1, 1.0);
    }

    #[test]
    fn binomial_small_enumeration() {
        // n = 5, k = 1: outcomes with pmf <= C(5,1)/32 are 0, 1, 4, 5
        let r = binomial_test(1, 5, 0.5).unwrap();
        assert!((r.p_value.unwrap() - 12.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn clopper_pearson_closed_forms() {
        // k = 0: upper = 1 - (alpha/2)^(1/n)
        let (lo, hi) = clopper_pearson(0, 10, 0.05);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9);
        // k = n: lower = (alpha/2)^(1/n)
        let (lo, hi) = clopper_pearson(10, 10, 0.05);
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-9);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn binomial_rejects_bad_input() {
        assert!(binomial_test(3, 2, 0.5).is_err());
        assert!(binomial_test(0, 0, 0.5).is_err());
        assert!(binomial_test(1, 2, 1.0).is_err());
    }

    #[test]
    fn alpha_perfect_agreement() {
        let item: Vec<Option<u8>> = (0..10).map(|k| Some(k % 2)).collect();
        let m = RatingsMatrix::new(vec![item.clone(), item.clone(), item]).unwrap();
        assert_eq!(krippendorff_alpha(&m).unwrap().statistic, 1.0);
    }

    #[test]
    fn alpha_systematic_disagreement() {
        // Coincidences: o_AB = o_BA = 4, n_A = n_B = 4, n = 8.
        // alpha = 1 - 7 * 8 / (2 * 16) = -0.75
        let a = vec![Some('A'); 4];
        let b = vec![Some('B'); 4];
        let r = krippendorff_alpha(&RatingsMatrix::new(vec![a, b]).unwrap()).unwrap();
        assert!((r.statistic + 0.75).abs() < 1e-12);
    }

    #[test]
    fn alpha_reference_example_with_missing_values() {
        // Four observers, twelve units, nominal; published alpha = 0.743.
        let rows = [
            "1 2 3 3 2 1 4 1 2 . . .",
            "1 2 3 3 2 2 4 1 2 5 . 3",
            ". 3 3 3 2 3 4 2 2 5 1 .",
            "1 2 3 3 2 4 4 1 2 5 1 .",
        ];
        let parsed: Vec<Vec<Option<u8>>> = rows
            .iter()
            .map(|r| r.split(' ').map(|v| v.parse().ok()).collect())
            .collect();
        let r = krippendorff_alpha(&RatingsMatrix::new(parsed).unwrap()).unwrap();
        assert!((r.statistic - 0.743).abs() < 5e-4, "{}", r.statistic);
    }

    #[test]
    fn alpha_ignores_empty_rater() {
        let a = vec![Some(1), Some(2), Some(2), Some(1), Some(3)];
        let b = vec![Some(1), Some(2), Some(1), Some(1), Some(3)];
        let without = krippendorff_alpha(&RatingsMatrix::new(vec![a.clone(), b.clone()]).unwrap()).unwrap();
        let with = krippendorff_alpha(&RatingsMatrix::new(vec![a, b, vec![None; 5]]).unwrap()).unwrap();
        assert_eq!(without.statistic, with.statistic);
    }

    #[test]
    fn alpha_needs_pairable_values() {
        let m = RatingsMatrix::new(vec![vec![Some(1), None], vec![None, Some(2)]]).unwrap();
        assert_eq!(krippendorff_alpha(&m), Err(StatsError::NoPairableValues));
        assert!(RatingsMatrix::<u8>::new(vec![vec![Some(1)]]).is_err());
    }

    #[test]
    fn bootstrap_constant_difference() {
        let pairs: Vec<(f64, f64)> = (0..50).map(|k| (k as f64 + 1.0, k as f64)).collect();
        let r = paired_bootstrap(&pairs, 500, 1).unwrap();
        assert_eq!(r.ci, Some((1.0, 1.0)));
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let pairs: Vec<(f64, f64)> = (0..40).map(|k| ((k * 37 % 11) as f64, (k % 7) as f64)).collect();
        let a = paired_bootstrap(&pairs, 1000, 42).unwrap();
        let b = paired_bootstrap(&pairs, 1000, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = paired_bootstrap(&pairs, 1000, 43).unwrap();
        assert_ne!(a.ci, c.ci);
        assert!(paired_bootstrap(&pairs, 99, 1).is_err());
    }

    #[test]
    fn tsv_reader() {
        let t = "s_hum\ts_cand\n1.5\t2\nx\t3\t4\n";
        assert_eq!(read_pairs_tsv(t).unwrap(), vec![(1.5, 2.0), (3.0, 4.0)]);
        assert!(read_pairs_tsv("1\t2\nfoo\n").is_err());
    }
}
