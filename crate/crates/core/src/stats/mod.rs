//! Cosine similarity, rank correlation, two-sample tests, multiple-testing
//! corrections, and ROC-AUC.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which two-sample test produced a [`TestResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    WelchT,
    PooledT,
    MannWhitneyExact,
    MannWhitneyNormal,
}

/// Outcome of a two-sided two-sample test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestMethod,
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjusted_p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine similarity of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of the tie groups in `x` (groups of one included).
fn tie_groups(x: &[f64]) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        out.push(j - i + 1);
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("correlation of lengths {} and {}", x.len(), y.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation with a constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with a t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("correlation of lengths {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Domain(format!("Spearman correlation needs at least 3 pairs, got {n}")));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))?;
    let df = n as f64 - 2.0;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        special::student_t_two_sided(t, df)
    };
    Ok(Correlation { rho, p_value, n })
}

/// Variance assumption for the two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    #[default]
    Welch,
    Pooled,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    t_test(a, b, Variance::Welch)
}

/// Independent two-sample t-test, two-sided.
pub fn t_test(a: &[f64], b: &[f64], variance_kind: Variance) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Domain(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a), variance(b));
    if va == 0.0 && vb == 0.0 {
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    let diff = mean(a) - mean(b);
    let (se, df, method) = match variance_kind {
        Variance::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            ((qa + qb).sqrt(), df, TestMethod::WelchT)
        }
        Variance::Pooled => {
            let df = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((sp2 * (1.0 / na + 1.0 / nb)).sqrt(), df, TestMethod::PooledT)
        }
    };
    let t = diff / se;
    Ok(TestResult {
        method,
        statistic: t,
        p_value: special::student_t_two_sided(t, df),
        n_a: a.len(),
        n_b: b.len(),
        df: Some(df),
        adjusted_p: None,
    })
}

/// How [`mann_whitney_u`] computes its p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UMethod {
    /// Exact when both samples are at most the threshold and there are no
    /// ties, otherwise the normal approximation.
    Auto { exact_threshold: usize },
    Exact,
    Normal,
}

impl Default for UMethod {
    fn default() -> Self {
        UMethod::Auto { exact_threshold: 8 }
    }
}

/// Largest pooled sample for which the exact distribution is computed.
const EXACT_LIMIT: usize = 40;

/// Mann-Whitney U test, two-sided. The statistic is
/// `U_a = R_a - n_a (n_a + 1) / 2`.
pub fn mann_whitney_u(a: &[f64], b: &[f64], method: UMethod) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("Mann-Whitney U needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numeric("Mann-Whitney U input contains NaN".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let (na, nb) = (a.len(), b.len());
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let ties = tie_groups(&pooled);
    let has_ties = ties.iter().any(|&t| t > 1);
    let exact = match method {
        UMethod::Auto { exact_threshold } => na <= exact_threshold && nb <= exact_threshold && !has_ties,
        UMethod::Exact => {
            if na + nb > EXACT_LIMIT {
                return Err(Error::Domain(format!(
                    "exact Mann-Whitney limited to {EXACT_LIMIT} pooled values"
                )));
            }
            true
        }
        UMethod::Normal => false,
    };
    let (p_value, method) = if exact {
        (exact_rank_sum_p(&ranks, na), TestMethod::MannWhitneyExact)
    } else {
        (normal_u_p(u, na, nb, &ties), TestMethod::MannWhitneyNormal)
    };
    Ok(TestResult {
        method,
        statistic: u,
        p_value,
        n_a: na,
        n_b: nb,
        df: None,
        adjusted_p: None,
    })
}

/// Exact permutation p-value of the rank sum of the first `na` entries,
/// counting labelings at least as far from the mean as the observed one.
fn exact_rank_sum_p(ranks: &[f64], na: usize) -> f64 {
    // Doubled average ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // ways[k][s]: number of k-subsets with doubled rank sum s.
    let mut ways = vec![vec![0f64; total + 1]; na + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=na).rev() {
            for s in (r..=total).rev() {
                let add = ways[k - 1][s - r];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let observed: usize = doubled[..na].iter().sum();
    let n = ranks.len();
    // Doubled expected rank sum: na (n + 1).
    let centre = (na * (n + 1)) as f64;
    let dist = (observed as f64 - centre).abs();
    let all: f64 = ways[na].iter().sum();
    let extreme: f64 = ways[na]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64 - centre).abs() >= dist - 1e-9)
        .map(|(_, w)| w)
        .sum();
    (extreme / all).min(1.0)
}

fn normal_u_p(u: f64, na: usize, nb: usize, ties: &[usize]) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    let n = na + nb;
    let mu = na * nb / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = if n > 1.0 {
        na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    special::normal_two_sided(z)
}

fn check_p_values(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(bad) => Err(Error::Domain(format!("p-value {bad} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// `p_i -> min(1, m p_i)`.
pub fn bonferroni(p: &[f64]) -> Result<Vec<f64>> {
    check_p_values(p)?;
    let m = p.len() as f64;
    Ok(p.iter().map(|v| (v * m).min(1.0)).collect())
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Result<Vec<f64>> {
    check_p_values(p)?;
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        let q = p[i] * m as f64 / (pos + 1) as f64;
        running = running.min(q);
        out[i] = running.min(1.0);
    }
    Ok(out)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("ROC-AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[2.0, -1.0], &[-2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_extremes_and_constant() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &x).unwrap().rho, 1.0);
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap().rho, -1.0);
        assert!(matches!(spearman(&x, &[1.0; 4]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn welch_equal_samples_and_shift() {
        let a = [1.0, 4.0, 2.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let b = [3.0, 9.0, 8.0, 7.0];
        let base = welch_t_test(&a, &b).unwrap();
        let shift = |v: &[f64]| v.iter().map(|x| x + 100.0).collect::<Vec<_>>();
        let moved = welch_t_test(&shift(&a), &shift(&b)).unwrap();
        assert!((base.statistic - moved.statistic).abs() < 1e-10);
        assert!((base.p_value - moved.p_value).abs() < 1e-10);
        assert!(matches!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mann_whitney_duality_and_equal_samples() {
        let a = [1.0, 5.0, 2.5];
        let b = [3.0, 4.0, 7.0, 8.0];
        let ab = mann_whitney_u(&a, &b, UMethod::default()).unwrap();
        let ba = mann_whitney_u(&b, &a, UMethod::default()).unwrap();
        assert_eq!(ab.statistic, 12.0 - ba.statistic);
        assert!((ab.p_value - ba.p_value).abs() < 1e-15);
        let same = mann_whitney_u(&a, &a, UMethod::Exact).unwrap();
        assert_eq!(same.p_value, 1.0);
    }

    #[test]
    fn corrections() {
        assert_eq!(bonferroni(&[0.01, 0.4, 0.1, 0.1, 0.1]).unwrap()[..2], [0.05, 1.0]);
        assert_eq!(bonferroni(&[0.3]).unwrap(), vec![0.3]);
        assert!(bonferroni(&[1.2]).is_err());
        assert_eq!(benjamini_hochberg(&[0.2]).unwrap(), vec![0.2]);
    }

    #[test]
    fn auc_edges() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }
}
