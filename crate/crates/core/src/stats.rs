//! Nonparametric statistics: member bootstrap, rank tests and paired bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sample size (n + m, or number of nonzero pairs) tested exactly.
pub const EXACT_MAX: usize = 12;

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            level: 0.95,
            replicates: 2000,
            seed: 0,
        }
    }
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl BootstrapCI {
    /// Degenerate interval at `point`.
    pub fn degenerate(point: f64, cfg: BootstrapConfig) -> Self {
        BootstrapCI {
            point,
            low: point,
            high: point,
            level: cfg.level,
            replicates: 0,
            seed: cfg.seed,
        }
    }

    /// Percentile interval from replicate values. The bounds are widened to
    /// include `point` when the percentile interval misses it.
    pub fn from_replicates(point: f64, mut values: Vec<f64>, cfg: BootstrapConfig) -> Self {
        values.retain(|v| v.is_finite());
        if values.is_empty() {
            return Self::degenerate(point, cfg);
        }
        values.sort_by(f64::total_cmp);
        let alpha = (1.0 - cfg.level) / 2.0;
        let low = order_statistic(&values, alpha);
        let high = order_statistic(&values, 1.0 - alpha);
        BootstrapCI {
            point,
            low: low.min(point),
            high: high.max(point),
            level: cfg.level,
            replicates: cfg.replicates,
            seed: cfg.seed,
        }
    }
}

/// Order statistic at quantile `q` of sorted values, using the smallest value
/// whose empirical CDF reaches `q`. Always returns an observed replicate.
fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

/// Seeded generator used by every resampling routine.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `n` members with replacement and returns how often each was drawn.
pub fn resample_multiplicities(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.gen_range(0..n)] += 1;
    }
    counts
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Bootstrap CI resampling whole members: each replicate draws members with
/// replacement and evaluates `stat` on the pooled observations of the draw.
pub fn member_bootstrap_ci<F>(groups: &[Vec<f64>], stat: F, cfg: BootstrapConfig) -> Result<BootstrapCI>
where
    F: Fn(&[f64]) -> f64,
{
    if groups.len() < 2 {
        return Err(Error::insufficient(format!(
            "member bootstrap needs at least 2 members, got {}",
            groups.len()
        )));
    }
    if !(0.0 < cfg.level && cfg.level < 1.0) || cfg.replicates == 0 {
        return Err(Error::invalid("bootstrap level must be in (0, 1) with at least one replicate"));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let point = stat(&pooled);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buf = Vec::with_capacity(pooled.len());
    let values: Vec<f64> = (0..cfg.replicates)
        .map(|_| {
            buf.clear();
            for _ in 0..groups.len() {
                buf.extend_from_slice(&groups[rng.gen_range(0..groups.len())]);
            }
            stat(&buf)
        })
        .collect();
    Ok(BootstrapCI::from_replicates(point, values, cfg))
}

/// Midranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
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

/// Sum of `t^3 - t` over tie groups.
fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * t * t - t;
        i = j + 1;
    }
    total
}

/// Standard normal upper tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

fn two_sided_normal_p(stat: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let diff = (stat - mean).abs();
    let corrected = (diff - 0.5).max(0.0);
    (2.0 * normal_sf(corrected / var.sqrt())).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample: pairs with x > y, ties counting one half.
    pub u: f64,
    pub p: f64,
    pub exact: bool,
}

/// Two-sided Mann-Whitney U test. Exact permutation distribution when
/// `n + m <= 12`, otherwise a tie-corrected normal approximation with
/// continuity correction.
pub fn mann_whitney_u(xs: &[f64], ys: &[f64]) -> Result<MannWhitney> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::insufficient("Mann-Whitney U needs two nonempty samples"));
    }
    let (n, m) = (xs.len(), ys.len());
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_x: f64 = ranks[..n].iter().sum();
    let u_of = |rank_sum: f64| rank_sum - (n * (n + 1)) as f64 / 2.0;
    let u = u_of(rank_sum_x);
    let center = (n * m) as f64 / 2.0;

    if n + m <= EXACT_MAX {
        let total = n + m;
        let observed = (u - center).abs();
        let (mut extreme, mut count) = (0u64, 0u64);
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let rs: f64 = (0..total).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            count += 1;
            if (u_of(rs) - center).abs() >= observed - TIE_EPS {
                extreme += 1;
            }
        }
        return Ok(MannWhitney {
            u,
            p: extreme as f64 / count as f64,
            exact: true,
        });
    }

    let big_n = (n + m) as f64;
    let var = (n * m) as f64 / 12.0 * ((big_n + 1.0) - tie_term(&pooled) / (big_n * (big_n - 1.0)));
    Ok(MannWhitney {
        u,
        p: two_sided_normal_p(u, center, var),
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub p: f64,
    pub exact: bool,
}

/// Two-sided Wilcoxon signed-rank test on differences `a - b`. Zero
/// differences are dropped; exact for at most 12 nonzero differences.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<Wilcoxon> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::insufficient("all paired differences are zero"));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let center = (n * (n + 1)) as f64 / 4.0;

    if n <= EXACT_MAX {
        let observed = (w_plus - center).abs();
        let mut extreme = 0u64;
        for mask in 0u32..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if (w - center).abs() >= observed - TIE_EPS {
                extreme += 1;
            }
        }
        return Ok(Wilcoxon {
            w_plus,
            n,
            p: extreme as f64 / (1u64 << n) as f64,
            exact: true,
        });
    }

    let nf = n as f64;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&abs) / 48.0;
    Ok(Wilcoxon {
        w_plus,
        n,
        p: two_sided_normal_p(w_plus, center, var),
        exact: false,
    })
}

/// Two-sided bootstrap p-value from replicate statistics: twice the fraction
/// of replicates whose sign disagrees with `observed`, clamped to
/// `[1/replicates, 1]`. An observed value of 0 gives 1.
pub fn bootstrap_sign_p(observed: f64, replicates: &[f64]) -> f64 {
    if observed == 0.0 || replicates.is_empty() {
        return 1.0;
    }
    let r = replicates.len() as f64;
    let opposite = replicates
        .iter()
        .filter(|&&v| !(v * observed.signum() > 0.0))
        .count() as f64;
    (2.0 * opposite / r).clamp(1.0 / r, 1.0)
}

/// Paired bootstrap resampling test on the mean difference of `a - b`,
/// resampling units with replacement.
pub fn paired_bootstrap_test(a: &[f64], b: &[f64], replicates: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || replicates == 0 {
        return Err(Error::insufficient("paired bootstrap needs data and replicates"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = mean(&d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d.len();
    let values: Vec<f64> = (0..replicates)
        .map(|_| (0..n).map(|_| d[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    Ok(bootstrap_sign_p(observed, &values))
}
