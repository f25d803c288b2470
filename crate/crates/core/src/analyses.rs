//! Headline analyses composed from the other modules. Every analysis returns
//! plain serializable rows; curves share the long CSV layout
//! `series,x,mean,ci_low,ci_high,n`.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    chunk_ranges, find_situation_setter, Conversation, Corpus, CounselorGroup, CounselorSplit, Message, Outcome, Role,
    DEFAULT_SETTER_MIN_TOKENS,
};
use crate::error::{Error, Result};
use crate::lexicon::{category_shares, first_share, LexiconSet, ResponseClass, SENTIMENT_CATEGORIES, SELF_CATEGORIES, TIME_CATEGORIES};
use crate::stages::{viterbi_decode, DurationConfig, StageModel, stage_durations};
use crate::stats::{
    bootstrap_sign_p, mann_whitney_u, mean, member_bootstrap_ci, resample_multiplicities, seeded_rng,
    wilcoxon_signed_rank, BootstrapCI, BootstrapConfig,
};
use crate::vectorspace::{
    cluster_situation_setters, cosine_similarity, ClusterSet, SparseVector, TfIdfModel, DEFAULT_MIN_NEIGHBORS,
    DEFAULT_RADIUS,
};

pub const DEFAULT_CHUNKS: usize = 5;
/// Lower edges of the situation-setter length buckets, in tokens.
pub const DEFAULT_BUCKET_EDGES: [usize; 5] = [1, 6, 11, 16, 26];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub chunks: usize,
    pub bootstrap: BootstrapConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            chunks: DEFAULT_CHUNKS,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

/// One point of a grouped curve. The interval is absent when fewer than two
/// members contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub x: String,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
}

impl CurvePoint {
    fn with_ci(series: impl Into<String>, x: impl Into<String>, ci: Option<BootstrapCI>, mean: f64, n: usize) -> Self {
        CurvePoint {
            series: series.into(),
            x: x.into(),
            mean,
            ci_low: ci.map(|c| c.low),
            ci_high: ci.map(|c| c.high),
            n,
        }
    }
}

pub fn write_curve_csv(points: &[CurvePoint], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["series", "x", "mean", "ci_low", "ci_high", "n"])?;
    for p in points {
        out.write_record([
            p.series.clone(),
            p.x.clone(),
            fmt(p.mean),
            p.ci_low.map(fmt).unwrap_or_default(),
            p.ci_high.map(fmt).unwrap_or_default(),
            p.n.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<curve csv>", e))?;
    Ok(())
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// Mean of pooled observations with a member-bootstrap interval.
fn member_point(series: &str, x: &str, members: &BTreeMap<&str, Vec<f64>>, cfg: BootstrapConfig) -> Result<Option<CurvePoint>> {
    let groups: Vec<Vec<f64>> = members.values().filter(|v| !v.is_empty()).cloned().collect();
    let n: usize = groups.iter().map(Vec::len).sum();
    if n == 0 {
        return Ok(None);
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let point = mean(&pooled);
    let ci = if groups.len() >= 2 {
        Some(member_bootstrap_ci(&groups, mean, cfg)?)
    } else {
        None
    };
    Ok(Some(CurvePoint::with_ci(series, x, ci, point, n)))
}

fn series_name(group: CounselorGroup, outcome: Outcome) -> String {
    format!("{group}/{outcome}")
}

fn chunk_label(j: usize) -> String {
    (j + 1).to_string()
}

fn role_tokens(conv: &Conversation, range: Range<usize>, role: Role) -> Vec<&str> {
    conv.messages[range]
        .iter()
        .filter(|m| m.role == role)
        .flat_map(|m| m.tokens.iter().map(String::as_str))
        .collect()
}

/// Labeled conversations of split members that are long enough to chunk.
fn grouped_labeled<'a>(
    corpus: &'a Corpus,
    split: &CounselorSplit,
    chunks: usize,
) -> impl Iterator<Item = (&'a Conversation, CounselorGroup, Outcome)> + 'a {
    let split = split.clone();
    corpus.conversations().iter().filter_map(move |c| {
        let outcome = c.outcome?;
        let group = split.group_of(&c.counselor_id)?;
        (c.len() >= chunks).then_some((c, group, outcome))
    })
}

// ---------------------------------------------------------------------------
// Adaptability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDifference {
    pub x: String,
    /// More successful minus less successful.
    pub difference: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptabilityReport {
    pub points: Vec<CurvePoint>,
    pub differences: Vec<GroupDifference>,
}

/// Counselor-level mean vectors of one group and chunk, with their Gram matrices.
struct ChunkCell {
    has_pos: Vec<bool>,
    has_neg: Vec<bool>,
    pp: Vec<Vec<f64>>,
    nn: Vec<Vec<f64>>,
    pn: Vec<Vec<f64>>,
    conversations: usize,
}

impl ChunkCell {
    fn new(pos: Vec<Option<SparseVector>>, neg: Vec<Option<SparseVector>>, conversations: usize) -> Self {
        let zero = SparseVector::default();
        let p: Vec<&SparseVector> = pos.iter().map(|v| v.as_ref().unwrap_or(&zero)).collect();
        let q: Vec<&SparseVector> = neg.iter().map(|v| v.as_ref().unwrap_or(&zero)).collect();
        let gram = |a: &[&SparseVector], b: &[&SparseVector]| -> Vec<Vec<f64>> {
            a.iter().map(|x| b.iter().map(|y| x.dot(y)).collect()).collect()
        };
        ChunkCell {
            has_pos: pos.iter().map(Option::is_some).collect(),
            has_neg: neg.iter().map(Option::is_some).collect(),
            pp: gram(&p, &p),
            nn: gram(&q, &q),
            pn: gram(&p, &q),
            conversations,
        }
    }

    /// Cosine distance between the weighted positive and negative sums.
    fn distance(&self, weights: &[u32]) -> Option<f64> {
        let any = |flags: &[bool]| flags.iter().zip(weights).any(|(f, w)| *f && *w > 0);
        if !any(&self.has_pos) || !any(&self.has_neg) {
            return None;
        }
        let quad = |g: &[Vec<f64>]| -> f64 {
            let mut total = 0.0;
            for (i, wi) in weights.iter().enumerate() {
                if *wi == 0 {
                    continue;
                }
                for (k, wk) in weights.iter().enumerate() {
                    if *wk != 0 {
                        total += (*wi as f64) * (*wk as f64) * g[i][k];
                    }
                }
            }
            total
        };
        let (pp, nn, pn) = (quad(&self.pp), quad(&self.nn), quad(&self.pn));
        if pp <= 0.0 || nn <= 0.0 {
            return None;
        }
        Some((1.0 - pn / (pp * nn).sqrt()).clamp(0.0, 1.0))
    }
}

/// Per-chunk cosine distance between a group's positive and negative counselor
/// language. Every counselor contributes equally within each outcome; IDF is
/// fitted on the counselor text of every conversation. Intervals resample
/// counselors; the per-chunk group difference is tested with the same
/// replicates.
pub fn adaptability_curve(corpus: &Corpus, split: &CounselorSplit, cfg: AnalysisConfig) -> Result<AdaptabilityReport> {
    let docs: Vec<Vec<&str>> = corpus
        .conversations()
        .iter()
        .map(|c| role_tokens(c, 0..c.len(), Role::Counselor))
        .collect();
    let model = TfIdfModel::fit(&docs, 1)?;
    let k = cfg.chunks;

    let mut cells: BTreeMap<CounselorGroup, Vec<ChunkCell>> = BTreeMap::new();
    for group in CounselorGroup::BOTH {
        let members: Vec<&str> = split.members(group).iter().map(String::as_str).collect();
        let index: BTreeMap<&str, usize> = members.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        // sums[chunk][outcome][member] = (pairs, count)
        let mut sums = vec![[vec![(Vec::new(), 0usize); members.len()], vec![(Vec::new(), 0usize); members.len()]]; k];
        let mut convs = vec![0usize; k];
        for (conv, g, outcome) in grouped_labeled(corpus, split, k) {
            if g != group {
                continue;
            }
            let m = index[conv.counselor_id.as_str()];
            let o = usize::from(!outcome.is_positive());
            for (j, range) in chunk_ranges(conv.len(), k)?.into_iter().enumerate() {
                let v = model.vectorize(&role_tokens(conv, range, Role::Counselor));
                let slot = &mut sums[j][o][m];
                slot.0.extend_from_slice(v.entries());
                slot.1 += 1;
                convs[j] += 1;
            }
        }
        let row = sums
            .into_iter()
            .zip(convs)
            .map(|([pos, neg], n)| {
                let mean_vec = |(pairs, count): (Vec<(usize, f64)>, usize)| {
                    (count > 0).then(|| SparseVector::from_pairs(pairs).scaled(1.0 / count as f64))
                };
                ChunkCell::new(
                    pos.into_iter().map(mean_vec).collect(),
                    neg.into_iter().map(mean_vec).collect(),
                    n,
                )
            })
            .collect();
        cells.insert(group, row);
    }

    let boot = cfg.bootstrap;
    let mut rng = seeded_rng(boot.seed);
    let mut points = Vec::new();
    let mut differences = Vec::new();
    for j in 0..k {
        let more = &cells[&CounselorGroup::MoreSuccessful][j];
        let less = &cells[&CounselorGroup::LessSuccessful][j];
        let full = |c: &ChunkCell| c.distance(&vec![1; c.has_pos.len()]);
        let (point_more, point_less) = (full(more), full(less));
        let (mut reps_more, mut reps_less, mut reps_diff) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..boot.replicates {
            let wm = resample_multiplicities(&mut rng, more.has_pos.len());
            let wl = resample_multiplicities(&mut rng, less.has_pos.len());
            let dm = more.distance(&wm);
            let dl = less.distance(&wl);
            if let Some(d) = dm {
                reps_more.push(d);
            }
            if let Some(d) = dl {
                reps_less.push(d);
            }
            if let (Some(a), Some(b)) = (dm, dl) {
                reps_diff.push(a - b);
            }
        }
        for (group, point, reps, cell) in [
            (CounselorGroup::MoreSuccessful, point_more, reps_more, more),
            (CounselorGroup::LessSuccessful, point_less, reps_less, less),
        ] {
            if let Some(d) = point {
                let ci = (cell.has_pos.len() >= 2).then(|| BootstrapCI::from_replicates(d, reps, boot));
                points.push(CurvePoint::with_ci(group.as_str(), chunk_label(j), ci, d, cell.conversations));
            }
        }
        if let (Some(a), Some(b)) = (point_more, point_less) {
            differences.push(GroupDifference {
                x: chunk_label(j),
                difference: a - b,
                p: bootstrap_sign_p(a - b, &reps_diff),
            });
        }
    }
    Ok(AdaptabilityReport { points, differences })
}

// ---------------------------------------------------------------------------
// Progress curves

/// Mean of a per-conversation-chunk observation for each group and outcome,
/// with intervals clustered by counselor.
pub fn grouped_chunk_curve<F>(corpus: &Corpus, split: &CounselorSplit, cfg: AnalysisConfig, observe: F) -> Result<Vec<CurvePoint>>
where
    F: Fn(&Conversation, Range<usize>) -> Vec<f64>,
{
    let k = cfg.chunks;
    let mut cells: BTreeMap<(CounselorGroup, Outcome, usize), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for (conv, group, outcome) in grouped_labeled(corpus, split, k) {
        for (j, range) in chunk_ranges(conv.len(), k)?.into_iter().enumerate() {
            cells
                .entry((group, outcome, j))
                .or_default()
                .entry(conv.counselor_id.as_str())
                .or_default()
                .extend(observe(conv, range));
        }
    }
    let mut points = Vec::new();
    for group in CounselorGroup::BOTH {
        for outcome in [Outcome::Positive, Outcome::Negative] {
            for j in 0..k {
                if let Some(members) = cells.get(&(group, outcome, j)) {
                    if let Some(p) = member_point(&series_name(group, outcome), &chunk_label(j), members, cfg.bootstrap)? {
                        points.push(p);
                    }
                }
            }
        }
    }
    Ok(points)
}

/// Per-chunk mean of a per-message metric; messages where the metric is
/// undefined are skipped.
pub fn progress_curves<F>(corpus: &Corpus, split: &CounselorSplit, cfg: AnalysisConfig, metric: F) -> Result<Vec<CurvePoint>>
where
    F: Fn(&Message) -> Option<f64>,
{
    grouped_chunk_curve(corpus, split, cfg, |conv, range| {
        conv.messages[range].iter().filter_map(&metric).collect()
    })
}

/// Counselor message length in tokens.
pub fn counselor_length(m: &Message) -> Option<f64> {
    (m.role == Role::Counselor).then_some(m.tokens.len() as f64)
}

/// Ratio of counselor to texter tokens within a chunk.
pub fn length_ratio(conv: &Conversation, range: Range<usize>) -> Vec<f64> {
    let c = role_tokens(conv, range.clone(), Role::Counselor).len();
    let t = role_tokens(conv, range, Role::Texter).len();
    if t == 0 {
        vec![]
    } else {
        vec![c as f64 / t as f64]
    }
}

// ---------------------------------------------------------------------------
// Ambiguity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityConfig {
    pub setter_min_tokens: usize,
    /// Ascending lower bucket edges; the last bucket is open-ended.
    pub bucket_edges: Vec<usize>,
    pub bootstrap: BootstrapConfig,
}

impl Default for AmbiguityConfig {
    fn default() -> Self {
        AmbiguityConfig {
            setter_min_tokens: DEFAULT_SETTER_MIN_TOKENS,
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
            bootstrap: BootstrapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    /// Success rate per setter-length bucket (series `success_rate`) and mean
    /// ratio of the first counselor reply length to the setter length (series
    /// `length_ratio`).
    pub points: Vec<CurvePoint>,
    pub conversations_with_setter: usize,
    pub labeled_without_setter: usize,
}

pub fn bucket_labels(edges: &[usize]) -> Vec<String> {
    edges
        .iter()
        .enumerate()
        .map(|(i, lo)| match edges.get(i + 1) {
            Some(hi) => format!("{lo}-{}", hi - 1),
            None => format!("{lo}+"),
        })
        .collect()
}

fn bucket_of(edges: &[usize], len: usize) -> Option<usize> {
    edges.iter().rposition(|&lo| len >= lo)
}

/// First counselor message after `from`.
fn next_message(conv: &Conversation, from: usize, role: Role) -> Option<usize> {
    (from + 1..conv.len()).find(|&i| conv.messages[i].role == role)
}

pub fn ambiguity_analysis(corpus: &Corpus, cfg: &AmbiguityConfig) -> Result<AmbiguityReport> {
    if cfg.bucket_edges.is_empty() || cfg.bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("bucket edges must be nonempty and strictly increasing"));
    }
    let labels = bucket_labels(&cfg.bucket_edges);
    let mut success: Vec<BTreeMap<&str, Vec<f64>>> = vec![BTreeMap::new(); labels.len()];
    let mut ratio: Vec<BTreeMap<&str, Vec<f64>>> = vec![BTreeMap::new(); labels.len()];
    let (mut with_setter, mut without) = (0, 0);
    for conv in corpus.labeled() {
        let Some(s) = find_situation_setter(conv, cfg.setter_min_tokens) else {
            without += 1;
            continue;
        };
        with_setter += 1;
        let setter_len = conv.messages[s].tokens.len();
        let Some(b) = bucket_of(&cfg.bucket_edges, setter_len) else { continue };
        let who = conv.counselor_id.as_str();
        let positive = conv.outcome.is_some_and(Outcome::is_positive);
        success[b].entry(who).or_default().push(f64::from(u8::from(positive)));
        if let Some(r) = next_message(conv, s, Role::Counselor) {
            ratio[b]
                .entry(who)
                .or_default()
                .push(conv.messages[r].tokens.len() as f64 / setter_len as f64);
        }
    }
    let mut points = Vec::new();
    for (series, cells) in [("success_rate", &success), ("length_ratio", &ratio)] {
        for (label, members) in labels.iter().zip(cells) {
            if let Some(p) = member_point(series, label, members, cfg.bootstrap)? {
                points.push(p);
            }
        }
    }
    Ok(AmbiguityReport {
        points,
        conversations_with_setter: with_setter,
        labeled_without_setter: without,
    })
}

// ---------------------------------------------------------------------------
// Matched responses

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub setter_min_tokens: usize,
    pub radius: f64,
    pub min_neighbors: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            setter_min_tokens: DEFAULT_SETTER_MIN_TOKENS,
            radius: DEFAULT_RADIUS,
            min_neighbors: DEFAULT_MIN_NEIGHBORS,
        }
    }
}

/// Situation setters keyed by conversation id, in corpus order.
pub fn situation_setters(corpus: &Corpus, min_tokens: usize) -> Vec<(String, Vec<String>)> {
    corpus
        .conversations()
        .iter()
        .filter_map(|c| find_situation_setter(c, min_tokens).map(|i| (c.id.clone(), c.messages[i].tokens.clone())))
        .collect()
}

/// Clusters near-identical situation setters under a bigram TF-IDF model
/// fitted on all setters.
pub fn setter_clusters(corpus: &Corpus, cfg: MatchConfig) -> Result<ClusterSet> {
    let docs = situation_setters(corpus, cfg.setter_min_tokens);
    if docs.is_empty() {
        return Err(Error::insufficient("no situation setters found"));
    }
    let tokens: Vec<&Vec<String>> = docs.iter().map(|(_, t)| t).collect();
    let model = TfIdfModel::fit(&tokens, 2)?;
    cluster_situation_setters(&model, &docs, cfg.radius, cfg.min_neighbors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedMetric {
    pub metric: String,
    pub more_successful: Option<f64>,
    pub less_successful: Option<f64>,
    /// Clusters where both groups have a value.
    pub pairs: usize,
    pub w_plus: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedReport {
    pub clusters: usize,
    pub clustered_conversations: usize,
    pub metrics: Vec<MatchedMetric>,
}

pub const MATCHED_METRICS: [&str; 12] = [
    "success_rate",
    "messages",
    "setter_length",
    "counselor_response_length",
    "texter_response_length",
    "counselor_response_similarity",
    "texter_response_similarity",
    "check_question",
    "suicide_check",
    "thanks",
    "hedge",
    "surprise",
];

fn matched_values(
    conv: &Conversation,
    setter_min_tokens: usize,
    lexicons: &LexiconSet,
    model: &TfIdfModel,
) -> Vec<Option<f64>> {
    let mut out = vec![None; MATCHED_METRICS.len()];
    out[0] = conv.outcome.map(|o| f64::from(u8::from(o.is_positive())));
    out[1] = Some(conv.len() as f64);
    let Some(s) = find_situation_setter(conv, setter_min_tokens) else { return out };
    let setter = &conv.messages[s];
    out[2] = Some(setter.tokens.len() as f64);
    let setter_vec = model.vectorize(&setter.tokens);
    if let Some(c) = next_message(conv, s, Role::Counselor) {
        let reply = &conv.messages[c];
        out[3] = Some(reply.tokens.len() as f64);
        out[5] = Some(cosine_similarity(&model.vectorize(&reply.tokens), &setter_vec));
        let classes = lexicons.response_classes.detect(&reply.text);
        for (i, class) in ResponseClass::ALL.iter().enumerate() {
            out[7 + i] = Some(f64::from(u8::from(classes.contains(class))));
        }
        if let Some(t) = next_message(conv, c, Role::Texter) {
            let reply = &conv.messages[t];
            out[4] = Some(reply.tokens.len() as f64);
            out[6] = Some(cosine_similarity(&model.vectorize(&reply.tokens), &setter_vec));
        }
    }
    out
}

/// Compares the two counselor groups on conversations whose situation setters
/// fall in the same cluster. Response class and success metrics are
/// fractions; paired Wilcoxon tests pair the two group means of every cluster
/// that contains both groups.
pub fn matched_response_comparison(
    corpus: &Corpus,
    split: &CounselorSplit,
    clusters: &ClusterSet,
    lexicons: &LexiconSet,
    setter_min_tokens: usize,
) -> Result<MatchedReport> {
    let docs: Vec<Vec<&str>> = corpus
        .conversations()
        .iter()
        .flat_map(|c| c.messages.iter().map(|m| m.tokens.iter().map(String::as_str).collect()))
        .collect();
    let model = TfIdfModel::fit(&docs, 1)?;
    let n_metrics = MATCHED_METRICS.len();
    // overall[group][metric] values; per_cluster[cluster][group][metric] values
    let mut overall: BTreeMap<CounselorGroup, Vec<Vec<f64>>> = BTreeMap::new();
    let mut per_cluster: Vec<BTreeMap<CounselorGroup, Vec<Vec<f64>>>> = Vec::new();
    let mut clustered = 0;
    for cluster in &clusters.clusters {
        let mut cell: BTreeMap<CounselorGroup, Vec<Vec<f64>>> = BTreeMap::new();
        for id in cluster {
            let conv = corpus
                .get(id)
                .ok_or_else(|| Error::invalid(format!("clustered conversation `{id}` is not in the corpus")))?;
            let Some(group) = split.group_of(&conv.counselor_id) else { continue };
            clustered += 1;
            let values = matched_values(conv, setter_min_tokens, lexicons, &model);
            for (i, v) in values.into_iter().enumerate() {
                if let Some(v) = v {
                    cell.entry(group).or_insert_with(|| vec![vec![]; n_metrics])[i].push(v);
                    overall.entry(group).or_insert_with(|| vec![vec![]; n_metrics])[i].push(v);
                }
            }
        }
        per_cluster.push(cell);
    }
    let group_mean = |map: &BTreeMap<CounselorGroup, Vec<Vec<f64>>>, g: CounselorGroup, i: usize| {
        map.get(&g).map(|v| &v[i]).filter(|v| !v.is_empty()).map(|v| mean(v))
    };
    let mut metrics = Vec::new();
    for (i, name) in MATCHED_METRICS.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = per_cluster
            .iter()
            .filter_map(|cell| {
                Some((
                    group_mean(cell, CounselorGroup::MoreSuccessful, i)?,
                    group_mean(cell, CounselorGroup::LessSuccessful, i)?,
                ))
            })
            .collect();
        let (w_plus, p) = if pairs.is_empty() {
            (None, None)
        } else if pairs.iter().all(|(a, b)| a == b) {
            (Some(0.0), Some(1.0))
        } else {
            let w = wilcoxon_signed_rank(&pairs)?;
            (Some(w.w_plus), Some(w.p))
        };
        metrics.push(MatchedMetric {
            metric: name.to_string(),
            more_successful: group_mean(&overall, CounselorGroup::MoreSuccessful, i),
            less_successful: group_mean(&overall, CounselorGroup::LessSuccessful, i),
            pairs: pairs.len(),
            w_plus,
            p,
        });
    }
    Ok(MatchedReport {
        clusters: clusters.clusters.len(),
        clustered_conversations: clustered,
        metrics,
    })
}

pub fn write_matched_csv(report: &MatchedReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "more_successful", "less_successful", "pairs", "w_plus", "p"])?;
    for m in &report.metrics {
        out.write_record([
            m.metric.clone(),
            fmt_opt(m.more_successful),
            fmt_opt(m.less_successful),
            m.pairs.to_string(),
            fmt_opt(m.w_plus),
            fmt_opt(m.p),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<matched csv>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Perspective change

/// Texter perspective per chunk, split by outcome. Series are
/// `<measure>/<outcome>` for the time shares (`past`, `present`, `future`),
/// the first-person share `self` and the positive-emotion share `positive`.
/// Each conversation is one bootstrap member.
pub fn perspective_trajectories(corpus: &Corpus, lexicons: &LexiconSet, cfg: AnalysisConfig) -> Result<Vec<CurvePoint>> {
    let time = lexicons.categories(&TIME_CATEGORIES)?;
    let own = lexicons.categories(&SELF_CATEGORIES)?;
    let emo = lexicons.categories(&SENTIMENT_CATEGORIES)?;
    let measures: Vec<&str> = TIME_CATEGORIES.iter().copied().chain(["self", "positive"]).collect();
    let k = cfg.chunks;
    let mut cells: BTreeMap<(usize, Outcome, usize), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for conv in corpus.labeled().filter(|c| c.len() >= k) {
        let outcome = conv.outcome.expect("labeled");
        for (j, range) in chunk_ranges(conv.len(), k)?.into_iter().enumerate() {
            let tokens = role_tokens(conv, range, Role::Texter);
            let mut values: Vec<Option<f64>> = match category_shares(&tokens, &time) {
                Some(shares) => TIME_CATEGORIES.iter().map(|c| Some(shares[*c])).collect(),
                None => vec![None; TIME_CATEGORIES.len()],
            };
            values.push(first_share(&tokens, own[0], own[1]));
            values.push(first_share(&tokens, emo[0], emo[1]));
            for (m, v) in values.into_iter().enumerate() {
                if let Some(v) = v {
                    cells.entry((m, outcome, j)).or_default().insert(conv.id.as_str(), vec![v]);
                }
            }
        }
    }
    let mut points = Vec::new();
    for (m, measure) in measures.iter().enumerate() {
        for outcome in [Outcome::Positive, Outcome::Negative] {
            for j in 0..k {
                if let Some(members) = cells.get(&(m, outcome, j)) {
                    if let Some(p) = member_point(&format!("{measure}/{outcome}"), &chunk_label(j), members, cfg.bootstrap)? {
                        points.push(p);
                    }
                }
            }
        }
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Templatedness of setter responses

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatednessReport {
    pub radius: f64,
    /// `(conversation id, neighbor count)` for every counselor response to a
    /// situation setter, in corpus order.
    pub counts: Vec<(String, usize)>,
    /// Mean neighbor count per counselor group, with a Mann-Whitney test over
    /// the per-response counts.
    pub group_means: BTreeMap<String, f64>,
    pub u: Option<f64>,
    pub p: Option<f64>,
}

/// Counts near-duplicate counselor responses to situation setters under a
/// unigram TF-IDF model fitted on those responses.
pub fn response_templatedness(
    corpus: &Corpus,
    split: &CounselorSplit,
    setter_min_tokens: usize,
    radius: f64,
) -> Result<TemplatednessReport> {
    let mut responses: Vec<(String, Vec<String>)> = Vec::new();
    let mut groups = Vec::new();
    for conv in corpus.conversations() {
        let Some(s) = find_situation_setter(conv, setter_min_tokens) else { continue };
        let Some(r) = next_message(conv, s, Role::Counselor) else { continue };
        responses.push((conv.id.clone(), conv.messages[r].tokens.clone()));
        groups.push(split.group_of(&conv.counselor_id));
    }
    if responses.is_empty() {
        return Err(Error::insufficient("no counselor responses to situation setters"));
    }
    let model = TfIdfModel::fit(&responses.iter().map(|(_, t)| t.as_slice()).collect::<Vec<_>>(), 1)?;
    let counts = crate::vectorspace::templatedness(&model, &responses, radius)?;
    let mut by_group: BTreeMap<CounselorGroup, Vec<f64>> = BTreeMap::new();
    for ((_, n), g) in counts.iter().zip(&groups) {
        if let Some(g) = g {
            by_group.entry(*g).or_default().push(*n as f64);
        }
    }
    let test = match (by_group.get(&CounselorGroup::MoreSuccessful), by_group.get(&CounselorGroup::LessSuccessful)) {
        (Some(a), Some(b)) => Some(mann_whitney_u(a, b)?),
        _ => None,
    };
    Ok(TemplatednessReport {
        radius,
        group_means: by_group.iter().map(|(g, v)| (g.as_str().to_string(), mean(v))).collect(),
        counts,
        u: test.map(|t| t.u),
        p: test.map(|t| t.p),
    })
}

// ---------------------------------------------------------------------------
// Issues

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRow {
    pub issue: String,
    /// `all`, `more_successful` or `less_successful`.
    pub group: String,
    pub count: usize,
    /// Share of the group's issue-tagged conversations.
    pub frequency: f64,
    pub labeled: usize,
    pub success_rate: Option<f64>,
}

/// Issue frequencies and success rates, overall and per counselor group.
pub fn issue_breakdown(corpus: &Corpus, split: &CounselorSplit) -> Vec<IssueRow> {
    // group -> issue -> (count, labeled, positive)
    let mut tallies: BTreeMap<String, BTreeMap<&str, (usize, usize, usize)>> = BTreeMap::new();
    for conv in corpus.conversations() {
        let Some(issue) = conv.issue.as_deref() else { continue };
        let mut groups = vec!["all".to_string()];
        if let Some(g) = split.group_of(&conv.counselor_id) {
            groups.push(g.as_str().to_string());
        }
        for g in groups {
            let t = tallies.entry(g).or_default().entry(issue).or_default();
            t.0 += 1;
            if let Some(o) = conv.outcome {
                t.1 += 1;
                t.2 += usize::from(o.is_positive());
            }
        }
    }
    let order = ["all", "more_successful", "less_successful"];
    let mut rows = Vec::new();
    for g in order {
        let Some(issues) = tallies.get(g) else { continue };
        let total: usize = issues.values().map(|t| t.0).sum();
        for (issue, (count, labeled, positive)) in issues {
            rows.push(IssueRow {
                issue: issue.to_string(),
                group: g.to_string(),
                count: *count,
                frequency: *count as f64 / total as f64,
                labeled: *labeled,
                success_rate: (*labeled > 0).then(|| *positive as f64 / *labeled as f64),
            });
        }
    }
    rows
}

pub fn write_issue_csv(rows: &[IssueRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["issue", "group", "count", "frequency", "labeled", "success_rate"])?;
    for r in rows {
        out.write_record([
            r.issue.clone(),
            r.group.clone(),
            r.count.to_string(),
            fmt(r.frequency),
            r.labeled.to_string(),
            fmt_opt(r.success_rate),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<issue csv>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage durations by group

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDurations {
    pub group: String,
    pub conversations: usize,
    /// Mean messages per stage, stage 1 first.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTest {
    pub stage: usize,
    pub u: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDurationReport {
    pub stages: usize,
    pub groups: Vec<GroupDurations>,
    /// Mann-Whitney tests of per-conversation durations, more against less successful.
    pub tests: Vec<StageTest>,
}

/// Decodes every labeled conversation of the split's counselors and compares
/// the time each group spends in every stage.
pub fn stage_duration_comparison(
    corpus: &Corpus,
    split: &CounselorSplit,
    model: &StageModel,
    cfg: DurationConfig,
) -> Result<StageDurationReport> {
    let k = model.stages();
    let mut decoded: BTreeMap<CounselorGroup, Vec<(crate::stages::StagePath, Option<Outcome>)>> = BTreeMap::new();
    for conv in corpus.labeled() {
        let Some(group) = split.group_of(&conv.counselor_id) else { continue };
        if let Some((lo, hi)) = cfg.length_range {
            if !(lo..=hi).contains(&conv.len()) {
                continue;
            }
        }
        let (path, _) = viterbi_decode(model, conv);
        decoded.entry(group).or_default().push((path, conv.outcome));
    }
    let mut groups = Vec::new();
    for group in CounselorGroup::BOTH {
        let paths = decoded.get(&group).map(Vec::as_slice).unwrap_or_default();
        let refs: Vec<_> = paths.iter().map(|(p, o)| (p, *o)).collect();
        let mean = stage_durations(&refs, k, cfg)?;
        groups.push(GroupDurations {
            group: group.as_str().to_string(),
            conversations: paths.len(),
            mean,
        });
    }
    let per_stage = |g: CounselorGroup, s: usize| -> Vec<f64> {
        decoded[&g].iter().map(|(p, _)| p.durations(k)[s] as f64).collect()
    };
    let mut tests = Vec::new();
    for s in 0..k {
        let r = mann_whitney_u(
            &per_stage(CounselorGroup::MoreSuccessful, s),
            &per_stage(CounselorGroup::LessSuccessful, s),
        )?;
        tests.push(StageTest { stage: s + 1, u: r.u, p: r.p });
    }
    Ok(StageDurationReport { stages: k, groups, tests })
}

pub fn write_durations_csv(report: &StageDurationReport, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "stage", "mean_duration", "conversations"])?;
    for g in &report.groups {
        for (s, d) in g.mean.iter().enumerate() {
            out.write_record([g.group.clone(), (s + 1).to_string(), fmt(*d), g.conversations.to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::io("<durations csv>", e))?;
    Ok(())
}
