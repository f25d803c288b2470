//! Outcome prediction from conversation prefixes: feature extraction,
//! regularized logistic regression and cross-validated AUC.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Message, Role};
use crate::error::{Error, Result};
use crate::lexicon::{valence_score, LexiconSet, ResponseClass};
use crate::stages::{viterbi_encoded, StageModel};
use crate::stats::{midranks, seeded_rng};
use crate::vectorspace::{cosine_similarity, ngrams, TfIdfModel};

pub const DEFAULT_MIN_MESSAGES: usize = 30;
pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_L2: f64 = 1e-3;
pub const DEFAULT_L1: f64 = 1e-4;

pub const BASE_FEATURES: [&str; 5] = ["hedge", "check_question", "similarity", "valence", "length"];

/// Balanced set of labeled conversations longer than `min_messages`: every
/// conversation of the smaller class plus an equal-size random subsample of
/// the larger one, returned in corpus order with labels (`true` = positive).
pub fn build_dataset(corpus: &Corpus, min_messages: usize, seed: u64) -> Result<Vec<(&Conversation, bool)>> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, conv) in corpus.conversations().iter().enumerate() {
        if conv.len() <= min_messages {
            continue;
        }
        match conv.outcome {
            Some(o) if o.is_positive() => pos.push(i),
            Some(_) => neg.push(i),
            None => {}
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::insufficient(format!(
            "need both outcomes among conversations longer than {min_messages} messages ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let n = pos.len().min(neg.len());
    let (larger, smaller) = if pos.len() >= neg.len() { (&mut pos, &mut neg) } else { (&mut neg, &mut pos) };
    larger.shuffle(&mut rng);
    larger.truncate(n);
    let mut chosen: Vec<usize> = larger.iter().chain(smaller.iter()).copied().collect();
    chosen.sort_unstable();
    let convs = corpus.conversations();
    Ok(chosen
        .into_iter()
        .map(|i| (&convs[i], convs[i].outcome.is_some_and(|o| o.is_positive())))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NgramSource {
    #[default]
    None,
    Counselor,
    Both,
}

impl std::str::FromStr for NgramSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NgramSource::None),
            "counselor" => Ok(NgramSource::Counselor),
            "both" => Ok(NgramSource::Both),
            other => Err(Error::invalid(format!("unknown n-gram source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Percentage of messages visible to the model.
    pub prefix_percent: f64,
    pub ngrams: NgramSource,
    /// N-grams must occur in at least this many dataset conversations.
    pub ngram_min_count: usize,
    pub stage_features: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            prefix_percent: 100.0,
            ngrams: NgramSource::None,
            ngram_min_count: 5,
            stage_features: true,
        }
    }
}

/// Shared resources for feature extraction.
pub struct FeatureContext<'a> {
    pub lexicons: &'a LexiconSet,
    pub stage_model: Option<&'a StageModel>,
    /// Unigram model used for counselor-to-texter similarity.
    pub tfidf: TfIdfModel,
}

impl<'a> FeatureContext<'a> {
    /// Fits the similarity model with every message of `corpus` as a document.
    pub fn fit(corpus: &Corpus, lexicons: &'a LexiconSet, stage_model: Option<&'a StageModel>) -> Result<Self> {
        let docs: Vec<&[String]> = corpus
            .conversations()
            .iter()
            .flat_map(|c| c.messages.iter().map(|m| m.tokens.as_slice()))
            .collect();
        Ok(FeatureContext {
            lexicons,
            stage_model,
            tfidf: TfIdfModel::fit(&docs, 1)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dense: Vec<f64>,
    /// Distinct n-gram features present, with `c:` or `t:` role prefixes.
    pub ngrams: BTreeSet<String>,
}

/// Number of leading messages visible at `percent`.
pub fn prefix_len(n: usize, percent: f64) -> usize {
    ((percent / 100.0 * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn dense_feature_names(stages: Option<usize>) -> Vec<String> {
    let mut names: Vec<String> = BASE_FEATURES.iter().map(|s| s.to_string()).collect();
    if let Some(k) = stages {
        names.extend((1..=k).map(|s| format!("stage{s}_duration")));
        for s in 1..=k {
            names.extend(BASE_FEATURES.iter().map(|b| format!("stage{s}_{b}")));
        }
    }
    names
}

/// Per-counselor-message base feature values; similarity is absent when no
/// texter message precedes the counselor message.
fn counselor_message_features(messages: &[Message], ctx: &FeatureContext) -> Vec<(usize, [Option<f64>; 5])> {
    let rules = &ctx.lexicons.response_classes;
    let mut last_texter: Option<&Message> = None;
    let mut out = Vec::new();
    for (i, m) in messages.iter().enumerate() {
        match m.role {
            Role::Texter => last_texter = Some(m),
            Role::Counselor => {
                let sim = last_texter.map(|t| cosine_similarity(&ctx.tfidf.vectorize(&m.tokens), &ctx.tfidf.vectorize(&t.tokens)));
                out.push((
                    i,
                    [
                        Some(f64::from(u8::from(rules.matches(ResponseClass::Hedge, &m.text)))),
                        Some(f64::from(u8::from(rules.matches(ResponseClass::CheckQuestion, &m.text)))),
                        sim,
                        Some(valence_score(&m.tokens, &ctx.lexicons.valence)),
                        Some(m.tokens.len() as f64),
                    ],
                ));
            }
        }
    }
    out
}

fn average(rows: &[&[Option<f64>; 5]]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (f, slot) in out.iter_mut().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[f]).collect();
        if !vals.is_empty() {
            *slot = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    out
}

/// Features of the first `prefix_percent` of `conv`. Base features average
/// over counselor messages (0 when there are none); stage features come from
/// decoding the prefix alone.
pub fn extract_features(conv: &Conversation, cfg: &FeatureConfig, ctx: &FeatureContext) -> Result<FeatureVector> {
    let m = prefix_len(conv.len(), cfg.prefix_percent);
    if m == 0 {
        return Err(Error::insufficient(format!("conversation `{}` has an empty prefix", conv.id)));
    }
    let prefix = &conv.messages[..m];
    let per_message = counselor_message_features(prefix, ctx);
    let all: Vec<&[Option<f64>; 5]> = per_message.iter().map(|(_, f)| f).collect();
    let mut dense = average(&all).to_vec();

    if cfg.stage_features {
        if let Some(model) = ctx.stage_model {
            let (path, _) = viterbi_encoded(model, &model.encode_messages(prefix));
            let k = model.stages();
            dense.extend(path.durations(k).into_iter().map(|d| d as f64));
            for s in 1..=k {
                let rows: Vec<&[Option<f64>; 5]> = per_message
                    .iter()
                    .filter(|(i, _)| path.stages[*i] == s)
                    .map(|(_, f)| f)
                    .collect();
                dense.extend(average(&rows));
            }
        }
    }

    let mut grams = BTreeSet::new();
    if cfg.ngrams != NgramSource::None {
        for msg in prefix {
            let tag = match (msg.role, cfg.ngrams) {
                (Role::Counselor, _) => "c",
                (Role::Texter, NgramSource::Both) => "t",
                _ => continue,
            };
            for order in [1, 2] {
                grams.extend(ngrams(&msg.tokens, order).into_iter().map(|g| format!("{tag}:{g}")));
            }
        }
    }
    Ok(FeatureVector { dense, ngrams: grams })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub dense: Vec<f64>,
    /// Sorted column indices (relative to the n-gram block) of present n-grams.
    pub ngrams: Vec<usize>,
    pub label: bool,
}

/// Feature matrix with named columns: dense columns first, then binary n-grams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dense_names: Vec<String>,
    pub ngram_names: Vec<String>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            dense_names: self.dense_names.clone(),
            ngram_names: self.ngram_names.clone(),
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Copy with labels randomly permuted.
    pub fn with_permuted_labels(&self, seed: u64) -> Dataset {
        let mut labels = self.labels();
        labels.shuffle(&mut seeded_rng(seed));
        let mut out = self.clone();
        for (e, l) in out.examples.iter_mut().zip(labels) {
            e.label = l;
        }
        out
    }
}

/// Extracts features for every labeled conversation. N-grams present in fewer
/// than `ngram_min_count` conversations are dropped.
pub fn build_features(data: &[(&Conversation, bool)], cfg: &FeatureConfig, ctx: &FeatureContext) -> Result<Dataset> {
    let vectors: Vec<FeatureVector> = data
        .iter()
        .map(|(c, _)| extract_features(c, cfg, ctx))
        .collect::<Result<_>>()?;
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &vectors {
        for g in &v.ngrams {
            *df.entry(g.as_str()).or_default() += 1;
        }
    }
    let ngram_names: Vec<String> = df
        .into_iter()
        .filter(|&(_, c)| c >= cfg.ngram_min_count.max(1))
        .map(|(g, _)| g.to_string())
        .collect();
    let column: BTreeMap<&str, usize> = ngram_names.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let stages = (cfg.stage_features).then(|| ctx.stage_model.map(|m| m.stages())).flatten();
    let examples = data
        .iter()
        .zip(&vectors)
        .map(|((conv, label), v)| Example {
            id: conv.id.clone(),
            dense: v.dense.clone(),
            ngrams: v.ngrams.iter().filter_map(|g| column.get(g.as_str()).copied()).collect(),
            label: *label,
        })
        .collect();
    Ok(Dataset {
        dense_names: dense_feature_names(stages),
        ngram_names,
        examples,
    })
}

// ---------------------------------------------------------------------------
// Logistic regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "lowercase")]
pub enum Regularization {
    L1(f64),
    L2(f64),
}

impl Regularization {
    /// L1 when n-grams are present, L2 otherwise.
    pub fn default_for(has_ngrams: bool) -> Self {
        if has_ngrams {
            Regularization::L1(DEFAULT_L1)
        } else {
            Regularization::L2(DEFAULT_L2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reg: Regularization,
    pub initial_step: f64,
    pub max_iter: usize,
    /// Stop when the objective changes by less than this between steps.
    pub tol: f64,
}

impl TrainConfig {
    pub fn new(reg: Regularization) -> Self {
        TrainConfig {
            reg,
            initial_step: 1.0,
            max_iter: 5000,
            tol: 1e-7,
        }
    }
}

/// Per-column standardization of the dense block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, sd }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.sd).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Standardized design: dense rows plus binary n-gram columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub dense: Vec<Vec<f64>>,
    pub ngrams: Vec<Vec<usize>>,
    /// Labels as +1 / -1.
    pub y: Vec<f64>,
    pub n_dense: usize,
    pub n_ngrams: usize,
}

impl Design {
    pub fn dim(&self) -> usize {
        self.n_dense + self.n_ngrams
    }

    fn margin(&self, i: usize, w: &[f64], b: f64) -> f64 {
        let mut z = b;
        for (x, wj) in self.dense[i].iter().zip(w) {
            z += x * wj;
        }
        for &j in &self.ngrams[i] {
            z += w[self.n_dense + j];
        }
        z
    }
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus the smooth part of the penalty.
pub struct LogisticObjective<'a> {
    pub design: &'a Design,
    pub l2: f64,
}

impl LogisticObjective<'_> {
    pub fn value(&self, w: &[f64], b: f64) -> f64 {
        let d = self.design;
        let n = d.y.len() as f64;
        let loss: f64 = (0..d.y.len()).map(|i| log1p_exp(-d.y[i] * d.margin(i, w, b))).sum::<f64>() / n;
        loss + 0.5 * self.l2 * w.iter().map(|x| x * x).sum::<f64>()
    }

    /// Gradient with respect to the weights and the bias.
    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let d = self.design;
        let n = d.y.len() as f64;
        let mut gw: Vec<f64> = w.iter().map(|x| self.l2 * x).collect();
        let mut gb = 0.0;
        for i in 0..d.y.len() {
            let y = d.y[i];
            let r = -y * sigmoid(-y * d.margin(i, w, b)) / n;
            gb += r;
            for (g, x) in gw.iter_mut().zip(&d.dense[i]) {
                *g += r * x;
            }
            for &j in &d.ngrams[i] {
                gw[d.n_dense + j] += r;
            }
        }
        (gw, gb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub dense_names: Vec<String>,
    pub ngram_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub reg: Regularization,
    pub standardizer: Standardizer,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn score(&self, ex: &Example) -> f64 {
        let x = self.standardizer.apply(&ex.dense);
        let mut z = self.bias;
        for (xi, w) in x.iter().zip(&self.weights) {
            z += xi * w;
        }
        let nd = self.dense_names.len();
        for &j in &ex.ngrams {
            z += self.weights[nd + j];
        }
        z
    }

    pub fn predict_proba(&self, ex: &Example) -> f64 {
        sigmoid(self.score(ex))
    }

    /// Fraction of n-gram weights that are exactly zero.
    pub fn ngram_sparsity(&self) -> f64 {
        let ng = &self.weights[self.dense_names.len()..];
        if ng.is_empty() {
            return 1.0;
        }
        ng.iter().filter(|w| **w == 0.0).count() as f64 / ng.len() as f64
    }
}

fn canonical_order(a: &Example, b: &Example) -> Ordering {
    a.label
        .cmp(&b.label)
        .then_with(|| {
            a.dense
                .iter()
                .zip(&b.dense)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.ngrams.cmp(&b.ngrams))
}

fn design_for(data: &Dataset, std: &Standardizer) -> Design {
    let mut examples: Vec<&Example> = data.examples.iter().collect();
    examples.sort_by(|a, b| canonical_order(a, b));
    Design {
        dense: examples.iter().map(|e| std.apply(&e.dense)).collect(),
        ngrams: examples.iter().map(|e| e.ngrams.clone()).collect(),
        y: examples.iter().map(|e| if e.label { 1.0 } else { -1.0 }).collect(),
        n_dense: data.dense_names.len(),
        n_ngrams: data.ngram_names.len(),
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Proximal gradient descent with backtracking line search. Dense columns are
/// standardized on `data`; the bias is not penalized. Examples are processed
/// in a canonical order, so the fit does not depend on input order.
pub fn train_logistic(data: &Dataset, cfg: &TrainConfig) -> Result<LogisticModel> {
    let n_pos = data.examples.iter().filter(|e| e.label).count();
    if data.len() < 2 || n_pos == 0 || n_pos == data.len() {
        return Err(Error::insufficient("logistic regression needs both classes"));
    }
    let rows: Vec<&[f64]> = data.examples.iter().map(|e| e.dense.as_slice()).collect();
    let standardizer = Standardizer::fit(&rows);
    let design = design_for(data, &standardizer);
    let (l1, l2) = match cfg.reg {
        Regularization::L1(l) => (l, 0.0),
        Regularization::L2(l) => (0.0, l),
    };
    let obj = LogisticObjective { design: &design, l2 };
    let total = |w: &[f64], b: f64| obj.value(w, b) + l1 * w.iter().map(|x| x.abs()).sum::<f64>();

    let mut w = vec![0.0; design.dim()];
    let mut b = 0.0;
    let mut step = cfg.initial_step;
    let mut f = obj.value(&w, b);
    let mut objective = total(&w, b);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (gw, gb) = obj.gradient(&w, b);
        loop {
            let w_new: Vec<f64> = w
                .iter()
                .zip(&gw)
                .map(|(x, g)| soft_threshold(x - step * g, step * l1))
                .collect();
            let b_new = b - step * gb;
            let f_new = obj.value(&w_new, b_new);
            let mut lin = gb * (b_new - b);
            let mut quad = (b_new - b).powi(2);
            for ((wn, wo), g) in w_new.iter().zip(&w).zip(&gw) {
                lin += g * (wn - wo);
                quad += (wn - wo).powi(2);
            }
            if f_new <= f + lin + quad / (2.0 * step) + 1e-12 || step < 1e-12 {
                w = w_new;
                b = b_new;
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        let next = total(&w, b);
        let change = (objective - next).abs();
        objective = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
        step *= 1.25;
    }
    Ok(LogisticModel {
        dense_names: data.dense_names.clone(),
        ngram_names: data.ngram_names.clone(),
        weights: w,
        bias: b,
        reg: cfg.reg,
        standardizer,
        iterations,
        converged,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from the rank-sum statistic.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::insufficient("AUC needs both classes"));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub auc: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prefix_percent: f64,
    pub folds: Vec<FoldResult>,
    pub mean_auc: f64,
    pub mean_accuracy: f64,
    pub reg: Regularization,
    pub seed: u64,
}

impl EvalReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fold", "n_train", "n_test", "auc", "accuracy"])?;
        for f in &self.folds {
            out.write_record([
                f.fold.to_string(),
                f.n_train.to_string(),
                f.n_test.to_string(),
                f.auc.map(crate::analyses::fmt).unwrap_or_default(),
                crate::analyses::fmt(f.accuracy),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<eval csv>", e))?;
        Ok(())
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > labels.len() {
        return Err(Error::invalid(format!("cannot make {k} folds from {} examples", labels.len())));
    }
    let mut rng = seeded_rng(seed);
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold[i] = (r + offset) % k;
        }
        offset = labels.iter().filter(|l| **l == class).count() % k;
    }
    Ok(fold)
}

/// k-fold cross-validation with per-fold standardization.
pub fn cross_validate(data: &Dataset, k: usize, seed: u64, cfg: &TrainConfig, prefix_percent: f64) -> Result<EvalReport> {
    let folds = stratified_folds(&data.labels(), k, seed)?;
    let mut results = Vec::new();
    for f in 0..k {
        let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
        let model = train_logistic(&data.subset(&train), cfg)?;
        let scores: Vec<f64> = test.iter().map(|&i| model.score(&data.examples[i])).collect();
        let labels: Vec<bool> = test.iter().map(|&i| data.examples[i].label).collect();
        let correct = scores.iter().zip(&labels).filter(|(s, l)| (**s > 0.0) == **l).count();
        results.push(FoldResult {
            fold: f,
            n_train: train.len(),
            n_test: test.len(),
            auc: auc(&scores, &labels).ok(),
            accuracy: correct as f64 / test.len().max(1) as f64,
        });
    }
    let aucs: Vec<f64> = results.iter().filter_map(|r| r.auc).collect();
    if aucs.is_empty() {
        return Err(Error::insufficient("no fold had both classes in its test split"));
    }
    Ok(EvalReport {
        prefix_percent,
        mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
        mean_accuracy: results.iter().map(|r| r.accuracy).sum::<f64>() / results.len() as f64,
        folds: results,
        reg: cfg.reg,
        seed,
    })
}
