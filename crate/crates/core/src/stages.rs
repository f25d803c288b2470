//! Ordered-stage conversation HMM.
//!
//! Each message is emitted by a hidden stage; the speaker role is observed and
//! selects which unigram distribution of that stage generates the message as a
//! bag of words. Stages only stay or advance by one, starting at stage 1.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Message, Outcome, Role};
use crate::error::{Error, Result};

pub const DEFAULT_STAGES: usize = 5;
pub const DEFAULT_VOCAB_MIN_COUNT: usize = 20;
pub const DEFAULT_TOP_WORDS_MIN_COUNT: usize = 500;
pub const EMISSION_FLOOR: f64 = 1e-6;
pub const UNK: &str = "<unk>";

const SUM_TOL: f64 = 1e-9;

/// Token vocabulary. Index `len()` is reserved for the unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(mut tokens: Vec<String>) -> Result<Self> {
        tokens.sort();
        tokens.dedup();
        if tokens.iter().any(|t| t == UNK) {
            return Err(Error::invalid(format!("vocabulary may not contain the reserved token {UNK}")));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { tokens, index })
    }

    /// Known tokens, sorted, excluding the unknown token.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of emission columns, including the unknown token.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn unk_index(&self) -> usize {
        self.tokens.len()
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.tokens.len())
    }

    pub fn token(&self, idx: usize) -> &str {
        self.tokens.get(idx).map(String::as_str).unwrap_or(UNK)
    }

    /// Sorted `(column, count)` bag for a token sequence.
    pub fn bag<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, u32)> {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for t in tokens {
            *counts.entry(self.lookup(t.as_ref())).or_default() += 1;
        }
        counts.into_iter().collect()
    }
}

/// Raw token frequencies over every message of the corpus.
pub fn token_counts(corpus: &Corpus) -> HashMap<&str, usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for conv in corpus.conversations() {
        for m in &conv.messages {
            for t in &m.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    counts
}

/// Vocabulary of tokens occurring more than `min_count` times.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::insufficient("cannot build a vocabulary from an empty corpus"));
    }
    let tokens = token_counts(corpus)
        .into_iter()
        .filter(|&(_, c)| c > min_count)
        .map(|(t, _)| t.to_string())
        .collect();
    Vocab::from_tokens(tokens)
}

/// Exact maximizer of `sum_t c_t ln p_t` over distributions with `p_t >= floor`.
/// Returns `None` when all counts are zero.
pub fn floored_distribution(counts: &[f64], floor: f64) -> Option<Vec<f64>> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    assert!(floor * counts.len() as f64 <= 1.0, "floor too large for vocabulary size");
    let mut floored = vec![false; counts.len()];
    let mut n_floored = 0usize;
    let mut free_mass = total;
    loop {
        let scale = (1.0 - n_floored as f64 * floor) / free_mass;
        let mut changed = false;
        for (i, &c) in counts.iter().enumerate() {
            if !floored[i] && c * scale < floor {
                floored[i] = true;
                n_floored += 1;
                free_mass -= c;
                changed = true;
            }
        }
        if !changed || free_mass <= 0.0 {
            break;
        }
    }
    if free_mass <= 0.0 {
        // every entry floored; fall back to uniform
        return Some(vec![1.0 / counts.len() as f64; counts.len()]);
    }
    let scale = (1.0 - n_floored as f64 * floor) / free_mass;
    Some(
        counts
            .iter()
            .zip(&floored)
            .map(|(&c, &f)| if f { floor } else { c * scale })
            .collect(),
    )
}

/// Role-pooled corpus unigram over the vocabulary, floored at [`EMISSION_FLOOR`].
pub fn pooled_unigram(corpus: &Corpus, vocab: &Vocab) -> Vec<f64> {
    let mut counts = vec![0.0; vocab.size()];
    for conv in corpus.conversations() {
        for m in &conv.messages {
            for t in &m.tokens {
                counts[vocab.lookup(t)] += 1.0;
            }
        }
    }
    floored_distribution(&counts, EMISSION_FLOOR).unwrap_or_else(|| vec![1.0 / vocab.size() as f64; vocab.size()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    vocab: Vocab,
    /// `emissions[role][stage][column]`, role indexed by [`Role::index`].
    emissions: [Vec<Vec<f64>>; 2],
    stay: Vec<f64>,
}

/// JSON form. `emissions.<role>[s]` has one entry per vocab token followed by
/// the unknown token.
#[derive(Serialize, Deserialize)]
struct StageModelRepr {
    stages: usize,
    vocab: Vec<String>,
    unk: String,
    emissions: EmissionsRepr,
    stay: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmissionsRepr {
    counselor: Vec<Vec<f64>>,
    texter: Vec<Vec<f64>>,
}

impl Serialize for StageModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StageModelRepr {
            stages: self.stages(),
            vocab: self.vocab.tokens.clone(),
            unk: UNK.to_string(),
            emissions: EmissionsRepr {
                counselor: self.emissions[Role::Counselor.index()].clone(),
                texter: self.emissions[Role::Texter.index()].clone(),
            },
            stay: self.stay.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StageModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = StageModelRepr::deserialize(d)?;
        if repr.unk != UNK {
            return Err(serde::de::Error::custom(format!("unknown token must be {UNK}")));
        }
        if repr.stay.len() != repr.stages {
            return Err(serde::de::Error::custom("stay length does not match stages"));
        }
        let vocab = Vocab::from_tokens(repr.vocab).map_err(serde::de::Error::custom)?;
        let mut emissions = [Vec::new(), Vec::new()];
        emissions[Role::Counselor.index()] = repr.emissions.counselor;
        emissions[Role::Texter.index()] = repr.emissions.texter;
        StageModel::from_parts(vocab, emissions, repr.stay).map_err(serde::de::Error::custom)
    }
}

impl StageModel {
    /// Validates and assembles a model. Every emission row must sum to 1 and
    /// stay above the floor; `stay` must end with 1.
    pub fn from_parts(vocab: Vocab, emissions: [Vec<Vec<f64>>; 2], stay: Vec<f64>) -> Result<Self> {
        let stages = stay.len();
        if stages == 0 {
            return Err(Error::invalid("a stage model needs at least one stage"));
        }
        if stay.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution("stay probabilities must lie in [0, 1]".into()));
        }
        if stay[stages - 1] != 1.0 {
            return Err(Error::InvalidDistribution("the last stage must have stay probability 1".into()));
        }
        for role in Role::ALL {
            let rows = &emissions[role.index()];
            if rows.len() != stages {
                return Err(Error::invalid(format!(
                    "{role} emissions have {} stages, expected {stages}",
                    rows.len()
                )));
            }
            for (s, row) in rows.iter().enumerate() {
                if row.len() != vocab.size() {
                    return Err(Error::invalid(format!(
                        "{role} stage {} emission has {} entries, expected {}",
                        s + 1,
                        row.len(),
                        vocab.size()
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SUM_TOL || row.iter().any(|&p| !(p >= EMISSION_FLOOR * (1.0 - 1e-9))) {
                    return Err(Error::InvalidDistribution(format!(
                        "{role} stage {} emission must sum to 1 with entries >= {EMISSION_FLOOR}",
                        s + 1
                    )));
                }
            }
        }
        Ok(StageModel { vocab, emissions, stay })
    }

    /// Initial model: every (stage, role) emits the role-pooled corpus unigram and
    /// every non-final stage stays with probability 0.5.
    pub fn init(corpus: &Corpus, vocab: Vocab, stages: usize) -> Result<Self> {
        Self::init_with_stay(corpus, vocab, stages, 0.5)
    }

    /// Like [`StageModel::init`] with a different stay probability for the
    /// non-final stages.
    pub fn init_with_stay(corpus: &Corpus, vocab: Vocab, stages: usize, stay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&stay) {
            return Err(Error::invalid(format!("initial stay probability {stay} outside [0, 1)")));
        }
        if stages < 1 {
            return Err(Error::invalid("number of stages must be at least 1"));
        }
        if corpus.is_empty() {
            return Err(Error::insufficient("cannot initialize a stage model from an empty corpus"));
        }
        let unigram = pooled_unigram(corpus, &vocab);
        let rows = vec![unigram; stages];
        let mut stay = vec![stay; stages];
        stay[stages - 1] = 1.0;
        Ok(StageModel {
            vocab,
            emissions: [rows.clone(), rows],
            stay,
        })
    }

    pub fn stages(&self) -> usize {
        self.stay.len()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn stay(&self) -> &[f64] {
        &self.stay
    }

    /// Emission row for a 0-based stage.
    pub fn emission(&self, role: Role, stage: usize) -> &[f64] {
        &self.emissions[role.index()][stage]
    }

    /// Emission of a 0-based stage keyed by token, the unknown token included.
    pub fn emission_map(&self, role: Role, stage: usize) -> BTreeMap<String, f64> {
        self.emission(role, stage)
            .iter()
            .enumerate()
            .map(|(i, &p)| (self.vocab.token(i).to_string(), p))
            .collect()
    }

    pub fn encode(&self, conv: &Conversation) -> EncodedConversation {
        self.encode_messages(&conv.messages)
    }

    pub fn encode_messages(&self, messages: &[Message]) -> EncodedConversation {
        EncodedConversation {
            roles: messages.iter().map(|m| m.role).collect(),
            bags: messages.iter().map(|m| self.vocab.bag(&m.tokens)).collect(),
        }
    }

    fn log_tables(&self) -> LogTables {
        LogTables {
            emissions: [
                self.emissions[0].iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect(),
                self.emissions[1].iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect(),
            ],
            stay: self.stay.iter().map(|p| p.ln()).collect(),
            advance: self.stay.iter().map(|p| (1.0 - p).ln()).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Builds the vocabulary and initial model in one step.
pub fn init_model(corpus: &Corpus, stages: usize, vocab_min_count: usize) -> Result<StageModel> {
    let vocab = build_vocab(corpus, vocab_min_count)?;
    StageModel::init(corpus, vocab, stages)
}

/// A conversation mapped onto a model vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedConversation {
    pub roles: Vec<Role>,
    pub bags: Vec<Vec<(usize, u32)>>,
}

impl EncodedConversation {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }
}

struct LogTables {
    emissions: [Vec<Vec<f64>>; 2],
    stay: Vec<f64>,
    advance: Vec<f64>,
}

impl LogTables {
    fn stages(&self) -> usize {
        self.stay.len()
    }

    /// `out[t][s]` = log-probability of message t under stage s.
    fn message_logprobs(&self, conv: &EncodedConversation) -> Vec<Vec<f64>> {
        conv.roles
            .iter()
            .zip(&conv.bags)
            .map(|(role, bag)| {
                self.emissions[role.index()]
                    .iter()
                    .map(|row| bag.iter().map(|&(i, c)| c as f64 * row[i]).sum())
                    .collect()
            })
            .collect()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Per-message stage posteriors of one conversation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorTable {
    /// `posteriors[t][s]` for 0-based stage s.
    pub posteriors: Vec<Vec<f64>>,
    pub loglik: f64,
}

struct ForwardBackward {
    log_alpha: Vec<Vec<f64>>,
    log_beta: Vec<Vec<f64>>,
    log_emit: Vec<Vec<f64>>,
    loglik: f64,
}

fn forward_backward_logs(tables: &LogTables, conv: &EncodedConversation) -> ForwardBackward {
    let n = conv.len();
    let k = tables.stages();
    let log_emit = tables.message_logprobs(conv);
    let mut log_alpha = vec![vec![f64::NEG_INFINITY; k]; n];
    let mut log_beta = vec![vec![0.0; k]; n];
    if n == 0 {
        return ForwardBackward {
            log_alpha,
            log_beta,
            log_emit,
            loglik: 0.0,
        };
    }
    log_alpha[0][0] = log_emit[0][0];
    for t in 1..n {
        for s in 0..k {
            let mut acc = log_alpha[t - 1][s] + tables.stay[s];
            if s > 0 {
                acc = log_add(acc, log_alpha[t - 1][s - 1] + tables.advance[s - 1]);
            }
            log_alpha[t][s] = acc + log_emit[t][s];
        }
    }
    for t in (0..n - 1).rev() {
        for s in 0..k {
            let mut acc = tables.stay[s] + log_emit[t + 1][s] + log_beta[t + 1][s];
            if s + 1 < k {
                acc = log_add(acc, tables.advance[s] + log_emit[t + 1][s + 1] + log_beta[t + 1][s + 1]);
            }
            log_beta[t][s] = acc;
        }
    }
    let loglik = log_alpha[n - 1].iter().fold(f64::NEG_INFINITY, |a, &b| log_add(a, b));
    ForwardBackward {
        log_alpha,
        log_beta,
        log_emit,
        loglik,
    }
}

fn posteriors_from(fb: &ForwardBackward) -> Vec<Vec<f64>> {
    fb.log_alpha
        .iter()
        .zip(&fb.log_beta)
        .map(|(a, b)| {
            let mut row: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y - fb.loglik).exp()).collect();
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
            row
        })
        .collect()
}

pub fn forward_backward(model: &StageModel, conv: &Conversation) -> PosteriorTable {
    forward_backward_encoded(model, &model.encode(conv))
}

pub fn forward_backward_encoded(model: &StageModel, conv: &EncodedConversation) -> PosteriorTable {
    let fb = forward_backward_logs(&model.log_tables(), conv);
    PosteriorTable {
        posteriors: posteriors_from(&fb),
        loglik: fb.loglik,
    }
}

/// Total log-likelihood of a corpus under the model.
pub fn corpus_loglik(model: &StageModel, corpus: &Corpus) -> f64 {
    let tables = model.log_tables();
    corpus
        .conversations()
        .iter()
        .map(|c| forward_backward_logs(&tables, &model.encode(c)).loglik)
        .sum()
}

/// Monotone stage assignment, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePath {
    pub stages: Vec<usize>,
}

impl StagePath {
    pub fn new(stages: Vec<usize>) -> Result<Self> {
        let path = StagePath { stages };
        if !path.is_valid() {
            return Err(Error::invalid("stage path must start at 1 and advance by at most one"));
        }
        Ok(path)
    }

    /// Starts at stage 1, nondecreasing, increments of at most one.
    pub fn is_valid(&self) -> bool {
        match self.stages.first() {
            None => true,
            Some(&first) => {
                first == 1
                    && self
                        .stages
                        .windows(2)
                        .all(|w| w[1] == w[0] || w[1] == w[0] + 1)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Number of messages in each stage `1..=stages`.
    pub fn durations(&self, stages: usize) -> Vec<usize> {
        let mut d = vec![0; stages];
        for &s in &self.stages {
            if s >= 1 && s <= stages {
                d[s - 1] += 1;
            }
        }
        d
    }

    /// Log-probability of this path jointly with the conversation.
    pub fn log_prob(&self, model: &StageModel, conv: &EncodedConversation) -> f64 {
        let tables = model.log_tables();
        let emit = tables.message_logprobs(conv);
        let mut lp = 0.0;
        for (t, &s) in self.stages.iter().enumerate() {
            let s = s - 1;
            if t > 0 {
                let prev = self.stages[t - 1] - 1;
                lp += if prev == s { tables.stay[prev] } else { tables.advance[prev] };
            }
            lp += emit[t][s];
        }
        lp
    }
}

/// Most probable path with its joint log-probability. Ties prefer staying, and
/// among final stages the lower one.
pub fn viterbi_decode(model: &StageModel, conv: &Conversation) -> (StagePath, f64) {
    viterbi_encoded(model, &model.encode(conv))
}

pub fn viterbi_encoded(model: &StageModel, conv: &EncodedConversation) -> (StagePath, f64) {
    let tables = model.log_tables();
    viterbi_with(&tables, conv)
}

fn viterbi_with(tables: &LogTables, conv: &EncodedConversation) -> (StagePath, f64) {
    let n = conv.len();
    if n == 0 {
        return (StagePath { stages: vec![] }, 0.0);
    }
    let k = tables.stages();
    let emit = tables.message_logprobs(conv);
    let mut delta = vec![f64::NEG_INFINITY; k];
    delta[0] = emit[0][0];
    let mut advanced = vec![vec![false; k]; n];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        for s in 0..k {
            let stay = delta[s] + tables.stay[s];
            let adv = if s > 0 {
                delta[s - 1] + tables.advance[s - 1]
            } else {
                f64::NEG_INFINITY
            };
            if adv > stay {
                next[s] = adv + emit[t][s];
                advanced[t][s] = true;
            } else {
                next[s] = stay + emit[t][s];
            }
        }
        delta = next;
    }
    let mut best = 0;
    for s in 1..k {
        if delta[s] > delta[best] {
            best = s;
        }
    }
    let logp = delta[best];
    let mut stages = vec![0; n];
    let mut s = best;
    for t in (0..n).rev() {
        stages[t] = s + 1;
        if t > 0 && advanced[t][s] {
            s -= 1;
        }
    }
    (StagePath { stages }, logp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop when the relative change in total log-likelihood falls below this.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: StageModel,
    /// Total log-likelihood before the first update and after every update.
    pub trace: Vec<f64>,
    /// Number of parameter updates performed.
    pub iterations: usize,
    pub converged: bool,
}

struct ExpectedCounts {
    emissions: [Vec<Vec<f64>>; 2],
    stay: Vec<f64>,
    advance: Vec<f64>,
    loglik: f64,
}

fn e_step(tables: &LogTables, convs: &[EncodedConversation], vocab_size: usize) -> ExpectedCounts {
    let k = tables.stages();
    let mut acc = ExpectedCounts {
        emissions: [vec![vec![0.0; vocab_size]; k], vec![vec![0.0; vocab_size]; k]],
        stay: vec![0.0; k],
        advance: vec![0.0; k],
        loglik: 0.0,
    };
    for conv in convs {
        if conv.is_empty() {
            continue;
        }
        let fb = forward_backward_logs(tables, conv);
        acc.loglik += fb.loglik;
        let post = posteriors_from(&fb);
        for (t, row) in post.iter().enumerate() {
            let target = &mut acc.emissions[conv.roles[t].index()];
            for (s, &g) in row.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for &(i, c) in &conv.bags[t] {
                    target[s][i] += g * c as f64;
                }
            }
        }
        for t in 0..conv.len() - 1 {
            for s in 0..k {
                let base = fb.log_alpha[t][s] - fb.loglik;
                acc.stay[s] += (base + tables.stay[s] + fb.log_emit[t + 1][s] + fb.log_beta[t + 1][s]).exp();
                if s + 1 < k {
                    acc.advance[s] +=
                        (base + tables.advance[s] + fb.log_emit[t + 1][s + 1] + fb.log_beta[t + 1][s + 1]).exp();
                }
            }
        }
    }
    acc
}

fn m_step(model: &StageModel, counts: &ExpectedCounts) -> StageModel {
    let mut next = model.clone();
    for role in Role::ALL {
        for (s, row) in counts.emissions[role.index()].iter().enumerate() {
            if let Some(p) = floored_distribution(row, EMISSION_FLOOR) {
                next.emissions[role.index()][s] = p;
            }
        }
    }
    let k = model.stages();
    for s in 0..k.saturating_sub(1) {
        let total = counts.stay[s] + counts.advance[s];
        if total > 0.0 {
            next.stay[s] = counts.stay[s] / total;
        }
    }
    next
}

/// Fits the model by expectation maximization.
pub fn em_fit(model: StageModel, corpus: &Corpus, cfg: EmConfig) -> Result<FitResult> {
    if corpus.is_empty() {
        return Err(Error::insufficient("cannot fit a stage model to an empty corpus"));
    }
    let convs: Vec<EncodedConversation> = corpus.conversations().iter().map(|c| model.encode(c)).collect();
    em_fit_encoded(model, &convs, cfg)
}

pub fn em_fit_encoded(mut model: StageModel, convs: &[EncodedConversation], cfg: EmConfig) -> Result<FitResult> {
    if convs.iter().all(|c| c.is_empty()) {
        return Err(Error::insufficient("cannot fit a stage model without messages"));
    }
    let size = model.vocab.size();
    let mut counts = e_step(&model.log_tables(), convs, size);
    let mut trace = vec![counts.loglik];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        model = m_step(&model, &counts);
        iterations += 1;
        let prev = counts.loglik;
        counts = e_step(&model.log_tables(), convs, size);
        trace.push(counts.loglik);
        if ((counts.loglik - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        model,
        trace,
        iterations,
        converged,
    })
}

/// Runs [`em_fit`] once per initial stay probability and keeps the fit with
/// the highest final log-likelihood (the earliest on ties). EM from the
/// uniform start can settle in a local optimum when true stages last much
/// longer than two messages; a grid of starts guards against that.
pub fn em_fit_multistart(
    corpus: &Corpus,
    vocab: &Vocab,
    stages: usize,
    initial_stays: &[f64],
    cfg: EmConfig,
) -> Result<FitResult> {
    if initial_stays.is_empty() {
        return Err(Error::invalid("at least one initial stay probability is required"));
    }
    let probe = StageModel::init(corpus, vocab.clone(), stages)?;
    let convs: Vec<EncodedConversation> = corpus.conversations().iter().map(|c| probe.encode(c)).collect();
    let mut best: Option<FitResult> = None;
    for &stay in initial_stays {
        let model = StageModel::init_with_stay(corpus, vocab.clone(), stages, stay)?;
        let fit = em_fit_encoded(model, &convs, cfg)?;
        let better = best
            .as_ref()
            .is_none_or(|b| fit.trace.last() > b.trace.last());
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// Decoded path of every conversation, in corpus order.
pub fn decode_corpus(model: &StageModel, corpus: &Corpus) -> Vec<(String, StagePath)> {
    let tables = model.log_tables();
    corpus
        .conversations()
        .iter()
        .map(|c| (c.id.clone(), viterbi_with(&tables, &model.encode(c)).0))
        .collect()
}

/// Writes `conversation_id,message_index,stage` rows.
pub fn write_paths_csv<'a, I>(paths: I, w: impl Write) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a StagePath)>,
{
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["conversation_id", "message_index", "stage"])?;
    for (id, path) in paths {
        for (i, s) in path.stages.iter().enumerate() {
            out.write_record([id, &i.to_string(), &s.to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::io("<paths csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DurationConfig {
    /// Weight outcome classes equally; unlabeled paths are then skipped.
    pub equal_outcome_weight: bool,
    /// Inclusive message-count range a path must fall in.
    pub length_range: Option<(usize, usize)>,
}

impl DurationConfig {
    /// Equal outcome weights restricted to 40 to 60 message conversations.
    pub fn balanced_mid_length() -> Self {
        DurationConfig {
            equal_outcome_weight: true,
            length_range: Some((40, 60)),
        }
    }
}

/// Mean number of messages spent in each stage (index 0 is stage 1).
pub fn stage_durations(paths: &[(&StagePath, Option<Outcome>)], stages: usize, cfg: DurationConfig) -> Result<Vec<f64>> {
    let kept: Vec<(&StagePath, Option<Outcome>)> = paths
        .iter()
        .copied()
        .filter(|(p, _)| cfg.length_range.is_none_or(|(lo, hi)| (lo..=hi).contains(&p.len())))
        .filter(|(_, o)| !cfg.equal_outcome_weight || o.is_some())
        .collect();
    if kept.is_empty() {
        return Err(Error::insufficient("no stage paths left after filtering"));
    }
    let n_pos = kept.iter().filter(|(_, o)| o.is_some_and(|o| o.is_positive())).count() as f64;
    let n_neg = kept.iter().filter(|(_, o)| o.is_some_and(|o| !o.is_positive())).count() as f64;
    let mut sums = vec![0.0; stages];
    let mut total_weight = 0.0;
    for (path, outcome) in &kept {
        let w = match (cfg.equal_outcome_weight, outcome) {
            (true, Some(o)) if o.is_positive() => 1.0 / n_pos,
            (true, Some(_)) => 1.0 / n_neg,
            _ => 1.0,
        };
        total_weight += w;
        for (s, d) in path.durations(stages).into_iter().enumerate() {
            sums[s] += w * d as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / total_weight).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWord {
    pub token: String,
    pub ratio: f64,
    pub count: usize,
}

/// Tokens more frequent than `min_count`, ranked by how much more likely the
/// (stage, role) emission makes them than the pooled corpus unigram. `stage`
/// is 1-based. Right after initialization every ratio is exactly 1.
pub fn top_stage_words(
    model: &StageModel,
    corpus: &Corpus,
    role: Role,
    stage: usize,
    min_count: usize,
) -> Result<Vec<RankedWord>> {
    if stage < 1 || stage > model.stages() {
        return Err(Error::invalid(format!("stage {stage} outside 1..={}", model.stages())));
    }
    let reference = pooled_unigram(corpus, model.vocab());
    let row = model.emission(role, stage - 1);
    let mut ranked: Vec<RankedWord> = token_counts(corpus)
        .into_iter()
        .filter(|&(_, c)| c > min_count)
        .filter_map(|(t, count)| {
            let i = model.vocab().lookup(t);
            (i != model.vocab().unk_index()).then(|| RankedWord {
                token: t.to_string(),
                ratio: row[i] / reference[i],
                count,
            })
        })
        .collect();
    ranked.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.token.cmp(&b.token)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(id: &str, msgs: &[(Role, &str)]) -> Conversation {
        Conversation::new(id, "c1", msgs.iter().map(|(r, t)| (*r, *t)))
    }

    fn two_token_model(stay0: f64) -> StageModel {
        let vocab = Vocab::from_tokens(vec!["a".into(), "b".into()]).unwrap();
        let rows = vec![vec![0.7, 0.3 - 1e-6, 1e-6], vec![0.2, 0.8 - 1e-6, 1e-6]];
        StageModel::from_parts(vocab, [rows.clone(), rows], vec![stay0, 1.0]).unwrap()
    }

    #[test]
    fn vocab_boundary() {
        let mut text = vec!["x"; 21];
        text.extend(vec!["y"; 20]);
        let c = conv("1", &[(Role::Texter, &text.join(" "))]);
        let corpus = Corpus::new(vec![c]).unwrap();
        let v = build_vocab(&corpus, 20).unwrap();
        assert_eq!(v.tokens(), ["x"]);
        assert_eq!(v.lookup("y"), v.unk_index());
        assert!(build_vocab(&Corpus::new(vec![]).unwrap(), 20).is_err());
    }

    #[test]
    fn floor_water_filling() {
        let p = floored_distribution(&[100.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![0.8, 0.1, 0.1]);
        let p = floored_distribution(&[3.0, 1.0], 0.1).unwrap();
        assert_eq!(p, vec![0.75, 0.25]);
        assert!(floored_distribution(&[0.0, 0.0], 0.1).is_none());
        let p = floored_distribution(&[1000.0, 1.0, 0.0], 0.01).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.01));
    }

    #[test]
    fn single_stage_posteriors_and_loglik() {
        let corpus = Corpus::new(vec![conv("1", &[(Role::Texter, "a b"), (Role::Counselor, "a")])]).unwrap();
        let vocab = Vocab::from_tokens(vec!["a".into(), "b".into()]).unwrap();
        let model = StageModel::init(&corpus, vocab, 1).unwrap();
        assert_eq!(model.stay(), [1.0]);
        let pt = forward_backward(&model, &corpus.conversations()[0]);
        assert!(pt.posteriors.iter().all(|r| r == &vec![1.0]));
        let e = model.emission(Role::Texter, 0);
        let expected = 2.0 * e[0].ln() + e[1].ln();
        assert!((pt.loglik - expected).abs() < 1e-12);
        let (path, _) = viterbi_decode(&model, &corpus.conversations()[0]);
        assert_eq!(path.stages, vec![1, 1]);
    }

    #[test]
    fn two_stage_enumeration() {
        let model = two_token_model(0.4);
        let c = conv("1", &[(Role::Texter, "a"), (Role::Texter, "b")]);
        let pt = forward_backward(&model, &c);
        // paths (1,1) and (1,2)
        let p11: f64 = 0.7 * 0.4 * (0.3 - 1e-6);
        let p12: f64 = 0.7 * 0.6 * (0.8 - 1e-6);
        let z = p11 + p12;
        assert!((pt.loglik - z.ln()).abs() < 1e-12);
        assert!((pt.posteriors[0][0] - 1.0).abs() < 1e-12);
        assert!((pt.posteriors[1][1] - p12 / z).abs() < 1e-12);
        let (path, lp) = viterbi_decode(&model, &c);
        assert_eq!(path.stages, vec![1, 2]);
        assert!((lp - p12.ln()).abs() < 1e-12);
    }

    #[test]
    fn viterbi_tie_prefers_stay() {
        let vocab = Vocab::from_tokens(vec!["a".into()]).unwrap();
        let rows = vec![vec![1.0 - 1e-6, 1e-6]; 2];
        let model = StageModel::from_parts(vocab, [rows.clone(), rows], vec![0.5, 1.0]).unwrap();
        // (1,1) and (1,2) are equally likely
        let c = conv("1", &[(Role::Texter, "a"), (Role::Counselor, "a")]);
        assert_eq!(viterbi_decode(&model, &c).0.stages, vec![1, 1]);
    }

    #[test]
    fn init_is_identical_across_stages() {
        let corpus = Corpus::new(vec![conv("1", &[(Role::Texter, "a a b"), (Role::Counselor, "c")])]).unwrap();
        let model = init_model(&corpus, 4, 0).unwrap();
        assert_eq!(model.stay(), [0.5, 0.5, 0.5, 1.0]);
        for role in Role::ALL {
            for s in 1..4 {
                assert_eq!(model.emission(role, s), model.emission(Role::Counselor, 0));
            }
        }
        let top = top_stage_words(&model, &corpus, Role::Texter, 2, 0).unwrap();
        assert!(top.iter().all(|w| w.ratio == 1.0));
        assert!(init_model(&corpus, 0, 0).is_err());
    }

    #[test]
    fn single_stage_em_settles_after_one_update() {
        let corpus = Corpus::new(vec![
            conv("1", &[(Role::Texter, "a a b"), (Role::Counselor, "c c")]),
            conv("2", &[(Role::Texter, "b"), (Role::Counselor, "c a")]),
        ])
        .unwrap();
        let model = init_model(&corpus, 1, 0).unwrap();
        let once = em_fit(model.clone(), &corpus, EmConfig { max_iter: 1, tol: 0.0 }).unwrap();
        let fit = em_fit(model, &corpus, EmConfig::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 2);
        for role in Role::ALL {
            let a = once.model.emission(role, 0);
            let b = fit.model.emission(role, 0);
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15));
        }
        let texter = fit.model.emission_map(Role::Texter, 0);
        assert!((texter["a"] - 0.5).abs() < 1e-5);
        assert!((texter["b"] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn durations_examples() {
        let p = StagePath::new(vec![1, 1, 2, 2, 2]).unwrap();
        assert_eq!(p.durations(2), vec![2, 3]);
        let a = StagePath::new(vec![1, 2]).unwrap();
        let b = StagePath::new(vec![1, 1]).unwrap();
        let d = stage_durations(&[(&a, None), (&b, None)], 2, DurationConfig::default()).unwrap();
        assert_eq!(d, vec![1.5, 0.5]);
        let one = StagePath::new(vec![1]).unwrap();
        let two = StagePath::new(vec![1, 1, 1, 1, 1]).unwrap();
        let paths = [
            (&one, Some(Outcome::Positive)),
            (&one, Some(Outcome::Positive)),
            (&one, Some(Outcome::Positive)),
            (&two, Some(Outcome::Negative)),
        ];
        let cfg = DurationConfig {
            equal_outcome_weight: true,
            length_range: None,
        };
        assert_eq!(stage_durations(&paths, 1, cfg).unwrap(), vec![3.0]);
        assert!(StagePath::new(vec![1, 3]).is_err());
        assert!(StagePath::new(vec![2]).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let model = two_token_model(0.25);
        let json = serde_json::to_string(&model).unwrap();
        assert!(json.contains("\"unk\":\"<unk>\""));
        let back: StageModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        let bad = json.replace("[0.25,1.0]", "[0.25,0.9]");
        assert!(serde_json::from_str::<StageModel>(&bad).is_err());
    }

    #[test]
    fn paths_csv() {
        let p = StagePath::new(vec![1, 2]).unwrap();
        let mut buf = Vec::new();
        write_paths_csv([("c-1", &p)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "conversation_id,message_index,stage\nc-1,0,1\nc-1,1,2\n"
        );
    }
}
