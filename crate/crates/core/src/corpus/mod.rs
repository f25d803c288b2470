//! Conversation transcripts: ingestion, tokenization and corpus bookkeeping.

mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{
    read_stage_annotations, write_stage_annotations, CounselorGroupSpec, LengthRange,
    OutcomeVocabShift, StageAnnotation, StageEmissionSpec, SynthSpec, SyntheticCorpus,
};

/// Default minimum token count of a situation setter.
pub const DEFAULT_SETTER_MIN_TOKENS: usize = 15;

/// Speaker role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Counselor,
    Texter,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Counselor, Role::Texter];

    /// Dense index used by per-role tables.
    pub fn index(self) -> usize {
        match self {
            Role::Counselor => 0,
            Role::Texter => 1,
        }
    }

    pub fn other(self) -> Role {
        match self {
            Role::Counselor => Role::Texter,
            Role::Texter => Role::Counselor,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Counselor => "counselor",
            Role::Texter => "texter",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counselor" => Ok(Role::Counselor),
            "texter" => Ok(Role::Texter),
            other => Err(Error::invalid(format!("unknown role `{other}`"))),
        }
    }
}

/// Binary conversation outcome. `Positive` is a follow-up answer of "better".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Positive,
    Negative,
}

impl Outcome {
    pub fn is_positive(self) -> bool {
        self == Outcome::Positive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Positive => "positive",
            Outcome::Negative => "negative",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub index: usize,
    pub role: Role,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Message {
    pub fn new(index: usize, role: Role, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Message {
            index,
            role,
            text,
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub counselor_id: String,
    pub messages: Vec<Message>,
    pub outcome: Option<Outcome>,
    pub issue: Option<String>,
}

impl Conversation {
    /// Builds a conversation from `(role, text)` pairs, indexing messages in order.
    pub fn new<I, S>(id: impl Into<String>, counselor_id: impl Into<String>, messages: I) -> Self
    where
        I: IntoIterator<Item = (Role, S)>,
        S: Into<String>,
    {
        let messages = messages
            .into_iter()
            .enumerate()
            .map(|(i, (role, text))| Message::new(i, role, text))
            .collect();
        Conversation {
            id: id.into(),
            counselor_id: counselor_id.into(),
            messages,
            outcome: None,
            issue: None,
        }
    }

    pub fn with_outcome(mut self, outcome: Option<Outcome>) -> Self {
        self.outcome = outcome;
        self
    }

    pub fn with_issue(mut self, issue: Option<String>) -> Self {
        self.issue = issue;
        self
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.outcome.is_some()
    }
}

/// Immutable collection of conversations with a counselor index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    conversations: Vec<Conversation>,
    by_counselor: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate conversation ids and empty conversations.
    pub fn new(conversations: Vec<Conversation>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut by_counselor: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for conv in &conversations {
            if !seen.insert(conv.id.as_str()) {
                return Err(Error::DuplicateId(conv.id.clone()));
            }
            if conv.messages.is_empty() {
                return Err(Error::invalid(format!(
                    "conversation `{}` has no messages",
                    conv.id
                )));
            }
            by_counselor
                .entry(conv.counselor_id.clone())
                .or_default()
                .push(conv.id.clone());
        }
        Ok(Corpus {
            conversations,
            by_counselor,
        })
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn by_counselor(&self) -> &BTreeMap<String, Vec<String>> {
        &self.by_counselor
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.id == id)
    }

    pub fn labeled(&self) -> impl Iterator<Item = &Conversation> {
        self.conversations.iter().filter(|c| c.is_labeled())
    }

    pub fn into_conversations(self) -> Vec<Conversation> {
        self.conversations
    }

    /// Reads a transcript JSONL file. See [`Corpus::from_jsonl_reader`].
    pub fn from_jsonl_path(path: impl AsRef<Path>) -> Result<Ingested> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl_reader(BufReader::new(file))
    }

    /// Parses transcript JSONL.
    ///
    /// Lines that are not valid JSON objects of the record shape fail the
    /// whole read with their 1-based line number. Records with an unknown
    /// role, unknown outcome, or no messages are skipped and reported in
    /// [`Ingested::rejected`]. Blank lines are ignored.
    pub fn from_jsonl_reader(reader: impl BufRead) -> Result<Ingested> {
        let mut conversations = Vec::new();
        let mut rejected = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            match raw.into_conversation() {
                Ok(conv) => conversations.push(conv),
                Err(reason) => rejected.push(Rejection {
                    line: line_no,
                    id: None,
                    reason,
                }),
            }
        }
        let corpus = Corpus::new(conversations)?;
        Ok(Ingested { corpus, rejected })
    }

    /// Writes the corpus as transcript JSONL. Negative outcomes are written as `"worse"`.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for conv in &self.conversations {
            let record = RawRecord::from_conversation(conv);
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// Result of reading a transcript file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: rejected record: {}", self.line, self.reason)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMessage {
    role: String,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    counselor_id: String,
    #[serde(default)]
    outcome: Option<String>,
    #[serde(default)]
    issue: Option<String>,
    messages: Vec<RawMessage>,
}

impl RawRecord {
    fn into_conversation(self) -> std::result::Result<Conversation, String> {
        let outcome = match self.outcome.as_deref() {
            None => None,
            Some("better") => Some(Outcome::Positive),
            Some("same") | Some("worse") => Some(Outcome::Negative),
            Some(other) => {
                return Err(format!(
                    "conversation `{}`: unknown outcome `{other}`",
                    self.id
                ))
            }
        };
        if self.messages.is_empty() {
            return Err(format!("conversation `{}` has no messages", self.id));
        }
        let mut messages = Vec::with_capacity(self.messages.len());
        for (i, m) in self.messages.into_iter().enumerate() {
            let role = m.role.parse::<Role>().map_err(|_| {
                format!(
                    "conversation `{}`, message {i}: unknown role `{}`",
                    self.id, m.role
                )
            })?;
            messages.push(Message::new(i, role, m.text));
        }
        Ok(Conversation {
            id: self.id,
            counselor_id: self.counselor_id,
            messages,
            outcome,
            issue: self.issue,
        })
    }

    fn from_conversation(conv: &Conversation) -> Self {
        RawRecord {
            id: conv.id.clone(),
            counselor_id: conv.counselor_id.clone(),
            outcome: conv.outcome.map(|o| match o {
                Outcome::Positive => "better".to_string(),
                Outcome::Negative => "worse".to_string(),
            }),
            issue: conv.issue.clone(),
            messages: conv
                .messages
                .iter()
                .map(|m| RawMessage {
                    role: m.role.as_str().to_string(),
                    text: m.text.clone(),
                })
                .collect(),
        }
    }
}

/// Lowercases and splits on anything that is not alphanumeric. An apostrophe
/// between two alphanumeric characters stays inside the token, so "can't" is
/// one token. The typographic apostrophe is normalized to `'`.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if c == '\''
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Splits `n` messages into `k` contiguous chunks; chunk `j` covers
/// `[floor(j*n/k), floor((j+1)*n/k))`.
pub fn chunk_ranges(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 {
        return Err(Error::invalid("chunk count must be positive"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "cannot split {n} messages into {k} chunks"
        )));
    }
    Ok((0..k).map(|j| (j * n / k)..((j + 1) * n / k)).collect())
}

pub fn chunk_conversation(conv: &Conversation, k: usize) -> Result<Vec<Range<usize>>> {
    chunk_ranges(conv.messages.len(), k)
}

/// Index of the first texter message with at least `min_tokens` tokens.
pub fn find_situation_setter(conv: &Conversation, min_tokens: usize) -> Option<usize> {
    conv.messages
        .iter()
        .position(|m| m.role == Role::Texter && m.tokens.len() >= min_tokens)
}

/// Counselor-quality split into more and less successful groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounselorSplit {
    pub more_successful: BTreeSet<String>,
    pub less_successful: BTreeSet<String>,
    /// Success rate of every eligible counselor.
    pub success_rate: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounselorGroup {
    MoreSuccessful,
    LessSuccessful,
}

impl CounselorGroup {
    pub const BOTH: [CounselorGroup; 2] =
        [CounselorGroup::MoreSuccessful, CounselorGroup::LessSuccessful];

    pub fn as_str(self) -> &'static str {
        match self {
            CounselorGroup::MoreSuccessful => "more_successful",
            CounselorGroup::LessSuccessful => "less_successful",
        }
    }
}

impl fmt::Display for CounselorGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl CounselorSplit {
    pub fn group_of(&self, counselor_id: &str) -> Option<CounselorGroup> {
        if self.more_successful.contains(counselor_id) {
            Some(CounselorGroup::MoreSuccessful)
        } else if self.less_successful.contains(counselor_id) {
            Some(CounselorGroup::LessSuccessful)
        } else {
            None
        }
    }

    pub fn members(&self, group: CounselorGroup) -> &BTreeSet<String> {
        match group {
            CounselorGroup::MoreSuccessful => &self.more_successful,
            CounselorGroup::LessSuccessful => &self.less_successful,
        }
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    /// Eligibility requires strictly more than this many qualifying conversations.
    pub min_labeled: usize,
    /// A labeled conversation qualifies when it has at least this many messages.
    pub min_messages: usize,
    pub group_size: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            min_labeled: 15,
            min_messages: 30,
            group_size: 40,
        }
    }
}

/// Splits eligible counselors into the top and bottom `group_size` by success rate.
///
/// Ties are broken by counselor id. The group size is capped at half the
/// number of eligible counselors so the groups stay disjoint.
pub fn split_counselors(corpus: &Corpus, cfg: SplitConfig) -> Result<CounselorSplit> {
    let mut tallies: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for conv in corpus.conversations() {
        let Some(outcome) = conv.outcome else { continue };
        if conv.messages.len() < cfg.min_messages {
            continue;
        }
        let t = tallies.entry(conv.counselor_id.as_str()).or_default();
        if outcome.is_positive() {
            t.0 += 1;
        } else {
            t.1 += 1;
        }
    }
    let mut ranked: Vec<(&str, f64)> = tallies
        .into_iter()
        .filter(|(_, (pos, neg))| pos + neg > cfg.min_labeled)
        .map(|(id, (pos, neg))| (id, pos as f64 / (pos + neg) as f64))
        .collect();
    if ranked.len() < 2 {
        return Err(Error::insufficient(format!(
            "{} eligible counselors; need at least 2",
            ranked.len()
        )));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let g = cfg.group_size.min(ranked.len() / 2);
    let more_successful = ranked[..g].iter().map(|(id, _)| id.to_string()).collect();
    let less_successful = ranked[ranked.len() - g..]
        .iter()
        .map(|(id, _)| id.to_string())
        .collect();
    let success_rate = ranked
        .iter()
        .map(|(id, r)| (id.to_string(), *r))
        .collect();
    Ok(CounselorSplit {
        more_successful,
        less_successful,
        success_rate,
    })
}

/// Basic corpus statistics. Per-conversation and per-message averages are
/// computed over labeled conversations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub labeled_conversations: usize,
    pub labeled_fraction: f64,
    pub messages: usize,
    pub labeled_messages: usize,
    pub counselors: usize,
    pub messages_per_labeled_conversation: f64,
    pub tokens_per_labeled_message: f64,
    pub positive_rate: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let conversations = corpus.len();
    let messages: usize = corpus.conversations().iter().map(Conversation::len).sum();
    let labeled: Vec<&Conversation> = corpus.labeled().collect();
    let labeled_messages: usize = labeled.iter().map(|c| c.len()).sum();
    let labeled_tokens: usize = labeled
        .iter()
        .flat_map(|c| &c.messages)
        .map(|m| m.tokens.len())
        .sum();
    let positives = labeled
        .iter()
        .filter(|c| c.outcome == Some(Outcome::Positive))
        .count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CorpusStats {
        conversations,
        labeled_conversations: labeled.len(),
        labeled_fraction: ratio(labeled.len(), conversations),
        messages,
        labeled_messages,
        counselors: corpus.by_counselor().len(),
        messages_per_labeled_conversation: ratio(labeled_messages, labeled.len()),
        tokens_per_labeled_message: ratio(labeled_tokens, labeled_messages),
        positive_rate: ratio(positives, labeled.len()),
    }
}
