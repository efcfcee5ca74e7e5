//! Token bags, tokenizers and entropy accumulation.
//!
//! Every quantity the monitor reports is derived from order-free token
//! frequency counts. A [`TokenBag`] is a small, immutable-ish count map used
//! for a single message; an [`EntropyAccumulator`] is the growing context,
//! which keeps a running `Σ c·log₂ c` so that its entropy is available in
//! O(1) and merges with a small bag cost O(distinct tokens of the bag).
//!
//! ```text
//! H = log₂ N − (Σᵢ cᵢ·log₂ cᵢ) / N
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::IdtError;

/// Integer token identifier. Stable within one conversation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// `c·log₂ c` with `0·log₂ 0 = 0`.
#[inline]
pub(crate) fn xlog2x(c: u64) -> f64 {
    if c <= 1 {
        0.0
    } else {
        let c = c as f64;
        c * c.log2()
    }
}

#[inline]
fn entropy_from_parts(total: u64, clogc: f64) -> f64 {
    if total <= 1 {
        return 0.0;
    }
    let n = total as f64;
    (n.log2() - clogc / n).max(0.0)
}

/// Frequency map from token id to count.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBag {
    counts: BTreeMap<TokenId, u64>,
    total: u64,
}

impl TokenBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: &[TokenId]) -> Self {
        let mut bag = Self::new();
        for &t in tokens {
            bag.add(t, 1);
        }
        bag
    }

    /// Adds `n` occurrences of `token`. Adding zero is a no-op.
    pub fn add(&mut self, token: TokenId, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(token).or_insert(0) += n;
        self.total += n;
    }

    pub fn merge(&mut self, other: &TokenBag) {
        for (&t, &c) in &other.counts {
            self.add(t, c);
        }
    }

    pub fn count(&self, token: TokenId) -> u64 {
        self.counts.get(&token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct tokens.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, u64)> + '_ {
        self.counts.iter().map(|(&t, &c)| (t, c))
    }

    /// Shannon entropy in bits, evaluated directly as `−Σ p log₂ p`.
    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

impl FromIterator<TokenId> for TokenBag {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        let mut bag = TokenBag::new();
        for t in iter {
            bag.add(t, 1);
        }
        bag
    }
}

pub fn bag_from_tokens(tokens: &[TokenId]) -> TokenBag {
    TokenBag::from_tokens(tokens)
}

/// Shannon entropy (bits) of the bag's empirical distribution.
pub fn entropy(bag: &TokenBag) -> f64 {
    if bag.total <= 1 {
        return 0.0;
    }
    let n = bag.total as f64;
    let h: f64 = bag
        .counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Entropy of the additive merge of all `bags`.
pub fn pooled_entropy(bags: &[&TokenBag]) -> f64 {
    let mut merged = TokenBag::new();
    for bag in bags {
        merged.merge(bag);
    }
    entropy(&merged)
}

/// Running entropy over a growing token history.
///
/// `update_count` counts individual token-occurrence updates and exists so
/// callers can verify that work per turn is proportional to the new tokens
/// only.
#[derive(Clone, Debug, Default)]
pub struct EntropyAccumulator {
    counts: HashMap<TokenId, u64>,
    total: u64,
    clogc: f64,
    update_count: u64,
}

impl EntropyAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bag(bag: &TokenBag) -> Self {
        let mut acc = Self::new();
        for (t, c) in bag.iter() {
            acc.add_n(t, c);
        }
        acc
    }

    /// Restores an accumulator from persisted parts. `clogc` is taken
    /// verbatim so that resumed runs stay bit-identical.
    pub fn from_parts(
        counts: impl IntoIterator<Item = (TokenId, u64)>,
        total: u64,
        clogc: f64,
    ) -> Result<Self, IdtError> {
        let mut map = HashMap::new();
        let mut sum = 0u64;
        for (t, c) in counts {
            if c == 0 {
                return Err(IdtError::InvalidState(format!("token {t} has zero count")));
            }
            if map.insert(t, c).is_some() {
                return Err(IdtError::InvalidState(format!("token {t} listed twice")));
            }
            sum += c;
        }
        if sum != total {
            return Err(IdtError::InvalidState(format!(
                "count total {sum} does not match recorded total {total}"
            )));
        }
        if !clogc.is_finite() {
            return Err(IdtError::InvalidState("non-finite clogc".into()));
        }
        Ok(Self {
            counts: map,
            total,
            clogc,
            update_count: 0,
        })
    }

    pub fn add(&mut self, token: TokenId) {
        let c = self.counts.entry(token).or_insert(0);
        let old = *c;
        *c += 1;
        self.clogc += xlog2x(old + 1) - xlog2x(old);
        self.total += 1;
        self.update_count += 1;
    }

    fn add_n(&mut self, token: TokenId, n: u64) {
        if n == 0 {
            return;
        }
        let c = self.counts.entry(token).or_insert(0);
        let old = *c;
        *c += n;
        self.clogc += xlog2x(old + n) - xlog2x(old);
        self.total += n;
        self.update_count += n;
    }

    pub fn extend(&mut self, tokens: &[TokenId]) {
        for &t in tokens {
            self.add(t);
        }
    }

    pub fn entropy(&self) -> f64 {
        entropy_from_parts(self.total, self.clogc)
    }

    /// Entropy of this history pooled with `extras`, without mutating it.
    /// Cost is O(distinct tokens across `extras`).
    pub fn entropy_with(&self, extras: &[&TokenBag]) -> f64 {
        let mut overlay: BTreeMap<TokenId, u64> = BTreeMap::new();
        let mut added = 0u64;
        for bag in extras {
            for (t, c) in bag.iter() {
                *overlay.entry(t).or_insert(0) += c;
                added += c;
            }
        }
        let mut clogc = self.clogc;
        for (t, extra) in overlay {
            let base = self.count(t);
            clogc += xlog2x(base + extra) - xlog2x(base);
        }
        entropy_from_parts(self.total + added, clogc)
    }

    pub fn count(&self, token: TokenId) -> u64 {
        self.counts.get(&token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Running `Σ c·log₂ c`.
    pub fn clogc(&self) -> f64 {
        self.clogc
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Counts sorted by token id.
    pub fn sorted_counts(&self) -> Vec<(TokenId, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(&t, &c)| (t, c)).collect();
        v.sort_unstable();
        v
    }

    pub fn to_bag(&self) -> TokenBag {
        let mut bag = TokenBag::new();
        for (t, c) in self.sorted_counts() {
            bag.add(t, c);
        }
        bag
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// Records carry integer token ids; text is rejected.
    #[default]
    Pretokenized,
    Whitespace,
    Byte,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSpec {
    pub mode: TokenizerMode,
    /// Whitespace mode only.
    pub lowercase: bool,
}

impl TokenizerSpec {
    pub fn whitespace() -> Self {
        Self {
            mode: TokenizerMode::Whitespace,
            lowercase: false,
        }
    }

    pub fn byte() -> Self {
        Self {
            mode: TokenizerMode::Byte,
            lowercase: false,
        }
    }
}

/// Deterministic tokenizer with a per-conversation intern table.
#[derive(Clone, Debug, Default)]
pub struct Tokenizer {
    spec: TokenizerSpec,
    vocab: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Tokenizer {
    pub fn new(spec: TokenizerSpec) -> Self {
        Self {
            spec,
            vocab: Vec::new(),
            ids: HashMap::new(),
        }
    }

    /// Rebuilds the intern table from a first-seen ordered vocabulary.
    pub fn with_vocab(spec: TokenizerSpec, vocab: Vec<String>) -> Result<Self, IdtError> {
        let mut ids = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if ids.insert(w.clone(), TokenId(i as u32)).is_some() {
                return Err(IdtError::InvalidState(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self { spec, vocab, ids })
    }

    pub fn spec(&self) -> TokenizerSpec {
        self.spec
    }

    /// Interned surface forms in id order.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn tokenize(&mut self, text: &str) -> Result<Vec<TokenId>, IdtError> {
        match self.spec.mode {
            TokenizerMode::Pretokenized => Err(IdtError::TextInPretokenizedMode),
            TokenizerMode::Byte => Ok(text.bytes().map(|b| TokenId(b as u32)).collect()),
            TokenizerMode::Whitespace => {
                let lowercase = self.spec.lowercase;
                let mut out = Vec::new();
                for word in text.split_whitespace() {
                    let word = if lowercase {
                        word.to_lowercase()
                    } else {
                        word.to_string()
                    };
                    out.push(self.intern(word));
                }
                Ok(out)
            }
        }
    }

    fn intern(&mut self, word: String) -> TokenId {
        if let Some(&id) = self.ids.get(&word) {
            return id;
        }
        let id = TokenId(self.vocab.len() as u32);
        self.vocab.push(word.clone());
        self.ids.insert(word, id);
        id
    }
}

/// Tokenizes with a fresh intern table.
pub fn tokenize(text: &str, spec: TokenizerSpec) -> Result<Vec<TokenId>, IdtError> {
    Tokenizer::new(spec).tokenize(text)
}
