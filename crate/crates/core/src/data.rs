//! Rationale-annotated examples, vocabularies and the synthetic corpus.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::Mode;
use crate::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BLANK_ID: u32 = 2;

/// One sentence, an optional cloze query, a binary label and the per-token
/// rationale mask marking positive evidence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub query: Option<Vec<u32>>,
    pub label: bool,
    pub rationale: Vec<bool>,
}

impl Example {
    /// Validates that the mask matches the sentence and that negatives carry
    /// no rationale.
    pub fn new(
        tokens: Vec<u32>,
        query: Option<Vec<u32>>,
        label: bool,
        rationale: Vec<bool>,
    ) -> Result<Self, Error> {
        if rationale.len() != tokens.len() {
            return Err(Error::invalid(format!(
                "rationale has {} entries for {} tokens",
                rationale.len(),
                tokens.len()
            )));
        }
        if !label && rationale.iter().any(|&z| z) {
            return Err(Error::invalid("negative example with a nonempty rationale"));
        }
        Ok(Self {
            tokens,
            query,
            label,
            rationale,
        })
    }

    /// Number of marked tokens.
    pub fn marked(&self) -> usize {
        self.rationale.iter().filter(|&&z| z).count()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// How [`strip_rationale`] takes marked tokens out of a sentence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Removal {
    /// Delete marked tokens; the rest close ranks.
    #[default]
    Delete,
    /// Replace marked tokens with the unknown id, keeping positions.
    Mask,
}

/// Deletes every marked token of a positive example. The query is untouched
/// and the new mask is all zero.
pub fn remove_marked(example: &Example) -> Result<Example, Error> {
    strip_rationale(example, Removal::Delete)
}

pub fn strip_rationale(example: &Example, how: Removal) -> Result<Example, Error> {
    if !example.label {
        return Err(Error::invalid("rationale removal needs a positive example"));
    }
    if example.marked() == 0 {
        return Err(Error::invalid("rationale removal needs at least one marked token"));
    }
    let tokens: Vec<u32> = match how {
        Removal::Delete => example
            .tokens
            .iter()
            .zip(&example.rationale)
            .filter(|(_, &z)| !z)
            .map(|(&t, _)| t)
            .collect(),
        Removal::Mask => example
            .tokens
            .iter()
            .zip(&example.rationale)
            .map(|(&t, &z)| if z { UNK_ID } else { t })
            .collect(),
    };
    let rationale = vec![false; tokens.len()];
    Ok(Example {
        tokens,
        query: example.query.clone(),
        label: true,
        rationale,
    })
}

/// Dense token/id map. Ids 0, 1 and 2 are reserved for padding, unknown
/// words and the cloze blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub const PAD: &'static str = "<pad>";
    pub const UNK: &'static str = "<unk>";
    pub const BLANK: &'static str = "<blank>";

    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            ids: BTreeMap::new(),
        };
        for t in [Self::PAD, Self::UNK, Self::BLANK] {
            v.insert(t);
        }
        v
    }

    /// Rebuilds a vocabulary from its tokens in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, Error>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 3 || tokens[..3] != [Self::PAD, Self::UNK, Self::BLANK] {
            return Err(Error::invalid("vocabulary must start with <pad>, <unk>, <blank>"));
        }
        let mut v = Self {
            tokens: Vec::new(),
            ids: BTreeMap::new(),
        };
        for t in tokens {
            if v.ids.contains_key(&t) {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
            v.insert(&t);
        }
        Ok(v)
    }

    /// Id of `token`, adding it if new.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Parameters of the synthetic corpus.
///
/// Event mode: a sentence is positive iff it contains a trigger word, and the
/// triggers are its rationale. QA mode: the query holds a blank and a cue
/// word naming one answer candidate; the sentence is positive iff it
/// contains that answer, which is its rationale. Negatives contain a
/// different candidate.
///
/// With probability `bias_rate` a positive also gets the bias token, which
/// is never marked and so is a spurious, unannotated cue.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub mode: Mode,
    pub vocab_size: usize,
    /// Trigger lexicon size (answer candidates in QA mode).
    pub triggers: usize,
    pub bias_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub positive_fraction: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Event,
            vocab_size: 200,
            triggers: 8,
            bias_rate: 0.0,
            min_len: 6,
            max_len: 16,
            positive_fraction: 0.5,
            count: 1000,
            seed: 0,
        }
    }
}

/// Token id groups of the synthetic vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    pub triggers: Vec<u32>,
    /// QA only: `cues[k]` names `triggers[k]` in a query.
    pub cues: Vec<u32>,
    pub bias: u32,
    pub fillers: Vec<u32>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let cues = match self.mode {
            Mode::Event => 0,
            Mode::Qa => self.triggers,
        };
        let reserved = 3 + self.triggers + cues + 1;
        if self.triggers == 0 {
            return Err(Error::invalid("trigger lexicon must be nonempty"));
        }
        if self.mode == Mode::Qa && self.triggers < 2 {
            return Err(Error::invalid("qa mode needs at least two answer candidates"));
        }
        if reserved >= self.vocab_size {
            return Err(Error::invalid(format!(
                "vocabulary of {} cannot hold {} triggers, bias, reserved ids and fillers",
                self.vocab_size, self.triggers
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid("length range must satisfy 0 < min_len <= max_len"));
        }
        if !(0.0..=1.0).contains(&self.bias_rate) || !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::invalid("rates must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn lexicon(&self) -> Lexicon {
        let mut next = 3u32;
        let mut take = |k: usize| {
            let ids: Vec<u32> = (next..next + k as u32).collect();
            next += k as u32;
            ids
        };
        let triggers = take(self.triggers);
        let cues = match self.mode {
            Mode::Event => Vec::new(),
            Mode::Qa => take(self.triggers),
        };
        let bias = take(1)[0];
        let fillers = take(self.vocab_size - 4 - triggers.len() - cues.len());
        Lexicon {
            triggers,
            cues,
            bias,
            fillers,
        }
    }

    /// Vocabulary for this configuration; it depends on sizes and mode only,
    /// never on the seed.
    pub fn vocabulary(&self) -> Vocabulary {
        let lex = self.lexicon();
        let mut v = Vocabulary::new();
        let (trig, cue) = match self.mode {
            Mode::Event => ("trigger", "cue"),
            Mode::Qa => ("answer", "cue"),
        };
        for k in 0..lex.triggers.len() {
            v.insert(&format!("{trig}{k}"));
        }
        for k in 0..lex.cues.len() {
            v.insert(&format!("{cue}{k}"));
        }
        v.insert("bias");
        for k in 0..lex.fillers.len() {
            v.insert(&format!("w{k}"));
        }
        v
    }
}

/// A generated corpus and the vocabulary its ids refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub examples: Vec<Example>,
}

/// Generates a synthetic corpus; identical configs give identical corpora.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset, Error> {
    cfg.validate()?;
    let lex = cfg.lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let examples = (0..cfg.count)
        .map(|_| match cfg.mode {
            Mode::Event => event_example(cfg, &lex, &mut rng),
            Mode::Qa => qa_example(cfg, &lex, &mut rng),
        })
        .collect();
    Ok(Dataset {
        vocab: cfg.vocabulary(),
        examples,
    })
}

fn pick(rng: &mut ChaCha8Rng, ids: &[u32]) -> u32 {
    ids[rng.gen_range(0..ids.len())]
}

fn filler_sentence(cfg: &SynthConfig, lex: &Lexicon, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = rng.gen_range(cfg.min_len..=cfg.max_len);
    (0..n).map(|_| pick(rng, &lex.fillers)).collect()
}

/// Puts `rationale_ids` at distinct random positions (marked) and, when
/// `with_bias` and room remains, the bias token at another one.
fn plant(
    tokens: &mut [u32],
    rationale_ids: &[u32],
    with_bias: bool,
    bias: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let n = tokens.len();
    let k = rationale_ids.len().min(n);
    let extra = usize::from(with_bias && n > k);
    let slots = sample(rng, n, k + extra).into_vec();
    let mut z = vec![false; n];
    for (&pos, &id) in slots.iter().zip(rationale_ids) {
        tokens[pos] = id;
        z[pos] = true;
    }
    if extra == 1 {
        tokens[slots[k]] = bias;
    }
    z
}

fn event_example(cfg: &SynthConfig, lex: &Lexicon, rng: &mut ChaCha8Rng) -> Example {
    let label = rng.gen_bool(cfg.positive_fraction);
    let mut tokens = filler_sentence(cfg, lex, rng);
    let with_bias = rng.gen_bool(cfg.bias_rate);
    let rationale = if label {
        let k = rng.gen_range(1..=2usize);
        let triggers: Vec<u32> = (0..k).map(|_| pick(rng, &lex.triggers)).collect();
        plant(&mut tokens, &triggers, with_bias, lex.bias, rng)
    } else {
        vec![false; tokens.len()]
    };
    Example {
        tokens,
        query: None,
        label,
        rationale,
    }
}

fn qa_example(cfg: &SynthConfig, lex: &Lexicon, rng: &mut ChaCha8Rng) -> Example {
    let label = rng.gen_bool(cfg.positive_fraction);
    let answer = rng.gen_range(0..lex.triggers.len());

    let m = rng.gen_range(3..=7usize);
    let mut query: Vec<u32> = (0..m).map(|_| pick(rng, &lex.fillers)).collect();
    let slots = sample(rng, m, 2).into_vec();
    query[slots[0]] = BLANK_ID;
    query[slots[1]] = lex.cues[answer];

    let mut tokens = filler_sentence(cfg, lex, rng);
    let with_bias = rng.gen_bool(cfg.bias_rate);
    let rationale = if label {
        let k = rng.gen_range(1..=2usize);
        let answers = vec![lex.triggers[answer]; k];
        plant(&mut tokens, &answers, with_bias, lex.bias, rng)
    } else {
        let mut other = rng.gen_range(0..lex.triggers.len() - 1);
        if other >= answer {
            other += 1;
        }
        let pos = rng.gen_range(0..tokens.len());
        tokens[pos] = lex.triggers[other];
        vec![false; tokens.len()]
    };
    Example {
        tokens,
        query: Some(query),
        label,
        rationale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(tokens: &[u32], z: &[u8]) -> Example {
        Example::new(tokens.to_vec(), None, true, z.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn remove_marked_closes_ranks() {
        let r = remove_marked(&ex(&[10, 11, 12], &[0, 1, 0])).unwrap();
        assert_eq!(r.tokens, vec![10, 12]);
        assert_eq!(r.rationale, vec![false, false]);
        let r = remove_marked(&ex(&[10, 11, 12], &[1, 0, 1])).unwrap();
        assert_eq!(r.tokens, vec![11]);
        let r = remove_marked(&ex(&[10, 11], &[1, 1])).unwrap();
        assert!(r.tokens.is_empty());
    }

    #[test]
    fn remove_marked_rejects_negatives() {
        let neg = Example::new(vec![4, 5], None, false, vec![false, false]).unwrap();
        assert!(remove_marked(&neg).is_err());
    }

    #[test]
    fn masking_keeps_positions() {
        let r = strip_rationale(&ex(&[10, 11, 12], &[0, 1, 0]), Removal::Mask).unwrap();
        assert_eq!(r.tokens, vec![10, UNK_ID, 12]);
    }

    #[test]
    fn negative_with_rationale_is_rejected() {
        assert!(Example::new(vec![4], None, false, vec![true]).is_err());
        assert!(Example::new(vec![4, 5], None, true, vec![true]).is_err());
    }

    #[test]
    fn all_positive_corpus() {
        let cfg = SynthConfig {
            bias_rate: 0.0,
            positive_fraction: 1.0,
            count: 10,
            seed: 3,
            ..SynthConfig::default()
        };
        let ds = gen_synthetic(&cfg).unwrap();
        assert_eq!(ds.examples.len(), 10);
        for e in &ds.examples {
            assert!(e.label);
            assert!((1..=2).contains(&e.marked()));
        }
    }

    #[test]
    fn seed_determinism() {
        let cfg = SynthConfig {
            seed: 7,
            count: 50,
            ..SynthConfig::default()
        };
        assert_eq!(gen_synthetic(&cfg).unwrap(), gen_synthetic(&cfg).unwrap());
    }

    #[test]
    fn infeasible_lexicon_is_rejected() {
        let cfg = SynthConfig {
            vocab_size: 10,
            triggers: 10,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic(&cfg).is_err());
    }

    #[test]
    fn bias_token_only_in_unmarked_positive_slots() {
        let cfg = SynthConfig {
            bias_rate: 1.0,
            count: 200,
            ..SynthConfig::default()
        };
        let lex = cfg.lexicon();
        for e in gen_synthetic(&cfg).unwrap().examples {
            let has_bias = e.tokens.contains(&lex.bias);
            assert_eq!(has_bias, e.label);
            for (t, z) in e.tokens.iter().zip(&e.rationale) {
                if *t == lex.bias {
                    assert!(!z);
                }
            }
        }
    }

    #[test]
    fn qa_answers_are_marked_and_cued() {
        let cfg = SynthConfig {
            mode: Mode::Qa,
            count: 200,
            ..SynthConfig::default()
        };
        let lex = cfg.lexicon();
        for e in gen_synthetic(&cfg).unwrap().examples {
            let q = e.query.as_ref().unwrap();
            assert!((3..=7).contains(&q.len()));
            assert_eq!(q.iter().filter(|&&t| t == BLANK_ID).count(), 1);
            let cue = q.iter().find_map(|t| lex.cues.iter().position(|c| c == t)).unwrap();
            let answer = lex.triggers[cue];
            for (t, z) in e.tokens.iter().zip(&e.rationale) {
                assert_eq!(*z, *t == answer);
            }
            assert_eq!(e.label, e.tokens.contains(&answer));
        }
    }

    #[test]
    fn vocabulary_roundtrip_and_reserved_ids() {
        let v = SynthConfig::default().vocabulary();
        assert_eq!(v.len(), 200);
        assert_eq!(v.id("<pad>"), Some(PAD_ID));
        assert_eq!(v.id("<blank>"), Some(BLANK_ID));
        let again = Vocabulary::from_tokens(v.tokens().iter().cloned()).unwrap();
        assert_eq!(again, v);
        assert!(Vocabulary::from_tokens(["a", "b", "c"]).is_err());
    }
}
