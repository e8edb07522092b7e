//! Alphabets, words, substitutions, and the language of an almost minimal
//! substitution subshift.
//!
//! Letters are `1..=size` with letter 1 distinguished: images of 1 are all-1
//! words, so 1-blocks grow without bound and the subshift has the unique fixed
//! point `1^∞`. The language is enumerated by scanning padded iterates
//! `1^pad σ^n(seed) 1^pad`, whose windows are exactly the factors of the
//! subshift once the depth stabilizes.

use crate::error::{Error, Result};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Deref;
use std::sync::{Arc, RwLock};

pub type Letter = u8;

/// A finite word over letters `1..=9`. Displayed as a digit string; the empty
/// word displays as `""`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub Vec<Letter>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn ones(len: usize) -> Self {
        Word(vec![1; len])
    }

    pub fn single(a: Letter) -> Self {
        Word(vec![a])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_all_ones(&self) -> bool {
        self.0.iter().all(|&a| a == 1)
    }

    /// Number of letters different from 1 (the paper's `|w|_{¬1}`).
    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&a| a != 1).count()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    /// 1-based closed-range slice `w_i … w_j`; empty when `i > j`.
    pub fn slice1(&self, i: usize, j: usize) -> Word {
        if i > j {
            return Word::empty();
        }
        Word(self.0[i - 1..j].to_vec())
    }

    /// Maximal runs of the letter 1 as `(start0, len)` pairs, 0-based.
    pub fn one_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.0.len() {
            if self.0[i] == 1 {
                let s = i;
                while i < self.0.len() && self.0[i] == 1 {
                    i += 1;
                }
                runs.push((s, i - s));
            } else {
                i += 1;
            }
        }
        runs
    }

    pub fn parse(s: &str) -> Result<Word> {
        let mut v = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c.to_digit(10) {
                Some(d) if (1..=9).contains(&d) => v.push(d as Letter),
                _ => {
                    return Err(Error::Input(format!(
                        "word must be digits 1-9, got {s:?}"
                    )))
                }
            }
        }
        Ok(Word(v))
    }
}

impl Deref for Word {
    type Target = [Letter];
    fn deref(&self) -> &[Letter] {
        &self.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &a in &self.0 {
            if a <= 9 {
                write!(f, "{a}")?;
            } else {
                // letters beyond the digit range (large coded alphabets)
                write!(f, "({a})")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl std::str::FromStr for Word {
    type Err = Error;
    fn from_str(s: &str) -> Result<Word> {
        Word::parse(s)
    }
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Word, D::Error> {
        let s = String::deserialize(d)?;
        Word::parse(&s).map_err(D::Error::custom)
    }
}

/// All (overlapping) occurrence start positions of `pattern` in `host`,
/// 1-based ascending. Knuth-Morris-Pratt, linear time.
pub fn occurrences(host: &[Letter], pattern: &[Letter]) -> Vec<usize> {
    let mut out = Vec::new();
    if pattern.is_empty() || pattern.len() > host.len() {
        return out;
    }
    let fail = kmp_table(pattern);
    let mut k = 0usize;
    for (i, &c) in host.iter().enumerate() {
        while k > 0 && pattern[k] != c {
            k = fail[k - 1];
        }
        if pattern[k] == c {
            k += 1;
        }
        if k == pattern.len() {
            out.push(i + 2 - pattern.len());
            k = fail[k - 1];
        }
    }
    out
}

pub fn count_occurrences(host: &[Letter], pattern: &[Letter]) -> u128 {
    if pattern.is_empty() || pattern.len() > host.len() {
        return 0;
    }
    let fail = kmp_table(pattern);
    let mut k = 0usize;
    let mut n = 0u128;
    for &c in host {
        while k > 0 && pattern[k] != c {
            k = fail[k - 1];
        }
        if pattern[k] == c {
            k += 1;
        }
        if k == pattern.len() {
            n += 1;
            k = fail[k - 1];
        }
    }
    n
}

fn kmp_table(pattern: &[Letter]) -> Vec<usize> {
    let mut fail = vec![0usize; pattern.len()];
    let mut k = 0;
    for i in 1..pattern.len() {
        while k > 0 && pattern[k] != pattern[i] {
            k = fail[k - 1];
        }
        if pattern[k] == pattern[i] {
            k += 1;
        }
        fail[i] = k;
    }
    fail
}

/// JSON shape of a substitution config file.
#[derive(Serialize, Deserialize)]
struct SubstitutionConfig {
    alphabet_size: u8,
    images: BTreeMap<String, String>,
    seed: u8,
}

/// A substitution generating an almost minimal subshift: σ(1) is an all-1 word
/// of length ≥ 2, images of other letters begin and end with a non-1 letter,
/// and σ(seed) begins and ends with the seed.
#[derive(Clone, PartialEq, Eq)]
pub struct Substitution {
    pub alphabet_size: u8,
    images: Vec<Word>,
    pub seed: Letter,
}

impl fmt::Debug for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Substitution(size {}, seed {}", self.alphabet_size, self.seed)?;
        for a in 1..=self.alphabet_size {
            write!(f, ", {a}->{}", self.image(a))?;
        }
        write!(f, ")")
    }
}

impl Substitution {
    pub fn new(alphabet_size: u8, images: Vec<(Letter, Word)>, seed: Letter) -> Result<Self> {
        if !(2..=9).contains(&alphabet_size) {
            return Err(Error::Input(format!(
                "alphabet size must be in 2..=9, got {alphabet_size}"
            )));
        }
        let mut table = vec![None; alphabet_size as usize];
        for (a, w) in images {
            if a == 0 || a > alphabet_size {
                return Err(Error::Input(format!("letter {a} outside alphabet")));
            }
            if w.is_empty() {
                return Err(Error::Input(format!("image of {a} is empty")));
            }
            if w.iter().any(|&b| b == 0 || b > alphabet_size) {
                return Err(Error::Input(format!("image of {a} leaves the alphabet")));
            }
            if table[a as usize - 1].replace(w).is_some() {
                return Err(Error::Input(format!("duplicate image for letter {a}")));
            }
        }
        let images: Vec<Word> = table
            .into_iter()
            .enumerate()
            .map(|(i, w)| w.ok_or_else(|| Error::Input(format!("missing image for letter {}", i + 1))))
            .collect::<Result<_>>()?;
        let sub = Substitution { alphabet_size, images, seed };
        if !(sub.image(1).is_all_ones() && sub.image(1).len() >= 2) {
            return Err(Error::Input(
                "image of 1 must be an all-1 word of length >= 2".into(),
            ));
        }
        for a in 2..=alphabet_size {
            let w = sub.image(a);
            if w[0] == 1 || w[w.len() - 1] == 1 {
                return Err(Error::Input(format!(
                    "image of {a} must begin and end with a letter != 1"
                )));
            }
        }
        if sub.seed == 1 || sub.seed > alphabet_size {
            return Err(Error::Input(format!("seed {} must be a non-1 letter", sub.seed)));
        }
        let sw = sub.image(sub.seed);
        if sw[0] != sub.seed || sw[sw.len() - 1] != sub.seed {
            return Err(Error::Input(format!(
                "image of seed {} must begin and end with the seed",
                sub.seed
            )));
        }
        Ok(sub)
    }

    /// The two-letter system used by every example: σ(1)=11, σ(2)=212, seed 2.
    pub fn builtin_default() -> Self {
        Substitution::new(
            2,
            vec![(1, Word::parse("11").unwrap()), (2, Word::parse("212").unwrap())],
            2,
        )
        .expect("builtin substitution is valid")
    }

    pub fn image(&self, a: Letter) -> &Word {
        &self.images[a as usize - 1]
    }

    pub fn substitute(&self, w: &Word) -> Result<Word> {
        let mut out = Vec::new();
        for &a in w.iter() {
            if a == 0 || a > self.alphabet_size {
                return Err(Error::Input(format!("letter {a} outside alphabet")));
            }
            out.extend_from_slice(self.image(a));
        }
        Ok(Word(out))
    }

    /// σ^n(a), with a configurable cap on the materialized length.
    pub fn iterate(&self, a: Letter, n: u32, len_cap: usize) -> Result<Word> {
        if a == 0 || a > self.alphabet_size {
            return Err(Error::Input(format!("letter {a} outside alphabet")));
        }
        let mut w = Word::single(a);
        for step in 0..n {
            if w.len().saturating_mul(self.max_image_len()) > len_cap {
                return Err(Error::Resource(format!(
                    "iterate(σ, {a}, {n}) exceeds length cap {len_cap} at step {step}"
                )));
            }
            w = self.substitute(&w)?;
            if w.len() > len_cap {
                return Err(Error::Resource(format!(
                    "iterate(σ, {a}, {n}) exceeds length cap {len_cap} at step {}",
                    step + 1
                )));
            }
        }
        Ok(w)
    }

    fn max_image_len(&self) -> usize {
        self.images.iter().map(Word::len).max().unwrap_or(1)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SubstitutionConfig = serde_json::from_str(text)
            .map_err(|e| Error::Input(format!("bad substitution config: {e}")))?;
        let mut images = Vec::new();
        for (k, v) in &cfg.images {
            let a: Letter = k
                .parse()
                .map_err(|_| Error::Input(format!("bad letter key {k:?}")))?;
            images.push((a, Word::parse(v)?));
        }
        Substitution::new(cfg.alphabet_size, images, cfg.seed)
    }

    pub fn to_json(&self) -> String {
        let cfg = SubstitutionConfig {
            alphabet_size: self.alphabet_size,
            images: (1..=self.alphabet_size)
                .map(|a| (a.to_string(), self.image(a).to_string()))
                .collect(),
            seed: self.seed,
        };
        serde_json::to_string_pretty(&cfg).expect("config serializes")
    }
}

/// Common interface of concrete languages: the substitution language itself and
/// languages obtained from it by codings. Factor sets are exact (stabilized),
/// and every language contains all the all-1 words.
pub trait LanguageSource: Send + Sync + fmt::Debug {
    fn alphabet_size(&self) -> u8;

    /// All length-`len` factors; exact once the underlying scan stabilizes.
    fn factors(&self, len: usize) -> Result<Arc<BTreeSet<Word>>>;

    /// The scan word `1^pad core(depth) 1^pad` in this language's alphabet.
    /// Its windows are genuine factors, and counts of any fixed non-all-1
    /// pattern double from depth to depth once the depth is large enough.
    fn scan_word(&self, depth: u32, pad: usize) -> Result<Word>;

    /// Frequency denominator at `depth`: occurrences of the underlying seed
    /// letter in the core.
    fn scan_weight(&self, depth: u32) -> Result<u128>;

    /// Depth at which `factors(len)` stabilized.
    fn stabilization_depth(&self, len: usize) -> Result<u32>;

    fn max_depth(&self) -> u32;

    fn contains(&self, w: &Word) -> Result<bool> {
        if w.is_empty() {
            return Ok(true);
        }
        Ok(self.factors(w.len())?.contains(w))
    }
}

#[derive(Default)]
struct LanguageCaches {
    cores: BTreeMap<u32, Arc<Word>>,
    factors: BTreeMap<usize, (Arc<BTreeSet<Word>>, u32)>,
    weights: BTreeMap<u32, u128>,
}

/// The language of the subshift generated by a substitution:
/// `L = ∪_n Fact(σ^n(seed)) ∪ {1^m : m ≥ 1}`, enumerated through padded scans.
pub struct SubstitutionLanguage {
    sub: Substitution,
    max_depth: u32,
    len_cap: usize,
    caches: RwLock<LanguageCaches>,
}

impl fmt::Debug for SubstitutionLanguage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SubstitutionLanguage({:?})", self.sub)
    }
}

pub const DEFAULT_MAX_DEPTH: u32 = 16;
pub const DEFAULT_LEN_CAP: usize = 1 << 20;

impl SubstitutionLanguage {
    pub fn new(sub: Substitution) -> Arc<Self> {
        Self::with_limits(sub, DEFAULT_MAX_DEPTH, DEFAULT_LEN_CAP)
    }

    pub fn with_limits(sub: Substitution, max_depth: u32, len_cap: usize) -> Arc<Self> {
        Arc::new(SubstitutionLanguage {
            sub,
            max_depth,
            len_cap,
            caches: RwLock::new(LanguageCaches::default()),
        })
    }

    pub fn substitution(&self) -> &Substitution {
        &self.sub
    }

    /// σ^depth(seed), cached.
    pub fn core(&self, depth: u32) -> Result<Arc<Word>> {
        if depth > self.max_depth {
            return Err(Error::Resource(format!(
                "depth {depth} exceeds horizon {}",
                self.max_depth
            )));
        }
        if let Some(w) = self.caches.read().unwrap().cores.get(&depth) {
            return Ok(w.clone());
        }
        let w = Arc::new(self.sub.iterate(self.sub.seed, depth, self.len_cap)?);
        self.caches
            .write()
            .unwrap()
            .cores
            .entry(depth)
            .or_insert(w.clone());
        Ok(w)
    }

    fn scan_at(&self, depth: u32, len: usize) -> Result<BTreeSet<Word>> {
        let padded = self.scan_word(depth, len)?;
        let mut set = BTreeSet::new();
        if len == 0 {
            set.insert(Word::empty());
            return Ok(set);
        }
        for win in padded.windows(len) {
            set.insert(Word(win.to_vec()));
        }
        Ok(set)
    }
}

pub(crate) fn ceil_log2(x: usize) -> u32 {
    debug_assert!(x >= 1);
    (usize::BITS - (x - 1).leading_zeros()).min(63)
}

impl LanguageSource for SubstitutionLanguage {
    fn alphabet_size(&self) -> u8 {
        self.sub.alphabet_size
    }

    fn factors(&self, len: usize) -> Result<Arc<BTreeSet<Word>>> {
        if let Some((set, _)) = self.caches.read().unwrap().factors.get(&len) {
            return Ok(set.clone());
        }
        let start = ceil_log2(len.max(1)) + 2;
        let mut prev = self.scan_at(start, len)?;
        let mut depth = start;
        loop {
            if depth + 1 > self.max_depth {
                return Err(Error::Diagnostic(format!(
                    "factors({len}) did not stabilize by depth {depth}; last sizes {} -> ?",
                    prev.len()
                )));
            }
            let cur = self.scan_at(depth + 1, len)?;
            if cur == prev {
                let arc = Arc::new(cur);
                self.caches
                    .write()
                    .unwrap()
                    .factors
                    .entry(len)
                    .or_insert((arc.clone(), depth));
                return Ok(arc);
            }
            prev = cur;
            depth += 1;
        }
    }

    fn scan_word(&self, depth: u32, pad: usize) -> Result<Word> {
        let core = self.core(depth)?;
        let mut v = Vec::with_capacity(core.len() + 2 * pad);
        v.extend(std::iter::repeat(1).take(pad));
        v.extend_from_slice(&core);
        v.extend(std::iter::repeat(1).take(pad));
        Ok(Word(v))
    }

    fn scan_weight(&self, depth: u32) -> Result<u128> {
        if let Some(&w) = self.caches.read().unwrap().weights.get(&depth) {
            return Ok(w);
        }
        let core = self.core(depth)?;
        let seed = self.sub.seed;
        let w = core.iter().filter(|&&a| a == seed).count() as u128;
        self.caches.write().unwrap().weights.entry(depth).or_insert(w);
        Ok(w)
    }

    fn stabilization_depth(&self, len: usize) -> Result<u32> {
        self.factors(len)?;
        Ok(self.caches.read().unwrap().factors[&len].1)
    }

    fn max_depth(&self) -> u32 {
        self.max_depth
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_lang() -> Arc<SubstitutionLanguage> {
        SubstitutionLanguage::new(Substitution::builtin_default())
    }

    fn set(words: &[&str]) -> BTreeSet<Word> {
        words.iter().map(|w| Word::parse(w).unwrap()).collect()
    }

    #[test]
    fn substitute_examples() {
        let s = Substitution::builtin_default();
        assert_eq!(s.substitute(&Word::parse("2").unwrap()).unwrap().to_string(), "212");
        assert_eq!(s.substitute(&Word::empty()).unwrap(), Word::empty());
        assert_eq!(
            s.substitute(&Word::parse("212").unwrap()).unwrap().to_string(),
            "21211212"
        );
    }

    #[test]
    fn iterate_examples() {
        let s = Substitution::builtin_default();
        assert_eq!(s.iterate(2, 2, 1 << 20).unwrap().to_string(), "21211212");
        assert_eq!(s.iterate(1, 3, 1 << 20).unwrap(), Word::ones(8));
        assert_eq!(
            s.iterate(2, 3, 1 << 20).unwrap().to_string(),
            format!("{}{}{}", "21211212", "1111", "21211212")
        );
        assert_eq!(s.iterate(2, 0, 1 << 20).unwrap().to_string(), "2");
    }

    #[test]
    fn iterate_length_follows_closed_form() {
        // |σ^n(2)| = (n+2)·2^(n-1) for the builtin system.
        let s = Substitution::builtin_default();
        for n in 1..=10u32 {
            let len = s.iterate(2, n, 1 << 20).unwrap().len();
            assert_eq!(len, (n as usize + 2) << (n - 1));
        }
    }

    #[test]
    fn iterate_cap_is_a_resource_error() {
        let s = Substitution::builtin_default();
        match s.iterate(2, 12, 1000) {
            Err(Error::Resource(_)) => {}
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_bad_substitutions() {
        let w = |s: &str| Word::parse(s).unwrap();
        // image of 1 not all ones
        assert!(Substitution::new(2, vec![(1, w("12")), (2, w("212"))], 2).is_err());
        // image of 1 too short
        assert!(Substitution::new(2, vec![(1, w("1")), (2, w("212"))], 2).is_err());
        // image of 2 ends with 1
        assert!(Substitution::new(2, vec![(1, w("11")), (2, w("21"))], 2).is_err());
        // seed image must start and end with seed
        assert!(Substitution::new(3, vec![(1, w("11")), (2, w("322")), (3, w("323"))], 2).is_err());
        // alphabet too small
        assert!(Substitution::new(1, vec![(1, w("11"))], 1).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let s = Substitution::builtin_default();
        let text = s.to_json();
        let back = Substitution::from_json(&text).unwrap();
        assert_eq!(back, s);
        let parsed = Substitution::from_json(
            r#"{"alphabet_size":2,"images":{"1":"11","2":"212"},"seed":2}"#,
        )
        .unwrap();
        assert_eq!(parsed, s);
    }

    #[test]
    fn occurrences_examples() {
        let w = |s: &str| Word::parse(s).unwrap();
        assert_eq!(occurrences(&w("11111"), &w("1111")), vec![1, 2]);
        assert_eq!(occurrences(&w("1121211"), &w("11")), vec![1, 6]);
        assert_eq!(occurrences(&w("21211212"), &w("212")), vec![1, 6]);
        assert_eq!(occurrences(&w("212"), &w("2121")), Vec::<usize>::new());
        assert_eq!(count_occurrences(&w("21211212"), &w("212")), 2);
    }

    #[test]
    fn factor_sets_at_small_lengths() {
        let lang = default_lang();
        assert_eq!(*lang.factors(1).unwrap(), set(&["1", "2"]));
        assert_eq!(*lang.factors(2).unwrap(), set(&["11", "12", "21"]));
        assert_eq!(
            *lang.factors(3).unwrap(),
            set(&["111", "112", "121", "211", "212"])
        );
        assert_eq!(*lang.factors(0).unwrap(), set(&[""]));
    }

    #[test]
    fn factor_closure_and_biextendability() {
        let lang = default_lang();
        let f5 = lang.factors(5).unwrap();
        for w in f5.iter() {
            for i in 1..=w.len() {
                for j in i..=w.len() {
                    let u = w.slice1(i, j);
                    assert!(lang.factors(u.len()).unwrap().contains(&u), "{u} not a factor");
                }
            }
        }
        // every length-3 factor is interior in some length-5 factor
        let f3 = lang.factors(3).unwrap();
        for u in f3.iter() {
            assert!(
                f5.iter().any(|w| w.slice1(2, 4) == *u),
                "{u} never interior"
            );
        }
    }

    #[test]
    fn all_one_words_are_factors() {
        let lang = default_lang();
        for m in 1..=12 {
            assert!(lang.factors(m).unwrap().contains(&Word::ones(m)));
        }
    }

    #[test]
    fn stabilization_depth_respects_floor() {
        let lang = default_lang();
        for len in [1usize, 2, 3, 5, 8] {
            let d = lang.stabilization_depth(len).unwrap();
            assert!(d >= ceil_log2(len) + 2, "len {len}: depth {d} below floor");
        }
    }

    #[test]
    fn word_weight_and_runs() {
        let w = Word::parse("1121211").unwrap();
        assert_eq!(w.weight(), 2);
        assert_eq!(w.one_runs(), vec![(0, 2), (3, 1), (5, 2)]);
        assert!(Word::ones(4).is_all_ones());
        assert!(!w.is_all_ones());
    }
}
