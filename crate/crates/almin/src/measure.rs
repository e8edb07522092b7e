//! Exact invariant Radon measures on the clopen algebra, Birkhoff sums and
//! the unique-ergodicity certificate, pushforwards along codes, and the
//! product-vs-diagonal measure pair.
//!
//! The measure of a cylinder `[w]` is the frequency of `w` relative to the
//! seed letter: occurrences of `w` in the padded word `1^|w| σ^n(seed) 1^|w|`
//! divided by occurrences of the seed letter in `σ^n(seed)`. For every word
//! that is not all 1s the padded count doubles exactly from depth to depth
//! once `2^n ≥ |w| − 1`, so the ratio is certified by three consecutive
//! identical rationals. All-1 cylinders carry the fixed point and have
//! infinite measure.

use crate::clopen::Clopen;
use crate::error::{Error, Result};
use crate::subshift::{MergedLanguage, SubscriptMap};
use crate::words::{ceil_log2, LanguageSource, Letter, SubstitutionLanguage, Word};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

/// A measure value: an exact nonnegative rational, or the distinguished
/// infinite value. Addition lets the infinite value absorb; no other
/// arithmetic mixes the two.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum MeasureValue {
    Finite(BigRational),
    Infinite,
}

impl MeasureValue {
    pub fn zero() -> Self {
        MeasureValue::Finite(BigRational::zero())
    }

    pub fn from_ratio(num: i64, den: i64) -> Self {
        MeasureValue::Finite(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, MeasureValue::Finite(_))
    }

    pub fn as_finite(&self) -> Result<&BigRational> {
        match self {
            MeasureValue::Finite(q) => Ok(q),
            MeasureValue::Infinite => Err(Error::Input(
                "operation requires a compact (finite-measure) set".into(),
            )),
        }
    }

    pub fn add(&self, other: &MeasureValue) -> MeasureValue {
        match (self, other) {
            (MeasureValue::Finite(a), MeasureValue::Finite(b)) => MeasureValue::Finite(a + b),
            _ => MeasureValue::Infinite,
        }
    }
}

impl fmt::Display for MeasureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureValue::Finite(q) => write!(f, "{q}"),
            MeasureValue::Infinite => write!(f, "INFINITE"),
        }
    }
}

impl Serialize for MeasureValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Parse "p/q" or "p" into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let parse_int = |t: &str| -> Result<BigInt> {
        t.trim()
            .parse::<BigInt>()
            .map_err(|_| Error::Input(format!("bad rational component {t:?}")))
    };
    match s.split_once('/') {
        Some((p, q)) => {
            let den = parse_int(q)?;
            if den.is_zero() {
                return Err(Error::Input("rational denominator is zero".into()));
            }
            Ok(BigRational::new(parse_int(p)?, den))
        }
        None => Ok(BigRational::from(parse_int(s)?)),
    }
}

// ---------------------------------------------------------------------------
// Occurrence counting in padded substitution iterates.
// ---------------------------------------------------------------------------

/// Summary of a long word sufficient to count occurrences of one fixed
/// pattern across concatenations: full count, boundary context of length
/// `|pattern| − 1` on both sides, and the length.
#[derive(Clone)]
struct Profile {
    cnt: u128,
    pre: Vec<Letter>,
    suf: Vec<Letter>,
    len: u128,
}

impl Profile {
    fn empty() -> Profile {
        Profile { cnt: 0, pre: Vec::new(), suf: Vec::new(), len: 0 }
    }

    fn of_letter(a: Letter, pattern: &[Letter]) -> Profile {
        Profile {
            cnt: (pattern.len() == 1 && pattern[0] == a) as u128,
            pre: if pattern.len() > 1 { vec![a] } else { Vec::new() },
            suf: if pattern.len() > 1 { vec![a] } else { Vec::new() },
            len: 1,
        }
    }

    fn of_ones(p: usize, pattern: &[Letter]) -> Profile {
        let q = pattern.len();
        let all_ones = pattern.iter().all(|&a| a == 1);
        Profile {
            cnt: if all_ones && p >= q { (p - q + 1) as u128 } else { 0 },
            pre: vec![1; p.min(q.saturating_sub(1))],
            suf: vec![1; p.min(q.saturating_sub(1))],
            len: p as u128,
        }
    }

    /// Append `b`, counting occurrences that cross the seam.
    fn append(&mut self, b: &Profile, pattern: &[Letter], fail: &[usize]) {
        if self.len == 0 {
            *self = b.clone();
            return;
        }
        if b.len == 0 {
            return;
        }
        let q = pattern.len();
        let a_tail = self.suf.len();
        if q >= 2 {
            let mut crossing = 0u128;
            let mut k = 0usize;
            for (i, &c) in self.suf.iter().chain(b.pre.iter()).enumerate() {
                while k > 0 && pattern[k] != c {
                    k = fail[k - 1];
                }
                if pattern[k] == c {
                    k += 1;
                }
                if k == q {
                    // 0-based end position i; start = i + 1 - q (0-based)
                    let start = i + 1 - q;
                    if start < a_tail && i >= a_tail {
                        crossing += 1;
                    }
                    k = fail[k - 1];
                }
            }
            self.cnt += b.cnt + crossing;
        } else {
            self.cnt += b.cnt;
        }
        let keep = q.saturating_sub(1);
        if self.pre.len() < keep {
            let need = keep - self.pre.len();
            self.pre.extend(b.pre.iter().take(need));
        }
        let mut suf: Vec<Letter> = if b.suf.len() >= keep {
            b.suf.clone()
        } else {
            let mut s = self.suf.clone();
            s.extend_from_slice(&b.suf);
            s
        };
        if suf.len() > keep {
            suf.drain(..suf.len() - keep);
        }
        self.suf = suf;
        self.len += b.len;
    }
}

fn kmp_fail(pattern: &[Letter]) -> Vec<usize> {
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

const RECURSION_DEPTH_CAP: u32 = 64;

/// Occurrences of `pattern` in `1^|pattern| σ^depth(seed) 1^|pattern|`,
/// computed by structural recursion without materializing the iterate.
pub fn padded_count_recursive(lang: &SubstitutionLanguage, pattern: &Word, depth: u32) -> Result<u128> {
    if pattern.is_empty() {
        return Err(Error::Input("pattern must be nonempty".into()));
    }
    if depth > RECURSION_DEPTH_CAP {
        return Err(Error::Resource(format!(
            "count recursion depth {depth} exceeds cap {RECURSION_DEPTH_CAP}"
        )));
    }
    let sub = lang.substitution();
    let fail = kmp_fail(pattern);
    let size = sub.alphabet_size as usize;
    let mut level: Vec<Profile> = (1..=size as u8)
        .map(|a| Profile::of_letter(a, pattern))
        .collect();
    for _ in 0..depth {
        let mut next = Vec::with_capacity(size);
        for a in 1..=size as u8 {
            let mut acc = Profile::empty();
            for &b in sub.image(a).iter() {
                acc.append(&level[b as usize - 1], pattern, &fail);
            }
            next.push(acc);
        }
        level = next;
    }
    let mut acc = Profile::of_ones(pattern.len(), pattern);
    acc.append(&level[sub.seed as usize - 1], pattern, &fail);
    acc.append(&Profile::of_ones(pattern.len(), pattern), pattern, &fail);
    Ok(acc.cnt)
}

/// Same count by scanning the materialized padded word; the cross-checking
/// oracle for the recursion.
pub fn padded_count_naive(lang: &dyn LanguageSource, pattern: &Word, depth: u32) -> Result<u128> {
    if pattern.is_empty() {
        return Err(Error::Input("pattern must be nonempty".into()));
    }
    let padded = lang.scan_word(depth, pattern.len())?;
    Ok(crate::words::count_occurrences(&padded, pattern))
}

/// One-pass counts of every word of a fixed length in the padded scan word.
pub fn multi_window_counts(
    lang: &dyn LanguageSource,
    words: &BTreeSet<Word>,
    depth: u32,
) -> Result<BTreeMap<Word, u128>> {
    let len = match words.iter().next() {
        Some(w) => w.len(),
        None => return Ok(BTreeMap::new()),
    };
    if words.iter().any(|w| w.len() != len) || len == 0 {
        return Err(Error::Input("multi count needs equal nonzero lengths".into()));
    }
    let padded = lang.scan_word(depth, len)?;
    let index: HashMap<&[Letter], &Word> =
        words.iter().map(|w| (&w.0[..], w)).collect();
    let mut counts: BTreeMap<Word, u128> = words.iter().map(|w| (w.clone(), 0)).collect();
    for win in padded.windows(len) {
        if let Some(w) = index.get(win) {
            *counts.get_mut(*w).expect("initialized") += 1;
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Invariant measures.
// ---------------------------------------------------------------------------

/// A shift-invariant Radon measure evaluated exactly on cylinders and on
/// clopen sets in canonical form. Finite on compact opens, infinite exactly
/// on sets containing a fixed-point neighborhood.
pub trait InvariantMeasure: Send + Sync {
    fn language(&self) -> Arc<dyn LanguageSource>;
    /// Measure of the cylinder `[.w]` (window placement is irrelevant by
    /// shift invariance).
    fn cylinder(&self, w: &Word) -> Result<MeasureValue>;
    fn clopen(&self, e: &Clopen) -> Result<MeasureValue>;
}

/// The invariant measure of a substitution subshift, normalized so that the
/// seed cylinder has measure 1.
pub struct CylinderMeasure {
    lang: Arc<SubstitutionLanguage>,
    memo: RwLock<BTreeMap<Word, BigRational>>,
}

impl CylinderMeasure {
    pub fn new(lang: Arc<SubstitutionLanguage>) -> Arc<Self> {
        Arc::new(CylinderMeasure { lang, memo: RwLock::new(BTreeMap::new()) })
    }

    pub fn substitution_language(&self) -> &Arc<SubstitutionLanguage> {
        &self.lang
    }

    /// Exact frequency of a word that is not all 1s; 0 when not a factor.
    fn finite_cylinder(&self, w: &Word) -> Result<BigRational> {
        debug_assert!(!w.is_all_ones());
        if let Some(q) = self.memo.read().unwrap().get(w) {
            return Ok(q.clone());
        }
        if !self.lang.contains(w)? {
            return Ok(BigRational::zero());
        }
        let start = ceil_log2(w.len().max(2) - 1).max(1);
        let mut trail: Vec<BigRational> = Vec::new();
        let mut depth = start;
        let value = loop {
            if depth > RECURSION_DEPTH_CAP {
                let tail: Vec<String> =
                    trail.iter().rev().take(4).map(|q| q.to_string()).collect();
                return Err(Error::Diagnostic(format!(
                    "frequency of {w} did not stabilize; last ratios {tail:?}"
                )));
            }
            let cnt = padded_count_recursive(&self.lang, w, depth)?;
            let weight = seed_count_recursive(&self.lang, depth);
            let ratio = BigRational::new(BigInt::from(cnt), BigInt::from(weight));
            trail.push(ratio);
            let n = trail.len();
            if n >= 3 && trail[n - 1] == trail[n - 2] && trail[n - 2] == trail[n - 3] {
                break trail[n - 1].clone();
            }
            depth += 1;
        };
        self.memo
            .write()
            .unwrap()
            .entry(w.clone())
            .or_insert(value.clone());
        Ok(value)
    }

    /// Measure of a clopen set given by words of a common length: infinite if
    /// the all-1 word is allowed, otherwise the exact sum of cylinder
    /// frequencies, evaluated in one scan per depth when the set is large.
    fn clopen_value(&self, e: &Clopen) -> Result<MeasureValue> {
        if e.is_empty_set() {
            return Ok(MeasureValue::zero());
        }
        if e.contains_all_ones() {
            return Ok(MeasureValue::Infinite);
        }
        let missing: BTreeSet<Word> = {
            let memo = self.memo.read().unwrap();
            e.words.iter().filter(|w| !memo.contains_key(*w)).cloned().collect()
        };
        if missing.len() > 8 && e.window_len() > 4 {
            self.fill_by_scan(&missing)?;
        }
        let mut total = BigRational::zero();
        for w in &e.words {
            total += self.finite_cylinder(w)?;
        }
        Ok(MeasureValue::Finite(total))
    }

    /// Stabilize the frequencies of many same-length words with one scan per
    /// depth and memoize them all.
    fn fill_by_scan(&self, words: &BTreeSet<Word>) -> Result<()> {
        let len = words.iter().next().expect("nonempty").len();
        let start = ceil_log2(len.max(2) - 1).max(1);
        if start + 2 > self.lang.max_depth() {
            return Ok(()); // fall back to per-word recursion
        }
        let mut trail: Vec<BTreeMap<Word, BigRational>> = Vec::new();
        let mut depth = start;
        loop {
            if depth > self.lang.max_depth() {
                return Err(Error::Diagnostic(format!(
                    "clopen frequencies at window {len} did not stabilize by depth {}",
                    self.lang.max_depth()
                )));
            }
            let counts = multi_window_counts(self.lang.as_ref(), words, depth)?;
            let weight = self.lang.scan_weight(depth)?;
            let ratios: BTreeMap<Word, BigRational> = counts
                .into_iter()
                .map(|(w, c)| (w, BigRational::new(BigInt::from(c), BigInt::from(weight))))
                .collect();
            trail.push(ratios);
            let n = trail.len();
            if n >= 3 && trail[n - 1] == trail[n - 2] && trail[n - 2] == trail[n - 3] {
                let stable = trail.pop().expect("nonempty");
                let mut memo = self.memo.write().unwrap();
                for (w, q) in stable {
                    memo.entry(w).or_insert(q);
                }
                return Ok(());
            }
            depth += 1;
        }
    }
}

/// Occurrences of the seed letter in `σ^depth(seed)` by the letter-count
/// recursion, valid at any depth without materializing the iterate.
pub fn seed_count_recursive(lang: &SubstitutionLanguage, depth: u32) -> u128 {
    let sub = lang.substitution();
    let size = sub.alphabet_size as usize;
    let mut counts: Vec<u128> = (1..=size as u8)
        .map(|a| (a == sub.seed) as u128)
        .collect();
    for _ in 0..depth {
        let next: Vec<u128> = (1..=size as u8)
            .map(|a| sub.image(a).iter().map(|&b| counts[b as usize - 1]).sum())
            .collect();
        counts = next;
    }
    counts[sub.seed as usize - 1]
}

impl InvariantMeasure for CylinderMeasure {
    fn language(&self) -> Arc<dyn LanguageSource> {
        self.lang.clone()
    }

    fn cylinder(&self, w: &Word) -> Result<MeasureValue> {
        if w.is_all_ones() {
            // includes the empty word: the whole space has infinite measure
            return Ok(MeasureValue::Infinite);
        }
        Ok(MeasureValue::Finite(self.finite_cylinder(w)?))
    }

    fn clopen(&self, e: &Clopen) -> Result<MeasureValue> {
        self.clopen_value(e)
    }
}

/// Pushforward of a measure along a surjective letter code:
/// `ν([u]) = Σ { μ([w]) : f(w) = u, w in the source language }`.
pub struct PushforwardMeasure {
    base: Arc<dyn InvariantMeasure>,
    image: Arc<MergedLanguage>,
}

impl PushforwardMeasure {
    pub fn new(base: Arc<dyn InvariantMeasure>, code: SubscriptMap) -> Result<Arc<Self>> {
        let image = MergedLanguage::new(base.language(), code)?;
        Ok(Arc::new(PushforwardMeasure { base, image }))
    }

    pub fn image_language(&self) -> &Arc<MergedLanguage> {
        &self.image
    }
}

impl InvariantMeasure for PushforwardMeasure {
    fn language(&self) -> Arc<dyn LanguageSource> {
        self.image.clone()
    }

    fn cylinder(&self, u: &Word) -> Result<MeasureValue> {
        if u.is_all_ones() {
            return Ok(MeasureValue::Infinite);
        }
        let code = self.image.code();
        let mut total = BigRational::zero();
        for w in self.base.language().factors(u.len())?.iter() {
            if code.apply_word(w)? == *u {
                total += self.base.cylinder(w)?.as_finite()?.clone();
            }
        }
        Ok(MeasureValue::Finite(total))
    }

    fn clopen(&self, e: &Clopen) -> Result<MeasureValue> {
        if e.is_empty_set() {
            return Ok(MeasureValue::zero());
        }
        if e.contains_all_ones() {
            return Ok(MeasureValue::Infinite);
        }
        let mut total = BigRational::zero();
        for u in &e.words {
            total += self.cylinder(u)?.as_finite()?.clone();
        }
        Ok(MeasureValue::Finite(total))
    }
}

/// Verify `μ([w]) = Σ_a μ([wa]) = Σ_a μ([aw])` for every factor of length up
/// to `max_len`, in the measure-value sense (infinite sums absorb).
pub fn kolmogorov_consistent(m: &dyn InvariantMeasure, max_len: usize) -> Result<()> {
    let lang = m.language();
    for len in 1..=max_len {
        for w in lang.factors(len)?.iter() {
            let mu = m.cylinder(w)?;
            let mut right = MeasureValue::zero();
            let mut left = MeasureValue::zero();
            for a in 1..=lang.alphabet_size() {
                let wa = w.concat(&Word::single(a));
                if lang.contains(&wa)? {
                    right = right.add(&m.cylinder(&wa)?);
                }
                let aw = Word::single(a).concat(w);
                if lang.contains(&aw)? {
                    left = left.add(&m.cylinder(&aw)?);
                }
            }
            if mu != right || mu != left {
                return Err(Error::Certification(format!(
                    "consistency fails at {w}: μ={mu}, right sum={right}, left sum={left}"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Birkhoff sums and the unique-ergodicity certificate.
// ---------------------------------------------------------------------------

#[derive(Serialize, Debug)]
pub struct BirkhoffReport {
    /// Exact ratio μ(A)/μ(K); the empirical total ratio must equal it.
    pub constant: String,
    pub requested_eps: String,
    /// Least m such that every scanned pair with S_n 1_K ≥ m deviates ≤ ε.
    pub threshold_m: Option<u64>,
    pub max_hits_seen: u64,
    pub pairs_scanned: u64,
    pub depth: u32,
    pub n_max: u32,
    /// hits level → worst |S_n1_A/S_n1_K − c| at that level, as "p/q".
    pub max_dev_by_hits: Vec<(u64, String)>,
    pub pass: bool,
}

/// Scan all windows of the padded iterate at `depth`, forming two-sided sums
/// `S_n f = Σ_{i=-n}^{n-1} f∘S^i` for n ≤ n_max, and certify that ratios
/// S_n1_A/S_n1_K approach the exact constant c = μ(A)/μ(K).
pub fn birkhoff_certificate(
    meas: &dyn InvariantMeasure,
    k_set: &Clopen,
    a_set: &Clopen,
    depth: u32,
    n_max: u32,
    eps: &BigRational,
) -> Result<BirkhoffReport> {
    let mu_k = meas.clopen(k_set)?;
    let mu_a = meas.clopen(a_set)?;
    let (mu_k, mu_a) = (mu_k.as_finite()?.clone(), mu_a.as_finite()?.clone());
    if mu_k.is_zero() {
        return Err(Error::Input("reference set K must be nonempty".into()));
    }
    let c = &mu_a / &mu_k;

    let lang = meas.language();
    let span = k_set
        .hi
        .abs()
        .max(k_set.lo.abs())
        .max(a_set.hi.abs())
        .max(a_set.lo.abs()) as usize;
    let pad = span + n_max as usize + 2;
    let padded = lang.scan_word(depth, pad)?;
    let ind_k = indicator(&padded, k_set);
    let ind_a = indicator(&padded, a_set);

    // exact-constant check on total counts
    let tot_k: u64 = ind_k.iter().map(|&b| b as u64).sum();
    let tot_a: u64 = ind_a.iter().map(|&b| b as u64).sum();
    let emp = BigRational::new(BigInt::from(tot_a), BigInt::from(tot_k));
    if emp != c {
        return Err(Error::Certification(format!(
            "empirical constant {emp} differs from exact μ(A)/μ(K) = {c}"
        )));
    }

    let pref_k = prefix_sums(&ind_k);
    let pref_a = prefix_sums(&ind_a);
    let m = padded.len();

    // c = p/q and ε = e1/e2 with small numerators: compare with integers
    let p = c.numer().clone();
    let q = c.denom().clone();
    let (p_i, q_i) = (big_to_i128(&p)?, big_to_i128(&q)?);
    let (e1, e2) = (big_to_i128(eps.numer())?, big_to_i128(eps.denom())?);
    if e1 < 0 {
        return Err(Error::Input("ε must be nonnegative".into()));
    }

    let mut dev_by_hits: BTreeMap<u64, (i128, i128)> = BTreeMap::new();
    let mut pairs = 0u64;
    let mut max_hits = 0u64;
    for n in 1..=n_max as usize {
        for t in 1..=m {
            // window covers positions [t−n, t+n−1] clamped to the scan word;
            // beyond it the ambient letters are all 1s, matching neither set
            let a = t.saturating_sub(n + 1);
            let b = (t + n - 1).min(m);
            let sk = (pref_k[b] - pref_k[a]) as i128;
            if sk == 0 {
                continue;
            }
            let sa = (pref_a[b] - pref_a[a]) as i128;
            pairs += 1;
            max_hits = max_hits.max(sk as u64);
            // dev = |sa/sk − p/q| = |sa·q − p·sk| / (sk·q)
            let num = (sa * q_i - p_i * sk).abs();
            let den = sk * q_i;
            let entry = dev_by_hits.entry(sk as u64).or_insert((0, 1));
            if num * entry.1 > entry.0 * den {
                *entry = (num, den);
            }
        }
    }

    // threshold: least m with no violation at hits ≥ m
    let mut threshold = 1u64;
    for (&hits, &(num, den)) in &dev_by_hits {
        if num * e2 > e1 * den {
            threshold = threshold.max(hits + 1);
        }
    }
    let achievable = threshold <= max_hits;
    Ok(BirkhoffReport {
        constant: c.to_string(),
        requested_eps: eps.to_string(),
        threshold_m: if achievable { Some(threshold) } else { None },
        max_hits_seen: max_hits,
        pairs_scanned: pairs,
        depth,
        n_max,
        max_dev_by_hits: dev_by_hits
            .into_iter()
            .map(|(h, (num, den))| {
                (h, BigRational::new(BigInt::from(num), BigInt::from(den)).to_string())
            })
            .collect(),
        pass: achievable,
    })
}

pub(crate) fn big_to_i128(x: &BigInt) -> Result<i128> {
    i128::try_from(x.clone())
        .map_err(|_| Error::Resource("rational component exceeds 128-bit range".into()))
}

/// 0/1 membership of each position's window in the set; windows that leave
/// the scan word never match (the virtual context is all 1s and the sets are
/// compact).
fn indicator(padded: &Word, set: &Clopen) -> Vec<u8> {
    let m = padded.len() as i64;
    let mut ind = vec![0u8; padded.len()];
    if set.is_empty_set() {
        return ind;
    }
    debug_assert!(!set.contains_all_ones());
    let len = set.window_len();
    for t in 1..=m {
        let start = t + set.lo;
        let end = t + set.hi;
        if start < 1 || end > m {
            continue;
        }
        let w = &padded[(start - 1) as usize..end as usize];
        if set.words.contains(&Word(w.to_vec())) {
            ind[(t - 1) as usize] = 1;
        }
    }
    debug_assert_eq!(len, (set.hi - set.lo + 1) as usize);
    ind
}

fn prefix_sums(ind: &[u8]) -> Vec<i64> {
    let mut pref = vec![0i64; ind.len() + 1];
    for (i, &b) in ind.iter().enumerate() {
        pref[i + 1] = pref[i] + b as i64;
    }
    pref
}

// ---------------------------------------------------------------------------
// Product vs diagonal measures.
// ---------------------------------------------------------------------------

/// `(μ(A)·μ(B), μ(A∩B))`: the product rectangle measure and the diagonal
/// measure of the rectangle `A × B`. Both are invariant; they are not
/// proportional, which is the two-measure witness on the product system.
pub fn product_vs_diagonal(
    meas: &dyn InvariantMeasure,
    a: &Clopen,
    b: &Clopen,
) -> Result<(BigRational, BigRational)> {
    let mu_a = meas.clopen(a)?.as_finite()?.clone();
    let mu_b = meas.clopen(b)?.as_finite()?.clone();
    let inter = a.intersect(meas.language().as_ref(), b)?;
    let diag = meas.clopen(&inter)?.as_finite()?.clone();
    Ok((mu_a * mu_b, diag))
}

/// One rectangle `A × B` with its two measure values.
#[derive(Serialize, Debug)]
pub struct RectangleWitness {
    pub a: String,
    pub a_offset: i64,
    pub b: String,
    pub b_offset: i64,
    pub product: String,
    pub diagonal: String,
}

/// Exhaustive two-measure evidence on the product system.
#[derive(Serialize, Debug)]
pub struct ProductDemoReport {
    pub depth_cap: usize,
    pub rectangles_checked: u64,
    /// Both measures agree with their shift preimages on every rectangle.
    pub invariance_exact: bool,
    /// A rectangle where the two measures differ, and one where the diagonal
    /// vanishes while the product does not.
    pub witnesses: Vec<RectangleWitness>,
    pub non_proportional: bool,
    pub pass: bool,
}

/// Compare the product measure `μ×μ` with the diagonal measure
/// `A×B ↦ μ(A∩B)` on all rectangles of cylinder words up to `depth_cap`:
/// both are shift-invariant exactly, yet no scalar relates them.
pub fn product_demo(meas: &dyn InvariantMeasure, depth_cap: usize) -> Result<ProductDemoReport> {
    let lang = meas.language();
    let mut cylinders: Vec<(Word, Clopen)> = Vec::new();
    for len in 1..=depth_cap {
        for w in lang.factors(len)?.iter() {
            if w.is_all_ones() {
                continue;
            }
            cylinders.push((w.clone(), Clopen::cylinder(lang.as_ref(), 0, w)?));
        }
    }
    let mut checked = 0u64;
    let mut invariant = true;
    let mut values: Vec<(BigRational, BigRational)> = Vec::new();
    for (_, a) in &cylinders {
        for (_, b) in &cylinders {
            let (p, d) = product_vs_diagonal(meas, a, b)?;
            let (ps, ds) =
                product_vs_diagonal(meas, &a.shift_preimage(1), &b.shift_preimage(1))?;
            invariant &= p == ps && d == ds;
            values.push((p, d));
            checked += 1;
        }
    }
    // non-proportionality: two value pairs with crossed products differing
    let mut non_proportional = false;
    'outer: for (i, (p1, d1)) in values.iter().enumerate() {
        for (p2, d2) in values.iter().skip(i + 1) {
            if p1 * d2 != p2 * d1 {
                non_proportional = true;
                break 'outer;
            }
        }
    }
    let mut witnesses = Vec::new();
    let mut witness = |a: &str, ao: i64, b: &str, bo: i64| -> Result<()> {
        let wa = Word::parse(a)?;
        let wb = Word::parse(b)?;
        let ca = Clopen::cylinder(lang.as_ref(), ao, &wa)?;
        let cb = Clopen::cylinder(lang.as_ref(), bo, &wb)?;
        let (p, d) = product_vs_diagonal(meas, &ca, &cb)?;
        witnesses.push(RectangleWitness {
            a: a.into(),
            a_offset: ao,
            b: b.into(),
            b_offset: bo,
            product: p.to_string(),
            diagonal: d.to_string(),
        });
        Ok(())
    };
    witness("212", 0, "212", 0)?;
    witness("212", 0, "212", 1)?;
    let pass = invariant && non_proportional;
    Ok(ProductDemoReport {
        depth_cap,
        rectangles_checked: checked,
        invariance_exact: invariant,
        witnesses,
        non_proportional,
        pass,
    })
}

/// The certificate for one reference cylinder in the ergodicity suite.
#[derive(Serialize, Debug)]
pub struct SetCertificate {
    pub word: String,
    pub constant: String,
    pub threshold_m: Option<u64>,
    pub max_hits_seen: u64,
    pub pass: bool,
}

/// Birkhoff evidence over every finite-mass cylinder up to a depth cap.
#[derive(Serialize, Debug)]
pub struct ErgodicityCertificate {
    pub k_word: String,
    pub depth: u32,
    pub n_max: u32,
    pub requested_eps: String,
    pub sets: Vec<SetCertificate>,
    pub pass: bool,
}

/// For every cylinder `A = [w]` with `|w| ≤ depth_cap`, certify that the
/// Birkhoff ratios `S_n 1_A / S_n 1_K` hit the exact constant `μ(A)/μ(K)` in
/// total and stay within ε beyond a finite visit threshold.
pub fn unique_ergodicity_suite(
    meas: &dyn InvariantMeasure,
    k_word: &Word,
    depth_cap: usize,
    depth: u32,
    n_max: u32,
    eps: &BigRational,
) -> Result<ErgodicityCertificate> {
    let lang = meas.language();
    let k_set = Clopen::cylinder(lang.as_ref(), 0, k_word)?;
    if k_set.is_empty_set() {
        return Err(Error::Input(format!("reference word {k_word} is not in the language")));
    }
    let mut sets = Vec::new();
    let mut pass = true;
    for len in 1..=depth_cap {
        for w in lang.factors(len)?.iter() {
            if w.is_all_ones() {
                continue;
            }
            let a_set = Clopen::cylinder(lang.as_ref(), 0, w)?;
            let rep = birkhoff_certificate(meas, &k_set, &a_set, depth, n_max, eps)?;
            pass &= rep.pass;
            sets.push(SetCertificate {
                word: w.to_string(),
                constant: rep.constant,
                threshold_m: rep.threshold_m,
                max_hits_seen: rep.max_hits_seen,
                pass: rep.pass,
            });
        }
    }
    Ok(ErgodicityCertificate {
        k_word: k_word.to_string(),
        depth,
        n_max,
        requested_eps: eps.to_string(),
        sets,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::Substitution;

    fn setup() -> (Arc<SubstitutionLanguage>, Arc<CylinderMeasure>) {
        let lang = SubstitutionLanguage::new(Substitution::builtin_default());
        let meas = CylinderMeasure::new(lang.clone());
        (lang, meas)
    }

    fn w(s: &str) -> Word {
        Word::parse(s).unwrap()
    }

    #[test]
    fn spot_frequencies() {
        let (_, meas) = setup();
        assert_eq!(meas.cylinder(&w("2")).unwrap(), MeasureValue::from_ratio(1, 1));
        assert_eq!(meas.cylinder(&w("212")).unwrap(), MeasureValue::from_ratio(1, 2));
        assert_eq!(meas.cylinder(&w("2112")).unwrap(), MeasureValue::from_ratio(1, 4));
        assert_eq!(meas.cylinder(&w("12121")).unwrap(), MeasureValue::from_ratio(1, 2));
        assert_eq!(meas.cylinder(&w("1121211")).unwrap(), MeasureValue::from_ratio(1, 2));
        assert_eq!(meas.cylinder(&w("22")).unwrap(), MeasureValue::zero());
        assert_eq!(meas.cylinder(&w("11211")).unwrap(), MeasureValue::zero());
    }

    #[test]
    fn all_one_cylinders_are_infinite() {
        let (lang, meas) = setup();
        assert_eq!(meas.cylinder(&Word::ones(3)).unwrap(), MeasureValue::Infinite);
        assert_eq!(meas.cylinder(&Word::empty()).unwrap(), MeasureValue::Infinite);
        let co_seed = Clopen::cylinder(lang.as_ref(), 0, &w("2"))
            .unwrap()
            .complement(lang.as_ref())
            .unwrap();
        assert_eq!(meas.clopen(&co_seed).unwrap(), MeasureValue::Infinite);
    }

    #[test]
    fn recursion_matches_naive_scan() {
        let (lang, _) = setup();
        for len in 1..=5usize {
            for pat in lang.factors(len).unwrap().iter() {
                for depth in 3..=8u32 {
                    assert_eq!(
                        padded_count_recursive(&lang, pat, depth).unwrap(),
                        padded_count_naive(lang.as_ref(), pat, depth).unwrap(),
                        "pattern {pat} depth {depth}"
                    );
                }
            }
        }
        // longer patterns: slices of a deep iterate
        let core = lang.core(8).unwrap();
        for (start, len) in [(0usize, 23usize), (100, 40), (511, 37), (1000, 61)] {
            let pat = Word(core[start..start + len].to_vec());
            for depth in 7..=10u32 {
                assert_eq!(
                    padded_count_recursive(&lang, &pat, depth).unwrap(),
                    padded_count_naive(lang.as_ref(), &pat, depth).unwrap(),
                    "slice at {start} depth {depth}"
                );
            }
        }
    }

    #[test]
    fn multi_scan_matches_per_word() {
        let (lang, _) = setup();
        let words = lang.factors(6).unwrap();
        for depth in 6..=8u32 {
            let multi = multi_window_counts(lang.as_ref(), &words, depth).unwrap();
            for word in words.iter() {
                assert_eq!(
                    multi[word],
                    padded_count_naive(lang.as_ref(), word, depth).unwrap()
                );
            }
        }
    }

    #[test]
    fn additivity_on_sibling_union() {
        let (lang, meas) = setup();
        let u = Clopen::cylinder(lang.as_ref(), 0, &w("212"))
            .unwrap()
            .union(lang.as_ref(), &Clopen::cylinder(lang.as_ref(), 0, &w("211")).unwrap())
            .unwrap();
        assert_eq!(meas.clopen(&u).unwrap(), MeasureValue::from_ratio(1, 1));
    }

    #[test]
    fn clopen_scan_route_matches_cylinder_route() {
        let (lang, _) = setup();
        // two independent measure instances so the memo cannot leak between
        // routes; force one through the multi-word scan
        let meas_scan = CylinderMeasure::new(lang.clone());
        let meas_word = CylinderMeasure::new(lang.clone());
        let words: BTreeSet<Word> = lang
            .factors(7)
            .unwrap()
            .iter()
            .filter(|u| !u.is_all_ones())
            .cloned()
            .collect();
        let e = Clopen::from_words(lang.as_ref(), 0, 6, words).unwrap();
        let by_scan = meas_scan.clopen(&e).unwrap();
        let mut total = BigRational::zero();
        for word in &e.words {
            total += meas_word.cylinder(word).unwrap().as_finite().unwrap().clone();
        }
        assert_eq!(by_scan, MeasureValue::Finite(total));
    }

    #[test]
    fn consistency_up_to_length_six() {
        let (_, meas) = setup();
        kolmogorov_consistent(meas.as_ref(), 6).unwrap();
    }

    #[test]
    fn shift_invariance_of_clopen_measure() {
        let (lang, meas) = setup();
        let e = Clopen::cylinder(lang.as_ref(), 0, &w("212")).unwrap();
        for j in [-3i64, -1, 1, 5] {
            assert_eq!(
                meas.clopen(&e.shift_preimage(j)).unwrap(),
                meas.clopen(&e).unwrap()
            );
        }
    }

    #[test]
    fn birkhoff_seed_versus_block() {
        let (lang, meas) = setup();
        let k = Clopen::cylinder(lang.as_ref(), 0, &w("2")).unwrap();
        let a = Clopen::cylinder(lang.as_ref(), 0, &w("212")).unwrap();
        let report =
            birkhoff_certificate(meas.as_ref(), &k, &a, 10, 64, &rational(1, 8)).unwrap();
        assert_eq!(report.constant, "1/2");
        assert!(report.pass);
        assert!(report.threshold_m.is_some());

        // A = K: ratios identically 1
        let same = birkhoff_certificate(meas.as_ref(), &k, &k, 8, 32, &rational(1, 16)).unwrap();
        assert_eq!(same.constant, "1");
        assert_eq!(same.threshold_m, Some(1));

        // empty A: constant 0, no deviation
        let empty =
            birkhoff_certificate(meas.as_ref(), &k, &Clopen::empty(), 8, 32, &rational(1, 16))
                .unwrap();
        assert_eq!(empty.constant, "0");
        assert_eq!(empty.threshold_m, Some(1));
    }

    #[test]
    fn birkhoff_rejects_infinite_sets() {
        let (lang, meas) = setup();
        let k = Clopen::cylinder(lang.as_ref(), 0, &w("2")).unwrap();
        let infinite = k.complement(lang.as_ref()).unwrap();
        assert!(birkhoff_certificate(meas.as_ref(), &infinite, &k, 8, 16, &rational(1, 8)).is_err());
    }

    #[test]
    fn pushforward_along_identity_is_identity() {
        let (_, meas) = setup();
        let push =
            PushforwardMeasure::new(meas.clone(), SubscriptMap::identity(2)).unwrap();
        for word in ["2", "212", "2112", "12121"] {
            assert_eq!(push.cylinder(&w(word)).unwrap(), meas.cylinder(&w(word)).unwrap());
        }
        kolmogorov_consistent(push.as_ref(), 4).unwrap();
    }

    #[test]
    fn product_and_diagonal_values() {
        let (lang, meas) = setup();
        let c212 = Clopen::cylinder(lang.as_ref(), 0, &w("212")).unwrap();
        let c211 = Clopen::cylinder(lang.as_ref(), 0, &w("211")).unwrap();
        let anchor = Clopen::cylinder(lang.as_ref(), 0, &w("2")).unwrap();

        let (p1, d1) = product_vs_diagonal(meas.as_ref(), &c212, &c212).unwrap();
        assert_eq!((p1, d1), (rational(1, 4), rational(1, 2)));

        let (p2, d2) = product_vs_diagonal(meas.as_ref(), &c212, &c211).unwrap();
        assert_eq!((p2, d2), (rational(1, 4), rational(0, 1)));

        let (p3, d3) = product_vs_diagonal(meas.as_ref(), &anchor, &anchor).unwrap();
        assert_eq!((p3, d3), (rational(1, 1), rational(1, 1)));

        // non-proportionality witness
        let (pa, da) = product_vs_diagonal(meas.as_ref(), &c212, &c212).unwrap();
        let (pb, db) = product_vs_diagonal(meas.as_ref(), &c212, &c211).unwrap();
        assert_ne!(pa * db, pb * da);
    }

    #[test]
    fn parse_rational_forms() {
        assert_eq!(parse_rational("1/2").unwrap(), rational(1, 2));
        assert_eq!(parse_rational("3").unwrap(), rational(3, 1));
        assert_eq!(parse_rational("2/4").unwrap(), rational(1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }
}
