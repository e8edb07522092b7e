//! Compact open and clopen subsets of the subshift in canonical form: a
//! coordinate window `[lo, hi]` (inclusive) together with the set of allowed
//! window words. Equality, inclusion and Boolean operations are decided by
//! aligning windows; normalization shrinks to the minimal window.

use crate::error::{Error, Result};
use crate::words::{LanguageSource, Word};
use serde::Serialize;
use std::collections::BTreeSet;

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Clopen {
    pub lo: i64,
    pub hi: i64,
    pub words: BTreeSet<Word>,
}

impl Clopen {
    pub fn empty() -> Clopen {
        Clopen { lo: 0, hi: 0, words: BTreeSet::new() }
    }

    /// The whole space, represented at the length-1 window.
    pub fn whole(lang: &dyn LanguageSource) -> Result<Clopen> {
        Ok(Clopen { lo: 0, hi: 0, words: (*lang.factors(1)?).clone() })
    }

    /// The cylinder fixing `word` on `[lo, lo+|word|-1]`.
    pub fn cylinder(lang: &dyn LanguageSource, lo: i64, word: &Word) -> Result<Clopen> {
        if word.is_empty() {
            return Err(Error::Input("cylinder word must be nonempty".into()));
        }
        if !lang.contains(word)? {
            return Ok(Clopen::empty());
        }
        let mut words = BTreeSet::new();
        words.insert(word.clone());
        Ok(Clopen { lo, hi: lo + word.len() as i64 - 1, words })
    }

    pub fn from_words(
        lang: &dyn LanguageSource,
        lo: i64,
        hi: i64,
        words: BTreeSet<Word>,
    ) -> Result<Clopen> {
        if hi < lo {
            return Err(Error::Input(format!("bad window [{lo}, {hi}]")));
        }
        let len = (hi - lo + 1) as usize;
        let allowed = lang.factors(len)?;
        for w in &words {
            if w.len() != len {
                return Err(Error::Input(format!(
                    "word {w} has length {}, window needs {len}",
                    w.len()
                )));
            }
            if !allowed.contains(w) {
                return Err(Error::Input(format!("word {w} is not in the language")));
            }
        }
        if words.is_empty() {
            return Ok(Clopen::empty());
        }
        Ok(Clopen { lo, hi, words })
    }

    pub fn window_len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty_set(&self) -> bool {
        self.words.is_empty()
    }

    /// True iff the set contains the fixed point's neighborhood at this
    /// window, i.e. the all-1 window word is allowed. Exactly the sets of
    /// infinite measure.
    pub fn contains_all_ones(&self) -> bool {
        !self.words.is_empty() && self.words.contains(&Word::ones(self.window_len()))
    }

    /// `S^{-j}` applied to the set: the preimage under the j-fold shift.
    pub fn shift_preimage(&self, j: i64) -> Clopen {
        if self.words.is_empty() {
            return Clopen::empty();
        }
        Clopen { lo: self.lo + j, hi: self.hi + j, words: self.words.clone() }
    }

    /// Re-express on the larger window `[lo, hi] ⊇ [self.lo, self.hi]` by
    /// listing all language words extending the allowed ones.
    pub fn extend_to(&self, lang: &dyn LanguageSource, lo: i64, hi: i64) -> Result<Clopen> {
        if self.words.is_empty() {
            return Ok(Clopen { lo, hi, words: BTreeSet::new() });
        }
        if lo > self.lo || hi < self.hi {
            return Err(Error::Input(format!(
                "window [{lo}, {hi}] does not contain [{}, {}]",
                self.lo, self.hi
            )));
        }
        if lo == self.lo && hi == self.hi {
            return Ok(self.clone());
        }
        let len = (hi - lo + 1) as usize;
        let off = (self.lo - lo) as usize;
        let inner = self.window_len();
        let mut words = BTreeSet::new();
        for w in lang.factors(len)?.iter() {
            if self.words.contains(&Word(w[off..off + inner].to_vec())) {
                words.insert(w.clone());
            }
        }
        Ok(Clopen { lo, hi, words })
    }

    fn aligned(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<(Clopen, Clopen)> {
        if self.is_empty_set() && other.is_empty_set() {
            return Ok((Clopen::empty(), Clopen::empty()));
        }
        if self.is_empty_set() {
            return Ok((
                Clopen { lo: other.lo, hi: other.hi, words: BTreeSet::new() },
                other.clone(),
            ));
        }
        if other.is_empty_set() {
            return Ok((
                self.clone(),
                Clopen { lo: self.lo, hi: self.hi, words: BTreeSet::new() },
            ));
        }
        let lo = self.lo.min(other.lo);
        let hi = self.hi.max(other.hi);
        Ok((self.extend_to(lang, lo, hi)?, other.extend_to(lang, lo, hi)?))
    }

    pub fn union(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<Clopen> {
        let (a, b) = self.aligned(lang, other)?;
        let words: BTreeSet<Word> = a.words.union(&b.words).cloned().collect();
        if words.is_empty() {
            return Ok(Clopen::empty());
        }
        Ok(Clopen { lo: a.lo, hi: a.hi, words })
    }

    pub fn intersect(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<Clopen> {
        let (a, b) = self.aligned(lang, other)?;
        let words: BTreeSet<Word> = a.words.intersection(&b.words).cloned().collect();
        if words.is_empty() {
            return Ok(Clopen::empty());
        }
        Ok(Clopen { lo: a.lo, hi: a.hi, words })
    }

    pub fn difference(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<Clopen> {
        let (a, b) = self.aligned(lang, other)?;
        let words: BTreeSet<Word> = a.words.difference(&b.words).cloned().collect();
        if words.is_empty() {
            return Ok(Clopen::empty());
        }
        Ok(Clopen { lo: a.lo, hi: a.hi, words })
    }

    pub fn symmetric_difference(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<Clopen> {
        let (a, b) = self.aligned(lang, other)?;
        let words: BTreeSet<Word> =
            a.words.symmetric_difference(&b.words).cloned().collect();
        if words.is_empty() {
            return Ok(Clopen::empty());
        }
        Ok(Clopen { lo: a.lo, hi: a.hi, words })
    }

    pub fn complement(&self, lang: &dyn LanguageSource) -> Result<Clopen> {
        if self.is_empty_set() {
            return Clopen::whole(lang);
        }
        let all = lang.factors(self.window_len())?;
        let words: BTreeSet<Word> = all.difference(&self.words).cloned().collect();
        if words.is_empty() {
            return Ok(Clopen::empty());
        }
        Ok(Clopen { lo: self.lo, hi: self.hi, words })
    }

    pub fn is_subset(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<bool> {
        let (a, b) = self.aligned(lang, other)?;
        Ok(a.words.is_subset(&b.words))
    }

    pub fn is_disjoint(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<bool> {
        let (a, b) = self.aligned(lang, other)?;
        Ok(a.words.is_disjoint(&b.words))
    }

    pub fn same_set(&self, lang: &dyn LanguageSource, other: &Clopen) -> Result<bool> {
        let (a, b) = self.aligned(lang, other)?;
        Ok(a.words == b.words)
    }

    /// Canonical form: the minimal window carrying the set. A window end is
    /// dropped when the word set is saturated there, i.e. membership does not
    /// depend on that coordinate.
    pub fn normalize(&self, lang: &dyn LanguageSource) -> Result<Clopen> {
        if self.words.is_empty() {
            return Ok(Clopen::empty());
        }
        let mut cur = self.clone();
        loop {
            if cur.window_len() == 1 {
                return Ok(cur);
            }
            let len = cur.window_len();
            // try dropping the left coordinate
            let left: BTreeSet<Word> =
                cur.words.iter().map(|w| Word(w[1..].to_vec())).collect();
            let mut saturated = true;
            'outer_l: for w in lang.factors(len)?.iter() {
                if left.contains(&Word(w[1..].to_vec())) && !cur.words.contains(w) {
                    saturated = false;
                    break 'outer_l;
                }
            }
            if saturated {
                cur = Clopen { lo: cur.lo + 1, hi: cur.hi, words: left };
                continue;
            }
            // try dropping the right coordinate
            let right: BTreeSet<Word> =
                cur.words.iter().map(|w| Word(w[..len - 1].to_vec())).collect();
            let mut saturated = true;
            'outer_r: for w in lang.factors(len)?.iter() {
                if right.contains(&Word(w[..len - 1].to_vec())) && !cur.words.contains(w) {
                    saturated = false;
                    break 'outer_r;
                }
            }
            if saturated {
                cur = Clopen { lo: cur.lo, hi: cur.hi - 1, words: right };
                continue;
            }
            return Ok(cur);
        }
    }
}
