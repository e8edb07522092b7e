//! Points of the subshift, letterwise codes between subshifts (the 1-block
//! factor maps), image languages, and product languages.

use crate::error::{Error, Result};
use crate::words::{LanguageSource, Letter, SubstitutionLanguage, Word};
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// A representable point of the subshift. Every finite window can be
/// evaluated; validity (windows in the language) is checked separately.
#[derive(Clone, Debug)]
pub enum Point {
    /// The unique fixed point `1^∞`.
    FixedPoint,
    /// `1^∞ left . right 1^∞`, with `right` starting at coordinate 0.
    CompactSupport { left: Word, right: Word },
    /// The one-sided generated point `1^∞ . σ^∞(seed)`: coordinates ≥ 0 carry
    /// the nested limit of σ^n(seed), coordinates < 0 carry 1.
    Generated { lang: Arc<SubstitutionLanguage> },
    /// A shifted point: coordinate i of this point is coordinate i+offset of
    /// the base point.
    Shifted { base: Box<Point>, offset: i64 },
    /// The letterwise image of a base point under a code.
    Coded { base: Box<Point>, code: SubscriptMap },
}

impl Point {
    pub fn generated(lang: Arc<SubstitutionLanguage>) -> Point {
        Point::Generated { lang }
    }

    pub fn compact(left: &str, right: &str) -> Result<Point> {
        Ok(Point::CompactSupport {
            left: Word::parse(left)?,
            right: Word::parse(right)?,
        })
    }

    pub fn shifted(self, offset: i64) -> Point {
        Point::Shifted { base: Box::new(self), offset }
    }

    pub fn coded(self, code: SubscriptMap) -> Point {
        Point::Coded { base: Box::new(self), code }
    }

    /// The letters `x_l … x_k` (both ends inclusive).
    pub fn window(&self, l: i64, k: i64) -> Result<Word> {
        if l > k {
            return Ok(Word::empty());
        }
        match self {
            Point::FixedPoint => Ok(Word::ones((k - l + 1) as usize)),
            Point::CompactSupport { left, right } => {
                let mut v = Vec::with_capacity((k - l + 1) as usize);
                for i in l..=k {
                    v.push(if i < 0 {
                        let j = i + left.len() as i64;
                        if j >= 0 {
                            left[j as usize]
                        } else {
                            1
                        }
                    } else if (i as usize) < right.len() {
                        right[i as usize]
                    } else {
                        1
                    });
                }
                Ok(Word(v))
            }
            Point::Generated { lang } => {
                let mut v = Vec::with_capacity((k - l + 1) as usize);
                let core = if k >= 0 {
                    let mut depth = 0u32;
                    loop {
                        let c = lang.core(depth)?;
                        if c.len() > k as usize {
                            break Some(c);
                        }
                        if depth >= lang.max_depth() {
                            return Err(Error::Resource(format!(
                                "generated point window up to {k} exceeds depth horizon"
                            )));
                        }
                        depth += 1;
                    }
                } else {
                    None
                };
                for i in l..=k {
                    v.push(if i < 0 {
                        1
                    } else {
                        core.as_ref().expect("core expanded")[i as usize]
                    });
                }
                Ok(Word(v))
            }
            Point::Shifted { base, offset } => base.window(l + offset, k + offset),
            Point::Coded { base, code } => Ok(code.apply_word(&base.window(l, k)?)?),
        }
    }

    /// Whether every window of radius ≤ `radius` lies in the language.
    /// It suffices to check the largest window, since languages are
    /// factor-closed.
    pub fn valid_at(&self, lang: &dyn LanguageSource, radius: i64) -> Result<bool> {
        let w = self.window(-radius, radius)?;
        lang.contains(&w)
    }
}

/// A letterwise map between alphabets with `f(1) = 1`, surjective onto the
/// target; the combinatorial datum of a 1-block factor code.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SubscriptMap {
    pub source_size: u8,
    pub target_size: u8,
    map: Vec<Letter>,
}

impl SubscriptMap {
    pub fn new(source_size: u8, target_size: u8, pairs: &[(Letter, Letter)]) -> Result<Self> {
        let mut map = vec![0 as Letter; source_size as usize];
        for &(a, b) in pairs {
            if a == 0 || a > source_size {
                return Err(Error::Input(format!("source letter {a} outside alphabet")));
            }
            if b == 0 || b > target_size {
                return Err(Error::Input(format!("target letter {b} outside alphabet")));
            }
            if map[a as usize - 1] != 0 {
                return Err(Error::Input(format!("duplicate mapping for letter {a}")));
            }
            map[a as usize - 1] = b;
        }
        if let Some(i) = map.iter().position(|&b| b == 0) {
            return Err(Error::Input(format!("letter {} has no image", i + 1)));
        }
        let f = SubscriptMap { source_size, target_size, map };
        if f.apply_letter(1) != 1 {
            return Err(Error::Input("codes must map letter 1 to letter 1".into()));
        }
        for b in 1..=target_size {
            if !f.map.contains(&b) {
                return Err(Error::Input(format!("code not surjective: letter {b} missed")));
            }
        }
        Ok(f)
    }

    pub fn identity(size: u8) -> Self {
        SubscriptMap {
            source_size: size,
            target_size: size,
            map: (1..=size).collect(),
        }
    }

    /// Parse the inline form `"1:1,2:2,3:2"`.
    pub fn parse(text: &str, source_size: u8, target_size: u8) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in text.split(',') {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::Input(format!("bad code entry {part:?}")))?;
            let a: Letter = a.trim().parse().map_err(|_| Error::Input(format!("bad letter {a:?}")))?;
            let b: Letter = b.trim().parse().map_err(|_| Error::Input(format!("bad letter {b:?}")))?;
            pairs.push((a, b));
        }
        SubscriptMap::new(source_size, target_size, &pairs)
    }

    pub fn apply_letter(&self, a: Letter) -> Letter {
        self.map[a as usize - 1]
    }

    pub fn apply_word(&self, w: &Word) -> Result<Word> {
        let mut v = Vec::with_capacity(w.len());
        for &a in w.iter() {
            if a == 0 || a > self.source_size {
                return Err(Error::Input(format!("letter {a} outside source alphabet")));
            }
            v.push(self.apply_letter(a));
        }
        Ok(Word(v))
    }

    /// The composite `x ↦ g(self(x))`.
    pub fn then(&self, g: &SubscriptMap) -> Result<SubscriptMap> {
        if g.source_size != self.target_size {
            return Err(Error::Input(format!(
                "cannot compose codes: {} -> {} then {} -> {}",
                self.source_size, self.target_size, g.source_size, g.target_size
            )));
        }
        Ok(SubscriptMap {
            source_size: self.source_size,
            target_size: g.target_size,
            map: self.map.iter().map(|&b| g.apply_letter(b)).collect(),
        })
    }

    pub fn preimages(&self, b: Letter) -> Vec<Letter> {
        (1..=self.source_size)
            .filter(|&a| self.apply_letter(a) == b)
            .collect()
    }
}

impl fmt::Display for SubscriptMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = (1..=self.source_size)
            .map(|a| format!("{a}:{}", self.apply_letter(a)))
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

/// `{f(w) : w ∈ factors(len)}` of the source language.
pub fn image_language(
    f: &SubscriptMap,
    lang: &dyn LanguageSource,
    len: usize,
) -> Result<BTreeSet<Word>> {
    if f.source_size != lang.alphabet_size() {
        return Err(Error::Input(format!(
            "code source alphabet {} does not match language alphabet {}",
            f.source_size,
            lang.alphabet_size()
        )));
    }
    let mut out = BTreeSet::new();
    for w in lang.factors(len)?.iter() {
        out.insert(f.apply_word(w)?);
    }
    Ok(out)
}

/// The image of a language under a surjective code, as a language in its own
/// right. Factors and scan words are letterwise images of the base ones.
pub struct MergedLanguage {
    base: Arc<dyn LanguageSource>,
    code: SubscriptMap,
}

impl fmt::Debug for MergedLanguage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MergedLanguage(code {})", self.code)
    }
}

impl MergedLanguage {
    pub fn new(base: Arc<dyn LanguageSource>, code: SubscriptMap) -> Result<Arc<Self>> {
        if code.source_size != base.alphabet_size() {
            return Err(Error::Input(format!(
                "code source alphabet {} does not match language alphabet {}",
                code.source_size,
                base.alphabet_size()
            )));
        }
        Ok(Arc::new(MergedLanguage { base, code }))
    }

    pub fn code(&self) -> &SubscriptMap {
        &self.code
    }

    pub fn base(&self) -> &Arc<dyn LanguageSource> {
        &self.base
    }
}

impl LanguageSource for MergedLanguage {
    fn alphabet_size(&self) -> u8 {
        self.code.target_size
    }

    fn factors(&self, len: usize) -> Result<Arc<BTreeSet<Word>>> {
        Ok(Arc::new(image_language(&self.code, self.base.as_ref(), len)?))
    }

    fn scan_word(&self, depth: u32, pad: usize) -> Result<Word> {
        self.code.apply_word(&self.base.scan_word(depth, pad)?)
    }

    fn scan_weight(&self, depth: u32) -> Result<u128> {
        self.base.scan_weight(depth)
    }

    fn stabilization_depth(&self, len: usize) -> Result<u32> {
        self.base.stabilization_depth(len)
    }

    fn max_depth(&self) -> u32 {
        self.base.max_depth()
    }
}

/// All pairs of equal-length factors of two languages: the length-`len` part
/// of the product language.
pub fn product_language(
    a: &dyn LanguageSource,
    b: &dyn LanguageSource,
    len: usize,
) -> Result<BTreeSet<(Word, Word)>> {
    let fa = a.factors(len)?;
    let fb = b.factors(len)?;
    let mut out = BTreeSet::new();
    for u in fa.iter() {
        for v in fb.iter() {
            out.insert((u.clone(), v.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::Substitution;

    fn default_lang() -> Arc<SubstitutionLanguage> {
        SubstitutionLanguage::new(Substitution::builtin_default())
    }

    #[test]
    fn window_examples() {
        let fixed = Point::FixedPoint;
        assert_eq!(fixed.window(-2, 2).unwrap().to_string(), "11111");

        let compact = Point::compact("", "2").unwrap();
        assert_eq!(compact.window(-1, 1).unwrap().to_string(), "121");

        let gen = Point::generated(default_lang());
        assert_eq!(gen.window(0, 7).unwrap().to_string(), "21211212");
        assert_eq!(gen.window(-3, 2).unwrap().to_string(), "111212");
    }

    #[test]
    fn generated_point_windows_are_factors() {
        let lang = default_lang();
        let gen = Point::generated(lang.clone());
        for radius in [1i64, 2, 4, 8, 16] {
            assert!(gen.valid_at(lang.as_ref(), radius).unwrap());
            let shifted = gen.clone().shifted(5);
            assert!(shifted.valid_at(lang.as_ref(), radius).unwrap());
        }
    }

    #[test]
    fn compact_support_point_leaves_language_at_depth() {
        // 1^∞.2 1^∞ has window 121 in the language, but 1112111 is not a
        // factor: the letter 2 never appears with three 1s on both sides.
        let lang = default_lang();
        let p = Point::compact("", "2").unwrap();
        assert!(p.valid_at(lang.as_ref(), 1).unwrap());
        assert!(!p.valid_at(lang.as_ref(), 3).unwrap());
    }

    #[test]
    fn apply_code_examples() {
        let id = SubscriptMap::identity(2);
        let w = Word::parse("12121").unwrap();
        assert_eq!(id.apply_word(&w).unwrap(), w);

        let f = SubscriptMap::parse("1:1,2:2,3:2", 3, 2).unwrap();
        assert_eq!(
            f.apply_word(&Word::parse("123").unwrap()).unwrap().to_string(),
            "122"
        );

        let p = Point::FixedPoint.coded(f);
        assert_eq!(p.window(-2, 2).unwrap(), Word::ones(5));
    }

    #[test]
    fn code_validation() {
        // not surjective
        assert!(SubscriptMap::parse("1:1,2:1,3:1", 3, 2).is_err());
        // moves letter 1
        assert!(SubscriptMap::parse("1:2,2:1", 2, 2).is_err());
        // incomplete
        assert!(SubscriptMap::parse("1:1", 2, 2).is_err());
    }

    #[test]
    fn code_composition_law() {
        let f = SubscriptMap::parse("1:1,2:2,3:2,4:3", 4, 3).unwrap();
        let g = SubscriptMap::parse("1:1,2:2,3:2", 3, 2).unwrap();
        let fg = f.then(&g).unwrap();
        let w = Word::parse("14321").unwrap();
        assert_eq!(
            fg.apply_word(&w).unwrap(),
            g.apply_word(&f.apply_word(&w).unwrap()).unwrap()
        );
    }

    #[test]
    fn equivariance_of_codes_with_shift() {
        let f = SubscriptMap::parse("1:1,2:2", 2, 2).unwrap();
        let p = Point::generated(default_lang());
        let coded_then_shifted = p.clone().coded(f.clone()).shifted(3);
        let shifted_then_coded = p.shifted(3).coded(f);
        assert_eq!(
            coded_then_shifted.window(-5, 5).unwrap(),
            shifted_then_coded.window(-5, 5).unwrap()
        );
    }

    #[test]
    fn image_language_examples() {
        let lang = default_lang();
        let id = SubscriptMap::identity(2);
        assert_eq!(
            image_language(&id, lang.as_ref(), 2).unwrap(),
            ["11", "12", "21"].iter().map(|w| Word::parse(w).unwrap()).collect()
        );
        assert_eq!(
            image_language(&id, lang.as_ref(), 1).unwrap(),
            ["1", "2"].iter().map(|w| Word::parse(w).unwrap()).collect()
        );
    }

    #[test]
    fn merged_language_is_factor_closed() {
        let lang = default_lang();
        let refine_then_merge = SubscriptMap::parse("1:1,2:2", 2, 2).unwrap();
        let merged = MergedLanguage::new(lang, refine_then_merge).unwrap();
        let f4 = merged.factors(4).unwrap();
        for w in f4.iter() {
            let u = w.slice1(2, 3);
            assert!(merged.factors(2).unwrap().contains(&u));
        }
    }

    #[test]
    fn product_language_sizes() {
        let lang = default_lang();
        assert_eq!(product_language(lang.as_ref(), lang.as_ref(), 1).unwrap().len(), 4);
        assert_eq!(product_language(lang.as_ref(), lang.as_ref(), 2).unwrap().len(), 9);
        let empty = product_language(lang.as_ref(), lang.as_ref(), 0).unwrap();
        assert_eq!(empty.len(), 1);
        assert!(empty.contains(&(Word::empty(), Word::empty())));
    }
}
