//! Return words to the 1-run neighborhoods `1^n.1^n`, Kakutani-Rohlin towers
//! built from them, level-to-level refinement witnesses, and the partition
//! sequence obtained by pulling towers of coded subshifts back to the base.
//!
//! A visit to the depth-`n` neighborhood happens at every position whose
//! surrounding `2n` letters (n on each side) are all 1. Return words are the
//! itineraries between consecutive visits; they tile every point, so the
//! shifted cylinders of `1^n w 1^n` form a clopen tower partition.

use crate::clopen::Clopen;
use crate::error::{Error, Result};
use crate::partition::{AtomLabel, CodedLanguage, WindowPartition};
use crate::words::{occurrences, LanguageSource, Word};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::collections::BTreeSet;
use std::sync::Arc;

/// The return words to `1^n.1^n`: the trivial word "1" plus every word `w`
/// with `1^n w 1^n` allowed and `1^{2n}` occurring in it exactly as prefix
/// and suffix. Sorted by (length, lexicographic), so "1" comes first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReturnWordSet {
    pub n: usize,
    pub words: Vec<Word>,
}

impl ReturnWordSet {
    pub fn nontrivial(&self) -> impl Iterator<Item = &Word> {
        self.words.iter().filter(|w| w.len() > 1)
    }

    /// `min { |w|_{¬1} : w nontrivial }`.
    pub fn min_nontrivial_weight(&self) -> Result<usize> {
        self.nontrivial()
            .map(|w| w.weight())
            .min()
            .ok_or_else(|| {
                Error::Structural(format!(
                    "return word set at n={} has only the trivial word",
                    self.n
                ))
            })
    }
}

/// The defining predicate: `1^n w 1^n` is allowed and `1^{2n}` occurs in it
/// exactly as prefix and suffix.
pub fn is_return_word(lang: &dyn LanguageSource, n: usize, w: &Word) -> Result<bool> {
    if w.is_empty() {
        return Ok(false);
    }
    let framed = Word::ones(n).concat(w).concat(&Word::ones(n));
    if !lang.contains(&framed)? {
        return Ok(false);
    }
    let runs = occurrences(&framed, &Word::ones(2 * n));
    Ok(runs == vec![1, w.len() + 1])
}

/// Enumerate the return words by segmenting a padded scan word between
/// consecutive visits; completeness is certified by agreement of two
/// consecutive scan depths, and every word is re-checked by the predicate.
pub fn return_words(lang: &Arc<dyn LanguageSource>, n: usize) -> Result<ReturnWordSet> {
    if n == 0 {
        return Err(Error::Input("return words need n ≥ 1".into()));
    }
    let start = lang.stabilization_depth(2 * n + 2)? + 2;
    if start + 1 > lang.max_depth() {
        return Err(Error::Diagnostic(format!(
            "scan horizon {} too small to certify return words at n={n}",
            lang.max_depth()
        )));
    }
    let first = segment_scan(lang.as_ref(), n, start)?;
    let second = segment_scan(lang.as_ref(), n, start + 1)?;
    if first != second {
        return Err(Error::Diagnostic(format!(
            "return word sets at depths {start} and {} disagree; horizon too small",
            start + 1
        )));
    }
    for w in &first {
        if !is_return_word(lang.as_ref(), n, w)? {
            return Err(Error::Structural(format!(
                "segmented word {w} fails the return-word predicate at n={n}"
            )));
        }
    }
    if first.iter().all(|w| w.len() == 1) {
        return Err(Error::Structural(format!(
            "only the trivial return word at n={n}; the subshift is degenerate"
        )));
    }
    let mut words: Vec<Word> = first.into_iter().collect();
    words.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(ReturnWordSet { n, words })
}

fn segment_scan(lang: &dyn LanguageSource, n: usize, depth: u32) -> Result<BTreeSet<Word>> {
    let scan = lang.scan_word(depth, 2 * n + 2)?;
    let runs: Vec<(usize, usize)> = scan
        .one_runs()
        .into_iter()
        .filter(|&(_, len)| len >= 2 * n)
        .collect();
    let mut out = BTreeSet::new();
    out.insert(Word::single(1));
    for pair in runs.windows(2) {
        let (s0, l0) = pair[0];
        let (s1, _) = pair[1];
        // 1-based: last visit of the left run is at e0−n+1, first visit of
        // the right run at s1+n; the word between them is the return word
        let e0 = s0 + l0; // 1-based end position of the left run
        let w = scan.slice1(e0 - n + 1, s1 + n);
        debug_assert!(w.len() > 2 * n);
        out.insert(w);
    }
    Ok(out)
}

/// The unique factorization of `w` into members of `rset`; zero or several
/// parses invalidate the tiling structure.
pub fn decompose(w: &Word, rset: &ReturnWordSet) -> Result<Vec<Word>> {
    if w.is_empty() {
        return Err(Error::Input("cannot decompose the empty word".into()));
    }
    let n = w.len();
    let mut ways = vec![0u128; n + 1];
    ways[0] = 1;
    for i in 1..=n {
        for r in &rset.words {
            let l = r.len();
            if l <= i && ways[i - l] > 0 && w[i - l..i] == r[..] {
                ways[i] = ways[i].saturating_add(ways[i - l]);
            }
        }
    }
    match ways[n] {
        0 => Err(Error::Structural(format!("{w} has no parse into return words"))),
        1 => {
            let mut parts = Vec::new();
            let mut i = n;
            while i > 0 {
                let r = rset
                    .words
                    .iter()
                    .find(|r| r.len() <= i && ways[i - r.len()] > 0 && w[i - r.len()..i] == r[..])
                    .expect("a parse exists");
                parts.push(r.clone());
                i -= r.len();
            }
            parts.reverse();
            Ok(parts)
        }
        k => Err(Error::Structural(format!("{w} has {k} parses into return words"))),
    }
}

/// One column of a tower: the shifted cylinders of `1^n w 1^n`.
#[derive(Clone, Debug)]
pub struct KrColumn {
    pub word: Word,
    pub height: usize,
    /// The fiber name read off the levels, one letter per level; always
    /// equals the return word.
    pub name: Word,
    pub infinite: bool,
    /// Number of levels contained in the reference set K.
    pub k_hits: usize,
    pub base: Clopen,
    pub levels: Vec<Clopen>,
}

/// The letter every point of the set reads at position 0; the set must be
/// constant there.
pub fn letter_at_origin(c: &Clopen) -> Result<u8> {
    if c.is_empty_set() || c.lo > 0 || c.hi < 0 {
        return Err(Error::Structural("set does not determine position 0".into()));
    }
    let idx = (-c.lo) as usize;
    let mut letters = c.words.iter().map(|w| w[idx]);
    let first = letters.next().expect("nonempty");
    if letters.all(|a| a == first) {
        Ok(first)
    } else {
        Err(Error::Structural("position 0 is not constant on the set".into()))
    }
}

impl Serialize for KrColumn {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let fields = 2 + 1;
        let mut st = s.serialize_struct("KrColumn", fields)?;
        st.serialize_field("word", &self.word)?;
        st.serialize_field("height", &self.height)?;
        if self.infinite {
            st.serialize_field("infinite", &true)?;
        } else {
            st.serialize_field("k_hits", &self.k_hits)?;
        }
        st.end()
    }
}

/// A Kakutani-Rohlin tower: one column per return word, the infinite column
/// first, the rest ordered by (height, word).
#[derive(Clone, Debug, Serialize)]
pub struct KrTower {
    pub n: usize,
    pub columns: Vec<KrColumn>,
    #[serde(skip)]
    pub base: Clopen,
    #[serde(skip)]
    pub k_set: Clopen,
}

/// Height summary over the principal (finite) columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct HeightProfile {
    /// Least principal height.
    pub h: usize,
    /// Least K-hit count over principal columns.
    pub h_k: usize,
    /// Greatest K-hit count over principal columns.
    pub h_k_max: usize,
}

impl KrTower {
    pub fn principal(&self) -> impl Iterator<Item = &KrColumn> {
        self.columns.iter().filter(|c| !c.infinite)
    }

    pub fn levels(&self) -> impl Iterator<Item = (usize, usize, &Clopen)> {
        self.columns
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.levels.iter().enumerate().map(move |(j, l)| (i, j, l)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tower serializes")
    }

    /// Check that all levels are pairwise disjoint and cover the space,
    /// exactly, on the clopen algebra of the hull window.
    pub fn verify_partition(&self, lang: &dyn LanguageSource) -> Result<()> {
        let all: Vec<&Clopen> = self.levels().map(|(_, _, l)| l).collect();
        for (x, a) in all.iter().enumerate() {
            for b in all.iter().skip(x + 1) {
                if !a.is_disjoint(lang, b)? {
                    return Err(Error::Structural(format!(
                        "levels overlap: [{},{}] and [{},{}]",
                        a.lo, a.hi, b.lo, b.hi
                    )));
                }
            }
        }
        let mut union = Clopen::empty();
        for level in &all {
            union = union.union(lang, level)?;
        }
        let whole = Clopen::whole(lang)?;
        if !union.same_set(lang, &whole)? {
            return Err(Error::Structural("tower levels do not cover the space".into()));
        }
        Ok(())
    }
}

/// Build the depth-`n` tower: level `j` of column `w` is the `j`-step shift
/// image of the cylinder `[1^n.w 1^n]`. Every level must be contained in or
/// disjoint from `K`, and `K` must be exactly the union of its levels.
pub fn kr_tower(
    lang: &Arc<dyn LanguageSource>,
    n: usize,
    k_set: &Clopen,
) -> Result<(KrTower, HeightProfile)> {
    if k_set.contains_all_ones() {
        return Err(Error::Input(
            "the reference set K must avoid the fixed point's neighborhoods".into(),
        ));
    }
    let rset = return_words(lang, n)?;
    let mut columns = Vec::new();
    for w in &rset.words {
        let framed = Word::ones(n).concat(w).concat(&Word::ones(n));
        let base = Clopen::cylinder(lang.as_ref(), -(n as i64), &framed)?;
        if base.is_empty_set() {
            return Err(Error::Structural(format!("return word {w} has an empty base")));
        }
        let mut levels = Vec::with_capacity(w.len());
        let mut k_hits = 0usize;
        let mut name = Vec::with_capacity(w.len());
        for j in 0..w.len() {
            let level = base.shift_preimage(-(j as i64));
            let inside = level.is_subset(lang.as_ref(), k_set)?;
            if !inside && !level.is_disjoint(lang.as_ref(), k_set)? {
                return Err(Error::Structural(format!(
                    "K is not a union of levels: level {j} of column {w} straddles K"
                )));
            }
            k_hits += inside as usize;
            name.push(letter_at_origin(&level)?);
            levels.push(level);
        }
        let name = Word(name);
        if name != *w {
            return Err(Error::Structural(format!(
                "fiber name {name} differs from return word {w}"
            )));
        }
        columns.push(KrColumn {
            word: w.clone(),
            height: w.len(),
            name,
            infinite: w.is_all_ones(),
            k_hits,
            base,
            levels,
        });
    }
    // infinite column first, then by (height, word)
    columns.sort_by(|a, b| {
        b.infinite
            .cmp(&a.infinite)
            .then(a.height.cmp(&b.height))
            .then(a.word.cmp(&b.word))
    });
    if columns.iter().filter(|c| c.infinite).count() != 1 || !columns[0].infinite {
        return Err(Error::Structural("expected exactly one infinite column".into()));
    }
    let mut base = Clopen::empty();
    for c in &columns {
        base = base.union(lang.as_ref(), &c.base)?;
    }
    // K must equal the union of the levels inside it
    let mut k_union = Clopen::empty();
    for c in &columns {
        for level in &c.levels {
            if level.is_subset(lang.as_ref(), k_set)? {
                k_union = k_union.union(lang.as_ref(), level)?;
            }
        }
    }
    if !k_union.same_set(lang.as_ref(), k_set)? {
        return Err(Error::Structural(
            "K is not exhausted by the levels it contains".into(),
        ));
    }
    let h = columns.iter().filter(|c| !c.infinite).map(|c| c.height).min();
    let hits: Vec<usize> = columns.iter().filter(|c| !c.infinite).map(|c| c.k_hits).collect();
    let profile = HeightProfile {
        h: h.ok_or_else(|| Error::Structural("no principal column".into()))?,
        h_k: *hits.iter().min().expect("principal columns exist"),
        h_k_max: *hits.iter().max().expect("principal columns exist"),
    };
    if profile.h_k < 1 {
        return Err(Error::Structural(
            "a principal column misses K entirely; K is too thin for this depth".into(),
        ));
    }
    let tower = KrTower { n, columns, base, k_set: k_set.clone() };
    Ok((tower, profile))
}

/// For each level of the finer tower, the level of the coarser tower that
/// contains it, located through the unique decomposition of the fine return
/// word and verified by clopen inclusion.
#[derive(Clone, Debug, Serialize)]
pub struct RefinementWitness {
    /// One entry per fine column: the decomposition into coarse words and,
    /// per level, the (coarse column, coarse level) pair.
    pub entries: Vec<RefinementEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefinementEntry {
    pub fine_word: Word,
    pub blocks: Vec<Word>,
    pub level_map: Vec<(usize, usize)>,
}

pub fn refinement_witness(
    lang: &Arc<dyn LanguageSource>,
    fine: &KrTower,
    coarse: &KrTower,
) -> Result<RefinementWitness> {
    if !fine.base.is_subset(lang.as_ref(), &coarse.base)? {
        return Err(Error::Structural(
            "the fine base is not contained in the coarse base".into(),
        ));
    }
    let coarse_set = ReturnWordSet {
        n: coarse.n,
        words: coarse.columns.iter().map(|c| c.word.clone()).collect(),
    };
    let mut entries = Vec::new();
    for fc in &fine.columns {
        let blocks = decompose(&fc.word, &coarse_set)?;
        let mut level_map = Vec::with_capacity(fc.height);
        let mut cum = 0usize;
        let mut block_iter = blocks.iter();
        let mut cur = block_iter.next().expect("nonempty decomposition");
        for j in 0..fc.height {
            while j >= cum + cur.len() {
                cum += cur.len();
                cur = block_iter.next().expect("blocks cover the word");
            }
            let ci = coarse
                .columns
                .iter()
                .position(|c| c.word == *cur)
                .expect("block is a coarse return word");
            let cj = j - cum;
            if !fc.levels[j].is_subset(lang.as_ref(), &coarse.columns[ci].levels[cj])? {
                return Err(Error::Structural(format!(
                    "level {j} of fine column {} is not inside level {cj} of coarse column {}",
                    fc.word, coarse.columns[ci].word
                )));
            }
            level_map.push((ci, cj));
        }
        entries.push(RefinementEntry { fine_word: fc.word.clone(), blocks, level_map });
    }
    Ok(RefinementWitness { entries })
}

/// The tower's partition into its levels, pulled back to the base subshift
/// of a coded language: principal levels become the finite atoms and
/// everything else is the infinite atom.
pub fn pullback_tower_partition(
    coded: &Arc<CodedLanguage>,
    tower: &KrTower,
) -> Result<WindowPartition> {
    let base_lang = coded.base().clone();
    let mut atoms = Vec::new();
    let mut next = 2u16;
    for c in tower.principal() {
        for level in &c.levels {
            let pulled = coded.pullback_clopen(level)?;
            atoms.push((AtomLabel::single(next), pulled));
            next += 1;
        }
    }
    WindowPartition::from_finite_atoms(base_lang, &atoms)
}

/// The refining partition sequence generated by a list of compact open sets:
/// stage `i` codes the base by the join of the binary partitions of
/// `D_1..D_i`, takes the depth-1 tower of the coded subshift, and keeps the
/// pulled-back levels that lie inside the stage-1 finite support; everything
/// else joins the infinite atom.
pub fn gamma_sequence(
    lang: &Arc<dyn LanguageSource>,
    d_sets: &[Clopen],
    i: usize,
) -> Result<WindowPartition> {
    if i == 0 || i > d_sets.len() {
        return Err(Error::Input(format!(
            "stage {i} needs 1 ≤ i ≤ {} base sets",
            d_sets.len()
        )));
    }
    for d in &d_sets[..i] {
        if d.contains_all_ones() || d.is_empty_set() {
            return Err(Error::Input(
                "every base set must be nonempty and avoid the fixed point".into(),
            ));
        }
    }
    let gamma_1 = gamma_stage(lang, d_sets, 1)?;
    if i == 1 {
        return Ok(gamma_1);
    }
    let support = gamma_1.finite_support();
    let stage = gamma_stage(lang, d_sets, i)?;
    // keep the atoms inside the stage-1 support; the rest must be disjoint
    // from it, and together the kept atoms exhaust it
    let mut kept = Vec::new();
    let mut next = 2u16;
    for (label, atom) in stage.atoms() {
        if label.is_infinite() {
            continue;
        }
        if atom.is_subset(lang.as_ref(), &support)? {
            kept.push((AtomLabel::single(next), atom));
            next += 1;
        } else if !atom.is_disjoint(lang.as_ref(), &support)? {
            return Err(Error::Structural(format!(
                "stage-{i} level straddles the stage-1 support"
            )));
        }
    }
    let gamma_i = WindowPartition::from_finite_atoms(lang.clone(), &kept)?;
    if !gamma_i
        .finite_support()
        .same_set(lang.as_ref(), &support)?
    {
        return Err(Error::Structural(
            "kept levels do not exhaust the stage-1 support".into(),
        ));
    }
    Ok(gamma_i)
}

/// The full pulled-back level partition of the stage-`i` coded tower.
fn gamma_stage(
    lang: &Arc<dyn LanguageSource>,
    d_sets: &[Clopen],
    i: usize,
) -> Result<WindowPartition> {
    let mut alpha = WindowPartition::binary(lang.clone(), &d_sets[0])?;
    for d in &d_sets[1..i] {
        alpha = alpha.join(&WindowPartition::binary(lang.clone(), d)?)?;
    }
    let coded = CodedLanguage::new(&alpha)?;
    let coded_lang: Arc<dyn LanguageSource> = coded.clone();
    let k_letters = coded_support(&coded)?;
    let (tower, _) = kr_tower(&coded_lang, 1, &k_letters)?;
    pullback_tower_partition(&coded, &tower)
}

/// The union of the non-1 letter cylinders of a coded language.
pub fn coded_support(coded: &Arc<CodedLanguage>) -> Result<Clopen> {
    let words: BTreeSet<Word> = coded
        .factors(1)?
        .iter()
        .filter(|w| !w.is_all_ones())
        .cloned()
        .collect();
    Clopen::from_words(coded.as_ref(), 0, 0, words)
}
