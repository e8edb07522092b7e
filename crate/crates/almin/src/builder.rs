//! The staged construction of a strictly ergodic model over a factor code:
//! exact stage parameters, towers of the coded subshift with fiber
//! classification certified by measure accounting, name copying onto bad
//! fibers, derived lower partitions, empirical uniformity thresholds with
//! their conservative counterparts, and the cross-stage property ledger.

use crate::clopen::Clopen;
use crate::error::{Error, Result};
use crate::measure::{CylinderMeasure, InvariantMeasure, PushforwardMeasure};
use crate::partition::{
    distance, reference_distribution, uniformity_check, AtomLabel, BlockDistribution,
    CodedLanguage, CodedMeasure, SectionSource, UniformityCertificate, WindowPartition,
};
use crate::subshift::{MergedLanguage, Point, SubscriptMap};
use crate::towers::{gamma_sequence, return_words};
use crate::words::{occurrences, LanguageSource, Letter, SubstitutionLanguage, Word};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// The two subshifts and the factor code between them.
// ---------------------------------------------------------------------------

/// The upstairs subshift `Y`, the downstairs subshift `Z`, and the letterwise
/// code `Y → Z`. The identity code makes both sides the same subshift.
pub struct ModelSpace {
    pub y_lang: Arc<dyn LanguageSource>,
    pub y_meas: Arc<dyn InvariantMeasure>,
    pub z_lang: Arc<dyn LanguageSource>,
    pub z_meas: Arc<dyn InvariantMeasure>,
    pub code: SubscriptMap,
}

impl ModelSpace {
    /// Both sides are the same substitution subshift; the code is identity.
    pub fn identity(lang: Arc<SubstitutionLanguage>) -> ModelSpace {
        let meas = CylinderMeasure::new(lang.clone());
        let as_lang: Arc<dyn LanguageSource> = lang;
        ModelSpace {
            y_lang: as_lang.clone(),
            y_meas: meas.clone(),
            z_lang: as_lang,
            z_meas: meas,
            code: SubscriptMap::identity(2),
        }
    }

    /// Downstairs is the letterwise image of upstairs under a surjective code.
    pub fn merged(
        y_lang: Arc<dyn LanguageSource>,
        y_meas: Arc<dyn InvariantMeasure>,
        code: SubscriptMap,
    ) -> Result<ModelSpace> {
        let z_lang = MergedLanguage::new(y_lang.clone(), code.clone())?;
        let z_meas = PushforwardMeasure::new(y_meas.clone(), code.clone())?;
        Ok(ModelSpace {
            y_lang,
            y_meas,
            z_lang,
            z_meas,
            code,
        })
    }

    /// Upstairs refines the base subshift by cylinder context: its letters
    /// are the atoms of the join of the given cylinder binaries, and the code
    /// reads off the base letter each atom fixes at position 0. Downstairs,
    /// the letterwise image recovers the base subshift exactly.
    pub fn refined(base: Arc<SubstitutionLanguage>, splits: &[&str]) -> Result<ModelSpace> {
        if splits.is_empty() {
            return Err(Error::Input("need at least one split cylinder".into()));
        }
        let meas = CylinderMeasure::new(base.clone());
        let mut join: Option<WindowPartition> = None;
        for s in splits {
            let w = Word::parse(s)?;
            let e = Clopen::cylinder(base.as_ref(), 0, &w)?;
            let lang: Arc<dyn LanguageSource> = base.clone();
            let b = WindowPartition::binary(lang, &e)?;
            join = Some(match join {
                None => b,
                Some(j) => j.join(&b)?,
            });
        }
        let join = join.expect("splits nonempty");
        let coded = CodedLanguage::new(&join)?;
        let y_meas = CodedMeasure::new(meas, coded.clone());
        // each coded letter must fix the base letter at position 0
        let part = coded.partition();
        let pos = (-part.lo) as usize;
        let mut table: BTreeMap<Letter, Letter> = BTreeMap::new();
        for (w, label) in part.labels() {
            let letter = label.0[0] as Letter;
            let target = w[pos];
            match table.get(&letter) {
                Some(&prev) if prev != target => {
                    return Err(Error::Structural(format!(
                        "refined letter {letter} covers base letters {prev} and {target}"
                    )));
                }
                Some(_) => {}
                None => {
                    table.insert(letter, target);
                }
            }
        }
        let pairs: Vec<(Letter, Letter)> = table.into_iter().collect();
        let code = SubscriptMap::new(coded.alphabet_size(), base.alphabet_size(), &pairs)?;
        ModelSpace::merged(coded, y_meas, code)
    }

    pub fn is_identity(&self) -> bool {
        self.code.source_size == self.code.target_size
            && (1..=self.code.source_size).all(|a| self.code.apply_letter(a) == a)
    }

    /// The preimage of a downstairs clopen set, on the same window.
    pub fn preimage(&self, e: &Clopen) -> Result<Clopen> {
        if self.is_identity() {
            return Ok(e.clone());
        }
        if e.is_empty_set() {
            return Ok(Clopen::empty());
        }
        let mut words = BTreeSet::new();
        for w in self.y_lang.factors(e.window_len())?.iter() {
            if e.words.contains(&self.code.apply_word(w)?) {
                words.insert(w.clone());
            }
        }
        Clopen::from_words(self.y_lang.as_ref(), e.lo, e.hi, words)
    }

    /// The pullback of a downstairs partition: each upstairs window word is
    /// labeled by the label of its letterwise image.
    pub fn pullback_partition(&self, gamma: &WindowPartition) -> Result<WindowPartition> {
        if self.is_identity() {
            return Ok(gamma.clone());
        }
        let len = gamma.window_len();
        let mut labels = BTreeMap::new();
        for w in self.y_lang.factors(len)?.iter() {
            labels.insert(w.clone(), gamma.label_of(&self.code.apply_word(w)?)?.clone());
        }
        WindowPartition::new(self.y_lang.clone(), gamma.lo, gamma.hi, labels)
    }
}

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

/// Horizon and default-set configuration for the staged construction. The
/// cylinder lists are cycled when shorter than the number of stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Number of stages `I`; the stage-`I` state is the finished model.
    pub stages: usize,
    /// Downstairs cylinder words generating the coding partitions.
    pub d_cyls: Vec<String>,
    /// Upstairs cylinder words for the approximation targets `E_i`.
    pub e_cyls: Vec<String>,
    /// Largest coded return-word depth tried per stage.
    pub tower_depth_cap: usize,
    /// Extra scan depth above stabilization for fiber enumeration.
    pub fiber_scan_margin: u32,
    /// Per-stage scan depths for the uniformity threshold search.
    pub uniformity_depths: Vec<u32>,
    /// Translate search range for atom approximations.
    pub offset_bound: i64,
    /// Window radius for the commuting-triangle check.
    pub triangle_radius: i64,
    /// Window radius for the support-hitting check.
    pub hitting_radius: i64,
}

impl Default for BuildConfig {
    fn default() -> BuildConfig {
        BuildConfig {
            stages: 3,
            d_cyls: vec!["2".into(), "212".into(), "2".into()],
            e_cyls: vec!["2".into(), "212".into(), "2".into()],
            tower_depth_cap: 64,
            fiber_scan_margin: 2,
            uniformity_depths: vec![9, 9, 9],
            offset_bound: 2,
            triangle_radius: 8,
            hitting_radius: 32,
        }
    }
}

impl BuildConfig {
    pub fn from_json(text: &str) -> Result<BuildConfig> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("bad build config: {e}")))
    }

    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn d_word(&self, i: usize) -> Result<Word> {
        if self.d_cyls.is_empty() {
            return Err(Error::Input("no coding cylinders configured".into()));
        }
        Word::parse(&self.d_cyls[(i - 1) % self.d_cyls.len()])
    }

    fn e_word(&self, i: usize) -> Result<Word> {
        if self.e_cyls.is_empty() {
            return Err(Error::Input("no approximation cylinders configured".into()));
        }
        Word::parse(&self.e_cyls[(i - 1) % self.e_cyls.len()])
    }

    fn uniformity_depth(&self, i: usize) -> u32 {
        *self
            .uniformity_depths
            .get(i - 1)
            .or_else(|| self.uniformity_depths.last())
            .unwrap_or(&9)
    }
}

// ---------------------------------------------------------------------------
// Stage towers: columns of the coded subshift, with fibers upstairs.
// ---------------------------------------------------------------------------

/// One class of fibers of a column: all fibers sharing the base neighborhood
/// word, hence the same name. `rel_lo` places the neighborhood relative to
/// the column origin.
#[derive(Clone, Debug)]
pub struct FiberClass {
    pub neighborhood: Word,
    pub rel_lo: i64,
    /// Name letters over the classifying coded alphabet, covering the column
    /// positions extended by k−1 on both sides.
    pub name: Word,
    /// Offset of column position 0 inside `name`.
    pub name_off: usize,
    pub mass: BigRational,
    pub deviation: BigRational,
    pub good: bool,
}

/// A principal column: a nontrivial coded return word with its fiber classes.
#[derive(Clone, Debug)]
pub struct StageColumn {
    pub word: Word,
    pub height: usize,
    pub k_hits: usize,
    pub mass: BigRational,
    pub fibers: Vec<FiberClass>,
}

/// A Kakutani-Rohlin tower of the coded subshift at a given depth, carried
/// in word form: per-level clopen sets are implicit in the column words.
#[derive(Clone, Debug)]
pub struct StageTower {
    pub n: usize,
    pub h_k: usize,
    pub h_k_max: usize,
    pub columns: Vec<StageColumn>,
}

/// Build the depth-`n` tower of the coded subshift and verify its exact
/// support accounting: the K-visits of the columns weighted by their base
/// masses recover the full support measure.
pub fn stage_tower(
    space: &ModelSpace,
    coded: &Arc<CodedLanguage>,
    n: usize,
) -> Result<StageTower> {
    let as_lang: Arc<dyn LanguageSource> = coded.clone();
    let rset = return_words(&as_lang, n)?;
    let mut columns = Vec::new();
    for w in rset.nontrivial() {
        let framed = Word::ones(n).concat(w).concat(&Word::ones(n));
        let e_z = coded.pullback_cylinder(&framed)?;
        let e_y = space.preimage(&e_z)?;
        let mass = space.y_meas.clopen(&e_y)?.as_finite()?.clone();
        if mass.is_zero() {
            return Err(Error::Structural(format!(
                "column {w} has a base of measure zero"
            )));
        }
        columns.push(StageColumn {
            word: w.clone(),
            height: w.len(),
            k_hits: w.weight(),
            mass,
            fibers: Vec::new(),
        });
    }
    if columns.is_empty() {
        return Err(Error::Structural(format!(
            "no principal column at depth {n}"
        )));
    }
    let h_k = columns.iter().map(|c| c.k_hits).min().expect("nonempty");
    let h_k_max = columns.iter().map(|c| c.k_hits).max().expect("nonempty");
    if h_k == 0 {
        return Err(Error::Structural(format!(
            "a depth-{n} column never visits the support"
        )));
    }
    // exact accounting: Σ k_hits · μ(base) = μ(K)
    let mut covered = BigRational::zero();
    for c in &columns {
        covered += BigRational::from(BigInt::from(c.k_hits as i64)) * &c.mass;
    }
    let support = coded_support_mass(space, coded)?;
    if covered != support {
        return Err(Error::Structural(format!(
            "depth-{n} tower covers measure {covered} of the support {support}"
        )));
    }
    Ok(StageTower {
        n,
        h_k,
        h_k_max,
        columns,
    })
}

/// μ upstairs of the preimage of the coded support (union of non-1 letter
/// cylinders of the coded subshift).
fn coded_support_mass(space: &ModelSpace, coded: &Arc<CodedLanguage>) -> Result<BigRational> {
    let mut words = BTreeSet::new();
    for w in coded.factors(1)?.iter() {
        if !w.is_all_ones() {
            words.insert(w.clone());
        }
    }
    let k_z = Clopen::from_words(coded.as_ref(), 0, 0, words)?;
    let pulled = coded.pullback_clopen(&k_z)?;
    let up = space.preimage(&pulled)?;
    Ok(space.y_meas.clopen(&up)?.as_finite()?.clone())
}

/// Empirical (2k−1)-block distribution of a fiber: full-window block counts
/// at every column position (windows read from the extended name, so edge
/// blocks see the neighborhood), divided by the number of support visits.
pub fn fiber_empirical(name: &Word, name_off: usize, height: usize, k: i64) -> Result<BlockDistribution> {
    if k < 1 {
        return Err(Error::Input("block parameter k must be ≥ 1".into()));
    }
    let margin = (k - 1) as usize;
    if name_off < margin || name_off + height + margin > name.len() {
        return Err(Error::Input(format!(
            "extended name of length {} cannot host height {height} at offset {name_off} with margin {margin}",
            name.len()
        )));
    }
    let mut denom = 0i64;
    let mut counts: BTreeMap<Word, i64> = BTreeMap::new();
    for t in 0..height {
        let p = name_off + t;
        if name[p] != 1 {
            denom += 1;
        }
        let v = Word(name[p - margin..=p + margin].to_vec());
        if v.is_all_ones() {
            continue;
        }
        *counts.entry(v).or_insert(0) += 1;
    }
    if denom == 0 {
        return Err(Error::Input("fiber never visits the support".into()));
    }
    let frequencies = counts
        .into_iter()
        .map(|(v, c)| {
            (
                v,
                crate::partition::BigRationalString(BigRational::new(
                    BigInt::from(c),
                    BigInt::from(denom),
                )),
            )
        })
        .collect();
    Ok(BlockDistribution { k, frequencies })
}

/// Outcome of classifying the fibers of a tower.
#[derive(Debug)]
pub struct Classification {
    /// μ of the support inside bad columns (the copy region).
    pub bad_mass: BigRational,
    /// Number of fiber classes, all columns.
    pub classes: usize,
    pub good_classes: usize,
    /// Largest fiber deviation seen, with the column word attaining it.
    pub worst: (BigRational, String),
    pub reference: BlockDistribution,
}

/// Enumerate the fiber classes of every column from scan-word occurrences,
/// certify completeness by exact measure accounting, and mark each class good
/// when its block empirical lies strictly within δ of the reference.
pub fn classify_fibers(
    space: &ModelSpace,
    coded: &Arc<CodedLanguage>,
    tower: &mut StageTower,
    rho: &Arc<CodedLanguage>,
    rho_meas: &CodedMeasure,
    k: i64,
    delta: &BigRational,
    scan_margin: u32,
) -> Result<Classification> {
    let reference = reference_distribution(rho_meas, k)?;
    let n = tower.n;
    let gamma_lo = coded.partition().lo;
    let rho_lo = rho.partition().lo;
    let rho_hi = rho.partition().hi;
    let gamma_hi = coded.partition().hi;
    let margin = k - 1;

    // windows of the neighborhood relative to the column origin
    let rel_lo_for = |_h: usize| (-(n as i64) + gamma_lo).min(rho_lo - margin);
    let rel_hi_for =
        |h: usize| (h as i64 - 1 + n as i64 + gamma_hi).max(h as i64 - 1 + rho_hi + margin);

    let mut depth = coded.stabilization_depth(
        2 * n + tower.columns.iter().map(|c| c.height).max().unwrap_or(1) + 2,
    )? + scan_margin;
    let pad = n + 2;
    loop {
        if depth > coded.max_depth() {
            return Err(Error::Resource(format!(
                "fiber enumeration did not close at the depth horizon {}",
                coded.max_depth()
            )));
        }
        // the coded scan and the upstairs scan sample the same positions:
        // coded position t reads base positions [t, t+span]
        let span = coded.span();
        let coded_scan = coded.scan_word(depth, pad)?;
        let up_scan = space.y_lang.scan_word(depth, pad + span)?;
        let mut all_complete = true;
        for col in tower.columns.iter_mut() {
            col.fibers.clear();
            let framed = Word::ones(n).concat(&col.word).concat(&Word::ones(n));
            let rel_lo = rel_lo_for(col.height);
            let rel_hi = rel_hi_for(col.height);
            let mut seen: BTreeSet<Word> = BTreeSet::new();
            for p1 in occurrences(&coded_scan, &framed) {
                // 1-based occurrence start: the column origin is at coded
                // position p1-1+n (0-based), hence base position +(−γ.lo)
                let origin = (p1 as i64 - 1) + n as i64 - gamma_lo;
                let lo = origin + rel_lo;
                let hi = origin + rel_hi;
                if lo < 0 || hi >= up_scan.len() as i64 {
                    continue;
                }
                seen.insert(Word(up_scan[lo as usize..=hi as usize].to_vec()));
            }
            let mut mass_sum = BigRational::zero();
            let mut fibers = Vec::new();
            for u in seen {
                let mass = space.y_meas.cylinder(&u)?.as_finite()?.clone();
                if mass.is_zero() {
                    continue; // a pad artifact, not a factor
                }
                // name: ρ-letters for positions rel_lo−ρ.lo+idx … covering
                // column positions −(k−1) … h−1+(k−1)
                let name_full = rho.code_word(&u)?;
                let full_off = (-rel_lo + rho_lo) as usize; // column pos 0 in name_full
                let start = full_off - margin as usize;
                let end = full_off + col.height + margin as usize;
                let name = Word(name_full[start..end].to_vec());
                let name_off = margin as usize;
                mass_sum += &mass;
                fibers.push(FiberClass {
                    neighborhood: u,
                    rel_lo,
                    name,
                    name_off,
                    mass,
                    deviation: BigRational::zero(),
                    good: false,
                });
            }
            if mass_sum != col.mass {
                all_complete = false;
                break;
            }
            col.fibers = fibers;
        }
        if all_complete {
            break;
        }
        depth += 1;
    }

    // classification against the reference
    let mut bad_mass = BigRational::zero();
    let mut classes = 0usize;
    let mut good_classes = 0usize;
    let mut worst = (BigRational::zero(), "-".to_string());
    for col in tower.columns.iter_mut() {
        let mut col_bad = false;
        for f in col.fibers.iter_mut() {
            classes += 1;
            let emp = fiber_empirical(&f.name, f.name_off, col.height, k)?;
            let (dev, _) = emp.deviation(&reference);
            f.good = dev < *delta;
            f.deviation = dev.clone();
            if f.good {
                good_classes += 1;
            } else {
                col_bad = true;
            }
            if dev > worst.0 {
                worst = (dev, col.word.to_string());
            }
        }
        if col_bad {
            bad_mass += BigRational::from(BigInt::from(col.k_hits as i64)) * &col.mass;
        }
    }
    Ok(Classification {
        bad_mass,
        classes,
        good_classes,
        worst,
        reference,
    })
}

/// Search for the smallest tower depth whose tower is tall enough over the
/// support and whose bad columns have support mass ≤ δ.
pub fn build_tower(
    space: &ModelSpace,
    coded: &Arc<CodedLanguage>,
    rho: &Arc<CodedLanguage>,
    rho_meas: &CodedMeasure,
    k: i64,
    delta: &BigRational,
    min_h_k: u64,
    cfg: &BuildConfig,
) -> Result<(StageTower, Classification)> {
    let mut trajectory = Vec::new();
    for n in 1..=cfg.tower_depth_cap {
        let mut tower = stage_tower(space, coded, n)?;
        if (tower.h_k as u64) < min_h_k {
            trajectory.push(format!("n={n}: h_K={} < {min_h_k}", tower.h_k));
            continue;
        }
        let cls = classify_fibers(
            space,
            coded,
            &mut tower,
            rho,
            rho_meas,
            k,
            delta,
            cfg.fiber_scan_margin,
        )?;
        if cls.bad_mass <= *delta {
            return Ok((tower, cls));
        }
        trajectory.push(format!(
            "n={n}: bad support mass {} > δ={delta}",
            cls.bad_mass
        ));
    }
    Err(Error::Resource(format!(
        "no tower met the target within depth {}; trajectory: {}",
        cfg.tower_depth_cap,
        trajectory.join("; ")
    )))
}

// ---------------------------------------------------------------------------
// Name copying.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CopyEntry {
    pub column: String,
    pub donor: String,
    pub recipient: String,
    pub mass: String,
}

/// Record of the copying step: which bad fibers received a good name, which
/// were stranded in columns without any good fiber, and the exact masses.
#[derive(Debug, Default)]
pub struct CopyLog {
    pub entries: Vec<CopyEntry>,
    pub stranded: Vec<CopyEntry>,
    pub changed_mass: BigRational,
    pub d_join: BigRational,
}

/// Reassign the labels of bad fibers levelwise to the name of a good fiber of
/// the same column; columns without a good fiber are left unchanged and
/// recorded. Returns the resulting partition and the copy log; with no bad
/// fibers the join itself is returned and the log is empty.
pub fn copy_names(
    space: &ModelSpace,
    join: &WindowPartition,
    rho: &Arc<CodedLanguage>,
    tower: &StageTower,
) -> Result<(WindowPartition, CopyLog)> {
    let mut log = CopyLog::default();
    let any_bad = tower
        .columns
        .iter()
        .any(|c| c.fibers.iter().any(|f| !f.good));
    if !any_bad {
        return Ok((join.clone(), log));
    }

    // canonical coded letter → join tuple label
    let letter_to_tuple = coded_letter_dictionary(join, rho)?;
    let y = space.y_lang.clone();

    // pieces to relabel: (clopen piece, new tuple label), and the union of
    // all relabeled pieces
    let mut pieces: Vec<(Clopen, AtomLabel)> = Vec::new();
    let mut moved = Clopen::empty();
    for col in &tower.columns {
        let donor = col.fibers.iter().find(|f| f.good);
        for f in col.fibers.iter().filter(|f| !f.good) {
            let entry = |d: &str| CopyEntry {
                column: col.word.to_string(),
                donor: d.to_string(),
                recipient: f.neighborhood.to_string(),
                mass: (BigRational::from(BigInt::from(col.height as i64)) * &f.mass).to_string(),
            };
            let Some(donor) = donor else {
                log.stranded.push(entry("-"));
                continue;
            };
            log.entries.push(entry(&donor.name.to_string()));
            for t in 0..col.height {
                let donor_letter = donor.name[donor.name_off + t];
                let own_letter = f.name[f.name_off + t];
                if donor_letter == own_letter {
                    continue;
                }
                let label = letter_to_tuple
                    .get(&donor_letter)
                    .ok_or_else(|| {
                        Error::Structural(format!("donor letter {donor_letter} has no atom"))
                    })?
                    .clone();
                // the level-t slice of this fiber tube
                let piece = Clopen::cylinder(y.as_ref(), f.rel_lo - t as i64, &f.neighborhood)?;
                log.changed_mass += &f.mass;
                moved = moved.union(y.as_ref(), &piece)?;
                pieces.push((piece, label));
            }
        }
    }
    if pieces.is_empty() {
        return Ok((join.clone(), log));
    }

    // rebuild: every finite atom minus the moved set, plus its new pieces
    let mut atoms: Vec<(AtomLabel, Clopen)> = Vec::new();
    for (label, atom) in join.atoms() {
        if label.is_infinite() {
            continue;
        }
        let mut kept = atom.difference(y.as_ref(), &moved)?;
        for (piece, l) in &pieces {
            if *l == label {
                kept = kept.union(y.as_ref(), piece)?;
            }
        }
        if !kept.is_empty_set() {
            atoms.push((label, kept));
        }
    }
    let rebuilt = WindowPartition::from_finite_atoms(space.y_lang.clone(), &atoms)?;
    log.d_join = distance(space.y_meas.as_ref(), &rebuilt, join)?;
    Ok((rebuilt, log))
}

/// Map each canonical coded letter of the classifying alphabet back to the
/// tuple label of the underlying join atom.
fn coded_letter_dictionary(
    join: &WindowPartition,
    rho: &Arc<CodedLanguage>,
) -> Result<BTreeMap<Letter, AtomLabel>> {
    let canon = rho.partition();
    let lo = join.lo.min(canon.lo);
    let hi = join.hi.max(canon.hi);
    let fine = join.align_to(lo, hi)?;
    let coarse = canon.align_to(lo, hi)?;
    let mut out: BTreeMap<Letter, AtomLabel> = BTreeMap::new();
    for (w, tuple) in fine.labels() {
        let letter_label = coarse.label_of(w)?;
        let letter = letter_label.0[0] as Letter;
        match out.get(&letter) {
            Some(prev) if prev != tuple => {
                return Err(Error::Structural(format!(
                    "coded letter {letter} covers distinct labels {prev} and {tuple}"
                )));
            }
            Some(_) => {}
            None => {
                out.insert(letter, tuple.clone());
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Derived lower partitions.
// ---------------------------------------------------------------------------

/// Keep the first `prefix_len` components of every label: the stage-`j`
/// member of the refining column under a stage-`i` top partition.
pub fn derive_lower(alpha_top: &WindowPartition, prefix_len: usize) -> Result<WindowPartition> {
    if prefix_len == 0 {
        return Err(Error::Input("label prefix must be nonempty".into()));
    }
    let mut labels = BTreeMap::new();
    for (w, l) in alpha_top.labels() {
        if l.0.len() < prefix_len {
            return Err(Error::Input(format!(
                "label {l} is shorter than the prefix {prefix_len}"
            )));
        }
        labels.insert(w.clone(), AtomLabel(l.0[..prefix_len].to_vec()));
    }
    WindowPartition::new(
        alpha_top.language().clone(),
        alpha_top.lo,
        alpha_top.hi,
        labels,
    )
}

// ---------------------------------------------------------------------------
// Uniformity thresholds.
// ---------------------------------------------------------------------------

/// The empirically found uniformity threshold: the least `H` such that every
/// scanned section with at least `H` support visits stays within ε.
#[derive(Debug, Serialize)]
pub struct UniformityEvidence {
    pub n_value: u64,
    pub max_hits: u64,
    pub cert: UniformityCertificate,
}

/// Scan all sections at the given depth and return the least passing `H`,
/// guarding against a vacuous answer: sections with at least that many
/// visits must actually occur in the scan.
pub fn empirical_n(
    meas: &dyn InvariantMeasure,
    k: i64,
    eps: &BigRational,
    depth: u32,
) -> Result<UniformityEvidence> {
    if k < 1 {
        return Err(Error::Input("block parameter k must be ≥ 1".into()));
    }
    let probe = uniformity_check(meas, 1, k, eps, &SectionSource::Windows { depth })?;
    let lang = meas.language();
    let scan = lang.scan_word(depth, 2 * k as usize + 2)?;
    // the largest counted range of any section: positions 0 ..= m-k-1
    let m = scan.len();
    let cut = m.saturating_sub(k as usize);
    let max_hits = scan[..cut].iter().filter(|&&a| a != 1).count() as u64;
    if probe.minimal_h > max_hits {
        return Err(Error::Resource(format!(
            "no passing visit count within the scan: least candidate {} exceeds the {} visits available; worst section {:?}",
            probe.minimal_h, max_hits, probe.worst
        )));
    }
    // re-certify at the found threshold; the minimal h must reproduce
    let cert = uniformity_check(meas, probe.minimal_h, k, eps, &SectionSource::Windows { depth })?;
    if !cert.verdict || cert.minimal_h != probe.minimal_h {
        return Err(Error::Structural(format!(
            "threshold {} did not re-certify (verdict {}, minimal {})",
            probe.minimal_h, cert.verdict, cert.minimal_h
        )));
    }
    Ok(UniformityEvidence {
        n_value: cert.minimal_h,
        max_hits,
        cert,
    })
}

/// `min aᵢ/bᵢ ≤ Σaᵢ/Σbᵢ ≤ max aᵢ/bᵢ` for positive denominators: the exact
/// mediant bounds used by the threshold argument.
pub fn mediant_bounds(
    fractions: &[(BigInt, BigInt)],
) -> Result<(BigRational, BigRational, BigRational)> {
    if fractions.is_empty() {
        return Err(Error::Input("mediant of an empty family".into()));
    }
    let mut num_sum = BigInt::zero();
    let mut den_sum = BigInt::zero();
    let mut lo: Option<BigRational> = None;
    let mut hi: Option<BigRational> = None;
    for (a, b) in fractions {
        if !b.is_positive() {
            return Err(Error::Input("mediant denominators must be positive".into()));
        }
        let q = BigRational::new(a.clone(), b.clone());
        lo = Some(match lo {
            None => q.clone(),
            Some(v) => v.min(q.clone()),
        });
        hi = Some(match hi {
            None => q.clone(),
            Some(v) => v.max(q),
        });
        num_sum += a;
        den_sum += b;
    }
    let mid = BigRational::new(num_sum, den_sum);
    let (lo, hi) = (lo.expect("nonempty"), hi.expect("nonempty"));
    if lo > mid || mid > hi {
        return Err(Error::Structural(format!(
            "mediant bounds violated: {lo} ≤ {mid} ≤ {hi}"
        )));
    }
    Ok((lo, mid, hi))
}

/// The conservative visit-count bound from the fiber-averaging argument,
/// with its scan cross-check; vacuous outcomes are reported, not errors.
#[derive(Debug, Serialize)]
pub struct ProofBound {
    pub m0: Option<u64>,
    pub bound: Option<u64>,
    pub fiber_ratio: String,
    pub max_fiber_dev: String,
    pub vacuous: bool,
    pub note: String,
    pub crosscheck: Option<UniformityCertificate>,
}

/// From the good fibers of a tower: the least `m₀` with
/// `(4/(m₀−2))·(max visits / min visits) < δ − max fiber deviation`, and the
/// bound `M = m₀ · max visits`. Sections with ≥ M visits decompose into at
/// least m₀ whole fibers, so the mediant bounds force their deviation under δ.
pub fn proof_bound_m(
    tower: &StageTower,
    delta: &BigRational,
    meas: &dyn InvariantMeasure,
    depth: u32,
) -> Result<ProofBound> {
    let mut max_hits = 0u64;
    let mut min_hits = u64::MAX;
    let mut max_dev = BigRational::zero();
    let mut any = false;
    for col in &tower.columns {
        for f in &col.fibers {
            if !f.good {
                continue;
            }
            any = true;
            max_hits = max_hits.max(col.k_hits as u64);
            min_hits = min_hits.min(col.k_hits as u64);
            max_dev = max_dev.max(f.deviation.clone());
        }
    }
    if !any {
        return Ok(ProofBound {
            m0: None,
            bound: None,
            fiber_ratio: "-".into(),
            max_fiber_dev: "-".into(),
            vacuous: true,
            note: "no good fibers".into(),
            crosscheck: None,
        });
    }
    let ratio = BigRational::new(BigInt::from(max_hits), BigInt::from(min_hits));
    let margin = delta.clone() - &max_dev;
    if !margin.is_positive() {
        return Ok(ProofBound {
            m0: None,
            bound: None,
            fiber_ratio: ratio.to_string(),
            max_fiber_dev: max_dev.to_string(),
            vacuous: true,
            note: "fiber deviations leave no margin under δ".into(),
            crosscheck: None,
        });
    }
    // least m ≥ 3 with 4·ratio < margin·(m−2): m−2 = ⌊4·ratio/margin⌋ + 1
    let four_r = BigRational::from(BigInt::from(4)) * &ratio;
    let quotient = (four_r / &margin).floor().to_integer();
    let m0_big = (quotient + BigInt::from(3)).max(BigInt::from(3));
    let Ok(m0) = u64::try_from(&m0_big) else {
        return Ok(ProofBound {
            m0: None,
            bound: None,
            fiber_ratio: ratio.to_string(),
            max_fiber_dev: max_dev.to_string(),
            vacuous: true,
            note: format!("threshold multiplier {m0_big} exceeds the integer range"),
            crosscheck: None,
        });
    };
    let Some(bound) = m0.checked_mul(max_hits) else {
        return Ok(ProofBound {
            m0: Some(m0),
            bound: None,
            fiber_ratio: ratio.to_string(),
            max_fiber_dev: max_dev.to_string(),
            vacuous: true,
            note: "visit bound exceeds the integer range".into(),
            crosscheck: None,
        });
    };
    // cross-check the implication on the scanned sections: every section with
    // ≥ M visits must deviate < δ in letter frequency
    let cert = uniformity_check(meas, bound, 1, delta, &SectionSource::Windows { depth })?;
    let scan = meas.language().scan_word(depth, 4)?;
    let available = scan[..scan.len().saturating_sub(1)]
        .iter()
        .filter(|&&a| a != 1)
        .count() as u64;
    let vacuous = available < bound;
    let note = if vacuous {
        format!("no scanned section reaches {bound} visits; bound vacuous at this scale")
    } else if cert.verdict {
        "implication verified on all scanned sections".into()
    } else {
        "implication failed on a scanned section".into()
    };
    Ok(ProofBound {
        m0: Some(m0),
        bound: Some(bound),
        fiber_ratio: ratio.to_string(),
        max_fiber_dev: max_dev.to_string(),
        vacuous,
        note,
        crosscheck: Some(cert),
    })
}

// ---------------------------------------------------------------------------
// Stages and the cross-stage ledger.
// ---------------------------------------------------------------------------

/// Everything produced at one stage of the construction.
pub struct Stage {
    pub i: usize,
    pub n_exp: u32,
    pub delta: BigRational,
    pub r: usize,
    pub gamma: WindowPartition,
    pub beta: WindowPartition,
    pub tau: WindowPartition,
    pub join: WindowPartition,
    pub tower: StageTower,
    pub classification: Classification,
    /// `α_{i,1} … α_{i,i}`; the last entry is the top partition.
    pub alphas: Vec<WindowPartition>,
    pub copy_log: CopyLog,
    pub uniformity: UniformityEvidence,
    pub eps_required: BigRational,
    pub eps_surrogate: BigRational,
    pub proof: ProofBound,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    pub stage: usize,
    pub property: String,
    pub required: String,
    pub achieved: String,
    pub pass: bool,
}

impl LedgerEntry {
    fn new(stage: usize, property: &str, required: String, achieved: String, pass: bool) -> Self {
        LedgerEntry {
            stage,
            property: property.into(),
            required,
            achieved,
            pass,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangleResult {
    pub point: String,
    pub stage: usize,
    pub pass: bool,
    pub detail: String,
}

/// The completed construction: the stages, the property ledger, the
/// commuting-triangle results, and the serializable report.
pub struct BuildOutcome {
    pub stages: Vec<Stage>,
    pub ledger: Vec<LedgerEntry>,
    pub triangle: Vec<TriangleResult>,
    pub pass: bool,
}

/// Exact dyadic stage parameters: the least exponent `n` making `1/2^n`
/// smaller than a third of the least finite block-atom ratio, and the largest
/// dyadic δ strictly under the stage bound.
pub fn choose_parameters(
    meas: &dyn InvariantMeasure,
    join: &WindowPartition,
    i: usize,
    r: usize,
    prev_n: u32,
) -> Result<(u32, BigRational)> {
    let spread = i as i64 - 1;
    let blocks = join.iterated_join(-spread, spread)?;
    let support = blocks.finite_support();
    let mu_k = meas.clopen(&support)?.as_finite()?.clone();
    if mu_k.is_zero() {
        return Err(Error::Structural("the support has measure zero".into()));
    }
    let mut min_ratio: Option<BigRational> = None;
    for (label, atom) in blocks.atoms() {
        if label.is_infinite() {
            continue;
        }
        let ratio = meas.clopen(&atom)?.as_finite()?.clone() / &mu_k;
        min_ratio = Some(match min_ratio {
            None => ratio,
            Some(v) => v.min(ratio),
        });
    }
    let min_ratio = min_ratio.ok_or_else(|| Error::Structural("no finite block atom".into()))?;
    let third = min_ratio / BigInt::from(3);
    let mut n = if i == 1 { 1 } else { prev_n + 1 };
    while BigRational::new(BigInt::one(), BigInt::from(2).pow(n)) >= third {
        n += 1;
        if n > 64 {
            return Err(Error::Resource("stage exponent exceeds 64".into()));
        }
    }
    // stage bound for δ
    let two_pow_n = BigInt::from(2).pow(n);
    let bound = if i == 1 {
        let b = BigRational::new(BigInt::one(), BigInt::from(4) * &two_pow_n);
        let kb = b.clone() * &BigRational::from(BigInt::one()).min(mu_k.clone()); // min(1, μK)·b
        kb.min(BigRational::new(BigInt::one(), BigInt::from(8)))
    } else {
        let r_pow = BigInt::from(r as i64).pow(2 * i as u32 + 3);
        let b = BigRational::new(BigInt::one(), BigInt::from(12) * &two_pow_n * r_pow);
        let kb = b.clone() * &BigRational::from(BigInt::one()).min(mu_k.clone());
        kb.min(BigRational::new(
            BigInt::one(),
            BigInt::from(2).pow(i as u32 + 2),
        ))
    };
    let mut e = 0u32;
    while BigRational::new(BigInt::one(), BigInt::from(2).pow(e)) >= bound {
        e += 1;
        if e > 200 {
            return Err(Error::Resource("stage δ exponent exceeds 200".into()));
        }
    }
    Ok((n, BigRational::new(BigInt::one(), BigInt::from(2).pow(e))))
}

/// Run the staged construction to the configured stage count, recording the
/// property ledger and the commuting-triangle results.
pub fn run_stages(space: &ModelSpace, cfg: &BuildConfig) -> Result<BuildOutcome> {
    if cfg.stages == 0 {
        return Err(Error::Input("need at least one stage".into()));
    }
    let mut d_sets = Vec::new();
    for i in 1..=cfg.stages {
        d_sets.push(Clopen::cylinder(space.z_lang.as_ref(), 0, &cfg.d_word(i)?)?);
    }
    let mut stages: Vec<Stage> = Vec::new();
    let mut ledger: Vec<LedgerEntry> = Vec::new();

    for i in 1..=cfg.stages {
        let gamma = gamma_sequence(&space.z_lang, &d_sets, i)?;
        let beta = space.pullback_partition(&gamma)?;
        let support = beta.finite_support();
        let e_word = cfg.e_word(i)?;
        let e_set = Clopen::cylinder(space.y_lang.as_ref(), 0, &e_word)?;
        if e_set.is_empty_set() {
            return Err(Error::Input(format!(
                "approximation cylinder {e_word} is not in the upstairs language"
            )));
        }
        if !e_set.is_subset(space.y_lang.as_ref(), &support)? {
            return Err(Error::Input(format!(
                "approximation set {e_word} leaves the common support"
            )));
        }
        let rest = support.difference(space.y_lang.as_ref(), &e_set.extend_to(
            space.y_lang.as_ref(),
            support.lo.min(e_set.lo),
            support.hi.max(e_set.hi),
        )?)?;
        let tau = WindowPartition::from_finite_atoms(
            space.y_lang.clone(),
            &[
                (AtomLabel::single(2), e_set.clone()),
                (AtomLabel::single(3), rest),
            ],
        )?;
        let join = match stages.last() {
            None => tau.join(&beta)?,
            Some(prev) => prev.alphas.last().expect("stage has partitions").join(&tau)?.join(&beta)?,
        };
        let r = if i == 1 { 1 } else { join.num_atoms() };
        let prev_n = stages.last().map(|s| s.n_exp).unwrap_or(0);
        let (n_exp, delta) = choose_parameters(space.y_meas.as_ref(), &join, i, r, prev_n)?;

        let coded_gamma = CodedLanguage::new(&gamma)?;
        let rho = CodedLanguage::new(&join)?;
        let rho_meas = CodedMeasure::new(space.y_meas.clone(), rho.clone());
        let min_h_k = stages.last().map(|s| s.uniformity.n_value).unwrap_or(1);
        let (tower, classification) = build_tower(
            space,
            &coded_gamma,
            &rho,
            &rho_meas,
            i as i64,
            &delta,
            min_h_k,
            cfg,
        )?;
        let (alpha_top, copy_log) = copy_names(space, &join, &rho, &tower)?;

        // α_{i,1} … α_{i,i} by label-prefix projection
        let mut alphas = Vec::new();
        for j in 1..=i {
            if j == i {
                alphas.push(alpha_top.clone());
            } else {
                alphas.push(derive_lower(&alpha_top, 2 * j)?);
            }
        }

        let eps_surrogate = BigRational::new(BigInt::one(), BigInt::from(2).pow(n_exp));
        let eps_required = BigRational::new(
            BigInt::one(),
            BigInt::from(2).pow(n_exp) * BigInt::from(r as i64).pow(2 * i as u32),
        );
        let top_coded = CodedLanguage::new(&alpha_top)?;
        let top_meas = CodedMeasure::new(space.y_meas.clone(), top_coded.clone());
        let uniformity = empirical_n(
            top_meas.as_ref(),
            i as i64,
            &eps_surrogate,
            cfg.uniformity_depth(i),
        )?;
        let proof = proof_bound_m(
            &tower,
            &delta,
            top_meas.as_ref(),
            cfg.uniformity_depth(i),
        )?;

        let stage = Stage {
            i,
            n_exp,
            delta,
            r,
            gamma,
            beta,
            tau,
            join,
            tower,
            classification,
            alphas,
            copy_log,
            uniformity,
            eps_required,
            eps_surrogate,
            proof,
        };
        record_stage_ledger(space, cfg, &stages, &stage, &mut ledger)?;
        stages.push(stage);
    }

    let triangle = triangle_check(space, &stages, cfg)?;
    for t in &triangle {
        ledger.push(LedgerEntry::new(
            t.stage,
            "triangle",
            format!("commuting letters on [−{0},{0}]", cfg.triangle_radius),
            t.detail.clone(),
            t.pass,
        ));
    }
    let pass = ledger.iter().all(|e| e.pass);
    Ok(BuildOutcome {
        stages,
        ledger,
        triangle,
        pass,
    })
}

/// Ledger checks for a freshly built stage against the earlier ones.
fn record_stage_ledger(
    space: &ModelSpace,
    cfg: &BuildConfig,
    prev_stages: &[Stage],
    stage: &Stage,
    ledger: &mut Vec<LedgerEntry>,
) -> Result<()> {
    let i = stage.i;
    let meas = space.y_meas.as_ref();

    // (i) the in-stage refinement chain α_{i,1} ≼ … ≼ α_{i,i}
    let mut chain_ok = true;
    let mut chain_note = String::new();
    for j in 1..stage.alphas.len() {
        match stage.alphas[j].refinement_map(&stage.alphas[j - 1]) {
            Ok(_) => {}
            Err(e) => {
                chain_ok = false;
                chain_note = format!("{} does not refine {}: {e}", j + 1, j);
                break;
            }
        }
    }
    ledger.push(LedgerEntry::new(
        i,
        "(i) refinement chain",
        "each higher partition refines the lower".into(),
        if chain_ok { format!("{} links verified", stage.alphas.len() - 1) } else { chain_note },
        chain_ok,
    ));

    // (ii) β_j ≼ α_{i,j}, with the connecting maps stable across stages
    let mut beta_ok = true;
    let mut beta_note = Vec::new();
    for j in 1..=i {
        let beta_j = if j == i {
            &stage.beta
        } else {
            &prev_stages[j - 1].beta
        };
        match stage.alphas[j - 1].refinement_map(beta_j) {
            Ok(map) => {
                if let Some(prev) = prev_stages.last() {
                    if j < i {
                        let prev_map = prev.alphas[j - 1].refinement_map(beta_j)?;
                        let stable = prev_map
                            .iter()
                            .all(|(k, v)| map.get(k).map_or(true, |cur| cur == v));
                        if !stable {
                            beta_ok = false;
                            beta_note.push(format!("stage-{j} connecting map moved"));
                        }
                    }
                }
            }
            Err(e) => {
                beta_ok = false;
                beta_note.push(format!("α_{{{i},{j}}} does not refine β_{j}: {e}"));
            }
        }
    }
    ledger.push(LedgerEntry::new(
        i,
        "(ii) factor refinement",
        "β_j ≼ α_{i,j} with stable connecting maps".into(),
        if beta_ok { format!("{i} maps verified") } else { beta_note.join("; ") },
        beta_ok,
    ));

    // (iii) E_j approximable by translates of α_{i,j}-atoms within ε_{i,j}
    let mut approx_ok = true;
    let mut approx_note = Vec::new();
    for j in 1..=i {
        let e_word = cfg.e_word(j)?;
        let e_set = Clopen::cylinder(space.y_lang.as_ref(), 0, &e_word)?;
        let eps = BigRational::new(BigInt::one(), BigInt::from(2).pow(j as u32))
            - BigRational::new(BigInt::one(), BigInt::from(2).pow(i as u32 + 1));
        match crate::partition::alpha_t_approx(
            meas,
            &stage.alphas[j - 1],
            &e_set,
            &eps,
            cfg.offset_bound,
        ) {
            Ok((_, err)) => {
                approx_note.push(format!("E_{j}: error {err} ≤ {eps}"));
            }
            Err(e) => {
                approx_ok = false;
                approx_note.push(format!("E_{j}: {e}"));
            }
        }
    }
    ledger.push(LedgerEntry::new(
        i,
        "(iii) atom approximation",
        "E_j within ε_{i,j} of a translate union".into(),
        approx_note.join("; "),
        approx_ok,
    ));

    // (iv) Cauchy step: d(α_{i-1,j}, α_{i,j}) < 1/2^{n_i}, and the copied
    // mass stays under δ_i
    if let Some(prev) = prev_stages.last() {
        let bound = BigRational::new(BigInt::one(), BigInt::from(2).pow(stage.n_exp));
        let mut dist_ok = true;
        let mut dist_note = Vec::new();
        for j in 1..i {
            let d = distance(meas, &prev.alphas[j - 1], &stage.alphas[j - 1])?;
            if d >= bound {
                dist_ok = false;
            }
            dist_note.push(format!("j={j}: d={d}"));
        }
        ledger.push(LedgerEntry::new(
            i,
            "(iv) Cauchy step",
            format!("each d < {bound}"),
            dist_note.join("; "),
            dist_ok,
        ));
    }
    let copy_ok = stage.copy_log.changed_mass <= stage.delta && stage.copy_log.stranded.is_empty();
    ledger.push(LedgerEntry::new(
        i,
        "copy change",
        format!("moved mass ≤ δ={}", stage.delta),
        format!(
            "moved {}; stranded {}",
            stage.copy_log.changed_mass,
            stage.copy_log.stranded.len()
        ),
        copy_ok,
    ));

    // (v) measurability: every label is a tuple of coordinate labels from the
    // τ/β construction path
    let expect_len = 2 * i;
    let shape_ok = stage
        .alphas
        .last()
        .expect("stage has partitions")
        .labels()
        .values()
        .all(|l| l.0.len() == expect_len);
    ledger.push(LedgerEntry::new(
        i,
        "(v) construction shape",
        format!("labels are {expect_len}-component τ/β tuples"),
        format!("verified over {} words", stage.alphas.last().unwrap().labels().len()),
        shape_ok,
    ));

    // (vi) fiber-name inheritance: the stage-j towers, re-read through
    // α_{i,j}, only use names they already had at stage j
    let mut inherit_ok = true;
    let mut inherit_note = Vec::new();
    for (j, prev) in prev_stages.iter().enumerate().map(|(idx, s)| (idx + 1, s)) {
        let lower_coded = CodedLanguage::new(&stage.alphas[j - 1])?;
        let own_coded = CodedLanguage::new(prev.alphas.last().expect("partitions"))?;
        let mut own_names: BTreeSet<Word> = BTreeSet::new();
        let mut new_names: BTreeSet<Word> = BTreeSet::new();
        for col in &prev.tower.columns {
            for f in &col.fibers {
                own_names.insert(fiber_name_under(&own_coded, f, col.height, j)?);
                new_names.insert(fiber_name_under(&lower_coded, f, col.height, j)?);
            }
        }
        if !new_names.is_subset(&own_names) {
            inherit_ok = false;
            inherit_note.push(format!("stage-{j} tower gained a name"));
        }
    }
    ledger.push(LedgerEntry::new(
        i,
        "(vi) name inheritance",
        "lower readings reuse stage names".into(),
        if inherit_ok {
            format!("{} towers re-read", prev_stages.len())
        } else {
            inherit_note.join("; ")
        },
        inherit_ok,
    ));

    // (vii) uniformity at the stage exponent; the required block exponent is
    // recorded next to the certified one
    let u = &stage.uniformity;
    ledger.push(LedgerEntry::new(
        i,
        "(vii) uniformity",
        format!(
            "block ε={}; certified at ε={}",
            stage.eps_required, stage.eps_surrogate
        ),
        format!(
            "N={} of {} available visits; worst retained deviation {}",
            u.n_value,
            u.max_hits,
            u.cert
                .worst
                .as_ref()
                .map(|w| w.deviation.clone())
                .unwrap_or_else(|| "-".into())
        ),
        u.cert.verdict && u.n_value <= u.max_hits,
    ));

    // tower accounting: goodness coverage and the height floor
    let cover_ok = stage.classification.bad_mass <= stage.delta;
    ledger.push(LedgerEntry::new(
        i,
        "tower goodness",
        format!("bad support mass ≤ δ={}", stage.delta),
        format!(
            "bad mass {}; worst fiber deviation {} at column {}",
            stage.classification.bad_mass, stage.classification.worst.0, stage.classification.worst.1
        ),
        cover_ok,
    ));
    if let Some(prev) = prev_stages.last() {
        let tall_ok = stage.tower.h_k as u64 >= prev.uniformity.n_value;
        ledger.push(LedgerEntry::new(
            i,
            "tower height",
            format!("h_K ≥ N_{} = {}", i - 1, prev.uniformity.n_value),
            format!("h_K = {}", stage.tower.h_k),
            tall_ok,
        ));
    }
    Ok(())
}

/// The name of a fiber read through an arbitrary partition coding, over the
/// bare column positions.
fn fiber_name_under(
    coded: &Arc<CodedLanguage>,
    f: &FiberClass,
    height: usize,
    _stage: usize,
) -> Result<Word> {
    let p = coded.partition();
    let full = coded.code_word(&f.neighborhood)?;
    // output position t reads the window at point position rel_lo + t − p.lo
    let start = (-f.rel_lo + p.lo) as usize;
    if start + height > full.len() {
        return Err(Error::Input("neighborhood too short for this coding".into()));
    }
    Ok(Word(full[start..start + height].to_vec()))
}

// ---------------------------------------------------------------------------
// The commuting triangle on representable points.
// ---------------------------------------------------------------------------

/// Standard test points: the fixed point and compact perturbations of it,
/// shifted and unshifted. Points that leave the language at the checking
/// radius are skipped with a note.
pub fn standard_points(_space: &ModelSpace) -> Vec<(String, Point)> {
    vec![
        ("fixed".to_string(), Point::FixedPoint),
        ("compact-2".to_string(), Point::compact("", "2").expect("parses")),
        ("compact-212".to_string(), Point::compact("", "212").expect("parses")),
        (
            "compact-2-shifted".to_string(),
            Point::compact("", "2").expect("parses").shifted(2),
        ),
    ]
}

/// Verify, letter by letter on a window, that coding by the top partition and
/// projecting equals coding by the factor partition, equals coding the
/// downstairs image: the triangle of name maps commutes on the point.
pub fn triangle_check(
    space: &ModelSpace,
    stages: &[Stage],
    cfg: &BuildConfig,
) -> Result<Vec<TriangleResult>> {
    let radius = cfg.triangle_radius;
    let mut out = Vec::new();
    for (label, point) in standard_points(space) {
        // validity horizon: the largest window the checks will read
        let max_span = stages
            .iter()
            .map(|s| s.alphas.last().unwrap().hi.max(s.gamma.hi))
            .max()
            .unwrap_or(1);
        let ok = point.valid_at(space.y_lang.as_ref(), radius + max_span + 1)?;
        if !ok {
            out.push(TriangleResult {
                point: label.clone(),
                stage: 0,
                pass: true,
                detail: "point leaves the language at this radius; skipped".into(),
            });
            continue;
        }
        for stage in stages {
            let alpha = stage.alphas.last().expect("partitions");
            let f_map = alpha.refinement_map(&stage.beta)?;
            let mut pass = true;
            let mut detail = format!("radius {radius} agreed");
            'positions: for t in -radius..=radius {
                let aw = point.window(t + alpha.lo, t + alpha.hi)?;
                let a_label = alpha.label_of(&aw)?;
                let via_f = f_map
                    .get(a_label)
                    .ok_or_else(|| Error::Structural(format!("no image for label {a_label}")))?;
                let bw = point.window(t + stage.beta.lo, t + stage.beta.hi)?;
                let b_label = stage.beta.label_of(&bw)?;
                let zw = space.code.apply_word(&point.window(t + stage.gamma.lo, t + stage.gamma.hi)?)?;
                let g_label = stage.gamma.label_of(&zw)?;
                if via_f != b_label || b_label != g_label {
                    pass = false;
                    detail = format!(
                        "position {t}: α↦{via_f}, β={b_label}, γ={g_label}"
                    );
                    break 'positions;
                }
            }
            out.push(TriangleResult {
                point: label.clone(),
                stage: stage.i,
                pass,
                detail,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::parse_rational;
    use crate::words::Substitution;

    fn default_space() -> ModelSpace {
        ModelSpace::identity(SubstitutionLanguage::new(Substitution::builtin_default()))
    }

    struct StageOne {
        tau: WindowPartition,
        join: WindowPartition,
        coded: Arc<CodedLanguage>,
        rho: Arc<CodedLanguage>,
        rho_meas: Arc<CodedMeasure>,
    }

    fn stage_one(space: &ModelSpace) -> StageOne {
        let d = Clopen::cylinder(space.z_lang.as_ref(), 0, &Word::parse("2").unwrap()).unwrap();
        let gamma = gamma_sequence(&space.z_lang, &[d], 1).unwrap();
        let beta = space.pullback_partition(&gamma).unwrap();
        let support = beta.finite_support();
        let e_set = Clopen::cylinder(space.y_lang.as_ref(), 0, &Word::parse("2").unwrap()).unwrap();
        let rest = support
            .difference(
                space.y_lang.as_ref(),
                &e_set
                    .extend_to(space.y_lang.as_ref(), support.lo, support.hi)
                    .unwrap(),
            )
            .unwrap();
        let tau = WindowPartition::from_finite_atoms(
            space.y_lang.clone(),
            &[(AtomLabel::single(2), e_set), (AtomLabel::single(3), rest)],
        )
        .unwrap();
        let join = tau.join(&beta).unwrap();
        let coded = CodedLanguage::new(&gamma).unwrap();
        let rho = CodedLanguage::new(&join).unwrap();
        let rho_meas = CodedMeasure::new(space.y_meas.clone(), rho.clone());
        StageOne { tau, join, coded, rho, rho_meas }
    }

    #[test]
    fn stage_towers_have_exact_support_accounting() {
        let space = default_space();
        let s = stage_one(&space);
        let expect = [
            (1usize, 12usize, 10usize, "1/4"),
            (2, 26, 20, "1/8"),
            (3, 28, 20, "1/8"),
            (4, 58, 40, "1/16"),
        ];
        for (n, height, k_hits, mass) in expect {
            let tower = stage_tower(&space, &s.coded, n).unwrap();
            assert_eq!(tower.columns.len(), 1, "n={n}");
            assert_eq!(tower.h_k, k_hits);
            let col = &tower.columns[0];
            assert_eq!(col.height, height, "n={n}");
            assert_eq!(col.k_hits, k_hits, "n={n}");
            assert_eq!(col.mass, parse_rational(mass).unwrap(), "n={n}");
        }
    }

    #[test]
    fn fibers_match_the_reference_exactly() {
        let space = default_space();
        let s = stage_one(&space);
        let delta = parse_rational("1/128").unwrap();
        // (tower depth, block parameter, expected class count)
        for (n, k, classes) in [(1usize, 1i64, 2usize), (2, 2, 1), (3, 3, 2)] {
            let mut tower = stage_tower(&space, &s.coded, n).unwrap();
            let cls = classify_fibers(
                &space, &s.coded, &mut tower, &s.rho, &s.rho_meas, k, &delta, 2,
            )
            .unwrap();
            assert_eq!(cls.classes, classes, "n={n} k={k}");
            assert_eq!(cls.good_classes, classes, "n={n} k={k}");
            assert!(cls.bad_mass.is_zero(), "n={n} k={k}");
            assert!(cls.worst.0.is_zero(), "n={n} k={k}");
            for col in &tower.columns {
                let total: BigRational = col.fibers.iter().map(|f| f.mass.clone()).sum();
                assert_eq!(total, col.mass);
            }
        }
    }

    #[test]
    fn stage_one_parameters_are_dyadic() {
        let space = default_space();
        let s = stage_one(&space);
        let (n, delta) = choose_parameters(space.y_meas.as_ref(), &s.join, 1, 1, 0).unwrap();
        assert_eq!(n, 4);
        assert_eq!(delta, parse_rational("1/128").unwrap());
    }

    #[test]
    fn empirical_threshold_finds_the_least_passing_count() {
        let space = default_space();
        let s = stage_one(&space);
        let meas = CodedMeasure::new(space.y_meas.clone(), s.rho.clone());
        let eps = parse_rational("1/16").unwrap();
        let ev = empirical_n(meas.as_ref(), 1, &eps, 9).unwrap();
        assert_eq!(ev.n_value, 12);
        assert_eq!(ev.max_hits, 1280);
        assert!(ev.cert.verdict);
        // block ratios over whole tiles are exactly uniform, so even an
        // absurd tolerance is met at the full scan for single letters
        let tiny = parse_rational("1/1000000000").unwrap();
        let edge = empirical_n(meas.as_ref(), 1, &tiny, 9).unwrap();
        assert_eq!(edge.n_value, edge.max_hits);
        // longer blocks see the scan edges, and no section passes
        match empirical_n(meas.as_ref(), 2, &tiny, 9) {
            Err(Error::Resource(_)) => {}
            other => panic!("expected a resource error, got {other:?}"),
        }
    }

    #[test]
    fn proof_bound_is_conservative_and_reported_vacuous() {
        let space = default_space();
        let s = stage_one(&space);
        let delta = parse_rational("1/128").unwrap();
        let mut tower = stage_tower(&space, &s.coded, 1).unwrap();
        classify_fibers(&space, &s.coded, &mut tower, &s.rho, &s.rho_meas, 1, &delta, 2).unwrap();
        let meas = CodedMeasure::new(space.y_meas.clone(), s.rho.clone());
        let pb = proof_bound_m(&tower, &delta, meas.as_ref(), 9).unwrap();
        assert_eq!(pb.m0, Some(515));
        assert_eq!(pb.bound, Some(5150));
        assert!(pb.vacuous);
        let cert = pb.crosscheck.unwrap();
        assert!(cert.verdict);
    }

    #[test]
    fn copying_is_a_noop_when_every_fiber_is_good() {
        let space = default_space();
        let s = stage_one(&space);
        let delta = parse_rational("1/128").unwrap();
        let mut tower = stage_tower(&space, &s.coded, 1).unwrap();
        classify_fibers(&space, &s.coded, &mut tower, &s.rho, &s.rho_meas, 1, &delta, 2).unwrap();
        let (rebuilt, log) = copy_names(&space, &s.join, &s.rho, &tower).unwrap();
        assert!(log.entries.is_empty());
        assert!(log.stranded.is_empty());
        assert!(log.changed_mass.is_zero());
        assert!(log.d_join.is_zero());
        assert!(distance(space.y_meas.as_ref(), &rebuilt, &s.join).unwrap().is_zero());
    }

    #[test]
    fn copying_moves_tube_pieces_and_doubles_in_distance() {
        let space = default_space();
        let s = stage_one(&space);
        let delta = parse_rational("1/128").unwrap();
        let mut tower = stage_tower(&space, &s.coded, 1).unwrap();
        classify_fibers(&space, &s.coded, &mut tower, &s.rho, &s.rho_meas, 1, &delta, 2).unwrap();
        let col = &mut tower.columns[0];
        assert_eq!(col.fibers.len(), 2);
        // declare one fiber bad and hand the other a name with two levels
        // swapped, forcing a genuine relabeling of the bad fiber's tube
        col.fibers[0].good = false;
        let donor = &mut col.fibers[1];
        let a = donor.name[donor.name_off + 1];
        let b = donor.name[donor.name_off + 2];
        assert_ne!(a, b);
        let mut letters = donor.name.0.clone();
        letters[donor.name_off + 1] = b;
        letters[donor.name_off + 2] = a;
        donor.name = Word(letters);
        let recipient_mass = tower.columns[0].fibers[0].mass.clone();
        let (rebuilt, log) = copy_names(&space, &s.join, &s.rho, &tower).unwrap();
        assert_eq!(log.entries.len(), 1);
        assert!(log.stranded.is_empty());
        let two = BigRational::from(BigInt::from(2));
        assert_eq!(log.changed_mass, two.clone() * &recipient_mass);
        assert_eq!(log.d_join, two.clone() * &log.changed_mass);
        assert_eq!(
            distance(space.y_meas.as_ref(), &rebuilt, &s.join).unwrap(),
            log.d_join
        );
    }

    #[test]
    fn stranded_fibers_are_recorded_without_change() {
        let space = default_space();
        let s = stage_one(&space);
        let delta = parse_rational("1/128").unwrap();
        let mut tower = stage_tower(&space, &s.coded, 1).unwrap();
        classify_fibers(&space, &s.coded, &mut tower, &s.rho, &s.rho_meas, 1, &delta, 2).unwrap();
        for f in tower.columns[0].fibers.iter_mut() {
            f.good = false;
        }
        let (rebuilt, log) = copy_names(&space, &s.join, &s.rho, &tower).unwrap();
        assert_eq!(log.stranded.len(), 2);
        assert!(log.entries.is_empty());
        assert!(log.changed_mass.is_zero());
        assert!(distance(space.y_meas.as_ref(), &rebuilt, &s.join).unwrap().is_zero());
    }

    #[test]
    fn label_prefixes_recover_the_coarser_partition() {
        let space = default_space();
        let s = stage_one(&space);
        let tau_part = derive_lower(&s.join, 1).unwrap();
        assert!(distance(space.y_meas.as_ref(), &tau_part, &s.tau).unwrap().is_zero());
        let full = derive_lower(&s.join, 2).unwrap();
        assert!(distance(space.y_meas.as_ref(), &full, &s.join).unwrap().is_zero());
        assert!(derive_lower(&s.join, 0).is_err());
        assert!(derive_lower(&s.join, 3).is_err());
    }

    #[test]
    fn mediant_stays_between_the_extremes() {
        let f = |a: i64, b: i64| (BigInt::from(a), BigInt::from(b));
        let (lo, mid, hi) = mediant_bounds(&[f(1, 2), f(1, 3)]).unwrap();
        assert_eq!(lo, parse_rational("1/3").unwrap());
        assert_eq!(mid, parse_rational("2/5").unwrap());
        assert_eq!(hi, parse_rational("1/2").unwrap());
        let (lo, mid, hi) = mediant_bounds(&[f(3, 7)]).unwrap();
        assert_eq!(lo, mid);
        assert_eq!(mid, hi);
        assert_eq!(hi, parse_rational("3/7").unwrap());
        assert!(mediant_bounds(&[]).is_err());
        assert!(mediant_bounds(&[f(1, 0)]).is_err());
        assert!(mediant_bounds(&[f(1, -2)]).is_err());
    }

    #[test]
    fn two_stage_run_passes_the_ledger() {
        let space = default_space();
        let cfg = BuildConfig { stages: 2, ..BuildConfig::default() };
        let out = run_stages(&space, &cfg).unwrap();
        assert!(out.pass);
        assert_eq!(out.stages.len(), 2);
        let s1 = &out.stages[0];
        assert_eq!((s1.i, s1.n_exp, s1.r), (1, 4, 1));
        assert_eq!(s1.delta, parse_rational("1/128").unwrap());
        assert_eq!(s1.tower.n, 1);
        assert_eq!(s1.uniformity.n_value, 12);
        assert_eq!(s1.eps_required, parse_rational("1/16").unwrap());
        let s2 = &out.stages[1];
        assert_eq!((s2.i, s2.n_exp, s2.r), (2, 6, 6));
        assert_eq!(s2.delta, parse_rational("1/268435456").unwrap());
        assert_eq!(s2.tower.n, 2);
        assert_eq!(s2.uniformity.n_value, 61);
        assert_eq!(s2.eps_required, parse_rational("1/82944").unwrap());
        assert!(s2.copy_log.entries.is_empty());
        assert!(s2.copy_log.d_join.is_zero());
        for e in &out.ledger {
            assert!(e.pass, "{}: {}", e.property, e.achieved);
        }
        // the fixed point is checked at every stage; compact points leave the
        // language at this radius and are skipped
        let checked: Vec<_> = out.triangle.iter().filter(|t| t.stage > 0).collect();
        assert_eq!(checked.len(), 2);
        assert!(checked.iter().all(|t| t.point == "fixed" && t.pass));
    }

    #[test]
    fn refined_space_merges_back_onto_the_base() {
        let base = SubstitutionLanguage::new(Substitution::builtin_default());
        let space = ModelSpace::refined(base.clone(), &["2", "212"]).unwrap();
        assert_eq!(space.y_lang.alphabet_size(), 3);
        assert_eq!(space.z_lang.alphabet_size(), 2);
        assert!(!space.is_identity());
        for len in 1..=8usize {
            assert_eq!(
                base.factors(len).unwrap(),
                space.z_lang.factors(len).unwrap(),
                "len {len}"
            );
        }
        for (w, m) in [
            ("2", "1"),
            ("212", "1/2"),
            ("2112", "1/4"),
            ("1121211", "1/2"),
            ("22", "0"),
        ] {
            let c = Clopen::cylinder(space.z_lang.as_ref(), 0, &Word::parse(w).unwrap()).unwrap();
            assert_eq!(
                space.z_meas.clopen(&c).unwrap().as_finite().unwrap(),
                &parse_rational(m).unwrap(),
                "[{w}]"
            );
        }
        // both refined letters over base letter 2 carry half the mass
        for l in ["2", "3"] {
            let c = Clopen::cylinder(space.y_lang.as_ref(), 0, &Word::parse(l).unwrap()).unwrap();
            assert_eq!(
                space.y_meas.clopen(&c).unwrap().as_finite().unwrap(),
                &parse_rational("1/2").unwrap()
            );
        }
    }

    #[test]
    fn merged_run_keeps_the_identity_stage_geometry() {
        let base = SubstitutionLanguage::new(Substitution::builtin_default());
        let space = ModelSpace::refined(base, &["2", "212"]).unwrap();
        let cfg = BuildConfig {
            stages: 2,
            e_cyls: vec!["2".into(), "3".into()],
            ..BuildConfig::default()
        };
        let out = run_stages(&space, &cfg).unwrap();
        assert!(out.pass);
        let s1 = &out.stages[0];
        assert_eq!((s1.n_exp, s1.tower.n, s1.uniformity.n_value), (4, 1, 12));
        assert_eq!(s1.delta, parse_rational("1/128").unwrap());
        let s2 = &out.stages[1];
        assert_eq!((s2.n_exp, s2.tower.n, s2.uniformity.n_value), (6, 2, 61));
        assert_eq!(s2.delta, parse_rational("1/268435456").unwrap());
        for e in &out.ledger {
            assert!(e.pass, "{}: {}", e.property, e.achieved);
        }
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = BuildConfig::default();
        let mut b = BuildConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        b.stages = 4;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
