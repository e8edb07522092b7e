//! Clopen window partitions with a distinguished infinite atom: binaries,
//! joins, the coded language of a partition, and exact partition distance.

use almin::{distance, Clopen, CodedLanguage, CodedMeasure, CylinderMeasure, InvariantMeasure,
    LanguageSource, Substitution, SubstitutionLanguage, WindowPartition, Word};
use std::sync::Arc;

fn main() -> almin::Result<()> {
    let lang = SubstitutionLanguage::new(Substitution::builtin_default());
    let meas = CylinderMeasure::new(lang.clone());
    let as_lang: Arc<dyn LanguageSource> = lang.clone();

    // two cylinder binaries and their join
    let e1 = Clopen::cylinder(lang.as_ref(), 0, &Word::parse("2")?)?;
    let e2 = Clopen::cylinder(lang.as_ref(), 0, &Word::parse("212")?)?;
    let b1 = WindowPartition::binary(as_lang.clone(), &e1)?;
    let b2 = WindowPartition::binary(as_lang, &e2)?;
    let join = b1.join(&b2)?;
    println!("join window [{}, {}], atoms:", join.lo, join.hi);
    for (label, atom) in join.atoms() {
        println!("  {label}: mass {}", meas.clopen(&atom)?);
    }

    // the coded language reads points through the partition's atom subscripts
    let coded = CodedLanguage::new(&join)?;
    println!("\ncoded alphabet size: {}", coded.alphabet_size());
    let coded_meas = CodedMeasure::new(meas.clone(), coded.clone());
    for len in 1..=4usize {
        println!("  coded factors len {len}: {}", coded.factors(len)?.len());
    }
    let letter2 = Word::parse("2")?;
    println!("  coded mu[2] = {}", coded_meas.cylinder(&letter2)?);

    // distance sums the symmetric differences of same-subscript atoms
    println!("\nd(join, join) = {}", distance(meas.as_ref(), &join, &join)?);
    let d = distance(meas.as_ref(), &b1, &b2)?;
    println!("d(binary[2], binary[212]) = {d}");
    Ok(())
}
