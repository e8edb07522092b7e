//! The exact invariant Radon measure: cylinder masses as rationals, the
//! infinite atom at the fixed point, two-sided additivity, and pushforward
//! along a letter merge.

use almin::{kolmogorov_consistent, CylinderMeasure, InvariantMeasure, ModelSpace, Substitution,
    SubstitutionLanguage, Word};

fn main() -> almin::Result<()> {
    let lang = SubstitutionLanguage::new(Substitution::builtin_default());
    let meas = CylinderMeasure::new(lang.clone());

    println!("cylinder masses:");
    for text in ["2", "212", "2112", "12121", "1121211", "22", "111"] {
        let w = Word::parse(text)?;
        println!("  mu[{text}] = {}", meas.cylinder(&w)?);
    }

    // mu([w]) = sum_a mu([wa]) = sum_a mu([aw]) for every factor up to length 6
    kolmogorov_consistent(meas.as_ref(), 6)?;
    println!("\ntwo-sided additivity verified for all factors of length <= 6");

    // pushforward along the 3-to-2 letter merge agrees with the base measure
    let space = ModelSpace::refined(lang, &["2", "212"])?;
    println!("\nrefined alphabet {} merges by {}", space.y_lang.alphabet_size(), space.code);
    kolmogorov_consistent(space.z_meas.as_ref(), 6)?;
    println!("pushforward measure passes the same consistency suite");
    for text in ["2", "212", "2112"] {
        let w = Word::parse(text)?;
        println!("  pushforward[{text}] = {}", space.z_meas.cylinder(&w)?);
    }
    Ok(())
}
