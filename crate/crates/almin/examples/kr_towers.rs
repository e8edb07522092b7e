//! Kakutani-Rohlin towers over the return-word bases: exact partition
//! verification and the level-to-level refinement witness between depths.

use almin::{kr_tower, refinement_witness, Clopen, LanguageSource, Substitution,
    SubstitutionLanguage, Word};
use std::sync::Arc;

fn main() -> almin::Result<()> {
    let lang: Arc<dyn LanguageSource> =
        SubstitutionLanguage::new(Substitution::builtin_default());
    let k_set = Clopen::cylinder(lang.as_ref(), 0, &Word::parse("2")?)?;

    let mut towers = Vec::new();
    for n in 1..=3usize {
        let (tower, profile) = kr_tower(&lang, n, &k_set)?;
        println!("tower n={n}: h={} h_K={} h_K_max={}", profile.h, profile.h_k, profile.h_k_max);
        for c in &tower.columns {
            let kind = if c.infinite { "infinite" } else { "principal" };
            println!("  {kind} column {}: height {} K-hits {}", c.word, c.height, c.k_hits);
        }
        tower.verify_partition(lang.as_ref())?;
        println!("  levels partition the space: verified");
        towers.push(tower);
    }

    for pair in towers.windows(2) {
        let (coarse, fine) = (&pair[0], &pair[1]);
        let witness = refinement_witness(&lang, fine, coarse)?;
        println!("\nrefinement n={} over n={}:", fine.n, coarse.n);
        for e in &witness.entries {
            let blocks: Vec<String> = e.blocks.iter().map(|b| b.to_string()).collect();
            println!("  {} = {}", e.fine_word, blocks.join(" | "));
        }
    }
    Ok(())
}
