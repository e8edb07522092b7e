//! Return words to the frame 1^n.1^n: enumeration, the defining predicate,
//! and the unique decomposition of deeper return words into shallower ones.

use almin::{decompose, is_return_word, return_words, LanguageSource, Substitution,
    SubstitutionLanguage};
use std::sync::Arc;

fn main() -> almin::Result<()> {
    let lang: Arc<dyn LanguageSource> =
        SubstitutionLanguage::new(Substitution::builtin_default());

    let mut sets = Vec::new();
    for n in 1..=3usize {
        let rset = return_words(&lang, n)?;
        println!("R_{n}:");
        for w in &rset.words {
            println!("  {} (weight {})", w, w.weight());
            assert!(is_return_word(lang.as_ref(), n, w)?);
        }
        println!("  min nontrivial weight: {}", rset.min_nontrivial_weight()?);
        sets.push(rset);
    }

    // every word of R_{n+1} parses uniquely into words of R_n
    for n in 0..sets.len() - 1 {
        let (lower, upper) = (&sets[n], &sets[n + 1]);
        for w in &upper.words {
            let parts = decompose(w, lower)?;
            let rendered: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
            println!("R_{} word {} = {}", upper.n, w, rendered.join(" | "));
        }
    }
    Ok(())
}
