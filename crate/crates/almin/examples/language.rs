//! Enumerate the language of the built-in substitution: iterates of the seed,
//! factor counts by length, and the factor-closure property.

use almin::{LanguageSource, Substitution, SubstitutionLanguage, Word};

fn main() -> almin::Result<()> {
    let sub = Substitution::builtin_default();
    println!("substitution: {}", sub.to_json());
    for depth in 0..=4u32 {
        println!("sigma^{depth}(seed) = {}", sub.iterate(sub.seed, depth, 1 << 12)?);
    }

    let lang = SubstitutionLanguage::new(sub);
    println!("\nfactor counts:");
    for len in 1..=10usize {
        let f = lang.factors(len)?;
        println!("  len {len:2}: {} words", f.len());
    }

    // factor closure: every subword of an allowed word is allowed
    let words = lang.factors(6)?;
    for w in words.iter() {
        for start in 0..w.len() {
            for end in (start + 1)..=w.len() {
                let piece = Word(w[start..end].to_vec());
                assert!(lang.contains(&piece)?, "{piece} missing from the language");
            }
        }
    }
    println!("\nfactor closure verified on all {} words of length 6", words.len());

    // words never seen: "22" and the isolated-2 frame "1112111"
    for text in ["22", "1112111"] {
        let w = Word::parse(text)?;
        println!("contains {text}: {}", lang.contains(&w)?);
    }
    Ok(())
}
