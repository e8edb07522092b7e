//! Unique-ergodicity evidence: Birkhoff ratios S_n 1_A / S_n 1_K over the
//! reference set K = [.2] hit the exact constants mu(A)/mu(K), with a finite
//! visit threshold for any tolerance.

use almin::{parse_rational, unique_ergodicity_suite, CylinderMeasure, Substitution,
    SubstitutionLanguage, Word};

fn main() -> almin::Result<()> {
    let lang = SubstitutionLanguage::new(Substitution::builtin_default());
    let meas = CylinderMeasure::new(lang);
    let eps = parse_rational("1/16")?;
    let cert = unique_ergodicity_suite(meas.as_ref(), &Word::parse("2")?, 3, 14, 40, &eps)?;

    println!(
        "scan depth {}, window half-lengths up to {}, tolerance {}",
        cert.depth, cert.n_max, cert.requested_eps
    );
    println!("{:<9} {:>10} {:>12} {:>9}", "cylinder", "constant", "threshold m", "max hits");
    for s in &cert.sets {
        let m = s.threshold_m.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<9} {:>10} {:>12} {:>9}", s.word, s.constant, m, s.max_hits_seen);
    }
    println!("\noverall: {}", if cert.pass { "PASS" } else { "FAIL" });
    Ok(())
}
