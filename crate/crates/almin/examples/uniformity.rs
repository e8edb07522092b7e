//! (H,k,eps)-uniformity: every orbit section with at least H support visits
//! has its (2k-1)-block statistics within eps of the exact block masses. The
//! certificate reports the least H that works for the scanned sections.

use almin::{parse_rational, reference_distribution, uniformity_check, CylinderMeasure,
    SectionSource, Substitution, SubstitutionLanguage};

fn main() -> almin::Result<()> {
    let lang = SubstitutionLanguage::new(Substitution::builtin_default());
    let meas = CylinderMeasure::new(lang);

    let reference = reference_distribution(meas.as_ref(), 2)?;
    println!("reference 3-block masses over mu(K):");
    for (w, q) in &reference.frequencies {
        println!("  {w}: {}", q.0);
    }

    for (k, eps_text) in [(1i64, "1/4"), (2, "1/16"), (2, "1/64"), (3, "1/32")] {
        let eps = parse_rational(eps_text)?;
        let cert = uniformity_check(
            meas.as_ref(),
            1,
            k,
            &eps,
            &SectionSource::Windows { depth: 9 },
        )?;
        println!(
            "\nk={k} eps={eps_text}: least working H = {} over {} sections",
            cert.minimal_h, cert.sections_scanned
        );
        if let Some(w) = &cert.worst {
            println!(
                "  worst retained section {}: {} visits, deviation {} at block {}",
                w.id, w.k_count, w.deviation, w.block_word
            );
        }
    }
    Ok(())
}
