//! Two shift-invariant Radon measures on the product of the default subshift
//! with itself: the product measure and the diagonal lift. Both are invariant,
//! yet they are not proportional, so the product system is not uniquely
//! ergodic even though each coordinate is.

use almin::{product_demo, CylinderMeasure, Substitution, SubstitutionLanguage};

fn main() -> almin::Result<()> {
    let lang = SubstitutionLanguage::new(Substitution::builtin_default());
    let meas = CylinderMeasure::new(lang);

    let report = product_demo(meas.as_ref(), 3)?;
    println!(
        "checked {} rectangles to depth {}; shift invariance exact: {}",
        report.rectangles_checked, report.depth_cap, report.invariance_exact
    );
    println!("\nrectangle masses (product vs diagonal):");
    for w in &report.witnesses {
        println!(
            "  [{}]_{} x [{}]_{}: product {}, diagonal {}",
            w.a, w.a_offset, w.b, w.b_offset, w.product, w.diagonal
        );
    }
    println!(
        "\nmeasures proportional: {}",
        if report.non_proportional { "no" } else { "undetermined" }
    );
    println!("verdict: {}", if report.pass { "PASS" } else { "FAIL" });
    Ok(())
}
