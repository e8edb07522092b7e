//! Run the staged model construction on the default subshift and print the
//! per-stage evidence: parameters, tower shape, fiber classification, the
//! copying log, the uniformity thresholds, and the final property ledger.

use almin::{run_stages, BuildConfig, ModelSpace, Substitution, SubstitutionLanguage};

fn main() -> almin::Result<()> {
    let lang = SubstitutionLanguage::new(Substitution::builtin_default());
    let space = ModelSpace::identity(lang);
    let mut cfg = BuildConfig::default();
    cfg.stages = 3;

    let out = run_stages(&space, &cfg)?;

    for s in &out.stages {
        println!("stage {}:", s.i);
        println!("  n = {} (block tolerance delta = {})", s.n_exp, s.delta);
        println!("  refinement depth r = {}", s.r);
        println!(
            "  tower: depth {}, K-visits per column {}..{}, {} columns",
            s.tower.n,
            s.tower.h_k,
            s.tower.h_k_max,
            s.tower.columns.len()
        );
        println!(
            "  fibers: {} classes, {} good, bad mass {}",
            s.classification.classes, s.classification.good_classes, s.classification.bad_mass
        );
        println!(
            "  copying: {} moved, {} stranded, changed mass {}, d(join) = {}",
            s.copy_log.entries.len(),
            s.copy_log.stranded.len(),
            s.copy_log.changed_mass,
            s.copy_log.d_join
        );
        println!(
            "  uniformity: N_{} = {} (of {} available visits), certified eps = {}",
            s.i, s.uniformity.n_value, s.uniformity.max_hits, s.eps_surrogate
        );
        match (s.proof.m0, s.proof.bound) {
            (Some(m0), Some(b)) => println!(
                "  proof bound: m0 = {m0}, M = {b}{}",
                if s.proof.vacuous { " (vacuous at this depth)" } else { "" }
            ),
            _ => println!("  proof bound: {}", s.proof.note),
        }
    }

    println!("\nproperty ledger:");
    for e in &out.ledger {
        println!(
            "  [{}] stage {} {}: required {}, achieved {}",
            if e.pass { "pass" } else { "FAIL" },
            e.stage,
            e.property,
            e.required,
            e.achieved
        );
    }

    println!("\ncommuting triangle:");
    for t in &out.triangle {
        println!(
            "  [{}] {} at stage {}: {}",
            if t.pass { "pass" } else { "FAIL" },
            t.point,
            t.stage,
            t.detail
        );
    }

    println!("\noverall: {}", if out.pass { "PASS" } else { "FAIL" });
    Ok(())
}
