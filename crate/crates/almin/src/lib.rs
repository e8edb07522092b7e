//! Exact symbolic machinery for almost minimal substitution subshifts: language
//! enumeration, return words and Kakutani-Rohlin towers, clopen partitions with
//! a distinguished infinite atom, exact invariant Radon measures, unique
//! ergodicity certification, uniformity certificates, and the inductive
//! name-copying model construction, all in exact rational arithmetic.

pub mod builder;
pub mod cli;
pub mod clopen;
pub mod error;
pub mod measure;
pub mod partition;
pub mod subshift;
pub mod towers;
pub mod words;

pub use builder::{
    build_tower, choose_parameters, classify_fibers, copy_names, derive_lower, empirical_n,
    mediant_bounds, proof_bound_m, run_stages, stage_tower, standard_points, triangle_check,
    BuildConfig, BuildOutcome, Classification, CopyLog, FiberClass, LedgerEntry, ModelSpace,
    ProofBound, Stage, StageColumn, StageTower, TriangleResult, UniformityEvidence,
};
pub use clopen::Clopen;
pub use error::{Error, Result};
pub use measure::{
    birkhoff_certificate, kolmogorov_consistent, parse_rational, product_demo,
    product_vs_diagonal, unique_ergodicity_suite, BirkhoffReport, CylinderMeasure,
    ErgodicityCertificate, InvariantMeasure, MeasureValue, ProductDemoReport,
    PushforwardMeasure, RectangleWitness, SetCertificate,
};
pub use partition::{
    alpha_t_approx, block_empirical, distance, reference_distribution,
    remark_block_distance_bound, uniformity_check, AtomLabel, BlockDistribution, CodedLanguage,
    CodedMeasure, SectionSource, UniformityCertificate, WindowPartition,
};
pub use subshift::{image_language, product_language, MergedLanguage, Point, SubscriptMap};
pub use towers::{
    decompose, gamma_sequence, is_return_word, kr_tower, refinement_witness, return_words,
    HeightProfile, KrColumn, KrTower, RefinementWitness, ReturnWordSet,
};
pub use words::{occurrences, LanguageSource, Letter, Substitution, SubstitutionLanguage, Word};
