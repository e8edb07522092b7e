//! Command-line front end: each pipeline stage as a subcommand emitting a
//! machine-readable report. Exit codes: 0 success/PASS, 1 FAIL verdict,
//! 2 input error, 3 resource or horizon error.

use crate::builder::{run_stages, BuildConfig, BuildOutcome, ModelSpace};
use crate::clopen::Clopen;
use crate::error::{Error, Result};
use crate::measure::{
    kolmogorov_consistent, parse_rational, product_demo, unique_ergodicity_suite,
    CylinderMeasure, InvariantMeasure, MeasureValue,
};
use crate::partition::{uniformity_check, SectionSource};
use crate::towers::{kr_tower, return_words};
use crate::words::{LanguageSource, Substitution, SubstitutionLanguage, Word};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "almin",
    version,
    about = "Almost minimal substitution subshifts: exact measures, towers, and model building"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Data-parallel width (0 = all cores); output is identical for every
    /// setting.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Stdout format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write the versioned JSON report to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Args)]
struct SubArg {
    /// Substitution description file (JSON); the built-in one if omitted.
    #[arg(long)]
    sub: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Show a substitution with its seed and a short iterate preview.
    SubstShow(SubstShow),
    /// Enumerate the language's factors of one length.
    LangEnum(LangEnum),
    /// List the return words at depth n.
    ReturnWords(ReturnWords),
    /// Build and verify the depth-n Kakutani-Rohlin tower.
    KrTower(KrTower),
    /// The exact mass of a cylinder.
    Measure(Measure),
    /// Certify unique ergodicity through Birkhoff ratios.
    CertifyUe(CertifyUe),
    /// Check (H,k,ε)-uniformity of the letter coding.
    Uniformity(Uniformity),
    /// Run the staged model construction with its property ledger.
    BuildModel(BuildModel),
    /// Exhibit two non-proportional invariant measures on the product.
    ProductDemo(ProductDemo),
}

#[derive(Args)]
struct SubstShow {
    #[command(flatten)]
    sub: SubArg,
}

#[derive(Args)]
struct LangEnum {
    #[command(flatten)]
    sub: SubArg,
    /// Factor length to enumerate.
    #[arg(long)]
    len: usize,
}

#[derive(Args)]
struct ReturnWords {
    #[command(flatten)]
    sub: SubArg,
    /// Return-word depth (the 1^n frame).
    #[arg(long)]
    n: usize,
}

#[derive(Args)]
struct KrTower {
    #[command(flatten)]
    sub: SubArg,
    /// Tower depth.
    #[arg(long)]
    n: usize,
    /// Reference cylinder word for the K-hit counts.
    #[arg(long, default_value = "2")]
    cyl: String,
}

#[derive(Args)]
struct Measure {
    #[command(flatten)]
    sub: SubArg,
    /// Cylinder word.
    #[arg(long)]
    cyl: String,
}

#[derive(Args)]
struct CertifyUe {
    #[command(flatten)]
    sub: SubArg,
    /// Reference cylinder word K.
    #[arg(long, default_value = "2")]
    cyl: String,
    /// Largest cylinder depth certified.
    #[arg(long, default_value_t = 3)]
    len: usize,
    /// Tolerance for the visit threshold, as p/q.
    #[arg(long, default_value = "1/16")]
    eps: String,
    /// Substitution depth of the scan word.
    #[arg(long, default_value_t = 14)]
    horizon: u32,
    /// Largest two-sided window half-length.
    #[arg(long, default_value_t = 40)]
    n: u32,
}

#[derive(Args)]
struct Uniformity {
    #[command(flatten)]
    sub: SubArg,
    /// Block parameter: sections compare (2k−1)-block distributions.
    #[arg(long, default_value_t = 1)]
    k: i64,
    /// Deviation tolerance, as p/q.
    #[arg(long, default_value = "1/4")]
    eps: String,
    /// Visit count H to certify.
    #[arg(long = "H")]
    h: u64,
    /// Substitution depth of the scanned sections.
    #[arg(long, default_value_t = 9)]
    horizon: u32,
}

#[derive(Args)]
struct BuildModel {
    #[command(flatten)]
    sub: SubArg,
    /// Build configuration file (JSON); defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stage count override.
    #[arg(long)]
    stages: Option<usize>,
}

#[derive(Args)]
struct ProductDemo {
    #[command(flatten)]
    sub: SubArg,
    /// Largest cylinder depth for the rectangle scan.
    #[arg(long, default_value_t = 3)]
    len: usize,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::Input(format!("cannot build a {}-thread pool: {e}", cli.jobs)))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let (request, result, pass) = match &cli.command {
        Command::SubstShow(a) => subst_show(a)?,
        Command::LangEnum(a) => lang_enum(a)?,
        Command::ReturnWords(a) => return_words_cmd(a)?,
        Command::KrTower(a) => kr_tower_cmd(a)?,
        Command::Measure(a) => measure_cmd(a)?,
        Command::CertifyUe(a) => certify_ue(a)?,
        Command::Uniformity(a) => uniformity_cmd(a)?,
        Command::BuildModel(a) => build_model(a)?,
        Command::ProductDemo(a) => product_demo_cmd(a)?,
    };
    emit(cli, &request, &result)?;
    Ok(if pass { 0 } else { 1 })
}

fn emit(cli: &Cli, request: &Value, result: &Value) -> Result<()> {
    match cli.format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(result).map_err(|e| Error::Input(e.to_string()))?
        ),
        Format::Tsv => print!("{}", to_tsv(result)),
    }
    if let Some(path) = &cli.report {
        let request_text =
            serde_json::to_string(request).map_err(|e| Error::Input(e.to_string()))?;
        let mut hasher = Sha256::new();
        hasher.update(request_text.as_bytes());
        let report = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "request": request,
            "config_hash": format!("{:x}", hasher.finalize()),
            "result": result,
        });
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Input(e.to_string()))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Flatten a JSON value into deterministic `path<TAB>scalar` lines.
fn to_tsv(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                for (k, val) in map {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, val, out);
                }
            }
            Value::Array(items) => {
                for (i, val) in items.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), val, out);
                }
            }
            scalar => {
                let text = match scalar {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                out.push_str(prefix);
                out.push('\t');
                out.push_str(&text);
                out.push('\n');
            }
        }
    }
    let mut out = String::new();
    walk("", v, &mut out);
    out
}

fn load_substitution(arg: &SubArg) -> Result<Substitution> {
    match &arg.sub {
        None => Ok(Substitution::builtin_default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
            Substitution::from_json(&text)
        }
    }
}

fn load_language(arg: &SubArg) -> Result<Arc<SubstitutionLanguage>> {
    Ok(SubstitutionLanguage::new(load_substitution(arg)?))
}

fn sub_request(arg: &SubArg) -> Value {
    match &arg.sub {
        None => json!("builtin"),
        Some(p) => json!(p.display().to_string()),
    }
}

fn rational_arg(text: &str) -> Result<BigRational> {
    parse_rational(text)
}

type CommandOutput = (Value, Value, bool);

fn subst_show(a: &SubstShow) -> Result<CommandOutput> {
    let sub = load_substitution(&a.sub)?;
    let described: Value = serde_json::from_str(&sub.to_json())
        .map_err(|e| Error::Input(e.to_string()))?;
    let mut preview = Vec::new();
    for depth in 0..=4u32 {
        preview.push(json!({
            "depth": depth,
            "word": sub.iterate(sub.seed, depth, 1 << 12)?.to_string(),
        }));
    }
    let result = json!({
        "substitution": described,
        "iterates": preview,
    });
    Ok((json!({"cmd": "subst-show", "sub": sub_request(&a.sub)}), result, true))
}

fn lang_enum(a: &LangEnum) -> Result<CommandOutput> {
    if a.len == 0 {
        return Err(Error::Input("factor length must be ≥ 1".into()));
    }
    let lang = load_language(&a.sub)?;
    let words = lang.factors(a.len)?;
    let result = json!({
        "len": a.len,
        "count": words.len(),
        "words": words.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
    });
    let request = json!({"cmd": "lang-enum", "sub": sub_request(&a.sub), "len": a.len});
    Ok((request, result, true))
}

fn return_words_cmd(a: &ReturnWords) -> Result<CommandOutput> {
    let lang: Arc<dyn LanguageSource> = load_language(&a.sub)?;
    let rset = return_words(&lang, a.n)?;
    let result = json!({
        "n": rset.n,
        "words": rset.words.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
    });
    let request = json!({"cmd": "return-words", "sub": sub_request(&a.sub), "n": a.n});
    Ok((request, result, true))
}

fn kr_tower_cmd(a: &KrTower) -> Result<CommandOutput> {
    let lang: Arc<dyn LanguageSource> = load_language(&a.sub)?;
    let k_word = Word::parse(&a.cyl)?;
    let k_set = Clopen::cylinder(lang.as_ref(), 0, &k_word)?;
    let (tower, profile) = kr_tower(&lang, a.n, &k_set)?;
    tower.verify_partition(lang.as_ref())?;
    let tower_value: Value =
        serde_json::from_str(&tower.to_json()).map_err(|e| Error::Input(e.to_string()))?;
    let result = json!({
        "tower": tower_value,
        "profile": profile,
        "partition_verified": true,
    });
    let request = json!({
        "cmd": "kr-tower", "sub": sub_request(&a.sub), "n": a.n, "cyl": a.cyl,
    });
    Ok((request, result, true))
}

fn measure_cmd(a: &Measure) -> Result<CommandOutput> {
    let lang = load_language(&a.sub)?;
    let meas = CylinderMeasure::new(lang);
    let w = Word::parse(&a.cyl)?;
    let value = meas.cylinder(&w)?;
    let result = match value {
        MeasureValue::Finite(q) => json!(q.to_string()),
        MeasureValue::Infinite => json!("INFINITE"),
    };
    let request = json!({"cmd": "measure", "sub": sub_request(&a.sub), "cyl": a.cyl});
    Ok((request, result, true))
}

fn certify_ue(a: &CertifyUe) -> Result<CommandOutput> {
    let lang = load_language(&a.sub)?;
    let meas = CylinderMeasure::new(lang);
    let eps = rational_arg(&a.eps)?;
    let k_word = Word::parse(&a.cyl)?;
    let cert = unique_ergodicity_suite(meas.as_ref(), &k_word, a.len, a.horizon, a.n, &eps)?;
    let pass = cert.pass;
    let result = serde_json::to_value(&cert).map_err(|e| Error::Input(e.to_string()))?;
    let request = json!({
        "cmd": "certify-ue", "sub": sub_request(&a.sub), "cyl": a.cyl,
        "len": a.len, "eps": a.eps, "horizon": a.horizon, "n": a.n,
    });
    Ok((request, result, pass))
}

fn uniformity_cmd(a: &Uniformity) -> Result<CommandOutput> {
    let lang = load_language(&a.sub)?;
    let meas = CylinderMeasure::new(lang);
    let eps = rational_arg(&a.eps)?;
    let cert = uniformity_check(
        meas.as_ref(),
        a.h,
        a.k,
        &eps,
        &SectionSource::Windows { depth: a.horizon },
    )?;
    let pass = cert.verdict;
    let result = serde_json::to_value(&cert).map_err(|e| Error::Input(e.to_string()))?;
    let request = json!({
        "cmd": "uniformity", "sub": sub_request(&a.sub), "k": a.k,
        "eps": a.eps, "H": a.h, "horizon": a.horizon,
    });
    Ok((request, result, pass))
}

fn load_build_config(a: &BuildModel) -> Result<BuildConfig> {
    let mut cfg = match &a.config {
        None => BuildConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
            BuildConfig::from_json(&text)?
        }
    };
    if let Some(stages) = a.stages {
        cfg.stages = stages;
    }
    Ok(cfg)
}

fn build_model(a: &BuildModel) -> Result<CommandOutput> {
    let lang = load_language(&a.sub)?;
    let cfg = load_build_config(a)?;
    let space = ModelSpace::identity(lang);
    let out = run_stages(&space, &cfg)?;
    let pass = out.pass;
    let result = outcome_report(&cfg, &out)?;
    let request = json!({
        "cmd": "build-model", "sub": sub_request(&a.sub),
        "config": serde_json::to_value(&cfg).map_err(|e| Error::Input(e.to_string()))?,
    });
    Ok((request, result, pass))
}

/// The serializable summary of a completed staged construction.
pub fn outcome_report(cfg: &BuildConfig, out: &BuildOutcome) -> Result<Value> {
    let stages: Vec<Value> = out
        .stages
        .iter()
        .map(|s| {
            Ok(json!({
                "stage": s.i,
                "n": s.n_exp,
                "delta": s.delta.to_string(),
                "alphabet": s.r,
                "tower_depth": s.tower.n,
                "tower_h_k": s.tower.h_k,
                "columns": s.tower.columns.len(),
                "bad_mass": s.classification.bad_mass.to_string(),
                "copied": s.copy_log.entries.len(),
                "stranded": s.copy_log.stranded.len(),
                "changed_mass": s.copy_log.changed_mass.to_string(),
                "d_join": s.copy_log.d_join.to_string(),
                "empirical_n": s.uniformity.n_value,
                "available_visits": s.uniformity.max_hits,
                "eps_certified": s.eps_surrogate.to_string(),
                "eps_block_bound": s.eps_required.to_string(),
                "proof_bound": serde_json::to_value(&s.proof)
                    .map_err(|e| Error::Input(e.to_string()))?,
            }))
        })
        .collect::<Result<_>>()?;
    let ledger =
        serde_json::to_value(&out.ledger).map_err(|e| Error::Input(e.to_string()))?;
    let triangle =
        serde_json::to_value(&out.triangle).map_err(|e| Error::Input(e.to_string()))?;
    Ok(json!({
        "config": serde_json::to_value(cfg).map_err(|e| Error::Input(e.to_string()))?,
        "config_hash": cfg.config_hash(),
        "stages": stages,
        "ledger": ledger,
        "triangle": triangle,
        "pass": out.pass,
    }))
}

fn product_demo_cmd(a: &ProductDemo) -> Result<CommandOutput> {
    let lang = load_language(&a.sub)?;
    let meas = CylinderMeasure::new(lang);
    // image-language consistency backs the witness arithmetic
    kolmogorov_consistent(meas.as_ref(), a.len)?;
    let report = product_demo(meas.as_ref(), a.len)?;
    let pass = report.pass;
    let result = serde_json::to_value(&report).map_err(|e| Error::Input(e.to_string()))?;
    let request = json!({"cmd": "product-demo", "sub": sub_request(&a.sub), "len": a.len});
    Ok((request, result, pass))
}
