use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use super::{run_training, RunArtifacts, RunConfig, RunStatus};
use crate::engine::{LossReport, LossWeights};
use crate::error::{Error, Result};
use crate::fsutil;

pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

/// A named set of loss multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub weights: LossWeights,
}

/// A base run and the weight variants to train from it. Every variant uses
/// the base seeds and writes to `base.output_dir/<name>`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub variants: Vec<Variant>,
}

/// Result of one variant; a failure does not stop the others.
#[derive(Debug)]
pub struct SweepOutcome {
    pub name: String,
    pub result: Result<RunArtifacts>,
}

const TERMS: [(&str, &[&str]); 4] = [
    ("cycle", &["cycle", "cyc"]),
    ("identity", &["identity", "id"]),
    ("adv", &["gen", "adv", "adversarial"]),
    ("disc", &["disc", "discriminator"]),
];

fn term_key(word: &str) -> Option<&'static str> {
    let w = word.to_ascii_lowercase();
    TERMS.iter().find(|(_, aliases)| aliases.contains(&w.as_str())).map(|(k, _)| *k)
}

fn set_term(w: &mut LossWeights, key: &str, value: f64) {
    match key {
        "cycle" => w.cycle = value,
        "identity" => w.identity = value,
        "adv" => w.adv = value,
        _ => w.disc = value,
    }
}

fn get_term(w: &LossWeights, key: &str) -> f64 {
    match key {
        "cycle" => w.cycle,
        "identity" => w.identity,
        "adv" => w.adv,
        _ => w.disc,
    }
}

/// Reads labels such as `2xCycleLoss`, `0.5xGenLoss` or `baseline`.
fn weights_from_label(label: &str, base: &LossWeights) -> Option<LossWeights> {
    if label.eq_ignore_ascii_case("baseline") {
        return Some(*base);
    }
    let (factor, rest) = label.split_once('x')?;
    let factor: f64 = factor.parse().ok()?;
    let term = rest.strip_suffix("Loss").or_else(|| rest.strip_suffix("loss")).unwrap_or(rest);
    let key = term_key(term)?;
    let mut w = *base;
    set_term(&mut w, key, factor * get_term(base, key));
    Some(w)
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("variant name {name:?} must use only letters, digits, '.', '_' or '-'")))
    }
}

/// Parses a variant argument.
///
/// Accepted forms: `NAME=TERM:VALUE[,TERM:VALUE...]` with explicit
/// multipliers (terms `cycle`, `identity`, `gen`/`adv`, `disc`), or a bare
/// label `<factor>x<Term>Loss` / `baseline`. Unset terms keep `base`.
pub fn parse_variant(arg: &str, base: &LossWeights) -> Result<Variant> {
    let arg = arg.trim();
    let variant = match arg.split_once('=') {
        Some((name, overrides)) => {
            let mut w = *base;
            for part in overrides.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (term, value) = part
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("override {part:?} is not TERM:VALUE")))?;
                let key = term_key(term.trim()).ok_or_else(|| Error::invalid(format!("unknown loss term {term:?}")))?;
                let value: f64 =
                    value.trim().parse().map_err(|_| Error::invalid(format!("bad multiplier {value:?} for {term}")))?;
                set_term(&mut w, key, value);
            }
            Variant { name: name.trim().to_string(), weights: w }
        }
        None => {
            let weights = weights_from_label(arg, base).ok_or_else(|| {
                Error::invalid(format!("cannot read variant {arg:?}; use NAME=TERM:VALUE,... or e.g. 2xCycleLoss"))
            })?;
            Variant { name: arg.to_string(), weights }
        }
    };
    check_name(&variant.name)?;
    variant.weights.validate()?;
    Ok(variant)
}

/// Baseline plus doubled and halved versions of each of the four terms.
pub fn default_variants(base: &LossWeights) -> Vec<Variant> {
    let mut out = vec![Variant { name: "baseline".into(), weights: *base }];
    for term in ["Cycle", "Identity", "Gen", "Disc"] {
        for factor in ["2", "0.5"] {
            let name = format!("{factor}x{term}Loss");
            let weights = weights_from_label(&name, base).expect("well-formed label");
            out.push(Variant { name, weights });
        }
    }
    out
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for v in &self.variants {
            check_name(&v.name)?;
            if !seen.insert(v.name.as_str()) {
                return Err(Error::invalid(format!("duplicate variant name {:?}", v.name)));
            }
            v.weights.validate()?;
        }
        Ok(())
    }

    pub fn run_config(&self, variant: &Variant) -> RunConfig {
        RunConfig {
            weights: variant.weights,
            output_dir: self.base.output_dir.join(&variant.name),
            ..self.base.clone()
        }
    }
}

/// Trains every variant, `jobs` at a time, and writes
/// `sweep_summary.csv` with each variant's final-epoch mean losses.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<SweepOutcome>> {
    spec.validate()?;
    if spec.variants.is_empty() {
        return Ok(Vec::new());
    }
    let run = |v: &Variant| {
        log::info!("sweep variant {}", v.name);
        let result = run_training(&spec.run_config(v));
        if let Err(e) = &result {
            log::error!("variant {} failed: {e}", v.name);
        }
        SweepOutcome { name: v.name.clone(), result }
    };
    let outcomes: Vec<SweepOutcome> = if jobs <= 1 {
        spec.variants.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        pool.install(|| spec.variants.par_iter().map(run).collect())
    };
    write_summary(&spec.base.output_dir.join(SWEEP_SUMMARY_FILE), spec, &outcomes)?;
    Ok(outcomes)
}

fn write_summary(path: &PathBuf, spec: &SweepSpec, outcomes: &[SweepOutcome]) -> Result<()> {
    let mut text = String::from("variant,status,w_cycle,w_identity,w_adv,w_disc,epochs,steps");
    for c in LossReport::COLUMNS {
        text.push(',');
        text.push_str(c);
    }
    text.push('\n');
    for (v, o) in spec.variants.iter().zip(outcomes) {
        let w = v.weights;
        let (status, epochs, steps, means) = match &o.result {
            Ok(a) => {
                let status = match a.summary.status {
                    RunStatus::Complete => "complete",
                    RunStatus::Diverged => "diverged",
                };
                (status, a.summary.epochs_completed, a.summary.steps_completed, a.summary.last_epoch_mean().copied())
            }
            Err(_) => ("failed", 0, 0, None),
        };
        let _ = write!(text, "{},{status},{},{},{},{},{epochs},{steps}", v.name, w.cycle, w.identity, w.adv, w.disc);
        for k in 0..LossReport::COLUMNS.len() {
            match means {
                Some(m) => {
                    let _ = write!(text, ",{:?}", m.values()[k]);
                }
                None => text.push(','),
            }
        }
        text.push('\n');
    }
    fsutil::create_dir_all(&spec.base.output_dir)?;
    fsutil::write_atomic(path, text.as_bytes())
}
