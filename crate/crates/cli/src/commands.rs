use std::path::{Path, PathBuf};
use std::time::Duration;

use kanok::corpus::{build_corpus, fetch_silhouettes, synthetic_seeds, CorpusInput, PhylopicClient, SilhouetteApi};
use kanok::harness::{
    default_variants, parse_variant, render_grid, resume_training, run_sweep, run_training, Direction, RunArtifacts,
    RunConfig, RunStatus, Stylizer, SweepSpec, SWEEP_SUMMARY_FILE,
};
use kanok::manifest::{DatasetManifest, Split};
use kanok::synth::{dataset_up_to_date, generate_dataset};
use kanok::RasterImage;

use crate::config::CliConfig;
use crate::{
    Command, ExportElementArgs, FetchCorpusArgs, GenStyleArgs, GridArgs, RunOverrides, ShowConfigArgs, StylizeArgs,
    SweepArgs, TrainArgs,
};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] kanok::Error),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(e) if e.is_divergence() => EXIT_DIVERGED,
            CliError::Runtime(_) | CliError::Failed(_) => EXIT_RUNTIME,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

type CliResult = Result<(), CliError>;

fn load_config(path: Option<&Path>) -> Result<CliConfig, CliError> {
    CliConfig::load_or_default(path).map_err(CliError::Usage)
}

fn usage(e: kanok::Error) -> CliError {
    match e {
        kanok::Error::Invalid(msg) => CliError::Usage(msg),
        other => CliError::Runtime(other),
    }
}

pub fn dispatch(command: Command) -> CliResult {
    match command {
        Command::GenStyle(a) => gen_style(a),
        Command::FetchCorpus(a) => fetch_corpus(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Stylize(a) => stylize(a),
        Command::Grid(a) => grid(a),
        Command::ExportElement(a) => export_element(a),
        Command::ShowConfig(a) => show_config(a),
    }
}

fn gen_style(a: GenStyleArgs) -> CliResult {
    let mut s = load_config(a.config.config.as_deref())?.synth;
    s.seed = a.seed.unwrap_or(s.seed);
    s.train = a.train.unwrap_or(s.train);
    s.test = a.test.unwrap_or(s.test);
    s.out = a.out.unwrap_or(s.out);
    if let Some(size) = a.size {
        s.style.canvas_px = size;
    }
    s.style.validate_strict().map_err(usage)?;
    let manifest_path = DatasetManifest::path_in(&s.out);
    if dataset_up_to_date(s.seed, s.train, s.test, &s.style, &s.out) {
        println!("up-to-date: {}", manifest_path.display());
        return Ok(());
    }
    let m = generate_dataset(s.seed, s.train, s.test, &s.style, &s.out).map_err(usage)?;
    println!(
        "wrote {} train + {} test style images: {}",
        m.count(Split::Train),
        m.count(Split::Test),
        manifest_path.display()
    );
    Ok(())
}

fn fetch_corpus(a: FetchCorpusArgs) -> CliResult {
    let mut c = load_config(a.config.config.as_deref())?.corpus;
    c.taxon = a.taxon.unwrap_or(c.taxon);
    c.synthetic |= a.synthetic;
    c.seed = a.seed.unwrap_or(c.seed);
    c.image.n_train = a.train.unwrap_or(c.image.n_train);
    c.image.n_test = a.test.unwrap_or(c.image.n_test);
    c.image.canvas_px = a.size.unwrap_or(c.image.canvas_px);
    c.out = a.out.unwrap_or(c.out);
    c.cache_dir = a.cache_dir.unwrap_or(c.cache_dir);
    c.api_url = a.api_url.unwrap_or(c.api_url);
    c.image.validate().map_err(usage)?;
    let need = c.image.n_train + c.image.n_test;
    let m = if c.synthetic {
        build_corpus(CorpusInput::Seeds(&synthetic_seeds(c.seed, need)), &c.image, &c.out)?
    } else {
        let mut client = PhylopicClient::new(&c.api_url, Duration::from_millis(c.request_interval_ms));
        let outcome = fetch_silhouettes(&mut client, &c.taxon, need, &c.cache_dir)?;
        println!("network requests: {}", client.requests());
        if outcome.partial {
            log::warn!("only {} of {need} silhouettes available for {:?}", outcome.records.len(), c.taxon);
        }
        build_corpus(CorpusInput::Records { records: &outcome.records, cache_dir: &c.cache_dir }, &c.image, &c.out)?
    };
    println!(
        "wrote {} train + {} test silhouettes: {}",
        m.count(Split::Train),
        m.count(Split::Test),
        DatasetManifest::path_in(&c.out).display()
    );
    Ok(())
}

fn run_config(o: &RunOverrides) -> Result<(RunConfig, CliConfig), CliError> {
    let file = load_config(o.config.config.as_deref())?;
    let mut r = file.run.clone();
    r.data_a = o.data_a.clone().unwrap_or(r.data_a);
    r.data_b = o.data_b.clone().unwrap_or(r.data_b);
    r.image_size = o.size.unwrap_or(r.image_size);
    r.epochs = o.epochs.unwrap_or(r.epochs);
    r.base_filters = o.base_filters.unwrap_or(r.base_filters);
    r.init_seed = o.init_seed.unwrap_or(r.init_seed);
    r.data_seed = o.data_seed.unwrap_or(r.data_seed);
    r.checkpoint_every = o.checkpoint_every.unwrap_or(r.checkpoint_every);
    r.samples = o.samples.unwrap_or(r.samples);
    r.output_dir = o.out.clone().unwrap_or(r.output_dir);
    r.weights.cycle = o.w_cycle.unwrap_or(r.weights.cycle);
    r.weights.identity = o.w_identity.unwrap_or(r.weights.identity);
    r.weights.adv = o.w_adv.unwrap_or(r.weights.adv);
    r.weights.disc = o.w_disc.unwrap_or(r.weights.disc);
    r.validate().map_err(usage)?;
    Ok((r, file))
}

fn report_run(a: &RunArtifacts) -> CliResult {
    let s = &a.summary;
    println!("run: {}", a.output_dir.display());
    println!("epochs: {}  steps: {}", s.epochs_completed, s.steps_completed);
    if let (Some(first), Some(last)) = (s.first_epoch_mean(), s.last_epoch_mean()) {
        println!("mean total_G: first epoch {:.4}, last epoch {:.4}", first.total_g, last.total_g);
    }
    if let Some(ck) = a.final_checkpoint() {
        println!("checkpoint: {}", ck.display());
    }
    match &s.divergence {
        Some(what) => Err(CliError::Diverged(format!("training diverged: {what}"))),
        None => Ok(()),
    }
}

fn train(a: TrainArgs) -> CliResult {
    let artifacts = match &a.resume {
        Some(ck) => resume_training(ck, a.run.epochs).map_err(usage)?,
        None => run_training(&run_config(&a.run)?.0).map_err(usage)?,
    };
    report_run(&artifacts)
}

fn sweep(a: SweepArgs) -> CliResult {
    let (base, file) = run_config(&a.run)?;
    let args = if a.variants.is_empty() { file.sweep.variants.clone() } else { a.variants.clone() };
    let mut variants = if args.is_empty() {
        default_variants(&base.weights)
    } else {
        args.iter().map(|v| parse_variant(v, &base.weights)).collect::<Result<Vec<_>, _>>().map_err(usage)?
    };
    if !variants.iter().any(|v| v.name == "baseline") {
        variants.insert(0, parse_variant("baseline", &base.weights).map_err(usage)?);
    }
    let spec = SweepSpec { base, variants };
    spec.validate().map_err(usage)?;
    let jobs = a.jobs.unwrap_or(file.sweep.jobs).max(1);
    let outcomes = run_sweep(&spec, jobs)?;

    println!("{:<22} {:<9} {:>12} {:>12}", "variant", "status", "total_G", "total_D");
    let (mut failed, mut diverged) = (Vec::new(), Vec::new());
    for o in &outcomes {
        match &o.result {
            Ok(art) => {
                let (g, d) = art.summary.last_epoch_mean().map_or((f64::NAN, f64::NAN), |m| (m.total_g, m.total_d));
                let status = if art.summary.status == RunStatus::Diverged {
                    diverged.push(o.name.clone());
                    "diverged"
                } else {
                    "complete"
                };
                println!("{:<22} {:<9} {:>12.4} {:>12.4}", o.name, status, g, d);
            }
            Err(e) => {
                println!("{:<22} {:<9} {:>12} {:>12}", o.name, "failed", "-", "-");
                failed.push(format!("{}: {e}", o.name));
            }
        }
    }
    println!("summary: {}", spec.base.output_dir.join(SWEEP_SUMMARY_FILE).display());
    if !failed.is_empty() {
        return Err(CliError::Failed(format!("{} variant(s) failed: {}", failed.len(), failed.join("; "))));
    }
    if !diverged.is_empty() {
        return Err(CliError::Diverged(format!("diverged variant(s): {}", diverged.join(", "))));
    }
    Ok(())
}

fn stylize(a: StylizeArgs) -> CliResult {
    let direction: Direction = a.direction.parse().map_err(usage)?;
    let image = RasterImage::load_png(&a.input)?;
    let out = Stylizer::load(&a.checkpoint)?.apply(&image, direction)?;
    out.save_png(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn sweep_columns(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let path = dir.join(SWEEP_SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| kanok::Error::io(&path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|line| line.split(',').next())
        .map(|name| dir.join(name))
        .filter(|run| run.join(kanok::harness::SUMMARY_FILE).exists())
        .collect())
}

fn grid(a: GridArgs) -> CliResult {
    let mut run_dirs = a.runs.clone();
    if let Some(sweep) = &a.sweep {
        run_dirs.extend(sweep_columns(sweep)?);
    }
    if run_dirs.is_empty() {
        return Err(CliError::Usage("give at least one --run or a --sweep directory".into()));
    }
    let mut columns = Vec::new();
    for dir in &run_dirs {
        let run = RunArtifacts::load(dir)?;
        let ck = run
            .final_checkpoint()
            .ok_or_else(|| CliError::Failed(format!("{} has no checkpoint", dir.display())))?
            .to_path_buf();
        columns.push((run.name(), ck));
    }
    let manifest = DatasetManifest::load(&a.images)?;
    let files = manifest.files(&a.images, Split::Test);
    if files.len() < a.count {
        return Err(CliError::Failed(format!(
            "{} has {} test images, {} requested",
            a.images.display(),
            files.len(),
            a.count
        )));
    }
    let sources = files[..a.count].iter().map(|p| RasterImage::load_png(p)).collect::<Result<Vec<_>, _>>()?;
    let grid = render_grid(&columns, &sources).map_err(usage)?;
    grid.save_png(&a.out)?;
    println!("wrote {} ({} rows × {} columns)", a.out.display(), sources.len(), columns.len() + 1);
    Ok(())
}

fn export_element(a: ExportElementArgs) -> CliResult {
    let spec = kanok::motif::element(a.id).map_err(usage)?;
    let (png, txt) = kanok::motif::export_element(&spec, a.size, &a.out).map_err(usage)?;
    println!("wrote {} and {}", png.display(), txt.display());
    Ok(())
}

fn show_config(a: ShowConfigArgs) -> CliResult {
    print!("{}", load_config(a.config.config.as_deref())?.to_toml());
    Ok(())
}
