//! Command line: dataset preparation, training, evaluation and the server.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use myfood_core::dataset::{
    build_dataset, dataset_stats, split_dataset, synthetic, validate_dataset, BuildOptions, ClassTaxonomy, Dataset,
    Split, SplitRatios,
};
use myfood_core::evaluation::{
    comparison_table, grade_split, read_grades, run_experiment, write_grades, ExperimentSpec, DEFAULT_MIN_OVERLAP,
};
use myfood_core::metrics::AggregationMode;
use myfood_core::modelhub::{train_reference, ModelConfig};
use myfood_core::{Error, Result};

use crate::config::ServiceConfig;
use crate::models::load_predictor;

#[derive(Debug, Parser)]
#[command(name = "myfood", version, about = "Food segmentation and meal logging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, check and split datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the reference model.
    Train(TrainArgs),
    /// Evaluate predictors.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Same as `eval grade`.
    Grade(GradeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Build a dataset directory from VIA annotations and source images.
    Build {
        /// VIA JSON files.
        #[arg(long = "via", required = true, num_args = 1..)]
        via: Vec<PathBuf>,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Class list, one name per line; defaults to the nine-food taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Side of the square output images; 0 keeps native sizes.
        #[arg(long, default_value_t = 512)]
        side: u32,
        #[arg(long, default_value = "food")]
        class_key: String,
    },
    /// Check images, masks and annotations for consistency.
    Validate { dir: PathBuf },
    /// Print image counts per class and split.
    Stats { dir: PathBuf },
    /// Assign train/validation/test splits.
    Split {
        dir: PathBuf,
        /// train,validation,test
        #[arg(long, default_value = "0.6,0.2,0.2")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset of colored shapes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 512)]
        side: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Weights file to write; the training log goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: Split,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `oracle`, `reference`, `constant-<class id>` or a backend name.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub backends: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Run a predictor over a split and write metric reports.
    Run {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "dataset")]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Output directory; defaults to `runs/<model>-<split>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// image-class, per-image or pooled-pixels.
        #[arg(long, default_value = "image-class")]
        aggregation: AggregationMode,
        #[arg(long)]
        overlays: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grade detections per image as great, good or bad.
    Grade(GradeArgs),
    /// Tabulate one or more grades.csv files side by side.
    Compare {
        #[arg(required = true)]
        grades: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, visible_alias = "images", default_value = "dataset")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
    pub min_overlap: f64,
    /// Directory for grades.csv; defaults to `runs/<model>-<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset(c) => dataset(c),
        Command::Train(a) => train(a),
        Command::Eval(EvalCommand::Run {
            model,
            dataset,
            split,
            out,
            aggregation,
            overlays,
            seed,
        }) => {
            log::info!("seed {seed}");
            let dataset = Dataset::open(dataset)?;
            let predictor = load_model(&model, &dataset)?;
            let out = out.unwrap_or_else(|| default_out(&model.model, split));
            let mut spec = ExperimentSpec::new(&predictor, &dataset, split, &out);
            spec.seed = seed;
            spec.aggregation = aggregation;
            spec.overlays = overlays;
            let outcome = run_experiment(&spec)?;
            for e in &outcome.exceptions {
                log::warn!("{}: {}", e.image_id, e.reason);
            }
            let images: BTreeSet<&str> = outcome.rows.iter().map(|r| r.image_id.as_str()).collect();
            println!(
                "{} images evaluated, {} exceptions, reports in {}",
                images.len(),
                outcome.exceptions.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval(EvalCommand::Grade(a)) | Command::Grade(a) => grade(a),
        Command::Eval(EvalCommand::Compare { grades }) => compare(&grades),
        Command::Serve { config } => serve(&config),
    }
}

fn dataset(c: DatasetCommand) -> Result<()> {
    match c {
        DatasetCommand::Build {
            via,
            images,
            out,
            taxonomy,
            side,
            class_key,
        } => {
            let taxonomy = match taxonomy {
                Some(p) => ClassTaxonomy::parse_manifest(&read(&p)?)?,
                None => ClassTaxonomy::brazilian_food(),
            };
            let docs = via.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
            let options = BuildOptions {
                class_key,
                side: (side > 0).then_some(side),
            };
            let ds = build_dataset(&docs, &images, &taxonomy, &out, &options)?;
            println!("{} images written to {}", ds.index.records.len(), out.display());
        }
        DatasetCommand::Validate { dir } => {
            let report = validate_dataset(&Dataset::open(&dir)?);
            for p in &report.problems {
                println!("{p}");
            }
            if !report.is_ok() {
                return Err(Error::Validation(format!(
                    "{} problem(s) in {} images",
                    report.problems.len(),
                    report.images_checked
                )));
            }
            println!("{} images ok", report.images_checked);
        }
        DatasetCommand::Stats { dir } => {
            let ds = Dataset::open(&dir)?;
            print!("{}", dataset_stats(&ds.index).render(ds.taxonomy()));
        }
        DatasetCommand::Split { dir, ratios, seed } => {
            log::info!("seed {seed}");
            let ratios = SplitRatios::parse(&ratios)?;
            let mut ds = Dataset::open(&dir)?;
            ds.index = split_dataset(&ds.index, ratios, seed)?;
            ds.save_splits()?;
            let count = |s| ds.index.in_split(s).count();
            println!(
                "train {} validation {} test {}",
                count(Split::Train),
                count(Split::Validation),
                count(Split::Test)
            );
        }
        DatasetCommand::Synth { out, count, side, seed } => {
            log::info!("seed {seed}");
            let config = synthetic::SyntheticConfig {
                count,
                side,
                seed,
                ..Default::default()
            };
            let ds = synthetic::write_fixture(&out, &ClassTaxonomy::brazilian_food(), &config)?;
            println!("{} images written to {}", ds.index.records.len(), out.display());
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let text = read(&a.config)?;
    log::info!("config digest {}, seed {}", text_digest(&text), a.seed);
    let config = ModelConfig::from_toml(&text)?;
    let ds = Dataset::open(&a.dataset)?;
    let mut ids: Vec<&str> = ds.index.in_split(a.split).map(|r| r.image_id.as_str()).collect();
    ids.sort_unstable();
    let samples = ids
        .iter()
        .map(|id| Ok((ds.load_image(id)?, ds.load_mask(id)?)))
        .collect::<Result<Vec<_>>>()?;
    let (model, log) = train_reference(&config, &samples, ds.taxonomy().num_labels(), a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&a.out)?;
    let log_path = a.out.with_extension("log.json");
    write(&log_path, &serde_json::to_string_pretty(&log)?)?;
    println!(
        "trained on {} images, final loss {:.4}, digest {}",
        samples.len(),
        log.epoch_losses.last().copied().unwrap_or(f64::NAN),
        model.digest()
    );
    Ok(())
}

fn grade(a: GradeArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.min_overlap) {
        return Err(Error::Validation(format!("min overlap {} outside [0, 1]", a.min_overlap)));
    }
    let dataset = Dataset::open(&a.dataset)?;
    let predictor = load_model(&a.model, &dataset)?;
    let (images, grades) = grade_split(&predictor, &dataset, a.split, a.min_overlap)?;
    let grades = BTreeMap::from([(a.model.model.clone(), grades)]);
    let out = a.out.unwrap_or_else(|| default_out(&a.model.model, a.split));
    create_dir(&out)?;
    write_grades(&out.join("grades.csv"), &images, &grades)?;
    print!("{}", comparison_table(&images, &grades)?);
    Ok(())
}

fn compare(paths: &[PathBuf]) -> Result<()> {
    let mut images: Option<Vec<String>> = None;
    let mut all = BTreeMap::new();
    for path in paths {
        let (these, grades) = read_grades(path)?;
        match &images {
            None => images = Some(these),
            Some(first) if *first != these => {
                return Err(Error::Validation(format!(
                    "{} grades a different image list than {}",
                    path.display(),
                    paths[0].display()
                )));
            }
            Some(_) => {}
        }
        for (system, g) in grades {
            if all.insert(system.clone(), g).is_some() {
                return Err(Error::Validation(format!("system {system} appears twice")));
            }
        }
    }
    print!("{}", comparison_table(&images.unwrap_or_default(), &all)?);
    Ok(())
}

fn serve(path: &Path) -> Result<()> {
    let config = ServiceConfig::load(path)?;
    log::info!("config digest {}", config.digest());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Validation(format!("cannot start runtime: {e}")))?;
    runtime.block_on(crate::api::serve(config))
}

fn load_model(m: &ModelArgs, dataset: &Dataset) -> Result<myfood_core::modelhub::PredictorHandle> {
    let p = load_predictor(&m.model, m.weights.as_deref(), m.backends.as_deref(), Some(dataset))?;
    log::info!("model {} digest {}", p.name(), p.digest());
    Ok(p)
}

fn default_out(model: &str, split: Split) -> PathBuf {
    Path::new("runs").join(format!("{model}-{split}"))
}

fn text_digest(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
