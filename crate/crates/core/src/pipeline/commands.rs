//! The artifact-producing steps behind the `waveopt` binary. Each takes its
//! inputs by path, writes under `out`, and returns a JSON summary.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::benchmark::{benchmark, BenchImage};
use super::config::Config;
use super::corpus::{gen_corpus, Corpus, Split};
use super::dataset::{build_dataset, class_summaries, Dataset, DatasetConfig};
use super::edit::{edit, EditConfig, Method};
use crate::diffusion::{train_denoiser, Denoiser, NoiseSchedule};
use crate::error::{arg_err, Result};
use crate::estimator::{evaluate, train_estimator_with_eval, WaveOptEstimator};
use crate::inversion::{endpoint_scan, OptimizeConfig};
use crate::io::{pgm, write_csv, write_json};
use crate::wavelet::frequency_profile;

/// Default artifact locations under the output directory.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.out.join("corpus")
    }

    pub fn denoiser(&self) -> PathBuf {
        self.out.join("denoiser")
    }

    pub fn dataset(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn estimator(&self) -> PathBuf {
        self.out.join("estimator")
    }
}

fn edit_config(cfg: &Config) -> EditConfig {
    EditConfig {
        optimize: cfg.optimization.optimize,
        margin: cfg.estimator.margin,
    }
}

/// The denoiser checkpoint must have been trained on the configured schedule.
fn load_denoiser(dir: &Path, cfg: &Config) -> Result<(Denoiser, NoiseSchedule)> {
    let (model, schedule) = Denoiser::load(dir)?;
    let sc = schedule.unwrap_or(cfg.schedule);
    if sc.train_steps != cfg.schedule.train_steps
        || sc.beta_min != cfg.schedule.beta_min
        || sc.beta_max != cfg.schedule.beta_max
    {
        return Err(arg_err!(
            "denoiser in {} was trained on a different noise schedule",
            dir.display()
        ));
    }
    Ok((model, NoiseSchedule::new(cfg.schedule)?))
}

fn load_or_generate_corpus(dir: Option<&Path>, cfg: &Config) -> Result<Corpus> {
    match dir {
        Some(d) => Corpus::load(d),
        None => gen_corpus(&cfg.corpus),
    }
}

pub fn gen_corpus_cmd(cfg: &Config, layout: &Layout) -> Result<Value> {
    let corpus = gen_corpus(&cfg.corpus)?;
    let dir = layout.corpus();
    corpus.save(&dir)?;
    Ok(json!({ "corpus": dir, "images": corpus.images.len() }))
}

pub fn train_denoiser_cmd(cfg: &Config, layout: &Layout, corpus_dir: Option<&Path>) -> Result<Value> {
    let corpus = load_or_generate_corpus(corpus_dir, cfg)?;
    let schedule = NoiseSchedule::new(cfg.schedule)?;
    let (latents, tokens) = corpus.denoiser_set()?;
    let mut model = Denoiser::new(cfg.denoiser.model);
    let report = train_denoiser(&mut model, &latents, &tokens, &schedule, &cfg.denoiser.train)?;
    let dir = layout.denoiser();
    model.save(&dir, &cfg.schedule)?;
    write_json(&dir.join("training.json"), &report)?;
    Ok(json!({
        "denoiser": dir,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
    }))
}

pub fn scan_cmd(
    cfg: &Config,
    layout: &Layout,
    denoiser_dir: &Path,
    corpus_dir: Option<&Path>,
    image: usize,
) -> Result<Value> {
    let (model, schedule) = load_denoiser(denoiser_dir, cfg)?;
    let corpus = load_or_generate_corpus(corpus_dir, cfg)?;
    let im = corpus
        .images
        .get(image)
        .ok_or_else(|| arg_err!("image {image} not in a corpus of {}", corpus.images.len()))?;
    let prompt = model.prompt(&[im.token])?;
    let opt = &cfg.optimization;
    let scan = endpoint_scan(
        &im.image,
        &prompt,
        opt.scan_stride,
        opt.threshold,
        &model,
        &schedule,
        &opt.optimize,
    )?;
    let dir = layout.out.join(format!("scan_{image:03}"));
    scan.save(&dir)?;
    Ok(json!({
        "scan": dir,
        "endpoint": scan.endpoint.t,
        "crossed": scan.endpoint.crossed,
        "optimization_seconds": scan.optimization_seconds,
    }))
}

pub fn profile_cmd(
    cfg: &Config,
    layout: &Layout,
    corpus_dir: Option<&Path>,
    dataset_dir: Option<&Path>,
) -> Result<Value> {
    let corpus = load_or_generate_corpus(corpus_dir, cfg)?;
    let endpoints = match dataset_dir {
        Some(d) => Some(Dataset::load(d)?.records.iter().map(|r| r.t_star).collect::<Vec<_>>()),
        None => None,
    };
    let mut rows = Vec::with_capacity(corpus.images.len());
    let mut records = Vec::with_capacity(corpus.images.len());
    for (i, im) in corpus.images.iter().enumerate() {
        let p = frequency_profile(&im.image, &cfg.estimator.model.equalize)?;
        let endpoint = endpoints.as_ref().and_then(|e| e.get(i).copied());
        rows.push(vec![
            i.to_string(),
            corpus.spec.classes[im.class].name.clone(),
            format!("{:.6}", p.energy_ll),
            format!("{:.6}", p.energy_sum),
            format!("{:.6}", p.energy_sum_equalized),
            endpoint.map(|e| e.to_string()).unwrap_or_default(),
        ]);
        let mut rec = serde_json::to_value(p.record(endpoint))?;
        rec["image"] = json!(i);
        rec["class"] = json!(corpus.spec.classes[im.class].name);
        records.push(rec);
    }
    std::fs::create_dir_all(&layout.out)?;
    write_csv(
        &layout.out.join("profile.csv"),
        &[
            "image",
            "class",
            "energy_ll",
            "energy_sum",
            "energy_sum_equalized",
            "endpoint",
        ],
        &rows,
    )?;
    let path = layout.out.join("profile.json");
    write_json(&path, &records)?;
    Ok(json!({ "profile": path, "images": records.len() }))
}

pub fn dataset_config(cfg: &Config) -> DatasetConfig {
    DatasetConfig {
        optimize: OptimizeConfig {
            init_mode: cfg.optimization.dataset_init,
            ..cfg.optimization.optimize
        },
        threshold: cfg.optimization.threshold,
        equalize: cfg.estimator.model.equalize,
    }
}

pub fn build_dataset_cmd(
    cfg: &Config,
    layout: &Layout,
    denoiser_dir: &Path,
    corpus_dir: Option<&Path>,
) -> Result<Value> {
    let (model, schedule) = load_denoiser(denoiser_dir, cfg)?;
    let corpus = load_or_generate_corpus(corpus_dir, cfg)?;
    let ds = build_dataset(&corpus, &model, &schedule, &dataset_config(cfg))?;
    let dir = layout.dataset();
    ds.save(&dir)?;
    let summary = class_summaries(&ds.records)?;
    write_json(&dir.join("classes.json"), &summary)?;
    Ok(json!({
        "dataset": dir,
        "pairs": {
            "train": ds.pair_count(Split::Train),
            "val": ds.pair_count(Split::Val),
            "test": ds.pair_count(Split::Test),
        },
        "classes": summary,
    }))
}

pub fn train_estimator_cmd(cfg: &Config, layout: &Layout, dataset_dir: &Path) -> Result<Value> {
    let ds = Dataset::load(dataset_dir)?;
    if ds.steps != cfg.schedule.steps {
        return Err(arg_err!(
            "dataset built for {} steps, config has {}",
            ds.steps,
            cfg.schedule.steps
        ));
    }
    let (train, val, test) = (ds.pairs(Split::Train)?, ds.pairs(Split::Val)?, ds.pairs(Split::Test)?);
    let mut model = WaveOptEstimator::new(cfg.estimator.model)?;
    let prior = train.iter().map(|p| p.t_star_gt as f64).sum::<f64>() / train.len().max(1) as f64;
    model.set_endpoint_prior(prior);
    let (model, metrics) = train_estimator_with_eval(model, &train, &val, Some(&test), &cfg.estimator.train)?;
    let dir = layout.estimator();
    model.save(&dir)?;
    metrics.save_csv(&dir.join("metrics.csv"))?;
    let last = metrics.epochs.last();
    Ok(json!({
        "estimator": dir,
        "best_epoch": metrics.best_epoch,
        "final_test_mae": last.map(|m| m.test_mae),
        "final_val_mae": last.map(|m| m.val_mae),
    }))
}

pub fn eval_estimator_cmd(cfg: &Config, layout: &Layout, estimator_dir: &Path, dataset_dir: &Path) -> Result<Value> {
    let model = WaveOptEstimator::load(estimator_dir)?;
    let ds = Dataset::load(dataset_dir)?;
    let mut rows = Vec::new();
    let mut out = serde_json::Map::new();
    for (name, split) in [("train", Split::Train), ("val", Split::Val), ("test", Split::Test)] {
        let pairs = ds.pairs(split)?;
        if pairs.is_empty() {
            continue;
        }
        let (loss, mae) = evaluate(&model, &pairs, &cfg.estimator.train)?;
        rows.push(vec![
            name.to_string(),
            pairs.len().to_string(),
            format!("{loss:.6}"),
            format!("{mae:.6}"),
        ]);
        out.insert(name.into(), json!({ "pairs": pairs.len(), "loss": loss, "mae": mae }));
    }
    std::fs::create_dir_all(&layout.out)?;
    write_csv(&layout.out.join("eval.csv"), &["split", "pairs", "loss", "mae"], &rows)?;
    Ok(Value::Object(out))
}

pub struct EditArgs<'a> {
    pub denoiser: &'a Path,
    pub estimator: Option<&'a Path>,
    pub image: &'a Path,
    pub src_token: usize,
    pub edit_token: usize,
    pub method: Method,
}

pub fn edit_cmd(cfg: &Config, layout: &Layout, args: &EditArgs) -> Result<Value> {
    let (model, schedule) = load_denoiser(args.denoiser, cfg)?;
    let estimator = args.estimator.map(WaveOptEstimator::load).transpose()?;
    if args.method.uses_estimator() && estimator.is_none() {
        return Err(arg_err!("method {} needs --estimator", args.method));
    }
    let x = pgm::load(args.image)?;
    let p_src = model.prompt(&[args.src_token])?;
    let p_edit = model.prompt(&[args.edit_token])?;
    let (x_edit, report) = edit(
        &x,
        &p_src,
        &p_edit,
        args.method,
        &model,
        &schedule,
        estimator.as_ref(),
        &edit_config(cfg),
    )?;
    std::fs::create_dir_all(&layout.out)?;
    let path = layout.out.join("edit.pgm");
    pgm::save(&path, &x_edit)?;
    write_json(&layout.out.join("edit.json"), &report)?;
    Ok(json!({ "image": path, "report": report }))
}

pub fn benchmark_cmd(
    cfg: &Config,
    layout: &Layout,
    denoiser_dir: &Path,
    estimator_dir: Option<&Path>,
    corpus_dir: Option<&Path>,
) -> Result<Value> {
    let (model, schedule) = load_denoiser(denoiser_dir, cfg)?;
    let estimator = estimator_dir.map(WaveOptEstimator::load).transpose()?;
    let corpus = load_or_generate_corpus(corpus_dir, cfg)?;
    let images: Vec<BenchImage> = corpus
        .images
        .iter()
        .enumerate()
        .filter(|(_, im)| im.split == cfg.benchmark.split)
        .map(|(index, im)| BenchImage {
            index,
            class: im.class,
            token: im.token,
            image: im.image.clone(),
        })
        .collect();
    let report = benchmark(
        &images,
        &cfg.benchmark.methods,
        &model,
        &schedule,
        estimator.as_ref(),
        &edit_config(cfg),
    )?;
    report.save(&layout.out)?;
    Ok(json!({ "benchmark": layout.out.join("benchmark.json"), "rows": report.rows }))
}
