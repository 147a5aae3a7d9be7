use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use misp::inference::{fit as fit_model, summarize};
use misp::io::{self, RunConfig, SampleTable};
use misp::model::{Dataset, SnowModel};
use misp::predict::{extend_curve, predict_curves, PredictionRequest};
use misp::scoring::{cv_table, run_cv, CvPlan};
use misp::simulate::generate_dataset;
use misp::{MispError, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::Common;

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
}

fn setup(common: &Common) -> Result<Run> {
    let cfg = match &common.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(MispError::Config("--threads must be at least 1".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    fs::create_dir_all(&common.out)?;
    let seed = common.seed.unwrap_or(cfg.sampler.seed);
    Ok(Run { cfg, out: common.out.clone(), seed })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_manifest(run: &Run, command: &str, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let inputs: Vec<_> = inputs
        .iter()
        .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": file_sha256(p)? })))
        .collect::<Result<_>>()?;
    let manifest = json!({
        "command": command,
        "seed": run.seed,
        "config_sha256": run.cfg.hash()?,
        "config": run.cfg.to_toml()?,
        "inputs": inputs,
        "outputs": outputs,
        "threads": rayon::current_num_threads(),
        "versions": { "misp": env!("CARGO_PKG_VERSION") },
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| MispError::Input(e.to_string()))?;
    fs::write(run.out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn load_data(run: &Run, data: &Path) -> Result<Dataset> {
    let d = io::ingest(data, run.cfg.model.rho_ice, run.cfg.model.site_tolerance_km)?;
    eprintln!("{}", d.summary());
    Ok(d)
}

pub fn fit(common: &Common, data: &Path) -> Result<()> {
    let run = setup(common)?;
    let dataset = load_data(&run, data)?;
    let model = SnowModel::new(run.cfg.model_config(), dataset)?;
    let samples = fit_model(&model, &run.cfg.sampler_config(Some(run.seed)))?;
    for w in &samples.warnings {
        eprintln!("warning: {w}");
    }
    SampleTable::from_posterior(&model, &samples).write(create(&run.out, "samples.csv")?)?;
    io::write_summary(create(&run.out, "summary.csv")?, &samples.summary(&model))?;
    write_manifest(&run, "fit", &[data], &["samples.csv", "summary.csv"])
}

pub fn predict(common: &Common, data: &Path, samples: &Path) -> Result<()> {
    let run = setup(common)?;
    let dataset = load_data(&run, data)?;
    let model = SnowModel::new(run.cfg.model_config(), dataset)?;
    let posterior = SampleTable::read(File::open(samples)?)?.into_posterior(&model)?;
    let p = &run.cfg.predict;
    let depths = run.cfg.prediction_depths();
    let targets = run.cfg.prediction_targets()?;
    if targets.is_empty() && p.extend_sites.is_empty() {
        return Err(MispError::Config("predict needs [predict] targets or extend_sites".into()));
    }
    let mut cells = Vec::new();
    if !targets.is_empty() {
        let req =
            PredictionRequest { targets, depths: depths.clone(), mode: p.mode, seed: run.seed, thin: p.thin };
        cells.extend(predict_curves(&model, &posterior, &req)?.summary());
    }
    for site in &p.extend_sites {
        cells.extend(extend_curve(&model, &posterior, site, &depths, run.seed)?.summary());
    }
    io::write_curves(create(&run.out, "curves.csv")?, &cells)?;
    write_manifest(&run, "predict", &[data, samples], &["curves.csv"])
}

pub fn cv(common: &Common, data: &Path, compare: &[PathBuf]) -> Result<()> {
    let run = setup(common)?;
    let dataset = load_data(&run, data)?;
    let plan = CvPlan::random(&dataset, run.cfg.cv.n_folds, run.cfg.cv.seed)?;
    let mut configs = vec![run.cfg.clone()];
    for path in compare {
        configs.push(RunConfig::from_path(path)?);
    }
    let mut scores = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let s =
            run_cv(&cfg.cv.label, &dataset, &cfg.model_config(), &cfg.sampler_config(Some(run.seed)), &plan)?;
        for w in &s.warnings {
            eprintln!("warning [{}]: {w}", s.model_label);
        }
        scores.push(s);
    }
    io::write_cv_report(create(&run.out, "cv_report.csv")?, &cv_table(&scores)?)?;
    let mut inputs: Vec<&Path> = vec![data];
    inputs.extend(compare.iter().map(PathBuf::as_path));
    write_manifest(&run, "cv", &inputs, &["cv_report.csv"])
}

pub fn simulate(common: &Common) -> Result<()> {
    let run = setup(common)?;
    let cfg = run.cfg.model_config();
    let (dataset, truth) = generate_dataset(&run.cfg.simulation_spec(run.seed)?, &cfg)?;
    eprintln!("{}", dataset.summary());
    io::write_measurements(create(&run.out, "data.csv")?, &dataset)?;
    let model = SnowModel::new(cfg, dataset)?;
    io::write_parameters(create(&run.out, "truth.csv")?, &model.param_names(), &model.flatten(&truth))?;
    write_manifest(&run, "simulate", &[], &["data.csv", "truth.csv"])
}

pub fn diagnose(common: &Common, samples: &Path) -> Result<()> {
    let run = setup(common)?;
    let table = SampleTable::read(File::open(samples)?)?;
    let rows: Vec<_> =
        table.series().iter().zip(&table.names).map(|(chains, name)| summarize(name, chains)).collect();
    let worst = rows.iter().filter_map(|r| r.rhat).fold(f64::NAN, f64::max);
    eprintln!("{} parameters, max R-hat {worst:.4}", rows.len());
    io::write_summary(create(&run.out, "diagnostics.csv")?, &rows)?;
    io::write_trace(create(&run.out, "trace.csv")?, &table)?;
    write_manifest(&run, "diagnose", &[samples], &["diagnostics.csv", "trace.csv"])
}
