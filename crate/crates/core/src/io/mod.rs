//! File formats: measurement, parameter, sample, summary, curve and CV CSVs,
//! plus the TOML run configuration.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

pub use config::{
    BasisSection, CovarianceSection, CvSection, ModelSection, PredictSection, PriorSection, RunConfig,
    SimulateSection, TargetEntry,
};

use crate::geodesy::SiteLocation;
use crate::inference::{PosteriorSamples, SummaryRow};
use crate::model::{CoreRecord, Dataset, SnowModel};
use crate::predict::{CellSummary, PredictionMode};
use crate::scoring::CvRow;
use crate::{MispError, Result};

pub const MEASUREMENT_HEADER: [&str; 7] =
    ["site_id", "lat", "lon", "campaign", "core_rep", "depth_m", "density_g_cm3"];

/// Ten significant digits; plain notation for moderate magnitudes.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.9e}").parse().unwrap();
    let a = rounded.abs();
    if (1e-5..1e15).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_num)
}

fn parse_num(s: &str, what: &str, line: u64) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| MispError::Input(format!("row {line}: {what} {s:?} is not a number")))
}

fn parse_opt(s: &str, what: &str, line: u64) -> Result<Option<f64>> {
    if s.trim() == "NA" {
        Ok(None)
    } else {
        parse_num(s, what, line).map(Some)
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers()?;
    if h.iter().ne(expected.iter().copied()) {
        return Err(MispError::Input(format!(
            "header must be {:?}, found {:?}",
            expected,
            h.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// Read a measurement CSV and group rows into cores by `(site_id, core_rep)`.
pub fn ingest(path: &Path, rho_ice: f64, site_tolerance_km: f64) -> Result<Dataset> {
    ingest_reader(File::open(path)?, rho_ice, site_tolerance_km)
}

pub fn ingest_reader<R: Read>(input: R, rho_ice: f64, site_tolerance_km: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut rdr, &MEASUREMENT_HEADER)?;
    struct Pending {
        site_id: String,
        core_rep: String,
        location: SiteLocation,
        campaign: String,
        rows: Vec<(f64, f64, u64)>,
    }
    let mut order: Vec<Pending> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let lat = parse_num(&rec[1], "lat", line)?;
        let lon = parse_num(&rec[2], "lon", line)?;
        let depth = parse_num(&rec[5], "depth_m", line)?;
        let density = parse_num(&rec[6], "density_g_cm3", line)?;
        if !(density > 0.0 && density < rho_ice) {
            return Err(MispError::Validation(format!(
                "row {line}: density {density} outside (0, ρ_I = {rho_ice})"
            )));
        }
        if !(depth >= 0.0 && depth.is_finite()) {
            return Err(MispError::Validation(format!("row {line}: depth {depth} must be ≥ 0")));
        }
        let location =
            SiteLocation::new(lat, lon).map_err(|e| MispError::Validation(format!("row {line}: {e}")))?;
        let key = (rec[0].to_string(), rec[4].to_string());
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            order.push(Pending {
                site_id: key.0.clone(),
                core_rep: key.1.clone(),
                location,
                campaign: rec[3].to_string(),
                rows: Vec::new(),
            });
            order.len() - 1
        });
        let core = &mut order[slot];
        if core.location != location || core.campaign != rec[3] {
            return Err(MispError::Validation(format!(
                "row {line}: core {}/{} changes location or campaign",
                core.site_id, core.core_rep
            )));
        }
        if let Some((_, _, first)) = core.rows.iter().find(|(d, _, _)| *d == depth) {
            return Err(MispError::Validation(format!(
                "row {line}: duplicate depth {depth} for core {}/{} (first at row {first})",
                core.site_id, core.core_rep
            )));
        }
        core.rows.push((depth, density, line));
    }
    let mut cores = Vec::with_capacity(order.len());
    for mut p in order {
        p.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let core = CoreRecord::new(
            p.site_id,
            p.core_rep,
            p.location,
            p.campaign,
            p.rows.iter().map(|r| r.0).collect(),
            p.rows.iter().map(|r| r.1).collect(),
        )?;
        cores.push(core);
    }
    Dataset::from_cores_with_tolerance(cores, site_tolerance_km, rho_ice)
}

pub fn write_measurements<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MEASUREMENT_HEADER)?;
    for core in &data.cores {
        for (x, rho) in core.depths.iter().zip(&core.densities) {
            w.write_record([
                core.site_id.clone(),
                fmt_num(core.location.lat),
                fmt_num(core.location.lon),
                core.campaign.clone(),
                core.core_rep.clone(),
                fmt_num(*x),
                fmt_num(*rho),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `parameter,value` pairs.
pub fn write_parameters<W: Write>(out: W, names: &[String], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "value"])?;
    for (n, v) in names.iter().zip(values) {
        w.write_record([n.clone(), fmt_num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_parameters<R: Read>(input: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &["parameter", "value"])?;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        names.push(rec[0].to_string());
        values.push(parse_num(&rec[1], "value", line_of(&rec))?);
    }
    Ok((names, values))
}

/// Wide table of draws: one row per (chain, draw), one column per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub names: Vec<String>,
    /// `chains[c][d][p]`.
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl SampleTable {
    pub fn from_posterior(model: &SnowModel, samples: &PosteriorSamples) -> Self {
        SampleTable {
            names: samples.param_names.clone(),
            chains: samples.chains.iter().map(|c| c.iter().map(|s| model.flatten(s)).collect()).collect(),
        }
    }

    /// `series[param][chain][draw]`.
    pub fn series(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.names.len())
            .map(|p| self.chains.iter().map(|c| c.iter().map(|d| d[p]).collect()).collect())
            .collect()
    }

    pub fn into_posterior(self, model: &SnowModel) -> Result<PosteriorSamples> {
        let expected = model.param_names();
        if self.names != expected {
            return Err(MispError::Input("sample columns do not match the model's parameters".into()));
        }
        let chains = self
            .chains
            .iter()
            .map(|c| c.iter().map(|d| model.unflatten(d)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorSamples { param_names: self.names, chains, stats: Vec::new(), warnings: Vec::new() })
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (d, row) in chain.iter().enumerate() {
                let mut rec = vec![c.to_string(), d.to_string()];
                rec.extend(row.iter().map(|v| fmt_num(*v)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "chain" || &header[1] != "draw" {
            return Err(MispError::Input("sample header must start with chain,draw".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = line_of(&rec);
            let c: usize =
                rec[0].parse().map_err(|_| MispError::Input(format!("row {line}: bad chain index")))?;
            if c > chains.len() {
                return Err(MispError::Input(format!("row {line}: chain {c} out of order")));
            }
            if c == chains.len() {
                chains.push(Vec::new());
            }
            let row = rec.iter().skip(2).map(|v| parse_num(v, "draw", line)).collect::<Result<Vec<_>>>()?;
            chains[c].push(row);
        }
        Ok(SampleTable { names, chains })
    }
}

/// Long format `chain,draw,parameter,value` for trace plots.
pub fn write_trace<W: Write>(out: W, table: &SampleTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["chain", "draw", "parameter", "value"])?;
    for (c, chain) in table.chains.iter().enumerate() {
        for (d, row) in chain.iter().enumerate() {
            for (name, v) in table.names.iter().zip(row) {
                w.write_record([c.to_string(), d.to_string(), name.clone(), fmt_num(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

const SUMMARY_HEADER: [&str; 7] = ["parameter", "mean", "sd", "q025", "q975", "rhat", "ess"];

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            fmt_num(r.mean),
            fmt_num(r.sd),
            fmt_num(r.q025),
            fmt_num(r.q975),
            fmt_opt(r.rhat),
            fmt_opt(r.ess),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &SUMMARY_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let l = line_of(&rec);
            Ok(SummaryRow {
                parameter: rec[0].to_string(),
                mean: parse_num(&rec[1], "mean", l)?,
                sd: parse_num(&rec[2], "sd", l)?,
                q025: parse_num(&rec[3], "q025", l)?,
                q975: parse_num(&rec[4], "q975", l)?,
                rhat: parse_opt(&rec[5], "rhat", l)?,
                ess: parse_opt(&rec[6], "ess", l)?,
            })
        })
        .collect()
}

const CURVE_HEADER: [&str; 6] = ["site_label", "depth_m", "mean", "q025", "q975", "mode"];

pub fn write_curves<W: Write>(out: W, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for c in cells {
        w.write_record([
            c.site_label.clone(),
            fmt_num(c.depth_m),
            fmt_num(c.mean),
            fmt_num(c.q025),
            fmt_num(c.q975),
            c.mode.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves<R: Read>(input: R) -> Result<Vec<CellSummary>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &CURVE_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let l = line_of(&rec);
            let mode = match &rec[5] {
                "mean_curve" => PredictionMode::MeanCurve,
                "noisy_measurement" => PredictionMode::NoisyMeasurement,
                other => return Err(MispError::Input(format!("row {l}: unknown mode {other:?}"))),
            };
            Ok(CellSummary {
                site_label: rec[0].to_string(),
                depth_m: parse_num(&rec[1], "depth_m", l)?,
                mean: parse_num(&rec[2], "mean", l)?,
                q025: parse_num(&rec[3], "q025", l)?,
                q975: parse_num(&rec[4], "q975", l)?,
                mode,
            })
        })
        .collect()
}

const CV_HEADER: [&str; 5] = ["model_label", "ISE", "IAE", "CRPS", "relative_CRPS"];

pub fn write_cv_report<W: Write>(out: W, rows: &[CvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CV_HEADER)?;
    for r in rows {
        w.write_record([
            r.model_label.clone(),
            fmt_num(r.ise),
            fmt_num(r.iae),
            fmt_num(r.crps),
            fmt_num(r.relative_crps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cv_report<R: Read>(input: R) -> Result<Vec<CvRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &CV_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let l = line_of(&rec);
            Ok(CvRow {
                model_label: rec[0].to_string(),
                ise: parse_num(&rec[1], "ISE", l)?,
                iae: parse_num(&rec[2], "IAE", l)?,
                crps: parse_num(&rec[3], "CRPS", l)?,
                relative_crps: parse_num(&rec[4], "relative_CRPS", l)?,
            })
        })
        .collect()
}
