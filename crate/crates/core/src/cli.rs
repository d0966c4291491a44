//! Command-line front end: simulation studies and estimation on CSV data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::datagen::{logit, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{EstimateResult, EstimatorSpec, Inputs};
use crate::glm::{fit_binary, fit_linear, LinearFit, PropensityFit};
use crate::linalg::with_intercept;
use crate::simbench::{run_study, LinkSpec, MetricsTable, StudyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_SUCCESS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "drmean", version, about = "Estimate a population mean from incomplete data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo study on the synthetic population.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Apply estimators to a CSV dataset.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Settings for `estimate`. Relative `data` paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Deserialize)]
pub struct EstimateConfig {
    pub data: PathBuf,
    /// Covariates of the propensity model (an intercept is always added;
    /// empty means intercept only).
    #[serde(default)]
    pub pi_columns: Vec<String>,
    /// Column holding precomputed propensities; replaces the fitted model.
    #[serde(default)]
    pub pi_hat_column: Option<String>,
    #[serde(default, flatten)]
    pub link: LinkSpec,
    /// Covariates of the outcome model (an intercept is always added).
    #[serde(default)]
    pub y_columns: Option<Vec<String>>,
    pub estimators: Vec<EstimatorSpec>,
}

/// Top-level config document; `mode` selects the subcommand it is meant for.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RunConfig {
    Simulate(StudyConfig),
    Estimate(EstimateConfig),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let RunConfig::Estimate(est) = &mut cfg {
            if est.data.is_relative() {
                if let Some(dir) = path.parent() {
                    est.data = dir.join(&est.data);
                }
            }
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> i32 {
    let (result, what) = match cli.command {
        Command::Simulate {
            config,
            out,
            workers,
        } => (cmd_simulate(&config, &out, workers), "simulate"),
        Command::Estimate { config, out } => (cmd_estimate(&config, &out), "estimate"),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{what}: {e}");
            match e {
                Error::Config(_)
                | Error::Json(_)
                | Error::TooFewReplicates { .. }
                | Error::InvalidStrata(_)
                | Error::Csv { .. }
                | Error::CsvFormat(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// CSV datasets

fn parse_num(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Csv {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Csv {
            row,
            column: column.to_string(),
            message: format!("`{raw}` is not finite"),
        });
    }
    Ok(v)
}

/// Reads a dataset with columns `t`, `y` and numeric covariates.
///
/// Rows are numbered from 1 after the header in error messages. `y` may be
/// empty exactly when `t = 0`.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let t_col = headers
        .iter()
        .position(|h| h == "t")
        .ok_or_else(|| Error::Config("missing `t` column".into()))?;
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Config("missing `y` column".into()))?;
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != t_col && j != y_col).collect();

    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut values = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 1;
        let ti = match record[t_col].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Csv {
                    row,
                    column: "t".into(),
                    message: format!("`{other}` is not 0 or 1"),
                })
            }
        };
        let raw_y = record[y_col].trim();
        let yi = match (ti, raw_y.is_empty()) {
            (true, true) => {
                return Err(Error::Csv {
                    row,
                    column: "y".into(),
                    message: "missing outcome for a respondent (t = 1)".into(),
                })
            }
            (false, false) => {
                return Err(Error::Csv {
                    row,
                    column: "y".into(),
                    message: "outcome present for a nonrespondent (t = 0)".into(),
                })
            }
            (true, false) => Some(parse_num(raw_y, row, "y")?),
            (false, true) => None,
        };
        for &j in &cov_cols {
            values.push(parse_num(&record[j], row, &headers[j])?);
        }
        t.push(ti);
        y.push(yi);
    }
    let n = t.len();
    let p = cov_cols.len();
    let covariates = DMatrix::from_row_slice(n, p, &values);
    let names = cov_cols.iter().map(|&j| headers[j].clone()).collect();
    Dataset::new(covariates, names, t, y)
}

/// Writes the observed view in the layout [`read_dataset_csv`] accepts.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend(data.names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![
            if data.t[i] { "1" } else { "0" }.to_string(),
            data.y[i].map_or(String::new(), |v| v.to_string()),
        ];
        rec.extend((0..data.covariates.ncols()).map(|j| data.covariates[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn fmt_num(v: f64) -> String {
    v.to_string()
}

pub fn metrics_csv(table: &MetricsTable) -> String {
    let mut s = String::from(
        "scenario,n,pi_model,y_model,method,bias,pct_bias,rmse,mae,sd,replicates,failures\n",
    );
    for r in &table.rows {
        let (bias, pct, rmse, mae, sd) = match r.metrics {
            Some(m) => (
                fmt_num(m.bias),
                fmt_num(m.pct_bias),
                fmt_num(m.rmse),
                fmt_num(m.mae),
                fmt_num(m.sd),
            ),
            None => Default::default(),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario_id(),
            r.n,
            r.pi_model.map_or(String::new(), |m| m.to_string()),
            r.y_model.map_or(String::new(), |m| m.to_string()),
            r.estimator,
            bias,
            pct,
            rmse,
            mae,
            sd,
            r.replicates,
            r.failures
        );
    }
    s
}

fn panel_label(k: usize) -> char {
    (b'a' + (k % 26) as u8) as char
}

/// Aligned text with one panel per sample size.
pub fn tables_text(table: &MetricsTable) -> String {
    let mut sizes: Vec<usize> = table.rows.iter().map(|r| r.n).collect();
    sizes.dedup();
    let header = ["pi-model", "y-model", "Method", "Bias", "% Bias", "RMSE", "MAE", "Failures"];
    let mut out = String::new();
    for (k, &n) in sizes.iter().enumerate() {
        let mut lines: Vec<[String; 8]> = Vec::new();
        for r in table.rows.iter().filter(|r| r.n == n) {
            let cells = match r.metrics {
                Some(m) => [m.bias, m.pct_bias, m.rmse, m.mae].map(|v| format!("{v:.2}")),
                None => std::array::from_fn(|_| "NA".to_string()),
            };
            lines.push([
                r.pi_model.map_or("-".into(), |m| m.to_string()),
                r.y_model.map_or("-".into(), |m| m.to_string()),
                r.estimator.to_string(),
                cells[0].clone(),
                cells[1].clone(),
                cells[2].clone(),
                cells[3].clone(),
                r.failures.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..8)
            .map(|j| lines.iter().map(|l| l[j].len()).chain([header[j].len()]).max().unwrap_or(0))
            .collect();
        let _ = writeln!(out, "({}) n = {}", panel_label(k), n);
        let fmt_line = |cols: &[String]| {
            cols.iter()
                .enumerate()
                .map(|(j, c)| {
                    if j < 3 {
                        format!("{c:<w$}", w = widths[j])
                    } else {
                        format!("{c:>w$}", w = widths[j])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "{}", fmt_line(&head).trim_end());
        for l in &lines {
            let _ = writeln!(out, "{}", fmt_line(l).trim_end());
        }
        out.push('\n');
    }
    out
}

pub fn cmd_simulate(config: &Path, out: &Path, workers: Option<usize>) -> Result<i32> {
    let study = match RunConfig::load(config)? {
        RunConfig::Simulate(s) => s,
        RunConfig::Estimate(_) => {
            return Err(Error::Config("config mode is `estimate`, expected `simulate`".into()))
        }
    };
    if workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    study.validate()?;
    let table = run_study(&study, workers)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&table))?;
    fs::write(out.join("tables.txt"), tables_text(&table))?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// estimate

fn select(data: &Dataset, names: &[String]) -> Result<DMatrix<f64>> {
    let idx: Vec<usize> = names
        .iter()
        .map(|name| {
            data.column(name)
                .ok_or_else(|| Error::Config(format!("unknown column `{name}`")))
        })
        .collect::<Result<_>>()?;
    Ok(with_intercept(&data.covariates.select_columns(&idx)))
}

/// Propensities and linear predictors for the estimate command.
struct PropensitySource {
    pi: Vec<f64>,
    eta: Vec<f64>,
}

fn propensity_source(
    data: &Dataset,
    cfg: &EstimateConfig,
) -> std::result::Result<PropensitySource, String> {
    if let Some(col) = &cfg.pi_hat_column {
        let j = data.column(col).ok_or_else(|| format!("unknown column `{col}`"))?;
        let pi: Vec<f64> = data.covariates.column(j).iter().copied().collect();
        let eta = pi.iter().map(|&p| logit(p)).collect();
        return Ok(PropensitySource { pi, eta });
    }
    let x = select(data, &cfg.pi_columns).map_err(|e| e.to_string())?;
    let link = cfg.link.to_link().map_err(|e| e.to_string())?;
    let fit: PropensityFit = fit_binary(&x, &data.t, link).map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err(format!(
            "propensity fit did not converge after {} iterations",
            fit.iterations
        ));
    }
    Ok(PropensitySource {
        pi: fit.pi,
        eta: fit.eta,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), fmt_num)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_estimate(config: &Path, out: &Path) -> Result<i32> {
    let cfg = match RunConfig::load(config)? {
        RunConfig::Estimate(c) => c,
        RunConfig::Simulate(_) => {
            return Err(Error::Config("config mode is `simulate`, expected `estimate`".into()))
        }
    };
    if cfg.estimators.is_empty() {
        return Err(Error::Config("no estimators".into()));
    }
    cfg.estimators.iter().try_for_each(EstimatorSpec::validate)?;
    cfg.link.to_link().map_err(|e| Error::Config(e.to_string()))?;
    let data = read_dataset_csv(&cfg.data)?;
    for name in cfg.pi_columns.iter().chain(cfg.y_columns.iter().flatten()) {
        if data.column(name).is_none() {
            return Err(Error::Config(format!("unknown column `{name}`")));
        }
    }

    let needs_pi = cfg.estimators.iter().any(EstimatorSpec::uses_propensity);
    let pi_source = needs_pi.then(|| propensity_source(&data, &cfg));
    let y_design = cfg.y_columns.as_ref().map(|cols| select(&data, cols)).transpose()?;
    let y_fit: Option<std::result::Result<LinearFit, String>> = y_design.as_ref().map(|x| {
        fit_linear(x, &data.y_or_nan(), &data.t, None).map_err(|e| e.to_string())
    });

    let mut rows = String::from(
        "method,status,mu_hat,mu0_hat,max_weight,min_respondent_pi,collapsed_strata,imputed_cells,dropped_columns,message\n",
    );
    let mut successes = 0;
    for spec in &cfg.estimators {
        let outcome: std::result::Result<EstimateResult, String> = (|| {
            let pi = match (&pi_source, spec.uses_propensity()) {
                (Some(src), true) => Some(src.as_ref().map_err(Clone::clone)?),
                _ => None,
            };
            let fit = match (&y_fit, spec.uses_outcome_model()) {
                (Some(f), true) => Some(f.as_ref().map_err(Clone::clone)?),
                (None, true) => return Err("no y_columns configured".to_string()),
                _ => None,
            };
            let inputs = Inputs {
                data: &data,
                pi_hat: pi.map(|s| s.pi.as_slice()),
                eta_hat: pi.map(|s| s.eta.as_slice()),
                y_design: y_design.as_ref(),
                y_fit: fit,
            };
            spec.evaluate(&inputs).map_err(|e| e.to_string())
        })();
        match outcome {
            Ok(r) => {
                successes += 1;
                let d = &r.diagnostics;
                let _ = writeln!(
                    rows,
                    "{},OK,{},{},{},{},{},{},{},",
                    spec,
                    fmt_num(r.mu_hat),
                    opt(r.mu0_hat),
                    opt(d.max_weight),
                    opt(d.min_respondent_pi),
                    d.collapsed_strata,
                    d.imputed_cells,
                    d.dropped_columns
                );
            }
            Err(msg) => {
                let _ = writeln!(rows, "{},FAILED,,,,,,,,{}", spec, csv_field(&msg));
            }
        }
    }

    fs::create_dir_all(out)?;
    fs::write(out.join("estimates.csv"), rows)?;

    let mut resid = String::from("unit,eta_hat,residual\n");
    if let (Some(Ok(src)), Some(Ok(fit))) = (&pi_source, &y_fit) {
        for (i, r) in fit.residuals.iter().enumerate() {
            if let Some(r) = r {
                let _ = writeln!(resid, "{},{},{}", i + 1, fmt_num(src.eta[i]), fmt_num(*r));
            }
        }
    }
    fs::write(out.join("residuals.csv"), resid)?;

    Ok(if successes > 0 { EXIT_OK } else { EXIT_NO_SUCCESS })
}
