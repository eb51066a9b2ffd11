//! On-disk formats.
//!
//! Every CSV starts with a `#schema=<name>/<version>` line, optionally
//! followed by further `#key=value` metadata lines, then a header row.
//! Floats are written in shortest round-trip form, so rereading a file gives
//! back the exact values and reruns give byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dynamics::ThetaParams;
use crate::error::{Error, Result};
use crate::policy::checkpoint::{format_params, parse_params};
use crate::policy::PolicyParams;

use super::config::ExperimentConfig;

pub const REWARD_SCHEMA: &str = "reward/1";
pub const METRICS_SCHEMA: &str = "metrics/1";
pub const REPETITIONS_SCHEMA: &str = "metrics-repetitions/1";
pub const BELIEF_SCHEMA: &str = "belief-trace/1";
pub const SHARED_SCHEMA: &str = "shared-trace/1";
pub const ATTACK_SCHEMA: &str = "attack-trace/1";

pub const REWARD_HEADER: [&str; 5] = ["episode", "reward", "mi_sum", "fuel_sum", "distortion_sum"];
pub const METRICS_HEADER: [&str; 12] = [
    "theta",
    "theta_m",
    "theta_n",
    "sigma_e_real",
    "sr_real",
    "sigma_e_filtered",
    "sr_filtered",
    "fuel_real",
    "fuel_filtered",
    "delta_pct",
    "p_true_real",
    "p_true_filtered",
];
pub const REPETITIONS_HEADER: [&str; 15] = [
    "theta",
    "repetition",
    "run_seed",
    "sigma_e_real",
    "sigma_e_filtered",
    "sigma_e_real_mean",
    "sigma_e_filtered_mean",
    "fuel_real",
    "fuel_filtered",
    "p_true_real",
    "p_true_filtered",
    "cross_step_real",
    "cross_step_filtered",
    "degenerate_real",
    "degenerate_filtered",
];
pub const SHARED_HEADER: [&str; 7] = ["step", "theta_m", "theta_n", "v_cav", "v_shared", "s_shared", "cell"];
pub const ATTACK_HEADER: [&str; 5] = ["step", "p_true_theta", "theta_hat_m", "theta_hat_n", "sigma_e"];

pub fn belief_header(n_theta: usize) -> Vec<String> {
    std::iter::once("step".to_string())
        .chain((1..=n_theta).map(|k| format!("p_theta{k}")))
        .collect()
}

/// CSV document assembled in memory and written in one go.
pub struct CsvDoc {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvDoc {
    pub fn new<S: AsRef<str>>(schema: &str, meta: &[(&str, String)], header: &[S]) -> Self {
        let mut text = format!("#schema={schema}\n");
        for (k, v) in meta {
            text.push_str(&format!("#{k}={v}\n"));
        }
        let mut doc = CsvDoc {
            writer: csv::WriterBuilder::new().flexible(true).from_writer(text.into_bytes()),
        };
        doc.row(header.iter().map(|h| h.as_ref().to_string()));
        doc
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        // the sink is memory, so the only failure mode is allocation
        self.writer.write_record(fields).expect("in-memory csv write");
    }

    pub fn as_str(&mut self) -> &str {
        self.writer.flush().expect("in-memory csv flush");
        std::str::from_utf8(self.writer.get_ref()).expect("csv fields are strings")
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = self.as_str().to_string();
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Shortest round-trip text of a float.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- checkpoint

pub const CHECKPOINT_TAG: &str = "experiment-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub episodes_done: usize,
    pub config: ExperimentConfig,
    pub params: PolicyParams,
}

impl Checkpoint {
    /// ```text
    /// experiment-checkpoint 1
    /// episodes <n>
    /// config <line count>
    /// <TOML document>
    /// <policy block>
    /// ```
    pub fn format(&self) -> String {
        let toml = self.config.to_toml();
        let lines = toml.lines().count();
        format!(
            "{CHECKPOINT_TAG} {CHECKPOINT_VERSION}\nepisodes {}\nconfig {lines}\n{toml}{}",
            self.episodes_done,
            if toml.ends_with('\n') || toml.is_empty() {
                ""
            } else {
                "\n"
            },
        ) + &format_params(&self.params)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut header = |n: usize, key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("line {n}: missing {key:?} line")))?;
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
                _ => Err(Error::Checkpoint(format!(
                    "line {n}: expected \"{key} <value>\", found {line:?}"
                ))),
            }
        };
        let version = header(1, CHECKPOINT_TAG)?;
        if version.parse::<u32>().ok() != Some(CHECKPOINT_VERSION) {
            return Err(Error::Checkpoint(format!(
                "line 1: unsupported checkpoint version {version}"
            )));
        }
        let episodes_done = header(2, "episodes")?
            .parse()
            .map_err(|_| Error::Checkpoint("line 2: bad episode count".into()))?;
        let n_config: usize = header(3, "config")?
            .parse()
            .map_err(|_| Error::Checkpoint("line 3: bad config line count".into()))?;
        let all: Vec<&str> = text.lines().collect();
        if all.len() < 3 + n_config {
            return Err(Error::Checkpoint("config block is truncated".into()));
        }
        let toml = all[3..3 + n_config].join("\n");
        let config = ExperimentConfig::parse(&toml).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let rest = all[3 + n_config..].join("\n");
        let params = parse_params(&rest, 3 + n_config)?;
        Ok(Checkpoint {
            episodes_done,
            config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.format()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Rejects a checkpoint whose network or belief support differs from
    /// what `cfg` would build.
    pub fn check_compatible(&self, cfg: &ExperimentConfig) -> Result<()> {
        let ours = &self.config;
        let mut diffs = Vec::new();
        let mut cmp = |key: &str, a: String, b: String| {
            if a != b {
                diffs.push(format!("{key}: checkpoint {a}, config {b}"));
            }
        };
        let p = (&ours.policy, &cfg.policy);
        cmp(
            "policy.n_features",
            p.0.n_features.to_string(),
            p.1.n_features.to_string(),
        );
        cmp("policy.hidden", p.0.hidden.to_string(), p.1.hidden.to_string());
        cmp(
            "policy.grid_points",
            p.0.grid_points.to_string(),
            p.1.grid_points.to_string(),
        );
        cmp("policy.grid_v_half", num(p.0.grid_v_half), num(p.1.grid_v_half));
        cmp("policy.grid_s_half", num(p.0.grid_s_half), num(p.1.grid_s_half));
        cmp("scenario.s_star", num(ours.scenario.s_star), num(cfg.scenario.s_star));
        cmp("scenario.v_star", num(ours.scenario.v_star), num(cfg.scenario.v_star));
        cmp(
            "scenario.theta_grid",
            format!("{:?}", ours.scenario.theta_grid),
            format!("{:?}", cfg.scenario.theta_grid),
        );
        if self.params.shape != cfg.policy.shape() {
            diffs.push(format!(
                "network shape: checkpoint {:?}, config {:?}",
                self.params.shape,
                cfg.policy.shape()
            ));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint does not match the configuration ({})",
                diffs.join("; ")
            )))
        }
    }
}

// --------------------------------------------------------------- shared trace

/// One shared datum as seen by an outside observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedRow {
    pub step: usize,
    /// Driver type that generated the run; used only for scoring.
    pub theta: ThetaParams,
    pub v_cav: f64,
    pub v_shared: f64,
    pub s_shared: f64,
    /// Grid cell for policy-shared data, `None` for true data.
    pub cell: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedTrace {
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<SharedRow>,
}

impl SharedTrace {
    pub fn run_seed(&self) -> Option<u64> {
        self.meta.get("run_seed").and_then(|s| s.parse().ok())
    }

    pub fn to_doc(&self) -> CsvDoc {
        let meta: Vec<(&str, String)> = self.meta.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        let mut doc = CsvDoc::new(SHARED_SCHEMA, &meta, &SHARED_HEADER);
        for r in &self.rows {
            doc.row([
                r.step.to_string(),
                num(r.theta.m),
                num(r.theta.n),
                num(r.v_cav),
                num(r.v_shared),
                num(r.s_shared),
                opt(r.cell),
            ]);
        }
        doc
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut meta = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let Some(m) = line.trim().strip_prefix('#') else {
                continue;
            };
            let (k, v) = m
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("metadata line {line:?} is not #key=value")))?;
            if k == "schema" && v != SHARED_SCHEMA {
                return Err(err(i + 1, format!("expected schema {SHARED_SCHEMA}, found {v}")));
            }
            meta.insert(k.to_string(), v.to_string());
        }

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let last_line = text.lines().count().max(1);
        let record_line = |r: &csv::StringRecord| r.position().map_or(last_line, |p| p.line() as usize);
        let headers = reader.headers().map_err(|e| err(last_line, e.to_string()))?.clone();
        if headers.is_empty() {
            return Err(err(last_line, "missing header row".into()));
        }
        if headers.iter().collect::<Vec<_>>() != SHARED_HEADER {
            // the reader positions the header at the start of the comment block
            let line = text
                .lines()
                .position(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
                .map_or(last_line, |i| i + 1);
            return Err(err(line, format!("expected header {}", SHARED_HEADER.join(","))));
        }

        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(last_line, |p| p.line() as usize);
                err(line, e.to_string())
            })?;
            let n = record_line(&record);
            if record.len() != SHARED_HEADER.len() {
                return Err(err(
                    n,
                    format!("expected {} fields, found {}", SHARED_HEADER.len(), record.len()),
                ));
            }
            let float = |k: usize| -> Result<f64> {
                record[k]
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(n, format!("{}: bad number {:?}", SHARED_HEADER[k], &record[k])))
            };
            let step = record[0]
                .parse()
                .map_err(|_| err(n, format!("step: bad integer {:?}", &record[0])))?;
            let cell = match &record[6] {
                "" => None,
                c => Some(c.parse().map_err(|_| err(n, format!("cell: bad index {c:?}")))?),
            };
            let theta = ThetaParams::new(float(1)?, float(2)?).map_err(|e| err(n, e.to_string()))?;
            rows.push(SharedRow {
                step,
                theta,
                v_cav: float(3)?,
                v_shared: float(4)?,
                s_shared: float(5)?,
                cell,
            });
        }
        Ok(SharedTrace { meta, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
