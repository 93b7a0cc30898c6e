//! Batch front end: scenario files, single runs, K sweeps and trace dumps.
//!
//! Scenario files are flat `key = value` text. Blank lines and lines
//! starting with `#` are ignored. Recognized keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `grid_radius` | hexagon radius in cells |
//! | `num_hosts` | number of mobile hosts |
//! | `k` | distance threshold, integer or `INF` |
//! | `checkpoint_interval` | ticks between checkpoints (0 disables) |
//! | `msg_rate` | per host per tick send probability |
//! | `move_prob` | per host per tick move probability |
//! | `disconnect_prob` | per host per tick disconnect probability |
//! | `disconnect_ticks` | length of a disconnection |
//! | `reconnect_move_prob` | chance of reconnecting in a neighboring cell |
//! | `failures` | comma list of `tick:host` |
//! | `fail_rate` | per host per tick failure probability |
//! | `repair_delay` | ticks from failure to recovery |
//! | `run_length` | ticks to simulate |
//! | `seed` | RNG seed |
//! | `trace_weight`, `checkpoint_weight`, `entry_weight` | cost weights |

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{MetricsReport, CSV_COLUMNS};
use crate::protocol::{HostId, Threshold};
use crate::sim::{self, ConfigError, RunOptions, ScenarioConfig, SimError, RNG_NAME};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {key}: {message}")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Args(String),
    #[error("unknown host {0}")]
    UnknownHost(u32),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit code: 2 for protocol invariant violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Sim(e) if e.is_invariant_violation() => 2,
            _ => 1,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| CliError::Parse {
        line,
        key: key.to_string(),
        message: format!("cannot parse {raw:?}: {e}"),
    })
}

fn parse_failures(line: usize, raw: &str) -> Result<Vec<(u64, HostId)>, CliError> {
    let err = |item: &str| CliError::Parse {
        line,
        key: "failures".into(),
        message: format!("expected tick:host, got {item:?}"),
    };
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (t, h) = item.split_once(':').ok_or_else(|| err(item))?;
            let t = t.trim().parse::<u64>().map_err(|_| err(item))?;
            let h = h.trim().parse::<u32>().map_err(|_| err(item))?;
            Ok((t, HostId(h)))
        })
        .collect()
}

/// Parses a scenario file body. Unset keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| CliError::Parse {
            line,
            key: body.to_string(),
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "grid_radius" => cfg.grid_radius = parse_value(line, key, value)?,
            "num_hosts" => cfg.num_hosts = parse_value(line, key, value)?,
            "k" => cfg.k = parse_value(line, key, value)?,
            "checkpoint_interval" => cfg.checkpoint_interval = parse_value(line, key, value)?,
            "msg_rate" => cfg.msg_rate = parse_value(line, key, value)?,
            "move_prob" => cfg.move_prob = parse_value(line, key, value)?,
            "disconnect_prob" => cfg.disconnect_prob = parse_value(line, key, value)?,
            "disconnect_ticks" => cfg.disconnect_ticks = parse_value(line, key, value)?,
            "reconnect_move_prob" => cfg.reconnect_move_prob = parse_value(line, key, value)?,
            "failures" => cfg.failures = parse_failures(line, value)?,
            "fail_rate" => cfg.fail_rate = parse_value(line, key, value)?,
            "repair_delay" => cfg.repair_delay = parse_value(line, key, value)?,
            "run_length" => cfg.run_length = parse_value(line, key, value)?,
            "seed" => cfg.seed = parse_value(line, key, value)?,
            "trace_weight" => cfg.weights.trace = parse_value(line, key, value)?,
            "checkpoint_weight" => cfg.weights.checkpoint = parse_value(line, key, value)?,
            "entry_weight" => cfg.weights.entry = parse_value(line, key, value)?,
            other => {
                return Err(CliError::Parse {
                    line,
                    key: other.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// `0,1,2,4,INF`
pub fn parse_k_list(s: &str) -> Result<Vec<Threshold>, CliError> {
    let ks = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<Threshold>()
                .map_err(|e| CliError::Args(format!("--k: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if ks.is_empty() {
        return Err(CliError::Args("--k: empty list".into()));
    }
    Ok(ks)
}

/// Comma list of seeds or inclusive ranges: `1..20`, `3,5,9`, `1..4,10`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = |p: &str| CliError::Args(format!("--seeds: cannot parse {p:?}"));
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(part))?;
            let b: u64 = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| bad(part))?;
            if b < a {
                return Err(bad(part));
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if seeds.is_empty() {
        return Err(CliError::Args("--seeds: empty list".into()));
    }
    Ok(seeds)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format {other:?} (csv or json)")),
        }
    }
}

fn csv_document<I>(rows: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct JsonRun<'a> {
    rng: &'a str,
    config: &'a ScenarioConfig,
    metrics: &'a MetricsReport,
}

/// Runs one scenario and renders its metrics.
pub fn run_scenario(cfg: &ScenarioConfig, format: OutputFormat) -> Result<String, CliError> {
    let out = sim::run(cfg)?;
    match format {
        OutputFormat::Csv => csv_document([out.report.csv_row()]),
        OutputFormat::Json => {
            let doc = JsonRun {
                rng: RNG_NAME,
                config: cfg,
                metrics: &out.report,
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub k_values: Vec<Threshold>,
    pub seeds: Vec<u64>,
    pub parallelism: usize,
}

/// One cell of a sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub k: Threshold,
    pub seed: u64,
    pub result: Result<MetricsReport, String>,
}

impl SweepRow {
    fn csv_row(&self, base: &ScenarioConfig) -> Vec<String> {
        match &self.result {
            Ok(report) => report.csv_row(),
            Err(_) => {
                let mut row = vec![
                    self.k.to_string(),
                    self.seed.to_string(),
                    base.run_length.to_string(),
                    base.num_hosts.to_string(),
                    base.grid_radius.to_string(),
                ];
                row.resize(CSV_COLUMNS.len(), "FAILED".to_string());
                row
            }
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.k_values.is_empty() || self.seeds.is_empty() {
            return Err(CliError::Args(
                "sweep needs at least one K and one seed".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(CliError::Args("--parallelism must be positive".into()));
        }
        self.base.validate()?;
        Ok(())
    }

    /// Runs every (K, seed) cell. Rows come back sorted by (K, seed). A
    /// failing cell is reported in its row and does not stop the others.
    pub fn run(&self) -> Result<Vec<SweepRow>, CliError> {
        self.validate()?;
        let cells: Vec<(Threshold, u64)> = self
            .k_values
            .iter()
            .flat_map(|&k| self.seeds.iter().map(move |&s| (k, s)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .map_err(|e| CliError::Args(format!("thread pool: {e}")))?;
        let mut rows: Vec<SweepRow> = pool.install(|| {
            cells
                .par_iter()
                .map(|&(k, seed)| {
                    let cfg = ScenarioConfig {
                        k,
                        seed,
                        ..self.base.clone()
                    };
                    let result = sim::run_with(&cfg, RunOptions::default())
                        .map(|o| o.report)
                        .map_err(|e| {
                            log::error!("k={k} seed={seed}: {e}");
                            e.to_string()
                        });
                    SweepRow { k, seed, result }
                })
                .collect()
        });
        rows.sort_by_key(|r| (r.k, r.seed));
        Ok(rows)
    }

    /// CSV for the whole sweep, plus whether any cell failed.
    pub fn run_csv(&self) -> Result<(String, bool), CliError> {
        let rows = self.run()?;
        let failed = rows.iter().any(|r| r.result.is_err());
        let doc = csv_document(rows.iter().map(|r| r.csv_row(&self.base)))?;
        Ok((doc, failed))
    }
}

/// Human-readable protocol trace of one host, one event per line.
pub fn trace_host(cfg: &ScenarioConfig, host: u32) -> Result<String, CliError> {
    if host >= cfg.num_hosts {
        return Err(CliError::UnknownHost(host));
    }
    let opts = RunOptions {
        check_invariants: true,
        record_trace: true,
    };
    let out = sim::run_with(cfg, opts)?;
    let id = HostId(host);
    let mut s = format!(
        "# host={id} k={} seed={} ticks={} rng={RNG_NAME}\n",
        cfg.k, cfg.seed, cfg.run_length
    );
    for ev in out.world.trace().iter().filter(|e| e.host() == id) {
        s.push_str(&ev.to_string());
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# smallest useful scenario
grid_radius = 1
num_hosts = 1
run_length = 10
";

    #[test]
    fn parses_all_keys() {
        let text = "\
grid_radius = 3
num_hosts = 5
k = INF
checkpoint_interval = 25
msg_rate = 0.5
move_prob = 0.1
disconnect_prob = 0.01
disconnect_ticks = 7
reconnect_move_prob = 0.25
failures = 10:0, 20:4
fail_rate = 0.002
repair_delay = 3
run_length = 500
seed = 99
trace_weight = 2
checkpoint_weight = 40
entry_weight = 4
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.grid_radius, 3);
        assert_eq!(c.k, Threshold::Infinite);
        assert_eq!(c.failures, vec![(10, HostId(0)), (20, HostId(4))]);
        assert_eq!(c.weights.checkpoint, 40);
        assert_eq!(c.seed, 99);
        assert_eq!(c.reconnect_move_prob, 0.25);
    }

    #[test]
    fn malformed_k_names_key_and_line() {
        let err = parse_config("num_hosts = 2\nk = banana\n").unwrap_err();
        match &err {
            CliError::Parse { line, key, .. } => {
                assert_eq!(*line, 2);
                assert_eq!(key, "k");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("line 2: k:"));
    }

    #[test]
    fn rejects_unknown_keys_and_garbage() {
        assert!(matches!(
            parse_config("speed = 3"),
            Err(CliError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("\n\njust words"),
            Err(CliError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_config("failures = 10-2"),
            Err(CliError::Parse { .. })
        ));
        assert!(matches!(
            parse_config("msg_rate = 2"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn list_parsing() {
        assert_eq!(
            parse_k_list("0,1,2,4,INF").unwrap(),
            vec![
                Threshold::Finite(0),
                Threshold::Finite(1),
                Threshold::Finite(2),
                Threshold::Finite(4),
                Threshold::Infinite
            ]
        );
        assert!(parse_k_list("").is_err());
        assert!(parse_k_list("1,x").is_err());
        assert_eq!(
            parse_seed_list("1..20").unwrap(),
            (1..=20).collect::<Vec<_>>()
        );
        assert_eq!(parse_seed_list("3,5,1..2").unwrap(), vec![3, 5, 1, 2]);
        assert!(parse_seed_list("5..1").is_err());
        assert!(parse_seed_list("").is_err());
    }

    #[test]
    fn minimal_run_is_header_plus_row() {
        let cfg = parse_config(MINIMAL).unwrap();
        let out = run_scenario(&cfg, OutputFormat::Csv).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[1].starts_with("2,1,10,1,1,"));
    }

    #[test]
    fn json_output_names_the_rng() {
        let cfg = parse_config(MINIMAL).unwrap();
        let out = run_scenario(&cfg, OutputFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["rng"], RNG_NAME);
        assert_eq!(v["metrics"]["k"], "2");
        assert_eq!(v["config"]["num_hosts"], 1);
    }

    #[test]
    fn sweep_row_count_and_order() {
        let base = ScenarioConfig {
            run_length: 200,
            ..parse_config(MINIMAL).unwrap()
        };
        let spec = SweepSpec {
            base,
            k_values: vec![Threshold::Infinite, Threshold::Finite(0)],
            seeds: vec![9, 2],
            parallelism: 2,
        };
        let rows = spec.run().unwrap();
        let keys: Vec<(Threshold, u64)> = rows.iter().map(|r| (r.k, r.seed)).collect();
        assert_eq!(
            keys,
            vec![
                (Threshold::Finite(0), 2),
                (Threshold::Finite(0), 9),
                (Threshold::Infinite, 2),
                (Threshold::Infinite, 9)
            ]
        );
        let (csv, failed) = spec.run_csv().unwrap();
        assert!(!failed);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn failed_row_shape() {
        let base = ScenarioConfig::default();
        let row = SweepRow {
            k: Threshold::Infinite,
            seed: 3,
            result: Err("boom".into()),
        };
        let cells = row.csv_row(&base);
        assert_eq!(cells.len(), CSV_COLUMNS.len());
        assert_eq!(&cells[..2], &["INF".to_string(), "3".to_string()]);
        assert!(cells[5..].iter().all(|c| c == "FAILED"));
    }

    #[test]
    fn trace_rejects_unknown_host() {
        let cfg = parse_config(MINIMAL).unwrap();
        let err = trace_host(&cfg, 4).unwrap_err();
        assert!(matches!(err, CliError::UnknownHost(4)));
        assert_eq!(err.exit_code(), 1);
    }
}
