//! Artifact files and the summary table. Every JSON artifact sits in an
//! envelope carrying the config hash, the seed and the producing stage;
//! text artifacts carry the same in a leading comment line.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Baseline;

pub const SPACE: &str = "space.json";
pub const WINDOW: &str = "window.json";
pub const OBSERVATION: &str = "observation.tsv";
pub const EXTRACTED: &str = "extracted.json";
pub const EXTRACTION_CHECK: &str = "extraction_check.json";
pub const VOLUMES: &str = "volumes.json";
pub const PROFILES: &str = "profiles.tsv";
pub const RECONSTRUCTION: &str = "reconstruction.json";
pub const COMPARISON: &str = "comparison.json";
pub const APPROX_REPORTS: &str = "approx_reports.json";
pub const CONE_STUDY: &str = "cone_study.json";
pub const AUDIT: &str = "audit.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TSV: &str = "summary.tsv";
pub const ERROR: &str = "error.txt";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_hash: String,
    pub seed: u64,
    pub stage: String,
    pub data: T,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, hash: &str, seed: u64, stage: &str, data: &T) -> Result<()> {
    let env = Envelope { config_hash: hash.to_string(), seed, stage: stage.to_string(), data };
    let text = serde_json::to_string(&env)?;
    std::fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))
}

pub fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Envelope<T>> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Reads an artifact only if it exists and was produced by the same config.
pub fn read_matching<T: DeserializeOwned>(dir: &Path, name: &str, hash: &str) -> Result<Option<T>> {
    if !dir.join(name).exists() {
        return Ok(None);
    }
    let env: Envelope<T> = read_json(dir, name)?;
    if env.config_hash != hash {
        return Ok(None);
    }
    Ok(Some(env.data))
}

pub fn text_header(hash: &str, seed: u64) -> String {
    format!("# config_hash {hash} seed {seed}\n")
}

/// Config hash and seed from a text artifact's first line.
pub fn parse_text_header(text: &str) -> Option<(String, u64)> {
    let f: Vec<&str> = text.lines().next()?.split_whitespace().collect();
    match f.as_slice() {
        ["#", "config_hash", h, "seed", s] => Some((h.to_string(), s.parse().ok()?)),
        _ => None,
    }
}

pub fn write_text(dir: &Path, name: &str, hash: &str, seed: u64, body: &str) -> Result<()> {
    let mut s = text_header(hash, seed);
    s.push_str(body);
    std::fs::write(dir.join(name), s).with_context(|| format!("writing {name}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// No baseline configured; the value is recorded only.
    Recorded,
    /// A baseline names a metric no stage produced.
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub stage: String,
    pub metric: String,
    #[serde(with = "number")]
    pub value: f64,
    pub baseline: Option<String>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<Row>,
}

/// Pipeline order of the stages, used to keep the table stable when single
/// verbs update it.
pub const STAGE_ORDER: [&str; 12] = [
    "build",
    "observe",
    "extract",
    "validate.extract",
    "control",
    "validate.control",
    "reconstruct",
    "validate.reconstruct",
    "stability",
    "wave",
    "audit",
    "baselines",
];

fn stage_rank(stage: &str) -> usize {
    STAGE_ORDER.iter().position(|s| *s == stage).unwrap_or(STAGE_ORDER.len())
}

impl Summary {
    pub fn new(name: &str, hash: &str, seed: u64) -> Self {
        Self { name: name.to_string(), config_hash: hash.to_string(), seed, rows: Vec::new() }
    }

    pub fn push(&mut self, stage: &str, metric: &str, value: f64, baseline: Option<&Baseline>) {
        let status = match baseline {
            None => Status::Recorded,
            Some(b) if b.check(value) => Status::Pass,
            Some(_) => Status::Fail,
        };
        self.rows.push(Row {
            stage: stage.to_string(),
            metric: metric.to_string(),
            value,
            baseline: baseline.map(|b| b.to_string()),
            status,
        });
    }

    /// Replaces the rows of every stage present in `other`.
    pub fn merge(&mut self, other: Summary) {
        let stages: Vec<String> = other.rows.iter().map(|r| r.stage.clone()).collect();
        self.rows.retain(|r| !stages.contains(&r.stage));
        self.rows.extend(other.rows);
        self.rows.sort_by_key(|r| stage_rank(&r.stage));
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| matches!(r.status, Status::Pass | Status::Recorded))
    }

    pub fn get(&self, stage: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.stage == stage && r.metric == metric).map(|r| r.value)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = text_header(&self.config_hash, self.seed);
        s.push_str("stage\tmetric\tvalue\tbaseline\tstatus\n");
        for r in &self.rows {
            let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(s, "{}\t{}\t{:.9e}\t{}\t{}", r.stage, r.metric, r.value, r.baseline.as_deref().unwrap_or("-"), status);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(SUMMARY_JSON), serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::write(dir.join(SUMMARY_TSV), self.to_tsv())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_JSON);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let s: Summary = serde_json::from_str(&text)?;
        if s.config_hash.is_empty() {
            bail!("summary without config hash");
        }
        Ok(s)
    }
}

/// JSON has no infinities or NaN; those are written as the strings "inf",
/// "-inf" and "nan" so that summaries read back unchanged.
mod number {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("not a number: {t}"))),
            },
        }
    }
}
