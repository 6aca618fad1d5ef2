//! Scenario datasets: i.i.d. state/interaction samples with noise-replicate
//! successors, plus their CSV + JSON-sidecar file format.
//!
//! File layout (`<name>.csv`):
//!
//! ```text
//! # sbcert dataset v1 ...
//! kind,point,replicate,x_0,...,x_{n-1},w_0,...,w_{p-1},in_x0,in_xc
//! point,0,,<x_hat>,<w_hat>,1,0
//! succ,0,0,<successor 0>,,,...
//! succ,0,1,<successor 1>,,,...
//! ```
//!
//! Each point contributes one `point` row followed by `N_hat` `succ` rows,
//! so the file has `N * (N_hat + 1)` data rows. Metadata lives in
//! `<name>.json`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par;
use crate::region::RegionSpec;
use crate::rng::{tag, StreamSeed};
use crate::system::Agent;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePoint {
    pub x_hat: Vec<f64>,
    pub w_hat: Vec<f64>,
    /// One successor state per noise replicate.
    pub successors: Vec<Vec<f64>>,
    pub in_x0: bool,
    pub in_xc: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub agent_id: String,
    pub seed: u64,
    pub region: RegionSpec,
    pub n: usize,
    pub n_hat: usize,
    /// The sampling measure, recorded for the report.
    pub sampling: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Vec<SamplePoint>,
    pub region: RegionSpec,
    pub seed: u64,
    pub agent_id: String,
    pub n_hat: usize,
}

pub const SAMPLING_MEASURE: &str = "uniform over the state box times the interaction box, drawn directly (not along trajectories)";

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.region.state_dim()
    }

    pub fn interaction_dim(&self) -> usize {
        self.region.interaction_dim()
    }

    /// The first `n` points (prefixes of a dataset are datasets of the same
    /// i.i.d. stream).
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset { points: self.points[..n.min(self.len())].to_vec(), ..self.clone() }
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            agent_id: self.agent_id.clone(),
            seed: self.seed,
            region: self.region.clone(),
            n: self.len(),
            n_hat: self.n_hat,
            sampling: SAMPLING_MEASURE.to_string(),
        }
    }

    /// Checks sizes, box membership and flags.
    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.state_dim(), self.interaction_dim());
        for (l, pt) in self.points.iter().enumerate() {
            if pt.x_hat.len() != n || pt.w_hat.len() != p {
                return Err(invalid(format!("point {l}: wrong dimensions")));
            }
            if !self.region.state.contains(&pt.x_hat) {
                return Err(invalid(format!("point {l}: x_hat outside the state box")));
            }
            if !self.region.interaction.contains(&pt.w_hat) {
                return Err(invalid(format!("point {l}: w_hat outside the interaction box")));
            }
            if pt.in_x0 != self.region.initial.contains(&pt.x_hat) || pt.in_xc != self.region.collision.contains(&pt.x_hat) {
                return Err(invalid(format!("point {l}: membership flags disagree with the regions")));
            }
            if pt.successors.len() != self.n_hat || pt.successors.iter().any(|s| s.len() != n) {
                return Err(invalid(format!("point {l}: expected {} successors of dimension {n}", self.n_hat)));
            }
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. points uniformly from `X x W` and `n_hat` successors for
/// each. Point `l` of agent `agent_index` uses stream `(DATASET, agent_index, l)`.
///
/// Deterministic agents get a single successor regardless of `n_hat`.
pub fn draw_dataset(
    agent: &Agent,
    region: &RegionSpec,
    n: usize,
    n_hat: usize,
    seed: &StreamSeed,
    agent_index: u64,
    agent_id: &str,
) -> Result<Dataset> {
    region.validate()?;
    if n == 0 || n_hat == 0 {
        return Err(invalid("dataset needs N >= 1 and N_hat >= 1"));
    }
    crate::error::check_dim("region state dimension", agent.state_dim(), region.state_dim())?;
    crate::error::check_dim("region interaction dimension", agent.interaction_dim(), region.interaction_dim())?;
    let n_hat = if agent.noise().is_deterministic() {
        if n_hat > 1 {
            log::warn!("agent {agent_id} is deterministic; using one successor per point instead of {n_hat}");
        }
        1
    } else {
        n_hat
    };
    let points = par::map_indexed(n, |l| -> Result<SamplePoint> {
        let mut rng = seed.stream(&[tag::DATASET, agent_index, l as u64]);
        let x_hat = region.state.sample(&mut rng);
        let w_hat = region.interaction.sample(&mut rng);
        let successors = (0..n_hat).map(|_| agent.step(&x_hat, &w_hat, &mut rng)).collect::<Result<Vec<_>>>()?;
        Ok(SamplePoint {
            in_x0: region.initial.contains(&x_hat),
            in_xc: region.collision.contains(&x_hat),
            x_hat,
            w_hat,
            successors,
        })
    });
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset { points, region: region.clone(), seed: seed.root(), agent_id: agent_id.to_string(), n_hat })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn header(n: usize, p: usize) -> String {
    let mut h = String::from("kind,point,replicate");
    for i in 0..n {
        write!(h, ",x_{i}").unwrap();
    }
    for i in 0..p {
        write!(h, ",w_{i}").unwrap();
    }
    h.push_str(",in_x0,in_xc");
    h
}

fn push_values(line: &mut String, values: &[f64]) {
    for v in values {
        write!(line, ",{v:.16e}").unwrap();
    }
}

/// Writes the CSV to `path` and the metadata to the `.json` sidecar.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let (n, p) = (dataset.state_dim(), dataset.interaction_dim());
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(
        out,
        "# sbcert dataset v1; agent={}; one 'point' row (x_hat, w_hat, flags) then N_hat 'succ' rows (successor state in the x columns) per point",
        dataset.agent_id
    )?;
    writeln!(out, "{}", header(n, p))?;
    let blank_w = ",".repeat(p);
    let mut line = String::new();
    for (l, pt) in dataset.points.iter().enumerate() {
        line.clear();
        write!(line, "point,{l},").unwrap();
        push_values(&mut line, &pt.x_hat);
        push_values(&mut line, &pt.w_hat);
        write!(line, ",{},{}", pt.in_x0 as u8, pt.in_xc as u8).unwrap();
        writeln!(out, "{line}")?;
        for (j, s) in pt.successors.iter().enumerate() {
            line.clear();
            write!(line, "succ,{l},{j}").unwrap();
            push_values(&mut line, s);
            line.push_str(&blank_w);
            line.push_str(",,");
            writeln!(out, "{line}")?;
        }
    }
    out.flush()?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&dataset.meta())?)?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

/// Reads a dataset written by [`save_dataset`]; malformed rows are reported
/// with their 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let side = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| parse_err(&side, e.line(), e.to_string()))?;
    meta.region.validate()?;
    let text = fs::read_to_string(path)?;
    let n = meta.region.state_dim();
    let p = meta.region.interaction_dim();
    let width = 3 + n + p + 2;
    let expected_header = header(n, p);

    let mut points: Vec<SamplePoint> = Vec::with_capacity(meta.n);
    let mut saw_header = false;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if raw != expected_header {
                return Err(parse_err(path, lineno, format!("expected header '{expected_header}'")));
            }
            saw_header = true;
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != width {
            return Err(parse_err(path, lineno, format!("expected {width} columns, found {}", cols.len())));
        }
        let index: usize = cols[1].parse().map_err(|_| parse_err(path, lineno, "bad point index"))?;
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| parse_err(path, lineno, format!("bad number '{s}'")))
        };
        let flag = |s: &str| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(parse_err(path, lineno, format!("bad flag '{s}'"))),
            }
        };
        match cols[0] {
            "point" => {
                if index != points.len() {
                    return Err(parse_err(path, lineno, format!("expected point {}, found {index}", points.len())));
                }
                if let Some(prev) = points.last() {
                    if prev.successors.len() != meta.n_hat {
                        return Err(parse_err(path, lineno, "previous point has the wrong number of successors"));
                    }
                }
                let x_hat = cols[3..3 + n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
                let w_hat = cols[3 + n..3 + n + p].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
                points.push(SamplePoint {
                    x_hat,
                    w_hat,
                    successors: Vec::with_capacity(meta.n_hat),
                    in_x0: flag(cols[3 + n + p])?,
                    in_xc: flag(cols[4 + n + p])?,
                });
            }
            "succ" => {
                let count = points.len();
                let Some(pt) = points.last_mut() else {
                    return Err(parse_err(path, lineno, "successor row before any point row"));
                };
                let replicate: usize = cols[2].parse().map_err(|_| parse_err(path, lineno, "bad replicate index"))?;
                if index + 1 != count || replicate != pt.successors.len() {
                    return Err(parse_err(path, lineno, "successor row out of order"));
                }
                let s = cols[3..3 + n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
                pt.successors.push(s);
            }
            other => return Err(parse_err(path, lineno, format!("unknown row kind '{other}'"))),
        }
    }
    let complete = points.len() == meta.n && points.last().is_none_or(|pt| pt.successors.len() == meta.n_hat);
    if !saw_header || !complete {
        return Err(parse_err(
            path,
            last_line,
            format!("truncated file: expected {} points with {} successors each", meta.n, meta.n_hat),
        ));
    }
    let ds = Dataset { points, region: meta.region, seed: meta.seed, agent_id: meta.agent_id, n_hat: meta.n_hat };
    ds.validate()?;
    Ok(ds)
}
