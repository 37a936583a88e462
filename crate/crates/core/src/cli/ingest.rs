//! Reading event and replicate tables.
//!
//! `replicates.csv` has header `replicate_id,x1..xp` and lists every
//! replicate once. `events.csv` has header `replicate_id,t,x1..xp` with one
//! row per arrival; replicates without arrivals simply have no rows there.

use std::collections::HashMap;
use std::path::Path;

use crate::empirical::PointProcessSample;
use crate::space::TimeWindow;

use super::CliError;

/// Replicates in file order with their sorted arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub samples: Vec<PointProcessSample>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.covariate().len())
    }

    pub fn total_arrivals(&self) -> usize {
        self.samples.iter().map(|s| s.count()).sum()
    }
}

fn ingest_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Ingest { path: path.display().to_string(), line, message: message.into() }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Covariate column count implied by a header that starts with `lead`.
fn covariate_columns(path: &Path, header: &csv::StringRecord, lead: &[&str]) -> Result<usize, CliError> {
    let names: Vec<&str> = header.iter().collect();
    if names.len() <= lead.len() || names[..lead.len()] != *lead {
        return Err(ingest_err(path, 1, format!("header must be {},x1..xp, got {}", lead.join(","), names.join(","))));
    }
    for (k, name) in names[lead.len()..].iter().enumerate() {
        let expected = format!("x{}", k + 1);
        if *name != expected {
            return Err(ingest_err(path, 1, format!("expected column {expected:?}, got {name:?}")));
        }
    }
    Ok(names.len() - lead.len())
}

fn parse_num(path: &Path, line: u64, field: &str, what: &str) -> Result<f64, CliError> {
    let v: f64 = field.parse().map_err(|_| ingest_err(path, line, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(ingest_err(path, line, format!("{what} {field:?} is not finite")));
    }
    Ok(v)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads and cross-checks both tables. Arrivals must lie in `[0, T]` and the
/// covariates on every event row must match the replicate table.
pub fn read_dataset(events: &Path, replicates: &Path, window: TimeWindow) -> Result<Dataset, CliError> {
    let mut rdr = open(replicates)?;
    let header = rdr.headers().map_err(|e| ingest_err(replicates, 1, e.to_string()))?.clone();
    let p = covariate_columns(replicates, &header, &["replicate_id"])?;
    let mut ids = Vec::new();
    let mut covariates = Vec::new();
    let mut index = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ingest_err(replicates, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = line_of(&rec);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(ingest_err(replicates, line, "empty replicate_id"));
        }
        let x = (1..=p).map(|k| parse_num(replicates, line, &rec[k], "covariate")).collect::<Result<Vec<_>, _>>()?;
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(ingest_err(replicates, line, format!("duplicate replicate_id {id:?}")));
        }
        ids.push(id);
        covariates.push(x);
    }

    let mut rdr = open(events)?;
    let header = rdr.headers().map_err(|e| ingest_err(events, 1, e.to_string()))?.clone();
    let pe = covariate_columns(events, &header, &["replicate_id", "t"])?;
    if pe != p {
        return Err(ingest_err(events, 1, format!("{pe} covariate columns but the replicate table has {p}")));
    }
    let t_max = window.length();
    let mut arrivals: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ingest_err(events, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = line_of(&rec);
        let i = *index
            .get(&rec[0])
            .ok_or_else(|| ingest_err(events, line, format!("replicate_id {:?} is not in {}", &rec[0], replicates.display())))?;
        let t = parse_num(events, line, &rec[1], "arrival time")?;
        if !(0.0..=t_max).contains(&t) {
            return Err(ingest_err(events, line, format!("arrival time {t} is outside [0, {t_max}]")));
        }
        for k in 0..p {
            let x = parse_num(events, line, &rec[k + 2], "covariate")?;
            let expected = covariates[i][k];
            if (x - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                return Err(ingest_err(
                    events,
                    line,
                    format!("covariate x{} = {x} differs from {expected} listed for replicate {:?}", k + 1, ids[i]),
                ));
            }
        }
        arrivals[i].push(t);
    }

    let samples = covariates
        .into_iter()
        .zip(arrivals)
        .map(|(x, mut a)| {
            a.sort_unstable_by(f64::total_cmp);
            PointProcessSample::new(x, a, window).map_err(CliError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { ids, samples })
}
