//! Observations and datasets.
//!
//! An observation is either an exact event time or a right-censored
//! follow-up time, optionally with a covariate vector. The CSV formats are
//! fixed: comma separated, `.` decimal mark, UTF-8, one header line, no
//! quoting.
//!
//! ```text
//! time,status[,z1,...,zk]     status 1 = event, 0 = right-censored
//! subject,y                   rows grouped by contiguous subject id
//! ```

use crate::error::{Error, Result};

/// Exact event or right-censored follow-up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObservationKind {
    Exact(f64),
    RightCensored(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub kind: ObservationKind,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn exact(time: f64) -> Self {
        Observation {
            kind: ObservationKind::Exact(time),
            covariates: Vec::new(),
        }
    }

    pub fn censored(time: f64) -> Self {
        Observation {
            kind: ObservationKind::RightCensored(time),
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(mut self, z: Vec<f64>) -> Self {
        self.covariates = z;
        self
    }

    /// The recorded time: the event time for exact observations, the
    /// censoring time otherwise.
    pub fn time(&self) -> f64 {
        match self.kind {
            ObservationKind::Exact(t) | ObservationKind::RightCensored(t) => t,
        }
    }

    pub fn is_event(&self) -> bool {
        matches!(self.kind, ObservationKind::Exact(_))
    }
}

/// An iid sample of observations with a homogeneous covariate dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyData("dataset has no observations".into()));
        }
        let dim = observations[0].covariates.len();
        for (i, o) in observations.iter().enumerate() {
            if !o.time().is_finite() {
                return Err(Error::Domain(format!("non-finite time at observation {i}")));
            }
            if o.covariates.len() != dim {
                return Err(Error::Domain(format!(
                    "covariate dimension {} at observation {i}, expected {dim}",
                    o.covariates.len()
                )));
            }
        }
        Ok(Dataset { observations })
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn n_events(&self) -> usize {
        self.observations.iter().filter(|o| o.is_event()).count()
    }

    pub fn covariate_dim(&self) -> usize {
        self.observations[0].covariates.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn max_time(&self) -> f64 {
        self.observations
            .iter()
            .map(|o| o.time())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Subset by index, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.observations[i].clone()).collect())
    }
}

/// Outcome vectors grouped by subject, for random-effects models.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: i64,
    pub outcomes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    subjects: Vec<Subject>,
}

impl GroupedDataset {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyData("grouped dataset has no subjects".into()));
        }
        for s in &subjects {
            if s.outcomes.is_empty() {
                return Err(Error::Domain(format!("subject {} has no outcomes", s.id)));
            }
            if s.outcomes.iter().any(|y| !y.is_finite()) {
                return Err(Error::Domain(format!(
                    "subject {} has a non-finite outcome",
                    s.id
                )));
            }
        }
        Ok(GroupedDataset { subjects })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.subjects.iter().map(|s| s.outcomes.len()).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Subject> {
        self.subjects.iter()
    }

    pub fn get(&self, i: usize) -> &Subject {
        &self.subjects[i]
    }
}

fn split_line(line: &str) -> Vec<&str> {
    line.trim_end_matches('\r').split(',').map(str::trim).collect()
}

/// Parses the `time,status[,z1,...,zk]` format.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyData("no header line".into()))?;
    let fields = split_line(header);
    if fields.len() < 2 || fields[0] != "time" || fields[1] != "status" {
        return Err(Error::Format {
            row: 0,
            msg: format!("header must start with `time,status`, got `{header}`"),
        });
    }
    let n_fields = fields.len();
    let mut observations = Vec::new();
    for (row, line) in lines.enumerate() {
        let row = row + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_line(line);
        if cols.len() != n_fields {
            return Err(Error::Format {
                row,
                msg: format!("expected {n_fields} fields, got {}", cols.len()),
            });
        }
        let time: f64 = cols[0].parse().map_err(|_| Error::Format {
            row,
            msg: format!("non-numeric time `{}`", cols[0]),
        })?;
        if !time.is_finite() {
            return Err(Error::Format {
                row,
                msg: format!("non-finite time `{}`", cols[0]),
            });
        }
        let status: i64 = cols[1].parse().map_err(|_| Error::Format {
            row,
            msg: format!("non-numeric status `{}`", cols[1]),
        })?;
        let covariates: Vec<f64> = cols[2..]
            .iter()
            .map(|c| {
                c.parse::<f64>().map_err(|_| Error::Format {
                    row,
                    msg: format!("non-numeric covariate `{c}`"),
                })
            })
            .collect::<Result<_>>()?;
        let kind = match status {
            1 => ObservationKind::Exact(time),
            0 => ObservationKind::RightCensored(time),
            other => {
                return Err(Error::Format {
                    row,
                    msg: format!("status must be 0 or 1, got {other}"),
                })
            }
        };
        observations.push(Observation { kind, covariates });
    }
    if observations.is_empty() {
        return Err(Error::EmptyData("no data rows".into()));
    }
    Dataset::new(observations)
}

/// Writes a dataset back to the `time,status[,z...]` format. Round-trips
/// exactly: floats are printed in shortest form that re-parses to the same
/// bits.
pub fn serialize_dataset(data: &Dataset) -> String {
    let dim = data.covariate_dim();
    let mut out = String::from("time,status");
    for k in 1..=dim {
        out.push_str(&format!(",z{k}"));
    }
    out.push('\n');
    for o in data.iter() {
        out.push_str(&format!(
            "{},{}",
            o.time(),
            if o.is_event() { 1 } else { 0 }
        ));
        for z in &o.covariates {
            out.push_str(&format!(",{z}"));
        }
        out.push('\n');
    }
    out
}

/// Parses the grouped `subject,y` format; a subject's rows must be contiguous.
pub fn parse_grouped(text: &str) -> Result<GroupedDataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyData("no header line".into()))?;
    let fields = split_line(header);
    if fields.len() != 2 || fields[0] != "subject" || fields[1] != "y" {
        return Err(Error::Format {
            row: 0,
            msg: format!("header must be `subject,y`, got `{header}`"),
        });
    }
    let mut subjects: Vec<Subject> = Vec::new();
    let mut seen: Vec<i64> = Vec::new();
    for (row, line) in lines.enumerate() {
        let row = row + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_line(line);
        if cols.len() != 2 {
            return Err(Error::Format {
                row,
                msg: format!("expected 2 fields, got {}", cols.len()),
            });
        }
        let id: i64 = cols[0].parse().map_err(|_| Error::Format {
            row,
            msg: format!("non-integer subject id `{}`", cols[0]),
        })?;
        let y: f64 = cols[1].parse().map_err(|_| Error::Format {
            row,
            msg: format!("non-numeric outcome `{}`", cols[1]),
        })?;
        if !y.is_finite() {
            return Err(Error::Format {
                row,
                msg: format!("non-finite outcome `{}`", cols[1]),
            });
        }
        match subjects.last_mut() {
            Some(last) if last.id == id => last.outcomes.push(y),
            _ => {
                if seen.contains(&id) {
                    return Err(Error::Format {
                        row,
                        msg: format!("subject {id} appears in non-contiguous blocks"),
                    });
                }
                seen.push(id);
                subjects.push(Subject {
                    id,
                    outcomes: vec![y],
                });
            }
        }
    }
    if subjects.is_empty() {
        return Err(Error::EmptyData("no data rows".into()));
    }
    GroupedDataset::new(subjects)
}

/// Writes grouped data back to the `subject,y` format.
pub fn serialize_grouped(data: &GroupedDataset) -> String {
    let mut out = String::from("subject,y\n");
    for s in data.iter() {
        for y in &s.outcomes {
            out.push_str(&format!("{},{}\n", s.id, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_basic_format() {
        let d = parse_dataset("time,status\n1.0,1\n3.0,0\n").unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.get(0).kind, ObservationKind::Exact(1.0));
        assert_eq!(d.get(1).kind, ObservationKind::RightCensored(3.0));
        assert_eq!(d.n_events(), 1);
    }

    #[test]
    fn rejects_bad_status_naming_the_row() {
        let err = parse_dataset("time,status\n1.0,2\n").unwrap_err();
        match err {
            Error::Format { row, msg } => {
                assert_eq!(row, 1);
                assert!(msg.contains("status"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_body_and_bad_numbers() {
        assert!(matches!(
            parse_dataset("time,status\n"),
            Err(Error::EmptyData(_))
        ));
        assert!(matches!(
            parse_dataset("time,status\nabc,1\n"),
            Err(Error::Format { row: 1, .. })
        ));
        assert!(matches!(
            parse_dataset("status,time\n1.0,1\n"),
            Err(Error::Format { row: 0, .. })
        ));
    }

    #[test]
    fn covariates_parse_and_must_be_homogeneous() {
        let d = parse_dataset("time,status,z1,z2\n1.0,1,0.5,-1\n2.0,0,1.5,2\n").unwrap();
        assert_eq!(d.covariate_dim(), 2);
        assert_eq!(d.get(0).covariates, vec![0.5, -1.0]);
        assert!(matches!(
            parse_dataset("time,status,z1\n1.0,1,0.5\n2.0,0\n"),
            Err(Error::Format { row: 2, .. })
        ));
    }

    #[test]
    fn grouped_format_round_trip_and_errors() {
        let g = parse_grouped("subject,y\n1,0.5\n1,0.7\n2,1.1\n").unwrap();
        assert_eq!(g.n_subjects(), 2);
        assert_eq!(g.get(0).outcomes, vec![0.5, 0.7]);
        assert_eq!(g.get(1).outcomes, vec![1.1]);

        assert!(matches!(
            parse_grouped("subject,y\n1,0.5\n2,1.1\n1,0.7\n"),
            Err(Error::Format { row: 3, .. })
        ));
        assert!(matches!(
            parse_grouped("subject,y\n1,abc\n"),
            Err(Error::Format { row: 1, .. })
        ));
        assert_eq!(parse_grouped(&serialize_grouped(&g)).unwrap(), g);
    }
}
