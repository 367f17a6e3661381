use std::io::{Read, Write};
use std::path::Path;

use super::{CovariateValue, Covariates, ModelSpec, VisitRecord};
use crate::error::{Error, Result};

const REQUIRED: [&str; 6] = ["practice_id", "patient_id", "course", "visit", "day", "state"];

/// Reads visit records from CSV. With a spec, only its declared covariates are
/// kept and numeric ones are parsed as numbers; without one, every extra
/// column becomes a categorical covariate.
pub fn read_visits_csv<R: Read>(reader: R, spec: Option<&ModelSpec>) -> Result<Vec<VisitRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 6];
    for (slot, name) in required.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })?;
    }
    let covariate_cols: Vec<(String, usize, bool)> = match spec {
        Some(spec) => spec
            .covariates
            .iter()
            .map(|c| {
                col(&c.name)
                    .map(|i| (c.name.clone(), i, c.is_numeric()))
                    .ok_or_else(|| Error::Parse {
                        line: 1,
                        message: format!("missing covariate column `{}`", c.name),
                    })
            })
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !required.contains(i))
            .map(|(i, h)| (h.to_string(), i, false))
            .collect(),
    };

    let mut visits = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let perr = |message: String| Error::Parse { line, message };
        let field = |i: usize| record.get(i).unwrap_or("");
        let int = |i: usize, name: &str| -> Result<u32> {
            field(i)
                .parse::<u32>()
                .map_err(|_| perr(format!("`{name}` must be a non-negative integer, got `{}`", field(i))))
        };
        let course = int(required[2], "course")?;
        let visit = int(required[3], "visit")?;
        let state = int(required[5], "state")?;
        if course == 0 || visit == 0 {
            return Err(perr("course and visit indices start at 1".into()));
        }
        let day = field(required[4])
            .parse::<f64>()
            .ok()
            .filter(|d| d.is_finite() && *d >= 0.0)
            .ok_or_else(|| perr(format!("`day` must be a non-negative number, got `{}`", field(required[4]))))?;
        let mut covariates = Covariates::new();
        for (name, i, numeric) in &covariate_cols {
            let value = CovariateValue::parse(field(*i), *numeric)
                .map_err(|m| perr(format!("covariate `{name}`: {m}")))?;
            covariates.insert(name.clone(), value);
        }
        visits.push(VisitRecord {
            practice_id: field(required[0]).to_string(),
            patient_id: field(required[1]).to_string(),
            course,
            visit,
            day,
            state,
            covariates,
        });
    }
    Ok(visits)
}

pub fn read_visits_path(path: &Path, spec: Option<&ModelSpec>) -> Result<Vec<VisitRecord>> {
    read_visits_csv(std::fs::File::open(path)?, spec)
}

/// Writes visits with the given covariate columns, in input order.
pub fn write_visits_csv<W: Write>(writer: W, visits: &[VisitRecord], covariates: &[String]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(covariates.iter().map(String::as_str));
    out.write_record(&header)?;
    for v in visits {
        let mut rec = vec![
            v.practice_id.clone(),
            v.patient_id.clone(),
            v.course.to_string(),
            v.visit.to_string(),
            v.day.to_string(),
            v.state.to_string(),
        ];
        rec.extend(covariates.iter().map(|c| {
            v.covariates
                .get(c)
                .map(CovariateValue::to_field)
                .unwrap_or_else(|| "NA".into())
        }));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
