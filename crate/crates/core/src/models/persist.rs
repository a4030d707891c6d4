//! CSV persistence of truth fields, noise realizations and prior eigenpairs.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::models::prior::{PriorKind, PriorSpec};

/// One value per line under a `value` header. Floats are written with
/// round-trip precision.
pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["value"])?;
    for x in v.iter() {
        w.write_record([format!("{x:?}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(parse(rec.get(0))?);
    }
    Ok(DVector::from_vec(out))
}

fn parse(field: Option<&str>) -> Result<f64> {
    field
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| EkiError::InvalidConfig(format!("unparseable number {field:?}")))
}

/// One row per mode: `lambda, quad_weight, z_1, ..., z_d`.
pub fn write_eigenpairs(path: &Path, prior: &PriorSpec) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = prior.dim();
    let mut header = vec!["lambda".to_string(), "quad_weight".to_string()];
    header.extend((0..d).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for j in 0..prior.n_modes() {
        let mut row = vec![
            format!("{:?}", prior.eigenvalues()[j]),
            format!("{:?}", prior.quad_weight()),
        ];
        row.extend(prior.modes().column(j).iter().map(|x| format!("{x:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eigenpairs(path: &Path) -> Result<PriorSpec> {
    let mut r = csv::Reader::from_path(path)?;
    let mut lambdas = Vec::new();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut weight = None;
    for rec in r.records() {
        let rec = rec?;
        lambdas.push(parse(rec.get(0))?);
        weight = Some(parse(rec.get(1))?);
        let z = rec
            .iter()
            .skip(2)
            .map(|s| parse(Some(s)))
            .collect::<Result<Vec<_>>>()?;
        cols.push(DVector::from_vec(z));
    }
    let weight = weight.ok_or_else(|| EkiError::InvalidConfig("empty eigenpair file".into()))?;
    let modes = DMatrix::from_columns(&cols);
    PriorSpec::new(
        PriorKind::Explicit,
        DVector::from_vec(lambdas),
        modes,
        weight,
    )
}
