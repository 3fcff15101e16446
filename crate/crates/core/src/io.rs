//! CSV input: header `pair_id,<cov_1>,...,<cov_L>,d`, one row per pair.

use std::io::Read;
use std::path::Path;

use crate::data::{GroupedStudy, RawRecord};
use crate::error::{Error, Result};

pub fn read_study<R: Read>(reader: R) -> Result<GroupedStudy> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let n = header.len();
    if n < 2 || header[0] != "pair_id" || header[n - 1] != "d" {
        return Err(Error::Schema(format!(
            "expected header `pair_id,<covariates...>,d`, found `{}`",
            header.join(",")
        )));
    }
    let names: Vec<String> = header[1..n - 1].to_vec();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("row {}: {e}", i + 1)))?;
        let fields: Vec<&str> = row.iter().collect();
        if fields.len() != n {
            return Err(Error::Schema(format!(
                "row {} (pair {:?}) has {} fields; header `{}` has {n}",
                i + 1,
                fields.first().copied().unwrap_or(""),
                fields.len(),
                header.join(",")
            )));
        }
        records.push(RawRecord {
            pair_id: fields[0].to_string(),
            covariates: fields[1..n - 1].iter().map(|s| s.to_string()).collect(),
            d: fields[n - 1].to_string(),
        });
    }
    GroupedStudy::ingest(&records)?.with_covariate_names(names)
}

pub fn read_study_file(path: &Path) -> Result<GroupedStudy> {
    let file = std::fs::File::open(path).map_err(|e| Error::Schema(format!("cannot open {}: {e}", path.display())))?;
    read_study(file)
}

/// Writes a study in the input CSV layout.
pub fn write_study<W: std::io::Write>(study: &GroupedStudy, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Schema(e.to_string());
    let mut header = vec!["pair_id".to_string()];
    header.extend(study.covariate_names().iter().cloned());
    header.push("d".into());
    w.write_record(&header).map_err(io_err)?;
    for p in study.pairs() {
        let mut row = vec![p.pair_id.clone()];
        row.extend(p.covariates.iter().map(u8::to_string));
        row.push(format!("{:?}", p.d));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(())
}
