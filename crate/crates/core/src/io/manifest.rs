use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub case_id: String,
    pub reference: PathBuf,
    pub prediction: PathBuf,
}

/// Cohort manifest. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        w.write_record(["case_id", "reference", "prediction"])
            .map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.case_id.as_str(),
                &r.reference.to_string_lossy(),
                &r.prediction.to_string_lossy(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Manifest(format!("{other:?}")),
        }
    } else {
        Error::Manifest(e.to_string())
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&bytes, base)
}

/// Parses manifest CSV bytes. Requires the columns `case_id`, `reference` and
/// `prediction`; extra columns are ignored.
pub fn parse_manifest(bytes: &[u8], base: &Path) -> Result<Manifest> {
    let rows = parse_rows(bytes, base, true)?
        .into_iter()
        .map(|(case_id, reference, prediction)| ManifestRow {
            case_id,
            reference,
            prediction: prediction.expect("prediction column required"),
        })
        .collect();
    Ok(Manifest { rows })
}

/// Validation cases of a selection pool: `case_id` and `reference` columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub case_id: String,
    pub reference: PathBuf,
}

pub fn read_references(path: impl AsRef<Path>) -> Result<Vec<ReferenceRow>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_references(&bytes, base)
}

pub fn parse_references(bytes: &[u8], base: &Path) -> Result<Vec<ReferenceRow>> {
    Ok(parse_rows(bytes, base, false)?
        .into_iter()
        .map(|(case_id, reference, _)| ReferenceRow { case_id, reference })
        .collect())
}

type Row = (String, PathBuf, Option<PathBuf>);

fn parse_rows(bytes: &[u8], base: &Path, with_prediction: bool) -> Result<Vec<Row>> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(Error::Manifest("manifest is empty".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Manifest(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Manifest(format!("missing column `{name}`")))
    };
    let (ci, ri) = (col("case_id")?, col("reference")?);
    let pi = if with_prediction { Some(col("prediction")?) } else { None };

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Manifest(e.to_string()))?;
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        let (case_id, reference) = (get(ci), get(ri));
        let prediction = pi.map(get);
        if case_id.is_empty() || reference.is_empty() || prediction.as_deref() == Some("") {
            return Err(Error::Manifest(format!("row {} has an empty field", n + 1)));
        }
        if !seen.insert(case_id.clone()) {
            return Err(Error::Manifest(format!("duplicate case_id `{case_id}`")));
        }
        rows.push((case_id, base.join(reference), prediction.map(|p| base.join(p))));
    }
    if rows.is_empty() {
        return Err(Error::Manifest("manifest has no rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows() {
        let m = parse_manifest(
            b"case_id,reference,prediction\ncase_001,r1.nii.gz,p1.nii.gz\ncase_002,r2.nii.gz,p2.nii.gz\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows[0].case_id, "case_001");
        assert_eq!(m.rows[1].prediction, PathBuf::from("/data/p2.nii.gz"));
    }

    #[test]
    fn duplicate_id() {
        let err = parse_manifest(
            b"case_id,reference,prediction\ncase_007,a,b\ncase_007,c,d\n",
            Path::new(""),
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate case_id `case_007`"));
    }

    #[test]
    fn crlf_matches_lf() {
        let lf = b"case_id,reference,prediction\nc1,r1,p1\nc2,r2,p2\n";
        let crlf = b"case_id,reference,prediction\r\nc1,r1,p1\r\nc2,r2,p2\r\n";
        assert_eq!(
            parse_manifest(lf, Path::new("")).unwrap(),
            parse_manifest(crlf, Path::new("")).unwrap()
        );
    }

    #[test]
    fn missing_column_and_empty() {
        let err = parse_manifest(b"case_id,reference\nc1,r1\n", Path::new("")).unwrap_err();
        assert!(err.to_string().contains("prediction"));
        assert!(parse_manifest(b"", Path::new("")).is_err());
        assert!(parse_manifest(b"case_id,reference,prediction\n", Path::new("")).is_err());
    }

    #[test]
    fn empty_path_rejected() {
        assert!(parse_manifest(b"case_id,reference,prediction\nc1,,p\n", Path::new("")).is_err());
    }

    #[test]
    fn references_without_prediction_column() {
        let r = parse_references(b"case_id,reference\nc1,r1.nii.gz\n", Path::new("/v")).unwrap();
        assert_eq!(r[0].reference, PathBuf::from("/v/r1.nii.gz"));
        assert!(parse_manifest(b"case_id,reference\nc1,r1.nii.gz\n", Path::new("")).is_err());
    }
}
