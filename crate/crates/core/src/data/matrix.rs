//! Plain observation matrices: one observation per line, comma-separated
//! decimals, no header.

use std::path::Path;

use crate::dcorr::ObservationMatrix;
use crate::error::{shape, Error, Result};

pub fn read_observations(path: &Path) -> Result<ObservationMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Payload(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Payload(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Payload(format!("{} line {}: cannot parse {f:?}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return shape(format!(
                    "{} line {}: {} columns, expected {}",
                    path.display(),
                    i + 1,
                    row.len(),
                    first.len()
                ));
            }
        }
        rows.push(row);
    }
    ObservationMatrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows_and_rejects_ragged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "0, 0\n3,4\n1.5,-2e-1\n").unwrap();
        let m = read_observations(&path).unwrap();
        assert_eq!((m.m(), m.p()), (3, 2));
        assert_eq!(m.view()[[2, 1]], -0.2);

        std::fs::write(&path, "0,0\n3\n").unwrap();
        assert!(matches!(read_observations(&path), Err(Error::Shape(_))));
        std::fs::write(&path, "0,x\n").unwrap();
        assert!(matches!(read_observations(&path), Err(Error::Payload(_))));
    }
}
