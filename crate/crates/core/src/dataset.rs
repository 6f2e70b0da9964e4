//! Sample files: one row per sample, `n` feature columns then the label,
//! with header `f1,...,fn,label`.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::problem::{ComposedProblem, Loss, ProblemError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("file contains no samples")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Feature rows and labels as read from disk, before any loss is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn into_problem(self, loss: Loss) -> Result<ComposedProblem, DatasetError> {
        Ok(ComposedProblem::new(self.features, self.labels, loss)?)
    }

    pub fn from_problem(problem: &ComposedProblem) -> Self {
        Self {
            features: problem.design().clone(),
            labels: problem.targets().to_vec(),
        }
    }
}

fn check_header(header: &csv::StringRecord) -> Result<usize, DatasetError> {
    let n = header
        .len()
        .checked_sub(1)
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            DatasetError::Header("need at least one feature column and a label".into())
        })?;
    for (j, name) in header.iter().enumerate() {
        let expected = if j == n {
            "label".to_string()
        } else {
            format!("f{}", j + 1)
        };
        if name.trim() != expected {
            return Err(DatasetError::Header(format!(
                "column {} is {name:?}, expected {expected:?}",
                j + 1
            )));
        }
    }
    Ok(n)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let n = check_header(rdr.headers()?)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(DatasetError::Row {
                row,
                msg: format!("{} fields, expected {}", record.len(), n + 1),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| DatasetError::Row {
                row,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Row {
                    row,
                    msg: format!("non-finite value {field:?}"),
                });
            }
            if j < n {
                data.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(Dataset {
        features: Matrix::new(labels.len(), n, data)?,
        labels,
    })
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let n = dataset.features.cols();
    let mut header: Vec<String> = (1..=n).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    wtr.write_record(&header)?;
    for (i, label) in dataset.labels.iter().enumerate() {
        let mut row: Vec<String> = dataset.features.row(i).iter().map(f64::to_string).collect();
        row.push(label.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_problem(path: &Path, loss: Loss) -> Result<ComposedProblem, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))?.into_problem(loss)
}

pub fn save_problem(problem: &ComposedProblem, path: &Path) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    write_dataset(
        &Dataset::from_problem(problem),
        std::io::BufWriter::new(file),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let ds = Dataset {
            features: Matrix::from_rows(&[vec![0.1, -2.5e-17], vec![1.0 / 3.0, 7.0]]).unwrap(),
            labels: vec![1.0, -1.0],
        };
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert!(buf.starts_with(b"f1,f2,label\n"));
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            "",
            "label\n1\n",
            "f1,f3,label\n1,2,3\n",
            "f1,label\n",
            "f1,label\n1\n",
            "f1,label\nx,1\n",
            "f1,label\nNaN,1\n",
            "f1,label\n1,inf\n",
        ] {
            assert!(read_dataset(bad.as_bytes()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn logistic_labels_checked() {
        let ds = read_dataset("f1,label\n1,0.5\n".as_bytes()).unwrap();
        assert!(matches!(
            ds.into_problem(Loss::Logistic),
            Err(DatasetError::Problem(ProblemError::Label { .. }))
        ));
    }
}
