//! Numeric CSV streams: feature columns followed by an integer label.

use std::io::Read;
use std::path::Path;

use crate::erm::Dataset;
use crate::error::{Error, Result};

/// Reads rows in file order. A first row whose first cell is not numeric is
/// taken as a header and skipped. Row numbers in errors are 1-based file rows.
pub fn parse_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Csv {
            row,
            reason: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let width = rec.len();
        if width < 2 {
            return Err(Error::Csv {
                row,
                reason: "need at least one feature and a label".into(),
            });
        }
        match dim {
            None => dim = Some(width - 1),
            Some(d) if d != width - 1 => {
                return Err(Error::Csv {
                    row,
                    reason: format!("expected {} columns, found {width}", d + 1),
                })
            }
            _ => {}
        }
        for (j, cell) in rec.iter().take(width - 1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                row,
                reason: format!("column {}: `{cell}` is not numeric", j + 1),
            })?;
            features.push(v);
        }
        let cell = &rec[width - 1];
        let label: u32 = cell.parse().map_err(|_| Error::Csv {
            row,
            reason: format!("label `{cell}` is not a nonnegative integer"),
        })?;
        labels.push(label);
    }
    let dim = dim.ok_or(Error::EmptyData("load_csv"))?;
    let classes = labels.iter().max().map_or(1, |&m| m as usize + 1).max(2);
    Dataset::from_parts(features, labels, dim, classes)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    parse_csv(std::fs::File::open(path)?)
}
