//! Label tables: CSV with a header row, one row per sample.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelVector;

fn csv_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads the raw string cells of one column.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e.to_string()))?.clone();
    let idx = headers.iter().position(|h| h.trim() == column).ok_or_else(|| {
        csv_err(
            path,
            format!(
                "no column '{column}' (columns: {})",
                headers.iter().collect::<Vec<_>>().join(", ")
            ),
        )
    })?;
    let mut cells = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e.to_string()))?;
        let cell = record[idx].trim();
        if cell.is_empty() {
            // Header is line 1.
            return Err(csv_err(path, format!("empty '{column}' value on line {}", row + 2)));
        }
        cells.push(cell.to_string());
    }
    Ok(cells)
}

/// Turns raw cells into class indices.
///
/// With an explicit class list, each cell must name one of its entries. Otherwise, if every
/// cell is a non-negative integer the integer is the class index;
/// otherwise classes are numbered by first appearance.
pub fn encode_labels(cells: &[String], classes: Option<&[String]>) -> Result<LabelVector> {
    if let Some(classes) = classes {
        let lookup: HashMap<&str, usize> =
            classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let values = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                lookup.get(c.as_str()).copied().ok_or_else(|| {
                    Error::InvalidInput(format!("label '{c}' in row {i} is not a declared class"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return LabelVector::new(values, classes.len());
    }
    let numeric: Option<Vec<usize>> = cells.iter().map(|c| c.parse().ok()).collect();
    if let Some(values) = numeric {
        return LabelVector::from_values(values);
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let values: Vec<usize> = cells
        .iter()
        .map(|c| {
            let next = seen.len();
            *seen.entry(c.as_str()).or_insert(next)
        })
        .collect();
    LabelVector::new(values, seen.len().max(1))
}

pub fn load_labels(path: &Path, column: &str, classes: Option<&[String]>) -> Result<LabelVector> {
    let cells = read_column(path, column)?;
    encode_labels(&cells, classes).map_err(|e| match e {
        Error::InvalidInput(m) => csv_err(path, m),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn integers_are_indices_and_strings_follow_first_appearance() {
        let l = encode_labels(&strings(&["1", "0", "2"]), None).unwrap();
        assert_eq!((l.values(), l.num_classes()), (&[1, 0, 2][..], 3));
        let l = encode_labels(&strings(&["cat", "dog", "cat", "eel"]), None).unwrap();
        assert_eq!(l.values(), &[0, 1, 0, 2]);
        let classes = strings(&["dog", "cat"]);
        let l = encode_labels(&strings(&["cat", "dog"]), Some(&classes)).unwrap();
        assert_eq!(l.values(), &[1, 0]);
        assert!(encode_labels(&strings(&["owl"]), Some(&classes)).is_err());
    }

    #[test]
    fn reads_columns_and_reports_problems() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "y,s\n0,1\n1,0\n").unwrap();
        assert_eq!(load_labels(&path, "y", None).unwrap().values(), &[0, 1]);
        assert_eq!(load_labels(&path, "s", None).unwrap().values(), &[1, 0]);
        let err = load_labels(&path, "z", None).unwrap_err();
        assert!(err.to_string().contains("no column 'z'"), "{err}");

        std::fs::write(&path, "y,s\n0,1\n1\n").unwrap();
        assert!(load_labels(&path, "y", None).is_err());
        std::fs::write(&path, "y,s\n0,1\n,0\n").unwrap();
        assert!(load_labels(&path, "y", None).unwrap_err().to_string().contains("line 3"));
    }
}
