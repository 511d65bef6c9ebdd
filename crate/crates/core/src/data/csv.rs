use crate::data::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Loads a headerless numeric csv with the class label in the first column
/// and features after it. Feature width is fixed by the first row.
pub fn load_csv(
    path: impl AsRef<Path>,
    classes: Option<usize>,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let parse_err = |line: usize, what: String| Error::CsvParse {
        path: path.to_path_buf(),
        line,
        what,
    };

    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap().trim();
        let label: usize = label_field
            .parse()
            .map_err(|_| parse_err(line_no, format!("label '{label_field}' is not a non-negative integer")))?;
        let row: Vec<f32> = fields
            .map(|f| {
                let f = f.trim();
                f.parse::<f32>()
                    .map_err(|_| parse_err(line_no, format!("feature '{f}' is not a number")))
            })
            .collect::<Result<_>>()?;
        match width {
            None => {
                if row.is_empty() {
                    return Err(parse_err(line_no, "row has no feature columns".into()));
                }
                width = Some(row.len());
            }
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    line_no,
                    format!("row has {} features, expected {w}", row.len()),
                ));
            }
            _ => {}
        }
        labels.push(label);
        features.extend_from_slice(&row);
    }
    let width = width.ok_or_else(|| parse_err(0, "file holds no data rows".into()))?;
    let n = labels.len();
    let tensor = Tensor::from_vec_checked(&[n, width], features)?;
    let observed = labels.iter().max().map_or(0, |&m| m + 1);
    let classes = classes.unwrap_or(observed).max(observed).max(2);
    LabeledDataset::new(tensor, labels, classes, provenance)
}
