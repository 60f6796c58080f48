//! Delimited text tables (UCI style) described by a schema file.
//!
//! Schema files use the same `key = value` syntax as run configs:
//!
//! ```text
//! name = mushroom
//! separator = ,
//! header = false
//! columns = 23
//! label = 22
//! classes = e, p
//! filter_classes = false
//! column.0 = categorical: b, c, x, f, k, s
//! column.1 = numeric
//! column.2 = ignore
//! ```
//!
//! Categorical columns are one-hot encoded in dictionary order; numeric
//! columns are min-max scaled with statistics from the training split only.
//! With `filter_classes = true` rows whose label is not listed are dropped
//! (for example letters other than A and B).

use std::path::Path;

use super::{shuffled_partition, Dataset, SplitTag, TrainTest};
use crate::config::parse_key_values;
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnKind {
    Categorical(Vec<String>),
    Numeric,
    Ignore,
    Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub name: String,
    pub separator: u8,
    pub has_header: bool,
    pub columns: Vec<ColumnKind>,
    pub label_column: usize,
    pub classes: Vec<String>,
    pub filter_classes: bool,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

impl CsvSchema {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let entries = parse_key_values(text, path)?;
        let cfg_err = |line: usize, message: String| Error::Config {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut name = String::new();
        let mut separator = b',';
        let mut has_header = false;
        let mut n_columns = None;
        let mut label_column = None;
        let mut classes = Vec::new();
        let mut filter_classes = false;
        let mut declared: Vec<(usize, usize, ColumnKind)> = Vec::new();
        for (line, key, value) in &entries {
            let line = *line;
            match key.as_str() {
                "name" => name = value.clone(),
                "separator" => {
                    separator = match value.as_str() {
                        "tab" | "\\t" => b'\t',
                        "space" => b' ',
                        v if v.len() == 1 => v.as_bytes()[0],
                        v => return Err(cfg_err(line, format!("bad separator '{v}'"))),
                    }
                }
                "header" => {
                    has_header = value
                        .parse()
                        .map_err(|_| cfg_err(line, format!("expected true/false, got '{value}'")))?
                }
                "filter_classes" => {
                    filter_classes = value
                        .parse()
                        .map_err(|_| cfg_err(line, format!("expected true/false, got '{value}'")))?
                }
                "columns" => {
                    n_columns = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| cfg_err(line, format!("bad column count '{value}'")))?,
                    )
                }
                "label" => {
                    label_column = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| cfg_err(line, format!("bad label column '{value}'")))?,
                    )
                }
                "classes" => classes = split_list(value),
                k if k.starts_with("column.") => {
                    let idx = k["column.".len()..]
                        .parse::<usize>()
                        .map_err(|_| cfg_err(line, format!("bad column key '{k}'")))?;
                    let kind = if value == "numeric" {
                        ColumnKind::Numeric
                    } else if value == "ignore" {
                        ColumnKind::Ignore
                    } else if let Some(cats) = value.strip_prefix("categorical:") {
                        let cats = split_list(cats);
                        if cats.is_empty() {
                            return Err(cfg_err(line, "empty category dictionary".into()));
                        }
                        ColumnKind::Categorical(cats)
                    } else {
                        return Err(cfg_err(line, format!("unknown column kind '{value}'")));
                    };
                    declared.push((line, idx, kind));
                }
                other => return Err(cfg_err(line, format!("unknown schema key '{other}'"))),
            }
        }
        let n_columns = n_columns.ok_or_else(|| cfg_err(0, "missing 'columns'".into()))?;
        let label_column = label_column.ok_or_else(|| cfg_err(0, "missing 'label'".into()))?;
        if label_column >= n_columns {
            return Err(cfg_err(0, format!("label column {label_column} >= columns {n_columns}")));
        }
        if classes.len() < 2 {
            return Err(cfg_err(0, "need at least two classes".into()));
        }
        let mut columns: Vec<Option<ColumnKind>> = vec![None; n_columns];
        columns[label_column] = Some(ColumnKind::Label);
        for (line, idx, kind) in declared {
            if idx >= n_columns || columns[idx].is_some() {
                return Err(cfg_err(line, format!("column {idx} is out of range or declared twice")));
            }
            columns[idx] = Some(kind);
        }
        let columns = columns
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| cfg_err(0, format!("column {i} is not declared"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(CsvSchema {
            name,
            separator,
            has_header,
            columns,
            label_column,
            classes,
            filter_classes,
        })
    }

    /// Width of the encoded feature vector.
    pub fn encoded_width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnKind::Categorical(cats) => cats.len(),
                ColumnKind::Numeric => 1,
                ColumnKind::Ignore | ColumnKind::Label => 0,
            })
            .sum()
    }
}

/// Parses `path` under `schema` and returns a seeded train/test split with
/// `test_fraction` of the rows held out.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    test_fraction: f64,
    seed: u64,
) -> Result<TrainTest> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.separator)
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            row: 0,
            column: 0,
            message: e.to_string(),
        })?;

    let width = schema.encoded_width();
    // raw encoded rows; numeric cells hold unscaled values for now
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row_no = r + 1 + usize::from(schema.has_header);
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            row: row_no,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let fail = |column: usize, message: String| Error::Csv {
            path: path.to_path_buf(),
            row: row_no,
            column,
            message,
        };
        if record.len() != schema.columns.len() {
            return Err(fail(
                0,
                format!("expected {} fields, found {}", schema.columns.len(), record.len()),
            ));
        }
        let label_cell = &record[schema.label_column];
        let label = match schema.classes.iter().position(|c| c == label_cell) {
            Some(l) => l,
            None if schema.filter_classes => continue,
            None => {
                return Err(fail(schema.label_column, format!("unknown class '{label_cell}'")))
            }
        };
        let mut encoded = Vec::with_capacity(width);
        for (c, kind) in schema.columns.iter().enumerate() {
            let cell = &record[c];
            match kind {
                ColumnKind::Categorical(cats) => {
                    let hot = cats
                        .iter()
                        .position(|k| k == cell)
                        .ok_or_else(|| fail(c, format!("unknown category '{cell}'")))?;
                    encoded.extend((0..cats.len()).map(|k| if k == hot { 1.0 } else { 0.0 }));
                }
                ColumnKind::Numeric => {
                    let v: f64 = cell
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| fail(c, format!("non-numeric value '{cell}'")))?;
                    encoded.push(v);
                }
                ColumnKind::Ignore | ColumnKind::Label => {}
            }
        }
        rows.push(encoded);
        labels.push(label);
    }

    let (train_idx, test_idx) = shuffled_partition(rows.len(), test_fraction, seed)?;

    // numeric scaling from training rows only
    let numeric_slots: Vec<usize> = {
        let mut slots = Vec::new();
        let mut at = 0;
        for kind in &schema.columns {
            match kind {
                ColumnKind::Categorical(cats) => at += cats.len(),
                ColumnKind::Numeric => {
                    slots.push(at);
                    at += 1;
                }
                _ => {}
            }
        }
        slots
    };
    for &s in &numeric_slots {
        let (lo, hi) = train_idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(rows[i][s]), hi.max(rows[i][s]))
        });
        let range = hi - lo;
        for row in rows.iter_mut() {
            row[s] = if range > 0.0 && range.is_finite() {
                ((row[s] - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }

    let build = |idx: &[usize], split| -> Result<Dataset> {
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(&rows[i]);
        }
        Dataset::new(
            RealMatrix::from_vec(idx.len(), width, data)?,
            idx.iter().map(|&i| labels[i]).collect(),
            schema.classes.len(),
            split,
        )
    };
    Ok(TrainTest {
        train: build(&train_idx, SplitTag::Train)?,
        test: build(&test_idx, SplitTag::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = "\
name = toy
separator = ;
columns = 4
label = 3
classes = no, yes
column.0 = categorical: r, g, b
column.1 = numeric
column.2 = numeric
";

    fn setup(rows: &str) -> (tempfile::TempDir, std::path::PathBuf, CsvSchema) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, rows).unwrap();
        let schema = CsvSchema::parse(SCHEMA, Path::new("toy.schema")).unwrap();
        (dir, p, schema)
    }

    #[test]
    fn three_row_fixture_encodes_exactly() {
        let (_d, p, schema) = setup("g;2;7;yes\nr;4;7;no\nb;3;7;yes\n");
        assert_eq!(schema.encoded_width(), 5);
        let tt = load_csv(&p, &schema, 0.0, 1).unwrap();
        assert!(tt.test.is_empty());
        let mut rows: Vec<(Vec<f64>, usize)> = (0..3)
            .map(|i| (tt.train.inputs().row(i).to_vec(), tt.train.labels()[i]))
            .collect();
        rows.sort_by(|a, b| a.0[3].partial_cmp(&b.0[3]).unwrap());
        assert_eq!(rows[0], (vec![0.0, 1.0, 0.0, 0.0, 0.0], 1));
        assert_eq!(rows[1], (vec![0.0, 0.0, 1.0, 0.5, 0.0], 1));
        // constant column 2 scales to 0
        assert_eq!(rows[2], (vec![1.0, 0.0, 0.0, 1.0, 0.0], 0));
    }

    #[test]
    fn unknown_category_reports_row_and_column() {
        let (_d, p, schema) = setup("g;2;7;yes\nq;4;7;no\n");
        let err = load_csv(&p, &schema, 0.0, 1).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("column 0"), "{err}");
    }

    #[test]
    fn non_numeric_cell_is_an_error() {
        let (_d, p, schema) = setup("g;2;x;yes\n");
        let err = load_csv(&p, &schema, 0.0, 1).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("column 2"), "{err}");
    }

    #[test]
    fn unknown_class_is_error_unless_filtered() {
        let (_d, p, mut schema) = setup("g;2;1;yes\nr;3;1;maybe\n");
        assert!(load_csv(&p, &schema, 0.0, 1).is_err());
        schema.filter_classes = true;
        assert_eq!(load_csv(&p, &schema, 0.0, 1).unwrap().train.len(), 1);
    }

    #[test]
    fn test_rows_are_scaled_with_training_statistics() {
        let body: String = (0..10).map(|i| format!("r;{i};0;no\n")).collect();
        let (_d, p, schema) = setup(&body);
        let tt = load_csv(&p, &schema, 0.3, 5).unwrap();
        assert_eq!(tt.test.len(), 3);
        for d in [&tt.train, &tt.test] {
            assert!(d.inputs().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn schema_requires_every_column() {
        let text = "columns = 3\nlabel = 2\nclasses = a, b\ncolumn.0 = numeric\n";
        assert!(CsvSchema::parse(text, Path::new("s")).is_err());
    }
}
