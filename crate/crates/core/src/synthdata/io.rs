//! Text dataset format.
//!
//! ```text
//! cab-dataset v1 task=imputation t=96 d=8 count=2
//! sample 0
//! label -
//! lags 0:1:7@0.8
//! values
//! <T lines of d comma-separated values>
//! mask
//! <T lines of d comma-separated 0/1>
//! anomalies
//! <one line of T comma-separated 0/1>
//! end
//! ```
//!
//! The `mask` and `anomalies` sections are optional per sample. Values are
//! written in shortest round-trip form, so reading back is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PlantedLag, SeriesSample, Task};
use crate::error::{CabError, Result};
use crate::numerics::Matrix;

const MAGIC: &str = "cab-dataset v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub t_len: usize,
    pub d: usize,
    pub samples: Vec<SeriesSample>,
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn write_matrix(out: &mut String, m: &Matrix) {
    for t in 0..m.rows() {
        out.push_str(&join(m.row(t)));
        out.push('\n');
    }
}

pub fn write_dataset_string(data: &Dataset) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} task={} t={} d={} count={}",
        data.task,
        data.t_len,
        data.d,
        data.samples.len()
    );
    for (i, s) in data.samples.iter().enumerate() {
        if s.values.shape() != (data.t_len, data.d) {
            return Err(CabError::Shape {
                op: "write_dataset",
                left: s.values.shape(),
                right: (data.t_len, data.d),
            });
        }
        let _ = writeln!(out, "sample {i}");
        let _ = writeln!(out, "label {}", s.label.map_or("-".to_string(), |l| l.to_string()));
        let lags = if s.planted_lags.is_empty() {
            "-".to_string()
        } else {
            join(&s.planted_lags)
        };
        let _ = writeln!(out, "lags {lags}");
        out.push_str("values\n");
        write_matrix(&mut out, &s.values);
        if let Some(mask) = &s.mask {
            out.push_str("mask\n");
            write_matrix(&mut out, mask);
        }
        if let Some(flags) = &s.anomaly_flags {
            out.push_str("anomalies\n");
            out.push_str(&join(flags.iter().map(|&f| u8::from(f))));
            out.push('\n');
        }
        out.push_str("end\n");
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_dataset_string(data)?)
        .map_err(|e| CabError::Io(format!("{}: {e}", path.display())))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.trim_end()))
            }
            None => Err(CabError::Parse {
                line: self.last + 1,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> CabError {
    CabError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str) -> Result<(Task, usize, usize, usize)> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| parse_err(1, format!("missing '{MAGIC}' header")))?;
    let (mut task, mut t_len, mut d, mut count) = (None, None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("header field '{field}' is not key=value")))?;
        let number = || {
            value
                .parse::<usize>()
                .map_err(|_| parse_err(1, format!("header field '{key}' has invalid value '{value}'")))
        };
        match key {
            "task" => {
                task = Some(value.parse::<Task>().map_err(|_| {
                    parse_err(1, format!("header field 'task' has invalid value '{value}'"))
                })?)
            }
            "t" => t_len = Some(number()?),
            "d" => d = Some(number()?),
            "count" => count = Some(number()?),
            other => return Err(parse_err(1, format!("unknown header field '{other}'"))),
        }
    }
    let missing = |name: &str| parse_err(1, format!("header field '{name}' is missing"));
    Ok((
        task.ok_or_else(|| missing("task"))?,
        t_len.ok_or_else(|| missing("t"))?,
        d.ok_or_else(|| missing("d"))?,
        count.ok_or_else(|| missing("count"))?,
    ))
}

fn parse_row(line_no: usize, line: &str, width: usize) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("invalid number '{v}'")))
        })
        .collect::<Result<_>>()?;
    if row.len() != width {
        return Err(parse_err(line_no, format!("expected {width} values, found {}", row.len())));
    }
    Ok(row)
}

fn parse_matrix(lines: &mut Lines, t_len: usize, d: usize, what: &str) -> Result<Matrix> {
    let mut data = Vec::with_capacity(t_len * d);
    for _ in 0..t_len {
        let (no, line) = lines.next(what)?;
        data.extend(parse_row(no, line, d)?);
    }
    Matrix::new(t_len, d, data)
}

fn keyed<'a>(no: usize, line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| parse_err(no, format!("expected '{key} ...', found '{line}'")))
}

pub fn read_dataset_str(text: &str) -> Result<Dataset> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, header) = lines.next("header")?;
    let (task, t_len, d, count) = parse_header(header)?;
    if t_len == 0 || d == 0 {
        return Err(parse_err(1, "header fields 't' and 'd' must be positive"));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let (no, line) = lines.next("sample")?;
        let idx = keyed(no, line, "sample")?;
        if idx.parse::<usize>() != Ok(i) {
            return Err(parse_err(no, format!("expected sample {i}, found '{idx}'")));
        }
        let (no, line) = lines.next("label")?;
        let label = match keyed(no, line, "label")? {
            "-" => None,
            v => Some(v.parse().map_err(|_| parse_err(no, format!("invalid label '{v}'")))?),
        };
        let (no, line) = lines.next("lags")?;
        let planted_lags = match keyed(no, line, "lags")? {
            "-" => Vec::new(),
            v => v
                .split(',')
                .map(|p| p.parse::<PlantedLag>().map_err(|e| parse_err(no, e.to_string())))
                .collect::<Result<_>>()?,
        };
        let (no, line) = lines.next("values")?;
        if line != "values" {
            return Err(parse_err(no, format!("expected 'values', found '{line}'")));
        }
        let values = parse_matrix(&mut lines, t_len, d, "value row")?;
        let mut sample = SeriesSample {
            values,
            mask: None,
            label,
            anomaly_flags: None,
            planted_lags,
        };
        loop {
            let (no, line) = lines.next("'mask', 'anomalies' or 'end'")?;
            match line {
                "end" => break,
                "mask" if sample.mask.is_none() => {
                    let mask = parse_matrix(&mut lines, t_len, d, "mask row")?;
                    if mask.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(parse_err(no, "mask entries must be 0 or 1"));
                    }
                    sample.mask = Some(mask);
                }
                "anomalies" if sample.anomaly_flags.is_none() => {
                    let (no, line) = lines.next("anomaly flags")?;
                    let flags = parse_row(no, line, t_len)?;
                    if flags.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(parse_err(no, "anomaly flags must be 0 or 1"));
                    }
                    sample.anomaly_flags = Some(flags.into_iter().map(|v| v == 1.0).collect());
                }
                other => return Err(parse_err(no, format!("unexpected line '{other}'"))),
            }
        }
        samples.push(sample);
    }
    if let Ok((no, line)) = lines.next("nothing") {
        if !line.trim().is_empty() {
            return Err(parse_err(no, format!("trailing content '{line}'")));
        }
    }
    Ok(Dataset {
        task,
        t_len,
        d,
        samples,
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CabError::Io(format!("{}: {e}", path.display())))?;
    read_dataset_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{gen_lagged_series, DatasetSpec};

    fn dataset(task: Task) -> Dataset {
        let spec = DatasetSpec {
            task,
            t_len: 12,
            d: 3,
            samples: 3,
            lags: vec!["0:1:5@0.7".parse().unwrap()],
            ..DatasetSpec::default()
        };
        Dataset {
            task,
            t_len: 12,
            d: 3,
            samples: gen_lagged_series(&spec).unwrap(),
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        for task in [Task::Imputation, Task::Anomaly, Task::Classification] {
            let data = dataset(task);
            let text = write_dataset_string(&data).unwrap();
            assert_eq!(read_dataset_str(&text).unwrap(), data);
        }
    }

    #[test]
    fn roundtrip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.train");
        let data = dataset(Task::Anomaly);
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let data = Dataset {
            task: Task::Imputation,
            t_len: 4,
            d: 2,
            samples: Vec::new(),
        };
        let text = write_dataset_string(&data).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_dataset_str(&text).unwrap(), data);
    }

    #[test]
    fn corrupted_header_names_the_field() {
        let err = read_dataset_str("cab-dataset v1 task=imputation t=abc d=2 count=0\n").unwrap_err();
        assert!(matches!(&err, CabError::Parse { line: 1, msg } if msg.contains("'t'")), "{err}");
        let err = read_dataset_str("cab-dataset v1 task=forecast t=4 d=2 count=0\n").unwrap_err();
        assert!(err.to_string().contains("'task'"));
        let err = read_dataset_str("cab-dataset v1 t=4 d=2 count=0\n").unwrap_err();
        assert!(err.to_string().contains("'task'"));
        assert!(read_dataset_str("not a dataset\n").is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = write_dataset_string(&dataset(Task::Imputation)).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[6] = "1.0,oops,2.0".into();
        let err = read_dataset_str(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, CabError::Parse { line: 7, .. }), "{err}");

        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_dataset_str(&truncated), Err(CabError::Parse { .. })));
    }
}
