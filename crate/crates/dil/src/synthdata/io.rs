//! CSV layout:
//!
//! ```text
//! # task=classification classes=2
//! x0,x1,...,y,env
//! 1.0000000000000000e0,...
//! ```
//!
//! The `env` column is optional. Reals are written with 17 significant digits.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Dataset, Samples};
use crate::error::{DilError, Result};
use crate::models::Task;

fn task_comment(task: Task) -> String {
    match task {
        Task::Regression => "# task=regression".to_string(),
        Task::Classification { classes } => format!("# task=classification classes={classes}"),
    }
}

fn parse_task(line: &str) -> Result<Task> {
    let bad = |msg: &str| DilError::Csv { line: 1, msg: msg.to_string() };
    let body = line.strip_prefix('#').ok_or_else(|| bad("expected a `# task=...` header comment"))?;
    let mut kind = None;
    let mut classes = None;
    for part in body.split_whitespace() {
        match part.split_once('=') {
            Some(("task", v)) => kind = Some(v.to_string()),
            Some(("classes", v)) => classes = Some(v.parse::<usize>().map_err(|_| bad("bad class count"))?),
            _ => return Err(bad(&format!("unrecognized header entry `{part}`"))),
        }
    }
    match (kind.as_deref(), classes) {
        (Some("regression"), None) => Ok(Task::Regression),
        (Some("classification"), Some(classes)) => Ok(Task::Classification { classes }),
        (Some("classification"), None) => Err(bad("classification header lacks `classes=`")),
        _ => Err(bad("header must name task=regression or task=classification")),
    }
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let s = &data.samples;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", task_comment(s.task))?;
    let mut header: Vec<String> = (0..s.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if data.env.is_some() {
        header.push("env".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..s.len() {
        let mut fields: Vec<String> = (0..s.dim()).map(|j| format!("{:.16e}", s.x[(i, j)])).collect();
        fields.push(match s.task {
            Task::Regression => format!("{:.16e}", s.y[i]),
            Task::Classification { .. } => format!("{}", s.y[i] as u64),
        });
        if let Some(env) = &data.env {
            fields.push(env[i].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let task = parse_task(first.trim_end())?;

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header = reader.headers().map_err(|e| DilError::Csv { line: 2, msg: e.to_string() })?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let y_col = col("y").ok_or_else(|| DilError::MissingColumn("y".into()))?;
    let env_col = col("env");
    let n_x = header.iter().filter(|h| h.trim().starts_with('x')).count();
    let x_cols = (0..n_x)
        .map(|j| col(&format!("x{j}")).ok_or_else(|| DilError::MissingColumn(format!("x{j}"))))
        .collect::<Result<Vec<_>>>()?;
    if n_x == 0 {
        return Err(DilError::MissingColumn("x0".into()));
    }

    let mut xs = Vec::new();
    let mut y = Vec::new();
    let mut env = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        // comment line + header + 1-based rows
        let line = k as u64 + 3;
        let rec = rec.map_err(|e| DilError::Csv { line, msg: e.to_string() })?;
        let num = |c: usize, name: &str| -> Result<f64> {
            let field = rec.get(c).ok_or_else(|| DilError::Csv { line, msg: format!("missing field `{name}`") })?;
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| DilError::Csv { line, msg: format!("field `{name}` is not a number: `{field}`") })?;
            if !v.is_finite() {
                return Err(DilError::Csv { line, msg: format!("field `{name}` is not finite") });
            }
            Ok(v)
        };
        for (j, &c) in x_cols.iter().enumerate() {
            xs.push(num(c, &format!("x{j}"))?);
        }
        let target = num(y_col, "y")?;
        if let Task::Classification { classes } = task {
            if crate::kernels::class_index(target, classes).is_none() {
                return Err(DilError::Csv { line, msg: format!("label {target} not in [0, {classes})") });
            }
        }
        y.push(target);
        if let Some(c) = env_col {
            let field = rec.get(c).unwrap_or_default();
            env.push(
                field
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| DilError::Csv { line, msg: format!("env tag is not an integer: `{field}`") })?,
            );
        }
    }
    if y.is_empty() {
        return Err(DilError::Empty("CSV has no data rows"));
    }
    let x = DMatrix::from_row_slice(y.len(), n_x, &xs);
    let samples = Samples::new(x, y, task)?;
    Dataset::new(samples, env_col.map(|_| env))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let x = DMatrix::from_row_slice(3, 2, &[0.1, -2.5, 1.0 / 3.0, 4.0, 1e-300, -7.25]);
        Dataset::new(Samples::new(x, vec![0.5, -1.0 / 7.0, 2.0], Task::Regression).unwrap(), Some(vec![0, 0, 1]))
            .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = toy();
        save_csv(&d, &p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), d);
    }

    #[test]
    fn missing_column_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "# task=regression\nx0,x2,y\n1,2,3\n").unwrap();
        let err = load_csv(&p).unwrap_err();
        assert!(matches!(err, DilError::MissingColumn(ref c) if c == "x1"), "{err}");
        std::fs::write(&p, "# task=regression\nx0,x1\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p).unwrap_err(), DilError::MissingColumn(ref c) if c == "y"));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "# task=regression\nx0,y\n1,2\n3,abc\n").unwrap();
        let err = load_csv(&p).unwrap_err();
        assert!(matches!(err, DilError::Csv { line: 4, .. }), "{err}");
    }

    #[test]
    fn classification_header() {
        assert_eq!(parse_task("# task=classification classes=3").unwrap(), Task::Classification { classes: 3 });
        assert!(parse_task("x0,y").is_err());
    }
}
