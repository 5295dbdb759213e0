//! Ingestion of delimited benchmark datasets with header `x0,...,x{k-1},y`.

use std::io::BufRead;
use std::path::Path;

use super::BenchError;
use crate::datagen::ScatterSet;

#[derive(Debug, Clone)]
pub struct BenchDataset {
    pub name: String,
    pub data: ScatterSet,
    pub k: usize,
    pub ground_truth: Option<String>,
    pub source: String,
    /// Rows dropped during ingestion because they contained non-finite values.
    pub dropped_rows: usize,
}

/// Read a comma/tab/space-delimited file with header `x0,...,x{k-1},y`.
/// Lines starting with `#` are comments; a `# truth: <expr>` comment carries
/// an optional ground-truth annotation. Non-finite rows are dropped (and
/// counted), never stored.
pub fn ingest_dataset(path: &Path) -> Result<BenchDataset, BenchError> {
    let p = path.display().to_string();
    let bad = |msg: String| BenchError::BadDataset { path: p.clone(), msg };
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut header: Option<Vec<String>> = None;
    let mut k = 0usize;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0usize;
    let mut ground_truth = None;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(truth) = rest.trim().strip_prefix("truth:") {
                ground_truth = Some(truth.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = if line.contains(',') {
            line.split(',').map(|s| s.trim()).collect()
        } else {
            line.split_whitespace().collect()
        };
        match &header {
            None => {
                if fields.len() < 2 || fields.last().map(|s| s.to_ascii_lowercase()) != Some("y".into()) {
                    return Err(bad(format!("line {}: header must be x0,...,x{{k-1}},y", ln + 1)));
                }
                k = fields.len() - 1;
                for (i, f) in fields[..k].iter().enumerate() {
                    if f.to_ascii_lowercase() != format!("x{i}") {
                        return Err(bad(format!("line {}: expected column x{i}, found `{f}`", ln + 1)));
                    }
                }
                header = Some(fields.iter().map(|s| s.to_string()).collect());
            }
            Some(_) => {
                if fields.len() != k + 1 {
                    return Err(bad(format!("line {}: expected {} fields, found {}", ln + 1, k + 1, fields.len())));
                }
                let mut row = Vec::with_capacity(k + 1);
                let mut ok = true;
                for f in &fields {
                    match f.parse::<f64>() {
                        Ok(v) if v.is_finite() => row.push(v),
                        Ok(_) => {
                            ok = false;
                            break;
                        }
                        Err(e) => return Err(bad(format!("line {}: bad number `{f}`: {e}", ln + 1))),
                    }
                }
                if ok {
                    x.extend_from_slice(&row[..k]);
                    y.push(row[k]);
                } else {
                    dropped += 1;
                }
            }
        }
    }
    if header.is_none() {
        return Err(bad("empty file".into()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "dataset".to_string());
    let data = ScatterSet::new(x, y, k, name.clone());
    Ok(BenchDataset { name, data, k, ground_truth, source: p, dropped_rows: dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingests_csv_with_header() {
        let f = write_file("x0,x1,y\n1,2,3\n4,5,6\n");
        let ds = ingest_dataset(f.path()).unwrap();
        assert_eq!(ds.k, 2);
        assert_eq!(ds.data.n, 2);
        assert_eq!(ds.data.y, vec![3.0, 6.0]);
        assert_eq!(ds.dropped_rows, 0);
    }

    #[test]
    fn drops_and_counts_non_finite_rows() {
        let f = write_file("x0,y\n1,2\n3,inf\n4,5\nnan,7\n");
        let ds = ingest_dataset(f.path()).unwrap();
        assert_eq!(ds.data.n, 2);
        assert_eq!(ds.dropped_rows, 2);
        assert!(ds.data.finite.iter().all(|&b| b));
    }

    #[test]
    fn rejects_bad_header() {
        let f = write_file("a,b\n1,2\n");
        assert!(ingest_dataset(f.path()).is_err());
    }

    #[test]
    fn reads_truth_comment_and_whitespace_format() {
        let f = write_file("# truth: mul x0 x0\nx0 y\n1 1\n2 4\n3 9\n");
        let ds = ingest_dataset(f.path()).unwrap();
        assert_eq!(ds.ground_truth.as_deref(), Some("mul x0 x0"));
        assert_eq!(ds.data.n, 3);
    }
}
