//! Dataset CSV: header `id,modality,camera,f0,...,f{D-1}`, LF newlines,
//! features written with 17 significant digits so values round-trip.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Dataset, Modality, Sample, Split};
use crate::error::{Error, Result};

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    write!(w, "id,modality,camera")?;
    for i in 0..ds.dim() {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for s in ds.samples() {
        write!(w, "{},{},{}", s.id, s.modality.token(), s.camera)?;
        for v in &s.features {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path)?;
    write_dataset(ds, BufWriter::new(f))
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let dim = match lines.next() {
        None => {
            return Err(Error::NoSamples {
                path: path.to_path_buf(),
            })
        }
        Some((_, header)) => {
            let header = header?;
            let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
            if cols.len() < 4 || cols[..3] != ["id", "modality", "camera"] {
                return Err(err(1, format!("malformed header `{header}`")));
            }
            for (i, c) in cols[3..].iter().enumerate() {
                if *c != format!("f{i}") {
                    return Err(err(
                        1,
                        format!("expected feature column `f{i}`, found `{c}`"),
                    ));
                }
            }
            cols.len() - 3
        }
    };

    let mut samples = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if fields.len() != dim + 3 {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", dim + 3, fields.len()),
            ));
        }
        let id = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("invalid id `{}`", fields[0])))?;
        let modality: Modality = fields[1].parse().map_err(|e| err(lineno, e))?;
        let camera = fields[2]
            .parse()
            .map_err(|_| err(lineno, format!("invalid camera `{}`", fields[2])))?;
        let mut features = Vec::with_capacity(dim);
        for (j, f) in fields[3..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("invalid value `{f}` in column f{j}")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value in column f{j}")));
            }
            features.push(v);
        }
        samples.push(Sample {
            id,
            modality,
            camera,
            features,
        });
    }
    if samples.is_empty() {
        return Err(Error::NoSamples {
            path: path.to_path_buf(),
        });
    }
    Dataset::new(samples, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use std::fs;

    #[test]
    fn round_trip_is_exact() {
        let ds = generate_synthetic(&SyntheticConfig {
            identities: 3,
            per_modality: 2,
            dim: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p, ds.split).unwrap();
        assert_eq!(back, ds);
    }

    fn load_str(text: &str) -> Result<Dataset> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, text).unwrap();
        load_dataset(&p, Split::Train)
    }

    #[test]
    fn unknown_modality_reports_line() {
        let err = load_str("id,modality,camera,f0\n0,rgb,1,0.5\n1,thermal,3,0.1\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("thermal"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_file_and_header_only_have_no_samples() {
        assert!(matches!(load_str(""), Err(Error::NoSamples { .. })));
        assert!(matches!(
            load_str("id,modality,camera,f0\n"),
            Err(Error::NoSamples { .. })
        ));
    }

    #[test]
    fn malformed_rows() {
        assert!(matches!(
            load_str("id,mod,camera,f0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            load_str("id,modality,camera,f0,f1\n0,rgb,1,0.5\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            load_str("id,modality,camera,f0\n0,rgb,1,abc\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
