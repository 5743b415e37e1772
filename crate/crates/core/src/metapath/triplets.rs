//! Subgraph triplet files: a `# path=V-D-V norm=sps N=…` header followed by
//! `i,j,value` lines with `i <= j`; the mirror entry is implied.

use std::fmt::Write as _;
use std::path::Path;

use super::{MetaPath, Normalization, SimilaritySubgraph};
use crate::error::{Error, Result};
use crate::hetgraph::Schema;
use crate::sparse::Csr;

pub fn write_triplets(sub: &SimilaritySubgraph, path: &Path) -> Result<()> {
    let mut out = format!(
        "# path={} norm={} N={}\n",
        sub.path,
        sub.normalization.as_str(),
        sub.n()
    );
    for (i, j, v) in sub.values.iter().filter(|&(i, j, _)| i <= j) {
        match sub.normalization {
            Normalization::Sps => {
                let _ = writeln!(out, "{i},{j},{v:.16e}");
            }
            Normalization::RawPathcount => {
                let _ = writeln!(out, "{i},{j},{}", v as u64);
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_triplets(path: &Path, schema: &Schema) -> Result<SimilaritySubgraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| perr(1, "missing `# path=… norm=… N=…` header".into()))?;
    let (mut mp, mut norm, mut n) = (None, None, None);
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("path", v)) => mp = Some(MetaPath::parse(v, schema)?),
            Some(("norm", v)) => {
                norm = Some(
                    Normalization::parse(v)
                        .ok_or_else(|| perr(1, format!("unknown normalization `{v}`")))?,
                )
            }
            Some(("N", v)) => n = Some(v.parse::<usize>().map_err(|e| perr(1, e.to_string()))?),
            _ => return Err(perr(1, format!("unexpected header field `{field}`"))),
        }
    }
    let (mp, norm, n) = match (mp, norm, n) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr(1, "header needs path, norm and N".into())),
    };
    let mut triplets = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let no = i + 1;
        let mut parts = line.split(',');
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| perr(no, format!("missing {what}")))
                .map(str::trim)
        };
        let a: usize = next("row")?.parse().map_err(|e| perr(no, format!("{e}")))?;
        let b: usize = next("column")?
            .parse()
            .map_err(|e| perr(no, format!("{e}")))?;
        let v: f64 = next("value")?
            .parse()
            .map_err(|e| perr(no, format!("{e}")))?;
        if a > b || b >= n {
            return Err(perr(no, format!("entry ({a},{b}) must satisfy i <= j < N")));
        }
        triplets.push((a, b, v));
        if a != b {
            triplets.push((b, a, v));
        }
    }
    let values = Csr::from_triplets(n, n, triplets, |x, _| x);
    let divisor = match norm {
        Normalization::Sps => 1.0,
        Normalization::RawPathcount => {
            let m = values.values().iter().copied().fold(0.0f64, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    Ok(SimilaritySubgraph {
        path: mp,
        normalization: norm,
        values,
        divisor,
    })
}
