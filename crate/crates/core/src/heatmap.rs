//! Basis-count by sample-count matrices of trial-averaged RAE, one per
//! estimator, built from a `results.csv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

type Cell = (usize, usize);

const REQUIRED: [&str; 4] = ["estimator", "basis_count", "samples", "mean_rae"];

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub estimator: String,
    pub basis_counts: Vec<usize>,
    pub samples: Vec<usize>,
    /// `cells[r][c]` for `basis_counts[r]`, `samples[c]`; `None` if no trial
    /// was recorded for that pair.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    pub fn get(&self, basis_count: usize, samples: usize) -> Option<f64> {
        let r = self.basis_counts.iter().position(|&b| b == basis_count)?;
        let c = self.samples.iter().position(|&s| s == samples)?;
        self.cells[r][c]
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["basis_count".to_string()];
        header.extend(self.samples.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (b, row) in self.basis_counts.iter().zip(&self.cells) {
            let mut rec = vec![b.to_string()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parse results and average `mean_rae` over trials. Diverged cells (`inf`)
/// make the average `inf`.
pub fn build_heatmaps<R: Read>(results: R) -> Result<Vec<Heatmap>> {
    let mut reader = csv::Reader::from_reader(results);
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 4];
    for (slot, name) in col.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))?;
    }
    // estimator -> (basis_count, samples) -> (sum, count)
    let mut sums: BTreeMap<String, BTreeMap<Cell, (f64, usize)>> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| rec.get(col[j]).unwrap_or("").trim();
        let bad = |j: usize| Error::Config {
            line: line + 2,
            message: format!("cannot parse {} `{}`", REQUIRED[j], field(j)),
        };
        let basis: usize = field(1).parse().map_err(|_| bad(1))?;
        let samples: usize = field(2).parse().map_err(|_| bad(2))?;
        let rae: f64 = field(3).parse().map_err(|_| bad(3))?;
        let e = sums
            .entry(field(0).to_string())
            .or_default()
            .entry((basis, samples))
            .or_insert((0.0, 0));
        e.0 += rae;
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(estimator, table)| {
            let basis_counts: Vec<usize> = table.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
            let samples: Vec<usize> = table.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
            let cells = basis_counts
                .iter()
                .map(|&b| {
                    samples
                        .iter()
                        .map(|&s| table.get(&(b, s)).map(|&(sum, n)| sum / n as f64))
                        .collect()
                })
                .collect();
            Heatmap {
                estimator,
                basis_counts,
                samples,
                cells,
            }
        })
        .collect())
}

/// Write `heatmap_<estimator>.csv` next to `out_dir` for every estimator in
/// `results`.
pub fn emit_heatmap(results: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let maps = build_heatmaps(File::open(results)?)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for map in &maps {
        let path = out_dir.join(format!("heatmap_{}.csv", map.estimator));
        map.write_csv(BufWriter::new(File::create(&path)?))?;
        written.push(path);
    }
    Ok(written)
}
