use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{BenchRecord, Method};
use crate::par::map_collect;

pub const GAIN_HEADER: &str = "n,p,batch_size,method_pair,mean_gain,std_gain,cells";

/// Gain of one method over FW4 in one grid cell, `time(method) / time(FW4)`
/// computed per seed and then averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainRow {
    pub n: usize,
    pub p: f64,
    pub batch_size: usize,
    pub method_pair: String,
    pub mean_gain: f64,
    /// Sample standard deviation; 0 with a single seed.
    pub std_gain: f64,
    /// Number of seeds that had both measurements.
    pub cells: usize,
}

/// Per-cell means over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub n: usize,
    pub p: f64,
    pub batch_size: usize,
    pub mean_seconds: BTreeMap<Method, f64>,
    pub mean_height: f64,
    pub mean_lcc_size: f64,
    /// Mean of `lcc_size / height` over seeds.
    pub mean_attenuation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainSummary {
    pub gains: Vec<GainRow>,
    pub cells: Vec<CellStats>,
    /// Human-readable notes about seeds lacking an FW4 or method record.
    pub warnings: Vec<String>,
}

impl GainSummary {
    pub fn gain(&self, n: usize, p: f64, batch_size: usize, method: Method) -> Option<&GainRow> {
        let pair = pair_name(method);
        self.gains
            .iter()
            .find(|g| g.n == n && g.p.to_bits() == p.to_bits() && g.batch_size == batch_size && g.method_pair == pair)
    }
}

fn pair_name(method: Method) -> String {
    format!("{}/{}", method.tag(), Method::FW4.tag())
}

type CellKey = (usize, u64, usize);

fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

struct CellSummary {
    gains: Vec<GainRow>,
    stats: CellStats,
    warnings: Vec<String>,
}

fn summarize_cell(key: CellKey, records: Vec<&BenchRecord>, methods: &[Method]) -> CellSummary {
    let (n, p_bits, batch_size) = key;
    let p = f64::from_bits(p_bits);
    // per seed, per method; a duplicate key keeps the last record
    let mut by_seed: BTreeMap<u64, BTreeMap<Method, &BenchRecord>> = BTreeMap::new();
    for r in &records {
        by_seed.entry(r.seed).or_default().insert(r.method, r);
    }
    let mut warnings = Vec::new();
    let mut gains = Vec::new();
    if records.iter().any(|r| r.method == Method::FW4) {
        for &method in methods {
            let mut ratios = Vec::new();
            for (seed, row) in &by_seed {
                match (row.get(&method), row.get(&Method::FW4)) {
                    (Some(m), Some(f)) => ratios.push(m.elapsed_seconds / f.elapsed_seconds),
                    (None, _) => {
                        warnings.push(format!("n={n} p={p} batch={batch_size} seed={seed}: no {method} record"))
                    }
                    (_, None) => warnings.push(format!("n={n} p={p} batch={batch_size} seed={seed}: no FW4 record")),
                }
            }
            if ratios.is_empty() {
                continue;
            }
            let (mean_gain, std_gain) = mean_std(&ratios);
            gains.push(GainRow {
                n,
                p,
                batch_size,
                method_pair: pair_name(method),
                mean_gain,
                std_gain,
                cells: ratios.len(),
            });
        }
        warnings.dedup();
    } else {
        warnings.push(format!("n={n} p={p} batch={batch_size}: no FW4 records, gains omitted"));
    }

    let mut mean_seconds = BTreeMap::new();
    for &method in methods {
        let times: Vec<f64> = records.iter().filter(|r| r.method == method).map(|r| r.elapsed_seconds).collect();
        if !times.is_empty() {
            mean_seconds.insert(method, mean_std(&times).0);
        }
    }
    // graph statistics are identical across methods of one seed
    let graphs: Vec<&BenchRecord> = by_seed.values().filter_map(|row| row.values().next().copied()).collect();
    let k = graphs.len() as f64;
    let stats = CellStats {
        n,
        p,
        batch_size,
        mean_seconds,
        mean_height: graphs.iter().map(|r| r.height as f64).sum::<f64>() / k,
        mean_lcc_size: graphs.iter().map(|r| r.lcc_size as f64).sum::<f64>() / k,
        mean_attenuation: graphs.iter().map(|r| r.attenuation()).sum::<f64>() / k,
    };
    CellSummary { gains, stats, warnings }
}

/// Aggregate raw records into gains relative to FW4 and per-cell means.
/// Seeds missing either side of a ratio are left out of that ratio and
/// reported in `warnings`.
pub fn summarize(records: &[BenchRecord]) -> GainSummary {
    let mut cells: BTreeMap<CellKey, Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.n, r.p.to_bits(), r.batch_size)).or_default().push(r);
    }
    let mut keyed: Vec<(CellKey, Vec<&BenchRecord>)> = cells.into_iter().collect();
    // numeric order of p rather than bit order
    keyed.sort_by(|a, b| {
        (a.0 .0, f64::from_bits(a.0 .1), a.0 .2)
            .partial_cmp(&(b.0 .0, f64::from_bits(b.0 .1), b.0 .2))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let per_cell = map_collect(keyed, |(key, recs)| summarize_cell(key, recs, &methods));
    let mut summary = GainSummary::default();
    for m in Method::ALL.into_iter().filter(|m| !methods.contains(m)) {
        let w = format!("no {m} records; {m}/FW4 gains omitted");
        log::warn!("{w}");
        summary.warnings.push(w);
    }
    for cell in per_cell {
        for w in &cell.warnings {
            log::warn!("{w}");
        }
        summary.gains.extend(cell.gains);
        summary.cells.push(cell.stats);
        summary.warnings.extend(cell.warnings);
    }
    summary
}

pub fn gain_rows_to_csv(rows: &[GainRow]) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        return Ok(format!("{GAIN_HEADER}\n"));
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Plain-text tables: mean times, heights and attenuation per cell, then
/// the gain table.
pub fn render_report(summary: &GainSummary) -> String {
    let mut out = String::new();
    let methods: Vec<Method> = {
        let mut m: Vec<Method> = summary.cells.iter().flat_map(|c| c.mean_seconds.keys().copied()).collect();
        m.sort();
        m.dedup();
        m
    };
    let _ = write!(out, "{:>6} {:>6} {:>6} {:>8} {:>8} {:>8}", "n", "p", "batch", "height", "lcc", "atten");
    for m in &methods {
        let _ = write!(out, " {:>12}", format!("{m} (ms)"));
    }
    out.push('\n');
    for c in &summary.cells {
        let _ = write!(
            out,
            "{:>6} {:>6.2} {:>6} {:>8.2} {:>8.2} {:>8.3}",
            c.n, c.p, c.batch_size, c.mean_height, c.mean_lcc_size, c.mean_attenuation
        );
        for m in &methods {
            match c.mean_seconds.get(m) {
                Some(s) => {
                    let _ = write!(out, " {:>12.3}", s * 1e3);
                }
                None => {
                    let _ = write!(out, " {:>12}", "-");
                }
            }
        }
        out.push('\n');
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>6}",
        "n", "p", "batch", "pair", "mean", "std", "seeds"
    );
    for g in &summary.gains {
        let _ = writeln!(
            out,
            "{:>6} {:>6.2} {:>6} {:>10} {:>10.4} {:>10.4} {:>6}",
            g.n, g.p, g.batch_size, g.method_pair, g.mean_gain, g.std_gain, g.cells
        );
    }
    for w in &summary.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}
