//! `(realization, L_E, t)` sweeps of the fluctuation measure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{spec_from_rows, ExperimentConfig, Family, StatePolicy};
use super::seeds::{child_seed, disorder_seed, state_seed};
use crate::circuits::FloquetOperator;
use crate::error::{Error, Result};
use crate::lbit::{build_lbit, default_max_order, evolve_lbit, z_delta_closed_form, LBitHamiltonian};
use crate::ppe::{build_ppe, delta, ghs_distance};
use crate::state::{make_product_state, random_product_state, ProductStateSpec, PureState, Tripartition};

pub const ROWS_FILE: &str = "delta_rows.csv";
pub const AGGREGATE_FILE: &str = "delta_aggregate.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESUME_FILE: &str = "RESUME.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub family: String,
    pub seed: u64,
    pub l_r: usize,
    pub l_e: usize,
    pub l_s: usize,
    pub t: f64,
    pub delta: f64,
    pub delta_ghs: Option<f64>,
    pub realization: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub l_r: usize,
    pub l_e: usize,
    pub l_s: usize,
    pub t: f64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ghs_mean: Option<f64>,
    pub ghs_stderr: Option<f64>,
}

/// One `(L_E, L_S, realization)` work item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub l_e: usize,
    pub l_s: usize,
    pub realization: usize,
}

#[derive(Clone, Debug)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
    pub completed: Vec<Cell>,
    pub pending: Vec<Cell>,
}

impl DeltaTable {
    pub fn is_complete(&self) -> bool {
        self.pending.is_empty()
    }
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &l_e in &cfg.geometry.l_e {
        for &l_s in &cfg.geometry.l_s {
            for realization in 0..cfg.run.realizations {
                out.push(Cell { l_e, l_s, realization });
            }
        }
    }
    out
}

/// Initial product state of a cell.
pub fn initial_spec(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<ProductStateSpec> {
    match cfg.state.policy {
        StatePolicy::Plus => Ok(ProductStateSpec::plus(n)),
        StatePolicy::Haar => Ok(random_product_state(n, state_seed(seed))),
        StatePolicy::Explicit => spec_from_rows(cfg.state.amplitudes.as_deref().unwrap_or(&[])),
    }
}

pub fn cell_seed(cfg: &ExperimentConfig, cell: &Cell) -> u64 {
    child_seed(cfg.run.seed, cell.realization as u64, cell.l_e as u64, cfg.time.id)
}

/// Calls `f(t, state)` at every grid point of one cell, evolving once.
pub fn visit_states(
    cfg: &ExperimentConfig,
    cell: &Cell,
    mut f: impl FnMut(f64, &PureState) -> Result<()>,
) -> Result<()> {
    let part = Tripartition::new(cfg.geometry.l_r, cell.l_e, cell.l_s)?;
    let n = part.n_sites();
    let seed = cell_seed(cfg, cell);
    let spec = initial_spec(cfg, n, seed)?;
    match cfg.run.family {
        Family::Ergodic | Family::Mbl | Family::Sdki => {
            let preset = cfg.preset_params().expect("Floquet family");
            let op = FloquetOperator::new(&preset.params(n, disorder_seed(seed)));
            let mut psi = make_product_state(&spec)?;
            let mut now = 0;
            for t in cfg.time.periods()? {
                while now < t {
                    op.apply(&mut psi)?;
                    now += 1;
                }
                f(t as f64, &psi)?;
            }
        }
        Family::LbitZ | Family::LbitX => {
            let h = lbit_for(cfg, n, seed)?;
            for t in cfg.time.points()? {
                f(t, &evolve_lbit(&spec, &h, t)?)?;
            }
        }
    }
    Ok(())
}

fn lbit_for(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<LBitHamiltonian> {
    let max_order = cfg.model.max_order.unwrap_or_else(|| default_max_order(n));
    build_lbit(n, cfg.xi(), max_order, disorder_seed(seed))
}

/// `(t, delta, delta_ghs)` for every grid point of one cell.
pub fn delta_series(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let part = Tripartition::new(cfg.geometry.l_r, cell.l_e, cell.l_s)?;
    let basis = cfg.measurement_basis(cell.l_s);
    let with_ghs = cfg.output.delta_ghs;
    let mut out = Vec::new();
    if cfg.run.family == Family::LbitZ && part.l_r == 1 && !with_ghs {
        // dephasing closed form, no statevector needed
        let seed = cell_seed(cfg, cell);
        let spec = initial_spec(cfg, part.n_sites(), seed)?;
        let h = lbit_for(cfg, part.n_sites(), seed)?;
        for t in cfg.time.points()? {
            out.push((t, z_delta_closed_form(&spec, &h, t, &part)?, None));
        }
        return Ok(out);
    }
    visit_states(cfg, cell, |t, psi| {
        let ens = build_ppe(psi, &part, &basis)?;
        let ghs = if with_ghs { Some(ghs_distance(&ens, &part)?) } else { None };
        out.push((t, delta(&ens)?, ghs));
        Ok(())
    })?;
    Ok(out)
}

fn rows_for(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<DeltaRow>> {
    let seed = cell_seed(cfg, cell);
    Ok(delta_series(cfg, cell)?
        .into_iter()
        .map(|(t, d, g)| DeltaRow {
            family: cfg.run.family.name().to_string(),
            seed,
            l_r: cfg.geometry.l_r,
            l_e: cell.l_e,
            l_s: cell.l_s,
            t,
            delta: d,
            delta_ghs: g,
            realization: cell.realization,
        })
        .collect())
}

pub(crate) fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs every cell not in `skip`. Cells not yet started when `cancel` is set
/// are reported as pending. Rows come back sorted by cell, then time.
pub fn run_delta_grid_with(
    cfg: &ExperimentConfig,
    skip: &BTreeSet<Cell>,
    cancel: Option<&AtomicBool>,
) -> Result<DeltaTable> {
    cfg.validate()?;
    let todo: Vec<Cell> = cells(cfg).into_iter().filter(|c| !skip.contains(c)).collect();
    let results: Vec<Option<Result<Vec<DeltaRow>>>> = with_pool(cfg.run.threads, || {
        todo.par_iter()
            .map(|cell| {
                if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                    None
                } else {
                    Some(rows_for(cfg, cell))
                }
            })
            .collect()
    })?;
    let mut table = DeltaTable { rows: Vec::new(), completed: Vec::new(), pending: Vec::new() };
    for (cell, res) in todo.into_iter().zip(results) {
        match res {
            Some(rows) => {
                table.rows.extend(rows?);
                table.completed.push(cell);
            }
            None => table.pending.push(cell),
        }
    }
    Ok(table)
}

pub fn run_delta_grid(cfg: &ExperimentConfig) -> Result<DeltaTable> {
    run_delta_grid_with(cfg, &BTreeSet::new(), None)
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    sum: f64,
    comp: f64,
    values: Vec<f64>,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        // Neumaier summation
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.n += 1;
        self.values.push(x);
    }

    fn mean_stderr(&self) -> (f64, f64) {
        let mean = (self.sum + self.comp) / self.n as f64;
        if self.n < 2 {
            return (mean, 0.0);
        }
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (self.n - 1) as f64;
        (mean, (var / self.n as f64).sqrt())
    }
}

/// Mean and standard error (sample std over `sqrt(N)`) per `(L_R, L_E, L_S, t)`.
pub fn aggregate(rows: &[DeltaRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, usize, usize, u64), (Accumulator, Accumulator)> = BTreeMap::new();
    for r in rows {
        let key = (r.l_r, r.l_e, r.l_s, r.t.to_bits());
        let entry = groups.entry(key).or_default();
        entry.0.push(r.delta);
        if let Some(g) = r.delta_ghs {
            entry.1.push(g);
        }
    }
    let mut out: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((l_r, l_e, l_s, t), (d, g))| {
            let (mean, stderr) = d.mean_stderr();
            let (ghs_mean, ghs_stderr) = if g.n > 0 {
                let (m, s) = g.mean_stderr();
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            AggregateRow { l_r, l_e, l_s, t: f64::from_bits(t), n: d.n, mean, stderr, ghs_mean, ghs_stderr }
        })
        .collect();
    out.sort_by(|a, b| (a.l_r, a.l_e, a.l_s).cmp(&(b.l_r, b.l_e, b.l_s)).then(a.t.total_cmp(&b.t)));
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    family: &'a str,
    master_seed: u64,
    config: &'a ExperimentConfig,
    cells: Vec<ManifestCell>,
}

#[derive(Serialize)]
struct ManifestCell {
    l_e: usize,
    l_s: usize,
    realization: usize,
    seed: u64,
}

pub fn write_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        family: cfg.run.family.name(),
        master_seed: cfg.run.seed,
        config: cfg,
        cells: cells(cfg)
            .iter()
            .map(|c| ManifestCell { l_e: c.l_e, l_s: c.l_s, realization: c.realization, seed: cell_seed(cfg, c) })
            .collect(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResumeMarker {
    pub completed: Vec<Cell>,
    pub pending: Vec<Cell>,
}

/// Runs the sweep into `dir`: raw rows, aggregates and a manifest. A resume
/// marker left by an interrupted run is honoured; an interrupted run writes
/// its finished rows and a new marker, then reports [`Error::Interrupted`].
pub fn execute_delta_grid(cfg: &ExperimentConfig, dir: &Path, cancel: Option<&AtomicBool>) -> Result<Vec<AggregateRow>> {
    fs::create_dir_all(dir)?;
    let marker_path = dir.join(RESUME_FILE);
    let (mut rows, skip) = if marker_path.exists() {
        let marker: ResumeMarker = serde_json::from_str(&fs::read_to_string(&marker_path)?)?;
        let previous: Vec<DeltaRow> = read_csv(&dir.join(ROWS_FILE))?;
        log::info!("resuming: {} cells already done", marker.completed.len());
        (previous, marker.completed.into_iter().collect())
    } else {
        (Vec::new(), BTreeSet::new())
    };
    let table = run_delta_grid_with(cfg, &skip, cancel)?;
    rows.extend(table.rows);
    rows.sort_by(|a, b| {
        (a.l_e, a.l_s, a.realization).cmp(&(b.l_e, b.l_s, b.realization)).then(a.t.total_cmp(&b.t))
    });
    write_csv(&dir.join(ROWS_FILE), &rows)?;
    if !table.pending.is_empty() {
        let mut completed: Vec<Cell> = skip.into_iter().collect();
        completed.extend(table.completed);
        completed.sort();
        let marker = ResumeMarker { completed, pending: table.pending };
        fs::write(&marker_path, serde_json::to_string_pretty(&marker)?)?;
        return Err(Error::Interrupted(marker_path.display().to_string()));
    }
    if marker_path.exists() {
        fs::remove_file(&marker_path)?;
    }
    let agg = aggregate(&rows);
    write_csv(&dir.join(AGGREGATE_FILE), &agg)?;
    write_manifest(cfg, dir)?;
    Ok(agg)
}

pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::TimeSection;

    fn small(family: Family) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(family);
        cfg.run.realizations = 3;
        cfg.run.seed = 5;
        cfg.geometry.l_e = vec![2, 4];
        cfg.geometry.l_s = vec![4];
        if family.is_floquet() {
            cfg.time = TimeSection::linear(0.0, 5.0, 1.0);
        } else {
            cfg.time = TimeSection::log(0.1, 1e4, 4);
        }
        cfg
    }

    #[test]
    fn ergodic_rows_respect_lightcone() {
        let table = run_delta_grid(&small(Family::Ergodic)).unwrap();
        assert!(table.is_complete());
        assert_eq!(table.rows.len(), 2 * 3 * 6);
        for r in &table.rows {
            if r.t <= (r.l_e / 2) as f64 {
                assert!(r.delta < 1e-10, "{r:?}");
            }
        }
    }

    #[test]
    fn lbit_closed_form_and_statevector_routes_agree() {
        let mut cfg = small(Family::LbitZ);
        let a = run_delta_grid(&cfg).unwrap();
        cfg.output.delta_ghs = true;
        let b = run_delta_grid(&cfg).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.delta - y.delta).abs() < 1e-10);
            assert!(y.delta_ghs.is_some());
        }
    }

    #[test]
    fn aggregate_stderr_on_fixture() {
        let mk = |realization, delta| DeltaRow {
            family: "ergodic".into(),
            seed: 0,
            l_r: 1,
            l_e: 2,
            l_s: 3,
            t: 1.0,
            delta,
            delta_ghs: None,
            realization,
        };
        let agg = aggregate(&[mk(0, 1.0), mk(1, 2.0), mk(2, 3.0), mk(3, 6.0)]);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].mean, 3.0);
        // sample std = sqrt(14/3)
        assert!((agg[0].stderr - (14.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cancelled_run_leaves_marker_and_resumes_identically() {
        let cfg = small(Family::Ergodic);
        let full_dir = tempfile::tempdir().unwrap();
        execute_delta_grid(&cfg, full_dir.path(), None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let flag = AtomicBool::new(true);
        let err = execute_delta_grid(&cfg, dir.path(), Some(&flag)).unwrap_err();
        assert!(matches!(err, Error::Interrupted(_)));
        assert!(dir.path().join(RESUME_FILE).exists());
        execute_delta_grid(&cfg, dir.path(), None).unwrap();
        assert!(!dir.path().join(RESUME_FILE).exists());
        for f in [ROWS_FILE, AGGREGATE_FILE, MANIFEST_FILE] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(full_dir.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
