//! PoP histograms along a time grid, pooled over realizations.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Family};
use super::grid::{cells, visit_states, with_pool, write_csv, write_manifest, Cell};
use crate::error::Result;
use crate::pop::{
    kl_divergence_common_grid, kl_masses, mellin_convolve, pop_from_probabilities, pop_ppe, smoothed,
    Binning, PoPHistogram, ReferenceDensity, EXACT_SAMPLE_CAP, KLD_SMOOTHING,
};
use crate::ppe::build_ppe;
use crate::state::{marginal_probabilities, PureState, Tripartition};

pub const KLD_FILE: &str = "kld.csv";
pub const SUMMARY_FILE: &str = "pop_summary.csv";
const DEFAULT_MAX_VALUE: f64 = 5.0;

/// Everything recorded at one `(L_E, L_S, t)`.
#[derive(Clone, Debug)]
pub struct PopSnapshot {
    pub l_e: usize,
    pub l_s: usize,
    pub t: f64,
    /// Pooled `PoP_PPE` per requested `z_R`.
    pub ppe: Vec<(usize, PoPHistogram)>,
    pub bstr_r: PoPHistogram,
    pub bstr_s: PoPHistogram,
    pub bstr_rs: PoPHistogram,
    pub mellin: PoPHistogram,
    /// Per-realization `KL(PoP_bstr(rho_RS) || PoP_bstr(rho_R) * PoP_bstr(rho_S))`.
    pub kld: Vec<f64>,
}

impl PopSnapshot {
    pub fn kld_mean(&self) -> f64 {
        self.kld.iter().sum::<f64>() / self.kld.len() as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KldRow {
    pub l_e: usize,
    pub l_s: usize,
    pub t: f64,
    pub n: usize,
    pub kld_mean: f64,
    pub kld_stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PopSummaryRow {
    pub l_e: usize,
    pub l_s: usize,
    pub t: f64,
    pub z_r: usize,
    pub mean: f64,
    pub variance: f64,
    pub delta_at_one: bool,
}

pub fn binning(cfg: &ExperimentConfig) -> Result<Binning> {
    Binning::linear(0.0, cfg.pop.max_value.unwrap_or(DEFAULT_MAX_VALUE), cfg.pop.bins)
}

/// Law expected for `PoP_PPE` once the lightcone has been crossed.
pub fn ppe_reference(cfg: &ExperimentConfig, l_e: usize) -> Option<ReferenceDensity> {
    match cfg.run.family {
        Family::Ergodic | Family::Mbl | Family::Sdki => Some(ReferenceDensity::Erlang { d_e: 1 << l_e }),
        _ => None,
    }
}

/// Law expected for the PoP of the `S` marginal.
pub fn s_reference(cfg: &ExperimentConfig, l_e: usize, t: f64) -> Option<ReferenceDensity> {
    match cfg.run.family {
        Family::Sdki => Some(ReferenceDensity::SdkiBeta { t: t as u32, l_re: (cfg.geometry.l_r + l_e) as u32 }),
        _ => None,
    }
}

fn kld(rs: &PoPHistogram, mellin: &PoPHistogram, d_rs: usize) -> Result<f64> {
    if d_rs <= EXACT_SAMPLE_CAP {
        kl_divergence_common_grid(rs, mellin)
    } else {
        Ok(kl_masses(&rs.masses(), &smoothed(&mellin.masses(), KLD_SMOOTHING)))
    }
}

fn snapshot_one(
    psi: &PureState,
    part: &Tripartition,
    cfg: &ExperimentConfig,
    z_rs: &[usize],
    grid: &Binning,
) -> Result<(Vec<PoPHistogram>, [PoPHistogram; 4], f64)> {
    let ens = build_ppe(psi, part, &cfg.measurement_basis(part.l_s))?;
    let ppe = z_rs.iter().map(|&z| pop_ppe(&ens, z, grid)).collect::<Result<Vec<_>>>()?;
    let r_sites: Vec<usize> = part.r_sites().collect();
    let s_sites: Vec<usize> = part.s_sites().collect();
    let rs_sites: Vec<usize> = r_sites.iter().chain(&s_sites).copied().collect();
    let r = pop_from_probabilities(&marginal_probabilities(psi, &r_sites)?, grid);
    let s = pop_from_probabilities(&marginal_probabilities(psi, &s_sites)?, grid);
    let rs = pop_from_probabilities(&marginal_probabilities(psi, &rs_sites)?, grid);
    let m = mellin_convolve(&r, &s, grid)?;
    let k = kld(&rs, &m, part.d_r() * part.d_s())?;
    Ok((ppe, [r, s, rs, m], k))
}

type CellSnapshots = Vec<(f64, Vec<PoPHistogram>, [PoPHistogram; 4], f64)>;

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, z_rs: &[usize], grid: &Binning) -> Result<CellSnapshots> {
    let part = Tripartition::new(cfg.geometry.l_r, cell.l_e, cell.l_s)?;
    let mut out = Vec::new();
    visit_states(cfg, cell, |t, psi| {
        let (ppe, b, k) = snapshot_one(psi, &part, cfg, z_rs, grid)?;
        out.push((t, ppe, b, k));
        Ok(())
    })?;
    Ok(out)
}

/// Runs every cell and pools histograms over realizations in realization
/// order, so the result does not depend on the worker count.
pub fn run_pop_experiment(cfg: &ExperimentConfig) -> Result<Vec<PopSnapshot>> {
    cfg.validate()?;
    let grid = binning(cfg)?;
    let z_rs: Vec<usize> = cfg.pop.z_r.clone().unwrap_or_else(|| (0..1usize << cfg.geometry.l_r).collect());
    let all = cells(cfg);
    let results: Vec<Result<CellSnapshots>> =
        with_pool(cfg.run.threads, || all.par_iter().map(|c| run_cell(cfg, c, &z_rs, &grid)).collect())?;
    let mut out: Vec<PopSnapshot> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut base = 0;
    for (cell, res) in all.iter().zip(results) {
        let series = res?;
        if current != Some((cell.l_e, cell.l_s)) {
            current = Some((cell.l_e, cell.l_s));
            base = out.len();
            for (t, ppe, [r, s, rs, m], k) in series {
                out.push(PopSnapshot {
                    l_e: cell.l_e,
                    l_s: cell.l_s,
                    t,
                    ppe: z_rs.iter().copied().zip(ppe).collect(),
                    bstr_r: r,
                    bstr_s: s,
                    bstr_rs: rs,
                    mellin: m,
                    kld: vec![k],
                });
            }
            continue;
        }
        for (i, (_, ppe, [r, s, rs, m], k)) in series.into_iter().enumerate() {
            let snap = &mut out[base + i];
            for ((_, pooled), h) in snap.ppe.iter_mut().zip(&ppe) {
                pooled.merge(h)?;
            }
            snap.bstr_r.merge(&r)?;
            snap.bstr_s.merge(&s)?;
            snap.bstr_rs.merge(&rs)?;
            snap.mellin.merge(&m)?;
            snap.kld.push(k);
        }
    }
    Ok(out)
}

fn write_hist(path: PathBuf, h: &PoPHistogram, reference: Option<ReferenceDensity>) -> Result<PathBuf> {
    let masses = reference.filter(|r| !r.is_delta()).map(|r| r.bin_masses(h.binning()));
    h.write_csv(BufWriter::new(File::create(&path)?), masses.as_deref())?;
    Ok(path)
}

/// Writes one CSV per histogram plus the KLd series and a summary table.
pub fn write_pop_outputs(cfg: &ExperimentConfig, snaps: &[PopSnapshot], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut kld_rows = Vec::new();
    let mut summary = Vec::new();
    for s in snaps {
        let tag = format!("le{}_ls{}_t{}", s.l_e, s.l_s, s.t);
        for (z, h) in &s.ppe {
            files.push(write_hist(dir.join(format!("pop_ppe_{tag}_z{z}.csv")), h, ppe_reference(cfg, s.l_e))?);
            summary.push(PopSummaryRow {
                l_e: s.l_e,
                l_s: s.l_s,
                t: s.t,
                z_r: *z,
                mean: h.mean(),
                variance: h.variance(),
                delta_at_one: h.is_delta_at_one(),
            });
        }
        files.push(write_hist(dir.join(format!("pop_bstr_r_{tag}.csv")), &s.bstr_r, None)?);
        files.push(write_hist(dir.join(format!("pop_bstr_s_{tag}.csv")), &s.bstr_s, s_reference(cfg, s.l_e, s.t))?);
        files.push(write_hist(dir.join(format!("pop_bstr_rs_{tag}.csv")), &s.bstr_rs, None)?);
        files.push(write_hist(dir.join(format!("mellin_{tag}.csv")), &s.mellin, None)?);
        let n = s.kld.len();
        let mean = s.kld_mean();
        let stderr = if n < 2 {
            0.0
        } else {
            let var = s.kld.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        kld_rows.push(KldRow { l_e: s.l_e, l_s: s.l_s, t: s.t, n, kld_mean: mean, kld_stderr: stderr });
    }
    write_csv(&dir.join(KLD_FILE), &kld_rows)?;
    write_csv(&dir.join(SUMMARY_FILE), &summary)?;
    write_manifest(cfg, dir)?;
    files.push(dir.join(KLD_FILE));
    files.push(dir.join(SUMMARY_FILE));
    Ok(files)
}

pub fn execute_pop(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PopSnapshot>> {
    let snaps = run_pop_experiment(cfg)?;
    write_pop_outputs(cfg, &snaps, dir)?;
    Ok(snaps)
}
