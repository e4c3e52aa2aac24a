//! Run configuration and run directories.
//!
//! A config is a TOML file; every key is optional and unknown keys are rejected:
//!
//! ```toml
//! seed = 0            # master seed, split per consumer by `seed::derive`
//! workers = 0         # SDE worker threads, 0 = available cores
//!
//! [grid]
//! n = 32              # spatial points per axis (power of two)
//! n_t = 64            # time intervals on [0, schedule.t_end]
//!
//! [schedule]          # see `convexint::Schedule`
//! lambda0 = 0.5
//! a = 2.0
//!
//! [iteration]
//! q_max = 2           # states 0..=q_max
//! tol_er = 1e-6
//! estimate_bound = 10.0
//! cfl = 0.5
//! max_substeps = 100000
//! dump_fields = true
//!
//! [ensemble]
//! members = 32
//! first_stage = 0
//! member_tol = 0.25   # relative ER residual of scaled members; omit to skip
//! tol_sep = 1e-9      # single-linkage separation, relative to the largest path norm
//! distribution = { kind = "uniform01" }
//!
//! [noise]
//! nu_t = 1.0
//! shells = [4, 8]
//! k0 = [2, 0, 0]
//! [noise.sde]         # see `noiselab::SdeConfig`
//!
//! [certify]
//! threshold = 1e-5
//! [certify.battery]   # see `certifier::BatterySpec`
//! ```
//!
//! A run directory holds `manifest.json` (`{config, versions, checksums,
//! timings}`), CSV outputs with a header row, and for ladder runs one
//! `stage_<q>/` directory of field dumps per state.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::certifier::BatterySpec;
use crate::convexint::{self, IterationConfig, IterationState, Schedule, StageDiagnostics};
use crate::error::{Error, Result};
use crate::fields::io::{read_series, sha256_hex, write_series};
use crate::fields::{Grid, GridField, GridSpec, ScalarField, SymTensorField, VectorField};
use crate::noiselab::{self, SdeConfig, ThetaProfile};
use crate::stochastic::{self, AlphaDistribution};
use crate::transport::FlowOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub n_t: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 32, n_t: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterationBlock {
    pub q_max: usize,
    pub tol_er: f64,
    pub estimate_bound: f64,
    pub strict: bool,
    pub cfl: f64,
    pub max_substeps: usize,
    pub dump_fields: bool,
}

impl Default for IterationBlock {
    fn default() -> Self {
        IterationBlock {
            q_max: 2,
            tol_er: 1e-6,
            estimate_bound: 10.0,
            strict: false,
            cfl: 0.5,
            max_substeps: 100_000,
            dump_fields: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleBlock {
    pub members: usize,
    pub first_stage: usize,
    pub member_tol: Option<f64>,
    pub tol_sep: f64,
    pub distribution: AlphaDistribution,
}

impl Default for EnsembleBlock {
    fn default() -> Self {
        EnsembleBlock {
            members: 32,
            first_stage: 0,
            member_tol: Some(0.25),
            tol_sep: 1e-9,
            distribution: AlphaDistribution::Uniform01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBlock {
    pub nu_t: f64,
    /// Shell parameters `N` for the quadratic form and the eddy fit.
    pub shells: Vec<usize>,
    /// Grid of the quadratic-form evaluation.
    pub quadform_n: usize,
    /// Grid and radius of the deterministic eddy-fit battery.
    pub fit_n: usize,
    pub fit_kmax: f64,
    /// Shell used by the SDE.
    pub sde_shell: usize,
    /// Wavevector of the single-mode initial vorticity.
    pub k0: [i64; 3],
    pub sde: SdeConfig,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        NoiseBlock {
            nu_t: 1.0,
            shells: vec![4, 8],
            quadform_n: 32,
            fit_n: 16,
            fit_kmax: 2.0,
            sde_shell: 4,
            k0: [2, 0, 0],
            sde: SdeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyBlock {
    pub threshold: f64,
    pub battery: BatterySpec,
}

impl Default for CertifyBlock {
    fn default() -> Self {
        CertifyBlock {
            threshold: 1e-5,
            battery: BatterySpec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub grid: GridConfig,
    pub schedule: Schedule,
    pub iteration: IterationBlock,
    pub ensemble: EnsembleBlock,
    pub noise: NoiseBlock,
    pub certify: CertifyBlock,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.n, self.schedule.t_end, self.grid.n_t)
    }

    pub fn iteration_config(&self) -> Result<IterationConfig> {
        let mut c = IterationConfig::new(self.schedule.clone())?;
        c.tol_er = self.iteration.tol_er;
        c.strict = self.iteration.strict;
        c.flow = FlowOptions {
            cfl: self.iteration.cfl,
            max_substeps: self.iteration.max_substeps,
            ..FlowOptions::default()
        };
        Ok(c)
    }

    pub fn workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            self.workers
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub versions: BTreeMap<String, String>,
    /// SHA-256 of every file written, keyed by path relative to the run directory.
    pub checksums: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

/// Accumulates the files of one run directory.
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        let mut versions = BTreeMap::new();
        versions.insert("eulerlab".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("manifest_format".into(), "1".into());
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest: Manifest {
                command: command.into(),
                config: config.clone(),
                versions,
                ..Default::default()
            },
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(&p, text)?;
        self.manifest.checksums.insert(rel.into(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write_text(rel, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Field dump plus sidecar; both are checksummed.
    pub fn write_series<F: crate::fields::GridField>(&mut self, rel: &str, s: &crate::fields::TimeSeries<F>) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d)?;
        }
        let sum = write_series(&p, s)?;
        self.manifest.checksums.insert(rel.into(), sum);
        let side = Path::new(rel).with_extension("json");
        let side_text = fs::read(self.root.join(&side))?;
        self.manifest
            .checksums
            .insert(side.to_string_lossy().into_owned(), sha256_hex(&side_text));
        Ok(())
    }

    pub fn time(&mut self, key: &str, start: Instant) {
        self.manifest.timings.insert(key.into(), start.elapsed().as_secs_f64());
    }

    pub fn finish(self) -> Result<Manifest> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(root.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Shortest round-trip representation; empty for `None`.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// Simple CSV writer: header plus rows of preformatted cells.
pub fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

/// Parses a CSV produced by `csv` into a header and rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Dump("empty csv".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

pub const DIAGNOSTICS_HEADER: [&str; 21] = [
    "stage",
    "er_residual",
    "r_sup",
    "r_l2",
    "delta_next",
    "a1",
    "a2",
    "a3",
    "v_sup",
    "v_l2",
    "w_sup",
    "w_c1",
    "w1_sup",
    "w2_sup",
    "amp_sup",
    "div_before_projection",
    "projection_displacement",
    "active_labels",
    "energy_zero_until",
    "term_transport",
    "term_oscillation",
];

/// Verdicts of a ladder run.
#[derive(Clone, Debug, Serialize)]
pub struct LadderSummary {
    pub stages: usize,
    pub er_max: f64,
    pub er_pass: bool,
    pub r_sup: Vec<f64>,
    pub r_strictly_decreasing: bool,
    pub estimates: convexint::EstimateReport,
    pub initial_zero: bool,
    /// `t_onset` minus one time slice.
    pub onset_limit: f64,
    pub energy_zero_until: Vec<f64>,
    /// Energy vanishes up to `onset_limit` on every stage and is positive somewhere on every later stage.
    pub onset_pass: bool,
    pub cauchy: Vec<convexint::CauchyRow>,
    pub pass: bool,
}

/// `t_onset - dt`: the energy may start one slice early through the time resolution.
pub fn onset_limit(s: &Schedule, dt: f64) -> f64 {
    s.t_onset - dt
}

pub fn summarize(states: &[IterationState], cfg: &RunConfig) -> LadderSummary {
    let s = &cfg.schedule;
    let er_max = states.iter().map(|x| x.diag.er_residual).fold(0.0, f64::max);
    let r_sup: Vec<f64> = states.iter().map(|x| x.diag.r_sup).collect();
    let estimates = convexint::check_estimates(states, s, cfg.iteration.estimate_bound);
    let initial_zero = states.iter().all(|x| x.v.slices[0].max_abs() == 0.0);
    let (dt, t_end) = states.first().map_or((0.0, 0.0), |x| (x.v.dt(), x.v.t_end));
    let limit = onset_limit(s, dt);
    let energy_zero_until: Vec<f64> = states.iter().map(|x| x.diag.energy_zero_until).collect();
    // stage 0 vanishes identically (zero_until = T)
    let onset_pass = energy_zero_until.iter().all(|&z| z >= limit)
        && energy_zero_until.iter().skip(1).all(|&z| z < t_end);
    let er_pass = er_max <= cfg.iteration.tol_er;
    let r_strictly_decreasing = r_sup.windows(2).all(|w| w[1] < w[0]);
    LadderSummary {
        stages: states.len(),
        er_max,
        er_pass,
        pass: er_pass && r_strictly_decreasing && estimates.pass && initial_zero && onset_pass,
        r_sup,
        r_strictly_decreasing,
        estimates,
        initial_zero,
        onset_limit: limit,
        energy_zero_until,
        onset_pass,
        cauchy: convexint::cauchy_table(states, s),
    }
}

pub fn diagnostics_csv(states: &[IterationState], cfg: &RunConfig) -> String {
    let est = convexint::check_estimates(states, &cfg.schedule, cfg.iteration.estimate_bound);
    let rows: Vec<Vec<String>> = states
        .iter()
        .zip(&est.rows)
        .map(|(st, e)| {
            let d: &StageDiagnostics = &st.diag;
            vec![
                d.stage.to_string(),
                fmt(d.er_residual),
                fmt(d.r_sup),
                fmt(d.r_l2),
                fmt(cfg.schedule.delta(st.q + 1)),
                fmt_opt(e.a1),
                fmt_opt(e.a2),
                fmt(e.a3),
                fmt(d.v_sup),
                fmt(d.v_l2),
                fmt(d.w_sup),
                fmt(d.w_c1),
                fmt(d.w1_sup),
                fmt(d.w2_sup),
                fmt(d.amp_sup),
                fmt(d.div_before_projection),
                fmt(d.projection_displacement),
                d.active_labels.to_string(),
                fmt(d.energy_zero_until),
                fmt(d.term_transport),
                fmt(d.term_oscillation),
            ]
        })
        .collect();
    csv(&DIAGNOSTICS_HEADER, &rows)
}

pub fn energy_csv(states: &[IterationState]) -> String {
    let mut rows = Vec::new();
    for st in states {
        for (j, e) in convexint::energy_profile(&st.v).iter().enumerate() {
            rows.push(vec![st.q.to_string(), fmt(st.v.time(j)), fmt(*e)]);
        }
    }
    csv(&["stage", "t", "energy"], &rows)
}

/// `ci run`: the ladder, its dumps, diagnostics and verdicts.
pub fn ci_run(cfg: &RunConfig, dir: &Path) -> Result<(Vec<IterationState>, LadderSummary)> {
    let spec = cfg.grid_spec()?;
    let icfg = cfg.iteration_config()?;
    let mut rd = RunDir::create(dir, "ci run", cfg)?;
    rd.write_json("direction_sets.json", &icfg.sets.describe())?;
    let mut clock = Instant::now();
    let mut timings = Vec::new();
    let states = convexint::run_with(&icfg, &spec, cfg.iteration.q_max, |s| {
        timings.push((s.q, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    })?;
    for (q, t) in timings {
        rd.manifest.timings.insert(format!("stage_{q}"), t);
    }
    if cfg.iteration.dump_fields {
        for st in &states {
            rd.write_series(&format!("stage_{}/v.bin", st.q), &st.v)?;
            rd.write_series(&format!("stage_{}/p.bin", st.q), &st.p)?;
            rd.write_series(&format!("stage_{}/r.bin", st.q), &st.r)?;
        }
    }
    rd.write_text("diagnostics.csv", &diagnostics_csv(&states, cfg))?;
    rd.write_text("energy_profile.csv", &energy_csv(&states))?;
    let summary = summarize(&states, cfg);
    let cauchy: Vec<Vec<String>> = summary
        .cauchy
        .iter()
        .map(|c| vec![c.q.to_string(), fmt(c.increment), fmt(c.delta_half)])
        .collect();
    rd.write_text("cauchy.csv", &csv(&["stage", "increment", "delta_half"], &cauchy))?;
    rd.write_json("summary.json", &summary)?;
    rd.finish()?;
    Ok((states, summary))
}

/// Reloads the states dumped by `ci run`, diagnostics from `diagnostics.csv`.
pub fn load_states(dir: &Path) -> Result<Vec<IterationState>> {
    let manifest = read_manifest(dir)?;
    let (header, rows) = parse_csv(&fs::read_to_string(dir.join("diagnostics.csv"))?)?;
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| Error::Dump(format!("missing column {name}")));
    let (c_stage, c_er, c_rsup, c_zero) = (col("stage")?, col("er_residual")?, col("r_sup")?, col("energy_zero_until")?);
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Dump(format!("{s}: {e}")));
    let mut states = Vec::new();
    for row in rows {
        let q: usize = row[c_stage].parse().map_err(|_| Error::Dump("bad stage".into()))?;
        let base = dir.join(format!("stage_{q}"));
        if !base.join("v.bin").exists() {
            return Err(Error::Dump(format!(
                "run {} has no field dumps (dump_fields = {})",
                dir.display(),
                manifest.config.iteration.dump_fields
            )));
        }
        let v = read_series::<VectorField>(&base.join("v.bin"))?;
        let p = read_series::<ScalarField>(&base.join("p.bin"))?;
        let r = read_series::<SymTensorField>(&base.join("r.bin"))?;
        let diag = StageDiagnostics {
            stage: q,
            er_residual: num(&row[c_er])?,
            r_sup: num(&row[c_rsup])?,
            energy_zero_until: num(&row[c_zero])?,
            ..Default::default()
        };
        states.push(IterationState { q, v, p, r, diag });
    }
    Ok(states)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub files_checked: usize,
    pub stages_checked: usize,
    pub problems: Vec<String>,
    pub pass: bool,
}

/// `ci verify`: checksums of every manifest entry, then the recorded residuals
/// and norms recomputed from the dumps.
pub fn ci_verify(dir: &Path) -> Result<VerifyReport> {
    let manifest = read_manifest(dir)?;
    let mut problems = Vec::new();
    for (rel, sum) in &manifest.checksums {
        match fs::read(dir.join(rel)) {
            Ok(bytes) if sha256_hex(&bytes) == *sum => {}
            Ok(_) => problems.push(format!("checksum mismatch: {rel}")),
            Err(e) => problems.push(format!("{rel}: {e}")),
        }
    }
    let mut stages_checked = 0;
    if manifest.config.iteration.dump_fields && problems.is_empty() {
        let tol = manifest.config.iteration.tol_er;
        for st in load_states(dir)? {
            let er = convexint::residual_er(&st.v, &st.p, &st.r, 0.0);
            let rs = st.r.sup();
            if er != st.diag.er_residual {
                problems.push(format!("stage {}: residual {er:e} recorded as {:e}", st.q, st.diag.er_residual));
            }
            if er > tol {
                problems.push(format!("stage {}: residual {er:e} above {tol:e}", st.q));
            }
            if rs != st.diag.r_sup {
                problems.push(format!("stage {}: |R| sup {rs:e} recorded as {:e}", st.q, st.diag.r_sup));
            }
            if st.v.slices[0].max_abs() != 0.0 {
                problems.push(format!("stage {}: v(0) is not zero", st.q));
            }
            stages_checked += 1;
        }
    }
    Ok(VerifyReport {
        files_checked: manifest.checksums.len(),
        stages_checked,
        pass: problems.is_empty(),
        problems,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleSummary {
    pub support: stochastic::SupportReport,
    pub law: stochastic::LawConvergence,
    pub members: usize,
    pub distinct_alphas: usize,
    pub members_valid: bool,
    pub largest_norm: f64,
}

fn matrix_csv(m: &[Vec<f64>]) -> String {
    let header: Vec<String> = std::iter::once("member".to_string())
        .chain((0..m.len()).map(|j| format!("m{j}")))
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| std::iter::once(i.to_string()).chain(r.iter().map(|x| fmt(*x))).collect())
        .collect();
    csv(&h, &rows)
}

/// `ensemble run`: members over the given states and their diagnostics.
pub fn ensemble_run(states: &[IterationState], cfg: &RunConfig, dir: &Path) -> Result<(stochastic::Ensemble, EnsembleSummary)> {
    let e = &cfg.ensemble;
    let mut rd = RunDir::create(dir, "ensemble run", cfg)?;
    let start = Instant::now();
    let ens = stochastic::sample_ensemble(states, e.first_stage, e.distribution, e.members, cfg.seed, e.member_tol)?;
    rd.time("ensemble", start);
    let largest_norm = ens.norms.last().map(|n| n.iter().copied().fold(0.0, f64::max)).unwrap_or(0.0);
    let support = stochastic::support_diagnostic(&ens, e.tol_sep * largest_norm);
    let law = stochastic::law_convergence(&ens);
    for (s, d) in ens.stages.iter().zip(&ens.distances) {
        rd.write_text(&format!("distances_stage_{s}.csv"), &matrix_csv(d))?;
    }
    for (s, d) in ens.stages.iter().zip(&ens.to_limit) {
        rd.write_text(&format!("to_limit_stage_{s}.csv"), &matrix_csv(d))?;
    }
    let law_rows: Vec<Vec<String>> = law
        .rows
        .iter()
        .map(|r| vec![r.stage.to_string(), fmt(r.energy_distance), fmt(r.spread)])
        .collect();
    rd.write_text("law.csv", &csv(&["stage", "energy_distance", "spread"], &law_rows))?;
    let dt = cfg.schedule.t_end / cfg.grid.n_t as f64;
    let mut path_rows = Vec::new();
    for (i, norms) in ens.slice_norms.iter().enumerate() {
        for (j, x) in norms.iter().enumerate() {
            path_rows.push(vec![i.to_string(), fmt(ens.alphas[i]), fmt(j as f64 * dt), fmt(*x)]);
        }
    }
    rd.write_text("ensemble_paths.csv", &csv(&["member", "alpha", "t", "l2"], &path_rows))?;
    for (i, a) in ens.alphas.iter().enumerate() {
        let checks: Vec<&stochastic::SampleCheck> = ens.checks.iter().filter(|c| c.alpha == *a).collect();
        let member = serde_json::json!({
            "member": i,
            "alpha": a,
            "seed": crate::seed::derive(cfg.seed, crate::seed::streams::ENSEMBLE_MEMBER + i as u64),
            "norms": ens.norms.iter().map(|n| n[i]).collect::<Vec<_>>(),
            "stages": ens.stages,
            "checks": checks,
        });
        rd.write_json(&format!("members/member_{i:03}.json"), &member)?;
    }
    let mut distinct = ens.alphas.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let summary = EnsembleSummary {
        members: ens.alphas.len(),
        distinct_alphas: distinct.len(),
        members_valid: ens.checks.iter().all(|c| c.pass),
        largest_norm,
        support,
        law,
    };
    rd.write_json("clusters.json", &summary.support)?;
    rd.write_json("summary.json", &summary)?;
    rd.finish()?;
    Ok((ens, summary))
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadformRow {
    pub shell: usize,
    pub c: f64,
    pub trace: f64,
    pub trace_closed_form: f64,
    pub x_variation: f64,
    pub anisotropy: f64,
    pub quartic_anisotropy: f64,
}

pub fn noise_quadform(cfg: &RunConfig, dir: &Path) -> Result<Vec<QuadformRow>> {
    let mut rd = RunDir::create(dir, "noise quadform", cfg)?;
    let grid = Grid::new(cfg.noise.quadform_n)?;
    let mut out = Vec::new();
    for &n in &cfg.noise.shells {
        let start = Instant::now();
        let q = noiselab::quadratic_form(&ThetaProfile::new(cfg.noise.nu_t, n)?, grid);
        rd.time(&format!("shell_{n}"), start);
        out.push(QuadformRow {
            shell: n,
            c: q.c,
            trace: q.trace,
            trace_closed_form: q.trace_closed_form,
            x_variation: q.x_variation,
            anisotropy: q.anisotropy,
            quartic_anisotropy: q.quartic_anisotropy,
        });
    }
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|r| {
            vec![
                r.shell.to_string(),
                fmt(r.c),
                fmt(r.trace),
                fmt(r.trace_closed_form),
                fmt(r.x_variation),
                fmt(r.anisotropy),
                fmt(r.quartic_anisotropy),
            ]
        })
        .collect();
    rd.write_text(
        "quadform.csv",
        &csv(&["shell", "c", "trace", "trace_closed_form", "x_variation", "anisotropy", "quartic_anisotropy"], &rows),
    )?;
    rd.finish()?;
    Ok(out)
}

pub fn eddy_fits(cfg: &RunConfig) -> Result<Vec<noiselab::EddyFit>> {
    let battery = noiselab::low_mode_battery(Grid::new(cfg.noise.fit_n)?, cfg.noise.fit_kmax);
    cfg.noise
        .shells
        .iter()
        .map(|&n| noiselab::eddy_viscosity_fit(&ThetaProfile::new(cfg.noise.nu_t, n)?, &battery))
        .collect()
}

pub fn noise_corrector(cfg: &RunConfig, dir: &Path) -> Result<Vec<noiselab::EddyFit>> {
    let mut rd = RunDir::create(dir, "noise corrector", cfg)?;
    let start = Instant::now();
    let fits = eddy_fits(cfg)?;
    rd.time("fit", start);
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|f| {
            vec![
                f.n.to_string(),
                fmt(f.nu_t),
                fmt(f.kappa_eff),
                fmt_opt(f.ratio),
                fmt(f.residual),
                f.fields.to_string(),
            ]
        })
        .collect();
    rd.write_text("eddy_fit.csv", &csv(&["shell", "nu_t", "kappa_eff", "ratio", "residual", "fields"], &rows))?;
    rd.finish()?;
    Ok(fits)
}

/// Single-mode divergence-free initial vorticity `a_{k0,1} cos(k0·x)`.
pub fn single_mode(grid: Grid, k0: [i64; 3]) -> VectorField {
    let a = noiselab::completion(k0)[0];
    let s = grid.period.scale();
    VectorField::from_fn(grid, |x| {
        let c = (s * (k0[0] as f64 * x[0] + k0[1] as f64 * x[1] + k0[2] as f64 * x[2])).cos();
        [a[0] * c, a[1] * c, a[2] * c]
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SdeSummary {
    pub shell: usize,
    pub nu: f64,
    pub nu_t: f64,
    pub kappa_eff: f64,
    pub k0: [i64; 3],
    /// `-2 (ν + κ_eff) |k0|²`
    pub predicted_slope: f64,
    pub mean_log_slope: f64,
    pub relative_slope_error: f64,
    pub stats: noiselab::SdeStats,
}

pub fn sde_experiment(cfg: &RunConfig) -> Result<SdeSummary> {
    let nb = &cfg.noise;
    let mut sde = nb.sde.clone();
    if sde.seed == 0 {
        sde.seed = cfg.seed;
    }
    let profile = ThetaProfile::new(nb.nu_t, nb.sde_shell)?;
    let battery = noiselab::low_mode_battery(Grid::new(nb.fit_n)?, nb.fit_kmax);
    let kappa = noiselab::eddy_viscosity_fit(&profile, &battery)?.kappa_eff;
    let n = (2 * nb.k0.iter().map(|k| k.unsigned_abs() as usize).max().unwrap_or(1) + 2).next_power_of_two().max(8);
    let w0 = single_mode(Grid::new(n)?, nb.k0);
    let stats = noiselab::simulate_transport_sde_parallel(&w0, &profile, &sde, cfg.workers())?;
    let k2 = nb.k0.iter().map(|k| (k * k) as f64).sum::<f64>();
    let predicted = -2.0 * (sde.nu + kappa) * k2;
    Ok(SdeSummary {
        shell: nb.sde_shell,
        nu: sde.nu,
        nu_t: nb.nu_t,
        kappa_eff: kappa,
        k0: nb.k0,
        predicted_slope: predicted,
        mean_log_slope: stats.mean_log_slope,
        relative_slope_error: ((stats.mean_log_slope - predicted) / predicted).abs(),
        stats,
    })
}

pub fn sde_csv(s: &noiselab::SdeStats) -> String {
    let mut header: Vec<String> = [
        "t",
        "mean_energy",
        "std_energy",
        "mean_log_energy",
        "mean_field_energy",
        "mean_hneg",
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    if let Some(p) = &s.per_path {
        header.extend((0..p.len()).map(|i| format!("path_{i}")));
    }
    let rows: Vec<Vec<String>> = (0..s.times.len())
        .map(|r| {
            let mut row = vec![
                fmt(s.times[r]),
                fmt(s.mean_energy[r]),
                fmt(s.std_energy[r]),
                fmt(s.mean_log_energy[r]),
                fmt(s.mean_field_energy[r]),
                fmt(s.mean_hneg[r]),
            ];
            if let Some(p) = &s.per_path {
                row.extend(p.iter().map(|e| fmt(e[r])));
            }
            row
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    csv(&h, &rows)
}

pub fn noise_simulate(cfg: &RunConfig, dir: &Path) -> Result<SdeSummary> {
    let mut rd = RunDir::create(dir, "noise simulate", cfg)?;
    let start = Instant::now();
    let s = sde_experiment(cfg)?;
    rd.time("simulate", start);
    rd.write_text("sde.csv", &sde_csv(&s.stats))?;
    rd.write_json("sde.json", &s)?;
    rd.finish()?;
    Ok(s)
}
