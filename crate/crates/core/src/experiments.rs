//! Study drivers: single-instance solves, the loss-versus-`p` sweep, the
//! comparison against the reference integrator, and plot data.
//!
//! Every CSV written here starts with a provenance comment line
//!
//! ```text
//! # config_sha256=<hex> checkpoint_sha256=<hex>
//! ```
//!
//! followed by a header row. Readers skip lines starting with `#`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{sha256_hex, Checkpoint};
use crate::error::{Error, Result};
use crate::network::TrunkBatch;
use crate::ode::DuffingParams;
use crate::oracle::{compare, integrate_duffing, IntegratorConfig};
use crate::perturbation::build_cascade;
use crate::reduction::FirstOrderSystem;
use crate::training::{stream_rng, uniform_grid, LossRecord, ParameterRanges, TrainConfig, STREAM_INSTANCES};
use crate::transfer::{
    assemble_m, duffing_residual_loss_on, solve_cascade_prepared, solve_cascade_with, FrozenTrunk, TransferSolution,
    TRANSFER_GRID_POINTS,
};

/// Settings for the sweep, comparison and solve commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub checkpoint: PathBuf,
    pub seed: u64,
    pub p_values: Vec<usize>,
    pub instance_count: usize,
    /// Instances whose median forms the sweep curve; instance 0 is the fixed one.
    pub sweep_instances: usize,
    pub beta: f64,
    pub comparison_p: usize,
    pub parameter_ranges: ParameterRanges,
    pub out_dir: PathBuf,
    pub transfer_points: usize,
    /// Uniform points over the domain for residuals and trajectories.
    pub eval_points: usize,
    pub integrator: IntegratorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("out/checkpoint.json"),
            seed: 0,
            p_values: (0..=13).collect(),
            instance_count: 20,
            sweep_instances: 5,
            beta: 0.5,
            comparison_p: 12,
            parameter_ranges: ParameterRanges::default(),
            out_dir: PathBuf::from("out"),
            transfer_points: TRANSFER_GRID_POINTS,
            eval_points: 1000,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_values.is_empty() {
            return Err(Error::InvalidConfig("p_values is empty".into()));
        }
        if self.instance_count == 0 || self.sweep_instances == 0 {
            return Err(Error::InvalidConfig("instance counts must be at least 1".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta = {}", self.beta)));
        }
        if self.transfer_points < 2 || self.eval_points < 2 {
            return Err(Error::InvalidConfig("grids need at least 2 points".into()));
        }
        self.parameter_ranges.validate()?;
        self.integrator.validate()
    }

    /// The first `n` seeded evaluation instances. Prefixes agree across `n`.
    pub fn instances(&self, n: usize) -> Vec<DuffingParams> {
        let mut rng = stream_rng(self.seed, STREAM_INSTANCES);
        (0..n).map(|_| self.parameter_ranges.sample(self.beta, &mut rng)).collect()
    }
}

/// Whole-run configuration file: a `[train]` and an `[experiment]` table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.experiment.validate()
    }

    /// Applies a run seed to both sections.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.experiment.seed = seed;
        self
    }

    /// Places the checkpoint inside `dir` unless it was given explicitly.
    pub fn with_out_dir(mut self, dir: &Path) -> Self {
        if self.experiment.checkpoint == ExperimentConfig::default().checkpoint {
            self.experiment.checkpoint = dir.join("checkpoint.json");
        }
        self.experiment.out_dir = dir.to_path_buf();
        self
    }

    /// SHA-256 of the canonical TOML form, with the output and checkpoint
    /// paths cleared so runs that differ only in where they write agree.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.experiment.out_dir = PathBuf::new();
        canonical.experiment.checkpoint = PathBuf::new();
        Ok(sha256_hex(canonical.to_toml_string()?.as_bytes()))
    }
}

/// Hashes carried by every output CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config: String,
    pub checkpoint: String,
}

impl Provenance {
    pub fn to_comment(&self) -> String {
        format!("# config_sha256={} checkpoint_sha256={}", self.config, self.checkpoint)
    }

    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix('#')?.trim();
        let mut config = None;
        let mut checkpoint = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("config_sha256=") {
                config = Some(v.to_string());
            } else if let Some(v) = field.strip_prefix("checkpoint_sha256=") {
                checkpoint = Some(v.to_string());
            }
        }
        Some(Self {
            config: config?,
            checkpoint: checkpoint?,
        })
    }
}

/// Rows of a CSV table held as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut file = fs::File::create(path)?;
        writeln!(file, "{}", provenance.to_comment())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Table::write`]; the provenance line is optional.
    pub fn read(path: &Path) -> Result<(Self, Option<Provenance>)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::MalformedCsv(format!("{}: {e}", path.display())))?;
        let provenance = text.lines().next().and_then(Provenance::parse);
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::MalformedCsv(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(Error::MalformedCsv(format!("{}: missing header", path.display())));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::MalformedCsv(format!("{}: {e}", path.display())))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok((Self { header, rows }, provenance))
    }

    /// Errors unless the header is exactly `expected`.
    pub fn expect_header(&self, expected: &[&str], what: &str) -> Result<()> {
        if self.header.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::MalformedCsv(format!(
                "{what}: expected columns {expected:?}, found {:?}",
                self.header
            )));
        }
        Ok(())
    }

    pub fn float(&self, row: usize, col: usize) -> Result<f64> {
        self.rows[row][col]
            .parse::<f64>()
            .map_err(|_| Error::MalformedCsv(format!("row {row}: {:?} is not a number", self.rows[row][col])))
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Loss history with columns `iteration, L_total, L_1 .. L_K`.
pub fn loss_history_table(history: &[LossRecord]) -> Table {
    let k = history.first().map_or(0, |r| r.per_head.len());
    let mut t = Table::new(
        ["iteration".to_string(), "L_total".to_string()]
            .into_iter()
            .chain((1..=k).map(|i| format!("L_{i}"))),
    );
    for r in history {
        let mut row = vec![r.iteration.to_string(), num(r.total)];
        row.extend(r.per_head.iter().map(|&v| num(v)));
        t.push(row);
    }
    t
}

/// Frozen trunk plus its evaluation on the residual/trajectory grid.
pub struct Workspace {
    pub trunk: FrozenTrunk,
    pub eval_grid: Vec<f64>,
    pub eval_batch: TrunkBatch,
}

impl Workspace {
    pub fn new(ckpt: &Checkpoint, cfg: &ExperimentConfig) -> Result<Self> {
        let trunk = ckpt.frozen_trunk(cfg.transfer_points)?;
        let eval_grid = uniform_grid(ckpt.config.t_lo, ckpt.config.t_hi, cfg.eval_points);
        let eval_batch = trunk.evaluate(&eval_grid)?;
        Ok(Self {
            trunk,
            eval_grid,
            eval_batch,
        })
    }

    pub fn solve(&self, params: &DuffingParams, p: usize) -> Result<TransferSolution> {
        let ode = params.to_ode()?;
        solve_cascade_with(&ode, &build_cascade(&ode, p)?, &self.trunk)
    }

    pub fn residual_loss(&self, sol: &TransferSolution, params: &DuffingParams) -> f64 {
        duffing_residual_loss_on(sol, &self.trunk, &self.eval_batch, &self.eval_grid, params)
    }

    /// Transfer-learned `x` on the evaluation grid.
    pub fn trajectory(&self, sol: &TransferSolution) -> Vec<f64> {
        sol.sample_batch(&self.eval_batch, &self.eval_grid).x
    }
}

/// Result of one `solve` run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub params: DuffingParams,
    pub p: usize,
    pub t: Vec<f64>,
    pub x_tl: Vec<f64>,
    pub x_oracle: Option<Vec<f64>>,
    /// Pointwise Duffing residual of the transfer solution.
    pub residual: Vec<f64>,
    pub residual_loss: f64,
    pub assemble_seconds: f64,
    pub cascade_seconds: f64,
    pub regularization: f64,
}

impl SolveReport {
    pub fn total_seconds(&self) -> f64 {
        self.assemble_seconds + self.cascade_seconds
    }

    /// `t, x_TL, [x_oracle,] residual`.
    pub fn table(&self) -> Table {
        let mut cols = vec!["t", "x_TL"];
        if self.x_oracle.is_some() {
            cols.push("x_oracle");
        }
        cols.push("residual");
        let mut t = Table::new(cols);
        for i in 0..self.t.len() {
            let mut row = vec![num(self.t[i]), num(self.x_tl[i])];
            if let Some(o) = &self.x_oracle {
                row.push(num(o[i]));
            }
            row.push(num(self.residual[i]));
            t.push(row);
        }
        t
    }

    /// Timing summary next to the `0.5 p + 1` seconds reference model.
    pub fn timing_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "assemble_seconds = {:.6}", self.assemble_seconds);
        let _ = writeln!(s, "cascade_seconds = {:.6}", self.cascade_seconds);
        let _ = writeln!(s, "total_seconds = {:.6}", self.total_seconds());
        let _ = writeln!(s, "reference_model_seconds = {:.1}", 0.5 * self.p as f64 + 1.0);
        let _ = writeln!(s, "log10_residual_loss = {:.4}", self.residual_loss.log10());
        if self.regularization > 0.0 {
            let _ = writeln!(s, "regularization = {:.3e}", self.regularization);
        }
        s
    }
}

/// Solves one instance by transfer and optionally by the reference integrator.
pub fn solve_instance(ws: &Workspace, params: &DuffingParams, p: usize, with_oracle: bool, integrator: &IntegratorConfig) -> Result<SolveReport> {
    let sol = ws.solve(params, p)?;
    let samples = sol.sample_batch(&ws.eval_batch, &ws.eval_grid);
    let residual: Vec<f64> = (0..samples.t.len())
        .map(|i| params.residual(samples.t[i], samples.x[i], samples.x_dot[i], samples.v_dot[i]))
        .collect();
    let x_oracle = if with_oracle {
        Some(integrate_duffing(params, [params.x0, 0.0], &ws.eval_grid, integrator)?.x)
    } else {
        None
    };
    Ok(SolveReport {
        params: *params,
        p,
        t: samples.t,
        x_tl: samples.x,
        x_oracle,
        residual,
        residual_loss: ws.residual_loss(&sol, params),
        assemble_seconds: sol.assemble_seconds,
        cascade_seconds: sol.order_seconds.iter().sum(),
        regularization: sol.regularization,
    })
}

/// Loss-versus-`p` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub p_values: Vec<usize>,
    pub instances: Vec<DuffingParams>,
    /// `log10_loss[k][i]`: loss at `p_values[k]` for instance `i`.
    pub log10_loss: Vec<Vec<f64>>,
    pub median: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl SweepResult {
    pub fn table(&self) -> Table {
        let n = self.instances.len();
        let mut t = Table::new(
            std::iter::once("p".to_string())
                .chain((0..n).map(|i| format!("log10_loss_{i}")))
                .chain(std::iter::once("median_log10_loss".to_string())),
        );
        for (k, &p) in self.p_values.iter().enumerate() {
            let mut row = vec![p.to_string()];
            row.extend(self.log10_loss[k].iter().map(|&v| num(v)));
            row.push(num(self.median[k]));
            t.push(row);
        }
        t
    }

    pub fn median_at(&self, p: usize) -> Option<f64> {
        self.p_values.iter().position(|&q| q == p).map(|k| self.median[k])
    }
}

/// For each instance, one factorization of `M`, then every `p` against it.
pub fn run_p_sweep(ws: &Workspace, cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let instances = cfg.instances(cfg.sweep_instances);
    let mut by_instance = Vec::with_capacity(instances.len());
    for params in &instances {
        let ode = params.to_ode()?;
        let nm = assemble_m(&ws.trunk, &FirstOrderSystem::from_ode(&ode)?)?;
        let mut losses = Vec::with_capacity(cfg.p_values.len());
        for &p in &cfg.p_values {
            let sol = solve_cascade_prepared(&nm, &ode, &build_cascade(&ode, p)?, &ws.trunk)?;
            losses.push(ws.residual_loss(&sol, params).log10());
        }
        by_instance.push(losses);
    }
    let log10_loss: Vec<Vec<f64>> = (0..cfg.p_values.len())
        .map(|k| by_instance.iter().map(|l| l[k]).collect())
        .collect();
    let median = log10_loss.iter().map(|row| median(row)).collect();
    Ok(SweepResult {
        p_values: cfg.p_values.clone(),
        instances,
        log10_loss,
        median,
    })
}

/// One comparison instance; metrics are NaN when it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub id: usize,
    pub params: DuffingParams,
    pub linf: f64,
    pub rel_l2: f64,
    pub log10_residual_loss: f64,
    pub solve_seconds: f64,
    pub error: Option<String>,
    pub x_tl: Vec<f64>,
    pub x_oracle: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub p: usize,
    pub t: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_COLUMNS: [&str; 13] = [
    "id",
    "delta",
    "alpha",
    "beta",
    "gamma",
    "omega",
    "x0",
    "linf",
    "rel_l2",
    "log10_residual_loss",
    "solve_seconds",
    "status",
    "message",
];
pub const TRAJECTORY_COLUMNS: [&str; 4] = ["id", "t", "x_TL", "x_oracle"];
pub const SWEEP_PREFIX: &str = "log10_loss_";

impl ComparisonResult {
    pub fn metrics_table(&self) -> Table {
        let mut t = Table::new(COMPARISON_COLUMNS);
        for r in &self.rows {
            let p = &r.params;
            t.push(vec![
                r.id.to_string(),
                num(p.delta),
                num(p.alpha),
                num(p.beta),
                num(p.gamma),
                num(p.omega),
                num(p.x0),
                num(r.linf),
                num(r.rel_l2),
                num(r.log10_residual_loss),
                format!("{:.6}", r.solve_seconds),
                if r.error.is_some() { "failed" } else { "ok" }.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        t
    }

    pub fn trajectory_table(&self) -> Table {
        let mut t = Table::new(TRAJECTORY_COLUMNS);
        for r in self.rows.iter().filter(|r| r.error.is_none()) {
            for (i, &ti) in self.t.iter().enumerate() {
                t.push(vec![r.id.to_string(), num(ti), num(r.x_tl[i]), num(r.x_oracle[i])]);
            }
        }
        t
    }
}

fn compare_one(ws: &Workspace, params: &DuffingParams, p: usize, integrator: &IntegratorConfig) -> Result<(TransferSolution, f64, Vec<f64>, Vec<f64>)> {
    let start = Instant::now();
    let sol = ws.solve(params, p)?;
    let seconds = start.elapsed().as_secs_f64();
    let x_tl = ws.trajectory(&sol);
    let x_oracle = integrate_duffing(params, [params.x0, 0.0], &ws.eval_grid, integrator)?.x;
    Ok((sol, seconds, x_tl, x_oracle))
}

/// Transfer solution at `cfg.comparison_p` against the reference integrator
/// for each of `cfg.instance_count` instances. A failing instance is recorded
/// and the run continues.
pub fn run_comparison(ws: &Workspace, cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    cfg.validate()?;
    let p = cfg.comparison_p;
    let mut rows = Vec::with_capacity(cfg.instance_count);
    for (id, params) in cfg.instances(cfg.instance_count).into_iter().enumerate() {
        let row = match compare_one(ws, &params, p, &cfg.integrator) {
            Ok((sol, seconds, x_tl, x_oracle)) => {
                let m = compare(&x_tl, &x_oracle)?;
                ComparisonRow {
                    id,
                    params,
                    linf: m.linf,
                    rel_l2: m.rel_l2,
                    log10_residual_loss: ws.residual_loss(&sol, &params).log10(),
                    solve_seconds: seconds,
                    error: None,
                    x_tl,
                    x_oracle,
                }
            }
            Err(e) => {
                log::warn!("instance {id} failed: {e}");
                ComparisonRow {
                    id,
                    params,
                    linf: f64::NAN,
                    rel_l2: f64::NAN,
                    log10_residual_loss: f64::NAN,
                    solve_seconds: f64::NAN,
                    error: Some(e.to_string()),
                    x_tl: Vec::new(),
                    x_oracle: Vec::new(),
                }
            }
        };
        rows.push(row);
    }
    Ok(ComparisonResult {
        p,
        t: ws.eval_grid.clone(),
        rows,
    })
}

/// Least-squares line `y = a x + b` and its coefficient of determination.
pub fn fit_affine(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}

/// Files written by [`emit_plot_data`].
#[derive(Debug, Clone)]
pub struct PlotOutputs {
    pub data: PathBuf,
    pub svgs: Vec<PathBuf>,
}

pub const PLOT_COLUMNS: [&str; 4] = ["figure", "series", "x", "y"];

/// Long-format plot table (`figure, series, x, y`) from a sweep CSV and a
/// trajectory CSV.
pub fn plot_table(sweep: &Table, trajectories: &Table) -> Result<Table> {
    let p_col = sweep
        .column("p")
        .ok_or_else(|| Error::MalformedCsv("sweep: missing column \"p\"".into()))?;
    let series: Vec<(usize, String)> = sweep
        .header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            if let Some(id) = h.strip_prefix(SWEEP_PREFIX) {
                Some((i, format!("instance_{id}")))
            } else if h == "median_log10_loss" {
                Some((i, "median".to_string()))
            } else {
                None
            }
        })
        .collect();
    if !series.iter().any(|(_, s)| s == "median") {
        return Err(Error::MalformedCsv("sweep: missing column \"median_log10_loss\"".into()));
    }
    trajectories.expect_header(&TRAJECTORY_COLUMNS, "trajectories")?;

    let mut out = Table::new(PLOT_COLUMNS);
    for (col, name) in &series {
        for r in 0..sweep.rows.len() {
            let p = sweep.float(r, p_col)?;
            let y = sweep.float(r, *col)?;
            out.push(vec!["loss_vs_p".into(), name.clone(), num(p), num(y)]);
        }
    }
    for r in 0..trajectories.rows.len() {
        let id = &trajectories.rows[r][0];
        let t = trajectories.float(r, 1)?;
        out.push(vec!["trajectories".into(), format!("{id}_tl"), num(t), num(trajectories.float(r, 2)?)]);
        out.push(vec!["trajectories".into(), format!("{id}_oracle"), num(t), num(trajectories.float(r, 3)?)]);
    }
    Ok(out)
}

/// Reads the sweep and trajectory CSVs, writes `plot_data.csv` and one SVG
/// per figure into `out_dir`.
pub fn emit_plot_data(sweep_csv: &Path, trajectories_csv: &Path, out_dir: &Path, svg: bool) -> Result<PlotOutputs> {
    let (sweep, prov_a) = Table::read(sweep_csv)?;
    let (traj, prov_b) = Table::read(trajectories_csv)?;
    let table = plot_table(&sweep, &traj)?;
    let provenance = prov_a.or(prov_b).unwrap_or(Provenance {
        config: "unknown".into(),
        checkpoint: "unknown".into(),
    });
    let data = out_dir.join("plot_data.csv");
    table.write(&data, &provenance)?;
    let mut svgs = Vec::new();
    if svg {
        for (figure, xlabel, ylabel) in [("loss_vs_p", "p", "log10 loss"), ("trajectories", "t", "x")] {
            let path = out_dir.join(format!("{figure}.svg"));
            fs::write(&path, render_svg(&table, figure, xlabel, ylabel)?)?;
            svgs.push(path);
        }
    }
    Ok(PlotOutputs { data, svgs })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Minimal line chart of every series of `figure` in a long-format table.
pub fn render_svg(table: &Table, figure: &str, xlabel: &str, ylabel: &str) -> Result<String> {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in 0..table.rows.len() {
        if table.rows[r][0] != figure {
            continue;
        }
        let name = &table.rows[r][1];
        let pt = (table.float(r, 2)?, table.float(r, 3)?);
        if !pt.0.is_finite() || !pt.1.is_finite() {
            continue;
        }
        match series.iter_mut().find(|(n, _)| n == name) {
            Some((_, pts)) => pts.push(pt),
            None => series.push((name.clone(), vec![pt])),
        }
    }
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{ylabel}</text>"#, h / 2.0, h / 2.0);
    for (v, anchor_y) in [(y0, h - pad), (y1, pad)] {
        let _ = writeln!(s, r#"<text x="{}" y="{anchor_y}" text-anchor="end" font-size="10">{v:.3}</text>"#, pad - 4.0);
    }
    for (v, anchor_x) in [(x0, pad), (x1, w - pad)] {
        let _ = writeln!(s, r#"<text x="{anchor_x}" y="{}" text-anchor="middle" font-size="10">{v:.3}</text>"#, h - pad + 14.0);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let dash = if name.ends_with("_oracle") { r#" stroke-dasharray="4 3""# } else { "" };
        let width = if name == "median" { 2.5 } else { 1.2 };
        let mut d = String::new();
        for (k, &(x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if k == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="{width}"{dash}><title>{name}</title></path>"#,
            d.trim_end()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
