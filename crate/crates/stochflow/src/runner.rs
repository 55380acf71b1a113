//! Dispatches a validated config to the numerical core and writes one CSV
//! per experiment plus `manifest.json`.
//!
//! Path `i` always draws noise stream `(seed, i)`, and per-path results are
//! gathered in index order before anything is written.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use stochflow_core::coeffs::{check_assumptions, AssumptionGrid, CoefficientField, Perturbed};
use stochflow_core::exec::PathExecutor;
use stochflow_core::flow::{integrate_flow, integrate_jacobian};
use stochflow_core::grid::{Lattice, SpatialBox};
use stochflow_core::inverse::{invert_flow, InverseOptions};
use stochflow_core::limits::{strong_limit_run, LimitOptions};
use stochflow_core::noise::{generate_noise, NoiseRecord};
use stochflow_core::norms::{moment_estimate, weighted_holder_report, MomentEstimate};
use stochflow_core::spde::{partition_sequence, solve_spde_bar, solve_spde_characteristics, PartitionOptions};

use crate::config::{ConfigError, ExperimentConfig, Kind, Perturbation};
use crate::executor::RayonExecutor;
use crate::table::{cells, columns, fmt_f64, Table};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] stochflow_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replaces `output_dir`.
    pub out: Option<PathBuf>,
    /// 0 lets the pool choose.
    pub workers: usize,
    pub seed_override: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// CSV file names, in writing order; `manifest.json` is always written too.
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    library_version: &'static str,
    seed: u64,
    workers: usize,
    wall_time_seconds: f64,
    files: &'a [String],
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dir = opts.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    fs::create_dir_all(&dir)?;
    let exec = RayonExecutor::new(opts.workers)?;
    let started = Instant::now();
    let tables = build_tables(&cfg, &exec)?;
    let mut files = Vec::with_capacity(tables.len());
    for (name, table) in &tables {
        table.write(&dir.join(name))?;
        files.push(name.to_string());
    }
    let manifest = Manifest {
        config: &cfg,
        library_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        workers: exec.workers(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        files: &files,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(RunOutcome { dir, files })
}

/// Computes the result tables without touching the file system.
pub fn build_tables<E: PathExecutor>(
    cfg: &ExperimentConfig,
    exec: &E,
) -> Result<Vec<(&'static str, Table)>, RunError> {
    let ctx = Context::new(cfg)?;
    Ok(match cfg.kind {
        Kind::Simulate => vec![("trajectories.csv", ctx.simulate(exec)?)],
        Kind::Invert => vec![("inverse.csv", ctx.invert(exec)?)],
        Kind::Spde => vec![("spde.csv", ctx.spde(exec, false)?)],
        Kind::SpdeBar => vec![("spde_bar.csv", ctx.spde(exec, true)?)],
        Kind::Partition => vec![("partition.csv", ctx.partition(exec)?)],
        Kind::Limit => vec![("limit.csv", ctx.limit(exec)?)],
        Kind::Moments => vec![("moments.csv", ctx.moments(exec)?)],
        Kind::Assumptions => vec![("assumptions.csv", ctx.assumptions()?)],
    })
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    field: CoefficientField,
    bbox: SpatialBox,
    nodes: Vec<Vec<f64>>,
}

type Rows = Vec<Vec<String>>;

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self, RunError> {
        let field = cfg.field()?;
        let bbox = cfg.bbox(field.dim())?;
        let nodes = Lattice::anchored(&bbox, cfg.space.step)?.nodes();
        Ok(Self { cfg, field, bbox, nodes })
    }

    fn d(&self) -> usize {
        self.field.dim()
    }

    fn noise(&self, path: usize) -> stochflow_core::Result<NoiseRecord> {
        let w = &self.cfg.window;
        generate_noise(
            self.field.measure(),
            self.field.brownian_count(),
            w.s,
            w.t_end,
            w.base_steps,
            self.cfg.seed,
            path as u64,
        )
    }

    /// Runs `job` on every path and concatenates the rows in path order.
    fn per_path<E, F>(&self, exec: &E, mut table: Table, job: F) -> Result<Table, RunError>
    where
        E: PathExecutor,
        F: Fn(usize, &NoiseRecord) -> stochflow_core::Result<Rows> + Sync + Send,
    {
        let results = exec.map_paths(self.cfg.paths, |i| self.noise(i).and_then(|nz| job(i, &nz)));
        for rows in results {
            for r in rows? {
                table.push(r);
            }
        }
        Ok(table)
    }

    /// Columns: path, point, time_index, time, x0.., X0..
    fn simulate<E: PathExecutor>(&self, exec: &E) -> Result<Table, RunError> {
        let d = self.d();
        let header = ["path", "point", "time_index", "time"]
            .into_iter()
            .map(String::from)
            .chain(columns("x", d))
            .chain(columns("X", d));
        self.per_path(exec, Table::new(header), |i, nz| {
            let flow = integrate_flow(&self.field, nz, &self.nodes, self.cfg.scheme())?;
            let mut rows = Vec::with_capacity(self.nodes.len() * flow.time_count());
            for (p, x) in self.nodes.iter().enumerate() {
                for (k, t) in flow.times().iter().enumerate() {
                    let mut r = vec![i.to_string(), p.to_string(), k.to_string(), fmt_f64(*t)];
                    r.extend(cells(x));
                    r.extend(cells(flow.state(p, k)));
                    rows.push(r);
                }
            }
            Ok(rows)
        })
    }

    /// Columns: path, point, time_index, time, y0.., inv0.., residual
    fn invert<E: PathExecutor>(&self, exec: &E) -> Result<Table, RunError> {
        let d = self.d();
        let header = ["path", "point", "time_index", "time"]
            .into_iter()
            .map(String::from)
            .chain(columns("y", d))
            .chain(columns("inv", d))
            .chain(["residual".to_string()]);
        let opts = InverseOptions {
            tol: self.cfg.tolerance(),
            times: None,
        };
        self.per_path(exec, Table::new(header), |i, nz| {
            let flow = integrate_flow(&self.field, nz, &self.nodes, self.cfg.scheme())?;
            let inv = invert_flow(&self.field, &flow, &self.nodes, &opts)?;
            let mut rows = Vec::with_capacity(self.nodes.len() * inv.time_count());
            for (p, y) in self.nodes.iter().enumerate() {
                for (k, t) in inv.times().iter().enumerate() {
                    let mut r = vec![i.to_string(), p.to_string(), inv.time_indices()[k].to_string(), fmt_f64(*t)];
                    r.extend(cells(y));
                    r.extend(cells(inv.value(p, k)));
                    r.push(fmt_f64(inv.residual(p, k)));
                    rows.push(r);
                }
            }
            Ok(rows)
        })
    }

    /// Columns: path, time_index, time, node, x0.., u0..
    fn spde<E: PathExecutor>(&self, exec: &E, bar: bool) -> Result<Table, RunError> {
        let d = self.d();
        let header = ["path", "time_index", "time", "node"]
            .into_iter()
            .map(String::from)
            .chain(columns("x", d))
            .chain(columns("u", d));
        let w = &self.cfg.window;
        let solve = if bar { solve_spde_bar } else { solve_spde_characteristics };
        self.per_path(exec, Table::new(header), |i, nz| {
            let sol = solve(
                &self.field,
                nz,
                self.cfg.scheme(),
                w.s,
                w.t_end,
                &self.bbox,
                self.cfg.space.step,
                self.cfg.tolerance(),
            )?;
            let mut rows = Vec::new();
            for (k, t) in sol.times.iter().enumerate() {
                for (p, x) in self.nodes.iter().enumerate() {
                    let mut r = vec![i.to_string(), sol.time_indices[k].to_string(), fmt_f64(*t), p.to_string()];
                    r.extend(cells(x));
                    r.extend(cells(sol.value(k, p)));
                    rows.push(r);
                }
            }
            Ok(rows)
        })
    }

    /// Columns: path, partitions, identity_residual, split_residual,
    /// claim1_residual, claim2_residual, claim3_residual, lhs0..
    fn partition<E: PathExecutor>(&self, exec: &E) -> Result<Table, RunError> {
        let d = self.d();
        let header = [
            "path",
            "partitions",
            "identity_residual",
            "split_residual",
            "claim1_residual",
            "claim2_residual",
            "claim3_residual",
        ]
        .into_iter()
        .map(String::from)
        .chain(columns("lhs", d));
        let pc = &self.cfg.partition;
        let opts = PartitionOptions {
            partitions: pc.counts[0],
            fd_step: pc.fd_step,
            quad_order: pc.quad_order,
            scheme: self.cfg.scheme(),
            tol: self.cfg.tolerance(),
        };
        let x = self.cfg.partition_point(d);
        let w = &self.cfg.window;
        self.per_path(exec, Table::new(header), |i, nz| {
            let reports = partition_sequence(&self.field, nz, w.s, w.t_end, &x, &pc.counts, &opts)?;
            Ok(reports
                .iter()
                .map(|r| {
                    let mut row = vec![
                        i.to_string(),
                        r.partitions.to_string(),
                        fmt_f64(r.identity_residual),
                        fmt_f64(r.split_residual),
                    ];
                    row.extend(cells(&r.claim_residuals));
                    row.extend(cells(&r.lhs));
                    row
                })
                .collect())
        })
    }

    /// Columns: n, coeff_distance, then value/ci95 pairs for the flow, the
    /// flow gradient, the inverse and the inverse gradient. Disabled
    /// quantities are left empty.
    fn limit<E: PathExecutor>(&self, exec: &E) -> Result<Table, RunError> {
        let lc = &self.cfg.limit;
        let base = self.field.continuous().clone();
        let mut fields = Vec::with_capacity(lc.ns.len());
        for &n in &lc.ns {
            let c = lc.amplitude / n as f64;
            let part = match lc.perturbation {
                Perturbation::DriftShift => Perturbed::build(base.clone(), c, 1.0),
                Perturbation::DiffusionScale => Perturbed::build(base.clone(), 0.0, 1.0 + c),
            };
            fields.push((n, self.field.with_continuous(part)?));
        }
        let w = &self.cfg.window;
        let nm = &self.cfg.norms;
        let opts = LimitOptions {
            epsilon: nm.epsilon,
            beta_prime: nm.beta_prime,
            p: nm.p,
            paths: self.cfg.paths,
            seed: self.cfg.seed,
            bbox: self.bbox.clone(),
            step: self.cfg.space.step,
            s: w.s,
            t_end: w.t_end,
            base_steps: w.base_steps,
            scheme: self.cfg.scheme(),
            gradients: lc.gradients,
            inverse: lc.inverse,
        };
        let report = strong_limit_run(&fields, &self.field, &opts, exec)?;
        let mut table = Table::new([
            "n",
            "coeff_distance",
            "flow_distance_value",
            "flow_ci95",
            "flow_distance_grad",
            "flow_grad_ci95",
            "inverse_distance_value",
            "inverse_ci95",
            "inverse_distance_grad",
            "inverse_grad_ci95",
        ]);
        let pair = |m: Option<MomentEstimate>| match m {
            Some(m) => [fmt_f64(m.mean), fmt_f64(m.ci95)],
            None => [String::new(), String::new()],
        };
        for row in &report.rows {
            let mut r = vec![row.n.to_string(), fmt_f64(row.coeff_distance.total())];
            r.extend(pair(Some(row.flow_value)));
            r.extend(pair(row.flow_grad));
            r.extend(pair(row.inverse_value));
            r.extend(pair(row.inverse_grad));
            table.push(r);
        }
        Ok(table)
    }

    /// Columns: quantity, epsilon, beta_prime, p, mean, ci95, samples.
    /// Rows `value` (`sup_t |r₁^{−(1+ε)} X_t|₀`) and `gradient`.
    fn moments<E: PathExecutor>(&self, exec: &E) -> Result<Table, RunError> {
        let nm = &self.cfg.norms;
        let per_path = exec.map_paths(self.cfg.paths, |i| -> stochflow_core::Result<(f64, f64)> {
            let nz = self.noise(i)?;
            let flow = integrate_flow(&self.field, &nz, &self.nodes, self.cfg.scheme())?;
            let flow = integrate_jacobian(&self.field, flow)?;
            let rep = weighted_holder_report(&flow, &self.bbox, self.cfg.space.step, nm.epsilon, nm.beta_prime, true)?;
            Ok((rep.sup_weighted_value, rep.grad_holder_weighted.unwrap_or(0.0)))
        });
        let per_path = per_path.into_iter().collect::<stochflow_core::Result<Vec<_>>>()?;
        let values: Vec<f64> = per_path.iter().map(|v| v.0).collect();
        let grads: Vec<f64> = per_path.iter().map(|v| v.1).collect();
        let mut table = Table::new(["quantity", "epsilon", "beta_prime", "p", "mean", "ci95", "samples"]);
        for (name, q) in [("value", values), ("gradient", grads)] {
            let m = moment_estimate(&q, nm.p)?;
            table.push(vec![
                name.into(),
                fmt_f64(nm.epsilon),
                fmt_f64(nm.beta_prime),
                fmt_f64(nm.p),
                fmt_f64(m.mean),
                fmt_f64(m.ci95),
                m.samples.to_string(),
            ]);
        }
        Ok(table)
    }

    /// Columns: name, grid_sup, bound, satisfied; the last row is `overall`.
    /// A failed check is a result, not an error.
    fn assumptions(&self) -> Result<Table, RunError> {
        let w = &self.cfg.window;
        let grid = AssumptionGrid::new(self.bbox.clone(), self.cfg.space.step).with_times(vec![w.s, w.t_end]);
        let report = check_assumptions(&self.field, &grid)?;
        let mut table = Table::new(["name", "grid_sup", "bound", "satisfied"]);
        for r in &report.records {
            table.push(vec![r.name.clone(), fmt_f64(r.grid_sup), fmt_f64(r.bound), r.satisfied.to_string()]);
        }
        table.push(vec!["overall".into(), String::new(), String::new(), report.overall.to_string()]);
        Ok(table)
    }
}

/// Reads and parses a config file; IO failures are reported as config errors.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        path: String::new(),
        reason: format!("cannot read {}: {e}", path.display()),
    })?;
    crate::config::parse_config(&text)
}
