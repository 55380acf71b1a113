//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use stochflow::config::parse_config;
use stochflow::runner::build_tables;
use stochflow::RayonExecutor;
use stochflow_core::coeffs::{Affine, Atom, CoefficientField, ContinuousPart, LinearJump, MarkMeasure, Perturbed, Regularity, SinCos};
use stochflow_core::exec::PathExecutor;
use stochflow_core::flow::{integrate_flow, integrate_inverse_jacobian, integrate_jacobian, Scheme, Stepper};
use stochflow_core::grid::{self, Lattice, PairSet, SpatialBox};
use stochflow_core::inverse::{invert_flow, InverseOptions};
use stochflow_core::limits::{strong_limit_run, LimitOptions};
use stochflow_core::linalg::Mat;
use stochflow_core::noise::{generate_noise, NoiseRecord, TimeGrid};
use stochflow_core::norms::{moment_estimate, sobolev_functional, weighted_holder_report, GridFunction};
use stochflow_core::spde::{
    characteristic_box, ito_wentzell_check, partition_expansion, partition_sequence, solve_spde_bar,
    solve_spde_characteristics, PartitionOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn and(self, other: Outcome) -> Outcome {
        Outcome::new(self.pass && other.pass, format!("{}; {}", self.detail, other.detail))
    }

    fn within(self, elapsed: Duration, budget: Duration) -> Outcome {
        let ok = elapsed <= budget;
        self.and(Outcome::new(ok, format!("runtime {:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs())))
    }
}

fn continuous(part: impl ContinuousPart + 'static) -> CoefficientField {
    CoefficientField::continuous_only(Arc::new(part))
}

fn with_linjump(part: impl ContinuousPart + 'static, c: f64, rate: f64) -> CoefficientField {
    let measure = MarkMeasure::new(vec![Atom { mark: 0.0, rate }]).unwrap();
    CoefficientField::new(Arc::new(part), Arc::new(LinearJump::new(c).unwrap()), measure, Regularity::default()).unwrap()
}

fn noise(field: &CoefficientField, steps: usize, seed: u64, path: u64) -> NoiseRecord {
    generate_noise(field.measure(), field.brownian_count(), 0.0, 1.0, steps, seed, path).unwrap()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn gbm_oracle(x: f64, t: f64, w: f64, mu: f64, nu: f64) -> f64 {
    x * ((mu - 0.5 * nu * nu) * t + nu * w).exp()
}

fn closed_form_flow() -> Outcome {
    let started = Instant::now();
    let (mu, nu) = (0.1, 0.5);
    let f = continuous(Affine::gbm(mu, nu).unwrap());
    let starts = vec![vec![-2.0], vec![0.5], vec![3.0]];
    let mut worst_rel: f64 = 0.0;
    let (mut err_coarse, mut err_fine) = (Vec::new(), Vec::new());
    for path in 0..1000 {
        let fine = noise(&f, 256, 1, path);
        let w = fine.brownian_path();
        let times = fine.grid().points();
        let exact = integrate_flow(&f, &fine, &starts, Scheme::ExactFamily).unwrap();
        for (p, x) in starts.iter().enumerate() {
            for k in 0..times.len() {
                let o = gbm_oracle(x[0], times[k], w[k], mu, nu);
                worst_rel = worst_rel.max((exact.state(p, k)[0] - o).abs() / o.abs());
            }
        }
        let oracle_t = gbm_oracle(1.0, 1.0, *w.last().unwrap(), mu, nu);
        let coarse = fine.coarsen(4).unwrap();
        for (nz, errs) in [(&coarse, &mut err_coarse), (&fine, &mut err_fine)] {
            let e = integrate_flow(&f, nz, &[vec![1.0]], Scheme::Euler).unwrap();
            errs.push((e.state(0, e.time_count() - 1)[0] - oracle_t).abs());
        }
    }
    let ratio = mean(&err_coarse) / mean(&err_fine);
    Outcome::new(worst_rel <= 1e-12, format!("exact-family max relative error {worst_rel:.2e}"))
        .and(Outcome::new(
            (1.6..=2.6).contains(&ratio),
            format!("Euler strong error ratio {ratio:.3} for dt 1/64 to 1/256"),
        ))
        .within(started.elapsed(), Duration::from_secs(30))
}

fn round_trip_worst(field: &CoefficientField, scheme: Scheme, queries: &[Vec<f64>], seed: u64) -> f64 {
    let nz = noise(field, 120, seed, 0);
    let len = nz.grid().len();
    let times: Vec<usize> = (0..100).map(|j| 1 + j * (len - 2) / 99).collect();
    let flow = integrate_flow(field, &nz, &[vec![0.0; field.dim()]], scheme).unwrap();
    let inv = invert_flow(field, &flow, queries, &InverseOptions { tol: 1e-10, times: Some(times) }).unwrap();
    let stepper = Stepper::new(field, &nz, scheme).unwrap();
    let mut ws = stepper.workspace();
    let mut worst: f64 = 0.0;
    for (p, y) in queries.iter().enumerate() {
        for k in 0..inv.time_count() {
            let back = stepper.propagate(0, inv.time_indices()[k], inv.value(p, k), &mut ws).unwrap();
            let gap = back.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(gap);
        }
    }
    worst
}

fn inversion_round_trip() -> Outcome {
    let started = Instant::now();
    let line: Vec<Vec<f64>> = linspace(-3.0, 3.0, 1000).into_iter().map(|x| vec![x]).collect();
    let plane: Vec<Vec<f64>> = linspace(-2.0, 2.0, 40)
        .into_iter()
        .flat_map(|a| linspace(-2.0, 2.0, 25).into_iter().map(move |b| vec![a, b]))
        .collect();
    let affine = Affine::new(
        Mat::from_rows(2, 2, vec![-0.2, 0.3, 0.1, -0.1]),
        vec![0.1, 0.0],
        vec![Mat::from_rows(2, 2, vec![0.2, 0.0, 0.0, 0.1])],
        vec![vec![0.1, 0.2]],
    )
    .unwrap();
    let cases = [
        ("GBM", with_linjump(Affine::gbm(0.1, 0.2).unwrap(), -0.5, 2.0), Scheme::ExactFamily, &line),
        ("ROT", with_linjump(Affine::rotation(), -0.5, 2.0), Scheme::Euler, &plane),
        ("AFFINE", with_linjump(affine, -0.5, 2.0), Scheme::Euler, &plane),
    ];
    let mut out = Outcome::new(true, "sup |X(X^-1(y)) - y| over 1000 points x 100 times");
    for (i, (name, f, scheme, queries)) in cases.iter().enumerate() {
        let worst = round_trip_worst(f, *scheme, queries, 20 + i as u64);
        out = out.and(Outcome::new(worst <= 1e-8, format!("{name} {worst:.2e}")));
    }
    out.within(started.elapsed(), Duration::from_secs(60))
}

fn jacobian_fidelity() -> Outcome {
    let h = 1e-4;
    let mut worst_rel: f64 = 0.0;
    let fields = [
        continuous(SinCos::new(2, 0.5, 0.4).unwrap()),
        continuous(
            Affine::new(
                Mat::from_rows(2, 2, vec![0.1, -0.3, 0.2, 0.0]),
                vec![0.0, 0.5],
                vec![Mat::from_rows(2, 2, vec![0.3, 0.1, 0.0, 0.2])],
                vec![vec![0.1, 0.0]],
            )
            .unwrap(),
        ),
    ];
    for (i, f) in fields.iter().enumerate() {
        let nz = noise(f, 1000, 30 + i as u64, 0);
        let x = vec![0.4, -0.7];
        let mut pts = vec![x.clone()];
        for j in 0..2 {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[j] += sign * h;
                pts.push(y);
            }
        }
        let flow = integrate_jacobian(f, integrate_flow(f, &nz, &pts, Scheme::Euler).unwrap()).unwrap();
        for k in 0..flow.time_count() {
            let u = flow.jacobian(0, k).unwrap();
            let mut fd = Mat::zeros(2, 2);
            for j in 0..2 {
                for r in 0..2 {
                    fd[(r, j)] = (flow.state(1 + 2 * j, k)[r] - flow.state(2 + 2 * j, k)[r]) / (2.0 * h);
                }
            }
            let mut diff = u.clone();
            diff.add_scaled(&fd, -1.0);
            worst_rel = worst_rel.max(diff.frobenius() / (5e-3 * (1.0 + u.frobenius())));
        }
    }
    let mut defect: f64 = 0.0;
    for (d, seed) in [(1, 40), (2, 41)] {
        let f = with_linjump(Affine::zero(d, 1), -0.5, 5.0);
        let nz = noise(&f, 50, seed, 0);
        let pts = vec![vec![0.3; d], vec![-1.5; d]];
        let flow = integrate_flow(&f, &nz, &pts, Scheme::ExactFamily).unwrap();
        let flow = integrate_inverse_jacobian(&f, integrate_jacobian(&f, flow).unwrap()).unwrap();
        for p in 0..pts.len() {
            defect = defect.max(flow.product_defect(p).unwrap());
        }
    }
    Outcome::new(worst_rel <= 1.0, format!("max |U - FD| / (5e-3 (1 + |U|)) = {worst_rel:.2e}"))
        .and(Outcome::new(defect <= 1e-12, format!("pure-jump |U Ubar - I| = {defect:.2e}")))
}

fn inverse_jacobian_order() -> Outcome {
    let f = continuous(SinCos::new(1, 0.5, 0.4).unwrap());
    let pts = vec![vec![-1.0], vec![0.3], vec![1.2]];
    let defect = |nz: &NoiseRecord| {
        let flow = integrate_flow(&f, nz, &pts, Scheme::Euler).unwrap();
        let flow = integrate_inverse_jacobian(&f, integrate_jacobian(&f, flow).unwrap()).unwrap();
        (0..pts.len()).map(|p| flow.product_defect(p).unwrap()).fold(0.0, f64::max)
    };
    let ratios: Vec<f64> = (0..100)
        .map(|path| {
            let fine = noise(&f, 256, 50, path);
            defect(&fine.coarsen(4).unwrap()) / defect(&fine)
        })
        .collect();
    let order = median(ratios).ln() / 4f64.ln();
    Outcome::new(order >= 0.4, format!("observed order {order:.3} (median over 100 paths, dt 1/64 to 1/256)"))
}

fn spde_representation() -> Outcome {
    let (mu, nu) = (0.1, 0.2);
    let gbm = continuous(Affine::gbm(mu, nu).unwrap());
    let nz = noise(&gbm, 100, 60, 0);
    let w = nz.brownian_path();
    let t = nz.grid().points().to_vec();
    let bbox = SpatialBox::cube(1, -5.0, 5.0).unwrap();
    let sol = solve_spde_characteristics(&gbm, &nz, Scheme::ExactFamily, 0.0, 1.0, &bbox, 0.05, 1e-10).unwrap();
    let nodes = sol.lattice().nodes();
    let drift = mu - 0.5 * nu * nu;
    let mut gbm_err: f64 = 0.0;
    for k in 0..sol.times.len() {
        for (p, x) in nodes.iter().enumerate() {
            gbm_err = gbm_err.max((sol.value(k, p)[0] - x[0] * (-drift * t[k] - nu * w[k]).exp()).abs());
        }
    }

    let sigma = 0.7;
    let add = continuous(Affine::additive(vec![0.0], vec![vec![sigma]]).unwrap());
    let nz_add = noise(&add, 100, 61, 0);
    let wa = nz_add.brownian_path();
    let sol = solve_spde_characteristics(&add, &nz_add, Scheme::Euler, 0.0, 1.0, &bbox, 0.25, 1e-10).unwrap();
    let nodes = sol.lattice().nodes();
    let mut add_err: f64 = 0.0;
    for (k, w) in wa.iter().enumerate().take(sol.times.len()) {
        for (p, x) in nodes.iter().enumerate() {
            add_err = add_err.max((sol.value(k, p)[0] - (x[0] - sigma * w)).abs());
        }
    }

    let probe_box = SpatialBox::cube(1, -5.0, 5.0).unwrap();
    let probes = Lattice::anchored(&probe_box, 0.25).unwrap().nodes();
    let wide = characteristic_box(&gbm, &nz, Scheme::ExactFamily, &probe_box, &probes, 1e-2).unwrap();
    let sol = solve_spde_characteristics(&gbm, &nz, Scheme::ExactFamily, 0.0, 1.0, &wide, 1e-2, 1e-10).unwrap();
    let iw = ito_wentzell_check(&sol, &gbm, &nz, &probes).unwrap();

    Outcome::new(gbm_err <= 1e-10, format!("GBM sup error {gbm_err:.2e}"))
        .and(Outcome::new(add_err <= 1e-13, format!("constant sigma sup error {add_err:.2e}")))
        .and(Outcome::new(iw <= 1e-3, format!("Ito-Wentzell residual {iw:.2e} at step 1e-2")))
}

fn corrected_drift() -> Outcome {
    let add = continuous(Affine::additive(vec![0.0], vec![vec![0.8]]).unwrap());
    let nz = noise(&add, 100, 70, 0);
    let bbox = SpatialBox::cube(1, -3.0, 3.0).unwrap();
    let u = solve_spde_characteristics(&add, &nz, Scheme::Euler, 0.0, 1.0, &bbox, 0.25, 1e-10).unwrap();
    let ub = solve_spde_bar(&add, &nz, Scheme::Euler, 0.0, 1.0, &bbox, 0.25, 1e-10).unwrap();
    let nodes = u.lattice().nodes();
    let mut mirror: f64 = 0.0;
    for k in 0..u.times.len() {
        for (p, x) in nodes.iter().enumerate() {
            mirror = mirror.max((u.value(k, p)[0] + ub.value(k, p)[0] - 2.0 * x[0]).abs());
        }
    }

    let (mu, nu) = (0.1, 0.2);
    let gbm = continuous(Affine::gbm(mu, nu).unwrap());
    let part = gbm.continuous();
    let h = 1e-5;
    let mut fd_gap: f64 = 0.0;
    let mut closed_gap: f64 = 0.0;
    let (mut b, mut s, mut sp, mut sm) = (vec![0.0], Mat::zeros(1, 1), Mat::zeros(1, 1), Mat::zeros(1, 1));
    for x in linspace(-10.0, 10.0, 41) {
        let hat = gbm.hat_drift(0.0, &[x]).unwrap()[0];
        part.drift(0.0, &[x], &mut b);
        part.diffusion(0.0, &[x], &mut s);
        part.diffusion(0.0, &[x + h], &mut sp);
        part.diffusion(0.0, &[x - h], &mut sm);
        let fd = b[0] - s[(0, 0)] * (sp[(0, 0)] - sm[(0, 0)]) / (2.0 * h);
        fd_gap = fd_gap.max((hat - fd).abs());
        closed_gap = closed_gap.max((hat - (mu - nu * nu) * x).abs());
    }
    Outcome::new(mirror <= 1e-13, format!("sup |u + ubar - 2x| = {mirror:.2e}"))
        .and(Outcome::new(fd_gap <= 1e-6, format!("GBM b-hat vs finite differences {fd_gap:.2e}")))
        .and(Outcome::new(closed_gap <= 1e-14, format!("vs (mu - nu^2) x {closed_gap:.2e}")))
}

fn partition_identity() -> Outcome {
    let ode = continuous(Affine::new(Mat::scalar(1, 1.0), vec![0.0], vec![Mat::zeros(1, 1)], vec![vec![0.0]]).unwrap());
    let quiet = NoiseRecord::quiet(TimeGrid::uniform(0.0, 1.0, 256).unwrap(), 1);
    let opts = PartitionOptions {
        partitions: 64,
        fd_step: 1e-3,
        ..PartitionOptions::default()
    };
    let r = partition_expansion(&ode, &quiet, 0.0, 1.0, &[0.7], &opts).unwrap();
    let ode_ok = Outcome::new(
        r.identity_residual <= 1e-6,
        format!("ODE identity residual {:.2e} at M = 64", r.identity_residual),
    );

    let gbm = continuous(Affine::gbm(0.1, 0.2).unwrap());
    let counts = [4, 16, 64];
    let exec = RayonExecutor::new(0).unwrap();
    let realizations = 48;
    let runs = exec.map_paths(realizations, |path| {
        let nz = noise(&gbm, 256, 1, path as u64);
        partition_sequence(&gbm, &nz, 0.0, 1.0, &[1.0], &counts, &PartitionOptions::default())
            .map(|reps| reps.iter().map(|r| r.claim_residuals[0]).collect::<Vec<f64>>())
    });
    let runs: Vec<Vec<f64>> = match runs.into_iter().collect() {
        Ok(r) => r,
        Err(e) => return ode_ok.and(Outcome::new(false, format!("GBM run failed: {e}"))),
    };
    let medians: Vec<f64> = (0..counts.len()).map(|j| median(runs.iter().map(|r| r[j]).collect())).collect();
    let ratios = [medians[0] / medians[1], medians[1] / medians[2]];
    let ok = ratios.iter().all(|r| (1.3..=4.0).contains(r));
    ode_ok.and(Outcome::new(
        ok,
        format!(
            "GBM claim-(1) medians {:.3e}, {:.3e}, {:.3e} over {realizations} realizations; ratios {:.3}, {:.3}",
            medians[0], medians[1], medians[2], ratios[0], ratios[1]
        ),
    ))
}

fn strong_limit() -> Outcome {
    let started = Instant::now();
    let exec = RayonExecutor::new(0).unwrap();
    let ns = [1u64, 2, 4, 8, 16];
    let mut opts = LimitOptions {
        epsilon: 1.0,
        beta_prime: 1.5,
        p: 1.0,
        paths: 4,
        seed: 80,
        bbox: SpatialBox::cube(1, -2.0, 2.0).unwrap(),
        step: 0.5,
        s: 0.0,
        t_end: 1.0,
        base_steps: 64,
        scheme: Scheme::Euler,
        gradients: false,
        inverse: true,
    };
    let zero: Arc<dyn ContinuousPart> = Arc::new(Affine::zero(1, 1));
    let ode_fields: Vec<_> = ns
        .iter()
        .map(|&n| (n, CoefficientField::continuous_only(Perturbed::build(zero.clone(), 1.0 / n as f64, 1.0))))
        .collect();
    let ode = strong_limit_run(&ode_fields, &CoefficientField::continuous_only(zero), &opts, &exec).unwrap();
    let exact = ode.rows.iter().all(|r| r.flow_value.mean == 1.0 / r.n as f64);

    let gbm: Arc<dyn ContinuousPart> = Arc::new(Affine::gbm(0.1, 0.3).unwrap());
    let fields: Vec<_> = ns
        .iter()
        .map(|&n| (n, CoefficientField::continuous_only(Perturbed::build(gbm.clone(), 0.0, 1.0 + 1.0 / n as f64))))
        .collect();
    opts.paths = 1000;
    opts.p = 2.0;
    opts.base_steps = 32;
    opts.scheme = Scheme::ExactFamily;
    let rep = strong_limit_run(&fields, &CoefficientField::continuous_only(gbm), &opts, &exec).unwrap();
    let mut decreasing = true;
    for w in rep.rows.windows(2) {
        for (a, b) in [
            (w[0].flow_value, w[1].flow_value),
            (w[0].inverse_value.unwrap(), w[1].inverse_value.unwrap()),
        ] {
            let overlap = b.mean + b.ci95 >= a.mean - a.ci95;
            decreasing &= b.mean < a.mean || overlap;
        }
    }
    let (first, last) = (&rep.rows[0].flow_value, &rep.rows[4].flow_value);
    let confident = last.mean + last.ci95 < first.mean - first.ci95;
    let values: Vec<String> = rep.rows.iter().map(|r| format!("{:.3e}", r.flow_value.mean)).collect();
    Outcome::new(exact, "ODE rows equal T/n exactly")
        .and(Outcome::new(
            decreasing && confident,
            format!("GBM flow distances [{}] over 1000 paths", values.join(", ")),
        ))
        .within(started.elapsed(), Duration::from_secs(300))
}

fn appendix_functionals() -> Outcome {
    let h = 1.0 / 4096.0;
    let unit = SpatialBox::cube(1, 0.0, 1.0).unwrap();
    let line = GridFunction::from_fn(unit.clone(), h, 1, |x, out| out[0] = x[0]).unwrap();
    let sob = sobolev_functional(&line, 0.25, 2.0).unwrap();
    let oracle = (8.0f64 / 3.0).sqrt();
    let rel = (sob - oracle).abs() / oracle;

    let fs: Vec<Box<dyn Fn(f64) -> f64>> = vec![
        Box::new(|x| x),
        Box::new(|x| x * x),
        Box::new(|x| x * x * x),
        Box::new(|x| x.powi(4)),
        Box::new(|x| (1.0 - x).powi(2)),
        Box::new(|x| (std::f64::consts::PI * x).sin()),
        Box::new(|x| (std::f64::consts::PI * x).cos()),
        Box::new(|x| (2.0 * std::f64::consts::PI * x).sin()),
        Box::new(|x| (2.0 * std::f64::consts::PI * x).cos()),
        Box::new(|x| (3.0 * x).sin()),
        Box::new(|x| x.exp()),
        Box::new(|x| (-x).exp()),
        Box::new(|x| (2.0 * x).exp()),
        Box::new(|x| (4.0 * (x - 0.5)).tanh()),
        Box::new(|x| 1.0 / (1.0 + x)),
        Box::new(|x| (1.0 + x).ln()),
        Box::new(|x| (1.0 + x * x).sqrt()),
        Box::new(|x| x * (1.0 - x)),
        Box::new(|x| (x - 0.3).powi(2)),
        Box::new(|x| (-(x - 0.5).powi(2) * 8.0).exp()),
    ];
    let step = 1.0 / 256.0;
    let lat = Lattice::anchored(&unit, step).unwrap();
    let ratios: Vec<f64> = fs
        .iter()
        .map(|f| {
            let g = GridFunction::from_fn(unit.clone(), step, 1, |x, out| out[0] = f(x[0])).unwrap();
            let holder = grid::holder_seminorm(&lat, g.values(), 1, 0.25, PairSet::UnitBall);
            holder / sobolev_functional(&g, 0.25, 2.0).unwrap()
        })
        .collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let med = median(ratios);
    Outcome::new(rel <= 0.01, format!("Sobolev functional of x: relative error {rel:.2e}"))
        .and(Outcome::new(max <= 5.0 * med, format!("Holder/Sobolev ratio max {max:.3} vs median {med:.3}")))
}

fn moment_stability() -> Outcome {
    let f = continuous(Affine::gbm(0.1, 0.3).unwrap());
    let estimate = |half: f64| {
        let bbox = SpatialBox::cube(1, -half, half).unwrap();
        let nodes = Lattice::anchored(&bbox, 0.5).unwrap().nodes();
        let q: Vec<f64> = (0..400)
            .map(|path| {
                let nz = noise(&f, 64, 90, path);
                let flow = integrate_flow(&f, &nz, &nodes, Scheme::ExactFamily).unwrap();
                weighted_holder_report(&flow, &bbox, 0.5, 1.0, 1.5, false).unwrap().sup_weighted_value
            })
            .collect();
        moment_estimate(&q, 2.0).unwrap()
    };
    let (small, large) = (estimate(10.0), estimate(20.0));
    let change = (large.mean - small.mean).abs() / small.mean;
    let finite = small.mean.is_finite() && large.mean.is_finite();
    Outcome::new(
        finite && change <= 0.1,
        format!(
            "E sup |r^-2 X|^2: {:.4} ± {:.4} on [-10,10], {:.4} ± {:.4} on [-20,20], change {:.2e}",
            small.mean, small.ci95, large.mean, large.ci95, change
        ),
    )
}

fn determinism() -> Outcome {
    let configs = [
        "kind = \"simulate\"\nseed = 3\npaths = 6\nfamily = { name = \"GBM\", mu = 0.1, nu = 0.3 }\n\
         jump = { name = \"LINJUMP\", c = -0.5 }\natoms = [{ mark = 0.0, rate = 2.0 }]\nwindow = { t_end = 1.0, base_steps = 32 }\n",
        "kind = \"invert\"\nseed = 4\npaths = 4\nfamily = { name = \"SINCOS\", a = 0.5, s = 0.4 }\n\
         window = { t_end = 1.0, base_steps = 16 }\n",
        "kind = \"limit\"\nseed = 5\npaths = 16\nscheme = \"exact\"\nfamily = { name = \"GBM\", mu = 0.1, nu = 0.3 }\n\
         window = { t_end = 1.0, base_steps = 16 }\n",
        "kind = \"moments\"\nseed = 6\npaths = 16\nfamily = { name = \"GBM\", mu = 0.1, nu = 0.3 }\n\
         window = { t_end = 1.0, base_steps = 16 }\n",
        "kind = \"partition\"\nseed = 7\npaths = 3\nfamily = { name = \"SINCOS\", a = 0.4, s = 0.3 }\n\
         window = { t_end = 1.0, base_steps = 64 }\npartition = { counts = [4, 16] }\n",
    ];
    let mut out = Outcome::new(true, "byte-identical CSVs at 1 and 8 workers");
    for text in configs {
        let cfg = parse_config(text).unwrap();
        let render = |workers| -> Vec<Vec<u8>> {
            let dir = tempfile::tempdir().unwrap();
            let exec = RayonExecutor::new(workers).unwrap();
            build_tables(&cfg, &exec)
                .unwrap()
                .into_iter()
                .map(|(name, t)| {
                    let path = dir.path().join(name);
                    t.write(&path).unwrap();
                    std::fs::read(path).unwrap()
                })
                .collect()
        };
        let same = render(1) == render(8);
        out = out.and(Outcome::new(same, format!("{:?} {}", cfg.kind, if same { "identical" } else { "differs" })));
    }
    out
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("closed-form flow oracle", closed_form_flow),
        ("inversion round trip", inversion_round_trip),
        ("Jacobian fidelity", jacobian_fidelity),
        ("inverse-Jacobian order", inverse_jacobian_order),
        ("SPDE representation", spde_representation),
        ("corrected drift", corrected_drift),
        ("partition identity and claim", partition_identity),
        ("strong limit", strong_limit),
        ("appendix functionals", appendix_functionals),
        ("moment stability", moment_stability),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|_| Outcome::new(false, "panicked"));
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
