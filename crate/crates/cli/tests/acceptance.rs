//! Acceptance checks, one PASS/FAIL line each.
//!
//! `cargo test -p slac-cli --test acceptance` runs all of them (about
//! 30-40 minutes on one core). Pass criterion numbers to run a subset:
//! `cargo test -p slac-cli --test acceptance -- 2 7`.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slac_cli::commands::{
    evaluate, export, grid_solve, rollout, train, Artifact, EvaluateOptions, ExportOptions, RolloutOptions,
    TrainOptions,
};
use slac_cli::RunConfig;
use slac_core::actor_critic::NetworkConfig;
use slac_core::grid::{double_integrator_min_time, grid_value_iteration, GridAxis, GridSolveReport, GridValueFunction};
use slac_core::nn::gradcheck::{check_control_gradient, check_network};
use slac_core::nn::{Activation, Network, OutputBounds};
use slac_core::ocp::{control_lattice, features_batch, ControlProblem, DoubleIntegrator, Dubins, TraceAttitude};
use slac_core::policy::{double_integrator_bang_bang, FnPolicy};
use slac_core::rollout::{simulate, Lattice2, RolloutConfig};
use slac_core::sl::{kruzkov, sl_operator, FnCritic, NeuralCritic, SlOperatorConfig};
use slac_core::ExecMode;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t <= budget, format!("{:.0}s of {:.0}s budget", t.as_secs_f64(), budget.as_secs_f64()))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 ------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let dense = |activation| NetworkConfig {
        hidden: 128,
        depth: 4,
        activation,
        residual: false,
    };
    let residual = NetworkConfig {
        hidden: 200,
        depth: 2,
        activation: Activation::Relu,
        residual: true,
    };
    let cases: Vec<(Box<dyn ControlProblem>, NetworkConfig, f64)> = vec![
        (Box::new(DoubleIntegrator::new(Default::default()).map_err(err)?), dense(Activation::Tanh), 1.0),
        (Box::new(Dubins::new(Default::default()).map_err(err)?), dense(Activation::Relu), 0.2),
        (Box::new(TraceAttitude::new(Default::default()).map_err(err)?), residual, 0.1),
    ];
    let (h, tol, need, drawn) = (1e-6, 1e-5, 100, 130);
    let mut worst = [0.0f64; 3];
    let mut fewest = usize::MAX;
    for (i, (p, cfg, mu)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let xs = p.sample_domain(&mut rng, drawn);
        let feats = features_batch(p.as_ref(), xs.view());
        let bounds = OutputBounds::new(p.control_lower().to_vec(), p.control_upper().to_vec()).map_err(err)?;
        let actor = Network::initialized(cfg.layers(p.feature_dim(), p.control_dim()).map_err(err)?, 7, Some(bounds)).map_err(err)?;
        let critic = Network::initialized(cfg.layers(p.feature_dim(), 1).map_err(err)?, 8, None).map_err(err)?;
        for net in [&actor, &critic] {
            let r = check_network(net, feats.view(), 20, h, &mut rng).map_err(err)?;
            worst[0] = worst[0].max(r.weight);
            worst[1] = worst[1].max(r.input);
            fewest = fewest.min(r.instances);
        }
        let c = NeuralCritic::new(&critic, p.as_ref()).map_err(err)?;
        let us = Array2::from_shape_fn((drawn, p.control_dim()), |(_, d)| {
            0.95 * rng.random_range(p.control_lower()[d]..p.control_upper()[d])
        });
        let op = SlOperatorConfig::new(0.05, *mu).map_err(err)?;
        let (w, n) = check_control_gradient(p.as_ref(), &c, xs.view(), us.view(), &op, h).map_err(err)?;
        worst[2] = worst[2].max(w);
        fewest = fewest.min(n);
    }
    let (fast, time) = within(Duration::from_secs(60), start);
    check(
        worst.iter().all(|&w| w <= tol) && fewest >= need && fast,
        format!(
            "worst relative error weight {:.1e}, input {:.1e}, control {:.1e} (tol {tol:.0e}); >= {fewest} instances per check; {time}",
            worst[0], worst[1], worst[2]
        ),
    )
}

// 2 ------------------------------------------------------------------

fn di_grid(nodes: usize, dt: f64) -> Result<(GridValueFunction, GridSolveReport), String> {
    let p = DoubleIntegrator::new(Default::default()).map_err(err)?;
    let axes = [GridAxis::new(-5.0, 5.0, nodes), GridAxis::new(-5.0, 5.0, nodes)];
    let controls = control_lattice(&p, 3).map_err(err)?;
    let op = SlOperatorConfig::new(dt, 1.0).map_err(err)?;
    grid_value_iteration(&p, &axes, &controls, &op, 1e-6, 50_000, ExecMode::Parallel).map_err(err)
}

/// Max error against `1 - exp(-t*)` on a 40x40 lattice over [-2, 2]^2,
/// where optimal paths stay well inside the grid.
fn interior_error(g: &GridValueFunction) -> f64 {
    let c = |i: usize| -2.0 + 4.0 * i as f64 / 39.0;
    (0..40)
        .flat_map(|i| (0..40).map(move |j| (c(i), c(j))))
        .map(|(x, y)| (g.interpolate(&[x, y]) - kruzkov(double_integrator_min_time(x, y)).unwrap()).abs())
        .fold(0.0, f64::max)
}

fn grid_vs_analytic() -> Outcome {
    let start = Instant::now();
    let (coarse, rc) = di_grid(201, 0.05)?;
    let (fine, rf) = di_grid(401, 0.025)?;
    let (e1, e2) = (interior_error(&coarse), interior_error(&fine));
    let (fast, time) = within(Duration::from_secs(120), start);
    check(
        rc.converged && rf.converged && e1 <= 0.05 && e2 < e1 && fast,
        format!("max error 201^2/dt 0.05: {e1:.4}, 401^2/dt 0.025: {e2:.4}; {time}"),
    )
}

// 3 ------------------------------------------------------------------

fn contraction_suite() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    // grid sweeps
    let di = DoubleIntegrator::new(Default::default()).map_err(err)?;
    let dubins = Dubins::new(Default::default()).map_err(err)?;
    let pi = std::f64::consts::PI;
    let runs: Vec<(&dyn ControlProblem, Vec<GridAxis>, usize, f64, f64)> = vec![
        (&di, vec![GridAxis::new(-5.0, 5.0, 101), GridAxis::new(-5.0, 5.0, 101)], 3, 0.05, 1.0),
        (
            &dubins,
            vec![GridAxis::new(-2.0, 2.0, 31), GridAxis::new(-2.0, 2.0, 31), GridAxis::periodic(-pi, pi, 24)],
            11,
            0.05,
            0.2,
        ),
    ];
    for (p, axes, per_dim, dt, mu) in runs {
        let controls = control_lattice(p, per_dim).map_err(err)?;
        let op = SlOperatorConfig::new(dt, mu).map_err(err)?;
        let (_, rep) = grid_value_iteration(p, &axes, &controls, &op, 1e-7, 50_000, ExecMode::Parallel).map_err(err)?;
        let c = &rep.changes;
        let tail = &c[c.len().saturating_sub(11)..];
        let worst_ratio = tail.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        let bound = op.max_discount() + 0.05;
        ok &= rep.converged && rep.max_increase == 0.0 && worst_ratio <= bound;
        notes.push(format!(
            "{} sweeps {} max increase {:e} tail ratio {worst_ratio:.4} <= {bound:.4}",
            p.name(),
            rep.sweeps,
            rep.max_increase
        ));
    }
    // the operator on random pairs of functions into [0, 1]
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problems: Vec<Box<dyn ControlProblem>> = vec![
        Box::new(di.clone()),
        Box::new(dubins.clone()),
        Box::new(TraceAttitude::new(Default::default()).map_err(err)?),
    ];
    let mut violations = 0;
    let mut cases = 0;
    for p in &problems {
        for _ in 0..500 {
            let n = p.state_dim();
            let a: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lift = rng.random_range(0.0..1.0);
            let f = move |c: &[f64], x: &[f64]| {
                let s: f64 = c[0] + c[1..].iter().zip(x).map(|(ci, xi)| ci * xi.sin()).sum::<f64>();
                1.0 / (1.0 + (-s).exp())
            };
            let (fa, fb) = (a.clone(), b.clone());
            let lower = FnCritic {
                value: move |x: &[f64]| f(&fa, x),
                gradient: |_: &[f64], g: &mut [f64]| g.fill(0.0),
            };
            let upper = FnCritic {
                value: move |x: &[f64]| {
                    let v = f(&a, x);
                    v + lift * (1.0 - v)
                },
                gradient: |_: &[f64], g: &mut [f64]| g.fill(0.0),
            };
            let other = FnCritic {
                value: move |x: &[f64]| f(&fb, x),
                gradient: |_: &[f64], g: &mut [f64]| g.fill(0.0),
            };
            let x = p.sample_domain(&mut rng, 1).row(0).to_vec();
            let u: Vec<f64> = (0..p.control_dim()).map(|d| rng.random_range(p.control_lower()[d]..=p.control_upper()[d])).collect();
            let op = SlOperatorConfig::new(rng.random_range(0.01..0.5), rng.random_range(0.05..=1.0)).map_err(err)?;
            let h = |c: &dyn slac_core::sl::Critic| sl_operator(p.as_ref(), c, &x, &u, &op).map_err(err);
            let (hl, hu, ho) = (h(&lower)?, h(&upper)?, h(&other)?);
            // sup of |lower - other| bounds the successor difference
            let next = slac_core::sl::euler_step(p.as_ref(), &x, &u, op.dt).map_err(err)?;
            let diff = (slac_core::sl::Critic::value(&lower, &next) - slac_core::sl::Critic::value(&other, &next)).abs();
            let in_range = (0.0..=1.0).contains(&hl) && (0.0..=1.0).contains(&hu);
            let monotone = hl <= hu + 1e-15;
            let contract = (hl - ho).abs() <= op.max_discount() * diff + 1e-15;
            if !(in_range && monotone && contract) {
                violations += 1;
            }
            cases += 1;
        }
    }
    ok &= violations == 0;
    notes.push(format!("operator range/monotonicity/contraction: {violations} violations in {cases} cases"));
    let (fast, time) = within(Duration::from_secs(60), start);
    notes.push(time);
    check(ok && fast, notes.join("; "))
}

// 4 ------------------------------------------------------------------

fn tmp() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(err)
}

fn double_integrator_preset() -> Outcome {
    let dir = tmp()?;
    let start = Instant::now();
    let cfg = RunConfig::preset("double_integrator").map_err(err)?;
    train(&cfg, dir.path(), &TrainOptions::default()).map_err(err)?;
    let r = evaluate(dir.path(), &EvaluateOptions::default()).map_err(err)?;
    let mse = r.error.ok_or("no error report")?.mse;
    let sign = r.sign_agreement.ok_or("no sign report")?;
    let (fast, time) = within(Duration::from_secs(15 * 60), start);
    check(
        r.reference == "analytic" && r.test_points == 3200 && mse <= 5e-2 && sign.fraction >= 0.9 && fast,
        format!(
            "critic mse {mse:.3e} on {} points (<= 5e-2), sign agreement {:.3} on {} lattice points (>= 0.9); {time}",
            r.test_points, sign.fraction, sign.points
        ),
    )
}

// 5 ------------------------------------------------------------------

/// Mean transformed value just outside the target minus just inside, for
/// headings pointing away from the target, read from a value_slice export
/// over `(x, heading)` at `y = 0`.
fn away_jump(csv: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(csv).map_err(err)?;
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let (x, t, w) = (v[0], v[1], v[2]);
        // facing away: heading 0 on the right, heading pi on the left
        let away = if x > 0.0 { t.cos() > 0.9 } else { t.cos() < -0.9 };
        if !away {
            continue;
        }
        if x.abs() <= 0.05 {
            inside.push(w);
        } else if (0.2..=0.3).contains(&x.abs()) {
            outside.push(w);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    if inside.is_empty() || outside.is_empty() {
        return Err("slice misses the target neighbourhood".into());
    }
    Ok(mean(&outside) - mean(&inside))
}

fn dubins_preset() -> Outcome {
    let dir = tmp()?;
    let start = Instant::now();
    let cfg = RunConfig::preset("dubins").map_err(err)?;
    grid_solve(&cfg, dir.path(), ExecMode::Parallel).map_err(err)?;
    train(&cfg, dir.path(), &TrainOptions::default()).map_err(err)?;
    let slice = Lattice2 {
        free: [0, 2],
        fixed: vec![(1, 0.0)],
        x_range: [-0.6, 0.6],
        y_range: [-std::f64::consts::PI, std::f64::consts::PI],
        resolution: [121, 72],
    };
    let mut jumps = Vec::new();
    for (name, grid) in [("grid", Some(dir.path().join("value.grid"))), ("critic", None)] {
        let out = dir.path().join(format!("{name}_slice.csv"));
        let opts = ExportOptions {
            mode: ExecMode::Parallel,
            artifact: Artifact::ValueSlice,
            slice: Some(slice.clone()),
            component: 0,
            cost_to_go: false,
            grid,
            out: Some(out.clone()),
        };
        export(dir.path(), &opts).map_err(err)?;
        jumps.push(away_jump(&out)?);
    }
    let r = rollout(dir.path(), &RolloutOptions { n: Some(200), ..Default::default() }).map_err(err)?;
    let s = &r.summary;
    let (fast, time) = within(Duration::from_secs(30 * 60), start);
    check(
        jumps.iter().all(|&j| j > 0.1) && s.runs == 200 && s.success_fraction >= 0.9 && fast,
        format!(
            "away-heading jump across the target edge: grid {:.3}, critic {:.3} (> 0.1); {}/{} rollouts reach the target (>= 90%); {time}",
            jumps[0], jumps[1], s.successes, s.runs
        ),
    )
}

// 6 ------------------------------------------------------------------

fn trace_preset() -> Outcome {
    let dir = tmp()?;
    let start = Instant::now();
    let cfg = RunConfig::preset("trace").map_err(err)?;
    train(&cfg, dir.path(), &TrainOptions::default()).map_err(err)?;
    let train_time = start.elapsed();
    let r = rollout(dir.path(), &RolloutOptions { n: Some(100), ..Default::default() }).map_err(err)?;
    let settle = r.summary.settling.as_ref().ok_or("no settling statistics")?;
    let bound = 0.3 + 1e-12;
    check(
        train_time <= Duration::from_secs(30 * 60) && settle.settled_fraction >= 0.95 && r.max_abs_control <= bound,
        format!(
            "trained in {:.0}s (<= 1800s); {:.0}% of {} runs settle to trailing |q|_inf <= {} (>= 95%); max |u| {:.4} (<= 0.3)",
            train_time.as_secs_f64(),
            100.0 * settle.settled_fraction,
            r.summary.runs,
            settle.tolerance,
            r.max_abs_control
        ),
    )
}

// 7 ------------------------------------------------------------------

fn bang_bang_cost(dt: f64, tol: f64) -> Result<f64, String> {
    let p = DoubleIntegrator::new(slac_core::ocp::DoubleIntegratorParams {
        radius: 5.0,
        target_tolerance: tol,
    })
    .map_err(err)?;
    let t = simulate(&p, &FnPolicy(double_integrator_bang_bang), &[1.0, 0.0], &RolloutConfig::new(dt, 10.0)).map_err(err)?;
    if !t.reached_target {
        return Err(format!("bang-bang run at dt {dt} did not arrive"));
    }
    Ok(t.accumulated_cost)
}

fn rollout_consistency() -> Outcome {
    let fine = bang_bang_cost(1e-3, 0.01)?;
    let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&dt| bang_bang_cost(dt, 4.0 * dt).map(|c| (c - 2.0).abs()))
        .collect::<Result<_, _>>()?;
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    check(
        (fine - 2.0).abs() <= 0.01 && ratios.iter().all(|r| (5.0..20.0).contains(r)),
        format!(
            "cost {fine:.4} at dt 1e-3; errors {:.2e}, {:.2e}, {:.2e} at dt 1e-2, 1e-3, 1e-4, ratios {:.1}, {:.1} (first order: 10)",
            errs[0], errs[1], errs[2], ratios[0], ratios[1]
        ),
    )
}

// 8 ------------------------------------------------------------------

fn small(preset: &str) -> Result<RunConfig, String> {
    let mut c = RunConfig::preset(preset).map_err(err)?;
    for net in [&mut c.actor, &mut c.critic] {
        net.hidden = 32;
        net.depth = 2;
    }
    c.train.iterations = 5;
    c.train.n_domain = 200;
    if let Some(g) = &mut c.grid {
        for a in &mut g.axes {
            a.nodes = a.nodes.min(41);
        }
        g.tolerance = 1e-4;
    }
    c.rollout.dt = Some(0.01);
    c.rollout.t_max = 3.0;
    Ok(c)
}

/// Every file under `dir` except wall-clock ones, as (relative path, bytes).
fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(err)? {
            let path = e.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            if rel == "timing.jsonl" || rel == "grid_report.json" {
                continue;
            }
            out.push((rel, fs::read(&path).map_err(err)?));
        }
    }
    out.sort();
    Ok(out)
}

fn run_everything(cfg: &RunConfig, dir: &Path) -> Result<(), String> {
    let seq = ExecMode::Sequential;
    train(cfg, dir, &TrainOptions { mode: seq, resume: false }).map_err(err)?;
    if cfg.grid.is_some() {
        grid_solve(cfg, dir, seq).map_err(err)?;
    }
    evaluate(dir, &EvaluateOptions { mode: seq, ..Default::default() }).map_err(err)?;
    rollout(dir, &RolloutOptions { mode: seq, n: Some(8), ..Default::default() }).map_err(err)?;
    for artifact in [Artifact::ValueSlice, Artifact::SwitchingRaster, Artifact::ResidualMap] {
        let mut slice = slac_cli::commands::default_slice(&cfg.problem);
        slice.resolution = [40, 30];
        let opts = ExportOptions {
            mode: seq,
            artifact,
            slice: Some(slice),
            component: 0,
            cost_to_go: false,
            grid: None,
            out: None,
        };
        export(dir, &opts).map_err(err)?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for preset in ["double_integrator", "dubins", "trace"] {
        let cfg = small(preset)?;
        let (a, b) = (tmp()?, tmp()?);
        run_everything(&cfg, a.path())?;
        run_everything(&cfg, b.path())?;
        let (sa, sb) = (snapshot(a.path())?, snapshot(b.path())?);
        let same = sa == sb;
        ok &= same && sa.iter().any(|(n, _)| n == "metrics.jsonl");
        notes.push(format!("{preset}: {} files {}", sa.len(), if same { "identical" } else { "DIFFER" }));
    }
    check(ok, notes.join("; "))
}

// --------------------------------------------------------------------

fn main() {
    let checks: [(u8, &str, fn() -> Outcome); 8] = [
        (1, "gradient suite", gradient_suite),
        (2, "grid vs analytic double integrator", grid_vs_analytic),
        (3, "contraction suite", contraction_suite),
        (4, "double-integrator preset", double_integrator_preset),
        (5, "Dubins preset", dubins_preset),
        (6, "attitude-control preset", trace_preset),
        (7, "rollout consistency", rollout_consistency),
        (8, "determinism", determinism),
    ];
    let wanted: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, title, f) in checks {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id} PASS  {title}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} FAIL  {title}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
