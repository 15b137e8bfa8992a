//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coopmec::bench::{
    baseline_all_offload, run_experiment, solve_scheme, CaseChoice, ExperimentSpec, Method, Row, SweepVar,
};
use coopmec::case1::{
    f_eval, f_inverse, outer_bisect_lambda, parametric_value, rb_primal_gradient, solve_case1, solve_rb_primal,
    time_block_gradient, Times,
};
use coopmec::case2::{psi, psi_gradient_scaled, solve_case2, DcaPoint};
use coopmec::channel::{realize, ChannelRealization, Fading, Topology};
use coopmec::config::Experiment;
use coopmec::convex::{Embedded, SmoothObjective};
use coopmec::model::{BsCapacity, Case, Scheme, SolveReport, SystemConfig};
use coopmec::oracle::{grid_search, kkt_residual, multistart_descent, Axis, GridSpec};

type Outcome = (bool, String);

fn instance(n: usize, seed: u64, cap: BsCapacity) -> (SystemConfig, ChannelRealization) {
    let cfg = SystemConfig::reference(n).with_capacity(cap);
    let topo = Topology::uniform(n, 5.0, 50.0, 30.0, seed);
    let chan = realize(&topo, &cfg, seed, Fading::On).expect("channel");
    (cfg, chan)
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn oracle_sandwich_case1() -> Outcome {
    let clock = Instant::now();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for seed in 0..10 {
        let (cfg, chan) = instance(2, seed, BsCapacity::Infinite);
        let solver = solve_case1(&cfg, &chan).expect("solve").avg_power_w;
        let (_, grid) = grid_search(&cfg, &chan, &GridSpec::uniform(&cfg, Case::Abundant, 20)).expect("grid");
        let gap = rel_gap(solver, grid);
        worst = worst.max(gap);
        if solver > grid * (1.0 + 1e-12) || gap > 0.05 {
            bad.push(format!("seed {seed}: solver {solver} grid {grid}"));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let ok = bad.is_empty() && secs <= 60.0;
    (
        ok,
        format!("10 instances, max |gap| {worst:.2e}, {secs:.1} s {}", bad.join("; ")),
    )
}

/// Case II grid at 8e7 points: the time axes are coarser than the
/// ratio/bandwidth axes to keep the product under the oracle's cap.
fn case2_grid(cfg: &SystemConfig) -> GridSpec {
    GridSpec {
        case: Case::Finite,
        t1: Axis::new(cfg.t_min_s, cfg.t_max_s, 4),
        busy: Axis::new(0.1, 1.0, 10),
        split: vec![Axis::new(0.03, 0.97, 16), Axis::new(0.03, 0.97, 16)],
        ratio: Axis::new(0.0, 1.0, 20),
        bandwidth: Axis::new(0.0, 1.0, 20),
    }
}

fn oracle_sandwich_case2() -> Outcome {
    let clock = Instant::now();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let mut below = 0;
    for seed in 0..10 {
        let (cfg, chan) = instance(2, seed, BsCapacity::Finite(5e9));
        let solver = solve_case2(&cfg, &chan).expect("solve").avg_power_w;
        let (_, grid) = grid_search(&cfg, &chan, &case2_grid(&cfg)).expect("grid");
        let (_, multi) = multistart_descent(&cfg, &chan, Case::Finite, 40, seed).expect("multistart");
        let oracle = grid.min(multi);
        if solver <= oracle * (1.0 + 1e-9) {
            below += 1;
        }
        let gap = rel_gap(solver, oracle);
        worst = worst.max(gap);
        if gap > 0.05 {
            bad.push(format!("seed {seed}: solver {solver} oracle {oracle}"));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let ok = bad.is_empty() && secs <= 120.0;
    (
        ok,
        format!(
            "10 instances, max |gap| {worst:.2e}, solver <= oracle on {below}/10, {secs:.1} s {}",
            bad.join("; ")
        ),
    )
}

fn kkt_certification() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_band = 0.0f64;
    let mut degenerate = 0;
    let mut bad = Vec::new();
    for seed in 0..25 {
        let (cfg, chan) = instance(5, seed, BsCapacity::Infinite);
        let rep = solve_case1(&cfg, &chan).expect("solve");
        let Some(dual) = rep.dual.as_ref() else {
            bad.push(format!("seed {seed}: no multipliers"));
            continue;
        };
        let t = Times::of(&rep.schedule);
        let v = kkt_residual(&cfg, &chan, t, dual).max_violation();
        worst = worst.max(v);
        let band = (dual.b_star.iter().sum::<f64>() - cfg.bandwidth_hz).abs() / cfg.bandwidth_hz;
        if dual.all_local {
            degenerate += 1;
        } else {
            worst_band = worst_band.max(band);
        }
        if v > 1e-6 || (!dual.all_local && band > 1e-6) {
            bad.push(format!("seed {seed}: kkt {v:.2e} band {band:.2e}"));
        }
    }
    (
        bad.is_empty(),
        format!(
            "25 instances ({degenerate} all-local), max violation {worst:.2e}, max band gap {worst_band:.2e} {}",
            bad.join("; ")
        ),
    )
}

fn strong_duality() -> Outcome {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for seed in 0..10 {
        let (cfg, chan) = instance(3, seed, BsCapacity::Infinite);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t1 = rng.random_range(cfg.t_min_s..cfg.t_max_s);
        let busy = rng.random_range(0.3..1.0) * t1;
        let share = rng.random_range(0.2..0.8);
        let t = Times {
            t1,
            t2: busy * share,
            t3: busy * (1.0 - share),
        };
        let dual = outer_bisect_lambda(&cfg, &chan, t).expect("dual");
        let mut s = coopmec::model::Schedule::all_local(3, t.t1, t.t2, t.t3, 0.0);
        s.r = dual.r_star.clone();
        s.b = dual.b_star.clone();
        let dual_value = parametric_value(&cfg, &chan, 0.0, &s).expect("value");
        let (_, _, primal) = solve_rb_primal(&cfg, &chan, t, 0.0, 1e-10).expect("primal");
        let gap = rel_gap(dual_value, primal);
        worst = worst.max(gap);
        if gap > 1e-4 {
            bad.push(format!("seed {seed}: dual {dual_value} primal {primal}"));
        }
    }
    (
        bad.is_empty(),
        format!("10 instances, max rel gap {worst:.2e} {}", bad.join("; ")),
    )
}

/// Number of steps that go up by more than the 1e-9 slack.
fn increases(values: impl IntoIterator<Item = f64>) -> usize {
    let v: Vec<f64> = values.into_iter().collect();
    v.windows(2)
        .filter(|w| w[1] > w[0] + 1e-9 * w[0].abs().max(1.0))
        .count()
}

fn trace_violations(rep: &SolveReport) -> (usize, usize) {
    let outer = increases(rep.dinkelbach_trace.iter().map(|s| s.theta));
    let inner = rep.inner_runs.iter().map(|r| increases(r.trace.iter().copied())).sum();
    (outer, inner)
}

fn monotone_sequences() -> Outcome {
    let mut runs = 0;
    let mut outer_bad = 0;
    let mut bcd_bad = 0;
    let mut dca_bad = 0;
    for n in [2, 5] {
        for seed in 0..8 {
            for case in [Case::Abundant, Case::Finite] {
                let (cfg, chan) = instance(n, seed, BsCapacity::Finite(5e9));
                for scheme in [Scheme::Optimized, Scheme::EqualBandwidth, Scheme::EqualTime] {
                    let rep = solve_scheme(&cfg, &chan, case, scheme).expect("solve");
                    let (o, i) = trace_violations(&rep);
                    runs += 1;
                    outer_bad += o;
                    match case {
                        Case::Abundant => bcd_bad += i,
                        Case::Finite => dca_bad += i,
                    }
                }
            }
        }
    }
    (
        outer_bad + bcd_bad + dca_bad == 0,
        format!("{runs} solves; ratio violations {outer_bad}, BCD violations {bcd_bad}, DCA violations {dca_bad}"),
    )
}

fn dca_speed() -> Outcome {
    let (cfg, chan) = instance(5, 0, BsCapacity::Finite(5e9));
    let rep = solve_case2(&cfg, &chan).expect("solve");
    let iters: Vec<usize> = rep.inner_runs.iter().map(|r| r.iterations).collect();
    let all_conv = rep.inner_runs.iter().all(|r| r.converged);
    let mut sorted = iters.clone();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    let max = *sorted.last().unwrap_or(&0);
    (
        all_conv && max <= 15 && median <= 10,
        format!("DCA iterations per ratio step {iters:?}, all converged: {all_conv}"),
    )
}

fn case_consistency() -> Outcome {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for seed in 0..10 {
        let (cfg, chan) = instance(5, seed, BsCapacity::Infinite);
        // cycles per second needed to process every user's full task
        let required = cfg.cycles_per_nat * cfg.rate_nat_per_s.iter().sum::<f64>();
        let big = cfg.clone().with_capacity(BsCapacity::Finite(1e6 * required));
        let one = solve_case1(&cfg, &chan).expect("case 1").avg_power_w;
        let two = solve_case2(&big, &chan).expect("case 2").avg_power_w;
        let gap = rel_gap(two, one);
        worst = worst.max(gap);
        if gap > 0.01 {
            bad.push(format!("seed {seed}: case1 {one} case2 {two}"));
        }
    }
    (
        bad.is_empty(),
        format!("10 seeds, max rel gap {worst:.2e} {}", bad.join("; ")),
    )
}

fn sweep(var: SweepVar, values: Vec<f64>, seeds: Vec<u64>, case: CaseChoice, base: Experiment) -> Vec<Row> {
    let mut spec = ExperimentSpec::new(base);
    spec.sweep = Some((var, values));
    spec.seeds = seeds;
    spec.case = case;
    spec.methods = vec![Method::Optimized, Method::EqualBandwidth, Method::EqualTime];
    spec.record_runtime = false;
    run_experiment(&spec).expect("sweep")
}

fn optimized_series(rows: &[Row], seed: u64) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.seed == seed && r.method == Method::Optimized)
        .map(|r| r.avg_power().unwrap_or(f64::NAN))
        .collect()
}

struct Sweeps {
    b1: Vec<Row>,
    b2: Vec<Row>,
    fb: Vec<Row>,
    c: Vec<Row>,
}

fn run_sweeps() -> Sweeps {
    let seeds: Vec<u64> = (0..3).collect();
    let b = vec![0.5e6, 1e6, 2e6, 4e6];
    let mut c_base = Experiment::reference(5);
    c_base.system.rate_nat_per_s = vec![1e6; 5];
    c_base.system.noise_density_w_per_hz = 1e-13;
    Sweeps {
        b1: sweep(
            SweepVar::Bandwidth,
            b.clone(),
            seeds.clone(),
            CaseChoice::One,
            Experiment::reference(5),
        ),
        b2: sweep(
            SweepVar::Bandwidth,
            b,
            seeds.clone(),
            CaseChoice::Two,
            Experiment::reference(5),
        ),
        fb: sweep(
            SweepVar::BsCapacity,
            vec![2e9, 5e9, 10e9, 20e9],
            seeds.clone(),
            CaseChoice::Two,
            Experiment::reference(5),
        ),
        c: sweep(SweepVar::CScale, vec![0.7, 1.9], seeds, CaseChoice::Auto, c_base),
    }
}

fn trends(s: &Sweeps) -> Outcome {
    let b1 = optimized_series(&s.b1, 0);
    let b2 = optimized_series(&s.b2, 0);
    let fb = optimized_series(&s.fb, 0);
    let c = optimized_series(&s.c, 0);
    let bad_b = increases(b1.iter().copied()) + increases(b2.iter().copied());
    let bad_f = increases(fb.iter().copied());
    let growth = c[1] / c[0];
    let ok = bad_b == 0
        && bad_f == 0
        && growth > 10.0
        && [&b1, &b2, &fb, &c].iter().all(|v| v.iter().all(|x| x.is_finite()));
    (
        ok,
        format!("seed 0: B case 1 {b1:.4?}, B case 2 {b2:.4?}, f_B {fb:.4?}, c 0.7e6->1.9e6 x{growth:.1}"),
    )
}

fn baseline_dominance(s: &Sweeps) -> Outcome {
    let mut rows = 0;
    let mut bad = Vec::new();
    for group in [&s.b1, &s.b2, &s.fb, &s.c] {
        for chunk in group.chunks(3) {
            let opt = chunk[0].avg_power().expect("optimized row");
            for r in &chunk[1..] {
                rows += 1;
                let v = r.avg_power().expect("baseline row");
                if opt > v * (1.0 + 1e-9) {
                    bad.push(format!(
                        "seed {} {} B {} fB {:?}: optimized {opt} > {v}",
                        r.seed, r.method, r.config.bandwidth_hz, r.config.bs_capacity
                    ));
                }
            }
        }
    }
    let (cfg, chan) = instance(5, 0, BsCapacity::Finite(5e9));
    let mut factors = Vec::new();
    for case in [Case::Abundant, Case::Finite] {
        let opt = solve_scheme(&cfg, &chan, case, Scheme::Optimized)
            .expect("opt")
            .avg_power_w;
        let all = baseline_all_offload(&cfg, &chan, case)
            .expect("all offload")
            .avg_power_w;
        factors.push(all / opt);
    }
    let ok = bad.is_empty() && factors.iter().all(|&f| f >= 5.0);
    (
        ok,
        format!(
            "{rows} baseline rows, {} above optimized; all-offload / optimized = {:.3e} (case 1), {:.3e} (case 2) {}",
            bad.len(),
            factors[0],
            factors[1],
            bad.join("; ")
        ),
    )
}

/// Central differences, compared in the max norm relative to the
/// analytic gradient.
fn fd_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1e-3);
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        let d = (f(&a) - f(&b)) / (2.0 * h);
        worst = worst.max((d - g[i]).abs() / scale);
    }
    worst
}

struct LogSumExp {
    w: Vec<f64>,
}

impl SmoothObjective for LogSumExp {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.w).map(|(x, w)| (w * x).exp()).sum::<f64>().ln()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let e: Vec<f64> = x.iter().zip(&self.w).map(|(x, w)| (w * x).exp()).collect();
        let s: f64 = e.iter().sum();
        for i in 0..x.len() {
            g[i] = self.w[i] * e[i] / s;
        }
    }
}

fn numerical_hygiene() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 3;
    let mut worst = [0.0f64; 4];
    for k in 0..100u64 {
        let (cfg, chan) = instance(n, k % 10, BsCapacity::Infinite);
        let t1 = rng.random_range(cfg.t_min_s..cfg.t_max_s);
        let busy = rng.random_range(0.3..1.0) * t1;
        let share = rng.random_range(0.2..0.8);
        let (t2, t3) = (busy * share, busy * (1.0 - share));
        let theta = rng.random_range(0.0..10.0);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let mut beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = beta.iter().sum::<f64>() / rng.random_range(0.5..0.95);
        beta.iter_mut().for_each(|b| *b /= total);

        // time block
        let mut s = coopmec::model::Schedule::all_local(n, t1, t2, t3, 0.0);
        s.r = r.clone();
        s.b = beta.iter().map(|b| b * cfg.bandwidth_hz).collect();
        let at = [t1, t2, t3];
        let (g, _, _) = time_block_gradient(&cfg, &chan, theta, &s, at);
        let f = |x: &[f64]| time_block_gradient(&cfg, &chan, theta, &s, [x[0], x[1], x[2]]).1;
        worst[0] = worst[0].max(fd_error(&f, &at, &g));

        // ratio/bandwidth block
        let t = Times { t1, t2, t3 };
        let x: Vec<f64> = r.iter().chain(&beta).copied().collect();
        let (g, _) = rb_primal_gradient(&cfg, &chan, t, theta, &x);
        let f = |x: &[f64]| rb_primal_gradient(&cfg, &chan, t, theta, x).1;
        worst[1] = worst[1].max(fd_error(&f, &x, &g));

        // convex part of the difference-of-convex split
        let t4 = rng.random_range(0.01..0.3);
        let y: Vec<f64> = [t1, t2, t3, t4]
            .into_iter()
            .chain(r.iter().map(|r| r * t1))
            .chain(beta.iter().map(|b| b * t2))
            .collect();
        let point = |y: &[f64]| DcaPoint {
            t1: y[0],
            t2: y[1],
            t3: y[2],
            t4: y[3],
            q: y[4..4 + n].to_vec(),
            p: y[4 + n..].iter().map(|s| s * cfg.bandwidth_hz).collect(),
            iter: 0,
        };
        let g = psi_gradient_scaled(&cfg, &chan, &y);
        let f = |y: &[f64]| psi(&cfg, &chan, &point(y)).unwrap_or(f64::INFINITY);
        worst[2] = worst[2].max(fd_error(&f, &y, &g));

        // affine restriction wrapper
        let inner = LogSumExp {
            w: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let jac = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let offset = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let emb = Embedded::new(&inner, jac, offset);
        let z = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut g = [0.0; 2];
        emb.gradient(&z, &mut g);
        worst[3] = worst[3].max(fd_error(&|z: &[f64]| emb.value(z), &z, &g));
    }

    let mut round_trip = 0.0f64;
    for _ in 0..1000 {
        let y = rng.random_range(0.0..1e6);
        let (t1, t2) = (rng.random_range(0.5..2.0), rng.random_range(0.05..1.0));
        let x = f_inverse(t1, t2, y).expect("f_inverse");
        round_trip = round_trip.max((f_eval(t1, t2, x) - y).abs() / y.max(1.0));
    }
    for y in [0.0, 1e-12, 1.0, 1e6] {
        let x = f_inverse(1.0, 0.5, y).expect("f_inverse");
        round_trip = round_trip.max((f_eval(1.0, 0.5, x) - y).abs() / y.max(1.0));
    }

    let ok = worst.iter().all(|&w| w <= 1e-5) && round_trip <= 1e-9;
    (
        ok,
        format!(
            "gradient rel errors: times {:.1e}, ratio/bandwidth {:.1e}, dc convex part {:.1e}, restriction {:.1e}; f_inverse round trip {:.1e}",
            worst[0], worst[1], worst[2], worst[3], round_trip
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let clock = Instant::now();
        let (ok, detail) = f();
        println!(
            "{} [{id:>2}] {name}: {detail} ({:.1} s)",
            if ok { "PASS" } else { "FAIL" },
            clock.elapsed().as_secs_f64()
        );
        results.push((id, name, (ok, detail)));
    };

    record(1, "oracle sandwich, case 1", &oracle_sandwich_case1);
    record(2, "oracle sandwich, case 2", &oracle_sandwich_case2);
    record(3, "KKT certification", &kkt_certification);
    record(4, "strong duality", &strong_duality);
    record(5, "monotone sequences", &monotone_sequences);
    record(6, "DCA convergence speed", &dca_speed);
    record(7, "case consistency", &case_consistency);
    let clock = Instant::now();
    let sweeps = run_sweeps();
    println!(
        "     sweeps for [8] and [9] ran in {:.1} s",
        clock.elapsed().as_secs_f64()
    );
    record(8, "trend reproduction", &|| trends(&sweeps));
    record(9, "baseline dominance", &|| baseline_dominance(&sweeps));
    record(10, "numerical hygiene", &numerical_hygiene);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
