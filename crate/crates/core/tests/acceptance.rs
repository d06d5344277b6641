//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Expect about ten minutes with the optimised test profile.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use charmap::bench::{run_scenario, sweep_e1, time_to_error, RunConfig, RunSummary, Scenario};
use charmap::cm::compose_into_fine;
use charmap::flow::{trace_backward_rk3, RigidRotation, UniformField, ZeroField};
use charmap::gals::{gals_advect_scalar_run, gals_step, GalsConfig};
use charmap::sets::advected_set_eval;
use charmap::{Boundary, CmConfig, GridGeometry, HermiteField, MapField, MapState, SetFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(scenario: Scenario, overrides: &str) -> RunConfig {
    let mut cfg = RunConfig::preset(scenario);
    let pairs = charmap::bench::parse_pairs(&overrides.replace(';', "\n")).expect("overrides");
    cfg.apply(&pairs).expect("valid config");
    cfg
}

fn run(cfg: &RunConfig) -> RunSummary {
    run_scenario(cfg).expect("run")
}

fn criterion_1(swirl: &RunSummary) -> Outcome {
    let bound = 2.0 / 256.0;
    match swirl.final_metrics().and_then(|m| m.hausdorff) {
        Some(h) => outcome(h < bound, format!("Hausdorff {h:.3e} vs bound {bound:.3e}")),
        None => outcome(false, "no contour extracted".into()),
    }
}

fn criterion_2(cm256: &RunSummary) -> Outcome {
    let cm32 = run(&config(Scenario::Swirl2D, "nf=32;dt=0.00390625;resolution=256;snapshots="));
    let gals = run(&config(Scenario::Swirl2D, "method=gals;ng=256;resolution=256;snapshots="));
    let (t32, t256, tg) = (cm32.timing.total, cm256.timing.total, gals.timing.total);
    outcome(
        t256 < 0.2 * tg && t256 < 3.0 * t32,
        format!("CM(256) {t256:.1}s, CM(32) {t32:.1}s, GALS(256) {tg:.1}s; ratios {:.3} and {:.2}", t256 / tg, t256 / t32),
    )
}

fn criterion_3() -> (Outcome, RunSummary) {
    let s = run(&config(
        Scenario::Swirl2D,
        "a=16;t=16;dynamic_grid=true;nf_init=32;nf_min=16;nf_max=512;e1=5e-6;e2=1e-4;resolution=128;snapshots=",
    ));
    let (t_max, nf_max) = s.max_nf().unwrap_or((0.0, 0));
    let final_nf = s.final_nf().unwrap_or(usize::MAX);
    let pass = nf_max >= 256 && (6.0..=10.0).contains(&t_max) && final_nf <= 32;
    (outcome(pass, format!("max Nf {nf_max} first at t={t_max:.2}, final Nf {final_nf}")), s)
}

fn criterion_4(runs: &[&RunSummary]) -> Outcome {
    let v: usize = runs.iter().map(|s| s.trigger_violations).sum();
    let steps: usize = runs.iter().map(|s| s.timing.steps).sum();
    outcome(v == 0, format!("{v} violations over {steps} instrumented steps"))
}

fn sine_error(n: usize) -> f64 {
    let g = GridGeometry::<f64, 2>::unit(n, Boundary::Periodic);
    let f = HermiteField::from_jet_fn(g.clone(), 1, |p, out| {
        out[0] = (2.0 * PI * p[0]).sin();
        out[1] = 2.0 * PI * (2.0 * PI * p[0]).cos();
        out[2] = 0.0;
        out[3] = 0.0;
    });
    let total = 0.5;
    let cfg = GalsConfig::with_dt(0.37 / n as f64);
    let (r, _) = gals_advect_scalar_run(&f, &UniformField([1.0, 0.0]), 0.0, total, &cfg).expect("gals");
    (0..g.node_count())
        .map(|node| {
            let x = g.node_position(node);
            (r.node_block(node)[0] - (2.0 * PI * (x[0] - total)).sin()).abs()
        })
        .fold(0.0, f64::max)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_5() -> Outcome {
    let ns = [32usize, 64, 128];
    let errs: Vec<f64> = ns.iter().map(|&n| sine_error(n)).collect();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let order = -least_squares_slope(&xs, &ys);
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    outcome(order >= 2.5, format!("errors {} at N=32,64,128, observed order {order:.2}", shown.join(" ")))
}

fn criterion_6() -> Outcome {
    let e1s = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
    let nfs = [32, 64, 128, 256];
    let target = 1e-3;
    let cfg = config(Scenario::Swirl2D, "resolution=256;snapshots=");
    let rows = sweep_e1(&cfg, &e1s, &nfs).expect("sweep");
    if let Some(r) = rows.iter().find(|r| r.result.is_err()) {
        return outcome(false, format!("run e1={:e} nf={} failed", r.e1, r.nf));
    }
    let times = time_to_error(&rows, &e1s, target);
    let best = times
        .iter()
        .enumerate()
        .filter_map(|(k, t)| t.map(|t| (k, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let interior = best.is_some_and(|(k, _)| k != 0 && k != e1s.len() - 1);
    let mut monotone = true;
    for nf in nfs {
        let ms: Vec<f64> = e1s
            .iter()
            .filter_map(|e| rows.iter().find(|r| r.nf == nf && r.e1 == *e).and_then(|r| r.m()))
            .collect();
        monotone &= ms.windows(2).all(|w| w[1] < w[0]);
    }
    let shown: Vec<String> = times.iter().map(|t| t.map_or("-".into(), |t| format!("{t:.1}s"))).collect();
    let best_e1 = best.map_or("none".into(), |(k, _)| format!("{:e}", e1s[k]));
    outcome(
        interior && monotone,
        format!("time to L2<={target:e} per E1 {shown:?}, best E1 {best_e1}, M monotone: {monotone}"),
    )
}

fn criterion_7() -> Outcome {
    let cfg = config(Scenario::Deform3D, "snapshots=");
    let remapped = run(&cfg);
    let mut control = cfg.clone();
    control.e1 = f64::INFINITY;
    let plain = run(&control);
    let err = |s: &RunSummary| s.final_metrics().map_or(f64::INFINITY, |m| m.measure_rel_error);
    let (a, b) = (err(&remapped), err(&plain));
    outcome(
        a < 0.05 && b > a,
        format!("volume error {:.3}% with {} remaps, control {:.3}%", 100.0 * a, remapped.timing.remaps, 100.0 * b),
    )
}

fn criterion_8() -> Outcome {
    let s = run(&config(Scenario::Mosaic, "resolution=256;snapshots="));
    let d = s.tracer_return.unwrap_or(f64::INFINITY);
    let m = s.timing.m;
    let bound = 2.0 / 512.0;
    outcome(d < bound && (6.0..=24.0).contains(&m), format!("tracer return {d:.2e} (bound {bound:.2e}), M {m:.1}"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();

    // per-axis cubic reproduction
    let c: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let poly = |x: &[f64; 2], dx: usize, dy: usize| -> f64 {
        let d = |v: f64, k: usize, o: usize| if k < o { 0.0 } else { (0..o).fold(1.0, |a, s| a * (k - s) as f64) * v.powi((k - o) as i32) };
        (0..16).map(|n| c[n] * d(x[0], n % 4, dx) * d(x[1], n / 4, dy)).sum()
    };
    let g = GridGeometry::<f64, 2>::unit(7, Boundary::Clamped);
    let f = HermiteField::from_jet_fn(g.clone(), 1, |x, out| {
        for (m, o) in out.iter_mut().enumerate() {
            *o = poly(x, m & 1, m >> 1);
        }
    });
    let worst = (0..1000)
        .map(|_| {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            (f.eval(&x).unwrap()[0] - poly(&x, 0, 0)).abs()
        })
        .fold(0.0, f64::max);
    if worst >= 1e-12 * c.iter().map(|v| v.abs()).sum::<f64>() {
        failures.push(format!("cubic reproduction {worst:.1e}"));
    }

    // C1 continuity on random node data
    let data: Vec<f64> = (0..g.node_count() * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = HermiteField::from_raw(g.clone(), 1, data).unwrap();
    let mut jump = 0.0f64;
    for _ in 0..200 {
        let face = rng.gen_range(1..7) as f64 / 7.0;
        let y = rng.gen::<f64>();
        let (vl, gl) = r.eval_with_gradient(&[face - 1e-14, y]).unwrap();
        let (vr, gr) = r.eval_with_gradient(&[face + 1e-14, y]).unwrap();
        jump = jump.max((vl[0] - vr[0]).abs()).max((gl[0][1] - gr[0][1]).abs() / 49.0);
    }
    if jump >= 1e-12 * 7.0 {
        failures.push(format!("C1 jump {jump:.1e}"));
    }

    // RK3 order on rigid rotation
    let rot = RigidRotation { center: [0.5, 0.5], omega: 2.0 * PI };
    let trace_err = |n: usize| {
        let dt = 1.0 / n as f64;
        let mut x = [0.8, 0.5];
        for k in 0..n {
            x = trace_backward_rk3(&rot, &x, 1.0 - (k + 1) as f64 * dt, dt);
        }
        (x[0] - 0.8f64).hypot(x[1] - 0.5)
    };
    let order = (trace_err(32) / trace_err(64)).log2();
    if !(2.7..=4.2).contains(&order) {
        failures.push(format!("RK3 order {order:.2}"));
    }

    // zero-velocity fixpoint
    let still = gals_step(&r, &ZeroField, 0.0, 0.1, &GalsConfig::default()).unwrap();
    let drift = r.max_coefficient_difference(&still).unwrap();
    if drift >= 1e-10 {
        failures.push(format!("zero-velocity drift {drift:.1e}"));
    }

    // composition against nested evaluation
    let coarse = GridGeometry::<f64, 2>::unit(16, Boundary::Clamped);
    let fine = coarse.with_cells(64);
    let chi = MapField::from_fn(coarse, |x| {
        let b = (PI * x[0]).sin() * (PI * x[1]).sin();
        [x[0] + 0.03 * b, x[1] - 0.02 * b]
    });
    let chi0 = MapField::from_fn(fine.clone(), |x| {
        let b = (PI * x[0]).sin() * (PI * x[1]).sin().powi(2);
        [x[0] - 0.02 * b, x[1] + 0.04 * b]
    });
    let composed = compose_into_fine(&chi0, &chi, &fine).unwrap();
    let worst = (0..100)
        .map(|_| {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (a, b) = (composed.eval(&x), chi0.eval(&chi.eval(&x)));
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .fold(0.0, f64::max);
    if worst >= 1e-6 {
        failures.push(format!("composition {worst:.1e}"));
    }

    // pullback identity at t = 0
    let state = MapState::<f64, 2>::new(&CmConfig::fixed(8, 16, 1e-5, 0.1, Boundary::Clamped)).unwrap();
    let sets = [SetFunction::circle([0.5, 0.75], 0.15), SetFunction::mandelbrot(), SetFunction::Mosaic { kx: 3, ky: 3, stagger: true }];
    for set in &sets {
        for _ in 0..1000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            if advected_set_eval(set, &state, &x) != set.eval(&x) {
                failures.push("pullback identity".into());
                break;
            }
        }
    }

    let pass = failures.is_empty();
    outcome(pass, if pass { "all invariant spot checks hold".into() } else { failures.join(", ") })
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |k: usize, o: Outcome| {
        println!("{} criterion {k}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };

    let swirl = run(&config(Scenario::Swirl2D, "nf=256;dt=0.00390625;resolution=1024;snapshots="));
    report(1, criterion_1(&swirl));
    report(2, criterion_2(&swirl));
    let (c3, dynamic) = criterion_3();
    report(3, c3);
    report(4, criterion_4(&[&swirl, &dynamic]));
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    report(8, criterion_8());
    report(9, criterion_9());

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} of {} criteria passed in {:.0}s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
