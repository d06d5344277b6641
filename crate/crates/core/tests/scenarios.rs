use std::collections::BTreeSet;

use charmap::bench::{run_scenario, scaling_study, Method, RunConfig, Scenario};
use charmap::flow::{MandelbrotField, MosaicField};
use charmap::sets::{advected_set_eval, sample_grid};
use charmap::{Boundary, CmConfig, CmSolver, SetFunction};

fn cfg(scenario: Scenario, text: &str) -> RunConfig {
    let mut c = RunConfig::preset(scenario);
    c.apply(&charmap::bench::parse_pairs(text).unwrap()).unwrap();
    c
}

#[test]
fn mosaic_keeps_every_phase_over_a_period() {
    let mut solver = CmSolver::new(CmConfig::fixed(16, 64, 1e-6, 1.0 / 128.0, Boundary::Periodic), MosaicField).unwrap();
    let set = SetFunction::Mosaic { kx: 3, ky: 3, stagger: true };
    let phases = |solver: &CmSolver<f64, 2, MosaicField>| -> BTreeSet<i64> {
        sample_grid::<f64, 2, _>(|x| advected_set_eval(&set, &solver.state, x), 96).iter().map(|v| *v as i64).collect()
    };
    let before = phases(&solver);
    assert_eq!(before, (0..9).collect());
    solver.run_until(1.0).unwrap();
    assert_eq!(phases(&solver), before, "mid-period");
    solver.run_until(2.0).unwrap();
    assert_eq!(phases(&solver), before, "full period");
}

#[test]
fn mandelbrot_detail_below_the_fine_grid() {
    let nf = 64;
    let mut solver = CmSolver::new(CmConfig::fixed(16, nf, 1e-6, 1.0 / 16.0, Boundary::Clamped), MandelbrotField { period: 16.0 }).unwrap();
    solver.run_until(1.0).unwrap();
    let set = SetFunction::mandelbrot();
    let h = 1.0 / nf as f64;
    // a fine cell straddling the set boundary shows inside and outside sub-samples
    let mut found = None;
    'search: for j in 0..nf {
        for i in 0..nf {
            let vals: Vec<f64> = (0..256)
                .map(|k| {
                    let x = [(i as f64 + ((k % 16) as f64 + 0.5) / 16.0) * h, (j as f64 + ((k / 16) as f64 + 0.5) / 16.0) * h];
                    advected_set_eval(&set, &solver.state, &x)
                })
                .collect();
            let inside = vals.iter().filter(|v| **v >= 1.0).count();
            let distinct: BTreeSet<u64> = vals.iter().map(|v| v.to_bits()).collect();
            if inside > 0 && inside < 256 && distinct.len() > 16 {
                found = Some((i, j, distinct.len()));
                break 'search;
            }
        }
    }
    assert!(found.is_some(), "no fine cell resolves the set boundary");
}

#[test]
fn runs_are_deterministic() {
    let c = cfg(Scenario::Swirl2D, "nc = 16\nnf = 32\na = 2\nt = 2\nresolution = 64\nsnapshots = 1");
    let a = run_scenario(&c).unwrap();
    let b = run_scenario(&c).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.nf_trace, b.nf_trace);
}

#[test]
fn remap_cost_follows_the_grid_ratio() {
    let c = cfg(Scenario::Swirl2D, "nc = 16\nnf = 128\na = 2\nt = 2\nresolution = 32\nsnapshots =\ndt = 0.015625\ne1 = 1e-5");
    let s = run_scenario(&c).unwrap();
    let t = s.timing;
    assert!(t.remaps > 0 && t.steps > 0);
    assert_eq!(t.m, t.steps as f64 / t.remaps as f64);
    assert!(t.footpoints + t.interpolation + t.particles + t.remapping <= t.total);
    let per_remap = t.remapping / t.remaps as f64;
    let per_step = (t.footpoints + t.interpolation) / t.steps as f64;
    let ratio = per_remap / ((128.0f64 / 16.0).powi(2) * per_step);
    assert!((0.01..=100.0).contains(&ratio), "remap/step cost ratio {ratio}");
}

#[test]
fn open_curves_report_every_branch() {
    let c = cfg(Scenario::OpenCurves, "nc = 16\nnf = 32\nt = 4\nresolution = 128\nsnapshots =");
    let s = run_scenario(&c).unwrap();
    let names: Vec<&str> = s.snapshots.iter().map(|m| m.set.as_str()).collect();
    assert_eq!(names, ["circle", "branch1", "branch2", "branch3"]);
    for m in &s.snapshots {
        assert!(m.metrics.hausdorff.is_some_and(|h| h < 0.02), "{}: {:?}", m.set, m.metrics);
    }
}

#[test]
fn deform3d_short_round_trip() {
    let c = cfg(Scenario::Deform3D, "nc = 8\nnf = 16\nresolution = 32\nsnapshots =\na = 1\nt = 1");
    let s = run_scenario(&c).unwrap();
    let m = s.final_metrics().unwrap();
    assert!(m.hausdorff.is_none());
    assert!(m.measure_rel_error < 0.1, "{m:?}");
}

#[test]
fn scaling_rows_cover_sizes_and_methods() {
    let c = cfg(Scenario::Swirl2D, "nc = 8\na = 1\nt = 0.5\nresolution = 32\ndt = 0.0625");
    let rows = scaling_study(&c, &[8, 16], &[Method::Cm, Method::Gals]).unwrap();
    let keys: Vec<(usize, Method)> = rows.iter().map(|r| (r.n, r.method)).collect();
    assert_eq!(keys, [(8, Method::Cm), (8, Method::Gals), (16, Method::Cm), (16, Method::Gals)]);
    assert_eq!(rows[1].timing.steps, 4);
    assert_eq!(rows[3].timing.steps, 8);
    assert!(scaling_study(&c, &[16, 8], &[Method::Cm]).is_err());
}
