//! One pass/fail line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::time::Instant;

use common::*;
use eglass_core::bench::{correlation_report, prepare, residual_contrast, run_timing, Prepared, Preset};
use eglass_core::exploration::{build_direction, explore_with_metrics, ExplorationParams};
use eglass_core::generator::Activation;
use eglass_core::linalg::{dot, sym_eig};
use eglass_core::metrics::{fd_hessian_oracle, measurement_metric, perceptual_metric, relative_frobenius, DEFAULT_FD_STEP};
use eglass_core::perceptual::feature_distance;
use eglass_core::{Generator, Matrix, OperatorSpec, SymmetricMatrix};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

fn hessians() -> Outcome {
    let start = Instant::now();
    let mut worst_y: f64 = 0.0;
    let mut worst_x: f64 = 0.0;
    for (k, (g, op, z0)) in triples().into_iter().enumerate() {
        let fe = features(g.signal_shape(), 900 + k as u64);
        let y0 = op.apply_raw(&g.generate_raw(&z0).unwrap()).unwrap();
        let f0 = fe.features_raw(&g.generate_raw(&z0).unwrap()).unwrap();
        let fd_y = fd_hessian_oracle(|z: &[f64]| sq_dist(&op.apply_raw(&g.generate_raw(z).unwrap()).unwrap(), &y0), &z0, DEFAULT_FD_STEP).unwrap();
        let fd_x = fd_hessian_oracle(|z: &[f64]| sq_dist(&fe.features_raw(&g.generate_raw(z).unwrap()).unwrap(), &f0), &z0, DEFAULT_FD_STEP).unwrap();
        worst_y = worst_y.max(relative_frobenius(&measurement_metric(&g, &op, &z0).unwrap(), &fd_y).unwrap());
        worst_x = worst_x.max(relative_frobenius(&perceptual_metric(&g, &fe, &z0).unwrap(), &fd_x).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_y <= 2e-3 && worst_x <= 2e-3 && secs < 60.0,
        format!("10 triples, worst rel. Frobenius H_Y {worst_y:.2e}, H_X {worst_x:.2e} (tol 2e-3), {secs:.1}s (< 60s)"),
    )
}

fn exact_null() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let g = Generator::new(linear(16, [8, 8], 10 + seed)).unwrap();
        let op = OperatorSpec::Downsample { factor: 4 }.bind([8, 8]).unwrap();
        let z0 = gaussian(16, 20 + seed, 1.0);
        let p = problem(g, op, &z0, 30 + seed);
        let metrics = p.metrics(&z0).unwrap();
        let k_top = metrics.eig_y.values().iter().filter(|&&v| v > 1e-12).count();
        let params = ExplorationParams {
            k: Some(1 + seed as usize),
            k_top: Some(k_top),
            ..ExplorationParams::default()
        };
        let dir = build_direction(&metrics, &params).unwrap();
        let y0 = p.operator.apply_raw(&p.generator.generate_raw(&z0).unwrap()).unwrap();
        for eta in [0.1, 1.0, 10.0] {
            let z: Vec<f64> = z0.iter().zip(dir.d.iter()).map(|(a, b)| a + eta * b).collect();
            worst = worst.max(sq_dist(&p.operator.apply_raw(&p.generator.generate_raw(&z).unwrap()).unwrap(), &y0));
        }
    }
    outcome(worst <= 1e-18, format!("worst ‖AG(z0+ηd) − AG(z0)‖² = {worst:.2e} over η ∈ {{0.1, 1, 10}} (tol 1e-18)"))
}

fn invariants(prepared: &[(Preset, Prepared)]) -> Outcome {
    let mut norm_gap: f64 = 0.0;
    let mut corr: f64 = 0.0;
    let mut bound1 = f64::NEG_INFINITY;
    let mut bound2 = f64::NEG_INFINITY;
    let mut orth: f64 = 0.0;
    let mut count = 0;
    for (p, prep) in prepared {
        let cfg = preset(*p);
        let problem = &prep.instance.problem;
        let out = explore_with_metrics(problem, &prep.base, prep.metrics.clone(), &cfg.exploration, cfg.n_solutions, Instant::now()).unwrap();
        for s in &out.directions {
            let c = check_direction(&prep.metrics, &s.direction);
            norm_gap = norm_gap.max(c.norm_gap);
            corr = corr.max(c.removed_corr);
            bound1 = bound1.max(c.bound_kplus1);
            bound2 = bound2.max(c.bound_source);
            count += 1;
        }
        orth = orth.max(prep.metrics.coupling().orthogonality_error());
    }
    outcome(
        norm_gap <= 1e-12 && corr <= 1e-10 && bound1 <= 0.0 && bound2 <= 0.0 && orth <= 1e-8 && count > 0,
        format!(
            "{count} directions: |‖d‖−1| {norm_gap:.1e} (1e-12), max_J |d·u| {corr:.1e} (1e-10), \
             Rayleigh excess over λ_(k_top+1) {bound1:.1e} and over R(v^K) {bound2:.1e} (≤ 0), ‖CᵀC−I‖∞ {orth:.1e} (1e-8)"
        ),
    )
}

fn contrast(prepared: &[(Preset, Prepared)]) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, prep) in prepared.iter().filter(|(p, _)| *p != Preset::Cs) {
        let cfg = preset(*p);
        let r = residual_contrast(&prep.instance.problem, &prep.base, &prep.metrics, &cfg.exploration).unwrap();
        let (res, perc) = (r.max_residual_ratio(), r.min_perceptual_ratio());
        pass &= res <= 0.2 && perc >= 0.25;
        parts.push(format!(
            "{} K={} residual ratio {res:.3} (≤ 0.2), perceptual ratio {perc:.3} (≥ 0.25), raw [{:.1e}, {:.1e}] vs projected [{:.1e}, {:.1e}]",
            p.name(),
            r.k,
            r.raw_range[0],
            r.raw_range[1],
            r.projected_range[0],
            r.projected_range[1]
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    parts.push(format!("{secs:.1}s (< 120s)"));
    outcome(pass, parts.join("; "))
}

fn feasibility(prepared: &[(Preset, Prepared)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, prep) in prepared {
        let cfg = preset(*p);
        let problem = &prep.instance.problem;
        let out = explore_with_metrics(problem, &prep.base, prep.metrics.clone(), &cfg.exploration, 10, Instant::now()).unwrap();
        let worst = out.records.iter().map(|r| r.measurement_residual).fold(0.0, f64::max);
        let feats: Vec<Vec<f64>> = out.records.iter().map(|r| problem.features.features(&r.x).unwrap()).collect();
        let floor = feats.iter().map(|f| feature_distance(f, f)).fold(0.0, f64::max);
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                sum += feature_distance(&feats[i], &feats[j]);
                pairs += 1;
            }
        }
        let mean = if pairs > 0 { sum / pairs as f64 } else { 0.0 };
        let ok = out.records.len() == 10 && worst <= 1e-2 && mean > 0.0 && mean >= 10.0 * floor;
        pass &= ok;
        parts.push(format!(
            "{}: {} records, max MSE {worst:.1e} (≤ 1e-2), mean pairwise distance {mean:.2e} vs floor {floor:.1e}",
            p.name(),
            out.records.len()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn timing() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [Preset::Sr, Preset::Ip] {
        let (t, _) = run_timing(&preset(p)).unwrap();
        let s = t.speedup.unwrap_or(0.0);
        pass &= s >= 4.0 && t.eglass.feasible_count == 10;
        parts.push(format!(
            "{}: e-GLASS {:.2}s vs multi-restart {:.2}s, speedup {s:.1}× (≥ 4)",
            p.name(),
            t.eglass.total_s,
            t.baseline.total_s
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    parts.push(format!("{secs:.0}s (< 600s)"));
    outcome(pass, parts.join("; "))
}

fn correlation(prepared: &[(Preset, Prepared)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (p, prep) in prepared.iter().filter(|(p, _)| *p != Preset::Cs) {
        let cfg = preset(*p);
        let (r, _) = correlation_report(&prep.metrics, &cfg.exploration).unwrap();
        let top = r.max_top_block_d_u();
        let dv = r.rows.iter().map(|x| x.d_v).fold(0.0, f64::max);
        let vv = r.rows.iter().map(|x| x.vk_v).fold(0.0, f64::max);
        pass &= top <= r.tau && dv >= 0.5 * vv;
        parts.push(format!(
            "{} K={} k_top={}: max top-block |d·u| {top:.1e} (≤ {}), max |d·v| / max |v^K·v| = {:.2} (≥ 0.5)",
            p.name(),
            r.k,
            r.k_top,
            r.tau,
            dv / vv
        ));
    }
    outcome(pass, parts.join("; "))
}

fn infrastructure() -> Outcome {
    let h = 1e-5;
    let fd = |f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], analytic: &Matrix| -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            for (r, (a, b)) in f(&p).iter().zip(f(&m)).enumerate() {
                worst = worst.max(((a - b) / (2.0 * h) - analytic[(r, i)]).abs());
            }
        }
        worst
    };
    let mut jac_g: f64 = 0.0;
    for (k, spec) in [
        mlp(6, [8, 8], vec![12], Activation::Tanh, 11),
        mlp(8, [6, 6], vec![10, 14], Activation::Softplus, 12),
        structured(16, [8, 8], 13),
    ]
    .into_iter()
    .enumerate()
    {
        let g = Generator::new(spec).unwrap();
        let z = gaussian(g.latent_dim(), 40 + k as u64, 0.8);
        jac_g = jac_g.max(fd(&|z| g.generate_raw(z).unwrap(), &z, &g.jacobian(&z).unwrap()));
    }
    let mut jac_f: f64 = 0.0;
    for (k, shape) in [[6, 6], [8, 8], [4, 10]].into_iter().enumerate() {
        let fe = features(shape, 60 + k as u64);
        let x = gaussian(shape[0] * shape[1], 70 + k as u64, 0.5);
        let sig = eglass_core::SignalTensor::new(x.clone(), shape).unwrap();
        jac_f = jac_f.max(fd(&|x| fe.features_raw(x).unwrap(), &x, &fe.feature_jacobian(&sig).unwrap()));
    }
    let shape = [8, 8];
    let mut adj: f64 = 0.0;
    for spec in [
        OperatorSpec::Downsample { factor: 2 },
        OperatorSpec::rect_mask(shape, [1, 2], [4, 3]),
        blur(),
        OperatorSpec::RandomProjection { m: 17, proj_seed: 9 },
    ] {
        let op = spec.bind(shape).unwrap();
        for probe in 0..5 {
            let x = gaussian(op.input_len(), 300 + probe, 1.0);
            let y = gaussian(op.output_len(), 400 + probe, 1.0);
            adj = adj.max((dot(&op.apply_raw(&x).unwrap(), &y) - dot(&x, &op.adjoint_raw(&y).unwrap())).abs());
        }
    }
    let mut eig: f64 = 0.0;
    for (k, n) in [3usize, 8, 16, 32].into_iter().enumerate() {
        let raw = gaussian(n * n, 700 + k as u64, 1.0);
        let m = Matrix::from_fn(n, n, |i, j| 0.5 * (raw[i * n + j] + raw[j * n + i]));
        let e = sym_eig(&SymmetricMatrix::new(m.clone()).unwrap()).unwrap();
        eig = eig.max(e.reconstruct().sub(&m).unwrap().frobenius() / m.frobenius());
    }
    outcome(
        jac_g <= 1e-6 && jac_f <= 1e-6 && adj <= 1e-10 && eig <= 1e-8,
        format!(
            "generator Jacobian gap {jac_g:.1e}, feature Jacobian gap {jac_f:.1e} (1e-6), adjoint gap {adj:.1e} (1e-10), \
             eigen reconstruction {eig:.1e} (1e-8)"
        ),
    )
}

fn main() {
    let prepared: Vec<(Preset, Prepared)> = Preset::ALL.iter().map(|&p| (p, prepare(&preset(p)).unwrap())).collect();
    let results = [
        ("1 Hessian correctness", hessians()),
        ("2 linear exact-null", exact_null()),
        ("3 direction invariants", invariants(&prepared)),
        ("4 decoupling contrast", contrast(&prepared)),
        ("5 feasibility", feasibility(&prepared)),
        ("6 timing ratio", timing()),
        ("7 correlation profile", correlation(&prepared)),
        ("8 numerical infrastructure", infrastructure()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
