//! End-to-end acceptance battery. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::f64::consts::{FRAC_2_PI, SQRT_2, TAU};
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use oscidamp_cli::{run, ExperimentConfig, MANIFEST_FILE};
use oscidamp_core::geometry::GaugeNorm;
use oscidamp_core::observability::{
    brunovsky_reduce, chain_form, estimate_apriori_constant, kolmogorov_ratio, reconstruct_state,
    EstimateConfig, ObservabilityError, SampledSignal,
};
use oscidamp_core::{adjoint_pair, ObservablePair, OscillatorSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn gauge(frequencies: &[f64]) -> GaugeNorm {
    GaugeNorm::with_defaults(&OscillatorSystem::new(frequencies).unwrap())
}

fn systems() -> Vec<Vec<f64>> {
    vec![vec![1.0], vec![1.0, SQRT_2], vec![0.7, 1.3, 2.1]]
}

fn config(frequencies: &[f64], experiment: &str, parameters: Value, out: &Path) -> ExperimentConfig {
    let doc = json!({
        "system": {"frequencies": frequencies},
        "experiment": experiment,
        "parameters": parameters,
        "output_dir": out,
    });
    ExperimentConfig::from_json(&doc.to_string()).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent <= budget, || format!("took {spent:?}, budget {budget:?}"))
}

/// `(2/π)·|(p₁/ω, p₂)|`: the mean of `|a sin θ|` is `2a/π`.
fn single_geometry() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for omega in [1.0, 2.0] {
        let g = gauge(&[omega]);
        for _ in 0..100 {
            let p = uniform(&mut r, 2);
            let oracle = FRAC_2_PI * (p[0] / omega).hypot(p[1]);
            let err = (g.support().support(&p).map_err(|e| e.to_string())? - oracle).abs();
            let allowed = if omega == 1.0 { 1e-6 * p.norm() } else { 1e-6 };
            ensure(err <= allowed, || format!("ω = {omega}: error {err:e} at {p:?}"))?;
            worst = worst.max(err);
        }
    }
    within_budget(start, Duration::from_secs(1))?;
    Ok(format!("max |H − oracle| = {worst:.2e}"))
}

fn eikonal() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for (i, freqs) in systems().iter().enumerate().cycle().take(200) {
        let g = gauge(freqs);
        let x = uniform(&mut r, 2 * (i + 1));
        let p = g.gauge_gradient(&x).map_err(|e| e.to_string())?;
        let h = g.support().support(&p).map_err(|e| e.to_string())?;
        worst = worst.max((h - 1.0).abs());
    }
    ensure(worst <= 1e-5, || format!("max |H(∇ρ) − 1| = {worst:e}"))?;
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!("max |H(∇ρ) − 1| = {worst:.2e} over 200 states"))
}

fn derivatives() -> Outcome {
    let mut r = rng(3);
    let (mut grad_err, mut annihilation, mut scaling) = (0.0f64, 0.0f64, 0.0f64);
    for (i, freqs) in systems().iter().enumerate().cycle().take(100) {
        let g = gauge(freqs);
        let n = 2 * (i + 1);
        let p = uniform(&mut r, n);
        let sf = g.support();
        let grad = sf.support_gradient(&p).map_err(|e| e.to_string())?.gradient;
        let h = 1e-6 * p.norm();
        let fd = DVector::from_fn(n, |k, _| {
            let mut e = DVector::zeros(n);
            e[k] = h;
            (sf.support(&(&p + &e)).unwrap() - sf.support(&(&p - &e)).unwrap()) / (2.0 * h)
        });
        grad_err = grad_err.max((fd - &grad).norm() / grad.norm());

        let x = uniform(&mut r, n);
        let v = uniform(&mut r, n);
        let hv = g.gauge_hessian_apply(&x, &v).map_err(|e| e.to_string())?;
        annihilation = annihilation.max(x.dot(&hv).abs() / v.norm());
        let far = g.gauge_hessian_apply(&(&x * 10.0), &v).map_err(|e| e.to_string())?;
        let expected = &hv / 10.0;
        scaling = scaling.max((far - &expected).norm() / expected.norm().max(1e-9 * v.norm()));
    }
    ensure(grad_err <= 1e-5, || format!("gradient relative error {grad_err:e}"))?;
    ensure(annihilation <= 1e-6, || format!("⟨x, Hv⟩/‖v‖ = {annihilation:e}"))?;
    ensure(scaling <= 1e-2, || format!("degree −1 scaling error {scaling:e}"))?;
    Ok(format!("gradient {grad_err:.1e}, ⟨x,Hv⟩ {annihilation:.1e}, scaling {scaling:.1e}"))
}

fn flow_invariance() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for (i, freqs) in systems().iter().enumerate().cycle().take(100) {
        let s = OscillatorSystem::new(freqs).unwrap();
        let g = GaugeNorm::with_defaults(&s);
        let x = uniform(&mut r, 2 * (i + 1));
        let t = r.random_range(0.0..20.0);
        let rho = g.gauge(&x).map_err(|e| e.to_string())?;
        let moved = g.gauge(&s.free_motion(&x, t)).map_err(|e| e.to_string())?;
        worst = worst.max((moved - rho).abs() / rho);
    }
    ensure(worst <= 1e-8, || format!("relative drift {worst:e}"))?;
    Ok(format!("max relative drift {worst:.2e}"))
}

/// Time average of `|⟨p, e^{tA}B⟩|` with `e^{tA_j}B_j = (sin ω_j t / ω_j, cos ω_j t)`,
/// midpoint rule over `[0, 10⁴]`.
fn time_average_oracle(p: &DVector<f64>, freqs: &[f64]) -> f64 {
    let (horizon, step) = (1e4, 1e-2);
    let steps = (horizon / step) as usize;
    let sum: f64 = (0..steps)
        .map(|k| {
            let t = (k as f64 + 0.5) * step;
            freqs
                .iter()
                .enumerate()
                .map(|(j, w)| p[2 * j] * (w * t).sin() / w + p[2 * j + 1] * (w * t).cos())
                .sum::<f64>()
                .abs()
        })
        .sum();
    sum / steps as f64
}

fn torus_vs_time() -> Outcome {
    let start = Instant::now();
    let freqs = [1.0, SQRT_2];
    let g = gauge(&freqs);
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = uniform(&mut r, 4);
        let torus = g.support().support(&p).map_err(|e| e.to_string())?;
        worst = worst.max((torus - time_average_oracle(&p, &freqs)).abs());
    }
    ensure(worst <= 1e-3, || format!("max difference {worst:e}"))?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("max |torus − time average| = {worst:.2e}"))
}

/// Largest per-step increase of the `rho` column of a trajectory CSV.
fn csv_max_increase(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "rho").unwrap();
    let rho: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    rho.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

const FROZEN_DECAY_MAX_RATIO: f64 = 1.051_463_796_543_034;

fn decay() -> Outcome {
    let start = Instant::now();
    let tmp = TempDir::new().unwrap();
    let single = tmp.path().join("single");
    let params = json!({"initial_gauge": 50.0, "target_gauge": 10.0, "runs": 20, "seed": 11});
    run(&config(&[1.0], "decay", params, &single)).map_err(|e| e.to_string())?;
    let summary = read_json(&single.join("decay_summary.json"));
    let mut ratios = Vec::new();
    for r in summary["runs"].as_array().unwrap() {
        let ratio = r["ratio"].as_f64().unwrap();
        ensure((0.85..=1.2).contains(&ratio), || format!("single-oscillator ratio {ratio}"))?;
        ensure(r["termination"] == "target_reached", || "a run missed the target".into())?;
        let csv = single.join(r["trajectory"].as_str().unwrap());
        let inc = csv_max_increase(&csv);
        ensure(inc <= 1e-6, || format!("ρ increased by {inc:e} in {}", csv.display()))?;
        ratios.push(ratio);
    }

    let two = tmp.path().join("two");
    let params = json!({"initial_gauge": 100.0, "target_gauge": 20.0, "runs": 20, "seed": 42, "trajectories": false});
    run(&config(&[1.0, SQRT_2], "decay", params, &two)).map_err(|e| e.to_string())?;
    let summary = read_json(&two.join("decay_summary.json"));
    for r in summary["runs"].as_array().unwrap() {
        let speed = r["report"]["mean_speed"].as_f64().unwrap();
        ensure(speed > 0.0, || format!("two-oscillator run without decay ({speed})"))?;
    }
    let max_ratio = summary["max_ratio"].as_f64().unwrap();
    ensure((max_ratio - FROZEN_DECAY_MAX_RATIO).abs() <= 1e-9, || {
        format!("two-oscillator max ratio {max_ratio} drifted from {FROZEN_DECAY_MAX_RATIO}")
    })?;
    within_budget(start, Duration::from_secs(120))?;
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    Ok(format!("single T/(M−N) ∈ [{lo:.4}, {hi:.4}], two-oscillator max {max_ratio:.6}"))
}

fn brunovsky() -> Outcome {
    let mut r = rng(7);
    let mut reduced = 0;
    let mut worst = 0.0f64;
    while reduced < 100 {
        let n = 1 + reduced % 6;
        let pair = ObservablePair::new(
            DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0)),
            DMatrix::from_fn(1, n, |_, _| r.random_range(-1.0..1.0)),
        )
        .unwrap();
        if !pair.observable() {
            continue;
        }
        let form = brunovsky_reduce(&pair).map_err(|e| format!("n = {n}: {e}"))?;
        // Entrywise distance of the stored canonical pair from the chain, and
        // the conjugation identities checked without inverting δ.
        let (a_ref, c_ref) = chain_form(&form.blocks);
        let canonical = (&form.a_can - &a_ref).amax().max((&form.c_can - &c_ref).amax());
        let scale = form.delta.amax();
        let conj_a = (&form.delta * (pair.a() + &form.gamma * pair.c()) - &a_ref * &form.delta).amax() / scale;
        let conj_c = (&form.output_change * pair.c() - &c_ref * &form.delta).amax() / scale;
        ensure(canonical <= 1e-8, || format!("n = {n}: canonical-form error {canonical:e}"))?;
        ensure(conj_a.max(conj_c) <= 1e-8, || format!("n = {n}: conjugation error {:e}", conj_a.max(conj_c)))?;
        worst = worst.max(canonical);
        reduced += 1;
    }
    let unobservable = ObservablePair::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .unwrap();
    ensure(
        brunovsky_reduce(&unobservable) == Err(ObservabilityError::NotObservable),
        || "unobservable pair was reduced".into(),
    )?;
    Ok(format!("100 pairs, max canonical-form error {worst:.2e}; unobservable pair rejected"))
}

fn apriori() -> Outcome {
    let chain = ObservablePair::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
    let base = EstimateConfig { samples: 500, seed: 3, ..Default::default() };
    let c_chain = estimate_apriori_constant(&chain, &base).map_err(|e| e.to_string())?.c_lower;
    ensure((c_chain - 1.0).abs() <= 1e-9, || format!("chain c_lower = {c_chain}"))?;

    let osc = adjoint_pair(&OscillatorSystem::new(&[1.0]).unwrap());
    let at = |start: f64| {
        estimate_apriori_constant(&osc, &EstimateConfig { samples: 1000, seed: 7, start, ..Default::default() })
            .map(|r| r.c_lower)
            .map_err(|e| e.to_string())
    };
    let (c01, c34) = (at(0.0)?, at(3.0)?);
    ensure((c01 - c34).abs() <= 0.05 * c01.min(c34), || format!("[0,1]: {c01}, [3,4]: {c34}"))?;

    let y = SampledSignal::new(0.0, 1, 256, vec![vec![0.0; 257]]).unwrap();
    let f = SampledSignal::new(0.0, 1, 256, vec![vec![0.0; 257]; 2]).unwrap();
    let z = reconstruct_state(&osc, &y, &f).map_err(|e| e.to_string())?;
    ensure(z.max_norm() <= 1e-6, || format!("kernel state norm {:e}", z.max_norm()))?;
    Ok(format!("chain {c_chain:.12}, oscillator [0,1] {c01:.5} vs [3,4] {c34:.5}, kernel ok"))
}

/// Closed form for `sin 2πkt` on `[0, 1]`: `∫|y'| = 4k`, `∫|y''| = 8πk²`,
/// `∫|y| = 2/π`, so both sides equal `4k`.
fn kolmogorov() -> Outcome {
    let mut sine_err = 0.0f64;
    for k in [1.0, 2.0, 4.0] {
        let y = SampledSignal::scalar(0.0, 1, 1024, |t| (TAU * k * t).sin()).unwrap();
        let slope = 4.0 * k;
        let rhs = (8.0 * std::f64::consts::PI * k * k * FRAC_2_PI).sqrt();
        let oracle = slope / rhs;
        let ratio = kolmogorov_ratio(&y, 2).map_err(|e| e.to_string())?.value();
        sine_err = sine_err.max((ratio - oracle).abs());
    }
    ensure(sine_err <= 1e-3, || format!("sine ratio error {sine_err:e}"))?;

    let mut r = rng(9);
    let mut family = 0.0f64;
    for i in 0..500 {
        let degree = r.random_range(1..=8usize);
        let coef: Vec<(f64, f64)> = (0..degree).map(|_| (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
        let y = SampledSignal::scalar(0.0, 1, 1024, |t| {
            coef.iter()
                .enumerate()
                .map(|(j, (a, b))| a * (TAU * (j + 1) as f64 * t).cos() + b * (TAU * (j + 1) as f64 * t).sin())
                .sum()
        })
        .unwrap();
        family = family.max(kolmogorov_ratio(&y, 2 + i % 2).map_err(|e| e.to_string())?.value());
    }
    ensure(family <= 1.05, || format!("family maximum {family}"))?;
    Ok(format!("sine error {sine_err:.1e}, family max {family:.8}"))
}

/// Every artifact except the manifest's wall-clock field must repeat byte for byte.
fn determinism() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let cases = [
        (vec![1.0, SQRT_2], "decay", json!({"initial_gauge": 60.0, "target_gauge": 40.0, "runs": 4, "seed": 5})),
        (vec![1.0], "estimate", json!({"samples": 300, "seed": 7})),
        (vec![1.0, SQRT_2], "geometry", json!({"samples": 20, "time_average_samples": 2, "seed": 5})),
        (vec![1.0], "brunovsky", json!({"kolmogorov_family": 50, "seed": 5})),
    ];
    let mut files = 0;
    for (freqs, experiment, params) in cases {
        let dirs = [tmp.path().join(format!("{experiment}_a")), tmp.path().join(format!("{experiment}_b"))];
        let manifests: Vec<_> = dirs
            .iter()
            .map(|d| run(&config(&freqs, experiment, params.clone(), d)).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        ensure(manifests[0].artifacts == manifests[1].artifacts, || format!("{experiment}: artifact lists differ"))?;
        for name in &manifests[0].artifacts {
            let a = fs::read(dirs[0].join(name)).unwrap();
            let b = fs::read(dirs[1].join(name)).unwrap();
            ensure(a == b, || format!("{experiment}: {name} differs between reruns"))?;
            files += 1;
        }
        let strip = |d: &Path| {
            let mut m = read_json(&d.join(MANIFEST_FILE));
            m.as_object_mut().unwrap().remove("wall_clock_seconds");
            m.as_object_mut().unwrap().insert("config".into(), Value::Null);
            m
        };
        ensure(strip(&dirs[0]) == strip(&dirs[1]), || format!("{experiment}: manifests differ"))?;
    }
    Ok(format!("{files} artifacts byte-identical across reruns"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("single-oscillator geometry oracle", single_geometry),
        ("eikonal identity", eikonal),
        ("gradient and Hessian numerics", derivatives),
        ("flow invariance", flow_invariance),
        ("torus average vs time average", torus_vs_time),
        ("decay experiment", decay),
        ("Brunovsky certificate", brunovsky),
        ("a priori estimate", apriori),
        ("Kolmogorov inequality", kolmogorov),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(detail) => format!("criterion {:>2} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => format!("criterion {:>2} FAIL  {name} ({secs:.1}s): {why}", i + 1),
        };
        writeln!(out, "{line}").unwrap();
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
