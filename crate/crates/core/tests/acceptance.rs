//! Acceptance suite: one test per shipped guarantee, each printing a
//! PASS line with its measured numbers (visible under `--nocapture`; the
//! harness line itself is the pass/fail record otherwise).
//!
//! Every tolerance is pinned here, next to the assertion that uses it.
//! The reference model throughout is the built-in one-dimensional affine
//! family with c0 = 0.5, c1 = 0.2, kappa = 0.5, T = 1, epsilon = 0.05 on
//! the window [-10, 10], whose certified constants have closed forms:
//!
//! ```text
//!   a      = c0 + kappa c1 / 2           = 0.55
//!   Lambda = c0^2 + c1^2/2 + kappa c0 c1 = 0.32
//!   delta  = 1 - kappa                   = 0.5
//!   M      = 1 + kappa                   = 1.5
//!   c      = 1 + epsilon                 = 1.05
//! ```

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ifs_lab::chain::stationary_estimate;
use ifs_lab::climit::{center_g, clt_report, eta_samples, mw_summands, EtaInit, RawObservable};
use ifs_lab::coupling::{q_mass_check, tail_report};
use ifs_lab::measure::EmpiricalMeasure;
use ifs_lab::metrics::{
    bl_distance, bl_distance_with, convergence_curve, fit_geometric_rate, split_half_floor,
    BlOptions, CurveMode,
};
use ifs_lab::model::{
    build_model, check_assumptions, CertifiedConstants, ModelConfig, ModelSpec,
};
use ifs_lab::sampling::{min_mass, sample_coupled_times, RngStream};

/// Reference model at the default quadrature resolution.
fn reference_model() -> ModelSpec {
    build_model(&ModelConfig::default()).expect("reference model builds")
}

/// Reference model with a finer jump-time grid, for checks whose oracle
/// tolerance (1e-6) sits near the default grid's quadrature error.
fn fine_model() -> ModelSpec {
    let cfg = ModelConfig {
        t_nodes: 4096,
        ..ModelConfig::default()
    };
    build_model(&cfg).expect("fine model builds")
}

/// Closed-form certified constants of the reference model (derivation in
/// the module doc above).
fn exact_constants() -> CertifiedConstants {
    CertifiedConstants {
        a: 0.55,
        lambda: 0.32,
        c: 1.05,
        delta: 0.5,
        m_sup: 1.5,
    }
}

#[test]
fn criterion_01_assumption_certification() {
    let t0 = Instant::now();
    let model = reference_model();
    let report = check_assumptions(&model, 2048, 256).expect("scan succeeds");

    const TOL: f64 = 1e-6;
    assert!(
        (report.a_hat - 0.55).abs() <= TOL,
        "a_hat = {} vs 0.55",
        report.a_hat
    );
    assert!(
        (report.lambda_hat - 0.32).abs() <= TOL,
        "Lambda_hat = {} vs 0.32",
        report.lambda_hat
    );
    assert!(
        (report.delta_hat - 0.5).abs() <= TOL,
        "delta_hat = {} vs 0.5",
        report.delta_hat
    );
    assert!(
        (report.m_hat - 1.5).abs() <= TOL,
        "M_hat = {} vs 1.5",
        report.m_hat
    );
    assert!(
        (report.c_hat - 1.05).abs() <= TOL,
        "c_hat = {} vs 1.05",
        report.c_hat
    );
    assert!(
        report.a_hat <= report.lambda_hat.sqrt(),
        "a_hat {} above sqrt(Lambda_hat) {}",
        report.a_hat,
        report.lambda_hat.sqrt()
    );
    assert!(report.all_ok() && report.lambda_half_ok);
    println!(
        "criterion 01 (assumption certification): PASS — a={:.8} L={:.8} d={:.8} M={:.8} c={:.8} in {:.1?}",
        report.a_hat, report.lambda_hat, report.delta_hat, report.m_hat, report.c_hat,
        t0.elapsed()
    );
}

#[test]
fn criterion_02_minimal_coupling_mass() {
    let t0 = Instant::now();
    let model = fine_model();
    let x = [10.0];
    let y = [-10.0];
    // tanh(10) and tanh(-10) are fully separated, so the overlap integral
    // collapses to 1 - 2 kappa / pi.
    let oracle = 1.0 - 2.0 * 0.5 / std::f64::consts::PI;
    let alpha = min_mass(&model, &x, &y);
    assert!(
        (alpha - oracle).abs() <= 1e-6,
        "min_mass = {alpha} vs closed form {oracle}"
    );

    let draws = 100_000usize;
    let mut rng = RngStream::new(2, 9102);
    let mut same = 0usize;
    for _ in 0..draws {
        if sample_coupled_times(&model, &x, &y, &mut rng).same {
            same += 1;
        }
    }
    let p_hat = same as f64 / draws as f64;
    let se = (p_hat * (1.0 - p_hat) / draws as f64).sqrt();
    assert!(
        (p_hat - oracle).abs() <= 3.0 * se,
        "P(same) = {p_hat} vs {oracle}, 3 SE = {}",
        3.0 * se
    );
    println!(
        "criterion 02 (minimal coupling mass): PASS — alpha={alpha:.8} p_hat={p_hat:.5} in {:.1?}",
        t0.elapsed()
    );
}

#[test]
fn criterion_03_bl_solver_correctness() {
    let t0 = Instant::now();
    // Closed forms on point masses.
    let d01 = bl_distance(
        &EmpiricalMeasure::dirac(&[0.0]),
        &EmpiricalMeasure::dirac(&[1.0]),
    )
    .unwrap();
    assert!((d01.value - 1.0).abs() <= 1e-9, "BL(d0,d1) = {}", d01.value);
    let d05 = bl_distance(
        &EmpiricalMeasure::dirac(&[0.0]),
        &EmpiricalMeasure::dirac(&[5.0]),
    )
    .unwrap();
    assert!((d05.value - 2.0).abs() <= 1e-9, "BL(d0,d5) = {}", d05.value);
    let mix = EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    let dmix = bl_distance(&mix, &EmpiricalMeasure::dirac(&[0.0])).unwrap();
    assert!(
        (dmix.value - 0.5).abs() <= 1e-9,
        "BL(mix,d0) = {}",
        dmix.value
    );

    // Fast path vs all-pairs LP on random instances.
    let mut rng = RngStream::new(3, 9103);
    let cloud = |rng: &mut RngStream| {
        let m = 2 + rng.pick(63);
        let pts: Vec<f64> = (0..m).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let mut ws: Vec<f64> = (0..m).map(|_| rng.uniform_in(0.05, 1.0)).collect();
        let total: f64 = ws.iter().sum();
        ws.iter_mut().for_each(|w| *w /= total);
        EmpiricalMeasure::new(1, pts, ws).unwrap()
    };
    let mut max_gap = 0.0f64;
    for _ in 0..200 {
        let mu = cloud(&mut rng);
        let nu = cloud(&mut rng);
        let fast = bl_distance(&mu, &nu).unwrap();
        let all = bl_distance_with(
            &mu,
            &nu,
            &BlOptions {
                force_all_pairs: true,
                ..BlOptions::default()
            },
        )
        .unwrap();
        max_gap = max_gap.max((fast.value - all.value).abs());
    }
    assert!(max_gap <= 1e-8, "fast path vs all-pairs gap {max_gap}");

    // Metric axioms on random triples.
    for _ in 0..100 {
        let a = cloud(&mut rng);
        let b = cloud(&mut rng);
        let c = cloud(&mut rng);
        let ab = bl_distance(&a, &b).unwrap().value;
        let ba = bl_distance(&b, &a).unwrap().value;
        let ac = bl_distance(&a, &c).unwrap().value;
        let cb = bl_distance(&c, &b).unwrap().value;
        assert!((ab - ba).abs() <= 1e-9, "symmetry: {ab} vs {ba}");
        assert!(ab <= ac + cb + 1e-9, "triangle: {ab} > {ac} + {cb}");
        assert!((0.0..=2.0 + 1e-9).contains(&ab), "range: {ab}");
    }
    println!(
        "criterion 03 (BL solver correctness): PASS — max fast/all-pairs gap {max_gap:.2e} in {:.1?}",
        t0.elapsed()
    );
}

#[test]
fn criterion_04_drift_inequalities() {
    let t0 = Instant::now();
    let model = reference_model();
    let consts = exact_constants();
    let drift = ifs_lab::chain::drift_check(
        &model,
        &consts,
        &[10.0],
        20,
        10_000,
        &RngStream::new(4, 9104),
    )
    .expect("drift check runs");
    for row in &drift.rows {
        assert!(
            row.v_within(3.0),
            "n={}: <V> = {} above 0.55^n*10 + 1.05/0.45 = {} + 3 SE",
            row.n,
            row.v_mean,
            row.v_bound
        );
        assert!(
            row.v2_within(3.0),
            "n={}: <V^2> = {} above 2*0.32^n*100 + 4*1.05^2/0.36 = {} + 3 SE",
            row.n,
            row.v2_mean,
            row.v2_bound
        );
    }
    println!(
        "criterion 04 (drift inequalities): PASS — {} rows within 3 SE in {:.1?}",
        drift.rows.len(),
        t0.elapsed()
    );
}

#[test]
fn criterion_05_exponential_convergence() {
    let t0 = Instant::now();
    let model = reference_model();
    let opts = BlOptions::default();

    let fit_curve = |curve: &[ifs_lab::metrics::CurvePoint], label: &str| {
        let pts: Vec<(u32, f64)> = curve
            .iter()
            .filter(|p| p.n >= 1 && p.distance > 2.0 * p.noise_floor)
            .map(|p| (p.n, p.distance))
            .collect();
        let fit = fit_geometric_rate(&pts)
            .unwrap_or_else(|e| panic!("{label}: rate fit failed ({e})"));
        assert!(
            fit.q_hat < 1.0,
            "{label}: q_hat = {} not below 1",
            fit.q_hat
        );
        assert!(
            fit.r_squared >= 0.9,
            "{label}: R^2 = {} below 0.9",
            fit.r_squared
        );
        let last = curve.last().unwrap();
        assert!(
            last.distance <= 2.0 * last.noise_floor + 0.005,
            "{label}: final distance {} has not reached the noise floor {}",
            last.distance,
            last.noise_floor
        );
        (fit.q_hat, fit.r_squared, pts.len())
    };

    let pair = convergence_curve(
        &model,
        CurveMode::Pair {
            x: &[0.0],
            y: &[10.0],
        },
        15,
        100_000,
        &opts,
        &RngStream::new(5, 9105),
    )
    .expect("pair curve");
    let (qp, r2p, kp) = fit_curve(&pair, "pair mode");

    let reference = stationary_estimate(&model, 1_000, 100_000, &RngStream::new(5, 9205))
        .expect("stationary reference");
    let mu0 = EmpiricalMeasure::dirac(&[10.0]);
    let meas = convergence_curve(
        &model,
        CurveMode::Measure {
            mu0: &mu0,
            reference: &reference.measure,
        },
        15,
        100_000,
        &opts,
        &RngStream::new(5, 9305),
    )
    .expect("measure curve");
    let (qm, r2m, km) = fit_curve(&meas, "measure mode");

    println!(
        "criterion 05 (exponential convergence): PASS — pair q={qp:.3} R2={r2p:.3} ({kp} pts), \
         measure q={qm:.3} R2={r2m:.3} ({km} pts) in {:.1?}",
        t0.elapsed()
    );
}

#[test]
fn criterion_06_coupling_time_tails() {
    let t0 = Instant::now();
    let model = reference_model();
    let consts = exact_constants();
    let report = tail_report(
        &model,
        &consts,
        &[0.0],
        &[5.0],
        50,
        10_000,
        0.5,
        0.5,
        &RngStream::new(6, 9106),
    )
    .expect("tail report");

    // Strict decrease is only checkable where the estimator resolves
    // adjacent probabilities: demand it wherever P(tau > n) >= 100
    // replicas' worth of mass; the fitted slope carries the tail.
    let resolved = 100.0 / report.replicas as f64;
    for w in report.rows.windows(2) {
        if w[0].p_tau >= resolved {
            assert!(
                w[1].p_tau < w[0].p_tau,
                "P(tau>{}) = {} not below P(tau>{}) = {}",
                w[1].n,
                w[1].p_tau,
                w[0].n,
                w[0].p_tau
            );
        }
    }
    let fit = report.tau_fit.as_ref().expect("tau tail fit exists");
    assert!(fit.slope < 0.0, "tau log-slope {} not negative", fit.slope);
    assert!(fit.r_squared >= 0.8, "tau fit R^2 = {}", fit.r_squared);
    assert!(
        report.censored_fraction < 0.10,
        "censoring {} above 10%",
        report.censored_fraction
    );

    let doubled = tail_report(
        &model,
        &consts,
        &[0.0],
        &[5.0],
        50,
        20_000,
        0.5,
        0.5,
        &RngStream::new(6, 9106),
    )
    .expect("doubled tail report");
    let rel = (doubled.moment_mean - report.moment_mean).abs() / report.moment_mean;
    assert!(
        rel <= 0.10,
        "hitting-time moment moved {rel:.3} (> 10%) under replica doubling: {} vs {}",
        report.moment_mean,
        doubled.moment_mean
    );
    println!(
        "criterion 06 (coupling-time tails): PASS — slope={:.3} R2={:.3} censored={:.4} \
         moment {:.4}->{:.4} in {:.1?}",
        fit.slope,
        fit.r_squared,
        report.censored_fraction,
        report.moment_mean,
        doubled.moment_mean,
        t0.elapsed()
    );
}

#[test]
fn criterion_07_q_mass_positivity() {
    let t0 = Instant::now();
    let model = reference_model();
    let consts = exact_constants();
    let r = 0.1;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..10)
        .map(|i| {
            let x = -9.0 + 18.0 * i as f64 / 9.0; // spread across the window
            // `x + r` can land one ulp outside the closed ball; walk it back.
            let mut y = x + r;
            while y - x > r {
                y = y.next_down();
            }
            (vec![x], vec![y])
        })
        .collect();
    let report = q_mass_check(
        &model,
        &consts,
        &pairs,
        5,
        r,
        0.9,
        10_000,
        &RngStream::new(7, 9107),
    )
    .expect("q-mass check");
    let bound = report.bound();
    assert!(
        (bound - consts.gamma_bar(0.9).powi(5)).abs() <= 1e-15,
        "bound wiring"
    );
    for row in &report.rows {
        assert!(
            row.p_hat >= bound,
            "pair {} at x distance {}: p_hat = {} below gamma_bar^5 = {bound:.3e}",
            row.pair,
            row.start_distance,
            row.p_hat
        );
    }
    println!(
        "criterion 07 (Q-mass positivity): PASS — min p_hat {:.4} vs bound {bound:.3e} in {:.1?}",
        report
            .rows
            .iter()
            .map(|r| r.p_hat)
            .fold(f64::INFINITY, f64::min),
        t0.elapsed()
    );
}

#[test]
fn criterion_08_clt() {
    let t0 = Instant::now();
    let model = reference_model();
    let st = stationary_estimate(&model, 1_000, 100_000, &RngStream::new(8, 9108))
        .expect("stationary estimate");
    let g = center_g(RawObservable::clamp_at_median(&st.measure), &st.measure);

    let n = 2048;
    let replicas = 4096;
    let etas = eta_samples(
        &model,
        &g,
        n,
        replicas,
        EtaInit::Stationary(&st.measure),
        &RngStream::new(8, 9208),
    )
    .expect("stationary-start eta samples");
    let rep = clt_report(n, &etas).expect("CLT report");
    let ks_ok = rep.ks <= 0.05;

    // Start-independence: eta clouds from two far-apart point starts agree
    // in BL up to the threshold plus the clouds' own statistical floor.
    let start_gap = |n: usize, salt: u64| {
        let ex = eta_samples(
            &model,
            &g,
            n,
            replicas,
            EtaInit::Point(&[0.0]),
            &RngStream::new(8, 9308 + salt),
        )
        .expect("point-start eta at 0");
        let ey = eta_samples(
            &model,
            &g,
            n,
            replicas,
            EtaInit::Point(&[10.0]),
            &RngStream::new(8, 9408 + salt),
        )
        .expect("point-start eta at 10");
        let cx = EmpiricalMeasure::from_scalars(ex).unwrap();
        let cy = EmpiricalMeasure::from_scalars(ey).unwrap();
        let opts = BlOptions::default();
        let floor = split_half_floor(&cx, &opts)
            .unwrap()
            .max(split_half_floor(&cy, &opts).unwrap());
        let d = bl_distance_with(&cx, &cy, &opts).unwrap().value;
        (d, floor)
    };
    let (d, floor) = start_gap(n, 0);
    let start_ok = d <= 0.05 + floor;

    // Sanity: the same test must reject a uniform sample. A deterministic
    // equal-mass grid of the uniform law keeps this flake-free; its exact
    // KS distance to the normal is about 0.057.
    let uniform_grid: Vec<f64> = (0..replicas)
        .map(|i| {
            let u = (i as f64 + 0.5) / replicas as f64;
            (2.0 * u - 1.0) * 3.0f64.sqrt()
        })
        .collect();
    let uni = clt_report(n, &uniform_grid).expect("uniform sanity report");
    let sanity_ok = uni.ks > 0.05;

    if ks_ok && start_ok && sanity_ok {
        println!(
            "criterion 08 (CLT): PASS — KS {:.4}, start gap {d:.4} (floor {floor:.4}), \
             uniform KS {:.4} in {:.1?}",
            rep.ks,
            uni.ks,
            t0.elapsed()
        );
        return;
    }

    // Diagnostic context for the start-independence clause: the gap between
    // the point-start clouds is a finite-n transient of the model itself
    // (the chains need ~O(1) steps to forget starts 10 apart, which costs
    // ~6/sqrt(n) in distance), so it shrinks like n^{-1/2} and crosses the
    // 0.05 threshold only around n ~ 16k. Measure one larger n to show the
    // decay before failing.
    let (d8, floor8) = start_gap(4 * n, 77);
    println!(
        "criterion 08 (CLT): FAIL — KS {:.4} ({}), start gap at n={n}: {d:.4} vs \
         {:.4} = 0.05 + floor ({}), uniform KS {:.4} ({}); gap at n={}: {d8:.4} \
         (floor {floor8:.4}) — decaying like n^(-1/2) as the theory predicts, \
         but above the threshold at the pinned n. {:.1?}",
        rep.ks,
        if ks_ok { "ok" } else { "FAIL" },
        0.05 + floor,
        if start_ok { "ok" } else { "FAIL" },
        uni.ks,
        if sanity_ok { "ok" } else { "FAIL" },
        4 * n,
        t0.elapsed()
    );
    panic!(
        "CLT criterion failed: ks_ok={ks_ok} start_ok={start_ok} (d={d}, threshold={}) \
         sanity_ok={sanity_ok}",
        0.05 + floor
    );
}

#[test]
fn criterion_09_maxwell_woodroofe() {
    let t0 = Instant::now();
    let model = reference_model();
    let st = stationary_estimate(&model, 1_000, 20_000, &RngStream::new(9, 9109))
        .expect("stationary estimate");
    let g = center_g(RawObservable::clamp_at_median(&st.measure), &st.measure);
    let series = mw_summands(
        &model,
        &g,
        &st.measure,
        64,
        512,
        256,
        &RngStream::new(9, 9209),
    )
    .expect("series estimate");
    assert!(!series.se_warning, "series estimate is noise-dominated");
    let t: Vec<(u32, f64)> = series
        .rows
        .iter()
        .map(|&(n, s)| (n, s * (n as f64).powf(1.5)))
        .collect();
    let t8 = t.iter().find(|&&(n, _)| n == 8).map(|&(_, v)| v).unwrap();
    assert!(t8 > 0.0, "T_8 vanished");
    let (n_max, t_max) = t
        .iter()
        .fold((0u32, 0.0f64), |acc, &(n, v)| if v > acc.1 { (n, v) } else { acc });
    assert!(
        t_max <= 2.0 * t8,
        "T_n at n={n_max} is {t_max}, above twice T_8 = {t8}"
    );

    let zero = center_g(RawObservable::zero(), &st.measure);
    let zeros = mw_summands(
        &model,
        &zero,
        &st.measure,
        16,
        8,
        8,
        &RngStream::new(9, 9309),
    )
    .expect("zero-observable series");
    assert!(
        zeros.rows.iter().all(|&(_, s)| s == 0.0),
        "zero observable gave nonzero summands"
    );
    println!(
        "criterion 09 (series boundedness): PASS — max T {t_max:.4} at n={n_max} vs T_8 {t8:.4} in {:.1?}",
        t0.elapsed()
    );
}

#[test]
fn criterion_10_thread_count_reproducibility() {
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_ifs-lab");
    let root = tempfile::tempdir().expect("temp dir");
    let config_path = root.path().join("run.toml");
    std::fs::write(
        &config_path,
        r#"
seed = 7

[model]
t_nodes = 256
x_nodes = 64
cdf_nodes = 512

[experiment]
n = 8
horizon = 20
replicas = 2000
particles = 2000
burn_in = 100
samples = 2000
pairs = 4
q_steps = 3
eta_n = 64
eta_replicas = 1000
mw_n_max = 12
inner_replicas = 16
outer_points = 16
"#,
    )
    .expect("write config");

    for sub in ["check", "simulate", "couple", "distance", "rate", "clt", "mw"] {
        let mut dirs = Vec::new();
        for threads in ["1", "8"] {
            let out = root.path().join(format!("{sub}-t{threads}"));
            let status = Command::new(bin)
                .args([
                    sub,
                    "--config",
                    config_path.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--threads",
                    threads,
                ])
                .status()
                .expect("subcommand spawns");
            assert!(status.success(), "{sub} --threads {threads} failed");
            dirs.push(out);
        }
        let names = |dir: &Path| -> Vec<String> {
            let mut v: Vec<String> = std::fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .filter(|n| n != "run_info.json")
                .collect();
            v.sort();
            v
        };
        let (a, b) = (names(&dirs[0]), names(&dirs[1]));
        assert_eq!(a, b, "{sub}: artifact sets differ between thread counts");
        for name in &a {
            let x = std::fs::read(dirs[0].join(name)).unwrap();
            let y = std::fs::read(dirs[1].join(name)).unwrap();
            assert!(
                x == y,
                "{sub}: {name} differs between --threads 1 and --threads 8"
            );
        }
    }
    println!(
        "criterion 10 (thread-count reproducibility): PASS — 7 subcommands byte-identical in {:.1?}",
        t0.elapsed()
    );
}
