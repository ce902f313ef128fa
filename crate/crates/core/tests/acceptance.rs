//! One line per acceptance criterion, then a single assertion over all of them.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbdp::analysis::{generalization_experiment, Selector};
use cbdp::distributions::{Discrete, Dist1D};
use cbdp::divergences::closed::{renyi_gaussian_exact, renyi_laplace_exact, BoundKind, DivergenceSpec};
use cbdp::divergences::variational::{alpha_dual_objective, kl_dual_objective, restricted_renyi, DualObjective, FunctionClass};
use cbdp::mechanisms::{report, Mechanism};
use cbdp::verify::{demo_family, gaussian_crossover, laplace_crossover, run_suite, table1, CheckResult, Status, Suite};

const TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    match (out, limit) {
        (Ok(msg), Some(limit)) if took > limit => Err(format!("{msg}; took {took:.2?}, limit {limit:?}")),
        (Ok(msg), _) => Ok(format!("{msg} ({took:.2?})")),
        (Err(msg), _) => Err(format!("{msg} ({took:.2?})")),
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name}: got {got}, want {want} ± {tol}"))
    }
}

fn criterion_1() -> Outcome {
    let rows = table1(1.0, 1.0, 2.0, 1).map_err(|e| e.to_string())?;
    let find = |div: &str, mech: &str, class: &str| {
        rows.iter()
            .find(|r| r.divergence == div && r.mechanism == mech && r.class == class && r.bound_kind == BoundKind::Exact)
            .map(|r| r.value)
            .ok_or_else(|| format!("missing row {div}/{mech}/{class}"))
    };
    let e = 1f64;
    let s = 2f64.sqrt() - 1.0;
    // formulas evaluated here, independently of the library
    let lap_kl = e - 1.0 + (-e).exp();
    let lin_lap_kl = s + (1.0 - s * s).ln();
    let lap_renyi2 = (2.0 / 3.0 * e.exp() + 1.0 / 3.0 * (-2.0 * e).exp()).ln();
    close("KL/Laplace/all", find("KL", "Laplace", "all")?, lap_kl, 1e-6)?;
    close("KL/Laplace/lin", find("KL", "Laplace", "lin")?, lin_lap_kl, 1e-6)?;
    close("KL/Gaussian/lin", find("KL", "Gaussian", "lin")?, 0.5, 1e-6)?;
    close("KL/Gaussian/all", find("KL", "Gaussian", "all")?, 0.5, 1e-6)?;
    close("Renyi(2)/Gaussian/all", find("Renyi(2)", "Gaussian", "all")?, 1.0, 1e-6)?;
    close("Renyi(2)/Laplace/all", find("Renyi(2)", "Laplace", "all")?, lap_renyi2, 1e-6)?;
    // and the printed table values
    close("printed 0.3678794", lap_kl, 0.367_879_4, 1e-6)?;
    close("printed 0.2259880", lin_lap_kl, 0.225_988_0, 1e-6)?;
    close("printed 0.6191", lap_renyi2, 0.6191, 5e-5)?;
    Ok("six closed forms match".into())
}

fn status_counts(results: &[&CheckResult]) -> (usize, usize, usize) {
    let count = |s: Status| results.iter().filter(|r| r.status == s).count();
    (count(Status::Pass), count(Status::Fail), count(Status::Inconclusive))
}

fn require_all_pass(name: &str, results: &[&CheckResult], expected: usize) -> Result<(), String> {
    let (pass, fail, inconclusive) = status_counts(results);
    if results.len() < expected {
        return Err(format!("{name}: only {} checks, expected {expected}", results.len()));
    }
    if fail + inconclusive > 0 {
        let bad: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.id.as_str()).take(5).collect();
        return Err(format!("{name}: {pass} pass, {fail} fail, {inconclusive} inconclusive, e.g. {bad:?}"));
    }
    Ok(())
}

fn criterion_2() -> Outcome {
    let results = run_suite(Suite::Duals, 42, 100, TOL);
    let with = |prefix: &str| results.iter().filter(|r| r.id.starts_with(prefix)).collect::<Vec<_>>();
    require_all_pass("lin-KL Laplace grid", &with("duals/lin-kl-laplace/"), 25)?;
    require_all_pass("KL Gaussian grid", &with("duals/kl-gaussian/"), 25)?;
    let indicator = with("duals/indicator/KL/");
    require_all_pass("indicator duals", &indicator, 100)?;
    Ok(format!("50 grid points and {} indicator instances agree", indicator.len()))
}

fn criterion_3() -> Outcome {
    let classes = [
        FunctionClass::linear(1).map_err(|e| e.to_string())?,
        FunctionClass::poly(2).map_err(|e| e.to_string())?,
        FunctionClass::poly(3).map_err(|e| e.to_string())?,
    ];
    let mut worst = f64::INFINITY;
    for laplace in [true, false] {
        for alpha in [1.5, 2.0, 4.0, 8.0] {
            let (p, q, exact) = if laplace {
                (Dist1D::laplace(1.0, 1.0), Dist1D::laplace(0.0, 1.0), renyi_laplace_exact(alpha, 1.0, &[1.0]))
            } else {
                (Dist1D::gaussian(1.0, 1.0), Dist1D::gaussian(0.0, 1.0), renyi_gaussian_exact(alpha, 1.0, &[1.0]))
            };
            let (p, q) = (p.map_err(|e| e.to_string())?, q.map_err(|e| e.to_string())?);
            let mut chain = Vec::new();
            for c in &classes {
                chain.push(restricted_renyi(&p, &q, c, alpha, TOL).map_err(|e| e.to_string())?.value);
            }
            chain.push(exact.map_err(|e| e.to_string())?.value);
            for w in chain.windows(2) {
                let slack = w[1] - w[0];
                worst = worst.min(slack);
                if slack < -1e-7 {
                    return Err(format!("laplace={laplace} alpha={alpha}: chain {chain:?} breaks"));
                }
            }
        }
    }
    Ok(format!("lin <= poly2 <= poly3 <= exact at 8 points, smallest slack {worst:.3e}"))
}

fn criterion_4() -> Outcome {
    let lap = laplace_crossover(1.0).map_err(|e| e.to_string())?.ok_or("no Laplace crossover")?;
    let gau = gaussian_crossover(1.0).map_err(|e| e.to_string())?.ok_or("no Gaussian crossover")?;
    if !(3.1..=3.5).contains(&lap) {
        return Err(format!("Laplace crossover {lap} outside [3.1, 3.5]"));
    }
    if !(2.1..=2.5).contains(&gau) {
        return Err(format!("Gaussian crossover {gau} outside [2.1, 2.5]"));
    }
    Ok(format!("Laplace {lap:.2}, Gaussian {gau:.2}"))
}

fn criterion_5() -> Outcome {
    let mut msgs = Vec::new();
    for (suite, prefixes) in [
        (Suite::Composition, &["sequential-composition/", "parallel-composition/"][..]),
        (Suite::Convexity, &["convexity/"][..]),
        (Suite::Dpi, &["post-processing/linear-gaussian/"][..]),
    ] {
        let results = run_suite(suite, 7, 50, TOL);
        for prefix in prefixes {
            let group: Vec<&CheckResult> = results.iter().filter(|r| r.id.starts_with(prefix)).collect();
            let (pass, fail, inconclusive) = status_counts(&group);
            if group.len() < 50 {
                return Err(format!("{prefix}: only {} instances", group.len()));
            }
            if fail > 0 || inconclusive as f64 >= 0.02 * group.len() as f64 {
                return Err(format!("{prefix}: {pass} pass, {fail} fail, {inconclusive} inconclusive"));
            }
            msgs.push(format!("{}: {pass}/{}", prefix.trim_end_matches('/'), group.len()));
        }
    }
    Ok(msgs.join(", "))
}

fn criterion_6() -> Outcome {
    let results = run_suite(Suite::Pinsker, 11, 1000, TOL);
    let all: Vec<&CheckResult> = results.iter().collect();
    require_all_pass("pinsker", &all, 1000)?;
    let tightest = results.iter().map(|r| r.rhs - r.lhs).fold(f64::INFINITY, f64::min);
    Ok(format!("{} instances hold, smallest margin {tightest:.3e}", results.len()))
}

fn criterion_7() -> Outcome {
    let data = Discrete::on_indices(vec![0.1, 0.2, 0.3, 0.4]).map_err(|e| e.to_string())?;
    let family = demo_family();
    let mut msgs = Vec::new();
    for temperature in [0.3, 1.0, 3.0] {
        let r = generalization_experiment(&family, &Selector::Softmax { temperature }, &data, 6, 100_000, 2024)
            .map_err(|e| e.to_string())?;
        let limit = 8.0 * r.epsilon_hkl.sqrt() + 3.0 * r.std_error;
        if !(r.gap.abs() <= limit) {
            return Err(format!("softmax T={temperature}: |gap| {} > {limit}", r.gap.abs()));
        }
        msgs.push(format!("T={temperature} |gap|={:.2e} <= {limit:.3}", r.gap.abs()));
    }
    let r = generalization_experiment(&family, &Selector::Constant { probs: vec![0.25; 4] }, &data, 6, 100_000, 2024)
        .map_err(|e| e.to_string())?;
    if !(r.gap.abs() <= 3.0 * r.std_error) {
        return Err(format!("constant: |gap| {} > 3 se {}", r.gap.abs(), 3.0 * r.std_error));
    }
    msgs.push(format!("constant |gap|={:.2e}", r.gap.abs()));
    Ok(msgs.join(", "))
}

fn random_instance(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    loop {
        let n = rng.random_range(1..=4);
        let s = rng.random_range(n..=4);
        let d = rng.random_range(1..=4);
        let w = DMatrix::from_fn(d, n, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(s, n, |_, _| rng.random_range(-2.0..2.0));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let sv = a.clone().svd(false, false).singular_values;
        let (hi, lo) = (sv.max(), sv.min());
        if lo > 1e-3 * hi {
            return (w, a, x);
        }
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let err = |e: cbdp::Error| e.to_string();
    let mut worst_zero = 0f64;
    let mut worst_z = 0f64;
    for i in 0..20 {
        let (w, a, x) = random_instance(&mut rng);
        let s = a.nrows();
        let mech = Mechanism::matrix(w.clone(), a.clone(), 1.0).map_err(err)?;
        for alpha in [2.5, 3.0, 5.0] {
            // the adversary sees the released answers W A† ã in R^d
            let class = FunctionClass::linear(w.nrows()).map_err(err)?;
            let r = report(&mech, &class, DivergenceSpec::renyi(alpha).map_err(err)?)
                .map_err(err)?;
            let formula = (1.0 + 2f64.powf(s as f64 * (alpha - 1.0))).ln() / (alpha - 1.0);
            // same formula, evaluated through a different expression
            if (r.epsilon.value - formula).abs() > 1e-14 * formula || r.epsilon.bound_kind != BoundKind::Upper {
                return Err(format!("instance {i} alpha {alpha}: report {:?} vs {formula}", r.epsilon));
            }
        }
        let wx = &w * nalgebra::DVector::from_vec(x.clone());
        let out = mech.clone().with_zero_noise(true).run(&x, 0).map_err(err)?;
        for (o, t) in out.iter().zip(wx.iter()) {
            worst_zero = worst_zero.max((o - t).abs());
        }
        if i < 10 {
            let n = 100_000;
            let d = w.nrows();
            let (mut sum, mut sq) = (vec![0.0; d], vec![0.0; d]);
            for k in 0..n {
                let y = mech.run(&x, 1_000_000 * i as u64 + k).map_err(err)?;
                for j in 0..d {
                    sum[j] += y[j];
                    sq[j] += y[j] * y[j];
                }
            }
            for j in 0..d {
                let mean = sum[j] / n as f64;
                let var = sq[j] / n as f64 - mean * mean;
                let z = (mean - wx[j]).abs() / (var / n as f64).sqrt();
                worst_z = worst_z.max(z);
                if z > 5.0 {
                    return Err(format!("instance {i} coordinate {j}: mean {mean} vs {} ({z:.1} se)", wx[j]));
                }
            }
        }
    }
    if worst_zero >= 1e-10 {
        return Err(format!("zero-noise error {worst_zero:e}"));
    }
    Ok(format!("formula on 20 instances, zero-noise error {worst_zero:.1e}, worst bias {worst_z:.2} se"))
}

fn check_gradient(obj: &DualObjective, theta: &[f64]) -> Result<f64, String> {
    let g = obj.gradient(theta).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = 0f64;
    for i in 0..theta.len() {
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[i] += h;
        dn[i] -= h;
        let fd = (obj.value(&up).map_err(|e| e.to_string())? - obj.value(&dn).map_err(|e| e.to_string())?) / (2.0 * h);
        let rel = (fd - g[i]).abs() / g[i].abs().max(1.0);
        worst = worst.max(rel);
        if rel >= 1e-6 {
            return Err(format!("component {i} at {theta:?}: analytic {} vs difference {fd}", g[i]));
        }
    }
    Ok(worst)
}

fn criterion_9() -> Outcome {
    let err = |e: cbdp::Error| e.to_string();
    let lap = |m: f64| Dist1D::laplace(m, 1.0).map_err(err);
    let gau = |m: f64| Dist1D::gaussian(m, 1.0).map_err(err);
    let lin = FunctionClass::linear(1).map_err(err)?;
    let poly2 = FunctionClass::poly(2).map_err(err)?;
    let objs = [
        kl_dual_objective(&lap(1.0)?, &lap(0.0)?, &lin, TOL).map_err(err)?,
        kl_dual_objective(&gau(1.0)?, &gau(0.0)?, &lin, TOL).map_err(err)?,
        kl_dual_objective(&lap(1.0)?, &lap(0.0)?, &lin.clone().with_constant(false), TOL).map_err(err)?,
        alpha_dual_objective(&lap(1.0)?, &lap(0.0)?, &lin, 1.5, TOL).map_err(err)?,
        alpha_dual_objective(&gau(1.0)?, &gau(0.0)?, &poly2, 3.0, TOL).map_err(err)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0f64;
    for obj in &objs {
        for _ in 0..20 {
            let theta: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
            worst = worst.max(check_gradient(obj, &theta)?);
        }
    }
    Ok(format!("{} objectives x 20 points, worst relative error {worst:.1e}", objs.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 9] = [
        ("table reproduction", Some(Duration::from_secs(1)), criterion_1),
        ("dual-oracle agreement", Some(Duration::from_secs(60)), criterion_2),
        ("class monotonicity", None, criterion_3),
        ("crossover windows", Some(Duration::from_secs(10)), criterion_4),
        ("structural witnesses", None, criterion_5),
        ("Pinsker-type inequality", Some(Duration::from_secs(120)), criterion_6),
        ("generalization", None, criterion_7),
        ("matrix mechanism", None, criterion_8),
        ("gradient checks", None, criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        match timed(limit, f) {
            Ok(msg) => println!("criterion {}: PASS {name}: {msg}", i + 1),
            Err(msg) => {
                println!("criterion {}: FAIL {name}: {msg}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
