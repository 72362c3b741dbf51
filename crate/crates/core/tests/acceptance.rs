//! Acceptance run: one PASS/FAIL line per criterion and a summary line.
//! Built without the libtest harness so the lines are always printed. The
//! exit status is zero unless `ACCEPTANCE_STRICT=1` is set and a criterion
//! fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use copula_fusion::copula::{sample_copula, Copula, CopulaFamily, CopulaModel, CorrelationMatrix};
use copula_fusion::data::LabelMap;
use copula_fusion::fitting::{fit_copula_ifm, select_family, Criterion, PseudoObservations};
use copula_fusion::fusion::{build_class_models, fuse_dataset, BuildSettings};
use copula_fusion::marginals::KdeModel;
use copula_fusion::metrics::{round6, ConfusionMatrix, MetricsSummary};
use copula_fusion::simulator::{benchmark, generate, BenchmarkReport, Method, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit_secs: u64, t: Duration) -> bool {
    t < Duration::from_secs(limit_secs)
}

fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn corr(dim: usize, data: Vec<f64>) -> CorrelationMatrix {
    CorrelationMatrix::new(dim, data).unwrap()
}

fn rho2(r: f64) -> CorrelationMatrix {
    corr(2, vec![1.0, r, r, 1.0])
}

/// Integral of the density over `(ε, 1−ε)²`, by composite Simpson in
/// normal scores where every family's integrand is smooth.
fn normalization(c: &Copula) -> f64 {
    let lo = -4.753424308822899; // Φ⁻¹(1e-6)
    let n = 800;
    let h = 2.0 * -lo / n as f64;
    let nodes: Vec<(f64, f64, f64)> = (0..=n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (phi_cdf(x), phi_pdf(x), w)
        })
        .collect();
    let mut total = 0.0;
    for &(u, fu, wu) in &nodes {
        let mut row = 0.0;
        for &(v, fv, wv) in &nodes {
            row += wv * c.density(&[u, v]).unwrap() * fv;
        }
        total += wu * fu * row;
    }
    total * h * h / 9.0
}

fn criterion_1() -> Outcome {
    let mut models = Vec::new();
    for r in [-0.5, 0.0, 0.7] {
        models.push(CopulaModel::gaussian(rho2(r)).unwrap());
    }
    for nu in [3.0, 30.0] {
        models.push(CopulaModel::student_t(rho2(0.5), nu).unwrap());
    }
    for t in [0.5, 2.0] {
        models.push(CopulaModel::clayton(2, t).unwrap());
    }
    for t in [-4.0, 4.0] {
        models.push(CopulaModel::frank(2, t).unwrap());
    }
    for t in [1.5, 3.0] {
        models.push(CopulaModel::gumbel(2, t).unwrap());
    }
    models.push(CopulaModel::independence(2).unwrap());
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for m in &models {
        let v = normalization(&Copula::new(m).unwrap());
        worst = worst.max((v - 1.0).abs());
        range = (range.0.min(v), range.1.max(v));
    }
    let t = start.elapsed();
    outcome(
        range.0 >= 0.999 && range.1 <= 1.001 && within(30, t),
        format!(
            "density normalization over {} models: integrals in [{:.6}, {:.6}], {:.1} s",
            models.len(),
            range.0,
            range.1,
            t.as_secs_f64()
        ),
    )
}

/// Multivariate normal density with unit-diagonal covariance, via explicit
/// inverse and determinant.
fn mvn_density(q: &[f64], s: &[f64]) -> f64 {
    let (det, inv) = match q.len() {
        2 => {
            let det = 1.0 - s[1] * s[1];
            (det, vec![1.0 / det, -s[1] / det, -s[1] / det, 1.0 / det])
        }
        3 => {
            let (a, b, c) = (s[1], s[2], s[5]);
            let det = 1.0 + 2.0 * a * b * c - a * a - b * b - c * c;
            let cof = vec![
                1.0 - c * c,
                b * c - a,
                a * c - b,
                b * c - a,
                1.0 - b * b,
                a * b - c,
                a * c - b,
                a * b - c,
                1.0 - a * a,
            ];
            (det, cof.iter().map(|x| x / det).collect())
        }
        _ => unreachable!(),
    };
    let d = q.len();
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += q[i] * inv[i * d + j] * q[j];
        }
    }
    (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sigmas = [
        corr(2, vec![1.0, 0.6, 0.6, 1.0]),
        corr(2, vec![1.0, -0.85, -0.85, 1.0]),
        corr(3, vec![1.0, 0.5, 0.3, 0.5, 1.0, -0.2, 0.3, -0.2, 1.0]),
        corr(3, vec![1.0, 0.8, 0.7, 0.8, 1.0, 0.75, 0.7, 0.75, 1.0]),
    ];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for sigma in &sigmas {
        let d = sigma.dim();
        let c = Copula::new(&CopulaModel::gaussian(sigma.clone()).unwrap()).unwrap();
        for _ in 0..250 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let u: Vec<f64> = q.iter().map(|&x| phi_cdf(x)).collect();
            let lhs = c.density(&u).unwrap() * q.iter().map(|&x| phi_pdf(x)).product::<f64>();
            let rhs = mvn_density(&q, sigma.as_slice());
            worst = worst.max((lhs - rhs).abs() / rhs);
            count += 1;
        }
    }
    outcome(
        worst < 1e-10,
        format!("Gaussian copula vs normal density at {count} points (d=2,3): worst relative error {worst:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let models = [
        CopulaModel::clayton(2, 0.5).unwrap(),
        CopulaModel::clayton(2, 2.0).unwrap(),
        CopulaModel::clayton(2, 5.0).unwrap(),
        CopulaModel::frank(2, -4.0).unwrap(),
        CopulaModel::frank(2, 4.0).unwrap(),
        CopulaModel::frank(2, 10.0).unwrap(),
        CopulaModel::gumbel(2, 1.5).unwrap(),
        CopulaModel::gumbel(2, 3.0).unwrap(),
    ];
    let stencil = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for m in &models {
        let c = Copula::new(m).unwrap();
        for _ in 0..200 {
            let u: f64 = rng.random_range(0.05..0.95);
            let v: f64 = rng.random_range(0.05..0.95);
            let h = 1e-3;
            let mut mixed = 0.0;
            for (a, wa) in stencil {
                for (b, wb) in stencil {
                    mixed += wa * wb * c.cdf(&[u + a * h, v + b * h]).unwrap();
                }
            }
            mixed /= 144.0 * h * h;
            let d = c.density(&[u, v]).unwrap();
            worst = worst.max((d - mixed).abs() / d);
        }
    }
    outcome(
        worst < 1e-4,
        format!(
            "Archimedean densities vs 4th-order mixed partials, {} models x 200 points: worst relative error {worst:.2e}",
            models.len()
        ),
    )
}

const N_FIT: usize = 20_000;

fn recovery_truths() -> Vec<CopulaModel> {
    vec![
        CopulaModel::gaussian(rho2(0.6)).unwrap(),
        CopulaModel::student_t(rho2(0.6), 5.0).unwrap(),
        CopulaModel::clayton(2, 2.0).unwrap(),
        CopulaModel::frank(2, 5.0).unwrap(),
        CopulaModel::gumbel(2, 2.0).unwrap(),
    ]
}

fn recovered(truth: &CopulaModel, fit: &CopulaModel) -> bool {
    let p = &truth.params;
    let q = &fit.params;
    match truth.family {
        CopulaFamily::Gaussian => {
            (p.sigma.as_ref().unwrap().get(0, 1) - q.sigma.as_ref().unwrap().get(0, 1)).abs() <= 0.03
        }
        CopulaFamily::StudentT => {
            let rho_ok =
                (p.sigma.as_ref().unwrap().get(0, 1) - q.sigma.as_ref().unwrap().get(0, 1)).abs() <= 0.03;
            let r = q.nu.unwrap() / p.nu.unwrap();
            rho_ok && (1.0 / 1.5..=1.5).contains(&r)
        }
        _ => {
            let (a, b) = (p.theta.unwrap(), q.theta.unwrap());
            ((b - a) / a).abs() <= 0.05
        }
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, truth) in recovery_truths().iter().enumerate() {
        let mut hits = 0;
        for seed in 0..20u64 {
            let u = sample_copula(truth, N_FIT, 4000 + 100 * k as u64 + seed).unwrap();
            let fit = fit_copula_ifm(truth.family, &PseudoObservations::new(u).unwrap()).unwrap();
            hits += recovered(truth, &fit.model()) as usize;
        }
        pass &= hits >= 19;
        parts.push(format!("{} {hits}/20", truth.family));
    }
    let t = start.elapsed();
    outcome(
        pass && within(120, t),
        format!("parameter recovery at n=2e4: {}, {:.1} s", parts.join(", "), t.as_secs_f64()),
    )
}

fn criterion_5() -> (Outcome, String) {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, truth) in recovery_truths().iter().enumerate() {
        let mut hits = 0;
        for seed in 0..20u64 {
            let u = sample_copula(truth, N_FIT, 5000 + 100 * k as u64 + seed).unwrap();
            let sel = select_family(&PseudoObservations::new(u).unwrap(), &CopulaFamily::CANDIDATES, Criterion::Aic)
                .unwrap();
            let fit = sel.chosen_fit();
            let ok = sel.chosen == truth.family
                || (truth.family == CopulaFamily::Gaussian
                    && sel.chosen == CopulaFamily::StudentT
                    && fit.params.nu.unwrap() >= 30.0);
            hits += ok as usize;
        }
        pass &= hits >= 18;
        parts.push(format!("{} {hits}/20", truth.family));
    }
    let t = start.elapsed();
    // independence is nested in every other family, so AIC has no
    // consistency guarantee for it; reported only
    let mut indep = 0;
    for seed in 0..20u64 {
        let u = sample_copula(&CopulaModel::independence(2).unwrap(), N_FIT, 5900 + seed).unwrap();
        let sel = select_family(&PseudoObservations::new(u).unwrap(), &CopulaFamily::CANDIDATES, Criterion::Aic)
            .unwrap();
        indep += (sel.chosen == CopulaFamily::Independence) as usize;
    }
    (
        outcome(
            pass && within(180, t),
            format!("AIC selection at n=2e4: {}, {:.1} s", parts.join(", "), t.as_secs_f64()),
        ),
        format!("independence truth selected as independence in {indep}/20 seeds"),
    )
}

fn brute_ln_kde(kde: &KdeModel, x: f64) -> f64 {
    let h = kde.bandwidth();
    let e: Vec<f64> = kde.samples().iter().map(|s| -0.5 * ((x - s) / h).powi(2)).collect();
    let top = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = e.iter().map(|v| (v - top).exp()).sum();
    top + sum.ln() - (kde.len() as f64 * h).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn criterion_6() -> Outcome {
    let cfg = ScenarioConfig {
        train_images: 5,
        test_images: 1,
        seed: 6,
        ..ScenarioConfig::default()
    };
    let data = generate(&cfg).unwrap();
    let settings = BuildSettings {
        family: Some(CopulaFamily::Independence),
        ..BuildSettings::default()
    };
    let (set, _) = build_class_models(&data.train, &settings).unwrap();
    let img = &data.test[0];
    let fused = fuse_dataset(&set, &img.tensors, false).unwrap();
    let (mut same, mut total) = (0, 0);
    for p in 0..img.labels.len() {
        let lp: Vec<f64> = set
            .models
            .iter()
            .enumerate()
            .map(|(m, cm)| {
                cm.prior.ln()
                    + cm
                        .marginals
                        .iter()
                        .zip(&img.tensors)
                        .map(|(k, t)| brute_ln_kde(k, t.pixel(p)[m] as f64))
                        .sum::<f64>()
            })
            .collect();
        if !lp.iter().all(|v| v.is_finite()) {
            continue;
        }
        let mut best = 0;
        for (m, v) in lp.iter().enumerate() {
            if *v > lp[best] {
                best = m;
            }
        }
        total += 1;
        same += (fused.labels.as_slice()[p] as usize == best) as usize;
    }
    outcome(
        same == total && total + fused.fallbacks == img.labels.len(),
        format!(
            "independence fusion vs brute-force naive Bayes on 64x64, M=4, L=3: {same}/{total} match, {} fallbacks",
            fused.fallbacks
        ),
    )
}

fn criterion_7() -> Outcome {
    let pred = LabelMap::new(2, 2, vec![1, 1, 2, 2]).unwrap();
    let gt = LabelMap::new(2, 2, vec![1, 2, 2, 2]).unwrap();
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&pred, &gt, &[]).unwrap();
    let s = MetricsSummary::from_confusion(&cm, false).unwrap();
    let example = round6(s.oa) == 75.0 && round6(s.mean_ca) == 83.333333 && round6(s.miou) == 0.583333;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs: Vec<(LabelMap, LabelMap)> = (0..10)
        .map(|_| {
            let g: Vec<u16> = (0..64).map(|_| rng.random_range(0..5)).collect();
            let p: Vec<u16> = g
                .iter()
                .map(|&x| if rng.random_bool(0.7) { x } else { rng.random_range(0..5) })
                .collect();
            (LabelMap::new(8, 8, p).unwrap(), LabelMap::new(8, 8, g).unwrap())
        })
        .collect();
    let shard = |range: std::ops::Range<usize>| {
        let mut cm = ConfusionMatrix::new(5);
        for (p, g) in &pairs[range] {
            cm.accumulate(p, g, &[]).unwrap();
        }
        cm
    };
    let whole = shard(0..10);
    let (a, b, c) = (shard(0..3), shard(3..7), shard(7..10));
    let mut left = a.clone();
    left.merge(&b).unwrap();
    left.merge(&c).unwrap();
    let mut bc = b.clone();
    bc.merge(&c).unwrap();
    let mut right = a.clone();
    right.merge(&bc).unwrap();
    let assoc = left == whole && right == whole;
    outcome(
        example && assoc,
        format!(
            "metrics: OA {:.6}, mean CA {:.6}, mIOU {:.6}; shard/merge over 10 images {}",
            s.oa,
            s.mean_ca,
            s.miou,
            if assoc { "associative" } else { "NOT associative" }
        ),
    )
}

const SINGLES: [CopulaFamily; 5] = [
    CopulaFamily::Gaussian,
    CopulaFamily::StudentT,
    CopulaFamily::Clayton,
    CopulaFamily::Frank,
    CopulaFamily::Gumbel,
];

fn oa(r: &BenchmarkReport, m: Method) -> f64 {
    r.row(m).unwrap().metrics.oa
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criteria_8_9() -> (Outcome, Outcome, Vec<String>) {
    let start = Instant::now();
    let methods = Method::all(3);
    let reports: Vec<BenchmarkReport> = (1..=20u64)
        .map(|seed| {
            let cfg = ScenarioConfig {
                seed,
                ..ScenarioConfig::default()
            };
            benchmark(&cfg, &methods).unwrap()
        })
        .collect();
    let t = start.elapsed();

    let good_seeds = reports
        .iter()
        .filter(|r| {
            let p = oa(r, Method::Proposed);
            SINGLES.iter().all(|&f| p >= oa(r, Method::Single(f)) - 0.1)
        })
        .count();
    let mean_prop = mean(reports.iter().map(|r| oa(r, Method::Proposed)));
    let single_means: Vec<(CopulaFamily, f64)> = SINGLES
        .iter()
        .map(|&f| (f, mean(reports.iter().map(|r| oa(r, Method::Single(f))))))
        .collect();
    let beats_mean = single_means.iter().all(|(_, m)| mean_prop > *m);
    let c8 = outcome(
        good_seeds >= 18 && beats_mean && within(300, t),
        format!(
            "class-specific vs single family: within 0.1 pp of every family in {good_seeds}/20 seeds; mean OA {mean_prop:.4} vs {}; {:.1} s",
            single_means
                .iter()
                .map(|(f, m)| format!("{f} {m:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            t.as_secs_f64()
        ),
    );

    let baselines = [Method::Lop, Method::MajorityVote, Method::Logit];
    let base_means: Vec<(String, f64)> = baselines
        .iter()
        .map(|&m| (m.name(), mean(reports.iter().map(|r| oa(r, m)))))
        .collect();
    let c9 = outcome(
        base_means.iter().all(|(_, m)| mean_prop >= *m),
        format!(
            "baselines: mean OA proposed {mean_prop:.4} vs {}",
            base_means
                .iter()
                .map(|(n, m)| format!("{n} {m:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );

    let mut info = Vec::new();
    let beats_worst = reports
        .iter()
        .filter(|r| {
            let worst = (0..3)
                .map(|i| oa(r, Method::Classifier(i)))
                .fold(f64::INFINITY, f64::min);
            oa(r, Method::Proposed) > worst
        })
        .count();
    info.push(format!("proposed OA above the worst single classifier in {beats_worst}/20 seeds"));
    let planted = reports
        .iter()
        .filter(|r| {
            r.chosen[0] == CopulaFamily::Clayton
                && matches!(r.chosen[1], CopulaFamily::Gaussian | CopulaFamily::StudentT)
        })
        .count();
    info.push(format!("planted families recovered (Clayton, Gaussian or Student-t) in {planted}/20 seeds"));
    (c8, c9, info)
}

fn run_cli(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_copula-fusion"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn pipeline(dir: &Path) -> bool {
    run_cli(&["simulate", "--out-dir", "data", "--seed", "10"], dir)
        && run_cli(&["fit", "--manifest", "data/manifest.json", "--out", "model.json"], dir)
        && run_cli(
            &["fuse", "--manifest", "data/manifest.json", "--model", "model.json", "--out-dir", "pred", "--scores"],
            dir,
        )
        && run_cli(
            &["eval", "--manifest", "data/manifest.json", "--pred-dir", "pred", "--json", "metrics.json"],
            dir,
        )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if !(pipeline(a.path()) && pipeline(b.path())) {
        return outcome(false, "pipeline run failed");
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    let preds = fa.iter().filter(|(n, _)| n.starts_with("pred")).count();
    outcome(
        fa == fb && preds > 0,
        format!(
            "determinism: {} files (model, {preds} prediction files, metrics) {} across two runs",
            fa.len(),
            if fa == fb { "byte-identical" } else { "DIFFER" }
        ),
    )
}

fn report(n: &str, o: &Outcome) -> bool {
    println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let mut results = Vec::new();
    let mut record = |n: &str, o: &Outcome| results.push(report(n, o));
    record("1", &criterion_1());
    record("2", &criterion_2());
    record("3", &criterion_3());
    record("4", &criterion_4());
    let (c5, indep) = criterion_5();
    record("5", &c5);
    println!("info: {indep}");
    record("6", &criterion_6());
    record("7", &criterion_7());
    let (c8, c9, info) = criteria_8_9();
    record("8", &c8);
    record("9", &c9);
    for line in info {
        println!("info: {line}");
    }
    record("10", &criterion_10());
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
