//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Failures are reported but only abort the process when
//! `SAWA_ACCEPTANCE_STRICT=1` is set, so `cargo test` still runs every
//! other target and the printed table stays the single source of truth.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;

use sawa_core::datagen::{sample_environment, EnvironmentSpec, SyntheticSpec};
use sawa_core::dataio::standardize_on_train;
use sawa_core::eval::{bias_variance_report, env_errors, EnvLoss, MetricsReport};
use sawa_core::experiment::{validate_config, Base, Experiment, Outcome, RepeatData};
use sawa_core::nn::{Activation, LossKind, MlpModel, OutputHead};
use sawa_core::numeric::{cholesky, correlation, mvn_sample, seeded_rng, solve_spd, Matrix, Rng};
use sawa_core::regress::{ols_fit, wls_fit, LinearModel};
use sawa_core::reweight::{
    constraint_residual, dwr_learn, effective_sample_size, max_abs_weighted_corr, srdo_resample,
    DwrConfig, LsifProblem, WeightSet, MEAN_TOLERANCE,
};
use sawa_core::sawa::{average_weights, decompose_error, pairwise_diversity};

type Check = std::result::Result<String, String>;

struct Line {
    id: &'static str,
    title: &'static str,
    result: Check,
    secs: f64,
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn experiment(name: &str, repeats: Option<usize>) -> Experiment {
    let exp = validate_config(config_path(name)).expect("shipped config validates");
    match repeats {
        None => exp,
        Some(r) => {
            let mut cfg = exp.config.clone();
            cfg.repeats = r;
            Experiment::new(cfg, exp.base_dir.clone(), exp.config_hash.clone())
                .expect("config with more repeats validates")
        }
    }
}

fn aggregate_pair(out: &Outcome, plain: &str, sawa: &str) -> Result<(f64, f64, f64, f64), String> {
    if !out.failures.is_empty() {
        return Err(format!(
            "{} cells failed: {:?}",
            out.failures.len(),
            out.failures
        ));
    }
    let a = out.aggregate_for(plain).ok_or("missing plain aggregate")?;
    let b = out.aggregate_for(sawa).ok_or("missing sawa aggregate")?;
    let (ba, bb) = (
        a.beta_error.ok_or("no beta error")?,
        b.beta_error.ok_or("no beta error")?,
    );
    Ok((ba, bb, a.mean_error, b.mean_error))
}

fn improves_both(out: &Outcome, plain: &str, sawa: &str, budget: f64, secs: f64) -> Check {
    let (ba, bb, ma, mb) = aggregate_pair(out, plain, sawa)?;
    let msg = format!(
        "beta_error {ba:.4} -> {bb:.4}, mean_error {ma:.4} -> {mb:.4}, {secs:.1}s (budget {budget:.0}s)"
    );
    if bb < ba && mb < ma && secs < budget {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tests_of(data: &RepeatData) -> Vec<(String, &Matrix, &[f64])> {
    data.tests
        .iter()
        .map(|t| (t.key.clone(), &t.x, t.y.as_slice()))
        .collect()
}

fn weighted_model(data: &RepeatData, w: &WeightSet) -> Result<LinearModel, String> {
    wls_fit(&data.train_x, &data.train_y, w.as_slice(), 0.0).map_err(|e| e.to_string())
}

fn mean_error(data: &RepeatData, model: &LinearModel) -> Result<f64, String> {
    env_errors(model, tests_of(data), EnvLoss::Rmse)
        .map(|r| r.mean_error)
        .map_err(|e| e.to_string())
}

/// Twenty repeats of the shipped DWR setting, each with a twenty-member pool.
struct PoolStudy {
    data: Vec<RepeatData>,
    pools: Vec<Vec<WeightSet>>,
    truth: Vec<f64>,
    k: usize,
}

fn pool_study() -> Result<PoolStudy, String> {
    let exp = experiment("linear_dwr.toml", Some(20));
    let mut data = Vec::new();
    let mut pools = Vec::new();
    for repeat in 0..20 {
        let d = exp.repeat_data(repeat).map_err(|e| e.to_string())?;
        let pool = exp
            .learner_pool(Base::Dwr, repeat, &d.train_x, 20)
            .map_err(|e| e.to_string())?;
        data.push(d);
        pools.push(pool);
    }
    let truth = data[0]
        .truth
        .clone()
        .ok_or("linear mode has known coefficients")?;
    Ok(PoolStudy {
        data,
        pools,
        truth,
        k: exp.config.sawa.k,
    })
}

fn c3_variance(study: &PoolStudy) -> Check {
    let mut single = Vec::new();
    let mut averaged = Vec::new();
    for (d, pool) in study.data.iter().zip(&study.pools) {
        single.push(weighted_model(d, &pool[0])?.beta);
        let avg = average_weights(&pool[..study.k]).map_err(|e| e.to_string())?;
        averaged.push(weighted_model(d, &avg)?.beta);
    }
    let vs = bias_variance_report(&single, &study.truth).map_err(|e| e.to_string())?;
    let va = bias_variance_report(&averaged, &study.truth).map_err(|e| e.to_string())?;
    let ratio = va.variance / vs.variance;
    let msg = format!(
        "coefficient variance single {:.5}, K={} average {:.5}, ratio {ratio:.3} (need <= 0.7)",
        vs.variance, study.k, va.variance
    );
    if ratio <= 0.7 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_diminishing(study: &PoolStudy) -> Check {
    let ks = [1usize, 5, 10, 20];
    let mut means = BTreeMap::new();
    for &k in &ks {
        let mut acc = 0.0;
        for (d, pool) in study.data.iter().zip(&study.pools).take(10) {
            let avg = average_weights(&pool[..k]).map_err(|e| e.to_string())?;
            acc += mean_error(d, &weighted_model(d, &avg)?)?;
        }
        means.insert(k, acc / 10.0);
    }
    let early = means[&1] - means[&10];
    let late = means[&10] - means[&20];
    let msg = format!(
        "mean_error K=1 {:.5}, K=5 {:.5}, K=10 {:.5}, K=20 {:.5}; gain 1->10 {early:.5}, 10->20 {late:.5}",
        means[&1], means[&5], means[&10], means[&20]
    );
    if early >= 3.0 * late && early > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_stability(out: &Outcome) -> Check {
    let plain: Vec<&MetricsReport> = out.cells_for("dwr").map(|c| &c.report).collect();
    let sawa: Vec<&MetricsReport> = out.cells_for("dwr+sawa").map(|c| &c.report).collect();
    if plain.len() != 10 || sawa.len() != 10 {
        return Err(format!(
            "expected 10 repeats, got {} / {}",
            plain.len(),
            sawa.len()
        ));
    }
    let wins = plain
        .iter()
        .zip(&sawa)
        .filter(|(a, b)| b.std_error < a.std_error)
        .count();
    let msg = format!("std_error lower with SAWA in {wins}/10 repeats (need >= 7)");
    if wins >= 7 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c10_suppression(out: &Outcome, v_b_col: usize) -> Check {
    let coef = |m: &str| -> Result<Vec<f64>, String> {
        out.cells_for(m)
            .map(|c| {
                c.beta
                    .as_ref()
                    .map(|b| b[v_b_col].abs())
                    .ok_or_else(|| format!("{m} has no coefficients"))
            })
            .collect()
    };
    let ols = coef("ols")?;
    let sawa = coef("dwr+sawa")?;
    let wins = ols.iter().zip(&sawa).filter(|(o, s)| s <= o).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let msg = format!(
        "|beta on V_b| SAWA <= OLS in {wins}/{} seeds (need >= 8); means {:.4} vs {:.4}",
        ols.len(),
        mean(&sawa),
        mean(&ols)
    );
    if wins >= 8 && ols.len() == 10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_weights(n: usize, rng: &mut Rng) -> WeightSet {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3) + 1e-3).collect();
    WeightSet::from_raw(raw).expect("positive raw weights")
}

fn c6_decomposition() -> Check {
    let mut rng = seeded_rng(606);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(2..=10);
        let n = rng.random_range(20..=300);
        let pool: Vec<WeightSet> = (0..k).map(|_| random_weights(n, &mut rng)).collect();
        let reference = random_weights(n, &mut rng);
        let d = decompose_error(&pool, &reference).map_err(|e| e.to_string())?;
        let avg = average_weights(&pool).map_err(|e| e.to_string())?;
        let total = avg
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        worst = worst.max((total - d.recomposed()).abs());
    }
    let msg = format!("50 pools, max |total - recomposed| = {worst:.2e} (need <= 1e-10)");
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn correlated_design(n: usize, p: usize, rho: f64, rng: &mut Rng) -> Matrix {
    let cov = Matrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
    mvn_sample(&vec![0.0; p], &cov, n, rng).expect("valid covariance")
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn c7_affine() -> Check {
    let mut rng = seeded_rng(707);
    let cfg = DwrConfig::default();
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..50 {
        let x = correlated_design(200, 5, 0.7, &mut rng);
        let w1 = dwr_learn(&x, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let w2 = dwr_learn(&x, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let avg = average_weights(&[w1.clone(), w2.clone()]).map_err(|e| e.to_string())?;
        let r = |w: &WeightSet| constraint_residual(&x, w.as_slice()).map(|c| norm_inf(&c));
        let (r1, r2, ra) = (
            r(&w1).map_err(|e| e.to_string())?,
            r(&w2).map_err(|e| e.to_string())?,
            r(&avg).map_err(|e| e.to_string())?,
        );
        worst_excess = worst_excess.max(ra - r1.max(r2));
    }
    let msg = format!("50 DWR pairs, max(residual(avg) - max pair residual) = {worst_excess:.2e}");
    if worst_excess <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_vec(d: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn c8_lsif() -> Check {
    let mut rng = seeded_rng(808);
    let mut convex_worst = f64::NEG_INFINITY;
    let mut beaten = 0usize;
    let mut trials = 0usize;
    for _ in 0..10 {
        let x = correlated_design(300, 4, 0.6, &mut rng);
        let resampled = srdo_resample(&x, &mut rng);
        let centers = x.select_rows(&(0..30).collect::<Vec<_>>());
        let problem =
            LsifProblem::build(&x, &resampled, &centers, 1.5, 1e-3).map_err(|e| e.to_string())?;
        let d = centers.rows() + 1;
        for _ in 0..10 {
            let a = random_vec(d, 1.0, &mut rng);
            let b = random_vec(d, 1.0, &mut rng);
            let (la, lb) = (problem.loss(&a), problem.loss(&b));
            for t in [0.25, 0.5, 0.75] {
                let mid: Vec<f64> = a
                    .iter()
                    .zip(&b)
                    .map(|(p, q)| (1.0 - t) * p + t * q)
                    .collect();
                convex_worst = convex_worst.max(problem.loss(&mid) - ((1.0 - t) * la + t * lb));
            }
        }
        let star = problem.solve().map_err(|e| e.to_string())?;
        let l_star = problem.loss(&star);
        for _ in 0..10 {
            let delta = random_vec(d, 0.1, &mut rng);
            let pert: Vec<f64> = star.iter().zip(&delta).map(|(s, e)| s + e).collect();
            trials += 1;
            if l_star < problem.loss(&pert) {
                beaten += 1;
            }
        }
    }
    let msg = format!(
        "max convexity gap {convex_worst:.2e} (need <= 1e-10); closed form beats {beaten}/{trials} perturbations"
    );
    if convex_worst <= 1e-10 && beaten == trials && trials == 100 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn setting_spec() -> SyntheticSpec {
    SyntheticSpec::linear(5, 5, 0.9, 0.1)
}

fn c9_selection_sign() -> Check {
    let spec = setting_spec();
    let mut lows = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..10u64 {
        for (r, slot) in [(2.5, 0usize), (-2.5, 1)] {
            let env = EnvironmentSpec::new(r, vec![0]).map_err(|e| e.to_string())?;
            let mut rng = seeded_rng(9000 + seed);
            let ds = sample_environment(&spec, &env, 5000, &mut rng).map_err(|e| e.to_string())?;
            let c = correlation(&ds.unstable_column(0), &ds.y);
            if slot == 0 {
                lows.0 = lows.0.min(c);
            } else {
                lows.1 = lows.1.max(c);
            }
        }
    }
    let msg = format!(
        "min corr at r=2.5: {:.3} (need > 0.1); max corr at r=-2.5: {:.3} (need < -0.1)",
        lows.0, lows.1
    );
    if lows.0 > 0.1 && lows.1 < -0.1 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Sub-checks of the property suites; each returns a short note or an error.
fn property_checks() -> Vec<(&'static str, Check)> {
    let mut out: Vec<(&'static str, Check)> = Vec::new();
    let mut rng = seeded_rng(1111);

    // numeric
    out.push(("cholesky reconstruction <= 1e-10", {
        let cov = SyntheticSpec::linear(5, 5, 0.9, 0.1).covariance();
        let l = cholesky(&cov).map_err(|e| e.to_string());
        l.and_then(|l| {
            let llt = Matrix::from_fn(10, 10, |i, j| {
                (0..10).map(|k| l.get(i, k) * l.get(j, k)).sum::<f64>()
            });
            let err = llt.max_abs_diff(&cov);
            if err <= 1e-10 {
                Ok(format!("{err:.1e}"))
            } else {
                Err(format!("{err:.1e}"))
            }
        })
    }));
    out.push(("solve_spd residual", {
        let b = correlated_design(40, 6, 0.5, &mut rng);
        let a = Matrix::from_fn(6, 6, |i, j| {
            b.row_iter().map(|r| r[i] * r[j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
        });
        let rhs = random_vec(6, 1.0, &mut rng);
        solve_spd(&a, &rhs)
            .map_err(|e| e.to_string())
            .and_then(|x| {
                let ax = a.matvec(&x).expect("square");
                let res = norm_inf(&ax.iter().zip(&rhs).map(|(p, q)| p - q).collect::<Vec<_>>());
                if res <= 1e-8 * (1.0 + norm_inf(&rhs)) {
                    Ok(format!("{res:.1e}"))
                } else {
                    Err(format!("{res:.1e}"))
                }
            })
    }));
    out.push(("seeded sampling is bit-identical", {
        let cov = setting_spec().covariance();
        let a = mvn_sample(&[0.0; 10], &cov, 100, &mut seeded_rng(5)).expect("sample");
        let b = mvn_sample(&[0.0; 10], &cov, 100, &mut seeded_rng(5)).expect("sample");
        if a == b {
            Ok("equal".into())
        } else {
            Err("differs".into())
        }
    }));

    // nn
    out.push((
        "network gradient check (central differences, 1e-4)",
        nn_gradient_check(&mut rng),
    ));
    out.push(("unit weights equal unweighted loss", {
        let x = correlated_design(8, 3, 0.2, &mut rng);
        let y = random_vec(8, 1.0, &mut rng);
        let m = MlpModel::init(&[3, 4, 1], Activation::Tanh, OutputHead::Linear, &mut rng)
            .expect("network");
        let a = m.loss(&x, &y, None, LossKind::WeightedMse).expect("loss");
        let b = m
            .loss(&x, &y, Some(&[1.0; 8]), LossKind::WeightedMse)
            .expect("loss");
        if a == b {
            Ok("exact".into())
        } else {
            Err(format!("{a} vs {b}"))
        }
    }));

    // datagen
    out.push(("selection_prob in (0, 1]", {
        let mut ok = true;
        for _ in 0..2000 {
            let f: f64 = rng.sample::<f64, _>(StandardNormal) * 5.0;
            let v = random_vec(3, 5.0, &mut rng);
            let r = rng.random_range(1.01..3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let p = sawa_core::datagen::selection_prob(f, &v, r).expect("valid rate");
            ok &= p > 0.0 && p <= 1.0;
        }
        if ok {
            Ok("2000 draws".into())
        } else {
            Err("value outside (0, 1]".into())
        }
    }));
    out.push(("stronger bias gives stronger spurious correlation", {
        let spec = setting_spec();
        let corr_at = |r: f64| -> Result<f64, String> {
            let env = EnvironmentSpec::new(r, vec![0]).map_err(|e| e.to_string())?;
            let ds = sample_environment(&spec, &env, 5000, &mut seeded_rng(77))
                .map_err(|e| e.to_string())?;
            Ok(correlation(&ds.unstable_column(0), &ds.y).abs())
        };
        let mut notes = Vec::new();
        let mut ok = true;
        for (r1, r2) in [(1.5, 2.5), (2.0, 3.0), (-1.5, -2.5), (-2.0, -3.0)] {
            match (corr_at(r1), corr_at(r2)) {
                (Ok(a), Ok(b)) => {
                    ok &= a <= b + 0.02;
                    notes.push(format!("{r1}:{a:.2}<= {r2}:{b:.2}"));
                }
                (Err(e), _) | (_, Err(e)) => return vec![("datagen", Err(e))],
            }
        }
        if ok {
            Ok(notes.join(", "))
        } else {
            Err(notes.join(", "))
        }
    }));
    out.push((
        "unbiased pooled OLS has beta_v within 3 SE of 0",
        pooled_ols_check(&mut rng),
    ));

    // dataio
    out.push(("standardisation uses training statistics only", {
        let train = correlated_design(50, 3, 0.3, &mut rng);
        let test = correlated_design(30, 3, 0.3, &mut rng);
        let shifted = Matrix::from_fn(30, 3, |i, j| test.get(i, j) + 100.0);
        let a = standardize_on_train(&train, &[&test]).map_err(|e| e.to_string());
        let b = standardize_on_train(&train, &[&shifted]).map_err(|e| e.to_string());
        a.and_then(|a| {
            b.map(|b| {
                let same_train = a.train == b.train;
                let diff = b.tests[0].get(0, 0) - a.tests[0].get(0, 0);
                (same_train, diff)
            })
        })
        .and_then(|(same, diff)| {
            if same && diff > 0.0 {
                Ok("test shift leaves training scaling unchanged".into())
            } else {
                Err("training scaling depends on test rows".into())
            }
        })
    }));

    // reweight
    let x = {
        let env = EnvironmentSpec::new(2.1, vec![0]).expect("rate");
        sample_environment(&setting_spec(), &env, 5000, &mut seeded_rng(31))
            .expect("sample")
            .x
    };
    let learned = dwr_learn(&x, &DwrConfig::default(), &mut seeded_rng(32));
    out.push(("learner output satisfies WeightSet invariants", {
        learned.as_ref().map_err(|e| e.to_string()).and_then(|w| {
            let ok = w.as_slice().iter().all(|&v| v >= 0.0 && v.is_finite())
                && (w.mean() - 1.0).abs() <= MEAN_TOLERANCE;
            if ok {
                Ok(format!("mean {:.12}", w.mean()))
            } else {
                Err(format!("mean {}", w.mean()))
            }
        })
    }));
    out.push(("decorrelation halves the largest correlation", {
        learned.as_ref().map_err(|e| e.to_string()).and_then(|w| {
            let before =
                max_abs_weighted_corr(&x, &vec![1.0; x.rows()]).map_err(|e| e.to_string())?;
            let after = max_abs_weighted_corr(&x, w.as_slice()).map_err(|e| e.to_string())?;
            let msg = format!("{before:.3} -> {after:.3}");
            if after <= 0.5 * before {
                Ok(msg)
            } else {
                Err(msg)
            }
        })
    }));
    out.push(("ESS < n for non-uniform weights", {
        learned.as_ref().map_err(|e| e.to_string()).and_then(|w| {
            let ess = effective_sample_size(w);
            let uni = effective_sample_size(&WeightSet::uniform(x.rows()));
            if ess < x.rows() as f64 && ess >= 1.0 && (uni - x.rows() as f64).abs() < 1e-6 {
                Ok(format!("ESS {ess:.1} of {}", x.rows()))
            } else {
                Err(format!("ESS {ess} uniform {uni}"))
            }
        })
    }));

    // sawa
    out.push(("averaging preserves WeightSet invariants", {
        let mut ok = true;
        for _ in 0..50 {
            let k = rng.random_range(1..8);
            let pool: Vec<WeightSet> = (0..k).map(|_| random_weights(100, &mut rng)).collect();
            let avg = average_weights(&pool).expect("pool");
            ok &= avg.as_slice().iter().all(|&v| v >= 0.0) && (avg.mean() - 1.0).abs() <= 1e-12;
        }
        if ok {
            Ok("50 pools".into())
        } else {
            Err("invariant violated".into())
        }
    }));
    out.push((
        "nested-pool variance shrinks with K",
        nested_shrinkage(&mut rng),
    ));

    // regress
    out.push(("uniform WLS equals OLS", {
        let x = correlated_design(60, 4, 0.4, &mut rng);
        let y = random_vec(60, 1.0, &mut rng);
        let a = ols_fit(&x, &y).expect("fit");
        let b = wls_fit(&x, &y, &[1.0; 60], 0.0).expect("fit");
        let d = norm_inf(
            &a.beta
                .iter()
                .zip(&b.beta)
                .map(|(p, q)| p - q)
                .collect::<Vec<_>>(),
        );
        if d <= 1e-10 {
            Ok(format!("{d:.1e}"))
        } else {
            Err(format!("{d:.1e}"))
        }
    }));
    out.push(("WLS weight-scale invariance", {
        let x = correlated_design(60, 4, 0.4, &mut rng);
        let y = random_vec(60, 1.0, &mut rng);
        let w: Vec<f64> = (0..60).map(|_| rng.random_range(0.1..3.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * 7.5).collect();
        let a = wls_fit(&x, &y, &w, 0.0).expect("fit");
        let b = wls_fit(&x, &y, &scaled, 0.0).expect("fit");
        let d = norm_inf(
            &a.beta
                .iter()
                .zip(&b.beta)
                .map(|(p, q)| p - q)
                .collect::<Vec<_>>(),
        );
        if d <= 1e-10 {
            Ok(format!("{d:.1e}"))
        } else {
            Err(format!("{d:.1e}"))
        }
    }));

    // eval
    out.push(("metrics report invariants", {
        let mut ok = true;
        for _ in 0..100 {
            let k = rng.random_range(1..9);
            let losses: BTreeMap<String, f64> = (0..k)
                .map(|i| (i.to_string(), rng.random::<f64>()))
                .collect();
            let r = MetricsReport::from_losses(losses.clone(), None).expect("report");
            let lo = losses.values().copied().fold(f64::INFINITY, f64::min);
            ok &= r.mean_error <= r.max_error + 1e-15
                && lo <= r.mean_error + 1e-15
                && r.std_error >= 0.0
                && r.degenerate == (k == 1);
            let same: BTreeMap<String, f64> = (0..k).map(|i| (i.to_string(), 0.37)).collect();
            ok &= MetricsReport::from_losses(same, None)
                .expect("report")
                .std_error
                == 0.0;
        }
        if ok {
            Ok("100 reports".into())
        } else {
            Err("inconsistent report".into())
        }
    }));

    // experiment
    out.push(("run outputs are byte-identical", {
        let text = r#"
            mode = "synthetic_linear"
            repeats = 2
            master_seed = 11
            output_dir = "unused"
            methods = ["ols", "dwr", "dwr+sawa"]
            [synthetic]
            n_train = 300
            n_test = 200
            r_test = [-2.0, 2.0]
            [sawa]
            k = 3
        "#;
        let exp = Experiment::from_toml(text, ".").expect("config");
        let a = exp.run();
        let b = exp.run();
        match (
            a.runs_csv(),
            b.runs_csv(),
            a.aggregate_csv(),
            b.aggregate_csv(),
        ) {
            (Ok(r1), Ok(r2), Ok(a1), Ok(a2)) if r1 == r2 && a1 == a2 && a.failures.is_empty() => {
                Ok(format!("{} bytes", r1.len() + a1.len()))
            }
            _ => Err("outputs differ between runs".into()),
        }
    }));

    out
}

fn nn_gradient_check(rng: &mut Rng) -> Check {
    let x = correlated_design(5, 4, 0.3, rng);
    let mut worst: f64 = 0.0;
    for (act, head, loss, y) in [
        (
            Activation::Tanh,
            OutputHead::Linear,
            LossKind::WeightedMse,
            random_vec(5, 1.0, rng),
        ),
        (
            Activation::Tanh,
            OutputHead::Sigmoid,
            LossKind::WeightedBce,
            vec![0.0, 1.0, 1.0, 0.0, 1.0],
        ),
    ] {
        let m = MlpModel::init(&[4, 6, 5, 1], act, head, rng).map_err(|e| e.to_string())?;
        let w = [0.5, 1.0, 2.0, 1.5, 0.7];
        let (_, grad) = m
            .loss_and_gradient(&x, &y, Some(&w), loss, 0.0)
            .map_err(|e| e.to_string())?;
        let theta = m.parameters();
        for i in 0..theta.len() {
            let eval = |delta: f64| {
                let mut t = theta.clone();
                t[i] += delta;
                MlpModel::from_parameters(m.layer_sizes(), act, head, &t)
                    .and_then(|mm| mm.loss(&x, &y, Some(&w), loss))
                    .expect("finite parameters")
            };
            let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
            let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    if worst <= 1e-4 {
        Ok(format!("max relative error {worst:.1e}"))
    } else {
        Err(format!("max relative error {worst:.1e}"))
    }
}

fn pooled_ols_check(rng: &mut Rng) -> Check {
    let spec = setting_spec();
    let mut pooled: Option<Matrix> = None;
    let mut y = Vec::new();
    for _ in 0..4 {
        let ds = sawa_core::datagen::gen_base(&spec, 2000, rng).map_err(|e| e.to_string())?;
        pooled = Some(match pooled {
            None => ds.x.clone(),
            Some(p) => p.vstack(&ds.x).map_err(|e| e.to_string())?,
        });
        y.extend(ds.y);
    }
    let x = pooled.expect("four batches");
    let model = ols_fit(&x, &y).map_err(|e| e.to_string())?;
    let pred = sawa_core::regress::Predictor::predict(&model, &x).map_err(|e| e.to_string())?;
    let n = x.rows();
    let p = x.cols();
    let sigma2 = pred
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (n - p - 1) as f64;
    // centred Gram matrix gives the coefficient covariance without the intercept
    let means: Vec<f64> = (0..p)
        .map(|j| x.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let gram = Matrix::from_fn(p, p, |i, j| {
        x.row_iter()
            .map(|r| (r[i] - means[i]) * (r[j] - means[j]))
            .sum::<f64>()
    });
    let mut worst: f64 = 0.0;
    for j in 5..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        let col = solve_spd(&gram, &e).map_err(|e| e.to_string())?;
        let se = (sigma2 * col[j]).sqrt();
        worst = worst.max(model.beta[j].abs() / se);
    }
    // the polynomial term is omitted-variable noise here, so the bound is loose but fair
    if worst <= 3.0 {
        Ok(format!("max |beta_v|/SE {worst:.2}"))
    } else {
        Err(format!("max |beta_v|/SE {worst:.2}"))
    }
}

fn nested_shrinkage(rng: &mut Rng) -> Check {
    // one member stream; the pool mean over all 16 members plays the expected weights
    let x = correlated_design(300, 5, 0.7, rng);
    let pool: Vec<WeightSet> = (0..16)
        .map(|_| dwr_learn(&x, &DwrConfig::default(), rng))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let centre = average_weights(&pool).map_err(|e| e.to_string())?;
    let dist = |k: usize| -> f64 {
        let avg = average_weights(&pool[..k]).expect("prefix");
        avg.as_slice()
            .iter()
            .zip(centre.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / x.rows() as f64
    };
    let (d2, d4, d8) = (dist(2), dist(4), dist(8));
    let msg = format!("K=2 {d2:.4}, K=4 {d4:.4}, K=8 {d8:.4}; diversity {:.2e}", {
        pairwise_diversity(&pool).unwrap_or(f64::NAN)
    });
    if d4 <= 1.1 * d2 && d8 <= 1.1 * d4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn timed(id: &'static str, title: &'static str, f: impl FnOnce() -> Check) -> Line {
    let t = Instant::now();
    let result = f();
    Line {
        id,
        title,
        result,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn print(line: &Line) {
    let (tag, detail) = match &line.result {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!(
        "{tag} [{:>2}] {} ({:.1}s): {detail}",
        line.id, line.title, line.secs
    );
}

fn main() {
    // `cargo test -- --list` and filters pass arguments we have no use for
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    let mut lines = Vec::new();

    let t = Instant::now();
    let dwr_exp = experiment("linear_dwr.toml", None);
    let dwr_out = dwr_exp.run();
    let dwr_secs = t.elapsed().as_secs_f64();
    let synth = dwr_exp.config.synthetic.clone().unwrap_or_default();
    let v_b_col = synth.p_s + synth.biased()[0];
    lines.push(Line {
        id: "1",
        title: "SAWA improves DWR",
        result: improves_both(&dwr_out, "dwr", "dwr+sawa", 180.0, dwr_secs),
        secs: dwr_secs,
    });
    print(&lines[0]);

    lines.push(timed("2", "SAWA improves SRDO", || {
        let t = Instant::now();
        let out = experiment("linear_srdo.toml", None).run();
        let secs = t.elapsed().as_secs_f64();
        improves_both(&out, "srdo_classifier", "srdo_classifier+sawa", 180.0, secs)
    }));
    print(&lines[1]);

    let t = Instant::now();
    let study = pool_study();
    let study_secs = t.elapsed().as_secs_f64();
    println!("     (pool study: 20 repeats x 20 DWR members in {study_secs:.1}s)");
    let with_study = |f: fn(&PoolStudy) -> Check| match &study {
        Ok(s) => f(s),
        Err(e) => Err(e.clone()),
    };
    lines.push(timed("3", "variance reduction", || with_study(c3_variance)));
    print(&lines[2]);
    lines.push(timed("4", "diminishing returns in K", || {
        with_study(c4_diminishing)
    }));
    print(&lines[3]);
    lines.push(timed("5", "stability across environments", || {
        c5_stability(&dwr_out)
    }));
    print(&lines[4]);
    lines.push(timed("6", "exact decomposition identity", c6_decomposition));
    print(&lines[5]);
    lines.push(timed("7", "affine-constraint averaging", c7_affine));
    print(&lines[6]);
    lines.push(timed("8", "LSIF convexity and optimality", c8_lsif));
    print(&lines[7]);
    lines.push(timed("9", "selection-bias sign", c9_selection_sign));
    print(&lines[8]);
    lines.push(timed("10", "spurious-coefficient suppression", || {
        c10_suppression(&dwr_out, v_b_col)
    }));
    print(&lines[9]);
    lines.push(timed("11", "property suites", || {
        let checks = property_checks();
        let failed: Vec<String> = checks
            .iter()
            .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
            .collect();
        for (name, r) in &checks {
            let (tag, m) = match r {
                Ok(m) => ("ok  ", m),
                Err(m) => ("FAIL", m),
            };
            println!("       {tag} {name}: {m}");
        }
        let total = start.elapsed().as_secs_f64();
        if failed.is_empty() && total < 600.0 {
            Ok(format!(
                "{} checks, total elapsed {total:.0}s",
                checks.len()
            ))
        } else {
            Err(format!(
                "{} failed; total elapsed {total:.0}s",
                failed.len()
            ))
        }
    }));
    print(&lines[10]);

    let failed = lines.iter().filter(|l| l.result.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed, {:.1}s",
        lines.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 && std::env::var("SAWA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
