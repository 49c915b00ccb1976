//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use leapverify::config::RunConfig;
use leapverify::engine::{LeapConfig, Trainer, VerifyParams};
use leapverify::harness::{self, aggregate, render_text, run_experiment, Experiment, RegimeScope};
use leapverify::optim::FastForwardPolicy;
use leapverify::predict::{predict_linear, predict_quadratic, predict_quadratic_exact, PredictorId};
use leapverify::regime::{label_similarities, regime_breakdown, RegimeLabel, Thresholds};
use leapverify::tasks::{
    CharSeqParams, MlpRegressionParams, QuadBowlParams, Task, TaskConfig,
};
use leapverify::verify::Criterion;
use leapverify::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pv(v: Vec<f64>) -> ParamVector {
    ParamVector::new(v).unwrap()
}

fn rel_err(got: &ParamVector, want: &[f64]) -> f64 {
    let diff: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = want.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

fn predictor_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_lin: f64 = 0.0;
    let mut worst_quad: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..16);
        let delta = rng.random_range(1..200u64);
        let k = rng.random_range(1..200u64);
        let t = rng.random_range(2 * delta..4000) as f64;
        let d = delta as f64;
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 1e-2).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 1e-5).collect();

        let affine = |s: f64| pv(a.iter().zip(&b).map(|(a, b)| a + b * s).collect());
        let want: Vec<f64> = affine(t + k as f64).into_inner();
        let got = predict_linear(&affine(t), &affine(t - d), delta, k).map_err(|e| e.to_string())?;
        worst_lin = worst_lin.max(rel_err(&got.theta_hat, &want));

        let quad = |s: f64| pv((0..n).map(|i| a[i] + b[i] * s + c[i] * s * s).collect());
        let want: Vec<f64> = quad(t + k as f64).into_inner();
        let got = predict_quadratic_exact(&quad(t), &quad(t - d), &quad(t - 2.0 * d), delta, k)
            .map_err(|e| e.to_string())?;
        worst_quad = worst_quad.max(rel_err(&got.theta_hat, &want));
    }
    ensure(worst_lin <= 1e-10, || format!("linear worst relative error {worst_lin:e}"))?;
    ensure(worst_quad <= 1e-10, || format!("exact quadratic worst relative error {worst_quad:e}"))?;

    // hand evaluation of θ_t + (K/Δ)(θ_t − θ_{t−Δ}) + K(K−Δ)/(2Δ²)(θ_t − 2θ_{t−Δ} + θ_{t−2Δ})
    let mut hand_cases = 0;
    for _ in 0..1000 {
        let delta = rng.random_range(1..200u64);
        let k = if hand_cases % 4 == 0 { delta } else { rng.random_range(1..200u64) };
        let th: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let (kf, d) = (k as f64, delta as f64);
        let hand = th[0] + kf / d * (th[0] - th[1]) + kf * (kf - d) / (2.0 * d * d) * (th[0] - 2.0 * th[1] + th[2]);
        let got = predict_quadratic(&pv(vec![th[0]]), &pv(vec![th[1]]), &pv(vec![th[2]]), delta, k)
            .map_err(|e| e.to_string())?;
        ensure(got.theta_hat[0] == hand, || format!("quadratic {} != hand {hand} (Δ={delta}, K={k})", got.theta_hat[0]))?;
        hand_cases += 1;
    }
    for (k, want) in [(50, 17500.0), (100, 30000.0)] {
        let ex = predict_quadratic(&pv(vec![10000.0]), &pv(vec![2500.0]), &pv(vec![0.0]), 50, k)
            .map_err(|e| e.to_string())?;
        ensure(ex.theta_hat[0] == want, || format!("K={k}: got {}, want {want}", ex.theta_hat[0]))?;
    }
    Ok(format!(
        "linear max rel err {worst_lin:.1e}, exact quadratic {worst_quad:.1e} over 1000 cases each; {hand_cases} hand evaluations identical"
    ))
}

fn zero_cost_rejection() -> Outcome {
    let cfg = RunConfig {
        out: PathBuf::from("unused"),
        ..Default::default()
    };
    let task = cfg.task.build().map_err(|e| e.to_string())?;
    let seed = 42;
    let opts = harness::trainer_options(&cfg, seed, Some(&Thresholds::new(0.5, 0.9).unwrap())).map_err(|e| e.to_string())?;
    let mut plain = Trainer::new(task.as_ref(), opts.clone());
    plain.run(None, &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let plain = plain.finish();

    let mut attempted = 0;
    for predictor in [PredictorId::Momentum, PredictorId::Linear, PredictorId::Quadratic] {
        let leap = LeapConfig {
            predictor,
            k: 10,
            criterion: Criterion::Proximity,
            gating: false,
            ff_policy: FastForwardPolicy::Carry,
            force_reject: true,
            verify: VerifyParams {
                epsilon: cfg.epsilon,
                loss_window: cfg.loss_window,
            },
        };
        let mut spec = Trainer::new(task.as_ref(), opts.clone());
        spec.run(Some(&leap), &mut |_| Ok(())).map_err(|e| e.to_string())?;
        let spec = spec.finish();
        attempted += spec.events.len();
        ensure(!spec.events.is_empty(), || format!("{predictor:?}: no speculation happened"))?;
        ensure(spec.skipped_steps == 0, || "skipped steps under force-reject".into())?;
        let same_theta = spec
            .final_theta
            .iter()
            .zip(plain.final_theta.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same_theta, || format!("{predictor:?}: final parameters differ"))?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&spec.train_losses) == bits(&plain.train_losses), || format!("{predictor:?}: training loss log differs"))?;
        ensure(bits(&spec.val_losses()) == bits(&plain.val_losses()), || format!("{predictor:?}: validation loss log differs"))?;
    }
    Ok(format!(
        "{} steps; {attempted} force-rejected speculations; final θ ({} params) and loss logs bit-identical",
        plain.final_step,
        plain.final_theta.len()
    ))
}

fn non_decreasing_up_to_one_inversion(xs: &[f64]) -> bool {
    xs.windows(2).filter(|w| w[1] < w[0]).count() <= 1
}

fn non_increasing_up_to_one_inversion(xs: &[f64]) -> bool {
    xs.windows(2).filter(|w| w[1] > w[0]).count() <= 1
}

fn momentum_catastrophe(exp: &Experiment) -> Outcome {
    let r = &exp.report;
    let mom = r.ratios(PredictorId::Momentum).ok_or("no momentum cells")?;
    let lin = r.ratios(PredictorId::Linear).ok_or("no linear cells")?;
    let ks: Vec<u64> = mom.rows.iter().map(|x| x.k).collect();
    ensure(ks == [5, 10, 25, 50, 75, 100], || format!("K grid {ks:?}"))?;
    let mut ratios = Vec::new();
    let mut detail = Vec::new();
    for (m, l) in mom.rows.iter().zip(&lin.rows) {
        let mr = m.ratio.ok_or_else(|| format!("momentum ratio undefined at K={}", m.k))?;
        let lr = l.ratio.ok_or_else(|| format!("linear ratio undefined at K={}", l.k))?;
        ensure(mr > 1.0, || format!("momentum ratio {mr} <= 1 at K={}", m.k))?;
        if m.k >= 25 {
            ensure(mr >= 10.0 * lr, || format!("K={}: momentum {mr:.3} < 10 × linear {lr:.3}", m.k))?;
        }
        ratios.push(mr);
        detail.push(format!("K={}: {mr:.1}x vs {lr:.3}x", m.k));
    }
    ensure(non_decreasing_up_to_one_inversion(&ratios), || format!("momentum ratios not monotone: {ratios:?}"))?;
    Ok(detail.join(", "))
}

fn graceful_degradation(exp: &Experiment) -> Outcome {
    let r = &exp.report;
    let ks = [5u64, 10, 25, 50, 75, 100];
    let mut detail = Vec::new();
    for (i, seed) in r.seeds.iter().enumerate() {
        let mut rates = Vec::new();
        for k in ks {
            let row = r
                .rate(RegimeScope::All, PredictorId::Linear, k, Criterion::Proximity)
                .ok_or_else(|| format!("no linear row at K={k}"))?;
            let sr = row.per_seed[i];
            let rate = sr.rate.ok_or_else(|| format!("seed {seed}: no evaluable linear cells at K={k}"))?;
            rates.push(rate);
        }
        ensure(rates[0] > rates[3], || format!("seed {seed}: K=5 {:.1}% not above K=50 {:.1}%", rates[0], rates[3]))?;
        ensure(non_increasing_up_to_one_inversion(&rates), || format!("seed {seed}: rates {rates:?}"))?;
        let shown: Vec<String> = rates.iter().map(|x| format!("{x:.0}")).collect();
        detail.push(format!("{seed}: [{}]", shown.join(" ")));
    }
    Ok(format!("linear proximity % over K {ks:?}: {}", detail.join("; ")))
}

fn regime_machinery() -> Outcome {
    let th = Thresholds::new(0.90, 0.99).map_err(|e| e.to_string())?;
    // first checkpoint has no predecessor; the remaining similarities follow the prescribed values
    let sims = [None, Some(0.5), Some(0.95), Some(0.995)];
    let labels = label_similarities(&sims, &th);
    let want = [RegimeLabel::Unknown, RegimeLabel::Chaotic, RegimeLabel::Transition, RegimeLabel::Stable];
    ensure(labels == want, || format!("labels {labels:?}"))?;
    let counts = regime_breakdown(labels.iter().copied());
    ensure(
        (counts.unknown, counts.chaotic, counts.transition, counts.stable) == (1, 1, 1, 1),
        || format!("counts {counts:?}"),
    )?;

    // the same sequence through real fingerprints
    let mut prev: Vec<f64> = vec![1.0, 0.0];
    let mut fps = vec![prev.clone()];
    for s in [0.5f64, 0.95, 0.995] {
        let angle = prev[1].atan2(prev[0]) + s.acos();
        prev = vec![angle.cos(), angle.sin()];
        fps.push(prev.clone());
    }
    let sims: Vec<Option<f64>> = std::iter::once(None)
        .chain(fps.windows(2).map(|w| leapverify::param::cosine_similarity(&w[1], &w[0]).ok()))
        .collect();
    let labels2 = label_similarities(&sims, &th);
    ensure(labels2 == want, || format!("fingerprint labels {labels2:?} from {sims:?}"))?;
    ensure(
        label_similarities(&[None, Some(1.0)], &th) == [RegimeLabel::Unknown, RegimeLabel::Stable],
        || "similarity 1.0 is not stable".into(),
    )?;
    Ok("similarities {—, 0.5, 0.95, 0.995} → {unknown, chaotic, transition, stable}; similarity 1.0 → stable; breakdown 1/1/1/1".into())
}

fn cross_seed_consistency(exp: &Experiment, delta: u64) -> Outcome {
    let exits: Vec<(u64, Option<u64>)> = exp
        .report
        .regimes
        .per_seed
        .iter()
        .map(|s| (s.seed, s.first_chaotic_exit))
        .collect();
    let mut steps = Vec::new();
    for (seed, e) in &exits {
        steps.push(e.ok_or_else(|| format!("seed {seed} has no chaotic→transition boundary"))?);
    }
    let mut sorted = steps.clone();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    let spread = steps.iter().map(|s| s.abs_diff(median)).max().unwrap_or(0);
    ensure(spread <= 2 * delta, || format!("boundaries {steps:?} deviate up to {spread} steps from median {median}"))?;
    Ok(format!(
        "first boundary steps {steps:?}, max deviation from median {median} is {spread} steps (limit {})",
        2 * delta
    ))
}

fn aggregation(exp: &Experiment) -> Outcome {
    let m = harness::MeanStd::of(&[10.0; 5]).ok_or("empty")?;
    ensure(m.cov == Some(0.0) && m.std == 0.0 && m.mean == 10.0, || format!("{m:?}"))?;
    ensure(harness::coefficient_of_variation(&[0.0; 5]).is_none(), || "zero-mean CoV defined".into())?;
    let mut rows = 0;
    for row in &exp.report.acceptance {
        let mut acc = 0;
        let mut den = 0;
        for s in &row.per_seed {
            if let Some(rate) = s.rate {
                let back = rate * s.denominator as f64 / 100.0;
                ensure(back.round() as usize == s.accepted && (back - s.accepted as f64).abs() < 1e-9, || {
                    format!("{row:?}: {rate}% of {} is not {}", s.denominator, s.accepted)
                })?;
            } else {
                ensure(s.denominator == 0, || "rate missing with non-zero denominator".into())?;
            }
            acc += s.accepted;
            den += s.denominator;
        }
        ensure((acc, den) == (row.accepted, row.denominator), || "totals disagree with per-seed counts".into())?;
        rows += 1;
    }
    let mut shuffled = exp.seeds.clone();
    shuffled.reverse();
    shuffled.rotate_left(2);
    let a = aggregate(&exp.seeds);
    let b = aggregate(&shuffled);
    let (ja, jb) = (serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    ensure(ja == jb, || "aggregate depends on seed order".into())?;
    ensure(render_text(&a) == render_text(&b), || "text report depends on seed order".into())?;
    Ok(format!("CoV of identical rates 0%; rate identity holds on {rows} report rows; permuted seeds give identical report"))
}

fn protocol_fidelity(exp: &Experiment, cfg: &RunConfig) -> Outcome {
    let task = cfg.task.build().map_err(|e| e.to_string())?;
    let mut max_cells = 0;
    for s in &exp.seeds {
        ensure(s.regimes.len() == 40, || format!("seed {}: {} checkpoints", s.seed, s.regimes.len()))?;
        let evaluations = s.cells.len() * 3;
        ensure(s.cells.len() <= 40 * 3 * 6 && evaluations <= 2160, || {
            format!("seed {}: {} cells / {evaluations} evaluations", s.seed, s.cells.len())
        })?;
        max_cells = max_cells.max(s.cells.len());
        let stable: Vec<u64> = s.regimes.iter().filter(|r| r.regime == RegimeLabel::Stable).map(|r| r.step).collect();
        for rec in &s.cascades.records {
            ensure(stable.contains(&rec.step), || format!("seed {}: cascade from non-stable step {}", s.seed, rec.step))?;
            ensure(rec.outcome.accepted_depth <= rec.outcome.config.depth, || "depth exceeds D".into())?;
        }
        let configs: Vec<(u32, u64)> = {
            let mut v: Vec<(u32, u64)> = s.cascades.records.iter().map(|r| (r.outcome.config.depth, r.outcome.config.k)).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        if !stable.is_empty() {
            ensure(configs == [(2, 50), (4, 25), (10, 10)], || format!("seed {}: cascade configs {configs:?}", s.seed))?;
        }
    }
    let stable_total = exp.report.stable_checkpoints;

    // a run whose stable checkpoints are relabeled yields an empty table
    let mut run = harness::pass1_train(task.as_ref(), cfg.seeds[0], cfg, Some(&exp.thresholds)).map_err(|e| e.to_string())?;
    for c in &mut run.checkpoints {
        if c.regime == RegimeLabel::Stable {
            Arc::make_mut(c).regime = RegimeLabel::Transition;
        }
    }
    let empty = harness::pass3_cascades(task.as_ref(), &run.checkpoints, cfg).map_err(|e| e.to_string())?;
    ensure(empty.is_empty() && empty.stable_checkpoints == 0, || "cascades ran without stable checkpoints".into())?;
    let seed_result = harness::SeedResult {
        seed: run.seed,
        regimes: harness::regime_rows(&run),
        cells: Vec::new(),
        cascades: empty,
    };
    let report = aggregate(&[seed_result]);
    ensure(report.cascades.is_empty(), || "empty cascade table produced summaries".into())?;
    ensure(render_text(&report).contains("denominator 0"), || "no zero-denominator note".into())?;
    Ok(format!(
        "40 checkpoints/seed; ≤ {max_cells} cells ({} evaluations)/seed; cascades only from the {stable_total} stable checkpoints; empty table handled",
        max_cells * 3
    ))
}

fn gradient_check() -> Outcome {
    let tasks: Vec<(&str, Box<dyn Task>)> = vec![
        ("quad-bowl", TaskConfig::QuadBowl(QuadBowlParams::default()).build().unwrap()),
        ("mlp-reg", TaskConfig::MlpReg(MlpRegressionParams::default()).build().unwrap()),
        ("char-seq", TaskConfig::CharSeq(CharSeqParams::default()).build().unwrap()),
    ];
    let h = 1e-5;
    let mut summary = Vec::new();
    for (name, task) in &tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut worst: f64 = 0.0;
        for draw in 0..100u64 {
            let base = task.init_params(draw);
            let theta = pv(base.iter().map(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect());
            let batch = task.batch(draw, rng.random_range(0..10_000));
            let g = task.loss_and_grad(&theta, &batch).map_err(|e| e.to_string())?.grad;
            let loss = |t: Vec<f64>| task.loss_and_grad(&pv(t), &batch).map(|x| x.loss).map_err(|e| e.to_string());
            let gnorm = g.l2_norm();

            let dir: Vec<f64> = (0..theta.len()).map(|_| rng.sample(StandardNormal)).collect();
            let dn: f64 = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let plus = theta.iter().zip(&dir).map(|(t, d)| t + h * d / dn).collect();
            let minus = theta.iter().zip(&dir).map(|(t, d)| t - h * d / dn).collect();
            let fd = (loss(plus)? - loss(minus)?) / (2.0 * h);
            let an: f64 = g.iter().zip(&dir).map(|(a, d)| a * d / dn).sum();
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3 * gnorm));

            for _ in 0..3 {
                let i = rng.random_range(0..theta.len());
                let mut p = theta.as_slice().to_vec();
                let mut m = p.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (loss(p)? - loss(m)?) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3 * gnorm));
            }
        }
        ensure(worst <= 1e-5, || format!("{name}: worst relative error {worst:e}"))?;
        summary.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("worst relative error over 100 draws: {}", summary.join(", ")))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS [{id}] {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL [{id}] {name} ({secs:.1}s): {d}");
            }
        }
    };

    let t = Instant::now();
    report(1, "predictor exactness oracles", t, predictor_oracles());
    let t = Instant::now();
    report(2, "zero-cost rejection", t, zero_cost_rejection());

    let cfg = RunConfig {
        out: PathBuf::from("unused"),
        ..Default::default()
    };
    let t = Instant::now();
    let exp = run_experiment(&cfg, None);
    let run_secs = t.elapsed().as_secs_f64();
    match &exp {
        Ok(exp) => {
            println!(
                "      default 5-seed mlp-reg experiment: {run_secs:.1}s, thresholds ({:.5}, {:.5})",
                exp.thresholds.tau_low, exp.thresholds.tau_high
            );
            if std::env::var_os("LEAPVERIFY_SHOW_REPORT").is_some() {
                println!("{}", render_text(&exp.report));
            }
        }
        Err(e) => println!("      default experiment failed: {e}"),
    }
    let shared = |f: &dyn Fn(&Experiment) -> Outcome| match &exp {
        Ok(x) => f(x),
        Err(e) => Err(format!("experiment failed: {e}")),
    };
    let t = Instant::now();
    report(3, "momentum catastrophe pattern", t, shared(&momentum_catastrophe));
    let t = Instant::now();
    report(4, "graceful degradation pattern", t, shared(&graceful_degradation));
    let t = Instant::now();
    report(5, "regime machinery", t, regime_machinery());
    let t = Instant::now();
    report(6, "cross-seed regime consistency", t, shared(&|x| cross_seed_consistency(x, cfg.delta)));
    let t = Instant::now();
    report(7, "aggregation correctness", t, shared(&aggregation));
    let t = Instant::now();
    report(8, "protocol fidelity", t, shared(&|x| protocol_fidelity(x, &cfg)));
    let t = Instant::now();
    report(9, "gradient check", t, gradient_check());

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
