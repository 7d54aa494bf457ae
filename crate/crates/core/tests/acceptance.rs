//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use ucl_core::boundary::{psc_loss, ucl_loss, MarginPolicy};
use ucl_core::encoder::{encode, ViewEncoder};
use ucl_core::evidential::{
    combine_views, dempster_combine, error_loss, tape_error_loss, tape_fuse, Opinion,
    UncertaintyTable,
};
use ucl_core::graphs::{build_view_graph, generate_synthetic, MessageRecord, SyntheticConfig, View};
use ucl_core::harness::{
    evaluate, gradient_suite, train, train_with, Batch, EpochRecord, GraphContext, Group, Model,
    ModelVars, StepTerms, TrainConfig, TrainOutcome, Variant,
};
use ucl_core::numkit::{Matrix, Tape};

type Outcome = Result<String, String>;

fn random_opinion(rng: &mut ChaCha8Rng, classes: usize) -> Opinion {
    let raw: Vec<f64> = (0..=classes).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    Opinion::new(raw[..classes].iter().map(|x| x / total).collect(), raw[classes] / total).unwrap()
}

fn max_diff(a: &Opinion, b: &Opinion) -> f64 {
    a.beliefs()
        .iter()
        .zip(b.beliefs())
        .map(|(x, y)| (x - y).abs())
        .fold((a.uncertainty() - b.uncertainty()).abs(), f64::max)
}

fn mass_error(m: &Opinion) -> f64 {
    (m.beliefs().iter().sum::<f64>() + m.uncertainty() - 1.0).abs()
}

fn opinion_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for classes in [2, 3, 4, 10] {
        let vacuous = Opinion::vacuous(classes);
        for _ in 0..1000 {
            let a = random_opinion(&mut rng, classes);
            let b = random_opinion(&mut rng, classes);
            let c = random_opinion(&mut rng, classes);
            let ab = dempster_combine(&a, &b).map_err(|e| e.to_string())?;
            let ba = dempster_combine(&b, &a).map_err(|e| e.to_string())?;
            let ab_c = dempster_combine(&ab, &c).map_err(|e| e.to_string())?;
            let bc = dempster_combine(&b, &c).map_err(|e| e.to_string())?;
            let a_bc = dempster_combine(&a, &bc).map_err(|e| e.to_string())?;
            let left = dempster_combine(&vacuous, &a).map_err(|e| e.to_string())?;
            let right = dempster_combine(&a, &vacuous).map_err(|e| e.to_string())?;
            for err in [
                mass_error(&ab),
                mass_error(&ab_c),
                max_diff(&ab, &ba),
                max_diff(&ab_c, &a_bc),
                max_diff(&left, &a),
                max_diff(&right, &a),
            ] {
                worst = worst.max(err);
            }
        }
    }
    if worst <= 1e-9 {
        Ok(format!("max deviation {worst:.2e}"))
    } else {
        Err(format!("max deviation {worst:.2e} > 1e-9"))
    }
}

/// Combines three mass functions over singletons plus the whole frame by
/// enumerating every triple of focal elements.
fn joint_mass_oracle(views: &[Opinion; 3]) -> (Vec<f64>, f64) {
    let classes = views[0].classes();
    let mass = |m: &Opinion, f: usize| if f == classes { m.uncertainty() } else { m.beliefs()[f] };
    let mut singleton = vec![0.0; classes];
    let mut frame = 0.0;
    let mut conflict = 0.0;
    for f0 in 0..=classes {
        for f1 in 0..=classes {
            for f2 in 0..=classes {
                let w = mass(&views[0], f0) * mass(&views[1], f1) * mass(&views[2], f2);
                // intersection of focal sets; `classes` stands for the frame
                let specific: Vec<usize> = [f0, f1, f2].into_iter().filter(|&f| f != classes).collect();
                match specific.first() {
                    None => frame += w,
                    Some(&s) if specific.iter().all(|&f| f == s) => singleton[s] += w,
                    Some(_) => conflict += w,
                }
            }
        }
    }
    let norm = 1.0 - conflict;
    (singleton.iter().map(|m| m / norm).collect(), frame / norm)
}

fn fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let classes = rng.random_range(2..=4);
        let views = [0, 1, 2].map(|_| random_opinion(&mut rng, classes));
        let fused = combine_views(&views).map_err(|e| e.to_string())?;
        let (b, u) = joint_mass_oracle(&views);
        worst = worst.max((fused.uncertainty() - u).abs());
        for (x, y) in fused.beliefs().iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    if worst <= 1e-9 {
        Ok(format!("max deviation {worst:.2e}"))
    } else {
        Err(format!("max deviation {worst:.2e} > 1e-9"))
    }
}

fn error_loss_oracle() -> Outcome {
    let hand = [
        (vec![2.0, 1.0, 1.0], 5.0 / 6.0),
        (vec![1.0, 1.0, 1.0], 1.5),
        (vec![101.0, 1.0, 1.0], 1.0 / 101.0 + 1.0 / 102.0),
    ];
    for (alpha, want) in &hand {
        let got = error_loss(alpha, 0).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-10 {
            return Err(format!("alpha {alpha:?}: {got} vs {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draws = 1_000_000;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let classes = rng.random_range(2..=5);
        let alpha: Vec<f64> = (0..classes).map(|_| rng.random_range(1.0..6.0)).collect();
        let label = rng.random_range(0..classes);
        let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let mut sum = 0.0;
        let mut g = vec![0.0; classes];
        for _ in 0..draws {
            for (x, dist) in g.iter_mut().zip(&gammas) {
                *x = dist.sample(&mut rng);
            }
            let total: f64 = g.iter().sum();
            sum -= (g[label] / total).ln();
        }
        let mc = sum / draws as f64;
        let closed = error_loss(&alpha, label).map_err(|e| e.to_string())?;
        worst = worst.max((mc - closed).abs());
    }
    if worst <= 1e-2 {
        Ok(format!("hand values exact; Monte-Carlo max deviation {worst:.2e}"))
    } else {
        Err(format!("Monte-Carlo max deviation {worst:.2e} > 1e-2"))
    }
}

fn gradient_checks() -> Outcome {
    let entries = gradient_suite(7).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for e in &entries {
        worst = worst.max(e.report.worst());
        if !e.report.passed() {
            failed.push(e.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(format!("{} checks, worst relative error {worst:.2e}", entries.len()))
    } else {
        Err(format!("failed: {failed:?}"))
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap().normalize_rows()
}

fn error_only(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    ctx: &GraphContext,
    batch: Batch<'_>,
    _: &TrainConfig,
) -> ucl_core::Result<(ucl_core::numkit::Var, StepTerms)> {
    let labels: Vec<usize> = batch.nodes.iter().map(|&i| ctx.labels[i]).collect();
    let h = model.embed(tape, vars, ctx)?;
    let mut evidence = Vec::new();
    for (v, &hv) in h.iter().enumerate() {
        let hb = tape.gather_rows(hv, batch.nodes)?;
        evidence.push(model.heads[v].forward(tape, &vars.heads[v], hb)?);
    }
    let fused = tape_fuse(tape, &evidence)?;
    let loss = tape_error_loss(tape, fused.alpha, fused.strength, &labels)?;
    let value = tape.scalar(loss);
    let terms = StepTerms {
        error: value,
        euc: 0.0,
        ucl: vec![0.0; 3],
        common: 0.0,
        total: value,
        lambda_e: 0.0,
    };
    Ok((loss, terms))
}

fn reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let classes = rng.random_range(2..=6);
        let z = unit_rows(&mut rng, 8, 5);
        let protos = unit_rows(&mut rng, classes, 5);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..classes)).collect();
        let table = UncertaintyTable {
            values: (0..classes).map(|_| rng.random_range(0.0..1.0)).collect(),
            epoch: 1,
        };
        let zero_table = UncertaintyTable {
            values: vec![0.0; classes],
            epoch: 1,
        };
        let psc = psc_loss(&z, &labels, &protos, 1.0).map_err(|e| e.to_string())?;
        for margins in [
            MarginPolicy::Uncertainty { beta: 0.0 }.margins(&table, &[]),
            MarginPolicy::Uncertainty { beta: 0.1 }.margins(&zero_table, &[]),
        ] {
            let u = ucl_loss(&z, &labels, &protos, &margins, 1.0).map_err(|e| e.to_string())?;
            worst = worst.max((u - psc).abs());
        }
    }
    if worst > 1e-9 {
        return Err(format!("UCL vs PSC deviation {worst:.2e} > 1e-9"));
    }

    let data = generate_synthetic(
        &SyntheticConfig {
            classes: 4,
            n_max: 40,
            gamma: 0.5,
            d_in: 8,
            val_per_class: 5,
            test_per_class: 5,
            ..SyntheticConfig::default()
        },
        2,
    )
    .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 5,
        batch_size: 32,
        embed_dim: 16,
        edl_hidden: 16,
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        ..TrainConfig::default()
    };
    let full = train(&data, &config).map_err(|e| e.to_string())?;
    let pure = train_with(&data, &config, error_only, |_| {}).map_err(|e| e.to_string())?;
    let trace = |o: &TrainOutcome| o.log.iter().map(|r| (r.total, r.val_accuracy)).collect::<Vec<_>>();
    if trace(&full) != trace(&pure) || full.last.heads != pure.last.heads {
        return Err("zero-weight trace differs from the error-loss-only trace".into());
    }
    Ok(format!("UCL vs PSC deviation {worst:.2e}; zero-weight trace identical"))
}

/// Dense reference: full adjacency and attention matrices, plain loops.
fn dense_forward(records: &[MessageRecord], view: View, features: &Matrix, enc: &ViewEncoder) -> (Matrix, f64) {
    let n = records.len();
    let tokens = |i: usize| view.tokens(&records[i]);
    let adjacent = |i: usize, j: usize| i == j || tokens(i).iter().any(|t| tokens(j).contains(t));
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).to_vec()).collect();
    let mut worst_row_sum = 0.0f64;
    for layer in &enc.layers {
        let d_out = layer.output_dim();
        let xw: Vec<Vec<f64>> = h
            .iter()
            .map(|row| {
                (0..d_out)
                    .map(|c| row.iter().enumerate().map(|(k, x)| x * layer.weight[(k, c)]).sum())
                    .collect()
            })
            .collect();
        let mut next = vec![vec![0.0; d_out]; n];
        for i in 0..n {
            let logit: f64 = (0..d_out).map(|c| xw[i][c] * layer.decay_weight[(c, 0)]).sum::<f64>()
                + layer.decay_bias[(0, 0)];
            let rate = if logit > 30.0 { logit } else { (1.0 + logit.exp()).ln() };
            let mut scores = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if adjacent(i, j) {
                    scores[j] = -rate * (records[j].timestamp - records[i].timestamp).abs();
                }
            }
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
            worst_row_sum = worst_row_sum.max((weights.iter().sum::<f64>() - 1.0).abs());
            for j in 0..n {
                for c in 0..d_out {
                    next[i][c] += weights[j] * xw[j][c];
                }
            }
            if layer.activation == ucl_core::encoder::Activation::Relu {
                for v in &mut next[i] {
                    *v = v.max(0.0);
                }
            }
        }
        h = next;
    }
    let d = h[0].len();
    (Matrix::from_vec(n, d, h.concat()).unwrap(), worst_row_sum)
}

fn encoder_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    let mut worst_sum = 0.0f64;
    for g in 0..50 {
        let n = rng.random_range(1..=32);
        let pool = rng.random_range(1..=8);
        let records: Vec<MessageRecord> = (0..n)
            .map(|i| {
                let k = rng.random_range(0..3);
                let tokens: Vec<String> = (0..k).map(|_| format!("t{}", rng.random_range(0..pool))).collect();
                MessageRecord {
                    id: i as u64,
                    label: 0,
                    timestamp: rng.random_range(0.0..10.0),
                    hashtags: tokens.clone(),
                    entities: tokens.clone(),
                    users: tokens,
                    features: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                }
            })
            .collect();
        let view = View::ALL[g % 3];
        let graph = build_view_graph(&records, view);
        let rows: Vec<Vec<f64>> = records.iter().map(|r| r.features.clone()).collect();
        let features = Matrix::from_rows(&rows).unwrap();
        let enc = ViewEncoder::new(&mut rng, 6, &[7, 5]).map_err(|e| e.to_string())?;
        let sparse = encode(&std::sync::Arc::new(graph.neighborhood()), &features, &enc)
            .map_err(|e| e.to_string())?;
        let (dense, row_sum) = dense_forward(&records, view, &features, &enc);
        worst_sum = worst_sum.max(row_sum);
        for (a, b) in sparse.raw.as_slice().iter().zip(dense.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst < 1e-9 && worst_sum < 1e-12 {
        Ok(format!("max abs diff {worst:.2e}; attention row sums within {worst_sum:.1e}"))
    } else {
        Err(format!("max abs diff {worst:.2e}, row-sum error {worst_sum:.2e}"))
    }
}

/// Training setup for the synthetic direction checks.
fn scenario_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 100,
        batch_size: 128,
        embed_dim: 64,
        edl_hidden: 64,
        seed,
        ..TrainConfig::default()
    }
}

struct SeedRun {
    full: TrainOutcome,
    psc: TrainOutcome,
    no_euc: TrainOutcome,
    ctx: GraphContext,
    test: Vec<usize>,
    val: Vec<usize>,
}

fn run_seed(seed: u64) -> ucl_core::Result<SeedRun> {
    let data = generate_synthetic(&SyntheticConfig::default(), seed)?;
    let base = scenario_config(seed);
    Ok(SeedRun {
        full: train(&data, &Variant::UclEc.apply(&base))?,
        psc: train(&data, &Variant::Psc.apply(&base))?,
        no_euc: train(&data, &Variant::NoCalibration.apply(&base))?,
        ctx: GraphContext::new(&data),
        test: data.splits.test.clone(),
        val: data.splits.val.clone(),
    })
}

struct Directions {
    uncertain_wins: usize,
    overall: (f64, f64),
    ablation_wins: usize,
    calibration_wins: usize,
    lines: Vec<String>,
}

fn directions(runs: &[SeedRun]) -> ucl_core::Result<Directions> {
    let mut d = Directions {
        uncertain_wins: 0,
        overall: (0.0, 0.0),
        ablation_wins: 0,
        calibration_wins: 0,
        lines: Vec::new(),
    };
    for (k, r) in runs.iter().enumerate() {
        // both models are grouped by the full model's class uncertainties
        let table = &r.full.best.table;
        let full = evaluate(&r.full.best, &r.ctx, &r.test, table)?;
        let psc = evaluate(&r.psc.best, &r.ctx, &r.test, table)?;
        let no_euc = evaluate(&r.no_euc.best, &r.ctx, &r.test, table)?;
        let val = evaluate(&r.full.best, &r.ctx, &r.val, table)?;
        let uf = full.group(Group::Uncertain).f1.unwrap_or(0.0);
        let up = psc.group(Group::Uncertain).f1.unwrap_or(0.0);
        d.uncertain_wins += usize::from(uf > up);
        d.overall.0 += full.macro_f1 / runs.len() as f64;
        d.overall.1 += psc.macro_f1 / runs.len() as f64;
        d.ablation_wins += usize::from(no_euc.accuracy < full.accuracy);
        let (uc, uw) = (
            val.mean_uncertainty_correct.unwrap_or(f64::NAN),
            val.mean_uncertainty_wrong.unwrap_or(f64::NAN),
        );
        d.calibration_wins += usize::from(uw - uc > 0.0);
        d.lines.push(format!(
            "    seed {}: uncertain-group F1 {uf:.3} vs {up:.3}; macro-F1 {:.3} vs {:.3}; acc {:.3} vs no-calibration {:.3}; val u wrong/correct {uw:.3}/{uc:.3}",
            k + 1,
            full.macro_f1,
            psc.macro_f1,
            full.accuracy,
            no_euc.accuracy
        ));
    }
    Ok(d)
}

fn determinism() -> Outcome {
    let data = generate_synthetic(&SyntheticConfig::default(), 1).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 10,
        ..scenario_config(1)
    };
    let run = || -> ucl_core::Result<(Vec<EpochRecord>, String)> {
        let out = train(&data, &config)?;
        let ctx = GraphContext::new(&data);
        let m = evaluate(&out.best, &ctx, &data.splits.test, &out.best.table)?;
        Ok((out.log, format!("{m:?}")))
    };
    let a = run().map_err(|e| e.to_string())?;
    let b = run().map_err(|e| e.to_string())?;
    let bits = |log: &[EpochRecord]| {
        log.iter()
            .flat_map(|r| [r.total.to_bits(), r.error.to_bits(), r.val_accuracy.to_bits()])
            .collect::<Vec<_>>()
    };
    if a.0 == b.0 && bits(&a.0) == bits(&b.0) && a.1 == b.1 {
        Ok(format!("{} epochs bit-identical", a.0.len()))
    } else {
        Err("runs differ".into())
    }
}

fn report(failures: &mut usize, id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let over = budget.is_some_and(|b| elapsed > b);
    let (status, detail) = match (&result, over) {
        (Ok(msg), false) => ("PASS", msg.clone()),
        (Ok(msg), true) => ("FAIL", format!("{msg}; over time budget {:?}", budget.unwrap())),
        (Err(msg), _) => ("FAIL", msg.clone()),
    };
    if status == "FAIL" {
        *failures += 1;
    }
    println!("[{status}] {id:>2}. {name} ({:.1}s): {detail}", elapsed.as_secs_f64());
}

fn main() {
    let mut failures = 0;
    let secs = Duration::from_secs;
    report(&mut failures, 1, "opinion algebra", Some(secs(5)), opinion_algebra);
    report(&mut failures, 2, "fusion vs joint-mass oracle", Some(secs(10)), fusion_oracle);
    report(&mut failures, 3, "error loss vs Monte-Carlo", Some(secs(60)), error_loss_oracle);
    report(&mut failures, 4, "gradient suite", Some(secs(60)), gradient_checks);
    report(&mut failures, 5, "reduction identities", None, reductions);
    report(&mut failures, 6, "encoder vs dense reference", None, encoder_oracle);

    let start = Instant::now();
    let runs: Result<Vec<SeedRun>, String> = (1..=5).map(|s| run_seed(s).map_err(|e| e.to_string())).collect();
    let train_time = start.elapsed();
    let dirs = runs.and_then(|r| directions(&r).map_err(|e| e.to_string()));
    match dirs {
        Ok(d) => {
            for line in &d.lines {
                println!("{line}");
            }
            let within = train_time <= secs(15 * 60);
            report(&mut failures, 7, "uncertain-group gain over baseline", None, || {
                let msg = format!(
                    "{}/5 seeds better on the uncertain tertile; mean macro-F1 {:.4} vs {:.4}; {:.0}s",
                    d.uncertain_wins,
                    d.overall.0,
                    d.overall.1,
                    train_time.as_secs_f64()
                );
                if d.uncertain_wins >= 4 && d.overall.0 >= d.overall.1 && within {
                    Ok(msg)
                } else {
                    Err(msg)
                }
            });
            report(&mut failures, 8, "calibration loss ablation", None, || {
                let msg = format!("full model more accurate in {}/5 seeds", d.ablation_wins);
                if d.ablation_wins >= 4 {
                    Ok(msg)
                } else {
                    Err(msg)
                }
            });
            report(&mut failures, 9, "uncertainty of wrong vs correct", None, || {
                let msg = format!("wrong predictions more uncertain in {}/5 seeds", d.calibration_wins);
                if d.calibration_wins >= 4 {
                    Ok(msg)
                } else {
                    Err(msg)
                }
            });
        }
        Err(e) => {
            for id in 7..=9 {
                report(&mut failures, id, "synthetic direction check", None, || Err(e.clone()));
            }
        }
    }
    report(&mut failures, 10, "determinism", None, determinism);

    println!("{} criteria failed", failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
