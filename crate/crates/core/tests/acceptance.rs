//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance -- 3 7` runs a subset.

use std::collections::BTreeMap;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabtok::backbone::{self, Triplet};
use tabtok::checkpoint::{encode_tensors, load_checkpoint, save_checkpoint, Checkpoint};
use tabtok::discretize::{fit_bins, BinConfig};
use tabtok::encoder::{fuse_sample, FeatureTokens, FeatureValue};
use tabtok::experiment::{run_ablation_suite, STANDARD_VARIANTS};
use tabtok::graph::Graph;
use tabtok::metrics::{auc, magnitude_geometry_report};
use tabtok::model::{ModelConfig, TabModel};
use tabtok::preprocess::TablePreprocessor;
use tabtok::schedule::{lr_at, warmup_steps};
use tabtok::synthetic::{gen_synthetic, SyntheticTaskSpec, DEFAULT_NAME_POOL};
use tabtok::table::{Cell, ColumnKind, Dataset, Task};
use tabtok::tensor::Matrix;
use tabtok::train::{finetune, finetune_splits, pretrain, FinetuneConfig, Init, PretrainConfig, PretrainOutcome};
use tabtok::vocab::{TokenSequence, Vocabulary};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn entropy2(pos: usize, n: usize) -> f64 {
    if n == 0 || pos == 0 || pos == n {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Exhaustive first split: every midpoint between distinct values, gain
/// recomputed from scratch, ties to the lowest threshold.
fn brute_force_first_split(values: &[f64], labels: &[usize], min_leaf: usize) -> Option<f64> {
    let n = values.len();
    let pos_all = labels.iter().filter(|&&l| l == 1).count();
    let parent = entropy2(pos_all, n);
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in distinct.windows(2) {
        let t = w[0] + (w[1] - w[0]) / 2.0;
        let (mut nl, mut pl) = (0, 0);
        for (v, l) in values.iter().zip(labels) {
            if *v < t {
                nl += 1;
                pl += usize::from(*l == 1);
            }
        }
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let gain = parent - nl as f64 / n as f64 * entropy2(pl, nl) - nr as f64 / n as f64 * entropy2(pos_all - pl, nr);
        match best {
            Some((g, _)) if gain <= g + 1e-12 => {}
            _ => best = Some((gain, t)),
        }
    }
    best.filter(|(g, _)| *g > 1e-12).map(|(_, t)| t)
}

fn c1_discretizer_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let n = rng.random_range(2..=64);
        let levels = rng.random_range(1..=12);
        let values: Vec<f64> = (0..n)
            .map(|_| if case % 2 == 0 { rng.random_range(0..levels) as f64 * 0.5 } else { rng.random_range(-10.0..10.0) })
            .collect();
        let single = rng.random_bool(0.1);
        let labels: Vec<usize> = (0..n).map(|_| if single { 0 } else { rng.random_range(0..2) }).collect();
        let min_leaf = rng.random_range(1..=4);
        let cfg = BinConfig { n_bin: 2, min_leaf_size: min_leaf, regression_target_bins: 2 };
        let got = fit_bins(&values, &labels, &cfg).map_err(|e| e.to_string())?;
        let want = brute_force_first_split(&values, &labels, min_leaf);
        if got.edges.first().copied() != want {
            return Err(format!("case {case}: edges {:?}, oracle {want:?}", got.edges));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 10.0, format!("200/200 first splits match the exhaustive oracle in {secs:.2}s"))
}

// ---------------------------------------------------------------- 2

fn bin_fixtures() -> Vec<Dataset> {
    let mut out = Vec::new();
    for seed in 0..6 {
        out.push(
            gen_synthetic(&SyntheticTaskSpec {
                seed,
                n_rows: 300 + 100 * seed as usize,
                n_num_features: 8,
                task: if seed % 3 == 2 { Task::Regression } else { Task::Binclass },
                noise: 0.1,
                ..SyntheticTaskSpec::default()
            })
            .expect("fixture"),
        );
    }
    out
}

fn c2_bin_contract() -> Outcome {
    let mut features = 0;
    let mut values = 0;
    for ds in bin_fixtures() {
        for n_bin in [2, 4, 8, 32, 256] {
            for min_leaf in [1, 16] {
                let cfg = BinConfig { n_bin, min_leaf_size: min_leaf, regression_target_bins: 2 };
                let pre = TablePreprocessor::fit(&ds, &cfg, Default::default()).map_err(|e| e.to_string())?;
                for (j, col) in ds.schema.columns.iter().enumerate() {
                    if col.kind != ColumnKind::Numerical {
                        continue;
                    }
                    let b = pre.bins[j].as_ref().expect("numerical bins");
                    if b.n_bins() > n_bin {
                        return Err(format!("{} bins > n_bin {n_bin}", b.n_bins()));
                    }
                    features += 1;
                    for row in &ds.rows {
                        let Cell::Num(x) = row[j] else { continue };
                        let k = b.bin_index(x);
                        let lo = if k == 0 { f64::NEG_INFINITY } else { b.edges[k - 1] };
                        let hi = b.edges.get(k).copied().unwrap_or(f64::INFINITY);
                        if !(lo <= x && x < hi) {
                            return Err(format!("x={x} in bin {k} but edges [{lo}, {hi})"));
                        }
                        values += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{values} training values over {features} fitted features satisfy e_k <= x < e_k+1 and L <= n_bin"))
}

// ---------------------------------------------------------------- 3

fn tiny_setup(seed: u64, d: usize, n_layers: usize) -> (TabModel, Vec<Vec<FeatureTokens>>) {
    let cfg = ModelConfig { d, ifa_heads: 2, n_layers, n_heads: 2, d_ff: 2 * d, n_bin: 8, max_name_len: 4, ..ModelConfig::default() };
    let vocab = Vocabulary::build(&["glucose level", "blood type", "red", "blue"], 20, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = TabModel::new(cfg, vocab, &mut rng).unwrap();
    model.add_head(&mut rng);
    let v = &model.vocab;
    let rows = (0..4)
        .map(|i| {
            let value = match i {
                3 => FeatureValue::Missing,
                _ => FeatureValue::Magnitude { bin: (2 * i + 1) % 8, multiplier: 0.6 + 0.3 * i as f64 },
            };
            vec![
                FeatureTokens { name: v.encode_text("glucose level"), value },
                FeatureTokens { name: v.encode_text("blood type"), value: FeatureValue::Text(v.encode_text(if i % 2 == 0 { "red" } else { "blue" })) },
            ]
        })
        .collect();
    (model, rows)
}

fn c3_gradient_check() -> Outcome {
    let t0 = Instant::now();
    let (mut model, rows) = tiny_setup(3, 8, 2);
    let refs: Vec<&[FeatureTokens]> = rows.iter().map(Vec::as_slice).collect();
    let ys = [1.0, 0.0, 1.0, 0.0];
    let trips = vec![Triplet { k1: 1, k2: 2, k3: 6 }, Triplet { k1: 5, k2: 4, k3: 0 }, Triplet { k1: 3, k2: 1, k3: 7 }];
    let loss = |m: &TabModel| -> f64 {
        let mut g = Graph::new(&m.params);
        let (l, _) = m.loss_graph::<ChaCha8Rng>(&mut g, &refs, &ys, Task::Binclass, 0, 0.1, &trips, None).unwrap();
        g.value(l).data[0]
    };
    let (_, grads) = model.loss_and_grads::<ChaCha8Rng>(&refs, &ys, Task::Binclass, 0, 0.1, &trips, None).unwrap();
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for id in model.params.ids().collect::<Vec<_>>() {
        let name = model.params.name(id).to_string();
        let shape = model.params.get(id).shape();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
        let mut numeric = Matrix::zeros(shape.0, shape.1);
        for i in 0..numeric.data.len() {
            let orig = model.params.get(id).data[i];
            model.params.get_mut(id).data[i] = orig + h;
            let lp = loss(&model);
            model.params.get_mut(id).data[i] = orig - h;
            let lm = loss(&model);
            model.params.get_mut(id).data[i] = orig;
            numeric.data[i] = (lp - lm) / (2.0 * h);
        }
        let diff: f64 = analytic.data.iter().zip(&numeric.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = analytic.data.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.data.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if norm < 1e-10 { diff } else { diff / norm };
        if rel > worst.0 {
            worst = (rel, name);
        }
        checked += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst.0 < 1e-4 && secs < 60.0,
        format!("{checked} tensors ({} scalars), worst relative error {:.2e} ({}) in {secs:.1}s", model.params.numel(), worst.0, worst.1),
    )
}

// ---------------------------------------------------------------- 4 & 5

fn random_row(rng: &mut ChaCha8Rng, vocab: &Vocabulary, n_bin: usize) -> Vec<FeatureTokens> {
    let n_features = rng.random_range(2..=6);
    (0..n_features)
        .map(|_| {
            let name_len = rng.random_range(1..=3);
            let name = TokenSequence::words((0..name_len).map(|_| rng.random_range(3..3 + vocab.words().len() as u32)).collect());
            let value = match rng.random_range(0..4) {
                0 => FeatureValue::Missing,
                1 => FeatureValue::Text(TokenSequence::words(vec![rng.random_range(3..3 + vocab.words().len() as u32)])),
                _ => FeatureValue::Magnitude { bin: rng.random_range(0..n_bin), multiplier: rng.random_range(0.5..1.5) },
            };
            FeatureTokens { name, value }
        })
        .collect()
}

fn random_model(seed: u64) -> TabModel {
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_words(words, 8).unwrap();
    let cfg = ModelConfig { d: 8, ifa_heads: 2, n_layers: 2, n_heads: 2, d_ff: 16, n_bin: 8, max_name_len: 4, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = TabModel::new(cfg, vocab, &mut rng).unwrap();
    m.add_head(&mut rng);
    m
}

fn c4_order_invariance() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let model = random_model(1000 + case);
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let row = random_row(&mut rng, &model.vocab, 8);
        let mut perm = row.clone();
        perm.shuffle(&mut rng);
        let a = model.predict(&[row], 0).map_err(|e| e.to_string())?[0];
        let b = model.predict(&[perm], 0).map_err(|e| e.to_string())?[0];
        worst = worst.max((a - b).abs());
    }
    check(worst < 1e-5, format!("max |logit change| under feature permutation {worst:.2e} over 100 cases"))
}

fn c5_ifa_isolation() -> Outcome {
    for case in 0..100u64 {
        let model = random_model(2000 + case);
        let mut rng = ChaCha8Rng::seed_from_u64(500 + case);
        let row = random_row(&mut rng, &model.vocab, 8);
        let j = rng.random_range(0..row.len());
        let mut mutated = row.clone();
        mutated[j] = random_row(&mut rng, &model.vocab, 8).remove(0);
        let m = &model;
        let a = fuse_sample(&row, &m.params, &m.ifa, &m.tables, false).map_err(|e| e.to_string())?;
        let b = fuse_sample(&mutated, &m.params, &m.ifa, &m.tables, false).map_err(|e| e.to_string())?;
        for i in 0..row.len() {
            if i != j && a.row(i + 1) != b.row(i + 1) {
                return Err(format!("case {case}: feature {i} changed after mutating feature {j}"));
            }
        }
    }
    Ok("fused vectors of untouched features bit-identical over 100 cases".into())
}

// ---------------------------------------------------------------- 6

fn c6_triplet_cases() -> Outcome {
    let t = Triplet { k1: 10, k2: 12, k3: 50 };
    let m = t.margin(256);
    let e1 = backbone::triplet_term(0.3, 0.6, &t, 256);
    let e2 = backbone::triplet_term(0.6, 0.3, &t, 256);
    if (m - 38.0 / 256.0).abs() > 1e-9 || e1.abs() > 1e-9 || (e2 - (0.3 + 38.0 / 256.0)).abs() > 1e-9 {
        return Err(format!("margin {m}, terms {e1} and {e2}"));
    }
    // identical magnitude rows: every term equals its margin
    let mut model = random_model(6);
    let row = model.params.get(model.tables.magnitude).row(0).to_vec();
    let table = model.params.get_mut(model.tables.magnitude);
    for r in 0..table.rows {
        table.row_mut(r).copy_from_slice(&row);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let trips = backbone::TripletSampler::default().sample(8, &mut rng).map_err(|e| e.to_string())?;
    let mut g = Graph::new(&model.params);
    let l = backbone::triplet_node(&mut g, model.tables.magnitude, &model.reg_head, &trips, 8);
    let got = g.value(l).data[0];
    let want = trips.iter().map(|t| t.margin(8)).sum::<f64>() / trips.len() as f64;
    if (got - want).abs() > 1e-9 || trips.iter().any(|t| t.margin(8) <= 0.0) {
        return Err(format!("degenerate table: loss {got}, mean margin {want}"));
    }
    // satisfied triplets: pick every ordered triplet the random features already satisfy with slack
    let model = random_model(7);
    let mut g = Graph::new(&model.params);
    let f = backbone::reg_features(&mut g, model.tables.magnitude, &model.reg_head, &(0..8).collect::<Vec<_>>());
    let fm = g.value(f).clone();
    let dist = |a: usize, b: usize| fm.row(a).iter().zip(fm.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut sat = Vec::new();
    for k1 in 0..8 {
        for k2 in 0..8 {
            for k3 in 0..8 {
                let t = Triplet { k1, k2, k3 };
                if k1.abs_diff(k2) < k1.abs_diff(k3) && dist(k1, k2) + t.margin(8) + 1e-6 < dist(k1, k3) {
                    sat.push(t);
                }
            }
        }
    }
    if sat.is_empty() {
        return Err("no satisfied triplet in the fixture".into());
    }
    let mut g = Graph::new(&model.params);
    let l = backbone::triplet_node(&mut g, model.tables.magnitude, &model.reg_head, &sat, 8);
    let lv = g.value(l).data[0];
    let grads = g.backward(l).map_err(|e| e.to_string())?;
    let gmax = model
        .params
        .ids()
        .filter_map(|id| grads.get(id))
        .flat_map(|m| m.data.iter().map(|x| x.abs()))
        .fold(0.0f64, f64::max);
    check(lv == 0.0 && gmax == 0.0, format!("examples exact; degenerate loss = mean margin {want:.4}; {} satisfied triplets give loss {lv}, max |grad| {gmax}", sat.len()))
}

// ---------------------------------------------------------------- 7

fn c7_overfit() -> Outcome {
    let t0 = Instant::now();
    let mut aucs = Vec::new();
    for seed in 0..5u64 {
        let ds = gen_synthetic(&SyntheticTaskSpec { n_rows: 256, seed: 700 + seed, noise: 0.0, ..SyntheticTaskSpec::default() })
            .map_err(|e| e.to_string())?;
        let model = ModelConfig { n_bin: 32, ..ModelConfig::tiny() };
        let cfg = FinetuneConfig { max_epochs: 300, lr: 3e-3, patience: 300, seed, min_leaf_size: 1, ..FinetuneConfig::default() };
        // selection and scoring on the training rows themselves
        let out = finetune_splits(Init::Random { model, max_words: 4096 }, &ds, &ds, &ds, &cfg).map_err(|e| e.to_string())?;
        aucs.push(out.train_metric);
        if out.train_metric < 0.99 {
            break;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let passed = aucs.iter().filter(|&&a| a >= 0.99).count();
    check(passed == 5 && secs < 300.0, format!("train AUC per seed {aucs:.4?}, {passed}/5 >= 0.99 in {secs:.0}s"))
}

// ---------------------------------------------------------------- 8 & 9

const TRANSFER_SEEDS: u64 = 5;

fn transfer_model() -> ModelConfig {
    ModelConfig { n_bin: 8, ..ModelConfig::tiny() }
}

fn name_pool() -> Vec<String> {
    DEFAULT_NAME_POOL[..12].iter().map(|s| s.to_string()).collect()
}

fn shared_pool_task(name: String, n_rows: usize, n_num_features: usize, seed: u64) -> Dataset {
    gen_synthetic(&SyntheticTaskSpec { name, n_rows, seed, n_num_features, n_cat_features: 0, name_pool: name_pool(), ..SyntheticTaskSpec::default() })
        .expect("valid spec")
}

fn pretrain_tables(seed: u64) -> Vec<Dataset> {
    (0..4).map(|i| shared_pool_task(format!("pre{i}"), 1000, 9, 100 * seed + i)).collect()
}

fn pretrain_config(seed: u64, noreg: bool) -> PretrainConfig {
    let mut model = transfer_model();
    model.ablation.use_triplet_reg = !noreg;
    PretrainConfig { model, epochs: 40, batch_size: 128, peak_lr: 3e-3, seed, ..PretrainConfig::default() }
}

fn run_pretrain(seed: u64, noreg: bool) -> Result<PretrainOutcome, String> {
    pretrain(&pretrain_tables(seed), &pretrain_config(seed, noreg), &mut std::io::sink()).map_err(|e| e.to_string())
}

struct Shared {
    with_reg: BTreeMap<u64, PretrainOutcome>,
    secs: f64,
}

fn c8_transfer(shared: &mut Shared) -> Outcome {
    let t0 = Instant::now();
    let mut pre = Vec::new();
    let mut rnd = Vec::new();
    for seed in 0..TRANSFER_SEEDS {
        let out = run_pretrain(seed, false)?;
        let held = shared_pool_task("held-out".into(), 128, 6, 100 * seed + 99);
        let ft = FinetuneConfig { lr: 3e-4, seed, ..FinetuneConfig::default() };
        let a = finetune(Init::Pretrained(&out.checkpoint), &held, &ft).map_err(|e| e.to_string())?;
        let b = finetune(Init::Random { model: transfer_model(), max_words: 4096 }, &held, &ft).map_err(|e| e.to_string())?;
        pre.push(a.report.value);
        rnd.push(b.report.value);
        shared.with_reg.insert(seed, out);
    }
    let secs = t0.elapsed().as_secs_f64();
    shared.secs = secs;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gain = mean(&pre) - mean(&rnd);
    check(
        gain >= 0.03 && secs < 1200.0,
        format!("pretrained {:.4} vs random {:.4}: gain {gain:+.4} over {TRANSFER_SEEDS} seeds in {secs:.0}s (per seed {pre:.3?} / {rnd:.3?})", mean(&pre), mean(&rnd)),
    )
}

fn geometry(out: &PretrainOutcome, seed: u64) -> Result<f64, String> {
    let m = &out.checkpoint.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(magnitude_geometry_report(&m.params, m.tables.magnitude, &m.reg_head, 1000, &mut rng).map_err(|e| e.to_string())?.spearman)
}

fn c9_geometry(shared: &mut Shared) -> Outcome {
    let mut reg = Vec::new();
    let mut noreg = Vec::new();
    for seed in 0..TRANSFER_SEEDS {
        let with = match shared.with_reg.remove(&seed) {
            Some(o) => o,
            None => run_pretrain(seed, false)?,
        };
        reg.push(geometry(&with, seed)?);
        noreg.push(geometry(&run_pretrain(seed, true)?, seed)?);
    }
    let all_high = reg.iter().all(|&s| s >= 0.8);
    let lower = reg.iter().zip(&noreg).filter(|(r, n)| n < r).count();
    check(
        all_high && lower == TRANSFER_SEEDS as usize,
        format!("spearman with regularizer {reg:.3?}, noreg {noreg:.3?}; noreg lower on {lower}/{TRANSFER_SEEDS}"),
    )
}

// ---------------------------------------------------------------- 10

fn c10_ablation_harness() -> Outcome {
    let ds = gen_synthetic(&SyntheticTaskSpec { name: "ablation-task".into(), n_rows: 512, seed: 10, noise: 0.05, ..SyntheticTaskSpec::default() })
        .map_err(|e| e.to_string())?;
    let variants: Vec<Vec<String>> = STANDARD_VARIANTS.iter().map(|v| vec![v.to_string()]).collect();
    let cfg = FinetuneConfig { max_epochs: 20, lr: 1e-3, seed: 10, ..FinetuneConfig::default() };
    let suite = run_ablation_suite(ModelConfig::tiny(), 4096, &variants, &[ds], &cfg).map_err(|e| e.to_string())?;
    for line in suite.render().lines() {
        println!("    {line}");
    }
    let tags: Vec<&str> = suite.variants.iter().map(|(r, _)| r.tag.as_str()).collect();
    let all_ran = tags == STANDARD_VARIANTS && suite.variants.iter().all(|(_, b)| b.unchanged + b.worse + b.better == 1);
    let no_ifa = suite.variants.iter().find(|(r, _)| r.tag == "no-ifa").map(|(r, _)| r.secs_per_step).unwrap_or(0.0);
    let ratio = no_ifa / suite.base.secs_per_step;
    check(all_ran && ratio > 1.0, format!("6 variants ran; no-ifa/default time per step {ratio:.2}x"))
}

// ---------------------------------------------------------------- 11

fn c11_scheduler() -> Outcome {
    let ex = [(60, 1e-4), (0, 0.0), (530, 5e-5)];
    for (step, want) in ex {
        let got = lr_at(step, 1000, 1e-4, 0.06);
        if (got - want).abs() > 1e-12 {
            return Err(format!("lr_at({step}) = {got}, expected {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let total = rng.random_range(20..5000);
        let frac = rng.random_range(0.01..0.99);
        let peak = rng.random_range(1e-6..1e-2);
        let w = warmup_steps(total, frac);
        let at_w = lr_at(w, total, peak, frac);
        // extrapolate each linear piece from its own side onto the boundary
        let lr = |s: usize| lr_at(s, total, peak, frac);
        let rise_w = lr(w - 1) + peak / w as f64;
        let decay_w = lr(w + 1) + peak / (total - w) as f64;
        let jump_left = (lr_at(w, total, peak, frac) - lr_at(w - 1, total, peak, frac)).abs();
        let jump_right = (lr_at(w + 1, total, peak, frac) - at_w).abs();
        let max_slope = peak / w as f64 + peak / (total - w) as f64;
        let peak_ok = (0..=total).all(|s| lr_at(s, total, peak, frac) <= at_w + 1e-18);
        if (at_w - rise_w).abs() > 1e-12 || (at_w - decay_w).abs() > 1e-12 || jump_left > max_slope + 1e-15 || jump_right > max_slope + 1e-15 || !peak_ok
            || lr_at(total, total, peak, frac) != 0.0 || lr_at(0, total, peak, frac) != 0.0
        {
            return Err(format!("total {total}, frac {frac}: boundary lr {at_w}, peak {peak}"));
        }
    }
    Ok("3 examples within 1e-12; continuous at the warmup boundary for 50 random (total, frac)".into())
}

// ---------------------------------------------------------------- 12

fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi > 0.5 && yj <= 0.5 {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn c12_auc_oracle() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        PtConfig { cases: 1000, failure_persistence: None, ..PtConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (2usize..=50).prop_flat_map(|n| {
        (proptest::collection::vec(0u8..6, n), proptest::collection::vec(any::<bool>(), n), 0usize..n, 0usize..n)
    });
    let checked = std::cell::Cell::new(0usize);
    let res = runner.run(&strategy, |(levels, bits, p, q)| {
        let mut labels: Vec<f64> = bits.iter().map(|&b| f64::from(u8::from(b))).collect();
        // force both classes
        labels[p] = 1.0;
        if q != p {
            labels[q] = 0.0;
        } else {
            let other = (p + 1) % labels.len();
            labels[other] = 0.0;
        }
        let scores: Vec<f64> = levels.iter().map(|&l| f64::from(l) * 0.25).collect();
        let fast = auc(&scores, &labels).unwrap();
        prop_assert_eq!(fast, pairwise_auc(&scores, &labels));
        checked.set(checked.get() + 1);
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("rank AUC == pairwise oracle exactly on {} tied instances (n <= 50)", checked.get())),
        Err(e) => Err(e.to_string()),
    }
}

// ---------------------------------------------------------------- 13

fn c13_checkpoint() -> Outcome {
    let tables: Vec<Dataset> = (0..2)
        .map(|i| gen_synthetic(&SyntheticTaskSpec { name: format!("ck{i}"), n_rows: 200, seed: 130 + i, ..SyntheticTaskSpec::default() }).unwrap())
        .collect();
    let cfg = PretrainConfig { model: ModelConfig { n_bin: 16, ..ModelConfig::tiny() }, epochs: 2, batch_size: 64, peak_lr: 3e-3, ..PretrainConfig::default() };
    let out = pretrain(&tables, &cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_checkpoint(&out.checkpoint, &a).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&a).map_err(|e| e.to_string())?;
    save_checkpoint(&loaded, &b).map_err(|e| e.to_string())?;
    let ta = std::fs::read(a.join("tensors.bin")).map_err(|e| e.to_string())?;
    let tb = std::fs::read(b.join("tensors.bin")).map_err(|e| e.to_string())?;
    if ta != tb || ta != encode_tensors(&out.checkpoint.model.params) {
        return Err("tensor files differ across save/load/save".into());
    }
    let held = gen_synthetic(&SyntheticTaskSpec { name: "ck-held".into(), n_rows: 150, seed: 139, ..SyntheticTaskSpec::default() }).unwrap();
    let ft = FinetuneConfig { max_epochs: 8, lr: 1e-3, seed: 13, ..FinetuneConfig::default() };
    let mem = finetune(Init::Pretrained(&out.checkpoint), &held, &ft).map_err(|e| e.to_string())?;
    let disk = finetune(Init::Pretrained(&loaded), &held, &ft).map_err(|e| e.to_string())?;
    let same_params = mem.model.params == disk.model.params;
    let bits = |c: &Checkpoint| encode_tensors(&c.model.params);
    check(
        same_params && mem.report == disk.report && bits(&mem.checkpoint()) == bits(&disk.checkpoint()),
        format!("{} tensor bytes identical across save/load/save; fine-tune from disk equals in-memory (test AUC {:.4})", ta.len(), mem.report.value),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut shared = Shared { with_reg: BTreeMap::new(), secs: 0.0 };
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !run(n) {
            return;
        }
        let t0 = Instant::now();
        let res = f();
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    };
    report(1, "discretizer oracle", &mut c1_discretizer_oracle);
    report(2, "bin contract", &mut c2_bin_contract);
    report(3, "gradient check", &mut c3_gradient_check);
    report(4, "feature-order invariance", &mut c4_order_invariance);
    report(5, "IFA isolation", &mut c5_ifa_isolation);
    report(6, "triplet loss cases", &mut c6_triplet_cases);
    report(7, "overfit", &mut c7_overfit);
    report(8, "transfer direction", &mut || c8_transfer(&mut shared));
    report(9, "geometry direction", &mut || c9_geometry(&mut shared));
    report(10, "ablation harness", &mut c10_ablation_harness);
    report(11, "scheduler exactness", &mut c11_scheduler);
    report(12, "AUC oracle", &mut c12_auc_oracle);
    report(13, "checkpoint round-trip", &mut c13_checkpoint);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
