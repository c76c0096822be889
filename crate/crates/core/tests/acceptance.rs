//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use recbias::audit::{
    aggregate_cities, association_difference, association_ratio, price_percentage_score, relatedness, BiasAxisPair,
};
use recbias::corpus::PriceLevel;
use recbias::probes::{default_lexicons, default_templates, generate_probe_set, BiasType, Placeholder};
use recbias::ranking::{coverage_metrics, judge, multiclass_metrics, ndcg, Averaging, EvalInstance};
use recbias::recommender::checkpoint;
use recbias::recommender::train::{accuracy, initial_model, mean_loss, train_step, ParamSlot};
use recbias::recommender::{cross_entropy, train, Example, Optimizer, Sgd, TrainConfig, TrainingData};
use recbias::synthetic::Plant;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pair() -> BiasAxisPair {
    BiasAxisPair::new(AXIS, L, L_PRIME).unwrap()
}

fn fixture_pools() -> Vec<(Vec<ItemSpec>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..25)
        .map(|i| {
            let cats = 1 + i % 10;
            (random_specs(&mut rng, 200, cats), cats)
        })
        .collect()
}

fn check_pool_against_oracle(specs: &[ItemSpec], cats: usize) -> Result<(), String> {
    let pool = pool_from_specs(specs, cats);
    let pair = pair();
    for m in 1..=4u8 {
        let got = price_percentage_score(&pool, &pair, PriceLevel::new(m).unwrap()).map(|s| (s.l, s.l_prime));
        let want = oracle_price_share(specs, m);
        let ok = match (got, want) {
            (Some(g), Some(w)) => close(g.0, w.0, 1e-12) && close(g.1, w.1, 1e-12),
            (None, None) => true,
            _ => false,
        };
        ensure(ok, || format!("price share at level {m}: {got:?} vs oracle {want:?}"))?;
    }
    for c in 0..cats {
        let cat = category_name(c);
        for (pol, name) in [(0u8, L), (1u8, L_PRIME)] {
            let got = relatedness(&pool, AXIS, &cat, name).ok();
            let want = oracle_relatedness(specs, c, pol);
            ensure(same(got, want), || format!("f({cat}|{name}): {got:?} vs {want:?}"))?;
        }
        let got = association_difference(&pool, &cat, &pair).ok();
        let want = oracle_difference(specs, c, 0, 1);
        ensure(
            match (got, want) {
                (Some(g), Some(w)) => close_opt(g, w, 1e-12),
                (None, None) => true,
                _ => false,
            },
            || format!("difference for {cat}: {got:?} vs {want:?}"),
        )?;
        let got = association_ratio(&pool, &cat, &pair).ok();
        let want = oracle_ratio(specs, c, 0, 1);
        ensure(
            match (got, want) {
                (Some(g), Some(w)) => close_opt(g, w, 1e-12),
                (None, None) => true,
                _ => false,
            },
            || format!("ratio for {cat}: {got:?} vs {want:?}"),
        )?;
    }
    Ok(())
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    close_opt(a, b, 1e-12)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let pools = fixture_pools();
    for (i, (specs, cats)) in pools.iter().enumerate() {
        check_pool_against_oracle(specs, *cats).map_err(|e| format!("pool {i}: {e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("25 pools match the brute-force oracle in {:.2?}", elapsed))
}

fn criterion_2() -> Outcome {
    let pair = pair();
    let swapped = pair.swapped();
    let mut checks = 0usize;
    for (i, (specs, cats)) in fixture_pools().iter().enumerate() {
        let pool = pool_from_specs(specs, *cats);
        for scale in [2usize, 3] {
            let big = pool_from_specs(&replicate(specs, scale), *cats);
            for m in PriceLevel::ALL {
                let a = price_percentage_score(&pool, &pair, m);
                if let Some(s) = a {
                    ensure(close(s.l + s.l_prime, 1.0, 1e-12), || {
                        format!("pool {i}: price shares sum to {}", s.l + s.l_prime)
                    })?;
                    checks += 1;
                }
                let b = price_percentage_score(&big, &pair, m);
                ensure(same(a.map(|s| s.l), b.map(|s| s.l)), || {
                    format!("pool {i}: price share not scale invariant at {m:?}")
                })?;
            }
            for c in 0..*cats {
                let cat = category_name(c);
                let (Ok(d), Ok(r)) = (
                    association_difference(&pool, &cat, &pair),
                    association_ratio(&pool, &cat, &pair),
                ) else {
                    continue;
                };
                let d_sw = association_difference(&pool, &cat, &swapped).unwrap();
                let r_sw = association_ratio(&pool, &cat, &swapped).unwrap();
                ensure(same(d, d_sw.map(|v| -v)), || {
                    format!("pool {i} {cat}: difference not antisymmetric")
                })?;
                if let (Some(r), Some(r_sw)) = (r, r_sw) {
                    ensure(close(r * r_sw, 1.0, 1e-12), || {
                        format!("pool {i} {cat}: ratio product {}", r * r_sw)
                    })?;
                }
                let d_big = association_difference(&big, &cat, &pair).unwrap();
                let r_big = association_ratio(&big, &cat, &pair).unwrap();
                ensure(same(d, d_big) && same(r, r_big), || {
                    format!("pool {i} {cat}: difference/ratio not scale invariant")
                })?;
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} invariant checks over 25 pools"))
}

fn instance(truth: &str, ranking: &[&str]) -> EvalInstance {
    EvalInstance {
        review_id: truth.into(),
        true_business_id: truth.into(),
        ranking: ranking.iter().map(|s| s.to_string()).collect(),
    }
}

fn criterion_3() -> Outcome {
    // worked examples
    let m = multiclass_metrics(&[instance("b", &["a", "b", "c"])], Averaging::Weighted).map_err(|e| e.to_string())?;
    ensure(m.accuracy == 0.0 && m.mrr == 0.5 && m.hr5 == 1.0, || {
        format!("rank-2 example: {m:?}")
    })?;
    let two = [
        instance("a", &["a", "b", "c", "d"]),
        instance("d", &["a", "b", "c", "d"]),
    ];
    let m = multiclass_metrics(&two, Averaging::Weighted).map_err(|e| e.to_string())?;
    ensure(close(m.mrr, 0.625, 1e-9), || format!("ranks 1,4: MRR {}", m.mrr))?;
    ensure(close(recbias::ranking::hit_rate(&two, 2), 0.5, 1e-9), || {
        "ranks 1,4: HR@2".into()
    })?;
    let n = ndcg(&[true, false, true]);
    ensure(
        close(n, 1.5 / (1.0 + 1.0 / 3f64.log2()), 1e-9) && close(n, 0.9197, 1e-4),
        || format!("nDCG [1,0,1] = {n}"),
    )?;
    let c = coverage_metrics(&[vec![false, true, false]]).map_err(|e| e.to_string())?;
    ensure(c.mrr == 0.5, || format!("first relevant at rank 2: MRR {}", c.mrr))?;

    // randomized fixture against brute force
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let catalog = ranking_catalog(&mut rng, 30, 8);
    let instances = random_instances(&mut rng, &catalog, 50);
    for averaging in [Averaging::Macro, Averaging::Micro, Averaging::Weighted] {
        let m = multiclass_metrics(&instances, averaging).map_err(|e| e.to_string())?;
        let (p, r, f) = oracle_prf(&instances, averaging);
        let want = [
            p,
            r,
            f,
            oracle_mrr(&instances),
            oracle_hit_rate(&instances, 1),
            oracle_hit_rate(&instances, 5),
        ];
        let got = [m.precision, m.recall, m.f1, m.mrr, m.accuracy, m.hr5];
        for (g, w) in got.iter().zip(want) {
            ensure(close(*g, w, 1e-9), || {
                format!("{averaging} multiclass {got:?} vs {want:?}")
            })?;
        }
        ensure(
            close(m.hr10, oracle_hit_rate(&instances, 10), 1e-9)
                && close(m.hr20, oracle_hit_rate(&instances, 20), 1e-9),
            || format!("{averaging} hit rates"),
        )?;
    }
    let judgments: Vec<Vec<bool>> = instances.iter().map(|i| judge(i, &catalog).unwrap()).collect();
    let oracle_j: Vec<Vec<bool>> = instances.iter().map(|i| oracle_judgments(i, &catalog)).collect();
    ensure(judgments == oracle_j, || "category-overlap judgments differ".into())?;
    let c = coverage_metrics(&judgments).map_err(|e| e.to_string())?;
    let got = [c.p5, c.p10, c.p20, c.r_prec, c.map, c.mrr, c.ndcg];
    let want = oracle_coverage(&oracle_j);
    for (g, w) in got.iter().zip(want) {
        ensure(close(*g, w, 1e-9), || format!("coverage {got:?} vs {want:?}"))?;
    }

    // perfect rankings
    let ids: Vec<String> = (0..25).map(|i| format!("v{i:02}")).collect();
    let perfect: Vec<EvalInstance> = ids
        .iter()
        .map(|t| {
            let mut ranking = vec![t.clone()];
            ranking.extend(ids.iter().filter(|i| *i != t).cloned());
            EvalInstance {
                review_id: t.clone(),
                true_business_id: t.clone(),
                ranking,
            }
        })
        .collect();
    let all_relevant: Vec<Vec<bool>> = perfect.iter().map(|i| vec![true; i.ranking.len()]).collect();
    for averaging in [Averaging::Macro, Averaging::Micro, Averaging::Weighted] {
        let m = multiclass_metrics(&perfect, averaging).map_err(|e| e.to_string())?;
        let c = coverage_metrics(&all_relevant).map_err(|e| e.to_string())?;
        let vals = [
            m.precision,
            m.recall,
            m.f1,
            m.mrr,
            m.accuracy,
            m.hr5,
            m.hr10,
            m.hr20,
            c.p5,
            c.p10,
            c.p20,
            c.r_prec,
            c.map,
            c.mrr,
            c.ndcg,
        ];
        ensure(vals.iter().all(|v| *v == 1.0), || {
            format!("perfect ranking ({averaging}): {vals:?}")
        })?;
    }
    Ok("worked examples, 50-instance brute-force fixture and perfect rankings agree".into())
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let race = BiasAxisPair::race();
    let mut summary = Vec::new();
    for seed in 0..3 {
        for audit in synthetic_names_audit(Plant::Planted { rate: 0.9 }, seed, 5) {
            let share = price_percentage_score(&audit.pool, &race, PriceLevel::new(1).unwrap())
                .ok_or_else(|| format!("seed {seed} {}: no $ recommendations", audit.city))?;
            let gap = share.l - share.l_prime;
            let low = association_difference(&audit.pool, recbias::synthetic::LOW_CATEGORY, &race)
                .map_err(|e| e.to_string())?
                .unwrap_or(0.0);
            let high = association_difference(&audit.pool, recbias::synthetic::HIGH_CATEGORY, &race)
                .map_err(|e| e.to_string())?
                .unwrap_or(0.0);
            ensure(gap > 0.3, || {
                format!("seed {seed} {}: P(A|$) - P(B|$) = {gap:.4}", audit.city)
            })?;
            ensure(low > 0.0 && high < 0.0, || {
                format!(
                    "seed {seed} {}: association signs low {low:.4} high {high:.4}",
                    audit.city
                )
            })?;
            summary.push(gap);
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    let min = summary.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "min P(A|$) - P(B|$) = {min:.4} over 3 seeds x 2 cities in {elapsed:.2?}"
    ))
}

fn criterion_5() -> Outcome {
    let race = BiasAxisPair::race();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        for audit in synthetic_names_audit(Plant::Neutral, seed, 5) {
            for m in PriceLevel::ALL {
                if let Some(s) = price_percentage_score(&audit.pool, &race, m) {
                    let dev = (s.l - 0.5).abs();
                    ensure(dev < 0.1, || {
                        format!("seed {seed} {} at {}: P(A|m) = {:.4}", audit.city, m.symbol(), s.l)
                    })?;
                    worst = worst.max(dev);
                }
            }
        }
    }
    Ok(format!("max |P(A|m) - 0.5| = {worst:.4} over every defined level"))
}

struct Capture {
    grads: BTreeMap<ParamSlot, Vec<f64>>,
}

impl Optimizer for Capture {
    fn step(&mut self, slot: ParamSlot, _params: &mut [f64], grad: &[f64]) {
        self.grads.insert(slot, grad.to_vec());
    }
}

fn memorization_data() -> TrainingData {
    let texts = [
        "spicy ramen with rich pork broth",
        "flaky croissant and strong espresso",
        "smoked brisket and pork ribs",
        "fresh oysters on ice",
        "wood fired margherita pizza",
        "crispy falafel wrap with tahini",
        "hand pulled noodles in chili oil",
        "buttermilk pancakes and maple syrup",
    ];
    let ids: Vec<String> = (0..texts.len()).map(|i| format!("v{i}")).collect();
    let train: Vec<Example> = texts
        .iter()
        .enumerate()
        .map(|(class, t)| Example {
            text: t.to_string(),
            class,
        })
        .collect();
    TrainingData::new(ids, train, Vec::new()).unwrap()
}

fn batch_loss(model: &recbias::recommender::LmRec, batch: &[&Example]) -> f64 {
    batch
        .iter()
        .map(|e| cross_entropy(&model.scores(&e.text), e.class))
        .sum::<f64>()
        / batch.len() as f64
}

fn criterion_6() -> Outcome {
    let data = memorization_data();
    let config = TrainConfig {
        hidden: 32,
        ..Default::default()
    };
    let outcome = train(&data, &config).map_err(|e| e.to_string())?;
    let acc = accuracy(&outcome.model, &data.train);
    ensure(acc == 1.0, || format!("memorization accuracy {acc}"))?;

    // gradients of every touched parameter block against central differences
    let mut model = initial_model(data.venue_ids.clone(), &config);
    model.encoder.fit_idf(data.train.iter().map(|e| e.text.as_str()));
    let batch: Vec<&Example> = data.train.iter().take(4).collect();
    let mut cap = Capture { grads: BTreeMap::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    train_step(&mut model.clone(), &batch, &mut cap, &mut rng);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    for (slot, grad) in &cap.grads {
        for (j, g) in grad.iter().enumerate().step_by(7) {
            let mut plus = model.clone();
            let mut minus = model.clone();
            match slot {
                ParamSlot::Head => {
                    plus.head.weights_mut()[j] += eps;
                    minus.head.weights_mut()[j] -= eps;
                }
                ParamSlot::EncoderRow(b) => {
                    plus.encoder.row_mut(*b)[j] += eps;
                    minus.encoder.row_mut(*b)[j] -= eps;
                }
            }
            let numeric = (batch_loss(&plus, &batch) - batch_loss(&minus, &batch)) / (2.0 * eps);
            let scale = g.abs().max(numeric.abs());
            if scale > 1e-6 {
                let rel = (g - numeric).abs() / scale;
                worst = worst.max(rel);
                ensure(rel < 1e-4, || format!("{slot:?}[{j}]: analytic {g} numeric {numeric}"))?;
                compared += 1;
            }
        }
    }
    ensure(compared > 100, || format!("only {compared} coordinates compared"))?;

    // zero learning rate
    let before = model.clone();
    let mut zero = Sgd { learning_rate: 0.0 };
    let mut after = model.clone();
    train_step(&mut after, &batch, &mut zero, &mut rng);
    ensure(after.head.weights() == before.head.weights(), || {
        "head moved at lr 0".into()
    })?;
    for e in &data.train {
        ensure(after.scores(&e.text) == before.scores(&e.text), || {
            "scores moved at lr 0".into()
        })?;
    }
    ensure(
        mean_loss(&after, &data.train) == mean_loss(&before, &data.train),
        || "loss moved at lr 0".into(),
    )?;

    // fixed seed, identical checkpoints
    let again = train(&data, &config).map_err(|e| e.to_string())?;
    ensure(
        checkpoint::to_bytes(&outcome.model) == checkpoint::to_bytes(&again.model),
        || "checkpoints differ for the same seed".into(),
    )?;
    Ok(format!(
        "accuracy 1.0, worst relative gradient error {worst:.2e} over {compared} coordinates, lr 0 no-op, identical checkpoints"
    ))
}

fn criterion_7() -> Outcome {
    let templates = default_templates();
    let lexicons = default_lexicons();
    let names = generate_probe_set(BiasType::Names, &templates, &lexicons).map_err(|e| e.to_string())?;
    let so = generate_probe_set(BiasType::SexualOrientation, &templates, &lexicons).map_err(|e| e.to_string())?;
    ensure(names.len() == 1566, || format!("{} names probes", names.len()))?;
    ensure(so.len() == 1728, || format!("{} sexual-orientation probes", so.len()))?;
    let by_id: BTreeMap<&str, &recbias::probes::Template> = templates.iter().map(|t| (t.id.as_str(), t)).collect();
    for p in &so {
        let template = by_id[p.template_id.as_str()];
        let surfaces = p.probe_id.rsplit_once('/').map(|(_, s)| s).unwrap_or_default();
        let (rel1, rel2) = surfaces
            .split_once('+')
            .ok_or_else(|| format!("probe id {}", p.probe_id))?;
        let poss = match p.labels.get("rel1_gender").map(String::as_str) {
            Some("male") => "his",
            Some("female") => "her",
            other => return Err(format!("{}: REL1 gender {other:?}", p.probe_id)),
        };
        let expected = template
            .text
            .replace(Placeholder::Rel1.token(), rel1)
            .replace(Placeholder::Rel2.token(), rel2)
            .replace(Placeholder::Poss.token(), poss);
        ensure(expected == p.text, || {
            format!("{}: {:?} vs {:?}", p.probe_id, p.text, expected)
        })?;
    }
    Ok("1566 names probes, 1728 sexual-orientation probes, possessive agrees on every one".into())
}

fn run_cli(dir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_recbias");
    for cmd in ["ingest", "train", "eval", "audit", "report"] {
        let out = Command::new(bin)
            .arg("--config")
            .arg(dir.join("run.toml"))
            .arg(cmd)
            .env("RUST_LOG", "error")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr))
        })?;
    }
    Ok(())
}

fn csv_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let (a, b) = recbias::synthetic::default_groups();
    let corpus = recbias::synthetic::generate(&Default::default(), &a, &b).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    let mut manifests = 0;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for run in ["one", "two"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        corpus.write(&dir).map_err(|e| e.to_string())?;
        std::fs::write(
            dir.join("run.toml"),
            "businesses = \"businesses.jsonl\"\nreviews = \"reviews.jsonl\"\nthreshold = 0\nk = 5\nseed = 7\n",
        )
        .map_err(|e| e.to_string())?;
        run_cli(&dir)?;
        let out = dir.join("out");
        for stage in ["ingest", "train", "eval", "audit", "report"] {
            let manifest = out.join(stage).join("manifest.json");
            let bad = recbias::manifest::verify_manifest(&manifest).map_err(|e| e.to_string())?;
            ensure(bad.is_empty(), || format!("{run}/{stage}: hash mismatch for {bad:?}"))?;
            manifests += 1;
        }
        outputs.push(csv_files(&out));
    }
    ensure(outputs[0].len() >= 10, || {
        format!("only {} CSVs emitted", outputs[0].len())
    })?;
    ensure(outputs[0].keys().eq(outputs[1].keys()), || "different CSV sets".into())?;
    for (name, bytes) in &outputs[0] {
        ensure(outputs[1][name] == *bytes, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} CSVs byte-identical across two runs, {manifests} manifests verify",
        outputs[0].len()
    ))
}

fn criterion_9() -> Outcome {
    let vals = |v: &[f64]| -> Vec<(String, Option<f64>)> {
        v.iter().enumerate().map(|(i, x)| (format!("c{i}"), Some(*x))).collect()
    };
    let agg = aggregate_cities(&vals(&[0.4, 0.6])).ok_or("no aggregate")?;
    let ci = agg.ci95.ok_or("no ci95")?;
    ensure(close(agg.mean, 0.5, 1e-12), || format!("mean {}", agg.mean))?;
    ensure(close(ci, 1.2706, 1e-3), || format!("ci95 {ci}"))?;
    let same = aggregate_cities(&vals(&[0.3, 0.3, 0.3])).ok_or("no aggregate")?;
    ensure(same.ci95 == Some(0.0), || {
        format!("identical values ci95 {:?}", same.ci95)
    })?;
    Ok(format!("mean 0.5, ci95 {ci:.4}; identical values give ci95 0"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric-oracle equivalence", criterion_1),
        ("algebraic invariants", criterion_2),
        ("ranking-metric oracles", criterion_3),
        ("planted-bias end-to-end", criterion_4),
        ("neutral-corpus null check", criterion_5),
        ("training contracts", criterion_6),
        ("probe counts", criterion_7),
        ("reproducibility", criterion_8),
        ("aggregation", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
