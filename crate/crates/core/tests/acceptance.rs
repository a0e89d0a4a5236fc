//! The nine release criteria, one test each. Every test prints a single
//! verdict line (run with `--nocapture` to see them on success).

use hydraplus::datakit::{
    generate_synthetic, render_dataset, tracklet_split, Normalization, SplitName, SplitUnit,
    SynthSpec,
};
use hydraplus::hpnet::{ablation_mask, HpNet, HpNetConfig, Task, TrainMode};
use hydraplus::metrics::{
    cmc_single_query, evaluate_attributes, evaluate_reid, instance_metrics, mean_accuracy,
    AttributePredictions, ReidSet,
};
use hydraplus::tensor::gradcheck::{standard_suite, GRADCHECK_TOL};
use hydraplus::tensor::{ops, Tensor};
use hydraplus::trainer::{LoadedSet, StageHyper, TrainError, TrainState};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

fn verdict(n: u32, name: &str, ok: bool) {
    println!("criterion {n} ({name}): {}", if ok { "pass" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed");
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let checks = standard_suite(97, 20).unwrap();
    let elapsed = start.elapsed();
    let mut ok = checks.len() >= 10 && elapsed.as_secs() < 120;
    for c in &checks {
        if !c.pass || !(c.max_rel_err < GRADCHECK_TOL) {
            eprintln!("  op {} max rel err {}", c.op, c.max_rel_err);
            ok = false;
        }
    }
    verdict(1, "gradient suite", ok);
}

// ---------------------------------------------------------------- 2

fn brute_mean_accuracy(p: &AttributePredictions) -> f64 {
    let (mut sum, mut terms) = (0.0, 0usize);
    for a in 0..p.m {
        let (mut tp, mut pos, mut tn, mut neg) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..p.n {
            let y = p.labels[i * p.m + a] == 1;
            let f = p.probabilities[i * p.m + a] >= p.threshold;
            if y {
                pos += 1.0;
                tp += f64::from(f);
            } else {
                neg += 1.0;
                tn += f64::from(!f);
            }
        }
        if pos > 0.0 {
            sum += tp / pos;
            terms += 1;
        }
        if neg > 0.0 {
            sum += tn / neg;
            terms += 1;
        }
    }
    sum / terms as f64
}

fn brute_instance(p: &AttributePredictions) -> (f64, f64, f64, f64) {
    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    for i in 0..p.n {
        let truth: Vec<usize> = (0..p.m).filter(|&a| p.labels[i * p.m + a] == 1).collect();
        let pred: Vec<usize> = (0..p.m)
            .filter(|&a| p.probabilities[i * p.m + a] >= p.threshold)
            .collect();
        let inter = truth.iter().filter(|a| pred.contains(a)).count() as f64;
        let union = (truth.len() + pred.len()) as f64 - inter;
        acc += if union == 0.0 { 1.0 } else { inter / union };
        prec += if pred.is_empty() {
            f64::from(truth.is_empty())
        } else {
            inter / pred.len() as f64
        };
        rec += if truth.is_empty() {
            f64::from(pred.is_empty())
        } else {
            inter / truth.len() as f64
        };
    }
    let n = p.n as f64;
    let (acc, prec, rec) = (acc / n, prec / n, rec / n);
    let f1 = if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    };
    (acc, prec, rec, f1)
}

#[test]
fn criterion_2_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let m = rng.gen_range(1..=6);
        let probs: Vec<f64> = (0..n * m).map(|_| rng.gen()).collect();
        let mut labels: Vec<u8> = (0..n * m).map(|_| rng.gen_range(0..=1)).collect();
        // make sure every attribute has both classes so mA is fully defined
        for a in 0..m {
            labels[a] = 0;
            if n > 1 {
                labels[m + a] = 1;
            }
        }
        let t = rng.gen_range(1..=9) as f64 / 10.0 + 0.001;
        let p = AttributePredictions::new(n, m, probs, labels, t).unwrap();
        if n > 1 {
            ok &= (mean_accuracy(&p).unwrap() - brute_mean_accuracy(&p)).abs() < 1e-12;
        }
        let got = instance_metrics(&p);
        let want = brute_instance(&p);
        ok &= (got.0 - want.0).abs() < 1e-12
            && (got.1 - want.1).abs() < 1e-12
            && (got.2 - want.2).abs() < 1e-12
            && (got.3 - want.3).abs() < 1e-12;
    }
    // hand-derived fixture
    let p = AttributePredictions::new(
        3,
        2,
        vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.7],
        vec![1, 0, 1, 1, 0, 0],
        0.5,
    )
    .unwrap();
    ok &= (mean_accuracy(&p).unwrap() - 0.75).abs() < 1e-15;
    let (acc, prec, rec, f1) = instance_metrics(&p);
    ok &= (acc - 0.5).abs() < 1e-15
        && (prec - 2.0 / 3.0).abs() < 1e-15
        && (rec - 0.5).abs() < 1e-15
        && (f1 - 4.0 / 7.0).abs() < 1e-15;
    verdict(2, "metric oracle equivalence", ok);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_cmc_fixture() {
    // gallery ids 0,1,2 at angles 0, 90, 45 degrees; every probe points at
    // 0 degrees, so true-match ranks are 1, 3, 2
    let gallery = ReidSet {
        embeddings: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        ids: vec![0, 1, 2],
        cameras: vec![0, 0, 0],
    };
    let probes = ReidSet {
        embeddings: vec![vec![1.0, 0.0]; 3],
        ids: vec![0, 1, 2],
        cameras: vec![1, 1, 1],
    };
    let cmc = cmc_single_query(&probes, &gallery, &[1, 2, 3], 100, 7).unwrap();
    let mut ok = cmc[&1] == 1.0 / 3.0 && cmc[&2] == 2.0 / 3.0 && cmc[&3] == 1.0;
    // nondecreasing + reproducible under the 100-trial protocol
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut g = ReidSet::default();
    let mut p = ReidSet::default();
    for id in 0..8u32 {
        for c in 0..3 {
            let e: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            g.embeddings.push(e);
            g.ids.push(id);
            g.cameras.push(0);
            if c == 0 {
                p.embeddings.push((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
                p.ids.push(id);
                p.cameras.push(1);
            }
        }
    }
    let ranks = [1, 2, 4, 8];
    let a = cmc_single_query(&p, &g, &ranks, 100, 5).unwrap();
    let b = cmc_single_query(&p, &g, &ranks, 100, 5).unwrap();
    ok &= a == b;
    let vals: Vec<f64> = ranks.iter().map(|r| a[r]).collect();
    ok &= vals.windows(2).all(|w| w[0] <= w[1]);
    verdict(3, "cmc fixture", ok);
}

// ---------------------------------------------------------------- 4

fn small_config(task: Task) -> HpNetConfig {
    HpNetConfig {
        stem_channels: 8,
        block_channels: [8, 8, 8],
        attention_channels: 8,
        num_attributes: 3,
        num_identities: 5,
        feature_dim: 16,
        input_height: 32,
        input_width: 24,
        task,
        ..HpNetConfig::default()
    }
}

#[test]
fn criterion_4_architecture_identities() {
    let mut net = HpNet::build(small_config(Task::Attributes), 41).unwrap();
    net.construct_afnet(41);
    net.init_fusion(41);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let x = Tensor::new(
        vec![1, 3, 32, 24],
        (0..3 * 32 * 24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let mode = TrainMode::eval();
    let mut ok = true;

    // all-ones attention == unmasked propagation, bit for bit
    let stem_out = net.stem_forward(&x, &mode).unwrap();
    let af = net.af.as_ref().unwrap();
    for i in 0..3 {
        let feats = af.columns[i].forward_features(&stem_out, [false; 3]).unwrap();
        for (k, fk) in feats.iter().enumerate() {
            let ones = Tensor::new(
                vec![1, 1, fk.dims()[2], fk.dims()[3]],
                vec![1.0; fk.dims()[2] * fk.dims()[3]],
            );
            let masked = ops::mul_broadcast(&ones, fk).unwrap();
            let a = af.columns[i].propagate(&masked, k, [false; 3]).unwrap();
            let b = af.columns[i].propagate(fk, k, [false; 3]).unwrap();
            ok &= *a.data() == *b.data();
        }
    }

    // zero connectivity: fused features collapse to the M-net pathway
    let mut pruned = HpNet::build(small_config(Task::Attributes), 41).unwrap();
    pruned.config.connectivity = ablation_mask("mnet_only").unwrap();
    let (fused, _) = pruned.fused_features(&x, &mode).unwrap();
    let mnet = pruned
        .mnet_vector(&pruned.stem_forward(&x, &mode).unwrap(), &mode)
        .unwrap();
    ok &= *fused.data() == *mnet.data();

    // full connectivity: exactly 9 sub-branches, L=8 channels each
    ok &= net.config.num_sub_branches() == 9;
    ok &= net.config.attention_channels == 8;
    ok &= HpNetConfig::default().attention_channels == 8;
    let mut count = 0;
    for i in 0..3 {
        let (vecs, stack) = net.branch_forward(i, &stem_out, &mode).unwrap();
        count += vecs.len();
        ok &= stack.alpha.dims()[1] == 8;
    }
    ok &= count == 9;
    verdict(4, "architecture identities", ok);
}

// ---------------------------------------------------------------- 5

/// Two trivially separable attributes (brightness, red channel).
fn toy_set(n: usize) -> LoadedSet {
    let (h, w) = (32usize, 24usize);
    let mut images = Vec::new();
    let mut attrs = Vec::new();
    for i in 0..n {
        let bright = i % 2 == 1;
        let red = (i / 2) % 2 == 1;
        let mut data = vec![if bright { 0.6 } else { -0.6 }; 3 * h * w];
        if red {
            for v in data[..h * w].iter_mut() {
                *v += 0.8;
            }
        }
        images.push(Tensor::new(vec![3, h, w], data));
        attrs.push(vec![bright as u8, red as u8]);
    }
    LoadedSet {
        ids: (0..n as u32).map(|i| i % 4).collect(),
        cameras: vec![0; n],
        images,
        attrs,
        num_attributes: 2,
        height: h,
        width: w,
    }
}

fn snapshot(net: &HpNet) -> HashMap<String, Vec<f32>> {
    net.named_tensors()
        .into_iter()
        .map(|nt| (nt.name, nt.tensor.data().clone()))
        .collect()
}

#[test]
fn criterion_5_stage_wise_contract() {
    let mut cfg = small_config(Task::Attributes);
    cfg.num_attributes = 2;
    let data = toy_set(16);
    let hyper = StageHyper {
        epochs: 1,
        batch_size: 8,
        lr: 0.02,
        ..StageHyper::default()
    };
    let mut ok = true;

    let mut st = TrainState::new(cfg.clone(), 51).unwrap();
    // ordering violations rejected before stage 1
    ok &= matches!(st.run_stage2(0, &data, &hyper, 51), Err(TrainError::StageOrder(_)));
    ok &= matches!(st.run_stage3(&data, &hyper, 51), Err(TrainError::StageOrder(_)));
    st.run_stage1(&data, &hyper, 51).unwrap();
    st.construct_afnet(51).unwrap();

    // stage 2 per module: everything outside the module's attention head
    // and downstream blocks stays bit-identical
    for m in 0..3 {
        let before = snapshot(&st.net);
        st.run_stage2(m, &data, &hyper, 51).unwrap();
        let allowed = [
            format!("att{}.", m + 1),
            format!("af{}.block2.", m + 1),
            format!("af{}.block3.", m + 1),
        ];
        for (name, d) in snapshot(&st.net) {
            if allowed.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            if d != before[&name] {
                eprintln!("  stage2 module {m} modified frozen {name}");
                ok = false;
            }
        }
    }

    // stage 3: only the fusion head moves
    let before = snapshot(&st.net);
    st.run_stage3(&data, &hyper, 51).unwrap();
    for (name, d) in snapshot(&st.net) {
        if name.starts_with("fusion.") {
            continue;
        }
        if d != before[&name] {
            eprintln!("  stage3 modified frozen {name}");
            ok = false;
        }
    }
    verdict(5, "stage-wise freeze contract", ok);
}

// ------------------------------------------------------- shared 6/7

struct Trained {
    state: TrainState,
}

fn attr_hyper() -> [StageHyper; 3] {
    let h = |epochs, lr| StageHyper {
        epochs,
        batch_size: 16,
        lr,
        ..StageHyper::default()
    };
    [h(2, 0.05), h(1, 0.02), h(2, 0.02)]
}

/// Train one connectivity variant from a shared stage-1 checkpoint.
fn train_variant(
    stage1_ckpt: &Path,
    mask: [[bool; 3]; 3],
    data: &LoadedSet,
    hyper: &[StageHyper; 3],
    seed: u64,
) -> Trained {
    let mut st = TrainState::load(stage1_ckpt).unwrap();
    st.net.config.connectivity = mask;
    if mask.iter().flatten().any(|&b| b) {
        st.construct_afnet(seed).unwrap();
    }
    for m in 0..3 {
        st.run_stage2(m, data, &hyper[1], seed).unwrap();
    }
    st.run_stage3(data, &hyper[2], seed).unwrap();
    Trained { state: st }
}

fn load_default_sets(
    dir: &Path,
    spec: &SynthSpec,
    cfg: &HpNetConfig,
    unit: SplitUnit,
    seed: u64,
) -> (LoadedSet, LoadedSet) {
    let manifest = generate_synthetic(spec, dir).unwrap();
    let split = tracklet_split(&manifest.records, manifest.num_attributes(), [8, 1, 1], seed, unit)
        .unwrap();
    let norm = Normalization::default();
    let train = hydraplus::trainer::load_split(
        dir,
        &manifest,
        &split,
        SplitName::Train,
        cfg.input_height,
        cfg.input_width,
        norm,
    )
    .unwrap();
    let test = hydraplus::trainer::load_split(
        dir,
        &manifest,
        &split,
        SplitName::Test,
        cfg.input_height,
        cfg.input_width,
        norm,
    )
    .unwrap();
    (train, test)
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_attribute_directional_claim() {
    let budget = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::default_attributes_task(61);
    let cfg = HpNetConfig::default();
    let (train, test) = load_default_sets(dir.path(), &spec, &cfg, SplitUnit::Tracklet, 61);
    let hyper = attr_hyper();

    let variants = ["complete", "prune_two", "mnet_only"];
    let mut means = HashMap::new();
    for v in variants {
        means.insert(v, 0.0f64);
    }
    let seeds = [610u64, 611, 612];
    for &seed in &seeds {
        let mut base = TrainState::new(cfg.clone(), seed).unwrap();
        base.run_stage1(&train, &hyper[0], seed).unwrap();
        let ckpt = dir.path().join(format!("s1_{seed}.ckpt"));
        base.save(&ckpt).unwrap();
        for v in variants {
            let trained = train_variant(&ckpt, ablation_mask(v).unwrap(), &train, &hyper, seed);
            let rep = evaluate_attributes(&trained.state.net, &test, 32, seed).unwrap();
            println!("  seed {seed} {v}: mA {:.4}", rep.m_a);
            *means.get_mut(v).unwrap() += rep.m_a / seeds.len() as f64;
        }
    }
    let complete = means["complete"];
    let mnet = means["mnet_only"];
    let pruned = means["prune_two"];
    println!(
        "  3-seed means: complete {complete:.4}, prune_two {pruned:.4}, mnet_only {mnet:.4}, wall {:?}",
        budget.elapsed()
    );
    let ok = complete >= mnet + 0.02 && complete >= pruned && budget.elapsed().as_secs() < 45 * 60;
    verdict(6, "attribute directional claim", ok);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_synthetic_reid() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::default_reid_task(71);
    let mut cfg = HpNetConfig::default();
    cfg.task = Task::Reid;
    let (train, test) = load_default_sets(dir.path(), &spec, &cfg, SplitUnit::Identity, 71);
    let (_, k) = hydraplus::trainer::identity_labels(&train.ids);
    cfg.num_identities = k;
    let hyper = attr_hyper();

    let gallery_ids: std::collections::BTreeSet<u32> = test.ids.iter().copied().collect();
    let chance = 1.0 / gallery_ids.len() as f64;

    let seeds = [710u64, 711, 712];
    let (mut complete, mut mnet) = (0.0f64, 0.0f64);
    for &seed in &seeds {
        let mut base = TrainState::new(cfg.clone(), seed).unwrap();
        base.run_stage1(&train, &hyper[0], seed).unwrap();
        let ckpt = dir.path().join(format!("s1_{seed}.ckpt"));
        base.save(&ckpt).unwrap();
        for (name, acc) in [("complete", &mut complete), ("mnet_only", &mut mnet)] {
            let trained = train_variant(&ckpt, ablation_mask(name).unwrap(), &train, &hyper, seed);
            let rep = evaluate_reid(&trained.state.net, &test, 32, 100, seed).unwrap();
            println!("  seed {seed} {name}: top-1 {:.4}", rep.cmc["1"]);
            *acc += rep.cmc["1"] / seeds.len() as f64;
        }
    }
    println!(
        "  3-seed means: complete {complete:.4}, mnet_only {mnet:.4}, chance {chance:.4}"
    );
    let ok = complete >= mnet && complete >= 5.0 * chance && mnet >= 5.0 * chance;
    verdict(7, "synthetic reid", ok);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_split_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let mut ok = true;
    for round in 0..100u64 {
        let mut spec = SynthSpec::default_attributes_task(round);
        spec.train_images = rng.gen_range(24..=60);
        spec.val_images = rng.gen_range(3..=8);
        spec.test_images = rng.gen_range(3..=8);
        spec.num_identities = rng.gen_range(8..=20);
        let records: Vec<_> = render_dataset(&spec)
            .unwrap()
            .into_iter()
            .map(|s| s.record)
            .collect();
        let split = match tracklet_split(
            &records,
            spec.attributes.len(),
            [8, 1, 1],
            round,
            SplitUnit::Tracklet,
        ) {
            Ok(s) => s,
            Err(e) => {
                // infeasible coverage must be reported, not fudged
                if !e.to_string().contains("infeasible") {
                    eprintln!("  round {round}: unexpected error {e}");
                    ok = false;
                }
                continue;
            }
        };
        let mut seen = HashMap::new();
        for r in &records {
            let s = split.split_of(r).unwrap();
            if *seen.entry(r.tracklet).or_insert(s) != s {
                eprintln!("  round {round}: tracklet {} split across sets", r.tracklet);
                ok = false;
            }
        }
        let total = seen.len() as f64;
        for (name, want) in [
            (SplitName::Train, 0.8),
            (SplitName::Val, 0.1),
            (SplitName::Test, 0.1),
        ] {
            let got = seen.values().filter(|&&s| s == name).count() as f64;
            if (got - want * total).abs() > 1.0 + 1e-9 {
                eprintln!("  round {round}: {name:?} has {got} of {total} tracklets");
                ok = false;
            }
        }
        // coverage: accepted splits expose both classes of every attribute
        // wherever the whole dataset does
        for a in 0..spec.attributes.len() {
            for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
                let part: Vec<_> = records
                    .iter()
                    .filter(|r| split.split_of(r) == Some(name))
                    .collect();
                let has_pos = part.iter().any(|r| r.attrs[a] == 1);
                let has_neg = part.iter().any(|r| r.attrs[a] == 0);
                let global_pos = records.iter().any(|r| r.attrs[a] == 1);
                let global_neg = records.iter().any(|r| r.attrs[a] == 0);
                if (global_pos && !has_pos) || (global_neg && !has_neg) {
                    eprintln!("  round {round}: attribute {a} uncovered in {name:?}");
                    ok = false;
                }
            }
        }
    }
    verdict(8, "split properties", ok);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_determinism() {
    let bin = env!("CARGO_BIN_EXE_hydraplus");
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(
        &spec_path,
        r#"{
  "train_images": 120, "val_images": 16, "test_images": 16,
  "num_identities": 16,
  "attributes": [
    {"name": "striped_shirt", "level": "texture", "positive_rate": 0.5},
    {"name": "hat", "level": "object", "positive_rate": 0.5}
  ],
  "width": 48, "height": 64, "seed": 9
}"#,
    )
    .unwrap();
    let cfg_path = dir.path().join("run.json");
    std::fs::write(
        &cfg_path,
        r#"{
  "seed": 9, "threads": 1,
  "net": {"stem_channels": 8, "block_channels": [8, 8, 8],
          "attention_channels": 4, "feature_dim": 16,
          "input_height": 32, "input_width": 24},
  "stage1": {"epochs": 1, "batch_size": 8},
  "stage2": {"epochs": 1, "batch_size": 8},
  "stage3": {"epochs": 1, "batch_size": 8}
}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let runs: Vec<(Vec<u8>, Vec<u8>)> = ["r1", "r2"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            for args in [
                vec!["synth", "--spec", spec_path.to_str().unwrap(), "--data", data.to_str().unwrap()],
                vec!["split", "--data", data.to_str().unwrap()],
                vec!["train", "--data", data.to_str().unwrap(), "--stage", "all"],
            ] {
                let st = std::process::Command::new(bin)
                    .arg("--config")
                    .arg(&cfg_path)
                    .arg("--out")
                    .arg(&out)
                    .args(&args)
                    .status()
                    .unwrap();
                assert!(st.success(), "{args:?} failed");
            }
            let report = out.join("report.json");
            let st = std::process::Command::new(bin)
                .arg("--config")
                .arg(&cfg_path)
                .args([
                    "eval",
                    "--checkpoint",
                    out.join("model.ckpt").to_str().unwrap(),
                    "--data",
                    data.to_str().unwrap(),
                    "--report",
                    report.to_str().unwrap(),
                ])
                .status()
                .unwrap();
            assert!(st.success());
            (
                std::fs::read(out.join("model.ckpt")).unwrap(),
                std::fs::read(report).unwrap(),
            )
        })
        .collect();
    let ok = runs[0].0 == runs[1].0 && runs[0].1 == runs[1].1;
    verdict(9, "determinism", ok);
}

// ----------------------------------------------------------------

#[test]
fn dataset_is_learnable_at_the_declared_levels() {
    // a raw-pixel linear probe separates global attributes but stays near
    // chance on object attributes — localization genuinely matters
    let spec = SynthSpec {
        train_images: 300,
        val_images: 0,
        test_images: 100,
        ..SynthSpec::default_attributes_task(88)
    };
    let samples = render_dataset(&spec).unwrap();
    let manifest_attrs = &spec.attributes;
    let global_idx = manifest_attrs
        .iter()
        .position(|a| a.name == "warm_tint")
        .unwrap();
    let object_idx = manifest_attrs.iter().position(|a| a.name == "badge").unwrap();

    // 12x8 mean-pooled pixels as features
    let feats: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let img = hydraplus::datakit::decode_image(&s.ppm_bytes, 12, 8, Normalization::default())
                .unwrap();
            let d = img.data();
            d.iter().map(|&v| v as f64).collect()
        })
        .collect();
    let score = |attr: usize| -> f64 {
        // one ridge-regression pass per attribute, closed-form on the
        // diagonal-preconditioned normal equations via gradient steps
        let d = feats[0].len();
        let mut wvec = vec![0.0f64; d + 1];
        let train = &feats[..300];
        for _ in 0..200 {
            let mut grad = vec![0.0f64; d + 1];
            for (f, s) in train.iter().zip(&samples[..300]) {
                let y = s.record.attrs[attr] as f64;
                let z: f64 = wvec[d] + f.iter().zip(&wvec[..d]).map(|(a, b)| a * b).sum::<f64>();
                let p = 1.0 / (1.0 + (-z).exp());
                let g = p - y;
                for (gi, fi) in grad[..d].iter_mut().zip(f) {
                    *gi += g * fi;
                }
                grad[d] += g;
            }
            for (w, g) in wvec.iter_mut().zip(&grad) {
                *w -= 0.01 * (g / 300.0);
            }
        }
        let test = &feats[300..];
        let mut correct = 0.0;
        for (f, s) in test.iter().zip(&samples[300..]) {
            let z: f64 = wvec[d] + f.iter().zip(&wvec[..d]).map(|(a, b)| a * b).sum::<f64>();
            let pred = (z >= 0.0) as u8;
            correct += f64::from(pred == s.record.attrs[attr]);
        }
        correct / test.len() as f64
    };
    let global_acc = score(global_idx);
    let object_acc = score(object_idx);
    println!("  linear probe: global {global_acc:.3}, object {object_acc:.3}");
    assert!(
        global_acc >= 0.6,
        "global attribute should be linearly separable, got {global_acc}"
    );
    assert!(
        object_acc <= global_acc,
        "object attribute should be harder for raw pixels"
    );
}
