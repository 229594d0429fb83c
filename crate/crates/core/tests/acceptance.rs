//! Acceptance run: one PASS/FAIL line per criterion and a closing summary.
//! The verdicts are reported, not asserted; a panic (I/O, invalid data)
//! still fails the target. The desk-scale training criteria take roughly
//! half an hour on one core.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use multifruit::dataset::{
    generate_synthetic, preprocess, split_manifest, DatasetManifest, Label, Split, SplitData, SyntheticParams,
};
use multifruit::image::read_image;
use multifruit::nn::{Arch, BackboneKind, Checkpoint, Model, ModelSpec};
use multifruit::silhouette::{extract_silhouette, SilhouetteParams};
use multifruit::tensor::kernels::{conv2d, depthwise_conv2d, maxpool2d};
use multifruit::tensor::{
    gradient_check, relative_error, Activation, BnMode, GradCheckConfig, Prng, RunningStats, Tape, Tensor, Var,
};
use multifruit::train::{compare_report, compute_metrics, evaluate, evaluate_data, train, ConfusionMatrix, EpochLog, TrainConfig};
use multifruit::Result;

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_CASES: usize = 120;
const DESK_ACCURACY: f64 = 0.95;
const DESK_MINUTES: f64 = 20.0;
const CLAIM_TOLERANCE: f64 = 0.01;
const CORPUS_SEED: u64 = 2024;
const SPLIT_SEED: u64 = 7;
const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];

struct Verdicts(Vec<(usize, bool)>);

impl Verdicts {
    fn record(&mut self, id: usize, pass: bool, what: &str, detail: String) {
        println!("criterion {id} {}  {what}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push((id, pass));
    }
}

fn random(shape: &[usize], prng: &mut Prng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| prng.uniform(-scale, scale))
}

fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(random(&shape, &mut Prng::new(99), 1.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Graph = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn op_cases(prng: &mut Prng) -> Vec<(&'static str, Vec<Tensor<f64>>, Graph)> {
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, Graph)> = Vec::new();
    for (i, (s, pad, hw)) in [(1, 1, 5), (2, 1, 7), (1, 0, 6)].into_iter().enumerate() {
        let c = 2 + i;
        cases.push((
            "conv2d",
            vec![random(&[2, c, hw, hw], prng, 1.0), random(&[3, c, 3, 3], prng, 1.0), random(&[3], prng, 1.0)],
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), s, pad)?;
                weighted_sum(t, y)
            }),
        ));
        cases.push((
            "depthwise_conv2d",
            vec![random(&[2, c, hw, hw], prng, 1.0), random(&[c, 1, 3, 3], prng, 1.0), random(&[c], prng, 1.0)],
            Box::new(move |t, v| {
                let y = t.depthwise_conv2d(v[0], v[1], Some(v[2]), s, pad)?;
                weighted_sum(t, y)
            }),
        ));
        let n = 2 + i;
        let labels: Vec<usize> = (0..n).map(|k| k % 2).collect();
        cases.push((
            "dense+softmax_cross_entropy",
            vec![random(&[n, 3 + i], prng, 1.0), random(&[3 + i, 2], prng, 1.0), random(&[2], prng, 1.0)],
            Box::new(move |t, v| {
                let y = t.dense(v[0], v[1], Some(v[2]))?;
                Ok(t.softmax_cross_entropy(y, &labels)?.0)
            }),
        ));
        for act in [Activation::Linear, Activation::Relu, Activation::Relu6] {
            let gamma = Tensor::from_fn(&[2], |_| 0.5 + prng.next_f64());
            cases.push((
                "batchnorm(train)+act",
                vec![random(&[2 + i, 2, 3, 3], prng, 4.0), gamma, Tensor::from_f64(&[2], &[0.5, 3.0]).unwrap()],
                Box::new(move |t, v| {
                    let mut stats = RunningStats::new(2);
                    let y = t.batchnorm_act(v[0], v[1], v[2], &mut stats, BnMode::Train, 0.9, 1e-5, act)?;
                    weighted_sum(t, y)
                }),
            ));
        }
        for act in [Activation::Relu, Activation::Relu6] {
            cases.push((
                "activation",
                vec![random(&[2, 2, hw, hw], prng, 8.0)],
                Box::new(move |t, v| {
                    let y = t.activation(v[0], act)?;
                    weighted_sum(t, y)
                }),
            ));
        }
        cases.push((
            "maxpool2d",
            vec![random(&[2, 2, hw, hw], prng, 1.0)],
            Box::new(|t, v| {
                let y = t.maxpool2d(v[0], 2, 2)?;
                weighted_sum(t, y)
            }),
        ));
        cases.push((
            "global_avg_pool",
            vec![random(&[2, 3, hw, hw], prng, 1.0)],
            Box::new(|t, v| {
                let y = t.global_avg_pool(v[0])?;
                weighted_sum(t, y)
            }),
        ));
        cases.push((
            "add/mul/scale/concat",
            vec![random(&[n, 3], prng, 1.0), random(&[n, 3], prng, 1.0), random(&[n, 2], prng, 1.0)],
            Box::new(|t, v| {
                let a = t.add(v[0], v[1])?;
                let m = t.mul(a, v[0])?;
                let s = t.scale(m, -0.7)?;
                let c = t.concat_features(s, v[2])?;
                weighted_sum(t, c)
            }),
        ));
    }
    cases
}

fn end_to_end_check(backbone: BackboneKind) -> (f64, usize) {
    let spec = ModelSpec { arch: Arch::Multi, backbone, image_size: 32, hidden: 8 };
    let mut model = Model::<f64>::build(spec, &mut Prng::new(21)).unwrap();
    let mut prng = Prng::new(22);
    let rgb = Tensor::from_fn(&[2, 3, 32, 32], |_| prng.next_f64());
    let sil = Tensor::from_fn(&[2, 1, 32, 32], |_| if prng.next_f64() < 0.5 { 0.0 } else { 1.0 });
    let params: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
    let config = GradCheckConfig { eps: GRAD_EPS, max_coords_per_tensor: Some(2), seed: 0 };
    let r = gradient_check(&params, &config, |t, v| {
        let logits = model.forward_with(t, v, &rgb, Some(&sil), BnMode::Train)?;
        Ok(t.softmax_cross_entropy(logits, &[0, 1])?.0)
    })
    .unwrap();
    (r.max_rel_error, r.checked)
}

fn criterion_1(v: &mut Verdicts) {
    let start = Instant::now();
    let mut prng = Prng::new(1);
    let mut worst_op = (0.0f64, "");
    let mut op_pass = true;
    for (name, params, graph) in op_cases(&mut prng) {
        let config = GradCheckConfig { eps: GRAD_EPS, ..Default::default() };
        let r = gradient_check(&params, &config, |t, p| graph(t, p)).unwrap();
        op_pass &= r.checked > 0 && r.max_rel_error <= GRAD_TOL;
        if r.max_rel_error >= worst_op.0 {
            worst_op = (r.max_rel_error, name);
        }
    }
    let mut detail = format!("ops max rel err {:.2e} ({})", worst_op.0, worst_op.1);
    let mut pass = op_pass;
    for backbone in [BackboneKind::MobilenetLite, BackboneKind::VggLite] {
        let (err, checked) = end_to_end_check(backbone);
        pass &= err <= GRAD_TOL && checked > 0;
        detail += &format!("; multi {} 32x32 batch 2: {err:.2e} over {checked} coords", backbone.name());
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 120.0;
    detail += &format!("; tol {GRAD_TOL:e}, eps {GRAD_EPS:e}, {secs:.0}s");
    v.record(1, pass, "gradient correctness", detail);
}

fn padded(x: &Tensor<f64>, n: usize, c: usize, r: isize, col: isize) -> f64 {
    let s = x.shape();
    if r < 0 || col < 0 || r as usize >= s[2] || col as usize >= s[3] {
        0.0
    } else {
        x.at(&[n, c, r as usize, col as usize])
    }
}

fn max_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter().zip(want).map(|(&g, &w)| relative_error(g, w)).fold(0.0, f64::max)
}

fn pick(prng: &mut Prng, lo: usize, hi: usize) -> usize {
    prng.range_inclusive(lo as u64, hi as u64) as usize
}

fn criterion_2(v: &mut Verdicts) {
    let mut prng = Prng::new(2);
    let (mut conv, mut dw, mut pool) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..ORACLE_CASES {
        let (n, ci, co) = (pick(&mut prng, 1, 2), pick(&mut prng, 1, 4), pick(&mut prng, 1, 4));
        let (k, s, pad) = (pick(&mut prng, 1, 3), pick(&mut prng, 1, 2), pick(&mut prng, 0, 1));
        let (h, w) = (pick(&mut prng, k.max(2), 9), pick(&mut prng, k.max(2), 9));
        let (oh, ow) = ((h + 2 * pad - k) / s + 1, (w + 2 * pad - k) / s + 1);
        let x = random(&[n, ci, h, w], &mut prng, 2.0);
        let wt = random(&[co, ci, k, k], &mut prng, 2.0);
        let b = random(&[co], &mut prng, 2.0);
        let mut want = Vec::new();
        for nn in 0..n {
            for o in 0..co {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = b.data()[o];
                        for i in 0..ci {
                            for u in 0..k {
                                for q in 0..k {
                                    let (rr, cc) = ((r * s + u) as isize - pad as isize, (c * s + q) as isize - pad as isize);
                                    acc += padded(&x, nn, i, rr, cc) * wt.at(&[o, i, u, q]);
                                }
                            }
                        }
                        want.push(acc);
                    }
                }
            }
        }
        conv = conv.max(max_err(conv2d(&x, &wt, Some(&b), s, pad).unwrap().0.data(), &want));

        let wd = random(&[ci, 1, k, k], &mut prng, 2.0);
        let bd = random(&[ci], &mut prng, 2.0);
        let mut want = Vec::new();
        for nn in 0..n {
            for ch in 0..ci {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = bd.data()[ch];
                        for u in 0..k {
                            for q in 0..k {
                                let (rr, cc) = ((r * s + u) as isize - pad as isize, (c * s + q) as isize - pad as isize);
                                acc += padded(&x, nn, ch, rr, cc) * wd.at(&[ch, 0, u, q]);
                            }
                        }
                        want.push(acc);
                    }
                }
            }
        }
        dw = dw.max(max_err(depthwise_conv2d(&x, &wd, Some(&bd), s, pad).unwrap().0.data(), &want));

        let (pk, ps) = (pick(&mut prng, 1, k.max(2).min(h.min(w))), pick(&mut prng, 1, 2));
        let (ph, pw) = ((h - pk) / ps + 1, (w - pk) / ps + 1);
        let mut want = Vec::new();
        for nn in 0..n {
            for ch in 0..ci {
                for r in 0..ph {
                    for c in 0..pw {
                        let mut m = f64::NEG_INFINITY;
                        for u in 0..pk {
                            for q in 0..pk {
                                m = m.max(x.at(&[nn, ch, r * ps + u, c * ps + q]));
                            }
                        }
                        want.push(m);
                    }
                }
            }
        }
        pool = pool.max(max_err(maxpool2d(&x, pk, ps).unwrap().0.data(), &want));
    }
    let pass = conv <= ORACLE_TOL && dw <= ORACLE_TOL && pool <= ORACLE_TOL;
    let detail = format!(
        "{ORACLE_CASES} cases each; max rel err conv2d {conv:.1e}, depthwise {dw:.1e}, maxpool {pool:.1e} (tol {ORACLE_TOL:e})"
    );
    v.record(2, pass, "kernel oracles", detail);
}

fn criterion_3(v: &mut Verdicts) {
    let perfect = compute_metrics(&ConfusionMatrix([[214, 0], [0, 173]])).unwrap();
    let perfect_ok = [perfect.accuracy, perfect.precision, perfect.recall, perfect.f1].iter().all(|x| (x - 1.0).abs() <= 1e-12);
    let m = compute_metrics(&ConfusionMatrix([[9, 1], [2, 8]])).unwrap();
    let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
    let want = [0.85, (9.0 / 11.0 + 8.0 / 9.0) / 2.0, 0.85, (f(9.0 / 11.0, 0.9) + f(8.0 / 9.0, 0.8)) / 2.0];
    let got = [m.accuracy, m.precision, m.recall, m.f1];
    let hand_ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-6);
    let detail = format!(
        "[[214,0],[0,173]] -> {:.1} {:.1} {:.1} {:.1}; [[9,1],[2,8]] -> {:.4} {:.4} {:.4} {:.4}",
        perfect.accuracy, perfect.precision, perfect.recall, perfect.f1, got[0], got[1], got[2], got[3]
    );
    v.record(3, perfect_ok && hand_ok, "metrics arithmetic", detail);
}

struct Run {
    arch: Arch,
    seed: u64,
    test_accuracy: f64,
    metrics: multifruit::train::Metrics,
    logs: Vec<EpochLog>,
    best: Checkpoint,
    model: Model<f32>,
    minutes: f64,
}

fn desk_corpus(root: &Path) -> DatasetManifest {
    let p = SyntheticParams { image_size: 64, per_class: 500, defect_contrast: 0.15, ..Default::default() };
    let c = generate_synthetic(&p, CORPUS_SEED, &root.join("raw")).unwrap();
    let pre = preprocess(&c.manifest, &root.join("sil"), &SilhouetteParams::default()).unwrap();
    split_manifest(&pre.manifest, [0.8, 0.1, 0.1], SPLIT_SEED).unwrap()
}

fn desk_run(manifest: &DatasetManifest, arch: Arch, seed: u64) -> Run {
    let cfg = TrainConfig { arch, seed, ..TrainConfig::desk() };
    let start = Instant::now();
    let mut model = cfg.build_model::<f32>().unwrap();
    let out = train(&mut model, manifest, &cfg, &mut |_| {}).unwrap();
    let (_, metrics) = evaluate(&model, manifest, Split::Test).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    println!(
        "  {} seed {seed}: best epoch {} val {:.3} test {:.3} ({minutes:.1} min)",
        arch.name(),
        out.best_epoch,
        out.best.meta.val_accuracy,
        metrics.accuracy
    );
    Run { arch, seed, test_accuracy: metrics.accuracy, metrics, logs: out.logs, best: out.best, model, minutes }
}

fn criterion_4(v: &mut Verdicts, manifest: &DatasetManifest) -> Run {
    let counts: Vec<[usize; 2]> =
        [Split::Train, Split::Val, Split::Test].iter().map(|&s| manifest.class_counts(Some(s))).collect();
    let layout_ok = counts == [[400, 400], [50, 50], [50, 50]];
    let run = desk_run(manifest, Arch::Multi, TRAIN_SEEDS[0]);
    let epochs = run.logs.len();
    let pass = layout_ok && run.test_accuracy >= DESK_ACCURACY && epochs <= 30 && run.minutes <= DESK_MINUTES;
    let detail = format!(
        "per-class train/val/test {}/{}/{}; test accuracy {:.4} (>= {DESK_ACCURACY}) after {epochs} epochs in {:.1} min (<= {DESK_MINUTES})",
        counts[0][0], counts[1][0], counts[2][0], run.test_accuracy, run.minutes
    );
    v.record(4, pass, "desk-scale multi-input result", detail);

    let losses: Vec<f64> = run.logs.iter().take(5).map(|l| l.train_loss).collect();
    let decreasing = losses.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = losses.iter().map(|l| format!("{l:.4}")).collect();
    println!("  first-5-epoch train loss {} ({})", shown.join(" > "), if decreasing { "strictly decreasing" } else { "NOT strictly decreasing" });
    run
}

fn criterion_5(v: &mut Verdicts, manifest: &DatasetManifest, first: &Run) {
    let mut rows = vec![(first.arch, BackboneKind::MobilenetLite, first.metrics)];
    let mut accs = vec![(first.arch, first.seed, first.test_accuracy)];
    for &seed in &TRAIN_SEEDS {
        for arch in [Arch::Multi, Arch::Single] {
            if arch == first.arch && seed == first.seed {
                continue;
            }
            let r = desk_run(manifest, arch, seed);
            rows.push((arch, BackboneKind::MobilenetLite, r.metrics));
            accs.push((arch, seed, r.test_accuracy));
        }
    }
    let report = compare_report(&rows, CLAIM_TOLERANCE).unwrap();
    let pair = &report.pairs[0];
    let per_seed: Vec<String> = accs.iter().map(|(a, s, x)| format!("{}#{s}={x:.2}", a.name())).collect();
    let detail = format!(
        "mean test accuracy multi {:.4} vs single {:.4} (tolerance {CLAIM_TOLERANCE}); flag {}; [{}]",
        pair.multi_accuracy,
        pair.single_accuracy,
        report.multi_ge_single,
        per_seed.join(" ")
    );
    v.record(5, report.multi_ge_single, "multi-input vs single-input direction", detail);
}

fn criterion_6(v: &mut Verdicts, root: &Path) {
    let p = SyntheticParams { per_class: 30, defect_contrast: 0.15, ..Default::default() };
    let c = generate_synthetic(&p, 606, root).unwrap();
    let (mut ok, mut total) = (0, 0);
    for s in &c.samples {
        total += 1;
        let e = extract_silhouette(&read_image(&s.rgb).unwrap().into_rgb(), &SilhouetteParams::default()).unwrap();
        let px = e.silhouette.pixels();
        let fruit = e.fruit_mask.bits();
        let two_valued = px.iter().all(|&x| x == 0 || x == 255);
        let background_black = fruit.iter().zip(px).all(|(&f, &x)| f || x == 0);
        let defects_inside = e.defect_mask.bits().iter().zip(fruit).zip(px).all(|((&d, &f), &x)| !d || (f && x == 0));
        let frac_ok = match s.label {
            Label::Healthy => e.report.defect_frac == 0.0,
            Label::Defective => e.report.defect_frac > 0.0,
        };
        if e.report.accepted() && two_valued && background_black && defects_inside && frac_ok {
            ok += 1;
        }
    }
    v.record(6, ok == total && total >= 50, "silhouette semantics", format!("{ok}/{total} images satisfy every rule"));
}

fn criterion_7(v: &mut Verdicts, root: &Path) {
    let p = SyntheticParams { per_class: 40, corrupt_frac: 0.25, ..Default::default() };
    let c = generate_synthetic(&p, 707, root).unwrap();
    let (mut false_accept, mut false_reject, mut corrupted) = (0, 0, 0);
    for s in &c.samples {
        let r = extract_silhouette(&read_image(&s.rgb).unwrap().into_rgb(), &SilhouetteParams::default()).unwrap().report;
        corrupted += usize::from(s.corruption.is_some());
        match (s.corruption.is_some(), r.accepted()) {
            (true, true) => false_accept += 1,
            (false, false) => false_reject += 1,
            _ => {}
        }
    }
    let detail = format!(
        "{corrupted} of {} images corrupted; false accepts {false_accept}, false rejects {false_reject}",
        c.samples.len()
    );
    v.record(7, false_accept == 0 && false_reject == 0 && corrupted > 0, "refinement filter", detail);
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn log_bits(logs: &[EpochLog]) -> Vec<[u64; 3]> {
    logs.iter().map(|l| [l.train_loss.to_bits(), l.train_accuracy.to_bits(), l.val_accuracy.to_bits()]).collect()
}

fn criterion_8(v: &mut Verdicts, root: &Path, manifest: &DatasetManifest, run: &Run) {
    let p = SyntheticParams { image_size: 32, per_class: 12, corrupt_frac: 0.25, ..Default::default() };
    let mut trees = Vec::new();
    let mut manifests = Vec::new();
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let dir = root.join(name);
        let c = generate_synthetic(&p, 808, &dir.join("raw")).unwrap();
        let pre = preprocess(&c.manifest, &dir.join("sil"), &SilhouetteParams::default()).unwrap();
        let m = split_manifest(&pre.manifest, [0.5, 0.25, 0.25], 8).unwrap();
        m.write(&dir.join("sil/manifest.jsonl")).unwrap();
        manifests.push(fs::read(dir.join("sil/manifest.jsonl")).unwrap());
        trees.push(tree(&dir));
        let cfg = TrainConfig { epochs: 2, image_size: 32, batch_size: 4, seed: 8, ..TrainConfig::desk() };
        let mut model = cfg.build_model::<f32>().unwrap();
        logs.push(log_bits(&train(&mut model, &m, &cfg, &mut |_| {}).unwrap().logs));
    }
    let corpus_ok = trees[0] == trees[1];
    let manifest_ok = manifests[0] == manifests[1];
    let logs_ok = logs[0] == logs[1];
    let spec = ModelSpec::new(Arch::Multi, BackboneKind::MobilenetLite, 64);
    let init = |seed| {
        let m = Model::<f32>::build(spec, &mut Prng::new(seed)).unwrap();
        m.params().iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())).collect::<Vec<_>>()
    };
    let init_ok = init(5) == init(5);

    let path = root.join("best.ckpt");
    fs::write(&path, run.best.to_bytes().unwrap()).unwrap();
    let loaded = Model::<f32>::from_checkpoint(&Checkpoint::from_bytes(&fs::read(&path).unwrap()).unwrap()).unwrap();
    let val = SplitData::<f32>::load(manifest, Split::Val, 64, true).unwrap();
    let batch = val.batch(&(0..val.len()).collect::<Vec<_>>()).unwrap();
    let bits = |m: &Model<f32>| {
        let l = m.predict_logits(&batch.rgb, batch.sil.as_ref()).unwrap();
        l.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    let logits_ok = bits(&run.model) == bits(&loaded);
    let cm = evaluate_data(&loaded, &val).unwrap();
    let reloaded_acc = (cm.0[0][0] + cm.0[1][1]) as f64 / cm.total() as f64;
    let acc_ok = reloaded_acc == run.best.meta.val_accuracy
        && run.logs[run.best.meta.epoch - 1].val_accuracy == run.best.meta.val_accuracy;
    let pass = corpus_ok && manifest_ok && init_ok && logs_ok && logits_ok && acc_ok;
    let detail = format!(
        "corpus {corpus_ok}, manifest {manifest_ok}, initial weights {init_ok}, epoch logs {logs_ok}, \
         reloaded logits bit-identical {logits_ok}, reloaded val accuracy {reloaded_acc:.4} vs logged {:.4}",
        run.best.meta.val_accuracy
    );
    v.record(8, pass, "determinism and persistence", detail);
}

fn main() {
    // Ignore libtest flags such as --nocapture or a name filter.
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut v = Verdicts(Vec::new());
    criterion_1(&mut v);
    criterion_2(&mut v);
    criterion_3(&mut v);
    let manifest = desk_corpus(&root.join("desk"));
    let run = criterion_4(&mut v, &manifest);
    criterion_5(&mut v, &manifest, &run);
    criterion_6(&mut v, &root.join("c6"));
    criterion_7(&mut v, &root.join("c7"));
    criterion_8(&mut v, &root.join("c8"), &manifest, &run);
    let failed: Vec<usize> = v.0.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        v.0.len() - failed.len(),
        v.0.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
}
