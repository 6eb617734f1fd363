//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test -p hvts-cli --test acceptance`; extra arguments that
//! do not start with `-` select criteria by number or name substring.
//! Exits nonzero if any selected criterion fails.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use hvts::anomaly::{detect_outliers, scaled_k};
use hvts::dataio::{saturate_fraction, split_indices, synth_dataset, DatasetSplit, SegmentTensor, SynthConfig};
use hvts::evalmetrics::{error_matrix, segment_scores, welch_psd, ModelReconstructor, PsdEstimate, WELCH_OVERLAP, WELCH_WINDOW};
use hvts::gradcore::check::op_suite;
use hvts::models::{kl_diag, kl_standard, param_count, DecodeMode, EpsMode, Model, ModelSpec, Variant};
use hvts::softdtw::{dtw, soft_dtw_with, GroundCost, SoftDtwOptions};
use hvts::training::{train_run, TrainConfig};
use hvts_cli::{
    cmd_score, cmd_synth, cmd_train, DecodeArgs, EpsArg, ModelArgs, OptimizerArg, PriorArg, ScoreArgs, SplitArg,
    SubsetArg, SynthArgs, TrainArgs, VariantArg,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const V3_PARAMS: usize = 4992;
const HV_PARAMS: usize = 8224;
const PARAM_TOLERANCE: f64 = 0.02;

const GRAD_TRIALS: usize = 20;
const GRAD_TOLERANCE: f64 = 1e-4;

const DTW_TRIALS: usize = 200;
const DTW_MAX_LEN: usize = 8;
const SOFT_PAIRS: usize = 50;
const SOFT_GAMMA: f64 = 1e-3;
const SOFT_TOLERANCE: f64 = 0.01;

const KL_SAMPLES: usize = 100_000;
const KL_POSTERIORS: usize = 10;
const KL_TOLERANCE: f64 = 0.01;

/// Overfit experiment: desk-scale hv model on clean synthetic segments.
const OVERFIT_SEGMENTS: usize = 16;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_FACTOR: f64 = 0.1;
const OVERFIT_SEEDS: [u64; 3] = [1, 2, 3];
/// Segment amplitude used by the overfit and ablation experiments; see README.
const OVERFIT_AMPLITUDE_UV: f64 = 20.0;
const OVERFIT_BATCH: usize = 4;
const OVERFIT_SCORE_EVERY: usize = 5;
/// Sakoe-Chiba band of the training loss; keeps the three runs within budget.
const OVERFIT_BAND: Option<usize> = Some(32);

const ABLATION_FRACTION: f64 = 0.9;

const ANOMALY_POOL: usize = 40;
const ANOMALY_FRACTION: f64 = 0.05;
const ANOMALY_RAIL_UV: f64 = 100.0;
const ANOMALY_DURATION: f64 = 0.25;
const ANOMALY_EPOCHS: usize = 30;
const ANOMALY_SEEDS: [u64; 3] = [1, 2, 3];
const MIN_RECALL: f64 = 0.8;
const MIN_PRECISION: f64 = 0.5;

const SLOPE_TOLERANCE: f64 = 0.2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (usize, &'static str, fn(&Shared) -> Outcome);

/// State shared between criteria (the overfit models feed the ablation).
#[derive(Default)]
struct Shared {
    overfit: RefCell<Vec<(u64, Model, Vec<SegmentTensor>)>>,
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        (1, "parameter ledgers", parameter_ledgers),
        (2, "gradient suite", gradient_suite),
        (3, "dtw oracle equivalence", dtw_oracle),
        (4, "kl closed form", kl_closed_form),
        (5, "overfit convergence", overfit_convergence),
        (6, "hierarchy ablation", hierarchy_ablation),
        (7, "anomaly end-to-end", anomaly_end_to_end),
        (8, "protocol exactness", protocol_exactness),
        (9, "determinism", determinism),
        (10, "spectral realism", spectral_realism),
    ];
    if std::env::args().any(|a| a == "--list") {
        for (n, name, _) in &criteria {
            println!("criterion {n:02} {name}: test");
        }
        return;
    }
    let selected = |n: usize, name: &str| {
        filters.is_empty() || filters.iter().any(|f| f.parse::<usize>().ok() == Some(n) || name.contains(f.as_str()))
    };
    let shared = Shared::default();
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        if !selected(n, name) {
            continue;
        }
        // The ablation needs the overfit models even when run alone.
        if n == 6 && shared.overfit.borrow().is_empty() {
            let _ = overfit_convergence(&shared);
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(|| f(&shared)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            });
        let verdict = if res.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:02} {name}: {verdict} - {} [{:.1}s]", res.detail, t.elapsed().as_secs_f64());
        if !res.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}

fn parameter_ledgers(_: &Shared) -> Outcome {
    let v3 = param_count(&ModelSpec::defaults(Variant::V3)).expect("v3 ledger").total;
    let hv = param_count(&ModelSpec::defaults(Variant::Hv)).expect("hv ledger").total;
    let within = |got: usize, want: usize| (got as f64 - want as f64).abs() <= PARAM_TOLERANCE * want as f64;
    outcome(
        within(v3, V3_PARAMS) && within(hv, HV_PARAMS),
        format!(
            "v3 {v3} vs {V3_PARAMS} ({:+.2}%), hv {hv} vs {HV_PARAMS} ({:+.2}%), tolerance ±{:.0}%",
            100.0 * (v3 as f64 / V3_PARAMS as f64 - 1.0),
            100.0 * (hv as f64 / HV_PARAMS as f64 - 1.0),
            100.0 * PARAM_TOLERANCE
        ),
    )
}

fn gradient_suite(_: &Shared) -> Outcome {
    let report = op_suite(GRAD_TRIALS, 2024).expect("op suite");
    let worst = report.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("ops");
    let bad: Vec<&str> = report
        .iter()
        .filter(|r| !(r.max_rel_error < GRAD_TOLERANCE) || r.trials < GRAD_TRIALS)
        .map(|r| r.op)
        .collect();
    outcome(
        bad.is_empty() && report.iter().any(|r| r.op == "soft_dtw_grad"),
        format!(
            "{} ops x {GRAD_TRIALS} trials, worst {} at {:.2e} (< {GRAD_TOLERANCE:e}), failing {bad:?}",
            report.len(),
            worst.op,
            worst.max_rel_error
        ),
    )
}

/// Minimum over every monotone warping path, accumulated start to end.
fn enumerate_paths(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            go(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            go(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, 0, 0, 0.0, &mut best);
    best
}

fn random_series(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f64> {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn dtw_oracle(_: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..DTW_TRIALS {
        let a = random_series(&mut rng, DTW_MAX_LEN);
        let b = random_series(&mut rng, DTW_MAX_LEN);
        if dtw(&a, &b).expect("dtw").raw_score != enumerate_paths(&a, &b) {
            mismatches += 1;
        }
    }
    let opts = SoftDtwOptions { gamma: SOFT_GAMMA, cost: GroundCost::Absolute, band: None };
    let mut worst: f64 = 0.0;
    for _ in 0..SOFT_PAIRS {
        let n = rng.random_range(2..=30);
        let m = rng.random_range(2..=30);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let hard = dtw(&a, &b).expect("dtw").raw_score;
        let soft = soft_dtw_with(&a, &b, &opts).expect("soft dtw");
        worst = worst.max((soft - hard).abs() / hard);
    }
    outcome(
        mismatches == 0 && worst <= SOFT_TOLERANCE,
        format!(
            "{mismatches}/{DTW_TRIALS} enumeration mismatches (T <= {DTW_MAX_LEN}); soft gamma {SOFT_GAMMA:e} worst relative gap {worst:.2e} over {SOFT_PAIRS} pairs"
        ),
    )
}

fn log_normal_pdf(z: f64, mu: f64, logvar: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI).ln() + logvar + (z - mu).powi(2) / logvar.exp())
}

fn kl_closed_form(_: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 8;
    let mut worst: f64 = 0.0;
    for _ in 0..KL_POSTERIORS {
        let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> { (0..dim).map(|_| rng.random_range(lo..hi)).collect() };
        let (mq, lq) = (u(&mut rng, -2.0, 2.0), u(&mut rng, -1.0, 1.0));
        let (mp, lp) = (u(&mut rng, -1.0, 1.0), u(&mut rng, -1.0, 1.0));
        let (mut std_est, mut diag_est) = (0.0, 0.0);
        for _ in 0..KL_SAMPLES {
            for d in 0..dim {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = mq[d] + (0.5 * lq[d]).exp() * e;
                let lqz = log_normal_pdf(z, mq[d], lq[d]);
                std_est += lqz - log_normal_pdf(z, 0.0, 0.0);
                diag_est += lqz - log_normal_pdf(z, mp[d], lp[d]);
            }
        }
        std_est /= KL_SAMPLES as f64;
        diag_est /= KL_SAMPLES as f64;
        let a = kl_standard(&mq, &lq);
        let b = kl_diag(&mq, &lq, &mp, &lp);
        worst = worst.max((a - std_est).abs() / a).max((b - diag_est).abs() / b);
    }
    outcome(
        worst <= KL_TOLERANCE,
        format!("{KL_POSTERIORS} posteriors x {KL_SAMPLES} samples, worst relative gap {worst:.2e} (<= {KL_TOLERANCE})"),
    )
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        model: ModelSpec::desk(Variant::Hv),
        epochs: OVERFIT_EPOCHS,
        batch_size: OVERFIT_BATCH,
        score_every: OVERFIT_SCORE_EVERY,
        dtw_band: OVERFIT_BAND,
        runs: 1,
        ..TrainConfig::default()
    }
}

fn overfit_convergence(shared: &Shared) -> Outcome {
    let cfg = overfit_config();
    let synth = SynthConfig { amplitude_uv: OVERFIT_AMPLITUDE_UV, ..SynthConfig::default() };
    let mut lines = Vec::new();
    let mut passed = 0;
    let mut models = Vec::new();
    for seed in OVERFIT_SEEDS {
        let segs = synth_dataset(&synth, OVERFIT_SEGMENTS, seed).expect("synth");
        let (model, h) = train_run(&DatasetSplit::train_only(segs.clone()), &cfg, seed).expect("training");
        let target = OVERFIT_FACTOR * h.initial.mean;
        let (best_epoch, best) = h
            .records
            .iter()
            .filter_map(|r| r.dtw.as_ref().map(|d| (r.epoch, d.mean)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::INFINITY));
        let ok = best <= target;
        passed += ok as usize;
        lines.push(format!("seed {seed}: {:.3} -> best {best:.3} at epoch {best_epoch} (target {target:.3})", h.initial.mean));
        models.push((seed, model, segs));
    }
    *shared.overfit.borrow_mut() = models;
    outcome(
        passed == OVERFIT_SEEDS.len(),
        format!("{passed}/{} seeds; {}", OVERFIT_SEEDS.len(), lines.join("; ")),
    )
}

fn mode_scores(model: &Model, segs: &[SegmentTensor], mode: DecodeMode) -> Vec<f64> {
    let rec = ModelReconstructor { model, mode, eps: EpsMode::Zero };
    segment_scores(&error_matrix(&rec, segs, "ablation").expect("error matrix"))
}

fn hierarchy_ablation(shared: &Shared) -> Outcome {
    let models = shared.overfit.borrow();
    if models.is_empty() {
        return outcome(false, "no overfit models");
    }
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (seed, model, segs) in models.iter() {
        let z1 = mode_scores(model, segs, DecodeMode::FromZ1);
        let z2 = mode_scores(model, segs, DecodeMode::WithZ2);
        let z3 = mode_scores(model, segs, DecodeMode::WithZ3);
        let strict = (0..segs.len()).filter(|&i| z1[i] > z2[i] && z2[i] > z3[i]).count();
        let z12 = (0..segs.len()).filter(|&i| z1[i] > z2[i]).count();
        let z23 = (0..segs.len()).filter(|&i| z2[i] > z3[i]).count();
        let frac = strict as f64 / segs.len() as f64;
        all_ok &= frac >= ABLATION_FRACTION;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        lines.push(format!(
            "seed {seed}: {strict}/{} strict (z1>z2 {z12}, z2>z3 {z23}; means {:.4}/{:.4}/{:.4})",
            segs.len(),
            mean(&z1),
            mean(&z2),
            mean(&z3)
        ));
    }
    outcome(all_ok, format!("need >= {:.0}% per model; {}", 100.0 * ABLATION_FRACTION, lines.join("; ")))
}

fn anomaly_end_to_end(_: &Shared) -> Outcome {
    let mut lines = Vec::new();
    let mut passed = 0;
    for seed in ANOMALY_SEEDS {
        let clean = synth_dataset(&SynthConfig::default(), ANOMALY_POOL, 100 + seed).expect("synth");
        let cfg = TrainConfig { epochs: ANOMALY_EPOCHS, score_every: 0, ..overfit_config() };
        let (model, _) = train_run(&DatasetSplit::train_only(clean.clone()), &cfg, seed).expect("training");
        let (pool, events) =
            saturate_fraction(&clean, ANOMALY_FRACTION, ANOMALY_RAIL_UV, ANOMALY_DURATION, 200 + seed).expect("saturate");
        let truth: BTreeSet<u32> = events.iter().map(|e| pool[e.segment].repetition).collect();
        let m = error_matrix(&ModelReconstructor::deterministic(&model), &pool, "anomaly").expect("matrix");
        let k = scaled_k(m.rows);
        let report = detect_outliers(&m, k).expect("detect");
        let flagged: BTreeSet<u32> = report.flagged_ids().into_iter().collect();
        let hits = flagged.intersection(&truth).count();
        let recall = hits as f64 / truth.len() as f64;
        let precision = if flagged.is_empty() { 0.0 } else { hits as f64 / flagged.len() as f64 };
        let ok = recall >= MIN_RECALL && precision >= MIN_PRECISION;
        passed += ok as usize;
        lines.push(format!(
            "seed {seed}: k {k}, injected {:?}, flagged {:?}, recall {recall:.2}, precision {precision:.2}",
            truth, flagged
        ));
    }
    outcome(
        passed == ANOMALY_SEEDS.len(),
        format!("{passed}/{} seeds (recall >= {MIN_RECALL}, precision >= {MIN_PRECISION}); {}", ANOMALY_SEEDS.len(), lines.join("; ")),
    )
}

/// Welch estimate by direct DFT, Hann taper, density scaling.
fn welch_oracle(x: &[f64], fs: f64, nw: usize, overlap: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let w: Vec<f64> = (0..nw).map(|n| (PI * n as f64 / nw as f64).sin().powi(2)).collect();
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let mut out = vec![0.0; nw / 2 + 1];
    let mut count = 0.0;
    let mut start = 0;
    while start + nw <= x.len() {
        for (k, o) in out.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..nw {
                let ph = -2.0 * PI * (k * n) as f64 / nw as f64;
                re += x[start + n] * w[n] * ph.cos();
                im += x[start + n] * w[n] * ph.sin();
            }
            let one_sided = if k == 0 || 2 * k == nw { 1.0 } else { 2.0 };
            *o += one_sided * (re * re + im * im) / (fs * wss);
        }
        count += 1.0;
        start += nw - overlap;
    }
    out.iter().map(|v| v / count).collect()
}

fn protocol_exactness(_: &Shared) -> Outcome {
    let mut problems = Vec::new();
    let cfg = TrainConfig::default();
    let mut lr = 0.01;
    let mut worst_closed: f64 = 0.0;
    for e in 0..2000 {
        if cfg.learning_rate(e) != lr {
            problems.push(format!("lr({e}) = {} != {lr}", cfg.learning_rate(e)));
            break;
        }
        worst_closed = worst_closed.max((lr - 0.01 * 0.999f64.powi(e as i32)).abs() / lr);
        lr *= 0.999;
    }
    if worst_closed > 1e-12 {
        problems.push(format!("lr departs from 0.01*0.999^e by {worst_closed:.1e}"));
    }

    let labels: Vec<u32> = (0..576).map(|i| i % 4).collect();
    let s = split_indices(&labels, 0.5, 0.1, 0).expect("split");
    let sizes = (s.train.len(), s.validation.len(), s.test.len());
    if sizes != (260, 28, 288) {
        problems.push(format!("split sizes {sizes:?}"));
    }

    if (WELCH_WINDOW, WELCH_OVERLAP) != (500, 250) {
        problems.push(format!("welch defaults {WELCH_WINDOW}/{WELCH_OVERLAP}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise: Vec<f64> = (0..1500).map(|_| StandardNormal.sample(&mut rng)).collect();
    let got = welch_psd(&noise, 250.0, WELCH_WINDOW, WELCH_OVERLAP).expect("welch");
    let want = welch_oracle(&noise, 250.0, WELCH_WINDOW, WELCH_OVERLAP);
    let hann_gap = got.power.iter().zip(&want).map(|(a, b)| (a - b).abs() / b.abs().max(1e-300)).fold(0.0, f64::max);
    if hann_gap > 1e-9 {
        problems.push(format!("welch differs from direct Hann estimate by {hann_gap:.1e}"));
    }
    let sine: Vec<f64> = (0..2500).map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 250.0).sin()).collect();
    let peak = welch_psd(&sine, 250.0, WELCH_WINDOW, WELCH_OVERLAP).expect("welch").argmax_frequency();
    if peak != 10.0 {
        problems.push(format!("10 Hz sine peaks at {peak} Hz"));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "lr iterative product exact (closed form within {worst_closed:.1e}); split {sizes:?}; welch {WELCH_WINDOW}/{WELCH_OVERLAP} Hann (direct-DFT gap {hann_gap:.1e}); sine peak {peak} Hz"
            )
        } else {
            problems.join("; ")
        },
    )
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

fn determinism(_: &Shared) -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    let data = dir.join("data.hvsg");
    let synth = SynthArgs {
        out: data.clone(),
        n: 8,
        seed: 9,
        channels: 8,
        samples: 256,
        fs: 128.0,
        slope: 1.0,
        amplitude: 10.0,
        no_alpha: false,
        labels: 2,
        subject: 1,
        saturate_frac: 0.0,
        rail: 100.0,
        saturate_duration: 0.25,
        line_noise_rate: 0.0,
        line_noise_amplitude: 5.0,
        muscle_rate: 0.0,
        muscle_gain: 5.0,
        force: false,
    };
    cmd_synth(&synth).expect("synth");
    let train = |out: &str| TrainArgs {
        data: data.clone(),
        out: dir.join(out),
        model: ModelArgs {
            variant: VariantArg::Hv,
            prior: PriorArg::Standard,
            kernel_t: None,
            kernel_s: None,
            pool1: None,
            pool2: None,
            dropout: None,
            gamma_dtw: 1.0,
        },
        epochs: 3,
        runs: 2,
        batch: 4,
        lr: 0.01,
        gamma_lr: 0.999,
        beta: 1.0,
        seed: 5,
        optimizer: OptimizerArg::Adam,
        band: None,
        score_every: 1,
        checkpoint_every: 1,
        split: SplitArg::AllTrain,
        train_frac: 0.5,
        val_frac: 0.1,
        split_seed: None,
        fail_threshold: 5.0,
        force: false,
    };
    cmd_train(&train("a")).expect("train a");
    cmd_train(&train("b")).expect("train b");
    let (a, b) = (dir.join("a"), dir.join("b"));
    let mut diffs = Vec::new();
    let files = files_under(&a);
    if files != files_under(&b) {
        diffs.push("file sets differ".to_string());
    }
    let compared: Vec<&String> = files.iter().filter(|f| f.as_str() != "timings.json").collect();
    for f in &compared {
        if read(&a.join(f)) != read(&b.join(f)) {
            diffs.push(f.to_string());
        }
    }
    let ckpts: Vec<_> = files.iter().filter(|f| f.starts_with("checkpoints/")).map(|f| a.join(f)).collect();
    let score = |out: &str, ckpts: Vec<std::path::PathBuf>| ScoreArgs {
        data: data.clone(),
        checkpoint: ckpts,
        out: dir.join(out),
        decode: DecodeArgs { level: None, eps: EpsArg::Zero, seed: 0 },
        split: None,
        subset: SubsetArg::All,
        force: false,
    };
    let last: Vec<_> = ckpts.iter().filter(|p| p.to_string_lossy().ends_with("epoch0003.hvts")).cloned().collect();
    cmd_score(&score("sa", last.clone())).expect("score a");
    cmd_score(&score("sb", last.clone())).expect("score b");
    for f in files_under(&dir.join("sa")).iter().filter(|f| f.as_str() != "timings.json") {
        if read(&dir.join("sa").join(f)) != read(&dir.join("sb").join(f)) {
            diffs.push(format!("score/{f}"));
        }
    }
    outcome(
        diffs.is_empty() && last.len() == 2,
        format!(
            "two train invocations: {} files compared ({} checkpoints); two score invocations over {} checkpoints; differing: {diffs:?}",
            compared.len(),
            ckpts.len(),
            last.len()
        ),
    )
}

/// Least-squares slope of log10 power against log10 frequency over [lo, hi].
fn loglog_slope(p: &PsdEstimate, lo: f64, hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> = p
        .frequencies
        .iter()
        .zip(&p.power)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(f, v)| (f.log10(), v.log10()))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn mean_psd(segs: &[SegmentTensor]) -> PsdEstimate {
    let all: Vec<PsdEstimate> = segs
        .iter()
        .flat_map(|s| (0..s.channels()).map(move |c| (s, c)))
        .map(|(s, c)| welch_psd(&s.channel_f64(c), s.fs() as f64, WELCH_WINDOW, WELCH_OVERLAP).expect("welch"))
        .collect();
    PsdEstimate::average(&all).expect("average")
}

fn spectral_realism(_: &Shared) -> Outcome {
    let base = SynthConfig { samples: 1000, fs: 250.0, ..SynthConfig::default() };
    let mut lines = Vec::new();
    let mut ok = true;
    for slope in [1.0, 1.5, 2.0] {
        let cfg = SynthConfig { slope, alpha_gain: 0.0, beta_gain: 0.0, ..base.clone() };
        let fit = -loglog_slope(&mean_psd(&synth_dataset(&cfg, 32, 10).expect("synth")), 2.0, 40.0);
        ok &= (fit - slope).abs() <= SLOPE_TOLERANCE;
        lines.push(format!("exponent {slope}: fitted {fit:.3}"));
    }
    let with_alpha = mean_psd(&synth_dataset(&base, 32, 10).expect("synth"));
    let in_range: Vec<(f64, f64)> =
        with_alpha.frequencies.iter().copied().zip(with_alpha.power.iter().copied()).filter(|(f, _)| *f >= 2.0 && *f <= 40.0).collect();
    let peak = in_range.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|p| p.0).unwrap_or(0.0);
    ok &= (8.0..=12.0).contains(&peak);
    lines.push(format!("alpha enabled: argmax over 2-40 Hz at {peak} Hz"));
    outcome(ok, format!("slope tolerance ±{SLOPE_TOLERANCE}; {}", lines.join("; ")))
}
