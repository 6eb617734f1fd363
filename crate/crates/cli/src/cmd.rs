use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hvts::anomaly::{detect_outliers, scaled_k, transition_point};
use hvts::dataio::{
    encode_segments, read_segments, saturate_fraction, sidecar_path, split, synth_annotated,
    ArtifactKind, ArtifactPlan, DatasetSplit, SegmentTensor, SplitIndices, SynthConfig,
};
use hvts::evalmetrics::{
    average_error, error_matrix, segment_scores, subject_summary, welch_psd, ErrorMatrix, ModelReconstructor,
    PsdEstimate, Reconstructor, StdConvention,
};
use hvts::models::{load_checkpoint, save_checkpoint, DecodeMode, EpsMode, Model, ModelSpec, PriorMode, Variant};
use hvts::training::{
    checkpoint_name, multi_run_observed, run_manifest_json, run_seed, Aggregate, OptimizerKind, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{prepare_file, write_atomic, RunDir, RunManifest};
use crate::svg::{heatmap, line_plot, Series};
use crate::{
    DecodeArgs, DetectArgs, EpsArg, LevelArg, ModelArgs, OptimizerArg, PriorArg, ReconstructArgs, ScoreArgs,
    SpectraArgs, SplitArg, SubsetArg, SynthArgs, TrainArgs, VariantArg,
};

/// Offset between the generator seed and the seed choosing saturated segments.
const SATURATION_SEED_OFFSET: u64 = 1;

pub fn synth_config(a: &SynthArgs) -> SynthConfig {
    let mut cfg = SynthConfig {
        channels: a.channels,
        samples: a.samples,
        fs: a.fs,
        slope: a.slope,
        amplitude_uv: a.amplitude,
        n_labels: a.labels,
        subject_id: a.subject,
        ..SynthConfig::default()
    };
    if a.no_alpha {
        cfg.alpha_gain = 0.0;
    }
    if a.line_noise_rate > 0.0 {
        cfg.artifacts.push(ArtifactPlan {
            kind: ArtifactKind::LineNoise { f0: 50.0, amplitude_uv: a.line_noise_amplitude },
            rate: a.line_noise_rate,
            channels: None,
        });
    }
    if a.muscle_rate > 0.0 {
        cfg.artifacts.push(ArtifactPlan {
            kind: ArtifactKind::Muscle { low_hz: 20.0, high_hz: 60.0_f64.min(a.fs / 2.0 - 1.0), gain_uv: a.muscle_gain },
            rate: a.muscle_rate,
            channels: None,
        });
    }
    cfg
}

#[derive(Serialize)]
struct FileManifest<'a, T: Serialize> {
    manifest: &'a RunManifest,
    sha256: String,
    details: T,
}

fn write_with_sidecar<T: Serialize>(
    out: &Path,
    segments: &[SegmentTensor],
    manifest: &RunManifest,
    details: T,
) -> CliResult<PathBuf> {
    let bytes = encode_segments(segments)?;
    write_atomic(out, &bytes)?;
    let side = FileManifest { manifest, sha256: crate::output::sha256_bytes(&bytes), details };
    write_atomic(&sidecar_path(out), hvts::canonical_json(&side)?.as_bytes())?;
    Ok(out.to_path_buf())
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<PathBuf> {
    prepare_file(&a.out, &[], a.force)?;
    let cfg = synth_config(a);
    let (mut segments, mut events) = synth_annotated(&cfg, a.n, a.seed)?;
    if a.saturate_frac > 0.0 {
        let (s, e) = saturate_fraction(&segments, a.saturate_frac, a.rail, a.saturate_duration, a.seed + SATURATION_SEED_OFFSET)?;
        segments = s;
        events.extend(e);
        events.sort_by_key(|e| e.segment);
    }
    let mut saturated: Vec<usize> = events.iter().filter(|e| e.kind == "saturation").map(|e| e.segment).collect();
    saturated.dedup();
    let manifest = RunManifest::new("synth", &serde_json::json!({ "args": a, "generator": cfg }), &[])?
        .seed("seed", a.seed)
        .seed("saturation_seed", a.seed + SATURATION_SEED_OFFSET);
    write_with_sidecar(&a.out, &segments, &manifest, serde_json::json!({ "events": events, "saturated": saturated }))
}

/// Model shape for data of `c` channels by `t` samples at `fs` Hz.
pub fn model_spec_for(a: &ModelArgs, c: usize, t: usize, fs: f64) -> CliResult<ModelSpec> {
    let variant = match a.variant {
        VariantArg::V3 => Variant::V3,
        VariantArg::Hv => Variant::Hv,
    };
    let mut s = match variant {
        Variant::V3 => ModelSpec::v3(c, t),
        Variant::Hv => ModelSpec::hv(c, t),
    };
    let kt = a.kernel_t.unwrap_or(if fs < 200.0 { 64 } else { 128 });
    s.temporal_kernel = kt;
    s.separable_kernel = a.kernel_s.unwrap_or((kt / 4).max(1));
    if variant == Variant::Hv && t % 10 != 0 && t % 8 == 0 {
        s.pool2 = Some(8);
    }
    if let Some(p) = a.pool1 {
        s.pool1 = (p > 1).then_some(p);
    }
    if let Some(p) = a.pool2 {
        s.pool2 = (p > 1).then_some(p);
    }
    if let Some(d) = a.dropout {
        s.dropout = d;
    }
    s.prior_mode = match a.prior {
        PriorArg::Standard => PriorMode::Standard,
        PriorArg::Conditional => PriorMode::Conditional,
    };
    s.gamma = a.gamma_dtw;
    s.validate()?;
    Ok(s)
}

fn read_data(path: &Path) -> CliResult<Vec<SegmentTensor>> {
    let segs = read_segments(path)?;
    if segs.is_empty() {
        return Err(CliError::Invalid(format!("{} holds no segments", path.display())));
    }
    Ok(segs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitFile {
    split_seed: u64,
    indices: SplitIndices,
}

fn curve_plot(title: &str, agg: &Aggregate, dtw: bool) -> String {
    let pts: Vec<(f64, f64)> = agg
        .points
        .iter()
        .filter_map(|p| {
            let y = if dtw { p.dtw_mean? } else { p.loss_mean };
            Some((p.epoch as f64, y))
        })
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let y_label = if dtw { "mean normalized DTW" } else { "training loss" };
    line_plot(title, "epoch", y_label, &[Series { name: "successful runs", xs: &xs, ys: &ys }], true)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let segments = read_data(&a.data)?;
    let first = &segments[0];
    let spec = model_spec_for(&a.model, first.channels(), first.len(), first.fs() as f64)?;
    let split_seed = a.split_seed.unwrap_or(a.seed);
    let data = match a.split {
        SplitArg::Stratified => split(&segments, a.train_frac, a.val_frac, split_seed)?,
        SplitArg::AllTrain => DatasetSplit::train_only(segments.clone()),
    };
    let cfg = TrainConfig {
        model: spec.clone(),
        batch_size: a.batch,
        lr0: a.lr,
        lr_gamma: a.gamma_lr,
        epochs: a.epochs,
        runs: a.runs,
        beta: a.beta,
        seed: a.seed,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        fail_threshold: a.fail_threshold,
        dtw_band: a.band,
        score_every: a.score_every,
    };
    cfg.validate()?;
    let mut dir = RunDir::create(&a.out, &[&a.data], a.force)?;

    let ckpt_dir = dir.path("checkpoints");
    let every = a.checkpoint_every;
    let epochs = a.epochs;
    let observer = |run: usize, model: &Model, rec: &hvts::training::EpochRecord| -> hvts::Result<()> {
        let e = rec.epoch + 1;
        if e == epochs || (every > 0 && e % every == 0) {
            save_checkpoint(ckpt_dir.join(checkpoint_name(run, rec.epoch)), model)?;
        }
        Ok(())
    };
    let train_started = Instant::now();
    let result = multi_run_observed(&data, &cfg, &observer)?;
    let train_seconds = train_started.elapsed().as_secs_f64();

    let mut ckpts: Vec<String> = std::fs::read_dir(&ckpt_dir)
        .map_err(|e| CliError::io(&ckpt_dir, e))?
        .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
        .filter(|n| n.ends_with(".hvts"))
        .collect();
    ckpts.sort();
    for name in &ckpts {
        dir.record(&format!("checkpoints/{name}"))?;
    }
    for h in &result.histories {
        dir.write_str(&format!("metrics/run{:02}.json", h.run_index), &run_manifest_json(&cfg, h)?)?;
    }
    let agg = serde_json::json!({ "all": result.all, "successful": result.successful });
    dir.write_str("metrics/aggregate.json", &hvts::canonical_json(&agg)?)?;
    let sf = SplitFile { split_seed, indices: data.indices.clone() };
    dir.write_str("metrics/split.json", &hvts::canonical_json(&sf)?)?;

    let mut tsv = String::from("epoch\truns_all\tloss_mean_all\tloss_std_all\truns_successful\tdtw_mean_successful\tdtw_std_successful\n");
    for (i, p) in result.all.points.iter().enumerate() {
        let s = result.successful.points.get(i);
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            p.epoch,
            p.runs,
            p.loss_mean,
            p.loss_std,
            s.map_or(0, |s| s.runs),
            opt(s.and_then(|s| s.dtw_mean)),
            opt(s.and_then(|s| s.dtw_std)),
        ));
    }
    dir.write_str("metrics/curves.tsv", &tsv)?;

    let scored: Vec<(usize, f64)> =
        result.successful.points.iter().filter_map(|p| p.dtw_mean.map(|m| (p.epoch, m))).collect();
    let transition = if scored.len() >= 3 {
        let epochs: Vec<usize> = scored.iter().map(|p| p.0).collect();
        let means: Vec<f64> = scored.iter().map(|p| p.1).collect();
        transition_point(&epochs, &means)?
    } else {
        None
    };
    let statuses: Vec<_> = result.histories.iter().map(|h| (h.run_index, &h.status)).collect();
    dir.write_str(
        "metrics/status.json",
        &hvts::canonical_json(&serde_json::json!({ "runs": statuses, "transition_epoch": transition }))?,
    )?;
    dir.write_str("plots/loss.svg", &curve_plot("training loss", &result.successful, false))?;
    dir.write_str("plots/dtw.svg", &curve_plot("normalized DTW on the training pool", &result.successful, true))?;

    let mut manifest = RunManifest::new(
        "train",
        &serde_json::json!({ "args": a, "train_config": cfg }),
        &[("data".to_string(), a.data.as_path())],
    )?
    .seed("seed", a.seed)
    .seed("split_seed", split_seed);
    for i in 0..a.runs {
        manifest = manifest.seed(&format!("run{i:02}"), run_seed(a.seed, i));
    }
    let timings = serde_json::json!({
        "total_seconds": started.elapsed().as_secs_f64(),
        "training_seconds": train_seconds,
        "runs": result.timings,
    });
    dir.finish(manifest, &timings)
}

fn decode_mode(level: Option<LevelArg>, spec: &ModelSpec) -> DecodeMode {
    match level {
        None => spec.full_decode_mode(),
        Some(LevelArg::Z1) => DecodeMode::FromZ1,
        Some(LevelArg::Z2) => DecodeMode::WithZ2,
        Some(LevelArg::Z3) => DecodeMode::WithZ3,
    }
}

fn eps_mode(d: &DecodeArgs) -> EpsMode {
    match d.eps {
        EpsArg::Zero => EpsMode::Zero,
        EpsArg::Sampled => EpsMode::Sampled(d.seed),
    }
}

fn load_model_for(path: &Path, segments: &[SegmentTensor]) -> CliResult<Model> {
    let model = load_checkpoint(path)?;
    let s = model.spec();
    let seg = &segments[0];
    if s.channels != seg.channels() || s.samples != seg.len() {
        return Err(hvts::Error::Shape {
            op: "checkpoint",
            detail: format!(
                "{} expects {}x{} segments, data has {}x{}",
                path.display(),
                s.channels,
                s.samples,
                seg.channels(),
                seg.len()
            ),
        }
        .into());
    }
    Ok(model)
}

fn select_subset(segments: Vec<SegmentTensor>, split: Option<&Path>, subset: SubsetArg) -> CliResult<Vec<SegmentTensor>> {
    if subset == SubsetArg::All {
        return Ok(segments);
    }
    let Some(path) = split else {
        return Err(CliError::Invalid("--subset needs --split".into()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let sf: SplitFile = serde_json::from_str(&text).map_err(hvts::Error::from)?;
    let idx = match subset {
        SubsetArg::Train => sf.indices.train,
        SubsetArg::Validation => sf.indices.validation,
        SubsetArg::Test => sf.indices.test,
        SubsetArg::All => unreachable!(),
    };
    idx.iter()
        .map(|&i| {
            segments.get(i).cloned().ok_or_else(|| {
                CliError::Core(hvts::Error::Shape { op: "split", detail: format!("index {i} beyond {} segments", segments.len()) })
            })
        })
        .collect()
}

pub fn cmd_score(a: &ScoreArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let segments = select_subset(read_data(&a.data)?, a.split.as_deref(), a.subset)?;
    if segments.is_empty() {
        return Err(CliError::Invalid("the selected subset is empty".into()));
    }
    let models: Vec<Model> = a.checkpoint.iter().map(|p| load_model_for(p, &segments)).collect::<CliResult<_>>()?;
    let mut inputs = vec![("data".to_string(), a.data.as_path())];
    inputs.extend(a.checkpoint.iter().enumerate().map(|(i, p)| (format!("checkpoint{i:02}"), p.as_path())));
    if let Some(s) = &a.split {
        inputs.push(("split".to_string(), s.as_path()));
    }
    let input_paths: Vec<&Path> = inputs.iter().map(|(_, p)| *p).collect();
    let mut dir = RunDir::create(&a.out, &input_paths, a.force)?;

    let eps = eps_mode(&a.decode);
    let mut matrices = Vec::with_capacity(models.len());
    for (i, model) in models.iter().enumerate() {
        let rec = ModelReconstructor { model, mode: decode_mode(a.decode.level, model.spec()), eps };
        let m = error_matrix(&rec, &segments, &format!("checkpoint{i:02}"))?;
        dir.write_str(&format!("metrics/error_matrix_{i:02}.tsv"), &m.to_tsv())?;
        dir.write_str(&format!("metrics/error_matrix_{i:02}.json"), &hvts::canonical_json(&m)?)?;
        matrices.push(m);
    }
    let avg = average_error(&matrices)?;
    dir.write_str("metrics/average_error.tsv", &avg.to_tsv())?;
    dir.write_str("metrics/average_error.json", &hvts::canonical_json(&avg)?)?;
    let summary = serde_json::json!({
        "channel_means": subject_summary(&avg, StdConvention::ChannelMeans),
        "all_entries": subject_summary(&avg, StdConvention::AllEntries),
        "segment_scores": segment_scores(&avg),
        "repetition_ids": avg.repetition_ids,
    });
    dir.write_str("metrics/summary.json", &hvts::canonical_json(&summary)?)?;
    dir.write_str("plots/error_heatmap.svg", &heatmap("average error (rows: repetitions)", avg.rows, avg.cols, &avg.values))?;
    let manifest = RunManifest::new("score", a, &inputs)?.seed("eps_seed", a.decode.seed);
    dir.finish(manifest, &serde_json::json!({ "total_seconds": started.elapsed().as_secs_f64() }))
}

pub fn cmd_detect(a: &DetectArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let text = std::fs::read_to_string(&a.matrix).map_err(|e| CliError::io(&a.matrix, e))?;
    let raw: ErrorMatrix = serde_json::from_str(&text).map_err(hvts::Error::from)?;
    let mut m = ErrorMatrix::new(raw.rows, raw.cols, raw.values, raw.provenance)?;
    if raw.repetition_ids.len() != m.rows || raw.channel_names.len() != m.cols {
        return Err(hvts::Error::Corrupt { position: 0, detail: "matrix labels do not match its shape".into() }.into());
    }
    m.repetition_ids = raw.repetition_ids;
    m.channel_names = raw.channel_names;
    let k = if a.k_auto { scaled_k(m.rows) } else { a.k };
    let report = detect_outliers(&m, k)?;
    let mut dir = RunDir::create(&a.out, &[&a.matrix], a.force)?;
    dir.write_str("metrics/outliers.json", &report.to_json()?)?;
    dir.write_str("metrics/outliers.tsv", &report.to_tsv())?;
    let mut sorted = report.k_distances.clone();
    sorted.sort_by(f64::total_cmp);
    let xs: Vec<f64> = (0..sorted.len()).map(|i| i as f64).collect();
    let thr = vec![report.threshold.unwrap_or(f64::NAN); sorted.len()];
    dir.write_str(
        "plots/k_distances.svg",
        &line_plot(
            &format!("sorted {k}-NN distances"),
            "rank",
            "distance",
            &[Series { name: "k-distance", xs: &xs, ys: &sorted }, Series { name: "threshold", xs: &xs, ys: &thr }],
            false,
        ),
    )?;
    let manifest = RunManifest::new("detect", &serde_json::json!({ "args": a, "k": k }), &[(
        "matrix".to_string(),
        a.matrix.as_path(),
    )])?;
    dir.finish(manifest, &serde_json::json!({ "total_seconds": started.elapsed().as_secs_f64() }))
}

fn mean_psd(
    segments: &[SegmentTensor],
    channel: Option<usize>,
    window: usize,
    overlap: usize,
) -> CliResult<PsdEstimate> {
    let mut all = Vec::new();
    for seg in segments {
        let chans: Vec<usize> = match channel {
            Some(c) if c < seg.channels() => vec![c],
            Some(c) => return Err(CliError::Invalid(format!("channel {c} out of range 0..{}", seg.channels()))),
            None => (0..seg.channels()).collect(),
        };
        for c in chans {
            all.push(welch_psd(&seg.channel_f64(c), seg.fs() as f64, window, overlap)?);
        }
    }
    Ok(PsdEstimate::average(&all)?)
}

pub fn cmd_spectra(a: &SpectraArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let segments = read_data(&a.data)?;
    let original = mean_psd(&segments, a.channel, a.window, a.overlap)?;
    let mut inputs = vec![("data".to_string(), a.data.as_path())];
    let recon = match &a.checkpoint {
        Some(p) => {
            inputs.push(("checkpoint".to_string(), p.as_path()));
            let model = load_model_for(p, &segments)?;
            let rec = ModelReconstructor { model: &model, mode: decode_mode(a.decode.level, model.spec()), eps: eps_mode(&a.decode) };
            let outs: Vec<SegmentTensor> =
                segments.iter().enumerate().map(|(i, s)| rec.reconstruct(s, i)).collect::<hvts::Result<_>>()?;
            Some(mean_psd(&outs, a.channel, a.window, a.overlap)?)
        }
        None => None,
    };
    let input_paths: Vec<&Path> = inputs.iter().map(|(_, p)| *p).collect();
    let mut dir = RunDir::create(&a.out, &input_paths, a.force)?;
    dir.write_str("metrics/psd_original.tsv", &original.to_tsv())?;
    let mut series = vec![Series { name: "original", xs: &original.frequencies, ys: &original.power }];
    if let Some(r) = &recon {
        dir.write_str("metrics/psd_reconstruction.tsv", &r.to_tsv())?;
        series.push(Series { name: "reconstruction", xs: &r.frequencies, ys: &r.power });
    }
    let json = serde_json::json!({ "original": original, "reconstruction": recon });
    dir.write_str("metrics/psd.json", &hvts::canonical_json(&json)?)?;
    dir.write_str("plots/psd.svg", &line_plot("Welch power spectral density", "frequency (Hz)", "power per Hz", &series, true))?;
    let manifest = RunManifest::new("spectra", a, &inputs)?.seed("eps_seed", a.decode.seed);
    dir.finish(manifest, &serde_json::json!({ "total_seconds": started.elapsed().as_secs_f64() }))
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> CliResult<PathBuf> {
    prepare_file(&a.out, &[&a.data, &a.checkpoint], a.force)?;
    let segments = read_data(&a.data)?;
    let model = load_model_for(&a.checkpoint, &segments)?;
    let mode = decode_mode(a.decode.level, model.spec());
    let rec = ModelReconstructor { model: &model, mode, eps: eps_mode(&a.decode) };
    let outs: Vec<SegmentTensor> =
        segments.iter().enumerate().map(|(i, s)| rec.reconstruct(s, i)).collect::<hvts::Result<_>>()?;
    let manifest = RunManifest::new(
        "reconstruct",
        &serde_json::json!({ "args": a, "decode_mode": mode }),
        &[("data".to_string(), a.data.as_path()), ("checkpoint".to_string(), a.checkpoint.as_path())],
    )?
    .seed("eps_seed", a.decode.seed);
    write_with_sidecar(&a.out, &outs, &manifest, BTreeMap::<String, String>::new())
}
