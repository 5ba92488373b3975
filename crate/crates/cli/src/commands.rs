use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;

use pvdeblur::io::{load_flo, load_png, save_flo, save_png, save_pvol, SequenceManifest};
use pvdeblur::metrics::{endpoint_error, interior_mask, write_reports_csv, MetricReport};
use pvdeblur::pipeline::{
    deblur_sequence, evaluate_sequence, gnuplot_script, stabilization_curve, write_curve_csv,
};
use pvdeblur::synth::{
    calibrate, render_sequence, warping_psnr, PairKind, PairSet, RenderedSequence,
};
use pvdeblur::tvl1::estimate_flow;
use pvdeblur::volume::{
    build_channel_volumes, build_naive_pixel_volume, build_pixel_volume, center_slice, ideal_warp,
    majority_warp, pv_statistics, PixelVolume,
};
use pvdeblur::warp::backward_warp;
use pvdeblur::{DeblurrerKind, FlowField, Frame, PipelineConfig, SceneSpec};

use crate::{Cli, Command, DeblurrerArg, PairArg, PvMode};

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be at least 1");
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("cannot start the worker pool")?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: Cli) -> Result<()> {
    let out = cli.out;
    match cli.command {
        Command::Synth { config } => synth(&config, cli.seed, &out_dir(out, "synth")),
        Command::Flow {
            previous,
            current,
            gt,
            params,
        } => flow(
            &previous,
            &current,
            gt.as_deref(),
            &params.params(),
            &out.unwrap_or_else(|| "flow.flo".into()),
        ),
        Command::Pv {
            mode,
            reference,
            flow,
            k,
            gt,
            tolerances,
        } => pv(
            mode,
            &reference,
            &flow,
            &k,
            gt.as_deref(),
            &tolerances,
            &out_dir(out, "pv"),
        ),
        Command::Warp { reference, flow } => warp(
            &reference,
            &flow,
            &out.unwrap_or_else(|| "warped.png".into()),
        ),
        Command::Deblur {
            manifests,
            k,
            deblurrer,
            sigma_c,
            radius,
            params,
        } => {
            let config = PipelineConfig {
                k,
                flow: params.params(),
                deblurrer: match deblurrer {
                    DeblurrerArg::Passthrough => DeblurrerKind::Passthrough,
                    DeblurrerArg::Aggregate => DeblurrerKind::Aggregate,
                },
                sigma_c,
                align_radius: radius,
            };
            deblur(&manifests, &config, &out_dir(out, "deblur"))
        }
        Command::Eval {
            estimates,
            truth,
            radius,
        } => eval(&estimates, &truth, radius, out.as_deref()),
        Command::Calibrate {
            manifests,
            lambdas,
            pairs,
            params,
        } => calibrate_cmd(
            &manifests,
            &lambdas,
            &pairs,
            &params.params(),
            &out_dir(out, "calibration"),
        ),
    }
}

fn out_dir(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn read_png(path: &Path) -> Result<Frame> {
    load_png(path).with_context(|| format!("cannot read frame {}", path.display()))
}

fn write_png(frame: &Frame, path: &Path) -> Result<()> {
    save_png(frame, path).with_context(|| format!("cannot write {}", path.display()))
}

fn read_flo(path: &Path) -> Result<FlowField> {
    load_flo(path).with_context(|| format!("cannot read flow {}", path.display()))
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

fn synth(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let text =
        fs::read_to_string(config).with_context(|| format!("cannot read {}", config.display()))?;
    let mut spec = SceneSpec::parse(&text)
        .with_context(|| format!("bad scene config {}", config.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let seq = render_sequence(&spec)?;
    write_sequence(&seq, &spec, out)?;
    println!(
        "synth: {} frames {}x{} (substeps {}) -> {}",
        spec.frames,
        spec.width,
        spec.height,
        spec.substeps,
        out.display()
    );
    Ok(())
}

fn write_sequence(seq: &RenderedSequence, spec: &SceneSpec, out: &Path) -> Result<()> {
    for sub in ["sharp", "blurred", "flow"] {
        create_dir(&out.join(sub))?;
    }
    let mut manifest = SequenceManifest::default();
    for (i, (sharp, blurred)) in seq.sharp.iter().zip(&seq.blurred).enumerate() {
        let s = Path::new("sharp").join(frame_name(i));
        let b = Path::new("blurred").join(frame_name(i));
        write_png(sharp, &out.join(&s))?;
        write_png(blurred, &out.join(&b))?;
        manifest.sharp.push(s);
        manifest.blurred.push(b);
    }
    for (i, flow) in seq.flows.iter().enumerate() {
        let f = Path::new("flow").join(format!("flow_{i:04}.flo"));
        save_flo(flow, out.join(&f)).with_context(|| format!("cannot write {}", f.display()))?;
        manifest.flows.push(f);
    }
    for line in spec.to_config_string().lines() {
        if let Some((k, v)) = line.split_once('=') {
            manifest.metadata.push((k.to_string(), v.to_string()));
        }
    }
    manifest.save(out.join("manifest.txt"))?;
    fs::write(out.join("scene.cfg"), spec.to_config_string())?;
    Ok(())
}

fn flow(
    previous: &Path,
    current: &Path,
    gt: Option<&Path>,
    params: &pvdeblur::FlowParams,
    out: &Path,
) -> Result<()> {
    let prev = read_png(previous)?;
    let cur = read_png(current)?;
    ensure!(
        prev.dims() == cur.dims(),
        "frame sizes differ: {:?} vs {:?}",
        prev.dims(),
        cur.dims()
    );
    let flow = estimate_flow(&cur.to_grayscale(), &prev.to_grayscale(), params)?;
    save_flo(&flow, out).with_context(|| format!("cannot write {}", out.display()))?;
    let mut line = format!(
        "flow: mean |flow| {:.4} px -> {}",
        flow.mean_magnitude(),
        out.display()
    );
    if let Some(gt) = gt {
        let truth = read_flo(gt)?;
        let (w, h) = flow.dims();
        let epe = endpoint_error(&flow, &truth, &interior_mask(w, h, 0.8))?;
        line.push_str(&format!(", interior epe {epe:.4} px"));
    }
    println!("{line}");
    Ok(())
}

fn warp(reference: &Path, flow: &Path, out: &Path) -> Result<()> {
    let reference = read_png(reference)?;
    let flow = read_flo(flow)?;
    let (warped, mask) = backward_warp(&reference, &flow)?;
    write_png(&warped, out)?;
    println!(
        "warp: {} of {} pixels in bounds -> {}",
        mask.count_valid(),
        warped.width() * warped.height(),
        out.display()
    );
    Ok(())
}

fn gt_planes(gt: &Frame) -> Result<Vec<Frame>> {
    (0..gt.channels())
        .map(|c| Ok(Frame::from_planes(gt.width(), gt.height(), &[gt.plane(c)])?))
        .collect()
}

fn merge(planes: &[Frame]) -> Result<Frame> {
    let (w, h) = planes[0].dims();
    let data: Vec<Vec<f32>> = planes.iter().map(|p| p.data().to_vec()).collect();
    Ok(Frame::from_planes(w, h, &data)?)
}

fn pv(
    mode: PvMode,
    reference: &Path,
    flow: &Path,
    ks: &[usize],
    gt: Option<&Path>,
    tolerances: &[u32],
    out: &Path,
) -> Result<()> {
    let reference = read_png(reference)?;
    let flow = read_flo(flow)?;
    ensure!(!ks.is_empty(), "--k needs at least one window size");
    for &k in ks {
        ensure!(k % 2 == 1, "--k must be odd, got {k}");
    }
    let gt = gt.map(read_png).transpose()?;
    if let Some(gt) = &gt {
        ensure!(
            gt.dims() == reference.dims() && gt.channels() == reference.channels(),
            "ground truth does not match the reference frame"
        );
    }
    create_dir(out)?;
    match mode {
        PvMode::Build => {
            for &k in ks {
                let volumes = build_channel_volumes(&reference, &flow, k)?;
                for (c, pv) in volumes.iter().enumerate() {
                    let name = if volumes.len() == 1 {
                        format!("pv_k{k}.pvol")
                    } else {
                        format!("pv_k{k}_c{c}.pvol")
                    };
                    save_pvol(pv, out.join(name))?;
                }
                let center: Vec<Frame> = volumes.iter().map(center_slice).collect();
                write_png(&merge(&center)?, &out.join(format!("center_k{k}.png")))?;
            }
            println!("pv build: k={ks:?} -> {}", out.display());
        }
        PvMode::Stats => {
            let gt = gt.context("pv stats needs --gt")?.to_grayscale();
            let gray = reference.to_grayscale();
            let path = out.join("pv_stats.csv");
            let mut csv = csv::Writer::from_path(&path)
                .with_context(|| format!("cannot write {}", path.display()))?;
            let mut header = vec![
                "k".to_string(),
                "evaluated_pixels".into(),
                "majority_fraction".into(),
                "correct_majority".into(),
                "wrong_majority".into(),
                "no_majority".into(),
            ];
            let mut sorted = tolerances.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            header.extend(sorted.iter().map(|c| format!("accuracy_c{c}")));
            csv.write_record(&header)?;
            for &k in ks {
                let stats = pv_statistics(&build_pixel_volume(&gray, &flow, k)?, &gt, &sorted)?;
                let mut row = vec![
                    k.to_string(),
                    stats.evaluated_pixels.to_string(),
                    format!("{:.6}", stats.majority_fraction),
                    format!("{:.6}", stats.correct_majority),
                    format!("{:.6}", stats.wrong_majority),
                    format!("{:.6}", stats.no_majority),
                ];
                row.extend(
                    stats
                        .majority_accuracy
                        .iter()
                        .map(|(_, a)| format!("{a:.6}")),
                );
                csv.write_record(&row)?;
            }
            csv.flush()?;
            println!("pv stats: {} rows -> {}", ks.len(), path.display());
        }
        PvMode::Majority | PvMode::Ideal | PvMode::Naive => {
            let gt_split = gt.as_ref().map(gt_planes).transpose()?;
            if mode == PvMode::Ideal && gt_split.is_none() {
                bail!("pv ideal needs --gt");
            }
            let label = match mode {
                PvMode::Majority => "majority",
                PvMode::Ideal => "ideal",
                _ => "naive",
            };
            for &k in ks {
                let volumes: Vec<PixelVolume> = if mode == PvMode::Naive {
                    (0..reference.channels())
                        .map(|c| {
                            let plane = Frame::from_planes(
                                reference.width(),
                                reference.height(),
                                &[reference.plane(c)],
                            )?;
                            build_naive_pixel_volume(&plane, &flow, k)
                        })
                        .collect::<pvdeblur::Result<_>>()?
                } else {
                    build_channel_volumes(&reference, &flow, k)?
                };
                let planes: Vec<Frame> = volumes
                    .iter()
                    .enumerate()
                    .map(|(c, pv)| match (mode, &gt_split) {
                        (PvMode::Ideal, Some(g)) => Ok(ideal_warp(pv, &g[c])?),
                        _ => Ok(majority_warp(pv).0),
                    })
                    .collect::<Result<_>>()?;
                let image = merge(&planes)?;
                let path = out.join(format!("{label}_k{k}.png"));
                write_png(&image, &path)?;
                match &gt {
                    Some(gt) => println!(
                        "pv {label}: k={k} psnr {:.4} dB -> {}",
                        pvdeblur::metrics::psnr(&image, gt)?,
                        path.display()
                    ),
                    None => println!("pv {label}: k={k} -> {}", path.display()),
                }
            }
        }
    }
    Ok(())
}

struct Sequence {
    sharp: Option<Vec<Frame>>,
    blurred: Vec<Frame>,
    flows: Option<Vec<FlowField>>,
}

fn load_sequence(path: &Path) -> Result<Sequence> {
    let (manifest, base) = SequenceManifest::load(path)
        .with_context(|| format!("cannot load manifest {}", path.display()))?;
    let frames = |list: &[PathBuf]| {
        list.iter()
            .map(|p| read_png(&base.join(p)))
            .collect::<Result<Vec<_>>>()
    };
    let blurred = frames(&manifest.blurred)?;
    let sharp = if manifest.sharp.is_empty() {
        None
    } else {
        Some(frames(&manifest.sharp)?)
    };
    let flows = if manifest.flows.is_empty() {
        None
    } else {
        Some(
            manifest
                .flows
                .iter()
                .map(|p| read_flo(&base.join(p)))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    Ok(Sequence {
        sharp,
        blurred,
        flows,
    })
}

fn mean_aligned(reports: &[MetricReport]) -> f64 {
    reports.iter().map(|r| r.aligned_psnr).sum::<f64>() / reports.len() as f64
}

fn deblur(manifests: &[PathBuf], config: &PipelineConfig, out: &Path) -> Result<()> {
    config.validate()?;
    create_dir(out)?;
    // (input reports, output reports) per sequence that has ground truth
    let results: Vec<Option<(Vec<MetricReport>, Vec<MetricReport>)>> = manifests
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let seq = load_sequence(path)?;
            let dir = out.join(format!("seq_{i:02}"));
            create_dir(&dir.join("est"))?;
            let est = deblur_sequence(&seq.blurred, config)
                .with_context(|| format!("deblurring {} failed", path.display()))?;
            for (t, frame) in est.iter().enumerate() {
                write_png(frame, &dir.join("est").join(frame_name(t)))?;
            }
            let Some(sharp) = &seq.sharp else {
                return Ok(None);
            };
            let input = evaluate_sequence(&seq.blurred, sharp, config.align_radius)?;
            let output = evaluate_sequence(&est, sharp, config.align_radius)?;
            write_reports_csv(fs::File::create(dir.join("input_metrics.csv"))?, &input)?;
            write_reports_csv(fs::File::create(dir.join("metrics.csv"))?, &output)?;
            Ok(Some((input, output)))
        })
        .collect::<Result<_>>()?;

    let scored: Vec<_> = results.into_iter().flatten().collect();
    if scored.is_empty() {
        println!(
            "deblur: {} sequences -> {} (no sharp frames, metrics skipped)",
            manifests.len(),
            out.display()
        );
        return Ok(());
    }
    let outputs: Vec<Vec<MetricReport>> = scored.iter().map(|(_, o)| o.clone()).collect();
    let inputs: Vec<Vec<MetricReport>> = scored.iter().map(|(i, _)| i.clone()).collect();
    write_curve_csv(
        fs::File::create(out.join("stabilization.csv"))?,
        &stabilization_curve(&outputs)?,
    )?;
    write_curve_csv(
        fs::File::create(out.join("input_curve.csv"))?,
        &stabilization_curve(&inputs)?,
    )?;
    fs::write(
        out.join("stabilization.gp"),
        gnuplot_script("stabilization.csv", "stabilization.png"),
    )?;
    let all_in: Vec<MetricReport> = inputs.concat();
    let all_out: Vec<MetricReport> = outputs.concat();
    println!(
        "deblur: {} sequences, mean aligned PSNR input {:.4} dB, output {:.4} dB -> {}",
        manifests.len(),
        mean_aligned(&all_in),
        mean_aligned(&all_out),
        out.display()
    );
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

fn eval(estimates: &Path, truth: &Path, radius: usize, out: Option<&Path>) -> Result<()> {
    let a = png_files(estimates)?;
    let b = png_files(truth)?;
    ensure!(!a.is_empty(), "no PNG frames in {}", estimates.display());
    ensure!(
        a.len() == b.len(),
        "{} has {} frames but {} has {}",
        estimates.display(),
        a.len(),
        truth.display(),
        b.len()
    );
    let reports = a
        .par_iter()
        .zip(b.par_iter())
        .enumerate()
        .map(|(i, (pa, pb))| {
            Ok(MetricReport::evaluate(
                i,
                &read_png(pa)?,
                &read_png(pb)?,
                radius,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    match out {
        Some(path) => {
            write_reports_csv(
                fs::File::create(path)
                    .with_context(|| format!("cannot write {}", path.display()))?,
                &reports,
            )?;
            eprintln!(
                "eval: {} frames, mean aligned PSNR {:.4} dB",
                reports.len(),
                mean_aligned(&reports)
            );
        }
        None => write_reports_csv(std::io::stdout().lock(), &reports)?,
    }
    Ok(())
}

fn calibrate_cmd(
    manifests: &[PathBuf],
    lambdas: &[f32],
    kinds: &[PairArg],
    base: &pvdeblur::FlowParams,
    out: &Path,
) -> Result<()> {
    ensure!(!lambdas.is_empty(), "--lambdas needs at least one value");
    let kinds: Vec<PairKind> = kinds
        .iter()
        .map(|k| match k {
            PairArg::Ss => PairKind::SharpSharp,
            PairArg::Bb => PairKind::BlurBlur,
            PairArg::Bs => PairKind::BlurSharp,
            PairArg::Sb => PairKind::SharpBlur,
        })
        .collect();
    let mut pairs = PairSet::default();
    for path in manifests {
        let seq = load_sequence(path)?;
        let sharp = seq
            .sharp
            .with_context(|| format!("{} lists no sharp frames", path.display()))?;
        let flows = match seq.flows {
            Some(f) => f,
            None => (1..sharp.len())
                .map(|_| FlowField::zeros(sharp[0].width(), sharp[0].height()))
                .collect(),
        };
        pairs.extend_from_sequence(&RenderedSequence {
            sharp,
            blurred: seq.blurred,
            flows,
        });
    }
    ensure!(
        !pairs.is_empty(),
        "manifests hold no consecutive frame pairs"
    );
    let grid: Vec<pvdeblur::FlowParams> = lambdas
        .iter()
        .map(|&lambda| pvdeblur::FlowParams {
            lambda,
            ..base.clone()
        })
        .collect();
    let cal = calibrate(&pairs, &grid, &kinds)?;
    create_dir(out)?;
    let path = out.join("calibration.csv");
    let mut csv = csv::Writer::from_path(&path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    csv.write_record([
        "lambda",
        "loss_ss",
        "loss_bb",
        "loss_bs",
        "loss_sb",
        "mean_loss",
        "selected",
    ])?;
    for (i, cell) in cal.table.iter().enumerate() {
        let mut row = vec![format!("{}", cell.params.lambda)];
        row.extend(
            cell.per_kind
                .iter()
                .map(|l| l.map(|v| format!("{v:.8}")).unwrap_or_default()),
        );
        row.push(format!("{:.8}", cell.mean_loss));
        row.push((i == cal.best_index).to_string());
        csv.write_record(&row)?;
    }
    csv.flush()?;
    let bb = warping_psnr(&pairs, &cal.best, PairKind::BlurBlur)?;
    println!(
        "calibrate: {} pairs, selected lambda {} (bb warping PSNR {:.4} dB) -> {}",
        pairs.len(),
        cal.best.lambda,
        bb,
        path.display()
    );
    Ok(())
}
