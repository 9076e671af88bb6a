use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mindelay_core::eval::{self, Case, SweepPoint, SweepStrategy};
use mindelay_core::evidence::{default_c, max_overlapping_mass};
use mindelay_core::io;
use mindelay_core::synth::generate;
use mindelay_core::{ClassProbs, Detector, DetectorConfig, Error, FrameData};

use crate::{DetectArgs, DetectorFlags, EvalArgs, ReportFormat, Strategy, SweepArgs, SynthArgs};

/// Bad flag combinations that clap cannot express.
#[derive(Debug)]
pub struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonPositiveEvidence { .. } | Error::InvalidConfig(_)) => 3,
        _ => 2,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(Error::from).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(Error::from).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_stream(path: &Path) -> Result<(usize, Vec<FrameData>)> {
    let (header, frames) = io::read_stream(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok((header.n_classes, frames))
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let spec = io::read_spec(open(&args.spec)?).with_context(|| format!("reading {}", args.spec.display()))?;
    let (frames, truth) = generate(&spec)?;
    io::write_stream(create(&args.stream)?, spec.n_classes, &frames)?;
    io::write_ground_truth(create(&args.truth)?, &truth)?;
    eprintln!(
        "wrote {} frames, {} objects",
        frames.len(),
        truth.objects.len()
    );
    Ok(())
}

fn build_config(flags: &DetectorFlags, n_classes: usize, threshold: f64, retire: bool, c: f64) -> Result<DetectorConfig> {
    let priors = match &flags.priors {
        Some(p) => {
            if p.len() != n_classes + 1 {
                return Err(usage(format!(
                    "--priors needs {} values (background plus {n_classes} classes), got {}",
                    n_classes + 1,
                    p.len()
                )));
            }
            p.clone()
        }
        None => ClassProbs::uniform(n_classes).as_slice().to_vec(),
    };
    let config = DetectorConfig {
        threshold,
        iou_lim: flags.iou_lim,
        c,
        priors,
        lambda: flags.lambda,
        nms_iou: flags.nms_iou,
        map_sweeps: flags.map_sweeps,
        retire_on_declare: retire,
        class_reduction: true,
    };
    config.validate()?;
    Ok(config)
}

pub fn detect(args: DetectArgs) -> Result<()> {
    let (n_classes, frames) = read_stream(&args.stream)?;
    let c = args.detector.c.unwrap_or_else(|| default_c(&frames, args.detector.iou_lim));
    let config = build_config(&args.detector, n_classes, args.threshold, args.retire, c)?;
    let mut detector = Detector::new(config, args.detector.mode)?;

    let mut timing = args.timing.as_deref().map(create).transpose()?;
    if let Some(t) = timing.as_mut() {
        writeln!(t, "frame,elapsed_ns,live_trajectories")?;
    }
    for frame in &frames {
        let start = Instant::now();
        detector.step(frame).with_context(|| format!("frame {}", frame.frame))?;
        let elapsed = start.elapsed().as_nanos();
        if let Some(t) = timing.as_mut() {
            writeln!(t, "{},{},{}", frame.frame, elapsed, detector.trajectories().len())?;
        }
    }
    if let Some(mut t) = timing {
        t.flush()?;
    }
    io::write_declarations(create(&args.out)?, detector.declarations())?;
    eprintln!("{} declarations over {} frames (C = {c})", detector.declarations().len(), frames.len());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let decls = io::read_declarations(open(&args.declarations)?)
        .with_context(|| format!("reading {}", args.declarations.display()))?;
    let truth = io::read_ground_truth(open(&args.truth)?).with_context(|| format!("reading {}", args.truth.display()))?;
    let report = eval::evaluate(&decls, &truth, args.iou_lim, args.threshold);

    let text = match args.format {
        ReportFormat::Pretty => {
            let mut s = format!(
                "threshold       {}\ndeclared        {}\ncorrect         {}\nfalse alarms    {}\nFAR             {:.4}\naverage delay   {:.4}\n",
                report.threshold, report.n_declared, report.n_correct, report.n_false_alarms, report.far, report.average_delay
            );
            for d in &report.per_object_delays {
                let tag = if d.detected { "" } else { " (missed)" };
                s.push_str(&format!("object {:>4}  delay {}{tag}\n", d.object_id, d.delay));
            }
            s
        }
        ReportFormat::Csv => format!(
            "threshold,n_declared,n_correct,n_false_alarms,far,average_delay\n{},{},{},{},{},{}\n",
            report.threshold, report.n_declared, report.n_correct, report.n_false_alarms, report.far, report.average_delay
        ),
        ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    match args.out {
        Some(path) => {
            let mut w = create(&path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Parses `lo:hi:n`.
fn parse_grid(spec: &str, geometric: bool) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("grid {spec:?} must look like lo:hi:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || !(lo > 0.0 && hi >= lo) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = |k: usize| k as f64 / (n - 1) as f64;
    Ok((0..n)
        .map(|k| {
            if geometric {
                lo * (hi / lo).powf(step(k))
            } else {
                lo + (hi - lo) * step(k)
            }
        })
        .collect())
}

fn load_cases(args: &SweepArgs) -> Result<(usize, Vec<Case>)> {
    if let Some(bench) = args.benchmark {
        let specs = bench.scenarios(args.seed, args.scenarios);
        let n_classes = specs.first().map_or(1, |s| s.n_classes);
        let cases = specs
            .iter()
            .map(|s| generate(s).map(|(frames, truth)| Case { frames, truth }))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok((n_classes, cases));
    }
    if args.stream.is_empty() {
        bail!(usage("sweep needs --stream/--truth pairs or --benchmark"));
    }
    if args.stream.len() != args.truth.len() {
        bail!(usage(format!(
            "{} --stream files but {} --truth files",
            args.stream.len(),
            args.truth.len()
        )));
    }
    let mut n_classes = None;
    let mut cases = Vec::new();
    for (s, t) in args.stream.iter().zip(&args.truth) {
        let (n, frames) = read_stream(s)?;
        if n_classes.is_some_and(|m| m != n) {
            bail!(Error::Format {
                line: 1,
                message: format!("{} declares {n} classes, earlier streams {}", s.display(), n_classes.unwrap()),
            });
        }
        n_classes = Some(n);
        let truth = io::read_ground_truth(open(t)?).with_context(|| format!("reading {}", t.display()))?;
        cases.push(Case { frames, truth });
    }
    Ok((n_classes.unwrap_or(1), cases))
}

fn write_curve(points: &[SweepPoint], out: Option<&Path>) -> Result<()> {
    let mut text = String::from(eval::CSV_HEADER);
    text.push('\n');
    for p in points {
        text.push_str(&eval::csv_row(p));
        text.push('\n');
    }
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let thresholds = match (&args.thresholds, &args.grid) {
        (Some(t), _) => t.clone(),
        (None, Some(g)) => parse_grid(g, true)?,
        (None, None) => bail!(usage("sweep needs --thresholds or --grid")),
    };
    if thresholds.is_empty() {
        bail!(usage("empty threshold list"));
    }
    let baseline_grid = parse_grid(&args.baseline_grid, false)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;

    pool.install(|| {
        let (n_classes, cases) = load_cases(&args)?;
        let c = match args.detector.c {
            Some(c) => c,
            None => {
                let mass = cases
                    .iter()
                    .map(|k| max_overlapping_mass(&k.frames, args.detector.iou_lim))
                    .fold(0.0, f64::max);
                (2.0 * mass).max(1.0)
            }
        };
        let retire = args.retire && args.strategy == Strategy::Rerun;
        let config = build_config(&args.detector, n_classes, thresholds[0], retire, c)?;
        let strategy = match args.strategy {
            Strategy::PostHoc => SweepStrategy::PostHoc,
            Strategy::Rerun => SweepStrategy::Rerun,
        };
        let curve = eval::sweep_detector(&cases, &config, args.detector.mode, &thresholds, strategy, args.detector.iou_lim)?;
        write_curve(&curve, args.out.as_deref())?;
        if args.baseline {
            let base = eval::sweep_baseline(&cases, &baseline_grid, args.detector.iou_lim);
            write_curve(&base, args.baseline_out.as_deref())?;
        }
        eprintln!("swept {} streams (C = {c})", cases.len());
        Ok(())
    })
}
