use std::io::Write;
use std::path::Path;

use serde::Serialize;
use slproto::dataio::{
    gen_synthetic, load_dataset, load_episodes, sample_episodes, write_binary, write_jsonl, DataFormat,
    SyntheticClass, SyntheticSpec,
};
use slproto::harness::{run_task, write_reports_csv, write_reports_json, ClassifierConfig};
use slproto::protogen::{fit_prototypes, PrototypeModel, PrototypeOrigin};
use slproto::vectorspace::compute_centroids;
use slproto::{Error, ErrorKind, Result};

use crate::args::{resolve, EvalArgs, FileConfig, FitArgs, InspectArgs, SynthArgs};
use crate::output::write_atomic;

fn or_dash(items: &[String]) -> String {
    if items.is_empty() {
        "-".into()
    } else {
        items.join(" ")
    }
}

fn fmt_margin(m: Option<f64>) -> String {
    m.map_or("none (hard prototypes)".into(), |m| format!("{m:.6}"))
}

pub fn fit(args: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(args.data.config.as_ref())?;
    let r = resolve(&args.data, &args.fit, &file)?;
    let dataset = load_dataset(&r.data, r.format)?;
    let support = match r.shots {
        Some(shots) => {
            let episode = sample_episodes(&dataset, shots, 1, r.seed)?.remove(0);
            dataset.select(&episode.support)?
        }
        None => dataset.instances().to_vec(),
    };
    let centroids = compute_centroids(&support)?;
    let model = fit_prototypes(&centroids, &r.fit)?;
    let json = model.to_json()?;
    write_atomic(&args.out, |w| Ok(w.write_all(json.as_bytes())?))?;

    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    writeln!(out, "N={} classes, M={} prototypes", model.num_classes(), model.num_prototypes())?;
    for line in &model.lines {
        writeln!(
            out,
            "line {}: members {} | assigned {} | margin {}",
            line.index,
            line.member_classes.join(" "),
            or_dash(&line.assigned_classes),
            fmt_margin(line.margin)
        )?;
    }
    writeln!(out, "uncovered: {}", or_dash(&model.uncovered))?;
    writeln!(out, "model written to {}", args.out.display())?;
    Ok(())
}

fn parse_classifiers(names: &[String], k: usize, fit: &slproto::protogen::FitConfig) -> Result<Vec<ClassifierConfig>> {
    if k == 0 {
        return Err(Error::Usage("--k must be at least 1".into()));
    }
    names
        .iter()
        .map(|n| match n.trim() {
            "slp" => Ok(ClassifierConfig::Slp { k, fit: fit.clone() }),
            "1nn" => Ok(ClassifierConfig::OneNn),
            "centroid" => Ok(ClassifierConfig::Centroid),
            other => Err(Error::Usage(format!(
                "unknown classifier {other:?} (expected slp, 1nn or centroid)"
            ))),
        })
        .collect()
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(args.data.config.as_ref())?;
    let r = resolve(&args.data, &args.fit, &file)?;
    let names: Vec<String> = match (&args.classifiers, &file.classifiers) {
        (Some(s), _) => s.split(',').map(str::to_string).collect(),
        (None, Some(v)) => v.clone(),
        (None, None) => vec!["slp".into()],
    };
    let configs = parse_classifiers(&names, args.k.or(file.k).unwrap_or(1), &r.fit)?;
    let source = args
        .episodes
        .clone()
        .or_else(|| file.episodes.clone())
        .ok_or_else(|| Error::Usage("--episodes is required (a file or sample:N,SEED)".into()))?;

    let dataset = load_dataset(&r.data, r.format)?;
    let episodes = match source.strip_prefix("sample:") {
        Some(spec) => {
            let (n, seed) = match spec.split_once(',') {
                Some((n, s)) => (n, Some(s)),
                None => (spec, None),
            };
            let n: usize = n
                .parse()
                .map_err(|_| Error::Usage(format!("bad episode count in {source:?}")))?;
            let seed = match seed {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Usage(format!("bad seed in {source:?}")))?,
                None => r.seed,
            };
            let shots = r
                .shots
                .ok_or_else(|| Error::Usage("--shots is required when sampling episodes".into()))?;
            sample_episodes(&dataset, shots, n, seed)?
        }
        None => load_episodes(Path::new(&source))?,
    };

    let reports = run_task(&dataset, &episodes, &configs)?;
    // a configuration problem fails every episode the same way; report it once
    if let Some(f) = reports
        .iter()
        .flat_map(|r| &r.failures)
        .find(|f| f.kind == ErrorKind::Usage)
    {
        return Err(Error::Usage(f.reason.clone()));
    }
    write_atomic(&args.out_json, |w| write_reports_json(&reports, w))?;
    write_atomic(&args.out_csv, |w| write_reports_csv(&reports, w))?;

    for r in &reports {
        for f in &r.failures {
            eprintln!("warning: {} episode {} failed: {}", r.classifier, f.episode, f.reason);
        }
        let score = match (r.mean, r.std) {
            (Some(m), Some(s)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
            _ => "n/a".into(),
        };
        let failed = if r.failures.is_empty() {
            String::new()
        } else {
            format!(", {} failed", r.failures.len())
        };
        writeln!(
            out,
            "{} | {}-shot | {} | {} ({} episodes{})",
            r.task,
            r.shots,
            r.classifier,
            score,
            r.episodes.len(),
            failed
        )?;
    }
    writeln!(out, "reports written to {} and {}", args.out_json.display(), args.out_csv.display())?;
    Ok(())
}

#[derive(Serialize)]
struct PrototypeDump<'a> {
    index: usize,
    origin: &'a PrototypeOrigin,
    location_norm: f64,
    soft_label: Vec<(&'a str, f64)>,
}

fn origin_text(o: &PrototypeOrigin) -> String {
    match o {
        PrototypeOrigin::LineStart { line } => format!("line {line} start"),
        PrototypeOrigin::LineEnd { line } => format!("line {line} end"),
        PrototypeOrigin::Hard { class } => format!("hard, class {class}"),
    }
}

pub fn inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&args.model)?;
    let model = PrototypeModel::from_json(&text)?;
    let dumps: Vec<PrototypeDump> = model
        .prototypes
        .iter()
        .enumerate()
        .map(|(i, p)| PrototypeDump {
            index: i,
            origin: &p.origin,
            location_norm: p.location.iter().map(|x| x * x).sum::<f64>().sqrt(),
            soft_label: model.classes.iter().map(String::as_str).zip(p.soft_label.iter().copied()).collect(),
        })
        .collect();

    if let Some(path) = &args.csv {
        write_atomic(path, |w| {
            let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
            let mut rows = csv::Writer::from_writer(w);
            rows.write_record(["prototype", "class", "probability"]).map_err(csv_err)?;
            for d in &dumps {
                for (class, p) in &d.soft_label {
                    rows.write_record([d.index.to_string(), class.to_string(), p.to_string()])
                        .map_err(csv_err)?;
                }
            }
            Ok(rows.flush()?)
        })?;
    }

    if args.json {
        let doc = serde_json::json!({
            "schema_version": model.schema_version,
            "classes": model.classes,
            "prototypes": dumps,
            "lines": model.lines,
            "uncovered": model.uncovered,
        });
        serde_json::to_writer_pretty(&mut *out, &doc)?;
        writeln!(out)?;
        return Ok(());
    }

    writeln!(
        out,
        "N={} classes, M={} prototypes, D={}, algo={}, epsilon={}",
        model.num_classes(),
        model.num_prototypes(),
        model.dim(),
        model.config.algorithm,
        model.config.epsilon
    )?;
    for d in &dumps {
        writeln!(out, "prototype {} ({}), |x| = {:.6}", d.index, origin_text(d.origin), d.location_norm)?;
        let width = model.classes.iter().map(String::len).max().unwrap_or(0);
        for (class, p) in &d.soft_label {
            let bar = "#".repeat((p * 40.0).round() as usize);
            writeln!(out, "{}", format!("  {class:<width$} {p:.4} {bar}").trim_end())?;
        }
    }
    for line in &model.lines {
        writeln!(
            out,
            "line {}: members {} | assigned {} | length {:.6} | margin {}",
            line.index,
            line.member_classes.join(" "),
            or_dash(&line.assigned_classes),
            line.length,
            fmt_margin(line.margin)
        )?;
    }
    writeln!(out, "uncovered: {}", or_dash(&model.uncovered))?;
    Ok(())
}

fn preset(name: &str, sigma: f64, count: usize) -> Result<SyntheticSpec> {
    match name {
        "three-collinear" => Ok(SyntheticSpec {
            classes: ["a", "b", "c"]
                .iter()
                .enumerate()
                .map(|(i, l)| SyntheticClass {
                    label: l.to_string(),
                    mean: vec![i as f64, 0.0],
                    sigma,
                    count,
                })
                .collect(),
        }),
        other => Err(Error::Usage(format!("unknown preset {other:?} (expected three-collinear)"))),
    }
}

pub fn synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = match (&args.spec, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::Usage(format!("spec {}: {e}", path.display())))?
        }
        (None, Some(name)) => preset(name, args.sigma, args.count)?,
        (None, None) => return Err(Error::Usage("one of --spec or --preset is required".into())),
    };
    let dataset = gen_synthetic(&spec, args.seed)?;
    let format = match &args.format {
        Some(f) => f.parse()?,
        None => DataFormat::from_path(&args.out),
    };
    write_atomic(&args.out, |w| match format {
        DataFormat::Jsonl => write_jsonl(&dataset, w),
        DataFormat::Binary => write_binary(&dataset, w),
    })?;
    writeln!(
        out,
        "wrote {} instances, {} classes, D={} to {}",
        dataset.len(),
        dataset.classes().len(),
        dataset.dim(),
        args.out.display()
    )?;
    Ok(())
}
