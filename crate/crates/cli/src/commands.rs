use std::fs;
use std::path::{Path, PathBuf};

use autolabel_core::autolabel::{
    refine_dataset, select_threshold, threshold_dataset, RefineStats, RefinementParams, DEFAULT_MATCH_IOU,
};
use autolabel_core::eval::{check_aligned, evaluate_by_condition, pr_curve, DEFAULT_CLASS, DEFAULT_IOU_THRESHOLD};
use autolabel_core::geometry::IouKind;
use autolabel_core::labels::{filter_by_subset, load_dataset, save_dataset, Dataset, SubsetSpec, WeatherCondition};
use autolabel_core::report::{comparison_table, eval_csv, parse_eval_csv, pr_curve_svg, sweep_csv};
use autolabel_core::simdet::{
    generate_truth, inject_intermittent_errors, simulate_detector, uniform_road_mix, uniform_weather_mix, validate_mix,
};

use crate::config::{self, AutolabelConfig, EvalConfig, ReportConfig, SimulateConfig, SweepConfig};
use crate::error::CliError;
use crate::{AutolabelArgs, EvalArgs, ReportArgs, SimulateArgs, SweepArgs};

const DEFAULT_TAUS: [f64; 3] = [0.1, 0.3, 0.5];

fn required<T>(v: Option<T>, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("{what} required")))
}

/// Resolves a path given on the command line, else from the config file.
fn pick_path<T>(flag: Option<PathBuf>, from_config: &Option<PathBuf>, cfg: &config::Loaded<T>) -> Option<PathBuf> {
    flag.or_else(|| from_config.clone().map(|p| cfg.resolve(p)))
}

fn check_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(path, "no such file"))
    }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let cfg = config::load::<SimulateConfig>(a.config.as_deref())?;
    let c = &cfg.value;
    let out = required(pick_path(a.out, &c.out, &cfg), "--out")?;

    let mut scenario = c.scenario.clone();
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let weather_mix = c.weather_mix.clone().unwrap_or_else(uniform_weather_mix);
    let road_mix = c.road_mix.clone().unwrap_or_else(uniform_road_mix);
    let noise = c.noise.build();
    scenario.validate()?;
    validate_mix("weather_mix", &weather_mix)?;
    validate_mix("road_mix", &road_mix)?;
    noise.validate()?;
    prepare_out(&out)?;

    let truth = generate_truth(&scenario, &weather_mix, &road_mix)?;
    let mut dets = simulate_detector(
        &truth,
        &noise,
        &scenario.field_of_view,
        scenario.ground_z,
        scenario.seed,
    )?;
    dets.split_name = "detections".into();
    if let Some(inject) = c.inject {
        let (corrupted, log) = inject_intermittent_errors(&dets, inject.n_fa, inject.n_miss, scenario.seed)?;
        dets = corrupted;
        let json = serde_json::to_string_pretty(&log).expect("log serializes");
        write_text(&out.join("injections.json"), &(json + "\n"))?;
    }
    save_dataset(&truth, out.join("truth.jsonl"))?;
    save_dataset(&dets, out.join("detections.jsonl"))?;
    println!(
        "sequences={} frames={} truth_objects={} detections={}",
        truth.sequences().len(),
        truth.num_frames(),
        truth.num_objects(),
        dets.num_objects()
    );
    Ok(())
}

pub fn autolabel(a: AutolabelArgs) -> Result<(), CliError> {
    let cfg = config::load::<AutolabelConfig>(a.config.as_deref())?;
    let c = &cfg.value;
    let tau = required(a.tau.or(c.tau), "tau")?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(CliError::Usage(format!("tau {tau} is not in [0, 1]")));
    }
    let refine = a.refine || c.refine;
    let params = RefinementParams::with_match_iou(a.match_iou.or(c.match_iou).unwrap_or(DEFAULT_MATCH_IOU))?;
    let dets_path = required(pick_path(a.dets, &c.detections, &cfg), "--dets")?;
    let out = required(pick_path(a.out, &c.out, &cfg), "--out")?;
    check_input(&dets_path)?;
    let dets = load_dataset(&dets_path)?;
    let kept = threshold_dataset(&dets, tau)?;
    prepare_out(&out)?;

    let n_kept = kept.num_objects();
    let (labels, stats) = if refine {
        refine_dataset(&kept, &params)?
    } else {
        (kept, RefineStats::default())
    };
    save_dataset(&labels, out.join("autolabels.jsonl"))?;
    println!(
        "kept={n_kept} removed_fa={} inserted_miss={}",
        stats.removed_false_alarms, stats.inserted_misses
    );
    if stats.ambiguous_yaws > 0 {
        log::warn!(
            "{} inserted boxes had opposite neighbour headings",
            stats.ambiguous_yaws
        );
    }
    Ok(())
}

fn load_pair(dets: &Path, truth: &Path) -> Result<(Dataset, Dataset), CliError> {
    check_input(dets)?;
    check_input(truth)?;
    Ok((load_dataset(dets)?, load_dataset(truth)?))
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let cfg = config::load::<SweepConfig>(a.config.as_deref())?;
    let c = &cfg.value;
    let taus = a
        .taus
        .or_else(|| c.taus.clone())
        .unwrap_or_else(|| DEFAULT_TAUS.to_vec());
    let match_iou = a.match_iou.or(c.match_iou).unwrap_or(DEFAULT_MATCH_IOU);
    RefinementParams::with_match_iou(match_iou)?;
    let dets_path = required(pick_path(a.dets, &c.detections, &cfg), "--dets")?;
    let truth_path = required(pick_path(a.truth, &c.truth, &cfg), "--truth")?;
    let out = pick_path(a.out, &c.out, &cfg);
    let (dets, truth) = load_pair(&dets_path, &truth_path)?;
    if let Some(out) = &out {
        prepare_out(out)?;
    }

    let report = select_threshold(&dets, &truth, &taus, match_iou)?;
    let csv = sweep_csv(&report);
    if let Some(out) = &out {
        write_text(&out.join("sweep.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = config::load::<EvalConfig>(a.config.as_deref())?;
    let c = &cfg.value;
    let iou = a.iou.or(c.iou).unwrap_or(DEFAULT_IOU_THRESHOLD);
    if !(iou > 0.0 && iou <= 1.0) {
        return Err(CliError::Usage(format!("iou {iou} is not in (0, 1]")));
    }
    let class = a
        .class
        .or_else(|| c.class.clone())
        .unwrap_or_else(|| DEFAULT_CLASS.to_owned());
    let subset = a.subset.or(c.subset).unwrap_or(SubsetSpec::All);
    let svg = a.svg || c.svg;
    let dets_path = required(pick_path(a.dets, &c.detections, &cfg), "--dets")?;
    let truth_path = required(pick_path(a.truth, &c.truth, &cfg), "--truth")?;
    let out = pick_path(a.out, &c.out, &cfg);
    if svg && out.is_none() {
        return Err(CliError::Usage("--svg needs --out".into()));
    }
    let (dets, truth) = load_pair(&dets_path, &truth_path)?;
    check_aligned(&dets, &truth)?;
    if let Some(out) = &out {
        prepare_out(out)?;
    }

    // Subsets follow the truth's weather tags.
    let truth = filter_by_subset(&truth, subset);
    let keys = truth.frame_keys();
    let dets = dets.retain_frames(|f| keys.contains(&f.key()));

    let report = evaluate_by_condition(&dets, &truth, iou, &class)?;
    let conditions: Vec<WeatherCondition> = WeatherCondition::ALL
        .into_iter()
        .filter(|w| subset.contains(*w))
        .collect();
    let csv = eval_csv(&report, &conditions, !truth.is_empty());
    if let Some(out) = &out {
        write_text(&out.join("eval.csv"), &csv)?;
        if svg {
            for (kind, name, file) in [
                (IouKind::Bev, "AP_BEV", "pr_bev.svg"),
                (IouKind::ThreeD, "AP_3D", "pr_3d.svg"),
            ] {
                let curve = pr_curve(&dets, &truth, kind, iou, &class)?;
                let title = format!("{class} {name} {} @ IoU {iou}", subset.name());
                write_text(&out.join(file), &pr_curve_svg(&title, &curve.points))?;
            }
        }
    }
    print!("{csv}");
    Ok(())
}

/// `name=path`, or a bare path named after its file stem (or its directory
/// when the file is the default `eval.csv`).
fn report_input(spec: &str) -> (String, PathBuf) {
    if let Some((name, path)) = spec.split_once('=') {
        return (name.to_owned(), PathBuf::from(path));
    }
    let path = PathBuf::from(spec);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    let name = match path.parent().and_then(Path::file_name).and_then(|s| s.to_str()) {
        Some(dir) if stem == "eval" => dir.to_owned(),
        _ => stem.to_owned(),
    };
    (name, path)
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let cfg = config::load::<ReportConfig>(a.config.as_deref())?;
    let c = &cfg.value;
    let inputs: Vec<(String, PathBuf)> = if a.inputs.is_empty() {
        c.inputs
            .iter()
            .map(|s| {
                let (name, path) = report_input(s);
                (name, cfg.resolve(path))
            })
            .collect()
    } else {
        a.inputs.iter().map(|s| report_input(s)).collect()
    };
    if inputs.is_empty() {
        return Err(CliError::Usage("at least one eval CSV required".into()));
    }
    let out = pick_path(a.out, &c.out, &cfg);
    for (_, path) in &inputs {
        check_input(path)?;
    }

    let mut models = Vec::with_capacity(inputs.len());
    for (name, path) in inputs {
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let rows = parse_eval_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        models.push((name, rows));
    }
    let table = comparison_table(&models);
    if let Some(out) = &out {
        prepare_out(out)?;
        write_text(&out.join("report.md"), &table)?;
    }
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_input_names() {
        assert_eq!(
            report_input("al=runs/x.csv"),
            ("al".into(), PathBuf::from("runs/x.csv"))
        );
        assert_eq!(report_input("runs/hl/eval.csv").0, "hl");
        assert_eq!(report_input("runs/hl.csv").0, "hl");
    }
}
