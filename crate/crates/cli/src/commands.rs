use std::sync::Arc;

use log::info;
use serde::Serialize;

use downscale_core::downscale::DownscaleModelRecord;
use downscale_core::eval::{generate_synthetic, run_comparison, write_instance, SyntheticSpec};
use downscale_core::geo::{load_dataset_csv, QuantityKind};
use downscale_core::gp_aux::{AuxGpModel, AuxModelRecord};
use downscale_core::pipeline::{
    fit_aux_stage, read_aux_manifest, restore_aux_stage, restore_refinement, run_methods, run_proposed, Bundle, Method,
};

use crate::args::{BaselineArgs, EvalArgs, FitArgs, InputArgs, RefineArgs, SynthArgs};
use crate::error::{CliError, CliResult};
use crate::output::{covariance_csv, prediction_csv, read_json, to_json, OutputDir, RunManifest};
use crate::svg::choropleth;

pub const MODEL_FILE: &str = "model.json";
pub const AUX_MODELS_FILE: &str = "aux_models.json";

/// Checks that every input file exists before any work starts, so a typo is
/// reported by path instead of as a parse failure halfway through.
fn check_inputs(input: &InputArgs) -> CliResult<()> {
    let mut paths = vec![&input.target, &input.coarse, &input.fine, &input.aux_manifest];
    paths.extend(input.h_matrix.as_ref());
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Usage(format!("input file not found: {}", p.display())));
        }
    }
    for e in read_aux_manifest(&input.aux_manifest)? {
        for p in [&e.geojson, &e.csv] {
            if !p.is_file() {
                return Err(CliError::Usage(format!(
                    "auxiliary `{}`: file not found: {}",
                    e.id,
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

fn load(input: &InputArgs) -> CliResult<Bundle> {
    check_inputs(input)?;
    Ok(Bundle::load(&input.paths())?)
}

fn record_inputs(manifest: &mut RunManifest, input: &InputArgs) -> CliResult<()> {
    manifest.add_input("target", &input.target)?;
    manifest.add_input("coarse", &input.coarse)?;
    manifest.add_input("fine", &input.fine)?;
    manifest.add_input("aux_manifest", &input.aux_manifest)?;
    if let Some(h) = &input.h_matrix {
        manifest.add_input("h_matrix", h)?;
    }
    for e in read_aux_manifest(&input.aux_manifest)? {
        manifest.add_input(&format!("aux:{}:geojson", e.id), &e.geojson)?;
        manifest.add_input(&format!("aux:{}:csv", e.id), &e.csv)?;
    }
    Ok(())
}

fn write_prediction(
    out: &mut OutputDir,
    stem: &str,
    bundle: &Bundle,
    mean: &[f64],
    variance: Option<&[f64]>,
    title: &str,
) -> CliResult<()> {
    let ids: Vec<&str> = bundle.fine.ids().collect();
    out.write(&format!("{stem}.csv"), &prediction_csv(&ids, mean, variance))?;
    out.write(&format!("{stem}.svg"), choropleth(&bundle.fine, mean, title).as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct Settings<'a, T: Serialize> {
    input: &'a InputArgs,
    #[serde(flatten)]
    rest: T,
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let bundle = load(&args.input)?;
    let opts = args.settings.options();
    info!("fitting {} auxiliary GPs", bundle.aux.len());
    let stage = fit_aux_stage(&bundle, &opts.gp)?;
    info!("fitting the downscaling model");
    let run = run_proposed(&bundle, &stage, &opts.downscale)?;
    let model = DownscaleModelRecord::new(run.problem.design(), &run.fit, stage.transform, opts.downscale.jitter);
    let aux: Vec<AuxModelRecord> = stage.models.iter().map(AuxGpModel::record).collect();

    let mut out = OutputDir::create(&args.out)?;
    out.write(AUX_MODELS_FILE, to_json(&aux).as_bytes())?;
    out.write(MODEL_FILE, to_json(&model).as_bytes())?;
    let mut manifest = RunManifest::new(
        "fit",
        &Settings {
            input: &args.input,
            rest: serde_json::json!({ "cli": &args.settings, "options": opts }),
        },
    );
    record_inputs(&mut manifest, &args.input)?;
    out.finish("fit_manifest.json", manifest)?;

    println!("log marginal likelihood {}", model.diagnostics.log_marginal);
    for w in &model.weights {
        println!("weight {} {}", w.column, w.weight);
    }
    Ok(())
}

pub fn refine(args: &RefineArgs) -> CliResult<()> {
    let bundle = load(&args.input)?;
    let models_dir = args.models.as_deref().unwrap_or(&args.out);
    let aux: Vec<AuxModelRecord> = read_json(&models_dir.join(AUX_MODELS_FILE))?;
    let model: DownscaleModelRecord = read_json(&models_dir.join(MODEL_FILE))?;
    let stage = restore_aux_stage(&bundle, &aux)?;
    let refinement = restore_refinement(&bundle, &stage, &model)?;

    let mut out = OutputDir::create(&args.out)?;
    let variance = refinement.variance();
    write_prediction(
        &mut out,
        "prediction",
        &bundle,
        refinement.mean.as_slice(),
        Some(variance.as_slice()),
        "proposed: posterior mean",
    )?;
    if args.covariance {
        let ids: Vec<&str> = bundle.fine.ids().collect();
        out.write("covariance.csv", &covariance_csv(&ids, &refinement.cov))?;
    }
    let mut manifest = RunManifest::new(
        "refine",
        &Settings {
            input: &args.input,
            rest: serde_json::json!({ "covariance": args.covariance }),
        },
    );
    record_inputs(&mut manifest, &args.input)?;
    manifest.add_input("model", &models_dir.join(MODEL_FILE))?;
    manifest.add_input("aux_models", &models_dir.join(AUX_MODELS_FILE))?;
    out.finish("refine_manifest.json", manifest)
}

pub fn baseline(args: &BaselineArgs) -> CliResult<()> {
    let method = Method::parse(&args.method)?;
    if method == Method::Proposed {
        return Err(CliError::Usage(
            "`proposed` is not a baseline; valid baselines are gpr, lr, sd2 (use `fit` and `refine` for the proposed model)"
                .into(),
        ));
    }
    let bundle = load(&args.input)?;
    let opts = args.settings.options();
    let output = run_methods(&bundle, &[method], &opts)?.remove(0);

    let name = method.name();
    let mut out = OutputDir::create(&args.out)?;
    write_prediction(
        &mut out,
        &format!("prediction_{name}"),
        &bundle,
        output.mean.as_slice(),
        output.variance.as_ref().map(|v| v.as_slice()),
        &format!("{name}: prediction"),
    )?;
    out.write(
        &format!("baseline_{name}.json"),
        to_json(&output.baseline_params).as_bytes(),
    )?;
    let mut manifest = RunManifest::new(
        "baseline",
        &Settings {
            input: &args.input,
            rest: serde_json::json!({ "method": name, "cli": &args.settings, "options": opts }),
        },
    );
    record_inputs(&mut manifest, &args.input)?;
    out.finish(&format!("baseline_{name}_manifest.json"), manifest)
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let methods = args
        .method
        .iter()
        .map(|m| Method::parse(m.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    if let Some(m) = methods
        .iter()
        .enumerate()
        .find_map(|(i, m)| methods[..i].contains(m).then_some(m))
    {
        return Err(CliError::Usage(format!("method `{}` listed twice", m.name())));
    }
    let bundle = load(&args.input)?;
    if !args.truth.is_file() {
        return Err(CliError::Usage(format!(
            "input file not found: {}",
            args.truth.display()
        )));
    }
    let truth = load_dataset_csv("truth", Arc::clone(&bundle.fine), QuantityKind::Intensive, &args.truth)?;
    let opts = args.settings.options();
    let outcome = run_comparison(&bundle, truth.values(), &methods, &opts)?;

    let mut out = OutputDir::create(&args.out)?;
    let text = outcome.table.to_text();
    out.write("comparison.csv", outcome.table.to_csv().as_bytes())?;
    out.write("comparison.txt", text.as_bytes())?;
    for o in &outcome.outputs {
        let name = o.method.name();
        write_prediction(
            &mut out,
            &format!("prediction_{name}"),
            &bundle,
            o.mean.as_slice(),
            o.variance.as_ref().map(|v| v.as_slice()),
            &format!("{name}: prediction"),
        )?;
    }
    let names: Vec<&str> = methods.iter().map(Method::name).collect();
    let mut manifest = RunManifest::new(
        "eval",
        &Settings {
            input: &args.input,
            rest: serde_json::json!({ "methods": names, "cli": &args.settings, "options": opts }),
        },
    );
    record_inputs(&mut manifest, &args.input)?;
    manifest.add_input("truth", &args.truth)?;
    out.finish("eval_manifest.json", manifest)?;
    print!("{text}");
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let spec = SyntheticSpec::preset(&args.preset)?;
    let inst = generate_synthetic(&spec, args.seed)?;
    write_instance(&inst, &args.out)?;
    println!(
        "wrote {} instance (seed {}) to {}",
        args.preset,
        args.seed,
        args.out.display()
    );
    Ok(())
}

/// Caps rayon's global pool from `DOWNSCALE_THREADS`.
pub fn configure_threads(var: Option<&str>) -> CliResult<()> {
    let Some(v) = var else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("DOWNSCALE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

pub fn run(command: &crate::args::Command) -> CliResult<()> {
    use crate::args::Command::*;
    match command {
        Fit(a) => fit(a),
        Refine(a) => refine(a),
        Baseline(a) => baseline(a),
        Eval(a) => eval(a),
        Synth(a) => synth(a),
    }
}
