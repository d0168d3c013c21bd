use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use zsembed_core::dataio::{
    encode_rvf1, format_labels, format_roles, gen_synthetic, nearest_class_mean_accuracy, Dataset,
    ImageRole, SynthSpec,
};
use zsembed_core::eval::{evaluate, fraction_sweep, EvalReport};
use zsembed_core::model::{head_outputs, Arch, ModelParams};
use zsembed_core::par::{map_indexed, Exec};
use zsembed_core::trainer::{
    grid_search, run_trials, train_into, TrainTrace, TrialsReport, Variant,
};
use zsembed_core::{Error, Result};

use crate::runconfig::{DataSource, RunConfig, DATA_FILES, NAMES_FILE};
use crate::{parse_fraction_grid, selfcheck};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.out.as_path();
    fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(out)
}

fn arch_for(cfg: &RunConfig, ds: &Dataset) -> Arch {
    Arch::new(ds.d_visual(), cfg.train.d_hidden, ds.d_attribute())
}

fn write_report(cfg: &RunConfig, out: &Path, report: &EvalReport) -> Result<()> {
    write(&out.join("report.json"), report.to_json())?;
    if cfg.write_pr_csv {
        write(&out.join("pr.csv"), report.pr_csv())?;
    }
    Ok(())
}

fn summary(report: &EvalReport) -> String {
    format!(
        "top-1 {:.2}%  mAP {:.2}%  ({} images, {} candidate classes, search space {})",
        report.top1,
        report.map,
        report.n_images,
        report.candidates.len(),
        report.search_space.as_str()
    )
}

fn write_embeddings(params: &ModelParams, ds: &Dataset, out: &Path) -> Result<()> {
    let images = ds.test_indices();
    let classes = ds.test_classes();
    let (hv, ht) = head_outputs(
        params,
        &ds.visual().select_rows(&images),
        &ds.attributes().select_rows(&classes),
    )?;
    write(&out.join("embeddings_images.rvf"), encode_rvf1(&hv))?;
    write(&out.join("embeddings_classes.rvf"), encode_rvf1(&ht))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.load_dataset()?;
    let sds = cfg.split_dataset(&ds)?;
    let out = prepare_out(cfg)?;
    write(&out.join("config.txt"), cfg.echo(Some(&arch_for(cfg, &ds))))?;
    let mut trace = TrainTrace::default();
    let result = train_into(&cfg.train, &sds, &mut trace);
    write(&out.join("trace.csv"), trace.to_csv())?;
    let params = result?;
    params.save(out.join("checkpoint"))?;
    let mut report = evaluate(&params, &sds, ImageRole::Test, cfg.search_space)?;
    report
        .metadata
        .insert("variant".into(), cfg.train.variant.as_str().into());
    report
        .metadata
        .insert("seed".into(), cfg.train.seed.to_string());
    report
        .metadata
        .insert("split".into(), cfg.split.mode.as_str().into());
    report
        .metadata
        .insert("iterations".into(), trace.len().to_string());
    if let Some(it) = trace.converged_at {
        report
            .metadata
            .insert("converged_at".into(), it.to_string());
    }
    write_report(cfg, out, &report)?;
    if cfg.write_embeddings {
        write_embeddings(&params, &sds, out)?;
    }
    println!(
        "trained {} iterations ({})",
        trace.len(),
        cfg.train.variant.describe()
    );
    println!("{}", summary(&report));
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let out = prepare_out(cfg)?;
    let dir = checkpoint.map_or_else(|| out.join("checkpoint"), Path::to_path_buf);
    let params = ModelParams::load(&dir)?;
    let ds = cfg.load_dataset()?;
    let sds = cfg.split_dataset(&ds)?;
    let a = params.arch();
    if a.d_visual != ds.d_visual() || a.d_attribute != ds.d_attribute() {
        return Err(Error::Data(format!(
            "checkpoint expects {}-d images and {}-d attributes, data has {} and {}",
            a.d_visual,
            a.d_attribute,
            ds.d_visual(),
            ds.d_attribute()
        )));
    }
    let mut report = evaluate(&params, &sds, ImageRole::Test, cfg.search_space)?;
    report
        .metadata
        .insert("checkpoint".into(), dir.display().to_string());
    write_report(cfg, out, &report)?;
    println!("{}", summary(&report));
    Ok(())
}

pub fn ablate(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let ds = cfg.load_dataset()?;
    let out = prepare_out(cfg)?;
    write(&out.join("config.txt"), cfg.echo(Some(&arch_for(cfg, &ds))))?;
    let rows: Vec<Result<(Variant, TrialsReport)>> =
        map_indexed(Variant::ALL.len(), Exec::from_jobs(jobs), |k| {
            let v = Variant::ALL[k];
            let mut train = cfg.train.clone();
            train.variant = v;
            run_trials(
                &train,
                &ds,
                &cfg.split,
                cfg.trials,
                cfg.search_space,
                Exec::Sequential,
            )
            .map(|r| (v, r))
        });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let mut table = String::new();
    let mut csv = String::from("variant,top1_mean,top1_std,map_mean,map_std,trials\n");
    writeln!(
        table,
        "{:<20} {:>16} {:>16}  objective",
        "variant", "top-1 (%)", "mAP (%)"
    )
    .unwrap();
    for (v, r) in &rows {
        writeln!(
            table,
            "{:<20} {:>8.2} ± {:<5.2} {:>8.2} ± {:<5.2}  {}",
            v.as_str(),
            r.top1_mean,
            r.top1_std,
            r.map_mean,
            r.map_std,
            v.describe()
        )
        .unwrap();
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            v.as_str(),
            r.top1_mean,
            r.top1_std,
            r.map_mean,
            r.map_std,
            r.trials.len()
        )
        .unwrap();
    }
    write(&out.join("ablation.csv"), csv)?;
    let json: Vec<_> = rows
        .iter()
        .map(|(v, r)| serde_json::json!({ "variant": v.as_str(), "report": r }))
        .collect();
    write(
        &out.join("ablation.json"),
        serde_json::to_string_pretty(&json).expect("ablation serializes"),
    )?;
    print!("{table}");
    Ok(())
}

pub fn sweep_fraction(cfg: &RunConfig, grid: &str) -> Result<()> {
    let p_values = parse_fraction_grid(grid)?;
    let ds = cfg.load_dataset()?;
    let out = prepare_out(cfg)?;
    write(&out.join("config.txt"), cfg.echo(Some(&arch_for(cfg, &ds))))?;
    let rows = fraction_sweep(&cfg.train, &ds, &cfg.split, &p_values)?;
    let mut csv = String::from("p,top1,map\n");
    for r in &rows {
        writeln!(csv, "{},{},{}", r.p, r.top1, r.map).unwrap();
        println!("p={:<5} top-1 {:6.2}%  mAP {:6.2}%", r.p, r.top1, r.map);
    }
    write(&out.join("sweep.csv"), csv)
}

pub fn grid(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.load_dataset()?;
    let out = prepare_out(cfg)?;
    write(&out.join("config.txt"), cfg.echo(Some(&arch_for(cfg, &ds))))?;
    let g = grid_search(&ds, &cfg.train)?;
    for p in &g.points {
        println!(
            "beta={:<4} lambda={:<4} validation top-1 {:.2}%",
            p.beta, p.lambda, p.val_top1
        );
    }
    println!("selected beta={} lambda={}", g.beta, g.lambda);
    write(
        &out.join("grid.json"),
        serde_json::to_string_pretty(&g).expect("grid serializes"),
    )
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let preset = match cfg.data_source()? {
        DataSource::Synthetic { preset } => preset,
        DataSource::Files { .. } => {
            return Err(Error::Config(
                "synth needs a synthetic preset as its data source".into(),
            ))
        }
    };
    let spec = SynthSpec::preset(preset, cfg.effective_data_seed())
        .ok_or_else(|| Error::Config(format!("unknown synthetic preset {preset:?}")))?;
    let ds = gen_synthetic(&spec)?;
    let out = prepare_out(cfg)?;
    write(&out.join(DATA_FILES[0]), encode_rvf1(ds.visual()))?;
    write(&out.join(DATA_FILES[1]), encode_rvf1(ds.attributes()))?;
    write(&out.join(DATA_FILES[2]), format_labels(ds.labels()))?;
    write(&out.join(DATA_FILES[3]), format_roles(ds.roles()))?;
    if let Some(names) = ds.names() {
        write(&out.join(NAMES_FILE), names.join("\n") + "\n")?;
    }
    println!(
        "{preset}: {} images, {} classes, nearest-class-mean test accuracy {:.2}%",
        ds.n_images(),
        ds.n_classes(),
        nearest_class_mean_accuracy(&ds, ImageRole::Test)
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn selfcheck() -> Result<()> {
    let results = selfcheck::run_all();
    let failed = results.iter().filter(|o| !o.passed).count();
    for o in &results {
        println!(
            "{} {:<32} {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    if failed > 0 {
        return Err(Error::Data(format!(
            "{failed} of {} self-check suites failed",
            results.len()
        )));
    }
    println!("all {} suites passed", results.len());
    Ok(())
}
