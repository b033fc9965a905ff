mod args;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use ecloo::data::{
    default_feature_names, error_summary, gen_synthetic, load_csv, write_dataset_csv, write_fit_json, write_loo_csv,
    write_sweep_csv, SynthConfig, Table,
};
use ecloo::hyper::{calibrate_and_select, sweep, CalibrationOptions, ProtocolOptions, SweepGrid, SweepOptions};
use ecloo::loocv::{approx_looe, kfold_cv, literal_loocv, CvOptions, DENOMINATOR_FLOOR};
use ecloo::validate::{run_suite, ValidateConfig};
use ecloo::{Error, FitSettings, PriorSpec};

use args::{family, CalibrateArgs, Cli, Command, DataArgs, FitArgs, LoocvArgs, SweepArgs, SynthArgs, ValidateArgs};

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::MissingTarget(_)
            | Error::Parse { .. }
            | Error::NonNumericCell { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => Failure::Usage(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Loocv(a) => loocv(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", path.display())))
}

fn load(data: &DataArgs) -> Result<Table, Failure> {
    load_csv(&data.data, &data.target, data.center).map_err(|e| match e {
        Error::Io(io) => Failure::Usage(format!("cannot read {}: {io}", data.data.display())),
        other => other.into(),
    })
}

fn header(command: &str) -> Vec<String> {
    vec![format!("ecloo {} {command}", env!("CARGO_PKG_VERSION"))]
}

fn data_line(data: &DataArgs, table: &Table) -> String {
    format!(
        "data = {}, target = {}, center = {}, N = {}, M = {}",
        data.data.display(),
        data.target,
        data.center,
        table.dataset.n_features(),
        table.dataset.n_samples()
    )
}

fn prior_line(prior: &PriorSpec) -> String {
    match prior.family.sigma_w2() {
        Some(s) => format!("prior = {}, rho = {}, sigma_w2 = {s}", prior.family.name(), prior.rho),
        None => format!("prior = {}, rho = {}", prior.family.name(), prior.rho),
    }
}

fn settings_line(s: &FitSettings) -> String {
    format!(
        "settings: grad_tol = {:?}, step_tol = {:?}, max_outer = {}, min_step = {:?}, variance_floor = {:?}, tilt_tol = {:?}, tilt_damping = {:?}, tilt_max_inner = {}",
        s.grad_tol, s.step_tol, s.max_outer, s.min_step, s.variance_floor, s.tilt.tol, s.tilt.damping, s.tilt.max_inner
    )
}

fn synth(a: SynthArgs) -> Outcome {
    let config = SynthConfig {
        n: a.n,
        alpha: a.alpha,
        rho0: a.rho0,
        sigma_w0_sq: a.sigma_w0_sq,
        sigma_n0_sq: a.sigma_n0_sq,
        seed: a.seed,
        test_samples: a.test_samples,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let data = gen_synthetic(&config)?;
    let mut comments = header("synth");
    comments.push(format!(
        "n = {}, alpha = {}, rho0 = {}, sigma_w0_sq = {}, sigma_n0_sq = {}, seed = {}, test_samples = {}",
        a.n, a.alpha, a.rho0, a.sigma_w0_sq, a.sigma_n0_sq, a.seed, a.test_samples
    ));
    let names = default_feature_names(a.n);
    std::fs::create_dir_all(&a.out_dir)?;
    let train_path = a.out_dir.join(format!("{}_train.csv", a.prefix));
    let mut c = comments.clone();
    c.push("part = train".into());
    write_dataset_csv(create(&train_path)?, &data.train, &names, "y", &c)?;
    println!("wrote {}", train_path.display());
    if let Some(test) = &data.test {
        let test_path = a.out_dir.join(format!("{}_test.csv", a.prefix));
        let mut c = comments.clone();
        c.push("part = test".into());
        write_dataset_csv(create(&test_path)?, test, &names, "y", &c)?;
        println!("wrote {}", test_path.display());
    }
    let truth_path = a.out_dir.join(format!("{}_truth.csv", a.prefix));
    let mut w = create(&truth_path)?;
    for c in &comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "feature,w0")?;
    for (name, v) in names.iter().zip(data.truth.w0.iter()) {
        writeln!(w, "{name},{v}")?;
    }
    w.flush()?;
    println!("wrote {}", truth_path.display());
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Outcome {
    let prior = a.prior.spec().map_err(Failure::Usage)?;
    let table = load(&a.data)?;
    let settings = a.solver.settings();
    let spectrum = ecloo::Spectrum::new(&table.dataset)?;
    let f = ecloo::ec::fit_with(&table.dataset, &spectrum, &prior, a.beta, None, &settings)?;
    let summary = error_summary(f.m(), &table.dataset, None)?;
    let mut w = create(&a.out)?;
    write_fit_json(&mut w, &f)?;
    w.flush()?;
    println!(
        "converged = {}, iterations = {}, free_energy = {}, eps = {}, expected_support = {}",
        f.converged(),
        f.state.iterations,
        f.state.free_energy,
        summary.eps,
        f.expected_support()
    );
    println!("wrote {}", a.out.display());
    if f.converged() {
        Ok(())
    } else {
        Err(Failure::Numerical("fit did not converge; the last iterate was written".into()))
    }
}

fn loocv(a: LoocvArgs) -> Outcome {
    let prior = a.prior.spec().map_err(Failure::Usage)?;
    let table = load(&a.data)?;
    let d = &table.dataset;
    if let Some(k) = a.kfold {
        if k as usize > d.n_samples() {
            return Err(Failure::Usage(format!(
                "--kfold {k} exceeds the number of samples {}",
                d.n_samples()
            )));
        }
    }
    let settings = a.solver.settings();
    let cv = CvOptions {
        workers: a.workers.workers,
        settings,
        ..CvOptions::default()
    };
    let mut comments = header("loocv");
    comments.push(data_line(&a.data, &table));
    comments.push(format!("{}, beta = {}", prior_line(&prior), a.beta));
    comments.push(settings_line(&settings));
    comments.push(format!("denominator_floor = {DENOMINATOR_FLOOR:?}, workers = {}", a.workers.workers));

    let report = if a.literal {
        literal_loocv(d, &prior, a.beta, &cv)?
    } else {
        let spectrum = ecloo::Spectrum::new(d)?;
        let f = ecloo::ec::fit_with(d, &spectrum, &prior, a.beta, None, &settings)?;
        approx_looe(&f, d)?
    };
    let eps_approx = report.eps_loo_approx();
    println!("eps_loo_approx = {eps_approx}");
    comments.push(format!("eps_loo_approx = {eps_approx}"));
    if a.literal {
        let rel = (eps_approx - report.eps_loo).abs() / report.eps_loo;
        println!("eps_loo_refit = {}", report.eps_loo);
        println!("relative_difference = {rel}");
        println!("failed_refits = {}", report.failed.len());
        comments.push(format!(
            "eps_loo_refit = {}, relative_difference = {rel}, failed_refits = {}",
            report.eps_loo,
            report.failed.len()
        ));
    }
    if !report.flagged.is_empty() {
        println!("flagged = {:?}", report.flagged);
    }
    if let Some(k) = a.kfold {
        let kf = kfold_cv(d, &prior, a.beta, k as usize, a.seed, &cv)?;
        println!("eps_kfold = {} (k = {k}, seed = {})", kf.eps_loo, a.seed);
        comments.push(format!("eps_kfold = {}, k = {k}, seed = {}", kf.eps_loo, a.seed));
    }
    let mut w = create(&a.out)?;
    write_loo_csv(&mut w, &report, &comments)?;
    w.flush()?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Outcome {
    let fam = family(a.prior, a.sigma_w2s.first().copied()).map_err(Failure::Usage)?;
    let grid = SweepGrid::new(a.betas.clone(), a.rhos.clone(), a.sigma_w2s.clone());
    grid.validate(fam).map_err(|e| Failure::Usage(e.to_string()))?;
    let table = load(&a.data)?;
    let settings = a.solver.settings();
    let options = SweepOptions {
        workers: a.workers.workers,
        settings,
    };
    let mut comments = header("sweep");
    comments.push(data_line(&a.data, &table));
    comments.push(format!("prior = {}", fam.name()));
    comments.push(settings_line(&settings));
    comments.push(format!("workers = {}", a.workers.workers));
    let result = sweep(&table.dataset, fam, &grid, &options)?;
    for r in &result.records {
        eprintln!(
            "beta = {} rho = {} sigma_w2 = {} eps_loo = {}{}",
            r.beta,
            r.rho,
            r.sigma_w2.map_or("-".into(), |s| s.to_string()),
            r.eps_loo,
            r.failure.as_ref().map_or(String::new(), |f| format!(" ({f})"))
        );
    }
    let best = result.best();
    let best_line = format!(
        "argmin eps_loo: beta = {}, rho = {}, sigma_w2 = {}, eps_loo = {}",
        best.beta,
        best.rho,
        best.sigma_w2.map_or("-".into(), |s| s.to_string()),
        best.eps_loo
    );
    println!("{best_line}");
    comments.push(best_line);
    let mut w = create(&a.out)?;
    write_sweep_csv(&mut w, &result.records, &comments)?;
    w.flush()?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Outcome {
    let fam = family(a.prior, a.sigma_w2).map_err(Failure::Usage)?;
    let table = load(&a.data)?;
    let n = table.dataset.n_features() as f64;
    if let Some(k) = a.k_target.iter().find(|k| **k >= n) {
        return Err(Failure::Usage(format!("--k-target {k} must be below N = {n}")));
    }
    let settings = a.solver.settings();
    let options = ProtocolOptions {
        workers: a.workers.workers,
        calibration: CalibrationOptions {
            settings,
            ..CalibrationOptions::default()
        },
        literal: a.literal,
    };
    let rows = calibrate_and_select(&table.dataset, fam, &a.k_target, &a.beta_grid, &options)?;

    let mut comments = header("calibrate");
    comments.push(data_line(&a.data, &table));
    comments.push(format!(
        "prior = {}, beta_grid = {:?}, calibration_tol = {:?}",
        fam.name(),
        a.beta_grid,
        options.calibration.tol
    ));
    comments.push(settings_line(&settings));
    comments.push(format!("workers = {}", a.workers.workers));
    for r in &rows {
        if let Some(why) = &r.failure {
            eprintln!("warning: K = {} not reached: {why}", r.k_target);
            comments.push(format!("K = {} not reached: {why}", r.k_target));
        }
    }

    // Table layout: one column per K.
    let cell = |v: f64| format!("{v:>10.4}");
    let mut lines = vec![format!(
        "{:<8}{}",
        "K",
        rows.iter().map(|r| format!("{:>10}", r.k_target)).collect::<String>()
    )];
    lines.push(format!("{:<8}{}", "beta", rows.iter().map(|r| format!("{:>10}", r.beta)).collect::<String>()));
    lines.push(format!("{:<8}{}", "rho", rows.iter().map(|r| format!("{:>10.3e}", r.rho)).collect::<String>()));
    lines.push(format!("{:<8}{}", "Approx.", rows.iter().map(|r| cell(r.eps_loo_approx)).collect::<String>()));
    if a.literal {
        lines.push(format!(
            "{:<8}{}",
            "Literal",
            rows.iter().map(|r| cell(r.eps_loo_literal.unwrap_or(f64::NAN))).collect::<String>()
        ));
    }
    lines.push(format!("{:<8}{}", "RSS", rows.iter().map(|r| cell(r.eps)).collect::<String>()));
    for l in &lines {
        println!("{l}");
    }

    let mut w = create(&a.out)?;
    for c in &comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "k_target,beta,rho,achieved_k,eps_loo_approx,eps_loo_refit,eps")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.k_target,
            r.beta,
            r.rho,
            r.achieved_k,
            r.eps_loo_approx,
            r.eps_loo_literal.map_or(String::new(), |v| v.to_string()),
            r.eps
        )?;
    }
    w.flush()?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn validate(a: ValidateArgs) -> Outcome {
    let config = ValidateConfig {
        n: a.n,
        alpha: a.alpha,
        rho0: a.rho0,
        sigma_w0_sq: a.sigma_w0_sq,
        sigma_n0_sq: a.sigma_n0_sq,
        seed: a.seed,
        beta: a.beta,
    };
    let checks = run_suite(&config)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("{failed} checks failed")))
    }
}
