//! The four subcommands, independent of argument parsing.

use std::path::{Path, PathBuf};

use asyncdiff_core::diffusion::Trajectory;

use crate::config::{ExperimentConfig, Overrides};
use crate::experiment::{self, Prepared, TheoryOutcome};
use crate::output::{check_digests, ReportFile, SimTable};
use crate::presets::preset;
use crate::svg::{self, Figure};
use crate::{dataset, CliError};

/// Where the configuration comes from.
#[derive(Debug, Clone)]
pub enum Source {
    File(PathBuf),
    Preset(String),
}

impl Source {
    pub fn load(&self, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match self {
            Source::File(p) => ExperimentConfig::load(p)?,
            Source::Preset(name) => preset(name)?,
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    fn title(&self) -> String {
        match self {
            Source::File(p) => p.file_stem().map_or_else(|| "experiment".into(), |s| s.to_string_lossy().into_owned()),
            Source::Preset(n) => n.clone(),
        }
    }
}

/// A finished output: destination (`None` for stdout) and contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: Option<PathBuf>,
    pub contents: String,
}

impl Artifact {
    pub fn write(&self) -> Result<(), CliError> {
        match &self.path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                }
                std::fs::write(p, &self.contents).map_err(|e| CliError::io(p, e))
            }
            None => {
                use std::io::Write;
                std::io::stdout()
                    .write_all(self.contents.as_bytes())
                    .map_err(|e| CliError::io(Path::new("<stdout>"), e))
            }
        }
    }
}

fn prepare(cfg: ExperimentConfig, dump: Option<&Path>) -> Result<Prepared, CliError> {
    let p = experiment::prepare(cfg)?;
    if let Some(path) = dump {
        dataset::dump(&p.problem, path)?;
    }
    Ok(p)
}

pub fn simulate(src: &Source, o: &Overrides, out: Option<PathBuf>, dump: Option<&Path>) -> Result<Vec<Artifact>, CliError> {
    let cfg = src.load(o)?;
    let path = out.or_else(|| cfg.output.csv.clone());
    let p = prepare(cfg, dump)?;
    let traj = experiment::simulate(&p)?;
    Ok(vec![Artifact {
        path,
        contents: SimTable::from_trajectory(&traj).to_csv(),
    }])
}

pub fn theory(src: &Source, o: &Overrides, out: Option<PathBuf>, dump: Option<&Path>) -> Result<Vec<Artifact>, CliError> {
    let cfg = src.load(o)?;
    let path = out.or_else(|| cfg.output.report.clone());
    let p = prepare(cfg, dump)?;
    let outcome = experiment::theory(&p)?;
    Ok(vec![Artifact {
        path,
        contents: report_text(&p, &outcome),
    }])
}

fn report_text(p: &Prepared, outcome: &TheoryOutcome) -> String {
    ReportFile::new(&p.digest, outcome, p.schedule.step_size).to_text()
}

/// Existing outputs to merge instead of recomputing.
#[derive(Debug, Clone, Default)]
pub struct CompareInputs {
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Merged CSV, report and SVG. `out` names the CSV; the report and figure
/// sit next to it with `.report.toml` and `.svg` extensions.
pub fn compare(
    src: &Source,
    o: &Overrides,
    out: Option<PathBuf>,
    inputs: &CompareInputs,
    dump: Option<&Path>,
) -> Result<Vec<Artifact>, CliError> {
    let cfg = src.load(o)?;
    let csv_path = out
        .or_else(|| cfg.output.csv.clone())
        .ok_or_else(|| CliError::Config("compare needs --out or output.csv".into()))?;
    let svg_path = cfg.output.svg.clone().unwrap_or_else(|| csv_path.with_extension("svg"));
    let report_path = cfg
        .output
        .report
        .clone()
        .unwrap_or_else(|| csv_path.with_extension("report.toml"));
    let digest = cfg.digest();

    let mut table = match &inputs.csv {
        Some(path) => SimTable::parse(&read(path)?)?,
        None => SimTable { digest: String::new(), rows: vec![], aggregate: vec![], theory_db: None },
    };
    let mut report = match &inputs.report {
        Some(path) => Some(ReportFile::parse(&read(path)?)?),
        None => None,
    };
    if inputs.csv.is_some() {
        check_digests(&digest, &table.digest)?;
    }
    if let Some(r) = &report {
        check_digests(&digest, &r.digest)?;
    }
    if inputs.csv.is_none() || report.is_none() {
        let p = prepare(cfg, dump)?;
        if inputs.csv.is_none() {
            let traj: Trajectory = experiment::simulate(&p)?;
            table = SimTable::from_trajectory(&traj);
        }
        if report.is_none() {
            let outcome = experiment::theory(&p)?;
            report = Some(ReportFile::new(&p.digest, &outcome, p.schedule.step_size));
        }
    }
    let report = report.expect("report computed or loaded");
    check_digests(&table.digest, &report.digest)?;
    table.theory_db = Some(report.msd_db);

    let fig = Figure {
        title: format!("{}: {} mode, T-step ATC diffusion", src.title(), report.mode),
        digest: digest.clone(),
        curve: table.aggregate.iter().map(|a| (a.iteration as f64, a.msd_db_mean)).collect(),
        theory_db: Some(report.msd_db),
    };
    Ok(vec![
        Artifact {
            path: Some(csv_path),
            contents: table.to_csv(),
        },
        Artifact {
            path: Some(report_path),
            contents: report.to_text(),
        },
        Artifact {
            path: Some(svg_path),
            contents: svg::render(&fig),
        },
    ])
}

pub fn preset_config(name: &str, o: &Overrides, out: Option<PathBuf>) -> Result<Vec<Artifact>, CliError> {
    let cfg = Source::Preset(name.to_string()).load(o)?;
    Ok(vec![Artifact {
        path: out,
        contents: format!("# asyncdiff preset {name}\n# digest: {}\n{}", cfg.digest(), cfg.to_toml()),
    }])
}
