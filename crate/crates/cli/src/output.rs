//! CSV and report formats. Both start with comment lines carrying the
//! config digest.
//!
//! CSV layout:
//!
//! ```text
//! # asyncdiff simulate
//! # digest: <sha-256 hex>
//! run,iter,msd_lin,msd_db[,msd_db_theory]
//! ...
//!
//! iter,msd_db_mean,msd_db_std[,msd_db_theory]
//! ...
//! ```

use asyncdiff_core::diffusion::{AggregateRow, Trajectory};
use asyncdiff_core::linalg::db;
use asyncdiff_core::theory::{Exactness, MsdForm, Solver, TheoryReport};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RUN_HEADER: &str = "run,iter,msd_lin,msd_db";
pub const AGGREGATE_HEADER: &str = "iter,msd_db_mean,msd_db_std";
pub const THEORY_COLUMN: &str = "msd_db_theory";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub run: usize,
    pub iter: usize,
    pub msd_lin: f64,
    pub msd_db: f64,
}

/// Contents of a simulation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTable {
    pub digest: String,
    pub rows: Vec<RunRow>,
    pub aggregate: Vec<AggregateRow>,
    pub theory_db: Option<f64>,
}

impl SimTable {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            digest: t.digest.clone(),
            rows: t
                .combine_records()
                .map(|r| RunRow {
                    run: r.run,
                    iter: r.iteration,
                    msd_lin: r.msd,
                    msd_db: db(r.msd),
                })
                .collect(),
            aggregate: t.aggregate(),
            theory_db: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(if self.theory_db.is_some() { "# asyncdiff compare\n" } else { "# asyncdiff simulate\n" });
        out.push_str(&format!("# digest: {}\n", self.digest));
        let extra = |out: &mut String| {
            if let Some(t) = self.theory_db {
                out.push_str(&format!(",{t}"));
            }
            out.push('\n');
        };
        let header = |out: &mut String, h: &str| {
            out.push_str(h);
            if self.theory_db.is_some() {
                out.push(',');
                out.push_str(THEORY_COLUMN);
            }
            out.push('\n');
        };
        header(&mut out, RUN_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{:e},{}", r.run, r.iter, r.msd_lin, r.msd_db));
            extra(&mut out);
        }
        out.push('\n');
        header(&mut out, AGGREGATE_HEADER);
        for a in &self.aggregate {
            out.push_str(&format!("{},{},{}", a.iteration, a.msd_db_mean, a.msd_db_std));
            extra(&mut out);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |detail: String| CliError::Parse { what: "csv", detail };
        let mut digest = None;
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, l)) = lines.peek() {
            let Some(c) = l.strip_prefix('#') else { break };
            if let Some(d) = c.trim().strip_prefix("digest:") {
                digest = Some(d.trim().to_string());
            }
            lines.next();
        }
        let digest = digest.ok_or_else(|| bad("missing digest line".into()))?;

        let (_, header) = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let with_theory = match header {
            h if h == RUN_HEADER => false,
            h if h.strip_prefix(RUN_HEADER) == Some(&format!(",{THEORY_COLUMN}")) => true,
            h => return Err(bad(format!("unexpected header {h:?}"))),
        };
        let width = if with_theory { 5 } else { 4 };
        let mut theory_db = None;
        let mut fields = |n: usize, l: &str, want: usize| -> Result<Vec<String>, CliError> {
            let f: Vec<String> = l.split(',').map(str::to_string).collect();
            if f.len() != want {
                return Err(bad(format!("line {}: expected {want} fields", n + 1)));
            }
            if with_theory {
                let t = num(&f[want - 1], n)?;
                if theory_db.is_some_and(|x: f64| x.to_bits() != t.to_bits()) {
                    return Err(bad(format!("line {}: theory column is not constant", n + 1)));
                }
                theory_db = Some(t);
            }
            Ok(f)
        };

        let mut rows = Vec::new();
        for (n, l) in lines.by_ref() {
            if l.is_empty() {
                break;
            }
            let f = fields(n, l, width)?;
            rows.push(RunRow {
                run: int(&f[0], n)?,
                iter: int(&f[1], n)?,
                msd_lin: num(&f[2], n)?,
                msd_db: num(&f[3], n)?,
            });
        }
        match lines.next() {
            Some((_, h)) if h.split(',').take(3).collect::<Vec<_>>().join(",") == AGGREGATE_HEADER => {}
            _ => return Err(bad("missing aggregate section".into())),
        }
        let mut aggregate = Vec::new();
        for (n, l) in lines {
            let f = fields(n, l, width - 1)?;
            aggregate.push(AggregateRow {
                iteration: int(&f[0], n)?,
                msd_db_mean: num(&f[1], n)?,
                msd_db_std: num(&f[2], n)?,
            });
        }
        Ok(Self {
            digest,
            rows,
            aggregate,
            theory_db: if with_theory { theory_db } else { None },
        })
    }
}

fn num(s: &str, line: usize) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Parse {
        what: "csv",
        detail: format!("line {}: bad number {s:?}", line + 1),
    })
}

fn int(s: &str, line: usize) -> Result<usize, CliError> {
    s.parse().map_err(|_| CliError::Parse {
        what: "csv",
        detail: format!("line {}: bad integer {s:?}", line + 1),
    })
}

/// Serialized [`TheoryReport`], written as TOML key/value pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub digest: String,
    pub msd_lin: f64,
    pub msd_db: f64,
    pub msd_form: String,
    pub msd_alternate_lin: f64,
    pub msd_alternate_db: f64,
    pub gamma: f64,
    pub mu_max: f64,
    pub step_size: f64,
    pub admissible: bool,
    pub rho: f64,
    pub alpha0: f64,
    pub agents: usize,
    pub dim: usize,
    pub mode: String,
    pub solver: String,
    pub exact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_max_std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_reason: Option<String>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub sigma_s2: f64,
    pub beta_s2: f64,
}

impl ReportFile {
    pub fn new(digest: &str, out: &crate::experiment::TheoryOutcome, step_size: f64) -> Self {
        let r: &TheoryReport = &out.report;
        let (mc_draws, mc_max_std_error, mc_reason) = match &r.exactness {
            Exactness::Exact => (None, None, None),
            Exactness::MonteCarlo {
                draws,
                max_std_error,
                reason,
            } => (Some(*draws), Some(*max_std_error), Some(reason.to_string())),
        };
        let alternate = match r.form {
            MsdForm::Forward => MsdForm::Printed,
            MsdForm::Printed => MsdForm::Forward,
        };
        Self {
            digest: digest.to_string(),
            msd_lin: r.msd_lin,
            msd_db: r.msd_db,
            msd_form: r.form.name().to_string(),
            msd_alternate_lin: r.msd_alternate_lin,
            msd_alternate_db: db(out.msd.value(alternate)),
            gamma: r.gamma,
            mu_max: r.mu_max,
            step_size,
            admissible: r.admissible,
            rho: r.rho,
            alpha0: r.alpha0,
            agents: r.agents,
            dim: r.dim,
            mode: r.mode.clone(),
            solver: match out.msd.solver {
                Solver::Dense => "dense",
                Solver::Krylov => "krylov",
            }
            .to_string(),
            exact: r.exactness.is_exact(),
            mc_draws,
            mc_max_std_error,
            mc_reason,
            lambda_min: out.constants.lambda_min,
            lambda_max: out.constants.lambda_max,
            sigma_s2: out.noise.sigma_s2,
            beta_s2: out.noise.beta_s2,
        }
    }

    pub fn to_text(&self) -> String {
        format!("# asyncdiff theory report\n{}", toml::to_string(self).expect("report serializes"))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            what: "report",
            detail: e.to_string(),
        })
    }
}

/// Refuses to combine outputs from different configurations.
pub fn check_digests(left: &str, right: &str) -> Result<(), CliError> {
    if left == right {
        Ok(())
    } else {
        Err(CliError::DigestMismatch {
            left: left.to_string(),
            right: right.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(theory: Option<f64>) -> SimTable {
        SimTable {
            digest: "ab".repeat(32),
            rows: vec![
                RunRow {
                    run: 0,
                    iter: 1,
                    msd_lin: 0.5,
                    msd_db: db(0.5),
                },
                RunRow {
                    run: 1,
                    iter: 1,
                    msd_lin: 0.0,
                    msd_db: f64::NEG_INFINITY,
                },
            ],
            aggregate: vec![AggregateRow {
                iteration: 1,
                msd_db_mean: -3.0,
                msd_db_std: 0.25,
            }],
            theory_db: theory,
        }
    }

    #[test]
    fn layout() {
        let text = table(None).to_csv();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], format!("# digest: {}", "ab".repeat(32)));
        assert_eq!(lines[2], RUN_HEADER);
        assert_eq!(lines[4], "1,1,0e0,-inf");
        assert_eq!(lines[5], "");
        assert_eq!(lines[6], AGGREGATE_HEADER);
        assert_eq!(lines[7], "1,-3,0.25");
    }

    #[test]
    fn theory_column() {
        let text = table(Some(-41.5)).to_csv();
        assert!(text.contains("run,iter,msd_lin,msd_db,msd_db_theory\n"));
        assert!(text.contains("iter,msd_db_mean,msd_db_std,msd_db_theory\n1,-3,0.25,-41.5\n"));
        assert_eq!(SimTable::parse(&text).unwrap(), table(Some(-41.5)));
    }

    #[test]
    fn rejects_missing_digest() {
        let text = table(None).to_csv().replace("# digest", "# nothing");
        assert!(SimTable::parse(&text).is_err());
    }

    #[test]
    fn digest_check() {
        assert!(check_digests("a", "a").is_ok());
        assert!(matches!(check_digests("a", "b"), Err(CliError::DigestMismatch { .. })));
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec((0usize..5, 1usize..1000, 0.0f64..1e3), 0..20)) {
            let t = SimTable {
                digest: "0".repeat(64),
                rows: vals.iter().map(|&(run, iter, x)| RunRow { run, iter, msd_lin: x, msd_db: db(x) }).collect(),
                aggregate: vals.iter().map(|&(_, iter, x)| AggregateRow { iteration: iter, msd_db_mean: -x, msd_db_std: x }).collect(),
                theory_db: None,
            };
            prop_assert_eq!(SimTable::parse(&t.to_csv()).unwrap(), t);
        }
    }
}
