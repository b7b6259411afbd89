use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One line of the refinement history. Round 0 is the initial model.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub delta: f64,
    pub samples: usize,
    /// Cumulative true-dynamics propagations of the method.
    pub propagations: u64,
    /// Mean predictive standard deviation over cell centers.
    pub sigma_bar: Option<f64>,
    pub roa_ratio: Option<f64>,
    pub fp_fraction: Option<f64>,
    pub morse_nodes: usize,
    pub attractors: usize,
    /// Cells in the goal's region of attraction.
    pub roa_cells: Option<usize>,
}

/// Final scores plus the per-round history. Ratios are absent when no
/// goal or ground truth was available.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub system: String,
    pub mode: String,
    pub history: Vec<RoundRecord>,
}

const COLUMNS: &str = "round delta samples propagations sigma_bar roa_ratio fp_fraction morse_nodes attractors roa_cells";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl EvaluationReport {
    fn last(&self) -> &RoundRecord {
        self.history.last().expect("report has at least the initial round")
    }

    pub fn roa_ratio(&self) -> Option<f64> {
        self.last().roa_ratio
    }

    pub fn fp_fraction(&self) -> Option<f64> {
        self.last().fp_fraction
    }

    pub fn propagation_count(&self) -> u64 {
        self.last().propagations
    }

    pub fn morse_nodes(&self) -> usize {
        self.last().morse_nodes
    }

    pub fn rounds(&self) -> usize {
        self.history.len() - 1
    }

    /// `key = value` summary followed by the history table.
    pub fn to_text(&self) -> String {
        let l = self.last();
        let mut s = String::from("# gpmorse-report\n");
        for (k, v) in [
            ("config_hash", self.config_hash.clone()),
            ("system", self.system.clone()),
            ("mode", self.mode.clone()),
            ("rounds", self.rounds().to_string()),
            ("delta", l.delta.to_string()),
            ("roa_ratio", opt(l.roa_ratio)),
            ("fp_fraction", opt(l.fp_fraction)),
            ("propagation_count", l.propagations.to_string()),
            ("morse_nodes", l.morse_nodes.to_string()),
            ("attractors", l.attractors.to_string()),
        ] {
            writeln!(s, "{k} = {v}").unwrap();
        }
        writeln!(s, "# {COLUMNS}").unwrap();
        for r in &self.history {
            writeln!(
                s,
                "{} {} {} {} {} {} {} {} {} {}",
                r.round,
                r.delta,
                r.samples,
                r.propagations,
                opt(r.sigma_bar),
                opt(r.roa_ratio),
                opt(r.fp_fraction),
                r.morse_nodes,
                r.attractors,
                opt(r.roa_cells)
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        if lines.next().map(|l| l.1) != Some("# gpmorse-report") {
            return Err(err(1, "missing '# gpmorse-report' header".into()));
        }
        let mut report = EvaluationReport {
            config_hash: String::new(),
            system: String::new(),
            mode: String::new(),
            history: Vec::new(),
        };
        for (ln, l) in lines {
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = l.split_once(" = ") {
                match k {
                    "config_hash" => report.config_hash = v.to_string(),
                    "system" => report.system = v.to_string(),
                    "mode" => report.mode = v.to_string(),
                    _ => {}
                }
                continue;
            }
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 10 {
                return Err(err(ln, format!("history row needs 10 fields, found {}", f.len())));
            }
            fn num<T: std::str::FromStr>(t: &str) -> Option<T> {
                t.parse().ok()
            }
            fn maybe<T: std::str::FromStr>(t: &str) -> Option<Option<T>> {
                if t == "-" {
                    Some(None)
                } else {
                    t.parse().ok().map(Some)
                }
            }
            let row = (|| {
                Some(RoundRecord {
                    round: num(f[0])?,
                    delta: num(f[1])?,
                    samples: num(f[2])?,
                    propagations: num(f[3])?,
                    sigma_bar: maybe(f[4])?,
                    roa_ratio: maybe(f[5])?,
                    fp_fraction: maybe(f[6])?,
                    morse_nodes: num(f[7])?,
                    attractors: num(f[8])?,
                    roa_cells: maybe(f[9])?,
                })
            })()
            .ok_or_else(|| err(ln, format!("bad history row '{l}'")))?;
            report.history.push(row);
        }
        if report.history.is_empty() {
            return Err(err(0, "report has no history rows".into()));
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EvaluationReport::from_text(&text, path)
    }
}
