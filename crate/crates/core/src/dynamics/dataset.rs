use std::fmt::Write as _;
use std::path::Path;

use crate::error::{check_dim, Error, Result};

/// Pairs `(x, φ_τ(x))` plus the number of true-dynamics propagations spent
/// producing them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    dim: usize,
    tau: f64,
    system: String,
    xs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    pub propagation_count: u64,
}

impl TrajectoryDataset {
    pub fn new(dim: usize, tau: f64, system: &str) -> Self {
        TrajectoryDataset {
            dim,
            tau,
            system: system.split_whitespace().collect::<Vec<_>>().join("_"),
            xs: Vec::new(),
            ys: Vec::new(),
            propagation_count: 0,
        }
    }

    pub fn push(&mut self, x: Vec<f64>, y: Vec<f64>) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        self.xs.push(x);
        self.ys.push(y);
        Ok(())
    }

    /// Appends the pairs of `other` and adds its propagation count.
    pub fn extend(&mut self, other: TrajectoryDataset) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        self.xs.extend(other.xs);
        self.ys.extend(other.ys);
        self.propagation_count += other.propagation_count;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[Vec<f64>] {
        &self.ys
    }

    /// Text form: one header line, then one pair per line as `2M` numbers
    /// (`x_1 .. x_M y_1 .. y_M`).
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# gpmorse-dataset dim={} tau={:?} system={} propagations={}\n",
            self.dim, self.tau, self.system, self.propagation_count
        );
        for (x, y) in self.xs.iter().zip(&self.ys) {
            let mut first = true;
            for v in x.iter().chain(y) {
                if !first {
                    s.push(' ');
                }
                first = false;
                write!(s, "{v:.17e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty dataset file"))?;
        let fields = header
            .strip_prefix("# gpmorse-dataset")
            .ok_or_else(|| Error::parse(origin, 1, "missing '# gpmorse-dataset' header"))?;
        let (mut dim, mut tau, mut system, mut props) = (None, None, None, None);
        for kv in fields.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, 1, format!("malformed header field '{kv}'")))?;
            let bad = |what: &str| Error::parse(origin, 1, format!("bad {what} '{v}'"));
            match k {
                "dim" => dim = Some(v.parse::<usize>().map_err(|_| bad("dim"))?),
                "tau" => tau = Some(v.parse::<f64>().map_err(|_| bad("tau"))?),
                "system" => system = Some(v.to_string()),
                "propagations" => props = Some(v.parse::<u64>().map_err(|_| bad("propagations"))?),
                _ => return Err(Error::parse(origin, 1, format!("unknown header field '{k}'"))),
            }
        }
        let dim = dim.filter(|&d| d > 0).ok_or_else(|| Error::parse(origin, 1, "header lacks dim"))?;
        let mut data = TrajectoryDataset::new(
            dim,
            tau.ok_or_else(|| Error::parse(origin, 1, "header lacks tau"))?,
            &system.unwrap_or_else(|| "unknown".into()),
        );
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(origin, lineno, format!("not a finite number: '{t}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != 2 * dim {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected {} numbers, found {}", 2 * dim, values.len()),
                ));
            }
            data.xs.push(values[..dim].to_vec());
            data.ys.push(values[dim..].to_vec());
        }
        data.propagation_count = props.unwrap_or(data.len() as u64);
        Ok(data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrajectoryDataset::from_text(&text, path)
    }
}
