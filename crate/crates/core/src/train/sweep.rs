use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{evaluate, EvalOptions};
use super::trainer::train;
use crate::code::{search_codes, ExposureCode, SearchParams};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};

/// Duty ratio written as `ones/length`, e.g. `5/8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Duty {
    pub ones: usize,
    pub length: usize,
}

impl std::str::FromStr for Duty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("duty ratio must look like 5/8, got {s:?}"));
        let (a, b) = s.split_once('/').ok_or_else(bad)?;
        let ones = a.trim().parse().map_err(|_| bad())?;
        let length = b.trim().parse().map_err(|_| bad())?;
        if ones == 0 || ones > length {
            return Err(bad());
        }
        Ok(Self { ones, length })
    }
}

impl std::fmt::Display for Duty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.ones, self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lengths: Vec<usize>,
    pub duty_ratios: Vec<String>,
    /// Base run; `code`, `window` and `use_coded_exposure` are set per cell.
    pub train: TrainConfig,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.train.data.train_manifest, &mut cfg.train.data.val_manifest]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for d in &cfg.duty_ratios {
            d.parse::<Duty>()?;
        }
        Ok(cfg)
    }
}

/// Ones used for a length cell: the 5/8 duty of the default code, rounded.
pub fn length_cell_ones(length: usize) -> usize {
    if length == 0 {
        return 0;
    }
    ((length as f64 * 5.0 / 8.0).round() as usize).clamp(1, length)
}

/// Best asymmetric code with the given weight; the all-ones code when every
/// bit is open.
pub fn cell_code(length: usize, ones: usize) -> Result<ExposureCode> {
    if ones == length {
        return ExposureCode::all_ones(length);
    }
    let top = search_codes(&SearchParams::new(length, ones, 1, true))?;
    Ok(top[0].code.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Length,
    Duty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub kind: CellKind,
    pub label: String,
    pub length: usize,
    pub ones: usize,
    pub code: Option<String>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, kind: CellKind, label: &str) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.kind == kind && c.label == label)
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>, p: usize| v.map_or("n/a".to_string(), |x| format!("{x:.p$}"));
        let mut out = String::from("kind\tcell\tcode\tpsnr_db\tssim\tlpips\tnote\n");
        for c in &self.cells {
            let kind = match c.kind {
                CellKind::Length => "length",
                CellKind::Duty => "duty",
            };
            let _ = writeln!(
                out,
                "{kind}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.label,
                c.code.as_deref().unwrap_or("-"),
                fmt(c.psnr, 4),
                fmt(c.ssim, 5),
                fmt(c.lpips, 4),
                c.error.as_deref().unwrap_or("ok"),
            );
        }
        out
    }
}

fn run_cell(
    base: &TrainConfig,
    code: &ExposureCode,
    train_set: &DatasetManifest,
    eval_set: &DatasetManifest,
    out_dir: Option<&Path>,
) -> Result<(f64, f64)> {
    let mut cfg = base.clone();
    cfg.window = code.len();
    cfg.code = code.id_string();
    cfg.use_coded_exposure = true;
    cfg.validate()?;
    let outcome = train(cfg.clone(), train_set.clone(), Some(eval_set.clone()), out_dir)?;
    let net = outcome.checkpoint.build_network()?;
    let report = evaluate(
        &net,
        eval_set,
        cfg.window,
        &EvalOptions {
            noise_sigma: cfg.eval_noise_sigma,
            seed: cfg.seed,
            normalization: cfg.normalization,
            crop: None,
        },
    )?;
    Ok((report.psnr, report.ssim))
}

/// Trains and evaluates one model per length cell and per duty cell.
/// Cells that cannot be built or trained are reported with their error.
pub fn sweep(
    lengths: &[usize],
    duties: &[Duty],
    base: &TrainConfig,
    train_set: &DatasetManifest,
    eval_set: Option<&DatasetManifest>,
    out_dir: Option<&Path>,
) -> SweepTable {
    let eval_set = eval_set.unwrap_or(train_set);
    let mut specs: Vec<(CellKind, String, usize, usize)> = lengths
        .iter()
        .map(|&l| (CellKind::Length, l.to_string(), l, length_cell_ones(l)))
        .collect();
    specs.extend(duties.iter().map(|d| (CellKind::Duty, d.to_string(), d.length, d.ones)));

    let mut cells = Vec::with_capacity(specs.len());
    for (kind, label, length, ones) in specs {
        let mut cell = SweepCell {
            kind,
            label: label.clone(),
            length,
            ones,
            code: None,
            psnr: None,
            ssim: None,
            lpips: None,
            error: None,
        };
        match cell_code(length, ones) {
            Err(e) => cell.error = Some(format!("infeasible: {e}")),
            Ok(code) => {
                cell.code = Some(code.id_string());
                let dir = out_dir.map(|d| {
                    let k = if kind == CellKind::Length { "length" } else { "duty" };
                    d.join(format!("{k}_{}", label.replace('/', "of")))
                });
                log::info!("sweep cell {label}: code {code}");
                match run_cell(base, &code, train_set, eval_set, dir.as_deref()) {
                    Ok((p, s)) => {
                        cell.psnr = Some(p);
                        cell.ssim = Some(s);
                    }
                    Err(e) => cell.error = Some(e.to_string()),
                }
            }
        }
        cells.push(cell);
    }
    SweepTable { cells }
}
