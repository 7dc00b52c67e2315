use std::path::PathBuf;

use coprompt::corrector::CorrectionReport;
use coprompt::trainer::{DevMetric, DivergenceTrace};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{default_out_dir, map, prepare_out_dir, write_text};
use crate::args::PlotArgs;
use crate::config::{resolve, FileSettings, Flags};
use crate::manifest::Recorder;
use crate::svg::{bar_chart, line_chart, Series};
use crate::{CliError, CliResult};

pub const DIVERGENCE_SVG: &str = "divergence.svg";
pub const DIVERGENCE_CSV: &str = "divergence.csv";
pub const HISTOGRAM_SVG: &str = "delta_histogram.svg";
pub const HISTOGRAM_CSV: &str = "delta_histogram.csv";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotSettings {
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl PlotSettings {
    pub fn validate(&self) -> CliResult<()> {
        if self.trace.is_none() && self.report.is_none() {
            return Err(CliError::usage(
                "missing required setting: give --trace, --report or both",
            ));
        }
        Ok(())
    }
}

pub fn run(args: PlotArgs, argv: &[String]) -> CliResult<()> {
    let file = FileSettings::load(args.common.config.as_deref(), "plot")?;
    let mut flags = Flags::default();
    flags.set("trace", args.trace);
    flags.set("report", args.report);
    flags.set("out_dir", args.common.out_dir);
    let defaults = map([
        ("trace", Value::Null),
        ("report", Value::Null),
        ("out_dir", default_out_dir("plot")),
    ]);
    let settings: PlotSettings = resolve("plot", defaults, &[], &file, &flags)?;
    settings.validate()?;
    execute(&settings, argv)
}

/// `epoch,gamma,divergence_rate,dev_macro_f1` rows; baseline traces leave
/// the rate empty.
pub fn divergence_csv(trace: &DivergenceTrace) -> String {
    let mut out = String::from("epoch,gamma,divergence_rate,dev_macro_f1\n");
    for r in &trace.records {
        let rate = r.divergence_rate.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{rate},{}\n", r.epoch, r.gamma, r.dev_macro_f1));
    }
    out
}

fn divergence_svg(trace: &DivergenceTrace) -> String {
    let rate: Vec<(f64, f64)> = trace
        .records
        .iter()
        .filter_map(|r| r.divergence_rate.map(|d| (r.epoch as f64, d)))
        .collect();
    let mut series = Vec::new();
    if !rate.is_empty() {
        series.push(Series {
            name: "divergence rate".into(),
            points: rate,
        });
    }
    series.push(Series {
        name: "dev macro-F1".into(),
        points: trace
            .records
            .iter()
            .map(|r| (r.epoch as f64, r.dev_macro_f1))
            .collect(),
    });
    line_chart("Divergent co-predictions per epoch", "epoch", "rate", &series)
}

pub fn execute(s: &PlotSettings, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::start("plot", argv, None, s);
    prepare_out_dir(&s.out_dir)?;
    let out = |name: &str| s.out_dir.join(name);
    if let Some(path) = &s.trace {
        rec.input("trace", path)?;
        let trace = DivergenceTrace::load_csv(path, DevMetric::MacroF1).map_err(CliError::runtime)?;
        if trace.records.is_empty() {
            return Err(CliError::runtime(format!(
                "{}: trace has no epochs",
                path.display()
            )));
        }
        write_text(&out(DIVERGENCE_CSV), &divergence_csv(&trace))?;
        rec.output("divergence_csv", &out(DIVERGENCE_CSV))?;
        write_text(&out(DIVERGENCE_SVG), &divergence_svg(&trace))?;
        rec.output("divergence_svg", &out(DIVERGENCE_SVG))?;
    }
    if let Some(path) = &s.report {
        rec.input("report", path)?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let report: CorrectionReport =
            serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let mut csv = Vec::new();
        report.write_histogram_csv(&mut csv).map_err(CliError::runtime)?;
        write_text(&out(HISTOGRAM_CSV), &String::from_utf8_lossy(&csv))?;
        rec.output("histogram_csv", &out(HISTOGRAM_CSV))?;
        let bars: Vec<(String, f64)> = report
            .histogram_rows()
            .into_iter()
            .map(|(a, _, c)| (format!("{a:.1}"), c as f64))
            .collect();
        let svg = bar_chart(
            &format!(
                "Divergence scores of candidate labels (epsilon {})",
                report.config.epsilon
            ),
            "delta bin start",
            "labels",
            &bars,
        );
        write_text(&out(HISTOGRAM_SVG), &svg)?;
        rec.output("histogram_svg", &out(HISTOGRAM_SVG))?;
    }
    let manifest = rec.finish(&s.out_dir)?;
    println!("wrote plots to {} ({})", s.out_dir.display(), manifest.display());
    Ok(())
}
