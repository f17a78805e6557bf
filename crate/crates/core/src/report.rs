//! Plot-ready tables over simulations and exported sessions.
//!
//! Every report is a pure function of its input records. Reports are written
//! as CSV with a JSON sidecar holding the metadata needed to reproduce them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::FairnessNotion;
use crate::simulation::Simulation;
use crate::study::{DemographicAttribute, Scenario, SessionRecord, Stakes, SurveyChoice, SurveyResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    ConvergenceCurves,
    ClassificationHistogram,
    SummaryTable,
    DemographicBreakdown,
    SurveyTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ReportKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub metadata: serde_json::Value,
}

impl Report {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, mut out: W) -> Result<()> {
        let sidecar = serde_json::json!({
            "kind": self.kind,
            "columns": self.columns,
            "metadata": self.metadata,
        });
        serde_json::to_writer_pretty(&mut out, &sidecar)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Writes `path` as CSV and the same path with a `.json` extension as
    /// the sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        self.write_sidecar(std::fs::File::create(path.with_extension("json"))?)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Invariant(e.to_string()))
    }
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn fmt_pct(v: f64) -> String {
    format!("{v:.1}")
}

/// Per-step mean and median of the tracked posterior.
pub fn convergence_report(sim: &Simulation) -> Report {
    let rows = sim
        .step_stats()
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.median),
                format!("{:.4}", s.above_threshold),
            ]
        })
        .collect();
    let tests_to_threshold: Vec<Option<usize>> = sim.runs.iter().map(|r| r.tests_to_threshold).collect();
    Report {
        kind: ReportKind::ConvergenceCurves,
        columns: ["step", "mean_posterior", "median_posterior", "fraction_above_threshold"]
            .map(String::from)
            .to_vec(),
        rows,
        metadata: serde_json::json!({
            "spec": sim.spec,
            "threshold": sim.threshold,
            "tracked": match sim.spec.responder.true_notion() {
                Some(n) => format!("posterior of {n}"),
                None => "largest posterior entry".to_string(),
            },
            "median_tests_to_threshold": sim.median_tests_to_threshold(),
            "fraction_reached_within_max": sim.fraction_reached_within(sim.spec.max_tests_per_run),
            "tests_to_threshold": tests_to_threshold,
        }),
    }
}

/// Likelihood bins for the histogram. Bins are right-closed `(lo, hi]`;
/// the first bin also takes everything at or below its lower edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges(pub Vec<f64>);

impl Default for BinEdges {
    fn default() -> Self {
        BinEdges(vec![0.25, 0.4, 0.6, 0.8, 1.0])
    }
}

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("bin edges must be strictly increasing with at least two entries".into()));
        }
        Ok(BinEdges(edges))
    }

    pub fn bins(&self) -> usize {
        self.0.len() - 1
    }

    pub fn bin_of(&self, p: f64) -> usize {
        (1..self.0.len())
            .find(|&i| p <= self.0[i])
            .map_or(self.bins() - 1, |i| i - 1)
    }

    pub fn label(&self, bin: usize) -> String {
        format!("{}-{}", self.0[bin], self.0[bin + 1])
    }
}

/// Union of the notions in `sets`, in order of first appearance.
fn union_notions<'a>(sets: impl IntoIterator<Item = &'a [FairnessNotion]>) -> Vec<FairnessNotion> {
    let mut out: Vec<FairnessNotion> = Vec::new();
    for set in sets {
        for n in set {
            if !out.contains(n) {
                out.push(*n);
            }
        }
    }
    out
}

/// Notions appearing in any record's hypothesis set, in hypothesis-set order.
fn notions_of(records: &[SessionRecord]) -> Vec<FairnessNotion> {
    union_notions(records.iter().map(|r| r.hypotheses.notions()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationHistogram {
    pub edges: BinEdges,
    pub notions: Vec<FairnessNotion>,
    /// `counts[notion][bin]`: records whose most probable notion is
    /// `notion` with final probability in `bin`.
    pub counts: Vec<Vec<usize>>,
}

pub fn classification_histogram(records: &[SessionRecord], edges: &BinEdges) -> ClassificationHistogram {
    let notions = notions_of(records);
    let mut counts = vec![vec![0; edges.bins()]; notions.len()];
    for r in records {
        let (notion, p) = r.map_notion();
        let row = notions.iter().position(|&n| n == notion).expect("notion listed");
        counts[row][edges.bin_of(p)] += 1;
    }
    ClassificationHistogram {
        edges: edges.clone(),
        notions,
        counts,
    }
}

impl ClassificationHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, notion: FairnessNotion, bin: usize) -> usize {
        self.notions
            .iter()
            .position(|&n| n == notion)
            .map_or(0, |i| self.counts[i][bin])
    }

    pub fn to_report(&self) -> Report {
        let mut columns = vec!["notion".to_string()];
        columns.extend((0..self.edges.bins()).map(|b| self.edges.label(b)));
        Report {
            kind: ReportKind::ClassificationHistogram,
            columns,
            rows: self
                .notions
                .iter()
                .zip(&self.counts)
                .map(|(n, c)| std::iter::once(n.to_string()).chain(c.iter().map(usize::to_string)).collect())
                .collect(),
            metadata: serde_json::json!({
                "bin_edges": self.edges.0,
                "bins": "right-closed (lo, hi]; the first bin includes values at or below its lower edge",
                "records": self.total(),
            }),
        }
    }
}

/// Converts simulated runs to records for the record-based reports.
pub fn simulation_records(sim: &Simulation) -> Vec<SessionRecord> {
    sim.runs
        .iter()
        .map(|r| SessionRecord::from_trace(format!("sim-{}", r.run), &r.trace, sim.threshold))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub total: usize,
    pub matched: Vec<usize>,
    pub none: usize,
}

impl SummaryRow {
    pub fn percentages(&self) -> (Vec<f64>, f64) {
        (
            self.matched.iter().map(|&c| pct(c, self.total)).collect(),
            pct(self.none, self.total),
        )
    }
}

/// Share of sessions matched to each notion above a threshold, one row per
/// scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub threshold: f64,
    pub notions: Vec<FairnessNotion>,
    pub rows: Vec<SummaryRow>,
}

fn scenario_label(s: Option<Scenario>) -> String {
    s.map_or_else(|| "all".to_string(), |s| s.id().to_string())
}

pub fn summary_table(records: &[SessionRecord], threshold: f64) -> SummaryTable {
    let notions = notions_of(records);
    let mut rows: BTreeMap<Option<Scenario>, SummaryRow> = BTreeMap::new();
    for r in records {
        let row = rows.entry(r.scenario).or_insert_with(|| SummaryRow {
            label: scenario_label(r.scenario),
            total: 0,
            matched: vec![0; notions.len()],
            none: 0,
        });
        row.total += 1;
        match r.matched_at(threshold) {
            Some(n) => row.matched[notions.iter().position(|&x| x == n).expect("notion listed")] += 1,
            None => row.none += 1,
        }
    }
    SummaryTable {
        threshold,
        notions,
        rows: rows.into_values().collect(),
    }
}

impl SummaryTable {
    /// Combines tables over disjoint record sets by adding counts.
    pub fn merge(&self, other: &SummaryTable) -> SummaryTable {
        let notions = union_notions([self.notions.as_slice(), other.notions.as_slice()]);
        let mut rows: BTreeMap<String, SummaryRow> = BTreeMap::new();
        for (table, row) in [self, other].iter().flat_map(|t| t.rows.iter().map(move |r| (*t, r))) {
            let merged = rows.entry(row.label.clone()).or_insert_with(|| SummaryRow {
                label: row.label.clone(),
                total: 0,
                matched: vec![0; notions.len()],
                none: 0,
            });
            merged.total += row.total;
            merged.none += row.none;
            for (n, c) in table.notions.iter().zip(&row.matched) {
                merged.matched[notions.iter().position(|x| x == n).expect("notion listed")] += c;
            }
        }
        // keep scenario order stable: scenarios by enum order, "all" last
        let mut rows: Vec<SummaryRow> = rows.into_values().collect();
        rows.sort_by_key(|r| r.label.parse::<Scenario>().map_or(usize::MAX, |s| s as usize));
        SummaryTable {
            threshold: self.threshold,
            notions,
            rows,
        }
    }

    pub fn to_report(&self) -> Report {
        let mut columns = vec!["scenario".to_string(), "n".to_string()];
        columns.extend(self.notions.iter().map(|n| n.to_string()));
        columns.push("none".to_string());
        Report {
            kind: ReportKind::SummaryTable,
            columns,
            rows: self
                .rows
                .iter()
                .map(|r| {
                    let (matched, none) = r.percentages();
                    let mut row = vec![r.label.clone(), r.total.to_string()];
                    row.extend(matched.into_iter().map(fmt_pct));
                    row.push(fmt_pct(none));
                    row
                })
                .collect(),
            metadata: serde_json::json!({
                "threshold": self.threshold,
                "values": "percent of sessions whose most probable notion exceeds the threshold",
                "counts": self.rows,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicBreakdown {
    pub attribute: DemographicAttribute,
    pub threshold: f64,
    pub notions: Vec<FairnessNotion>,
    /// Rows keyed by attribute value; records without the value are grouped
    /// under `unreported`.
    pub rows: Vec<SummaryRow>,
}

pub fn demographic_breakdown(
    records: &[SessionRecord],
    attribute: DemographicAttribute,
    threshold: f64,
) -> Result<DemographicBreakdown> {
    let value_of = |r: &SessionRecord| r.demographics.as_ref().and_then(|d| d.get(attribute)).map(str::to_string);
    if !records.iter().any(|r| value_of(r).is_some()) {
        return Err(Error::MissingData(format!(
            "no record carries demographic attribute {}; export with demographics included",
            attribute.name()
        )));
    }
    let notions = notions_of(records);
    let mut rows: BTreeMap<String, SummaryRow> = BTreeMap::new();
    for r in records {
        let label = value_of(r).unwrap_or_else(|| "unreported".to_string());
        let row = rows.entry(label.clone()).or_insert_with(|| SummaryRow {
            label,
            total: 0,
            matched: vec![0; notions.len()],
            none: 0,
        });
        row.total += 1;
        match r.matched_at(threshold) {
            Some(n) => row.matched[notions.iter().position(|&x| x == n).expect("notion listed")] += 1,
            None => row.none += 1,
        }
    }
    Ok(DemographicBreakdown {
        attribute,
        threshold,
        notions,
        rows: rows.into_values().collect(),
    })
}

impl DemographicBreakdown {
    pub fn percent(&self, label: &str, notion: FairnessNotion) -> Option<f64> {
        let i = self.notions.iter().position(|&n| n == notion)?;
        self.rows
            .iter()
            .find(|r| r.label == label)
            .map(|r| pct(r.matched[i], r.total))
    }

    pub fn to_report(&self) -> Report {
        let mut columns = vec![self.attribute.name().to_string(), "n".to_string()];
        columns.extend(self.notions.iter().map(|n| n.to_string()));
        columns.push("none".to_string());
        Report {
            kind: ReportKind::DemographicBreakdown,
            columns,
            rows: self
                .rows
                .iter()
                .map(|r| {
                    let (matched, none) = r.percentages();
                    let mut row = vec![r.label.clone(), r.total.to_string()];
                    row.extend(matched.into_iter().map(fmt_pct));
                    row.push(fmt_pct(none));
                    row
                })
                .collect(),
            metadata: serde_json::json!({
                "attribute": self.attribute,
                "threshold": self.threshold,
                "values": "percent of the subgroup whose most probable notion exceeds the threshold",
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyTallyRow {
    pub scenario: Scenario,
    pub stakes: Stakes,
    /// Counts for A1, A2, A3.
    pub counts: [usize; 3],
}

impl SurveyTallyRow {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Survey choices per scenario, in scenario order; scenarios without
/// responses are omitted.
pub fn survey_tally(responses: &[SurveyResponse]) -> Vec<SurveyTallyRow> {
    let mut rows: BTreeMap<Scenario, [usize; 3]> = BTreeMap::new();
    for r in responses {
        rows.entry(r.scenario).or_default()[r.chosen as usize] += 1;
    }
    rows.into_iter()
        .map(|(scenario, counts)| SurveyTallyRow {
            scenario,
            stakes: scenario.stakes(),
            counts,
        })
        .collect()
}

pub fn survey_tally_report(rows: &[SurveyTallyRow]) -> Report {
    let mut by_stakes: BTreeMap<Stakes, [usize; 3]> = BTreeMap::new();
    for r in rows {
        let acc = by_stakes.entry(r.stakes).or_default();
        for (a, c) in acc.iter_mut().zip(r.counts) {
            *a += c;
        }
    }
    let stakes_totals: BTreeMap<String, [usize; 3]> = by_stakes.into_iter().map(|(s, c)| (s.to_string(), c)).collect();
    Report {
        kind: ReportKind::SurveyTally,
        columns: ["scenario", "stakes", "A1", "A2", "A3", "total"].map(String::from).to_vec(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.scenario.to_string(),
                    r.stakes.to_string(),
                    r.counts[0].to_string(),
                    r.counts[1].to_string(),
                    r.counts[2].to_string(),
                    r.total().to_string(),
                ]
            })
            .collect(),
        metadata: serde_json::json!({
            "choices": SurveyChoice::ALL,
            "by_stakes": stakes_totals,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{classify, HypothesisSet, Posterior};
    use crate::study::{Demographics, SCHEMA_VERSION};

    fn record(id: &str, scenario: Option<Scenario>, posterior: Vec<f64>, hypotheses: HypothesisSet) -> SessionRecord {
        let final_posterior = Posterior::new(posterior).unwrap();
        SessionRecord {
            schema_version: SCHEMA_VERSION,
            session_id: id.into(),
            scenario,
            classification: classify(&final_posterior, &hypotheses, 0.8),
            hypotheses,
            steps: vec![],
            final_posterior,
            return_code: None,
            demographics: None,
        }
    }

    fn dp(id: &str) -> SessionRecord {
        record(id, Some(Scenario::CrimeRisk), vec![0.9, 0.05, 0.03, 0.02], HypothesisSet::default_set())
    }

    fn undecided(id: &str) -> SessionRecord {
        record(id, Some(Scenario::CrimeRisk), vec![0.4, 0.3, 0.2, 0.1], HypothesisSet::default_set())
    }

    #[test]
    fn summary_arithmetic() {
        let mut records: Vec<_> = (0..8).map(|i| dp(&i.to_string())).collect();
        records.extend((8..10).map(|i| undecided(&i.to_string())));
        let table = summary_table(&records, 0.8);
        let (matched, none) = table.rows[0].percentages();
        assert_eq!(matched, vec![80.0, 0.0, 0.0, 0.0]);
        assert_eq!(none, 20.0);
        let report = table.to_report();
        assert_eq!(report.columns, vec!["scenario", "n", "DP", "EP", "FDP", "FNP", "none"]);
        assert_eq!(report.rows[0], vec!["crime_risk", "10", "80.0", "0.0", "0.0", "0.0", "20.0"]);
    }

    #[test]
    fn summary_threshold_above_one_matches_nothing() {
        let table = summary_table(&[dp("a"), dp("b")], 1.01);
        assert_eq!(table.rows[0].none, 2);
    }

    #[test]
    fn appendix_summary_shape() {
        let r = record("x", Some(Scenario::CancerRisk), vec![0.1, 0.6, 0.1, 0.1, 0.1], HypothesisSet::appendix_set());
        let report = summary_table(&[r], 0.8).to_report();
        assert_eq!(report.columns[2..], ["EP", "FPP", "FNP", "FDP", "FOP", "none"]);
    }

    #[test]
    fn summary_merge_is_weighted() {
        let a = vec![dp("1"), dp("2"), undecided("3")];
        let b = vec![undecided("4"), dp("5")];
        let union: Vec<_> = a.iter().chain(&b).cloned().collect();
        assert_eq!(summary_table(&a, 0.8).merge(&summary_table(&b, 0.8)), summary_table(&union, 0.8));
    }

    #[test]
    fn histogram_bins() {
        let edges = BinEdges::default();
        assert_eq!(edges.bin_of(0.2), 0);
        assert_eq!(edges.bin_of(0.4), 0);
        assert_eq!(edges.bin_of(0.41), 1);
        assert_eq!(edges.bin_of(0.8), 2);
        assert_eq!(edges.bin_of(0.81), 3);
        assert_eq!(edges.bin_of(1.0), 3);
        let h = classification_histogram(&[dp("1"), undecided("2")], &edges);
        assert_eq!(h.count(FairnessNotion::DP, 3), 1);
        assert_eq!(h.count(FairnessNotion::DP, 0), 1);
        assert_eq!(h.total(), 2);
        assert!(BinEdges::new(vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn histogram_of_nothing_is_empty() {
        let h = classification_histogram(&[], &BinEdges::default());
        assert_eq!(h.total(), 0);
        assert!(h.to_report().rows.is_empty());
    }

    #[test]
    fn demographics_required() {
        let err = demographic_breakdown(&[dp("1")], DemographicAttribute::Gender, 0.8).unwrap_err();
        assert!(matches!(err, Error::MissingData(_)));
    }

    #[test]
    fn demographic_percentages() {
        let with = |mut r: SessionRecord, g: &str| {
            r.demographics = Some(Demographics {
                gender: Some(g.into()),
                ..Default::default()
            });
            r
        };
        let mut records = Vec::new();
        for i in 0..50 {
            let r = if i < 39 { dp("f") } else { undecided("f") };
            records.push(with(r, "female"));
        }
        records.push(with(dp("m"), "male"));
        let b = demographic_breakdown(&records, DemographicAttribute::Gender, 0.8).unwrap();
        assert_eq!(b.percent("female", FairnessNotion::DP), Some(78.0));
        assert_eq!(b.percent("male", FairnessNotion::DP), Some(100.0));
    }

    #[test]
    fn survey_counts() {
        let resp = |scenario, chosen| SurveyResponse {
            scenario,
            chosen,
            demographics: None,
        };
        let responses = vec![
            resp(Scenario::FluSeverity, SurveyChoice::A3),
            resp(Scenario::CancerRisk, SurveyChoice::A1),
            resp(Scenario::CancerRisk, SurveyChoice::A1),
            resp(Scenario::FluSeverity, SurveyChoice::A1),
        ];
        let rows = survey_tally(&responses);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].scenario, Scenario::CancerRisk);
        assert_eq!(rows[0].counts, [2, 0, 0]);
        assert_eq!(rows[1].stakes, Stakes::Low);
        assert_eq!(rows[1].counts, [1, 0, 1]);
        assert!(rows[0].counts[0] > rows[1].counts[0]);
        assert_eq!(rows.iter().map(SurveyTallyRow::total).sum::<usize>(), responses.len());
        assert!(survey_tally(&[]).is_empty());
    }

    #[test]
    fn csv_output() {
        let report = summary_table(&[dp("1")], 0.8).to_report();
        let csv = report.to_csv_string().unwrap();
        assert!(csv.starts_with("scenario,n,DP,EP,FDP,FNP,none\n"));
    }
}
