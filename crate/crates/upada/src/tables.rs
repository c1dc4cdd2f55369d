//! CSV outputs: embeddings, per-run metrics, loss history, grid aggregates
//! and probe reports. Floats are printed like C's `%.9g`.

use std::fs;
use std::path::Path;

use upada_core::eval::{MetricsRecord, ProbeKind, ProbeResult};
use upada_core::faces::{Dataset, Domain};
use upada_core::grid::ModeSummary;
use upada_core::losses::LossBreakdown;
use upada_core::model::{Component, ModelBundle};

use crate::error::{io, Error, Result};

/// `%.9g`: 9 significant digits, trailing zeros removed, scientific
/// notation when the exponent is below -4 or at least 9.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        strip_zeros(&format!("{x:.*}", (8 - exp) as usize)).into()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io(path))
}

/// Header and rows of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn f64(&self, row: usize, name: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(name)?)?.parse().ok()
    }
}

pub fn parse_table(bytes: &[u8], path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_reader(bytes);
    let bad = |e: csv::Error| Error::format(path, "csv", e.to_string());
    let header = r.headers().map_err(bad)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(bad)?;
    Ok(Table { header, rows })
}

pub fn read_table(path: &Path) -> Result<Table> {
    let bytes = fs::read(path).map_err(io(path))?;
    parse_table(&bytes, path)
}

/// One row per sample, ordered by sample id: identifiers and labels, then
/// `f_e` and `f_p` from the encoder of the sample's domain.
pub fn embeddings_csv(bundle: &ModelBundle, datasets: &[&Dataset]) -> Result<Vec<u8>> {
    let a = &bundle.arch;
    let mut header: Vec<String> = ["sample_id", "domain", "subject", "pose", "expression"]
        .map(String::from)
        .to_vec();
    header.extend((0..a.expr_dim).map(|i| format!("f_e_{i}")));
    header.extend((0..a.pose_dim).map(|i| format!("f_p_{i}")));
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for ds in datasets {
        for domain in [Domain::Source, Domain::Target] {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.get(i).domain == domain).collect();
            if idx.is_empty() {
                continue;
            }
            let enc = if domain == Domain::Source { Component::Es } else { Component::Et };
            let f = bundle.features(enc, &ds.images(&idx))?;
            for (k, &i) in idx.iter().enumerate() {
                let s = ds.get(i);
                let mut row = vec![
                    s.id.to_string(),
                    domain.as_str().into(),
                    s.subject.to_string(),
                    s.pose.to_string(),
                    s.expression.to_string(),
                ];
                row.extend(f.f_e.row(k).iter().map(|&v| fmt_g9(v)));
                row.extend(f.f_p.row(k).iter().map(|&v| fmt_g9(v)));
                rows.push((s.id, row));
            }
        }
    }
    rows.sort_by_key(|(id, _)| *id);
    let rows: Vec<Vec<String>> = rows.into_iter().map(|(_, r)| r).collect();
    Ok(to_csv(&header, &rows))
}

fn loss_names() -> impl Iterator<Item = String> {
    LossBreakdown::NAMES.iter().map(|n| format!("loss_{n}"))
}

pub fn metrics_header(n_poses: usize) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "mode", "subject", "seed", "acc_overall"].map(String::from).to_vec();
    h.extend((0..n_poses).map(|p| format!("acc_pose_{p}")));
    for k in ProbeKind::ALL {
        h.push(format!("{}_train", k.as_str()));
        h.push(format!("{}_test", k.as_str()));
    }
    h.extend(
        ["pairs", "fallback_rate", "invalid_rate", "skipped_steps", "recon_probe_init", "recon_probe_final"].map(String::from),
    );
    h.extend(loss_names());
    h
}

fn metrics_row(r: &MetricsRecord) -> Vec<String> {
    let mut row = vec![
        r.run_id.clone(),
        r.mode.to_string(),
        r.subject.to_string(),
        r.seed.to_string(),
        fmt_g9(r.acc_overall),
    ];
    row.extend(r.acc_per_pose.iter().map(|&a| fmt_g9(a)));
    for k in ProbeKind::ALL {
        match r.probe(k) {
            Some(p) => {
                row.push(fmt_g9(p.train_acc));
                row.push(fmt_g9(p.test_acc));
            }
            None => row.extend([String::new(), String::new()]),
        }
    }
    row.push(r.pairing.pairs.to_string());
    row.push(fmt_g9(r.pairing.fallback_rate()));
    row.push(fmt_g9(r.pairing.invalid_rate()));
    row.push(r.pairing.skipped_steps.to_string());
    row.push(fmt_g9(r.recon_probe_init));
    row.push(fmt_g9(r.recon_probe_final));
    row.extend(r.final_losses.values().iter().map(|&v| fmt_g9(v)));
    row
}

/// One row per run, stable column order.
pub fn metrics_csv(records: &[MetricsRecord], n_poses: usize) -> Vec<u8> {
    let rows: Vec<Vec<String>> = records.iter().map(metrics_row).collect();
    to_csv(&metrics_header(n_poses), &rows)
}

pub fn history_csv(history: &[LossBreakdown]) -> Vec<u8> {
    let mut header = vec![String::from("epoch")];
    header.extend(LossBreakdown::NAMES.iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = history
        .iter()
        .enumerate()
        .map(|(e, b)| {
            let mut r = vec![e.to_string()];
            r.extend(b.values().iter().map(|&v| fmt_g9(v)));
            r
        })
        .collect();
    to_csv(&header, &rows)
}

pub fn aggregate_csv(summaries: &[ModeSummary], n_poses: usize) -> Vec<u8> {
    let mut header: Vec<String> = ["mode", "runs", "acc_mean", "acc_std"].map(String::from).to_vec();
    header.extend((0..n_poses).map(|p| format!("acc_pose_{p}")));
    header.extend(ProbeKind::ALL.iter().map(|k| format!("{}_test", k.as_str())));
    header.push("recon_ratio_mean".into());
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut r = vec![s.mode.to_string(), s.runs.to_string(), fmt_g9(s.acc_mean), fmt_g9(s.acc_std)];
            r.extend(s.per_pose_mean.iter().map(|&a| fmt_g9(a)));
            r.extend(ProbeKind::ALL.iter().map(|&k| s.probe(k).map(fmt_g9).unwrap_or_default()));
            r.push(fmt_g9(s.recon_ratio_mean));
            r
        })
        .collect();
    to_csv(&header, &rows)
}

pub fn probes_csv(probes: &[ProbeResult]) -> Vec<u8> {
    let header = ["probe", "train_acc", "test_acc", "chance"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = probes
        .iter()
        .map(|p| {
            vec![
                p.kind.as_str().into(),
                fmt_g9(p.train_acc),
                fmt_g9(p.test_acc),
                fmt_g9(p.chance),
            ]
        })
        .collect();
    to_csv(&header, &rows)
}
