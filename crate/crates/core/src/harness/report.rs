use std::io::Write;

use crate::error::Result;
use crate::harness::experiment::RoundReport;

/// First round whose accuracy reaches `target`, with its cumulative airtime.
pub fn time_to_target(reports: &[RoundReport], target: f64) -> Option<(usize, u64)> {
    reports
        .iter()
        .find(|r| r.accuracy >= target)
        .map(|r| (r.round, r.cumulative_airtime))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirtimeRow {
    pub strategy: String,
    pub round: usize,
    pub airtime: u64,
    pub accuracy: f64,
}

/// Merges labelled runs into one list sorted by airtime (stable, so equal
/// airtimes keep input order).
pub fn accuracy_vs_airtime(runs: &[(&str, &[RoundReport])]) -> Vec<AirtimeRow> {
    let mut rows: Vec<AirtimeRow> = runs
        .iter()
        .flat_map(|(label, reports)| {
            reports.iter().map(move |r| AirtimeRow {
                strategy: label.to_string(),
                round: r.round,
                airtime: r.cumulative_airtime,
                accuracy: r.accuracy,
            })
        })
        .collect();
    rows.sort_by_key(|r| r.airtime);
    rows
}

/// Columns: `airtime_symbols,[airtime_s,]accuracy,strategy,round`.
pub fn write_accuracy_vs_airtime<W: Write>(
    w: W,
    rows: &[AirtimeRow],
    symbol_rate_hz: Option<f64>,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["airtime_symbols"];
    if symbol_rate_hz.is_some() {
        header.push("airtime_s");
    }
    header.extend(["accuracy", "strategy", "round"]);
    csv.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.airtime.to_string()];
        if let Some(rate) = symbol_rate_hz {
            rec.push((r.airtime as f64 / rate).to_string());
        }
        rec.extend([
            r.accuracy.to_string(),
            r.strategy.clone(),
            r.round.to_string(),
        ]);
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Per-round log. Per-client error counts are `;`-separated.
pub fn write_round_reports<W: Write>(w: W, reports: &[RoundReport]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "strategy",
        "round",
        "raw_bit_errors",
        "residual_bit_errors",
        "retransmissions",
        "symbols_used",
        "cumulative_airtime",
        "accuracy",
        "loss",
        "frac_in_unit",
        "client_raw_bit_errors",
        "client_residual_bit_errors",
    ])?;
    for r in reports {
        csv.write_record([
            r.strategy.to_string(),
            r.round.to_string(),
            r.raw_bit_errors.iter().sum::<usize>().to_string(),
            r.residual_bit_errors.iter().sum::<usize>().to_string(),
            r.retransmissions.to_string(),
            r.symbols_used.to_string(),
            r.cumulative_airtime.to_string(),
            r.accuracy.to_string(),
            r.loss.to_string(),
            r.frac_in_unit.to_string(),
            join(&r.raw_bit_errors),
            join(&r.residual_bit_errors),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::StrategyKind;

    fn rep(round: usize, airtime: u64, accuracy: f64) -> RoundReport {
        RoundReport {
            strategy: StrategyKind::Approximate,
            round,
            raw_bit_errors: vec![1, 2],
            residual_bit_errors: vec![1, 2],
            retransmissions: 0,
            symbols_used: 10,
            cumulative_airtime: airtime,
            accuracy,
            loss: 0.5,
            frac_in_unit: 1.0,
        }
    }

    #[test]
    fn target_and_merge() {
        let a = [rep(1, 10, 0.2), rep(2, 20, 0.75), rep(3, 30, 0.9)];
        let b = [rep(1, 15, 0.1), rep(2, 30, 0.8)];
        assert_eq!(time_to_target(&a, 0.7), Some((2, 20)));
        assert_eq!(time_to_target(&b, 0.95), None);
        let rows = accuracy_vs_airtime(&[("a", &a), ("b", &b)]);
        let order: Vec<(String, u64)> = rows
            .iter()
            .map(|r| (r.strategy.clone(), r.airtime))
            .collect();
        assert_eq!(
            order,
            vec![
                ("a".into(), 10),
                ("b".into(), 15),
                ("a".into(), 20),
                ("a".into(), 30),
                ("b".into(), 30)
            ]
        );
        let mut buf = Vec::new();
        write_accuracy_vs_airtime(&mut buf, &rows, Some(10.0)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("airtime_symbols,airtime_s,accuracy,strategy,round\n10,1,0.2,a,1\n")
        );
        let mut buf = Vec::new();
        write_round_reports(&mut buf, &a).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(",1;2,1;2"));
    }
}
