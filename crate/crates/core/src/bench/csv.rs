use crate::passes::LadderRung;

use super::{LadderReport, SweepReport};

pub const LADDER_HEADER: [&str; 3] = ["rung", "latency_us", "speedup_vs_scalar"];
pub const SWEEP_HEADER: [&str; 4] = ["n_elements", "single_us", "multi_us", "speedup"];

fn emit(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

pub fn ladder_csv(r: &LadderReport) -> String {
    emit(
        &LADDER_HEADER,
        r.rows.iter().map(|row| {
            vec![
                row.rung.name().to_string(),
                format!("{:.3}", row.latency_us),
                format!("{:.3}", row.speedup_vs_scalar),
            ]
        }),
    )
}

pub fn sweep_csv(r: &SweepReport) -> String {
    emit(
        &SWEEP_HEADER,
        r.points.iter().map(|p| {
            vec![
                p.n_elements.to_string(),
                format!("{:.3}", p.single_thread_us),
                format!("{:.3}", p.multi_thread_us),
                format!("{:.3}", p.speedup),
            ]
        }),
    )
}

fn records(text: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let got = r.headers().map_err(|e| e.to_string())?;
    if got.iter().ne(header.iter().copied()) {
        return Err(format!("unexpected header {got:?}"));
    }
    r.records()
        .map(|rec| rec.map_err(|e| e.to_string()))
        .collect()
}

fn num<T: std::str::FromStr>(field: &str) -> Result<T, String> {
    field.parse().map_err(|_| format!("bad number {field:?}"))
}

/// Parses a ladder CSV back into `(rung, latency_us, speedup_vs_scalar)`.
pub fn parse_ladder_csv(text: &str) -> Result<Vec<(LadderRung, f64, f64)>, String> {
    records(text, &LADDER_HEADER)?
        .iter()
        .map(|f| {
            let rung =
                LadderRung::parse(&f[0]).ok_or_else(|| format!("unknown rung {:?}", &f[0]))?;
            Ok((rung, num(&f[1])?, num(&f[2])?))
        })
        .collect()
}

/// Parses a sweep CSV back into `(n_elements, single_us, multi_us, speedup)`.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<(u32, f64, f64, f64)>, String> {
    records(text, &SWEEP_HEADER)?
        .iter()
        .map(|f| Ok((num(&f[0])?, num(&f[1])?, num(&f[2])?, num(&f[3])?)))
        .collect()
}
