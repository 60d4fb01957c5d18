//! Deterministic CSV rendering.
//!
//! Line 1 carries the config digest, line 2 the header, then data rows.
//! Numbers use the shortest representation that round-trips (`Display` for
//! `f64`), so identical runs produce identical bytes.

/// A rendered artifact waiting to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

pub fn csv_document<I>(digest: &str, header: &str, rows: I) -> String
where
    I: IntoIterator<Item = String>,
{
    let mut out = String::new();
    out.push_str("# digest=");
    out.push_str(digest);
    out.push('\n');
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn row(fields: &[String]) -> String {
    fields.join(",")
}

pub fn fnum(x: f64) -> String {
    x.to_string()
}

/// Positions CSV (`particle, x_1..x_d`).
pub fn positions_csv(digest: &str, positions: &[f64], dim: usize) -> String {
    let mut header = String::from("particle");
    for k in 1..=dim {
        header.push_str(&format!(",x_{k}"));
    }
    let rows = positions.chunks_exact(dim).enumerate().map(|(i, x)| {
        let mut fields = vec![i.to_string()];
        fields.extend(x.iter().map(|v| fnum(*v)));
        row(&fields)
    });
    csv_document(digest, &header, rows)
}
