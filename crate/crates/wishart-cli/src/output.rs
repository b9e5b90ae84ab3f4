//! CSV and JSON emission. Every CSV starts with a versioned schema comment
//! line so downstream readers can pin the layout; the data files emitted for
//! plotting are whitespace-friendly and gnuplot-compatible.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

pub const SAMPLES_SCHEMA: &str = "# wishart-samples v1";
pub const TABLE_SCHEMA: &str = "# wishart-table1 v1";
pub const CONVERGE_SCHEMA: &str = "# wishart-converge v1";
pub const GOURIEROUX_SCHEMA: &str = "# wishart-gourieroux v1";

/// One result line in the timing-table layout: scheme, N, both value
/// components with their standard errors, and the wall-clock time.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub scheme: String,
    pub n: usize,
    pub re: f64,
    pub im: f64,
    pub std_error_re: f64,
    pub std_error_im: f64,
    pub elapsed_s: f64,
}

pub fn write_out(path: Option<&Path>, content: &str) -> io::Result<()> {
    match path {
        None => {
            io::stdout().write_all(content.as_bytes())?;
            Ok(())
        }
        Some(p) => {
            let mut f = File::create(p)?;
            f.write_all(content.as_bytes())
        }
    }
}

pub fn result_rows_csv(rows: &[ResultRow], truth: Option<(f64, f64)>) -> String {
    let mut s = String::new();
    s.push_str(TABLE_SCHEMA);
    s.push('\n');
    if let Some((re, im)) = truth {
        s.push_str(&format!("# reference value: re={re:.6} im={im:.6}\n"));
        s.push_str("scheme,n,re,im,std_error_re,std_error_im,elapsed_s,dev_re,dev_im\n");
        for r in rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.2e},{:.2e},{:.3},{:.2e},{:.2e}\n",
                r.scheme,
                r.n,
                r.re,
                r.im,
                r.std_error_re,
                r.std_error_im,
                r.elapsed_s,
                (r.re - re).abs(),
                (r.im - im).abs(),
            ));
        }
    } else {
        s.push_str("scheme,n,re,im,std_error_re,std_error_im,elapsed_s\n");
        for r in rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.2e},{:.2e},{:.3}\n",
                r.scheme, r.n, r.re, r.im, r.std_error_re, r.std_error_im, r.elapsed_s
            ));
        }
    }
    s
}

pub fn result_rows_json(rows: &[ResultRow], truth: Option<(f64, f64)>) -> String {
    #[derive(Serialize)]
    struct Doc<'a> {
        schema: &'static str,
        reference: Option<(f64, f64)>,
        rows: &'a [ResultRow],
    }
    serde_json::to_string_pretty(&Doc { schema: "wishart-table1-v1", reference: truth, rows })
        .expect("serializable")
        + "\n"
}

/// Gnuplot-ready convergence data: one block per scheme, columns
/// N, dt, value, ci half-width.
pub fn converge_plot_data(
    t: f64,
    blocks: &[(String, Vec<(usize, f64, f64)>)],
) -> String {
    let mut s = String::new();
    s.push_str("# convergence data: N  dt  value  ci_half_width\n");
    for (name, rows) in blocks {
        s.push_str(&format!("# scheme: {name}\n"));
        for (n, val, ci) in rows {
            s.push_str(&format!("{}  {:.8}  {:.8}  {:.3e}\n", n, t / *n as f64, val, ci));
        }
        s.push_str("\n\n");
    }
    s
}
