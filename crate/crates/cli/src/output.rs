//! Artifact writers. Every file carries the domain and config hashes.
//!
//! CSV files use `;` as delimiter and start with `#` comment lines holding the
//! metadata. JSON files wrap their payload in an envelope with a schema
//! version. SVG files use a fixed `0 0 1000 1000` view box.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use steklov_core::nodal::{ArcKind, NodalReport};
use steklov_core::{Circle, ValidDomain};

pub const SCHEMA_VERSION: u32 = 1;

/// Output directory plus the metadata stamped into every file.
pub struct Sink {
    pub dir: PathBuf,
    pub command: String,
    pub domain_hash: String,
    pub config_hash: String,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    domain_hash: &'a str,
    config_hash: &'a str,
    data: &'a T,
}

impl Sink {
    pub fn new(dir: &Path, command: &str, domain_hash: String, config_hash: String) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), command: command.into(), domain_hash, config_hash })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv<R: AsRef<[String]>>(&self, name: &str, header: &[&str], rows: &[R]) -> Result<PathBuf> {
        let mut out = format!(
            "# schema_version = {SCHEMA_VERSION}\n# command = {}\n# domain_hash = {}\n# config_hash = {}\n",
            self.command, self.domain_hash, self.config_hash
        );
        let mut w = csv::WriterBuilder::new().delimiter(b';').from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.as_ref())?;
        }
        out.push_str(std::str::from_utf8(&w.into_inner()?)?);
        let p = self.path(name);
        fs::write(&p, out).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            command: &self.command,
            domain_hash: &self.domain_hash,
            config_hash: &self.config_hash,
            data,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        let p = self.path(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn svg(&self, name: &str, domain: &ValidDomain, report: &NodalReport) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, nodal_svg(domain, report, &self.domain_hash, &self.config_hash))
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

/// Shortest round-trip form, exponent notation for very small or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Nodal picture. Boundary circles are black, width 2. Closed nodal loops are
/// blue, arcs ending on the boundary red, truncated arcs orange; all width 1.5.
/// Residual collars excluded from tracing are dashed grey circles.
pub fn nodal_svg(domain: &ValidDomain, report: &NodalReport, domain_hash: &str, config_hash: &str) -> String {
    let outer = domain.circle(0);
    let margin = 20.0;
    let s = (1000.0 - 2.0 * margin) / (2.0 * outer.radius);
    let map = |p: [f64; 2]| {
        (margin + (p[0] - outer.center[0] + outer.radius) * s, margin + (outer.center[1] + outer.radius - p[1]) * s)
    };
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1000 1000" width="1000" height="1000">"#);
    let _ = writeln!(
        out,
        "<!-- schema_version={SCHEMA_VERSION} domain_hash={domain_hash} config_hash={config_hash} n={} lambda={} length={} -->",
        report.n, report.lambda, report.length
    );
    let _ = writeln!(out, r#"<rect width="1000" height="1000" fill="white"/>"#);
    let circle = |out: &mut String, c: &Circle, r: f64, style: &str| {
        let (x, y) = map(c.center);
        let _ = writeln!(out, r#"<circle cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="none" {style}/>"#, r * s);
    };
    for b in &report.excluded {
        let c = domain.circle(b.component);
        let r = if b.component == 0 { c.radius - b.width } else { c.radius + b.width };
        circle(&mut out, c, r, r##"stroke="#888888" stroke-width="1" stroke-dasharray="6 4""##);
    }
    for c in domain.circles() {
        circle(&mut out, &c, c.radius, r##"stroke="#000000" stroke-width="2""##);
    }
    for line in &report.set.polylines {
        let colour = match line.kind {
            ArcKind::Closed => "#1f4fd1",
            ArcKind::Boundary => "#c8102e",
            ArcKind::Truncated => "#e08000",
        };
        let pts: Vec<String> = line
            .points
            .iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}
