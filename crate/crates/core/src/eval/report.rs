use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::EvalReport;
use crate::error::{Error, Result};

/// Published reference rows: offset (s), coordinate baseline, polynomial,
/// CS-LSTM (M), MFP-1 RMSE in metres.
pub const TABLE1_REFERENCE: [(u32, f64, f64, f64, f64); 5] = [
    (1, 0.43, 0.55, 0.62, 0.54),
    (2, 1.00, 0.93, 1.27, 1.16),
    (3, 1.72, 1.64, 2.09, 1.90),
    (4, 2.76, 2.64, 3.10, 2.78),
    (5, 3.98, 3.85, 4.37, 3.83),
];

/// Mean displacement per offset for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub method: String,
    pub offsets: Vec<u32>,
    pub ade: Vec<f64>,
}

impl Curve {
    pub fn at(&self, offset: u32) -> Option<f64> {
        self.offsets.iter().position(|&o| o == offset).map(|i| self.ade[i])
    }

    /// Mean over the offsets accepted by `keep`.
    pub fn mean_where(&self, keep: impl Fn(u32) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .offsets
            .iter()
            .zip(&self.ade)
            .filter(|(&o, _)| keep(o))
            .map(|(_, &v)| v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean(&self) -> f64 {
        self.mean_where(|_| true).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub study: String,
    pub fingerprint: String,
    pub frame_rate: f64,
    pub curves: Vec<Curve>,
    /// Test samples left out because their future is too short.
    pub skipped: usize,
}

impl StudyReport {
    pub fn curve(&self, method: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.method == method)
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.study, self.fingerprint)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("study,method,offset_frames,offset_s,ade_m\n");
        for c in &self.curves {
            for (o, v) in c.offsets.iter().zip(&c.ade) {
                let _ = writeln!(
                    out,
                    "{},{},{o},{},{v}",
                    self.study,
                    c.method,
                    *o as f64 / self.frame_rate
                );
            }
        }
        out
    }

    /// Static line chart of every curve (ADE over seconds).
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 440.0;
        const L: f64 = 70.0;
        const R: f64 = 200.0;
        const T: f64 = 40.0;
        const B: f64 = 60.0;
        const COLORS: [&str; 8] = [
            "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
        ];
        let xmax = self
            .curves
            .iter()
            .flat_map(|c| c.offsets.iter())
            .map(|&o| o as f64 / self.frame_rate)
            .fold(0.0, f64::max)
            .max(1e-9);
        let ymax = self
            .curves
            .iter()
            .flat_map(|c| c.ade.iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
            .max(1e-9)
            * 1.05;
        let px = |x: f64| L + x / xmax * (W - L - R);
        let py = |y: f64| H - B - y / ymax * (H - T - B);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{L}" y="24" font-size="15">{}</text>"#, self.study);
        let _ = writeln!(
            s,
            r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#,
            H - B,
            W - R,
            H - B,
            H - B
        );
        for i in 0..=5 {
            let xv = xmax * i as f64 / 5.0;
            let yv = ymax * i as f64 / 5.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.1}</text><text x="{}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#,
                px(xv),
                H - B + 18.0,
                L - 6.0,
                py(yv) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">offset (s)</text><text x="18" y="{:.1}" transform="rotate(-90 18 {:.1})" text-anchor="middle">ADE (m)</text>"#,
            (L + W - R) / 2.0,
            H - 20.0,
            (T + H - B) / 2.0,
            (T + H - B) / 2.0
        );
        for (i, c) in self.curves.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = c
                .offsets
                .iter()
                .zip(&c.ade)
                .filter(|(_, v)| v.is_finite())
                .map(|(&o, &v)| format!("{:.2},{:.2}", px(o as f64 / self.frame_rate), py(v)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = T + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                W - R + 15.0,
                W - R + 40.0,
                W - R + 46.0,
                ly + 4.0,
                c.method
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `<study>_<fingerprint>.csv` and `.svg` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.file_stem()));
        let svg = dir.join(format!("{}.svg", self.file_stem()));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        std::fs::write(&svg, self.to_svg()).map_err(|e| Error::io(&svg, e))?;
        Ok((csv, svg))
    }
}

/// RMSE table with one row per whole second (1..5 s): measured coordinate
/// and polynomial columns next to the published reference columns.
pub fn table1(coord: Option<&EvalReport>, poly: Option<&EvalReport>) -> String {
    let cell = |r: Option<&EvalReport>, sec: u32| -> String {
        r.and_then(|r| {
            let frame = (sec as f64 * r.frame_rate).round() as u32;
            r.offsets
                .iter()
                .position(|&o| o == frame)
                .map(|i| format!("{:.2}", r.rmse[i]))
        })
        .unwrap_or_else(|| "-".into())
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| Offset (sec) | Coords baseline | Poly | CS-LSTM (M) | MFP-1 |\n|---|---|---|---|---|"
    );
    for (sec, _, _, cs, mfp) in TABLE1_REFERENCE {
        let _ = writeln!(
            s,
            "| {sec} | {} | {} | {cs:.2} | {mfp:.2} |",
            cell(coord, sec),
            cell(poly, sec)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> StudyReport {
        StudyReport {
            study: "demo".into(),
            fingerprint: "abc123".into(),
            frame_rate: 10.0,
            curves: vec![
                Curve {
                    method: "a".into(),
                    offsets: vec![10, 20],
                    ade: vec![0.5, 1.5],
                },
                Curve {
                    method: "b".into(),
                    offsets: vec![10, 20],
                    ade: vec![0.25, 0.75],
                },
            ],
            skipped: 0,
        }
    }

    #[test]
    fn csv_has_one_row_per_offset_and_method() {
        let csv = report().to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("demo,b,20,2,0.75"));
    }

    #[test]
    fn svg_mentions_every_method() {
        let svg = report().to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn curve_means() {
        let r = report();
        assert_eq!(r.curve("a").unwrap().mean(), 1.0);
        assert_eq!(r.curve("a").unwrap().mean_where(|o| o > 15), Some(1.5));
        assert_eq!(r.curve("a").unwrap().at(20), Some(1.5));
    }

    #[test]
    fn table_layout() {
        let poly = EvalReport {
            offsets: vec![10, 20, 30, 40, 50],
            rmse: vec![0.5, 0.9, 1.6, 2.6, 3.9],
            ade: vec![0.0; 5],
            samples: 1,
            frame_rate: 10.0,
            fingerprint: String::new(),
        };
        let t = table1(None, Some(&poly));
        let rows: Vec<&str> = t.lines().collect();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[2], "| 1 | - | 0.50 | 0.62 | 0.54 |");
        assert_eq!(rows[6], "| 5 | - | 3.90 | 4.37 | 3.83 |");
    }
}
