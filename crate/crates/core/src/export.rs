//! Exports of archived families: a CSV table, a slope/step-duration
//! bifurcation diagram in SVG, and time-sampled frames for an animation
//! viewer.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::archive::FamilyArchive;
use crate::dynamics::HybridModel;
use crate::error::{Error, Result};
use crate::hybrid::{self, FlowOptions};

/// Frame rate of exported animations.
pub const FRAME_RATE: f64 = 60.0;

/// One row per gait: identifiers, the gait point, and derived quantities.
pub fn to_csv(archive: &FamilyArchive) -> Result<String> {
    let n = archive.dims.n;
    let k = archive.dims.k;
    let mut header: Vec<String> = ["branch", "seed", "level", "direction", "index", "tau"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n).map(|i| format!("q{i}")));
    header.extend((0..n).map(|i| format!("qdot{i}")));
    header.extend((0..k).map(|i| format!("mu{i}")));
    header.extend(
        ["residual", "slope_rad", "slope_deg", "step_length", "pulls"]
            .iter()
            .map(|s| s.to_string()),
    );

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_error)?;
    for (b, branch) in archive.branches.iter().enumerate() {
        for (i, g) in branch.gaits.iter().enumerate() {
            let mut row = vec![
                b.to_string(),
                branch.seed_index.to_string(),
                branch.level.to_string(),
                branch.direction.to_string(),
                i.to_string(),
                g.tau.to_string(),
            ];
            row.extend(g.x0.iter().map(f64::to_string));
            row.extend(g.mu.iter().map(f64::to_string));
            row.push(g.residual.to_string());
            row.push(opt(g.slope));
            row.push(opt(g.slope.map(f64::to_degrees)));
            row.push(opt(g.step_length));
            row.push(g.pulls.map(|p| p.to_string()).unwrap_or_default());
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 70.0;
const COLORS: [&str; 6] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
];

/// Slope against step duration for every branch, the equilibrium gaits as
/// a horizontal line over the scan window, and one marker (carrying a
/// `data-tau` attribute) per singular equilibrium gait.
pub fn to_svg(archive: &FamilyArchive) -> Result<String> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for b in &archive.branches {
        for g in &b.gaits {
            if let Some(s) = g.slope {
                pts.push((g.tau, s));
            }
        }
    }
    let eq_slope = archive.scan.as_ref().and_then(|s| s.equilibrium_slope);
    if let (Some(scan), Some(sl)) = (&archive.scan, eq_slope) {
        pts.push((scan.interval.0, sl));
        pts.push((scan.interval.1, sl));
    }
    if pts.is_empty() {
        return Err(Error::InvalidInput("archive has no slopes to plot".into()));
    }
    let (mut t0, mut t1, mut s0, mut s1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(t, s) in &pts {
        t0 = t0.min(t);
        t1 = t1.max(t);
        s0 = s0.min(s);
        s1 = s1.max(s);
    }
    let pad = |lo: f64, hi: f64| {
        let d = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        (lo - d, hi + d)
    };
    let (t0, t1) = pad(t0, t1);
    let (s0, s1) = pad(s0, s1);
    let x = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let y = |s: f64| HEIGHT - MARGIN - (s - s0) / (s1 - s0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<g id="axes" stroke="black" fill="none"><rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}"/></g>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<g id="ticks" font-family="sans-serif" font-size="12">"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let t = t0 + f * (t1 - t0);
        let s = s0 + f * (s1 - s0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t:.3}</text>"#,
            x(t),
            HEIGHT - MARGIN + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{s:.3}</text>"#,
            MARGIN - 6.0,
            y(s) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step duration τ (s)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">slope σ (rad)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(out, "</g>");

    if let (Some(scan), Some(sl)) = (&archive.scan, eq_slope) {
        let _ = writeln!(
            out,
            r#"<line class="equilibria" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            x(scan.interval.0),
            y(sl),
            x(scan.interval.1),
            y(sl)
        );
    }
    for (bi, b) in archive.branches.iter().enumerate() {
        let coords: Vec<String> = b
            .gaits
            .iter()
            .filter_map(|g| g.slope.map(|s| format!("{:.2},{:.2}", x(g.tau), y(s))))
            .collect();
        if coords.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<polyline class="branch" data-branch="{bi}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[bi % COLORS.len()],
            coords.join(" ")
        );
    }
    if let (Some(scan), Some(sl)) = (&archive.scan, eq_slope) {
        for seed in &scan.seeds {
            let _ = writeln!(
                out,
                r#"<circle class="crossing" data-tau="{}" cx="{:.2}" cy="{:.2}" r="5" fill="red"/>"#,
                seed.tau,
                x(seed.tau),
                y(sl)
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Joint angles of one gait sampled at [`FRAME_RATE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitFrames {
    pub branch: usize,
    pub index: usize,
    pub tau: f64,
    pub slope: Option<f64>,
    /// Frame times `i / FRAME_RATE ≤ τ`.
    pub times: Vec<f64>,
    /// Configuration `q` at every frame.
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Animation {
    pub frame_rate: f64,
    pub model_name: String,
    pub gaits: Vec<GaitFrames>,
}

/// Frames for the selected `(branch, index)` gaits, or for every gait when
/// `selection` is empty.
pub fn animation_frames(
    archive: &FamilyArchive,
    model: &dyn HybridModel,
    selection: &[(usize, usize)],
) -> Result<Animation> {
    let all: Vec<(usize, usize)>;
    let chosen = if selection.is_empty() {
        all = archive
            .branches
            .iter()
            .enumerate()
            .flat_map(|(b, br)| (0..br.gaits.len()).map(move |i| (b, i)))
            .collect();
        &all
    } else {
        selection
    };
    let mut gaits = Vec::with_capacity(chosen.len());
    for &(b, i) in chosen {
        let c = archive.gait(b, i)?;
        let traj = hybrid::trajectory(model, &c, &FlowOptions::default())?;
        let count = (c.tau * FRAME_RATE + 1e-9).floor() as usize + 1;
        let times: Vec<f64> = (0..count).map(|j| j as f64 / FRAME_RATE).collect();
        let q = times
            .iter()
            .map(|&t| traj.state_at(t).q.iter().copied().collect())
            .collect();
        gaits.push(GaitFrames {
            branch: b,
            index: i,
            tau: c.tau,
            slope: model.slope(&c.x0),
            times,
            q,
        });
    }
    Ok(Animation {
        frame_rate: FRAME_RATE,
        model_name: model.name(),
        gaits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{ScanRecord, SeedRecord};
    use crate::continuation::{Branch, IndicatorStatus, MapKind};
    use crate::dynamics::RobotState;
    use crate::hybrid::GaitPoint;
    use crate::models::{ModelConfig, ModelKind};
    use nalgebra::DVector;

    fn archive() -> (FamilyArchive, Box<dyn HybridModel>) {
        let cfg = ModelConfig::new(ModelKind::Compass);
        let model = cfg.build().unwrap();
        let gaits = [0.5, 0.55]
            .iter()
            .map(|&t| GaitPoint::new(RobotState::zeros(2), t, DVector::zeros(0)))
            .collect();
        let branch = Branch {
            seed_index: 0,
            level: 1,
            direction: 1,
            map: MapKind::ConstantControl { mu: vec![] },
            step_size: 0.05,
            gaits,
            complete: true,
            diagnostic: None,
        };
        let mut a = FamilyArchive::new(&cfg, model.as_ref());
        a.add_branches(model.as_ref(), &[branch]).unwrap();
        let seed = SeedRecord {
            tau: 0.62,
            indicator: 0.0,
            null_dim: 1,
            switchable: true,
            tangent: vec![0.0; 5],
            post_impact_tangent: vec![0.0; 5],
        };
        a.scan = Some(ScanRecord {
            equilibrium: vec![0.0; 4],
            equilibrium_slope: Some(0.0),
            mu: vec![],
            interval: (0.1, 1.0),
            steps: 10,
            status: IndicatorStatus::Crossings,
            remediation: String::new(),
            samples: vec![],
            seeds: vec![seed],
        });
        (a, model)
    }

    #[test]
    fn csv_has_one_row_per_gait() {
        let (a, _) = archive();
        let text = to_csv(&a).unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().unwrap().clone();
        assert_eq!(&header[6], "q0");
        assert_eq!(header.len(), 6 + 4 + 5);
        assert_eq!(r.records().count(), a.gait_count());
    }

    #[test]
    fn svg_marks_crossings() {
        let (a, _) = archive();
        let svg = to_svg(&a).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches(r#"class="crossing""#).count(), 1);
        assert!(svg.contains(r#"data-tau="0.62""#));
        assert_eq!(svg.matches(r#"class="branch""#).count(), 1);
    }

    #[test]
    fn equilibrium_frames_are_identical() {
        let (a, model) = archive();
        let anim = animation_frames(&a, model.as_ref(), &[(0, 0)]).unwrap();
        let g = &anim.gaits[0];
        assert_eq!(g.times.len(), 31);
        assert!(g.q.iter().all(|q| q == &g.q[0]));
        assert!(animation_frames(&a, model.as_ref(), &[(0, 9)]).is_err());
        assert_eq!(
            animation_frames(&a, model.as_ref(), &[])
                .unwrap()
                .gaits
                .len(),
            2
        );
    }

    #[test]
    fn records_without_slope_are_skipped() {
        let (mut a, _) = archive();
        a.scan = None;
        for g in &mut a.branches[0].gaits {
            g.slope = None;
        }
        assert!(to_svg(&a).is_err());
    }
}
