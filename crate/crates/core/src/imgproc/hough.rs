use serde::{Deserialize, Serialize};

use super::BinaryImage;

/// Line `(x − cx)·cos θ + (y − cy)·sin θ = distance`, with `(cx, cy)` the
/// image centre, x to the right and y downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughLine {
    pub distance: f64,
    /// Degrees in [0, 180).
    pub angle: f64,
    pub votes: u32,
}

fn centre(height: usize, width: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Signed offset of pixel `(y, x)` along the line normal, relative to the centre.
pub fn normal_offset(angle: f64, height: usize, width: usize, y: usize, x: usize) -> f64 {
    let (cx, cy) = centre(height, width);
    let t = angle.to_radians();
    (x as f64 - cx) * t.cos() + (y as f64 - cy) * t.sin()
}

/// Perpendicular distance from pixel `(y, x)` to `line` in an image of the given dims.
pub fn line_distance(line: &HoughLine, height: usize, width: usize, y: usize, x: usize) -> f64 {
    (normal_offset(line.angle, height, width, y, x) - line.distance).abs()
}

/// 1 px × 1° voting over [0°, 180°). Cells at or above `threshold` that are
/// maxima of their 3×3 neighbourhood are returned, strongest first. Among
/// equal neighbours the first in (angle, distance) order wins.
pub fn hough_lines(edges: &BinaryImage, threshold: u32) -> Vec<HoughLine> {
    let (h, w) = (edges.height(), edges.width());
    let (cx, cy) = centre(h, w);
    let max_rho = (cx.hypot(cy)).ceil() as i64 + 1;
    let n_rho = (2 * max_rho + 1) as usize;
    let trig: Vec<(f64, f64)> = (0..180).map(|a| ((a as f64).to_radians().cos(), (a as f64).to_radians().sin())).collect();
    let mut acc = vec![0u32; 180 * n_rho];
    for y in 0..h {
        for x in 0..w {
            if !edges.get(y, x) {
                continue;
            }
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            for (a, (c, s)) in trig.iter().enumerate() {
                let r = (dx * c + dy * s).round() as i64 + max_rho;
                acc[a * n_rho + r as usize] += 1;
            }
        }
    }

    // (angle, rho) neighbour with wrap-around: θ = 180° is θ = 0° with ρ negated
    let cell = |a: i64, r: i64| -> Option<(usize, usize)> {
        let (a, r) = if a < 0 {
            (a + 180, 2 * max_rho - r)
        } else if a >= 180 {
            (a - 180, 2 * max_rho - r)
        } else {
            (a, r)
        };
        (r >= 0 && r < n_rho as i64).then_some((a as usize, r as usize))
    };
    let order = |a: usize, r: usize| a * n_rho + r;

    let mut lines = Vec::new();
    for a in 0..180usize {
        for r in 0..n_rho {
            let v = acc[a * n_rho + r];
            if v < threshold || v == 0 {
                continue;
            }
            let mut keep = true;
            'nb: for da in -1i64..=1 {
                for dr in -1i64..=1 {
                    if da == 0 && dr == 0 {
                        continue;
                    }
                    if let Some((na, nr)) = cell(a as i64 + da, r as i64 + dr) {
                        let nv = acc[na * n_rho + nr];
                        if nv > v || (nv == v && order(na, nr) < order(a, r)) {
                            keep = false;
                            break 'nb;
                        }
                    }
                }
            }
            if keep {
                lines.push(HoughLine { distance: (r as i64 - max_rho) as f64, angle: a as f64, votes: v });
            }
        }
    }
    lines.sort_by(|p, q| {
        q.votes.cmp(&p.votes).then(p.angle.total_cmp(&q.angle)).then(p.distance.total_cmp(&q.distance))
    });
    lines
}
