//! Structure measure: object-aware plus region-aware similarity between a
//! continuous prediction and a binary GT.

const EPS: f64 = f64::EPSILON;

/// `alpha * S_object + (1 - alpha) * S_region`, floored at zero. All-background
/// GT scores `1 - mean(pred)`, all-foreground GT scores `mean(pred)`.
///
/// `pred` and `gt` are row-major with the given width.
pub fn s_measure(pred: &[f64], gt: &[bool], width: usize, alpha: f64) -> f64 {
    let n = pred.len();
    let fg = gt.iter().filter(|&&g| g).count();
    let mean_pred = pred.iter().sum::<f64>() / n as f64;
    if fg == 0 {
        return 1.0 - mean_pred;
    }
    if fg == n {
        return mean_pred;
    }
    let q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt, width);
    q.max(0.0)
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let count = values.clone().count();
    let mean = values.clone().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let u = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    let fg = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p);
    let bg = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p);
    u * object_score(fg) + (1.0 - u) * object_score(bg)
}

/// 1-based centroid column and row of the foreground, rounded half away from zero.
fn centroid(gt: &[bool], width: usize) -> (usize, usize) {
    let height = gt.len() / width;
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for (i, _) in gt.iter().enumerate().filter(|(_, &g)| g) {
        sx += (i % width + 1) as f64;
        sy += (i / width + 1) as f64;
        total += 1.0;
    }
    if total == 0.0 {
        return (
            (width as f64 / 2.0).round() as usize,
            (height as f64 / 2.0).round() as usize,
        );
    }
    ((sx / total).round() as usize, (sy / total).round() as usize)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let (mut sx2, mut sy2, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sx2 += (p - x) * (p - x);
        sy2 += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let d = n - 1.0 + EPS;
    let (sx2, sy2, sxy) = (sx2 / d, sy2 / d, sxy / d);
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx2 + sy2);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &[f64], gt: &[bool], width: usize) -> f64 {
    let height = gt.len() / width;
    let (cx, cy) = centroid(gt, width);
    let area = (width * height) as f64;
    let quads = [
        (0, cy, 0, cx),
        (0, cy, cx, width),
        (cy, height, 0, cx),
        (cy, height, cx, width),
    ];
    let mut q = 0.0;
    for (r0, r1, c0, c1) in quads {
        let cells = (r1 - r0) * (c1 - c0);
        if cells == 0 {
            continue; // zero weight
        }
        let mut p = Vec::with_capacity(cells);
        let mut g = Vec::with_capacity(cells);
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pred[r * width + c]);
                g.push(if gt[r * width + c] { 1.0 } else { 0.0 });
            }
        }
        q += cells as f64 / area * ssim(&p, &g);
    }
    q
}
