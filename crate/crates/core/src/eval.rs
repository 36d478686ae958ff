//! Instance extraction, point matching and localization/counting metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{InstanceAnnotation, MapKind, PixelMap, Scene};

pub const DEFAULT_MIN_AREA: usize = 2;
/// Upper edges of scale bins A0..A4; A5 is everything above the last edge.
pub const SCALE_BIN_EDGES: [f64; 5] = [1e1, 1e2, 1e3, 1e4, 1e5];
pub const SCALE_BINS: usize = SCALE_BIN_EDGES.len() + 1;
pub const MATCH_RADIUS_CONVENTION: &str = "sigma = sqrt(w^2 + h^2) / 2 around each ground-truth center";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedInstance {
    pub cx: f64,
    pub cy: f64,
    pub area: usize,
    pub component_id: usize,
}

/// 8-connected components of the foreground; components smaller than
/// `min_area` pixels are dropped. Centroids are in continuous coordinates
/// (pixel `(r, c)` has center `(c + 0.5, r + 0.5)`).
pub fn extract_instances(binary: &PixelMap, min_area: usize) -> Vec<PredictedInstance> {
    let (w, h) = (binary.width(), binary.height());
    let fg = binary.data();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let mut next_id = 0;
    for start in 0..w * h {
        if seen[start] || fg[start] < 0.5 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sum_r, mut sum_c) = (0usize, 0.0, 0.0);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            area += 1;
            sum_r += r as f64;
            sum_c += c as f64;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if !seen[j] && fg[j] >= 0.5 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            out.push(PredictedInstance {
                cx: sum_c / area as f64 + 0.5,
                cy: sum_r / area as f64 + 0.5,
                area,
                component_id: next_id,
            });
        }
        next_id += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Distance-sorted greedy assignment.
    #[default]
    Greedy,
    /// Maximum-cardinality assignment, minimum total distance among those.
    Optimal,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp_pairs: Vec<(usize, usize)>,
    pub fp: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.tp_pairs.len()
    }

    fn from_pairs(mut pairs: Vec<(usize, usize)>, n_pred: usize, n_gt: usize) -> Self {
        pairs.sort_unstable();
        let mut pred_used = vec![false; n_pred];
        let mut gt_used = vec![false; n_gt];
        for &(p, g) in &pairs {
            pred_used[p] = true;
            gt_used[g] = true;
        }
        Self {
            tp_pairs: pairs,
            fp: (0..n_pred).filter(|&p| !pred_used[p]).collect(),
            fn_: (0..n_gt).filter(|&g| !gt_used[g]).collect(),
        }
    }
}

fn candidates(preds: &[[f64; 2]], gts: &[InstanceAnnotation]) -> Vec<(f64, usize, usize)> {
    let mut out = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        let radius = gt.match_radius();
        for (p, pt) in preds.iter().enumerate() {
            let d = (pt[0] - gt.cx).hypot(pt[1] - gt.cy);
            if d <= radius {
                out.push((d, p, g));
            }
        }
    }
    out
}

/// Matches predicted points `[x, y]` to ground-truth instances within each
/// instance's radius.
pub fn match_points(preds: &[[f64; 2]], gts: &[InstanceAnnotation], strategy: MatchStrategy) -> MatchResult {
    let cands = candidates(preds, gts);
    let pairs = match strategy {
        MatchStrategy::Greedy => greedy(cands, preds.len(), gts.len()),
        MatchStrategy::Optimal => optimal(&cands, preds.len(), gts.len()),
    };
    MatchResult::from_pairs(pairs, preds.len(), gts.len())
}

pub fn match_instances(
    preds: &[PredictedInstance],
    gts: &[InstanceAnnotation],
    strategy: MatchStrategy,
) -> MatchResult {
    let pts: Vec<[f64; 2]> = preds.iter().map(|p| [p.cx, p.cy]).collect();
    match_points(&pts, gts, strategy)
}

fn greedy(mut cands: Vec<(f64, usize, usize)>, n_pred: usize, n_gt: usize) -> Vec<(usize, usize)> {
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut pairs = Vec::new();
    for (_, p, g) in cands {
        if !pred_used[p] && !gt_used[g] {
            pred_used[p] = true;
            gt_used[g] = true;
            pairs.push((p, g));
        }
    }
    pairs
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Solves each connected block of the candidate graph with the Hungarian method.
fn optimal(cands: &[(f64, usize, usize)], n_pred: usize, n_gt: usize) -> Vec<(usize, usize)> {
    // nodes: preds 0..n_pred, gts n_pred..
    let mut parent: Vec<usize> = (0..n_pred + n_gt).collect();
    for &(_, p, g) in cands {
        let (a, b) = (find(&mut parent, p), find(&mut parent, n_pred + g));
        if a != b {
            parent[a] = b;
        }
    }
    let mut blocks: std::collections::BTreeMap<usize, Vec<(f64, usize, usize)>> = Default::default();
    for &c in cands {
        let root = find(&mut parent, c.1);
        blocks.entry(root).or_default().push(c);
    }
    let mut pairs = Vec::new();
    for block in blocks.values() {
        let mut ps: Vec<usize> = block.iter().map(|c| c.1).collect();
        let mut gs: Vec<usize> = block.iter().map(|c| c.2).collect();
        ps.sort_unstable();
        ps.dedup();
        gs.sort_unstable();
        gs.dedup();
        let penalty = block.iter().map(|c| c.0).sum::<f64>() + 1.0;
        let transpose = ps.len() > gs.len();
        let (rows, cols) = if transpose { (&gs, &ps) } else { (&ps, &gs) };
        let mut cost = vec![vec![penalty; cols.len()]; rows.len()];
        for &(d, p, g) in block {
            let pi = ps.binary_search(&p).unwrap();
            let gi = gs.binary_search(&g).unwrap();
            if transpose {
                cost[gi][pi] = d;
            } else {
                cost[pi][gi] = d;
            }
        }
        for (r, c) in hungarian(&cost) {
            if cost[r][c] < penalty {
                let (p, g) = if transpose { (cols[c], rows[r]) } else { (rows[r], cols[c]) };
                pairs.push((p, g));
            }
        }
    }
    pairs
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced a rate to 0.
    pub degenerate: bool,
}

pub fn rates_from_counts(tp: usize, fp: usize, fn_: usize) -> Rates {
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision > 0.0 && recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Rates {
        precision,
        recall,
        f1,
        degenerate,
    }
}

pub fn f1_metrics(m: &MatchResult) -> Rates {
    rates_from_counts(m.tp(), m.fp.len(), m.fn_.len())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountMetrics {
    pub mae: f64,
    /// Root of the mean squared count error.
    pub mse: f64,
    /// Mean relative error over scenes whose ground-truth count is positive.
    pub nae: f64,
    pub nae_scenes: usize,
}

pub fn count_metrics(pred: &[usize], gt: &[usize]) -> Result<CountMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted counts vs {} ground-truth counts",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq, mut rel, mut rel_n) = (0.0, 0.0, 0.0, 0usize);
    for (&p, &z) in pred.iter().zip(gt) {
        let d = (z as f64 - p as f64).abs();
        abs += d;
        sq += d * d;
        if z > 0 {
            rel += d / z as f64;
            rel_n += 1;
        }
    }
    Ok(CountMetrics {
        mae: abs / n,
        mse: (sq / n).sqrt(),
        nae: if rel_n > 0 { rel / rel_n as f64 } else { 0.0 },
        nae_scenes: rel_n,
    })
}

/// Bin index for an instance area: A0 = [1, 10] (and anything smaller),
/// A1 = (10, 100], ..., A5 = (1e5, inf).
pub fn scale_bin(area: f64) -> usize {
    SCALE_BIN_EDGES.iter().position(|&e| area <= e).unwrap_or(SCALE_BINS - 1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecall {
    pub matched: [usize; SCALE_BINS],
    pub total: [usize; SCALE_BINS],
}

impl ScaleRecall {
    /// `None` when no ground truth falls in the bin.
    pub fn recall(&self, bin: usize) -> Option<f64> {
        (self.total[bin] > 0).then(|| self.matched[bin] as f64 / self.total[bin] as f64)
    }

    pub fn merge(&mut self, other: &ScaleRecall) {
        for b in 0..SCALE_BINS {
            self.matched[b] += other.matched[b];
            self.total[b] += other.total[b];
        }
    }
}

pub fn scale_level_recall(m: &MatchResult, gts: &[InstanceAnnotation]) -> ScaleRecall {
    let mut out = ScaleRecall::default();
    for g in gts {
        out.total[scale_bin(g.scale())] += 1;
    }
    for &(_, g) in &m.tp_pairs {
        out.matched[scale_bin(gts[g].scale())] += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Set when either variable has zero variance; `r` is then 0.
    pub degenerate: bool,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return Correlation { r: 0.0, degenerate: true };
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Correlation { r: 0.0, degenerate: true };
    }
    Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Correlation of instance area with the vertical and horizontal center coordinate.
pub fn pearson_scale_correlation(scene: &Scene) -> (Correlation, Correlation) {
    let areas: Vec<f64> = scene.annotations.iter().map(|a| a.scale()).collect();
    let ys: Vec<f64> = scene.annotations.iter().map(|a| a.cy).collect();
    let xs: Vec<f64> = scene.annotations.iter().map(|a| a.cx).collect();
    (pearson(&areas, &ys), pearson(&areas, &xs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub min_area: usize,
    pub strategy: MatchStrategy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            min_area: DEFAULT_MIN_AREA,
            strategy: MatchStrategy::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub id: String,
    pub gt_count: usize,
    pub pred_count: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub scale: ScaleRecall,
}

impl SceneEval {
    pub fn rates(&self) -> Rates {
        rates_from_counts(self.tp, self.fp, self.fn_)
    }
}

pub fn evaluate_scene(
    id: &str,
    binary: &PixelMap,
    gts: &[InstanceAnnotation],
    opts: &EvalOptions,
) -> Result<SceneEval> {
    if binary.kind() != MapKind::Binary {
        return Err(Error::invalid("evaluation map", "expected a binary map"));
    }
    let preds = extract_instances(binary, opts.min_area);
    let m = match_instances(&preds, gts, opts.strategy);
    Ok(SceneEval {
        id: id.to_string(),
        gt_count: gts.len(),
        pred_count: preds.len(),
        tp: m.tp(),
        fp: m.fp.len(),
        fn_: m.fn_.len(),
        scale: scale_level_recall(&m, gts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenes: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Pooled over all scenes' match tables.
    pub rates: Rates,
    pub counts: CountMetrics,
    pub scale: ScaleRecall,
}

impl MetricsReport {
    pub fn bin_recalls(&self) -> [Option<f64>; SCALE_BINS] {
        std::array::from_fn(|b| self.scale.recall(b))
    }
}

pub fn aggregate(scenes: &[SceneEval]) -> Result<MetricsReport> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut scale = ScaleRecall::default();
    for s in scenes {
        tp += s.tp;
        fp += s.fp;
        fn_ += s.fn_;
        scale.merge(&s.scale);
    }
    let pred: Vec<usize> = scenes.iter().map(|s| s.pred_count).collect();
    let gt: Vec<usize> = scenes.iter().map(|s| s.gt_count).collect();
    Ok(MetricsReport {
        scenes: scenes.len(),
        tp,
        fp,
        fn_,
        rates: rates_from_counts(tp, fp, fn_),
        counts: count_metrics(&pred, &gt)?,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(cx: f64, cy: f64, w: f64, h: f64) -> InstanceAnnotation {
        InstanceAnnotation::new(cx, cy, w, h).unwrap()
    }

    fn grid(rows: &[&str]) -> PixelMap {
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| if c == '#' { 1.0 } else { 0.0 }))
            .collect();
        PixelMap::new(w, rows.len(), MapKind::Binary, data).unwrap()
    }

    #[test]
    fn components() {
        assert!(extract_instances(&PixelMap::zeros(5, 5, MapKind::Binary), 1).is_empty());
        let block = grid(&[".....", ".###.", ".###.", ".###.", "....."]);
        let got = extract_instances(&block, 2);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].cx, got[0].cy, got[0].area), (2.5, 2.5, 9));
        let diag = grid(&["##...", "##...", "..##.", "..##.", "....."]);
        assert_eq!(extract_instances(&diag, 2).len(), 1);
        let specks = grid(&["#...#", ".....", "..##.", ".....", "#...."]);
        assert_eq!(extract_instances(&specks, 2).len(), 1);
        assert_eq!(extract_instances(&specks, 1).len(), 4);
    }

    #[test]
    fn matching_cases() {
        let gts = [ann(5.0, 5.0, 4.0, 4.0), ann(20.0, 5.0, 4.0, 4.0)];
        let exact = match_points(&[[5.0, 5.0], [20.0, 5.0]], &gts, MatchStrategy::Greedy);
        assert_eq!(exact.tp(), 2);
        assert!(exact.fp.is_empty() && exact.fn_.is_empty());

        // one pred between two overlapping radii goes to the nearer gt
        let close = [ann(5.0, 5.0, 10.0, 10.0), ann(10.0, 5.0, 10.0, 10.0)];
        let m = match_points(&[[8.0, 5.0]], &close, MatchStrategy::Greedy);
        assert_eq!(m.tp_pairs, vec![(0, 1)]);
        assert_eq!(m.fn_, vec![0]);

        let r = gts[0].match_radius();
        let far = match_points(&[[5.0 + r + 1.0, 5.0]], &gts[..1], MatchStrategy::Greedy);
        assert_eq!((far.tp(), far.fp.len(), far.fn_.len()), (0, 1, 1));
        let edge = match_points(&[[5.0 + r, 5.0]], &gts[..1], MatchStrategy::Greedy);
        assert_eq!(edge.tp(), 1);
    }

    #[test]
    fn optimal_beats_greedy_on_chain() {
        // greedy takes the short middle edge and strands both ends
        let gts = [ann(0.0, 0.0, 4.0, 4.0), ann(3.0, 0.0, 4.0, 4.0)];
        let preds = [[1.6, 0.0], [4.5, 0.0]];
        let g = match_points(&preds, &gts, MatchStrategy::Greedy);
        let o = match_points(&preds, &gts, MatchStrategy::Optimal);
        assert_eq!(g.tp(), 1);
        assert_eq!(o.tp(), 2);
        assert_eq!(o.tp_pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let mut got = hungarian(&cost);
        got.sort_unstable();
        let total: f64 = got.iter().map(|&(r, c)| cost[r][c]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rates_cases() {
        let r = rates_from_counts(2, 1, 1);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(!r.degenerate);
        let empty = rates_from_counts(0, 0, 0);
        assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
        assert!(empty.degenerate);
    }

    #[test]
    fn count_cases() {
        let c = count_metrics(&[8], &[10]).unwrap();
        assert_eq!((c.mae, c.mse, c.nae), (2.0, 2.0, 0.2));
        let z = count_metrics(&[0, 0], &[3, 4]).unwrap();
        assert_eq!(z.mae, 3.5);
        assert_eq!(z.mse, (25.0f64 / 2.0).sqrt());
        assert_eq!(z.nae, 1.0);
        assert_eq!(count_metrics(&[5, 6], &[5, 6]).unwrap().mae, 0.0);
        assert!(count_metrics(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn bins() {
        assert_eq!(scale_bin(0.5), 0);
        assert_eq!(scale_bin(10.0), 0);
        assert_eq!(scale_bin(10.0 + 1e-9), 1);
        assert_eq!(scale_bin(100.0), 1);
        assert_eq!(scale_bin(1e5), 4);
        assert_eq!(scale_bin(1e5 + 1.0), 5);
        let gts = [ann(5.0, 5.0, 4.0, 4.0), ann(20.0, 5.0, 4.0, 5.0)];
        let m = match_points(&[[5.0, 5.0], [20.0, 5.0]], &gts, MatchStrategy::Greedy);
        let s = scale_level_recall(&m, &gts);
        assert_eq!(s.recall(1), Some(1.0));
        assert_eq!(s.recall(0), None);
    }

    #[test]
    fn pearson_cases() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).r - 1.0).abs() < 1e-12);
        let c = pearson(&xs, &[2.0; 20]);
        assert!(c.degenerate && c.r == 0.0);
    }
}
