//! Static SVG figures.
//!
//! Output is plain SVG 1.1 text built by hand: no timestamps, no randomness,
//! fixed number formatting, so equal inputs give byte-identical files.
//! Elements carry `class` and `data-*` attributes so that tests (and users)
//! can pull values back out of a figure.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rules::{NamedItem, NamedRule};
use crate::som::MapOverlay;

pub type Rgb = [u8; 3];

/// Piecewise-linear RGB gradient over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorScale {
    anchors: Vec<(f64, Rgb)>,
}

impl ColorScale {
    pub fn new(anchors: Vec<(f64, Rgb)>) -> Result<Self> {
        if anchors.len() < 2
            || anchors[0].0 != 0.0
            || anchors[anchors.len() - 1].0 != 1.0
            || anchors.windows(2).any(|w| w[0].0 >= w[1].0)
        {
            return Err(Error::Render(
                "color anchors must start at 0, end at 1 and increase".into(),
            ));
        }
        Ok(Self { anchors })
    }

    /// Low values blue, high values red.
    pub fn blue_to_red() -> Self {
        Self::new(vec![(0.0, [59, 76, 192]), (1.0, [180, 4, 38])]).expect("valid anchors")
    }

    /// Low values light, high values dark (distance maps).
    pub fn light_to_dark() -> Self {
        Self::new(vec![(0.0, [250, 250, 250]), (1.0, [45, 45, 45])]).expect("valid anchors")
    }

    pub fn map(&self, t: f64) -> Rgb {
        let t = if t.is_nan() { 0.5 } else { t.clamp(0.0, 1.0) };
        let i = self
            .anchors
            .windows(2)
            .position(|w| t <= w[1].0)
            .unwrap_or(self.anchors.len() - 2);
        let (t0, c0) = self.anchors[i];
        let (t1, c1) = self.anchors[i + 1];
        let f = (t - t0) / (t1 - t0);
        let mut out = [0u8; 3];
        for k in 0..3 {
            out[k] = (c0[k] as f64 + f * (c1[k] as f64 - c0[k] as f64)).round() as u8;
        }
        out
    }
}

fn hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn esc(s: &str) -> String {
    let mut o = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => o.push_str("&amp;"),
            '<' => o.push_str("&lt;"),
            '>' => o.push_str("&gt;"),
            '"' => o.push_str("&quot;"),
            '\'' => o.push_str("&apos;"),
            c => o.push(c),
        }
    }
    o
}

fn open_svg(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(out, r##"<?xml version="1.0" encoding="UTF-8"?>"##);
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"##
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="#ffffff"/>"##);
}

fn title(out: &mut String, x: f64, text: &str) {
    if !text.is_empty() {
        let _ = writeln!(
            out,
            r##"<text class="title" x="{x:.2}" y="22" font-size="15" text-anchor="middle">{}</text>"##,
            esc(text)
        );
    }
}

/// Min-max normalization; a constant (or empty) input maps to 0.5.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

const LABEL_COLORS: [Rgb; 6] = [
    [26, 152, 80],
    [31, 120, 180],
    [230, 145, 0],
    [200, 20, 30],
    [106, 61, 154],
    [90, 90, 90],
];

#[derive(Debug, Clone, Default)]
pub struct NodeMapOptions {
    pub title: String,
    /// Ordinal order of overlay labels, used to pick label colours.
    pub label_order: Vec<String>,
}

const NODE_MIN_CELL: f64 = 72.0;
const NODE_LINE: f64 = 11.0;
const NODE_MARGIN: f64 = 40.0;

/// One rectangle per node, node 1 bottom-left and node `rows * cols`
/// top-right, filled from min-max normalized `values`. Overlay members are
/// written one text line each inside their node's cell.
pub fn render_node_map(
    values: &[f64],
    overlay: Option<&MapOverlay>,
    scale: &ColorScale,
    rows: usize,
    cols: usize,
    opts: &NodeMapOptions,
) -> Result<String> {
    if rows == 0 || cols == 0 || values.len() != rows * cols {
        return Err(Error::Render(format!(
            "{} values for a {rows}x{cols} grid",
            values.len()
        )));
    }
    if let Some(o) = overlay {
        if o.rows != rows || o.cols != cols {
            return Err(Error::Render(format!(
                "overlay is {}x{}, grid is {rows}x{cols}",
                o.rows, o.cols
            )));
        }
    }
    let max_members = overlay
        .map(|o| o.members.iter().map(Vec::len).max().unwrap_or(0))
        .unwrap_or(0);
    let cell = NODE_MIN_CELL.max(16.0 + NODE_LINE * max_members as f64);
    let width = 2.0 * NODE_MARGIN + cell * cols as f64;
    let height = 2.0 * NODE_MARGIN + cell * rows as f64;
    let norm = normalize(values);

    let mut label_order = opts.label_order.clone();
    if let Some(o) = overlay {
        let extra: BTreeSet<&str> = o
            .members
            .iter()
            .flatten()
            .filter_map(|e| e.label.as_deref())
            .filter(|l| !label_order.iter().any(|k| k == l))
            .collect();
        label_order.extend(extra.into_iter().map(str::to_string));
    }

    let mut out = String::new();
    open_svg(&mut out, width, height);
    title(&mut out, width / 2.0, &opts.title);
    for node in 1..=rows * cols {
        let (r, c) = ((node - 1) / cols, (node - 1) % cols);
        let x = NODE_MARGIN + c as f64 * cell;
        let y = NODE_MARGIN + (rows - 1 - r) as f64 * cell;
        let fill = hex(scale.map(norm[node - 1]));
        let _ = writeln!(
            out,
            r##"<rect class="node" data-node="{node}" data-value="{}" x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}" stroke="#888888" stroke-width="0.5"/>"##,
            values[node - 1]
        );
        let _ = writeln!(
            out,
            r##"<text class="node-id" x="{:.2}" y="{:.2}" font-size="8" fill="#666666" text-anchor="end">{node}</text>"##,
            x + cell - 3.0,
            y + cell - 3.0
        );
        if let Some(o) = overlay {
            for (i, e) in o.members[node - 1].iter().enumerate() {
                let color = e
                    .label
                    .as_deref()
                    .and_then(|l| label_order.iter().position(|k| k == l))
                    .map(|i| LABEL_COLORS[i % LABEL_COLORS.len()])
                    .unwrap_or([0, 0, 0]);
                let _ = writeln!(
                    out,
                    r##"<text class="member" data-node="{node}" x="{:.2}" y="{:.2}" font-size="9" fill="{}">{}</text>"##,
                    x + 3.0,
                    y + 12.0 + i as f64 * NODE_LINE,
                    hex(color),
                    esc(&e.row_id)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RuleGraphOptions {
    pub title: String,
    pub size: f64,
    pub min_radius: f64,
    pub max_radius: f64,
}

impl Default for RuleGraphOptions {
    fn default() -> Self {
        Self {
            title: String::new(),
            size: 760.0,
            min_radius: 6.0,
            max_radius: 18.0,
        }
    }
}

/// Dense rank of each value among the distinct values, scaled to `[0, 1]`.
/// Equal values share a rank; a single distinct value maps to 0.5.
fn rank_fraction(values: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return vec![0.5; values.len()];
    }
    let top = (distinct.len() - 1) as f64;
    values
        .iter()
        .map(|v| distinct.partition_point(|d| d < v) as f64 / top)
        .collect()
}

/// Layout of a rule graph: item positions on an outer ring, rule circles on
/// an inner ring.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleGraphLayout {
    pub items: Vec<(NamedItem, f64, f64)>,
    /// `(x, y, radius, fill)` per rule, in input order.
    pub rules: Vec<(f64, f64, f64, Rgb)>,
}

pub fn rule_graph_layout(rules: &[NamedRule], opts: &RuleGraphOptions) -> RuleGraphLayout {
    let items: BTreeSet<&NamedItem> = rules
        .iter()
        .flat_map(|r| r.antecedent.iter().chain(std::iter::once(&r.consequent)))
        .collect();
    let centre = opts.size / 2.0;
    let outer = opts.size * 0.38;
    let inner = opts.size * 0.2;
    let ring = |i: usize, n: usize, radius: f64| {
        let a = -PI / 2.0 + 2.0 * PI * i as f64 / n.max(1) as f64;
        (centre + radius * a.cos(), centre + radius * a.sin())
    };
    let item_pos = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let (x, y) = ring(i, items.len(), outer);
            ((*it).clone(), x, y)
        })
        .collect();
    let lift_rank = rank_fraction(&rules.iter().map(|r| r.lift).collect::<Vec<_>>());
    let conf_rank = rank_fraction(&rules.iter().map(|r| r.confidence).collect::<Vec<_>>());
    let fill = ColorScale::new(vec![(0.0, [250, 200, 205]), (1.0, [200, 0, 0])]).expect("valid anchors");
    let rule_pos = (0..rules.len())
        .map(|i| {
            let (x, y) = ring(i, rules.len(), inner);
            let r = opts.min_radius + (opts.max_radius - opts.min_radius) * lift_rank[i];
            (x, y, r, fill.map(conf_rank[i]))
        })
        .collect();
    RuleGraphLayout {
        items: item_pos,
        rules: rule_pos,
    }
}

/// Items on an outer ring in name order, rules on an inner ring in input
/// order. Circle radius grows with the lift rank, red intensity with the
/// confidence rank. Edges run from each antecedent item to the rule and from
/// the rule to its consequent.
pub fn render_rule_graph(rules: &[NamedRule], opts: &RuleGraphOptions) -> String {
    let layout = rule_graph_layout(rules, opts);
    let pos = |it: &NamedItem| {
        layout
            .items
            .iter()
            .find(|(i, _, _)| i == it)
            .map(|(_, x, y)| (*x, *y))
            .expect("every rule item is laid out")
    };
    let consequents: BTreeSet<&NamedItem> = rules.iter().map(|r| &r.consequent).collect();

    let mut out = String::new();
    open_svg(&mut out, opts.size, opts.size);
    title(&mut out, opts.size / 2.0, &opts.title);
    out.push_str("<g class=\"edges\" stroke=\"#9a9a9a\" stroke-width=\"0.8\">\n");
    for (i, r) in rules.iter().enumerate() {
        let (rx, ry, _, _) = layout.rules[i];
        for a in &r.antecedent {
            let (ix, iy) = pos(a);
            let _ = writeln!(
                out,
                r##"<line class="edge-antecedent" data-rule="{i}" x1="{ix:.2}" y1="{iy:.2}" x2="{rx:.2}" y2="{ry:.2}"/>"##
            );
        }
        let (cx, cy) = pos(&r.consequent);
        let _ = writeln!(
            out,
            r##"<line class="edge-consequent" data-rule="{i}" x1="{rx:.2}" y1="{ry:.2}" x2="{cx:.2}" y2="{cy:.2}" stroke="#3c8d3c"/>"##
        );
    }
    out.push_str("</g>\n");
    for (i, r) in rules.iter().enumerate() {
        let (x, y, radius, fill) = layout.rules[i];
        let _ = writeln!(
            out,
            r##"<circle class="rule" data-rule="{i}" data-lift="{}" data-confidence="{}" data-support="{}" cx="{x:.2}" cy="{y:.2}" r="{radius:.3}" fill="{}" stroke="#7a0000" stroke-width="0.6"/>"##,
            r.lift,
            r.confidence,
            r.support,
            hex(fill)
        );
    }
    let centre = opts.size / 2.0;
    for (it, x, y) in &layout.items {
        let is_class = consequents.contains(it);
        let fill = if is_class { "#3cb043" } else { "#5b8fc7" };
        let _ = writeln!(
            out,
            r##"<circle class="{}" cx="{x:.2}" cy="{y:.2}" r="7.000" fill="{fill}"/>"##,
            if is_class { "consequent" } else { "item" }
        );
        let anchor = if *x >= centre { "start" } else { "end" };
        let dx = if *x >= centre { 10.0 } else { -10.0 };
        let _ = writeln!(
            out,
            r##"<text class="item-label" x="{:.2}" y="{:.2}" font-size="10" text-anchor="{anchor}">{}</text>"##,
            x + dx,
            y + 3.0,
            esc(&it.to_string())
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart; bars keep the order of `counts`, heights are
/// proportional to the counts.
pub fn render_histogram(counts: &[(String, usize)], title_text: &str) -> String {
    let bar_w = 34.0;
    let gap = 10.0;
    let left = 50.0;
    let top = 40.0;
    let plot_h = 220.0;
    let bottom = 110.0;
    let width = (left + 20.0 + counts.len() as f64 * (bar_w + gap)).max(240.0);
    let height = top + plot_h + bottom;
    let max = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    let base = top + plot_h;

    let mut out = String::new();
    open_svg(&mut out, width, height);
    title(&mut out, width / 2.0, title_text);
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{base:.2}" stroke="#000000"/>"##
    );
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{left:.2}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="#000000"/>"##,
        width - 10.0
    );
    let _ = writeln!(
        out,
        r##"<text class="tick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{max}</text>"##,
        left - 4.0,
        top + 4.0
    );
    for (i, (label, count)) in counts.iter().enumerate() {
        let h = if max == 0 {
            0.0
        } else {
            plot_h * *count as f64 / max as f64
        };
        let x = left + gap + i as f64 * (bar_w + gap);
        let _ = writeln!(
            out,
            r##"<rect class="bar" data-label="{}" data-count="{count}" x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{h:.4}" fill="#4a7ab5"/>"##,
            esc(label),
            base - h
        );
        let lx = x + bar_w / 2.0;
        let ly = base + 10.0;
        let _ = writeln!(
            out,
            r##"<text class="bar-label" x="{lx:.2}" y="{ly:.2}" font-size="10" text-anchor="end" transform="rotate(-60 {lx:.2} {ly:.2})">{}</text>"##,
            esc(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// `<run-id>_<figure-kind>_<attribute>.svg`, with characters outside
/// `[A-Za-z0-9._-]` replaced by `_`.
pub fn figure_file_name(run_id: &str, kind: &str, attribute: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    format!("{}_{}_{}.svg", clean(run_id), clean(kind), clean(attribute))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_scale_endpoints_and_validation() {
        let s = ColorScale::blue_to_red();
        assert_eq!(s.map(0.0), [59, 76, 192]);
        assert_eq!(s.map(1.0), [180, 4, 38]);
        assert_eq!(s.map(2.0), s.map(1.0));
        assert!(ColorScale::new(vec![(0.0, [0, 0, 0])]).is_err());
        assert!(ColorScale::new(vec![(0.1, [0, 0, 0]), (1.0, [1, 1, 1])]).is_err());
    }

    #[test]
    fn normalize_constant_is_midpoint() {
        assert_eq!(normalize(&[3.0, 3.0]), vec![0.5, 0.5]);
        assert_eq!(normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn rank_fraction_ties() {
        assert_eq!(rank_fraction(&[2.0, 1.0, 2.0, 3.0]), vec![0.5, 0.0, 0.5, 1.0]);
        assert_eq!(rank_fraction(&[4.0]), vec![0.5]);
    }

    #[test]
    fn node_map_dimension_mismatch() {
        let e = render_node_map(&[1.0; 3], None, &ColorScale::blue_to_red(), 2, 2, &Default::default());
        assert!(e.is_err());
    }

    #[test]
    fn escapes_markup() {
        let svg = render_histogram(&[("a<b & \"c\"".into(), 1)], "t");
        assert!(svg.contains("a&lt;b &amp; &quot;c&quot;"));
    }

    #[test]
    fn file_names() {
        assert_eq!(figure_file_name("run", "plane", "Avg. Temp"), "run_plane_Avg._Temp.svg");
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn color_scales_are_monotone(a in 0f64..=1.0, b in 0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let s = ColorScale::blue_to_red();
            let (p, q) = (s.map(lo), s.map(hi));
            // red rises, green and blue fall
            prop_assert!(p[0] <= q[0] && p[1] >= q[1] && p[2] >= q[2]);
            let d = ColorScale::light_to_dark();
            prop_assert!(d.map(lo).iter().zip(d.map(hi)).all(|(x, y)| *x >= y));
        }

        #[test]
        fn node_maps_are_pure_and_well_formed(
            (r, c, values) in (1usize..7, 1usize..7)
                .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-5f64..5.0, r * c)))
        ) {
            let opts = NodeMapOptions { title: "t & t".into(), ..Default::default() };
            let a = render_node_map(&values, None, &ColorScale::blue_to_red(), r, c, &opts).unwrap();
            let b = render_node_map(&values, None, &ColorScale::blue_to_red(), r, c, &opts).unwrap();
            prop_assert_eq!(&a, &b);
            let doc = roxmltree::Document::parse(&a).unwrap();
            prop_assert_eq!(doc.root_element().tag_name().namespace(), Some("http://www.w3.org/2000/svg"));
            let nodes: Vec<roxmltree::Node> = doc
                .descendants()
                .filter(|n| n.attribute("class") == Some("node"))
                .collect();
            prop_assert_eq!(nodes.len(), r * c);
            // node 1 bottom-left, node r*c top-right
            let xy = |n: &roxmltree::Node| -> (f64, f64) {
                (n.attribute("x").unwrap().parse().unwrap(), n.attribute("y").unwrap().parse().unwrap())
            };
            let (first, last) = (xy(&nodes[0]), xy(&nodes[r * c - 1]));
            let corner_low = nodes.iter().map(xy).all(|p| p.0 >= first.0 && p.1 <= first.1);
            let corner_high = nodes.iter().map(xy).all(|p| p.0 <= last.0 && p.1 >= last.1);
            prop_assert!(corner_low && corner_high);
        }
    }
}
