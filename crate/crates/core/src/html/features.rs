//! The 65 HTML features: links and domains, tag-path statistics, tag and
//! text counts, embedded-file counts, and capture metadata.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::dom::{DomTree, NodeKind};

pub const N_HTML_FEATURES: usize = 65;

pub const FEATURE_NAMES: [&str; N_HTML_FEATURES] = [
    "links",
    "same_domain_links",
    "third_party_links",
    "link_domains",
    "unique_link_domains",
    "tag_paths",
    "unique_tag_paths",
    "unique_tags_per_path_sum",
    "unique_tags_per_path_median",
    "unique_tags_per_path_mean",
    "unique_tags_per_path_std",
    "direction_changes",
    "direction_non_changes",
    "positive_directions",
    "negative_directions",
    "depth_sum",
    "depth_std",
    "paths_at_max_depth",
    "paths_at_min_depth",
    "paths_at_median_depth",
    "paths_at_rounded_mean_depth",
    "paths_at_p30_depth",
    "paths_at_p70_depth",
    "max_depth",
    "min_depth",
    "median_depth",
    "rounded_mean_depth",
    "p30_depth",
    "p70_depth",
    "tags",
    "unique_tags",
    "comments",
    "attributes",
    "unique_attributes",
    "characters",
    "script_characters",
    "style_attribute_characters",
    "attribute_characters",
    "text_characters",
    "data_attribute_characters",
    "text_words",
    "data_attribute_words",
    "img_tags",
    "img_tag_proportion",
    "png_files",
    "png_proportion",
    "ico_files",
    "ico_proportion",
    "jpg_files",
    "jpg_proportion",
    "gif_files",
    "gif_proportion",
    "bmp_files",
    "bmp_proportion",
    "html_files",
    "html_proportion",
    "css_files",
    "css_proportion",
    "js_files",
    "js_proportion",
    "mp3_files",
    "avi_files",
    "load_seconds",
    "html_bytes",
    "capture_bytes",
];

/// Extensions with a count and a proportion feature, in feature order.
const PROPORTIONAL_EXT: [&str; 8] = ["png", "ico", "jpg", "gif", "bmp", "html", "css", "js"];

/// Two-label public suffixes treated as a single suffix when deriving a
/// registrable domain.
const SECOND_LEVEL_SUFFIXES: &[&str] = &[
    "co.uk", "org.uk", "ac.uk", "gov.uk", "me.uk", "com.au", "net.au", "org.au", "co.jp", "ne.jp", "or.jp", "co.kr",
    "or.kr", "com.br", "com.cn", "net.cn", "org.cn", "co.in", "co.nz", "com.mx", "com.tr", "co.za", "com.tw", "com.hk",
    "com.sg", "com.ar",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HtmlMeta {
    pub capture_bytes: Option<f64>,
    pub html_bytes: Option<f64>,
    pub duration_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtmlFeatureRow {
    pub values: Vec<f64>,
    pub site: String,
    pub instance_id: String,
}

/// Last two labels of a host, or three under a known two-label suffix.
pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if host.parse::<std::net::IpAddr>().is_ok() {
        return host;
    }
    let labels: Vec<&str> = host.split('.').collect();
    let keep = if labels.len() >= 3 && SECOND_LEVEL_SUFFIXES.contains(&labels[labels.len() - 2..].join(".").as_str()) {
        3
    } else {
        2
    };
    labels[labels.len().saturating_sub(keep)..].join(".")
}

/// Host of an absolute or protocol-relative URL; `None` for relative ones.
pub fn link_host(link: &str) -> Option<String> {
    let link = link.trim();
    let absolute = if link.starts_with("//") {
        format!("http:{link}")
    } else {
        link.to_string()
    };
    let url = url::Url::parse(&absolute).ok()?;
    url.host_str().map(|h| h.to_ascii_lowercase())
}

fn page_domain(page: &str) -> Option<String> {
    link_host(page)
        .or_else(|| link_host(&format!("//{page}")))
        .map(|h| registrable_domain(&h))
}

/// Lower-case file extension of a reference's path, if any.
pub fn file_extension(reference: &str) -> Option<String> {
    let path = reference.split(['?', '#']).next().unwrap_or("");
    let path = match path.find("://") {
        Some(p) => path[p + 3..].split_once('/').map_or("", |(_, rest)| rest),
        None => path.strip_prefix("//").map_or(path, |p| p.split_once('/').map_or("", |(_, r)| r)),
    };
    let last = path.rsplit('/').next().unwrap_or("");
    let (stem, ext) = last.rsplit_once('.')?;
    if stem.is_empty() || ext.is_empty() || ext.len() > 5 || !ext.chars().all(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    let ext = ext.to_ascii_lowercase();
    Some(if ext == "jpeg" { "jpg".into() } else { ext })
}

fn is_link(v: &str) -> bool {
    let v = v.trim();
    let lower = v.to_ascii_lowercase();
    !v.is_empty()
        && !v.starts_with('#')
        && !["javascript:", "mailto:", "data:", "tel:"].iter().any(|p| lower.starts_with(p))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile of sorted data, `p` in (0, 100].
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Sign transitions between consecutive depths: (positive, negative,
/// direction changes, non-changes). A change is a sign flip between
/// consecutive non-zero transitions; a zero transition counts as a non-change.
pub fn depth_transitions(depths: &[usize]) -> (usize, usize, usize, usize) {
    let steps: Vec<i64> = depths.windows(2).map(|w| (w[1] as i64 - w[0] as i64).signum()).collect();
    let pos = steps.iter().filter(|&&s| s > 0).count();
    let neg = steps.iter().filter(|&&s| s < 0).count();
    let mut changes = 0;
    let mut non = 0;
    for w in steps.windows(2) {
        if w[0] != 0 && w[1] != 0 && w[0] != w[1] {
            changes += 1;
        } else {
            non += 1;
        }
    }
    (pos, neg, changes, non)
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Compute the 65 features of a parsed document. `page` is the page URL or
/// bare host used to tell same-site from third-party links.
pub fn extract_html_features(dom: &DomTree, source_chars: usize, meta: &HtmlMeta, page: Option<&str>) -> Vec<f64> {
    let mut f = Vec::with_capacity(N_HTML_FEATURES);
    let page_dom = page.and_then(page_domain);

    // links and domains
    let mut links = 0usize;
    let mut same = 0usize;
    let mut hosts = Vec::new();
    let mut refs: Vec<String> = Vec::new();
    for id in dom.elements() {
        for (name, value) in dom.attrs(id) {
            if name != "href" && name != "src" {
                continue;
            }
            refs.push(value.clone());
            if !is_link(value) {
                continue;
            }
            links += 1;
            match link_host(value) {
                Some(h) => {
                    if page_dom.as_deref() == Some(registrable_domain(&h).as_str()) {
                        same += 1;
                    }
                    hosts.push(h);
                }
                None => same += 1,
            }
        }
    }
    let unique_hosts: HashSet<&String> = hosts.iter().collect();
    f.extend([links, same, links - same, hosts.len(), unique_hosts.len()].map(|v| v as f64));

    // tag paths
    let paths = dom.tag_paths();
    let unique_paths: HashSet<&Vec<String>> = paths.iter().collect();
    let mut per_path: Vec<f64> = paths
        .iter()
        .map(|p| p.iter().collect::<HashSet<_>>().len() as f64)
        .collect();
    per_path.sort_by(f64::total_cmp);
    let (pp_mean, pp_std) = mean_std(&per_path);
    f.extend([
        paths.len() as f64,
        unique_paths.len() as f64,
        per_path.iter().sum(),
        median(&per_path),
        pp_mean,
        pp_std,
    ]);
    let depths: Vec<usize> = paths.iter().map(Vec::len).collect();
    let (pos, neg, changes, non) = depth_transitions(&depths);
    f.extend([changes, non, pos, neg].map(|v| v as f64));
    let mut sorted: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let (d_mean, d_std) = mean_std(&sorted);
    let max = sorted.last().copied().unwrap_or(0.0);
    let min = sorted.first().copied().unwrap_or(0.0);
    let med = median(&sorted);
    let rmean = d_mean.round();
    let p30 = percentile_nearest_rank(&sorted, 30.0);
    let p70 = percentile_nearest_rank(&sorted, 70.0);
    let at = |v: f64| sorted.iter().filter(|&&d| d == v).count() as f64;
    f.extend([sorted.iter().sum(), d_std]);
    if sorted.is_empty() {
        f.extend([0.0; 6]);
    } else {
        f.extend([at(max), at(min), at(med), at(rmean), at(p30), at(p70)]);
    }
    f.extend([max, min, med, rmean, p30, p70]);

    // tags, attributes, characters, words
    let mut tags = 0usize;
    let mut tag_names = BTreeSet::new();
    let mut comments = 0usize;
    let mut attrs = 0usize;
    let mut attr_names = BTreeSet::new();
    let mut style_chars = 0usize;
    let mut attr_chars = 0usize;
    let mut data_chars = 0usize;
    let mut data_words = 0usize;
    let mut imgs = 0usize;
    for id in dom.preorder() {
        match &dom.nodes[id].kind {
            NodeKind::Element { tag, attrs: a } => {
                tags += 1;
                tag_names.insert(tag.as_str());
                imgs += usize::from(tag == "img");
                for (n, v) in a {
                    attrs += 1;
                    attr_names.insert(n.as_str());
                    let c = v.chars().count();
                    attr_chars += c;
                    if n == "style" {
                        style_chars += c;
                    }
                    if n.starts_with("data") {
                        data_chars += c;
                        data_words += words(v);
                    }
                }
            }
            NodeKind::Comment(_) => comments += 1,
            _ => {}
        }
    }
    let mut script_chars = 0usize;
    let mut text_chars = 0usize;
    let mut text_words = 0usize;
    for id in dom.preorder() {
        if let NodeKind::Text(t) = &dom.nodes[id].kind {
            text_chars += t.chars().count();
            text_words += words(t);
        }
        if dom.tag(id) == Some("script") {
            for &c in &dom.nodes[id].children {
                if let NodeKind::Text(t) = &dom.nodes[c].kind {
                    script_chars += t.chars().count();
                }
            }
        }
    }
    f.extend(
        [
            tags,
            tag_names.len(),
            comments,
            attrs,
            attr_names.len(),
            source_chars,
            script_chars,
            style_chars,
            attr_chars,
            text_chars + style_chars,
            data_chars,
            text_words,
            data_words,
        ]
        .map(|v| v as f64),
    );

    // embedded files
    let exts: Vec<String> = refs.iter().filter_map(|r| file_extension(r)).collect();
    let denom = exts.len() as f64;
    let share = |n: usize, d: f64| if d > 0.0 { n as f64 / d } else { 0.0 };
    f.push(imgs as f64);
    f.push(share(imgs, paths.len() as f64));
    for e in PROPORTIONAL_EXT {
        let n = exts.iter().filter(|x| *x == e).count();
        f.push(n as f64);
        f.push(share(n, denom));
    }
    for e in ["mp3", "avi"] {
        f.push(exts.iter().filter(|x| *x == e).count() as f64);
    }

    // capture metadata
    for (name, v) in [
        ("duration_seconds", meta.duration_seconds),
        ("html_bytes", meta.html_bytes),
        ("capture_bytes", meta.capture_bytes),
    ] {
        if v.is_none() {
            log::warn!("missing {name}; using 0");
        }
        f.push(v.unwrap_or(0.0));
    }
    debug_assert_eq!(f.len(), N_HTML_FEATURES);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::html::parse_str;

    fn feats(doc: &str, page: Option<&str>) -> Vec<f64> {
        extract_html_features(&parse_str(doc), doc.chars().count(), &HtmlMeta::default(), page)
    }

    #[test]
    fn names_cover_all_features() {
        assert_eq!(feats("", None).len(), N_HTML_FEATURES);
        let uniq: HashSet<&str> = FEATURE_NAMES.iter().copied().collect();
        assert_eq!(uniq.len(), N_HTML_FEATURES);
    }

    #[test]
    fn nested_link_document() {
        let f = feats("<div><a><img></a></div><img>", None);
        assert_eq!(f[5], 4.0);
        assert_eq!(f[6], 4.0);
        assert_eq!(f[23], 3.0);
        assert_eq!(f[24], 1.0);
        assert_eq!(f[15], 7.0);
        assert_eq!(f[42], 2.0);
        assert_eq!(f[43], 0.5);
        assert_eq!(&f[..5], &[0.0; 5]);
    }

    #[test]
    fn transitions_hand_example() {
        assert_eq!(depth_transitions(&[1, 2, 3, 1]), (2, 1, 1, 1));
        assert_eq!(depth_transitions(&[1, 1, 1]), (0, 0, 0, 1));
        assert_eq!(depth_transitions(&[]), (0, 0, 0, 0));
    }

    #[test]
    fn extension_counts() {
        let f = feats(r#"<img src="a.png"><img src="b.jpg">"#, None);
        assert_eq!(f[44], 1.0);
        assert_eq!(f[45], 0.5);
        assert_eq!(f[48], 1.0);
        assert_eq!(f[49], 0.5);
        assert_eq!(file_extension("https://x.com/a/b.JPEG?x=1"), Some("jpg".into()));
        assert_eq!(file_extension("https://x.com"), None);
        assert_eq!(file_extension("//cdn.x.com/lib.js"), Some("js".into()));
        assert_eq!(file_extension("/dir.d/file"), None);
    }

    #[test]
    fn links_and_domains() {
        let doc = r##"<a href="/a">x</a><a href="https://www.example.com/b">y</a>
            <script src="https://cdn.other.net/s.js"></script><a href="https://other.net">z</a>
            <a href="#top">t</a><link href="//static.example.com/x.css">"##;
        let f = feats(doc, Some("https://example.com/"));
        assert_eq!(&f[..5], &[5.0, 3.0, 2.0, 4.0, 4.0]);
        assert_eq!(registrable_domain("a.b.example.co.uk"), "example.co.uk");
        assert_eq!(registrable_domain("example.com"), "example.com");
        let f = feats(doc, Some("example.com"));
        assert_eq!(f[1], 3.0);
    }

    #[test]
    fn text_and_attribute_counts() {
        let doc = r#"<p style="color:red" data-x="a b">hello world</p><script>var a;</script><!-- c -->"#;
        let f = feats(doc, None);
        assert_eq!(f[31], 1.0); // comments
        assert_eq!(f[32], 2.0); // attributes
        assert_eq!(f[35], 6.0); // script chars
        assert_eq!(f[36], 9.0); // style attribute chars
        assert_eq!(f[39], 3.0); // data attribute chars
        assert_eq!(f[41], 2.0); // data attribute words
        assert_eq!(f[38], 26.0); // text 11 + script 6 + style attribute 9
        assert_eq!(f[40], 4.0); // text words: hello world var a;
    }

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&v, 30.0), 3.0);
        assert_eq!(percentile_nearest_rank(&v, 70.0), 7.0);
        assert_eq!(percentile_nearest_rank(&[5.0], 30.0), 5.0);
    }

    #[test]
    fn re_extraction_bit_identical() {
        let doc = "<div><span>a</span><img src=x.gif></div>";
        let a = feats(doc, Some("x.org"));
        let b = feats(doc, Some("x.org"));
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
