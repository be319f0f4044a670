use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use kanok::corpus::{
    build_corpus, fetch_silhouettes, normalize_polarity, preprocess, synth_silhouette, synthetic_seeds, CorpusConfig,
    CorpusInput, PhylopicClient, RemoteImage, SilhouetteApi,
};
use kanok::manifest::{Domain, Split};
use kanok::{Error, RasterImage, Result};

fn small() -> CorpusConfig {
    CorpusConfig { canvas_px: 64, n_train: 8, n_test: 2, ..CorpusConfig::default() }
}

/// Number of 8-connected components of pixels darker than the threshold.
fn components(img: &RasterImage) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || img.pixels()[start] >= 128 {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && img.pixels()[j] < 128 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

fn ink_bbox(img: &RasterImage) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) < 255 {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b
}

/// A dark ellipse on white, optionally inverted, at an off-center spot.
fn ellipse_png(w: usize, h: usize, invert: bool) -> Vec<u8> {
    let mut img = RasterImage::blank(w, h).unwrap();
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 - w as f64 * 0.3) / (w as f64 * 0.2);
            let dy = (y as f64 - h as f64 * 0.6) / (h as f64 * 0.3);
            if dx * dx + dy * dy <= 1.0 {
                img.set(x, y, 0);
            }
        }
    }
    if invert {
        img = img.inverted();
    }
    img.encode_png().unwrap()
}

#[test]
fn all_black_input_fills_inner_region() {
    let cfg = small();
    let raw = RasterImage::filled(40, 40, 0).unwrap().encode_png().unwrap();
    let out = preprocess(&raw, &cfg).unwrap();
    let n = cfg.canvas_px as f64;
    let lo = (cfg.margin_frac * n).ceil() as usize;
    let hi = ((1.0 - cfg.margin_frac) * n).floor() as usize;
    for y in 0..64 {
        for x in 0..64 {
            let inner = (lo..hi).contains(&x) && (lo..hi).contains(&y);
            let border = x + 1 < lo || x > hi || y + 1 < lo || y > hi;
            if inner {
                assert_eq!(out.get(x, y), 0, "({x},{y})");
            } else if border {
                assert_eq!(out.get(x, y), 255, "({x},{y})");
            }
        }
    }
}

#[test]
fn all_white_input_is_empty() {
    let raw = RasterImage::blank(40, 40).unwrap().encode_png().unwrap();
    assert!(preprocess(&raw, &small()).is_err());
}

#[test]
fn polarity_is_normalized() {
    let cfg = small();
    let dark = preprocess(&ellipse_png(80, 60, false), &cfg).unwrap();
    let light = preprocess(&ellipse_png(80, 60, true), &cfg).unwrap();
    assert!(dark.ink_fraction() < 0.5);
    assert!(light.max_abs_diff(&dark).unwrap() <= 1);
}

#[test]
fn preprocess_centers_and_fits_inner_region() {
    let cfg = small();
    let out = preprocess(&ellipse_png(120, 90, false), &cfg).unwrap();
    let (x0, y0, x1, y1) = ink_bbox(&out).unwrap();
    let lo = (cfg.margin_frac * 64.0).floor() as usize;
    let hi = ((1.0 - cfg.margin_frac) * 64.0).ceil() as usize;
    assert!(x0 >= lo && y0 >= lo && x1 < hi && y1 < hi);
    // Long side fills the inner region; the short side is centered.
    assert!(y1 - y0 + 1 >= hi - lo - 1);
    let cx = (x0 + x1) as f64 / 2.0;
    assert!((cx - 31.5).abs() <= 1.0, "cx {cx}");
}

#[test]
fn polarity_rule_on_direct_images() {
    let black = RasterImage::filled(4, 4, 0).unwrap();
    assert_eq!(normalize_polarity(&black, 128).unwrap(), black);
    assert!(normalize_polarity(&RasterImage::blank(4, 4).unwrap(), 128).is_err());
}

#[test]
fn vector_payloads_are_accepted() {
    let text = kanok::motif::element(3).unwrap().path.to_text();
    let out = preprocess(text.as_bytes(), &small()).unwrap();
    assert!(out.ink_fraction() > 0.05);
}

#[test]
fn garbage_payload_is_an_error() {
    assert!(preprocess(b"not an image", &small()).is_err());
}

#[test]
fn synthetic_silhouettes_are_single_blobs() {
    let cfg = small();
    for seed in 0..100 {
        let img = synth_silhouette(seed, &cfg).unwrap();
        assert_eq!(components(&img), 1, "seed {seed}");
        assert_eq!(img, synth_silhouette(seed, &cfg).unwrap());
    }
}

#[test]
fn synthetic_silhouette_ink_is_moderate() {
    let cfg = small();
    for seed in 0..1000 {
        let f = synth_silhouette(seed, &cfg).unwrap().ink_fraction();
        assert!((0.10..=0.60).contains(&f), "seed {seed}: {f}");
    }
}

#[test]
fn seed_corpus_splits_and_reproduces() {
    let cfg = small();
    let seeds = synthetic_seeds(11, 10);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = build_corpus(CorpusInput::Seeds(&seeds), &cfg, a.path()).unwrap();
    let mb = build_corpus(CorpusInput::Seeds(&seeds), &cfg, b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.domain, Domain::Silhouette);
    assert_eq!((ma.count(Split::Train), ma.count(Split::Test)), (8, 2));
    ma.validate(a.path()).unwrap();
    assert_eq!(ma.files(a.path(), Split::Test).len(), 2);
    assert!(ma.entries.iter().all(|e| e.file.starts_with("silhouette_")));
}

#[test]
fn too_few_inputs_is_insufficient() {
    let seeds = synthetic_seeds(1, 9);
    let dir = tempfile::tempdir().unwrap();
    match build_corpus(CorpusInput::Seeds(&seeds), &small(), dir.path()) {
        Err(Error::Insufficient { need: 10, have: 9 }) => {}
        other => panic!("{other:?}"),
    }
}

/// In-memory API serving generated payloads.
struct FakeApi {
    available: usize,
    broken: Vec<usize>,
    calls: usize,
}

impl FakeApi {
    fn new(available: usize) -> Self {
        Self { available, broken: Vec::new(), calls: 0 }
    }
}

impl SilhouetteApi for FakeApi {
    fn list_images(&mut self, _taxon: &str, n: usize) -> Result<Vec<RemoteImage>> {
        self.calls += 1;
        Ok((0..self.available.min(n))
            .map(|i| RemoteImage {
                source_id: format!("img-{i:04}"),
                url: format!("/files/{i}.png"),
                license: "cc0".into(),
                attribution: None,
            })
            .collect())
    }

    fn download(&mut self, image: &RemoteImage) -> Result<Vec<u8>> {
        self.calls += 1;
        let i: usize = image.source_id[4..].parse().unwrap();
        if self.broken.contains(&i) {
            return Err(Error::Network { transient: false, msg: "gone".into() });
        }
        Ok(ellipse_png(40 + i % 7, 30 + i % 5, i % 2 == 1))
    }

    fn requests(&self) -> usize {
        self.calls
    }
}

#[test]
fn fetch_caches_and_builds_full_corpus() {
    let cache = tempfile::tempdir().unwrap();
    let mut api = FakeApi::new(400);
    let out = fetch_silhouettes(&mut api, "aves", 350, cache.path()).unwrap();
    assert_eq!(out.records.len(), 350);
    assert_eq!(out.downloads, 350);
    assert!(!out.partial);

    let mut warm = FakeApi::new(400);
    let again = fetch_silhouettes(&mut warm, "aves", 350, cache.path()).unwrap();
    assert_eq!(warm.requests(), 0);
    assert_eq!(again.records, out.records);

    let cfg = CorpusConfig { canvas_px: 32, n_train: 300, n_test: 50, ..CorpusConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = build_corpus(CorpusInput::Records { records: &out.records, cache_dir: cache.path() }, &cfg, dir.path())
        .unwrap();
    assert_eq!((m.count(Split::Train), m.count(Split::Test)), (300, 50));
    assert!(m.entries.iter().all(|e| e.source_id.is_some() && e.license.as_deref() == Some("cc0")));
    m.validate(dir.path()).unwrap();
}

#[test]
fn fetch_zero_makes_no_calls() {
    let cache = tempfile::tempdir().unwrap();
    let mut api = FakeApi::new(10);
    let out = fetch_silhouettes(&mut api, "aves", 0, cache.path()).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(api.requests(), 0);
}

#[test]
fn short_supply_is_partial() {
    let cache = tempfile::tempdir().unwrap();
    let mut api = FakeApi::new(5);
    api.broken.push(2);
    let out = fetch_silhouettes(&mut api, "aves", 8, cache.path()).unwrap();
    assert!(out.partial);
    assert_eq!(out.records.len(), 4);
    // The exhausted listing is reused; only the broken item is retried.
    let mut again = FakeApi::new(5);
    again.broken.push(2);
    fetch_silhouettes(&mut again, "aves", 8, cache.path()).unwrap();
    assert_eq!(again.requests(), 1);
}

#[test]
fn corrupted_cache_entry_is_refetched() {
    let cache = tempfile::tempdir().unwrap();
    let mut api = FakeApi::new(3);
    fetch_silhouettes(&mut api, "aves", 3, cache.path()).unwrap();
    std::fs::write(cache.path().join("img-0001.payload"), b"junk").unwrap();
    let mut again = FakeApi::new(3);
    let out = fetch_silhouettes(&mut again, "aves", 3, cache.path()).unwrap();
    assert_eq!(out.downloads, 1);
}

/// Serves canned responses by path+query and counts requests.
fn serve(routes: HashMap<String, (u16, Vec<u8>)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            if reader.read_line(&mut line).is_err() {
                continue;
            }
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
                    break;
                }
            }
            counter.fetch_add(1, Ordering::SeqCst);
            let target = line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let (status, body) = routes.get(&target).cloned().unwrap_or((404, b"{}".to_vec()));
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(&body);
        }
    });
    (format!("http://{addr}"), hits)
}

fn json(v: serde_json::Value) -> (u16, Vec<u8>) {
    (200, serde_json::to_vec(&v).unwrap())
}

fn image_item(id: &str) -> serde_json::Value {
    serde_json::json!({
        "uuid": id,
        "attribution": "A. Person",
        "_links": {
            "license": {"href": "https://creativecommons.org/publicdomain/zero/1.0/"},
            "rasterFiles": [{"href": format!("/raster/{id}.png"), "sizes": "128x96"}]
        }
    })
}

fn routes(base_id: &str) -> HashMap<String, (u16, Vec<u8>)> {
    let mut r = HashMap::new();
    r.insert("/".into(), json(serde_json::json!({"build": 7})));
    r.insert(
        "/nodes?build=7&filter_name=aves&page=0".into(),
        json(serde_json::json!({"_links": {"items": [{"href": "/nodes/clade-1?build=7"}]}})),
    );
    for page in 0..2 {
        let items: Vec<_> = (0..3).map(|i| image_item(&format!("{base_id}{}", page * 3 + i))).collect();
        r.insert(
            format!("/images?build=7&filter_clade=clade-1&page={page}&embed_items=true"),
            json(serde_json::json!({"totalPages": 2, "_embedded": {"items": items}})),
        );
    }
    for i in 0..6 {
        r.insert(format!("/raster/{base_id}{i}.png"), (200, ellipse_png(128, 96, false)));
    }
    r
}

fn fetch_via_http(base: &str, n: usize, cache: &Path) -> Result<kanok::corpus::FetchOutcome> {
    let mut client = PhylopicClient::new(base, Duration::ZERO);
    fetch_silhouettes(&mut client, "bird", n, cache)
}

#[test]
fn http_client_lists_pages_and_downloads() {
    let (base, hits) = serve(routes("u"));
    let cache = tempfile::tempdir().unwrap();
    let out = fetch_via_http(&base, 5, cache.path()).unwrap();
    assert_eq!(out.records.len(), 5);
    assert!(!out.partial);
    assert_eq!(out.records[0].attribution.as_deref(), Some("A. Person"));
    // root + node + 2 listing pages + 5 downloads
    assert_eq!(hits.load(Ordering::SeqCst), 9);

    let warm = fetch_via_http(&base, 5, cache.path()).unwrap();
    assert_eq!(warm.downloads, 0);
    assert_eq!(hits.load(Ordering::SeqCst), 9);
}

#[test]
fn http_server_errors_are_transient() {
    let mut r = routes("v");
    r.insert("/raster/v0.png".into(), (503, Vec::new()));
    let (base, _) = serve(r);
    let cache = tempfile::tempdir().unwrap();
    match fetch_via_http(&base, 2, cache.path()) {
        Err(Error::Network { transient: true, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn http_missing_file_is_skipped() {
    let mut r = routes("w");
    r.remove("/raster/w1.png");
    let (base, _) = serve(r);
    let cache = tempfile::tempdir().unwrap();
    let out = fetch_via_http(&base, 3, cache.path()).unwrap();
    assert!(out.partial);
    assert_eq!(out.records.len(), 2);
}
