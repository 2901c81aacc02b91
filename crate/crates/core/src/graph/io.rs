use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ClassSplit, GraphDataset, SplitSource};

/// Input records dropped while building a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub self_loops: usize,
    pub duplicates: usize,
    /// Citation rows naming a paper absent from the content file.
    pub unknown_ids: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_usize_pair(path: &Path, line: usize, l: &str) -> Result<(usize, usize)> {
    let mut it = l.split_whitespace();
    let mut next = || -> Result<usize> {
        let tok = it.next().ok_or_else(|| parse_err(path, line, "expected two integers"))?;
        tok.parse().map_err(|_| parse_err(path, line, format!("bad integer {tok:?}")))
    };
    let pair = (next()?, next()?);
    if it.next().is_some() {
        return Err(parse_err(path, line, "expected two integers"));
    }
    Ok(pair)
}

fn parse_features(path: &Path) -> Result<Tensor<f64>> {
    let text = read(path)?;
    let mut it = lines(&text);
    let (line, header) = it.next().ok_or_else(|| parse_err(path, 1, "missing \"n d\" header"))?;
    let (n, d) = parse_usize_pair(path, line, header)?;
    if n == 0 || d == 0 {
        return Err(parse_err(path, line, "n and d must be positive"));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (line, l) in it {
        if rows == n {
            return Err(parse_err(path, line, format!("more than {n} feature rows")));
        }
        let before = data.len();
        for tok in l.split_whitespace() {
            let v: f64 =
                tok.parse().map_err(|_| parse_err(path, line, format!("bad number {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(parse_err(path, line, format!("expected {d} values, found {}", data.len() - before)));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(path, text.lines().count(), format!("expected {n} rows, found {rows}")));
    }
    Tensor::from_vec(&[n, d], data)
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    lines(&text).map(|(line, l)| parse_usize_pair(path, line, l)).collect()
}

fn parse_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut labels = vec![None; n];
    for (line, l) in lines(&text) {
        let (node, class) = parse_usize_pair(path, line, l)?;
        if node >= n {
            return Err(Error::Range { id: node, n });
        }
        if labels[node].replace(class).is_some() {
            return Err(parse_err(path, line, format!("node {node} labelled twice")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Label(format!("node {i} has no label in {}", path.display()))))
        .collect()
}

/// Parses a split file with `train:`, `val:` and `test:` lines of
/// comma-separated class ids.
pub fn parse_split(path: &Path) -> Result<ClassSplit> {
    let text = read(path)?;
    let mut split = ClassSplit::default();
    let mut seen = [false; 3];
    for (line, l) in lines(&text) {
        let (key, rest) =
            l.split_once(':').ok_or_else(|| parse_err(path, line, "expected \"name: ids\""))?;
        let (slot, idx) = match key.trim() {
            "train" => (&mut split.train, 0),
            "val" => (&mut split.val, 1),
            "test" => (&mut split.test, 2),
            other => return Err(parse_err(path, line, format!("unknown split {other:?}"))),
        };
        if std::mem::replace(&mut seen[idx], true) {
            return Err(parse_err(path, line, format!("split {:?} repeated", key.trim())));
        }
        for tok in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            slot.push(tok.parse().map_err(|_| parse_err(path, line, format!("bad class id {tok:?}")))?);
        }
    }
    if seen != [true; 3] {
        return Err(parse_err(path, text.lines().count(), "need train, val and test lines"));
    }
    Ok(split)
}

/// Reads the four native files and validates the result.
pub fn load_dataset(
    features_path: &Path,
    edges_path: &Path,
    labels_path: &Path,
    split_path: &Path,
) -> Result<(GraphDataset, LoadStats)> {
    let features = parse_features(features_path)?;
    let n = features.rows();
    let edges = parse_edges(edges_path)?;
    let labels = parse_labels(labels_path, n)?;
    let split = parse_split(split_path)?;
    let name = features_path
        .parent()
        .and_then(|p| p.file_stem())
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    GraphDataset::new(name, features, &edges, labels, split)
}

/// Loads a dataset directory holding `features.txt`, `edges.txt`,
/// `labels.txt` and `split.txt`.
pub fn load_dataset_dir(dir: &Path) -> Result<(GraphDataset, LoadStats)> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    load_dataset(
        &dir.join("features.txt"),
        &dir.join("edges.txt"),
        &dir.join("labels.txt"),
        &dir.join("split.txt"),
    )
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Writes the native four-file layout into `dir` (created if needed).
/// Floats use the shortest round-trip representation, so a reload is exact.
pub fn write_dataset_dir(ds: &GraphDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (n, d) = (ds.n_nodes(), ds.feature_dim());
    let mut f = format!("{n} {d}\n");
    for i in 0..n {
        let row: Vec<String> = ds.features().row(i).iter().map(|v| format!("{v:?}")).collect();
        f.push_str(&row.join(" "));
        f.push('\n');
    }
    let mut e = String::new();
    for &(a, b) in ds.edges() {
        let _ = writeln!(e, "{a} {b}");
    }
    let mut l = String::new();
    for (i, c) in ds.labels().iter().enumerate() {
        let _ = writeln!(l, "{i} {c}");
    }
    let s = ds.split();
    let split = format!(
        "train: {}\nval: {}\ntest: {}\n",
        join_ids(&s.train),
        join_ids(&s.val),
        join_ids(&s.test)
    );
    for (name, body) in [("features.txt", f), ("edges.txt", e), ("labels.txt", l), ("split.txt", split)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|err| Error::io(&p, err))?;
    }
    Ok(())
}

/// Ingests a Planetoid-style `<name>.content` / `<name>.cites` pair.
///
/// Paper ids are renumbered densely in first-seen order of the content file;
/// string labels are numbered alphabetically. Citation rows are read as
/// `cited citing` and symmetrized.
pub fn ingest_planetoid(
    content_path: &Path,
    cites_path: &Path,
    split: SplitSource,
) -> Result<(GraphDataset, LoadStats)> {
    let text = read(content_path)?;
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut raw_labels = Vec::new();
    let mut data = Vec::new();
    let mut d = None;
    for (line, l) in lines(&text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(content_path, line, "expected id, features and label"));
        }
        let feats = &toks[1..toks.len() - 1];
        if *d.get_or_insert(feats.len()) != feats.len() {
            return Err(parse_err(content_path, line, format!("expected {} features", d.unwrap_or(0))));
        }
        if ids.insert(toks[0], ids.len()).is_some() {
            return Err(parse_err(content_path, line, format!("paper {:?} repeated", toks[0])));
        }
        for tok in feats {
            data.push(tok.parse::<f64>().map_err(|_| {
                parse_err(content_path, line, format!("bad feature {tok:?}"))
            })?);
        }
        raw_labels.push(toks[toks.len() - 1]);
    }
    let n = ids.len();
    let d = d.ok_or_else(|| parse_err(content_path, 1, "no rows"))?;
    let names: Vec<&str> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> =
        raw_labels.iter().map(|l| names.binary_search(l).expect("label collected above")).collect();

    let cites = read(cites_path)?;
    let mut edges = Vec::new();
    let mut unknown = 0;
    for (line, l) in lines(&cites) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(cites_path, line, "expected \"cited citing\""));
        }
        match (ids.get(toks[0]), ids.get(toks[1])) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => unknown += 1,
        }
    }
    let classes: Vec<usize> = (0..names.len()).collect();
    let split = match split {
        SplitSource::Explicit(s) => s,
        SplitSource::Counts(a, b, c) => ClassSplit::contiguous(&classes, a, b, c)?,
    };
    let name = content_path
        .file_stem()
        .map_or_else(|| "planetoid".to_string(), |s| s.to_string_lossy().into_owned());
    let features = Tensor::from_vec(&[n, d], data)?;
    let (ds, mut stats) = GraphDataset::new(name, features, &edges, labels, split)?;
    stats.unknown_ids = unknown;
    Ok((ds, stats))
}
