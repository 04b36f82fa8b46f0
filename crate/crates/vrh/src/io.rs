//! Text formats and atomic file output.
//!
//! Floats are written with 16 fractional digits in scientific notation,
//! enough to reproduce every f64 bit-exactly on parse. All writers go
//! through a temp-file-and-rename so readers never observe partial files.

use crate::geometry::BoxGeometry;
use crate::mott::MottResult;
use crate::percolation::SiteField;
use crate::point_process::MarkedPointSet;
use crate::resistor_network::{BoundaryStyle, Edge, ResistorGraph};
use crate::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

const POINTS_MAGIC: &str = "vrh-points v1";
const GRAPH_MAGIC: &str = "vrh-graph v1";
const FIELD_MAGIC: &str = "vrh-field v1";

/// Writes `contents` to `path` through a sibling temp file and an atomic
/// rename.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut file = tempfile::NamedTempFile::new_in(dir)?;
    file.write_all(contents.as_bytes())?;
    file.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_tok<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or(Error::Parse { line, msg: format!("missing {what}") })?;
    tok.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what}: {tok:?}") })
}

fn expect_magic(got: Option<&str>, want: &str) -> Result<()> {
    match got {
        Some(l) if l.trim_end() == want => Ok(()),
        other => Err(Error::Parse {
            line: 1,
            msg: format!("expected header {want:?}, got {:?}", other.unwrap_or("")),
        }),
    }
}

/// Marked point set as text: a header line with the box, then one line per
/// point holding d coordinates and the energy mark.
pub fn points_to_string(pts: &MarkedPointSet) -> String {
    let d = pts.geom.d;
    let mut out = String::new();
    let _ = writeln!(out, "{POINTS_MAGIC}");
    let _ = writeln!(
        out,
        "{d} {:.16e} {} {}",
        pts.geom.side,
        u8::from(pts.geom.periodic),
        pts.len()
    );
    for i in 0..pts.len() {
        for (k, v) in pts.position(i).iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        let _ = writeln!(out, " {:.16e}", pts.energy(i));
    }
    out
}

pub fn points_from_str(s: &str) -> Result<MarkedPointSet> {
    let mut lines = s.lines();
    expect_magic(lines.next(), POINTS_MAGIC)?;
    let header = lines.next().ok_or(Error::Parse { line: 2, msg: "missing size line".into() })?;
    let mut toks = header.split_whitespace();
    let d: usize = parse_tok(toks.next(), 2, "dimension")?;
    let side: f64 = parse_tok(toks.next(), 2, "box side")?;
    let periodic: u8 = parse_tok(toks.next(), 2, "periodic flag")?;
    let n: usize = parse_tok(toks.next(), 2, "point count")?;
    if periodic > 1 {
        return Err(Error::Parse { line: 2, msg: format!("periodic flag must be 0 or 1, got {periodic}") });
    }
    let geom = BoxGeometry::new(d, side, periodic == 1)?;
    let mut positions = Vec::with_capacity(n * d);
    let mut energies = Vec::with_capacity(n);
    for i in 0..n {
        let lineno = 3 + i;
        let line = lines
            .next()
            .ok_or(Error::Parse { line: lineno, msg: format!("expected {n} points, file ends at {i}") })?;
        let mut toks = line.split_whitespace();
        for k in 0..d {
            positions.push(parse_tok(toks.next(), lineno, &format!("coordinate {k}"))?);
        }
        energies.push(parse_tok(toks.next(), lineno, "energy")?);
        if let Some(extra) = toks.next() {
            return Err(Error::Parse { line: lineno, msg: format!("trailing token {extra:?}") });
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Parse { line: 3 + n, msg: "trailing data after point list".into() });
    }
    MarkedPointSet::new(geom, positions, energies)
}

pub fn write_points(path: &Path, pts: &MarkedPointSet) -> Result<()> {
    atomic_write(path, &points_to_string(pts))
}

pub fn read_points(path: &Path) -> Result<MarkedPointSet> {
    points_from_str(&std::fs::read_to_string(path)?)
}

/// Resistor graph as text: header, interior positions, contact-slab vertex
/// lists, then one line per edge.
pub fn graph_to_string(g: &ResistorGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{GRAPH_MAGIC}");
    let style = match g.style {
        BoundaryStyle::Faces => "faces",
        BoundaryStyle::Shorted => "shorted",
    };
    let _ = writeln!(
        out,
        "{} {} {:.16e} {style} {} {} {}",
        g.d,
        g.n,
        g.r_c,
        g.n_interior,
        g.gamma_minus.len(),
        g.gamma_plus.len()
    );
    for i in 0..g.n_interior {
        for k in 0..g.d {
            if k > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.16e}", g.positions[i * g.d + k]);
        }
        out.push('\n');
    }
    let _ = write!(out, "bminus {}", g.b_minus.len());
    for &i in &g.b_minus {
        let _ = write!(out, " {i}");
    }
    out.push('\n');
    let _ = write!(out, "bplus {}", g.b_plus.len());
    for &i in &g.b_plus {
        let _ = write!(out, " {i}");
    }
    out.push('\n');
    let _ = writeln!(out, "edges {}", g.edges.len());
    for e in &g.edges {
        let _ = writeln!(out, "{} {} {:.16e}", e.a, e.b, e.c);
    }
    out
}

fn parse_id_list(line: Option<&str>, lineno: usize, tag: &str) -> Result<Vec<u32>> {
    let line = line.ok_or(Error::Parse { line: lineno, msg: format!("missing {tag} line") })?;
    let mut toks = line.split_whitespace();
    match toks.next() {
        Some(t) if t == tag => {}
        other => {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {tag:?}, got {:?}", other.unwrap_or("")),
            })
        }
    }
    let k: usize = parse_tok(toks.next(), lineno, "id count")?;
    let mut ids = Vec::with_capacity(k);
    for _ in 0..k {
        ids.push(parse_tok(toks.next(), lineno, "vertex id")?);
    }
    Ok(ids)
}

pub fn graph_from_str(s: &str) -> Result<ResistorGraph> {
    let mut lines = s.lines();
    expect_magic(lines.next(), GRAPH_MAGIC)?;
    let header = lines.next().ok_or(Error::Parse { line: 2, msg: "missing size line".into() })?;
    let mut toks = header.split_whitespace();
    let d: usize = parse_tok(toks.next(), 2, "dimension")?;
    let n: usize = parse_tok(toks.next(), 2, "half side")?;
    let r_c: f64 = parse_tok(toks.next(), 2, "connection radius")?;
    let style = match toks.next() {
        Some("faces") => BoundaryStyle::Faces,
        Some("shorted") => BoundaryStyle::Shorted,
        other => {
            return Err(Error::Parse {
                line: 2,
                msg: format!("unknown boundary style {:?}", other.unwrap_or("")),
            })
        }
    };
    let n_interior: usize = parse_tok(toks.next(), 2, "interior count")?;
    let n_gm: usize = parse_tok(toks.next(), 2, "left face count")?;
    let n_gp: usize = parse_tok(toks.next(), 2, "right face count")?;
    if d < 2 || n == 0 {
        return Err(Error::Parse { line: 2, msg: format!("bad geometry d={d} n={n}") });
    }
    let mut positions = Vec::with_capacity(n_interior * d);
    for i in 0..n_interior {
        let lineno = 3 + i;
        let line = lines.next().ok_or(Error::Parse { line: lineno, msg: "missing position".into() })?;
        let mut toks = line.split_whitespace();
        for k in 0..d {
            positions.push(parse_tok(toks.next(), lineno, &format!("coordinate {k}"))?);
        }
    }
    let mut lineno = 3 + n_interior;
    let b_minus = parse_id_list(lines.next(), lineno, "bminus")?;
    lineno += 1;
    let b_plus = parse_id_list(lines.next(), lineno, "bplus")?;
    lineno += 1;
    let edges_header = lines.next().ok_or(Error::Parse { line: lineno, msg: "missing edges line".into() })?;
    let mut toks = edges_header.split_whitespace();
    match toks.next() {
        Some("edges") => {}
        other => {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected \"edges\", got {:?}", other.unwrap_or("")),
            })
        }
    }
    let n_edges: usize = parse_tok(toks.next(), lineno, "edge count")?;
    let mut edges = Vec::with_capacity(n_edges);
    for i in 0..n_edges {
        let lineno = lineno + 1 + i;
        let line = lines.next().ok_or(Error::Parse { line: lineno, msg: "missing edge".into() })?;
        let mut toks = line.split_whitespace();
        let a: u32 = parse_tok(toks.next(), lineno, "endpoint a")?;
        let b: u32 = parse_tok(toks.next(), lineno, "endpoint b")?;
        let c: f64 = parse_tok(toks.next(), lineno, "conductance")?;
        edges.push(Edge { a, b, c });
    }
    let gamma_minus: Vec<u32> = (0..n_gm).map(|i| (n_interior + i) as u32).collect();
    let gamma_plus: Vec<u32> = (0..n_gp).map(|i| (n_interior + n_gm + i) as u32).collect();
    let n_all = n_interior + n_gm + n_gp;
    if edges.iter().any(|e| e.a as usize >= n_all || e.b as usize >= n_all) {
        return Err(Error::Parse { line: lineno, msg: "edge endpoint out of range".into() });
    }
    Ok(ResistorGraph {
        d,
        n,
        r_c,
        style,
        n_interior,
        positions,
        gamma_minus,
        gamma_plus,
        gamma_face_count: (2 * n - 1).pow(d as u32 - 1),
        b_minus,
        b_plus,
        edges,
    })
}

pub fn write_graph(path: &Path, g: &ResistorGraph) -> Result<()> {
    atomic_write(path, &graph_to_string(g))
}

pub fn read_graph(path: &Path) -> Result<ResistorGraph> {
    graph_from_str(&std::fs::read_to_string(path)?)
}

/// Site field as run-length-encoded text: header, then the first cell
/// value followed by alternating run lengths in row-major order.
pub fn field_to_string(f: &SiteField) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FIELD_MAGIC}");
    let _ = writeln!(out, "{} {} {:.16e} {:.16e}", f.d, f.n, f.r1, f.r2);
    let first = f.occupied.first().copied().unwrap_or(false);
    let _ = write!(out, "{}", u8::from(first));
    let mut current = first;
    let mut run = 0usize;
    for &b in &f.occupied {
        if b == current {
            run += 1;
        } else {
            let _ = write!(out, " {run}");
            current = b;
            run = 1;
        }
    }
    if run > 0 {
        let _ = write!(out, " {run}");
    }
    out.push('\n');
    out
}

pub fn field_from_str(s: &str) -> Result<SiteField> {
    let mut lines = s.lines();
    expect_magic(lines.next(), FIELD_MAGIC)?;
    let header = lines.next().ok_or(Error::Parse { line: 2, msg: "missing size line".into() })?;
    let mut toks = header.split_whitespace();
    let d: usize = parse_tok(toks.next(), 2, "dimension")?;
    let n: usize = parse_tok(toks.next(), 2, "half width")?;
    let r1: f64 = parse_tok(toks.next(), 2, "detection side")?;
    let r2: f64 = parse_tok(toks.next(), 2, "site spacing")?;
    if d < 2 {
        return Err(Error::Parse { line: 2, msg: format!("field dimension must be >= 2, got {d}") });
    }
    let n_sites = (2 * n + 1).pow(d as u32);
    let runs = lines.next().ok_or(Error::Parse { line: 3, msg: "missing run data".into() })?;
    let mut toks = runs.split_whitespace();
    let first: u8 = parse_tok(toks.next(), 3, "first cell value")?;
    if first > 1 {
        return Err(Error::Parse { line: 3, msg: format!("cell value must be 0 or 1, got {first}") });
    }
    let mut occupied = Vec::with_capacity(n_sites);
    let mut value = first == 1;
    for tok in toks {
        let run: usize = parse_tok(Some(tok), 3, "run length")?;
        occupied.resize(occupied.len() + run, value);
        value = !value;
    }
    if occupied.len() != n_sites {
        return Err(Error::Parse {
            line: 3,
            msg: format!("runs cover {} sites, grid has {n_sites}", occupied.len()),
        });
    }
    Ok(SiteField { d, n, r1, r2, occupied })
}

pub fn write_field(path: &Path, f: &SiteField) -> Result<()> {
    atomic_write(path, &field_to_string(f))
}

pub fn read_field(path: &Path) -> Result<SiteField> {
    field_from_str(&std::fs::read_to_string(path)?)
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    atomic_write(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Flat CSV of a temperature sweep, one row per inverse temperature.
pub fn mott_csv(result: &MottResult) -> String {
    let mut out = String::from(
        "beta,e_c,r_c,delta_c,mott_x,t_max,d_hat,d_se,ci_lo,ci_hi,kmc_converged,\
         n_truncated,n_frozen,network_d,network_se,network_stabilized,chain_bound\n",
    );
    for row in &result.rows {
        let s = &row.schedule;
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{:.16e},{:.16e},{},{:.16e}",
            s.beta,
            s.e_c,
            s.r_c,
            s.delta_c,
            s.mott_x,
            row.t_max,
            row.d_hat,
            row.d_se,
            row.kmc.ci95.0,
            row.kmc.ci95.1,
            row.kmc.converged,
            row.kmc.n_truncated,
            row.kmc.n_frozen,
            row.network_d,
            row.network_se,
            row.network.stabilized,
            row.chain_bound,
        );
    }
    out
}

pub fn write_mott_csv(path: &Path, result: &MottResult) -> Result<()> {
    atomic_write(path, &mott_csv(result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{randomize, sample_ppp, EnergyLaw};
    use crate::resistor_network::{build_periodized_graph, conductance, SolveOptions};

    fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    #[test]
    fn points_round_trip_bit_exactly() {
        let geom = BoxGeometry::new(3, 7.5, true).unwrap();
        let mut rng = crate::rng::stream(81, &[1]);
        let pts = sample_ppp(0.7, geom, &mut rng).unwrap();
        let pts = randomize(&pts, EnergyLaw::Power { alpha: 0.3 }, &mut rng).unwrap();
        let text = points_to_string(&pts);
        let back = points_from_str(&text).unwrap();
        assert_eq!(back.geom.d, 3);
        assert_eq!(back.geom.side, 7.5);
        assert!(back.geom.periodic);
        assert!(bitwise_eq(back.positions(), pts.positions()));
        assert!(bitwise_eq(back.energies(), pts.energies()));
    }

    #[test]
    fn points_format_survives_extreme_floats() {
        let geom = BoxGeometry::new(2, 1e300, false).unwrap();
        let pts = MarkedPointSet::new(
            geom,
            vec![5e-324, -0.0, 1.0000000000000002, -1e299],
            vec![0.999999999999999, 1e-17],
        )
        .unwrap();
        let back = points_from_str(&points_to_string(&pts)).unwrap();
        assert!(bitwise_eq(back.positions(), pts.positions()));
        assert!(bitwise_eq(back.energies(), pts.energies()));
    }

    #[test]
    fn points_parser_reports_line_numbers() {
        let bad_header = "not-points\n2 1.0 0 0\n";
        match points_from_str(bad_header) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected header error, got {other:?}"),
        }
        let bad_coord = format!("{POINTS_MAGIC}\n2 4.0 0 1\n0.0 oops 0.0\n");
        match points_from_str(&bad_coord) {
            Err(Error::Parse { line: 3, msg }) => assert!(msg.contains("coordinate 1")),
            other => panic!("expected coordinate error, got {other:?}"),
        }
        let short = format!("{POINTS_MAGIC}\n2 4.0 0 2\n0.0 0.0 0.0\n");
        match points_from_str(&short) {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn graph_round_trip_preserves_conductance() {
        let geom = BoxGeometry::new(2, 10.0, false).unwrap();
        let mut rng = crate::rng::stream(82, &[1]);
        let pts = sample_ppp(1.0, geom, &mut rng).unwrap();
        let graph = build_periodized_graph(&pts, 5, 1.5, crate::resistor_network::BoundaryStyle::Faces).unwrap();
        let back = graph_from_str(&graph_to_string(&graph)).unwrap();
        assert_eq!(back.n_interior, graph.n_interior);
        assert_eq!(back.b_minus, graph.b_minus);
        assert_eq!(back.b_plus, graph.b_plus);
        assert_eq!(back.edges.len(), graph.edges.len());
        assert_eq!(back.gamma_face_count, graph.gamma_face_count);
        assert!(bitwise_eq(&back.positions, &graph.positions));
        let (g0, _) = conductance(&graph, &SolveOptions::default()).unwrap();
        let (g1, _) = conductance(&back, &SolveOptions::default()).unwrap();
        assert_eq!(g0.to_bits(), g1.to_bits());
    }

    #[test]
    fn field_rle_round_trips_and_compresses() {
        let mut rng = crate::rng::stream(83, &[1]);
        let field = SiteField::random_iid(2, 12, 0.6, &mut rng).unwrap();
        let text = field_to_string(&field);
        let back = field_from_str(&text).unwrap();
        assert_eq!(back, field);
        // A constant field collapses to a single run.
        let solid = SiteField { d: 2, n: 20, r1: 1.0, r2: 2.0, occupied: vec![true; 41 * 41] };
        let text = field_to_string(&solid);
        assert!(text.lines().nth(2).unwrap().split_whitespace().count() == 2);
        assert_eq!(field_from_str(&text).unwrap(), solid);
    }

    #[test]
    fn field_parser_rejects_wrong_run_totals() {
        let bad = format!("{FIELD_MAGIC}\n2 1 1.0 1.0\n0 4 2\n");
        match field_from_str(&bad) {
            Err(Error::Parse { line: 3, msg }) => assert!(msg.contains("9")),
            other => panic!("expected run total error, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trips_schedule_rows() {
        let rows = crate::mott::make_schedule(2, 0.0, 1.0, 1.5, &[5.0, 10.0, 20.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        write_jsonl(&path, &rows).unwrap();
        let back: Vec<crate::mott::ScheduleRow> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.beta.to_bits(), b.beta.to_bits());
            assert_eq!(a.r_c.to_bits(), b.r_c.to_bits());
        }
    }

    #[test]
    fn atomic_write_replaces_content_and_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        atomic_write(&path, "first").unwrap();
        atomic_write(&path, "second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }
}
