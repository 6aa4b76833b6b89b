//! Transportation graph, OD demand, enumerated routes and the two incidence
//! matrices, plus TNTP ingestion.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cost::BprParams;
use crate::error::{Error, Result};

/// A directed road segment with quartic BPR parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    pub tail: usize,
    pub head: usize,
    /// Free-flow travel cost.
    pub b: f64,
    /// Nominal capacity.
    pub c: f64,
    /// Congestion weight; the cost at flow `v` is `b + w (v / c)^4`.
    pub w: f64,
}

impl Link {
    pub fn bpr(&self) -> BprParams {
        BprParams {
            b: self.b,
            w: self.w,
            c: self.c,
        }
    }

    fn validate(&self, index: usize, num_nodes: usize) -> Result<()> {
        if self.id != index {
            return Err(Error::Validation(format!(
                "link at position {index} has id {}",
                self.id
            )));
        }
        for node in [self.tail, self.head] {
            if node == 0 || node > num_nodes {
                return Err(Error::Validation(format!(
                    "link {index} references node {node} outside 1..={num_nodes}"
                )));
            }
        }
        if self.tail == self.head {
            return Err(Error::Validation(format!("link {index} is a self-loop")));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Validation(format!(
                "link {index} has non-positive capacity {}",
                self.c
            )));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(Error::Validation(format!(
                "link {index} has negative free-flow cost {}",
                self.b
            )));
        }
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::Validation(format!(
                "link {index} has negative congestion weight {}",
                self.w
            )));
        }
        Ok(())
    }
}

/// TNTP columns that do not enter the cost model but are kept so a parsed
/// network can be written back out unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TntpLinkFields {
    pub length: f64,
    pub bpr_b: f64,
    pub power: f64,
    pub speed_limit: f64,
    pub toll: f64,
    pub link_type: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
}

impl OdPair {
    pub fn new(origin: usize, destination: usize) -> Self {
        Self {
            origin,
            destination,
        }
    }
}

/// A loop-free path serving one OD pair, as an ordered list of link ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub od: usize,
    pub links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    num_nodes: usize,
    num_zones: usize,
    first_thru_node: usize,
    links: Vec<Link>,
    #[serde(default)]
    tntp_fields: Vec<TntpLinkFields>,
    od_pairs: Vec<OdPair>,
    demand: Vec<f64>,
    #[serde(default)]
    routes: Vec<Route>,
    #[serde(default)]
    coordinates: BTreeMap<usize, [f64; 2]>,
}

impl Network {
    /// Builds a network without routes. Node ids are `1..=num_nodes`; every
    /// node may be passed through.
    pub fn new(
        num_nodes: usize,
        links: Vec<Link>,
        od_pairs: Vec<OdPair>,
        demand: Vec<f64>,
    ) -> Result<Self> {
        let net = Self {
            num_nodes,
            num_zones: 0,
            first_thru_node: 1,
            links,
            tntp_fields: Vec::new(),
            od_pairs,
            demand,
            routes: Vec::new(),
            coordinates: BTreeMap::new(),
        };
        net.validate()?;
        Ok(net)
    }

    /// Re-checks every structural invariant, including the routes.
    pub fn validate(&self) -> Result<()> {
        for (i, link) in self.links.iter().enumerate() {
            link.validate(i, self.num_nodes)?;
        }
        if !self.tntp_fields.is_empty() && self.tntp_fields.len() != self.links.len() {
            return Err(Error::Dimension {
                what: "TNTP link fields",
                expected: self.links.len(),
                got: self.tntp_fields.len(),
            });
        }
        if self.od_pairs.len() != self.demand.len() {
            return Err(Error::Dimension {
                what: "demand vector",
                expected: self.od_pairs.len(),
                got: self.demand.len(),
            });
        }
        for (i, (od, &d)) in self.od_pairs.iter().zip(&self.demand).enumerate() {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Validation(format!("OD pair {i} has demand {d}")));
            }
            for node in [od.origin, od.destination] {
                if node == 0 || node > self.num_nodes {
                    return Err(Error::Validation(format!(
                        "OD pair {i} references node {node} outside 1..={}",
                        self.num_nodes
                    )));
                }
            }
            if od.origin == od.destination {
                return Err(Error::Validation(format!(
                    "OD pair {i} has identical origin and destination"
                )));
            }
        }
        for (r, route) in self.routes.iter().enumerate() {
            self.validate_route(r, route)?;
        }
        Ok(())
    }

    fn validate_route(&self, r: usize, route: &Route) -> Result<()> {
        let od = self
            .od_pairs
            .get(route.od)
            .ok_or_else(|| Error::Validation(format!("route {r} references OD {}", route.od)))?;
        if self.demand[route.od] <= 0.0 {
            return Err(Error::Validation(format!(
                "route {r} serves OD {} which has no positive demand",
                route.od
            )));
        }
        if route.links.is_empty() {
            return Err(Error::Validation(format!("route {r} is empty")));
        }
        let mut seen = HashSet::new();
        for &l in &route.links {
            if l >= self.links.len() {
                return Err(Error::OutOfRange {
                    id: l,
                    len: self.links.len(),
                });
            }
            if !seen.insert(l) {
                return Err(Error::Validation(format!("route {r} repeats link {l}")));
            }
        }
        for pair in route.links.windows(2) {
            if self.links[pair[0]].head != self.links[pair[1]].tail {
                return Err(Error::Validation(format!(
                    "route {r} is not connected between links {} and {}",
                    pair[0], pair[1]
                )));
            }
        }
        let first = &self.links[route.links[0]];
        let last = &self.links[*route.links.last().unwrap()];
        if first.tail != od.origin || last.head != od.destination {
            return Err(Error::Validation(format!(
                "route {r} does not connect {} -> {}",
                od.origin, od.destination
            )));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_zones(&self) -> usize {
        self.num_zones
    }

    pub fn first_thru_node(&self) -> usize {
        self.first_thru_node
    }

    /// Nodes below the first through node are zone centroids: routes may
    /// start or end there but not pass through.
    pub fn with_first_thru_node(mut self, first_thru_node: usize) -> Self {
        self.first_thru_node = first_thru_node.max(1);
        self
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.c).collect()
    }

    pub fn tntp_fields(&self) -> &[TntpLinkFields] {
        &self.tntp_fields
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn coordinates(&self) -> &BTreeMap<usize, [f64; 2]> {
        &self.coordinates
    }

    pub fn set_coordinates(&mut self, coordinates: BTreeMap<usize, [f64; 2]>) {
        self.coordinates = coordinates;
    }

    pub fn set_routes(&mut self, routes: Vec<Route>) -> Result<()> {
        for (r, route) in routes.iter().enumerate() {
            self.validate_route(r, route)?;
        }
        self.routes = routes;
        Ok(())
    }

    /// Keeps only the listed OD pairs (in the given order) and drops routes.
    pub fn retain_od_pairs(&mut self, keep: &[OdPair]) -> Result<()> {
        let mut demand = Vec::with_capacity(keep.len());
        for od in keep {
            let idx = self.od_pairs.iter().position(|p| p == od).ok_or_else(|| {
                Error::Validation(format!(
                    "OD pair {} -> {} has no positive demand in the trips table",
                    od.origin, od.destination
                ))
            })?;
            demand.push(self.demand[idx]);
        }
        self.od_pairs = keep.to_vec();
        self.demand = demand;
        self.routes.clear();
        Ok(())
    }

    /// The `n` OD pairs with the largest demand, ties broken by `(origin,
    /// destination)`, returned in that ranking order.
    pub fn top_demand_od_pairs(&self, n: usize) -> Vec<OdPair> {
        let mut idx: Vec<usize> = (0..self.od_pairs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.demand[b]
                .total_cmp(&self.demand[a])
                .then(self.od_pairs[a].cmp(&self.od_pairs[b]))
        });
        idx.into_iter().take(n).map(|i| self.od_pairs[i]).collect()
    }

    /// Indices of the routes serving each OD pair, in route order.
    pub fn routes_by_od(&self) -> Vec<Vec<usize>> {
        let mut by_od = vec![Vec::new(); self.od_pairs.len()];
        for (r, route) in self.routes.iter().enumerate() {
            by_od[route.od].push(r);
        }
        by_od
    }

    pub fn link_route_incidence(&self) -> LinkRouteIncidence<'_> {
        LinkRouteIncidence {
            num_links: self.links.len(),
            routes: &self.routes,
        }
    }

    pub fn route_od_incidence(&self) -> RouteOdIncidence<'_> {
        RouteOdIncidence {
            num_od: self.od_pairs.len(),
            routes: &self.routes,
        }
    }
}

/// Sparse 0/1 link-route incidence `F` (`n_l x n_r`).
#[derive(Debug, Clone, Copy)]
pub struct LinkRouteIncidence<'a> {
    num_links: usize,
    routes: &'a [Route],
}

impl LinkRouteIncidence<'_> {
    pub fn shape(&self) -> (usize, usize) {
        (self.num_links, self.routes.len())
    }

    pub fn get(&self, link: usize, route: usize) -> u8 {
        u8::from(self.routes[route].links.contains(&link))
    }

    /// `y = F z`.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.routes.len() {
            return Err(Error::Dimension {
                what: "route flow",
                expected: self.routes.len(),
                got: z.len(),
            });
        }
        let mut y = vec![0.0; self.num_links];
        for (route, &zr) in self.routes.iter().zip(z) {
            for &l in &route.links {
                y[l] += zr;
            }
        }
        Ok(y)
    }

    /// `F^T g`: the cost of each route under per-link costs `g`.
    pub fn apply_transpose(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.num_links {
            return Err(Error::Dimension {
                what: "link vector",
                expected: self.num_links,
                got: g.len(),
            });
        }
        Ok(self
            .routes
            .iter()
            .map(|r| r.links.iter().map(|&l| g[l]).sum())
            .collect())
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.routes.len()]; self.num_links];
        for (j, route) in self.routes.iter().enumerate() {
            for &l in &route.links {
                m[l][j] = 1;
            }
        }
        m
    }
}

/// Sparse 0/1 route-OD incidence `H` (`n_d x n_r`).
#[derive(Debug, Clone, Copy)]
pub struct RouteOdIncidence<'a> {
    num_od: usize,
    routes: &'a [Route],
}

impl RouteOdIncidence<'_> {
    pub fn shape(&self) -> (usize, usize) {
        (self.num_od, self.routes.len())
    }

    pub fn get(&self, od: usize, route: usize) -> u8 {
        u8::from(self.routes[route].od == od)
    }

    /// `H z`: total flow assigned to each OD pair.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.routes.len() {
            return Err(Error::Dimension {
                what: "route flow",
                expected: self.routes.len(),
                got: z.len(),
            });
        }
        let mut out = vec![0.0; self.num_od];
        for (route, &zr) in self.routes.iter().zip(z) {
            out[route.od] += zr;
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.routes.len()]; self.num_od];
        for (j, route) in self.routes.iter().enumerate() {
            m[route.od][j] = 1;
        }
        m
    }
}

/// Link flow induced by a route flow: `y = F z`.
pub fn link_flow(f: &LinkRouteIncidence<'_>, z: &[f64]) -> Result<Vec<f64>> {
    f.apply(z)
}

// ---------------------------------------------------------------------------
// TNTP ingestion

struct Metadata {
    tags: BTreeMap<String, String>,
    body: Vec<(usize, String)>,
}

fn read_metadata(reader: impl BufRead) -> Result<Metadata> {
    let mut tags = BTreeMap::new();
    let mut body = Vec::new();
    let mut in_body = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if in_body {
            body.push((lineno, line));
            continue;
        }
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('<') {
            if let Some(end) = rest.find('>') {
                let tag = rest[..end].trim().to_ascii_uppercase();
                if tag == "END OF METADATA" {
                    in_body = true;
                } else {
                    tags.insert(tag, rest[end + 1..].trim().to_string());
                }
            }
        }
    }
    if !in_body {
        // An absent terminator is only reported once the content tags are
        // known to be present, so an empty stream names a real tag.
        tags.insert("__NO_END__".into(), String::new());
    }
    Ok(Metadata { tags, body })
}

impl Metadata {
    fn require<T: std::str::FromStr>(&self, tag: &'static str) -> Result<T> {
        let raw = self.tags.get(tag).ok_or(Error::MissingTag(tag))?;
        raw.split_whitespace()
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(0, format!("tag <{tag}> has non-numeric value `{raw}`")))
    }

    fn optional<T: std::str::FromStr>(&self, tag: &'static str) -> Option<T> {
        self.tags
            .get(tag)
            .and_then(|raw| raw.split_whitespace().next())
            .and_then(|v| v.parse().ok())
    }

    fn require_end(&self) -> Result<()> {
        if self.tags.contains_key("__NO_END__") {
            Err(Error::MissingTag("END OF METADATA"))
        } else {
            Ok(())
        }
    }
}

fn data_tokens(line: &str) -> Option<Vec<&str>> {
    let content = line.split(';').next().unwrap_or("").trim();
    if content.is_empty() || content.starts_with('~') {
        return None;
    }
    Some(content.split_whitespace().collect())
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, col: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("cannot parse {col} from `{tok}`")))
}

struct RawNet {
    num_nodes: usize,
    num_zones: usize,
    first_thru_node: usize,
    links: Vec<Link>,
    fields: Vec<TntpLinkFields>,
}

fn parse_net(reader: impl BufRead) -> Result<RawNet> {
    let meta = read_metadata(reader)?;
    let num_nodes: usize = meta.require("NUMBER OF NODES")?;
    let num_links: usize = meta.require("NUMBER OF LINKS")?;
    let first_thru_node: usize = meta.require("FIRST THRU NODE")?;
    meta.require_end()?;
    let num_zones: usize = meta.optional("NUMBER OF ZONES").unwrap_or(0);

    let mut links = Vec::with_capacity(num_links);
    let mut fields = Vec::with_capacity(num_links);
    for (lineno, line) in &meta.body {
        let Some(tok) = data_tokens(line) else { continue };
        if tok.len() < 7 {
            return Err(Error::parse(
                *lineno,
                format!("link row has {} columns, need at least 7", tok.len()),
            ));
        }
        let lineno = *lineno;
        let tail: usize = parse_num(tok[0], lineno, "init_node")?;
        let head: usize = parse_num(tok[1], lineno, "term_node")?;
        let capacity: f64 = parse_num(tok[2], lineno, "capacity")?;
        let length: f64 = parse_num(tok[3], lineno, "length")?;
        let fft: f64 = parse_num(tok[4], lineno, "free_flow_time")?;
        let bpr_b: f64 = parse_num(tok[5], lineno, "B")?;
        let power: f64 = parse_num(tok[6], lineno, "power")?;
        let speed_limit: f64 = tok.get(7).map_or(Ok(0.0), |t| parse_num(t, lineno, "speed"))?;
        let toll: f64 = tok.get(8).map_or(Ok(0.0), |t| parse_num(t, lineno, "toll"))?;
        let link_type: i64 = match tok.get(9) {
            Some(t) => t
                .parse::<i64>()
                .or_else(|_| t.parse::<f64>().map(|v| v as i64))
                .map_err(|_| Error::parse(lineno, format!("cannot parse link_type `{t}`")))?,
            None => 0,
        };
        let id = links.len();
        if power != 4.0 {
            return Err(Error::UnsupportedExponent { link: id, power });
        }
        if capacity <= 0.0 {
            return Err(Error::Validation(format!(
                "line {lineno}: link {id} has non-positive capacity {capacity}"
            )));
        }
        if fft < 0.0 || bpr_b < 0.0 {
            return Err(Error::Validation(format!(
                "line {lineno}: link {id} has negative free-flow time or B"
            )));
        }
        let w = fft * bpr_b;
        if w == 0.0 {
            warn!("link {id} ({tail} -> {head}) has zero congestion weight");
        }
        links.push(Link {
            id,
            tail,
            head,
            b: fft,
            c: capacity,
            w,
        });
        fields.push(TntpLinkFields {
            length,
            bpr_b,
            power,
            speed_limit,
            toll,
            link_type,
        });
    }
    if links.len() != num_links {
        return Err(Error::Validation(format!(
            "header declares {num_links} links but {} rows were read",
            links.len()
        )));
    }
    Ok(RawNet {
        num_nodes,
        num_zones,
        first_thru_node,
        links,
        fields,
    })
}

/// Parses a TNTP trips table into aggregated positive OD demands, sorted by
/// `(origin, destination)`.
pub fn parse_trips(reader: impl BufRead) -> Result<BTreeMap<OdPair, f64>> {
    let meta = read_metadata(reader)?;
    let _zones: usize = meta.require("NUMBER OF ZONES")?;
    meta.require_end()?;
    let mut demand: BTreeMap<OdPair, f64> = BTreeMap::new();
    let mut origin: Option<usize> = None;
    for (lineno, line) in &meta.body {
        let lineno = *lineno;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('~') {
            continue;
        }
        if let Some(rest) = trimmed
            .strip_prefix("Origin")
            .or_else(|| trimmed.strip_prefix("origin"))
        {
            origin = Some(parse_num(rest.trim(), lineno, "origin")?);
            continue;
        }
        let o = origin.ok_or_else(|| Error::parse(lineno, "demand entry before any Origin line"))?;
        for entry in trimmed.split(';') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let (d, v) = entry
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, format!("malformed entry `{entry}`")))?;
            let d: usize = parse_num(d.trim(), lineno, "destination")?;
            let v: f64 = parse_num(v.trim(), lineno, "demand")?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!(
                    "line {lineno}: demand {o} -> {d} is {v}"
                )));
            }
            *demand.entry(OdPair::new(o, d)).or_insert(0.0) += v;
        }
    }
    demand.retain(|od, v| {
        if od.origin == od.destination && *v > 0.0 {
            warn!("dropping intrazonal demand {} at zone {}", v, od.origin);
        }
        *v > 0.0 && od.origin != od.destination
    });
    Ok(demand)
}

/// Parses a TNTP network/trips pair. Zero-demand OD pairs are dropped; the
/// returned network has no routes yet.
pub fn parse_tntp(net: impl BufRead, trips: impl BufRead) -> Result<Network> {
    let raw = parse_net(net)?;
    let demand = parse_trips(trips)?;
    let (od_pairs, demand): (Vec<_>, Vec<_>) = demand.into_iter().unzip();
    let network = Network {
        num_nodes: raw.num_nodes,
        num_zones: raw.num_zones,
        first_thru_node: raw.first_thru_node.max(1),
        links: raw.links,
        tntp_fields: raw.fields,
        od_pairs,
        demand,
        routes: Vec::new(),
        coordinates: BTreeMap::new(),
    };
    network.validate()?;
    Ok(network)
}

/// Parses a TNTP node-coordinate table (`node x y ;`).
pub fn parse_tntp_nodes(reader: impl BufRead) -> Result<BTreeMap<usize, [f64; 2]>> {
    let mut coords = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let Some(tok) = data_tokens(&line) else { continue };
        let Ok(node) = tok[0].parse::<usize>() else {
            // header row
            continue;
        };
        if tok.len() < 3 {
            return Err(Error::parse(idx + 1, "node row needs id, x and y"));
        }
        let x: f64 = parse_num(tok[1], idx + 1, "x")?;
        let y: f64 = parse_num(tok[2], idx + 1, "y")?;
        coords.insert(node, [x, y]);
    }
    Ok(coords)
}

/// Reads node coordinates from a GeoJSON `FeatureCollection` of points.
/// The node id is taken from the `id`, `node`, `node_id` or `ID` property.
pub fn parse_geojson_nodes(reader: impl std::io::Read) -> Result<BTreeMap<usize, [f64; 2]>> {
    let doc: serde_json::Value = serde_json::from_reader(reader)?;
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::Validation("GeoJSON node file has no feature list".into()))?;
    let mut coords = BTreeMap::new();
    for (k, feat) in features.iter().enumerate() {
        let props = feat.get("properties");
        let id = ["id", "node", "node_id", "ID"]
            .iter()
            .find_map(|key| props.and_then(|p| p.get(key)))
            .and_then(|v| v.as_u64().or_else(|| v.as_str().and_then(|s| s.trim().parse().ok())))
            .ok_or_else(|| Error::Validation(format!("GeoJSON feature {k} has no node id")))?;
        let xy = feat
            .get("geometry")
            .and_then(|g| g.get("coordinates"))
            .and_then(|c| c.as_array())
            .filter(|c| c.len() >= 2)
            .and_then(|c| Some([c[0].as_f64()?, c[1].as_f64()?]))
            .ok_or_else(|| Error::Validation(format!("GeoJSON feature {k} is not a point")))?;
        coords.insert(id as usize, xy);
    }
    Ok(coords)
}

pub fn write_tntp_net(net: &Network, mut out: impl Write) -> Result<()> {
    writeln!(out, "<NUMBER OF ZONES> {}", net.num_zones)?;
    writeln!(out, "<NUMBER OF NODES> {}", net.num_nodes)?;
    writeln!(out, "<FIRST THRU NODE> {}", net.first_thru_node)?;
    writeln!(out, "<NUMBER OF LINKS> {}", net.links.len())?;
    writeln!(out, "<END OF METADATA>")?;
    writeln!(out)?;
    writeln!(
        out,
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;"
    )?;
    for (i, link) in net.links.iter().enumerate() {
        let fields = match net.tntp_fields.get(i) {
            Some(f) => f.clone(),
            None => {
                if link.b == 0.0 && link.w > 0.0 {
                    return Err(Error::Validation(format!(
                        "link {i} has zero free-flow time but positive weight; not expressible in TNTP"
                    )));
                }
                TntpLinkFields {
                    length: 0.0,
                    bpr_b: if link.b > 0.0 { link.w / link.b } else { 0.0 },
                    power: 4.0,
                    speed_limit: 0.0,
                    toll: 0.0,
                    link_type: 1,
                }
            }
        };
        writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t;",
            link.tail,
            link.head,
            link.c,
            fields.length,
            link.b,
            fields.bpr_b,
            fields.power,
            fields.speed_limit,
            fields.toll,
            fields.link_type
        )?;
    }
    Ok(())
}

pub fn write_tntp_trips(net: &Network, mut out: impl Write) -> Result<()> {
    writeln!(out, "<NUMBER OF ZONES> {}", net.num_zones)?;
    writeln!(out, "<TOTAL OD FLOW> {}", net.total_demand())?;
    writeln!(out, "<END OF METADATA>")?;
    let mut by_origin: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (od, &d) in net.od_pairs.iter().zip(&net.demand) {
        by_origin
            .entry(od.origin)
            .or_default()
            .push((od.destination, d));
    }
    for (o, dests) in by_origin {
        writeln!(out)?;
        writeln!(out, "Origin \t{o}")?;
        for (d, v) in dests {
            writeln!(out, "{d:>5} : {v};")?;
        }
    }
    Ok(())
}

pub fn write_tntp_nodes(coords: &BTreeMap<usize, [f64; 2]>, mut out: impl Write) -> Result<()> {
    writeln!(out, "node\tx\ty\t;")?;
    for (node, [x, y]) in coords {
        writeln!(out, "{node}\t{x}\t{y}\t;")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Route enumeration

/// Result of [`generate_routes`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRoutes {
    pub routes: Vec<Route>,
    /// OD indices for which fewer than `k` loop-free paths exist.
    pub short_od: Vec<usize>,
}

impl GeneratedRoutes {
    pub fn warning_count(&self) -> usize {
        self.short_od.len()
    }
}

/// The `k` shortest loop-free paths by free-flow cost for every OD pair with
/// positive demand. Ties are broken by the lexicographic order of the link-id
/// sequence. Routes are ordered by OD, then by rank.
pub fn generate_routes(network: &Network, k: usize) -> Result<GeneratedRoutes> {
    if k == 0 {
        return Err(Error::Validation("routes per OD must be at least 1".into()));
    }
    let search = PathSearch::new(network);
    let mut routes = Vec::new();
    let mut short_od = Vec::new();
    for (od_idx, od) in network.od_pairs.iter().enumerate() {
        if network.demand[od_idx] <= 0.0 {
            continue;
        }
        let paths = search.k_shortest(od.origin, od.destination, k)?;
        if paths.len() < k {
            warn!(
                "OD {} -> {} has only {} loop-free paths (asked for {k})",
                od.origin,
                od.destination,
                paths.len()
            );
            short_od.push(od_idx);
        }
        routes.extend(paths.into_iter().map(|links| Route { od: od_idx, links }));
    }
    Ok(GeneratedRoutes { routes, short_od })
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Yen's algorithm over the link list, with spur paths chosen as the
/// lexicographically smallest among shortest paths.
pub(crate) struct PathSearch<'a> {
    net: &'a Network,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
}

impl<'a> PathSearch<'a> {
    pub(crate) fn new(net: &'a Network) -> Self {
        let mut out_links = vec![Vec::new(); net.num_nodes + 1];
        let mut in_links = vec![Vec::new(); net.num_nodes + 1];
        for link in &net.links {
            out_links[link.tail].push(link.id);
            in_links[link.head].push(link.id);
        }
        Self {
            net,
            out_links,
            in_links,
        }
    }

    fn passable(&self, node: usize) -> bool {
        node >= self.net.first_thru_node
    }

    fn path_cost(&self, links: &[usize]) -> f64 {
        links.iter().fold(0.0, |acc, &l| acc + self.net.links[l].b)
    }

    /// Lexicographically smallest shortest path from `src` to `dst` that
    /// avoids the banned nodes and links.
    fn spur(
        &self,
        src: usize,
        dst: usize,
        banned_nodes: &[bool],
        banned_links: &[bool],
    ) -> Option<Vec<usize>> {
        let n = self.net.num_nodes + 1;
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[dst] = 0.0;
        heap.push(HeapEntry { dist: 0.0, node: dst });
        while let Some(HeapEntry { dist: dv, node: v }) = heap.pop() {
            if done[v] {
                continue;
            }
            done[v] = true;
            if v == src {
                break;
            }
            if v != dst && !self.passable(v) {
                continue;
            }
            for &l in &self.in_links[v] {
                let u = self.net.links[l].tail;
                if banned_links[l] || banned_nodes[u] || done[u] {
                    continue;
                }
                if u != src && !self.passable(u) {
                    continue;
                }
                let nd = dv + self.net.links[l].b;
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(HeapEntry { dist: nd, node: u });
                }
            }
        }
        if !dist[src].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut visited = vec![false; n];
        let mut cur = src;
        visited[src] = true;
        while cur != dst {
            let tol = 1e-12 * dist[cur].abs().max(1.0);
            let next = self.out_links[cur].iter().copied().find(|&l| {
                let link = &self.net.links[l];
                let h = link.head;
                !banned_links[l]
                    && !banned_nodes[h]
                    && !visited[h]
                    && (h == dst || self.passable(h))
                    && dist[h].is_finite()
                    && link.b + dist[h] <= dist[cur] + tol
            })?;
            path.push(next);
            cur = self.net.links[next].head;
            visited[cur] = true;
        }
        Some(path)
    }

    pub(crate) fn k_shortest(&self, origin: usize, destination: usize, k: usize) -> Result<Vec<Vec<usize>>> {
        let n_nodes = self.net.num_nodes + 1;
        let n_links = self.net.links.len();
        let no_nodes = vec![false; n_nodes];
        let no_links = vec![false; n_links];
        let first = self
            .spur(origin, destination, &no_nodes, &no_links)
            .ok_or(Error::Disconnected {
                origin,
                destination,
            })?;
        let mut accepted: Vec<Vec<usize>> = vec![first];
        let mut seen: HashSet<Vec<usize>> = accepted.iter().cloned().collect();
        let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();

        while accepted.len() < k {
            let last = accepted.last().unwrap().clone();
            let mut nodes = Vec::with_capacity(last.len() + 1);
            nodes.push(origin);
            nodes.extend(last.iter().map(|&l| self.net.links[l].head));

            for i in 0..last.len() {
                let spur_node = nodes[i];
                let root = &last[..i];
                let mut banned_links = no_links.clone();
                for p in &accepted {
                    if p.len() > i && &p[..i] == root {
                        banned_links[p[i]] = true;
                    }
                }
                let mut banned_nodes = no_nodes.clone();
                for &node in &nodes[..i] {
                    banned_nodes[node] = true;
                }
                if let Some(spur) = self.spur(spur_node, destination, &banned_nodes, &banned_links) {
                    let mut full = root.to_vec();
                    full.extend(spur);
                    if seen.insert(full.clone()) {
                        candidates.push((self.path_cost(&full), full));
                    }
                }
            }
            let Some(best) = candidates
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
                .map(|(i, _)| i)
            else {
                break;
            };
            accepted.push(candidates.swap_remove(best).1);
        }
        Ok(accepted)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn diamond() -> Network {
        // 1 -> 2 -> 4 and 1 -> 3 -> 4
        let links = vec![
            Link { id: 0, tail: 1, head: 2, b: 1.0, c: 10.0, w: 0.15 },
            Link { id: 1, tail: 1, head: 3, b: 2.0, c: 10.0, w: 0.15 },
            Link { id: 2, tail: 2, head: 4, b: 1.0, c: 10.0, w: 0.15 },
            Link { id: 3, tail: 3, head: 4, b: 1.0, c: 10.0, w: 0.15 },
        ];
        Network::new(4, links, vec![OdPair::new(1, 4)], vec![10.0]).unwrap()
    }

    const ONE_LINK_NET: &str = "<NUMBER OF ZONES> 2\n<NUMBER OF NODES> 2\n<FIRST THRU NODE> 1\n<NUMBER OF LINKS> 1\n<END OF METADATA>\n\n~ init term cap len fft B power speed toll type ;\n\t1\t2\t10\t1\t1\t0.15\t4\t0\t0\t1\t;\n";
    const ONE_LINK_TRIPS: &str = "<NUMBER OF ZONES> 2\n<TOTAL OD FLOW> 5.0\n<END OF METADATA>\n\nOrigin 1\n    1 :    0.0;    2 :    5.0;\n\nOrigin 2\n    1 :    0.0;    2 :    0.0;\n";

    #[test]
    fn one_link_file_reads_back_verbatim() {
        let net = parse_tntp(ONE_LINK_NET.as_bytes(), ONE_LINK_TRIPS.as_bytes()).unwrap();
        assert_eq!(net.num_nodes(), 2);
        assert_eq!(net.num_links(), 1);
        let l = &net.links()[0];
        assert_eq!((l.b, l.c, l.w), (1.0, 10.0, 0.15));
        // zero-demand pairs dropped
        assert_eq!(net.od_pairs(), &[OdPair::new(1, 2)]);
        assert_eq!(net.demand(), &[5.0]);
    }

    #[test]
    fn empty_stream_is_a_parse_error() {
        let err = parse_tntp("".as_bytes(), ONE_LINK_TRIPS.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingTag("NUMBER OF NODES")), "{err}");
    }

    #[test]
    fn missing_tag_is_named() {
        let text = ONE_LINK_NET.replace("<FIRST THRU NODE> 1\n", "");
        let err = parse_tntp(text.as_bytes(), ONE_LINK_TRIPS.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingTag("FIRST THRU NODE")), "{err}");
        assert!(err.to_string().contains("FIRST THRU NODE"));
    }

    #[test]
    fn non_quartic_power_is_rejected() {
        let text = ONE_LINK_NET.replace("0.15\t4\t", "0.15\t2\t");
        let err = parse_tntp(text.as_bytes(), ONE_LINK_TRIPS.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedExponent { link: 0, .. }), "{err}");
    }

    #[test]
    fn negative_capacity_and_demand_are_rejected() {
        let text = ONE_LINK_NET.replace("\t10\t1\t1\t", "\t-10\t1\t1\t");
        let err = parse_tntp(text.as_bytes(), ONE_LINK_TRIPS.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let trips = ONE_LINK_TRIPS.replace("2 :    5.0", "2 :   -5.0");
        let err = parse_tntp(ONE_LINK_NET.as_bytes(), trips.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn link_count_must_match_header() {
        let text = ONE_LINK_NET.replace("<NUMBER OF LINKS> 1", "<NUMBER OF LINKS> 2");
        assert!(parse_tntp(text.as_bytes(), ONE_LINK_TRIPS.as_bytes()).is_err());
    }

    #[test]
    fn diamond_routes_and_incidence() {
        let mut net = diamond();
        let gen = generate_routes(&net, 2).unwrap();
        assert_eq!(gen.warning_count(), 0);
        assert_eq!(gen.routes[0].links, vec![0, 2]);
        assert_eq!(gen.routes[1].links, vec![1, 3]);
        net.set_routes(gen.routes).unwrap();
        let f = net.link_route_incidence().to_dense();
        for j in 0..2 {
            assert_eq!(f.iter().map(|row| row[j] as u32).sum::<u32>(), 2);
        }
        assert_eq!(net.route_od_incidence().to_dense(), vec![vec![1, 1]]);
    }

    #[test]
    fn k_one_is_the_cheapest_path() {
        let net = diamond();
        let gen = generate_routes(&net, 1).unwrap();
        assert_eq!(gen.routes.len(), 1);
        assert_eq!(gen.routes[0].links, vec![0, 2]);
    }

    #[test]
    fn asking_for_too_many_paths_warns() {
        let net = diamond();
        let gen = generate_routes(&net, 5).unwrap();
        assert_eq!(gen.routes.len(), 2);
        assert_eq!(gen.short_od, vec![0]);
    }

    #[test]
    fn disconnected_od_is_an_error() {
        let links = vec![Link { id: 0, tail: 1, head: 2, b: 1.0, c: 1.0, w: 1.0 }];
        let net = Network::new(3, links, vec![OdPair::new(1, 3)], vec![1.0]).unwrap();
        assert!(matches!(
            generate_routes(&net, 1),
            Err(Error::Disconnected { origin: 1, destination: 3 })
        ));
    }

    #[test]
    fn zone_nodes_are_not_passed_through() {
        // 1 -> 2 -> 3 is cheap but node 2 is a zone centroid
        let links = vec![
            Link { id: 0, tail: 1, head: 2, b: 1.0, c: 1.0, w: 1.0 },
            Link { id: 1, tail: 2, head: 3, b: 1.0, c: 1.0, w: 1.0 },
            Link { id: 2, tail: 1, head: 4, b: 5.0, c: 1.0, w: 1.0 },
            Link { id: 3, tail: 4, head: 3, b: 5.0, c: 1.0, w: 1.0 },
        ];
        let net = Network::new(4, links, vec![OdPair::new(1, 3)], vec![1.0])
            .unwrap()
            .with_first_thru_node(4);
        let gen = generate_routes(&net, 3).unwrap();
        assert_eq!(gen.routes.len(), 1);
        assert_eq!(gen.routes[0].links, vec![2, 3]);
    }

    #[test]
    fn link_flow_examples() {
        let mut net = diamond();
        net.set_routes(vec![
            Route { od: 0, links: vec![0, 2] },
            Route { od: 0, links: vec![1, 3] },
        ])
        .unwrap();
        let f = net.link_route_incidence();
        assert_eq!(link_flow(&f, &[0.0, 0.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(link_flow(&f, &[5.0, 0.0]).unwrap(), vec![5.0, 0.0, 5.0, 0.0]);
        assert!(matches!(link_flow(&f, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn shared_link_flows_add_up() {
        // two routes sharing link 0: 1 -> 2 then 2 -> 3 or 2 -> 4 -> 3
        let links = vec![
            Link { id: 0, tail: 1, head: 2, b: 1.0, c: 1.0, w: 1.0 },
            Link { id: 1, tail: 2, head: 3, b: 1.0, c: 1.0, w: 1.0 },
            Link { id: 2, tail: 2, head: 4, b: 1.0, c: 1.0, w: 1.0 },
            Link { id: 3, tail: 4, head: 3, b: 1.0, c: 1.0, w: 1.0 },
        ];
        let mut net = Network::new(4, links, vec![OdPair::new(1, 3)], vec![5.0]).unwrap();
        net.set_routes(vec![
            Route { od: 0, links: vec![0, 1] },
            Route { od: 0, links: vec![0, 2, 3] },
        ])
        .unwrap();
        let y = link_flow(&net.link_route_incidence(), &[2.0, 3.0]).unwrap();
        assert_eq!(y[0], 5.0);
    }

    #[test]
    fn disconnected_route_is_rejected() {
        let mut net = diamond();
        let err = net
            .set_routes(vec![Route { od: 0, links: vec![0, 3] }])
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn geojson_nodes_parse() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"id":2},"geometry":{"type":"Point","coordinates":[1.5,-2.0]}},
            {"type":"Feature","properties":{"node":"7"},"geometry":{"type":"Point","coordinates":[0,3]}}]}"#;
        let c = parse_geojson_nodes(text.as_bytes()).unwrap();
        assert_eq!(c[&2], [1.5, -2.0]);
        assert_eq!(c[&7], [0.0, 3.0]);
        assert!(parse_geojson_nodes("{}".as_bytes()).is_err());
    }

    #[test]
    fn nodes_file_parses() {
        let text = "Node\tX\tY\t;\n1\t-117.9\t33.8\t;\n2\t-117.8\t33.9\t;\n";
        let c = parse_tntp_nodes(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[&2], [-117.8, 33.9]);
    }
}
