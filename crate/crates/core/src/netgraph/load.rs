use std::path::Path;

use super::{NetworkError, RawEdge, RawNode, RoadNetwork, WeightMode};
use crate::tabular::{field, Table, TableError};

fn convert(err: TableError, file: &str) -> NetworkError {
    match err {
        TableError::Io(source) => NetworkError::Io {
            path: file.to_string(),
            source,
        },
        TableError::Format { line, reason } => NetworkError::MalformedRow {
            file: file.to_string(),
            line,
            reason,
        },
    }
}

fn read(path: &Path) -> Result<Table, NetworkError> {
    let name = path.display().to_string();
    Table::read(path).map_err(|e| convert(e, &name))
}

/// Parses a `node_id,lat,lon` table. Returns nodes with their line numbers.
pub fn parse_nodes(text: &str, file: &str) -> Result<Vec<(usize, RawNode)>, NetworkError> {
    let table = Table::parse(text, file).map_err(|e| convert(e, file))?;
    nodes_from(&table)
}

/// Parses a `from_id,to_id,length_m,speed_mps` table.
pub fn parse_edges(text: &str, file: &str) -> Result<Vec<(usize, RawEdge)>, NetworkError> {
    let table = Table::parse(text, file).map_err(|e| convert(e, file))?;
    edges_from(&table)
}

fn nodes_from(t: &Table) -> Result<Vec<(usize, RawNode)>, NetworkError> {
    let c = |e| convert(e, &t.file);
    let (ci, cla, clo) = (
        t.column("node_id").map_err(c)?,
        t.column("lat").map_err(c)?,
        t.column("lon").map_err(c)?,
    );
    t.rows
        .iter()
        .map(|(line, f)| {
            Ok((
                *line,
                RawNode {
                    id: field(f, ci, *line, "node_id").map_err(c)?,
                    lat: field(f, cla, *line, "lat").map_err(c)?,
                    lon: field(f, clo, *line, "lon").map_err(c)?,
                },
            ))
        })
        .collect()
}

fn edges_from(t: &Table) -> Result<Vec<(usize, RawEdge)>, NetworkError> {
    let c = |e| convert(e, &t.file);
    let cols = [
        t.column("from_id").map_err(c)?,
        t.column("to_id").map_err(c)?,
        t.column("length_m").map_err(c)?,
        t.column("speed_mps").map_err(c)?,
    ];
    t.rows
        .iter()
        .map(|(line, f)| {
            Ok((
                *line,
                RawEdge {
                    from: field(f, cols[0], *line, "from_id").map_err(c)?,
                    to: field(f, cols[1], *line, "to_id").map_err(c)?,
                    length_m: field(f, cols[2], *line, "length_m").map_err(c)?,
                    speed_mps: field(f, cols[3], *line, "speed_mps").map_err(c)?,
                },
            ))
        })
        .collect()
}

/// Loads and validates a network from the nodes and edges CSV files.
pub fn load_network(
    nodes_file: &Path,
    edges_file: &Path,
    mode: WeightMode,
) -> Result<RoadNetwork, NetworkError> {
    let nt = read(nodes_file)?;
    let et = read(edges_file)?;
    let (node_lines, nodes): (Vec<_>, Vec<_>) = nodes_from(&nt)?.into_iter().unzip();
    let (edge_lines, edges): (Vec<_>, Vec<_>) = edges_from(&et)?.into_iter().unzip();
    RoadNetwork::build(nodes, edges, mode, &et.file, &node_lines, &edge_lines).map_err(|e| match e {
        NetworkError::DuplicateNode { line, node, .. } => NetworkError::DuplicateNode {
            file: nt.file.clone(),
            line,
            node,
        },
        other => other,
    })
}
