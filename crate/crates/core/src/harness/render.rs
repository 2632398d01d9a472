//! Pixmap rendering: reachability maps in the shared palette and an
//! action-angle overlay where each cell's hue encodes the policy direction.

use std::io::Write;
use std::path::Path;

use crate::gridworld::{ActionId, Cell, Map, GRID_CELLS, GRID_SIZE};
use crate::metrics::{policy_graph, reachable_set, reachability_pixels, MetricsError, GOAL_RGB, WALL_RGB};

/// Write a binary pixmap (`P6`) with the given RGB bytes.
pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), width * height * 3, "pixel buffer size mismatch");
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P6\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    out.flush()
}

/// Hue (degrees) to RGB at full saturation and value.
pub fn hue_rgb(degrees: f64) -> [u8; 3] {
    let h = degrees.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Color of an action: hue = k * 45 degrees.
pub fn action_rgb(action: ActionId) -> [u8; 3] {
    hue_rgb(f64::from(action.k()) * 45.0)
}

/// Reachability pixmap for one (map, goal, policy).
pub fn render_reachability(
    map: &Map,
    goal: Cell,
    policy: impl Fn(Cell) -> ActionId,
) -> Result<Vec<u8>, MetricsError> {
    let graph = policy_graph(map, goal, policy)?;
    let reach = reachable_set(map, &graph);
    Ok(reachability_pixels(map, goal, &reach))
}

/// Action-angle pixmap: open cells take their action's hue, walls and the
/// goal keep the shared palette.
pub fn render_policy_angles(map: &Map, goal: Cell, policy: impl Fn(Cell) -> ActionId) -> Vec<u8> {
    let mut pixels = Vec::with_capacity(GRID_CELLS * 3);
    for idx in 0..GRID_CELLS {
        let cell = Cell::from_index(idx);
        let rgb = if cell == goal {
            GOAL_RGB
        } else if !map.is_open(cell) {
            WALL_RGB
        } else {
            action_rgb(policy(cell))
        };
        pixels.extend_from_slice(&rgb);
    }
    pixels
}

/// Parse a `P6` pixmap back into (width, height, pixels); the reference
/// reader used by tests and downstream tooling.
pub fn read_ppm(path: &Path) -> std::io::Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, reason);
    // header: "P6" <ws> width <ws> height <ws> maxval <single ws> data
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1; // single whitespace after maxval
    if fields[0] != "P6" {
        return Err(bad("not a P6 pixmap"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("expected maxval 255"));
    }
    let data = bytes[pos..].to_vec();
    if data.len() != width * height * 3 {
        return Err(bad("pixel data length mismatch"));
    }
    Ok((width, height, data))
}

/// Render both variants next to each other: `<out>` gets the reachability
/// map, and the angle overlay lands at `<out stem>.policy.ppm`.
pub fn render_pair(
    map: &Map,
    goal: Cell,
    out: &Path,
    policy: impl Fn(Cell) -> ActionId + Copy,
) -> Result<std::path::PathBuf, crate::harness::HarnessError> {
    let reach = render_reachability(map, goal, policy)?;
    write_ppm(out, GRID_SIZE, GRID_SIZE, &reach)?;
    let angles = render_policy_angles(map, goal, policy);
    let overlay = out.with_extension("policy.ppm");
    write_ppm(&overlay, GRID_SIZE, GRID_SIZE, &angles)?;
    Ok(overlay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::UNREACHABLE_RGB;
    use crate::oracle::oracle_labels;

    #[test]
    fn ppm_round_trip_and_oracle_render() {
        let map = Map::from_id(31);
        let goal = Cell::new(13, 24).unwrap();
        let labels = oracle_labels(&map, goal).unwrap();
        let policy = |s: Cell| labels.canonical(s).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("reach.ppm");
        let overlay = render_pair(&map, goal, &out, policy).unwrap();

        let (w, h, pixels) = read_ppm(&out).unwrap();
        assert_eq!((w, h), (GRID_SIZE, GRID_SIZE));
        // oracle policy: no unreachable-colored open pixels anywhere
        for chunk in pixels.chunks_exact(3) {
            assert_ne!(chunk, UNREACHABLE_RGB);
        }

        let (_, _, angle_pixels) = read_ppm(&overlay).unwrap();
        assert_eq!(angle_pixels.len(), GRID_CELLS * 3);
        // wall corner keeps the palette in both renders
        assert_eq!(&pixels[0..3], &WALL_RGB);
        assert_eq!(&angle_pixels[0..3], &WALL_RGB);
    }

    #[test]
    fn eight_action_hues_are_distinct() {
        let mut colors: Vec<[u8; 3]> = ActionId::ALL.iter().map(|a| action_rgb(*a)).collect();
        colors.sort();
        colors.dedup();
        assert_eq!(colors.len(), 8);
    }

    #[test]
    fn goal_on_wall_render_fails() {
        let map = Map::from_id(0);
        let wall = Cell::new(0, 0).unwrap();
        assert!(render_reachability(&map, wall, |_| ActionId::new(1).unwrap()).is_err());
    }
}
