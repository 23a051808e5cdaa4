use super::NavError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Wall,
    Start,
    Goal,
    Item,
}

impl Cell {
    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '.' => Cell::Free,
            '#' => Cell::Wall,
            'S' => Cell::Start,
            'G' => Cell::Goal,
            'I' => Cell::Item,
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Wall => '#',
            Cell::Start => 'S',
            Cell::Goal => 'G',
            Cell::Item => 'I',
        }
    }
}

/// `(x, y)`: column, then row counted from the first line.
pub type Pos = (usize, usize);

/// Occupancy grid. Row `y` maps to planar coordinate `(y + ½)·cell_size` and
/// column `x` to `(x + ½)·cell_size`, so heading 0 moves along +x and a left
/// turn from there moves towards smaller `y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    pub cell_size_mm: u32,
    cells: Vec<Cell>,
}

impl GridMap {
    /// Unchecked grid of `fill` cells; used for planning on synthetic maps.
    pub fn filled(width: usize, height: usize, cell_size: f64, fill: Cell) -> Self {
        Self {
            width,
            height,
            cell_size_mm: (cell_size * 1000.0).round() as u32,
            cells: vec![fill; width * height],
        }
    }

    /// Parses the text format: one row per line over `# . S G I`. Blank
    /// trailing lines are ignored; rows must have equal width.
    pub fn parse(text: &str, cell_size: f64) -> Result<Self, NavError> {
        if !(cell_size > 0.0) {
            return Err(NavError::Map(format!("cell size must be positive, got {cell_size}")));
        }
        let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        let last = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
        let mut cells = Vec::new();
        let mut width = None;
        for (i, line) in lines[..last].iter().enumerate() {
            let row: Vec<Cell> = line
                .chars()
                .enumerate()
                .map(|(col, c)| {
                    Cell::from_char(c).ok_or_else(|| NavError::Parse {
                        line: i + 1,
                        msg: format!("unexpected character {c:?} at column {}", col + 1),
                    })
                })
                .collect::<Result<_, _>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(NavError::Parse {
                        line: i + 1,
                        msg: format!("row has {} cells, expected {w}", row.len()),
                    })
                }
                _ => {}
            }
            cells.extend(row);
        }
        let width = width.filter(|&w| w > 0).ok_or_else(|| NavError::Map("map is empty".into()))?;
        let map = Self {
            width,
            height: last,
            cell_size_mm: (cell_size * 1000.0).round() as u32,
            cells,
        };
        map.validate()?;
        Ok(map)
    }

    /// Exactly one start and at least one goal or item.
    pub fn validate(&self) -> Result<(), NavError> {
        let starts = self.cells.iter().filter(|c| **c == Cell::Start).count();
        if starts != 1 {
            return Err(NavError::Map(format!("expected exactly one start, found {starts}")));
        }
        if !self.cells.iter().any(|c| matches!(c, Cell::Goal | Cell::Item)) {
            return Err(NavError::Map("map has no goal or item".into()));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size_mm as f64 / 1000.0
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.0 < self.width && p.1 < self.height
    }

    pub fn get(&self, p: Pos) -> Cell {
        self.cells[p.1 * self.width + p.0]
    }

    pub fn set(&mut self, p: Pos, c: Cell) {
        self.cells[p.1 * self.width + p.0] = c;
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.get(p) == Cell::Wall
    }

    pub fn find(&self, kind: Cell) -> Vec<Pos> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] == kind)
            .map(|i| (i % self.width, i / self.width))
            .collect()
    }

    pub fn start(&self) -> Option<Pos> {
        self.find(Cell::Start).first().copied()
    }

    /// Walkable 4-neighbours in the order up, left, right, down.
    pub fn neighbours(&self, p: Pos) -> impl Iterator<Item = Pos> + '_ {
        let (x, y) = (p.0 as isize, p.1 as isize);
        [(x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1)]
            .into_iter()
            .filter(|&(a, b)| a >= 0 && b >= 0)
            .map(|(a, b)| (a as usize, b as usize))
            .filter(move |&q| self.in_bounds(q) && !self.is_wall(q))
    }

    /// Planar centre of a cell.
    pub fn center(&self, p: Pos) -> [f64; 2] {
        let c = self.cell_size();
        [(p.0 as f64 + 0.5) * c, (p.1 as f64 + 0.5) * c]
    }

    pub fn render(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for row in self.cells.chunks(self.width) {
            s.extend(row.iter().map(|c| c.to_char()));
            s.push('\n');
        }
        s
    }
}
