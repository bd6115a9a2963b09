//! Uniform cell grid over a centered square, answering radial shell queries.

use crate::engulf::RadialField;
use crate::geomfield::Point2;

const NONE: u32 = u32::MAX;

/// Square cell grid covering `[-extent, extent)^2`. Points outside the square
/// go to an overflow list that every query scans.
#[derive(Debug, Clone)]
pub struct CellGrid {
    extent: f64,
    cell: f64,
    inv_cell: f64,
    side: usize,
    cells: Vec<Vec<(u32, Point2)>>,
    overflow: Vec<(u32, Point2)>,
    /// Per id: (cell index or `NONE` for overflow, slot), or absent.
    slots: Vec<Option<(u32, u32)>>,
    len: usize,
}

impl CellGrid {
    pub fn new(extent: f64, cell: f64, id_capacity: usize) -> Self {
        assert!(extent > 0.0 && cell > 0.0);
        let side = ((2.0 * extent / cell).ceil() as usize).max(1);
        Self {
            extent,
            cell,
            inv_cell: 1.0 / cell,
            side,
            cells: vec![Vec::new(); side * side],
            overflow: Vec::new(),
            slots: vec![None; id_capacity],
            len: 0,
        }
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, id: u32) -> bool {
        self.slots.get(id as usize).is_some_and(|s| s.is_some())
    }

    #[inline]
    fn axis_index(&self, v: f64) -> Option<usize> {
        let f = ((v + self.extent) * self.inv_cell).floor();
        if f >= 0.0 && f < self.side as f64 {
            Some(f as usize)
        } else {
            None
        }
    }

    #[inline]
    fn cell_of(&self, p: Point2) -> u32 {
        match (self.axis_index(p.x), self.axis_index(p.y)) {
            (Some(i), Some(j)) => (j * self.side + i) as u32,
            _ => NONE,
        }
    }

    fn bucket_mut(&mut self, cell: u32) -> &mut Vec<(u32, Point2)> {
        if cell == NONE {
            &mut self.overflow
        } else {
            &mut self.cells[cell as usize]
        }
    }

    pub fn insert(&mut self, id: u32, p: Point2) {
        if self.slots.len() <= id as usize {
            self.slots.resize(id as usize + 1, None);
        }
        debug_assert!(self.slots[id as usize].is_none(), "id {id} inserted twice");
        let cell = self.cell_of(p);
        let bucket = self.bucket_mut(cell);
        bucket.push((id, p));
        let slot = (bucket.len() - 1) as u32;
        self.slots[id as usize] = Some((cell, slot));
        self.len += 1;
    }

    pub fn remove(&mut self, id: u32) {
        let Some((cell, slot)) = self.slots[id as usize].take() else {
            return;
        };
        let bucket = self.bucket_mut(cell);
        bucket.swap_remove(slot as usize);
        if let Some(&(moved, _)) = bucket.get(slot as usize) {
            self.slots[moved as usize] = Some((cell, slot));
        }
        self.len -= 1;
    }

    /// Move `id` to `p`, inserting it if absent.
    pub fn update(&mut self, id: u32, p: Point2) {
        match self.slots.get(id as usize).copied().flatten() {
            Some((cell, slot)) if cell == self.cell_of(p) => {
                self.bucket_mut(cell)[slot as usize].1 = p;
            }
            Some(_) => {
                self.remove(id);
                self.insert(id, p);
            }
            None => self.insert(id, p),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, Point2)> + '_ {
        self.cells.iter().flatten().chain(self.overflow.iter()).copied()
    }

    #[inline]
    fn clamp_index(&self, v: f64) -> usize {
        let f = ((v + self.extent) * self.inv_cell).floor();
        f.clamp(0.0, (self.side - 1) as f64) as usize
    }
}

impl RadialField for CellGrid {
    fn collect_shell(&self, lo_sq: f64, hi_sq: f64, out: &mut Vec<u64>) {
        let mut scan = |bucket: &[(u32, Point2)]| {
            for &(id, p) in bucket {
                let d = p.norm_sq();
                if d > lo_sq && d <= hi_sq {
                    out.push(id as u64);
                }
            }
        };
        for_each_bucket(self, lo_sq, hi_sq, &mut scan);
        scan(&self.overflow);
    }
}

/// Visit the in-grid buckets that can hold points of the shell `(lo_sq, hi_sq]`.
fn for_each_bucket(g: &CellGrid, lo_sq: f64, hi_sq: f64, f: &mut impl FnMut(&[(u32, Point2)])) {
    if !(hi_sq >= 0.0) || hi_sq <= lo_sq {
        return;
    }
    // Slack absorbs rounding in the cell-index arithmetic.
    let slack = 1e-9 * (g.extent + 1.0);
    let ro = hi_sq.sqrt() + slack;
    let j0 = g.clamp_index(-ro);
    let j1 = g.clamp_index(ro);
    for j in j0..=j1 {
        let y0 = -g.extent + j as f64 * g.cell - slack;
        let y1 = y0 + g.cell + 2.0 * slack;
        let ymin_sq = if y0 <= 0.0 && y1 >= 0.0 {
            0.0
        } else {
            (y0 * y0).min(y1 * y1)
        };
        if ymin_sq > hi_sq + slack {
            continue;
        }
        let xr = (hi_sq - ymin_sq).max(0.0).sqrt() + slack;
        let i0 = g.clamp_index(-xr);
        let i1 = g.clamp_index(xr);
        // Cells lying wholly inside the inner disk hold nothing of the shell.
        let ymax_sq = (y0 * y0).max(y1 * y1);
        let (skip0, skip1) = if lo_sq > ymax_sq {
            let xi = (lo_sq - ymax_sq).sqrt() - slack;
            // cell i spans [-extent + i*cell, -extent + (i+1)*cell]
            let a = ((-xi + g.extent) * g.inv_cell).ceil();
            let b = ((xi + g.extent) * g.inv_cell).floor() - 1.0;
            if b >= a {
                (a.max(0.0) as usize, b as usize)
            } else {
                (1, 0)
            }
        } else {
            (1, 0)
        };
        let row = j * g.side;
        let mut visit = |range: std::ops::RangeInclusive<usize>| {
            for bucket in &g.cells[row + range.start()..=row + range.end()] {
                if !bucket.is_empty() {
                    f(bucket);
                }
            }
        };
        if skip0 > skip1 || skip1 < i0 || skip0 > i1 {
            visit(i0..=i1);
        } else {
            if skip0 > i0 {
                visit(i0..=skip0 - 1);
            }
            if skip1 < i1 {
                visit(skip1 + 1..=i1);
            }
        }
    }
}
