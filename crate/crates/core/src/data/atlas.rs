use crate::render::TEXTURE_SIZE;

/// Number of rigid parts of the mannequin.
pub const NUM_PARTS: usize = 6;

/// Body parts in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Torso,
    Head,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

impl Part {
    pub const ALL: [Part; NUM_PARTS] = [Part::Torso, Part::Head, Part::LeftArm, Part::RightArm, Part::LeftLeg, Part::RightLeg];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Torso => "torso",
            Part::Head => "head",
            Part::LeftArm => "left_arm",
            Part::RightArm => "right_arm",
            Part::LeftLeg => "left_leg",
            Part::RightLeg => "right_leg",
        }
    }
}

/// Half-open texel rectangle: columns `x0..x1`, rows `y0..y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub const fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.y0..self.y1).contains(&row) && (self.x0..self.x1).contains(&col)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// UV of texel `(row, col)`.
    pub fn texel_uv(row: f64, col: f64) -> [f64; 2] {
        let s = (TEXTURE_SIZE - 1) as f64;
        [col / s, row / s]
    }
}

/// Fixed placement of every part (and the face) in the UV square.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasLayout {
    pub parts: [Rect; NUM_PARTS],
    pub face: Rect,
}

impl Default for AtlasLayout {
    fn default() -> Self {
        Self {
            parts: [
                Rect::new(0, 0, 64, 48),
                Rect::new(64, 0, 112, 24),
                Rect::new(0, 48, 24, 96),
                Rect::new(24, 48, 48, 96),
                Rect::new(48, 48, 80, 104),
                Rect::new(80, 48, 112, 104),
            ],
            face: Rect::new(76, 4, 100, 20),
        }
    }
}

impl AtlasLayout {
    pub fn rect(&self, part: Part) -> Rect {
        self.parts[part as usize]
    }

    /// Part owning texel `(row, col)`, if any.
    pub fn part_at(&self, row: usize, col: usize) -> Option<Part> {
        Part::ALL.into_iter().find(|&p| self.rect(p).contains(row, col))
    }

    /// `TEXTURE_SIZE^2` indicator of texels inside any part rectangle.
    pub fn used_mask(&self) -> Vec<bool> {
        let n = TEXTURE_SIZE;
        (0..n * n).map(|i| self.part_at(i / n, i % n).is_some()).collect()
    }

    /// `TEXTURE_SIZE^2` indicator of the face rectangle.
    pub fn face_mask(&self) -> Vec<bool> {
        let n = TEXTURE_SIZE;
        (0..n * n).map(|i| self.face.contains(i / n, i % n)).collect()
    }
}
