use serde::{Deserialize, Serialize};

/// Maps class ids to head output units.
///
/// The OTHER unit, when enabled, is unit 0 so that appending classes never
/// moves an existing unit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutputLayout {
    other: Option<usize>,
    classes: Vec<usize>,
}

impl OutputLayout {
    pub fn new(other: Option<usize>) -> Self {
        Self {
            other,
            classes: Vec::new(),
        }
    }

    /// Appends classes not yet present; returns how many units were added.
    pub fn extend(&mut self, classes: &[usize]) -> usize {
        let before = self.classes.len();
        for &c in classes {
            if Some(c) != self.other && !self.classes.contains(&c) {
                self.classes.push(c);
            }
        }
        self.classes.len() - before
    }

    pub fn width(&self) -> usize {
        self.classes.len() + usize::from(self.other.is_some())
    }

    pub fn other_class(&self) -> Option<usize> {
        self.other
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn unit_of(&self, class: usize) -> Option<usize> {
        let offset = usize::from(self.other.is_some());
        if self.other == Some(class) {
            return Some(0);
        }
        self.classes.iter().position(|&c| c == class).map(|p| p + offset)
    }

    pub fn class_of(&self, unit: usize) -> Option<usize> {
        match (self.other, unit) {
            (Some(o), 0) => Some(o),
            (Some(_), u) => self.classes.get(u - 1).copied(),
            (None, u) => self.classes.get(u).copied(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn other_is_unit_zero_and_stable() {
        let mut l = OutputLayout::new(Some(30));
        assert_eq!(l.extend(&[4, 5]), 2);
        assert_eq!(l.unit_of(30), Some(0));
        assert_eq!(l.unit_of(5), Some(2));
        assert_eq!(l.extend(&[5, 0]), 1);
        assert_eq!(l.unit_of(0), Some(3));
        assert_eq!(l.width(), 4);
        assert_eq!(l.class_of(3), Some(0));
        assert_eq!(l.unit_of(9), None);
        let plain = {
            let mut p = OutputLayout::new(None);
            p.extend(&[2, 3]);
            p
        };
        assert_eq!(plain.unit_of(2), Some(0));
        assert_eq!(plain.class_of(1), Some(3));
    }
}
