use super::{Attribute, Layout, RuleDescriptor, Shift, Sign};

/// Value range of one attribute within one component layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Domain {
    pub attr: Attribute,
    pub min: i64,
    pub max: i64,
    pub slots: usize,
}

impl Domain {
    /// Default ranges: type 1-5, size 1-6, color 0-9, number 1-slots, position
    /// any nonempty slot mask.
    pub fn standard(attr: Attribute, layout: Layout) -> Self {
        let slots = layout.slots();
        let (min, max) = match attr {
            Attribute::Type => (1, 5),
            Attribute::Size => (1, 6),
            Attribute::Color => (0, 9),
            Attribute::Number => (1, slots as i64),
            Attribute::Position => (1, (1i64 << slots) - 1),
        };
        Self { attr, min, max, slots }
    }

    pub fn contains(&self, v: i64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    pub fn values(&self) -> impl Iterator<Item = i64> {
        self.min..=self.max
    }

    pub fn is_mask(&self) -> bool {
        self.attr == Attribute::Position
    }
}

/// Row index (0-based) and the first row, which fixes the distribute-three triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowContext {
    pub row: usize,
    pub first_row: [i64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleError {
    /// The rule's result leaves the attribute domain; the caller should resample.
    OutOfRange(i64),
    /// The first two values are not compatible with the rule.
    Inconsistent,
}

pub fn popcount(mask: i64) -> i64 {
    mask.count_ones() as i64
}

/// Circular shift of a slot mask by `step` slots (positive = towards higher slots).
pub fn rotate_mask(mask: i64, step: i64, slots: usize) -> i64 {
    let n = slots as i64;
    let s = step.rem_euclid(n);
    let full = (1i64 << n) - 1;
    ((mask << s) | (mask >> (n - s))) & full
}

/// The third value of a row mandated by `rule`, given the row's first two values.
pub fn apply_rule(
    rule: &RuleDescriptor,
    first: i64,
    second: i64,
    ctx: &RowContext,
    domain: &Domain,
) -> Result<i64, RuleError> {
    let mask = domain.is_mask();
    let third = match *rule {
        RuleDescriptor::Constant => {
            if first != second {
                return Err(RuleError::Inconsistent);
            }
            second
        }
        RuleDescriptor::Progression { step } => {
            if mask {
                if rotate_mask(first, step, domain.slots) != second {
                    return Err(RuleError::Inconsistent);
                }
                rotate_mask(second, step, domain.slots)
            } else {
                if second - first != step {
                    return Err(RuleError::Inconsistent);
                }
                second + step
            }
        }
        RuleDescriptor::Arithmetic { sign } => match (sign, mask) {
            (Sign::Plus, false) => first + second,
            (Sign::Minus, false) => first - second,
            (Sign::Plus, true) => first | second,
            (Sign::Minus, true) => first & !second,
        },
        RuleDescriptor::DistributeThree { shift } => {
            let t = ctx.first_row;
            let i = ctx.row % 3;
            let at = |j: usize| match shift {
                Shift::Left => t[(j + i) % 3],
                Shift::Right => t[(j + 3 - i) % 3],
            };
            if at(0) != first || at(1) != second {
                return Err(RuleError::Inconsistent);
            }
            at(2)
        }
    };
    if domain.contains(third) {
        Ok(third)
    } else {
        Err(RuleError::OutOfRange(third))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn color() -> Domain {
        Domain::standard(Attribute::Color, Layout::Single)
    }

    fn ctx(row: usize) -> RowContext {
        RowContext { row, first_row: [3, 6, 9] }
    }

    #[test]
    fn arithmetic_plus() {
        let r = RuleDescriptor::Arithmetic { sign: Sign::Plus };
        assert_eq!(apply_rule(&r, 1, 2, &ctx(0), &color()), Ok(3));
        assert_eq!(apply_rule(&r, 7, 5, &ctx(0), &color()), Err(RuleError::OutOfRange(12)));
    }

    #[test]
    fn progression_step_one() {
        let r = RuleDescriptor::Progression { step: 1 };
        assert_eq!(apply_rule(&r, 2, 3, &ctx(0), &color()), Ok(4));
        assert_eq!(apply_rule(&r, 2, 4, &ctx(0), &color()), Err(RuleError::Inconsistent));
    }

    #[test]
    fn distribute_three_left_rows() {
        let r = RuleDescriptor::DistributeThree { shift: Shift::Left };
        let rows = [[3, 6, 9], [6, 9, 3], [9, 3, 6]];
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(apply_rule(&r, row[0], row[1], &ctx(i), &color()), Ok(row[2]));
        }
        let right = RuleDescriptor::DistributeThree { shift: Shift::Right };
        let rows = [[3, 6, 9], [9, 3, 6], [6, 9, 3]];
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(apply_rule(&right, row[0], row[1], &ctx(i), &color()), Ok(row[2]));
        }
    }

    #[test]
    fn mask_rules() {
        let d = Domain::standard(Attribute::Position, Layout::Grid { slots: 4 });
        assert_eq!(rotate_mask(0b1001, 1, 4), 0b0011);
        assert_eq!(rotate_mask(0b0011, -1, 4), 0b1001);
        let plus = RuleDescriptor::Arithmetic { sign: Sign::Plus };
        assert_eq!(apply_rule(&plus, 0b0001, 0b0100, &ctx(0), &d), Ok(0b0101));
        let minus = RuleDescriptor::Arithmetic { sign: Sign::Minus };
        assert_eq!(apply_rule(&minus, 0b0101, 0b0101, &ctx(0), &d), Err(RuleError::OutOfRange(0)));
        let prog = RuleDescriptor::Progression { step: 1 };
        assert_eq!(apply_rule(&prog, 0b0001, 0b0010, &ctx(0), &d), Ok(0b0100));
    }
}
