//! Embedded 8x12 bitmap digits. Bit 7 of each row byte is the leftmost pixel.

pub(crate) const GLYPH_W: u32 = 8;
pub(crate) const GLYPH_H: u32 = 12;

#[rustfmt::skip]
const DIGITS: [[u8; 12]; 10] = [
    [0x00, 0x3C, 0x66, 0x66, 0x6E, 0x76, 0x66, 0x66, 0x66, 0x3C, 0x00, 0x00],
    [0x00, 0x18, 0x38, 0x78, 0x18, 0x18, 0x18, 0x18, 0x18, 0x7E, 0x00, 0x00],
    [0x00, 0x3C, 0x66, 0x06, 0x06, 0x0C, 0x18, 0x30, 0x60, 0x7E, 0x00, 0x00],
    [0x00, 0x3C, 0x66, 0x06, 0x06, 0x1C, 0x06, 0x06, 0x66, 0x3C, 0x00, 0x00],
    [0x00, 0x0C, 0x1C, 0x3C, 0x6C, 0xCC, 0xFE, 0x0C, 0x0C, 0x0C, 0x00, 0x00],
    [0x00, 0x7E, 0x60, 0x60, 0x7C, 0x06, 0x06, 0x06, 0x66, 0x3C, 0x00, 0x00],
    [0x00, 0x1C, 0x30, 0x60, 0x7C, 0x66, 0x66, 0x66, 0x66, 0x3C, 0x00, 0x00],
    [0x00, 0x7E, 0x06, 0x06, 0x0C, 0x18, 0x18, 0x30, 0x30, 0x30, 0x00, 0x00],
    [0x00, 0x3C, 0x66, 0x66, 0x66, 0x3C, 0x66, 0x66, 0x66, 0x3C, 0x00, 0x00],
    [0x00, 0x3C, 0x66, 0x66, 0x66, 0x3E, 0x06, 0x06, 0x0C, 0x38, 0x00, 0x00],
];

/// Row bitmaps for an ASCII digit, `None` for anything else.
pub(crate) fn glyph(c: char) -> Option<&'static [u8; 12]> {
    c.to_digit(10).map(|d| &DIGITS[d as usize])
}
