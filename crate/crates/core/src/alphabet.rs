//! Character alphabet shared by labels, decoding, and synthesis.
//!
//! 29 symbols: `a`-`z`, space, apostrophe, plus the CTC blank. The blank
//! occupies the last index; every module that touches label indices relies
//! on that placement.

/// Number of output symbols including the blank.
pub const ALPHABET_SIZE: usize = 29;

/// Index of the CTC blank symbol (always the last index).
pub const BLANK: usize = ALPHABET_SIZE - 1;

const CHARS: [char; ALPHABET_SIZE - 1] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's',
    't', 'u', 'v', 'w', 'x', 'y', 'z', ' ', '\'',
];

/// Maps a character to its label index, or `None` if it is not in the alphabet.
pub fn char_to_index(c: char) -> Option<usize> {
    match c {
        'a'..='z' => Some(c as usize - 'a' as usize),
        ' ' => Some(26),
        '\'' => Some(27),
        _ => None,
    }
}

/// Maps a non-blank label index back to its character.
///
/// Panics if `idx` is the blank or out of range; decoded paths must have
/// blanks stripped first.
pub fn index_to_char(idx: usize) -> char {
    CHARS[idx]
}

/// Converts a normalized transcript into label indices (blank excluded).
///
/// Returns `Err` with the offending character if the text contains anything
/// outside the alphabet.
pub fn encode(text: &str) -> Result<Vec<usize>, char> {
    text.chars().map(|c| char_to_index(c).ok_or(c)).collect()
}

/// Converts label indices back into a string.
pub fn decode(indices: &[usize]) -> String {
    indices.iter().map(|&i| index_to_char(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_symbols() {
        for i in 0..BLANK {
            assert_eq!(char_to_index(index_to_char(i)), Some(i));
        }
    }

    #[test]
    fn rejects_out_of_alphabet() {
        assert_eq!(char_to_index('3'), None);
        assert_eq!(char_to_index(','), None);
        assert_eq!(encode("ab3"), Err('3'));
    }

    #[test]
    fn encode_decode() {
        let ids = encode("it's a test").unwrap();
        assert_eq!(decode(&ids), "it's a test");
    }
}
