//! The 20 canonical amino acids, in the order used for embedding rows and
//! output logits.

pub const AMINO_ACIDS: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

pub const NUM_AMINO_ACIDS: usize = AMINO_ACIDS.len();

pub fn index_of(letter: u8) -> Option<usize> {
    AMINO_ACIDS.iter().position(|&a| a == letter)
}

pub fn letter(index: usize) -> char {
    AMINO_ACIDS[index] as char
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        for (i, &a) in AMINO_ACIDS.iter().enumerate() {
            assert_eq!(index_of(a), Some(i));
            assert_eq!(letter(i), a as char);
        }
        for bad in *b"XBZUOa-" {
            assert_eq!(index_of(bad), None);
        }
    }
}
