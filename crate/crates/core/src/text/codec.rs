/// Number of character ids: the 7-bit ASCII range.
pub const ALPHABET_SIZE: usize = 128;
/// Characters kept per word.
pub const WORD_LEN: usize = 20;
/// Padding id. Shares its value with ASCII NUL, which is never emitted for
/// real text.
pub const PAD_ID: u8 = 0;

/// Splits lowercased text on runs of whitespace. Punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Maps words to fixed-length ASCII id rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharCodec {
    word_len: usize,
}

impl Default for CharCodec {
    fn default() -> Self {
        CharCodec { word_len: WORD_LEN }
    }
}

impl CharCodec {
    pub fn new(word_len: usize) -> Self {
        assert!(word_len > 0, "word length must be positive");
        CharCodec { word_len }
    }

    pub fn word_len(&self) -> usize {
        self.word_len
    }

    /// Id for one byte: ASCII 1..=127 map to themselves, everything else
    /// (NUL and non-ASCII) is dropped.
    pub fn char_id(byte: u8) -> Option<u8> {
        (byte != PAD_ID && byte.is_ascii()).then_some(byte)
    }

    /// Writes the ids of `word` into `out` (length `word_len`), keeping the
    /// first `word_len` ASCII characters and right-padding with zeros.
    /// Returns false when the word had no ASCII characters at all.
    pub fn encode_word_into(&self, word: &str, out: &mut [u8]) -> bool {
        debug_assert_eq!(out.len(), self.word_len);
        out.fill(PAD_ID);
        let mut n = 0;
        for id in word.bytes().filter_map(Self::char_id).take(self.word_len) {
            out[n] = id;
            n += 1;
        }
        n > 0
    }

    pub fn encode_word(&self, word: &str) -> Vec<u8> {
        let mut out = vec![PAD_ID; self.word_len];
        self.encode_word_into(word, &mut out);
        out
    }

    /// Inverse of encoding for the non-padding prefix.
    pub fn decode(&self, ids: &[u8]) -> String {
        ids.iter()
            .take_while(|&&id| id != PAD_ID)
            .map(|&id| id as char)
            .collect()
    }
}
