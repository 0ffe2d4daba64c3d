//! Word-level tokenizer shared by the lexical and dense retrievers.
//!
//! Text is lowercased and split into three kinds of tokens:
//!
//! - words: letters optionally followed by digits (`m2`), with hyphens kept
//!   when they join two word characters (`mild-moderate`);
//! - numbers: digit runs, with a decimal point kept only between digits (`3.4`);
//! - symbols: `%`, `>`, `<`, `=`, `>=`, `<=` and a free-standing `-`.
//!
//! All other punctuation separates tokens and is dropped. Apostrophes are
//! removed so that `Ebstein's` and `ebsteins` agree.

pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || (chars[i] == '.'
                        && i + 1 < chars.len()
                        && chars[i + 1].is_ascii_digit()
                        && i > start))
            {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c.is_alphabetic() {
            let mut word = String::new();
            while i < chars.len() {
                let ch = chars[i];
                if ch.is_alphanumeric() {
                    word.push(ch);
                    i += 1;
                } else if ch == '\'' || ch == '\u{2019}' {
                    i += 1;
                } else if ch == '-'
                    && i + 1 < chars.len()
                    && chars[i + 1].is_alphabetic()
                    && !word.is_empty()
                {
                    word.push('-');
                    i += 1;
                } else {
                    break;
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
        } else {
            match c {
                '>' | '<' => {
                    if chars.get(i + 1) == Some(&'=') {
                        out.push(format!("{c}="));
                        i += 2;
                    } else {
                        out.push(c.to_string());
                        i += 1;
                    }
                }
                '%' | '=' | '-' => {
                    out.push(c.to_string());
                    i += 1;
                }
                _ => i += 1,
            }
        }
    }
    out
}
