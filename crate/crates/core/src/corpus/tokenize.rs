/// Case-folds, splits on whitespace, and detaches punctuation.
///
/// An apostrophe between letters stays attached to them as a clitic
/// (`york's` → `york`, `'s`); every other non-alphanumeric character except
/// `_` becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().flat_map(char::to_lowercase).collect();
        let mut cur = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() || c == '_' {
                cur.push(c);
            } else if c == '\'' && !cur.is_empty() && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()) {
                flush(&mut cur, &mut out);
                cur.push(c);
            } else {
                flush(&mut cur, &mut out);
                out.push(c.to_string());
            }
            i += 1;
        }
        flush(&mut cur, &mut out);
    }
    out
}

fn flush(cur: &mut String, out: &mut Vec<String>) {
    if !cur.is_empty() {
        out.push(std::mem::take(cur));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn basic_cases() {
        assert_eq!(toks("Which city?"), ["which", "city", "?"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t ").is_empty());
        assert_eq!(toks("New-York's"), ["new", "-", "york", "'s"]);
    }

    #[test]
    fn punctuation_runs_and_quotes() {
        assert_eq!(toks("'hello' (world)!"), ["'", "hello", "'", "(", "world", ")", "!"]);
        assert_eq!(toks("location/containedby"), ["location", "/", "containedby"]);
        assert_eq!(toks("notable_type"), ["notable_type"]);
    }
}
