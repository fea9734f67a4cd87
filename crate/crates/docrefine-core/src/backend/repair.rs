//! Single-pass JSON repair for noisy model output.

/// Returns the largest balanced top-level JSON object or array span in `s`.
///
/// Scans once, tracking brace/bracket depth while skipping string literals
/// (including escapes). Stray closers at depth zero are ignored. Among all
/// balanced top-level spans the longest wins; ties go to the earliest.
pub fn largest_balanced_span(s: &str) -> Option<&str> {
    let bytes = s.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;

    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if !stack.is_empty() => in_string = true,
            b'{' | b'[' => {
                if stack.is_empty() {
                    start = Some(i);
                }
                stack.push(b);
            }
            b'}' | b']' => {
                let opener = if b == b'}' { b'{' } else { b'[' };
                match stack.last() {
                    Some(&top) if top == opener => {
                        stack.pop();
                        if stack.is_empty() {
                            let s0 = start.take().expect("open position recorded");
                            let len = i + 1 - s0;
                            if best.map_or(true, |(bs, be)| len > be - bs) {
                                best = Some((s0, i + 1));
                            }
                        }
                    }
                    Some(_) => {
                        // Mismatched closer: abandon the current candidate.
                        stack.clear();
                        start = None;
                    }
                    None => {}
                }
            }
            _ => {}
        }
    }

    best.map(|(a, b)| &s[a..b])
}
