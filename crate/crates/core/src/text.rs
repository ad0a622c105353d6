//! Expression tokenisation: lowercase, split on whitespace.

pub fn tokenize(expression: &str) -> Vec<String> {
    expression.split_whitespace().map(str::to_lowercase).collect()
}

pub fn word_count(expression: &str) -> usize {
    expression.split_whitespace().count()
}
