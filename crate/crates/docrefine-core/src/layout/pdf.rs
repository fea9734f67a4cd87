//! Best-effort native PDF text extraction.
//!
//! A deliberately small reader for classic PDFs: objects are located by
//! scanning for `N G obj` headers (so incremental updates and damaged xref
//! tables still work), streams end at the literal `endstream`, and only the
//! Flate and identity filters are supported. Content streams are interpreted
//! for text positioning (`BT/ET`, `Td/TD/Tm/TL/T*`, `Tj/TJ/'/"`), graphics
//! state (`q/Q/cm`) and image placement (`Do`). Glyph widths are estimated
//! at half the font size — no font metrics are read — so spans and boxes are
//! approximate. Documents whose catalog lives inside an object stream are
//! rejected as unsupported.
//!
//! Output: per-page [`Element`]s (headings by font-size histogram,
//! paragraphs otherwise, figures from image XObjects) in top-left-origin
//! coordinates, ready for reading-order and hierarchy derivation.

use std::collections::BTreeMap;
use std::io::Read;

use super::IngestError;
use crate::ir::{BBox, Element, ElementId, ElementKind, PageSize};

/// Extraction result: page sizes plus unordered elements.
pub struct Extracted {
    pub pages: Vec<PageSize>,
    pub elements: Vec<Element>,
}

/// Extracts text and image elements from raw PDF bytes.
pub fn extract(bytes: &[u8]) -> Result<Extracted, IngestError> {
    if !bytes.starts_with(b"%PDF-") {
        return Err(IngestError::UnsupportedPdf("missing %PDF header".into()));
    }
    let doc = Document::scan(bytes)?;
    let page_ids = doc.page_ids()?;

    let mut pages = Vec::new();
    let mut elements = Vec::new();
    for (page_index, page_id) in page_ids.iter().enumerate() {
        let (size, mut els) = doc.extract_page(*page_id, page_index)?;
        pages.push(size);
        elements.append(&mut els);
    }
    Ok(Extracted { pages, elements })
}

// ---------------------------------------------------------------------------
// Object model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Obj {
    Null,
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(Vec<u8>),
    Name(String),
    Array(Vec<Obj>),
    Dict(BTreeMap<String, Obj>),
    Stream(BTreeMap<String, Obj>, Vec<u8>),
    Ref(u32),
}

impl Obj {
    fn as_f64(&self) -> Option<f64> {
        match self {
            Obj::Int(i) => Some(*i as f64),
            Obj::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn as_dict(&self) -> Option<&BTreeMap<String, Obj>> {
        match self {
            Obj::Dict(d) | Obj::Stream(d, _) => Some(d),
            _ => None,
        }
    }
}

struct Document<'a> {
    bytes: &'a [u8],
    /// Object number -> byte offset of the object body. Later occurrences
    /// (incremental updates) win.
    offsets: BTreeMap<u32, usize>,
}

impl<'a> Document<'a> {
    fn scan(bytes: &'a [u8]) -> Result<Self, IngestError> {
        let mut offsets = BTreeMap::new();
        let mut i = 0;
        while i + 3 <= bytes.len() {
            if &bytes[i..i + 3] == b"obj"
                && (i + 3 == bytes.len() || is_delimiter_or_ws(bytes[i + 3]))
            {
                if let Some((num, body)) = backtrack_header(bytes, i) {
                    offsets.insert(num, body);
                }
            }
            i += 1;
        }
        if offsets.is_empty() {
            return Err(IngestError::UnsupportedPdf("no objects found".into()));
        }
        Ok(Self { bytes, offsets })
    }

    fn object(&self, num: u32) -> Option<Obj> {
        let offset = *self.offsets.get(&num)?;
        let mut lexer = Lexer::new(self.bytes, offset);
        lexer.parse_object().ok()
    }

    fn resolve(&self, obj: &Obj) -> Obj {
        match obj {
            Obj::Ref(num) => self.object(*num).unwrap_or(Obj::Null),
            other => other.clone(),
        }
    }

    fn dict_get(&self, dict: &BTreeMap<String, Obj>, key: &str) -> Option<Obj> {
        dict.get(key).map(|v| self.resolve(v))
    }

    /// Page object numbers in document order.
    fn page_ids(&self) -> Result<Vec<u32>, IngestError> {
        let catalog = self
            .offsets
            .keys()
            .filter_map(|n| self.object(*n).map(|o| (*n, o)))
            .find_map(|(_, o)| {
                let d = o.as_dict()?.clone();
                match d.get("Type") {
                    Some(Obj::Name(t)) if t == "Catalog" => Some(d),
                    _ => None,
                }
            })
            .ok_or_else(|| {
                IngestError::UnsupportedPdf(
                    "no document catalog found (object streams are not supported)".into(),
                )
            })?;
        let pages_ref = catalog.get("Pages").ok_or_else(|| {
            IngestError::UnsupportedPdf("catalog carries no page tree".into())
        })?;
        let mut out = Vec::new();
        if let Obj::Ref(root) = pages_ref {
            self.walk_pages(*root, &mut out, 0);
        }
        if out.is_empty() {
            return Err(IngestError::UnsupportedPdf("page tree is empty".into()));
        }
        Ok(out)
    }

    fn walk_pages(&self, num: u32, out: &mut Vec<u32>, depth: usize) {
        if depth > 32 {
            return;
        }
        let Some(obj) = self.object(num) else { return };
        let Some(dict) = obj.as_dict() else { return };
        match dict.get("Type") {
            Some(Obj::Name(t)) if t == "Page" => out.push(num),
            _ => {
                if let Some(Obj::Array(kids)) = self.dict_get(dict, "Kids") {
                    for kid in kids {
                        if let Obj::Ref(k) = kid {
                            self.walk_pages(k, out, depth + 1);
                        }
                    }
                }
            }
        }
    }

    /// Inheritable attribute lookup (MediaBox, Resources) up the page tree.
    fn inherited(&self, page: u32, key: &str) -> Option<Obj> {
        let mut current = Some(page);
        for _ in 0..32 {
            let num = current?;
            let obj = self.object(num)?;
            let dict = obj.as_dict()?;
            if let Some(v) = dict.get(key) {
                return Some(self.resolve(v));
            }
            current = match dict.get("Parent") {
                Some(Obj::Ref(p)) => Some(*p),
                _ => None,
            };
        }
        None
    }

    fn content_bytes(&self, page: u32) -> Vec<u8> {
        let Some(obj) = self.object(page) else {
            return Vec::new();
        };
        let Some(dict) = obj.as_dict() else {
            return Vec::new();
        };
        let mut streams = Vec::new();
        match dict.get("Contents") {
            Some(Obj::Ref(r)) => streams.push(self.object(*r)),
            Some(Obj::Array(items)) => {
                for item in items {
                    if let Obj::Ref(r) = item {
                        streams.push(self.object(*r));
                    }
                }
            }
            _ => {}
        }
        let mut out = Vec::new();
        for stream in streams.into_iter().flatten() {
            if let Obj::Stream(dict, data) = stream {
                if let Some(decoded) = self.decode_stream(&dict, &data) {
                    out.extend_from_slice(&decoded);
                    out.push(b'\n');
                }
            }
        }
        out
    }

    fn decode_stream(&self, dict: &BTreeMap<String, Obj>, data: &[u8]) -> Option<Vec<u8>> {
        match self.dict_get(dict, "Filter") {
            None => Some(data.to_vec()),
            Some(Obj::Name(name)) if name == "FlateDecode" => inflate(data),
            Some(Obj::Array(filters)) => {
                let mut current = data.to_vec();
                for f in filters {
                    match f {
                        Obj::Name(n) if n == "FlateDecode" => current = inflate(&current)?,
                        _ => return None,
                    }
                }
                Some(current)
            }
            _ => None,
        }
    }

    fn extract_page(
        &self,
        page: u32,
        page_index: usize,
    ) -> Result<(PageSize, Vec<Element>), IngestError> {
        let media = self
            .inherited(page, "MediaBox")
            .and_then(|m| match m {
                Obj::Array(vals) => {
                    let v: Vec<f64> = vals.iter().filter_map(Obj::as_f64).collect();
                    (v.len() == 4).then(|| (v[0], v[1], v[2], v[3]))
                }
                _ => None,
            })
            .unwrap_or((0.0, 0.0, 612.0, 792.0));
        let size = PageSize {
            width: media.2 - media.0,
            height: media.3 - media.1,
        };

        let xobjects = self
            .inherited(page, "Resources")
            .and_then(|r| r.as_dict().cloned())
            .and_then(|r| self.dict_get(&r, "XObject"))
            .and_then(|x| x.as_dict().cloned())
            .unwrap_or_default();

        let content = self.content_bytes(page);
        let run = interpret_content(&content, |name| {
            matches!(
                self.dict_get(&xobjects, name)
                    .and_then(|o| o.as_dict().cloned())
                    .and_then(|d| self.dict_get(&d, "Subtype")),
                Some(Obj::Name(st)) if st == "Image"
            )
        });

        Ok((size, assemble_elements(run, size, media, page_index)))
    }
}

fn backtrack_header(bytes: &[u8], obj_kw: usize) -> Option<(u32, usize)> {
    let mut i = obj_kw;
    // skip whitespace before "obj"
    while i > 0 && bytes[i - 1].is_ascii_whitespace() {
        i -= 1;
    }
    // generation digits
    let gen_end = i;
    while i > 0 && bytes[i - 1].is_ascii_digit() {
        i -= 1;
    }
    if i == gen_end {
        return None;
    }
    while i > 0 && bytes[i - 1].is_ascii_whitespace() {
        i -= 1;
    }
    let num_end = i;
    while i > 0 && bytes[i - 1].is_ascii_digit() {
        i -= 1;
    }
    if i == num_end {
        return None;
    }
    let num: u32 = std::str::from_utf8(&bytes[i..num_end]).ok()?.parse().ok()?;
    Some((num, obj_kw + 3))
}

fn inflate(data: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    let mut decoder = flate2::read::ZlibDecoder::new(data);
    decoder.read_to_end(&mut out).ok()?;
    Some(out)
}

fn is_delimiter_or_ws(b: u8) -> bool {
    b.is_ascii_whitespace() || matches!(b, b'(' | b')' | b'<' | b'>' | b'[' | b']' | b'{' | b'}' | b'/' | b'%')
}

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

struct Lexer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn skip_ws(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'%' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn starts_with(&self, s: &[u8]) -> bool {
        self.bytes[self.pos..].starts_with(s)
    }

    fn parse_object(&mut self) -> Result<Obj, String> {
        self.skip_ws();
        let b = self.peek().ok_or("unexpected end of data")?;
        match b {
            b'<' if self.starts_with(b"<<") => self.parse_dict_or_stream(),
            b'<' => self.parse_hex_string(),
            b'(' => self.parse_literal_string(),
            b'/' => Ok(Obj::Name(self.parse_name())),
            b'[' => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    if self.peek() == Some(b']') {
                        self.pos += 1;
                        return Ok(Obj::Array(items));
                    }
                    items.push(self.parse_object()?);
                }
            }
            b'+' | b'-' | b'.' | b'0'..=b'9' => self.parse_number_or_ref(),
            _ => {
                let kw = self.parse_keyword();
                match kw.as_str() {
                    "true" => Ok(Obj::Bool(true)),
                    "false" => Ok(Obj::Bool(false)),
                    "null" => Ok(Obj::Null),
                    other => Err(format!("unexpected token {other:?}")),
                }
            }
        }
    }

    fn parse_dict_or_stream(&mut self) -> Result<Obj, String> {
        self.pos += 2; // <<
        let mut dict = BTreeMap::new();
        loop {
            self.skip_ws();
            if self.starts_with(b">>") {
                self.pos += 2;
                break;
            }
            if self.peek() != Some(b'/') {
                return Err("dictionary key must be a name".into());
            }
            let key = self.parse_name();
            let value = self.parse_object()?;
            dict.insert(key, value);
        }
        self.skip_ws();
        if self.starts_with(b"stream") {
            self.pos += 6;
            if self.starts_with(b"\r\n") {
                self.pos += 2;
            } else if self.peek() == Some(b'\n') || self.peek() == Some(b'\r') {
                self.pos += 1;
            }
            // Streams end at the literal endstream; /Length may be an
            // unresolved indirect reference, the scan sidesteps it.
            let rest = &self.bytes[self.pos..];
            let end = find(rest, b"endstream").ok_or("unterminated stream")?;
            let mut data = &rest[..end];
            while let [head @ .., b'\n' | b'\r'] = data {
                data = head;
            }
            self.pos += end + b"endstream".len();
            return Ok(Obj::Stream(dict, data.to_vec()));
        }
        Ok(Obj::Dict(dict))
    }

    fn parse_hex_string(&mut self) -> Result<Obj, String> {
        self.pos += 1;
        let mut nibbles = Vec::new();
        while let Some(b) = self.peek() {
            self.pos += 1;
            match b {
                b'>' => {
                    if nibbles.len() % 2 == 1 {
                        nibbles.push(0);
                    }
                    let bytes = nibbles.chunks(2).map(|c| (c[0] << 4) | c[1]).collect();
                    return Ok(Obj::Str(bytes));
                }
                _ if b.is_ascii_hexdigit() => {
                    nibbles.push((b as char).to_digit(16).unwrap() as u8);
                }
                _ if b.is_ascii_whitespace() => {}
                _ => return Err("bad hex string".into()),
            }
        }
        Err("unterminated hex string".into())
    }

    fn parse_literal_string(&mut self) -> Result<Obj, String> {
        self.pos += 1;
        let mut out = Vec::new();
        let mut depth = 1;
        while let Some(b) = self.peek() {
            self.pos += 1;
            match b {
                b'\\' => {
                    let esc = self.peek().ok_or("unterminated string escape")?;
                    self.pos += 1;
                    match esc {
                        b'n' => out.push(b'\n'),
                        b'r' => out.push(b'\r'),
                        b't' => out.push(b'\t'),
                        b'b' => out.push(8),
                        b'f' => out.push(12),
                        b'(' | b')' | b'\\' => out.push(esc),
                        b'\n' => {}
                        b'0'..=b'7' => {
                            let mut v = u32::from(esc - b'0');
                            for _ in 0..2 {
                                match self.peek() {
                                    Some(d @ b'0'..=b'7') => {
                                        v = v * 8 + u32::from(d - b'0');
                                        self.pos += 1;
                                    }
                                    _ => break,
                                }
                            }
                            out.push(v as u8);
                        }
                        other => out.push(other),
                    }
                }
                b'(' => {
                    depth += 1;
                    out.push(b);
                }
                b')' => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(Obj::Str(out));
                    }
                    out.push(b);
                }
                _ => out.push(b),
            }
        }
        Err("unterminated string".into())
    }

    fn parse_name(&mut self) -> String {
        self.pos += 1; // '/'
        let mut out = String::new();
        while let Some(b) = self.peek() {
            if is_delimiter_or_ws(b) {
                break;
            }
            self.pos += 1;
            if b == b'#' {
                let hi = self.peek().and_then(|c| (c as char).to_digit(16));
                if let Some(hi) = hi {
                    self.pos += 1;
                    let lo = self.peek().and_then(|c| (c as char).to_digit(16));
                    if let Some(lo) = lo {
                        self.pos += 1;
                        out.push(((hi * 16 + lo) as u8) as char);
                        continue;
                    }
                }
                out.push('#');
            } else {
                out.push(b as char);
            }
        }
        out
    }

    fn parse_number_or_ref(&mut self) -> Result<Obj, String> {
        let first = self.parse_number()?;
        if let Obj::Int(num) = first {
            // Lookahead for "G R".
            let saved = self.pos;
            self.skip_ws();
            let gen_start = self.pos;
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos > gen_start {
                self.skip_ws();
                if self.peek() == Some(b'R')
                    && self
                        .bytes
                        .get(self.pos + 1)
                        .is_none_or(|b| is_delimiter_or_ws(*b))
                {
                    self.pos += 1;
                    return Ok(Obj::Ref(num as u32));
                }
            }
            self.pos = saved;
        }
        Ok(first)
    }

    fn parse_number(&mut self) -> Result<Obj, String> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
            self.pos += 1;
        }
        let mut is_real = false;
        while let Some(b) = self.peek() {
            match b {
                b'0'..=b'9' => self.pos += 1,
                b'.' => {
                    is_real = true;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|e| e.to_string())?;
        if is_real {
            text.parse().map(Obj::Real).map_err(|e| format!("{e}"))
        } else {
            text.parse().map(Obj::Int).map_err(|e| format!("{e}"))
        }
    }

    fn parse_keyword(&mut self) -> String {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|b| !is_delimiter_or_ws(b) && !b.is_ascii_digit())
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

// ---------------------------------------------------------------------------
// Content stream interpretation
// ---------------------------------------------------------------------------

/// 2D affine matrix `[a b c d e f]`.
#[derive(Debug, Clone, Copy)]
struct Matrix {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
    f: f64,
}

impl Matrix {
    const IDENTITY: Matrix = Matrix {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        e: 0.0,
        f: 0.0,
    };

    fn mul(self, rhs: Matrix) -> Matrix {
        Matrix {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
            e: self.e * rhs.a + self.f * rhs.c + rhs.e,
            f: self.e * rhs.b + self.f * rhs.d + rhs.f,
        }
    }

    fn translation(tx: f64, ty: f64) -> Matrix {
        Matrix {
            e: tx,
            f: ty,
            ..Matrix::IDENTITY
        }
    }
}

/// One positioned text run (PDF coordinates, bottom-left origin).
struct Span {
    text: String,
    x: f64,
    y: f64,
    size: f64,
    width: f64,
}

/// One placed image (PDF coordinates).
struct PlacedImage {
    name: String,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

struct PageRun {
    spans: Vec<Span>,
    images: Vec<PlacedImage>,
}

/// Estimated advance per glyph as a fraction of font size. No font metrics
/// are read; this matches the reflow estimator's nominal glyph width.
const GLYPH_WIDTH_FACTOR: f64 = 0.5;

fn interpret_content(content: &[u8], is_image: impl Fn(&str) -> bool) -> PageRun {
    let mut lexer = Lexer::new(content, 0);
    let mut operands: Vec<Obj> = Vec::new();
    let mut spans = Vec::new();
    let mut images = Vec::new();

    let mut ctm = Matrix::IDENTITY;
    let mut gs_stack: Vec<Matrix> = Vec::new();
    let mut tm = Matrix::IDENTITY;
    let mut tlm = Matrix::IDENTITY;
    let mut font_size = 12.0;
    let mut leading = 0.0;

    loop {
        lexer.skip_ws();
        let Some(b) = lexer.peek() else { break };
        let parsed = match b {
            b'/' | b'(' | b'<' | b'[' | b'+' | b'-' | b'.' | b'0'..=b'9' => {
                match lexer.parse_object() {
                    Ok(obj) => {
                        operands.push(obj);
                        true
                    }
                    Err(_) => {
                        lexer.pos += 1;
                        operands.clear();
                        true
                    }
                }
            }
            _ => false,
        };
        if parsed {
            continue;
        }

        let op = lexer.parse_keyword();
        if op.is_empty() {
            lexer.pos += 1;
            continue;
        }
        match op.as_str() {
            "q" => gs_stack.push(ctm),
            "Q" => ctm = gs_stack.pop().unwrap_or(Matrix::IDENTITY),
            "cm" => {
                if let [a, b_, c, d, e, f] = nums(&operands, 6)[..] {
                    ctm = Matrix { a, b: b_, c, d, e, f }.mul(ctm);
                }
            }
            "BT" => {
                tm = Matrix::IDENTITY;
                tlm = Matrix::IDENTITY;
            }
            "ET" => {}
            "Tf" => {
                if let Some(size) = operands.last().and_then(Obj::as_f64) {
                    font_size = size;
                }
            }
            "TL" => {
                if let [l] = nums(&operands, 1)[..] {
                    leading = l;
                }
            }
            "Td" => {
                if let [tx, ty] = nums(&operands, 2)[..] {
                    tlm = Matrix::translation(tx, ty).mul(tlm);
                    tm = tlm;
                }
            }
            "TD" => {
                if let [tx, ty] = nums(&operands, 2)[..] {
                    leading = -ty;
                    tlm = Matrix::translation(tx, ty).mul(tlm);
                    tm = tlm;
                }
            }
            "Tm" => {
                if let [a, b_, c, d, e, f] = nums(&operands, 6)[..] {
                    tlm = Matrix { a, b: b_, c, d, e, f };
                    tm = tlm;
                }
            }
            "T*" => {
                tlm = Matrix::translation(0.0, -leading).mul(tlm);
                tm = tlm;
            }
            "Tj" | "'" | "\"" => {
                if op != "Tj" {
                    tlm = Matrix::translation(0.0, -leading).mul(tlm);
                    tm = tlm;
                }
                if let Some(Obj::Str(bytes)) = operands.last() {
                    emit_text(bytes, font_size, &mut tm, ctm, &mut spans);
                }
            }
            "TJ" => {
                if let Some(Obj::Array(items)) = operands.last() {
                    for item in items {
                        match item {
                            Obj::Str(bytes) => {
                                emit_text(bytes, font_size, &mut tm, ctm, &mut spans)
                            }
                            Obj::Int(_) | Obj::Real(_) => {
                                let adj = item.as_f64().unwrap_or(0.0);
                                let tx = -adj / 1000.0 * font_size;
                                tm = Matrix::translation(tx, 0.0).mul(tm);
                            }
                            _ => {}
                        }
                    }
                }
            }
            "Do" => {
                if let Some(Obj::Name(name)) = operands.last() {
                    if is_image(name) {
                        // Unit square through the CTM; rotation is ignored.
                        let (x0, y0) = (ctm.e, ctm.f);
                        let (x1, y1) = (ctm.a + ctm.e, ctm.d + ctm.f);
                        images.push(PlacedImage {
                            name: name.clone(),
                            x0: x0.min(x1),
                            y0: y0.min(y1),
                            x1: x0.max(x1),
                            y1: y0.max(y1),
                        });
                    }
                }
            }
            _ => {}
        }
        operands.clear();
    }

    PageRun { spans, images }
}

fn nums(operands: &[Obj], n: usize) -> Vec<f64> {
    if operands.len() < n {
        return Vec::new();
    }
    operands[operands.len() - n..]
        .iter()
        .filter_map(Obj::as_f64)
        .collect()
}

fn emit_text(bytes: &[u8], font_size: f64, tm: &mut Matrix, ctm: Matrix, spans: &mut Vec<Span>) {
    let text = decode_pdf_text(bytes);
    if text.is_empty() {
        return;
    }
    let trm = tm.mul(ctm);
    let size = font_size * trm.d.abs().max(f64::EPSILON);
    let advance = GLYPH_WIDTH_FACTOR * font_size * text.chars().count() as f64;
    if !text.trim().is_empty() {
        spans.push(Span {
            text,
            x: trm.e,
            y: trm.f,
            size,
            width: advance * trm.a.abs().max(f64::EPSILON),
        });
    }
    *tm = Matrix::translation(advance, 0.0).mul(*tm);
}

fn decode_pdf_text(bytes: &[u8]) -> String {
    if bytes.starts_with(&[0xFE, 0xFF]) {
        let units: Vec<u16> = bytes[2..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        String::from_utf16_lossy(&units)
    } else {
        bytes.iter().map(|&b| b as char).collect()
    }
}

// ---------------------------------------------------------------------------
// Element assembly
// ---------------------------------------------------------------------------

fn assemble_elements(
    run: PageRun,
    size: PageSize,
    media: (f64, f64, f64, f64),
    page_index: usize,
) -> Vec<Element> {
    let mut elements = Vec::new();
    let flip = |y: f64| media.3 - y;

    // Group spans into baselines.
    let mut spans = run.spans;
    spans.sort_by(|a, b| {
        (b.y, a.x)
            .partial_cmp(&(a.y, b.x))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut lines: Vec<Vec<Span>> = Vec::new();
    for span in spans {
        let tolerance = span.size * 0.3;
        match lines.last_mut() {
            Some(line) if (line[0].y - span.y).abs() <= tolerance => line.push(span),
            _ => lines.push(vec![span]),
        }
    }

    // Font-size histogram for heading levels (0.1 pt buckets).
    let mut histogram: BTreeMap<i64, usize> = BTreeMap::new();
    for line in &lines {
        let size_key = (dominant_size(line) * 10.0).round() as i64;
        *histogram.entry(size_key).or_insert(0) += line.iter().map(|s| s.text.len()).sum::<usize>();
    }
    let body_size = histogram
        .iter()
        .max_by_key(|(_, count)| **count)
        .map(|(k, _)| *k as f64 / 10.0)
        .unwrap_or(12.0);
    let mut heading_sizes: Vec<f64> = histogram
        .keys()
        .map(|k| *k as f64 / 10.0)
        .filter(|s| *s > body_size + 1.5)
        .collect();
    heading_sizes.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let heading_level = |size: f64| -> Option<u32> {
        heading_sizes
            .iter()
            .position(|h| size >= h - 0.25)
            .map(|i| (i as u32 + 1).min(6))
    };

    // Group consecutive lines into blocks.
    struct Block {
        lines: Vec<(String, f64, f64, f64, f64, f64)>, // text, x0, y_base, size, width, prev gap
        level: Option<u32>,
    }
    let mut blocks: Vec<Block> = Vec::new();
    let mut prev_baseline: Option<f64> = None;
    for line in &lines {
        let text = join_line(line);
        let x0 = line
            .iter()
            .map(|s| s.x)
            .fold(f64::INFINITY, f64::min);
        let width: f64 = line.iter().map(|s| s.width).sum();
        let line_size = dominant_size(line);
        let baseline = line[0].y;
        let level = heading_level(line_size);
        let gap = prev_baseline.map_or(f64::INFINITY, |p| (p - baseline).abs());
        prev_baseline = Some(baseline);

        let start_new = match blocks.last() {
            None => true,
            Some(prev) => {
                prev.level != level
                    || level.is_some()
                    || gap > line_size * 1.8
            }
        };
        let entry = (text, x0, baseline, line_size, width, gap);
        if start_new {
            blocks.push(Block {
                lines: vec![entry],
                level,
            });
        } else {
            blocks.last_mut().unwrap().lines.push(entry);
        }
    }

    let mut counter = 0usize;
    for block in blocks {
        let text = block
            .lines
            .iter()
            .map(|(t, ..)| t.as_str())
            .collect::<Vec<_>>()
            .join(" ")
            .trim()
            .to_string();
        if text.is_empty() {
            continue;
        }
        let x0 = block.lines.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
        let x1 = block
            .lines
            .iter()
            .map(|l| l.1 + l.4)
            .fold(f64::NEG_INFINITY, f64::max);
        let top = block
            .lines
            .iter()
            .map(|l| l.2 + 0.8 * l.3)
            .fold(f64::NEG_INFINITY, f64::max);
        let bottom = block
            .lines
            .iter()
            .map(|l| l.2 - 0.2 * l.3)
            .fold(f64::INFINITY, f64::min);

        let bbox = clamp_bbox(
            page_index,
            x0 - media.0,
            flip(top),
            x1 - media.0,
            flip(bottom),
            size,
        );
        let Some(bbox) = bbox else { continue };
        counter += 1;
        elements.push(Element {
            id: ElementId::new(format!("p{page_index}e{counter}")),
            kind: if block.level.is_some() {
                ElementKind::Heading
            } else {
                ElementKind::Paragraph
            },
            bbox,
            text,
            heading_level: block.level,
            raster_ref: None,
        });
    }

    for img in run.images {
        let bbox = clamp_bbox(
            page_index,
            img.x0 - media.0,
            flip(img.y1),
            img.x1 - media.0,
            flip(img.y0),
            size,
        );
        let Some(bbox) = bbox else { continue };
        counter += 1;
        elements.push(Element {
            id: ElementId::new(format!("p{page_index}e{counter}")),
            kind: ElementKind::Figure,
            bbox,
            text: String::new(),
            heading_level: None,
            raster_ref: Some(format!("embedded:page{page_index}/{}", img.name)),
        });
    }

    elements
}

fn dominant_size(line: &[Span]) -> f64 {
    let total: usize = line.iter().map(|s| s.text.len()).sum();
    if total == 0 {
        return line.first().map_or(12.0, |s| s.size);
    }
    line.iter().map(|s| s.size * s.text.len() as f64).sum::<f64>() / total as f64
}

fn join_line(line: &[Span]) -> String {
    let mut sorted: Vec<&Span> = line.iter().collect();
    sorted.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = String::new();
    let mut prev_end: Option<f64> = None;
    for span in sorted {
        if let Some(end) = prev_end {
            let gap = span.x - end;
            if gap > span.size * 0.25 && !out.ends_with(' ') && !span.text.starts_with(' ') {
                out.push(' ');
            }
        }
        out.push_str(&span.text);
        prev_end = Some(span.x + span.width);
    }
    out
}

fn clamp_bbox(
    page_index: usize,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    size: PageSize,
) -> Option<BBox> {
    let x0 = x0.clamp(0.0, size.width);
    let x1 = x1.clamp(0.0, size.width);
    let y0 = y0.clamp(0.0, size.height);
    let y1 = y1.clamp(0.0, size.height);
    (x1 > x0 && y1 > y0).then(|| BBox::new(page_index, x0, y0, x1, y1))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A tiny handwritten single-page PDF with two text runs.
    fn minimal_pdf() -> Vec<u8> {
        let content = b"BT /F1 24 Tf 72 700 Td (Big Title) Tj ET\n\
                        BT /F1 10 Tf 72 650 Td (Body text line one.) Tj ET\n\
                        BT /F1 10 Tf 72 636 Td (Body text line two.) Tj ET";
        let mut pdf: Vec<u8> = Vec::new();
        pdf.extend_from_slice(b"%PDF-1.4\n");
        pdf.extend_from_slice(b"1 0 obj << /Type /Catalog /Pages 2 0 R >> endobj\n");
        pdf.extend_from_slice(
            b"2 0 obj << /Type /Pages /Kids [3 0 R] /Count 1 >> endobj\n",
        );
        pdf.extend_from_slice(
            b"3 0 obj << /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] /Contents 4 0 R >> endobj\n",
        );
        pdf.extend_from_slice(
            format!("4 0 obj << /Length {} >> stream\n", content.len()).as_bytes(),
        );
        pdf.extend_from_slice(content);
        pdf.extend_from_slice(b"\nendstream endobj\n");
        pdf.extend_from_slice(b"%%EOF\n");
        pdf
    }

    #[test]
    fn extracts_text_and_detects_heading() {
        let out = extract(&minimal_pdf()).unwrap();
        assert_eq!(out.pages.len(), 1);
        assert_eq!(out.pages[0].width, 612.0);

        let heading = out
            .elements
            .iter()
            .find(|e| e.kind == ElementKind::Heading)
            .expect("24pt line should classify as heading");
        assert_eq!(heading.text, "Big Title");
        assert_eq!(heading.heading_level, Some(1));

        let body: Vec<&Element> = out
            .elements
            .iter()
            .filter(|e| e.kind == ElementKind::Paragraph)
            .collect();
        assert_eq!(body.len(), 1, "adjacent 10pt lines merge into one block");
        assert!(body[0].text.contains("line one"));
        assert!(body[0].text.contains("line two"));
        // Top-left origin: the title sits above the body.
        assert!(heading.bbox.y0 < body[0].bbox.y0);
    }

    #[test]
    fn rejects_non_pdf_bytes() {
        assert!(matches!(
            extract(b"not a pdf"),
            Err(IngestError::UnsupportedPdf(_))
        ));
    }

    #[test]
    fn literal_string_escapes_decode() {
        let mut lexer = Lexer::new(br"(a\(b\)c \101 d)", 0);
        match lexer.parse_object().unwrap() {
            Obj::Str(bytes) => assert_eq!(bytes, b"a(b)c A d"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reference_lookahead_does_not_eat_plain_integers() {
        let mut lexer = Lexer::new(b"[1 2 3]", 0);
        match lexer.parse_object().unwrap() {
            Obj::Array(items) => assert_eq!(items.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
        let mut lexer = Lexer::new(b"4 0 R", 0);
        assert_eq!(lexer.parse_object().unwrap(), Obj::Ref(4));
    }
}
