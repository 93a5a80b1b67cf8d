//! Binary PPM (`P6`, maxval 255).

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn skip_whitespace_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => pos += 1,
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            _ => break,
        }
    }
    pos
}

fn read_uint(bytes: &[u8], pos: usize, field: &str) -> Result<(usize, usize)> {
    let start = skip_whitespace_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(if start >= bytes.len() {
            Error::parse(start, format!("truncated header: missing {field}"))
        } else {
            Error::parse(start, format!("expected {field}, found byte 0x{:02x}", bytes[start]))
        });
    }
    // Bounded digit run; values beyond usize are garbage anyway.
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| Error::parse(start, format!("{field} out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::parse(0, "truncated header: missing magic"));
    }
    match &bytes[..2] {
        b"P6" => {}
        [b'P', d] if d.is_ascii_digit() => {
            return Err(Error::parse(
                0,
                format!("unsupported format P{}; only binary RGB (P6) is accepted", *d as char),
            ))
        }
        _ => return Err(Error::parse(0, "bad magic, expected P6")),
    }
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(2, format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::parse(pos, format!("maxval {maxval} unsupported, expected 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        Some(_) => return Err(Error::parse(pos, "expected single whitespace after maxval")),
        None => return Err(Error::parse(pos, "truncated header after maxval")),
    }
    Ok(Header {
        width,
        height,
        payload_start: pos + 1,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let need = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(CHANNELS))
        .ok_or_else(|| Error::parse(2, "dimensions overflow"))?;
    let available = bytes.len() - h.payload_start;
    if available < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: {need} bytes expected, {available} present"),
        ));
    }
    let pixels = bytes[h.payload_start..h.payload_start + need].to_vec();
    Image::new(h.width, h.height, pixels)
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_single_pixel() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([10, 20, 30]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [10, 20, 30]);
    }

    #[test]
    fn header_comments_allowed() {
        let mut bytes = b"P6 # made by hand\n2 # w\n1\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5, 6]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
    }

    #[test]
    fn grayscale_rejected() {
        let err = decode_ppm(b"P5\n1 1\n255\n\0").unwrap_err();
        match err {
            Error::Parse { offset, reason } => {
                assert_eq!(offset, 0);
                assert!(reason.contains("unsupported format P5"), "{reason}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0; 9]);
        match decode_ppm(&bytes).unwrap_err() {
            Error::Parse { offset, reason } => {
                assert_eq!(offset, bytes.len());
                assert!(reason.contains("truncated"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn maxval_must_be_255() {
        let err = decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 12, .. }), "{err:?}");
    }

    #[test]
    fn encode_black_pixel() {
        let img = Image::new(1, 1, vec![0, 0, 0]).unwrap();
        let mut expected = b"P6\n1 1\n255\n".to_vec();
        expected.extend([0, 0, 0]);
        assert_eq!(encode_ppm(&img), expected);
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let px = (0..w * h * 3).map(|_| rng.next_u64() as u8).collect();
            let img = Image::new(w, h, px).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        }
    }
}
