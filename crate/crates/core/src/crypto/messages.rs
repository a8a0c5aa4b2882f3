use alloc::vec::Vec;

use super::CryptoError;

/// Fixed-width message layout: message `i` occupies bytes
/// `i * msg_len .. (i + 1) * msg_len` of `data`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageBatch {
    count: usize,
    msg_len: usize,
    data: Vec<u8>,
}

impl MessageBatch {
    pub fn new(msg_len: usize, data: Vec<u8>) -> Result<Self, CryptoError> {
        let count = data.len().checked_div(msg_len).unwrap_or(0);
        if msg_len == 0 || !data.len().is_multiple_of(msg_len) {
            return Err(CryptoError::BadLayout {
                len: data.len(),
                count,
                msg_len,
            });
        }
        Ok(MessageBatch {
            count,
            msg_len,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn msg_len(&self) -> usize {
        self.msg_len
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn message(&self, i: usize) -> &[u8] {
        &self.data[i * self.msg_len..(i + 1) * self.msg_len]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.data.chunks_exact(self.msg_len)
    }
}

/// Generates `count` messages; message `i` is the zero-padded decimal
/// rendering of `start_index + i` in exactly `width` ASCII digits.
pub fn gen_messages(start_index: u64, count: u64, width: u32) -> Result<MessageBatch, CryptoError> {
    if !(1..=19).contains(&width) {
        return Err(CryptoError::BadWidth(width));
    }
    let limit = 10u64.pow(width);
    let overflow = CryptoError::RangeOverflow {
        start: start_index,
        count,
        width,
    };
    match start_index.checked_add(count) {
        Some(end) if end <= limit => {}
        _ => return Err(overflow),
    }
    let w = width as usize;
    let len = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(w))
        .ok_or(overflow)?;
    let mut data = alloc::vec![b'0'; len];
    for (i, msg) in data.chunks_exact_mut(w).enumerate() {
        let mut n = start_index + i as u64;
        for slot in msg.iter_mut().rev() {
            *slot = b'0' + (n % 10) as u8;
            n /= 10;
            if n == 0 {
                break;
            }
        }
    }
    Ok(MessageBatch {
        count: count as usize,
        msg_len: w,
        data,
    })
}
