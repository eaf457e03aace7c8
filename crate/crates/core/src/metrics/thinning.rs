use super::binary::{BinaryImage, INK, PAPER};

/// Zhang-Suen thinning of the ink pixels. Pixels outside the image count as
/// paper.
pub fn zhang_suen(image: &BinaryImage) -> BinaryImage {
    let (w, h) = (image.width(), image.height());
    let mut ink: Vec<bool> = image.pixels().iter().map(|&v| v == INK).collect();
    let at = |ink: &[bool], x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && ink[y as usize * w + x as usize]
    };
    let mut remove = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            remove.clear();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if !ink[y as usize * w + x as usize] {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let n = [
                        at(&ink, x, y - 1),
                        at(&ink, x + 1, y - 1),
                        at(&ink, x + 1, y),
                        at(&ink, x + 1, y + 1),
                        at(&ink, x, y + 1),
                        at(&ink, x - 1, y + 1),
                        at(&ink, x - 1, y),
                        at(&ink, x - 1, y - 1),
                    ];
                    let b = n.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let keep = if pass == 0 {
                        (p2 && p4 && p6) || (p4 && p6 && p8)
                    } else {
                        (p2 && p4 && p8) || (p2 && p6 && p8)
                    };
                    if !keep {
                        remove.push(y as usize * w + x as usize);
                    }
                }
            }
            for &i in &remove {
                ink[i] = false;
            }
            changed |= !remove.is_empty();
        }
        if !changed {
            break;
        }
    }
    BinaryImage::new(
        w,
        h,
        ink.iter().map(|&v| if v { INK } else { PAPER }).collect(),
    )
    .expect("same size")
}
