use bcpnn_core::synth;

fn main() {
    let imgs = synth::generate_images(20, 42);
    for row in 0..2 {
        for y in (0..28).step_by(2) {
            let mut line = String::new();
            for k in 0..10 {
                let img = &imgs[row * 10 + k];
                for x in 0..28 {
                    let v = img.get(x, y).max(img.get(x, (y + 1).min(27)));
                    line.push(match v {
                        0..=40 => ' ',
                        41..=120 => '.',
                        121..=200 => 'o',
                        _ => '#',
                    });
                }
                line.push('|');
            }
            println!("{line}");
        }
        println!();
    }
}
