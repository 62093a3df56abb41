//! Converts GazeFollow-style and VideoAttentionTarget-style rows into the
//! JSON-lines annotation format.
//!
//! ```text
//! cargo run --example convert_annotations -- [out_dir]
//! ```

use std::path::PathBuf;

use gazetarget::data::convert::{convert, ConvertOptions, SourceFormat};
use gazetarget::data::write_annotations;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "converted".into()));
    std::fs::create_dir_all(&out)?;

    // path,idx,body x,y,w,h,eye x,y,gaze x,y,head x0,y0,x1,y1,inout
    let gazefollow = out.join("gazefollow.txt");
    std::fs::write(
        &gazefollow,
        "train/a.jpg,0,0,0,1,1,0.4,0.3,0.62,0.71,120,80,180,140,1\n\
         train/a.jpg,1,0,0,1,1,0.4,0.3,0.60,0.69,120,80,180,140,1\n\
         train/b.jpg,2,0,0,1,1,0.5,0.5,-1,-1,300,200,360,260,0\n",
    )?;
    // frame,x0,y0,x1,y1,gaze x,gaze y in pixels; -1,-1 when out of frame
    let vat = out.join("vat_person1.txt");
    std::fs::write(
        &vat,
        "clip/0001.jpg,100,50,160,110,400,300\n\
         clip/0002.jpg,102,50,162,110,-1,-1\n\
         clip/0003.jpg,104,51,164,111,410,305\n",
    )?;

    for (format, input, name) in [
        (SourceFormat::GazeFollow, gazefollow, "gazefollow.jsonl"),
        (SourceFormat::VideoAttentionTarget, vat, "vat.jsonl"),
    ] {
        let opts = ConvertOptions {
            format,
            image_root: PathBuf::from("images"),
            fallback_size: Some((640, 480)),
            stride: 1,
        };
        let scenes = convert(&[input], &opts)?;
        write_annotations(&out.join(name), &scenes)?;
        println!("{format:?}: {} images -> {}", scenes.len(), out.join(name).display());
        print!("{}", std::fs::read_to_string(out.join(name))?);
    }
    Ok(())
}
