//! Builds a small corpus and runs the benchmark through the command-line entry point.

fn main() {
    let dir = std::env::temp_dir().join(format!("burstsr-bench-{}", std::process::id()));
    let corpus = dir.join("corpus");
    let run = |args: &[&str]| {
        let code = burstsr::cli::run(std::iter::once("burstsr").chain(args.iter().copied()));
        if code != 0 {
            std::process::exit(code);
        }
    };
    for k in 0..3 {
        let out = corpus.join(format!("sample_{k}"));
        let seed = k.to_string();
        run(&["synth", out.to_str().unwrap(), "--seed", &seed, "--scene-seed", &seed, "--lr-size", "32", "--frames", "8"]);
    }
    run(&["bench", corpus.to_str().unwrap(), "--methods", "baseline,hqs,hqs+tta", "--threads", "2"]);
    let _ = std::fs::remove_dir_all(dir);
}
