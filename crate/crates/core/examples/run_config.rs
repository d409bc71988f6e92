//! Drives the command-line front end in-process and prints the results.

fn main() {
    let out = std::env::temp_dir().join("spinpair-example-run");
    let code = spinpair::cli::run([
        "spinpair",
        "dissipative",
        "--betaE",
        "0.5,1,2,5",
        "--threads",
        "2",
        "--out",
        out.to_str().expect("utf-8 temp path"),
    ]);
    println!("exit code {code}");
    for f in ["results.csv", "manifest.json", "errors.json"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap_or_default();
        println!("--- {f}\n{}", text.lines().take(8).collect::<Vec<_>>().join("\n"));
    }
}
