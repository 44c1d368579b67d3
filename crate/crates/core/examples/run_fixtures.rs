fn main() {
    for (name, text) in fuzzcfg::io::fixtures::ALL {
        let m = fuzzcfg::io::parse_model(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        for w in &m.warnings { println!("{w}"); }
        let r = fuzzcfg::run_configuration(&m.model).unwrap();
        print!("== {name}\n{}", fuzzcfg::io::render_result(&r, fuzzcfg::io::OutputFormat::Table));
    }
}
