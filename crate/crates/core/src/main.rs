fn main() {
    std::process::exit(rulegrasp::cli::run(std::env::args_os()));
}
