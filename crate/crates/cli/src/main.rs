fn main() {
    let code = vidflow_cli::run(std::env::args_os());
    std::process::exit(code);
}
