fn main() {
    let code = tradebench::cli::main_with_args(std::env::args_os());
    std::process::exit(code);
}
