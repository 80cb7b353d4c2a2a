fn main() {
    std::process::exit(ctxmap::cli::main(std::env::args_os()));
}
