fn main() {
    std::process::exit(dshgcn_cli::run(std::env::args_os()));
}
